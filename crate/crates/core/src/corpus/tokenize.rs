/// Lowercase, drop every ASCII punctuation character, split on whitespace.
///
/// Non-ASCII punctuation is left in place.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}
