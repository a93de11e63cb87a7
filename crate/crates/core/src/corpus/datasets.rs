use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Adj,
    Noun,
    Verb,
}

impl Pos {
    pub fn label(self) -> &'static str {
        match self {
            Pos::Adj => "ADJ",
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
        }
    }
}

impl FromStr for Pos {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_uppercase().as_str() {
            "ADJ" | "A" => Ok(Pos::Adj),
            "NOUN" | "N" => Ok(Pos::Noun),
            "VERB" | "V" => Ok(Pos::Verb),
            _ => Err(()),
        }
    }
}

/// SimLex-style annotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairMeta {
    pub pos: Pos,
    /// Concreteness quartile, 1 (abstract) to 4 (concrete).
    pub quartile: u8,
    pub hard: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityPair {
    pub word1: String,
    pub word2: String,
    pub gold: f64,
    pub meta: Option<PairMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StsPair {
    pub sent1: Vec<String>,
    pub sent2: Vec<String>,
    pub gold: f64,
}

fn lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(n, l)| l.map(|l| (n + 1, l)).map_err(|e| Error::io(path, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty())))
}

fn parse_score(path: &Path, line: usize, s: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            what: "score",
            value: s.to_string(),
        }),
    }
}

/// `word1<TAB>word2<TAB>score[<TAB>pos<TAB>quartile<TAB>hard]`
pub fn load_similarity_dataset(path: impl AsRef<Path>) -> Result<Vec<SimilarityPair>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for item in lines(path)? {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: n,
            msg,
        };
        if cols.len() != 3 && cols.len() != 6 {
            return Err(bad(format!(
                "expected 3 or 6 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let (w1, w2) = (cols[0].trim(), cols[1].trim());
        if w1.is_empty() || w2.is_empty() {
            return Err(bad("empty word".into()));
        }
        let gold = parse_score(path, n, cols[2])?;
        let meta = if cols.len() == 6 {
            let pos = cols[3]
                .trim()
                .parse::<Pos>()
                .map_err(|_| bad(format!("unknown part of speech {:?}", cols[3])))?;
            let quartile = match cols[4].trim().parse::<u8>() {
                Ok(q @ 1..=4) => q,
                _ => return Err(bad(format!("quartile must be 1..4, got {:?}", cols[4]))),
            };
            let hard = match cols[5].trim() {
                "1" | "true" | "TRUE" => true,
                "0" | "false" | "FALSE" => false,
                other => return Err(bad(format!("hard flag must be 0 or 1, got {other:?}"))),
            };
            Some(PairMeta {
                pos,
                quartile,
                hard,
            })
        } else {
            None
        };
        out.push(SimilarityPair {
            word1: w1.to_string(),
            word2: w2.to_string(),
            gold,
            meta,
        });
    }
    Ok(out)
}

/// `score<TAB>sentence1<TAB>sentence2`, score in [0, 5]. Sentences are
/// tokenized with [`tokenize`]; out-of-vocabulary tokens are kept.
pub fn load_sts_dataset(path: impl AsRef<Path>) -> Result<Vec<StsPair>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for item in lines(path)? {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: n,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let gold = parse_score(path, n, cols[0])?;
        if !(0.0..=5.0).contains(&gold) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: n,
                msg: format!("STS score {gold} outside [0, 5]"),
            });
        }
        out.push(StsPair {
            sent1: tokenize(cols[1]),
            sent2: tokenize(cols[2]),
            gold,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_pair() {
        let p = load_similarity_dataset(file("cat\tdog\t7.35\n").path()).unwrap();
        assert_eq!(
            p,
            vec![SimilarityPair {
                word1: "cat".into(),
                word2: "dog".into(),
                gold: 7.35,
                meta: None
            }]
        );
    }

    #[test]
    fn pair_with_meta() {
        let p = load_similarity_dataset(file("old\tnew\t1.58\tNOUN\t4\t1\n").path()).unwrap();
        assert_eq!(
            p[0].meta,
            Some(PairMeta {
                pos: Pos::Noun,
                quartile: 4,
                hard: true
            })
        );
    }

    #[test]
    fn nan_score_is_an_error() {
        let r = load_similarity_dataset(file("a\tb\t1\ncat\tdog\tNaN\n").path());
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn sts_rows() {
        let p = load_sts_dataset(file("3.5\tA man plays.\tSomeone is playing!\n").path()).unwrap();
        assert_eq!(p[0].gold, 3.5);
        assert_eq!(p[0].sent1, ["a", "man", "plays"]);
        assert!(load_sts_dataset(file("7\ta\tb\n").path()).is_err());
        assert!(load_sts_dataset(file("x\ta\tb\n").path()).is_err());
    }
}
