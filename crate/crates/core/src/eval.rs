//! Word-similarity and sentence-similarity evaluation, nearest neighbours and
//! the concatenation sweep.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use crate::corpus::{EmbeddingTable, Pos, SimilarityPair, StsPair};
use crate::error::{Error, Result};

/// `u·v / (‖u‖‖v‖)`, or 0 when either norm is 0. Accumulates in f64.
pub fn cosine(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "lengths {} and {} differ",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Data("correlation needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // spreads at rounding level count as constant
    let flat = |s: f64, v: &[f64]| {
        let scale = v.iter().fold(0f64, |m, x| m.max(x.abs()));
        s <= 16.0 * n * (f64::EPSILON * scale).powi(2)
    };
    if flat(sxx, xs) || flat(syy, ys) {
        return Err(Error::Data(
            "correlation undefined for a constant input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the average of the positions they span.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "lengths {} and {} differ",
            xs.len(),
            ys.len()
        )));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryScore {
    pub name: String,
    /// `None` when the subset has fewer than 2 usable pairs or no spread.
    pub score: Option<f64>,
    pub pairs_total: usize,
    pub pairs_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    /// Correlation ×100.
    pub score: f64,
    pub pairs_total: usize,
    pub pairs_used: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<CategoryScore>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>7.1}   {}/{} pairs",
            self.dataset, self.score, self.pairs_used, self.pairs_total
        )?;
        for c in &self.categories {
            match c.score {
                Some(s) => writeln!(
                    f,
                    "  {:<22} {:>7.1}   {}/{} pairs",
                    c.name, s, c.pairs_used, c.pairs_total
                )?,
                None => writeln!(
                    f,
                    "  {:<22} {:>7}   {}/{} pairs",
                    c.name, "-", c.pairs_used, c.pairs_total
                )?,
            }
        }
        Ok(())
    }
}

/// Gold scores and cosines of the pairs whose words are both in `emb`.
fn scored_pairs<'a>(
    emb: &EmbeddingTable,
    pairs: impl Iterator<Item = &'a SimilarityPair>,
) -> (Vec<f64>, Vec<f64>, usize) {
    let (mut gold, mut pred, mut total) = (Vec::new(), Vec::new(), 0);
    for p in pairs {
        total += 1;
        if let (Some(a), Some(b)) = (emb.get(&p.word1), emb.get(&p.word2)) {
            gold.push(p.gold);
            pred.push(cosine(a, b));
        }
    }
    (gold, pred, total)
}

/// Spearman ρ×100 between gold scores and cosines. Pairs with an
/// out-of-vocabulary word are left out and counted in `pairs_used`.
pub fn eval_intrinsic(
    emb: &EmbeddingTable,
    name: &str,
    pairs: &[SimilarityPair],
    categories: bool,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data(format!("{name}: dataset is empty")));
    }
    let (gold, pred, total) = scored_pairs(emb, pairs.iter());
    if gold.len() < 2 {
        return Err(Error::Data(format!(
            "{name}: only {} of {total} pairs are in vocabulary",
            gold.len()
        )));
    }
    let score = 100.0 * spearman(&gold, &pred)?;
    let mut cats = Vec::new();
    if categories {
        type Filter = Box<dyn Fn(&SimilarityPair) -> bool>;
        let mut subsets: Vec<(String, Filter)> = Vec::new();
        for pos in [Pos::Adj, Pos::Noun, Pos::Verb] {
            subsets.push((
                pos.label().into(),
                Box::new(move |p| p.meta.is_some_and(|m| m.pos == pos)),
            ));
        }
        for q in 1..=4u8 {
            subsets.push((
                format!("conc-q{q}"),
                Box::new(move |p| p.meta.is_some_and(|m| m.quartile == q)),
            ));
        }
        subsets.push(("hard".into(), Box::new(|p| p.meta.is_some_and(|m| m.hard))));
        for (label, keep) in subsets {
            let (g, s, n) = scored_pairs(emb, pairs.iter().filter(|p| keep(p)));
            if n == 0 {
                continue;
            }
            cats.push(CategoryScore {
                name: label,
                score: spearman(&g, &s).ok().map(|r| 100.0 * r),
                pairs_total: n,
                pairs_used: g.len(),
            });
        }
    }
    Ok(EvalReport {
        dataset: name.to_string(),
        score,
        pairs_total: total,
        pairs_used: gold.len(),
        categories: cats,
    })
}

/// Mean of the in-vocabulary token vectors; the zero vector if there are none.
pub fn bow_sentence(emb: &EmbeddingTable, tokens: &[String]) -> Vec<f32> {
    let mut acc = vec![0f64; emb.dim()];
    let mut n = 0usize;
    for v in tokens.iter().filter_map(|t| emb.get(t)) {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
        n += 1;
    }
    if n == 0 {
        return vec![0.0; emb.dim()];
    }
    acc.into_iter().map(|a| (a / n as f64) as f32).collect()
}

/// Pearson r×100 between gold scores and cosines of averaged sentence vectors.
pub fn eval_sts(emb: &EmbeddingTable, name: &str, pairs: &[StsPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data(format!("{name}: dataset is empty")));
    }
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    let pred: Vec<f64> = pairs
        .iter()
        .map(|p| cosine(&bow_sentence(emb, &p.sent1), &bow_sentence(emb, &p.sent2)))
        .collect();
    let r = pearson(&gold, &pred).map_err(|e| Error::Data(format!("{name}: {e}")))?;
    Ok(EvalReport {
        dataset: name.to_string(),
        score: 100.0 * r,
        pairs_total: pairs.len(),
        pairs_used: pairs.len(),
        categories: Vec::new(),
    })
}

/// The `k` words most cosine-similar to `word`, excluding `word` itself.
/// Equal cosines are ordered alphabetically.
pub fn nearest_neighbors(emb: &EmbeddingTable, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let qi = emb
        .vocab()
        .index(word)
        .ok_or_else(|| Error::Data(format!("{word:?} is not in the vocabulary")))?;
    let q = emb.row(qi);
    let mut scored: Vec<(&str, f64)> = emb
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != qi)
        .map(|(_, (w, v))| (w, cosine(q, v)))
        .collect();
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(w, s)| (w.to_string(), s))
        .collect())
}

/// `[(1−α)·G_w ; α·V_w]` for every word present in both tables.
pub fn concat_tables(g: &EmbeddingTable, v: &EmbeddingTable, alpha: f64) -> Result<EmbeddingTable> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let (a, b) = ((1.0 - alpha) as f32, alpha as f32);
    EmbeddingTable::from_pairs(g.iter().filter_map(|(w, gv)| {
        v.get(w).map(|vv| {
            let row: Vec<f32> = gv
                .iter()
                .map(|&x| a * x)
                .chain(vv.iter().map(|&x| b * x))
                .collect();
            (w.to_string(), row)
        })
    }))
}

/// Intrinsic score of the concatenation `[(1−α)G ; αV]`.
pub fn concat_sensitivity(
    g: &EmbeddingTable,
    v: &EmbeddingTable,
    alpha: f64,
    name: &str,
    pairs: &[SimilarityPair],
) -> Result<EvalReport> {
    eval_intrinsic(&concat_tables(g, v, alpha)?, name, pairs, false)
}
