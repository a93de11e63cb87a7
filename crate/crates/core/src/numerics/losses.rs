use super::graph::Graph;
use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let mut z = F::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// Mean over masked rows of `−log softmax(logits_i)[target_i]`.
pub fn softmax_cross_entropy<F: Real>(
    logits: &Tensor<F>,
    targets: &[usize],
    mask: &[bool],
) -> Result<F> {
    let (b, v) = (logits.rows(), logits.cols());
    if targets.len() != b || mask.len() != b {
        return Err(Error::Shape(format!(
            "{b} logit rows but {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&t) = targets
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(t, _)| t)
        .find(|&&t| t >= v)
    {
        return Err(Error::Data(format!(
            "target id {t} outside vocabulary of {v}"
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Data("every position is masked".into()));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let l = g.constant(logits.clone());
    let s = g.softmax_ce_sum(l, targets, mask);
    g.check_finite()?;
    Ok(g.scalar(s) / F::of(n as f64))
}

/// Mean binary cross entropy of `σ(logit)` against `{0,1}` labels.
pub fn sigmoid_bce<F: Real>(logits: &[F], labels: &[F]) -> Result<F> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let l = g.constant(Tensor::row_vector(logits.to_vec()));
    let s = g.sigmoid_bce_sum(l, labels);
    g.check_finite()?;
    Ok(g.scalar(s) / F::of(logits.len() as f64))
}
