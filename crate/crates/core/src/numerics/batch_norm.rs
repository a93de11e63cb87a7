use super::graph::{BnArgs, BnMode, BnStatUpdate, Graph};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

/// Affine batch normalization with running statistics.
///
/// `gamma`/`beta` are trainable and live in the [`ParamStore`]; the running
/// averages are buffers updated as `r ← momentum·r + (1−momentum)·batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<F> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

impl<F: Real> BatchNormState<F> {
    pub fn register(store: &mut ParamStore<F>, prefix: &str, width: usize) -> Self {
        let gamma = store.add(
            format!("{prefix}.gamma"),
            Tensor::full(&[1, width], F::one()),
        );
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(&[1, width]));
        BatchNormState {
            gamma,
            beta,
            running_mean: vec![F::zero(); width],
            running_var: vec![F::one(); width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            mode: BnMode::Train,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn args(&self, mode: BnMode) -> BnArgs<'_, F> {
        BnArgs {
            gamma: self.gamma,
            beta: self.beta,
            running_mean: &self.running_mean,
            running_var: &self.running_var,
            eps: F::of(self.eps),
            mode,
        }
    }

    pub fn apply_update(&mut self, upd: &BnStatUpdate<F>) {
        let m = F::of(self.momentum);
        let k = F::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&upd.mean) {
            *r = m * *r + k * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&upd.var) {
            *r = m * *r + k * b;
        }
    }

    pub fn cast<G: Real>(&self) -> BatchNormState<G> {
        BatchNormState {
            gamma: self.gamma,
            beta: self.beta,
            running_mean: self
                .running_mean
                .iter()
                .map(|&x| G::of(x.to_f64()))
                .collect(),
            running_var: self
                .running_var
                .iter()
                .map(|&x| G::of(x.to_f64()))
                .collect(),
            momentum: self.momentum,
            eps: self.eps,
            mode: self.mode,
        }
    }
}

/// Normalize `x: B×h` in the state's mode; train mode folds the batch
/// statistics into the running averages.
pub fn batch_norm<F: Real>(
    x: &Tensor<F>,
    state: &mut BatchNormState<F>,
    store: &ParamStore<F>,
) -> Result<Tensor<F>> {
    if x.shape().len() != 2 || x.cols() != state.width() {
        return Err(Error::Shape(format!(
            "batch_norm of width {} got {:?}",
            state.width(),
            x.shape()
        )));
    }
    if state.mode == BnMode::Train && x.rows() < 2 {
        return Err(Error::Usage(
            "batch_norm in train mode needs at least 2 rows".into(),
        ));
    }
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let active = vec![true; x.rows()];
    let out = g.batch_norm(xv, &active, &state.args(state.mode));
    g.check_finite()?;
    let out = g.value(out).clone();
    for upd in g.take_bn_updates() {
        state.apply_update(&upd);
    }
    Ok(out)
}
