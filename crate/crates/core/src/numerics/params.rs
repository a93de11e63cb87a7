use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub nadam_m: Tensor<F>,
    pub nadam_v: Tensor<F>,
    /// Frozen parameters keep their value; the optimizer skips them.
    pub frozen: bool,
}

/// Named trainable tensors with gradient buffers and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: BTreeMap<String, ParamId>,
    /// Number of optimizer steps taken.
    pub step: u64,
    /// Running product of the momentum schedule, `Π μ_i`.
    pub mu_product: f64,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
            mu_product: 1.0,
        }
    }

    /// Register a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter {name} registered twice"
        );
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.clone(),
            grad: Tensor::zeros(&shape),
            nadam_m: Tensor::zeros(&shape),
            nadam_v: Tensor::zeros(&shape),
            value,
            frozen: false,
        });
        self.by_name.insert(name, id);
        id
    }

    /// Register a `rows×cols` matrix with Glorot-uniform entries
    /// `U(−√(6/(rows+cols)), +√(6/(rows+cols)))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| F::of(rng.gen_range(-limit..limit)))
            .collect();
        let t = Tensor::from_vec(&[rows, cols], data).expect("glorot shape");
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Add `grad` into the gradient buffer of `id`.
    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor<F>) {
        let p = &mut self.params[id.0];
        if p.frozen {
            return;
        }
        p.grad.add_assign(grad);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Copy of the whole store in another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    nadam_m: p.nadam_m.cast(),
                    nadam_v: p.nadam_v.cast(),
                    frozen: p.frozen,
                })
                .collect(),
            by_name: self.by_name.clone(),
            step: self.step,
            mu_product: self.mu_product,
        }
    }

    /// First non-finite gradient, by parameter name.
    pub fn check_grads_finite(&self) -> Result<()> {
        for p in &self.params {
            if !p.grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {}",
                    p.name
                )));
            }
        }
        Ok(())
    }
}

/// NAdam hyper-parameters with a Dozat-style warming momentum schedule
/// `μ_t = β1·(1 − 0.5·0.96^(t·schedule_decay))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            schedule_decay: 1.0 / 250.0,
        }
    }
}

impl NadamConfig {
    pub fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.schedule_decay))
    }
}

/// One NAdam update over every unfrozen parameter, then zero all gradients.
pub fn nadam_step<F: Real>(store: &mut ParamStore<F>, lr: f64) -> Result<()> {
    nadam_step_with(store, lr, &NadamConfig::default())
}

pub fn nadam_step_with<F: Real>(
    store: &mut ParamStore<F>,
    lr: f64,
    cfg: &NadamConfig,
) -> Result<()> {
    store.check_grads_finite()?;

    let t = store.step + 1;
    let mu_t = cfg.momentum(t);
    let mu_next = cfg.momentum(t + 1);
    let prod_t = store.mu_product * mu_t;
    let prod_next = prod_t * mu_next;

    let beta1 = F::of(cfg.beta1);
    let beta2 = F::of(cfg.beta2);
    let one = F::one();
    let g_scale = F::of(1.0 / (1.0 - prod_t));
    let m_scale = F::of(1.0 / (1.0 - prod_next));
    let v_scale = F::of(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let grad_coef = F::of(1.0 - mu_t);
    let mom_coef = F::of(mu_next);
    let eps = F::of(cfg.eps);
    let lr = F::of(lr);

    for p in store.params.iter_mut() {
        if !p.frozen {
            let value = p.value.data_mut();
            let m = p.nadam_m.data_mut();
            let v = p.nadam_v.data_mut();
            for (((x, mi), vi), &g) in value.iter_mut().zip(m).zip(v).zip(p.grad.data()) {
                *mi = beta1 * *mi + (one - beta1) * g;
                *vi = beta2 * *vi + (one - beta2) * g * g;
                let m_bar = grad_coef * (g * g_scale) + mom_coef * (*mi * m_scale);
                let v_hat = *vi * v_scale;
                *x -= lr * (m_bar / (v_hat.sqrt() + eps));
            }
        }
        p.grad.fill(F::zero());
    }
    store.step = t;
    store.mu_product = prod_t;
    Ok(())
}
