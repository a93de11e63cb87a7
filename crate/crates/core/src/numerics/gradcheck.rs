use super::params::ParamStore;
use super::tensor::Real;
use crate::error::Result;

/// Max relative error of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// How the numeric derivative of one scalar is estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    /// `(L(θ+ε) − L(θ−ε)) / 2ε`.
    Central { epsilon: f64 },
    /// Central differences at steps `h, h/1.4, h/1.4², …` extrapolated to
    /// zero step (Ridders). Far less sensitive to rounding in `L` than a
    /// single small step, which matters for gradients near zero. The
    /// tableau is also started from `h/10` and `h/100`, and the estimate
    /// with the smallest error bound wins, so a kink or steep region within
    /// `h` of θ does not spoil the result.
    Extrapolated { initial_step: f64 },
}

/// Compare the gradients already accumulated in `store` against central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε`, one scalar at a time. Frozen
/// parameters are skipped. Values are restored bit-for-bit afterwards.
pub fn finite_diff_check<F: Real>(
    loss_fn: impl FnMut(&ParamStore<F>) -> Result<F>,
    store: &mut ParamStore<F>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    finite_diff_check_with(loss_fn, store, Stencil::Central { epsilon })
}

pub fn finite_diff_check_with<F: Real>(
    mut loss_fn: impl FnMut(&ParamStore<F>) -> Result<F>,
    store: &mut ParamStore<F>,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let ids: Vec<_> = store.ids().collect();
    let mut tensors = Vec::new();
    for id in ids {
        if store.param(id).frozen {
            continue;
        }
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..store.value(id).len() {
            let saved = store.value(id).data()[k];
            let mut diff = |h: f64| -> Result<(f64, f64)> {
                store.value_mut(id).data_mut()[k] = F::of(saved.to_f64() + h);
                let plus = loss_fn(store);
                store.value_mut(id).data_mut()[k] = F::of(saved.to_f64() - h);
                let minus = loss_fn(store);
                store.value_mut(id).data_mut()[k] = saved;
                let (plus, minus) = (plus?.to_f64(), minus?.to_f64());
                // rounding in L, carried through the quotient
                let noise = F::epsilon().to_f64() * (plus.abs() + minus.abs()) / (2.0 * h);
                Ok(((plus - minus) / (2.0 * h), noise))
            };
            let numeric = match stencil {
                Stencil::Central { epsilon } => diff(epsilon)?.0,
                Stencil::Extrapolated { initial_step } => {
                    let mut best = ridders(&mut diff, initial_step)?;
                    for h in [initial_step / 10.0, initial_step / 100.0] {
                        let r = ridders(&mut diff, h)?;
                        if r.1 < best.1 {
                            best = r;
                        }
                    }
                    best.0
                }
            };
            let analytic = store.grad(id).data()[k].to_f64();
            let rel = relative_error(analytic, numeric);
            if rel > check.max_rel_error || k == 0 {
                check.max_rel_error = rel;
                check.worst_index = k;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}

/// Neville extrapolation of `diff(h)` to `h → 0`, stopping once the
/// tableau's error estimate starts to grow. `diff` returns the quotient and
/// its rounding noise. Returns the estimate and an error bound that is never
/// below the rounding noise of the smallest step it used.
fn ridders(diff: &mut impl FnMut(f64) -> Result<(f64, f64)>, h0: f64) -> Result<(f64, f64)> {
    const SHRINK: f64 = 1.4;
    const LEVELS: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut a = [[0f64; LEVELS]; LEVELS];
    let mut h = h0;
    let mut noise;
    (a[0][0], noise) = diff(h)?;
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    let mut best_err = f64::INFINITY;
    for i in 1..LEVELS {
        h /= SHRINK;
        let (q, n) = diff(h)?;
        a[0][i] = q;
        noise = noise.max(n);
        let mut fac = shrink2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
                best_err = e.max(noise);
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok((best, best_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::gru::GruParams;
    use crate::numerics::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_setup() -> (ParamStore<f64>, Vec<f64>) {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::row_vector(vec![0.5, -1.0, 2.0, 0.1]));
        (s, vec![1.5, -0.25, 3.0, 0.75])
    }

    fn linear_loss(a: &[f64]) -> impl Fn(&ParamStore<f64>) -> Result<f64> + '_ {
        move |s| {
            let th = s.value(s.id("theta").unwrap());
            Ok(th.data().iter().zip(a).map(|(x, y)| x * y).sum())
        }
    }

    #[test]
    fn linear_loss_is_exact() {
        let (mut s, a) = linear_setup();
        let id = s.id("theta").unwrap();
        s.accumulate(id, &Tensor::row_vector(a.clone()));
        let rep = finite_diff_check(linear_loss(&a), &mut s, 1e-3).unwrap();
        assert!(rep.max_rel_error() < 1e-10, "{rep:?}");
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let (mut s, a) = linear_setup();
        let id = s.id("theta").unwrap();
        let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        s.accumulate(id, &Tensor::row_vector(doubled));
        let rep = finite_diff_check(linear_loss(&a), &mut s, 1e-3).unwrap();
        assert!((rep.max_rel_error() - 0.5).abs() < 1e-9, "{rep:?}");
    }

    #[test]
    fn values_are_restored() {
        let (mut s, a) = linear_setup();
        let before = s.clone();
        finite_diff_check(linear_loss(&a), &mut s, 1e-2).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn gru_through_time_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        let gru = GruParams::register(&mut s, "g", 2, 3, &mut rng);
        for id in [gru.b_z, gru.b_r, gru.b_h] {
            s.value_mut(id)
                .data_mut()
                .copy_from_slice(&[0.1, -0.2, 0.3]);
        }
        let xs = [[0.5, -1.0], [1.5, 0.25], [-0.75, 0.8]];
        let loss = |s: &ParamStore<f64>| -> (f64, Vec<_>) {
            let mut g = Graph::new(s);
            let mut h = g.constant(Tensor::row_vector(vec![0.2, -0.4, 0.6]));
            for x in &xs {
                let xv = g.constant(Tensor::row_vector(x.to_vec()));
                h = gru.step(&mut g, xv, h);
            }
            let sq = g.mul(h, h);
            let l = g.sum_all(sq);
            (g.scalar(l), g.backward(l).unwrap())
        };
        let (_, grads) = loss(&s);
        for (id, gr) in &grads {
            s.accumulate(*id, gr);
        }
        let rep = finite_diff_check(|s| Ok(loss(s).0), &mut s, 1e-6).unwrap();
        assert!(rep.max_rel_error() < 1e-6, "{rep:?}");
    }

    #[test]
    fn extrapolation_handles_tiny_gradients() {
        // L = 5 + 1e-7·sin(θ): a single small step drowns in the rounding of L
        let mut s = ParamStore::<f64>::new();
        let id = s.add("t", Tensor::row_vector(vec![0.3]));
        s.accumulate(id, &Tensor::row_vector(vec![1e-7 * 0.3f64.cos()]));
        let loss =
            |s: &ParamStore<f64>| Ok(5.0 + 1e-7 * s.value(s.id("t").unwrap()).data()[0].sin());
        let plain = finite_diff_check(loss, &mut s, 1e-6).unwrap();
        let ext =
            finite_diff_check_with(loss, &mut s, Stencil::Extrapolated { initial_step: 0.05 })
                .unwrap();
        // rounding of L ≈ 5 alone limits any estimate to about 1e-6 relative
        assert!(ext.max_rel_error() < 1e-6, "{ext:?}");
        assert!(
            100.0 * ext.max_rel_error() < plain.max_rel_error(),
            "{plain:?}"
        );
    }

    #[test]
    fn constant_path_has_zero_gradient() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("unused", Tensor::row_vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&s);
        let _ = g.param(id);
        let c = g.constant(Tensor::row_vector(vec![3.0]));
        let l = g.sum_all(c);
        let grads = g.backward(l).unwrap();
        assert!(grads.iter().all(|(_, t)| t.max_abs() == 0.0));
    }
}
