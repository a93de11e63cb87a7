use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Parameters of one single-layer GRU.
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h̃ = tanh(x·W_h + (r⊙h)·U_h + b_h)
/// h' = (1−z)⊙h + z⊙h̃
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    /// Glorot-uniform weights and zero biases, registered as `{prefix}.W_z` etc.
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = |gate: &str, store: &mut ParamStore<F>| {
            store.add_glorot(format!("{prefix}.W_{gate}"), in_dim, hidden, rng)
        };
        let (w_z, w_r, w_h) = (w("z", store), w("r", store), w("h", store));
        let mut u = |gate: &str, store: &mut ParamStore<F>| {
            store.add_glorot(format!("{prefix}.U_{gate}"), hidden, hidden, rng)
        };
        let (u_z, u_r, u_h) = (u("z", store), u("r", store), u("h", store));
        let mut b =
            |gate: &str| store.add(format!("{prefix}.b_{gate}"), Tensor::zeros(&[1, hidden]));
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        GruParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            in_dim,
            hidden,
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r,
            self.b_h,
        ]
    }

    /// One time step for a whole batch: `x: B×in`, `h: B×hidden`.
    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, h: Var) -> Var {
        let gate = |g: &mut Graph<'_, F>, w: ParamId, u: ParamId, b: ParamId, hin: Var| {
            let (w, u, b) = (g.param(w), g.param(u), g.param(b));
            let xw = g.matmul(x, w);
            let hu = g.matmul(hin, u);
            let s = g.add(xw, hu);
            g.add_row(s, b)
        };
        let z_pre = gate(g, self.w_z, self.u_z, self.b_z, h);
        let z = g.sigmoid(z_pre);
        let r_pre = gate(g, self.w_r, self.u_r, self.b_r, h);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let c_pre = gate(g, self.w_h, self.u_h, self.b_h, rh);
        let cand = g.tanh(c_pre);
        let keep = g.one_minus(z);
        let old = g.mul(keep, h);
        let new = g.mul(z, cand);
        g.add(old, new)
    }
}

/// Single-sample GRU step on plain vectors.
pub fn gru_cell_forward<F: Real>(
    x: &[F],
    h: &[F],
    params: &GruParams,
    store: &ParamStore<F>,
) -> Result<Vec<F>> {
    if x.len() != params.in_dim || h.len() != params.hidden {
        return Err(Error::Shape(format!(
            "gru expects x: {} and h: {}, got {} and {}",
            params.in_dim,
            params.hidden,
            x.len(),
            h.len()
        )));
    }
    let mut g = Graph::new(store);
    let xv = g.constant(Tensor::row_vector(x.to_vec()));
    let hv = g.constant(Tensor::row_vector(h.to_vec()));
    let out = params.step(&mut g, xv, hv);
    g.check_finite()?;
    Ok(g.value(out).data().to_vec())
}
