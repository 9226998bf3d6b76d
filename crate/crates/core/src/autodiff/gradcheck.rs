//! Central finite-difference checks of [`Graph`] gradients in `f64`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub eps: f64,
    /// Coordinates compared per tensor; `None` compares all of them.
    pub coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { eps: 1e-5, coords_per_tensor: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub compared: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

impl CheckReport {
    fn record(&mut self, tensor: usize, coord: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.compared += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some(Mismatch { tensor, coord, analytic, numeric });
        }
    }
}

/// `|a - n| / max(|a|, |n|)`, with a 1e-8 floor on the denominator so two
/// vanishing gradients compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn coords(len: usize, cfg: &CheckConfig, salt: u64) -> Vec<usize> {
    match cfg.coords_per_tensor {
        Some(n) if n < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut picked = index::sample(&mut rng, len, n).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..len).collect(),
    }
}

fn scalar_of(g: &Graph<f64>, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::shape("gradcheck", format!("loss must be a scalar, got {:?}", v.dims())));
    }
    Ok(v.item())
}

/// Compares the gradient of `build(inputs)` with respect to each input
/// tensor against central differences.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], cfg: &CheckConfig, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        scalar_of(&g, loss)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    scalar_of(&g, loss)?;
    let back = g.backward(loss)?;

    let mut report = CheckReport::default();
    let mut work = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[t].dims());
        let analytic = back.wrt(*var).unwrap_or(&zeros);
        for i in coords(inputs[t].len(), cfg, t as u64) {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + cfg.eps;
            let up = eval(&work)?;
            work[t].data_mut()[i] = x - cfg.eps;
            let down = eval(&work)?;
            work[t].data_mut()[i] = x;
            report.record(t, i, analytic.data()[i], (up - down) / (2.0 * cfg.eps));
        }
    }
    Ok(report)
}

/// Compares parameter gradients of `build(store)` at the given
/// `(parameter, flat index)` coordinates against central differences.
pub fn check_params<F>(store: &ParamStore<f64>, coords: &[(ParamId, usize)], eps: f64, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    scalar_of(&g, loss)?;
    let back = g.backward(loss)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        scalar_of(&g, loss)
    };
    let mut work = store.clone();
    let mut report = CheckReport::default();
    for &(id, i) in coords {
        let analytic = back.params().get(id).map_or(0.0, |t| t.data()[i]);
        let x = store.get(id).value.data()[i];
        work.get_mut(id).value.data_mut()[i] = x + eps;
        let up = eval(&work)?;
        work.get_mut(id).value.data_mut()[i] = x - eps;
        let down = eval(&work)?;
        work.get_mut(id).value.data_mut()[i] = x;
        report.record(id.0, i, analytic, (up - down) / (2.0 * eps));
    }
    Ok(report)
}
