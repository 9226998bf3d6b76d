//! Composite colorization loss.
//!
//! * `l_g`: `alpha1 * huber(O, Y) + alpha2 * huber(O, I)` where `I` is the
//!   K-color map (equal to `Y` when there is no theme);
//! * `l_s`: MSE between the Sobel gradient fields of `O` and `Y`;
//! * `l_p`: MSE between `O * M` and `U * M` at local hints.
//!
//! Every term is a mean over all elements, so the constants do not depend on
//! image size.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::hints::{ChromaMap, LocalInput};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { delta: 0.5, alpha1: 0.7, alpha2: 0.3 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 || (self.alpha1 + self.alpha2 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "alpha1 and alpha2 must be non-negative and sum to 1, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_g: f64,
    pub l_s: f64,
    pub l_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn add_scaled(&mut self, other: &LossBreakdown, scale: f64) {
        self.l_g += other.l_g * scale;
        self.l_s += other.l_s * scale;
        self.l_p += other.l_p * scale;
        self.total += other.total * scale;
    }
}

/// Loss nodes recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_g: Var,
    pub l_s: Var,
    pub l_p: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            l_g: g.value(self.l_g).item().as_f64(),
            l_s: g.value(self.l_s).item().as_f64(),
            l_p: g.value(self.l_p).item().as_f64(),
            total: g.value(self.total).item().as_f64(),
        }
    }
}

fn chroma_tensor<T: Scalar>(map: &ChromaMap) -> Tensor<T> {
    Tensor::from_f64(&[map.height(), map.width(), 2], &map.flat()).expect("chroma dims")
}

fn check_output<T: Scalar>(g: &Graph<T>, output: Var, map: &ChromaMap, what: &'static str) -> Result<()> {
    let expect = [map.height(), map.width(), 2];
    if g.value(output).dims() != expect {
        return Err(Error::shape(what, format!("output {:?} vs {:?}", g.value(output).dims(), expect)));
    }
    Ok(())
}

pub fn huber_term<T: Scalar>(g: &mut Graph<T>, output: Var, target: &ChromaMap, delta: f64) -> Result<Var> {
    check_output(g, output, target, "huber")?;
    g.huber_mean(output, &chroma_tensor(target), T::lit(delta))
}

pub fn global_term<T: Scalar>(
    g: &mut Graph<T>,
    output: Var,
    target: &ChromaMap,
    kcolor: &ChromaMap,
    cfg: &LossConfig,
) -> Result<Var> {
    let to_target = huber_term(g, output, target, cfg.delta)?;
    if kcolor == target {
        // both Huber terms coincide; fold them so the result is exactly huber(O, Y)
        return g.weighted_sum(&[(to_target, T::lit(cfg.alpha1 + cfg.alpha2))]);
    }
    let to_kcolor = huber_term(g, output, kcolor, cfg.delta)?;
    g.weighted_sum(&[(to_target, T::lit(cfg.alpha1)), (to_kcolor, T::lit(cfg.alpha2))])
}

pub fn sobel_term<T: Scalar>(g: &mut Graph<T>, output: Var, target: &ChromaMap) -> Result<Var> {
    check_output(g, output, target, "sobel_loss")?;
    let target = g.constant(chroma_tensor(target));
    let target_edges = g.sobel(target)?;
    let output_edges = g.sobel(output)?;
    g.mse(output_edges, target_edges)
}

pub fn local_points_term<T: Scalar>(g: &mut Graph<T>, output: Var, local: &LocalInput) -> Result<Var> {
    let (h, w) = (local.height(), local.width());
    if g.value(output).dims() != [h, w, 2] {
        return Err(Error::shape(
            "local_points_loss",
            format!("output {:?} vs local input {w}x{h}", g.value(output).dims()),
        ));
    }
    let mask = Tensor::<T>::from_f64(&[h, w, 1], local.mask())?;
    let masked_hints: Vec<f64> =
        local.colors().iter().zip(local.mask()).flat_map(|(&[a, b], &m)| [a * m, b * m]).collect();
    let masked_output = g.mul_const(output, &mask)?;
    let hints = g.constant(Tensor::from_f64(&[h, w, 2], &masked_hints)?);
    g.mse(masked_output, hints)
}

/// Records `l_g + l_s + l_p` for `output` on `g`.
pub fn total_term<T: Scalar>(
    g: &mut Graph<T>,
    output: Var,
    target: &ChromaMap,
    kcolor: &ChromaMap,
    local: &LocalInput,
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let l_g = global_term(g, output, target, kcolor, cfg)?;
    let l_s = sobel_term(g, output, target)?;
    let l_p = local_points_term(g, output, local)?;
    let total = g.weighted_sum(&[(l_g, T::one()), (l_s, T::one()), (l_p, T::one())])?;
    Ok(LossVars { l_g, l_s, l_p, total })
}

fn eval<F>(output: &ChromaMap, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let o = g.constant(chroma_tensor(output));
    let v = build(&mut g, o)?;
    Ok(g.value(v).item())
}

pub fn huber(o: &ChromaMap, y: &ChromaMap, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    eval(o, |g, v| huber_term(g, v, y, delta))
}

pub fn global_loss(o: &ChromaMap, y: &ChromaMap, i: &ChromaMap, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_same(y, i, "global_loss")?;
    eval(o, |g, v| global_term(g, v, y, i, cfg))
}

pub fn sobel_loss(o: &ChromaMap, y: &ChromaMap) -> Result<f64> {
    eval(o, |g, v| sobel_term(g, v, y))
}

pub fn local_points_loss(o: &ChromaMap, local: &LocalInput) -> Result<f64> {
    eval(o, |g, v| local_points_term(g, v, local))
}

pub fn total_loss(o: &ChromaMap, y: &ChromaMap, i: &ChromaMap, local: &LocalInput, cfg: &LossConfig) -> Result<LossBreakdown> {
    check_same(y, i, "total_loss")?;
    let mut g = Graph::<f64>::new();
    let out = g.constant(chroma_tensor(o));
    let vars = total_term(&mut g, out, y, i, local, cfg)?;
    Ok(vars.breakdown(&g))
}

fn check_same(a: &ChromaMap, b: &ChromaMap, op: &'static str) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    Ok(())
}
