//! Encoder, projection head and prototype classifier with hand-written
//! backpropagation.
//!
//! ```text
//! x ──W1,b1──▶ tanh ──W2,b2──▶ h ──Wp,bp──▶ z_raw ──/‖·‖──▶ z
//!                               │
//!                               └──/‖·‖──▶ ĥ ── ĥ·ĉ_k ──▶ logits (cosine, in [-1, 1])
//! ```
//!
//! Prototypes only receive gradient through the logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GcdError, Result};
use crate::numerics::{dot, guarded_norm, l2_normalize, l2_normalize_backward, Matrix};

/// Layer widths of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub feat: usize,
    pub proj: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: 32,
            feat: 16,
            proj: 8,
            classes,
        }
    }
}

/// All trainable parameters. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub wp: Matrix,
    pub bp: Matrix,
    /// Prototype bank, one row per class.
    pub prototypes: Matrix,
}

pub type ParamGrads = ModelParams;

pub const TENSOR_NAMES: [&str; 7] = ["w1", "b1", "w2", "b2", "wp", "bp", "prototypes"];

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            w1: Matrix::zeros(dims.hidden, dims.input),
            b1: Matrix::zeros(1, dims.hidden),
            w2: Matrix::zeros(dims.feat, dims.hidden),
            b2: Matrix::zeros(1, dims.feat),
            wp: Matrix::zeros(dims.proj, dims.feat),
            bp: Matrix::zeros(1, dims.proj),
            prototypes: Matrix::zeros(dims.classes, dims.feat),
        }
    }

    /// Fan-in scaled uniform weights; prototypes are Gaussian rows scaled to
    /// unit norm.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        let ModelDims {
            input,
            hidden,
            feat,
            proj,
            classes,
        } = *dims;
        if [input, hidden, feat, proj, classes].contains(&0) {
            return Err(GcdError::InvalidParameter(
                "all model dimensions must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let fill = |m: &mut Matrix, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            m.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
        };
        fill(&mut p.w1, input, &mut rng);
        fill(&mut p.b1, input, &mut rng);
        fill(&mut p.w2, hidden, &mut rng);
        fill(&mut p.b2, hidden, &mut rng);
        fill(&mut p.wp, feat, &mut rng);
        fill(&mut p.bp, feat, &mut rng);
        for k in 0..classes {
            let row: Vec<f64> = (0..feat).map(|_| rng.sample(StandardNormal)).collect();
            p.prototypes.row_mut(k).copy_from_slice(&l2_normalize(&row));
        }
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1.cols(),
            hidden: self.w1.rows(),
            feat: self.w2.rows(),
            proj: self.wp.rows(),
            classes: self.prototypes.rows(),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 7] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.wp,
            &self.bp,
            &self.prototypes,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wp,
            &mut self.bp,
            &mut self.prototypes,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// All parameters concatenated in [`TENSOR_NAMES`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.as_slice().len();
            t.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| dot(t.as_slice(), t.as_slice()))
            .sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.as_mut_slice()
                .iter_mut()
                .zip(b.as_slice())
                .for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Intermediates of one forward pass over a stacked input.
///
/// Rows `0..b` belong to the first view and `b..2b` to the second when the
/// input came from [`forward_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub x: Matrix,
    /// Hidden activations `tanh(W1 x + b1)`.
    pub hidden: Matrix,
    /// Backbone features `h`.
    pub h: Matrix,
    pub h_unit: Matrix,
    pub z_raw: Matrix,
    /// Unit-norm projections.
    pub z: Matrix,
    pub prototypes_unit: Matrix,
    /// Cosine similarities between `h` and each prototype.
    pub logits: Matrix,
    /// Rows per view, or the total row count for single-view caches.
    pub view_rows: usize,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn view_logits(&self, view: usize) -> Matrix {
        let b = self.view_rows;
        self.logits.slice_rows(view * b, (view + 1) * b)
    }

    pub fn view_z(&self, view: usize) -> Matrix {
        let b = self.view_rows;
        self.z.slice_rows(view * b, (view + 1) * b)
    }
}

/// Forward pass over arbitrary rows of input features.
pub fn forward(params: &ModelParams, x: &Matrix) -> Result<ForwardCache> {
    let dims = params.dims();
    if x.cols() != dims.input {
        return Err(GcdError::Shape(format!(
            "input has {} features, model expects {}",
            x.cols(),
            dims.input
        )));
    }
    let n = x.rows();
    let mut hidden = Matrix::zeros(n, dims.hidden);
    let mut h = Matrix::zeros(n, dims.feat);
    let mut h_unit = Matrix::zeros(n, dims.feat);
    let mut z_raw = Matrix::zeros(n, dims.proj);
    let mut z = Matrix::zeros(n, dims.proj);
    let mut logits = Matrix::zeros(n, dims.classes);

    let mut prototypes_unit = Matrix::zeros(dims.classes, dims.feat);
    for k in 0..dims.classes {
        prototypes_unit
            .row_mut(k)
            .copy_from_slice(&l2_normalize(params.prototypes.row(k)));
    }

    for i in 0..n {
        let xi = x.row(i);
        affine(&params.w1, &params.b1, xi, hidden.row_mut(i));
        hidden.row_mut(i).iter_mut().for_each(|v| *v = v.tanh());
        let (hid_row, h_row) = (hidden.row(i).to_vec(), h.row_mut(i));
        affine(&params.w2, &params.b2, &hid_row, h_row);
        let hi = h.row(i).to_vec();
        affine(&params.wp, &params.bp, &hi, z_raw.row_mut(i));
        z.row_mut(i).copy_from_slice(&l2_normalize(z_raw.row(i)));
        let hu = l2_normalize(&hi);
        for k in 0..dims.classes {
            logits.set(i, k, dot(&hu, prototypes_unit.row(k)));
        }
        h_unit.row_mut(i).copy_from_slice(&hu);
    }
    Ok(ForwardCache {
        x: x.clone(),
        hidden,
        h,
        h_unit,
        z_raw,
        z,
        prototypes_unit,
        logits,
        view_rows: n,
    })
}

/// Forward pass over both views of a batch, stacked view one first.
pub fn forward_batch(
    params: &ModelParams,
    batch: &crate::synthdata::Batch,
) -> Result<ForwardCache> {
    let mut cache = forward(params, &batch.stacked())?;
    cache.view_rows = batch.len();
    Ok(cache)
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64], out: &mut [f64]) {
    for (o, (row, bias)) in out.iter_mut().zip(w.iter_rows().zip(b.as_slice())) {
        *o = dot(row, x) + bias;
    }
}

/// Upstream gradients of a scalar loss w.r.t. the cached outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub logits: Matrix,
    pub z: Matrix,
}

impl OutputGrads {
    pub fn zeros_like(cache: &ForwardCache) -> Self {
        Self {
            logits: Matrix::zeros(cache.logits.rows(), cache.logits.cols()),
            z: Matrix::zeros(cache.z.rows(), cache.z.cols()),
        }
    }
}

/// Exact gradients of a scalar loss with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grads: &OutputGrads,
) -> Result<ParamGrads> {
    if grads.logits.rows() != cache.logits.rows()
        || grads.logits.cols() != cache.logits.cols()
        || grads.z.rows() != cache.z.rows()
        || grads.z.cols() != cache.z.cols()
    {
        return Err(GcdError::Shape(
            "output gradients do not match cache".into(),
        ));
    }
    let dims = params.dims();
    let mut out = ModelParams::zeros(&dims);
    let mut g_proto_unit = Matrix::zeros(dims.classes, dims.feat);

    let mut g_h_unit = vec![0.0; dims.feat];
    let mut g_h = vec![0.0; dims.feat];
    let mut g_hidden = vec![0.0; dims.hidden];

    for i in 0..cache.rows() {
        let gl = grads.logits.row(i);
        let hu = cache.h_unit.row(i);

        g_h_unit.iter_mut().for_each(|v| *v = 0.0);
        for (k, &g) in gl.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let cu = cache.prototypes_unit.row(k);
            for f in 0..dims.feat {
                g_h_unit[f] += g * cu[f];
            }
            let gp = g_proto_unit.row_mut(k);
            for f in 0..dims.feat {
                gp[f] += g * hu[f];
            }
        }
        let hi = cache.h.row(i);
        g_h.copy_from_slice(&l2_normalize_backward(hi, &g_h_unit));

        let g_zraw = l2_normalize_backward(cache.z_raw.row(i), grads.z.row(i));
        for (p, &g) in g_zraw.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            out.bp.as_mut_slice()[p] += g;
            let wrow = params.wp.row(p);
            let grow = out.wp.row_mut(p);
            for f in 0..dims.feat {
                grow[f] += g * hi[f];
                g_h[f] += g * wrow[f];
            }
        }

        let hid = cache.hidden.row(i);
        g_hidden.iter_mut().for_each(|v| *v = 0.0);
        for (f, &g) in g_h.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            out.b2.as_mut_slice()[f] += g;
            let wrow = params.w2.row(f);
            let grow = out.w2.row_mut(f);
            for j in 0..dims.hidden {
                grow[j] += g * hid[j];
                g_hidden[j] += g * wrow[j];
            }
        }

        let xi = cache.x.row(i);
        for j in 0..dims.hidden {
            let g = g_hidden[j] * (1.0 - hid[j] * hid[j]);
            if g == 0.0 {
                continue;
            }
            out.b1.as_mut_slice()[j] += g;
            let grow = out.w1.row_mut(j);
            for (gw, x) in grow.iter_mut().zip(xi) {
                *gw += g * x;
            }
        }
    }

    for k in 0..dims.classes {
        let g = l2_normalize_backward(params.prototypes.row(k), g_proto_unit.row(k));
        out.prototypes.row_mut(k).copy_from_slice(&g);
    }
    Ok(out)
}

/// Norm of `h` below which the normalisation guard is active.
pub fn uses_norm_guard(h: &[f64]) -> bool {
    guarded_norm(h) != crate::numerics::norm(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, max_relative_error};

    fn toy(seed: u64) -> (ModelParams, Matrix) {
        let dims = ModelDims {
            input: 4,
            hidden: 5,
            feat: 4,
            proj: 3,
            classes: 3,
        };
        let p = ModelParams::init(&dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<f64> = (0..6 * 4).map(|_| rng.sample(StandardNormal)).collect();
        (p, Matrix::from_vec(6, 4, x).unwrap())
    }

    #[test]
    fn init_is_deterministic_and_normalised() {
        let dims = ModelDims::new(20, 10);
        let a = ModelParams::init(&dims, 3).unwrap();
        let b = ModelParams::init(&dims, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prototypes.rows(), 10);
        for r in a.prototypes.iter_rows() {
            assert!((crate::numerics::norm(r) - 1.0).abs() < 1e-12);
        }
        assert!(ModelParams::init(&ModelDims { hidden: 0, ..dims }, 0).is_err());
    }

    #[test]
    fn logits_bounded_and_z_unit() {
        let (p, x) = toy(1);
        let c = forward(&p, &x).unwrap();
        for v in c.logits.as_slice() {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
        }
        for r in c.z.iter_rows() {
            assert!((crate::numerics::norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_rows_give_duplicated_cache() {
        let (p, x) = toy(2);
        let dup = x.vstack(&x).unwrap();
        let c = forward(&p, &dup).unwrap();
        for i in 0..x.rows() {
            assert_eq!(c.logits.row(i), c.logits.row(i + x.rows()));
            assert_eq!(c.z.row(i), c.z.row(i + x.rows()));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (p, _) = toy(0);
        assert!(matches!(
            forward(&p, &Matrix::zeros(2, 7)),
            Err(GcdError::Shape(_))
        ));
    }

    #[test]
    fn zero_features_hit_the_norm_guard() {
        let (mut p, x) = toy(4);
        p.w2.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        p.b2.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        let c = forward(&p, &x).unwrap();
        assert!(uses_norm_guard(c.h.row(0)));
        assert!(c.logits.is_finite());
        assert!(c.logits.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let (p, x) = toy(5);
        let c = forward(&p, &x).unwrap();
        let g = backward(&p, &c, &OutputGrads::zeros_like(&c)).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_logit_prototype_gradient() {
        let (p, x) = toy(6);
        let c = forward(&p, &x).unwrap();
        let mut up = OutputGrads::zeros_like(&c);
        up.logits.set(2, 1, 1.0);
        let g = backward(&p, &c, &up).unwrap();
        let numeric = finite_difference_grad(p.prototypes.row(1), 1e-5, |row| {
            let mut q = p.clone();
            q.prototypes.row_mut(1).copy_from_slice(row);
            forward(&q, &x).unwrap().logits.get(2, 1)
        });
        assert!(max_relative_error(g.prototypes.row(1), &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn random_linear_functional_gradient() {
        let (p, x) = toy(7);
        let c = forward(&p, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut up = OutputGrads::zeros_like(&c);
        up.logits
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.sample(StandardNormal));
        up.z.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.sample(StandardNormal));
        let g = backward(&p, &c, &up).unwrap();
        let objective = |flat: &[f64]| {
            let mut q = p.clone();
            q.set_flat(flat);
            let c = forward(&q, &x).unwrap();
            dot(c.logits.as_slice(), up.logits.as_slice()) + dot(c.z.as_slice(), up.z.as_slice())
        };
        let numeric = finite_difference_grad(&p.to_flat(), 1e-5, objective);
        assert!(max_relative_error(&g.to_flat(), &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn flat_round_trip() {
        let (p, _) = toy(8);
        let mut q = ModelParams::zeros(&p.dims());
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }
}
