//! Training objectives: contrastive representation losses, prototype
//! self-distillation with a mean-entropy regulariser, the dual-view KL
//! constraint, and local entropy regularisation (LER) with margin-aware
//! offsets.
//!
//! Classification quantities work on stacked view-samples: for a batch of
//! `b` images, rows `0..b` hold the first view and rows `b..2b` the second.
//! Every loss returns its value together with the gradient with respect to
//! the cosine logits or the projections it consumes. Stop-gradient targets
//! are computed once and passed in explicitly, so the same code path serves
//! training and finite-difference checks.

use std::collections::BTreeSet;

use crate::error::{GcdError, Result};
use crate::model::{ForwardCache, OutputGrads};
use crate::numerics::{
    argmax, cross_entropy, dot, entropy, kl_div, max_value, softmax_backward, softmax_rows,
    softmax_unchecked, Distribution, Matrix, LOG_FLOOR,
};

/// Loss value plus gradients with respect to both projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_z1: Matrix,
    pub grad_z2: Matrix,
    /// Anchors that contributed (all rows for the unsupervised loss).
    pub anchors: usize,
}

/// InfoNCE with anchor `z1_i`, positive `z2_i`, and every `z2_n` in the
/// denominator (the positive included).
pub fn unsup_contrastive(z1: &Matrix, z2: &Matrix, tau_u: f64) -> Result<ContrastiveOutput> {
    check_temp("tau_u", tau_u)?;
    let b = z1.rows();
    if b < 2 {
        return Err(GcdError::InvalidBatch(format!(
            "contrastive loss needs at least 2 samples, got {b}"
        )));
    }
    if z2.rows() != b || z2.cols() != z1.cols() {
        return Err(GcdError::Shape("views differ in shape".into()));
    }
    let rows: Vec<usize> = (0..b).collect();
    let positives: Vec<Vec<usize>> = (0..b).map(|i| vec![i]).collect();
    Ok(info_nce(z1, z2, &rows, &rows, &positives, tau_u))
}

/// Supervised contrastive loss over the labeled subset.
///
/// For a labeled anchor `i` the positives are the other labeled samples with
/// the same label, and the denominator runs over all labeled samples' second
/// views. Anchors without positives are skipped; if none remain the loss is
/// zero with zero gradients.
pub fn sup_contrastive(
    z1: &Matrix,
    z2: &Matrix,
    labels: &[usize],
    labeled: &[bool],
    tau_c: f64,
) -> Result<ContrastiveOutput> {
    check_temp("tau_c", tau_c)?;
    let b = z1.rows();
    if z2.rows() != b || labels.len() != b || labeled.len() != b {
        return Err(GcdError::Shape("batch fields differ in length".into()));
    }
    let lab: Vec<usize> = (0..b).filter(|&i| labeled[i]).collect();
    let mut anchors = Vec::new();
    let mut positives = Vec::new();
    for (a, &i) in lab.iter().enumerate() {
        let pos: Vec<usize> = lab
            .iter()
            .enumerate()
            .filter(|&(c, &q)| c != a && labels[q] == labels[i])
            .map(|(c, _)| c)
            .collect();
        if !pos.is_empty() {
            anchors.push(i);
            positives.push(pos);
        }
    }
    if anchors.is_empty() {
        return Ok(ContrastiveOutput {
            loss: 0.0,
            grad_z1: Matrix::zeros(b, z1.cols()),
            grad_z2: Matrix::zeros(b, z2.cols()),
            anchors: 0,
        });
    }
    Ok(info_nce(z1, z2, &anchors, &lab, &positives, tau_c))
}

/// Shared InfoNCE kernel. `positives[a]` indexes into `candidates`.
fn info_nce(
    z1: &Matrix,
    z2: &Matrix,
    anchors: &[usize],
    candidates: &[usize],
    positives: &[Vec<usize>],
    tau: f64,
) -> ContrastiveOutput {
    let b = z1.rows();
    let mut grad_z1 = Matrix::zeros(b, z1.cols());
    let mut grad_z2 = Matrix::zeros(b, z2.cols());
    let inv_anchors = 1.0 / anchors.len() as f64;
    let mut loss = 0.0;
    for (&i, pos) in anchors.iter().zip(positives) {
        let sims: Vec<f64> = candidates
            .iter()
            .map(|&n| dot(z1.row(i), z2.row(n)))
            .collect();
        let probs = softmax_unchecked(&sims, tau);
        let max = max_value(&sims) / tau;
        let lse = max + sims.iter().map(|s| (s / tau - max).exp()).sum::<f64>().ln();
        let inv_pos = 1.0 / pos.len() as f64;
        loss += pos.iter().map(|&q| lse - sims[q] / tau).sum::<f64>() * inv_pos * inv_anchors;

        // dL/ds_n = (softmax_n - [n ∈ pos] / |pos|) / tau, scaled by 1/|anchors|.
        let mut coef: Vec<f64> = probs;
        for &q in pos {
            coef[q] -= inv_pos;
        }
        for (c, &n) in coef.iter().zip(candidates) {
            let g = c / tau * inv_anchors;
            if g == 0.0 {
                continue;
            }
            let (zi, zn) = (z1.row(i).to_vec(), z2.row(n).to_vec());
            grad_z1
                .row_mut(i)
                .iter_mut()
                .zip(&zn)
                .for_each(|(a, v)| *a += g * v);
            grad_z2
                .row_mut(n)
                .iter_mut()
                .zip(&zi)
                .for_each(|(a, v)| *a += g * v);
        }
    }
    ContrastiveOutput {
        loss,
        grad_z1,
        grad_z2,
        anchors: anchors.len(),
    }
}

/// `(1 - λ) · unsup + λ · sup`.
pub fn rep_loss(unsup: f64, sup: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * unsup + lambda * sup
}

/// Cross-view teacher targets: row `i` of view one is supervised by the
/// sharpened prediction of view two, and vice versa.
pub fn teacher_targets(logits: &Matrix, tau_t: f64) -> Matrix {
    let b = logits.rows() / 2;
    let sharp = softmax_rows(logits, tau_t);
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..b {
        out.row_mut(i).copy_from_slice(sharp.row(b + i));
        out.row_mut(b + i).copy_from_slice(sharp.row(i));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationOutput {
    pub cls_unsup: f64,
    pub cls_sup: f64,
    pub grad_unsup: Matrix,
    pub grad_sup: Matrix,
    /// Student distributions at `tau_s`.
    pub student: Matrix,
    /// Detached teacher distributions at `tau_t`, already swapped across views.
    pub teacher: Matrix,
}

/// Self-distillation and supervised cross-entropy over stacked logits.
///
/// `labels` and `labeled` have one entry per image; both views of a labeled
/// image count as labeled view-samples.
pub fn classification_losses(
    logits: &Matrix,
    labels: &[usize],
    labeled: &[bool],
    tau_s: f64,
    tau_t: f64,
) -> Result<ClassificationOutput> {
    check_temp("tau_t", tau_t)?;
    let teacher = teacher_targets(logits, tau_t);
    classification_with_teacher(logits, labels, labeled, tau_s, teacher)
}

pub(crate) fn classification_with_teacher(
    logits: &Matrix,
    labels: &[usize],
    labeled: &[bool],
    tau_s: f64,
    teacher: Matrix,
) -> Result<ClassificationOutput> {
    check_temp("tau_s", tau_s)?;
    let rows = logits.rows();
    let b = rows / 2;
    if rows != 2 * b || labels.len() != b || labeled.len() != b {
        return Err(GcdError::Shape(
            "stacked logits need 2b rows and b labels".into(),
        ));
    }
    let k = logits.cols();
    let student = softmax_rows(logits, tau_s);
    let mut grad_unsup = Matrix::zeros(rows, k);
    let mut grad_sup = Matrix::zeros(rows, k);

    let inv = 1.0 / rows as f64;
    let mut cls_unsup = 0.0;
    for r in 0..rows {
        let (p, q) = (student.row(r), teacher.row(r));
        cls_unsup += cross_entropy(q, p) * inv;
        // d/dl CE(q, softmax(l/τ)) = (p - q) / τ when Σq = 1
        for (g, (pk, qk)) in grad_unsup.row_mut(r).iter_mut().zip(p.iter().zip(q)) {
            *g = (pk - qk) / tau_s * inv;
        }
    }

    let n_lab = 2 * labeled.iter().filter(|f| **f).count();
    let mut cls_sup = 0.0;
    if n_lab > 0 {
        let inv = 1.0 / n_lab as f64;
        for r in 0..rows {
            let i = r % b;
            if !labeled[i] {
                continue;
            }
            let y = labels[i];
            if y >= k {
                return Err(GcdError::InvalidParameter(format!(
                    "label {y} outside 0..{k}"
                )));
            }
            let p = student.row(r);
            cls_sup -= p[y].max(LOG_FLOOR).ln() * inv;
            for (c, (g, pk)) in grad_sup.row_mut(r).iter_mut().zip(p).enumerate() {
                let onehot = if c == y { 1.0 } else { 0.0 };
                *g = (pk - onehot) / tau_s * inv;
            }
        }
    }
    Ok(ClassificationOutput {
        cls_unsup,
        cls_sup,
        grad_unsup,
        grad_sup,
        student,
        teacher,
    })
}

/// Entropy of the batch-mean prediction `p̄` and its gradient with respect
/// to the logits that produced `dists` at temperature `tau_s`.
pub fn mean_entropy_reg(dists: &Matrix, tau_s: f64) -> (f64, Matrix) {
    let (rows, k) = (dists.rows(), dists.cols());
    let mut mean = vec![0.0; k];
    for r in dists.iter_rows() {
        mean.iter_mut()
            .zip(r)
            .for_each(|(m, v)| *m += v / rows as f64);
    }
    let h = entropy(&mean);
    let dh_dmean: Vec<f64> = mean
        .iter()
        .map(|m| -(m.max(LOG_FLOOR).ln() + 1.0) / rows as f64)
        .collect();
    let mut grad = Matrix::zeros(rows, k);
    for r in 0..rows {
        grad.row_mut(r)
            .copy_from_slice(&softmax_backward(dists.row(r), &dh_dmean, tau_s));
    }
    (h, grad)
}

/// High-confidence, predicted-label and known-sample masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionState {
    pub high_conf: Vec<bool>,
    pub pred_labels: Vec<usize>,
    pub known_mask: Vec<bool>,
}

impl SelectionState {
    pub fn empty(rows: usize) -> Self {
        Self {
            high_conf: vec![false; rows],
            pred_labels: vec![0; rows],
            known_mask: vec![false; rows],
        }
    }

    pub fn selected(&self) -> usize {
        self.known_mask.iter().filter(|m| **m).count()
    }
}

/// Picks unlabeled view-samples whose top prediction reaches `delta` and
/// falls on a known class. `labeled` is the per-row label mask, already
/// duplicated across views.
pub fn select_known(
    dists: &Matrix,
    labeled: &[bool],
    known: &BTreeSet<usize>,
    delta: f64,
) -> Result<SelectionState> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(GcdError::InvalidParameter(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if labeled.len() != dists.rows() {
        return Err(GcdError::Shape("mask length differs from rows".into()));
    }
    let mut s = SelectionState::empty(dists.rows());
    for (r, p) in dists.iter_rows().enumerate() {
        s.high_conf[r] = max_value(p) >= delta;
        s.pred_labels[r] = argmax(p);
        s.known_mask[r] = !labeled[r] && s.high_conf[r] && known.contains(&s.pred_labels[r]);
    }
    Ok(s)
}

/// Duplicates a per-image mask across both views.
pub fn duplicate_mask(mask: &[bool]) -> Vec<bool> {
    mask.iter().chain(mask).copied().collect()
}

/// Exponential moving average of the mean prediction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmaState {
    pub p_tilde: Distribution,
    pub momentum: f64,
    /// Number of updates applied so far.
    pub updates: u64,
}

impl EmaState {
    pub fn new(classes: usize, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(GcdError::InvalidParameter(format!(
                "EMA momentum must lie in (0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            p_tilde: Distribution::uniform(classes),
            momentum,
            updates: 0,
        })
    }

    /// `p̃ ← m p̃ + (1 - m) mean(dists)`, renormalised.
    pub fn update(&mut self, dists: &Matrix) {
        let rows = dists.rows() as f64;
        let m = self.momentum;
        let mut mean = vec![0.0; dists.cols()];
        for r in dists.iter_rows() {
            mean.iter_mut().zip(r).for_each(|(a, v)| *a += v / rows);
        }
        self.p_tilde
            .probs_mut()
            .iter_mut()
            .zip(&mean)
            .for_each(|(p, q)| *p = m * *p + (1.0 - m) * q);
        self.p_tilde.renormalize();
        self.updates += 1;
    }

    /// `Δ_j = λ_ler · ln(1 / p̃_j)`, with `p̃_j` floored at `1e-12`.
    pub fn margins(&self, lambda_ler: f64) -> Vec<f64> {
        self.p_tilde
            .probs()
            .iter()
            .map(|p| -lambda_ler * p.max(LOG_FLOOR).ln())
            .collect()
    }
}

/// Updates the EMA with `dists` and returns the fresh margins.
pub fn update_ema_and_margins(state: &mut EmaState, dists: &Matrix, lambda_ler: f64) -> Vec<f64> {
    state.update(dists);
    state.margins(lambda_ler)
}

/// LER over selected view-samples.
///
/// With `use_map`, the detached target `softmax(l/τ_o)` supervises the
/// shifted prediction `softmax(l/τ_o + Δ)`. Without it, the loss is the
/// negative mean entropy of `softmax(l/τ_o)` over the selection.
pub fn ler_loss(
    logits: &Matrix,
    selection: &SelectionState,
    margins: &[f64],
    tau_o: f64,
    use_map: bool,
) -> Result<(f64, Matrix)> {
    check_temp("tau_o", tau_o)?;
    let target = softmax_rows(logits, tau_o);
    ler_with_target(logits, &target, selection, margins, tau_o, use_map)
}

pub(crate) fn ler_with_target(
    logits: &Matrix,
    target: &Matrix,
    selection: &SelectionState,
    margins: &[f64],
    tau_o: f64,
    use_map: bool,
) -> Result<(f64, Matrix)> {
    let (rows, k) = (logits.rows(), logits.cols());
    if selection.known_mask.len() != rows || margins.len() != k {
        return Err(GcdError::Shape(
            "selection or margins do not match logits".into(),
        ));
    }
    let mut grad = Matrix::zeros(rows, k);
    let n = selection.selected();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    for r in (0..rows).filter(|&r| selection.known_mask[r]) {
        let l = logits.row(r);
        if use_map {
            // softmax(l/τ + Δ) == softmax((l + τΔ)/τ)
            let shifted: Vec<f64> = l.iter().zip(margins).map(|(v, d)| v + tau_o * d).collect();
            let pred = softmax_unchecked(&shifted, tau_o);
            let t = target.row(r);
            loss += cross_entropy(t, &pred) * inv;
            for (g, (p, q)) in grad.row_mut(r).iter_mut().zip(pred.iter().zip(t)) {
                *g = (p - q) / tau_o * inv;
            }
        } else {
            let p = softmax_unchecked(l, tau_o);
            loss -= entropy(&p) * inv;
            // d(-H)/dp = ln p + 1
            let dp: Vec<f64> = p
                .iter()
                .map(|v| (v.max(LOG_FLOOR).ln() + 1.0) * inv)
                .collect();
            grad.row_mut(r)
                .copy_from_slice(&softmax_backward(&p, &dp, tau_o));
        }
    }
    Ok((loss, grad))
}

/// Mean over image pairs of `KL(p_i ‖ p'_i)`, with the second view detached.
///
/// `dists` are stacked student distributions at `tau_s`; the returned
/// gradient is non-zero only on the first-view rows.
pub fn dkl_loss(dists: &Matrix, tau_s: f64) -> (f64, Matrix) {
    let b = dists.rows() / 2;
    let target = dists.slice_rows(b, 2 * b);
    dkl_with_target(dists, &target, tau_s)
}

pub(crate) fn dkl_with_target(dists: &Matrix, target: &Matrix, tau_s: f64) -> (f64, Matrix) {
    let (rows, k) = (dists.rows(), dists.cols());
    let b = rows / 2;
    let mut grad = Matrix::zeros(rows, k);
    if b == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let (p, q) = (dists.row(i), target.row(i));
        loss += kl_div(p, q) * inv;
        // dKL/dp = ln p - ln q + 1; the constant vanishes through the softmax.
        let dp: Vec<f64> = p
            .iter()
            .zip(q)
            .map(|(a, c)| (a.max(LOG_FLOOR).ln() - c.max(LOG_FLOOR).ln()) * inv)
            .collect();
        grad.row_mut(i)
            .copy_from_slice(&softmax_backward(p, &dp, tau_s));
    }
    (loss, grad)
}

/// Scalar weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Every term of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub rep_unsup: f64,
    pub rep_sup: f64,
    pub cls_unsup: f64,
    pub cls_sup: f64,
    pub mean_entropy: f64,
    pub dkl: f64,
    pub ler: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `α (L_rep + L_cls) + β L_LER` from the stored parts.
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        let rep = rep_loss(self.rep_unsup, self.rep_sup, w.lambda);
        let cls = (1.0 - w.lambda) * (self.cls_unsup - w.epsilon * self.mean_entropy + self.dkl)
            + w.lambda * self.cls_sup;
        w.alpha * (rep + cls) + w.beta * self.ler
    }

    /// Terms in a fixed order, for diagnostics.
    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("rep_unsup", self.rep_unsup),
            ("rep_sup", self.rep_sup),
            ("cls_unsup", self.cls_unsup),
            ("cls_sup", self.cls_sup),
            ("mean_entropy", self.mean_entropy),
            ("dkl", self.dkl),
            ("ler", self.ler),
            ("total", self.total),
        ]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }

    pub(crate) fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.rep_unsup += s * other.rep_unsup;
        self.rep_sup += s * other.rep_sup;
        self.cls_unsup += s * other.cls_unsup;
        self.cls_sup += s * other.cls_sup;
        self.mean_entropy += s * other.mean_entropy;
        self.dkl += s * other.dkl;
        self.ler += s * other.ler;
        self.total += s * other.total;
    }
}

/// Fills in `total` from the parts.
pub fn total_loss(mut parts: LossBreakdown, w: &LossWeights) -> Result<LossBreakdown> {
    if w.alpha < 0.0 || w.beta < 0.0 {
        return Err(GcdError::InvalidParameter(
            "alpha and beta must be >= 0".into(),
        ));
    }
    parts.total = parts.recompose(w);
    Ok(parts)
}

/// Everything the combined objective needs besides the forward cache.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub weights: LossWeights,
    pub tau_u: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    pub tau_t: f64,
    pub tau_o: f64,
    pub delta: f64,
    pub lambda_ler: f64,
    pub use_ler: bool,
    pub use_map: bool,
    pub use_dkl: bool,
}

/// Stop-gradient inputs of the objective, computed from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedTargets {
    pub teacher: Matrix,
    /// Second-view student distributions used as the KL target.
    pub dkl_target: Matrix,
    /// `softmax(l / τ_o)` for the LER target branch.
    pub ler_target: Matrix,
    pub selection: SelectionState,
    pub margins: Vec<f64>,
}

/// Computes the detached targets for the batch and advances `ema` exactly
/// once.
pub fn detach_targets(
    cache: &ForwardCache,
    mask: &[bool],
    known: &BTreeSet<usize>,
    settings: &ObjectiveSettings,
    ema: &mut EmaState,
) -> Result<DetachedTargets> {
    let logits = &cache.logits;
    let b = cache.view_rows;
    let student = softmax_rows(logits, settings.tau_s);
    let margins = update_ema_and_margins(ema, &student, settings.lambda_ler);
    let (selection, margins) = if settings.use_ler {
        let selection = select_known(&student, &duplicate_mask(mask), known, settings.delta)?;
        (selection, margins)
    } else {
        (
            SelectionState::empty(logits.rows()),
            vec![0.0; logits.cols()],
        )
    };
    Ok(DetachedTargets {
        teacher: teacher_targets(logits, settings.tau_t),
        dkl_target: student.slice_rows(b, 2 * b),
        ler_target: softmax_rows(logits, settings.tau_o),
        selection,
        margins,
    })
}

/// Evaluates the full objective and its gradients on a two-view cache.
pub fn objective(
    cache: &ForwardCache,
    labels: &[usize],
    mask: &[bool],
    settings: &ObjectiveSettings,
    targets: &DetachedTargets,
) -> Result<(LossBreakdown, OutputGrads)> {
    let b = cache.view_rows;
    if cache.rows() != 2 * b {
        return Err(GcdError::Shape("objective needs a two-view cache".into()));
    }
    let w = settings.weights;
    let (z1, z2) = (cache.view_z(0), cache.view_z(1));
    let rep_u = unsup_contrastive(&z1, &z2, settings.tau_u)?;
    let rep_s = sup_contrastive(&z1, &z2, labels, mask, settings.tau_c)?;
    let cls = classification_with_teacher(
        &cache.logits,
        labels,
        mask,
        settings.tau_s,
        targets.teacher.clone(),
    )?;
    let (h_mean, g_h) = mean_entropy_reg(&cls.student, settings.tau_s);
    let (dkl, g_dkl) = if settings.use_dkl {
        dkl_with_target(&cls.student, &targets.dkl_target, settings.tau_s)
    } else {
        (0.0, Matrix::zeros(cache.rows(), cache.logits.cols()))
    };
    let (ler, g_ler) = if settings.use_ler {
        check_temp("tau_o", settings.tau_o)?;
        ler_with_target(
            &cache.logits,
            &targets.ler_target,
            &targets.selection,
            &targets.margins,
            settings.tau_o,
            settings.use_map,
        )?
    } else {
        (0.0, Matrix::zeros(cache.rows(), cache.logits.cols()))
    };

    let parts = total_loss(
        LossBreakdown {
            rep_unsup: rep_u.loss,
            rep_sup: rep_s.loss,
            cls_unsup: cls.cls_unsup,
            cls_sup: cls.cls_sup,
            mean_entropy: h_mean,
            dkl,
            ler,
            total: 0.0,
        },
        &w,
    )?;

    let mut grads = OutputGrads::zeros_like(cache);
    let unsup_w = w.alpha * (1.0 - w.lambda);
    let sup_w = w.alpha * w.lambda;
    for (r, g) in grads.logits.as_mut_slice().iter_mut().enumerate() {
        *g = unsup_w
            * (cls.grad_unsup.as_slice()[r] - w.epsilon * g_h.as_slice()[r] + g_dkl.as_slice()[r])
            + sup_w * cls.grad_sup.as_slice()[r]
            + w.beta * g_ler.as_slice()[r];
    }
    let d = cache.z.cols();
    for i in 0..b {
        for c in 0..d {
            let g1 = unsup_w * rep_u.grad_z1.get(i, c) + sup_w * rep_s.grad_z1.get(i, c);
            let g2 = unsup_w * rep_u.grad_z2.get(i, c) + sup_w * rep_s.grad_z2.get(i, c);
            grads.z.set(i, c, g1);
            grads.z.set(b + i, c, g2);
        }
    }
    Ok((parts, grads))
}

fn check_temp(name: &str, tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(GcdError::InvalidParameter(format!(
            "{name} must be positive, got {tau}"
        )))
    }
}
