//! Browser bindings for the `gcdlab` demo page.
//!
//! Each export returns a JSON string; the page in `www/` draws it on a canvas.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;

use gcdlab::eval::hungarian_accuracy;
use gcdlab::losses::EmaState;
use gcdlab::numerics::{entropy, softmax_temp, Distribution};
use gcdlab::synthdata::{generate_dataset, GcdDataset, SynthSpec};
use gcdlab::trainer::{init_state, train_epoch, TrainConfig, TrainState};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct MarginView {
    plain: Vec<f64>,
    adjusted: Vec<f64>,
    margins: Vec<f64>,
    entropy_plain: f64,
    entropy_adjusted: f64,
}

/// Softmax at `tau` with and without the margins `lambda_ler * ln(1/p_tilde)`.
pub fn margin_view(
    logits: &[f64],
    p_tilde: &[f64],
    tau: f64,
    lambda_ler: f64,
) -> Result<String, String> {
    if logits.len() != p_tilde.len() || logits.is_empty() {
        return Err("logits and p_tilde must have the same non-zero length".into());
    }
    let total: f64 = p_tilde.iter().sum();
    if !(total > 0.0) || p_tilde.iter().any(|&p| p < 0.0) {
        return Err("p_tilde must be non-negative with a positive sum".into());
    }
    let row: Vec<f64> = p_tilde.iter().map(|p| p / total).collect();
    let ema = EmaState {
        p_tilde: Distribution::new(row).map_err(|e| e.to_string())?,
        momentum: 0.99,
        updates: 0,
    };
    let margins = ema.margins(lambda_ler);
    let plain = softmax_temp(logits, tau).map_err(|e| e.to_string())?;
    let shifted: Vec<f64> = logits
        .iter()
        .zip(&margins)
        .map(|(l, d)| l + tau * d)
        .collect();
    let adjusted = softmax_temp(&shifted, tau).map_err(|e| e.to_string())?;
    let view = MarginView {
        entropy_plain: entropy(&plain),
        entropy_adjusted: entropy(&adjusted),
        plain,
        adjusted,
        margins,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = marginView)]
pub fn margin_view_js(
    logits: &[f64],
    p_tilde: &[f64],
    tau: f64,
    lambda_ler: f64,
) -> Result<String, JsError> {
    margin_view(logits, p_tilde, tau, lambda_ler).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct AccuracyView {
    all: f64,
    old: f64,
    new: f64,
    assignment: Vec<usize>,
}

/// Hungarian clustering accuracy of `pred` against `truth`; classes below
/// `n_old` count as old.
pub fn cluster_accuracy(pred: &[u32], truth: &[u32], n_old: u32) -> Result<String, String> {
    let pred: Vec<usize> = pred.iter().map(|&p| p as usize).collect();
    let truth: Vec<usize> = truth.iter().map(|&t| t as usize).collect();
    let old: BTreeSet<usize> = (0..n_old as usize).collect();
    let acc = hungarian_accuracy(&pred, &truth, &old).map_err(|e| e.to_string())?;
    let view = AccuracyView {
        all: acc.all,
        old: acc.old,
        new: acc.new,
        assignment: acc.assignment,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = clusterAccuracy)]
pub fn cluster_accuracy_js(pred: &[u32], truth: &[u32], n_old: u32) -> Result<String, JsError> {
    cluster_accuracy(pred, truth, n_old).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct RunPoint {
    old: f64,
    new: f64,
    all: f64,
    known_count: usize,
}

#[derive(Serialize)]
struct ComparePoint {
    epoch: usize,
    baseline: RunPoint,
    lego: RunPoint,
}

/// SimGCD and LegoGCD trained side by side on one synthetic dataset, one
/// epoch per call to `step`.
#[wasm_bindgen]
pub struct Comparison {
    data: GcdDataset,
    base_cfg: TrainConfig,
    lego_cfg: TrainConfig,
    base: TrainState,
    lego: TrainState,
}

impl Comparison {
    pub fn create(
        n_known: usize,
        n_novel: usize,
        separation: f64,
        noise: f64,
        epochs: usize,
        beta: f64,
        seed: u64,
    ) -> Result<Comparison, String> {
        let data = generate_dataset(&SynthSpec {
            n_known,
            n_novel,
            per_class: 40,
            dim: 12,
            separation,
            noise,
            labeled_ratio: 0.5,
            seed,
        })
        .map_err(|e| e.to_string())?;
        let lego_cfg = TrainConfig {
            epochs,
            beta,
            seed,
            ..TrainConfig::default()
        };
        let base_cfg = lego_cfg.clone().simgcd();
        let base = init_state(&data, &base_cfg).map_err(|e| e.to_string())?;
        let lego = init_state(&data, &lego_cfg).map_err(|e| e.to_string())?;
        Ok(Comparison {
            data,
            base_cfg,
            lego_cfg,
            base,
            lego,
        })
    }

    pub fn advance(&mut self) -> Result<Option<String>, String> {
        if self.base.epoch >= self.base_cfg.epochs {
            return Ok(None);
        }
        let b =
            train_epoch(&mut self.base, &self.data, &self.base_cfg).map_err(|e| e.to_string())?;
        let l =
            train_epoch(&mut self.lego, &self.data, &self.lego_cfg).map_err(|e| e.to_string())?;
        let point = |m: &gcdlab::eval::EpochMetrics| RunPoint {
            old: m.acc_old,
            new: m.acc_new,
            all: m.acc_all,
            known_count: m.known_count,
        };
        let p = ComparePoint {
            epoch: b.epoch,
            baseline: point(&b),
            lego: point(&l),
        };
        serde_json::to_string(&p)
            .map(Some)
            .map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Comparison {
    #[wasm_bindgen(constructor)]
    pub fn new(
        n_known: usize,
        n_novel: usize,
        separation: f64,
        noise: f64,
        epochs: usize,
        beta: f64,
        seed: u32,
    ) -> Result<Comparison, JsError> {
        Self::create(
            n_known,
            n_novel,
            separation,
            noise,
            epochs,
            beta,
            u64::from(seed),
        )
        .map_err(|e| JsError::new(&e))
    }

    /// Next epoch as JSON, or `undefined` once training is over.
    pub fn step(&mut self) -> Result<Option<String>, JsError> {
        self.advance().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn epoch(&self) -> usize {
        self.base.epoch
    }
}
