//! Runs every point of a sweep grid and writes per-run artifacts.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use gcdlab::checkpoint::Checkpoint;
use gcdlab::eval::{hungarian_accuracy, kmeans_restarts, EpochMetrics};
use gcdlab::numerics::Matrix;
use gcdlab::synthdata::{generate_dataset, GcdDataset};
use gcdlab::trainer::train_with;

use crate::config::{DatasetConfig, ExperimentConfig, RunSpec};
use crate::embeddings::read_embeddings;

pub const METRICS_VERSION: &str = "gcdlab-metrics v1";
pub const METRICS_COLUMNS: [&str; 15] = [
    "epoch",
    "acc_all",
    "acc_old",
    "acc_new",
    "loss_total",
    "loss_rep_u",
    "loss_rep_s",
    "loss_cls_u",
    "loss_cls_s",
    "mean_entropy",
    "dkl",
    "ler",
    "known_count",
    "lr",
    "tau_t",
];
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "tag",
    "method",
    "seed",
    "beta",
    "delta",
    "ablation",
    "final_acc_all",
    "final_acc_old",
    "final_acc_new",
    "best_acc_all",
    "best_acc_old",
    "best_acc_new",
    "final_known_count",
    "status",
];
const KMEANS_ITERS: usize = 300;
const KMEANS_RESTARTS: usize = 10;

/// Final and best accuracies of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub tag: String,
    pub method: &'static str,
    pub seed: u64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub ablation: Option<String>,
    pub last: Option<EpochMetrics>,
    pub best: [f64; 3],
    pub error: Option<String>,
}

impl RunSummary {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let last = self.last.as_ref();
        vec![
            self.tag.clone(),
            self.method.to_string(),
            self.seed.to_string(),
            opt(self.beta),
            opt(self.delta),
            self.ablation.clone().unwrap_or_default(),
            opt(last.map(|m| m.acc_all)),
            opt(last.map(|m| m.acc_old)),
            opt(last.map(|m| m.acc_new)),
            self.best[0].to_string(),
            self.best[1].to_string(),
            self.best[2].to_string(),
            last.map(|m| m.known_count.to_string()).unwrap_or_default(),
            match &self.error {
                None => "ok".into(),
                Some(e) => format!("failed: {e}"),
            },
        ]
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunSummary>,
    pub summary_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

fn metrics_record(m: &EpochMetrics) -> Vec<String> {
    let l = &m.loss;
    vec![
        m.epoch.to_string(),
        m.acc_all.to_string(),
        m.acc_old.to_string(),
        m.acc_new.to_string(),
        l.total.to_string(),
        l.rep_unsup.to_string(),
        l.rep_sup.to_string(),
        l.cls_unsup.to_string(),
        l.cls_sup.to_string(),
        l.mean_entropy.to_string(),
        l.dkl.to_string(),
        l.ler.to_string(),
        m.known_count.to_string(),
        m.lr.to_string(),
        m.tau_t.to_string(),
    ]
}

fn csv_writer(path: &Path, versioned: bool) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut buf = BufWriter::new(file);
    if versioned {
        writeln!(buf, "# {METRICS_VERSION}")?;
    }
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf))
}

/// Dataset for a run seed.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<GcdDataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic(s) => Ok(generate_dataset(&s.spec(seed))?),
        DatasetConfig::Csv {
            path,
            known_classes,
        } => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_embeddings(file, known_classes.as_deref())
                .with_context(|| format!("reading {}", path.display()))
        }
    }
}

fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let probe = dir.join(".gcdlab-write-probe");
    File::create(&probe).with_context(|| format!("{} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn run_one(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunSummary> {
    let ds = load_dataset(cfg, spec.seed)?;
    let dir = cfg.output_dir.join(&spec.tag);
    fs::create_dir_all(&dir)?;
    let tag = &spec.tag;
    let mut w = csv_writer(&dir.join(format!("metrics_{tag}.csv")), true)?;
    w.write_record(METRICS_COLUMNS)?;
    let mut summary = RunSummary {
        tag: tag.clone(),
        method: "gcd",
        seed: spec.seed,
        beta: cfg.sweep.beta.as_ref().map(|_| spec.train.beta),
        delta: cfg.sweep.delta.as_ref().map(|_| spec.train.delta),
        ablation: spec.ablation.clone(),
        last: None,
        best: [0.0; 3],
        error: None,
    };
    let mut io_err: Option<anyhow::Error> = None;
    let result = train_with(&ds, &spec.train, |state, m| {
        if io_err.is_some() {
            return;
        }
        let res = (|| -> Result<()> {
            w.write_record(metrics_record(m))?;
            w.flush()?;
            if cfg.checkpoint_every > 0
                && m.epoch % cfg.checkpoint_every == 0
                && m.epoch < spec.train.epochs
            {
                let path = dir.join(format!("checkpoint_{tag}_epoch{}.json", m.epoch));
                Checkpoint::from_state(state, &spec.train).save(&path)?;
            }
            Ok(())
        })();
        if let Err(e) = res {
            io_err = Some(e);
        }
        summary.best[0] = summary.best[0].max(m.acc_all);
        summary.best[1] = summary.best[1].max(m.acc_old);
        summary.best[2] = summary.best[2].max(m.acc_new);
        summary.last = Some(*m);
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    let state = result?;
    Checkpoint::from_state(&state, &spec.train)
        .save(&dir.join(format!("checkpoint_{tag}.json")))?;
    Ok(summary)
}

/// k-means on the unlabeled features, scored with the same Hungarian protocol.
pub fn kmeans_baseline(ds: &GcdDataset, seed: u64) -> Result<EpochMetrics> {
    let idx = ds.unlabeled_indices();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| ds.features.row(i).to_vec()).collect();
    let x = Matrix::from_rows(&rows)?;
    let km = kmeans_restarts(&x, ds.num_classes(), seed, KMEANS_ITERS, KMEANS_RESTARTS)?;
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
    let acc = hungarian_accuracy(&km.assignments, &truth, &ds.known_classes)?;
    Ok(EpochMetrics {
        acc_all: acc.all,
        acc_old: acc.old,
        acc_new: acc.new,
        ..EpochMetrics::default()
    })
}

fn worker_count() -> usize {
    std::env::var("GCDLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Trains every grid point, writing `<output_dir>/<tag>/metrics_<tag>.csv`,
/// `checkpoint_<tag>.json` and a combined `summary.csv`. Failed runs are
/// logged and recorded; the other runs still complete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    check_writable(&cfg.output_dir)?;
    let grid = cfg.grid();
    let threads = worker_count().min(grid.len()).max(1);
    log::info!("{} run(s) on {threads} thread(s)", grid.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunSummary>>> = Mutex::new(vec![None; grid.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = grid.get(i) else { break };
                log::info!("[{}] start", spec.tag);
                let summary = match run_one(cfg, spec) {
                    Ok(s) => {
                        if let Some(m) = &s.last {
                            log::info!(
                                "[{}] done: all {:.4} old {:.4} new {:.4}",
                                spec.tag,
                                m.acc_all,
                                m.acc_old,
                                m.acc_new
                            );
                        }
                        s
                    }
                    Err(e) => {
                        log::error!("[{}] failed: {e:#}", spec.tag);
                        RunSummary {
                            tag: spec.tag.clone(),
                            method: "gcd",
                            seed: spec.seed,
                            beta: cfg.sweep.beta.as_ref().map(|_| spec.train.beta),
                            delta: cfg.sweep.delta.as_ref().map(|_| spec.train.delta),
                            ablation: spec.ablation.clone(),
                            last: None,
                            best: [0.0; 3],
                            error: Some(format!("{e:#}")),
                        }
                    }
                };
                slots.lock().expect("no poisoned workers")[i] = Some(summary);
            });
        }
    });
    let mut runs: Vec<RunSummary> = slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|s| s.expect("every grid point ran"))
        .collect();

    if cfg.kmeans_baseline {
        let seeds: BTreeSet<u64> = grid.iter().map(|r| r.seed).collect();
        for seed in seeds {
            let tag = format!("kmeans_seed{seed}");
            let res = load_dataset(cfg, seed).and_then(|ds| kmeans_baseline(&ds, seed));
            let (last, best, error) = match res {
                Ok(m) => (Some(m), [m.acc_all, m.acc_old, m.acc_new], None),
                Err(e) => {
                    log::error!("[{tag}] failed: {e:#}");
                    (None, [0.0; 3], Some(format!("{e:#}")))
                }
            };
            runs.push(RunSummary {
                tag,
                method: "kmeans",
                seed,
                beta: None,
                delta: None,
                ablation: None,
                last,
                best,
                error,
            });
        }
    }

    let summary_path = cfg.output_dir.join("summary.csv");
    let mut w = csv_writer(&summary_path, false)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &runs {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(ExperimentOutcome { runs, summary_path })
}
