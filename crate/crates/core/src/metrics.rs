//! Round instrumentation: the three-term global-loss decomposition,
//! pairwise gradient conflict, and eigenvalue spectra.
//!
//! With client weights `pᵢ = nᵢ/n`, local models `wᵢ`, aggregated model `w`
//! and `𝓛(·) = Σⱼ pⱼ 𝓛ⱼ(·)`:
//!
//! ```text
//! 𝓛(w) = Σᵢ pᵢ 𝓛ᵢ(wᵢ)                              local
//!      + Σⱼ Σᵢ pⱼ pᵢ (𝓛ⱼ(wᵢ) − 𝓛ᵢ(wᵢ))             distribution shift
//!      + Σᵢ pᵢ (𝓛(w) − 𝓛(wᵢ))                      aggregation
//! ```
//!
//! The identity is exact; [`decompose`] checks it at 1e-9 relative and
//! fails loudly otherwise. All losses here are plain cross-entropy.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::linalg::{cosine, Matrix};
use crate::local::FlatGradient;
use crate::model::{self, ModelParams};

/// Relative tolerance on the decomposition identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

/// Cross-evaluation matrix: entry `(j, i)` is the CE loss of model `i` on
/// shard `j`. Cells are evaluated in parallel and assembled in index order.
pub fn cross_eval_matrix(locals: &[ModelParams], shards: &[ClientDataset]) -> Result<Matrix> {
    if locals.len() != shards.len() {
        return Err(Error::Shape(format!(
            "{} local models for {} shards",
            locals.len(),
            shards.len()
        )));
    }
    let m = locals.len();
    if m == 0 {
        return Err(Error::EmptyInput("cross evaluation over zero clients"));
    }
    let cells: Vec<f64> = (0..m * m)
        .into_par_iter()
        .map(|k| {
            let (j, i) = (k / m, k % m);
            model::evaluate(&locals[i], shards[j].features(), shards[j].labels(), 0.0)
                .map(|r| r.ce)
                .map_err(|e| Error::CrossEval {
                    model: i,
                    shard: j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    Matrix::from_vec(m, m, cells)
}

/// Weighted CE loss `𝓛(w) = Σⱼ pⱼ 𝓛ⱼ(w)` over the shards.
pub fn federated_loss(params: &ModelParams, shards: &[ClientDataset], weights: &[f64]) -> Result<f64> {
    if shards.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} shards",
            weights.len(),
            shards.len()
        )));
    }
    let losses: Vec<f64> = shards
        .par_iter()
        .map(|s| model::evaluate(params, s.features(), s.labels(), 0.0).map(|r| r.ce))
        .collect::<Result<_>>()?;
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub local_loss: f64,
    pub dist_shift_signed: f64,
    pub aggregation_signed: f64,
    pub global_loss: f64,
}

impl Decomposition {
    pub fn dist_shift_loss(&self) -> f64 {
        self.dist_shift_signed.abs()
    }

    pub fn aggregation_loss(&self) -> f64 {
        self.aggregation_signed.abs()
    }
}

/// Splits `global_loss = 𝓛(w)` into its three terms from the cross matrix.
pub fn decompose_losses(cross: &Matrix, global_loss: f64, weights: &[f64]) -> Result<Decomposition> {
    let m = weights.len();
    if cross.rows() != m || cross.cols() != m {
        return Err(Error::Shape(format!(
            "{}x{} cross matrix for {m} weights",
            cross.rows(),
            cross.cols()
        )));
    }
    let mut local = 0.0;
    let mut shift = 0.0;
    let mut aggregation = 0.0;
    for i in 0..m {
        let own = cross.get(i, i);
        local += weights[i] * own;
        // 𝓛(wᵢ) = Σⱼ pⱼ 𝓛ⱼ(wᵢ)
        let mut pooled = 0.0;
        for j in 0..m {
            shift += weights[j] * weights[i] * (cross.get(j, i) - own);
            pooled += weights[j] * cross.get(j, i);
        }
        aggregation += weights[i] * (global_loss - pooled);
    }
    let reconstructed = local + shift + aggregation;
    if (reconstructed - global_loss).abs() > IDENTITY_TOLERANCE * global_loss.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::InternalConsistency {
            local,
            shift,
            aggregation,
            global: global_loss,
        });
    }
    Ok(Decomposition {
        local_loss: local,
        dist_shift_signed: shift,
        aggregation_signed: aggregation,
        global_loss,
    })
}

/// Cross-evaluates the local models, evaluates the aggregated model on the
/// same shards, and decomposes.
pub fn decompose(
    cross: &Matrix,
    global: &ModelParams,
    weights: &[f64],
    shards: &[ClientDataset],
) -> Result<Decomposition> {
    let global_loss = federated_loss(global, shards, weights)?;
    decompose_losses(cross, global_loss, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictStats {
    pub mean_pairwise_cosine: f64,
    pub min_pairwise_cosine: f64,
    /// Fewer than two uploads, or some upload had zero norm; the neutral
    /// value 1.0 is reported.
    pub degenerate: bool,
}

pub fn conflict_stats(grads: &[FlatGradient]) -> ConflictStats {
    let neutral = ConflictStats {
        mean_pairwise_cosine: 1.0,
        min_pairwise_cosine: 1.0,
        degenerate: true,
    };
    if grads.len() < 2 || grads.iter().any(|g| g.norm() == 0.0) {
        return neutral;
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut pairs = 0usize;
    for i in 0..grads.len() {
        for j in (i + 1)..grads.len() {
            let Some(c) = cosine(&grads[i].delta, &grads[j].delta) else {
                return neutral;
            };
            sum += c;
            min = min.min(c);
            pairs += 1;
        }
    }
    ConflictStats {
        mean_pairwise_cosine: sum / pairs as f64,
        min_pairwise_cosine: min,
        degenerate: false,
    }
}

/// One persisted line of run output. Decomposition fields are `None` on
/// rounds where it was not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub participants: usize,
    pub local_loss: Option<f64>,
    pub dist_shift_loss: Option<f64>,
    pub aggregation_loss: Option<f64>,
    pub dist_shift_signed: Option<f64>,
    pub aggregation_signed: Option<f64>,
    pub global_loss: Option<f64>,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub mean_pairwise_cosine: f64,
    pub min_pairwise_cosine: f64,
    pub spectrum: Vec<f64>,
    pub retained_axes: usize,
    pub orthogonal_clients: usize,
    /// Kept out of the metrics files (they must be byte-reproducible);
    /// written to the timings file instead.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RoundMetrics {
    pub fn set_decomposition(&mut self, d: &Decomposition) {
        self.local_loss = Some(d.local_loss);
        self.dist_shift_loss = Some(d.dist_shift_loss());
        self.aggregation_loss = Some(d.aggregation_loss());
        self.dist_shift_signed = Some(d.dist_shift_signed);
        self.aggregation_signed = Some(d.aggregation_signed);
        self.global_loss = Some(d.global_loss);
    }

    pub fn decomposition(&self) -> Option<Decomposition> {
        Some(Decomposition {
            local_loss: self.local_loss?,
            dist_shift_signed: self.dist_shift_signed?,
            aggregation_signed: self.aggregation_signed?,
            global_loss: self.global_loss?,
        })
    }
}

pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMINGS_CSV: &str = "timings.csv";

const CSV_COLUMNS: [&str; 15] = [
    "round",
    "participants",
    "local_loss",
    "dist_shift_loss",
    "aggregation_loss",
    "dist_shift_signed",
    "aggregation_signed",
    "global_loss",
    "test_loss",
    "test_accuracy",
    "mean_pairwise_cosine",
    "min_pairwise_cosine",
    "spectrum",
    "retained_axes",
    "orthogonal_clients",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Streams [`RoundMetrics`] to `metrics.jsonl`, `metrics.csv` (same
/// columns; the spectrum is `;`-separated) and `timings.csv`.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    timings: BufWriter<File>,
    jsonl_path: PathBuf,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let jsonl_path = dir.join(METRICS_JSONL);
        let jsonl = BufWriter::new(File::create(&jsonl_path)?);
        let mut csv = BufWriter::new(File::create(dir.join(METRICS_CSV))?);
        writeln!(csv, "{}", CSV_COLUMNS.join(","))?;
        let mut timings = BufWriter::new(File::create(dir.join(TIMINGS_CSV))?);
        writeln!(timings, "round,wall_time_s")?;
        Ok(Self {
            jsonl,
            csv,
            timings,
            jsonl_path,
        })
    }

    pub fn jsonl_path(&self) -> &Path {
        &self.jsonl_path
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, m)?;
        self.jsonl.write_all(b"\n")?;
        let spectrum: Vec<String> = m.spectrum.iter().map(|v| v.to_string()).collect();
        writeln!(
            self.csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.round,
            m.participants,
            opt(m.local_loss),
            opt(m.dist_shift_loss),
            opt(m.aggregation_loss),
            opt(m.dist_shift_signed),
            opt(m.aggregation_signed),
            opt(m.global_loss),
            m.test_loss,
            m.test_accuracy,
            m.mean_pairwise_cosine,
            m.min_pairwise_cosine,
            spectrum.join(";"),
            m.retained_axes,
            m.orthogonal_clients
        )?;
        writeln!(self.timings, "{},{}", m.round, m.wall_time)?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.jsonl.flush()?;
        self.csv.flush()?;
        self.timings.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
