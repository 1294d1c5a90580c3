//! The round loop: sample clients, train them concurrently, aggregate,
//! update the global model, evaluate and persist metrics.
//!
//! Clients run as independent in-process tasks on a rayon pool. Their
//! results are collected in client-id order before aggregation, and every
//! random stream is derived from the configured seeds, so a run is
//! bit-reproducible regardless of thread scheduling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{aggregate_round, AggregationKind, AggregationMode};
use crate::data::{
    append_noise_columns, generate_mixture, inject_shortcut, load_csv, partition_dirichlet,
    train_test_split, write_csv, ClientDataset, Dataset, FederationSpec, MixtureSpec,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::local::{apply_global_update, train_local, LocalConfig, LocalOutcome};
use crate::metrics::{conflict_stats, cross_eval_matrix, decompose, Decomposition, MetricsWriter, RoundMetrics};
use crate::model::{self, Architecture, ModelParams, ModelShape};
use crate::seed::derive_seed;

/// Where the federation's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(MixtureSpec),
    Csv { path: PathBuf, label_column: String },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(MixtureSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub federation: FederationSpec,
    pub architecture: Architecture,
    pub local: LocalConfig,
    pub mode: AggregationMode,
    pub rounds: usize,
    pub sampling_rate: f64,
    pub server_lr: f64,
    /// Decompose every k-th round (and the last round); 0 disables.
    pub decompose_every: usize,
    /// Seeds model initialization and client sampling.
    pub seed: u64,
    /// No files are written when absent.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            federation: FederationSpec::default(),
            architecture: Architecture::SoftmaxRegression,
            local: LocalConfig::default(),
            mode: AggregationMode::default(),
            rounds: 200,
            sampling_rate: 1.0,
            server_lr: 1.0,
            decompose_every: 5,
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    /// Sets the run seed and the federation and local-training seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.federation.seed = seed;
        self.local.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        self.local.validate()?;
        self.mode.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config("sampling_rate must be in (0, 1]".into()));
        }
        if !self.server_lr.is_finite() {
            return Err(Error::Config("server_lr must be finite".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::Config("mlp hidden width must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn decompose_round(&self, round: usize) -> bool {
        self.decompose_every > 0 && (round.is_multiple_of(self.decompose_every) || round == self.rounds)
    }
}

/// Materialized client shards plus the global held-out split.
#[derive(Debug, Clone)]
pub struct Federation {
    pub shards: Vec<ClientDataset>,
    pub test: Dataset,
    pub classes: usize,
    pub input_dim: usize,
}

impl Federation {
    pub fn model_shape(&self, architecture: Architecture) -> ModelShape {
        ModelShape::new(architecture, self.input_dim, self.classes)
    }
}

/// Generates or loads the data, splits off a stratified test set,
/// partitions the rest across clients and, if configured, injects the
/// per-client shortcut columns (pure noise on the test side).
pub fn prepare_federation(data: &DataSource, spec: &FederationSpec) -> Result<Federation> {
    spec.validate()?;
    let full = match data {
        DataSource::Synthetic(mix) => generate_mixture(mix, derive_seed(&[spec.seed, 0]))?,
        DataSource::Csv { path, label_column } => load_csv(path, label_column)?,
    };
    let classes = full.class_count();
    let (train, test) = train_test_split(&full, spec.test_fraction, derive_seed(&[spec.seed, 1]))?;
    let mut shards = partition_dirichlet(
        &train,
        spec.num_clients,
        spec.dirichlet_alpha,
        derive_seed(&[spec.seed, 2]),
    )?;
    let mut test = test;
    if let Some(rho) = spec.shortcut_strength {
        shards = inject_shortcut(&shards, classes, rho, derive_seed(&[spec.seed, 3]))?;
        test = append_noise_columns(&test, spec.num_clients, derive_seed(&[spec.seed, 4]))?;
    }
    let input_dim = test.input_dim();
    Ok(Federation {
        shards,
        test,
        classes,
        input_dim,
    })
}

/// Deterministic subset of `max(1, round(rate·m))` client ids in ascending
/// order; the whole federation when the rate is 1.
pub fn sample_clients(m: usize, rate: f64, round: usize, seed: u64) -> Vec<usize> {
    let k = ((rate * m as f64).round() as usize).clamp(1, m.max(1));
    if k >= m {
        return (0..m).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, round as u64, 0x5A]));
    let mut ids = rand::seq::index::sample(&mut rng, m, k).into_vec();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub rounds_completed: usize,
    pub metrics_path: Option<PathBuf>,
    /// Some output could not be written; metrics on disk are incomplete.
    pub persisted_partial: bool,
}

/// Everything a simulation produced, for callers that want more than the
/// summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub metrics: Vec<RoundMetrics>,
    pub final_params: ModelParams,
}

impl RunOutput {
    /// Mean of (local, |shift|, |aggregation|) over decomposed rounds.
    pub fn mean_decomposition(&self) -> Option<(f64, f64, f64)> {
        let terms: Vec<Decomposition> = self.metrics.iter().filter_map(|m| m.decomposition()).collect();
        if terms.is_empty() {
            return None;
        }
        let n = terms.len() as f64;
        let (mut l, mut s, mut a) = (0.0, 0.0, 0.0);
        for d in &terms {
            l += d.local_loss;
            s += d.dist_shift_loss();
            a += d.aggregation_loss();
        }
        Some((l / n, s / n, a / n))
    }
}

/// Prepares the federation and runs the configured simulation.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let federation = prepare_federation(&cfg.data, &cfg.federation)?;
    Ok(simulate(cfg, &federation)?.summary)
}

/// Sink that stops writing after the first I/O failure and remembers it.
struct Persist {
    writer: Option<MetricsWriter>,
    failed: bool,
}

impl Persist {
    fn attempt(&mut self, what: &str, f: impl FnOnce(&mut MetricsWriter) -> Result<()>) {
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = f(w) {
                error!("failed to write {what}: {e}; continuing without persistence");
                self.writer = None;
                self.failed = true;
            }
        }
    }
}

/// Runs the round loop over an already-prepared federation.
pub fn simulate(cfg: &RunConfig, fed: &Federation) -> Result<RunOutput> {
    cfg.validate()?;
    if fed.shards.len() != cfg.federation.num_clients {
        return Err(Error::Config(format!(
            "federation has {} shards but config expects {} clients",
            fed.shards.len(),
            cfg.federation.num_clients
        )));
    }
    let mut persist = Persist {
        writer: None,
        failed: false,
    };
    let mut metrics_path = None;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut config_file = BufWriter::new(File::create(dir.join("config.json"))?);
        serde_json::to_writer_pretty(&mut config_file, cfg)?;
        config_file.flush()?;
        let writer = MetricsWriter::create(dir)?;
        metrics_path = Some(writer.jsonl_path().to_path_buf());
        persist.writer = Some(writer);
    }

    let shape = fed.model_shape(cfg.architecture);
    let mut global = ModelParams::init(shape, derive_seed(&[cfg.seed, 0x1417]));
    let m = fed.shards.len();
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut final_accuracy = 0.0;

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let participants = sample_clients(m, cfg.sampling_rate, round, cfg.seed);
        let results: Vec<Result<LocalOutcome>> = participants
            .par_iter()
            .map(|&c| train_local(&global, &fed.shards[c], &cfg.local, round))
            .collect();
        let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;
        let grads: Vec<_> = outcomes.iter().map(|o| o.gradient.clone()).collect();

        let agg = aggregate_round(&grads, &cfg.mode)?;
        let next = apply_global_update(&global, &agg.global, cfg.server_lr)?;

        let test = model::evaluate(&next, &fed.test.features, &fed.test.labels, 0.0)?;
        let conflict = conflict_stats(&grads);
        let mut row = RoundMetrics {
            round,
            participants: participants.len(),
            local_loss: None,
            dist_shift_loss: None,
            aggregation_loss: None,
            dist_shift_signed: None,
            aggregation_signed: None,
            global_loss: None,
            test_loss: test.ce,
            test_accuracy: test.accuracy,
            mean_pairwise_cosine: conflict.mean_pairwise_cosine,
            min_pairwise_cosine: conflict.min_pairwise_cosine,
            spectrum: agg.basis.as_ref().map(|b| b.spectrum.clone()).unwrap_or_default(),
            retained_axes: match (cfg.mode.kind, &agg.basis) {
                (AggregationKind::Principal, Some(b)) => b.retained(),
                _ => 0,
            },
            orthogonal_clients: agg.orthogonal_clients,
            wall_time: 0.0,
        };

        if cfg.decompose_round(round) {
            let shards: Vec<ClientDataset> = participants.iter().map(|&c| fed.shards[c].clone()).collect();
            let locals: Vec<ModelParams> = outcomes.iter().map(|o| o.params.clone()).collect();
            let cross = cross_eval_matrix(&locals, &shards)?;
            let d = decompose(&cross, &next, &agg.weights, &shards)?;
            row.set_decomposition(&d);
        }

        row.wall_time = started.elapsed().as_secs_f64();
        persist.attempt("round metrics", |w| w.write(&row));
        info!(
            "round {round}: test accuracy {:.4}, test loss {:.4}",
            row.test_accuracy, row.test_loss
        );
        final_accuracy = row.test_accuracy;
        best_accuracy = best_accuracy.max(row.test_accuracy);
        metrics.push(row);
        global = next;
    }

    if let Some(dir) = &cfg.output_dir {
        if !persist.failed {
            if let Err(e) = write_checkpoint(dir, &global, &cfg.hash()) {
                error!("failed to write checkpoint: {e}");
                persist.failed = true;
            }
        }
    }

    debug_assert!(best_accuracy >= final_accuracy);
    Ok(RunOutput {
        summary: RunSummary {
            final_accuracy,
            best_accuracy,
            rounds_completed: cfg.rounds,
            metrics_path,
            persisted_partial: persist.failed,
        },
        metrics,
        final_params: global,
    })
}

/// One instrumented round of a [`loss_reduction_trace`]: the same global
/// model and participants, measured three ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedRound {
    pub round: usize,
    /// Plain local training, FedAvg aggregation.
    pub naive: Decomposition,
    /// Margin-controlled local training, FedAvg aggregation.
    pub margin: Decomposition,
    /// Plain local models aggregated with the principal mode.
    pub principal: Decomposition,
}

fn train_all(global: &ModelParams, shards: &[ClientDataset], cfg: &LocalConfig, round: usize) -> Result<Vec<LocalOutcome>> {
    let results: Vec<Result<LocalOutcome>> = shards.par_iter().map(|s| train_local(global, s, cfg, round)).collect();
    results.into_iter().collect()
}

fn decompose_outcomes(
    global: &ModelParams,
    outcomes: &[LocalOutcome],
    shards: &[ClientDataset],
    mode: &AggregationMode,
    server_lr: f64,
    cross: Option<&Matrix>,
) -> Result<Decomposition> {
    let grads: Vec<_> = outcomes.iter().map(|o| o.gradient.clone()).collect();
    let agg = aggregate_round(&grads, mode)?;
    let next = apply_global_update(global, &agg.global, server_lr)?;
    let owned;
    let cross = match cross {
        Some(c) => c,
        None => {
            let locals: Vec<ModelParams> = outcomes.iter().map(|o| o.params.clone()).collect();
            owned = cross_eval_matrix(&locals, shards)?;
            &owned
        }
    };
    decompose(cross, &next, &agg.weights, shards)
}

/// Follows the plain FedAvg trajectory of `cfg` (λ = 0) and, on every
/// instrumented round, measures from the same global model: local models
/// trained with margin weight `lambda`, and the plain local models
/// aggregated with `principal`. Each method is compared against the naive
/// round on identical inputs.
pub fn loss_reduction_trace(
    cfg: &RunConfig,
    fed: &Federation,
    lambda: f64,
    principal: &AggregationMode,
) -> Result<Vec<PairedRound>> {
    let mut naive_cfg = cfg.clone();
    naive_cfg.local.lambda = 0.0;
    naive_cfg.mode.kind = AggregationKind::Fedavg;
    naive_cfg.validate()?;
    principal.validate()?;
    let margin_local = LocalConfig { lambda, ..naive_cfg.local };
    margin_local.validate()?;

    let shape = fed.model_shape(cfg.architecture);
    let mut global = ModelParams::init(shape, derive_seed(&[cfg.seed, 0x1417]));
    let mut trace = Vec::new();
    for round in 1..=cfg.rounds {
        let participants = sample_clients(fed.shards.len(), cfg.sampling_rate, round, cfg.seed);
        let shards: Vec<ClientDataset> = participants.iter().map(|&c| fed.shards[c].clone()).collect();
        let naive = train_all(&global, &shards, &naive_cfg.local, round)?;
        let grads: Vec<_> = naive.iter().map(|o| o.gradient.clone()).collect();
        let next = apply_global_update(&global, &aggregate_round(&grads, &naive_cfg.mode)?.global, cfg.server_lr)?;

        if cfg.decompose_round(round) {
            let locals: Vec<ModelParams> = naive.iter().map(|o| o.params.clone()).collect();
            let cross = cross_eval_matrix(&locals, &shards)?;
            let fedavg = AggregationMode::default();
            let margin = train_all(&global, &shards, &margin_local, round)?;
            trace.push(PairedRound {
                round,
                naive: decompose_outcomes(&global, &naive, &shards, &fedavg, cfg.server_lr, Some(&cross))?,
                margin: decompose_outcomes(&global, &margin, &shards, &fedavg, cfg.server_lr, None)?,
                principal: decompose_outcomes(&global, &naive, &shards, principal, cfg.server_lr, Some(&cross))?,
            });
        }
        global = next;
    }
    Ok(trace)
}

pub const CHECKPOINT_BIN: &str = "model.bin";
pub const CHECKPOINT_JSON: &str = "model.json";
const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDLDCKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Sidecar describing a binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub classes: usize,
    pub param_count: usize,
    pub config_hash: String,
}

/// Writes `model.bin` and `model.json` into `dir`.
///
/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// [8]  magic "FEDLDCKP"
/// u32  version (1)
/// u32  architecture tag (0 softmax regression, 1 mlp)
/// u32  input_dim
/// u32  classes
/// u32  hidden width (0 for softmax regression)
/// u64  parameter count P
/// f64  × P   flat parameters in model layout order
/// [32] SHA-256 of the run configuration
/// ```
pub fn write_checkpoint(dir: &Path, params: &ModelParams, config_hash: &str) -> Result<()> {
    let shape = params.shape();
    let (tag, hidden) = match shape.architecture {
        Architecture::SoftmaxRegression => (0u32, 0u32),
        Architecture::Mlp { hidden } => (1, hidden as u32),
    };
    let hash = hex::decode(config_hash).map_err(|e| Error::Config(format!("config hash: {e}")))?;
    let mut out = BufWriter::new(File::create(dir.join(CHECKPOINT_BIN))?);
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [CHECKPOINT_VERSION, tag, shape.input_dim as u32, shape.classes as u32, hidden] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&hash)?;
    out.flush()?;

    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        architecture: shape.architecture,
        input_dim: shape.input_dim,
        classes: shape.classes,
        param_count: params.len(),
        config_hash: config_hash.to_string(),
    };
    let mut side = BufWriter::new(File::create(dir.join(CHECKPOINT_JSON))?);
    serde_json::to_writer_pretty(&mut side, &meta)?;
    side.flush()?;
    Ok(())
}

/// Reads a `model.bin` written by [`write_checkpoint`]; returns the
/// parameters and the hex config hash.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, String)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |message: &str| Error::Schema {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 36 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    if u32_at(8) != CHECKPOINT_VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let architecture = match u32_at(12) {
        0 => Architecture::SoftmaxRegression,
        1 => Architecture::Mlp {
            hidden: u32_at(24) as usize,
        },
        _ => return Err(bad("unknown architecture tag")),
    };
    let count = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")) as usize;
    let body = 36 + 8 * count;
    if bytes.len() != body + 32 {
        return Err(bad("truncated checkpoint"));
    }
    let flat = bytes[36..body]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let shape = ModelShape::new(architecture, u32_at(16) as usize, u32_at(20) as usize);
    Ok((ModelParams::from_flat(shape, flat)?, hex::encode(&bytes[body..])))
}

/// Writes each client's shard as `client_<id>.csv`, the test split as
/// `test.csv`, and a `partition.json` summary of shard sizes and label
/// histograms.
pub fn materialize_partition(fed: &Federation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    #[derive(Serialize)]
    struct ShardSummary {
        client_id: usize,
        n_samples: usize,
        label_histogram: Vec<usize>,
    }
    let mut summary = Vec::with_capacity(fed.shards.len());
    for s in &fed.shards {
        write_csv(dir.join(format!("client_{}.csv", s.client_id)), &s.data, "label")?;
        summary.push(ShardSummary {
            client_id: s.client_id,
            n_samples: s.n_samples(),
            label_histogram: s.data.class_histogram(fed.classes),
        });
    }
    write_csv(dir.join("test.csv"), &fed.test, "label")?;
    let mut out = BufWriter::new(File::create(dir.join("partition.json"))?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.flush()?;
    Ok(())
}

/// One cell of the margin × principal ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub margin: bool,
    pub principal: bool,
}

impl AblationCell {
    pub const GRID: [AblationCell; 4] = [
        AblationCell { margin: false, principal: false },
        AblationCell { margin: false, principal: true },
        AblationCell { margin: true, principal: false },
        AblationCell { margin: true, principal: true },
    ];

    pub fn name(&self) -> &'static str {
        match (self.margin, self.principal) {
            (false, false) => "fedavg",
            (false, true) => "principal",
            (true, false) => "margin",
            (true, true) => "fedld",
        }
    }

    /// `base` with λ and the aggregation kind set for this cell.
    pub fn configure(&self, base: &RunConfig, lambda: f64) -> RunConfig {
        let mut cfg = base.clone();
        cfg.local.lambda = if self.margin { lambda } else { 0.0 };
        cfg.mode.kind = if self.principal {
            AggregationKind::Principal
        } else {
            AggregationKind::Fedavg
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub name: String,
    pub lambda: f64,
    pub final_accuracy: Vec<f64>,
    pub mean_final_accuracy: f64,
    pub mean_best_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| margin | principal | cell      | mean final acc | mean best acc |")?;
        writeln!(f, "|--------|-----------|-----------|----------------|---------------|")?;
        for r in &self.rows {
            writeln!(
                f,
                "| {:<6} | {:<9} | {:<9} | {:>14.4} | {:>13.4} |",
                if r.cell.margin { "yes" } else { "no" },
                if r.cell.principal { "yes" } else { "no" },
                r.name,
                r.mean_final_accuracy,
                r.mean_best_accuracy
            )?;
        }
        Ok(())
    }
}

/// Runs the four ablation cells over `seeds`. All cells for a given seed
/// share the same federation. With an output directory, each run writes to
/// `<dir>/<cell>/seed-<s>` and the table goes to `<dir>/ablation.json`.
pub fn ablate(base: &RunConfig, lambda: f64, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut finals: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(seeds.len())).collect();
    let mut bests = vec![0.0; 4];
    for &seed in seeds {
        let seeded = base.clone().with_seed(seed);
        seeded.validate()?;
        let fed = prepare_federation(&seeded.data, &seeded.federation)?;
        for (k, cell) in AblationCell::GRID.iter().enumerate() {
            let mut cfg = cell.configure(&seeded, lambda);
            cfg.output_dir = base
                .output_dir
                .as_ref()
                .map(|d| d.join(cell.name()).join(format!("seed-{seed}")));
            let out = simulate(&cfg, &fed)?;
            finals[k].push(out.summary.final_accuracy);
            bests[k] += out.summary.best_accuracy;
        }
    }
    let n = seeds.len() as f64;
    let rows = AblationCell::GRID
        .iter()
        .zip(finals)
        .zip(bests)
        .map(|((cell, final_accuracy), best)| AblationRow {
            cell: *cell,
            name: cell.name().to_string(),
            lambda: if cell.margin { lambda } else { 0.0 },
            mean_final_accuracy: final_accuracy.iter().sum::<f64>() / n,
            final_accuracy,
            mean_best_accuracy: best / n,
        })
        .collect();
    let table = AblationTable {
        seeds: seeds.to_vec(),
        rows,
    };
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("ablation.json"))?);
        serde_json::to_writer_pretty(&mut out, &table)?;
        out.flush()?;
    }
    Ok(table)
}

/// Summary of a persisted metrics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub best_round: usize,
    pub decomposed_rounds: usize,
    pub mean_local_loss: Option<f64>,
    pub mean_dist_shift_loss: Option<f64>,
    pub mean_aggregation_loss: Option<f64>,
    pub mean_pairwise_cosine: f64,
}

pub fn summarize_metrics(rows: &[RoundMetrics]) -> Result<MetricsSummary> {
    let last = rows.last().ok_or(Error::EmptyInput("metrics file has no rounds"))?;
    let best = rows
        .iter()
        .fold(&rows[0], |b, r| if r.test_accuracy > b.test_accuracy { r } else { b });
    let decomposed: Vec<Decomposition> = rows.iter().filter_map(|r| r.decomposition()).collect();
    let mean = |f: fn(&Decomposition) -> f64| {
        (!decomposed.is_empty()).then(|| decomposed.iter().map(f).sum::<f64>() / decomposed.len() as f64)
    };
    Ok(MetricsSummary {
        rounds: rows.len(),
        final_accuracy: last.test_accuracy,
        best_accuracy: best.test_accuracy,
        best_round: best.round,
        decomposed_rounds: decomposed.len(),
        mean_local_loss: mean(|d| d.local_loss),
        mean_dist_shift_loss: mean(|d| d.dist_shift_loss()),
        mean_aggregation_loss: mean(|d| d.aggregation_loss()),
        mean_pairwise_cosine: rows.iter().map(|r| r.mean_pairwise_cosine).sum::<f64>() / rows.len() as f64,
    })
}

impl fmt::Display for MetricsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        writeln!(f, "rounds                  {}", self.rounds)?;
        writeln!(f, "final test accuracy     {:.4}", self.final_accuracy)?;
        writeln!(f, "best test accuracy      {:.4} (round {})", self.best_accuracy, self.best_round)?;
        writeln!(f, "mean pairwise cosine    {:.4}", self.mean_pairwise_cosine)?;
        writeln!(f, "decomposed rounds       {}", self.decomposed_rounds)?;
        writeln!(f, "mean local loss         {}", opt(self.mean_local_loss))?;
        writeln!(f, "mean dist-shift loss    {}", opt(self.mean_dist_shift_loss))?;
        write!(f, "mean aggregation loss   {}", opt(self.mean_aggregation_loss))
    }
}
