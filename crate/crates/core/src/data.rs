//! Synthetic data, label-skewed client partitioning, shortcut features and
//! CSV ingestion.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed::derive_seed;

/// Features and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// `max(label) + 1`, or 0 for an empty dataset.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// One client's shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
    /// Row indices into the partitioned source dataset.
    pub source_indices: Vec<usize>,
}

impl ClientDataset {
    pub fn n_samples(&self) -> usize {
        self.data.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.data.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.data.labels
    }
}

/// How the federation is carved out of the source data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationSpec {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    /// Probability that a client's own shortcut column carries the label
    /// signal. `None` disables shortcut columns entirely.
    pub shortcut_strength: Option<f64>,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for FederationSpec {
    fn default() -> Self {
        Self {
            num_clients: 10,
            dirichlet_alpha: 1.0,
            shortcut_strength: None,
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

impl FederationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::Config("dirichlet_alpha must be > 0".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        if let Some(rho) = self.shortcut_strength {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config("shortcut_strength must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub classes: usize,
    pub samples: usize,
    pub input_dim: usize,
    /// Within-class standard deviation.
    pub sigma: f64,
    /// Minimum pairwise centre distance, in units of `sigma`.
    pub separation: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples: 4000,
            input_dim: 8,
            sigma: 1.0,
            separation: 5.0,
        }
    }
}

/// Gaussian-mixture classification data with the default spread and
/// centre separation. Labels are balanced and rows are shuffled.
pub fn generate_base(classes: usize, samples: usize, input_dim: usize, seed: u64) -> Result<Dataset> {
    generate_mixture(
        &MixtureSpec {
            classes,
            samples,
            input_dim,
            ..MixtureSpec::default()
        },
        seed,
    )
}

pub fn generate_mixture(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    let MixtureSpec {
        classes,
        samples,
        input_dim,
        sigma,
        separation,
    } = *spec;
    if classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be >= 1".into()));
    }
    if samples < classes {
        return Err(Error::InsufficientSamples {
            needed: classes,
            got: samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random centres, rescaled so the closest pair is exactly
    // `separation · sigma` apart.
    let mut centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..classes {
        for j in (i + 1)..classes {
            let d: f64 = centres[i]
                .iter()
                .zip(&centres[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let factor = separation * sigma / min_dist;
    for c in &mut centres {
        c.iter_mut().for_each(|v| *v *= factor);
    }

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(samples * input_dim);
    for &y in &labels {
        for c in &centres[y][..input_dim] {
            data.push(c + noise.sample(&mut rng));
        }
    }
    Dataset::new(Matrix::from_vec(samples, input_dim, data)?, labels)
}

/// Stratified train/test split: each class contributes
/// `round(test_fraction · n_c)` rows to the test side.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test_fraction must be in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..data.class_count() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: data.len(),
        });
    }
    Ok((data.subset(&train), data.subset(&test)))
}

/// Draws one Dirichlet(α·1) vector of length `m` via normalized Gammas.
fn dirichlet_draw(rng: &mut ChaCha8Rng, alpha: f64, m: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every Gamma draw underflowed (tiny α): put all mass on one client.
        let k = rng.random_range(0..m);
        draws.iter_mut().enumerate().for_each(|(i, v)| *v = (i == k) as u8 as f64);
    }
    Ok(draws)
}

/// Label-skewed partition: for each class, the split of its samples across
/// the `m` clients follows a Dirichlet(α) draw. Shards are disjoint, cover
/// the input exactly, and keep source row order. Empty shards are repaired
/// by moving one sample from the currently largest shard.
pub fn partition_dirichlet(data: &Dataset, m: usize, alpha: f64, seed: u64) -> Result<Vec<ClientDataset>> {
    if m == 0 {
        return Err(Error::Config("num_clients must be >= 1".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Config("dirichlet_alpha must be > 0".into()));
    }
    if data.len() < m {
        return Err(Error::InsufficientSamples {
            needed: m,
            got: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); m];
    for c in 0..data.class_count() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let props = dirichlet_draw(&mut rng, alpha, m)?;
        let n_c = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (k, p) in props.iter().enumerate() {
            cum += p;
            let end = if k + 1 == m {
                n_c
            } else {
                ((cum * n_c as f64) as usize).clamp(start, n_c)
            };
            assignment[k].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    while let Some(empty) = assignment.iter().position(Vec::is_empty) {
        let largest = (0..m)
            .max_by_key(|&k| (assignment[k].len(), std::cmp::Reverse(k)))
            .expect("m >= 1");
        let moved = assignment[largest].pop().expect("largest shard is nonempty");
        assignment[empty].push(moved);
    }

    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(client_id, mut idx)| {
            idx.sort_unstable();
            ClientDataset {
                client_id,
                data: data.subset(&idx),
                source_indices: idx,
            }
        })
        .collect())
}

/// Standard deviation of the noise added to an active shortcut signal.
pub const SHORTCUT_SIGNAL_STD: f64 = 0.25;

/// Appends one shortcut column per client. On client `i`, column `i` holds
/// `±1 + N(0, 0.25²)` (sign from `label < C/2`) with probability `rho` and
/// `N(0, 1)` otherwise; every other column is `N(0, 1)`. Original feature
/// columns are left untouched.
pub fn inject_shortcut(
    shards: &[ClientDataset],
    classes: usize,
    rho: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config("shortcut strength must be in [0, 1]".into()));
    }
    let m = shards.len();
    let signal_noise =
        Normal::new(0.0, SHORTCUT_SIGNAL_STD).map_err(|e| Error::Config(e.to_string()))?;
    shards
        .iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, shard.client_id as u64]));
            let n = shard.n_samples();
            let mut extra = Matrix::zeros(n, m);
            for (r, &y) in shard.labels().iter().enumerate() {
                for col in 0..m {
                    let v = if col == shard.client_id && rng.random_bool(rho) {
                        let sign = if 2 * y < classes { 1.0 } else { -1.0 };
                        sign + signal_noise.sample(&mut rng)
                    } else {
                        rng.sample(StandardNormal)
                    };
                    extra.set(r, col, v);
                }
            }
            Ok(ClientDataset {
                client_id: shard.client_id,
                data: Dataset::new(shard.features().hstack(&extra)?, shard.data.labels.clone())?,
                source_indices: shard.source_indices.clone(),
            })
        })
        .collect()
}

/// Appends `count` pure-noise `N(0, 1)` columns (used for the global test
/// split, where shortcut columns carry no signal).
pub fn append_noise_columns(data: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = Matrix::from_vec(
        data.len(),
        count,
        (0..data.len() * count).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    Dataset::new(data.features.hstack(&extra)?, data.labels.clone())
}

/// Reads a headered CSV. Every column except `label_column` is a numeric
/// feature; `label_column` holds non-negative integer labels.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing label column {label_column:?}"),
        })?;
    let n_features = headers.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let field = field.trim();
            if k == label_idx {
                let y = field
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("label {field:?} is not a non-negative integer")))?;
                labels.push(y);
            } else {
                let v = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("feature {field:?} is not a finite number")))?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Dataset::new(Matrix::from_vec(labels.len(), n_features, features)?, labels)
}

/// Writes `x0,x1,…,<label_column>`. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, label_column: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.input_dim())
        .map(|k| format!("x{k}"))
        .chain(std::iter::once(label_column.to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (i, y) in data.labels.iter().enumerate() {
        for v in data.features.row(i) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{y}")?;
    }
    out.flush()?;
    Ok(())
}
