//! Server-side aggregation of client pseudo-gradients.
//!
//! Two modes are available. `FedAvg` takes the sample-weighted mean of the
//! raw uploads. `Principal` runs the principal-gradient pipeline:
//!
//! 1. **Construct.** Stack the uploads as columns of `G` (d×m) and
//!    eigendecompose the small Gram matrix `GᵀG` (m×m). Each eigenvector
//!    `e_z` maps to a principal direction `v_z = G e_z` of `(1/m)GGᵀ`,
//!    whose eigenvalue is `μ_z / m`.
//! 2. **Calibrate and revise.** Flip each `v_z` so that `⟨v_z, ĝ⟩ ≥ 0`,
//!    where `ĝ` is the plain mean upload; keep the top `L` axes; re-express
//!    every upload as an eigenvalue-weighted sum of its projections onto
//!    those axes, then rescale it back to its original length.
//! 3. **Aggregate.** Sample-weighted mean of the revised uploads.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, gram_of_vectors, norm, sym_eigen, RANK_TOLERANCE};
use crate::local::FlatGradient;

/// Default fraction of above-tolerance principal axes kept per round.
pub const DEFAULT_TOP_FRACTION: f64 = 0.8;
/// Projections shorter than this fraction of ‖g‖ are skipped during revision.
pub const PROJECTION_SKIP: f64 = 1e-12;
/// Aggregation weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    #[default]
    Fedavg,
    Principal,
}

/// How the projections onto the principal axes are recombined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Revision {
    /// Eigenvalue-proportional weights, then one rescale to ‖g‖.
    #[default]
    Normalized,
    /// Each projection rescaled to ‖g‖ and summed with unit weights.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationMode {
    pub kind: AggregationKind,
    pub revision: Revision,
    pub top_fraction: f64,
}

impl Default for AggregationMode {
    fn default() -> Self {
        Self {
            kind: AggregationKind::Fedavg,
            revision: Revision::Normalized,
            top_fraction: DEFAULT_TOP_FRACTION,
        }
    }
}

impl AggregationMode {
    pub fn principal() -> Self {
        Self {
            kind: AggregationKind::Principal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::Config("top_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Calibrated principal axes for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalBasis {
    /// Retained unit axes, in descending eigenvalue order.
    pub axes: Vec<Vec<f64>>,
    /// Eigenvalues of `(1/m)GGᵀ` for the retained axes.
    pub eigenvalues: Vec<f64>,
    /// All m eigenvalues of `(1/m)GGᵀ` from the small-side solve, descending,
    /// including the rank-deficient tail.
    pub spectrum: Vec<f64>,
    /// Mean upload `ĝ`, used for calibration.
    pub reference: Vec<f64>,
    /// Number of uploads the basis was built from.
    pub source_count: usize,
    /// Number of above-tolerance eigenvalues.
    pub effective_rank: usize,
}

impl PrincipalBasis {
    /// Number of retained axes (L).
    pub fn retained(&self) -> usize {
        self.axes.len()
    }
}

/// Flips `v` so that it points along `g_hat`. A zero inner product keeps `v`.
pub fn calibrate(v: &[f64], g_hat: &[f64]) -> Vec<f64> {
    if dot(v, g_hat) >= 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| -x).collect()
    }
}

/// `L = max(1, ⌊top_fraction · m_effective⌋)`, capped at `m_effective`.
pub fn retained_axes(top_fraction: f64, effective_rank: usize) -> usize {
    // The small epsilon keeps products such as 0.8·10 from flooring to 7.
    let l = (top_fraction * effective_rank as f64 + 1e-9).floor() as usize;
    l.clamp(1, effective_rank.max(1))
}

fn check_dims(grads: &[FlatGradient]) -> Result<usize> {
    let first = grads.first().ok_or(Error::EmptyInput("no gradients"))?;
    let d = first.len();
    if let Some(bad) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::Shape(format!(
            "gradient of length {} among gradients of length {d}",
            bad.len()
        )));
    }
    Ok(d)
}

/// Builds the calibrated principal basis from one round's uploads.
///
/// `tol` is the relative threshold below which eigenvalues of `GᵀG` count
/// as null and are dropped before the top-`L` selection.
pub fn build_basis(grads: &[FlatGradient], top_fraction: f64, tol: f64) -> Result<PrincipalBasis> {
    let d = check_dims(grads)?;
    let m = grads.len();
    let columns: Vec<&[f64]> = grads.iter().map(|g| g.delta.as_slice()).collect();
    let small = gram_of_vectors(&columns);
    if small.max_abs() == 0.0 {
        return Err(Error::DegenerateRound);
    }
    let pairs = sym_eigen(&small, tol)?;
    let inv_m = 1.0 / m as f64;
    let spectrum: Vec<f64> = pairs.iter().map(|p| p.value * inv_m).collect();

    let mut reference = vec![0.0; d];
    for g in &columns {
        axpy(inv_m, g, &mut reference);
    }

    let kept: Vec<_> = pairs.iter().filter(|p| !p.rank_deficient).collect();
    let effective_rank = kept.len();
    let l = retained_axes(top_fraction, effective_rank);

    let mut axes = Vec::with_capacity(l);
    let mut eigenvalues = Vec::with_capacity(l);
    for pair in kept.into_iter().take(l) {
        // v = G e
        let mut v = vec![0.0; d];
        for (col, e) in columns.iter().zip(&pair.vector) {
            axpy(*e, col, &mut v);
        }
        let len = norm(&v);
        if len == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        axes.push(calibrate(&v, &reference));
        eigenvalues.push(pair.value * inv_m);
    }
    if axes.is_empty() {
        return Err(Error::DegenerateRound);
    }

    Ok(PrincipalBasis {
        axes,
        eigenvalues,
        spectrum,
        reference,
        source_count: m,
        effective_rank,
    })
}

/// Result of revising one upload.
#[derive(Debug, Clone, PartialEq)]
pub struct Revised {
    pub gradient: FlatGradient,
    /// The upload was orthogonal to every retained axis and passed through
    /// unchanged.
    pub orthogonal_fallback: bool,
}

/// Re-expresses `g` in the principal coordinate system with the length
/// correction applied.
pub fn revise_gradient(g: &FlatGradient, basis: &PrincipalBasis, revision: Revision) -> Result<Revised> {
    let d = g.len();
    if let Some(axis) = basis.axes.first() {
        if axis.len() != d {
            return Err(Error::Shape(format!(
                "gradient of length {d} against basis of dimension {}",
                axis.len()
            )));
        }
    }
    let passthrough = |orthogonal_fallback| Revised {
        gradient: g.clone(),
        orthogonal_fallback,
    };

    // Rank-one fixed point: the only axis is the single upload's own
    // direction, so its revision is itself.
    if basis.source_count == 1 && basis.reference == g.delta {
        return Ok(passthrough(false));
    }
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return Ok(passthrough(false));
    }

    let weight_total: f64 = basis.eigenvalues.iter().sum();
    let mut s = vec![0.0; d];
    for (axis, lambda) in basis.axes.iter().zip(&basis.eigenvalues) {
        let proj = linalg::project(&g.delta, axis)?;
        let proj_norm = norm(&proj);
        if proj_norm < PROJECTION_SKIP * g_norm {
            continue;
        }
        let coeff = match revision {
            Revision::Normalized => lambda / weight_total,
            // λ/|λ| = 1 for λ > 0; each term has length ‖g‖.
            Revision::Literal => g_norm / proj_norm,
        };
        axpy(coeff, &proj, &mut s);
    }

    let s_norm = norm(&s);
    if s_norm < PROJECTION_SKIP * g_norm {
        warn!(
            "client {:?}: upload is orthogonal to all retained principal axes; using it unrevised",
            g.client_id
        );
        return Ok(passthrough(true));
    }
    let delta = match revision {
        Revision::Normalized => linalg::scale(g_norm / s_norm, &s),
        Revision::Literal => s,
    };
    Ok(Revised {
        gradient: FlatGradient {
            delta,
            client_id: g.client_id,
            n_samples: g.n_samples,
        },
        orthogonal_fallback: false,
    })
}

/// `n_i / n` over the given uploads.
pub fn sample_weights(grads: &[FlatGradient]) -> Result<Vec<f64>> {
    let total: usize = grads.iter().map(|g| g.n_samples).sum();
    if total == 0 {
        return Err(Error::Config("aggregation weights: total sample count is zero".into()));
    }
    Ok(grads
        .iter()
        .map(|g| g.n_samples as f64 / total as f64)
        .collect())
}

/// `ḡ = Σ wᵢ gᵢ`
pub fn aggregate(grads: &[FlatGradient], weights: &[f64]) -> Result<FlatGradient> {
    let d = check_dims(grads)?;
    if weights.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} gradients",
            weights.len(),
            grads.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if sum.is_nan() || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Config(format!("aggregation weights sum to {sum}, not 1")));
    }
    let mut out = vec![0.0; d];
    for (g, w) in grads.iter().zip(weights) {
        axpy(*w, &g.delta, &mut out);
    }
    Ok(FlatGradient {
        delta: out,
        client_id: None,
        n_samples: grads.iter().map(|g| g.n_samples).sum(),
    })
}

/// Everything the server produced in one round.
#[derive(Debug, Clone)]
pub struct RoundAggregate {
    pub global: FlatGradient,
    /// Present whenever the uploads were not all zero, in either mode; in
    /// FedAvg mode it is computed for instrumentation only.
    pub basis: Option<PrincipalBasis>,
    /// Revised uploads (principal mode) or the raw uploads (FedAvg).
    pub revised: Vec<FlatGradient>,
    pub weights: Vec<f64>,
    pub orthogonal_clients: usize,
    /// Principal mode fell back to FedAvg because every upload was zero.
    pub degenerate: bool,
}

/// Runs one round of server aggregation under `mode`.
pub fn aggregate_round(grads: &[FlatGradient], mode: &AggregationMode) -> Result<RoundAggregate> {
    mode.validate()?;
    check_dims(grads)?;
    let weights = sample_weights(grads)?;
    let basis = match build_basis(grads, mode.top_fraction, RANK_TOLERANCE) {
        Ok(b) => Some(b),
        Err(Error::DegenerateRound) => None,
        Err(e) => return Err(e),
    };

    let fedavg = |basis, degenerate| -> Result<RoundAggregate> {
        Ok(RoundAggregate {
            global: aggregate(grads, &weights)?,
            basis,
            revised: grads.to_vec(),
            weights: weights.clone(),
            orthogonal_clients: 0,
            degenerate,
        })
    };

    match (mode.kind, basis) {
        (AggregationKind::Fedavg, basis) => fedavg(basis, false),
        (AggregationKind::Principal, None) => {
            warn!("degenerate round: all uploads are zero; falling back to FedAvg");
            fedavg(None, true)
        }
        (AggregationKind::Principal, Some(basis)) => {
            let mut revised = Vec::with_capacity(grads.len());
            let mut orthogonal = 0;
            for g in grads {
                let r = revise_gradient(g, &basis, mode.revision)?;
                orthogonal += r.orthogonal_fallback as usize;
                revised.push(r.gradient);
            }
            Ok(RoundAggregate {
                global: aggregate(&revised, &weights)?,
                basis: Some(basis),
                revised,
                weights,
                orthogonal_clients: orthogonal,
                degenerate: false,
            })
        }
    }
}
