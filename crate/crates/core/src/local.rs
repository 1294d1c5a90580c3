//! Client-side local training and the server's global update.
//!
//! A client runs `local_epochs` of shuffled mini-batch SGD on its shard,
//! minimizing the margin-controlled loss (plus an optional FedProx term),
//! and uploads the accumulated parameter delta `w_global − w_local` as its
//! pseudo-gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy};
use crate::model::{self, LossReport, ModelParams};
use crate::seed::derive_seed;

/// FedProx μ used when the proximal baseline is selected without an explicit value.
pub const DEFAULT_PROX_MU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Weight of the `ln(1 + ‖f(x)‖²)` margin penalty.
    pub lambda: f64,
    /// FedProx proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
    pub seed: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 50,
            local_epochs: 1,
            lambda: 0.0,
            prox_mu: 0.0,
            seed: 0,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::Config("prox_mu must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A flattened update vector. Client uploads carry their id; the server's
/// aggregate has `client_id: None` and `n_samples` equal to the round total.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGradient {
    pub delta: Vec<f64>,
    pub client_id: Option<usize>,
    pub n_samples: usize,
}

impl FlatGradient {
    pub fn client(client_id: usize, n_samples: usize, delta: Vec<f64>) -> Self {
        Self {
            delta,
            client_id: Some(client_id),
            n_samples,
        }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.delta)
    }
}

/// What a client sends back after a round of local work.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub gradient: FlatGradient,
    /// Loss accumulated over the last epoch's mini-batches.
    pub report: LossReport,
    pub params: ModelParams,
}

/// Local SGD for one client in one round. The shuffle seed is derived from
/// `(cfg.seed, round, client_id)` so results do not depend on scheduling.
pub fn train_local(
    global: &ModelParams,
    shard: &ClientDataset,
    cfg: &LocalConfig,
    round: usize,
) -> Result<LocalOutcome> {
    cfg.validate()?;
    let n = shard.n_samples();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let diverged = || Error::Divergence {
        client_id: shard.client_id,
        round,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        cfg.seed,
        round as u64,
        shard.client_id as u64,
    ]));
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = None;

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        let (mut ce, mut margin, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (report, mut grad) = model::loss_and_grad_rows(
                &params,
                shard.features(),
                shard.labels(),
                batch,
                cfg.lambda,
            )?;
            if !report.total.is_finite() {
                return Err(diverged());
            }
            if cfg.prox_mu > 0.0 {
                // ∇ (μ/2)‖w − w_g‖² = μ (w − w_g)
                for ((g, w), wg) in grad.iter_mut().zip(params.flat()).zip(global.flat()) {
                    *g += cfg.prox_mu * (w - wg);
                }
            }
            axpy(-cfg.learning_rate, &grad, params.flat_mut());
            let b = batch.len() as f64;
            ce += report.ce * b;
            margin += report.margin_penalty * b;
            correct += report.correct;
        }
        let nf = n as f64;
        let (ce, margin) = (ce / nf, margin / nf);
        last = Some(LossReport {
            ce,
            margin_penalty: margin,
            total: ce + cfg.lambda * margin,
            accuracy: correct as f64 / nf,
            correct,
            samples: n,
        });
    }

    if !linalg::is_finite(params.flat()) {
        return Err(diverged());
    }
    let delta = linalg::sub(global.flat(), params.flat());
    Ok(LocalOutcome {
        gradient: FlatGradient::client(shard.client_id, n, delta),
        report: last.expect("local_epochs >= 1"),
        params,
    })
}

/// `w − server_lr · ḡ`
pub fn apply_global_update(global: &ModelParams, g_bar: &FlatGradient, server_lr: f64) -> Result<ModelParams> {
    if g_bar.len() != global.len() {
        return Err(Error::Shape(format!(
            "global update of length {} for {} parameters",
            g_bar.len(),
            global.len()
        )));
    }
    let mut next = global.clone();
    if server_lr != 0.0 {
        axpy(-server_lr, &g_bar.delta, next.flat_mut());
    }
    Ok(next)
}
