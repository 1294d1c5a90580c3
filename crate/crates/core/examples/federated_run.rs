//! A full run with persisted metrics and checkpoint, then a summary read
//! back from disk.

use fedld::aggregation::AggregationMode;
use fedld::data::FederationSpec;
use fedld::local::LocalConfig;
use fedld::metrics::{read_metrics, METRICS_JSONL};
use fedld::orchestrator::{read_checkpoint, run, summarize_metrics, CHECKPOINT_BIN};
use fedld::RunConfig;

fn main() -> fedld::Result<()> {
    let dir = std::env::temp_dir().join("fedld-federated-run");
    let cfg = RunConfig {
        federation: FederationSpec { dirichlet_alpha: 0.3, shortcut_strength: Some(0.9), ..Default::default() },
        local: LocalConfig { lambda: 0.03, ..Default::default() },
        mode: AggregationMode::principal(),
        rounds: 40,
        sampling_rate: 0.5,
        output_dir: Some(dir.clone()),
        ..Default::default()
    }
    .with_seed(11);
    let summary = run(&cfg)?;
    println!("final accuracy {:.4}, best {:.4}", summary.final_accuracy, summary.best_accuracy);

    let rows = read_metrics(dir.join(METRICS_JSONL))?;
    println!("{:#?}", summarize_metrics(&rows)?);
    let (params, hash) = read_checkpoint(dir.join(CHECKPOINT_BIN))?;
    println!("checkpoint: {} parameters, config {}", params.len(), &hash[..12]);
    println!("outputs in {}", dir.display());
    Ok(())
}
