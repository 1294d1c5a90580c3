//! Server aggregation of conflicting uploads, with and without principal
//! revision.

use fedld::aggregation::{aggregate_round, AggregationMode, Revision};
use fedld::linalg::cosine;
use fedld::metrics::conflict_stats;
use fedld::FlatGradient;

fn main() -> fedld::Result<()> {
    // Two clusters of clients pulling in partly opposite directions.
    let uploads = vec![
        FlatGradient::client(0, 120, vec![1.0, 0.2, 0.0, 0.1]),
        FlatGradient::client(1, 80, vec![0.9, 0.3, 0.1, -0.1]),
        FlatGradient::client(2, 100, vec![-0.6, 0.8, 0.0, 0.2]),
        FlatGradient::client(3, 60, vec![-0.5, 0.9, -0.2, 0.0]),
        FlatGradient::client(4, 40, vec![0.1, 0.1, 1.0, 0.0]),
    ];
    let before = conflict_stats(&uploads);
    println!(
        "uploads: mean pairwise cosine {:.3}, min {:.3}",
        before.mean_pairwise_cosine, before.min_pairwise_cosine
    );

    let fedavg = aggregate_round(&uploads, &AggregationMode::default())?;
    let basis = fedavg.basis.as_ref().expect("nonzero uploads");
    println!("spectrum {:?}, retained axes {}", basis.spectrum, basis.retained());
    println!("fedavg     {:?}", fedavg.global.delta);

    for revision in [Revision::Normalized, Revision::Literal] {
        let mode = AggregationMode { revision, ..AggregationMode::principal() };
        let out = aggregate_round(&uploads, &mode)?;
        let after = conflict_stats(&out.revised);
        println!(
            "{revision:?}: global {:?}\n  cos to fedavg {:.3}, revised mean pairwise cosine {:.3}",
            out.global.delta,
            cosine(&out.global.delta, &fedavg.global.delta).unwrap_or(0.0),
            after.mean_pairwise_cosine
        );
    }
    Ok(())
}
