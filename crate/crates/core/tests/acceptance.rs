//! Exit criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::fd::{agrees, min_hidden_preactivation, numeric_grad, random_case};
use common::{abs_cos, direct_covariance_eigen, gaussian_columns, rng, uploads};
use fedld::aggregation::{
    aggregate_round, build_basis, revise_gradient, AggregationMode, Revision,
};
use fedld::data::{generate_base, ClientDataset, FederationSpec, MixtureSpec};
use fedld::linalg::{axpy, cosine, gram, sym_eigen, GramSide, Matrix, RANK_TOLERANCE};
use fedld::local::train_local;
use fedld::metrics::{METRICS_CSV, METRICS_JSONL};
use fedld::model::{evaluate, loss_and_grad, Architecture, ModelParams};
use fedld::orchestrator::{
    ablate, loss_reduction_trace, prepare_federation, simulate, DataSource, Federation, PairedRound,
};
use fedld::{LocalConfig, RunConfig};
use rand::Rng;

/// Outcome of one criterion: verdict plus a one-line measurement summary.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// The shared synthetic benchmark: four well-separated classes over ten
/// clients, trained with plain SGD (lr 0.01, batch 50, one local epoch).
fn benchmark(alpha: f64, shortcut: Option<f64>, rounds: usize) -> RunConfig {
    RunConfig {
        data: DataSource::Synthetic(MixtureSpec { classes: 4, samples: 4000, input_dim: 8, ..Default::default() }),
        federation: FederationSpec {
            num_clients: 10,
            dirichlet_alpha: alpha,
            shortcut_strength: shortcut,
            ..Default::default()
        },
        architecture: Architecture::SoftmaxRegression,
        local: LocalConfig::default(),
        rounds,
        ..Default::default()
    }
}

fn decomposition_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rounds = 0usize;
    let mut elapsed = 0.0;
    let cases = [
        (Architecture::SoftmaxRegression, AggregationMode::default(), 0.1, 1.0),
        (Architecture::SoftmaxRegression, AggregationMode::principal(), 1.0, 1.0),
        (Architecture::Mlp { hidden: 16 }, AggregationMode::principal(), 0.1, 0.5),
        (Architecture::Mlp { hidden: 16 }, AggregationMode::default(), 100.0, 1.0),
    ];
    for (seed, (architecture, mode, alpha, sampling_rate)) in cases.into_iter().enumerate() {
        let cfg = RunConfig {
            architecture,
            mode,
            sampling_rate,
            decompose_every: 1,
            local: LocalConfig { lambda: 0.03, ..Default::default() },
            ..benchmark(alpha, Some(0.9), 20)
        }
        .with_seed(seed as u64);
        let fed = match prepare_federation(&cfg.data, &cfg.federation) {
            Ok(f) => f,
            Err(e) => return verdict(false, format!("setup failed: {e}")),
        };
        let start = Instant::now();
        let out = match simulate(&cfg, &fed) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("run failed: {e}")),
        };
        elapsed += start.elapsed().as_secs_f64();
        for d in out.metrics.iter().filter_map(|m| m.decomposition()) {
            let sum = d.local_loss + d.dist_shift_signed + d.aggregation_signed;
            worst = worst.max((sum - d.global_loss).abs() / d.global_loss.abs());
            rounds += 1;
        }
    }
    verdict(
        rounds > 0 && worst <= 1e-9,
        format!(
            "max relative residual {worst:.2e} over {rounds} rounds ({:.1} ms per round incl. training)",
            1e3 * elapsed / rounds as f64
        ),
    )
}

fn bijection_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng(2);
    let (mut worst_value, mut worst_cos, mut pairs) = (0.0f64, 1.0f64, 0usize);
    for _ in 0..200 {
        let d = r.random_range(1..=20);
        let m = r.random_range(1..=5);
        let cols = gaussian_columns(&mut r, d, m);
        let g = Matrix::from_columns(&cols).expect("columns");
        let small = match sym_eigen(&gram(&g, GramSide::Right).expect("gram"), RANK_TOLERANCE) {
            Ok(p) => p,
            Err(e) => return verdict(false, format!("eigensolver failed: {e}")),
        };
        let direct = direct_covariance_eigen(&cols);
        for (z, pair) in small.iter().enumerate().filter(|(_, p)| !p.rank_deficient) {
            let (value, vector) = &direct[z];
            worst_value = worst_value.max((pair.value / m as f64 - value).abs() / value.abs());
            let mut v = vec![0.0; d];
            for (col, e) in cols.iter().zip(&pair.vector) {
                axpy(*e, col, &mut v);
            }
            worst_cos = worst_cos.min(abs_cos(&v, vector));
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_value <= 1e-8 && worst_cos >= 1.0 - 1e-8 && secs < 5.0,
        format!("{pairs} pairs: max eigenvalue rel. error {worst_value:.2e}, min |cos| 1-{:.2e}, {secs:.2} s", 1.0 - worst_cos),
    )
}

fn magnitude_preservation() -> Verdict {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let m = r.random_range(1..=10);
        let d = r.random_range(2..=40);
        let grads = uploads(&gaussian_columns(&mut r, d, m), &mut r);
        let basis = build_basis(&grads, 0.8, RANK_TOLERANCE).expect("nonzero uploads");
        for g in grads.iter().take(1000 - checked) {
            let revised = revise_gradient(g, &basis, Revision::Normalized).expect("valid basis").gradient;
            worst = worst.max((revised.norm() / g.norm() - 1.0).abs());
            checked += 1;
        }
    }
    verdict(worst <= 1e-9, format!("{checked} revisions: max |ratio - 1| {worst:.2e}"))
}

fn gradient_correctness() -> Verdict {
    let lambdas = [0.0, 0.03, 0.1];
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (seed, arch) in [Architecture::SoftmaxRegression, Architecture::Mlp { hidden: 6 }].into_iter().enumerate() {
        let mut r = rng(40 + seed as u64);
        let mut done = 0;
        while done < 100 {
            let (p, x, y) = random_case(&mut r, arch);
            if min_hidden_preactivation(&p, &x) < 1e-3 {
                continue;
            }
            let lambda = lambdas[done % 3];
            let (_, g) = loss_and_grad(&p, &x, &y, lambda).expect("valid batch");
            let num = numeric_grad(&p, |q| evaluate(q, &x, &y, lambda).expect("valid batch").total);
            for (a, n) in g.iter().zip(&num) {
                if !agrees(*a, *n) {
                    failures += 1;
                }
                if a.abs() >= 1e-8 {
                    worst = worst.max((a - n).abs() / a.abs());
                }
            }
            done += 1;
        }
    }
    verdict(
        failures == 0,
        format!("200 cases (100 per architecture): {failures} coordinate mismatches, max rel. error {worst:.2e}"),
    )
}

#[derive(Default, Clone, Copy)]
struct SweepPoint {
    naive_shift: f64,
    naive_aggregation: f64,
    margin_shift: f64,
    principal_aggregation: f64,
}

fn sweep_point(trace: &[PairedRound]) -> SweepPoint {
    let n = trace.len() as f64;
    let mean = |f: fn(&PairedRound) -> f64| trace.iter().map(f).sum::<f64>() / n;
    SweepPoint {
        naive_shift: mean(|r| r.naive.dist_shift_loss()),
        naive_aggregation: mean(|r| r.naive.aggregation_loss()),
        margin_shift: mean(|r| r.margin.dist_shift_loss()),
        principal_aggregation: mean(|r| r.principal.aggregation_loss()),
    }
}

fn heterogeneity_sweep() -> Vec<(&'static str, Verdict)> {
    let start = Instant::now();
    let alphas = [100.0, 1.0, 0.1];
    let seeds = [0u64, 1, 2];
    let mut points = Vec::new();
    let mut per_seed = Vec::new();
    for alpha in alphas {
        let mut acc = SweepPoint::default();
        for &seed in &seeds {
            let cfg = benchmark(alpha, None, 50).with_seed(seed);
            let fed = prepare_federation(&cfg.data, &cfg.federation).expect("benchmark federation");
            let p = sweep_point(&loss_reduction_trace(&cfg, &fed, 0.03, &AggregationMode::principal()).expect("trace"));
            if alpha == 0.1 {
                per_seed.push(p);
            }
            acc.naive_shift += p.naive_shift / seeds.len() as f64;
            acc.naive_aggregation += p.naive_aggregation / seeds.len() as f64;
            acc.margin_shift += p.margin_shift / seeds.len() as f64;
            acc.principal_aggregation += p.principal_aggregation / seeds.len() as f64;
        }
        points.push(acc);
    }
    let secs = start.elapsed().as_secs_f64();
    let nondecreasing = |f: fn(&SweepPoint) -> f64| points.windows(2).all(|w| f(&w[0]) <= f(&w[1]));
    let series = |f: fn(&SweepPoint) -> f64| points.iter().map(|p| format!("{:.5}", f(p))).collect::<Vec<_>>().join(" → ");
    let last = points[2];
    vec![
        (
            "5a",
            verdict(
                nondecreasing(|p| p.naive_shift) && nondecreasing(|p| p.naive_aggregation),
                format!(
                    "FedAvg over α=100→1→0.1: shift {}; aggregation {} ({secs:.0} s for the sweep)",
                    series(|p| p.naive_shift),
                    series(|p| p.naive_aggregation)
                ),
            ),
        ),
        (
            "5b",
            verdict(
                last.margin_shift < last.naive_shift,
                format!("α=0.1 shift: λ=0.03 {:.5} vs λ=0 {:.5}", last.margin_shift, last.naive_shift),
            ),
        ),
        (
            "5c",
            verdict(
                last.principal_aggregation < last.naive_aggregation,
                format!(
                    "α=0.1 aggregation: principal {:.5} vs FedAvg {:.5} (per seed: {})",
                    last.principal_aggregation,
                    last.naive_aggregation,
                    per_seed
                        .iter()
                        .map(|p| format!("{:.5}/{:.5}", p.principal_aggregation, p.naive_aggregation))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ),
        ),
    ]
}

fn ablation_ordering() -> Verdict {
    let start = Instant::now();
    let cfg = benchmark(0.1, Some(0.9), 100);
    let table = match ablate(&cfg, 0.03, &[0, 1, 2, 3, 4]) {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("ablation failed: {e}")),
    };
    let acc = |name| table.row(name).expect("grid cell").mean_final_accuracy;
    let full = acc("fedld");
    let wins = ["fedavg", "margin", "principal"].iter().filter(|c| full >= acc(c)).count();
    verdict(
        full >= acc("fedavg") && wins >= 2,
        format!(
            "seed-mean final accuracy: fedld {full:.4}, fedavg {:.4}, margin {:.4}, principal {:.4}; fedld wins {wins}/3 ({:.0} s)",
            acc("fedavg"),
            acc("margin"),
            acc("principal"),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn fixed_points() -> Verdict {
    let mut single = benchmark(1.0, Some(0.9), 30).with_seed(5);
    single.federation.num_clients = 1;
    let fed = prepare_federation(&single.data, &single.federation).expect("federation");
    let fedavg = simulate(&single, &fed).expect("fedavg run");
    let principal = simulate(&RunConfig { mode: AggregationMode::principal(), ..single.clone() }, &fed).expect("principal run");
    let bit_match = fedavg.final_params == principal.final_params
        && fedavg.metrics.iter().zip(&principal.metrics).all(|(a, b)| a.test_loss.to_bits() == b.test_loss.to_bits());

    let data = generate_base(4, 400, 8, 6).expect("data");
    let shards: Vec<_> = (0..5)
        .map(|id| ClientDataset { client_id: id, data: data.clone(), source_indices: (0..400).collect() })
        .collect();
    let fed = Federation { shards, test: data, classes: 4, input_dim: 8 };
    // Full-batch steps: identical shards give identical uploads.
    let mut homo = benchmark(1.0, None, 20).with_seed(6);
    homo.federation.num_clients = 5;
    homo.local.batch_size = 400;
    homo.mode = AggregationMode::principal();
    let out = simulate(&homo, &fed).expect("homogeneous run");
    let min_cos = out.metrics.iter().map(|m| m.mean_pairwise_cosine).fold(f64::INFINITY, f64::min);

    let mut global = ModelParams::init(fed.model_shape(homo.architecture), 7);
    let mut worst_parallel: f64 = 0.0;
    for round in 1..=5 {
        let outcomes: Vec<_> = fed.shards.iter().map(|s| train_local(&global, s, &homo.local, round).expect("train")).collect();
        let grads: Vec<_> = outcomes.iter().map(|o| o.gradient.clone()).collect();
        let raw = aggregate_round(&grads, &AggregationMode::default()).expect("fedavg").global;
        let revised = aggregate_round(&grads, &homo.mode).expect("principal").global;
        worst_parallel = worst_parallel.max(1.0 - cosine(&raw.delta, &revised.delta).unwrap_or(0.0));
        global = fedld::local::apply_global_update(&global, &raw, 1.0).expect("update");
    }
    verdict(
        bit_match && (min_cos - 1.0).abs() <= 1e-9 && worst_parallel <= 1e-9,
        format!(
            "m=1 principal bit-matches FedAvg: {bit_match}; homogeneous min cosine {min_cos:.12}; revised vs raw 1-cos {worst_parallel:.1e}"
        ),
    )
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    for dir in &dirs {
        let cfg = RunConfig {
            mode: AggregationMode::principal(),
            local: LocalConfig { lambda: 0.03, ..Default::default() },
            output_dir: Some(dir.path().to_path_buf()),
            ..benchmark(0.1, Some(0.9), 15)
        }
        .with_seed(8);
        if let Err(e) = fedld::orchestrator::run(&cfg) {
            return verdict(false, format!("run failed: {e}"));
        }
    }
    let same: Vec<_> = [METRICS_JSONL, METRICS_CSV]
        .iter()
        .map(|name| {
            let a = std::fs::read(dirs[0].path().join(name)).expect("metrics written");
            let b = std::fs::read(dirs[1].path().join(name)).expect("metrics written");
            (name, a.len(), a == b)
        })
        .collect();
    verdict(
        same.iter().all(|s| s.2),
        same.iter().map(|(n, len, eq)| format!("{n} ({len} B) identical: {eq}")).collect::<Vec<_>>().join("; "),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, &str, Verdict)> = vec![
        ("1", "decomposition identity", decomposition_identity()),
        ("2", "small-side eigen bijection", bijection_oracle()),
        ("3", "revision magnitude preservation", magnitude_preservation()),
        ("4", "loss gradients vs finite differences", gradient_correctness()),
    ];
    for (id, v) in heterogeneity_sweep() {
        let name = match id {
            "5a" => "heterogeneity raises shift and aggregation loss",
            "5b" => "margin control lowers shift loss",
            _ => "principal aggregation lowers aggregation loss",
        };
        results.push((id, name, v));
    }
    results.push(("6", "ablation ordering", ablation_ordering()));
    results.push(("7", "fixed points", fixed_points()));
    results.push(("8", "determinism", determinism()));

    let failed = results.iter().filter(|r| !r.2.pass).count();
    for (id, name, v) in &results {
        println!("[{}] {id:<2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
