//! Effect of the margin penalty on logit norms during local training.
//!
//! One client is trained from the same starting point with several λ; the
//! penalty term ln(1 + ‖f(x)‖²) shrinks as λ grows while accuracy holds.

use fedld::data::{generate_base, partition_dirichlet};
use fedld::local::{train_local, LocalConfig};
use fedld::model::{evaluate, Architecture, ModelParams, ModelShape};

fn main() -> fedld::Result<()> {
    let data = generate_base(4, 2000, 8, 3)?;
    let shard = partition_dirichlet(&data, 4, 0.5, 4)?.remove(0);
    let shape = ModelShape::new(Architecture::Mlp { hidden: 32 }, 8, 4);
    let start = ModelParams::init(shape, 5);

    println!("{:>6} {:>8} {:>10} {:>9}", "lambda", "ce", "log-norm", "accuracy");
    for lambda in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let cfg = LocalConfig { learning_rate: 0.05, local_epochs: 20, lambda, ..Default::default() };
        let out = train_local(&start, &shard, &cfg, 1)?;
        let r = evaluate(&out.params, &data.features, &data.labels, 0.0)?;
        println!("{lambda:>6} {:>8.4} {:>10.4} {:>9.4}", r.ce, r.margin_penalty, r.accuracy);
    }
    Ok(())
}
