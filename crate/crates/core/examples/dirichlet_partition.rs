//! Label skew from Dirichlet partitioning at three concentration levels.

use fedld::data::{generate_base, partition_dirichlet};

fn main() -> fedld::Result<()> {
    let classes = 4;
    let data = generate_base(classes, 4000, 8, 0)?;
    for alpha in [100.0, 1.0, 0.1] {
        println!("alpha = {alpha}");
        for shard in partition_dirichlet(&data, 10, alpha, 7)? {
            let hist = shard.data.class_histogram(classes);
            let cells: Vec<String> = hist.iter().map(|c| format!("{c:>4}")).collect();
            println!("  client {:>2}: {}  (n = {})", shard.client_id, cells.join(" "), shard.n_samples());
        }
    }
    Ok(())
}
