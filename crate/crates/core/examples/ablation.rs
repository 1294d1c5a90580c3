//! The margin × principal grid on a label-skewed federation with
//! client-specific shortcut features.

use fedld::data::FederationSpec;
use fedld::orchestrator::ablate;
use fedld::RunConfig;

fn main() -> fedld::Result<()> {
    let base = RunConfig {
        federation: FederationSpec { dirichlet_alpha: 0.1, shortcut_strength: Some(0.9), ..Default::default() },
        rounds: 100,
        ..Default::default()
    };
    let table = ablate(&base, 0.03, &[0, 1, 2])?;
    print!("{table}");
    Ok(())
}
