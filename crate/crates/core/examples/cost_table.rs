//! Parameters, MACs and forward passes per iteration for the supervised
//! single network, the two-network cross-supervision reference and the
//! MIMO model, with pass counts taken from instrumentation.

use uscs::harness::measured_passes;
use uscs::metrics::CostReport;
use uscs::trainer::TrainConfig;

fn main() -> uscs::Result<()> {
    let cfg = TrainConfig::default();
    let passes = measured_passes(&cfg)?;
    let report = CostReport::build(&cfg.model_config(), passes);
    println!(
        "{:<8} {:>9} {:>14} {:>7} {:>16}",
        "method", "params", "MACs/forward", "passes", "MACs/iteration"
    );
    for r in &report.rows {
        println!(
            "{:<8} {:>9} {:>14} {:>7} {:>16}",
            r.method, r.params, r.macs_per_forward, r.forward_passes, r.macs_per_iteration
        );
    }
    let (cps, uscs) = (report.row("CPS").unwrap(), report.row("USCS").unwrap());
    println!(
        "MIMO / two-network: params {:.3}, MACs per iteration {:.3}",
        uscs.params as f64 / cps.params as f64,
        uscs.macs_per_iteration as f64 / cps.macs_per_iteration as f64
    );
    Ok(())
}
