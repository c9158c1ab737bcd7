use anyhow::anyhow;

use grcl_core::gradcheck::{check_pipeline, GradCheckConfig};

use crate::output::print_json;
use crate::{Failure, GradCheckArgs, NormalizeArg};

pub fn run(a: &GradCheckArgs) -> Result<(), Failure> {
    if !(a.threshold > 0.0) {
        return Err(Failure::Usage("--threshold must be positive".into()));
    }
    let cfg = GradCheckConfig {
        layers: a.layers,
        variant: a.variant.into(),
        normalize: a.normalize != NormalizeArg::Off,
        neg_k: a.neg_k,
        ..GradCheckConfig::new(a.loss.into(), a.n, a.dim, a.seed)
    };
    let report = check_pipeline(&cfg).map_err(anyhow::Error::from)?;
    print_json(&report)?;
    if report.max_rel_error > a.threshold {
        return Err(Failure::Runtime(anyhow!(
            "max relative error {:.3e} exceeds {:.3e} at entry {:?}",
            report.max_rel_error,
            a.threshold,
            report.worst_entry
        )));
    }
    Ok(())
}
