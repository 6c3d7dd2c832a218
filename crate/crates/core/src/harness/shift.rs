//! In-domain versus out-of-domain performance deltas.

use serde::{Deserialize, Serialize};

use super::{EvaluationRun, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodEntry {
    pub subset: String,
    /// Mean DSC in percent.
    pub ood_mean: f64,
    /// `in_domain_mean - ood_mean`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftReport {
    pub model_name: String,
    /// Mean DSC in percent.
    pub in_domain_mean: f64,
    pub ood: Vec<OodEntry>,
}

/// Deltas from percent means, for callers that already hold the means.
pub fn shift_from_means(model_name: &str, in_domain_mean: f64, ood: &[(&str, f64)]) -> DomainShiftReport {
    DomainShiftReport {
        model_name: model_name.to_string(),
        in_domain_mean,
        ood: ood
            .iter()
            .map(|(s, m)| OodEntry { subset: s.to_string(), ood_mean: *m, delta: in_domain_mean - m })
            .collect(),
    }
}

/// Deltas of mean DSC (percent) between an in-domain run and named
/// out-of-domain runs of the same model.
pub fn domain_shift_delta(in_run: &EvaluationRun, ood_runs: &[(&str, &EvaluationRun)]) -> Result<DomainShiftReport> {
    if let Some((name, r)) = ood_runs.iter().find(|(_, r)| r.model_name != in_run.model_name) {
        return Err(HarnessError::Consistency(format!(
            "OOD subset {name} was scored for model {}, in-domain for {}",
            r.model_name, in_run.model_name
        )));
    }
    let means: Vec<(&str, f64)> = ood_runs.iter().map(|(n, r)| (*n, 100.0 * r.mean_dsc())).collect();
    Ok(shift_from_means(&in_run.model_name, 100.0 * in_run.mean_dsc(), &means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::{row, run_of};

    #[test]
    fn table_row_arithmetic() {
        let r = shift_from_means("SwinUNETR", 85.78, &[("ood", 77.68)]);
        assert!((r.ood[0].delta - 8.09).abs() <= 0.01);
        assert!((r.ood[0].delta - (85.78 - 77.68)).abs() < 1e-9);
    }

    #[test]
    fn runs_and_mismatch() {
        let a = run_of("m", vec![row("1", 0.9, &[]), row("2", 0.8, &[])]);
        let b = run_of("m", vec![row("3", 0.5, &[])]);
        let c = run_of("m", vec![row("4", 0.7, &[])]);
        let rep = domain_shift_delta(&a, &[("b", &b), ("c", &c)]).unwrap();
        assert_eq!(rep.ood.len(), 2);
        assert!((rep.ood[0].delta - 35.0).abs() < 1e-9);
        assert_eq!(domain_shift_delta(&a, &[("a", &a)]).unwrap().ood[0].delta, 0.0);
        let back = domain_shift_delta(&b, &[("a", &a)]).unwrap();
        assert!((back.ood[0].delta + rep.ood[0].delta).abs() < 1e-9);
        let other = run_of("n", vec![row("5", 0.1, &[])]);
        assert!(matches!(domain_shift_delta(&a, &[("x", &other)]), Err(HarnessError::Consistency(_))));
    }
}
