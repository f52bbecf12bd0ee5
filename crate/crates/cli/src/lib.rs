//! Experiment runner for domain separation networks: configs, runs, result
//! tables, reconstruction grids and the gradient-check suite.

pub mod config;
pub mod recon;
pub mod runner;
pub mod table;

use std::fmt::Write as _;

use dsn_core::oracle::{self, CaseResult};
use dsn_core::{Error, Result};

pub use config::ExperimentConfig;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// Outcome of the finite-difference suite.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub losses: Vec<CaseResult>,
    pub models: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passes(&self) -> bool {
        self.losses.iter().chain(&self.models).all(CaseResult::passes)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in self.losses.iter().chain(&self.models) {
            let verdict = if r.passes() { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{:<36} worst rel err {:.3e} (tol {:.0e}, {} checks)  {verdict}",
                r.name, r.worst, r.tolerance, r.trials
            );
        }
        out
    }
}

/// Runs every loss case and the end-to-end model probes. With
/// `corrupt_si_mse`, the si_mse case uses a wrong backward pass.
pub fn gradcheck(seed: u64, corrupt_si_mse: bool) -> Result<GradcheckReport> {
    let mut losses = Vec::new();
    for case in oracle::loss_cases() {
        let case = if corrupt_si_mse && case.name == "si_mse" {
            oracle::corrupted_si_mse()
        } else {
            case
        };
        losses.push(oracle::check_case(&case, oracle::TRIALS, seed)?);
    }
    let mut models = Vec::new();
    for (scenario, variant, sim) in oracle::MODEL_PROBES {
        models.push(oracle::check_model(scenario, variant, sim, seed)?);
    }
    Ok(GradcheckReport { losses, models })
}
