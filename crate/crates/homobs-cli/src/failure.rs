//! Terminal failures and their exit-code contract. Every error that
//! reaches `main` is folded into one of four channels so scripts can
//! branch on the exit code alone, with a matching single-line
//! `error[<kind>]: <message>` tag on stderr.

use homobs::config::{ConfigError, GainResolutionError};
use homobs::experiments::ExperimentError;
use homobs::homogeneity::HomogeneityError;
use homobs::observer::ObserverError;
use homobs::simulation::SimError;
use homobs::synthesis::SynthesisError;

#[derive(Debug)]
pub enum Failure {
    /// Unreadable, inconsistent, or mutually incompatible inputs.
    Config(String),
    /// The gain synthesis problem has no feasible solution.
    Infeasible(String),
    /// A simulation left the admissible state region.
    Divergence(String),
    /// A certificate check or a declared ordering expectation failed.
    Verification(String),
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Infeasible(_) => "infeasible",
            Failure::Divergence(_) => "divergence",
            Failure::Verification(_) => "verification",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Divergence(_) => 4,
            Failure::Verification(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Infeasible(m)
            | Failure::Divergence(m)
            | Failure::Verification(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::NotObservable
            | SynthesisError::StructureInfeasible(_)
            | SynthesisError::Infeasible(_)
            | SynthesisError::NuGrowthFailed => Failure::Infeasible(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<GainResolutionError> for Failure {
    fn from(e: GainResolutionError) -> Self {
        match e {
            GainResolutionError::Config(c) => c.into(),
            GainResolutionError::Synthesis(s) => s.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Diverged { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<ObserverError> for Failure {
    fn from(e: ObserverError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<HomogeneityError> for Failure {
    fn from(e: HomogeneityError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::UnknownPreset(_) => Failure::Config(e.to_string()),
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Gains(g) => g.into(),
            ExperimentError::Observer(o) => o.into(),
            ExperimentError::Sim(s) => s.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(format!("parse error: {e}"))
    }
}
