//! Run configuration: one JSON file per run.

use std::fmt;
use std::path::PathBuf;

use carnot_core::group::GroupSpec;
use carnot_core::{GaugeFn, GroupStructure};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::RunError;

/// The experiments `run` knows about, in listing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GroupCheck,
    GaugeCheck,
    Calibrate,
    FlowCheck,
    PolarCheck,
    GiraudScan,
    Boxcount,
    Ifs,
    PotentialEval,
    DivergenceProbe,
    Threshold,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::GroupCheck,
        Experiment::GaugeCheck,
        Experiment::Calibrate,
        Experiment::FlowCheck,
        Experiment::PolarCheck,
        Experiment::GiraudScan,
        Experiment::Boxcount,
        Experiment::Ifs,
        Experiment::PotentialEval,
        Experiment::DivergenceProbe,
        Experiment::Threshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GroupCheck => "group-check",
            Experiment::GaugeCheck => "gauge-check",
            Experiment::Calibrate => "calibrate",
            Experiment::FlowCheck => "flow-check",
            Experiment::PolarCheck => "polar-check",
            Experiment::GiraudScan => "giraud-scan",
            Experiment::Boxcount => "boxcount",
            Experiment::Ifs => "ifs",
            Experiment::PotentialEval => "potential-eval",
            Experiment::DivergenceProbe => "divergence-probe",
            Experiment::Threshold => "threshold",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::GroupCheck => "group law: associativity, identity, inverse, dilation automorphism, H-type identity",
            Experiment::GaugeCheck => "gauge homogeneity and symmetry, stencil order on the fundamental solution",
            Experiment::Calibrate => "fundamental-solution constant from the Green identity with a gauge bump",
            Experiment::FlowCheck => "radial flow: gauge linearity, constant speed, semigroup, Jacobian s^Q",
            Experiment::PolarCheck => "polar integration formula and the sphere measure sigma",
            Experiment::GiraudScan => "Giraud-type kernel bounds: ratio table and empirical constants",
            Experiment::Boxcount => "gauge-adapted box-counting dimension of a sampled set",
            Experiment::Ifs => "self-similar set: chaos-game sample, Moran and box dimension, separation",
            Experiment::PotentialEval => "potential of a Radon measure at points, optional harmonicity scan",
            Experiment::DivergenceProbe => "integral of R^p along a horizontal curve as t_min shrinks",
            Experiment::Threshold => "dimension threshold evidence: blow-up along curves and a finiteness witness",
        }
    }

    /// Whether the experiment draws random numbers and so needs a seed.
    pub fn randomized(self) -> bool {
        !matches!(
            self,
            Experiment::Calibrate | Experiment::PotentialEval | Experiment::DivergenceProbe
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeOptions {
    /// Kaplan coefficient; fitted for custom groups and 16 otherwise.
    #[serde(default)]
    pub vertical_coefficient: Option<f64>,
    /// Fundamental-solution constant; 1 when absent.
    #[serde(default)]
    pub c_gamma: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub group: GroupSpec,
    #[serde(default)]
    pub gauge: GaugeOptions,
    /// Experiment-specific parameters, checked against that experiment's
    /// schema.
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    /// Output directory; `--out` wins.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Validation(format!("config: {e}")))
    }

    pub fn params<T: DeserializeOwned>(&self) -> Result<T, RunError> {
        serde_json::from_value(self.params.clone())
            .map_err(|e| RunError::Validation(format!("params for {}: {e}", self.experiment)))
    }

    pub fn seed(&self) -> Result<u64, RunError> {
        self.rng_seed.ok_or_else(|| {
            RunError::Validation(format!(
                "{} is randomized and needs rng_seed",
                self.experiment
            ))
        })
    }

    pub fn build_group(&self) -> Result<GroupStructure, RunError> {
        Ok(GroupStructure::from_spec(&self.group)?)
    }

    pub fn build_gauge(&self, g: &GroupStructure) -> Result<GaugeFn, RunError> {
        let mut d = match self.gauge.vertical_coefficient {
            Some(k) => GaugeFn::with_vertical_coefficient(g, k)?,
            None => GaugeFn::new(g),
        };
        if let Some(c) = self.gauge.c_gamma {
            d.set_normalization(c)?;
        }
        Ok(d)
    }
}
