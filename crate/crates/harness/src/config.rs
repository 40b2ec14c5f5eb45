//! Experiment configuration and the reference scenario presets.

use serde::{Deserialize, Serialize};

use cec_core::baselines::Algorithm;
use cec_core::ComputeKind;

use crate::error::{HarnessError, Result};
use crate::topology::{TopologyName, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFamily {
    Linear,
    Queue,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("{what} range [{}, {}] is invalid", self.lo, self.hi)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepSpec {
    /// Multiplies every input rate by each factor.
    RateScale { factors: Vec<f64> },
    /// Sets every task's result ratio to each value.
    ResultRatio { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub node: usize,
    pub iteration: usize,
}

/// Everything needed to sample and solve a family of scenarios. Sampled
/// values outside their ranges are clamped, never resampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub topology: TopologySpec,
    pub link_cost: LinkFamily,
    pub compute_cost: ComputeKind,
    pub tasks: usize,
    pub sources_per_task: usize,
    pub types: usize,
    pub rate: Range,
    pub result_ratio_mean: f64,
    pub result_ratio: Range,
    pub link_param_mean: f64,
    pub link_param: Range,
    pub compute_param_mean: f64,
    pub compute_param: Range,
    pub type_weight: Range,
    /// When set, input rates are scaled down so the estimated computation
    /// demand stays below this fraction of the total computation capacity.
    #[serde(default)]
    pub max_utilization: Option<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub tolerance: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub failure: Option<FailureSpec>,
}

/// Rows of the reference scenario table: topology, node count, task count,
/// sources per task, mean link parameter, mean computation parameter.
const TABLE: [(&str, TopologyName, usize, usize, usize, f64, f64); 8] = [
    ("connected-er", TopologyName::ConnectedEr, 20, 15, 5, 10.0, 12.0),
    ("balanced-tree", TopologyName::BalancedTree, 15, 20, 5, 20.0, 15.0),
    ("fog", TopologyName::Fog, 19, 30, 5, 20.0, 17.0),
    ("abilene", TopologyName::Abilene, 11, 10, 3, 15.0, 10.0),
    ("lhc", TopologyName::Lhc, 16, 30, 5, 15.0, 15.0),
    ("geant", TopologyName::Geant, 22, 40, 7, 25.0, 20.0),
    ("sw-linear", TopologyName::SmallWorld, 100, 120, 10, 20.0, 20.0),
    ("sw-queue", TopologyName::SmallWorld, 100, 120, 10, 20.0, 20.0),
];

impl ExperimentConfig {
    pub const PRESETS: [&'static str; 8] = [
        "connected-er",
        "balanced-tree",
        "fog",
        "abilene",
        "lhc",
        "geant",
        "sw-linear",
        "sw-queue",
    ];

    /// Full-size reference scenario by label.
    pub fn preset(label: &str) -> Result<Self> {
        let &(label, name, nodes, tasks, sources, d_mean, s_mean) = TABLE
            .iter()
            .find(|row| row.0 == label)
            .ok_or_else(|| HarnessError::Config(format!("unknown preset {label:?}")))?;
        let linear = label == "sw-linear";
        Ok(ExperimentConfig {
            label: label.to_string(),
            topology: TopologySpec {
                name,
                nodes: (!name.is_static()).then_some(nodes),
                p: (name == TopologyName::ConnectedEr).then_some(0.1),
            },
            link_cost: if linear { LinkFamily::Linear } else { LinkFamily::Queue },
            compute_cost: if linear { ComputeKind::SumLinear } else { ComputeKind::SumQueue },
            tasks,
            sources_per_task: sources,
            types: 5,
            rate: Range::new(0.5, 1.5),
            result_ratio_mean: 0.5,
            result_ratio: Range::new(0.1, 5.0),
            link_param_mean: d_mean,
            link_param: Range::new(10.0, 30.0),
            compute_param_mean: s_mean,
            compute_param: Range::new(2.0, 30.0),
            type_weight: Range::new(1.0, 5.0),
            max_utilization: None,
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![0],
            tolerance: 1e-6,
            max_iters: 5000,
            sweep: None,
            failure: None,
        })
    }

    /// Reduced-size variant: generated topologies and task counts are halved
    /// the computation load is capped so every instance is feasible, and runs
    /// stop after 1000 iterations.
    pub fn desk(label: &str) -> Result<Self> {
        let mut c = Self::preset(label)?;
        if let Some(n) = c.topology.nodes.as_mut() {
            *n = (*n).div_ceil(2);
        }
        c.tasks = c.tasks.div_ceil(2);
        c.sources_per_task = c.sources_per_task.min(c.topology.nodes.unwrap_or(usize::MAX));
        c.max_utilization = Some(0.3);
        c.seeds = (0..5).collect();
        c.max_iters = 1000;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, r) in [
            ("rate", self.rate),
            ("result ratio", self.result_ratio),
            ("link parameter", self.link_param),
            ("computation parameter", self.compute_param),
            ("type weight", self.type_weight),
        ] {
            r.check(what)?;
        }
        if self.rate.lo <= 0.0 || self.link_param.lo <= 0.0 || self.compute_param.lo <= 0.0 {
            return Err(HarnessError::Config("rates and cost parameters must be positive".into()));
        }
        if self.tasks == 0 || self.sources_per_task == 0 || self.types == 0 {
            return Err(HarnessError::Config("tasks, sources and types must be positive".into()));
        }
        if !(self.result_ratio_mean > 0.0 && self.link_param_mean > 0.0 && self.compute_param_mean > 0.0) {
            return Err(HarnessError::Config("distribution means must be positive".into()));
        }
        if let Some(u) = self.max_utilization {
            if !(u > 0.0 && u < 1.0) {
                return Err(HarnessError::Config(format!("max_utilization {u} is outside (0, 1)")));
            }
        }
        if !(self.tolerance > 0.0) || self.max_iters == 0 {
            return Err(HarnessError::Config("tolerance and max_iters must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        match &self.sweep {
            Some(SweepSpec::RateScale { factors }) if factors.iter().any(|f| !(*f > 0.0)) => {
                return Err(HarnessError::Config("rate-scale factors must be positive".into()));
            }
            Some(SweepSpec::ResultRatio { values }) if values.iter().any(|v| !(*v > 0.0)) => {
                return Err(HarnessError::Config("result ratios must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geant_row() {
        let c = ExperimentConfig::preset("geant").unwrap();
        assert_eq!((c.tasks, c.sources_per_task), (40, 7));
        assert_eq!((c.link_param_mean, c.compute_param_mean), (25.0, 20.0));
        assert_eq!(c.topology.name, TopologyName::Geant);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn desk_halves_generated_sizes() {
        let c = ExperimentConfig::desk("sw-queue").unwrap();
        assert_eq!(c.topology.nodes, Some(50));
        assert_eq!(c.tasks, 60);
        let a = ExperimentConfig::desk("abilene").unwrap();
        assert_eq!(a.topology.nodes, None);
        assert_eq!(a.tasks, 5);
    }

    #[test]
    fn json_round_trip() {
        let mut c = ExperimentConfig::preset("sw-linear").unwrap();
        c.sweep = Some(SweepSpec::ResultRatio { values: vec![0.1, 0.5] });
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_ranges_rejected() {
        let mut c = ExperimentConfig::preset("fog").unwrap();
        c.rate = Range::new(2.0, 1.0);
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::preset("mesh").is_err());
    }
}
