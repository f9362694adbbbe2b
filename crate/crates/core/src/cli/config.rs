//! TOML run configuration.

use crate::error::{Error, Result};
use crate::models::{Arch, ModelKind};
use crate::pde::{Family, ProblemSpec};
use crate::sampling::{progression, GridRole, ParamGrid, PointCounts};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A PDE-parameter grid: either `lo`/`hi`/`step` (every coefficient of a
/// one-parameter family), `axes` (one `[lo, hi, step]` triple per coefficient,
/// combined as a product) or explicit `values`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub step: Option<f64>,
    pub axes: Option<Vec<[f64; 3]>>,
    pub values: Option<Vec<Vec<f64>>>,
}

impl GridSpec {
    pub fn range(lo: f64, hi: f64, step: f64) -> Self {
        Self {
            lo: Some(lo),
            hi: Some(hi),
            step: Some(step),
            ..Self::default()
        }
    }

    pub fn values(values: Vec<Vec<f64>>) -> Self {
        Self {
            values: Some(values),
            ..Self::default()
        }
    }

    pub fn resolve(&self, family: Family, role: GridRole) -> Result<ParamGrid> {
        let cfg = |e: Error| Error::Config(format!("{role:?} grid: {e}"));
        let grid = match (self.lo, self.hi, self.step, &self.axes, &self.values) {
            (Some(lo), Some(hi), Some(step), None, None) => {
                let axis = progression(lo, hi, step).map_err(cfg)?;
                if family.mu_dim() != 1 {
                    return Err(Error::Config(format!(
                        "{role:?} grid: {family:?} takes {} coefficients; use `axes` or `values`",
                        family.mu_dim()
                    )));
                }
                ParamGrid::new(role, axis.into_iter().map(|v| vec![v]).collect())
            }
            (None, None, None, Some(axes), None) => {
                let axes = axes
                    .iter()
                    .map(|[lo, hi, step]| progression(*lo, *hi, *step))
                    .collect::<Result<Vec<_>>>()
                    .map_err(cfg)?;
                ParamGrid::product(role, &axes)
            }
            (None, None, None, None, Some(values)) => ParamGrid::new(role, values.clone()),
            _ => {
                return Err(Error::Config(format!(
                    "{role:?} grid: give exactly one of lo/hi/step, axes or values"
                )))
            }
        }
        .map_err(cfg)?;
        if grid.values[0].len() != family.mu_dim() {
            return Err(Error::Config(format!(
                "{role:?} grid entries have {} coefficient(s); {family:?} takes {}",
                grid.values[0].len(),
                family.mu_dim()
            )));
        }
        Ok(grid)
    }
}

/// Optional overrides of the default layer sizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    pub width: Option<usize>,
    pub hidden: Option<usize>,
    pub rank: Option<usize>,
    pub embed_layers: Option<usize>,
    pub embed_width: Option<usize>,
    pub head_bias: Option<f64>,
}

impl ArchOverrides {
    fn apply(&self, mut a: Arch, kind: ModelKind) -> Arch {
        a.width = self.width.unwrap_or(a.width);
        a.hidden = self.hidden.unwrap_or(a.hidden);
        if kind == ModelKind::HyperLrPinn {
            a.rank = self.rank.unwrap_or(a.rank);
            a.embed_layers = self.embed_layers.unwrap_or(a.embed_layers);
            a.embed_width = self.embed_width.unwrap_or(a.embed_width);
            a.head_bias = self.head_bias.unwrap_or(a.head_bias);
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Vanilla,
    PinnP,
    Naive,
}

impl BaselineKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            BaselineKind::Vanilla => ModelKind::VanillaPinn,
            BaselineKind::PinnP => ModelKind::PinnP,
            BaselineKind::Naive => ModelKind::NaiveLrPinn,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Vanilla => "vanilla",
            BaselineKind::PinnP => "pinn-p",
            BaselineKind::Naive => "naive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub kinds: Vec<BaselineKind>,
    /// Fixed rank of the naive low-rank baseline.
    pub naive_rank: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            kinds: vec![BaselineKind::Vanilla],
            naive_rank: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    /// Mean absolute test error to reach.
    pub threshold: f64,
    pub budget: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            budget: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Baseline repetitions with seeds `seed, seed + 1, ...`.
    pub runs: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { runs: 1 }
    }
}

/// Everything one pipeline run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub phase1: GridSpec,
    /// Targets for phase 2, baselines and reports; defaults to the phase-1 grid.
    #[serde(default)]
    pub phase2: Option<GridSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchOverrides,
    #[serde(default)]
    pub counts: Option<PointCounts>,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates every section and expands the grids.
    pub fn resolve(&self) -> Result<Resolved> {
        let base = ProblemSpec::preset(&self.preset, &vec![1.0; mu_dim_of(&self.preset)?])?;
        let family = base.family;
        let phase1 = self.phase1.resolve(family, GridRole::Phase1Train)?;
        let phase2 = match &self.phase2 {
            Some(g) => g.resolve(family, GridRole::Phase2Targets)?,
            None => ParamGrid::new(GridRole::Phase2Targets, phase1.values.clone())?,
        };
        for mu in phase1.iter().chain(phase2.iter()) {
            base.with_mu(mu).map_err(|e| Error::Config(format!("coefficients {mu:?}: {e}")))?;
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        let counts = self.counts.unwrap_or_else(|| PointCounts::standard(family));
        let hyper = self.arch.apply(Arch::hyper(family.mu_dim()), ModelKind::HyperLrPinn);
        hyper.validate(ModelKind::HyperLrPinn)?;
        let naive = Arch::naive(self.baseline.naive_rank);
        naive.validate(ModelKind::NaiveLrPinn)?;
        if self.probe.threshold.is_nan() || self.probe.threshold < 0.0 {
            return Err(Error::Config("probe threshold must be non-negative".into()));
        }
        Ok(Resolved {
            family,
            phase1,
            phase2,
            counts,
            hyper,
        })
    }

    pub fn arch_for(&self, kind: ModelKind, mu_dim: usize) -> Arch {
        match kind {
            ModelKind::HyperLrPinn => self.arch.apply(Arch::hyper(mu_dim), kind),
            ModelKind::VanillaPinn => self.arch.apply(Arch::vanilla(), kind),
            ModelKind::PinnP => self.arch.apply(Arch::pinn_p(mu_dim), kind),
            ModelKind::NaiveLrPinn => Arch {
                rank: self.baseline.naive_rank,
                ..self.arch.apply(Arch::naive(self.baseline.naive_rank), kind)
            },
        }
    }
}

fn mu_dim_of(preset: &str) -> Result<usize> {
    for d in [1, 3] {
        if ProblemSpec::preset(preset, &vec![1.0; d]).is_ok() {
            return Ok(d);
        }
    }
    Err(Error::Config(format!("unknown problem preset '{preset}'")))
}

/// A validated configuration with its grids expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub family: Family,
    pub phase1: ParamGrid,
    pub phase2: ParamGrid,
    pub counts: PointCounts,
    pub hyper: Arch,
}
