//! TOML experiment configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use ttk_core::precond::Accumulation;
use ttk_core::problems::{ConvectionDiffusionSpec, MarkovSpec};
use ttk_core::solvers::{SolverConfig, SolverKind};

/// Sketched stopping tolerance as a fraction of the target, unpreconditioned runs.
pub const SAFETY_UNPRECONDITIONED: f64 = 0.3;
/// Same for preconditioned runs.
pub const SAFETY_PRECONDITIONED: f64 = 0.1;

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProblemConfig {
    ConvectionDiffusion(ConvectionDiffusionSpec),
    Markov(MarkovSpec),
}

impl ProblemConfig {
    pub fn set_d(&mut self, d: usize) {
        match self {
            Self::ConvectionDiffusion(s) => {
                s.d = d;
                if let Some(w) = &mut s.convection {
                    w.resize(d, w.last().copied().unwrap_or(1.0));
                }
            }
            Self::Markov(s) => s.d = d,
        }
    }

    pub fn set_n(&mut self, n: usize) {
        match self {
            Self::ConvectionDiffusion(s) => s.n = n,
            Self::Markov(s) => s.n = n,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub name: String,
    /// Sketched tolerance as a fraction of `tol` (sketched solvers only).
    #[serde(default)]
    pub safety_factor: Option<f64>,
    #[serde(flatten)]
    pub config: SolverConfig,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PrecondConfig {
    #[default]
    None,
    Expsum(ExpsumBlock),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpsumBlock {
    pub zeta: usize,
    /// Rank cap of `P^{-1}` applications; the solver's `max_rank` when absent.
    #[serde(default)]
    pub max_rank: Option<usize>,
    /// Rounding tolerance of `P^{-1}` applications; scaled from `eta * tol` by the spectral
    /// interval when absent.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub accumulation: Accumulation,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Trace file name for `solve`, relative to the output directory.
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub track_true_residual: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareBlock {
    pub variants: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    D,
    N,
    MaxRank,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::D => "d",
            Self::N => "n",
            Self::MaxRank => "max_rank",
        }
    }
}

/// A sweep point: a number, or `"none"` for an absent rank cap.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(usize),
    Text(String),
}

impl SweepValue {
    pub fn label(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Solver variants run at every point; the solver block's name when absent.
    #[serde(default)]
    pub variants: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub problem: ProblemConfig,
    pub solver: SolverBlock,
    #[serde(default)]
    pub preconditioner: PrecondConfig,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub compare: Option<CompareBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

/// Command-line settings that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub maxit: Option<usize>,
    pub tol: Option<f64>,
    pub track_true_residual: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {}", e.message()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed.or(self.seed) {
            self.seed = Some(seed);
            self.solver.config.seed = seed;
        }
        if let Some(maxit) = o.maxit {
            self.solver.config.maxit = maxit;
        }
        if let Some(tol) = o.tol {
            self.solver.config.tol = tol;
        }
        if o.track_true_residual {
            self.output.track_true_residual = true;
        }
        self.solver.config.track_true_residual |= self.output.track_true_residual;
    }

    /// Checks every name and value the runs will use, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        match &self.problem {
            ProblemConfig::ConvectionDiffusion(s) => s.validate().context("problem")?,
            ProblemConfig::Markov(s) => s.validate().context("problem")?,
        }
        self.solver.config.validate().context("solver")?;
        if let Some(f) = self.solver.safety_factor {
            if !(f > 0.0 && f <= 1.0) {
                bail!("solver.safety_factor: must lie in (0, 1], got {f}");
            }
        }
        if let PrecondConfig::Expsum(e) = &self.preconditioner {
            if e.zeta == 0 {
                bail!("preconditioner.zeta: must be positive");
            }
            if e.max_rank == Some(0) {
                bail!("preconditioner.max_rank: must be at least 1");
            }
            if let Some(t) = e.tol {
                if !(t > 0.0 && t < 1.0) {
                    bail!("preconditioner.tol: must lie in (0, 1), got {t}");
                }
            }
        }
        for name in self.variant_names("solver.name", std::slice::from_ref(&self.solver.name))? {
            self.check_variant(name)?;
        }
        if let Some(c) = &self.compare {
            if c.variants.is_empty() {
                bail!("compare.variants: list is empty");
            }
            for v in self.variant_names("compare.variants", &c.variants)? {
                self.check_variant(v)?;
            }
        }
        if let Some(s) = &self.sweep {
            if let Some(v) = &s.variants {
                for k in self.variant_names("sweep.variants", v)? {
                    self.check_variant(k)?;
                }
            }
            for v in &s.values {
                sweep_value(s.axis, v)?;
            }
        }
        Ok(())
    }

    fn variant_names(&self, key: &str, names: &[String]) -> Result<Vec<SolverKind>> {
        names.iter().map(|n| SolverKind::parse(n).with_context(|| format!("{key}: unknown solver `{n}`"))).collect()
    }

    fn check_variant(&self, kind: SolverKind) -> Result<()> {
        if kind == SolverKind::TtSpgmres && matches!(self.preconditioner, PrecondConfig::None) {
            bail!("preconditioner.type: tt_spgmres requires an `expsum` preconditioner");
        }
        Ok(())
    }

    pub fn variants_for_compare(&self) -> Result<Vec<SolverKind>> {
        let c = self.compare.as_ref().context("compare: missing [compare] section")?;
        self.variant_names("compare.variants", &c.variants)
    }

    pub fn variants_for_sweep(&self) -> Result<Vec<SolverKind>> {
        let s = self.sweep.as_ref().context("sweep: missing [sweep] section")?;
        match &s.variants {
            Some(v) => self.variant_names("sweep.variants", v),
            None => self.variant_names("solver.name", std::slice::from_ref(&self.solver.name)),
        }
    }

    pub fn primary_variant(&self) -> Result<SolverKind> {
        Ok(self.variant_names("solver.name", std::slice::from_ref(&self.solver.name))?[0])
    }

    /// Solver settings for one variant: sketched solvers stop at `safety * tol`.
    pub fn solver_config(&self, kind: SolverKind) -> SolverConfig {
        let mut cfg = self.solver.config.clone();
        let default_safety = match kind {
            SolverKind::TtGmres => 1.0,
            SolverKind::TtSpgmres => SAFETY_PRECONDITIONED,
            _ => SAFETY_UNPRECONDITIONED,
        };
        if kind != SolverKind::TtGmres {
            cfg.tol *= self.solver.safety_factor.unwrap_or(default_safety);
        }
        cfg
    }
}

/// Parses a sweep value for `axis`; `None` means an absent rank cap.
pub fn sweep_value(axis: SweepAxis, v: &SweepValue) -> Result<Option<usize>> {
    match (axis, v) {
        (_, SweepValue::Int(0)) => bail!("sweep.values: {} must be positive", axis.name()),
        (_, SweepValue::Int(x)) => Ok(Some(*x)),
        (SweepAxis::MaxRank, SweepValue::Text(t)) if t == "none" || t == "inf" => Ok(None),
        (_, SweepValue::Text(t)) => bail!("sweep.values: `{t}` is not a valid {}", axis.name()),
    }
}
