//! JSON problem files and their resolution into solver inputs.
//!
//! Every section rejects unknown keys. Built-in problems fill in their own
//! cost, boundary conditions and solver defaults; explicit entries override
//! them. The resolved form is echoed into `summary.json` and can be fed back
//! as a config to reproduce a run.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use bilinear_sweep::ensemble::{
    sample_parameters, Axis, EnsembleConfig, EnsembleInit, EnsembleMode, EnsembleProblem, ParameterGrid,
    SystemFamily, TerminalNorm,
};
use bilinear_sweep::problems;
use bilinear_sweep::solver::{FreezeRule, GaugeMode, InitStrategy, SolverConfig};
use bilinear_sweep::{BilinearSystem, BoundaryConditions, QuadraticCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Single,
    Ensemble,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_beta: Option<usize>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// State-side factors `Nⱼ`, one `n×m` matrix per state component.
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<Vec<Vec<f64>>>>,
    /// Affine ensemble terms, the l-th multiplied by parameter component l.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<Term>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Vec<AxisSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_parameters: Option<Vec<AxisSpec>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t_ctrl: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_terminal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_iterate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    /// Freeze rule for single systems, update mode for ensembles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rcond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_update: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: Kind,
    pub system: SystemSpec,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub bc: BcSpec,
    #[serde(default)]
    pub solver: SolverSpec,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n_t: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub eps: Option<f64>,
    pub rcond: Option<f64>,
    pub n_beta: Option<usize>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("malformed problem config")
    }

    pub fn apply(&mut self, o: &Overrides) {
        let s = &mut self.solver;
        if let Some(v) = o.n_t {
            match self.kind {
                Kind::Single => s.n_t = Some(v),
                Kind::Ensemble => s.n_t_ctrl = Some(v),
            }
        }
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        set!(o.tol, s.tol_terminal);
        set!(o.max_iter, s.max_iter);
        set!(o.alpha, s.alpha);
        set!(o.mode, s.mode);
        set!(o.eps, s.eps);
        set!(o.rcond, s.rcond);
        if let Some(nb) = o.n_beta {
            if self.system.builtin.is_some() {
                self.system.n_beta = Some(nb);
            } else if let Some(axes) = self.system.parameters.as_mut() {
                for a in axes {
                    a.count = nb;
                }
            }
        }
    }
}

/// A single-system problem ready to solve.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub sys: BilinearSystem,
    pub cost: QuadraticCost,
    pub bc: BoundaryConditions,
    pub config: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub problem: EnsembleProblem,
    pub config: EnsembleConfig,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        bail!("{what}: rows have different lengths");
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn sys_to_spec(sys: &BilinearSystem) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    (to_rows(sys.a()), to_rows(sys.b()), sys.n_mats().iter().map(to_rows).collect())
}

fn explicit_system(a: &Option<Vec<Vec<f64>>>, b: &Option<Vec<Vec<f64>>>, n: &Option<Vec<Vec<Vec<f64>>>>) -> Result<BilinearSystem> {
    let a = matrix(a.as_ref().ok_or_else(|| anyhow!("system.A is required"))?, "system.A")?;
    let b = matrix(b.as_ref().ok_or_else(|| anyhow!("system.B is required"))?, "system.B")?;
    let n_mats = match n {
        Some(ns) => ns.iter().map(|m| matrix(m, "system.N")).collect::<Result<Vec<_>>>()?,
        None => vec![DMatrix::zeros(b.nrows(), b.ncols()); a.nrows()],
    };
    Ok(BilinearSystem::new(a, b, n_mats)?)
}

fn term_system(t: &Term, n: usize, m: usize) -> Result<BilinearSystem> {
    let a = match &t.a {
        Some(a) => matrix(a, "terms.A")?,
        None => DMatrix::zeros(n, n),
    };
    let b = match &t.b {
        Some(b) => matrix(b, "terms.B")?,
        None => DMatrix::zeros(n, m),
    };
    let n_mats = match &t.n {
        Some(ns) => ns.iter().map(|x| matrix(x, "terms.N")).collect::<Result<Vec<_>>>()?,
        None => vec![DMatrix::zeros(n, m); n],
    };
    Ok(BilinearSystem::new(a, b, n_mats)?)
}

fn parse_init(s: &str) -> Result<InitStrategy> {
    Ok(match s {
        "straight-line" => InitStrategy::StraightLine,
        "lqr-linear-part" => InitStrategy::LqrLinearPart,
        "great-circle" => InitStrategy::GreatCircle,
        other => bail!("unknown init '{other}' (straight-line | lqr-linear-part | great-circle)"),
    })
}

fn init_name(i: &InitStrategy) -> String {
    i.name().to_string()
}

fn parse_gauge(s: &str) -> Result<GaugeMode> {
    Ok(match s {
        "auto" => GaugeMode::Auto,
        "on" => GaugeMode::On,
        "off" => GaugeMode::Off,
        other => bail!("unknown gauge '{other}' (auto | on | off)"),
    })
}

fn gauge_name(g: GaugeMode) -> &'static str {
    match g {
        GaugeMode::Auto => "auto",
        GaugeMode::On => "on",
        GaugeMode::Off => "off",
    }
}

fn single_only(s: &SolverSpec) -> Result<()> {
    let bad = [
        ("n_t_ctrl", s.n_t_ctrl.is_some()),
        ("substeps", s.substeps.is_some()),
        ("eps", s.eps.is_some()),
        ("rcond", s.rcond.is_some()),
        ("norm", s.norm.is_some()),
        ("frozen_update", s.frozen_update.is_some()),
        ("reach_threshold", s.reach_threshold.is_some()),
    ];
    if let Some((k, _)) = bad.iter().find(|(_, set)| *set) {
        bail!("solver.{k} applies to ensemble problems only");
    }
    Ok(())
}

fn ensemble_only(s: &SolverSpec) -> Result<()> {
    let bad = [
        ("n_t", s.n_t.is_some()),
        ("tol_iterate", s.tol_iterate.is_some()),
        ("alpha", s.alpha.is_some()),
        ("gauge", s.gauge.is_some()),
        ("divergence_patience", s.divergence_patience.is_some()),
    ];
    if let Some((k, _)) = bad.iter().find(|(_, set)| *set) {
        bail!("solver.{k} applies to single-system problems only");
    }
    Ok(())
}

fn cost_and_bc(
    cfg: &ProblemConfig,
    default: Option<(&QuadraticCost, &BoundaryConditions)>,
    n: usize,
    m: usize,
) -> Result<(QuadraticCost, BoundaryConditions)> {
    let q = match (&cfg.cost.q, default) {
        (Some(q), _) => matrix(q, "cost.Q")?,
        (None, Some((c, _))) => c.q().clone(),
        (None, None) => DMatrix::zeros(n, n),
    };
    let r = match (&cfg.cost.r, default) {
        (Some(r), _) => matrix(r, "cost.R")?,
        (None, Some((c, _))) => c.r().clone(),
        (None, None) => DMatrix::identity(m, m),
    };
    let tf = match (cfg.cost.tf, default) {
        (Some(t), _) => t,
        (None, Some((c, _))) => c.tf(),
        (None, None) => bail!("cost.tf is required"),
    };
    let x0 = match (&cfg.bc.x0, default) {
        (Some(v), _) => DVector::from_vec(v.clone()),
        (None, Some((_, bc))) => bc.x0.clone(),
        (None, None) => bail!("bc.x0 is required"),
    };
    let xf = match (&cfg.bc.xf, default) {
        (Some(v), _) => DVector::from_vec(v.clone()),
        (None, Some((_, bc))) => bc.xf.clone(),
        (None, None) => bail!("bc.xf is required"),
    };
    Ok((QuadraticCost::new(q, r, tf)?, BoundaryConditions::new(x0, xf)?))
}

impl ProblemConfig {
    pub fn single(&self) -> Result<SingleRun> {
        if self.kind != Kind::Single {
            bail!("config kind is 'ensemble'; use the ensemble command");
        }
        single_only(&self.solver)?;
        let sp = &self.system;
        let (sys, default, mut config) = match sp.builtin.as_deref() {
            Some("population") => {
                let p = problems::population();
                (p.sys.clone(), Some(p), SolverConfig::default())
            }
            Some("bloch") => {
                let omega = sp.omega.unwrap_or(0.5);
                let tf = self.cost.tf.unwrap_or(1.0);
                let p = problems::bloch(omega, tf);
                (p.sys.clone(), Some(p), problems::bloch_solver_config())
            }
            Some(other) => bail!("unknown single-system builtin '{other}' (population | bloch)"),
            None => (explicit_system(&sp.a, &sp.b, &sp.n)?, None, SolverConfig::default()),
        };
        if sp.builtin.is_some() && (sp.a.is_some() || sp.b.is_some() || sp.n.is_some()) {
            bail!("system: give either builtin or explicit matrices, not both");
        }
        if sp.terms.is_some() || sp.parameters.is_some() || sp.eval_parameters.is_some() || sp.omega_range.is_some() || sp.n_beta.is_some() {
            bail!("system: ensemble fields given for a single-system problem");
        }
        if sp.omega.is_some() && sp.builtin.as_deref() != Some("bloch") {
            bail!("system.omega applies to the bloch builtin only");
        }
        let (cost, bc) = cost_and_bc(self, default.as_ref().map(|p| (&p.cost, &p.bc)), sys.n(), sys.m())?;
        let s = &self.solver;
        if let Some(v) = s.n_t {
            config.n_t = v;
        }
        if let Some(v) = s.tol_terminal {
            config.tol_terminal = v;
        }
        if let Some(v) = s.tol_iterate {
            config.tol_iterate = v;
        }
        if let Some(v) = s.max_iter {
            config.max_iter = v;
        }
        if let Some(v) = s.alpha {
            config.alpha = v;
        }
        if let Some(v) = &s.init {
            config.init = parse_init(v)?;
        }
        if let Some(v) = &s.mode {
            config.rule = FreezeRule::parse(v).ok_or_else(|| anyhow!("unknown mode '{v}' (extremal | symmetric | picard)"))?;
        }
        if let Some(v) = &s.gauge {
            config.gauge = parse_gauge(v)?;
        }
        if let Some(v) = s.divergence_patience {
            config.divergence_patience = v;
        }
        if let Some(v) = s.relaxation {
            config.relaxation = v;
        }
        config.validate()?;
        Ok(SingleRun { sys, cost, bc, config })
    }

    pub fn ensemble(&self) -> Result<EnsembleRun> {
        if self.kind != Kind::Ensemble {
            bail!("config kind is 'single'; use the solve command");
        }
        ensemble_only(&self.solver)?;
        let sp = &self.system;
        let (problem, mut config) = match sp.builtin.as_deref() {
            Some("bloch_ensemble") => {
                if sp.a.is_some() || sp.b.is_some() || sp.n.is_some() || sp.terms.is_some() || sp.parameters.is_some() {
                    bail!("system: give either builtin or explicit matrices, not both");
                }
                if sp.omega.is_some() {
                    bail!("system.omega applies to the bloch builtin; use omega_range");
                }
                let [lo, hi] = sp.omega_range.unwrap_or([-1.0, 1.0]);
                let nb = sp.n_beta.unwrap_or(21);
                let tf = self.cost.tf.unwrap_or(10.0);
                let mut prob = problems::bloch_ensemble(lo, hi, nb, tf)?;
                if let Some(eval) = &sp.eval_parameters {
                    prob.grid.eval_samples = Some(eval_grid(eval)?);
                }
                let (cost, bc) = cost_and_bc(self, Some((&prob.cost, &prob.bc[0])), 3, 2)?;
                let prob = EnsembleProblem::new(prob.family, cost, vec![bc], prob.grid)?;
                (prob, problems::bloch_ensemble_config())
            }
            Some(other) => bail!("unknown ensemble builtin '{other}' (bloch_ensemble)"),
            None => {
                if sp.omega.is_some() || sp.omega_range.is_some() || sp.n_beta.is_some() {
                    bail!("system: omega, omega_range and n_beta apply to the builtin only");
                }
                let base = explicit_system(&sp.a, &sp.b, &sp.n)?;
                let terms = sp
                    .terms
                    .as_deref()
                    .unwrap_or(&[])
                    .iter()
                    .map(|t| term_system(t, base.n(), base.m()))
                    .collect::<Result<Vec<_>>>()?;
                let axes = sp.parameters.as_ref().ok_or_else(|| anyhow!("system.parameters is required for explicit ensembles"))?;
                if axes.len() != terms.len() {
                    bail!("system: {} parameter axes but {} affine terms", axes.len(), terms.len());
                }
                let grid = parameter_grid(axes, sp.eval_parameters.as_deref())?;
                let (cost, bc) = cost_and_bc(self, None, base.n(), base.m())?;
                let family = SystemFamily::new(base, terms)?;
                (EnsembleProblem::new(family, cost, vec![bc], grid)?, EnsembleConfig::default())
            }
        };
        let s = &self.solver;
        if let Some(v) = s.n_t_ctrl {
            config.n_t_ctrl = v;
        }
        if let Some(v) = s.substeps {
            config.substeps = v;
        }
        if let Some(v) = s.tol_terminal {
            config.tol_terminal = v;
        }
        if let Some(v) = s.max_iter {
            config.max_iter = v;
        }
        if let Some(v) = s.eps {
            config.eps = v;
        }
        if let Some(v) = s.rcond {
            config.rcond = v;
        }
        if let Some(v) = &s.mode {
            config.mode = EnsembleMode::parse(v).ok_or_else(|| anyhow!("unknown mode '{v}' (picard | costate)"))?;
        }
        if let Some(v) = &s.norm {
            config.norm = match v.as_str() {
                "weighted-l2" => TerminalNorm::WeightedL2,
                "sup" => TerminalNorm::Sup,
                other => bail!("unknown norm '{other}' (weighted-l2 | sup)"),
            };
        }
        if let Some(v) = &s.init {
            config.init = match v.as_str() {
                "straight-line" => EnsembleInit::StraightLine,
                "great-circle" => EnsembleInit::GreatCircle,
                other => bail!("unknown init '{other}' (straight-line | great-circle)"),
            };
        }
        if let Some(v) = s.relaxation {
            config.relaxation = v;
        }
        if let Some(v) = s.frozen_update {
            config.frozen_update = v;
        }
        if let Some(v) = s.reach_threshold {
            config.reach_threshold = v;
        }
        config.validate()?;
        Ok(EnsembleRun { problem, config })
    }

    /// Fully resolved copy of a single-system config.
    pub fn resolved_single(&self, run: &SingleRun) -> ProblemConfig {
        let c = &run.config;
        let mut system = self.system.clone();
        if system.builtin.as_deref() == Some("bloch") {
            system.omega = Some(system.omega.unwrap_or(0.5));
        }
        if system.builtin.is_none() {
            let (a, b, n) = sys_to_spec(&run.sys);
            system.a = Some(a);
            system.b = Some(b);
            system.n = Some(n);
        }
        ProblemConfig {
            kind: Kind::Single,
            system,
            cost: resolved_cost(&run.cost),
            bc: resolved_bc(&run.bc),
            solver: SolverSpec {
                n_t: Some(c.n_t),
                tol_terminal: Some(c.tol_terminal),
                tol_iterate: Some(c.tol_iterate),
                max_iter: Some(c.max_iter),
                alpha: Some(c.alpha),
                init: Some(init_name(&c.init)),
                mode: Some(c.rule.name().to_string()),
                gauge: Some(gauge_name(c.gauge).to_string()),
                divergence_patience: Some(c.divergence_patience),
                relaxation: Some(c.relaxation),
                ..Default::default()
            },
        }
    }

    pub fn resolved_ensemble(&self, run: &EnsembleRun) -> ProblemConfig {
        let c = &run.config;
        let mut system = self.system.clone();
        if system.builtin.is_some() {
            system.omega_range = Some(system.omega_range.unwrap_or([-1.0, 1.0]));
            system.n_beta = Some(system.n_beta.unwrap_or(21));
        } else {
            let (a, b, n) = sys_to_spec(&run.problem.family.base);
            system.a = Some(a);
            system.b = Some(b);
            system.n = Some(n);
        }
        ProblemConfig {
            kind: Kind::Ensemble,
            system,
            cost: resolved_cost(&run.problem.cost),
            bc: resolved_bc(&run.problem.bc[0]),
            solver: SolverSpec {
                n_t_ctrl: Some(c.n_t_ctrl),
                substeps: Some(c.substeps),
                tol_terminal: Some(c.tol_terminal),
                max_iter: Some(c.max_iter),
                init: Some(
                    match c.init {
                        EnsembleInit::StraightLine => "straight-line",
                        EnsembleInit::GreatCircle => "great-circle",
                    }
                    .to_string(),
                ),
                mode: Some(c.mode.name().to_string()),
                eps: Some(c.eps),
                rcond: Some(c.rcond),
                norm: Some(c.norm.name().to_string()),
                relaxation: Some(c.relaxation),
                frozen_update: Some(c.frozen_update),
                reach_threshold: Some(c.reach_threshold),
                ..Default::default()
            },
        }
    }
}

fn resolved_cost(c: &QuadraticCost) -> CostSpec {
    CostSpec {
        q: Some(to_rows(c.q())),
        r: Some(to_rows(c.r())),
        tf: Some(c.tf()),
    }
}

fn resolved_bc(bc: &BoundaryConditions) -> BcSpec {
    BcSpec {
        x0: Some(bc.x0.iter().cloned().collect()),
        xf: Some(bc.xf.iter().cloned().collect()),
    }
}

fn axes(specs: &[AxisSpec]) -> Vec<Axis> {
    specs.iter().map(|a| Axis::new(a.lo, a.hi, a.count)).collect()
}

fn eval_grid(specs: &[AxisSpec]) -> Result<Vec<DVector<f64>>> {
    let g = sample_parameters(&axes(specs), None)?;
    Ok(g.samples)
}

fn parameter_grid(design: &[AxisSpec], eval: Option<&[AxisSpec]>) -> Result<ParameterGrid> {
    if design.len() == 1 && design[0].count == 1 {
        let a = design[0];
        let mut g = ParameterGrid::single(DVector::from_element(1, 0.5 * (a.lo + a.hi)));
        g.eval_samples = eval.map(eval_grid).transpose()?;
        return Ok(g);
    }
    let eval_axes = eval.map(axes);
    Ok(sample_parameters(&axes(design), eval_axes.as_deref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let r = ProblemConfig::from_json(r#"{"kind":"single","system":{"builtin":"population"},"solver":{"n_tt":5}}"#);
        assert!(r.is_err());
        let r = ProblemConfig::from_json(r#"{"kind":"single","system":{"builtin":"population"},"extra":1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn builtin_defaults_resolve() {
        let cfg = ProblemConfig::from_json(r#"{"kind":"single","system":{"builtin":"bloch"}}"#).unwrap();
        let run = cfg.single().unwrap();
        assert_eq!(run.config.init, InitStrategy::GreatCircle);
        assert_eq!(run.cost.tf(), 1.0);
        let echo = cfg.resolved_single(&run);
        let again = echo.single().unwrap();
        assert_eq!(again.config, run.config);
        assert_eq!(again.bc, run.bc);
    }

    #[test]
    fn explicit_system_and_overrides() {
        let mut cfg = ProblemConfig::from_json(
            r#"{"kind":"single","system":{"A":[[0,-1],[1,0]],"B":[[0],[1]]},
                "cost":{"Q":[[0,0],[0,0]],"R":[[1]],"tf":2},"bc":{"x0":[1,0],"xf":[0,0.5]}}"#,
        )
        .unwrap();
        cfg.apply(&Overrides {
            n_t: Some(400),
            mode: Some("picard".into()),
            ..Default::default()
        });
        let run = cfg.single().unwrap();
        assert!(run.sys.is_linear());
        assert_eq!(run.config.n_t, 400);
        assert_eq!(run.config.rule, FreezeRule::Picard);
    }

    #[test]
    fn misplaced_fields_rejected() {
        let cfg = ProblemConfig::from_json(r#"{"kind":"single","system":{"builtin":"population"},"solver":{"eps":1e-3}}"#).unwrap();
        assert!(cfg.single().is_err());
        let cfg = ProblemConfig::from_json(r#"{"kind":"ensemble","system":{"builtin":"population"}}"#).unwrap();
        assert!(cfg.ensemble().is_err());
    }

    #[test]
    fn n_beta_override_reaches_builtin() {
        let mut cfg = ProblemConfig::from_json(r#"{"kind":"ensemble","system":{"builtin":"bloch_ensemble"}}"#).unwrap();
        cfg.apply(&Overrides {
            n_beta: Some(1),
            ..Default::default()
        });
        let run = cfg.ensemble().unwrap();
        assert_eq!(run.problem.grid.len(), 1);
        assert_eq!(run.config.relaxation, 0.5);
    }
}
