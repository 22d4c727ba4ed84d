//! Experiment configuration: one TOML schema shared by every experiment.
//!
//! Grid, mesh, coefficient and initial-condition fields left out of the file
//! are filled from the selected experiment's preset; experiment sub-tables
//! carry their own defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Names accepted by `experiment` and `--experiment`.
pub const EXPERIMENTS: &[&str] = &[
    "heat-regression",
    "reflection",
    "penalization",
    "apriori",
    "rate-function",
    "rare-event",
    "condition-probe",
    "fw-probe",
    "averaging",
    "kappa",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReflectionKind {
    Projection,
    Penalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionKind {
    Central,
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `g = 0`, `f ≡ forcing`, `σ ≡ sigma_level`.
    Constant,
    /// `g = a_g z²/2`, `f = c1 z/(1+z²) + c2`, `σ_j = sigma_level · mode_j(x)`.
    Burgers,
    /// Burgers flux with `f = f̄ + amplitude (1+s)^{-β}` and
    /// `σ_j = σ̄_j + amplitude · sigma_perturbation · (1+s)^{-β}`.
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `amplitude · sin(πx)`
    Sine,
    /// `amplitude · 4x(1−x)`
    Parabola,
    Zero,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub reflection: Option<ReflectionKind>,
    pub penalty: Option<f64>,
    pub convection: Option<ConvectionKind>,
    pub blowup_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub family: Option<Family>,
    pub channels: Option<usize>,
    pub a_g: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub forcing: Option<f64>,
    pub sigma_level: Option<f64>,
    pub sigma_perturbation: Option<f64>,
    pub beta: Option<f64>,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub shape: Option<Shape>,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatSection {
    /// Bound on the sup-over-time H error at the configured `dt`.
    pub tolerance: f64,
    /// Number of successive `dt` halvings after the base run.
    pub refinements: usize,
}

impl Default for HeatSection {
    fn default() -> Self {
        Self {
            tolerance: 5e-3,
            refinements: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectionSection {
    pub tv_min: f64,
    pub tv_max: f64,
}

impl Default for ReflectionSection {
    fn default() -> Self {
        Self {
            tv_min: 0.98,
            tv_max: 1.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenalizationSection {
    pub n: Vec<f64>,
    /// Required ratio of the last to the first squared distance.
    pub final_ratio: f64,
}

impl Default for PenalizationSection {
    fn default() -> Self {
        Self {
            n: vec![10.0, 100.0, 1000.0],
            final_ratio: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AprioriSection {
    pub scalings: Vec<f64>,
    pub samples: usize,
    /// Allowed spread (max/min) of the normalized bound across scalings.
    pub max_spread: f64,
}

impl Default for AprioriSection {
    fn default() -> Self {
        Self {
            scalings: vec![1.0, 2.0, 4.0],
            samples: 50,
            max_spread: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    /// Block values (block-major, channel-minor) of the control generating the target.
    pub target_control: Vec<f64>,
    pub blocks: usize,
    pub mu0: f64,
    pub mu_factor: f64,
    pub stages: usize,
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub fd_step: f64,
    pub h_bound: f64,
    /// Bound on the estimate for the generated target.
    pub lambda_bound: f64,
    /// Bound on the estimate for the zero-control target.
    pub zero_bound: f64,
    /// Treat a non-converged estimate as a fatal error.
    pub require_converged: bool,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            target_control: vec![1.0],
            blocks: 8,
            mu0: 1.0,
            mu_factor: 10.0,
            stages: 4,
            step_size: 1.0,
            max_iters: 200,
            tol: 1e-3,
            fd_step: 1e-5,
            h_bound: 1e3,
            lambda_bound: 0.55,
            zero_bound: 1e-3,
            require_converged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RareEventSection {
    pub epsilon: f64,
    pub samples: usize,
    /// Control generating the tube centre; also the importance tilt.
    pub target_control: Vec<f64>,
    pub delta: f64,
    /// Constant tilt for the sure-event weight check; defaults to `√ε`
    /// (log-weight variance 1 over a unit horizon).
    pub martingale_tilt: Option<f64>,
}

impl Default for RareEventSection {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            samples: 2000,
            target_control: vec![1.0],
            delta: 0.25,
            martingale_tilt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionSection {
    /// Each entry lists the block values of one control.
    pub controls: Vec<Vec<f64>>,
    /// Bound `N` on `∫|h|²`.
    pub energy_bound: f64,
    /// Initial conditions are these multiples of the configured shape.
    pub initial_scalings: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub samples: usize,
}

impl Default for ConditionSection {
    fn default() -> Self {
        Self {
            controls: vec![vec![0.0], vec![1.0], vec![1.4, -1.4]],
            energy_bound: 2.0,
            initial_scalings: vec![1.0, 0.5],
            epsilons: vec![0.2, 0.05, 0.01],
            delta: 0.25,
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FwSection {
    pub target_control: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub theta: f64,
    pub samples: usize,
}

impl Default for FwSection {
    fn default() -> Self {
        Self {
            target_control: vec![0.0],
            epsilons: vec![0.5, 0.2, 0.1],
            delta: 0.45,
            theta: 0.0,
            samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AveragingSection {
    pub epsilons: Vec<f64>,
    pub samples: usize,
    /// Squared-distance threshold for the exceedance column.
    pub exceedance_threshold: f64,
    /// Required ratio of the last to the first mean.
    pub final_ratio: f64,
}

impl Default for AveragingSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.01, 0.001],
            samples: 100,
            exceedance_threshold: 1e-3,
            final_ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KappaSection {
    pub t_hat: Vec<f64>,
    pub quad_steps: usize,
    pub z_samples: Vec<f64>,
    pub x_samples: Vec<f64>,
    pub tolerance: f64,
}

impl Default for KappaSection {
    fn default() -> Self {
        Self {
            t_hat: vec![1e2, 1e3, 1e4],
            quad_steps: 20_000,
            z_samples: (-4..=4).map(|i| i as f64 * 0.5).collect(),
            x_samples: vec![0.1, 0.5, 0.9],
            tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads for the module drivers; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Exit nonzero when any acceptance check of the experiment fails.
    #[serde(default)]
    pub fail_on_check: bool,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub heat: HeatSection,
    #[serde(default)]
    pub reflection: ReflectionSection,
    #[serde(default)]
    pub penalization: PenalizationSection,
    #[serde(default)]
    pub apriori: AprioriSection,
    #[serde(default)]
    pub rate_function: RateSection,
    #[serde(default)]
    pub rare_event: RareEventSection,
    #[serde(default)]
    pub condition: ConditionSection,
    #[serde(default)]
    pub fw_probe: FwSection,
    #[serde(default)]
    pub averaging: AveragingSection,
    #[serde(default)]
    pub kappa: KappaSection,
}

fn default_seed() -> u64 {
    2024
}

/// Grid, mesh, coefficients and initial condition of an experiment preset.
struct Preset {
    m: usize,
    t_end: f64,
    dt: f64,
    coefficients: CoefficientSection,
    shape: Shape,
}

fn constant(forcing: f64, sigma: f64) -> CoefficientSection {
    CoefficientSection {
        family: Some(Family::Constant),
        forcing: Some(forcing),
        sigma_level: Some(sigma),
        ..Default::default()
    }
}

fn burgers(a_g: f64) -> CoefficientSection {
    CoefficientSection {
        family: Some(Family::Burgers),
        a_g: Some(a_g),
        sigma_level: Some(1.0),
        ..Default::default()
    }
}

fn decaying() -> CoefficientSection {
    CoefficientSection {
        family: Some(Family::Decaying),
        beta: Some(0.5),
        amplitude: Some(1.0),
        ..Default::default()
    }
}

fn preset(experiment: &str) -> Preset {
    let (m, t_end, dt, coefficients, shape) = match experiment {
        "heat-regression" => (64, 0.1, 1e-4, constant(0.0, 0.0), Shape::Sine),
        "reflection" => (127, 1.0, 4e-5, constant(-1.0, 0.0), Shape::Zero),
        "penalization" => (31, 1.0, 5e-4, constant(-1.0, 0.0), Shape::Zero),
        "apriori" => (31, 1.0, 1e-3, burgers(1.0), Shape::Sine),
        "condition-probe" => (15, 1.0, 1e-2, burgers(0.5), Shape::Sine),
        "averaging" | "kappa" => (31, 1.0, 1e-3, decaying(), Shape::Sine),
        // rate-function, rare-event, fw-probe
        _ => (15, 1.0, 1e-2, constant(0.0, 1.0), Shape::Sine),
    };
    Preset {
        m,
        t_end,
        dt,
        coefficients,
        shape,
    }
}

fn fill<T: Copy>(slot: &mut Option<T>, value: Option<T>) {
    if slot.is_none() {
        *slot = value;
    }
}

fn range(path: &str, reason: impl Into<String>) -> CliError {
    CliError::Invalid {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(range(path, format!("must be positive, got {v}")))
    }
}

fn nonnegative(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(range(path, format!("must be nonnegative, got {v}")))
    }
}

fn nonempty<T>(path: &str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        Err(range(path, "must not be empty"))
    } else {
        Ok(())
    }
}

fn all_positive(path: &str, v: &[f64]) -> Result<(), CliError> {
    nonempty(path, v)?;
    v.iter().try_for_each(|&x| positive(path, x))
}

fn control_values(path: &str, v: &[f64], channels: usize) -> Result<(), CliError> {
    nonempty(path, v)?;
    if !v.len().is_multiple_of(channels) {
        return Err(range(
            path,
            format!(
                "length {} is not a multiple of {channels} channels",
                v.len()
            ),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(range(path, "entries must be finite"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// A config for `experiment` with every default applied.
    pub fn preset(experiment: &str) -> Result<Self, CliError> {
        Self::from_toml_str(&format!("experiment = \"{experiment}\""))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::parse(text)?;
        cfg.finalize()?;
        Ok(cfg)
    }

    /// Parses without filling presets, so callers can override fields first.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    /// Fills unset fields from the experiment's preset and validates.
    pub fn finalize(&mut self) -> Result<(), CliError> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(CliError::UnknownExperiment(self.experiment.clone()));
        }
        let p = preset(&self.experiment);
        fill(&mut self.grid.m, Some(p.m));
        fill(&mut self.mesh.t_end, Some(p.t_end));
        fill(&mut self.mesh.dt, Some(p.dt));
        fill(
            &mut self.scheme.reflection,
            Some(ReflectionKind::Projection),
        );
        fill(&mut self.scheme.convection, Some(ConvectionKind::Central));
        fill(&mut self.scheme.blowup_ceiling, Some(1e6));
        if self.scheme.reflection == Some(ReflectionKind::Penalized) {
            fill(&mut self.scheme.penalty, Some(100.0));
        }
        let c = &mut self.coefficients;
        let pc = p.coefficients;
        fill(&mut c.family, pc.family);
        fill(&mut c.channels, Some(1));
        match c.family {
            Some(Family::Constant) => {
                fill(&mut c.forcing, pc.forcing.or(Some(0.0)));
                fill(&mut c.sigma_level, pc.sigma_level.or(Some(0.0)));
            }
            Some(Family::Burgers) => {
                fill(&mut c.a_g, pc.a_g.or(Some(1.0)));
                fill(&mut c.c1, Some(0.0));
                fill(&mut c.c2, Some(0.0));
                fill(&mut c.sigma_level, pc.sigma_level.or(Some(1.0)));
            }
            Some(Family::Decaying) => {
                fill(&mut c.a_g, Some(0.5));
                fill(&mut c.c1, Some(1.0));
                fill(&mut c.c2, Some(1.0));
                fill(&mut c.sigma_level, Some(0.5));
                fill(&mut c.sigma_perturbation, Some(0.5));
                fill(&mut c.beta, pc.beta.or(Some(0.5)));
                fill(&mut c.amplitude, pc.amplitude.or(Some(1.0)));
            }
            None => unreachable!("every preset names a family"),
        }
        fill(&mut self.initial.shape, Some(p.shape));
        fill(&mut self.initial.amplitude, Some(1.0));
        self.validate()
    }

    /// Range checks; error paths name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.grid.m.unwrap_or(0);
        if m < 2 {
            return Err(range(
                "grid.m",
                format!("need at least 2 interior nodes, got {m}"),
            ));
        }
        let t_end = self.mesh.t_end.unwrap_or(f64::NAN);
        let dt = self.mesh.dt.unwrap_or(f64::NAN);
        positive("mesh.t_end", t_end)?;
        positive("mesh.dt", dt)?;
        if dt > t_end {
            return Err(range("mesh.dt", format!("exceeds mesh.t_end = {t_end}")));
        }
        positive(
            "scheme.blowup_ceiling",
            self.scheme.blowup_ceiling.unwrap_or(f64::NAN),
        )?;
        if self.scheme.reflection == Some(ReflectionKind::Penalized) {
            let n = self.scheme.penalty.unwrap_or(f64::NAN);
            positive("scheme.penalty", n)?;
            check_stability("scheme.penalty", n, dt)?;
        }

        let c = &self.coefficients;
        let channels = c.channels.unwrap_or(0);
        if channels == 0 {
            return Err(range("coefficients.channels", "must be at least 1"));
        }
        for (path, v) in [
            ("coefficients.a_g", c.a_g),
            ("coefficients.c1", c.c1),
            ("coefficients.c2", c.c2),
            ("coefficients.forcing", c.forcing),
            ("coefficients.sigma_level", c.sigma_level),
            ("coefficients.sigma_perturbation", c.sigma_perturbation),
            ("coefficients.amplitude", c.amplitude),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(range(path, "must be finite"));
                }
            }
        }
        if let Some(beta) = c.beta {
            positive("coefficients.beta", beta)?;
        }
        nonnegative(
            "initial.amplitude",
            self.initial.amplitude.unwrap_or(f64::NAN),
        )?;

        match self.experiment.as_str() {
            "heat-regression" => positive("heat.tolerance", self.heat.tolerance)?,
            "reflection" => {
                if self
                    .reflection
                    .tv_min
                    .partial_cmp(&self.reflection.tv_max)
                    .is_none_or(|o| o.is_gt())
                {
                    return Err(range(
                        "reflection.tv_min",
                        "must not exceed reflection.tv_max",
                    ));
                }
            }
            "penalization" => {
                all_positive("penalization.n", &self.penalization.n)?;
                for &n in &self.penalization.n {
                    check_stability("penalization.n", n, dt)?;
                }
                positive("penalization.final_ratio", self.penalization.final_ratio)?;
            }
            "apriori" => {
                all_positive("apriori.scalings", &self.apriori.scalings)?;
                if self.apriori.samples == 0 {
                    return Err(range("apriori.samples", "must be at least 1"));
                }
            }
            "rate-function" | "fw-probe" => {
                let r = &self.rate_function;
                control_values("rate_function.target_control", &r.target_control, channels)?;
                if r.blocks == 0 {
                    return Err(range("rate_function.blocks", "must be at least 1"));
                }
                if r.stages == 0 {
                    return Err(range("rate_function.stages", "must be at least 1"));
                }
                for (path, v) in [
                    ("rate_function.mu0", r.mu0),
                    ("rate_function.mu_factor", r.mu_factor),
                    ("rate_function.step_size", r.step_size),
                    ("rate_function.fd_step", r.fd_step),
                    ("rate_function.h_bound", r.h_bound),
                ] {
                    positive(path, v)?;
                }
                nonnegative("rate_function.tol", r.tol)?;
                if self.experiment == "fw-probe" {
                    let f = &self.fw_probe;
                    control_values("fw_probe.target_control", &f.target_control, channels)?;
                    all_positive("fw_probe.epsilons", &f.epsilons)?;
                    positive("fw_probe.delta", f.delta)?;
                    nonnegative("fw_probe.theta", f.theta)?;
                    if f.samples == 0 {
                        return Err(range("fw_probe.samples", "must be at least 1"));
                    }
                }
            }
            "rare-event" => {
                let r = &self.rare_event;
                positive("rare_event.epsilon", r.epsilon)?;
                positive("rare_event.delta", r.delta)?;
                control_values("rare_event.target_control", &r.target_control, channels)?;
                if r.samples == 0 {
                    return Err(range("rare_event.samples", "must be at least 1"));
                }
                if let Some(t) = r.martingale_tilt {
                    if !t.is_finite() {
                        return Err(range("rare_event.martingale_tilt", "must be finite"));
                    }
                }
            }
            "condition-probe" => {
                let s = &self.condition;
                nonempty("condition.controls", &s.controls)?;
                for h in &s.controls {
                    control_values("condition.controls", h, channels)?;
                }
                positive("condition.energy_bound", s.energy_bound)?;
                all_positive("condition.initial_scalings", &s.initial_scalings)?;
                all_positive("condition.epsilons", &s.epsilons)?;
                positive("condition.delta", s.delta)?;
                if s.samples == 0 {
                    return Err(range("condition.samples", "must be at least 1"));
                }
            }
            "averaging" => {
                let s = &self.averaging;
                all_positive("averaging.epsilons", &s.epsilons)?;
                if s.samples == 0 {
                    return Err(range("averaging.samples", "must be at least 1"));
                }
                nonnegative("averaging.exceedance_threshold", s.exceedance_threshold)?;
                positive("averaging.final_ratio", s.final_ratio)?;
            }
            "kappa" => {
                let s = &self.kappa;
                all_positive("kappa.t_hat", &s.t_hat)?;
                if s.t_hat.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(range("kappa.t_hat", "must be strictly increasing"));
                }
                if s.quad_steps < 2 {
                    return Err(range("kappa.quad_steps", "must be at least 2"));
                }
                nonempty("kappa.z_samples", &s.z_samples)?;
                nonempty("kappa.x_samples", &s.x_samples)?;
                positive("kappa.tolerance", s.tolerance)?;
            }
            _ => {}
        }
        if self.coefficients.family != Some(Family::Decaying)
            && matches!(self.experiment.as_str(), "averaging" | "kappa")
        {
            return Err(range(
                "coefficients.family",
                "averaging experiments need the decaying family",
            ));
        }
        Ok(())
    }

    /// The resolved config as TOML, as echoed into the manifest.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable in TOML")
    }
}

fn check_stability(path: &str, n: f64, dt: f64) -> Result<(), CliError> {
    let n_dt = n * dt;
    if n_dt > 1.0 {
        return Err(CliError::Unstable {
            path: path.to_string(),
            n_dt,
        });
    }
    Ok(())
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    ExperimentConfig::from_toml_str(&text)
}
