//! Scenario configuration and the optional TOML override file.
//!
//! Every key of the file is optional; missing keys keep the case defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use super::reference::CaseId;
use crate::allocation::{FaultParameters, InputLimits, ThrusterLayout};
use crate::backstepping::BackstepGains;
use crate::dynamics::{HydroModel, VehicleState};
use crate::error::{Error, Result};
use crate::estimation::{self, ModeId, ModeLibrary, UkfParams};
use crate::lmpc::{terminal_level_on_ball, OcpConfig};
use crate::supervisor::FusionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Mode bank of Lyapunov-constrained MPCs with probabilistic fusion.
    Almpc,
    /// Single adaptive MPC without contraction or terminal constraints.
    Ampc,
    /// Fault-unaware backstepping.
    Bsc,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Almpc => "almpc",
            ControllerKind::Ampc => "ampc",
            ControllerKind::Bsc => "bsc",
        }
    }

    pub fn uses_estimator(&self) -> bool {
        !matches!(self, ControllerKind::Bsc)
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "almpc" => Ok(ControllerKind::Almpc),
            "ampc" => Ok(ControllerKind::Ampc),
            "bsc" => Ok(ControllerKind::Bsc),
            other => Err(Error::InvalidConfig(format!("unknown controller '{other}'"))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State fed back to the controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    /// Noise-free plant state; measurements only drive identification.
    Truth,
    /// Mean of the filter of the mode used for allocation.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    pub t: f64,
    pub fault: FaultParameters,
}

/// Piecewise-constant true thruster parameters, healthy before the first event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultSchedule {
    events: Vec<FaultEvent>,
}

impl FaultSchedule {
    pub fn new(events: Vec<FaultEvent>) -> Result<Self> {
        for w in events.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidConfig("fault times must be strictly increasing".into()));
            }
        }
        if events.iter().any(|e| !(e.t >= 0.0)) {
            return Err(Error::InvalidConfig("fault times must be non-negative".into()));
        }
        Ok(Self { events })
    }

    /// Thruster 1 lost at 15 s (case 1); lost at 10 s, then thruster 3
    /// derated and misaligned from 20 s (case 2).
    pub fn for_case(case: CaseId) -> Self {
        let lib = ModeLibrary::default();
        let ev = |t, m| FaultEvent { t, fault: *lib.parameters(m) };
        match case {
            CaseId::One => Self { events: vec![ev(15.0, ModeId::II)] },
            CaseId::Two => Self { events: vec![ev(10.0, ModeId::II), ev(20.0, ModeId::III)] },
        }
    }

    pub fn events(&self) -> &[FaultEvent] {
        &self.events
    }

    pub fn at(&self, t: f64) -> FaultParameters {
        inject_fault(self, t)
    }
}

/// True parameters in force at time `t`; a change takes effect at its instant.
pub fn inject_fault(schedule: &FaultSchedule, t: f64) -> FaultParameters {
    schedule
        .events
        .iter()
        .rev()
        .find(|e| t >= e.t)
        .map(|e| e.fault)
        .unwrap_or_else(FaultParameters::nominal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub case: CaseId,
    pub controller: ControllerKind,
    pub seed: u64,
    pub total_time: f64,
    /// Control period, s.
    pub dt: f64,
    /// Plant integration substeps per control period.
    pub substeps: usize,
    pub initial_state: VehicleState,
    pub schedule: FaultSchedule,
    pub hydro: HydroModel,
    pub layout: ThrusterLayout,
    pub limits: InputLimits,
    pub gains: BackstepGains,
    pub ocp: OcpConfig,
    pub fusion: FusionConfig,
    pub library: ModeLibrary,
    pub ukf: UkfParams,
    pub q_ukf: Matrix6<f64>,
    pub r_ukf: Matrix6<f64>,
    pub rho: f64,
    pub measurement_noise: bool,
    pub feedback: FeedbackSource,
    /// Uniform disturbance bound per axis (zero disables it).
    pub disturbance_bound: Vector3<f64>,
    /// Damping used for warm-start allocations.
    pub warm_start_epsilon: f64,
    /// Keep one record per horizon solve.
    pub collect_telemetry: bool,
}

impl ScenarioConfig {
    pub fn for_case(case: CaseId, controller: ControllerKind) -> Self {
        let hydro = HydroModel::default();
        let gains = BackstepGains::default();
        Self {
            case,
            controller,
            seed: 0,
            total_time: match case {
                CaseId::One => 30.0,
                CaseId::Two => 40.0,
            },
            dt: 0.1,
            substeps: 10,
            initial_state: VehicleState::new(Vector3::new(0.5, 0.0, 0.0), Vector3::zeros()),
            schedule: FaultSchedule::for_case(case),
            ocp: OcpConfig::for_model(&hydro, &gains),
            hydro,
            layout: ThrusterLayout::default(),
            limits: InputLimits::default(),
            gains,
            fusion: FusionConfig::default(),
            library: ModeLibrary::default(),
            ukf: UkfParams::default(),
            q_ukf: estimation::default_process_noise(),
            r_ukf: estimation::default_measurement_noise(),
            rho: 0.9995,
            measurement_noise: true,
            feedback: FeedbackSource::Truth,
            disturbance_bound: Vector3::zeros(),
            warm_start_epsilon: 1e-6,
            collect_telemetry: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_time >= 0.0) || !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::InvalidConfig("horizon, period and substeps must be positive".into()));
        }
        if (self.ocp.dt - self.dt).abs() > 1e-12 {
            return Err(Error::InvalidConfig("controller period must match the scenario period".into()));
        }
        if let Some(last) = self.schedule.events().last() {
            if last.t > self.total_time {
                return Err(Error::InvalidConfig("fault time beyond the scenario horizon".into()));
            }
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig("forgetting factor must lie in (0, 1]".into()));
        }
        if self.disturbance_bound.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::InvalidConfig("disturbance bound must be non-negative".into()));
        }
        if !self.initial_state.is_finite() {
            return Err(Error::InvalidConfig("initial state must be finite".into()));
        }
        self.ocp.validate()?;
        self.fusion.validate()
    }

    /// Case defaults with the overrides of a TOML file applied.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.resolve(base_dir)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }
}

fn diag3(v: [f64; 3]) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::from_row_slice(&v))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    case: Option<u8>,
    controller: Option<ControllerKind>,
    seed: Option<u64>,
    total_time: Option<f64>,
    dt: Option<f64>,
    substeps: Option<usize>,
    initial_state: Option<[f64; 6]>,
    hydro_file: Option<PathBuf>,
    measurement_noise: Option<bool>,
    feedback: Option<FeedbackSource>,
    disturbance_bound: Option<[f64; 3]>,
    faults: Option<Vec<FaultSpec>>,
    ocp: Option<OcpSection>,
    estimator: Option<EstimatorSection>,
    fusion: Option<FusionSection>,
    limits: Option<LimitsSection>,
    gains: Option<GainsSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSpec {
    t: f64,
    mode: Option<ModeId>,
    gamma: Option<[f64; 4]>,
    theta_deg: Option<[f64; 4]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OcpSection {
    horizon: Option<usize>,
    q_eta: Option<[f64; 3]>,
    q_s: Option<[f64; 3]>,
    q_d: Option<[f64; 3]>,
    r_du: Option<f64>,
    alpha: Option<f64>,
    terminal_level: Option<f64>,
    terminal_radius: Option<f64>,
    terminal_weight: Option<f64>,
    max_iterations: Option<usize>,
    kkt_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorSection {
    rho: Option<f64>,
    t_diag: Option<f64>,
    q_ukf: Option<[f64; 6]>,
    r_ukf: Option<[f64; 6]>,
    ukf_alpha: Option<f64>,
    ukf_beta: Option<f64>,
    ukf_kappa: Option<f64>,
    jitter: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusionSection {
    p_on: Option<f64>,
    p_off: Option<f64>,
    n_on: Option<u32>,
    n_off: Option<u32>,
    blend: Option<bool>,
    epsilon: Option<f64>,
    anomaly_gate: Option<f64>,
    anomaly_count: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsSection {
    u_min: Option<f64>,
    u_max: Option<f64>,
    rate_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsSection {
    kp: Option<[f64; 3]>,
    kd: Option<[f64; 3]>,
    pd: Option<[f64; 3]>,
    lambda: Option<[f64; 3]>,
}

impl ScenarioFile {
    fn resolve(self, base_dir: Option<&Path>) -> Result<ScenarioConfig> {
        let case = match self.case {
            None => CaseId::One,
            Some(n) => CaseId::from_number(n).ok_or_else(|| Error::InvalidConfig(format!("unknown case {n}")))?,
        };
        let mut cfg = ScenarioConfig::for_case(case, self.controller.unwrap_or(ControllerKind::Almpc));
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.total_time {
            cfg.total_time = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
            cfg.ocp.dt = v;
        }
        if let Some(v) = self.substeps {
            cfg.substeps = v;
        }
        if let Some(x) = self.initial_state {
            cfg.initial_state = VehicleState::from_vector(&Vector6::from_row_slice(&x));
        }
        if let Some(p) = self.hydro_file {
            let p = match base_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p,
            };
            cfg.hydro = HydroModel::from_file(p)?;
        }
        if let Some(v) = self.measurement_noise {
            cfg.measurement_noise = v;
        }
        if let Some(v) = self.feedback {
            cfg.feedback = v;
        }
        if let Some(b) = self.disturbance_bound {
            cfg.disturbance_bound = Vector3::from_row_slice(&b);
        }
        if let Some(g) = self.gains {
            let kp = g.kp.map(diag3).unwrap_or(cfg.gains.kp);
            let kd = g.kd.map(diag3).unwrap_or(cfg.gains.kd);
            let pd = g.pd.map(diag3).unwrap_or(cfg.gains.pd);
            let lambda = g.lambda.map(|l| Vector3::from_row_slice(&l)).unwrap_or(cfg.gains.lambda);
            cfg.gains = BackstepGains::new(kp, kd, pd, lambda)?;
        }
        if let Some(l) = self.limits {
            let lo = l.u_min.map(Vector4::repeat).unwrap_or(cfg.limits.u_min);
            let hi = l.u_max.map(Vector4::repeat).unwrap_or(cfg.limits.u_max);
            cfg.limits = InputLimits::new(lo, hi, l.rate_max.unwrap_or(cfg.limits.rate_max))?;
        }
        // the terminal level depends on the model and gains, so refresh it
        cfg.ocp.terminal_level = terminal_level_on_ball(&cfg.hydro, &cfg.gains, 0.05);
        if let Some(o) = self.ocp {
            if let Some(v) = o.horizon {
                cfg.ocp.horizon = v;
            }
            if let Some(v) = o.q_eta {
                cfg.ocp.q_eta = diag3(v);
            }
            if let Some(v) = o.q_s {
                cfg.ocp.q_s = diag3(v);
            }
            if let Some(v) = o.q_d {
                cfg.ocp.q_d = diag3(v);
            }
            if let Some(v) = o.r_du {
                cfg.ocp.r_du = Matrix4::identity() * v;
            }
            if let Some(v) = o.alpha {
                cfg.ocp.alpha = v;
            }
            if let Some(r) = o.terminal_radius {
                cfg.ocp.terminal_level = terminal_level_on_ball(&cfg.hydro, &cfg.gains, r);
            }
            if let Some(v) = o.terminal_level {
                cfg.ocp.terminal_level = v;
            }
            if let Some(v) = o.terminal_weight {
                cfg.ocp.terminal_weight = v;
            }
            if let Some(v) = o.max_iterations {
                cfg.ocp.max_iterations = v;
            }
            if let Some(v) = o.kkt_tolerance {
                cfg.ocp.kkt_tolerance = v;
            }
        }
        if let Some(e) = self.estimator {
            if let Some(v) = e.rho {
                cfg.rho = v;
            }
            if let Some(v) = e.t_diag {
                cfg.library = ModeLibrary::new(*cfg.library.modes(), v)?;
            }
            if let Some(v) = e.q_ukf {
                cfg.q_ukf = estimation::diag6(v);
            }
            if let Some(v) = e.r_ukf {
                cfg.r_ukf = estimation::diag6(v);
            }
            if let Some(v) = e.ukf_alpha {
                cfg.ukf.alpha = v;
            }
            if let Some(v) = e.ukf_beta {
                cfg.ukf.beta = v;
            }
            if let Some(v) = e.ukf_kappa {
                cfg.ukf.kappa = v;
            }
            if let Some(v) = e.jitter {
                cfg.ukf.jitter = v;
            }
        }
        if let Some(f) = self.fusion {
            let d = &mut cfg.fusion;
            d.p_on = f.p_on.unwrap_or(d.p_on);
            d.p_off = f.p_off.unwrap_or(d.p_off);
            d.n_on = f.n_on.unwrap_or(d.n_on);
            d.n_off = f.n_off.unwrap_or(d.n_off);
            d.blend_enabled = f.blend.unwrap_or(d.blend_enabled);
            d.epsilon = f.epsilon.unwrap_or(d.epsilon);
            d.anomaly_gate = f.anomaly_gate.unwrap_or(d.anomaly_gate);
            d.anomaly_count = f.anomaly_count.unwrap_or(d.anomaly_count);
        }
        if let Some(faults) = self.faults {
            let mut events = Vec::with_capacity(faults.len());
            for spec in faults {
                let fault = match (spec.mode, spec.gamma, spec.theta_deg) {
                    (Some(m), None, None) => *cfg.library.parameters(m),
                    (None, gamma, theta) => FaultParameters::new(
                        gamma.map(|g| Vector4::from_row_slice(&g)).unwrap_or(Vector4::repeat(1.0)),
                        theta.map(|t| Vector4::from_row_slice(&t).map(f64::to_radians)).unwrap_or(Vector4::zeros()),
                    )?,
                    _ => return Err(Error::InvalidConfig("a fault gives either a mode or explicit parameters".into())),
                };
                events.push(FaultEvent { t: spec.t, fault });
            }
            cfg.schedule = FaultSchedule::new(events)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let s1 = FaultSchedule::for_case(CaseId::One);
        assert_eq!(inject_fault(&s1, 14.9), FaultParameters::nominal());
        assert_eq!(inject_fault(&s1, 15.0).gamma[0], 0.0);
        let s2 = FaultSchedule::for_case(CaseId::Two);
        let f = inject_fault(&s2, 25.0);
        assert_eq!(f.gamma[2], 0.3);
        assert!((f.theta[2] - 15f64.to_radians()).abs() < 1e-15);
        assert_eq!(f.gamma[0], 1.0);
        assert_eq!(inject_fault(&s2, 12.0), FaultParameters::blocked(0));
    }

    #[test]
    fn schedule_rejects_unordered_times() {
        let e = |t| FaultEvent { t, fault: FaultParameters::nominal() };
        assert!(FaultSchedule::new(vec![e(2.0), e(1.0)]).is_err());
        assert!(FaultSchedule::new(vec![e(-1.0)]).is_err());
    }

    #[test]
    fn empty_file_gives_case_one_defaults() {
        let cfg = ScenarioConfig::from_toml_str("", None).unwrap();
        assert_eq!(cfg, ScenarioConfig::for_case(CaseId::One, ControllerKind::Almpc));
        assert_eq!(cfg.steps(), 300);
        assert!((cfg.ocp.terminal_level - 0.3975).abs() < 1e-12);
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
            case = 2
            controller = "ampc"
            seed = 9
            [fusion]
            p_on = 0.9
            [estimator]
            rho = 0.99
            [[faults]]
            t = 5.0
            mode = "III"
        "#;
        let cfg = ScenarioConfig::from_toml_str(text, None).unwrap();
        assert_eq!(cfg.case, CaseId::Two);
        assert_eq!(cfg.controller, ControllerKind::Ampc);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fusion.p_on, 0.9);
        assert_eq!(cfg.rho, 0.99);
        assert_eq!(cfg.schedule.events().len(), 1);
        assert_eq!(cfg.total_time, 40.0);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("case = 3", None).is_err());
        assert!(ScenarioConfig::from_toml_str("unknown_key = 1", None).is_err());
        assert!(ScenarioConfig::from_toml_str("[fusion]\np_off = 0.99", None).is_err());
        assert!(ScenarioConfig::from_toml_str("dt = 0.0", None).is_err());
    }

    #[test]
    fn controller_parsing() {
        assert_eq!("ALMPC".parse::<ControllerKind>().unwrap(), ControllerKind::Almpc);
        assert!("pid".parse::<ControllerKind>().is_err());
    }
}
