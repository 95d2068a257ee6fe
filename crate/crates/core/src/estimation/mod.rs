//! Mode identification: one unscented Kalman filter per fault hypothesis and
//! a Markov-mixed Bayesian posterior over the hypotheses.

mod belief;
mod ukf;

pub use belief::{accumulate_likelihood, map_index, mix_prior, posterior_update, ModeBelief};
pub use ukf::{log_likelihood, normalized_innovation, sigma_weights, ukf_step, UkfParams, UkfState, UkfUpdate};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::allocation::{self, FaultParameters, ThrustCommand, ThrusterLayout};
use crate::dynamics::{integrate_plant, HydroModel, VehicleState};
use crate::error::{Error, Result};

/// Fault hypothesis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeId {
    /// Healthy thrusters.
    I,
    /// Thruster 1 lost.
    II,
    /// Thruster 3 derated and misaligned.
    III,
}

impl ModeId {
    pub const ALL: [ModeId; 3] = [ModeId::I, ModeId::II, ModeId::III];

    pub fn index(self) -> usize {
        match self {
            ModeId::I => 0,
            ModeId::II => 1,
            ModeId::III => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ModeId::I => "I",
            ModeId::II => "II",
            ModeId::III => "III",
        }
    }
}

impl std::fmt::Display for ModeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Ordered fault hypotheses with a symmetric persistence transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeLibrary {
    modes: [(ModeId, FaultParameters); 3],
    transition: Matrix3<f64>,
}

impl ModeLibrary {
    pub fn new(modes: [(ModeId, FaultParameters); 3], t_diag: f64) -> Result<Self> {
        if !(t_diag > 0.0 && t_diag <= 1.0) {
            return Err(Error::InvalidConfig(format!("transition persistence must lie in (0, 1], got {t_diag}")));
        }
        for (k, (id, _)) in modes.iter().enumerate() {
            if id.index() != k {
                return Err(Error::InvalidConfig("modes must be listed in I, II, III order".into()));
            }
        }
        let off = (1.0 - t_diag) / 2.0;
        let transition = Matrix3::from_fn(|i, j| if i == j { t_diag } else { off });
        Ok(Self { modes, transition })
    }

    /// Healthy, thruster 1 lost, thruster 3 at 30 % and rotated 15 degrees.
    pub fn standard(t_diag: f64) -> Result<Self> {
        Self::new(
            [
                (ModeId::I, FaultParameters::nominal()),
                (ModeId::II, FaultParameters::blocked(0)),
                (ModeId::III, FaultParameters::derated(2, 0.3, 15f64.to_radians())),
            ],
            t_diag,
        )
    }

    pub fn parameters(&self, id: ModeId) -> &FaultParameters {
        &self.modes[id.index()].1
    }

    pub fn modes(&self) -> &[(ModeId, FaultParameters); 3] {
        &self.modes
    }

    /// Row-stochastic `T`, `T[j][i] = P(mode i at k | mode j at k-1)`.
    pub fn transition(&self) -> &Matrix3<f64> {
        &self.transition
    }

    /// Hypothesis whose parameters equal `fault`, if any.
    pub fn identify(&self, fault: &FaultParameters) -> Option<ModeId> {
        self.modes.iter().find(|(_, p)| p == fault).map(|(id, _)| *id)
    }
}

impl Default for ModeLibrary {
    fn default() -> Self {
        Self::standard(0.98).expect("default persistence is valid")
    }
}

/// Process model shared by the mode filters: the plant held at a constant
/// command for one control period.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantProcess {
    pub hydro: HydroModel,
    pub layout: ThrusterLayout,
    pub dt: f64,
    pub substeps: usize,
}

impl PlantProcess {
    pub fn propagate(&self, x: &Vector6<f64>, u: &ThrustCommand, mode: &FaultParameters) -> Vector6<f64> {
        let tau = allocation::generalized_force(u, mode, &self.layout);
        let h = self.dt / self.substeps as f64;
        let mut s = VehicleState::from_vector(x);
        for _ in 0..self.substeps {
            match integrate_plant(&self.hydro, &s, &tau, &Vector3::zeros(), h) {
                Ok(next) => s = next,
                Err(_) => return Vector6::repeat(f64::NAN),
            }
        }
        s.to_vector()
    }
}

/// Per-step output of the filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BankOutput {
    pub log_likelihood: Vector3<f64>,
    pub nis: Vector3<f64>,
    pub posterior: Vector3<f64>,
}

/// One filter per hypothesis plus the posterior recursion.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub library: ModeLibrary,
    pub process: PlantProcess,
    pub params: UkfParams,
    pub q: Matrix6<f64>,
    pub r: Matrix6<f64>,
    pub belief: ModeBelief,
    filters: Option<[UkfState; 3]>,
}

impl FilterBank {
    pub fn new(
        library: ModeLibrary,
        process: PlantProcess,
        params: UkfParams,
        q: Matrix6<f64>,
        r: Matrix6<f64>,
        rho: f64,
    ) -> Result<Self> {
        Ok(Self { library, process, params, q, r, belief: ModeBelief::new(rho)?, filters: None })
    }

    pub fn filters(&self) -> Option<&[UkfState; 3]> {
        self.filters.as_ref()
    }

    /// Initialize every filter at the first measurement with covariance `R`.
    pub fn initialize(&mut self, measurement: &Vector6<f64>) -> Result<()> {
        let f = UkfState::new(*measurement, self.r, self.q, self.r)?;
        self.filters = Some([f.clone(), f.clone(), f]);
        Ok(())
    }

    /// Advance all filters with the command applied over the last period and
    /// the new measurement, then update the posterior.
    pub fn step(&mut self, u_applied: &ThrustCommand, measurement: &Vector6<f64>) -> Result<BankOutput> {
        let Some(filters) = self.filters.as_mut() else {
            self.initialize(measurement)?;
            return Ok(BankOutput {
                log_likelihood: Vector3::zeros(),
                nis: Vector3::zeros(),
                posterior: self.belief.p,
            });
        };
        let mut ell = Vector3::zeros();
        let mut nis = Vector3::zeros();
        for (k, (_, mode)) in self.library.modes().iter().enumerate() {
            let process = &self.process;
            let upd = ukf_step(&filters[k], measurement, &self.params, |x| process.propagate(x, u_applied, mode))?;
            ell[k] = log_likelihood(&upd.innovation, &upd.s)?;
            nis[k] = normalized_innovation(&upd.innovation, &upd.s)?;
            filters[k] = upd.state;
        }
        let posterior = self.belief.update(&ell, self.library.transition());
        Ok(BankOutput { log_likelihood: ell, nis, posterior })
    }
}

/// Diagonal 6x6 matrix from its entries.
pub fn diag6(d: [f64; 6]) -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::from_row_slice(&d))
}

/// Default filter process noise.
pub fn default_process_noise() -> Matrix6<f64> {
    diag6([0.01, 0.01, 0.01, 0.005, 0.005, 0.005])
}

/// Default measurement noise, also used to generate synthetic measurements.
pub fn default_measurement_noise() -> Matrix6<f64> {
    diag6([0.1, 0.1, 0.1, 0.03, 0.03, 0.03])
}
