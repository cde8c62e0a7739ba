use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::{ForcingKind, PhysicsConfig, TimeScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    ForcedTurbulence,
    Decaying,
    LargerDomain,
    MoreTurbulent,
}

impl CaseKind {
    pub const ALL: [CaseKind; 4] = [
        CaseKind::ForcedTurbulence,
        CaseKind::Decaying,
        CaseKind::LargerDomain,
        CaseKind::MoreTurbulent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseKind::ForcedTurbulence => "forced_turbulence",
            CaseKind::Decaying => "decaying",
            CaseKind::LargerDomain => "larger_domain",
            CaseKind::MoreTurbulent => "more_turbulent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("case", format!("unknown case `{s}`")))
    }
}

/// One reference-data case. Velocities are O(1) on a box of side O(2 pi)
/// with unit density, so the viscosity is `1 / reynolds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub case: CaseKind,
    pub reynolds: f64,
    pub domain_length: f64,
    pub fine_resolution: usize,
    pub coarse_resolution: usize,
    pub dt_coarse: f64,
    /// Coarse steps recorded after the warm-up.
    pub n_steps: usize,
    pub seed: u64,
    /// Simulated time discarded before recording.
    pub warmup_time: f64,
    pub max_velocity: f64,
    pub peak_wavenumber: f64,
    pub forcing_amplitude: f64,
    pub forcing_wavenumber: f64,
    pub drag: f64,
    pub time_scheme: TimeScheme,
    /// Also keep the fine-grid snapshots.
    pub store_fine: bool,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self::desk(CaseKind::ForcedTurbulence)
    }
}

impl CaseConfig {
    /// Desk-scale defaults: 256^2 reference, 64^2 coarse grid.
    pub fn desk(case: CaseKind) -> Self {
        let mut c = Self {
            case,
            reynolds: 1000.0,
            domain_length: 2.0 * PI,
            fine_resolution: 256,
            coarse_resolution: 64,
            dt_coarse: 7.0125e-3,
            n_steps: 1200,
            seed: 0,
            warmup_time: 12.0,
            max_velocity: 7.0,
            peak_wavenumber: 4.0,
            forcing_amplitude: 1.0,
            forcing_wavenumber: 4.0,
            drag: 0.1,
            time_scheme: TimeScheme::Rk3,
            store_fine: false,
        };
        match case {
            CaseKind::ForcedTurbulence => {}
            CaseKind::Decaying => {
                c.forcing_amplitude = 0.0;
                c.drag = 0.0;
                c.warmup_time = 1.0;
            }
            CaseKind::LargerDomain => {
                c.domain_length = 4.0 * PI;
                c.fine_resolution *= 2;
                c.coarse_resolution *= 2;
            }
            CaseKind::MoreTurbulent => c.reynolds = 4000.0,
        }
        c
    }

    /// Reference at 2048^2 and trajectories of 4800 coarse steps.
    pub fn paper(case: CaseKind) -> Self {
        let mut c = Self::desk(case);
        let scale = c.fine_resolution / 256;
        c.fine_resolution = 2048 * scale;
        c.n_steps = 4800;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reynolds > 0.0 && self.reynolds.is_finite()) {
            return Err(Error::config("reynolds", "must be positive"));
        }
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(Error::config("domain_length", "must be positive"));
        }
        if self.coarse_resolution < 4 {
            return Err(Error::config("coarse_resolution", "must be at least 4"));
        }
        if self.fine_resolution % self.coarse_resolution != 0 {
            return Err(Error::config(
                "fine_resolution",
                format!(
                    "{} is not a multiple of {}",
                    self.fine_resolution, self.coarse_resolution
                ),
            ));
        }
        if !(self.dt_coarse > 0.0 && self.dt_coarse.is_finite()) {
            return Err(Error::config("dt_coarse", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be at least 1"));
        }
        if !(self.warmup_time >= 0.0 && self.warmup_time.is_finite()) {
            return Err(Error::config("warmup_time", "must be non-negative"));
        }
        if !(self.max_velocity > 0.0 && self.max_velocity.is_finite()) {
            return Err(Error::config("max_velocity", "must be positive"));
        }
        let nyquist = (self.coarse_resolution / 2) as f64 * 2.0 * PI / self.domain_length;
        if !(self.peak_wavenumber > 0.0 && self.peak_wavenumber < nyquist) {
            return Err(Error::config("peak_wavenumber", format!("must lie in (0, {nyquist})")));
        }
        if !(self.drag >= 0.0 && self.drag.is_finite()) {
            return Err(Error::config("drag", "must be non-negative"));
        }
        if !self.forcing_amplitude.is_finite() {
            return Err(Error::config("forcing_amplitude", "must be finite"));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        self.fine_resolution / self.coarse_resolution
    }

    pub fn dt_fine(&self) -> f64 {
        self.dt_coarse / self.factor() as f64
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_time / self.dt_fine()).round() as usize
    }

    pub fn fine_grid(&self) -> Result<Grid> {
        Grid::square(self.fine_resolution, self.domain_length)
    }

    pub fn coarse_grid(&self) -> Result<Grid> {
        Grid::square(self.coarse_resolution, self.domain_length)
    }

    pub fn physics(&self, dt: f64) -> PhysicsConfig {
        let forced = self.forcing_amplitude != 0.0;
        PhysicsConfig {
            density: 1.0,
            viscosity: 1.0 / self.reynolds,
            dt,
            forcing: if forced {
                ForcingKind::Kolmogorov
            } else {
                ForcingKind::None
            },
            forcing_amplitude: self.forcing_amplitude,
            forcing_wavenumber: self.forcing_wavenumber,
            drag: self.drag,
            time_scheme: self.time_scheme,
        }
    }

    pub fn fine_physics(&self) -> PhysicsConfig {
        self.physics(self.dt_fine())
    }

    pub fn coarse_physics(&self) -> PhysicsConfig {
        self.physics(self.dt_coarse)
    }
}
