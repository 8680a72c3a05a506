//! Service-request traffic: arrival processes and per-session demand.
//!
//! The slice is loaded by a population of users, each issuing requests as an
//! independent Poisson process. Their superposition is Poisson with the
//! aggregate rate `population * per_user_rate`. The diurnal profile modulates
//! the per-user rate with a two-peak `sin²` curve and is sampled by thinning.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};

/// Lowest session duration a truncated draw may produce (seconds).
pub const DURATION_FLOOR: f64 = 0.1;
/// Lowest per-NF load a truncated draw may produce.
pub const LOAD_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateShape {
    Constant { per_user: f64 },
    Diurnal { per_user_min: f64, per_user_max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadProfile {
    population: u64,
    shape: RateShape,
    horizon: f64,
}

impl LoadProfile {
    pub fn new(population: u64, shape: RateShape, horizon: f64) -> Result<Self> {
        if population == 0 {
            return Err(Error::InvalidProfile("population must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProfile(format!("horizon must be positive, got {horizon}")));
        }
        match shape {
            RateShape::Constant { per_user } => {
                if !(per_user > 0.0 && per_user.is_finite()) {
                    return Err(Error::InvalidProfile(format!("rate must be positive, got {per_user}")));
                }
            }
            RateShape::Diurnal { per_user_min, per_user_max } => {
                if !(per_user_min > 0.0 && per_user_max.is_finite()) {
                    return Err(Error::InvalidProfile("diurnal rates must be positive".into()));
                }
                if per_user_min > per_user_max {
                    return Err(Error::InvalidProfile(format!(
                        "lambda_min {per_user_min} exceeds lambda_max {per_user_max}"
                    )));
                }
            }
        }
        Ok(Self { population, shape, horizon })
    }

    pub fn constant(population: u64, per_user: f64, horizon: f64) -> Result<Self> {
        Self::new(population, RateShape::Constant { per_user }, horizon)
    }

    pub fn diurnal(population: u64, per_user_min: f64, per_user_max: f64, horizon: f64) -> Result<Self> {
        Self::new(population, RateShape::Diurnal { per_user_min, per_user_max }, horizon)
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn shape(&self) -> RateShape {
        self.shape
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Aggregate arrival rate at `t` (requests per second).
    pub fn lambda_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(self.rate_unchecked(t))
    }

    /// Upper bound of the aggregate rate over the whole episode.
    pub fn peak_rate(&self) -> f64 {
        let u = self.population as f64;
        match self.shape {
            RateShape::Constant { per_user } => u * per_user,
            RateShape::Diurnal { per_user_max, .. } => u * per_user_max,
        }
    }

    fn rate_unchecked(&self, t: f64) -> f64 {
        let u = self.population as f64;
        match self.shape {
            RateShape::Constant { per_user } => u * per_user,
            RateShape::Diurnal { per_user_min, per_user_max } => {
                let s = (2.0 * PI * t / self.horizon).sin();
                u * (per_user_min + (per_user_max - per_user_min) * s * s)
            }
        }
    }

    /// Time of the first request strictly after `t_now`, or `None` once the
    /// next request would fall beyond the episode horizon.
    pub fn next_arrival<R: Rng + ?Sized>(&self, t_now: f64, rng: &mut R) -> Option<f64> {
        let majorant = self.peak_rate();
        let gap = Exp::new(majorant).expect("peak rate is positive");
        let mut t = t_now;
        loop {
            t += gap.sample(rng);
            if t > self.horizon {
                return None;
            }
            let accept = self.rate_unchecked(t) / majorant;
            // Rejection draws are skipped when the candidate is certain to pass,
            // so a flat diurnal profile consumes the same stream as a constant one.
            if accept >= 1.0 || rng.random::<f64>() < accept {
                return Some(t);
            }
        }
    }
}

/// One admitted (or candidate) user session.
#[derive(Clone, Debug, PartialEq)]
pub struct UeSession {
    pub arrival: f64,
    pub duration: f64,
    pub load_per_nf: Vec<f64>,
}

impl UeSession {
    pub fn departure(&self) -> f64 {
        self.arrival + self.duration
    }
}

/// Gaussian session duration and per-NF demand, truncated at small positive floors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionModel {
    duration: Normal<f64>,
    load: Normal<f64>,
}

impl SessionModel {
    pub fn new(duration_mean: f64, duration_sd: f64, load_mean: f64, load_sd: f64) -> Result<Self> {
        let duration = Normal::new(duration_mean, duration_sd)
            .map_err(|e| Error::InvalidConfig(format!("service duration: {e}")))?;
        let load = Normal::new(load_mean, load_sd).map_err(|e| Error::InvalidConfig(format!("load per user: {e}")))?;
        Ok(Self { duration, load })
    }

    pub fn sample<R: Rng + ?Sized>(&self, t_arrival: f64, n_nfs: usize, rng: &mut R) -> UeSession {
        assert!(n_nfs >= 1, "a slice has at least one network function");
        let duration = self.duration.sample(rng).max(DURATION_FLOOR);
        let load_per_nf = (0..n_nfs).map(|_| self.load.sample(rng).max(LOAD_FLOOR)).collect();
        UeSession { arrival: t_arrival, duration, load_per_nf }
    }
}

impl Default for SessionModel {
    fn default() -> Self {
        Self::new(60.0, 5.0, 1.0, 0.02).expect("valid defaults")
    }
}

/// Draws a session with the default duration and load model.
pub fn sample_session<R: Rng + ?Sized>(t_arrival: f64, n_nfs: usize, rng: &mut R) -> UeSession {
    SessionModel::default().sample(t_arrival, n_nfs, rng)
}
