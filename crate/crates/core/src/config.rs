//! Simulation configuration: flat `key = value` files with environment overrides.
//!
//! Every key can be overridden with `QLCSIM_<KEY>` (upper-cased), e.g.
//! `QLCSIM_V_POOL=30`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::baselines::{MioParams, ThrConfig};
use crate::error::{Error, Result};
use crate::load::{LoadProfile, SessionModel};

pub const ENV_PREFIX: &str = "QLCSIM_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    NoAut,
    Thr,
    Qlc,
    Mio,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::NoAut, Algorithm::Thr, Algorithm::Qlc, Algorithm::Mio];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NoAut => "noaut",
            Algorithm::Thr => "thr",
            Algorithm::Qlc => "qlc",
            Algorithm::Mio => "mio",
        }
    }

    pub fn learns(self) -> bool {
        self == Algorithm::Qlc
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noaut" | "no_aut" => Ok(Algorithm::NoAut),
            "thr" => Ok(Algorithm::Thr),
            "qlc" => Ok(Algorithm::Qlc),
            "mio" => Ok(Algorithm::Mio),
            _ => Err(Error::BadValue { key: "algorithm".into(), value: s.into() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Constant per-user request rate.
    Constant,
    /// Two-peak diurnal request rate.
    Diurnal,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Constant => "constant",
            Scenario::Diurnal => "diurnal",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" | "1" => Ok(Scenario::Constant),
            "diurnal" | "2" => Ok(Scenario::Diurnal),
            _ => Err(Error::BadValue { key: "scenario".into(), value: s.into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub ac_thr: f64,
    pub sc_high: f64,
    pub sc_low: f64,
    pub u_t: f64,
    pub n_cpu_init: u32,
    pub v_pool: u32,
    pub episode_duration: f64,
    pub episodes: usize,
    pub population: u64,
    pub lambda_ue: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub service_mean: f64,
    pub service_sd: f64,
    pub load_mean: f64,
    pub load_sd: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_init: f64,
    pub epsilon_final: f64,
    pub cpu_capacity: f64,
    pub cl_interval: f64,
    pub meas_window: f64,
    pub b_levels: u32,
    pub reward_k: f64,
    pub reward_delta: f64,
    pub balance_deadband: f64,
    pub thr_step: u32,
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub n_nfs: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ac_thr: 0.9,
            sc_high: 0.95,
            sc_low: 0.15,
            u_t: 0.5,
            n_cpu_init: 1,
            v_pool: 20,
            episode_duration: 1e5,
            episodes: 20,
            population: 100_000,
            lambda_ue: 1e-5,
            lambda_min: 5e-7,
            lambda_max: 2e-5,
            service_mean: 60.0,
            service_sd: 5.0,
            load_mean: 1.0,
            load_sd: 0.02,
            alpha: 0.5,
            gamma: 0.9,
            epsilon_init: 0.9,
            epsilon_final: 0.0001,
            cpu_capacity: 10.0,
            cl_interval: 10.0,
            meas_window: 1000.0,
            b_levels: 2,
            reward_k: 10.0,
            reward_delta: 0.05,
            balance_deadband: 0.01,
            thr_step: 1,
            scenario: Scenario::Constant,
            algorithm: Algorithm::Qlc,
            seed: 0,
            n_nfs: 2,
        }
    }
}

pub const KEYS: [&str; 32] = [
    "ac_thr",
    "sc_high",
    "sc_low",
    "u_t",
    "n_cpu_init",
    "v_pool",
    "episode_duration",
    "episodes",
    "population",
    "lambda_ue",
    "lambda_min",
    "lambda_max",
    "service_mean",
    "service_sd",
    "load_mean",
    "load_sd",
    "alpha",
    "gamma",
    "epsilon_init",
    "epsilon_final",
    "cpu_capacity",
    "cl_interval",
    "meas_window",
    "b_levels",
    "reward_k",
    "reward_delta",
    "balance_deadband",
    "thr_step",
    "scenario",
    "algorithm",
    "seed",
    "n_nfs",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::BadValue { key: key.into(), value: value.into() })
}

impl SimConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "ac_thr" => self.ac_thr = parse(key, value)?,
            "sc_high" => self.sc_high = parse(key, value)?,
            "sc_low" => self.sc_low = parse(key, value)?,
            "u_t" => self.u_t = parse(key, value)?,
            "n_cpu_init" => self.n_cpu_init = parse(key, value)?,
            "v_pool" => self.v_pool = parse(key, value)?,
            "episode_duration" => self.episode_duration = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "population" => self.population = parse::<f64>(key, value).and_then(|p| as_count(key, value, p))?,
            "lambda_ue" => self.lambda_ue = parse(key, value)?,
            "lambda_min" => self.lambda_min = parse(key, value)?,
            "lambda_max" => self.lambda_max = parse(key, value)?,
            "service_mean" => self.service_mean = parse(key, value)?,
            "service_sd" => self.service_sd = parse(key, value)?,
            "load_mean" => self.load_mean = parse(key, value)?,
            "load_sd" => self.load_sd = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "epsilon_init" => self.epsilon_init = parse(key, value)?,
            "epsilon_final" => self.epsilon_final = parse(key, value)?,
            "cpu_capacity" => self.cpu_capacity = parse(key, value)?,
            "cl_interval" => self.cl_interval = parse(key, value)?,
            "meas_window" => self.meas_window = parse(key, value)?,
            "b_levels" => self.b_levels = parse(key, value)?,
            "reward_k" => self.reward_k = parse(key, value)?,
            "reward_delta" => self.reward_delta = parse(key, value)?,
            "balance_deadband" => self.balance_deadband = parse(key, value)?,
            "thr_step" => self.thr_step = parse(key, value)?,
            "scenario" => self.scenario = value.parse()?,
            "algorithm" => self.algorithm = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "n_nfs" => self.n_nfs = parse(key, value)?,
            _ => return Err(Error::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    /// Applies `QLCSIM_<KEY>` overrides found through `lookup`.
    pub fn apply_overrides<F>(&mut self, lookup: F) -> Result<()>
    where
        F: Fn(&str) -> Option<String>,
    {
        for key in KEYS {
            let var = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
            if let Some(v) = lookup(&var) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("known key")));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "ac_thr" => self.ac_thr.to_string(),
            "sc_high" => self.sc_high.to_string(),
            "sc_low" => self.sc_low.to_string(),
            "u_t" => self.u_t.to_string(),
            "n_cpu_init" => self.n_cpu_init.to_string(),
            "v_pool" => self.v_pool.to_string(),
            "episode_duration" => self.episode_duration.to_string(),
            "episodes" => self.episodes.to_string(),
            "population" => self.population.to_string(),
            "lambda_ue" => self.lambda_ue.to_string(),
            "lambda_min" => self.lambda_min.to_string(),
            "lambda_max" => self.lambda_max.to_string(),
            "service_mean" => self.service_mean.to_string(),
            "service_sd" => self.service_sd.to_string(),
            "load_mean" => self.load_mean.to_string(),
            "load_sd" => self.load_sd.to_string(),
            "alpha" => self.alpha.to_string(),
            "gamma" => self.gamma.to_string(),
            "epsilon_init" => self.epsilon_init.to_string(),
            "epsilon_final" => self.epsilon_final.to_string(),
            "cpu_capacity" => self.cpu_capacity.to_string(),
            "cl_interval" => self.cl_interval.to_string(),
            "meas_window" => self.meas_window.to_string(),
            "b_levels" => self.b_levels.to_string(),
            "reward_k" => self.reward_k.to_string(),
            "reward_delta" => self.reward_delta.to_string(),
            "balance_deadband" => self.balance_deadband.to_string(),
            "thr_step" => self.thr_step.to_string(),
            "scenario" => self.scenario.to_string(),
            "algorithm" => self.algorithm.to_string(),
            "seed" => self.seed.to_string(),
            "n_nfs" => self.n_nfs.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_nfs == 0 {
            return bad("n_nfs must be at least 1".into());
        }
        if self.algorithm == Algorithm::Qlc && self.n_nfs < 2 {
            return bad("qlc needs at least two network functions".into());
        }
        if self.n_cpu_init == 0 {
            return bad("n_cpu_init must be at least 1".into());
        }
        if (self.n_cpu_init as u64) * (self.n_nfs as u64) > self.v_pool as u64 {
            return bad(format!(
                "initial allocation {}x{} exceeds v_pool {}",
                self.n_nfs, self.n_cpu_init, self.v_pool
            ));
        }
        if !(self.ac_thr > 0.0) {
            return bad(format!("ac_thr must be positive, got {}", self.ac_thr));
        }
        if !(self.cpu_capacity > 0.0 && self.cpu_capacity.is_finite()) {
            return bad(format!("cpu_capacity must be positive, got {}", self.cpu_capacity));
        }
        if !(self.cl_interval > 0.0) {
            return bad(format!("cl_interval must be positive, got {}", self.cl_interval));
        }
        if !(self.meas_window > 0.0) {
            return bad(format!("meas_window must be positive, got {}", self.meas_window));
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if !(self.service_sd >= 0.0 && self.load_sd >= 0.0) {
            return bad("standard deviations must be non-negative".into());
        }
        self.load_profile()?;
        self.session_model()?;
        self.agent_config().validate()?;
        self.thr_config().validate()?;
        Ok(())
    }

    pub fn load_profile(&self) -> Result<LoadProfile> {
        match self.scenario {
            Scenario::Constant => LoadProfile::constant(self.population, self.lambda_ue, self.episode_duration),
            Scenario::Diurnal => {
                LoadProfile::diurnal(self.population, self.lambda_min, self.lambda_max, self.episode_duration)
            }
        }
    }

    pub fn session_model(&self) -> Result<SessionModel> {
        SessionModel::new(self.service_mean, self.service_sd, self.load_mean, self.load_sd)
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon_init: self.epsilon_init,
            epsilon_final: self.epsilon_final,
            levels: self.b_levels,
            reward_k: self.reward_k,
            reward_delta: self.reward_delta,
            u_target: self.u_t,
            balance_deadband: self.balance_deadband,
        }
    }

    pub fn thr_config(&self) -> ThrConfig {
        ThrConfig { sc_high: self.sc_high, sc_low: self.sc_low, step: self.thr_step }
    }

    pub fn mio_params(&self) -> MioParams {
        MioParams { v_pool: self.v_pool, capacity: self.cpu_capacity, u_target: self.u_t, ac_thr: self.ac_thr }
    }

    /// Control iterations per episode: one at every multiple of `cl_interval` in `[0, T)`.
    pub fn iterations_per_episode(&self) -> u64 {
        (self.episode_duration / self.cl_interval).ceil() as u64
    }

    /// Training horizon of the exploration schedule.
    pub fn training_iterations(&self) -> u64 {
        self.iterations_per_episode() * self.episodes as u64
    }

    /// Aggregate offered rate at the configured per-user rate.
    pub fn lambda_in(&self) -> f64 {
        self.population as f64 * self.lambda_ue
    }
}

fn as_count(key: &str, raw: &str, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::BadValue { key: key.into(), value: raw.into() })
    }
}
