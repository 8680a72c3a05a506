//! Event-driven episode loop and multi-episode experiments.
//!
//! Events at the same instant are processed as: session departures, window
//! close, request arrival, control iteration. A window covers `[start, end)`,
//! so a control step at a window boundary is accounted to the next window.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{epsilon_at, AgentObservation, QTable, QlcAgent};
use crate::baselines::{mio_allocate, no_aut_decide, thr_decide};
use crate::config::{Algorithm, SimConfig};
use crate::env::{ConflictEvent, ScalingOutcome, ScalingRequest, SliceState};
use crate::error::{Error, Result};
use crate::metrics::{rei, window_rates, MetricsRecord};

const TRAFFIC_STREAM: u64 = 0;
const ARBITER_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;

/// Q-tables together with the position in the exploration schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Learners {
    pub tables: Vec<QTable>,
    pub iteration: u64,
}

impl Learners {
    pub fn fresh(n_agents: usize, levels: u32) -> Self {
        Self { tables: vec![QTable::zeros(levels); n_agents], iteration: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub offered: u64,
    pub admitted: u64,
    pub blocked: u64,
    pub conflicts: u64,
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
    pub conflicts: Vec<ConflictEvent>,
    /// Present for learning algorithms only.
    pub learners: Option<Learners>,
    /// Exploration rate at the first control iteration (learning algorithms only).
    pub epsilon_start: Option<f64>,
    pub totals: Totals,
    pub duration: f64,
}

impl EpisodeResult {
    /// Served request rate over the whole episode.
    pub fn lambda_out(&self) -> f64 {
        self.totals.admitted as f64 / self.duration
    }

    pub fn lambda_in(&self) -> f64 {
        self.totals.offered as f64 / self.duration
    }

    /// Mean of the per-window efficiency indicator.
    pub fn mean_rei(&self) -> f64 {
        if self.metrics.is_empty() {
            return 0.0;
        }
        self.metrics.iter().map(|m| m.rei).sum::<f64>() / self.metrics.len() as f64
    }
}

/// Hooks into the episode loop, mainly for invariant checks.
pub trait Observer {
    fn on_admission(&mut self, _env: &SliceState) {}
    fn on_control(&mut self, _env: &SliceState, _outcomes: &[ScalingOutcome], _epsilon: Option<f64>) {}
    fn on_window(&mut self, _record: &MetricsRecord) {}
}

impl Observer for () {}

pub fn run_episode(cfg: &SimConfig, learners: Option<Learners>, seed: u64) -> Result<EpisodeResult> {
    run_episode_observed(cfg, learners, seed, 0, &mut ())
}

struct WindowAcc {
    start: f64,
    offered: u64,
    admitted: u64,
    conflicts: u64,
}

pub fn run_episode_observed<O: Observer + ?Sized>(
    cfg: &SimConfig,
    learners: Option<Learners>,
    seed: u64,
    episode: usize,
    observer: &mut O,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let profile = cfg.load_profile()?;
    let sessions = cfg.session_model()?;
    let agent_cfg = cfg.agent_config();
    let thr_cfg = cfg.thr_config();
    let mio = cfg.mio_params();
    let horizon = cfg.episode_duration;
    let n = cfg.n_nfs;

    let mut env = SliceState::new(vec![cfg.n_cpu_init; n], cfg.v_pool, cfg.cpu_capacity, cfg.ac_thr)?;
    let stream = |id| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    let mut traffic = stream(TRAFFIC_STREAM);
    let mut arbiter = stream(ARBITER_STREAM);
    let mut explore = stream(AGENT_STREAM);

    let (mut agents, mut iteration) = if cfg.algorithm.learns() {
        let l = learners.unwrap_or_else(|| Learners::fresh(n, cfg.b_levels));
        if l.tables.len() != n {
            return Err(Error::InvalidConfig(format!("{} q-tables supplied for {n} agents", l.tables.len())));
        }
        if let Some(t) = l.tables.iter().find(|t| t.levels() != cfg.b_levels) {
            return Err(Error::InvalidConfig(format!(
                "q-table has {} levels, config has {}",
                t.levels(),
                cfg.b_levels
            )));
        }
        (l.tables.into_iter().map(QlcAgent::new).collect::<Vec<_>>(), l.iteration)
    } else {
        (Vec::new(), 0)
    };
    let training = cfg.training_iterations();
    let mut epsilon_start = None;

    let control_steps = cfg.iterations_per_episode();
    let mut control_k = 0u64;
    let mut next_arrival = profile.next_arrival(0.0, &mut traffic);
    let mut window = WindowAcc { start: 0.0, offered: 0, admitted: 0, conflicts: 0 };
    let mut window_end = cfg.meas_window.min(horizon);

    let mut metrics = Vec::new();
    let mut totals = Totals::default();
    let mut requests = Vec::with_capacity(n);

    loop {
        let t_arrival = next_arrival.unwrap_or(f64::INFINITY);
        let t_control = if control_k < control_steps { control_k as f64 * cfg.cl_interval } else { f64::INFINITY };

        if window_end <= t_arrival && window_end <= t_control {
            env.advance(window_end)?;
            let len = window_end - window.start;
            let u_mean: Vec<f64> = env.drain_utilization_area().into_iter().map(|a| a / len).collect();
            let (lambda_out, lambda_in) = window_rates(window.admitted, window.offered, len);
            let record = MetricsRecord {
                t_start: window.start,
                t_end: window_end,
                offered: window.offered,
                admitted: window.admitted,
                lambda_in,
                lambda_out,
                rei: rei(&u_mean, cfg.u_t)?,
                u_mean,
                n_cpu_end: env.n_cpu().to_vec(),
                conflicts: window.conflicts,
            };
            observer.on_window(&record);
            metrics.push(record);
            if window_end >= horizon {
                break;
            }
            window = WindowAcc { start: window_end, offered: 0, admitted: 0, conflicts: 0 };
            window_end = (window_end + cfg.meas_window).min(horizon);
            continue;
        }

        if t_arrival <= t_control {
            env.advance(t_arrival)?;
            window.offered += 1;
            totals.offered += 1;
            let session = sessions.sample(t_arrival, n, &mut traffic);
            if env.try_admit(session) {
                window.admitted += 1;
                totals.admitted += 1;
                observer.on_admission(&env);
            } else {
                totals.blocked += 1;
            }
            next_arrival = profile.next_arrival(t_arrival, &mut traffic);
            continue;
        }

        env.advance(t_control)?;
        control_k += 1;
        let u = env.utilizations();
        requests.clear();
        let mut epsilon = None;
        let outcomes =
            match cfg.algorithm {
                Algorithm::Mio => {
                    let sol = mio_allocate(env.load_sums(), &mio)?;
                    env.set_allocation(&sol.allocation)?;
                    Vec::new()
                }
                Algorithm::NoAut => {
                    requests.extend((0..n).map(|agent| ScalingRequest { agent, delta: no_aut_decide() }));
                    env.resolve_scaling(&requests, &mut arbiter)?
                }
                Algorithm::Thr => {
                    requests.extend((0..n).map(|agent| ScalingRequest {
                        agent,
                        delta: thr_decide(u[agent], env.n_cpu()[agent], &thr_cfg),
                    }));
                    env.resolve_scaling(&requests, &mut arbiter)?
                }
                Algorithm::Qlc => {
                    let eps = epsilon_at(iteration, training, &agent_cfg);
                    epsilon_start.get_or_insert(eps);
                    epsilon = Some(eps);
                    for (i, agent) in agents.iter_mut().enumerate() {
                        let action = agent.act(&observe(&u, i), eps, &agent_cfg, &mut explore);
                        requests.push(ScalingRequest { agent: i, delta: action });
                    }
                    let outcomes = env.resolve_scaling(&requests, &mut arbiter)?;
                    let after = env.utilizations();
                    for (agent, o) in agents.iter_mut().zip(&outcomes) {
                        agent.learn(&observe(&after, o.agent), o.granted, &agent_cfg);
                    }
                    iteration += 1;
                    outcomes
                }
            };
        let conflicts =
            outcomes.iter().filter(|o| o.cause == crate::env::ScalingCause::ConflictPoolExhausted).count() as u64;
        window.conflicts += conflicts;
        totals.conflicts += conflicts;
        observer.on_control(&env, &outcomes, epsilon);
    }

    let learners =
        cfg.algorithm.learns().then(|| Learners { tables: agents.into_iter().map(|a| a.table).collect(), iteration });

    Ok(EpisodeResult {
        episode,
        seed,
        metrics,
        conflicts: env.take_conflict_log(),
        learners,
        epsilon_start,
        totals,
        duration: horizon,
    })
}

fn observe(u: &[f64], i: usize) -> AgentObservation {
    AgentObservation {
        u_self: u[i],
        u_neighbors: u.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, &v)| v).collect(),
    }
}

/// Runs `cfg.episodes` consecutive episodes seeded `seed + index`, carrying
/// learned tables and the exploration schedule from one to the next.
pub fn run_experiment(cfg: &SimConfig) -> Result<Vec<EpisodeResult>> {
    run_experiment_observed(cfg, &mut ())
}

pub fn run_experiment_observed<O: Observer + ?Sized>(cfg: &SimConfig, observer: &mut O) -> Result<Vec<EpisodeResult>> {
    cfg.validate()?;
    let mut results: Vec<EpisodeResult> = Vec::with_capacity(cfg.episodes);
    let mut carry = None;
    for e in 0..cfg.episodes {
        let r = run_episode_observed(cfg, carry.take(), episode_seed(cfg.seed, e), e, observer)?;
        carry = r.learners.clone();
        results.push(r);
    }
    Ok(results)
}

pub fn episode_seed(master: u64, episode: usize) -> u64 {
    master.wrapping_add(episode as u64)
}

/// Final episode of an experiment. Non-learning policies carry nothing
/// between episodes, so only the last episode is simulated for them.
pub fn final_episode(cfg: &SimConfig) -> Result<EpisodeResult> {
    if cfg.algorithm.learns() {
        run_experiment(cfg)?.pop().ok_or_else(|| Error::InvalidConfig("no episodes".into()))
    } else {
        cfg.validate()?;
        let last = cfg.episodes - 1;
        run_episode_observed(cfg, None, episode_seed(cfg.seed, last), last, &mut ())
    }
}

pub fn qtable_path(dir: &Path, agent: usize) -> PathBuf {
    dir.join(format!("qtable_agent{}.csv", agent + 1))
}

pub fn save_qtable(path: &Path, table: &QTable) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    table.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_qtable(path: &Path, levels: u32) -> Result<QTable> {
    let input = BufReader::new(File::open(path)?);
    QTable::read_csv(input, levels, path)
}

/// Writes one CSV per agent into `dir`.
pub fn save_qtables(dir: &Path, tables: &[QTable]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, t) in tables.iter().enumerate() {
        save_qtable(&qtable_path(dir, i), t)?;
    }
    Ok(())
}

pub fn load_qtables(dir: &Path, n_agents: usize, levels: u32) -> Result<Vec<QTable>> {
    (0..n_agents).map(|i| load_qtable(&qtable_path(dir, i), levels)).collect()
}
