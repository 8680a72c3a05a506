//! The network slice: a shared CPU pool split across network functions,
//! the set of active user sessions, admission control and the arbitration of
//! concurrent scaling requests.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::load::UeSession;

/// A scaling step: change a function's CPU count by -2..=+2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(i8);

impl Action {
    pub const HOLD: Action = Action(0);
    pub const ALL: [Action; 5] = [Action(-2), Action(-1), Action(0), Action(1), Action(2)];
    pub const COUNT: usize = 5;

    pub fn new(delta: i32) -> Option<Action> {
        (-2..=2).contains(&delta).then_some(Action(delta as i8))
    }

    pub fn delta(self) -> i32 {
        self.0 as i32
    }

    /// Position in [`Action::ALL`].
    pub fn index(self) -> usize {
        (self.0 + 2) as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalingRequest {
    pub agent: usize,
    pub delta: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingCause {
    Applied,
    ConflictPoolExhausted,
    InvalidBelowFloor,
    NoOp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalingOutcome {
    pub agent: usize,
    pub delta: Action,
    pub granted: bool,
    pub cause: ScalingCause,
}

/// A scale-up attempt rejected because the pool was exhausted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConflictEvent {
    pub t: f64,
    pub agent: usize,
    pub delta: Action,
}

/// Writes the conflict log as `t,agent,delta` rows.
pub fn write_conflict_csv<W: Write>(mut out: W, events: &[ConflictEvent]) -> std::io::Result<()> {
    writeln!(out, "t,agent,delta")?;
    for e in events {
        writeln!(out, "{:.6},{},{}", e.t, e.agent, e.delta.delta())?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Active {
    departure: f64,
    seq: u64,
    loads: Vec<f64>,
}

impl PartialEq for Active {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Active {}

impl PartialOrd for Active {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Active {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest departure.
    fn cmp(&self, other: &Self) -> Ordering {
        other.departure.total_cmp(&self.departure).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Debug)]
pub struct SliceState {
    n_cpu: Vec<u32>,
    v_pool: u32,
    capacity: f64,
    ac_thr: f64,
    clock: f64,
    active: BinaryHeap<Active>,
    load_sums: Vec<f64>,
    next_seq: u64,
    admitted: u64,
    blocked: u64,
    // Time integral of each function's utilization since the last drain.
    util_area: Vec<f64>,
    conflicts: Vec<ConflictEvent>,
}

impl SliceState {
    pub fn new(n_cpu: Vec<u32>, v_pool: u32, capacity: f64, ac_thr: f64) -> Result<Self> {
        if n_cpu.is_empty() {
            return Err(Error::InvalidConfig("slice needs at least one network function".into()));
        }
        if n_cpu.contains(&0) {
            return Err(Error::InvalidConfig("every function needs at least one CPU".into()));
        }
        let used: u64 = n_cpu.iter().map(|&n| n as u64).sum();
        if used > v_pool as u64 {
            return Err(Error::InvalidConfig(format!("initial allocation {used} exceeds pool {v_pool}")));
        }
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::InvalidConfig(format!("cpu capacity must be positive, got {capacity}")));
        }
        let n = n_cpu.len();
        Ok(Self {
            n_cpu,
            v_pool,
            capacity,
            ac_thr,
            clock: 0.0,
            active: BinaryHeap::new(),
            load_sums: vec![0.0; n],
            next_seq: 0,
            admitted: 0,
            blocked: 0,
            util_area: vec![0.0; n],
            conflicts: Vec::new(),
        })
    }

    pub fn n_nfs(&self) -> usize {
        self.n_cpu.len()
    }

    pub fn n_cpu(&self) -> &[u32] {
        &self.n_cpu
    }

    pub fn v_pool(&self) -> u32 {
        self.v_pool
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn ac_thr(&self) -> f64 {
        self.ac_thr
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn free_pool(&self) -> u32 {
        self.v_pool - self.n_cpu.iter().sum::<u32>()
    }

    pub fn active_sessions(&self) -> usize {
        self.active.len()
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn blocked(&self) -> u64 {
        self.blocked
    }

    pub fn conflict_log(&self) -> &[ConflictEvent] {
        &self.conflicts
    }

    pub fn take_conflict_log(&mut self) -> Vec<ConflictEvent> {
        std::mem::take(&mut self.conflicts)
    }

    /// Sum of per-session demand on each function.
    pub fn load_sums(&self) -> &[f64] {
        &self.load_sums
    }

    /// Utilization of function `nf` with the sessions active at the current clock.
    pub fn utilization(&self, nf: usize) -> f64 {
        self.load_sums[nf] / (self.n_cpu[nf] as f64 * self.capacity)
    }

    pub fn utilizations(&self) -> Vec<f64> {
        (0..self.n_nfs()).map(|i| self.utilization(i)).collect()
    }

    /// Returns the accumulated utilization-seconds per function and resets them.
    pub fn drain_utilization_area(&mut self) -> Vec<f64> {
        let n = self.n_nfs();
        std::mem::replace(&mut self.util_area, vec![0.0; n])
    }

    fn accumulate_to(&mut self, t: f64) {
        let dt = t - self.clock;
        if dt > 0.0 {
            for i in 0..self.n_nfs() {
                self.util_area[i] += self.utilization(i) * dt;
            }
        }
        self.clock = t;
    }

    /// Expires every session whose departure time is at or before `t` and moves the clock to `t`.
    pub fn advance(&mut self, t: f64) -> Result<usize> {
        if t < self.clock {
            return Err(Error::BackwardsTime { now: self.clock, to: t });
        }
        let mut expired = 0;
        while self.active.peek().is_some_and(|s| s.departure <= t) {
            let s = self.active.pop().expect("peeked");
            self.accumulate_to(s.departure.max(self.clock));
            for (sum, l) in self.load_sums.iter_mut().zip(&s.loads) {
                *sum -= l;
            }
            expired += 1;
        }
        if self.active.is_empty() {
            // Clear accumulated rounding once the slice is idle.
            self.load_sums.iter_mut().for_each(|s| *s = 0.0);
        }
        self.accumulate_to(t);
        Ok(expired)
    }

    /// Admission control at the current clock. A session is admitted when no
    /// function would exceed the admission threshold after taking its load.
    pub fn try_admit(&mut self, session: UeSession) -> bool {
        assert_eq!(session.load_per_nf.len(), self.n_nfs(), "session load vector length");
        let fits = session
            .load_per_nf
            .iter()
            .enumerate()
            .all(|(i, &l)| (self.load_sums[i] + l) / (self.n_cpu[i] as f64 * self.capacity) <= self.ac_thr);
        if !fits {
            self.blocked += 1;
            return false;
        }
        for (sum, l) in self.load_sums.iter_mut().zip(&session.load_per_nf) {
            *sum += l;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.active.push(Active { departure: session.departure(), seq, loads: session.load_per_nf });
        self.admitted += 1;
        true
    }

    /// Applies one request per agent in uniformly random order. Scale-ups
    /// that do not fit in the free pool are rejected as conflicts and logged
    /// at the current clock.
    pub fn resolve_scaling<R: Rng + ?Sized>(
        &mut self,
        requests: &[ScalingRequest],
        rng: &mut R,
    ) -> Result<Vec<ScalingOutcome>> {
        let mut seen = vec![false; self.n_nfs()];
        for r in requests {
            let slot = seen.get_mut(r.agent).ok_or(Error::UnknownAgent(r.agent))?;
            if *slot {
                return Err(Error::DuplicateRequest(r.agent));
            }
            *slot = true;
        }

        let mut order: Vec<usize> = (0..requests.len()).collect();
        order.shuffle(rng);

        let mut outcomes: Vec<Option<ScalingOutcome>> = vec![None; requests.len()];
        for k in order {
            let ScalingRequest { agent, delta } = requests[k];
            let d = delta.delta();
            let cause = match d.cmp(&0) {
                Ordering::Equal => ScalingCause::NoOp,
                Ordering::Less => {
                    if self.n_cpu[agent] as i32 + d >= 1 {
                        self.n_cpu[agent] = (self.n_cpu[agent] as i32 + d) as u32;
                        ScalingCause::Applied
                    } else {
                        ScalingCause::InvalidBelowFloor
                    }
                }
                Ordering::Greater => {
                    if self.free_pool() as i32 >= d {
                        self.n_cpu[agent] += d as u32;
                        ScalingCause::Applied
                    } else {
                        self.conflicts.push(ConflictEvent { t: self.clock, agent, delta });
                        ScalingCause::ConflictPoolExhausted
                    }
                }
            };
            let granted = !matches!(cause, ScalingCause::ConflictPoolExhausted | ScalingCause::InvalidBelowFloor);
            outcomes[k] = Some(ScalingOutcome { agent, delta, granted, cause });
        }
        Ok(outcomes.into_iter().map(|o| o.expect("every request processed")).collect())
    }

    /// Replaces the allocation wholesale (centralized orchestration).
    pub fn set_allocation(&mut self, allocation: &[u32]) -> Result<()> {
        if allocation.len() != self.n_nfs() {
            return Err(Error::Infeasible(format!(
                "allocation has {} entries for {} functions",
                allocation.len(),
                self.n_nfs()
            )));
        }
        if allocation.contains(&0) || allocation.iter().sum::<u32>() > self.v_pool {
            return Err(Error::Infeasible(format!("{allocation:?} does not fit pool {}", self.v_pool)));
        }
        self.n_cpu.copy_from_slice(allocation);
        Ok(())
    }
}
