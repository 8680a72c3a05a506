//! Tabular Q-learning agent with a neighbour-aware composite state.
//!
//! Each agent sees its own utilization and those of its neighbours and folds
//! them into two small discrete coordinates: how loaded the group is relative
//! to the target, and whether this agent sits above or below the group mean.
//! The table size therefore depends only on the number of loading levels,
//! never on how many neighbours there are.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_init: f64,
    pub epsilon_final: f64,
    /// Half-width of the loading-level axis; the axis has `2 * levels + 1` buckets.
    pub levels: u32,
    pub reward_k: f64,
    pub reward_delta: f64,
    pub u_target: f64,
    pub balance_deadband: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.9,
            epsilon_init: 0.9,
            epsilon_final: 0.0001,
            levels: 2,
            reward_k: 10.0,
            reward_delta: 0.05,
            u_target: 0.5,
            balance_deadband: 0.01,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        for (name, e) in [("epsilon_init", self.epsilon_init), ("epsilon_final", self.epsilon_final)] {
            if !(e > 0.0 && e <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {e}"));
            }
        }
        if self.epsilon_final > self.epsilon_init {
            return bad("epsilon_final exceeds epsilon_init".into());
        }
        if self.levels == 0 {
            return bad("b_levels must be at least 1".into());
        }
        if !(self.reward_k > 0.0) {
            return bad(format!("reward_k must be positive, got {}", self.reward_k));
        }
        if !(self.reward_delta > 0.0) {
            return bad(format!("reward_delta must be positive, got {}", self.reward_delta));
        }
        if !(self.u_target > 0.0) {
            return bad(format!("u_t must be positive, got {}", self.u_target));
        }
        if !(self.balance_deadband >= 0.0) {
            return bad(format!("balance_deadband must be non-negative, got {}", self.balance_deadband));
        }
        Ok(())
    }
}

/// Loading level relative to the target plus the sign of this agent's
/// deviation from the group mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CompositeState {
    pub load: i32,
    pub balance: i32,
}

impl CompositeState {
    pub fn count(levels: u32) -> usize {
        (2 * levels as usize + 1) * 3
    }

    pub fn index(self, levels: u32) -> usize {
        let b = levels as i32;
        debug_assert!((-b..=b).contains(&self.load) && (-1..=1).contains(&self.balance));
        ((self.load + b) * 3 + (self.balance + 1)) as usize
    }

    pub fn from_index(index: usize, levels: u32) -> Self {
        let b = levels as i32;
        let i = index as i32;
        Self { load: i / 3 - b, balance: i % 3 - 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentObservation {
    pub u_self: f64,
    pub u_neighbors: Vec<f64>,
}

pub fn encode_state(obs: &AgentObservation, cfg: &AgentConfig) -> CompositeState {
    let group = obs.u_neighbors.len() as f64 + 1.0;
    let mean = (obs.u_self + obs.u_neighbors.iter().sum::<f64>()) / group;
    let b = cfg.levels as i32;
    let width = cfg.u_target / cfg.levels as f64;
    let load = (((mean - cfg.u_target) / width).round() as i32).clamp(-b, b);
    let du = obs.u_self - mean;
    let balance = if du < -cfg.balance_deadband {
        -1
    } else if du > cfg.balance_deadband {
        1
    } else {
        0
    };
    CompositeState { load, balance }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    levels: u32,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(levels: u32) -> Self {
        Self { levels, values: vec![0.0; CompositeState::count(levels) * Action::COUNT] }
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: CompositeState, a: Action) -> f64 {
        self.values[self.slot(s, a)]
    }

    pub fn set(&mut self, s: CompositeState, a: Action, v: f64) {
        let k = self.slot(s, a);
        self.values[k] = v;
    }

    pub fn row(&self, s: CompositeState) -> &[f64] {
        let start = s.index(self.levels) * Action::COUNT;
        &self.values[start..start + Action::COUNT]
    }

    pub fn row_mut(&mut self, s: CompositeState) -> &mut [f64] {
        let start = s.index(self.levels) * Action::COUNT;
        &mut self.values[start..start + Action::COUNT]
    }

    pub fn max_value(&self, s: CompositeState) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn slot(&self, s: CompositeState, a: Action) -> usize {
        s.index(self.levels) * Action::COUNT + a.index()
    }

    /// Writes `s_load,s_balance,action,q_value` rows; values use 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "s_load,s_balance,action,q_value")?;
        for s in 0..CompositeState::count(self.levels) {
            let state = CompositeState::from_index(s, self.levels);
            for a in Action::ALL {
                writeln!(out, "{},{},{},{:.16e}", state.load, state.balance, a.delta(), self.get(state, a))?;
            }
        }
        Ok(())
    }

    /// Parses a table written by [`QTable::write_csv`]. `origin` only labels errors.
    pub fn read_csv<R: BufRead>(input: R, levels: u32, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
        let mut table = QTable::zeros(levels);
        let mut seen = vec![false; table.len()];
        let mut rows = 0usize;
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "s_load,s_balance,action,q_value" => {}
            Some((_, Ok(h))) => return Err(parse_err(1, format!("unexpected header {h:?}"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(parse_err(1, "missing header".into())),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err(lineno, format!("expected 4 fields, found {}", fields.len())));
            }
            let int =
                |k: usize| fields[k].parse::<i32>().map_err(|e| parse_err(lineno, format!("field {}: {e}", k + 1)));
            let (load, balance, delta) = (int(0)?, int(1)?, int(2)?);
            let value: f64 = fields[3].parse().map_err(|e| parse_err(lineno, format!("q_value: {e}")))?;
            if !value.is_finite() {
                return Err(parse_err(lineno, "q_value is not finite".into()));
            }
            let b = levels as i32;
            if !(-b..=b).contains(&load) || !(-1..=1).contains(&balance) {
                return Err(parse_err(lineno, format!("state ({load}, {balance}) out of range")));
            }
            let action = Action::new(delta).ok_or_else(|| parse_err(lineno, format!("invalid action {delta}")))?;
            let state = CompositeState { load, balance };
            let k = table.slot(state, action);
            if seen[k] {
                return Err(parse_err(lineno, "duplicate entry".into()));
            }
            seen[k] = true;
            table.values[k] = value;
            rows += 1;
        }
        if rows != table.len() {
            return Err(Error::ShapeMismatch { expected: table.len(), found: rows });
        }
        Ok(table)
    }
}

/// Epsilon-greedy choice; greedy ties are broken uniformly.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: CompositeState, epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        return Action::from_index(rng.random_range(0..Action::COUNT));
    }
    let row = q.row(s);
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut ties = [0usize; Action::COUNT];
    let mut n = 0;
    for (i, &v) in row.iter().enumerate() {
        if v == best {
            ties[n] = i;
            n += 1;
        }
    }
    let pick = if n == 1 { ties[0] } else { ties[rng.random_range(0..n)] };
    Action::from_index(pick)
}

/// Scaling actions are paid by how much closer they moved utilization to
/// the target; holding is paid by how close utilization already is. An
/// ungranted action changes nothing and earns zero.
pub fn reward(u_before: f64, u_after: f64, action: Action, granted: bool, cfg: &AgentConfig) -> f64 {
    let target = cfg.u_target;
    if action != Action::HOLD {
        let u_after = if granted { u_after } else { u_before };
        cfg.reward_k * ((u_before - target).abs() - (u_after - target).abs())
    } else {
        target * target / ((u_before - target).powi(2) + cfg.reward_delta.powi(2))
    }
}

/// One temporal-difference step; returns the new value of `q(s, a)`.
pub fn update_q(
    q: &mut QTable,
    s: CompositeState,
    a: Action,
    r: f64,
    s_next: CompositeState,
    cfg: &AgentConfig,
) -> f64 {
    let old = q.get(s, a);
    let target = r + cfg.gamma * q.max_value(s_next);
    let new = old + cfg.alpha * (target - old);
    q.set(s, a, new);
    new
}

/// Exploration rate after `iteration` control steps out of `total` training
/// steps. Decays geometrically and bottoms out at 80% of training.
pub fn epsilon_at(iteration: u64, total: u64, cfg: &AgentConfig) -> f64 {
    let (e0, e1) = (cfg.epsilon_init, cfg.epsilon_final);
    let horizon = 0.8 * total.max(1) as f64;
    let decay = (e1 / e0).powf(1.0 / horizon);
    (e0 * decay.powf(iteration as f64)).max(e1)
}

/// One learner: its table and the observation it acted on.
#[derive(Clone, Debug)]
pub struct QlcAgent {
    pub table: QTable,
    pending: Option<(CompositeState, Action, f64)>,
}

impl QlcAgent {
    pub fn new(table: QTable) -> Self {
        Self { table, pending: None }
    }

    pub fn act<R: Rng + ?Sized>(
        &mut self,
        obs: &AgentObservation,
        epsilon: f64,
        cfg: &AgentConfig,
        rng: &mut R,
    ) -> Action {
        let s = encode_state(obs, cfg);
        let a = select_action(&self.table, s, epsilon, rng);
        self.pending = Some((s, a, obs.u_self));
        a
    }

    /// Learns from the post-resolution observation of the last action.
    pub fn learn(&mut self, after: &AgentObservation, granted: bool, cfg: &AgentConfig) -> Option<f64> {
        let (s, a, u_before) = self.pending.take()?;
        let r = reward(u_before, after.u_self, a, granted, cfg);
        let s_next = encode_state(after, cfg);
        update_q(&mut self.table, s, a, r, s_next, cfg);
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(u_self: f64, n: &[f64]) -> AgentObservation {
        AgentObservation { u_self, u_neighbors: n.to_vec() }
    }

    fn act(d: i32) -> Action {
        Action::new(d).unwrap()
    }

    #[test]
    fn encode_on_target_is_origin() {
        let cfg = AgentConfig::default();
        assert_eq!(encode_state(&obs(0.5, &[0.5]), &cfg), CompositeState { load: 0, balance: 0 });
    }

    #[test]
    fn encode_imbalanced_pair() {
        let cfg = AgentConfig::default();
        assert_eq!(encode_state(&obs(0.6, &[0.4]), &cfg), CompositeState { load: 0, balance: 1 });
        assert_eq!(encode_state(&obs(0.4, &[0.6]), &cfg), CompositeState { load: 0, balance: -1 });
    }

    #[test]
    fn encode_clamps_overload() {
        let cfg = AgentConfig::default();
        assert_eq!(encode_state(&obs(1.2, &[1.2]), &cfg), CompositeState { load: 2, balance: 0 });
        assert_eq!(encode_state(&obs(0.0, &[0.0]), &cfg), CompositeState { load: -2, balance: 0 });
    }

    #[test]
    fn state_index_round_trip() {
        for levels in 1..5 {
            let n = CompositeState::count(levels);
            for i in 0..n {
                assert_eq!(CompositeState::from_index(i, levels).index(levels), i);
            }
        }
        assert_eq!(QTable::zeros(2).len(), 75);
    }

    #[test]
    fn greedy_picks_unique_max() {
        let mut q = QTable::zeros(2);
        let s = CompositeState { load: 1, balance: -1 };
        q.row_mut(s).copy_from_slice(&[0.0, 0.0, 3.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(select_action(&q, s, 0.0, &mut rng), Action::HOLD);
        }
    }

    fn frequencies(q: &QTable, s: CompositeState, eps: f64, seed: u64) -> [f64; 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[select_action(q, s, eps, &mut rng).index()] += 1;
        }
        counts.map(|c| c as f64 / n as f64)
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut q = QTable::zeros(2);
        let s = CompositeState { load: 0, balance: 0 };
        q.row_mut(s).copy_from_slice(&[0.0, 0.0, 3.0, 0.0, 0.0]);
        for f in frequencies(&q, s, 1.0, 2) {
            assert!((0.195..=0.205).contains(&f), "{f}");
        }
    }

    #[test]
    fn greedy_ties_are_uniform() {
        let q = QTable::zeros(2);
        let s = CompositeState { load: 0, balance: 0 };
        for f in frequencies(&q, s, 0.0, 3) {
            assert!((0.19..=0.21).contains(&f), "{f}");
        }
    }

    #[test]
    fn reward_for_granted_scale_up() {
        let cfg = AgentConfig::default();
        assert_relative_eq!(reward(0.8, 0.6, act(1), true, &cfg), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_for_conflict_is_zero() {
        let cfg = AgentConfig::default();
        assert_eq!(reward(0.8, 0.8, act(2), false, &cfg), 0.0);
        // Ungranted actions ignore whatever post-value the caller passes.
        assert_eq!(reward(0.8, 0.4, act(2), false, &cfg), 0.0);
    }

    #[test]
    fn reward_for_holding_on_target() {
        let cfg = AgentConfig::default();
        assert_relative_eq!(reward(0.5, 0.5, Action::HOLD, true, &cfg), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn bellman_step() {
        let cfg = AgentConfig::default();
        let mut q = QTable::zeros(2);
        let s = CompositeState { load: 0, balance: 0 };
        let s2 = CompositeState { load: 1, balance: 0 };
        q.set(s2, act(-1), 1.0);
        let v = update_q(&mut q, s, act(1), 2.0, s2, &cfg);
        assert_relative_eq!(v, 1.45, epsilon = 1e-12);
        let changed = q.values().iter().filter(|&&x| x != 0.0).count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn zero_reward_on_zero_table_is_fixed_point() {
        let cfg = AgentConfig::default();
        let mut q = QTable::zeros(2);
        let s = CompositeState { load: 0, balance: 0 };
        assert_eq!(update_q(&mut q, s, Action::HOLD, 0.0, s, &cfg), 0.0);
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    fn self_loop_error(alpha: f64, iterations: usize) -> f64 {
        let cfg = AgentConfig { alpha, ..AgentConfig::default() };
        let mut q = QTable::zeros(2);
        let s = CompositeState { load: 0, balance: 0 };
        // Only one action is ever valued, so the row max is that entry.
        for _ in 0..iterations {
            update_q(&mut q, s, Action::HOLD, 1.0, s, &cfg);
        }
        (q.get(s, Action::HOLD) - 10.0).abs()
    }

    #[test]
    fn self_loop_converges_to_geometric_sum() {
        // Error shrinks by 1 - alpha * (1 - gamma) per step: 0.95 at alpha = 0.5,
        // so 10 * 0.95^k < 1e-6 first holds at k = 315.
        assert!(self_loop_error(0.5, 315) < 1e-6);
        assert!(self_loop_error(0.5, 200) > 1e-6);
        assert!(self_loop_error(1.0, 200) < 1e-6);
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let cfg = AgentConfig::default();
        let total = 200_000;
        assert_relative_eq!(epsilon_at(0, total, &cfg), 0.9, epsilon = 1e-15);
        assert_relative_eq!(epsilon_at(160_000, total, &cfg), 0.0001, max_relative = 1e-9);
        assert_eq!(epsilon_at(170_000, total, &cfg), 0.0001);
        assert_eq!(epsilon_at(total, total, &cfg), 0.0001);
        let mut prev = f64::INFINITY;
        for k in (0..total).step_by(997) {
            let e = epsilon_at(k, total, &cfg);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut q = QTable::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in q.values.iter_mut() {
            *v = rng.random::<f64>() * 1e3 - 500.0;
        }
        q.values[3] = 1.0 / 3.0;
        q.values[4] = -0.0;
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let back = QTable::read_csv(buf.as_slice(), 2, Path::new("mem")).unwrap();
        for (a, b) in q.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_header_only_is_shape_error() {
        let input = "s_load,s_balance,action,q_value\n";
        assert!(matches!(
            QTable::read_csv(input.as_bytes(), 2, Path::new("x")),
            Err(Error::ShapeMismatch { expected: 75, found: 0 })
        ));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let input = "s_load,s_balance,action,q_value\n0,0,0,1.0\n0,0,1,abc\n";
        match QTable::read_csv(input.as_bytes(), 2, Path::new("t.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let input = "s_load,s_balance,action,q_value\n3,0,0,1.0\n";
        assert!(matches!(QTable::read_csv(input.as_bytes(), 2, Path::new("t")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let mut c = AgentConfig::default();
        c.epsilon_final = 0.95;
        assert!(c.validate().is_err());
        let mut c = AgentConfig::default();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = AgentConfig::default();
        c.reward_delta = 0.0;
        assert!(c.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn balance_never_flips_under_scaling(a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.1f64..10.0) {
                let mut cfg = AgentConfig::default();
                cfg.balance_deadband = 0.0;
                let s1 = encode_state(&obs(a, &[b]), &cfg);
                let s2 = encode_state(&obs(a * c, &[b * c]), &cfg);
                prop_assert_eq!(s1.balance, s2.balance);
            }

            #[test]
            fn balance_is_antisymmetric(a in 0.0f64..2.0, b in 0.0f64..2.0) {
                let cfg = AgentConfig::default();
                prop_assume!((a - b).abs() > 2.0 * cfg.balance_deadband + 1e-12);
                let s1 = encode_state(&obs(a, &[b]), &cfg);
                let s2 = encode_state(&obs(b, &[a]), &cfg);
                prop_assert_eq!(s1.balance, -s2.balance);
                prop_assert!(s1.balance != 0);
            }

            #[test]
            fn encoding_is_in_range(a in 0.0f64..5.0, ns in proptest::collection::vec(0.0f64..5.0, 1..4), levels in 1u32..5) {
                let cfg = AgentConfig { levels, ..AgentConfig::default() };
                let s = encode_state(&obs(a, &ns), &cfg);
                prop_assert!(s.load.abs() <= levels as i32);
                prop_assert!(s.balance.abs() <= 1);
                prop_assert_eq!(s, encode_state(&obs(a, &ns), &cfg));
            }

            #[test]
            fn hold_reward_peaks_at_target(u in 0.0f64..2.0, v in 0.0f64..2.0) {
                let cfg = AgentConfig::default();
                let t = cfg.u_target;
                let peak = t * t / (cfg.reward_delta * cfg.reward_delta);
                let ru = reward(u, u, Action::HOLD, true, &cfg);
                prop_assert!(ru <= peak + 1e-9);
                let rv = reward(v, v, Action::HOLD, true, &cfg);
                if (u - t).abs() < (v - t).abs() {
                    prop_assert!(ru > rv);
                }
            }

            #[test]
            fn zero_alpha_leaves_table(r in -10.0f64..10.0, si in 0usize..15, ni in 0usize..15, ai in 0usize..5) {
                let cfg = AgentConfig { alpha: 0.0, ..AgentConfig::default() };
                let mut q = QTable::zeros(2);
                for (k, v) in q.values.iter_mut().enumerate() {
                    *v = k as f64 * 0.5;
                }
                let before = q.clone();
                update_q(&mut q, CompositeState::from_index(si, 2), Action::from_index(ai), r, CompositeState::from_index(ni, 2), &cfg);
                prop_assert_eq!(q, before);
            }

            #[test]
            fn greedy_ignores_row_offset(row in proptest::array::uniform5(-5i32..5), shift in -100.0f64..100.0, seed in any::<u64>()) {
                let s = CompositeState { load: 0, balance: 0 };
                let mut q1 = QTable::zeros(2);
                let mut q2 = QTable::zeros(2);
                for (i, v) in row.iter().enumerate() {
                    q1.row_mut(s)[i] = *v as f64;
                    q2.row_mut(s)[i] = *v as f64 + shift.round();
                }
                let mut r1 = ChaCha8Rng::seed_from_u64(seed);
                let mut r2 = ChaCha8Rng::seed_from_u64(seed);
                prop_assert_eq!(select_action(&q1, s, 0.0, &mut r1), select_action(&q2, s, 0.0, &mut r2));
            }
        }
    }
}
