//! Adversary strategies. The adversary accrues budget at `T` cost units per
//! second and spends it on entrance puzzles for bad IDs and, when it chooses
//! to, on purge puzzles that keep them alive.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    None,
    /// Spend everything affordable at periodic instants.
    Burst,
    /// Join at the constant rate the budget sustains against the current
    /// cost function; bad IDs drop out at purges.
    UniformOptimal,
    /// Burst, and pay purge puzzles to keep bad IDs alive.
    Sustain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    #[serde(default)]
    pub strategy: Strategy,
    /// Budget accrual `T` in cost units per second.
    #[serde(default)]
    pub spend_rate: f64,
    #[serde(default)]
    pub pay_purges: bool,
    #[serde(default = "default_burst_period")]
    pub burst_period_s: f64,
    /// Uniform batches are `1/batch_divisor` of the expected joins per window.
    #[serde(default = "default_batch_divisor")]
    pub batch_divisor: u64,
}

fn default_burst_period() -> f64 {
    100.0
}

fn default_batch_divisor() -> u64 {
    32
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            strategy: Strategy::None,
            spend_rate: 0.0,
            pay_purges: false,
            burst_period_s: default_burst_period(),
            batch_divisor: default_batch_divisor(),
        }
    }
}

impl AdversaryConfig {
    pub fn new(strategy: Strategy, spend_rate: f64) -> Self {
        AdversaryConfig { strategy, spend_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.spend_rate >= 0.0 && self.spend_rate.is_finite()) {
            return Err(format!("spend rate {} must be a finite non-negative number", self.spend_rate));
        }
        if !(self.burst_period_s > 0.0) {
            return Err("burst period must be positive".into());
        }
        if self.batch_divisor == 0 {
            return Err("batch divisor must be positive".into());
        }
        Ok(())
    }

    pub fn pays_purges(&self) -> bool {
        self.pay_purges || self.strategy == Strategy::Sustain
    }
}

/// Integer budget accrued continuously at `rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub rate: f64,
    pub spent: u64,
}

impl Budget {
    pub fn new(rate: f64) -> Self {
        Budget { rate, spent: 0 }
    }

    pub fn accrued(&self, now: f64) -> u64 {
        (self.rate * now.max(0.0) + 1e-9).floor() as u64
    }

    pub fn available(&self, now: f64) -> u64 {
        self.accrued(now).saturating_sub(self.spent)
    }

    /// Charges `amount` if affordable at `now`.
    pub fn try_spend(&mut self, amount: u64, now: f64) -> bool {
        if amount <= self.available(now) {
            self.spent += amount;
            true
        } else {
            false
        }
    }

    /// Earliest time at which `amount` more is affordable.
    pub fn ready_at(&self, amount: u64) -> f64 {
        if self.rate <= 0.0 {
            return f64::INFINITY;
        }
        let need = self.spent + amount;
        let mut t = need as f64 / self.rate;
        while self.accrued(t) < need {
            t = t.next_up();
        }
        t
    }
}

/// Cost of `k` back-to-back joins into a window that already holds `w`:
/// `(w+1) + (w+2) + … + (w+k)`.
pub fn gmcom_batch_cost(k: u64, w: u64) -> u64 {
    k.saturating_mul(1 + w).saturating_add(k.saturating_mul(k.saturating_sub(1)) / 2)
}

/// Largest `k` with `gmcom_batch_cost(k, w) ≤ budget`.
pub fn gmcom_affordable(budget: u64, w: u64) -> u64 {
    // k² + (2w+1)k − 2B ≤ 0, refined for rounding.
    let b = 2.0 * w as f64 + 1.0;
    let mut k = ((-b + (b * b + 8.0 * budget as f64).sqrt()) / 2.0).floor().max(0.0) as u64;
    while k > 0 && gmcom_batch_cost(k, w) > budget {
        k -= 1;
    }
    while gmcom_batch_cost(k + 1, w) <= budget {
        k += 1;
    }
    k
}

/// Bad join rate `J` with `J·(1 + J/J̃) = T`: every join pays one plus the
/// joins already in its `1/J̃` window.
pub fn gmcom_uniform_rate(spend_rate: f64, j_tilde: f64) -> f64 {
    if spend_rate <= 0.0 {
        return 0.0;
    }
    j_tilde * (-1.0 + (1.0 + 4.0 * spend_rate / j_tilde).sqrt()) / 2.0
}

/// Against flat unit entrance costs the whole budget buys joins.
pub fn ccom_uniform_rate(spend_rate: f64) -> f64 {
    spend_rate
}

/// Bad IDs the adversary keeps through a purge: limited by what it can pay
/// and by its share of total computational power.
pub fn purge_survivors(bad_present: u64, good_responders: u64, alpha: f64, available: u64) -> u64 {
    let power_cap = if alpha <= 0.0 { 0 } else { (alpha / (1.0 - alpha) * good_responders as f64 + 1e-9).floor() as u64 };
    bad_present.min(available).min(power_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModel {
    /// Every join costs one.
    Flat,
    /// Cost rises with joins in the current window.
    Windowed,
    /// Per-period upkeep of `cost` for each live ID.
    Upkeep { join_cost: u64 },
}

/// Public protocol state the adversary reads before acting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolObservation {
    pub cost_model: CostModel,
    /// Admissions left before the next purge fires.
    pub headroom: u64,
    /// Joins currently counted by the entrance window.
    pub window_count: u64,
    pub j_tilde: f64,
}

impl ProtocolObservation {
    /// Cost of admitting `k` IDs right now.
    pub fn batch_cost(&self, k: u64) -> u64 {
        match self.cost_model {
            CostModel::Flat => k,
            CostModel::Windowed => gmcom_batch_cost(k, self.window_count),
            CostModel::Upkeep { join_cost } => k * join_cost,
        }
    }

    pub fn affordable(&self, budget: u64) -> u64 {
        match self.cost_model {
            CostModel::Flat => budget,
            CostModel::Windowed => gmcom_affordable(budget, self.window_count),
            CostModel::Upkeep { join_cost } => budget / join_cost.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Join `count` bad IDs now; `spacing` is how long until the next batch
    /// under a steady schedule (zero for bursts).
    Join { count: u64, spacing: f64 },
    /// Nothing to do before this time.
    Wait { until: f64 },
}

#[derive(Debug, Clone)]
pub struct Adversary {
    pub config: AdversaryConfig,
    pub budget: Budget,
    next_uniform: f64,
    next_burst: f64,
    bursting: bool,
}

impl Adversary {
    pub fn new(config: AdversaryConfig) -> Self {
        Adversary {
            budget: Budget::new(config.spend_rate),
            next_uniform: 0.0,
            next_burst: config.burst_period_s,
            bursting: false,
            config,
        }
    }

    /// Steady-state bad join rate against the observed cost function.
    pub fn uniform_rate(&self, obs: &ProtocolObservation) -> f64 {
        let t = self.config.spend_rate;
        match obs.cost_model {
            CostModel::Flat => ccom_uniform_rate(t),
            CostModel::Windowed => gmcom_uniform_rate(t, obs.j_tilde),
            CostModel::Upkeep { join_cost } => t / join_cost.max(1) as f64,
        }
    }

    fn uniform_batch(&self, obs: &ProtocolObservation, rate: f64) -> u64 {
        let per_window = match obs.cost_model {
            CostModel::Windowed => rate / obs.j_tilde,
            _ => f64::INFINITY,
        };
        let q = ((per_window / self.config.batch_divisor as f64).floor() as u64).max(1);
        q.min(obs.headroom)
    }

    /// What to do at `now`. A `Join` must be followed by [`joined`](Self::joined)
    /// once the engine has charged the actual cost.
    pub fn decide(&mut self, obs: &ProtocolObservation, now: f64) -> Action {
        if self.config.spend_rate <= 0.0 || obs.headroom == 0 {
            return Action::Wait { until: f64::INFINITY };
        }
        match self.config.strategy {
            Strategy::None => Action::Wait { until: f64::INFINITY },
            Strategy::UniformOptimal => {
                if now < self.next_uniform {
                    return Action::Wait { until: self.next_uniform };
                }
                let rate = self.uniform_rate(obs);
                let q = self.uniform_batch(obs, rate);
                let cost = obs.batch_cost(q);
                if cost > self.budget.available(now) {
                    return Action::Wait { until: self.budget.ready_at(cost).max(now + 1e-9) };
                }
                Action::Join { count: q, spacing: q as f64 / rate }
            }
            Strategy::Burst | Strategy::Sustain => {
                if !self.bursting {
                    if now < self.next_burst {
                        return Action::Wait { until: self.next_burst };
                    }
                    self.bursting = true;
                    while self.next_burst <= now {
                        self.next_burst += self.config.burst_period_s;
                    }
                }
                let q = obs.affordable(self.budget.available(now)).min(obs.headroom);
                if q == 0 {
                    self.bursting = false;
                    return Action::Wait { until: self.next_burst };
                }
                Action::Join { count: q, spacing: 0.0 }
            }
        }
    }

    /// Records a completed batch of `count` joins started at `now`.
    pub fn joined(&mut self, count: u64, spacing: f64, now: f64) {
        if self.config.strategy == Strategy::UniformOptimal && count > 0 {
            self.next_uniform = now + spacing;
        }
    }

    /// Time of the next scheduled uniform batch.
    pub fn next_uniform(&self) -> f64 {
        self.next_uniform
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn burst_of_hundred_costs_arithmetic_series() {
        assert_eq!(gmcom_batch_cost(100, 0), 5050);
        assert_eq!(gmcom_batch_cost(3, 2), 3 + 4 + 5);
        assert_eq!(gmcom_batch_cost(0, 9), 0);
    }

    #[test]
    fn affordable_is_tight() {
        for w in [0u64, 1, 7, 1000] {
            for b in [0u64, 1, 2, 5049, 5050, 5051, 1 << 30] {
                let k = gmcom_affordable(b, w);
                assert!(gmcom_batch_cost(k, w) <= b);
                assert!(gmcom_batch_cost(k + 1, w) > b);
            }
        }
    }

    #[test]
    fn uniform_rate_matches_bisection() {
        let r = gmcom_uniform_rate(1e4, 1.0);
        let oracle = bisect(|j| j * (1.0 + j), 1e4, 0.0, 1e4);
        assert!((r - oracle).abs() < 1e-6);
        assert!((r / 100.0 - 1.0).abs() < 0.01, "≈ √T at large T");
        assert_eq!(ccom_uniform_rate(37.0), 37.0);
    }

    #[test]
    fn budget_never_overspends() {
        let mut b = Budget::new(2.5);
        assert!(!b.try_spend(3, 1.0));
        assert!(b.try_spend(2, 1.0));
        assert_eq!(b.available(1.0), 0);
        assert_eq!(b.ready_at(5), 2.8);
        assert!(b.try_spend(5, 2.8));
        assert_eq!(b.spent, 7);
    }

    #[test]
    fn survivors_respect_power_and_budget() {
        assert_eq!(purge_survivors(500, 1000, 1.0 / 7.0, 10_000), 166);
        assert_eq!(purge_survivors(500, 1000, 1.0 / 7.0, 20), 20);
        assert_eq!(purge_survivors(5, 1000, 1.0 / 7.0, 20), 5);
        assert_eq!(purge_survivors(5, 1000, 0.0, 20), 0);
    }

    fn obs(model: CostModel, headroom: u64) -> ProtocolObservation {
        ProtocolObservation { cost_model: model, headroom, window_count: 0, j_tilde: 1.0 }
    }

    #[test]
    fn none_never_acts() {
        let mut a = Adversary::new(AdversaryConfig::new(Strategy::None, 1e6));
        assert_eq!(a.decide(&obs(CostModel::Flat, 10), 50.0), Action::Wait { until: f64::INFINITY });
    }

    #[test]
    fn uniform_waits_for_budget_then_spaces_batches() {
        let mut a = Adversary::new(AdversaryConfig::new(Strategy::UniformOptimal, 4.0));
        let o = obs(CostModel::Flat, 10);
        assert_eq!(a.decide(&o, 0.0), Action::Wait { until: 2.5 });
        let Action::Join { count, spacing } = a.decide(&o, 2.5) else { panic!() };
        assert_eq!((count, spacing), (10, 2.5));
        a.budget.try_spend(10, 2.5);
        a.joined(count, spacing, 2.5);
        assert_eq!(a.decide(&o, 3.0), Action::Wait { until: 5.0 });
    }

    #[test]
    fn burst_spends_at_period_until_broke() {
        let mut cfg = AdversaryConfig::new(Strategy::Burst, 1.0);
        cfg.burst_period_s = 100.0;
        let mut a = Adversary::new(cfg);
        let o = obs(CostModel::Windowed, 1000);
        assert_eq!(a.decide(&o, 10.0), Action::Wait { until: 100.0 });
        let Action::Join { count, .. } = a.decide(&o, 100.0) else { panic!() };
        assert_eq!(count, 13, "13·14/2 = 91 ≤ 100 < 105");
        a.budget.try_spend(gmcom_batch_cost(13, 0), 100.0);
        let after = ProtocolObservation { window_count: 13, ..o };
        assert_eq!(a.decide(&after, 100.0), Action::Wait { until: 200.0 });
    }
}
