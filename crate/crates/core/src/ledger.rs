use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign};

/// Counts of oracle and arithmetic invocations.
///
/// Quantum-side counters follow the building blocks of the tail-marking
/// preparation: `usn_calls` (grid loading), `cry_calls` (angle-controlled
/// rotations), `arithmetic_calls` (adders, multipliers, comparators, CDF and
/// arccos-sqrt evaluations), `ugev_calls` (whole tail-marking preparations),
/// `up_calls` (amplified preparations) and `uxi_calls` (payload oracle).
/// Classical counters track scenarios and random draws.
///
/// Counters only ever increase within a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    pub usn_calls: u64,
    pub cry_calls: u64,
    pub arithmetic_calls: u64,
    pub ugev_calls: u64,
    pub up_calls: u64,
    pub uxi_calls: u64,
    pub classical_samples: u64,
    pub normal_draws: u64,
    pub bernoulli_draws: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every counter multiplied by `k`, for charging `k` repetitions of a
    /// recorded run.
    pub fn scaled(&self, k: u64) -> Self {
        Self {
            usn_calls: self.usn_calls * k,
            cry_calls: self.cry_calls * k,
            arithmetic_calls: self.arithmetic_calls * k,
            ugev_calls: self.ugev_calls * k,
            up_calls: self.up_calls * k,
            uxi_calls: self.uxi_calls * k,
            classical_samples: self.classical_samples * k,
            normal_draws: self.normal_draws * k,
            bernoulli_draws: self.bernoulli_draws * k,
        }
    }

    /// Counter-wise difference against an earlier snapshot of the same ledger.
    pub fn since(&self, earlier: &QueryLedger) -> Self {
        Self {
            usn_calls: self.usn_calls - earlier.usn_calls,
            cry_calls: self.cry_calls - earlier.cry_calls,
            arithmetic_calls: self.arithmetic_calls - earlier.arithmetic_calls,
            ugev_calls: self.ugev_calls - earlier.ugev_calls,
            up_calls: self.up_calls - earlier.up_calls,
            uxi_calls: self.uxi_calls - earlier.uxi_calls,
            classical_samples: self.classical_samples - earlier.classical_samples,
            normal_draws: self.normal_draws - earlier.normal_draws,
            bernoulli_draws: self.bernoulli_draws - earlier.bernoulli_draws,
        }
    }

    /// `(name, value)` pairs in a fixed order, for reports.
    pub fn entries(&self) -> [(&'static str, u64); 9] {
        [
            ("usn_calls", self.usn_calls),
            ("cry_calls", self.cry_calls),
            ("arithmetic_calls", self.arithmetic_calls),
            ("ugev_calls", self.ugev_calls),
            ("up_calls", self.up_calls),
            ("uxi_calls", self.uxi_calls),
            ("classical_samples", self.classical_samples),
            ("normal_draws", self.normal_draws),
            ("bernoulli_draws", self.bernoulli_draws),
        ]
    }
}

impl AddAssign for QueryLedger {
    fn add_assign(&mut self, o: Self) {
        self.usn_calls += o.usn_calls;
        self.cry_calls += o.cry_calls;
        self.arithmetic_calls += o.arithmetic_calls;
        self.ugev_calls += o.ugev_calls;
        self.up_calls += o.up_calls;
        self.uxi_calls += o.uxi_calls;
        self.classical_samples += o.classical_samples;
        self.normal_draws += o.normal_draws;
        self.bernoulli_draws += o.bernoulli_draws;
    }
}

impl Add for QueryLedger {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}
