//! Finite-horizon expectimax over a learned model.
//!
//! The value of a history `h` planned from epoch `t` is
//! `w(|h| - t) u(h) + max_a sum_o P(o | h a) v(h a o)`, cut off after
//! `horizon` further steps. Actions that no model rule and no utility reads
//! are interchangeable, so only the lexicographically smallest member of
//! each such class is expanded.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbn::{ActionVec, Belief, DbnError, DbnProgram, Filter, History, ObsVec, Step};
use crate::utility::{AgentUtility, NodeView, UtilityError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("bad planner setting: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] DbnError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
}

/// Weight `w(k)` given to the utility `k` steps after the planning epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiscountFn {
    /// `gamma^k`.
    Geometric(f64),
    /// 1 for `k <= m`.
    Window(usize),
    /// 1 only at `k == m`.
    Delta(usize),
    /// `2^-k`.
    Dyadic,
}

impl DiscountFn {
    pub fn validate(&self) -> Result<(), PlanError> {
        match *self {
            DiscountFn::Geometric(g) if !(g > 0.0 && g < 1.0) => {
                Err(PlanError::BadConfig(format!("geometric discount {g} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn weight(&self, k: usize) -> f64 {
        match *self {
            DiscountFn::Geometric(g) => g.powi(k as i32),
            DiscountFn::Window(m) => f64::from(u8::from(k <= m)),
            DiscountFn::Delta(m) => f64::from(u8::from(k == m)),
            DiscountFn::Dyadic => 0.5f64.powi(k as i32),
        }
    }

    /// `sum_{k > after} w(k)`: the most a unit-bounded utility can add past
    /// the cutoff.
    pub fn tail(&self, after: usize) -> f64 {
        match *self {
            DiscountFn::Geometric(g) => g.powi(after as i32 + 1) / (1.0 - g),
            DiscountFn::Window(m) => m.saturating_sub(after) as f64,
            DiscountFn::Delta(m) => f64::from(u8::from(m > after)),
            DiscountFn::Dyadic => 0.5f64.powi(after as i32),
        }
    }
}

impl fmt::Display for DiscountFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscountFn::Geometric(g) => write!(f, "geometric:{g}"),
            DiscountFn::Window(m) => write!(f, "window:{m}"),
            DiscountFn::Delta(m) => write!(f, "delta:{m}"),
            DiscountFn::Dyadic => f.write_str("dyadic"),
        }
    }
}

impl FromStr for DiscountFn {
    type Err = PlanError;

    /// `geometric:0.9`, `window:5`, `delta:3` or `dyadic`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlanError::BadConfig(format!("unknown discount `{s}`"));
        let (kind, arg) = match s.trim().split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let d = match (kind, arg) {
            ("geometric", Some(a)) => DiscountFn::Geometric(a.parse().map_err(|_| bad())?),
            ("window", Some(a)) => DiscountFn::Window(a.parse().map_err(|_| bad())?),
            ("delta", Some(a)) => DiscountFn::Delta(a.parse().map_err(|_| bad())?),
            ("dyadic", None) => DiscountFn::Dyadic,
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub horizon: usize,
    pub discount: DiscountFn,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { horizon: 4, discount: DiscountFn::Geometric(0.9) }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon == 0 {
            return Err(PlanError::BadConfig("horizon must be at least 1".into()));
        }
        self.discount.validate()
    }
}

/// Relative tolerance under which two action values count as tied.
pub const VALUE_TIE: f64 = 1e-12;

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TIE * a.abs().max(b.abs()).max(1.0)
}

/// A chosen action with its value and the best value among actions that
/// behave differently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: ActionVec,
    pub value: f64,
    pub runner_up: Option<(ActionVec, f64)>,
}

/// `P(o | h, a)` for every observation with non-zero probability.
pub fn predictive(model: &DbnProgram, h: &History, a: ActionVec) -> Result<Vec<(ObsVec, f64)>, PlanError> {
    a.check_width(model.n_actions())?;
    Ok(Filter::over(model, h)?.obs_distribution(a))
}

/// Bitmask of action variables that influence anything the planner sees.
fn relevant_actions(model: &DbnProgram, utility: &AgentUtility) -> u32 {
    let from_utility = match utility {
        AgentUtility::Model(b) => b.action.map_or(0, |i| 1 << i),
        _ => 0,
    };
    model.action_refs() | from_utility
}

/// The smallest member of every class of interchangeable actions, in
/// increasing order.
pub fn action_classes(model: &DbnProgram, utility: &AgentUtility) -> Vec<ActionVec> {
    let relevant = relevant_actions(model, utility);
    let mut reps: Vec<ActionVec> =
        ActionVec::all(model.n_actions()).filter(|a| a.bits() & !relevant == 0).collect();
    reps.sort();
    reps
}

struct Search<'a> {
    model: &'a DbnProgram,
    utility: &'a AgentUtility,
    discount: DiscountFn,
    base: &'a History,
    actions: Vec<ActionVec>,
    suffix: Vec<Step>,
    memo: HashMap<(Vec<u64>, u64, usize), f64>,
}

impl<'a> Search<'a> {
    fn new(model: &'a DbnProgram, utility: &'a AgentUtility, discount: DiscountFn, base: &'a History) -> Self {
        Search {
            model,
            utility,
            discount,
            base,
            actions: action_classes(model, utility),
            suffix: Vec::new(),
            memo: HashMap::new(),
        }
    }

    /// Value of the node reached by the current suffix, `k` steps after the
    /// epoch, with `remaining` more steps to expand.
    fn node(&mut self, filter: &Filter, parent: Option<&Belief>, k: usize, remaining: usize) -> Result<f64, PlanError> {
        let belief = filter.belief();
        let view = NodeView {
            model: self.model,
            base: self.base,
            suffix: &self.suffix,
            belief: &belief,
            parent_belief: parent,
            log_likelihood: filter.log_likelihood(),
        };
        let u = self.utility.evaluate(&view);
        let carry = self.utility.carry_key(&view);
        let mut v = self.discount.weight(k) * u;
        if remaining > 0 {
            v += self.continuation(filter, &belief, carry, k, remaining)?;
        }
        Ok(v)
    }

    /// `max_a` of the expected child value. Depends only on the belief and
    /// the carry key, so it is shared between nodes that agree on both.
    fn continuation(
        &mut self,
        filter: &Filter,
        belief: &Belief,
        carry: Option<u64>,
        k: usize,
        remaining: usize,
    ) -> Result<f64, PlanError> {
        let key = carry.map(|c| (belief.key(), c, remaining));
        if let Some(v) = key.as_ref().and_then(|key| self.memo.get(key)) {
            return Ok(*v);
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.actions.len() {
            best = best.max(self.action_value(filter, belief, self.actions[i], k, remaining)?);
        }
        if let Some(key) = key {
            self.memo.insert(key, best);
        }
        Ok(best)
    }

    fn action_value(
        &mut self,
        filter: &Filter,
        belief: &Belief,
        a: ActionVec,
        k: usize,
        remaining: usize,
    ) -> Result<f64, PlanError> {
        let mut total = 0.0;
        for (o, p) in filter.obs_distribution(a) {
            let mut child = filter.clone();
            child.update(a, o)?;
            self.suffix.push(Step { action: a, obs: o });
            let v = self.node(&child, Some(belief), k + 1, remaining - 1);
            self.suffix.pop();
            total += p * v?;
        }
        Ok(total)
    }
}

/// The truncated value of `h` for a plan started at `epoch`, expanding
/// `depth` more steps.
pub fn value(
    h: &History,
    epoch: usize,
    depth: usize,
    model: &DbnProgram,
    utility: &AgentUtility,
    discount: DiscountFn,
) -> Result<f64, PlanError> {
    discount.validate()?;
    let k = h.len().checked_sub(epoch).ok_or_else(|| PlanError::BadConfig("epoch after history end".into()))?;
    let filter = Filter::over(model, h)?;
    let parent = match h.len() {
        0 => None,
        n => Some(Filter::over(model, &h.prefix(n - 1))?.belief()),
    };
    Search::new(model, utility, discount, h).node(&filter, parent.as_ref(), k, depth)
}

/// The action maximizing the expected value over the next `horizon` steps,
/// planning from epoch `|h|`. Ties go to the lexicographically smallest
/// action.
pub fn act(h: &History, model: &DbnProgram, utility: &AgentUtility, config: &PlanConfig) -> Result<Decision, PlanError> {
    let filter = Filter::over(model, h)?;
    act_filtered(h, &filter, utility, config)
}

/// [`act`] with the filter over `h` already at hand.
pub fn act_filtered(
    h: &History,
    filter: &Filter,
    utility: &AgentUtility,
    config: &PlanConfig,
) -> Result<Decision, PlanError> {
    config.validate()?;
    if filter.steps() != h.len() {
        return Err(PlanError::BadConfig("filter does not cover the history".into()));
    }
    let model = filter.program();
    let mut search = Search::new(model, utility, config.discount, h);
    let belief = filter.belief();
    let mut ranked: Vec<(ActionVec, f64)> = Vec::with_capacity(search.actions.len());
    for a in search.actions.clone() {
        ranked.push((a, search.action_value(filter, &belief, a, 0, config.horizon)?));
    }
    // Candidates are in increasing order, so a later one wins only when
    // clearly better.
    let mut best = 0;
    for i in 1..ranked.len() {
        if ranked[i].1 > ranked[best].1 && !tied(ranked[i].1, ranked[best].1) {
            best = i;
        }
    }
    let (action, value) = ranked[best];
    let runner_up = ranked
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &r)| r)
        .fold(None, |acc: Option<(ActionVec, f64)>, r| match acc {
            Some(b) if b.1 >= r.1 || tied(b.1, r.1) => Some(b),
            _ => Some(r),
        });
    Ok(Decision { action, value, runner_up })
}
