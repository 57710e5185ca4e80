//! Self-modifying policies and the check that the value-maximizing policy
//! never hands control to another one.
//!
//! A policy maps a history to an action and the policy that will choose the
//! next action. Its value is `v(pi, h) = u(h) + gamma * sum_o P(o | h a') v(pi', h a' o)`
//! with `(a', pi') = pi(h)`, and `pi-star` picks the pair `(a, pi)` with the
//! largest `sum_o P(o | h a) v(pi, h a o)`. Every utility, including those
//! of policies that would optimize something else, is the current one.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbn::{ActionVec, Belief, DbnProgram, Filter, History, ObsVec, Step};
use crate::envs::EnvInstance;
use crate::plan::{self, DiscountFn, PlanConfig, PlanError};
use crate::utility::{AgentUtility, NodeView};

/// Name of the maximizing policy every space must contain.
pub const PI_STAR: &str = "pi-star";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfModError {
    #[error("policy space does not contain {PI_STAR}")]
    MissingPiStar,
    #[error("duplicate policy name `{0}`")]
    DuplicateName(String),
    #[error("policy `{policy}` names unknown successor `{successor}`")]
    UnknownSuccessor { policy: String, successor: String },
    #[error("discount {0} outside (0, 1)")]
    BadGamma(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Fixed responses to the last `depth` observations, with a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupPolicy {
    pub depth: usize,
    pub table: BTreeMap<Vec<ObsVec>, ActionVec>,
    pub default: ActionVec,
    pub successor: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    PiStar,
    Lookup(LookupPolicy),
    /// Greedily maximizes `utility` one step ahead and keeps doing so. Handing
    /// control to it rewrites the agent's utility.
    Maximizer { utility: AgentUtility },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpace {
    policies: Vec<NamedPolicy>,
    successors: Vec<usize>,
    pi_star: usize,
}

impl PolicySpace {
    pub fn new(policies: Vec<NamedPolicy>) -> Result<Self, SelfModError> {
        let index: HashMap<&str, usize> = policies.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
        if index.len() != policies.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = policies.iter().find(|p| !seen.insert(&p.name)).expect("a duplicate exists");
            return Err(SelfModError::DuplicateName(dup.name.clone()));
        }
        let pi_star = *index.get(PI_STAR).ok_or(SelfModError::MissingPiStar)?;
        if policies[pi_star].policy != Policy::PiStar {
            return Err(SelfModError::MissingPiStar);
        }
        let successors = policies
            .iter()
            .enumerate()
            .map(|(i, p)| match &p.policy {
                Policy::PiStar => Ok(pi_star),
                Policy::Maximizer { .. } => Ok(i),
                Policy::Lookup(l) => index.get(l.successor.as_str()).copied().ok_or_else(|| {
                    SelfModError::UnknownSuccessor { policy: p.name.clone(), successor: l.successor.clone() }
                }),
            })
            .collect::<Result<_, _>>()?;
        Ok(PolicySpace { policies, successors, pi_star })
    }

    /// The space holding only `pi-star`.
    pub fn trivial() -> Self {
        PolicySpace::new(vec![NamedPolicy { name: PI_STAR.into(), policy: Policy::PiStar }]).expect("valid")
    }

    pub fn names(&self) -> Vec<&str> {
        self.policies.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    fn lookup_depth(&self) -> usize {
        self.policies
            .iter()
            .map(|p| match &p.policy {
                Policy::Lookup(l) => l.depth,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for PolicySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.policies.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match &p.policy {
                Policy::PiStar => write!(f, "{}", p.name)?,
                Policy::Lookup(l) => {
                    write!(f, "{}[lookup depth={} default={} ->{}]", p.name, l.depth, l.default, l.successor)?
                }
                Policy::Maximizer { .. } => write!(f, "{}[maximizer]", p.name)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfModConfig {
    pub gamma: f64,
    pub depth: usize,
}

impl Default for SelfModConfig {
    fn default() -> Self {
        SelfModConfig { gamma: 0.9, depth: 4 }
    }
}

impl SelfModConfig {
    fn validate(&self) -> Result<(), SelfModError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SelfModError::BadGamma(self.gamma));
        }
        Ok(())
    }
}

/// Relative tolerance under which two pair values count as tied.
pub const PAIR_TIE: f64 = 1e-12;

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= PAIR_TIE * a.abs().max(b.abs()).max(1.0)
}

/// What `pi-star` chose, with the margin by which the best pair keeping
/// `pi-star` beats every pair that hands control elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiStarChoice {
    pub action: ActionVec,
    pub successor: String,
    pub value: f64,
    /// `value` minus the best value with another successor; `None` when
    /// the space holds only `pi-star`.
    pub gap: Option<f64>,
}

type MemoKey = (usize, usize, Vec<u64>, u64, Vec<ObsVec>);

struct Evaluator<'a> {
    model: &'a DbnProgram,
    utility: &'a AgentUtility,
    space: &'a PolicySpace,
    gamma: f64,
    base: &'a History,
    actions: Vec<ActionVec>,
    suffix: Vec<Step>,
    memo: HashMap<MemoKey, f64>,
    lookup_depth: usize,
}

impl<'a> Evaluator<'a> {
    fn new(
        model: &'a DbnProgram,
        utility: &'a AgentUtility,
        space: &'a PolicySpace,
        gamma: f64,
        base: &'a History,
    ) -> Self {
        Evaluator {
            model,
            utility,
            space,
            gamma,
            base,
            actions: plan::action_classes(model, utility),
            suffix: Vec::new(),
            memo: HashMap::new(),
            lookup_depth: space.lookup_depth(),
        }
    }

    fn len(&self) -> usize {
        self.base.len() + self.suffix.len()
    }

    fn step_back(&self, k: usize) -> Option<&Step> {
        let n = self.suffix.len();
        if k < n {
            Some(&self.suffix[n - 1 - k])
        } else {
            let b = self.base.steps();
            b.len().checked_sub(1 + k - n).map(|i| &b[i])
        }
    }

    fn recent_obs(&self, depth: usize) -> Vec<ObsVec> {
        (0..depth.min(self.len())).rev().map(|k| self.step_back(k).expect("in range").obs).collect()
    }

    fn full_history(&self) -> History {
        let mut steps = self.base.steps().to_vec();
        steps.extend_from_slice(&self.suffix);
        History::from_steps(steps)
    }

    /// `(a', pi')` of a policy other than `pi-star`.
    fn decide(&self, p: usize, filter: &Filter) -> Result<(ActionVec, usize), SelfModError> {
        let succ = self.space.successors[p];
        match &self.space.policies[p].policy {
            Policy::PiStar => unreachable!("pi-star decides by maximizing"),
            Policy::Lookup(l) => {
                let key = self.recent_obs(l.depth);
                Ok((l.table.get(&key).copied().unwrap_or(l.default), succ))
            }
            Policy::Maximizer { utility } => {
                let config = PlanConfig { horizon: 1, discount: DiscountFn::Geometric(self.gamma) };
                let d = plan::act_filtered(&self.full_history(), filter, utility, &config)?;
                Ok((d.action, succ))
            }
        }
    }

    fn value(&mut self, p: usize, filter: &Filter, parent: Option<&Belief>, depth: usize) -> Result<f64, SelfModError> {
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
        if depth == 0 {
            return Ok(u);
        }
        let carry = self.utility.carry_key(&view);
        let key = carry.map(|c| (p, depth, belief.key(), c, self.recent_obs(self.lookup_depth)));
        if let Some(v) = key.as_ref().and_then(|k| self.memo.get(k)) {
            return Ok(u + self.gamma * v);
        }
        let next = if p == self.space.pi_star {
            self.best_pairs(filter, &belief, depth)?.0
        } else {
            let (a, succ) = self.decide(p, filter)?;
            self.pair_value(succ, a, filter, &belief, depth)?
        };
        if let Some(k) = key {
            self.memo.insert(k, next);
        }
        Ok(u + self.gamma * next)
    }

    /// `sum_o P(o | h a) v(p, h a o)` with `depth - 1` steps left below.
    fn pair_value(&mut self, p: usize, a: ActionVec, filter: &Filter, belief: &Belief, depth: usize) -> Result<f64, SelfModError> {
        let mut total = 0.0;
        for (o, prob) in filter.obs_distribution(a) {
            let mut child = filter.clone();
            child.update(a, o).map_err(PlanError::from)?;
            self.suffix.push(Step { action: a, obs: o });
            let v = self.value(p, &child, Some(belief), depth - 1);
            self.suffix.pop();
            total += prob * v?;
        }
        Ok(total)
    }

    /// Best pair value overall, the best pair keeping `pi-star` and the
    /// best value of any pair handing over.
    fn best_pairs(
        &mut self,
        filter: &Filter,
        belief: &Belief,
        depth: usize,
    ) -> Result<(f64, (ActionVec, f64), Option<f64>), SelfModError> {
        let mut keep: Option<(ActionVec, f64)> = None;
        let mut other: Option<f64> = None;
        for i in 0..self.actions.len() {
            let a = self.actions[i];
            for p in 0..self.space.len() {
                let v = self.pair_value(p, a, filter, belief, depth)?;
                if p == self.space.pi_star {
                    if keep.is_none_or(|(_, b)| v > b && !tied(v, b)) {
                        keep = Some((a, v));
                    }
                } else {
                    other = Some(other.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        let keep = keep.expect("at least one action");
        let best = other.map_or(keep.1, |o| o.max(keep.1));
        Ok((best, keep, other))
    }
}

/// `v(pi, h)` expanded `depth` steps, for the policy named `policy`.
pub fn policy_value(
    policy: &str,
    h: &History,
    depth: usize,
    space: &PolicySpace,
    model: &DbnProgram,
    utility: &AgentUtility,
    gamma: f64,
) -> Result<f64, SelfModError> {
    SelfModConfig { gamma, depth }.validate()?;
    let p = space
        .policies
        .iter()
        .position(|x| x.name == policy)
        .ok_or_else(|| SelfModError::UnknownSuccessor { policy: "(query)".into(), successor: policy.into() })?;
    let filter = Filter::over(model, h).map_err(PlanError::from)?;
    let parent = match h.len() {
        0 => None,
        n => Some(Filter::over(model, &h.prefix(n - 1)).map_err(PlanError::from)?.belief()),
    };
    Evaluator::new(model, utility, space, gamma, h).value(p, &filter, parent.as_ref(), depth)
}

/// The `(action, successor)` pair `pi-star` picks after `h`. When a pair
/// keeping `pi-star` is among the maximizers it is returned, with the
/// smallest such action.
pub fn pi_star(
    h: &History,
    space: &PolicySpace,
    config: &SelfModConfig,
    model: &DbnProgram,
    utility: &AgentUtility,
) -> Result<PiStarChoice, SelfModError> {
    config.validate()?;
    if config.depth == 0 {
        return Err(PlanError::BadConfig("depth must be at least 1".into()).into());
    }
    let filter = Filter::over(model, h).map_err(PlanError::from)?;
    let mut ev = Evaluator::new(model, utility, space, config.gamma, h);
    let belief = filter.belief();
    let (best, (action, keep), other) = ev.best_pairs(&filter, &belief, config.depth)?;
    if keep >= best || tied(keep, best) {
        return Ok(PiStarChoice { action, successor: PI_STAR.into(), value: keep, gap: other.map(|o| keep - o) });
    }
    // Some other successor is strictly better: report the smallest such
    // pair.
    for &a in &ev.actions.clone() {
        for p in 0..space.len() {
            if p == space.pi_star {
                continue;
            }
            let v = ev.pair_value(p, a, &filter, &belief, config.depth)?;
            if tied(v, best) || v >= best {
                return Ok(PiStarChoice {
                    action: a,
                    successor: space.policies[p].name.clone(),
                    value: v,
                    gap: Some(keep - v),
                });
            }
        }
    }
    unreachable!("the best pair was found above")
}

/// One harness trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub space: String,
    pub history_len: usize,
    /// Successor chosen at each evaluated history.
    pub successors: Vec<String>,
    /// Smallest margin of `pi-star` over handing control elsewhere.
    pub min_gap: Option<f64>,
    pub max_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop4Report {
    pub trials: Vec<TrialRecord>,
    pub evaluations: usize,
    pub self_modifications: usize,
}

/// How the harness draws policy spaces and histories.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub eval: SelfModConfig,
    /// Largest space size, counting `pi-star`.
    pub max_policies: usize,
    /// Histories are drawn with lengths in this range.
    pub history_len: (usize, usize),
    /// Prefixes of each history at which `pi-star` is evaluated.
    pub checkpoints: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig { eval: SelfModConfig::default(), max_policies: 5, history_len: (6, 24), checkpoints: 3 }
    }
}

fn random_action<R: Rng + ?Sized>(width: usize, rng: &mut R) -> ActionVec {
    ActionVec::new(rng.gen_range(0..1u32 << width), width)
}

/// A random space over `model`'s actions: `pi-star`, a policy that always
/// uses the delusion switch `b`, a maximizer of prediction accuracy (which
/// the delusion box satisfies perfectly), and random lookup tables up to
/// `max_policies` in total. Successors of the tables are drawn from the
/// whole space.
pub fn random_space<R: Rng + ?Sized>(
    model: &DbnProgram,
    delusion_switch: usize,
    max_policies: usize,
    rng: &mut R,
) -> PolicySpace {
    let width = model.n_actions();
    let extra = max_policies.saturating_sub(3);
    let n_tables = if extra == 0 { 0 } else { rng.gen_range(0..=extra) };
    let mut names = vec![PI_STAR.to_owned(), "delude".to_owned(), "rewrite-predict".to_owned()];
    names.extend((0..n_tables).map(|i| format!("table{i}")));
    let pick = |rng: &mut R| names.choose(rng).expect("non-empty").clone();
    let delude = LookupPolicy {
        depth: 0,
        table: BTreeMap::new(),
        default: random_action(width, rng).with(delusion_switch, true),
        successor: if rng.gen_bool(0.5) { "delude".into() } else { pick(rng) },
    };
    let mut policies = vec![
        NamedPolicy { name: PI_STAR.into(), policy: Policy::PiStar },
        NamedPolicy { name: "delude".into(), policy: Policy::Lookup(delude) },
        NamedPolicy { name: "rewrite-predict".into(), policy: Policy::Maximizer { utility: AgentUtility::Predict } },
    ];
    for i in 0..n_tables {
        let depth = rng.gen_range(1..=2);
        let mut table = BTreeMap::new();
        let keys: Vec<Vec<ObsVec>> = (0..1u32 << (model.n_obs() * depth))
            .map(|bits| {
                (0..depth).map(|k| ObsVec::new(bits >> (k * model.n_obs()) & ((1 << model.n_obs()) - 1), model.n_obs())).collect()
            })
            .collect();
        for key in keys {
            if rng.gen_bool(0.5) {
                table.insert(key, random_action(width, rng));
            }
        }
        let lookup = LookupPolicy { depth, table, default: random_action(width, rng), successor: pick(rng) };
        policies.push(NamedPolicy { name: format!("table{i}"), policy: Policy::Lookup(lookup) });
    }
    PolicySpace::new(policies).expect("generated spaces are valid")
}

/// Runs `trials` trials. Each draws a random space and a history from
/// `env` under random actions (delusion switch on a quarter of the time),
/// then evaluates `pi-star` at several prefixes.
#[allow(clippy::too_many_arguments)]
pub fn prop4_harness(
    env: &DbnProgram,
    model: &DbnProgram,
    utility: &AgentUtility,
    delusion_switch: usize,
    trials: usize,
    config: &HarnessConfig,
    seed: u64,
) -> Result<Prop4Report, SelfModError> {
    let mut records = Vec::with_capacity(trials);
    let (mut evaluations, mut self_modifications) = (0, 0);
    for trial in 0..trials {
        let mut rng = crate::rng::substream(seed, &format!("selfmod-trial-{trial}"));
        let space = random_space(model, delusion_switch, config.max_policies, &mut rng);
        let len = rng.gen_range(config.history_len.0..=config.history_len.1);
        let mut inst = EnvInstance::new(env.clone(), crate::rng::substream(seed, &format!("selfmod-env-{trial}")));
        for _ in 0..len {
            let a = random_action(env.n_actions(), &mut rng).with(delusion_switch, rng.gen_bool(0.25));
            inst.step(a).map_err(PlanError::from)?;
        }
        let h = inst.history();
        let mut successors = Vec::new();
        let mut gaps = Vec::new();
        for c in 0..config.checkpoints {
            let cut = len - c.min(len);
            let choice = pi_star(&h.prefix(cut), &space, &config.eval, model, utility)?;
            evaluations += 1;
            if choice.successor != PI_STAR {
                self_modifications += 1;
            }
            gaps.extend(choice.gap);
            successors.push(choice.successor);
        }
        records.push(TrialRecord {
            trial,
            space: space.to_string(),
            history_len: len,
            successors,
            min_gap: gaps.iter().copied().reduce(f64::min),
            max_gap: gaps.iter().copied().reduce(f64::max),
        });
    }
    Ok(Prop4Report { trials: records, evaluations, self_modifications })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::utility::{bind, UtilitySpec};

    fn env1_agent() -> (DbnProgram, AgentUtility) {
        let q = envs::make_q67_prime(99, 100).unwrap();
        let b = bind(&"unobserved-equals:a".parse::<UtilitySpec>().unwrap(), &q).unwrap();
        (q, AgentUtility::from_binding(b))
    }

    fn observing_history(len: usize, seed: u64) -> History {
        let mut env = EnvInstance::seeded(envs::make_q67(99, 100).unwrap(), seed);
        for t in 0..len {
            env.step(ActionVec::new((t % 2) as u32, 4)).unwrap();
        }
        env.history().clone()
    }

    fn delude_forever() -> NamedPolicy {
        let lookup = LookupPolicy {
            depth: 0,
            table: BTreeMap::new(),
            default: "0100".parse().unwrap(),
            successor: "delude".into(),
        };
        NamedPolicy { name: "delude".into(), policy: Policy::Lookup(lookup) }
    }

    fn pi() -> NamedPolicy {
        NamedPolicy { name: PI_STAR.into(), policy: Policy::PiStar }
    }

    #[test]
    fn space_validation() {
        assert_eq!(PolicySpace::new(vec![delude_forever()]), Err(SelfModError::MissingPiStar));
        assert!(matches!(PolicySpace::new(vec![pi(), pi()]), Err(SelfModError::DuplicateName(_))));
        let mut bad = delude_forever();
        if let Policy::Lookup(l) = &mut bad.policy {
            l.successor = "nobody".into();
        }
        assert!(matches!(PolicySpace::new(vec![pi(), bad]), Err(SelfModError::UnknownSuccessor { .. })));
    }

    #[test]
    fn depth_zero_and_constant_utility() {
        let (q, u) = env1_agent();
        let h = observing_history(7, 1);
        let space = PolicySpace::new(vec![pi(), delude_forever()]).unwrap();
        let now = u.of_history(&h, &q).unwrap();
        assert_eq!(policy_value("delude", &h, 0, &space, &q, &u, 0.9).unwrap(), now);
        let c = DbnProgram::from_text("actions a\nstate x = prev.x\nobs r = true\n").unwrap();
        let reward = AgentUtility::Reward { obs: 0 };
        let ch = History::from_steps(vec![Step { action: "0".parse().unwrap(), obs: "1".parse().unwrap() }]);
        let g: f64 = 0.7;
        for depth in 0..4 {
            let v = policy_value(PI_STAR, &ch, depth, &PolicySpace::trivial(), &c, &reward, g).unwrap();
            assert!((v - (1.0 - g.powi(depth as i32 + 1)) / (1.0 - g)).abs() < 1e-12);
        }
    }

    #[test]
    fn deluding_forever_is_worth_less_than_observing() {
        let (q, u) = env1_agent();
        let h = observing_history(9, 2);
        let space = PolicySpace::new(vec![pi(), delude_forever()]).unwrap();
        for depth in 2..=4 {
            let d = policy_value("delude", &h, depth, &space, &q, &u, 0.9).unwrap();
            let p = policy_value(PI_STAR, &h, depth, &space, &q, &u, 0.9).unwrap();
            assert!(p > d + 1e-3, "depth {depth}: {p} vs {d}");
        }
    }

    #[test]
    fn pi_star_keeps_itself() {
        let (q, u) = env1_agent();
        let h = observing_history(9, 4);
        let config = SelfModConfig::default();
        let alone = pi_star(&h, &PolicySpace::trivial(), &config, &q, &u).unwrap();
        assert_eq!(alone.successor, PI_STAR);
        assert_eq!(alone.gap, None);
        let space = PolicySpace::new(vec![pi(), delude_forever()]).unwrap();
        let c = pi_star(&h, &space, &config, &q, &u).unwrap();
        assert_eq!(c.successor, PI_STAR);
        assert!(c.gap.unwrap() > 0.0);
        // A policy that behaves like pi-star at this depth ties it; the
        // convention keeps pi-star.
        let copy = NamedPolicy {
            name: "copy".into(),
            policy: Policy::Lookup(LookupPolicy {
                depth: 0,
                table: BTreeMap::new(),
                default: c.action,
                successor: PI_STAR.into(),
            }),
        };
        let space = PolicySpace::new(vec![copy, pi()]).unwrap();
        let c2 = pi_star(&h, &space, &SelfModConfig { gamma: 0.9, depth: 1 }, &q, &u).unwrap();
        assert_eq!(c2.successor, PI_STAR);
        assert!(c2.gap.unwrap().abs() < 1e-12);
    }

    #[test]
    fn myopic_discount_still_keeps_pi_star() {
        let (q, u) = env1_agent();
        let h = observing_history(8, 5);
        let mut rng = crate::rng::substream(11, "space");
        let space = random_space(&q, 1, 5, &mut rng);
        let c = pi_star(&h, &space, &SelfModConfig { gamma: 0.01, depth: 3 }, &q, &u).unwrap();
        assert_eq!(c.successor, PI_STAR);
    }

    #[test]
    fn agrees_with_planner_on_trivial_space() {
        let (q, u) = env1_agent();
        for seed in 0..5 {
            let h = observing_history(6 + seed as usize, seed);
            for depth in 1..=3 {
                let c = pi_star(&h, &PolicySpace::trivial(), &SelfModConfig { gamma: 0.9, depth }, &q, &u).unwrap();
                let d = plan::act(&h, &q, &u, &PlanConfig { horizon: depth, discount: DiscountFn::Geometric(0.9) }).unwrap();
                assert_eq!(c.action, d.action, "seed {seed} depth {depth}");
                assert!((c.value * 0.9 - d.value).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_harness_run() {
        let (q, u) = env1_agent();
        let env = envs::make_q67(99, 100).unwrap();
        let config = HarnessConfig { checkpoints: 2, ..HarnessConfig::default() };
        let report = prop4_harness(&env, &q, &u, 1, 4, &config, 9).unwrap();
        assert_eq!(report.evaluations, 8);
        assert_eq!(report.self_modifications, 0);
        for r in &report.trials {
            assert!(r.min_gap.unwrap() >= -1e-12);
        }
    }
}
