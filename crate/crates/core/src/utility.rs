//! Utility specifications, their binding into a learned model, and the
//! utility functions agents optimize.
//!
//! Model-based specifications name a structural role ("the state variable no
//! observation reads") rather than a variable. [`bind`] resolves the role in
//! a concrete program; the bound utility is then the posterior expectation of
//! the per-state utility, which for single-step specifications only needs
//! the filtered marginal of the target variable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbn::{
    infer, state_history_distribution, ActionVec, Belief, DbnError, DbnProgram, Filter, History,
    ObsVec, Step, VarKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("no model variable matches `{0}`")]
    NoMatch(String),
    #[error("`{spec}` matches several model variables: {candidates:?}")]
    Ambiguous { spec: String, candidates: Vec<String> },
    #[error("unknown {kind} variable `{name}`")]
    UnknownVariable { kind: VarKind, name: String },
    #[error("malformed utility spec `{0}`")]
    BadSpec(String),
    #[error(transparent)]
    Model(#[from] DbnError),
}

/// Declarative utility definition, resolved against a model by [`bind`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UtilitySpec {
    /// 1 when `action` equals the state variable no observation reads.
    UnobservedStateEqualsAction { action: String },
    /// 1 when `action` at the previous step equals the one state variable the
    /// observations read.
    ObservedStateEqualsPrevAction { action: String },
    /// The value of a reward bit in the latest observation.
    RewardChannel { obs: String },
    /// 1 at the first step where observation `obs` takes `value`.
    Goal { obs: String, value: bool },
    /// 1 when the latest observation was the model's most likely prediction.
    PredictionMatch,
    /// `1 - rho(h)`: rewards histories the model finds improbable.
    KnowledgeSeeking,
}

impl UtilitySpec {
    pub fn is_model_based(&self) -> bool {
        matches!(
            self,
            UtilitySpec::UnobservedStateEqualsAction { .. }
                | UtilitySpec::ObservedStateEqualsPrevAction { .. }
        )
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilitySpec::UnobservedStateEqualsAction { action } => write!(f, "unobserved-equals:{action}"),
            UtilitySpec::ObservedStateEqualsPrevAction { action } => {
                write!(f, "observed-equals-prev:{action}")
            }
            UtilitySpec::RewardChannel { obs } => write!(f, "reward:{obs}"),
            UtilitySpec::Goal { obs, value } => write!(f, "goal:{obs}={}", u8::from(*value)),
            UtilitySpec::PredictionMatch => f.write_str("predict"),
            UtilitySpec::KnowledgeSeeking => f.write_str("knowledge"),
        }
    }
}

impl FromStr for UtilitySpec {
    type Err = UtilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UtilityError::BadSpec(s.to_owned());
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let arg = arg.trim();
        let need_arg = |a: &str| if a.is_empty() { Err(bad()) } else { Ok(a.to_owned()) };
        Ok(match kind.trim() {
            "unobserved-equals" => UtilitySpec::UnobservedStateEqualsAction { action: need_arg(arg)? },
            "observed-equals-prev" => {
                UtilitySpec::ObservedStateEqualsPrevAction { action: need_arg(arg)? }
            }
            "reward" => UtilitySpec::RewardChannel { obs: need_arg(arg)? },
            "goal" => {
                let (obs, v) = arg.split_once('=').ok_or_else(bad)?;
                let value = match v.trim() {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(bad()),
                };
                UtilitySpec::Goal { obs: need_arg(obs.trim())?, value }
            }
            "predict" => UtilitySpec::PredictionMatch,
            "knowledge" => UtilitySpec::KnowledgeSeeking,
            _ => return Err(bad()),
        })
    }
}

/// A specification resolved against one program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub spec: UtilitySpec,
    /// Bound state variable, for the model-based variants.
    pub target: Option<usize>,
    /// Index of the action variable the spec compares against.
    pub action: Option<usize>,
    /// Index of the observation variable the spec reads.
    pub obs: Option<usize>,
}

/// Bitmask of state variables read by some observation rule.
pub fn observed_state_vars(program: &DbnProgram) -> u32 {
    program.obs_rules().iter().fold(0, |m, r| m | r.expr.state_refs())
}

fn state_name(program: &DbnProgram, i: usize) -> String {
    program.state_rules()[i].name.clone()
}

/// Resolves `spec` against `program`. A state variable counts as observed
/// when some output rule reads it.
pub fn bind(spec: &UtilitySpec, program: &DbnProgram) -> Result<Binding, UtilityError> {
    let find = |kind: VarKind, name: &str| {
        program
            .index_of(kind, name)
            .ok_or_else(|| UtilityError::UnknownVariable { kind, name: name.to_owned() })
    };
    let mut binding = Binding { spec: spec.clone(), target: None, action: None, obs: None };
    let observed = observed_state_vars(program);
    let pick = |want_observed: bool| -> Result<usize, UtilityError> {
        let candidates: Vec<usize> = (0..program.n_state())
            .filter(|i| (observed >> i & 1 == 1) == want_observed)
            .collect();
        match candidates.as_slice() {
            [] => Err(UtilityError::NoMatch(spec.to_string())),
            [one] => Ok(*one),
            many => Err(UtilityError::Ambiguous {
                spec: spec.to_string(),
                candidates: many.iter().map(|&i| state_name(program, i)).collect(),
            }),
        }
    };
    match spec {
        UtilitySpec::UnobservedStateEqualsAction { action } => {
            binding.action = Some(find(VarKind::Action, action)?);
            binding.target = Some(pick(false)?);
        }
        UtilitySpec::ObservedStateEqualsPrevAction { action } => {
            binding.action = Some(find(VarKind::Action, action)?);
            binding.target = Some(pick(true)?);
        }
        UtilitySpec::RewardChannel { obs } | UtilitySpec::Goal { obs, .. } => {
            binding.obs = Some(find(VarKind::Observation, obs)?);
        }
        UtilitySpec::PredictionMatch | UtilitySpec::KnowledgeSeeking => {}
    }
    Ok(binding)
}

impl Binding {
    pub fn target_name(&self, program: &DbnProgram) -> Option<String> {
        self.target.map(|i| state_name(program, i))
    }

    /// Per-state utility `u(h, z)` for the model-based variants, where only
    /// the latest state of `z` matters. `None` when the history is too short
    /// for the spec to apply.
    pub fn state_utility(&self, state_bits: u32, last: Option<ActionVec>, before_last: Option<ActionVec>) -> Option<f64> {
        let (target, action) = (self.target?, self.action?);
        let chosen = match self.spec {
            UtilitySpec::UnobservedStateEqualsAction { .. } => last?,
            UtilitySpec::ObservedStateEqualsPrevAction { .. } => before_last?,
            _ => return None,
        };
        let matches = chosen.get(action) == (state_bits >> target & 1 == 1);
        Some(if matches { 1.0 } else { 0.0 })
    }

    /// The collapsed posterior expectation: with `p` the filtered
    /// probability that the target is true, `p` if the compared action bit is
    /// true and `1 - p` otherwise.
    pub fn model_utility(&self, belief: &Belief, last: Option<ActionVec>, before_last: Option<ActionVec>) -> f64 {
        let (Some(target), Some(action)) = (self.target, self.action) else {
            return 0.0;
        };
        let chosen = match self.spec {
            UtilitySpec::UnobservedStateEqualsAction { .. } => last,
            UtilitySpec::ObservedStateEqualsPrevAction { .. } => before_last,
            _ => None,
        };
        match chosen {
            None => 0.0,
            Some(a) => {
                let p = belief.marginal(target);
                if a.get(action) {
                    p
                } else {
                    1.0 - p
                }
            }
        }
    }
}

fn last_two(h: &History) -> (Option<ActionVec>, Option<ActionVec>) {
    let s = h.steps();
    let n = s.len();
    (s.last().map(|x| x.action), (n >= 2).then(|| s[n - 2].action))
}

/// Model-based utility of `h` through the filtered marginal of the bound
/// variable.
pub fn u_model(h: &History, program: &DbnProgram, binding: &Binding) -> Result<f64, UtilityError> {
    let belief = infer::filter(program, h)?;
    let (last, before) = last_two(h);
    Ok(binding.model_utility(&belief, last, before))
}

/// The same quantity as [`u_model`], summed over every hidden state history
/// with its posterior weight. Exponential in `|h|`; bounded by `bound`.
pub fn u_model_general(
    h: &History,
    program: &DbnProgram,
    binding: &Binding,
    bound: usize,
) -> Result<f64, UtilityError> {
    let dist = state_history_distribution(program, h, bound)?;
    let (last, before) = last_two(h);
    Ok(dist
        .iter()
        .map(|(z, w)| {
            let latest = z.last().expect("state histories are never empty");
            w * binding.state_utility(latest.bits(), last, before).unwrap_or(0.0)
        })
        .sum())
}

/// Reward bit of the latest observation.
pub fn u_rl(h: &History, reward_obs: usize) -> f64 {
    h.last().map_or(0.0, |s| f64::from(u8::from(s.obs.get(reward_obs))))
}

/// 1 exactly at the first step whose observation has `obs == value`.
pub fn u_goal(h: &History, obs: usize, value: bool) -> f64 {
    goal_reached_now(h.steps(), &[], obs, value)
}

fn goal_reached_now(base: &[Step], suffix: &[Step], obs: usize, value: bool) -> f64 {
    let all = base.iter().chain(suffix);
    let n = base.len() + suffix.len();
    if n == 0 {
        return 0.0;
    }
    let first = all.take(n - 1).all(|s| s.obs.get(obs) != value);
    let last = suffix.last().or(base.last()).expect("non-empty");
    f64::from(u8::from(first && last.obs.get(obs) == value))
}

/// Most likely observation under `dist`; ties go to the smallest in
/// lexicographic order.
pub(crate) fn argmax_obs(dist: &[(ObsVec, f64)]) -> Option<ObsVec> {
    let mut best: Option<(ObsVec, f64)> = None;
    for &(o, p) in dist {
        best = match best {
            Some((bo, bp)) if bp > p || (bp == p && bo < o) => Some((bo, bp)),
            _ => Some((o, p)),
        };
    }
    best.map(|(o, _)| o)
}

/// 1 when the latest observation equals the model's argmax prediction made
/// just before it.
pub fn u_predict(h: &History, model: &DbnProgram) -> Result<f64, UtilityError> {
    let Some(last) = h.last() else {
        return Ok(0.0);
    };
    let f = Filter::over(model, &h.prefix(h.len() - 1))?;
    let dist = f.obs_distribution(last.action);
    Ok(f64::from(u8::from(argmax_obs(&dist) == Some(last.obs))))
}

/// `1 - rho(h)` with `rho(h) = P(h | model) * prior(model)`.
pub fn u_knowledge(h: &History, model: &DbnProgram) -> Result<f64, UtilityError> {
    let p = infer::likelihood(model, h)?;
    Ok(1.0 - p * model.prior().value())
}

/// What a utility sees at a node of a planning tree: the real history, the
/// hypothetical suffix appended by the planner, and the filtered beliefs
/// after and before the latest step.
pub struct NodeView<'a> {
    pub model: &'a DbnProgram,
    pub base: &'a History,
    pub suffix: &'a [Step],
    pub belief: &'a Belief,
    pub parent_belief: Option<&'a Belief>,
    pub log_likelihood: f64,
}

impl NodeView<'_> {
    pub fn len(&self) -> usize {
        self.base.len() + self.suffix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Step `k` from the end, 0 being the latest.
    pub fn back(&self, k: usize) -> Option<&Step> {
        let n = self.suffix.len();
        if k < n {
            Some(&self.suffix[n - 1 - k])
        } else {
            let b = self.base.steps();
            b.len().checked_sub(1 + k - n).map(|i| &b[i])
        }
    }
}

/// A bound utility an agent plans with.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentUtility {
    Model(Binding),
    Reward { obs: usize },
    Goal { obs: usize, value: bool },
    Predict,
    Knowledge,
}

impl AgentUtility {
    pub fn from_binding(binding: Binding) -> Self {
        match binding.spec {
            UtilitySpec::UnobservedStateEqualsAction { .. }
            | UtilitySpec::ObservedStateEqualsPrevAction { .. } => AgentUtility::Model(binding),
            UtilitySpec::RewardChannel { .. } => AgentUtility::Reward { obs: binding.obs.expect("bound") },
            UtilitySpec::Goal { value, .. } => AgentUtility::Goal { obs: binding.obs.expect("bound"), value },
            UtilitySpec::PredictionMatch => AgentUtility::Predict,
            UtilitySpec::KnowledgeSeeking => AgentUtility::Knowledge,
        }
    }

    pub fn evaluate(&self, node: &NodeView) -> f64 {
        match self {
            AgentUtility::Model(b) => {
                b.model_utility(node.belief, node.back(0).map(|s| s.action), node.back(1).map(|s| s.action))
            }
            AgentUtility::Reward { obs } => node.back(0).map_or(0.0, |s| f64::from(u8::from(s.obs.get(*obs)))),
            AgentUtility::Goal { obs, value } => goal_reached_now(node.base.steps(), node.suffix, *obs, *value),
            AgentUtility::Predict => {
                let (Some(last), Some(parent)) = (node.back(0), node.parent_belief) else {
                    return 0.0;
                };
                let dist = obs_distribution(node.model, parent, last.action);
                f64::from(u8::from(argmax_obs(&dist) == Some(last.obs)))
            }
            AgentUtility::Knowledge => {
                1.0 - (node.log_likelihood + node.model.prior().ln()).exp()
            }
        }
    }

    /// Everything besides the belief that utilities further down the tree
    /// depend on. `None` means the subtree cannot be shared.
    pub fn carry_key(&self, node: &NodeView) -> Option<u64> {
        match self {
            AgentUtility::Model(b) => match b.spec {
                UtilitySpec::ObservedStateEqualsPrevAction { .. } => {
                    let a = b.action.expect("bound");
                    Some(node.back(0).map_or(2, |s| u64::from(s.action.get(a))))
                }
                _ => Some(0),
            },
            AgentUtility::Reward { .. } | AgentUtility::Predict => Some(0),
            AgentUtility::Goal { obs, value } => {
                let reached = node.base.steps().iter().chain(node.suffix).any(|s| s.obs.get(*obs) == *value);
                Some(u64::from(reached))
            }
            AgentUtility::Knowledge => None,
        }
    }

    /// Utility of a real history.
    pub fn of_history(&self, h: &History, model: &DbnProgram) -> Result<f64, UtilityError> {
        Ok(match self {
            AgentUtility::Model(b) => u_model(h, model, b)?,
            AgentUtility::Reward { obs } => u_rl(h, *obs),
            AgentUtility::Goal { obs, value } => u_goal(h, *obs, *value),
            AgentUtility::Predict => u_predict(h, model)?,
            AgentUtility::Knowledge => u_knowledge(h, model)?,
        })
    }
}

/// `P(o | belief, action)` over all observations with non-zero probability.
pub fn obs_distribution(model: &DbnProgram, belief: &Belief, action: ActionVec) -> Vec<(ObsVec, f64)> {
    let pred = infer::predict(model, belief.weights(), action.bits());
    let m = model.n_obs();
    (0u32..1 << m)
        .filter_map(|o| {
            let p: f64 = pred
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(x, w)| w * model.obs_prob(x as u32, action.bits(), o))
                .sum();
            (p > 0.0).then(|| (ObsVec::new(o, m), p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    fn spec1() -> UtilitySpec {
        "unobserved-equals:a".parse().unwrap()
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["unobserved-equals:a", "observed-equals-prev:a", "reward:r", "goal:o=1", "predict", "knowledge"] {
            assert_eq!(s.parse::<UtilitySpec>().unwrap().to_string(), s);
        }
        assert!("unobserved-equals".parse::<UtilitySpec>().is_err());
        assert!("goal:o=2".parse::<UtilitySpec>().is_err());
        assert!("bogus".parse::<UtilitySpec>().is_err());
    }

    #[test]
    fn binds_unobserved_variable_in_q67() {
        let q = envs::make_q67_prime(99, 100).unwrap();
        let b = bind(&spec1(), &q).unwrap();
        assert_eq!(b.target_name(&q).as_deref(), Some("r'"));
        assert_eq!(bind(&spec1(), &q).unwrap(), b);
    }

    #[test]
    fn binds_observed_variable_in_period4() {
        let q = envs::make_period4(1, 2).unwrap();
        let spec: UtilitySpec = "observed-equals-prev:a".parse().unwrap();
        let b = bind(&spec, &q).unwrap();
        assert_eq!(b.target_name(&q).as_deref(), Some("s"));
        // q67 exposes two state variables, so the observed-variable spec is ambiguous there.
        let q67 = envs::make_q67(99, 100).unwrap();
        assert!(matches!(bind(&spec, &q67), Err(UtilityError::Ambiguous { .. })));
    }

    #[test]
    fn no_match_when_everything_is_observed() {
        let p = DbnProgram::from_text(
            "actions a\nstate s = prev.r\nstate r = prev.s\nobs o = cur.s\nobs p = cur.r\n",
        )
        .unwrap();
        assert!(matches!(bind(&spec1(), &p), Err(UtilityError::NoMatch(_))));
    }

    #[test]
    fn ambiguous_with_two_hidden_variables() {
        let p = DbnProgram::from_text(
            "actions a\nstate s = prev.r\nstate r = prev.s\nstate x = prev.x\nstate y = prev.y\nobs o = cur.s\nobs p = cur.r\n",
        )
        .unwrap();
        match bind(&spec1(), &p) {
            Err(UtilityError::Ambiguous { candidates, .. }) => assert_eq!(candidates, ["x", "y"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_action_is_reported() {
        let q = envs::make_q67(99, 100).unwrap();
        let spec: UtilitySpec = "unobserved-equals:zz".parse().unwrap();
        assert!(matches!(bind(&spec, &q), Err(UtilityError::UnknownVariable { .. })));
    }

    #[test]
    fn model_utility_substitutes_marginal() {
        let q = envs::make_q67(99, 100).unwrap();
        let b = bind(&spec1(), &q).unwrap();
        let r = b.target.unwrap();
        // Uniform belief: 0.5 whatever the action.
        let uniform = Belief::uniform(3);
        for a in ActionVec::all(4) {
            assert_eq!(b.model_utility(&uniform, Some(a), None), 0.5);
        }
        // P(r = true) = 0.9.
        let w: Vec<f64> = (0..8).map(|k| if k >> r & 1 == 1 { 0.9 / 4.0 } else { 0.1 / 4.0 }).collect();
        let belief = Belief::from_weights(w);
        let a_true = ActionVec::from_bools(&[true, false, false, false]);
        let a_false = ActionVec::from_bools(&[false, false, false, false]);
        assert!((b.model_utility(&belief, Some(a_true), None) - 0.9).abs() < 1e-15);
        assert!((b.model_utility(&belief, Some(a_false), None) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mature_agent_matching_last_observation_scores_one() {
        let q = envs::make_q67(99, 100).unwrap();
        let b = bind(&spec1(), &q).unwrap();
        let observe = ActionVec::from_bools(&[false, false, false, false]);
        let h = crate::dbn::simulate(&q, |_| observe, 6, 5).unwrap();
        let last_o = h.last().unwrap().obs.get(0);
        let next = ActionVec::from_bools(&[last_o, false, false, false]);
        // r at the next step copies s now, which the b=F observation reveals.
        let f = Filter::over(&q, &h).unwrap();
        let dist = f.obs_distribution(next);
        for (o, _) in dist {
            let u = u_model(&h.extended(next, o), &q, &b).unwrap();
            assert_eq!(u, 1.0);
        }
    }

    #[test]
    fn observation_based_utilities() {
        let mut h = History::new();
        let a = ActionVec::new(0, 1);
        h.push(a, ObsVec::from_bools(&[false, true]));
        assert_eq!(u_rl(&h, 1), 1.0);
        assert_eq!(u_rl(&h, 0), 0.0);
        assert_eq!(u_goal(&h, 1, true), 1.0);
        h.push(a, ObsVec::from_bools(&[false, true]));
        // Reached once already.
        assert_eq!(u_goal(&h, 1, true), 0.0);
        assert_eq!(u_goal(&History::new(), 1, true), 0.0);
    }

    #[test]
    fn prediction_match_uses_argmax() {
        let p = DbnProgram::from_text("actions x\nstate s = prev.s\nobs o = (choice 4/5 true false)\n").unwrap();
        let a = ActionVec::new(0, 1);
        let mut h = History::new();
        h.push(a, ObsVec::new(1, 1));
        assert_eq!(u_predict(&h, &p).unwrap(), 1.0);
        h.push(a, ObsVec::new(0, 1));
        assert_eq!(u_predict(&h, &p).unwrap(), 0.0);
    }

    #[test]
    fn knowledge_seeking_stays_in_range() {
        let q = envs::make_q67(99, 100).unwrap();
        let h = crate::dbn::simulate(&q, |_| ActionVec::new(0, 4), 5, 1).unwrap();
        let u = u_knowledge(&h, &q).unwrap();
        assert!((0.0..=1.0).contains(&u));
        assert!(u > 0.999);
    }
}
