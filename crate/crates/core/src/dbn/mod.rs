//! Stochastic Boolean dynamic Bayesian networks.
//!
//! A [`DbnProgram`] declares ordered state, observation and action variables.
//! Each state variable has an update rule over the previous state and the
//! current action; each observation variable has an output rule over the
//! current state and action. Stepping draws the next state and then the
//! observation. Everything in [`infer`] is exact enumeration over state
//! assignments, which is what the three-variable environments here need.

mod expr;
mod fraction;
pub mod infer;
mod text;

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{EvalContext, Expr};
pub use fraction::Fraction;
pub use infer::{filter, likelihood, log_likelihood, state_history_distribution, Belief, Filter};

/// Largest number of variables of one kind a program may declare.
pub const MAX_VARS: usize = 16;

/// Default bound on history length for the exhaustive oracle.
pub const ORACLE_BOUND: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbnError {
    #[error("{kind} vector has width {got}, program declares {expected}")]
    WidthMismatch { kind: VarKind, expected: usize, got: usize },
    #[error("history has probability zero under the model")]
    ModelContradiction,
    #[error("history length {len} exceeds oracle bound {bound}")]
    OracleBoundExceeded { len: usize, bound: usize },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    State,
    Observation,
    Action,
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarKind::State => "state",
            VarKind::Observation => "observation",
            VarKind::Action => "action",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId {
    pub name: String,
    pub kind: VarKind,
}

macro_rules! bit_vector {
    ($(#[$meta:meta])* $name:ident, $kind:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub struct $name {
            bits: u32,
            width: u8,
        }

        impl $name {
            pub const KIND: VarKind = $kind;

            /// Variable `i` is bit `i` of `bits`.
            pub fn new(bits: u32, width: usize) -> Self {
                assert!(width <= MAX_VARS, "width {width} exceeds {MAX_VARS}");
                let mask = (1u32 << width) - 1;
                $name { bits: bits & mask, width: width as u8 }
            }

            pub fn from_bools(values: &[bool]) -> Self {
                let bits = values
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, &v)| acc | (u32::from(v) << i));
                Self::new(bits, values.len())
            }

            pub fn bits(self) -> u32 {
                self.bits
            }

            pub fn width(self) -> usize {
                usize::from(self.width)
            }

            pub fn get(self, i: usize) -> bool {
                self.bits >> i & 1 == 1
            }

            pub fn with(self, i: usize, value: bool) -> Self {
                let bits = if value { self.bits | 1 << i } else { self.bits & !(1 << i) };
                $name { bits, width: self.width }
            }

            pub fn to_bools(self) -> Vec<bool> {
                (0..self.width()).map(|i| self.get(i)).collect()
            }

            /// All assignments of the given width in lexicographic order
            /// (first variable most significant, false before true).
            pub fn all(width: usize) -> impl Iterator<Item = Self> {
                (0u32..1 << width).map(move |k| {
                    let bits = (0..width).fold(0, |acc, i| acc | ((k >> (width - 1 - i) & 1) << i));
                    Self::new(bits, width)
                })
            }

            pub(crate) fn check_width(self, expected: usize) -> Result<(), DbnError> {
                if self.width() == expected {
                    Ok(())
                } else {
                    Err(DbnError::WidthMismatch { kind: Self::KIND, expected, got: self.width() })
                }
            }
        }

        impl Ord for $name {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.width
                    .cmp(&other.width)
                    .then_with(|| self.to_bools().cmp(&other.to_bools()))
            }
        }

        impl PartialOrd for $name {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        /// Bit string, first variable first.
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                for i in 0..self.width() {
                    f.write_str(if self.get(i) { "1" } else { "0" })?;
                }
                Ok(())
            }
        }

        impl std::str::FromStr for $name {
            type Err = DbnError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let values = s
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(DbnError::InvalidProgram(format!("bad bit string `{s}`"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if values.len() > MAX_VARS {
                    return Err(DbnError::InvalidProgram(format!("bit string `{s}` too long")));
                }
                Ok(Self::from_bools(&values))
            }
        }
    };
}

bit_vector!(
    /// Total assignment to a program's state variables.
    StateVec,
    VarKind::State
);
bit_vector!(
    /// Total assignment to a program's action variables.
    ActionVec,
    VarKind::Action
);
bit_vector!(
    /// Total assignment to a program's observation variables.
    ObsVec,
    VarKind::Observation
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub action: ActionVec,
    pub obs: ObsVec,
}

/// Alternating actions and observations, `(a1, o1, ..., at, ot)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct History {
    steps: Vec<Step>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: Vec<Step>) -> Self {
        History { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, action: ActionVec, obs: ObsVec) {
        self.steps.push(Step { action, obs });
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn last(&self) -> Option<&Step> {
        self.steps.last()
    }

    pub fn prefix(&self, len: usize) -> History {
        History { steps: self.steps[..len].to_vec() }
    }

    /// `self` followed by one more step.
    pub fn extended(&self, action: ActionVec, obs: ObsVec) -> History {
        let mut h = self.clone();
        h.push(action, obs);
        h
    }
}

/// A named variable together with its rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub expr: Expr,
}

impl Rule {
    pub fn new(name: impl Into<String>, expr: Expr) -> Self {
        Rule { name: name.into(), expr }
    }
}

/// Distribution of the state before the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitDist {
    Uniform,
    Point(StateVec),
    /// One weight per state assignment, indexed by `StateVec::bits`.
    Weights(Vec<f64>),
}

/// Exact dyadic prior `2^-bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Prior {
    pub bits: u32,
}

impl Prior {
    pub fn value(self) -> f64 {
        (-f64::from(self.bits)).exp2()
    }

    pub fn ln(self) -> f64 {
        -f64::from(self.bits) * std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbnProgram {
    state: Vec<Rule>,
    obs: Vec<Rule>,
    actions: Vec<String>,
    init: InitDist,
}

impl DbnProgram {
    pub fn new(
        actions: Vec<String>,
        state: Vec<Rule>,
        obs: Vec<Rule>,
        init: InitDist,
    ) -> Result<Self, DbnError> {
        let program = DbnProgram { state, obs, actions, init };
        program.validate()?;
        Ok(program)
    }

    fn validate(&self) -> Result<(), DbnError> {
        let invalid = |m: String| Err(DbnError::InvalidProgram(m));
        let (ns, no, na) = (self.state.len(), self.obs.len(), self.actions.len());
        if ns > MAX_VARS || no > MAX_VARS || na > MAX_VARS {
            return invalid(format!("at most {MAX_VARS} variables of each kind"));
        }
        if ns + no == 0 {
            return invalid("program has no rules".into());
        }
        let mut names: Vec<&str> = self
            .state
            .iter()
            .chain(&self.obs)
            .map(|r| r.name.as_str())
            .chain(self.actions.iter().map(String::as_str))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("variable `{}` declared twice", w[0]));
        }
        for (rules, is_state) in [(&self.state, true), (&self.obs, false)] {
            for rule in rules.iter() {
                let mut err = None;
                rule.expr.walk(&mut |e| {
                    let msg = match e {
                        Expr::Prev(_) if !is_state => Some("reads the previous state"),
                        Expr::Cur(_) if is_state => Some("reads the current state"),
                        Expr::Prev(i) | Expr::Cur(i) if *i >= ns => Some("reads an undeclared state"),
                        Expr::Act(i) if *i >= na => Some("reads an undeclared action"),
                        _ => None,
                    };
                    if let (Some(m), None) = (msg, &err) {
                        err = Some(format!("rule `{}` {m}", rule.name));
                    }
                });
                if let Some(m) = err {
                    return invalid(m);
                }
            }
        }
        match &self.init {
            InitDist::Uniform => {}
            InitDist::Point(s) => s.check_width(ns)?,
            InitDist::Weights(w) => {
                let total: f64 = w.iter().sum();
                if w.len() != 1 << ns || w.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return invalid("init weights must be a distribution over all states".into());
                }
            }
        }
        Ok(())
    }

    pub fn state_rules(&self) -> &[Rule] {
        &self.state
    }

    pub fn obs_rules(&self) -> &[Rule] {
        &self.obs
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn init(&self) -> &InitDist {
        &self.init
    }

    pub fn with_init(mut self, init: InitDist) -> Result<Self, DbnError> {
        self.init = init;
        self.validate()?;
        Ok(self)
    }

    pub fn n_state(&self) -> usize {
        self.state.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mk = |name: &String, kind| VarId { name: name.clone(), kind };
        self.state
            .iter()
            .map(|r| mk(&r.name, VarKind::State))
            .chain(self.obs.iter().map(|r| mk(&r.name, VarKind::Observation)))
            .chain(self.actions.iter().map(|n| mk(n, VarKind::Action)))
            .collect()
    }

    pub fn index_of(&self, kind: VarKind, name: &str) -> Option<usize> {
        match kind {
            VarKind::State => self.state.iter().position(|r| r.name == name),
            VarKind::Observation => self.obs.iter().position(|r| r.name == name),
            VarKind::Action => self.actions.iter().position(|n| n == name),
        }
    }

    /// Probability of each initial state, indexed by state bits.
    pub fn init_weights(&self) -> Vec<f64> {
        let n = 1usize << self.n_state();
        match &self.init {
            InitDist::Uniform => vec![1.0 / n as f64; n],
            InitDist::Point(s) => {
                let mut w = vec![0.0; n];
                w[s.bits() as usize] = 1.0;
                w
            }
            InitDist::Weights(w) => w.clone(),
        }
    }

    /// Sum of rule sizes.
    pub fn description_length(&self) -> u32 {
        self.state.iter().chain(&self.obs).map(|r| r.expr.size()).sum()
    }

    pub fn prior(&self) -> Prior {
        Prior { bits: self.description_length() }
    }

    pub fn choice_count(&self) -> usize {
        self.state.iter().chain(&self.obs).map(|r| r.expr.choice_count()).sum()
    }

    pub fn is_deterministic(&self) -> bool {
        self.choice_count() == 0
    }

    /// Bitmask of action variables read by any rule.
    pub fn action_refs(&self) -> u32 {
        self.state.iter().chain(&self.obs).fold(0, |m, r| m | r.expr.action_refs())
    }

    /// Per-variable probability that each state bit is true at t.
    pub fn state_bit_probs(&self, prev: u32, action: u32, out: &mut [f64]) {
        let ctx = EvalContext { prev, cur: 0, action };
        for (slot, rule) in out.iter_mut().zip(&self.state) {
            *slot = rule.expr.prob_true(&ctx);
        }
    }

    /// `P(next | prev, action)`.
    pub fn transition_prob(&self, prev: StateVec, action: ActionVec, next: StateVec) -> f64 {
        let ctx = EvalContext { prev: prev.bits(), cur: 0, action: action.bits() };
        self.state
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let p = r.expr.prob_true(&ctx);
                if next.get(i) {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }

    /// `P(obs | state, action)` for the state at the same step.
    pub fn obs_prob(&self, state: u32, action: u32, obs: u32) -> f64 {
        let ctx = EvalContext { prev: 0, cur: state, action };
        let mut p = 1.0;
        for (j, r) in self.obs.iter().enumerate() {
            let q = r.expr.prob_true(&ctx);
            p *= if obs >> j & 1 == 1 { q } else { 1.0 - q };
            if p == 0.0 {
                break;
            }
        }
        p
    }

    /// Calls `f(next_bits, prob)` for every successor with non-zero probability.
    pub fn for_each_successor(&self, prev: u32, action: u32, mut f: impl FnMut(u32, f64)) {
        let mut probs = [0.0; MAX_VARS];
        let n = self.n_state();
        self.state_bit_probs(prev, action, &mut probs[..n]);
        expand(&probs[..n], 0, 0, 1.0, &mut f);
    }

    /// Output rules evaluated on a known state with no randomness consumed.
    /// Stochastic outputs resolve to their more likely value.
    pub fn output(&self, state: StateVec, action: ActionVec) -> ObsVec {
        let ctx = EvalContext { prev: 0, cur: state.bits(), action: action.bits() };
        let bits = self
            .obs
            .iter()
            .enumerate()
            .fold(0, |acc, (j, r)| acc | (u32::from(r.expr.prob_true(&ctx) > 0.5) << j));
        ObsVec::new(bits, self.n_obs())
    }

    /// Draws the next state and observation. Choice nodes consume `rng` in
    /// declaration order: state rules first, then output rules.
    pub fn step<R: Rng + ?Sized>(
        &self,
        prev: StateVec,
        action: ActionVec,
        rng: &mut R,
    ) -> Result<(StateVec, ObsVec), DbnError> {
        prev.check_width(self.n_state())?;
        action.check_width(self.n_actions())?;
        let ctx = EvalContext { prev: prev.bits(), cur: 0, action: action.bits() };
        let next = self
            .state
            .iter()
            .enumerate()
            .fold(0, |acc, (i, r)| acc | (u32::from(r.expr.sample(&ctx, rng)) << i));
        let ctx = EvalContext { prev: 0, cur: next, action: action.bits() };
        let obs = self
            .obs
            .iter()
            .enumerate()
            .fold(0, |acc, (j, r)| acc | (u32::from(r.expr.sample(&ctx, rng)) << j));
        Ok((StateVec::new(next, self.n_state()), ObsVec::new(obs, self.n_obs())))
    }

    /// Draws a state from the initial distribution.
    pub fn sample_init<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVec {
        let n = self.n_state();
        let bits = match &self.init {
            InitDist::Uniform => rng.gen_range(0..1u32 << n),
            InitDist::Point(s) => s.bits(),
            InitDist::Weights(w) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = w.len() - 1;
                for (k, x) in w.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                pick as u32
            }
        };
        StateVec::new(bits, n)
    }
}

fn expand(probs: &[f64], i: usize, bits: u32, p: f64, f: &mut impl FnMut(u32, f64)) {
    if i == probs.len() {
        f(bits, p);
        return;
    }
    let q = probs[i];
    if q > 0.0 {
        expand(probs, i + 1, bits | 1 << i, p * q, f);
    }
    if q < 1.0 {
        expand(probs, i + 1, bits, p * (1.0 - q), f);
    }
}

/// States visited alongside the generated history; `states[0]` is the
/// initial state and `states[t]` the state at step t.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub history: History,
    pub states: Vec<StateVec>,
}

/// Runs `steps` steps from `start`, asking `policy` for each action.
pub fn simulate_from<R: Rng + ?Sized>(
    program: &DbnProgram,
    start: StateVec,
    mut policy: impl FnMut(&History) -> ActionVec,
    steps: usize,
    rng: &mut R,
) -> Result<Trace, DbnError> {
    let mut history = History::new();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(start);
    let mut state = start;
    for _ in 0..steps {
        let action = policy(&history);
        let (next, obs) = program.step(state, action, rng)?;
        history.push(action, obs);
        states.push(next);
        state = next;
    }
    Ok(Trace { history, states })
}

/// Draws the initial state from the program's init distribution and runs
/// `steps` steps, all randomness from `seed`.
pub fn simulate(
    program: &DbnProgram,
    policy: impl FnMut(&History) -> ActionVec,
    steps: usize,
    seed: u64,
) -> Result<History, DbnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = program.sample_init(&mut rng);
    Ok(simulate_from(program, start, policy, steps, &mut rng)?.history)
}
