//! Exact forward filtering, likelihood, and the exhaustive state-history
//! oracle used to check them.

use std::collections::BTreeMap;

use super::{ActionVec, DbnError, DbnProgram, History, ObsVec, StateVec};

/// Distribution over the current hidden state, indexed by state bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
    width: usize,
}

impl Belief {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let width = weights.len().trailing_zeros() as usize;
        assert_eq!(weights.len(), 1 << width, "belief needs one weight per state");
        Belief { weights, width }
    }

    pub fn uniform(width: usize) -> Self {
        let n = 1usize << width;
        Belief { weights: vec![1.0 / n as f64; n], width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn prob(&self, state: StateVec) -> f64 {
        self.weights[state.bits() as usize]
    }

    /// `P(variable i is true)`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(k, _)| k >> i & 1 == 1)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateVec, f64)> + '_ {
        let width = self.width;
        self.weights.iter().enumerate().map(move |(k, &w)| (StateVec::new(k as u32, width), w))
    }

    /// Exact bit patterns, usable as a memo key.
    pub fn key(&self) -> Vec<u64> {
        self.weights.iter().map(|w| w.to_bits()).collect()
    }
}

/// Predict-then-condition recursion over one history, kept incrementally.
#[derive(Debug, Clone)]
pub struct Filter<'p> {
    program: &'p DbnProgram,
    belief: Vec<f64>,
    log_likelihood: f64,
    steps: usize,
}

impl<'p> Filter<'p> {
    pub fn new(program: &'p DbnProgram) -> Self {
        Filter { program, belief: program.init_weights(), log_likelihood: 0.0, steps: 0 }
    }

    /// Filters a whole history.
    pub fn over(program: &'p DbnProgram, h: &History) -> Result<Self, DbnError> {
        let mut f = Filter::new(program);
        for step in h.steps() {
            f.update(step.action, step.obs)?;
        }
        Ok(f)
    }

    pub fn program(&self) -> &'p DbnProgram {
        self.program
    }

    pub fn belief(&self) -> Belief {
        Belief { weights: self.belief.clone(), width: self.program.n_state() }
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Distribution over the next state after `action`, before observing.
    pub fn predict(&self, action: ActionVec) -> Vec<f64> {
        predict(self.program, &self.belief, action.bits())
    }

    /// `P(o | h, action)` for every observation with non-zero probability, in
    /// increasing bit order.
    pub fn obs_distribution(&self, action: ActionVec) -> Vec<(ObsVec, f64)> {
        let pred = self.predict(action);
        let m = self.program.n_obs();
        (0u32..1 << m)
            .filter_map(|o| {
                let p: f64 = pred
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(x, w)| w * self.program.obs_prob(x as u32, action.bits(), o))
                    .sum();
                (p > 0.0).then(|| (ObsVec::new(o, m), p))
            })
            .collect()
    }

    /// Conditions on one step and returns its predictive probability. On a
    /// zero-probability observation the filter is left unchanged.
    pub fn update(&mut self, action: ActionVec, obs: ObsVec) -> Result<f64, DbnError> {
        action.check_width(self.program.n_actions())?;
        obs.check_width(self.program.n_obs())?;
        let mut next = self.predict(action);
        let p = condition(self.program, &mut next, action.bits(), obs.bits());
        if p <= 0.0 {
            return Err(DbnError::ModelContradiction);
        }
        self.belief = next;
        self.log_likelihood += p.ln();
        self.steps += 1;
        Ok(p)
    }
}

pub(crate) fn predict(program: &DbnProgram, belief: &[f64], action: u32) -> Vec<f64> {
    let mut next = vec![0.0; belief.len()];
    for (x, &w) in belief.iter().enumerate() {
        if w > 0.0 {
            program.for_each_successor(x as u32, action, |y, p| next[y as usize] += w * p);
        }
    }
    next
}

/// Multiplies `pred` by `P(obs | x, action)`, normalizes in place and returns
/// the normalizer.
pub(crate) fn condition(program: &DbnProgram, pred: &mut [f64], action: u32, obs: u32) -> f64 {
    let mut total = 0.0;
    for (x, w) in pred.iter_mut().enumerate() {
        if *w > 0.0 {
            *w *= program.obs_prob(x as u32, action, obs);
            total += *w;
        }
    }
    if total > 0.0 {
        pred.iter_mut().for_each(|w| *w /= total);
    }
    total
}

/// `ln P(h | program)`; negative infinity for impossible histories.
pub fn log_likelihood(program: &DbnProgram, h: &History) -> Result<f64, DbnError> {
    match Filter::over(program, h) {
        Ok(f) => Ok(f.log_likelihood()),
        Err(DbnError::ModelContradiction) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// `P(h | program)`, marginalizing the initial state and all hidden
/// transitions. Exactly zero for impossible histories.
pub fn likelihood(program: &DbnProgram, h: &History) -> Result<f64, DbnError> {
    let mut belief = program.init_weights();
    let mut total = 1.0;
    for step in h.steps() {
        step.action.check_width(program.n_actions())?;
        step.obs.check_width(program.n_obs())?;
        let mut next = predict(program, &belief, step.action.bits());
        let p = condition(program, &mut next, step.action.bits(), step.obs.bits());
        if p <= 0.0 {
            return Ok(0.0);
        }
        total *= p;
        belief = next;
    }
    Ok(total)
}

/// Marginal distribution of the current hidden state given `h`.
pub fn filter(program: &DbnProgram, h: &History) -> Result<Belief, DbnError> {
    Ok(Filter::over(program, h)?.belief())
}

/// Exhaustive posterior over whole state histories `(x0, x1, ..., xt)`.
/// Only histories with non-zero probability appear.
pub fn state_history_distribution(
    program: &DbnProgram,
    h: &History,
    bound: usize,
) -> Result<BTreeMap<Vec<StateVec>, f64>, DbnError> {
    if h.len() > bound {
        return Err(DbnError::OracleBoundExceeded { len: h.len(), bound });
    }
    for step in h.steps() {
        step.action.check_width(program.n_actions())?;
        step.obs.check_width(program.n_obs())?;
    }
    let n = program.n_state();
    let mut out = BTreeMap::new();
    let mut path = Vec::with_capacity(h.len() + 1);
    for (x0, w) in program.init_weights().into_iter().enumerate() {
        if w > 0.0 {
            path.push(x0 as u32);
            extend_paths(program, h, &mut path, w, &mut |p, w| {
                out.insert(p.iter().map(|&x| StateVec::new(x, n)).collect(), w);
            });
            path.pop();
        }
    }
    let total: f64 = out.values().sum();
    if total <= 0.0 {
        return Err(DbnError::ModelContradiction);
    }
    out.values_mut().for_each(|w| *w /= total);
    Ok(out)
}

fn extend_paths(
    program: &DbnProgram,
    h: &History,
    path: &mut Vec<u32>,
    weight: f64,
    emit: &mut impl FnMut(&[u32], f64),
) {
    let t = path.len() - 1;
    if t == h.len() {
        emit(path, weight);
        return;
    }
    let step = h.steps()[t];
    let (a, o) = (step.action.bits(), step.obs.bits());
    let prev = path[t];
    let mut succ = Vec::new();
    program.for_each_successor(prev, a, |y, p| succ.push((y, p)));
    for (y, p) in succ {
        let w = weight * p * program.obs_prob(y, a, o);
        if w > 0.0 {
            path.push(y);
            extend_paths(program, h, path, w, emit);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(text: &str) -> DbnProgram {
        DbnProgram::from_text(text).unwrap()
    }

    fn step(h: &mut History, a: &str, o: &str) {
        h.push(a.parse().unwrap(), o.parse().unwrap());
    }

    /// Emits o=1 with probability 0.8 whatever the state and action.
    fn biased_emitter() -> DbnProgram {
        prog("actions x\nstate s = prev.s\nobs o = (choice 4/5 true false)\ninit uniform\n")
    }

    #[test]
    fn worked_likelihood_example() {
        let mut h = History::new();
        step(&mut h, "0", "1");
        step(&mut h, "0", "0");
        step(&mut h, "1", "1");
        let p = likelihood(&biased_emitter(), &h).unwrap();
        assert!((p - 0.128).abs() < 1e-12, "{p}");
    }

    #[test]
    fn empty_history_has_likelihood_one() {
        assert_eq!(likelihood(&biased_emitter(), &History::new()).unwrap(), 1.0);
        let b = filter(&biased_emitter(), &History::new()).unwrap();
        assert_eq!(b, Belief::uniform(1));
    }

    #[test]
    fn impossible_history_is_zero_and_contradicts_filter() {
        let p = prog("actions\nstate s = prev.s\nobs o = cur.s\nobs q = (not cur.s)\ninit uniform\n");
        let mut h = History::new();
        h.push(ActionVec::new(0, 0), "11".parse().unwrap());
        assert_eq!(likelihood(&p, &h).unwrap(), 0.0);
        assert_eq!(log_likelihood(&p, &h).unwrap(), f64::NEG_INFINITY);
        assert_eq!(filter(&p, &h).unwrap_err(), DbnError::ModelContradiction);
        assert_eq!(
            state_history_distribution(&p, &h, 8).unwrap_err(),
            DbnError::ModelContradiction
        );
    }

    #[test]
    fn oracle_bound_is_enforced() {
        let mut h = History::new();
        for _ in 0..9 {
            step(&mut h, "0", "1");
        }
        let err = state_history_distribution(&biased_emitter(), &h, 8).unwrap_err();
        assert_eq!(err, DbnError::OracleBoundExceeded { len: 9, bound: 8 });
    }

    #[test]
    fn empty_history_oracle_is_init() {
        let d = state_history_distribution(&biased_emitter(), &History::new(), 8).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.keys().all(|z| z.len() == 1));
        assert!(d.values().all(|&w| w == 0.5));
    }

    #[test]
    fn deterministic_program_has_single_history() {
        let p = prog("actions\nstate s = (not prev.s)\nobs o = cur.s\ninit uniform\n");
        let mut h = History::new();
        step(&mut h, "", "1");
        step(&mut h, "", "0");
        let d = state_history_distribution(&p, &h, 8).unwrap();
        assert_eq!(d.len(), 1);
        let (z, w) = d.iter().next().unwrap();
        assert_eq!(*w, 1.0);
        let bits: Vec<bool> = z.iter().map(|s| s.get(0)).collect();
        assert_eq!(bits, [false, true, false]);
    }

    #[test]
    fn obs_distribution_sums_to_one() {
        let p = biased_emitter();
        let f = Filter::new(&p);
        let d = f.obs_distribution(ActionVec::new(0, 1));
        let total: f64 = d.iter().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(d.len(), 2);
    }
}
