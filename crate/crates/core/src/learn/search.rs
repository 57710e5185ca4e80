//! Bounded MDL model search.
//!
//! A candidate has `n <= 3` state variables. Each state rule is a small
//! deterministic expression over the previous state; at most one rule is
//! wrapped as `choice p e (not e)`, optionally only when a gate expression
//! holds. Each observation copies one state variable, possibly negated or
//! overridden by an action (`ite act.x act.y cur.z`).
//!
//! Because every candidate's observations are deterministic given the
//! state, whether a history is possible at all depends only on which states
//! can follow which, not on the probability `p`. The search first filters
//! structures by that support check (bit sets over at most eight states),
//! then scores the survivors for every `p` on the grid at once, abandoning a
//! `p` as soon as its partial score falls below the best complete one.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::dbn::{infer, DbnProgram, Expr, Fraction, History, InitDist, Rule};

/// Bounds of the searched model family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpace {
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    /// At most 3.
    pub max_state_vars: usize,
    /// Node bound of the deterministic part of a state rule, at most 3.
    pub max_expr_nodes: u32,
    /// Choice probabilities range over `{k / fraction_den}`.
    pub fraction_den: u32,
    /// Also try noise that applies only when a gate expression holds.
    pub gated_choice: bool,
}

impl CandidateSpace {
    pub fn new(actions: Vec<String>, observations: Vec<String>) -> Self {
        CandidateSpace {
            actions,
            observations,
            max_state_vars: 3,
            max_expr_nodes: 3,
            fraction_den: 100,
            gated_choice: false,
        }
    }

    /// A space over the same action and observation alphabet as `program`.
    pub fn for_alphabet_of(program: &DbnProgram) -> Self {
        let obs = program.obs_rules().iter().map(|r| r.name.clone()).collect();
        Self::new(program.action_names().to_vec(), obs)
    }

    fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::BadSpace(m.to_owned()));
        if self.max_state_vars == 0 || self.max_state_vars > 3 {
            return bad("max_state_vars must be 1, 2 or 3");
        }
        if self.max_expr_nodes == 0 || self.max_expr_nodes > 3 {
            return bad("max_expr_nodes must be 1, 2 or 3");
        }
        if self.fraction_den < 2 {
            return bad("fraction_den must be at least 2");
        }
        if self.observations.is_empty() {
            return bad("no observation variables");
        }
        Ok(())
    }
}

/// A program together with its fit to a history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredModel {
    pub program: DbnProgram,
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl ScoredModel {
    pub fn score(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }

    pub fn description_length(&self) -> u32 {
        self.program.description_length()
    }
}

/// A deterministic rule body with its truth table over previous states.
#[derive(Debug, Clone)]
struct Table {
    expr: Expr,
    tt: u8,
    refs: u32,
}

fn rule_tables(n: usize, max_nodes: u32) -> Vec<Table> {
    let mut exprs = vec![Expr::Const(false), Expr::Const(true)];
    exprs.extend((0..n).map(Expr::Prev));
    if max_nodes >= 2 {
        exprs.extend((0..n).map(|i| Expr::not(Expr::Prev(i))));
    }
    if max_nodes >= 3 {
        for op in [Expr::and, Expr::or, Expr::xor] {
            for i in 0..n {
                for j in i + 1..n {
                    exprs.push(op(Expr::Prev(i), Expr::Prev(j)));
                }
            }
        }
    }
    let mut seen = [false; 256];
    let mut out = Vec::new();
    for expr in exprs {
        let tt = (0..1u32 << n).fold(0u8, |acc, x| {
            let ctx = crate::dbn::EvalContext { prev: x, cur: 0, action: 0 };
            acc | (u8::from(expr.prob_true(&ctx) > 0.5) << x)
        });
        if !seen[tt as usize] {
            seen[tt as usize] = true;
            out.push(Table { refs: expr.state_refs(), expr, tt });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Noise {
    None,
    Plain(usize),
    /// Rule `k` is noisy only when table `gate` holds.
    Gated(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ObsForm {
    Var(usize),
    NotVar(usize),
    /// `ite act.when act.show cur.var`.
    Gate { when: usize, show: usize, var: usize },
}

impl ObsForm {
    fn var(self) -> usize {
        match self {
            ObsForm::Var(z) | ObsForm::NotVar(z) | ObsForm::Gate { var: z, .. } => z,
        }
    }

    fn expr(self) -> Expr {
        match self {
            ObsForm::Var(z) => Expr::Cur(z),
            ObsForm::NotVar(z) => Expr::not(Expr::Cur(z)),
            ObsForm::Gate { when, show, var } => Expr::ite(Expr::Act(when), Expr::Act(show), Expr::Cur(var)),
        }
    }

    /// States consistent with observation bit `j` at every step.
    fn masks(self, h: &History, j: usize, n: usize) -> Vec<u8> {
        let full = full_set(n);
        let where_bit = |z: usize, value: bool| -> u8 {
            (0..1u32 << n).filter(|x| (x >> z & 1 == 1) == value).fold(0u8, |m, x| m | 1 << x)
        };
        let on = [where_bit(self.var(), false), where_bit(self.var(), true)];
        h.steps()
            .iter()
            .map(|s| {
                let o = s.obs.get(j);
                match self {
                    ObsForm::Var(_) => on[usize::from(o)],
                    ObsForm::NotVar(_) => on[usize::from(!o)],
                    ObsForm::Gate { when, show, .. } => {
                        if s.action.get(when) {
                            if s.action.get(show) == o {
                                full
                            } else {
                                0
                            }
                        } else {
                            on[usize::from(o)]
                        }
                    }
                }
            })
            .collect()
    }
}

fn full_set(n: usize) -> u8 {
    ((1u16 << (1 << n)) - 1) as u8
}

/// Per previous state: the successor with every rule at its deterministic
/// value, and whether the noisy variable may come out flipped.
#[derive(Debug, Clone)]
struct Transitions {
    main: [u8; 8],
    free: [bool; 8],
    flip: u8,
    states: usize,
}

impl Transitions {
    fn new(n: usize, tables: &[Table], rules: &[usize], noise: Noise) -> Self {
        let states = 1 << n;
        let mut main = [0u8; 8];
        let mut free = [false; 8];
        for x in 0..states {
            main[x] = rules.iter().enumerate().fold(0u8, |acc, (i, &r)| acc | ((tables[r].tt >> x & 1) << i));
            free[x] = match noise {
                Noise::None => false,
                Noise::Plain(_) => true,
                Noise::Gated(_, g) => tables[g].tt >> x & 1 == 1,
            };
        }
        let flip = match noise {
            Noise::None => 0,
            Noise::Plain(k) | Noise::Gated(k, _) => 1 << k,
        };
        Transitions { main, free, flip, states }
    }

    fn successors(&self) -> [u8; 8] {
        let mut succ = [0u8; 8];
        for x in 0..self.states {
            succ[x] = 1 << self.main[x];
            if self.free[x] {
                succ[x] |= 1 << (self.main[x] ^ self.flip);
            }
        }
        succ
    }
}

/// Can the state set stay non-empty along the history, starting from every
/// state, when restricted at step `t` by `a[t] & b[t]`?
fn supported(succ: &[u8; 8], full: u8, a: &[u8], b: &[u8]) -> bool {
    let mut s = full;
    for (&ma, &mb) in a.iter().zip(b) {
        let mut img = 0u8;
        let mut rest = s;
        while rest != 0 {
            img |= succ[rest.trailing_zeros() as usize];
            rest &= rest - 1;
        }
        s = img & ma & mb;
        if s == 0 {
            return false;
        }
    }
    true
}

/// A structure that passed the support check.
#[derive(Debug, Clone)]
struct Survivor {
    n: usize,
    rules: Vec<usize>,
    noise: Noise,
    obs: Vec<ObsForm>,
}

struct Enumerator<'a> {
    space: &'a CandidateSpace,
    h: &'a History,
    n: usize,
    tables: Vec<Table>,
    /// `forms[j]` lists (form, per-step mask) for observation `j`.
    forms: Vec<Vec<(ObsForm, Vec<u8>)>>,
    out: Vec<Survivor>,
}

impl<'a> Enumerator<'a> {
    fn new(space: &'a CandidateSpace, h: &'a History, n: usize) -> Self {
        let tables = rule_tables(n, space.max_expr_nodes);
        let na = space.actions.len();
        let forms = (0..space.observations.len())
            .map(|j| {
                let mut list = Vec::new();
                for z in 0..n {
                    list.push(ObsForm::Var(z));
                    list.push(ObsForm::NotVar(z));
                    for when in 0..na {
                        for show in (0..na).filter(|&s| s != when) {
                            let consistent = h
                                .steps()
                                .iter()
                                .all(|s| !s.action.get(when) || s.action.get(show) == s.obs.get(j));
                            if consistent {
                                list.push(ObsForm::Gate { when, show, var: z });
                            }
                        }
                    }
                }
                list.into_iter().map(|f| (f, f.masks(h, j, n))).collect()
            })
            .collect();
        Enumerator { space, h, n, tables, forms, out: Vec::new() }
    }

    fn noises(&self) -> Vec<Noise> {
        let mut v = vec![Noise::None];
        v.extend((0..self.n).map(Noise::Plain));
        if self.space.gated_choice {
            for k in 0..self.n {
                for (g, t) in self.tables.iter().enumerate() {
                    if !matches!(t.expr, Expr::Const(_)) {
                        v.push(Noise::Gated(k, g));
                    }
                }
            }
        }
        v
    }

    fn run(mut self) -> Vec<Survivor> {
        let n = self.n;
        let nt = self.tables.len();
        let all_ones = vec![0xffu8; self.h.len()];
        for noise in self.noises() {
            // A plainly noisy rule's body does not affect support.
            let fixed = match noise {
                Noise::Plain(k) => Some(k),
                _ => None,
            };
            let free: Vec<usize> = (0..n).filter(|&i| Some(i) != fixed).collect();
            let mut rules = vec![0usize; n];
            loop {
                let succ = Transitions::new(n, &self.tables, &rules, noise).successors();
                let mut chosen = Vec::with_capacity(self.forms.len());
                self.descend(&succ, &all_ones, &mut chosen, &rules, noise, None);
                // Odometer over the rule tuple, last rule fastest.
                let mut advanced = false;
                for &i in free.iter().rev() {
                    rules[i] += 1;
                    if rules[i] < nt {
                        advanced = true;
                        break;
                    }
                    rules[i] = 0;
                }
                if !advanced {
                    break;
                }
            }
        }
        self.out
    }

    /// Chooses observation forms one variable at a time, pruning as soon as
    /// the forms chosen so far make the history impossible. Observed state
    /// variables are introduced in increasing order, which picks one
    /// representative per renaming of the observed variables.
    fn descend(
        &mut self,
        succ: &[u8; 8],
        mask: &[u8],
        chosen: &mut Vec<ObsForm>,
        rules: &[usize],
        noise: Noise,
        max_var: Option<usize>,
    ) {
        let j = chosen.len();
        if j == self.forms.len() {
            self.emit(chosen, rules, noise);
            return;
        }
        let full = full_set(self.n);
        let limit = max_var.map_or(0, |m| m + 1).min(self.n - 1);
        for f in 0..self.forms[j].len() {
            let (form, ref fmask) = self.forms[j][f];
            if form.var() > limit {
                continue;
            }
            if !supported(succ, full, mask, fmask) {
                continue;
            }
            let combined: Vec<u8> = mask.iter().zip(fmask).map(|(a, b)| a & b).collect();
            chosen.push(form);
            let m = Some(max_var.map_or(form.var(), |m| m.max(form.var())));
            self.descend(succ, &combined, chosen, rules, noise, m);
            chosen.pop();
        }
    }

    fn emit(&mut self, obs: &[ObsForm], rules: &[usize], noise: Noise) {
        let bodies: Vec<usize> = match noise {
            Noise::Plain(_) => (0..self.tables.len()).collect(),
            _ => vec![usize::MAX],
        };
        for body in bodies {
            let mut rules = rules.to_vec();
            if let Noise::Plain(k) = noise {
                rules[k] = body;
            }
            if !self.relevant(obs, &rules, noise) {
                continue;
            }
            self.out.push(Survivor { n: self.n, rules, noise, obs: obs.to_vec() });
        }
    }

    /// Every state variable must influence some observation; otherwise a
    /// smaller candidate explains the history equally well.
    fn relevant(&self, obs: &[ObsForm], rules: &[usize], noise: Noise) -> bool {
        let mut cone = obs.iter().fold(0u32, |m, f| m | 1 << f.var());
        loop {
            let mut next = cone;
            for i in 0..self.n {
                if cone >> i & 1 == 1 {
                    next |= self.tables[rules[i]].refs;
                    if let Noise::Gated(k, g) = noise {
                        if k == i {
                            next |= self.tables[g].refs;
                        }
                    }
                }
            }
            if next == cone {
                break;
            }
            cone = next;
        }
        cone == (1 << self.n) - 1
    }
}

impl Survivor {
    fn program(&self, tables: &[Table], space: &CandidateSpace, p: Option<Fraction>) -> DbnProgram {
        let state = (0..self.n)
            .map(|i| {
                let e = tables[self.rules[i]].expr.clone();
                let noisy = |e: Expr| Expr::choice(p.expect("noisy rule needs a probability"), e.clone(), Expr::not(e));
                let expr = match self.noise {
                    Noise::Plain(k) if k == i => noisy(e),
                    Noise::Gated(k, g) if k == i => Expr::ite(tables[g].expr.clone(), noisy(e.clone()), e),
                    _ => e,
                };
                Rule::new(format!("x{i}"), expr)
            })
            .collect();
        let obs = self.obs.iter().zip(&space.observations).map(|(f, name)| Rule::new(name.clone(), f.expr())).collect();
        DbnProgram::new(space.actions.clone(), state, obs, InitDist::Uniform).expect("search builds valid programs")
    }

    fn combined_mask(&self, h: &History) -> Vec<u8> {
        let mut m = vec![0xffu8; h.len()];
        for (j, f) in self.obs.iter().enumerate() {
            for (a, b) in m.iter_mut().zip(f.masks(h, j, self.n)) {
                *a &= b;
            }
        }
        m
    }
}

const LN2: f64 = std::f64::consts::LN_2;

/// Relative tolerance under which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn tie_margin(score: f64) -> f64 {
    TIE_TOLERANCE * score.abs().max(1.0)
}

/// Scaled forward pass for several noise probabilities at once, one lane
/// per probability, laid out so the inner loops run across lanes. Every 32
/// steps a lane is dropped once its partial log-likelihood plus
/// `ln_priors[l]` is below `threshold` by more than the tie margin; partial
/// scores only decrease, so a dropped lane cannot finish above it. Dropped
/// and impossible lanes come back as `-inf`.
fn forward_lanes(tr: &Transitions, mask: &[u8], alphas: &[f64], ln_priors: &[f64], threshold: f64) -> Vec<f64> {
    const CHECK: usize = 32;
    let states = tr.states;
    let mut result = vec![f64::NEG_INFINITY; alphas.len()];
    // Live lanes are kept dense in the first `live` slots of each array.
    let mut live = alphas.len();
    let mut id: Vec<usize> = (0..live).collect();
    let mut stay = alphas.to_vec();
    let mut flip: Vec<f64> = alphas.iter().map(|a| 1.0 - a).collect();
    let mut prior = ln_priors.to_vec();
    let mut log = vec![0.0f64; live];
    let mut scale = vec![1.0f64; live];
    let mut belief = vec![1.0 / states as f64; states * live];
    let mut next = vec![0.0f64; states * live];
    let mut total = vec![0.0f64; live];
    let cutoff = threshold - tie_margin(threshold);
    for (t, &m) in mask.iter().enumerate() {
        let w = live;
        next[..states * w].iter_mut().for_each(|v| *v = 0.0);
        for x in 0..states {
            let src = &belief[x * w..(x + 1) * w];
            let y = tr.main[x] as usize;
            let keep_y = m >> y & 1 == 1;
            if tr.free[x] {
                let z = y ^ tr.flip as usize;
                if keep_y {
                    let dst = &mut next[y * w..(y + 1) * w];
                    for ((d, s), p) in dst.iter_mut().zip(src).zip(&stay[..w]) {
                        *d += s * p;
                    }
                }
                if m >> z & 1 == 1 {
                    let dst = &mut next[z * w..(z + 1) * w];
                    for ((d, s), p) in dst.iter_mut().zip(src).zip(&flip[..w]) {
                        *d += s * p;
                    }
                }
            } else if keep_y {
                let dst = &mut next[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let total = &mut total[..w];
        total.copy_from_slice(&next[..w]);
        for y in 1..states {
            for (acc, v) in total.iter_mut().zip(&next[y * w..(y + 1) * w]) {
                *acc += v;
            }
        }
        for l in 0..w {
            // An impossible step zeroes the lane; it is removed at the next
            // check through its zero scale.
            scale[l] *= total[l];
            total[l] = if total[l] > 0.0 { 1.0 / total[l] } else { 0.0 };
            if scale[l] < 1e-250 {
                log[l] += scale[l].ln();
                scale[l] = 1.0;
            }
        }
        for y in 0..states {
            let (dst, src) = (&mut belief[y * w..(y + 1) * w], &next[y * w..(y + 1) * w]);
            for ((d, s), inv) in dst.iter_mut().zip(src).zip(total.iter()) {
                *d = s * inv;
            }
        }
        let last = t + 1 == mask.len();
        if (t + 1) % CHECK == 0 || last {
            let mut l = 0;
            while l < live {
                log[l] += scale[l].ln();
                scale[l] = 1.0;
                if log[l] + prior[l] < cutoff || log[l] == f64::NEG_INFINITY {
                    live -= 1;
                    swap_lane(l, live, states, &mut belief, &mut [&mut stay, &mut flip, &mut prior, &mut log, &mut scale]);
                    id.swap(l, live);
                } else {
                    l += 1;
                }
            }
            if live == 0 {
                return result;
            }
            if live < w {
                compact(&mut belief, states, w, live);
            }
        }
    }
    if mask.is_empty() {
        for l in 0..live {
            if prior[l] >= cutoff {
                result[id[l]] = 0.0;
            }
        }
        return result;
    }
    for l in 0..live {
        result[id[l]] = log[l];
    }
    result
}

/// Swaps lanes `a` and `b` in every per-lane array; `belief` still has the
/// row width it had before any lane was dropped this round.
fn swap_lane(a: usize, b: usize, states: usize, belief: &mut [f64], cols: &mut [&mut Vec<f64>]) {
    let w = belief.len() / states;
    for x in 0..states {
        belief.swap(x * w + a, x * w + b);
    }
    for c in cols.iter_mut() {
        c.swap(a, b);
    }
}

/// Repacks rows of width `from` into rows of width `to`, keeping the first
/// `to` lanes of each.
fn compact(belief: &mut Vec<f64>, states: usize, from: usize, to: usize) {
    for x in 1..states {
        belief.copy_within(x * from..x * from + to, x * to);
    }
    belief.truncate(states * to);
}

#[derive(Debug, Clone)]
struct Entry {
    score: f64,
    log_likelihood: f64,
    size: u32,
    /// (state count index, survivor index, lane): enumeration order.
    order: (usize, usize, usize),
    p: Option<Fraction>,
}

/// Orders better entries first: higher score, then (within the tie
/// tolerance) shorter, then earlier in enumeration.
fn better(a: &Entry, b: &Entry) -> Ordering {
    if (a.score - b.score).abs() <= tie_margin(a.score.max(b.score)) {
        a.size.cmp(&b.size).then(a.order.cmp(&b.order))
    } else if a.score > b.score {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

struct Ranked {
    entries: Vec<Entry>,
    k: usize,
}

impl Ranked {
    fn threshold(&self) -> f64 {
        if self.entries.len() < self.k {
            f64::NEG_INFINITY
        } else {
            self.entries.iter().map(|e| e.score).fold(f64::INFINITY, f64::min)
        }
    }

    fn offer(&mut self, e: Entry) {
        let t = self.threshold();
        if e.score < t - tie_margin(t) {
            return;
        }
        self.entries.push(e);
        self.entries.sort_by(better);
        self.entries.truncate(self.k);
    }
}

/// A relabeling of the states of `n` variables: a permutation of the
/// variables followed by negation of some of them.
struct Relabel {
    map: [u8; 8],
    vars: [usize; 3],
}

fn relabelings(n: usize) -> Vec<Relabel> {
    let states = 1usize << n;
    let mut out = Vec::new();
    for code in 0..n.pow(n as u32) {
        let mut vars = [0usize; 3];
        let mut c = code;
        for v in vars.iter_mut().take(n) {
            *v = c % n;
            c /= n;
        }
        if (0..n).any(|i| (0..i).any(|j| vars[i] == vars[j])) {
            continue;
        }
        for neg in 0..states {
            let mut map = [0u8; 8];
            for (x, m) in map.iter_mut().enumerate().take(states) {
                let moved = (0..n).filter(|&i| x >> i & 1 == 1).fold(0, |acc, i| acc | 1 << vars[i]);
                *m = (moved ^ neg) as u8;
            }
            out.push(Relabel { map, vars });
        }
    }
    out
}

/// Survivors with equal keys have the same likelihood for every noise
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct ClassKey {
    n: usize,
    main: [u8; 8],
    free: [bool; 8],
    flip: u8,
    mask: usize,
}

/// Interned per-step state masks and their images under relabelings.
#[derive(Default)]
struct Masks {
    list: Vec<Vec<u8>>,
    ids: HashMap<Vec<u8>, usize>,
    by_obs: HashMap<(usize, Vec<ObsForm>), usize>,
    images: HashMap<(usize, usize, usize), usize>,
}

impl Masks {
    fn intern(&mut self, m: Vec<u8>) -> usize {
        if let Some(&id) = self.ids.get(&m) {
            return id;
        }
        let id = self.list.len();
        self.list.push(m.clone());
        self.ids.insert(m, id);
        id
    }

    fn of(&mut self, s: &Survivor, h: &History) -> usize {
        let key = (s.n, s.obs.clone());
        if let Some(&id) = self.by_obs.get(&key) {
            return id;
        }
        let id = self.intern(s.combined_mask(h));
        self.by_obs.insert(key, id);
        id
    }

    fn image(&mut self, n: usize, id: usize, r_idx: usize, r: &Relabel) -> usize {
        if let Some(&img) = self.images.get(&(n, id, r_idx)) {
            return img;
        }
        let states = 1usize << n;
        let m: Vec<u8> = self.list[id]
            .iter()
            .map(|&b| (0..states).filter(|&x| b >> x & 1 == 1).fold(0u8, |acc, x| acc | 1 << r.map[x]))
            .collect();
        let img = self.intern(m);
        self.images.insert((n, id, r_idx), img);
        img
    }
}

fn class_key(tr: &Transitions, n: usize, mask: usize, rels: &[Relabel], masks: &mut Masks) -> ClassKey {
    let mut best: Option<ClassKey> = None;
    for (r_idx, r) in rels.iter().enumerate() {
        let mut main = [0u8; 8];
        let mut free = [false; 8];
        for x in 0..tr.states {
            let gx = r.map[x] as usize;
            main[gx] = r.map[tr.main[x] as usize];
            free[gx] = tr.free[x];
        }
        let flip = if tr.flip == 0 { 0 } else { 1 << r.vars[tr.flip.trailing_zeros() as usize] };
        let key = ClassKey { n, main, free, flip, mask: masks.image(n, mask, r_idx, r) };
        if best.is_none_or(|b| key < b) {
            best = Some(key);
        }
    }
    best.expect("at least the identity relabeling")
}

struct Job {
    n_idx: usize,
    s_idx: usize,
    /// Description length without the choice probability's digits.
    base: u32,
    noisy: bool,
}

/// Survivors sharing a likelihood function, scored once through the member
/// with the largest prior.
struct Class {
    rep: usize,
    members: Vec<usize>,
    transitions: Transitions,
    mask: usize,
    hint: f64,
}

/// Returns the `k` best candidates for `h`, best first.
pub fn map_lambda_top(h: &History, space: &CandidateSpace, k: usize) -> Result<Vec<ScoredModel>, LearnError> {
    space.validate()?;
    if k == 0 {
        return Ok(Vec::new());
    }
    for s in h.steps() {
        if s.action.width() != space.actions.len() || s.obs.width() != space.observations.len() {
            return Err(LearnError::AlphabetMismatch);
        }
    }
    let grid = Fraction::grid(space.fraction_den);
    let alphas: Vec<f64> = grid.iter().map(|f| f.value()).collect();
    let per_n: Vec<(Vec<Table>, Vec<Survivor>)> = (1..=space.max_state_vars)
        .map(|n| {
            let e = Enumerator::new(space, h, n);
            let tables = e.tables.clone();
            (tables, e.run())
        })
        .collect();

    let mut jobs = Vec::new();
    let mut masks = Masks::default();
    let mut classes: Vec<Class> = Vec::new();
    let mut class_of: HashMap<ClassKey, usize> = HashMap::new();
    for (n_idx, (tables, survivors)) in per_n.iter().enumerate() {
        let rels = relabelings(n_idx + 1);
        for (s_idx, s) in survivors.iter().enumerate() {
            let noisy = s.noise != Noise::None;
            let placeholder = Fraction::new(1, 2).expect("valid");
            let size = s.program(tables, space, noisy.then_some(placeholder)).description_length();
            let base = if noisy { size - placeholder.digit_cost() } else { size };
            let j = jobs.len();
            jobs.push(Job { n_idx, s_idx, base, noisy });
            let tr = Transitions::new(s.n, tables, &s.rules, s.noise);
            let mask = masks.of(s, h);
            let key = class_key(&tr, s.n, mask, &rels, &mut masks);
            match class_of.get(&key) {
                Some(&c) => {
                    let class = &mut classes[c];
                    class.members.push(j);
                    if base < jobs[class.rep].base {
                        class.rep = j;
                        class.transitions = tr;
                        class.mask = mask;
                    }
                }
                None => {
                    class_of.insert(key, classes.len());
                    classes.push(Class { rep: j, members: vec![j], transitions: tr, mask, hint: 0.0 });
                }
            }
        }
    }
    let ln_priors = |job: &Job, fracs: &[Fraction]| -> Vec<f64> {
        if job.noisy {
            fracs.iter().map(|f| -f64::from(job.base + f.digit_cost()) * LN2).collect()
        } else {
            vec![-f64::from(job.base) * LN2]
        }
    };

    const PROBE_STEPS: usize = 256;
    const PROBE_LANES: usize = 8;
    if h.len() > PROBE_STEPS {
        // Score a prefix at a few probabilities to find good incumbents
        // early; the order only affects how much pruning saves.
        let stride = grid.len().div_ceil(PROBE_LANES).max(1);
        let probe: Vec<Fraction> = grid.iter().copied().skip(stride / 2).step_by(stride).collect();
        let probe_alphas: Vec<f64> = probe.iter().map(|f| f.value()).collect();
        for class in &mut classes {
            let job = &jobs[class.rep];
            let p = ln_priors(job, &probe);
            let a = if job.noisy { &probe_alphas[..] } else { &[1.0][..] };
            let mask = &masks.list[class.mask][..PROBE_STEPS];
            let logs = forward_lanes(&class.transitions, mask, a, &p, f64::NEG_INFINITY);
            class.hint = logs.iter().zip(&p).map(|(l, p)| l + p).fold(f64::NEG_INFINITY, f64::max);
        }
        classes.sort_by(|a, b| b.hint.partial_cmp(&a.hint).unwrap_or(Ordering::Equal));
    }

    let mut ranked = Ranked { entries: Vec::new(), k };
    for class in &classes {
        let rep = &jobs[class.rep];
        let a = if rep.noisy { &alphas[..] } else { &[1.0][..] };
        let logs =
            forward_lanes(&class.transitions, &masks.list[class.mask], a, &ln_priors(rep, &grid), ranked.threshold());
        for &m in &class.members {
            let job = &jobs[m];
            for (lane, &ll) in logs.iter().enumerate() {
                if ll == f64::NEG_INFINITY {
                    continue;
                }
                let frac = job.noisy.then(|| grid[lane]);
                let size = job.base + frac.map_or(0, |f| f.digit_cost());
                ranked.offer(Entry {
                    score: ll - f64::from(size) * LN2,
                    log_likelihood: ll,
                    size,
                    order: (job.n_idx, job.s_idx, lane),
                    p: frac,
                });
            }
        }
    }
    if ranked.entries.is_empty() {
        return Err(LearnError::NoExplanation);
    }
    Ok(ranked
        .entries
        .iter()
        .map(|e| {
            let (tables, survivors) = &per_n[e.order.0];
            let program = survivors[e.order.1].program(tables, space, e.p);
            ScoredModel { program, log_likelihood: e.log_likelihood, log_prior: -f64::from(e.size) * LN2 }
        })
        .collect())
}

/// The maximum a posteriori program for `h` within `space`.
pub fn map_lambda(h: &History, space: &CandidateSpace) -> Result<ScoredModel, LearnError> {
    Ok(map_lambda_top(h, space, 1)?.remove(0))
}

/// Result of re-fitting the probability of a program's single noisy rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaEstimate {
    /// The rule fits best without noise.
    Deterministic,
    Fraction(Fraction),
}

fn replace_choice(e: &Expr, p: Option<Fraction>) -> Expr {
    let rec = |x: &Expr| replace_choice(x, p);
    match e {
        Expr::Choice(_, t, f) => match p {
            Some(p) => Expr::choice(p, (**t).clone(), (**f).clone()),
            None => (**t).clone(),
        },
        Expr::Const(_) | Expr::Prev(_) | Expr::Cur(_) | Expr::Act(_) => e.clone(),
        Expr::Not(a) => Expr::not(rec(a)),
        Expr::And(a, b) => Expr::and(rec(a), rec(b)),
        Expr::Or(a, b) => Expr::or(rec(a), rec(b)),
        Expr::Xor(a, b) => Expr::xor(rec(a), rec(b)),
        Expr::Ite(c, t, f) => Expr::ite(rec(c), rec(t), rec(f)),
    }
}

/// `program` with its single choice probability replaced by `p`, or the
/// choice collapsed to its first branch when `p` is `None`.
pub fn with_choice(program: &DbnProgram, p: Option<Fraction>) -> Result<DbnProgram, LearnError> {
    if program.choice_count() != 1 {
        return Err(LearnError::NotSingleChoice(program.choice_count()));
    }
    let map = |rules: &[Rule]| rules.iter().map(|r| Rule::new(r.name.clone(), replace_choice(&r.expr, p))).collect();
    Ok(DbnProgram::new(
        program.action_names().to_vec(),
        map(program.state_rules()),
        map(program.obs_rules()),
        program.init().clone(),
    )?)
}

/// Re-fits the probability of the program's single choice node over the
/// grid `{k / den}`, also trying the noise-free rule. Scores include the
/// prior, so a shorter fraction can beat a slightly closer one.
pub fn estimate_alpha(h: &History, program: &DbnProgram, den: u32) -> Result<AlphaEstimate, LearnError> {
    let mut best: Option<(f64, u32, AlphaEstimate)> = None;
    let candidates =
        std::iter::once(None).chain(Fraction::grid(den).into_iter().map(Some));
    for p in candidates {
        let q = with_choice(program, p)?;
        let ll = infer::log_likelihood(&q, h)?;
        if ll == f64::NEG_INFINITY {
            continue;
        }
        let score = ll + q.prior().ln();
        let size = q.description_length();
        let est = p.map_or(AlphaEstimate::Deterministic, AlphaEstimate::Fraction);
        let replace = match best {
            None => true,
            Some((bs, bsize, _)) => {
                if (score - bs).abs() <= tie_margin(score.max(bs)) {
                    size < bsize
                } else {
                    score > bs
                }
            }
        };
        if replace {
            best = Some((score, size, est));
        }
    }
    best.map(|b| b.2).ok_or(LearnError::NoExplanation)
}
