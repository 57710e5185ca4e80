//! Random programs and brute-force oracles shared by the integration tests.
//! Nothing here calls the library's inference code: rule probabilities come
//! from enumerating every outcome of the choice nodes, and history
//! probabilities from enumerating every hidden state sequence.

#![allow(dead_code)]

use mbu_core::dbn::{ActionVec, DbnProgram, EvalContext, Expr, Fraction, History, InitDist, ObsVec, Rule, StateVec};
use mbu_core::envs::EnvInstance;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn leaf<R: Rng>(rng: &mut R, n_state: usize, n_act: usize, cur: bool) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::Const(rng.gen()),
        1 => Expr::Act(rng.gen_range(0..n_act)),
        _ if cur => Expr::Cur(rng.gen_range(0..n_state)),
        _ => Expr::Prev(rng.gen_range(0..n_state)),
    }
}

pub fn random_expr<R: Rng>(rng: &mut R, depth: u32, n_state: usize, n_act: usize, cur: bool) -> Expr {
    if depth == 0 || rng.gen_bool(0.3) {
        return leaf(rng, n_state, n_act, cur);
    }
    let sub = |rng: &mut R| Box::new(random_expr(rng, depth - 1, n_state, n_act, cur));
    match rng.gen_range(0..6) {
        0 => Expr::Not(sub(rng)),
        1 => Expr::And(sub(rng), sub(rng)),
        2 => Expr::Or(sub(rng), sub(rng)),
        3 => Expr::Xor(sub(rng), sub(rng)),
        4 => Expr::Ite(sub(rng), sub(rng), sub(rng)),
        _ => {
            let den = rng.gen_range(2..=10);
            let p = Fraction::new(rng.gen_range(1..den), den).unwrap();
            Expr::Choice(p, sub(rng), sub(rng))
        }
    }
}

/// A random program with 1 to `max_state` state variables, 1 or 2 actions
/// and 1 or 2 observations.
pub fn random_program<R: Rng>(rng: &mut R, max_state: usize) -> DbnProgram {
    let n = rng.gen_range(1..=max_state);
    let n_act = rng.gen_range(1..=2);
    let n_obs = rng.gen_range(1..=2);
    let state = (0..n).map(|i| Rule::new(format!("x{i}"), random_expr(rng, 3, n, n_act, false))).collect();
    let obs = (0..n_obs).map(|j| Rule::new(format!("o{j}"), random_expr(rng, 3, n, n_act, true))).collect();
    let init = match rng.gen_range(0..3) {
        0 => InitDist::Uniform,
        1 => InitDist::Point(StateVec::new(rng.gen_range(0..1 << n), n)),
        _ => {
            let w: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let t: f64 = w.iter().sum();
            InitDist::Weights(w.iter().map(|v| v / t).collect())
        }
    };
    let actions = (0..n_act).map(|i| format!("a{i}")).collect();
    DbnProgram::new(actions, state, obs, init).expect("generated programs are valid")
}

/// A history of `len` steps sampled from `program` under random actions.
pub fn sampled_history<R: Rng>(program: &DbnProgram, len: usize, rng: &mut R) -> History {
    let mut env = EnvInstance::new(program.clone(), ChaCha8Rng::seed_from_u64(rng.gen()));
    for _ in 0..len {
        env.step(ActionVec::new(rng.gen_range(0..1 << program.n_actions()), program.n_actions())).unwrap();
    }
    env.history().clone()
}

fn collect_choices(e: &Expr, out: &mut Vec<f64>) {
    match e {
        Expr::Const(_) | Expr::Prev(_) | Expr::Cur(_) | Expr::Act(_) => {}
        Expr::Not(a) => collect_choices(a, out),
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => {
            collect_choices(a, out);
            collect_choices(b, out);
        }
        Expr::Ite(c, t, f) => {
            collect_choices(c, out);
            collect_choices(t, out);
            collect_choices(f, out);
        }
        Expr::Choice(p, t, f) => {
            out.push(p.value());
            collect_choices(t, out);
            collect_choices(f, out);
        }
    }
}

fn bit(x: u32, i: usize) -> bool {
    x >> i & 1 == 1
}

/// Evaluates with every choice resolved by `outcomes` (pre-order).
fn eval_det(e: &Expr, ctx: &EvalContext, outcomes: u64, next: &mut usize) -> bool {
    match e {
        Expr::Const(v) => *v,
        Expr::Prev(i) => bit(ctx.prev, *i),
        Expr::Cur(i) => bit(ctx.cur, *i),
        Expr::Act(i) => bit(ctx.action, *i),
        Expr::Not(a) => !eval_det(a, ctx, outcomes, next),
        Expr::And(a, b) => {
            let (x, y) = (eval_det(a, ctx, outcomes, next), eval_det(b, ctx, outcomes, next));
            x && y
        }
        Expr::Or(a, b) => {
            let (x, y) = (eval_det(a, ctx, outcomes, next), eval_det(b, ctx, outcomes, next));
            x || y
        }
        Expr::Xor(a, b) => eval_det(a, ctx, outcomes, next) ^ eval_det(b, ctx, outcomes, next),
        Expr::Ite(c, t, f) => {
            let (c, t, f) =
                (eval_det(c, ctx, outcomes, next), eval_det(t, ctx, outcomes, next), eval_det(f, ctx, outcomes, next));
            if c {
                t
            } else {
                f
            }
        }
        Expr::Choice(_, t, f) => {
            let take = outcomes >> *next & 1 == 1;
            *next += 1;
            let (t, f) = (eval_det(t, ctx, outcomes, next), eval_det(f, ctx, outcomes, next));
            if take {
                t
            } else {
                f
            }
        }
    }
}

/// `P(e is true)` by summing over every joint outcome of its choice nodes.
pub fn rule_prob(e: &Expr, ctx: &EvalContext) -> f64 {
    let mut ps = Vec::new();
    collect_choices(e, &mut ps);
    (0u64..1 << ps.len())
        .map(|outcomes| {
            let w: f64 = ps.iter().enumerate().map(|(i, p)| if outcomes >> i & 1 == 1 { *p } else { 1.0 - p }).product();
            if eval_det(e, ctx, outcomes, &mut 0) {
                w
            } else {
                0.0
            }
        })
        .sum()
}

/// Transition and observation tables of a program, built with [`rule_prob`].
pub struct Tables {
    pub n: usize,
    pub init: Vec<f64>,
    /// `trans[a][x][y]`
    pub trans: Vec<Vec<Vec<f64>>>,
    /// `obs[a][y][o]`
    pub obs: Vec<Vec<Vec<f64>>>,
}

impl Tables {
    pub fn of(p: &DbnProgram) -> Tables {
        let n = p.n_state();
        let (na, no) = (1usize << p.n_actions(), 1usize << p.n_obs());
        let ns = 1usize << n;
        let init = match p.init() {
            InitDist::Uniform => vec![1.0 / ns as f64; ns],
            InitDist::Point(x) => (0..ns).map(|y| f64::from(u8::from(y as u32 == x.bits()))).collect(),
            InitDist::Weights(w) => w.clone(),
        };
        let prob_bits = |rules: &[Rule], ctx: &EvalContext, bits: usize| -> f64 {
            rules
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let q = rule_prob(&r.expr, ctx);
                    if bits >> i & 1 == 1 {
                        q
                    } else {
                        1.0 - q
                    }
                })
                .product()
        };
        let trans = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|x| {
                        let ctx = EvalContext { prev: x as u32, cur: 0, action: a as u32 };
                        (0..ns).map(|y| prob_bits(p.state_rules(), &ctx, y)).collect()
                    })
                    .collect()
            })
            .collect();
        let obs = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|y| {
                        let ctx = EvalContext { prev: 0, cur: y as u32, action: a as u32 };
                        (0..no).map(|o| prob_bits(p.obs_rules(), &ctx, o)).collect()
                    })
                    .collect()
            })
            .collect();
        Tables { n, init, trans, obs }
    }
}

/// Joint weight `P(x_0..x_T, o_1..o_T | a_1..a_T)` of every state sequence
/// with positive weight, by depth-first enumeration.
pub fn state_sequences(t: &Tables, h: &History) -> Vec<(Vec<usize>, f64)> {
    fn go(t: &Tables, h: &History, seq: &mut Vec<usize>, w: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let k = seq.len() - 1;
        if k == h.len() {
            out.push((seq.clone(), w));
            return;
        }
        let s = &h.steps()[k];
        let (a, o) = (s.action.bits() as usize, s.obs.bits() as usize);
        let x = seq[k];
        for y in 0..1usize << t.n {
            let w2 = w * t.trans[a][x][y] * t.obs[a][y][o];
            if w2 > 0.0 {
                seq.push(y);
                go(t, h, seq, w2, out);
                seq.pop();
            }
        }
    }
    let mut out = Vec::new();
    for x0 in 0..1usize << t.n {
        if t.init[x0] > 0.0 {
            go(t, h, &mut vec![x0], t.init[x0], &mut out);
        }
    }
    out
}

/// `P(h)` and the posterior over the last state, by enumeration.
pub fn brute_force(p: &DbnProgram, h: &History) -> (f64, Vec<f64>) {
    let t = Tables::of(p);
    let seqs = state_sequences(&t, h);
    let total: f64 = seqs.iter().map(|(_, w)| w).sum();
    let mut last = vec![0.0; 1 << t.n];
    for (z, w) in &seqs {
        last[*z.last().unwrap()] += w / total;
    }
    (total, last)
}

/// `P(o | h, a)` by enumeration.
pub fn brute_predictive(p: &DbnProgram, h: &History, a: ActionVec) -> Vec<(ObsVec, f64)> {
    let m = p.n_obs();
    let (ph, _) = brute_force(p, h);
    (0u32..1 << m)
        .filter_map(|o| {
            let (pho, _) = brute_force(p, &h.extended(a, ObsVec::new(o, m)));
            let q = pho / ph;
            (q > 0.0).then(|| (ObsVec::new(o, m), q))
        })
        .collect()
}
