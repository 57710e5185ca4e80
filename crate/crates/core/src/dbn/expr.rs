use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Fraction;

/// Values visible to a rule while it is evaluated.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalContext {
    /// State assignment at t-1.
    pub prev: u32,
    /// State assignment at t (observation rules only).
    pub cur: u32,
    /// Action assignment at t.
    pub action: u32,
}

/// Boolean rule expression. Variables are referenced by their index in the
/// owning program's declaration lists.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Const(bool),
    /// State variable at t-1.
    Prev(usize),
    /// State variable at t.
    Cur(usize),
    /// Action variable at t.
    Act(usize),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Xor(Box<Expr>, Box<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `then` with probability `p`, otherwise `else`.
    Choice(Fraction, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn xor(a: Expr, b: Expr) -> Expr {
        Expr::Xor(Box::new(a), Box::new(b))
    }

    pub fn ite(c: Expr, t: Expr, e: Expr) -> Expr {
        Expr::Ite(Box::new(c), Box::new(t), Box::new(e))
    }

    pub fn choice(p: Fraction, t: Expr, e: Expr) -> Expr {
        Expr::Choice(p, Box::new(t), Box::new(e))
    }

    /// Description length in nodes. `Choice` pays one node plus the digits of
    /// its fraction; `Ite` pays for its expansion `(c and t) or (not c and e)`.
    pub fn size(&self) -> u32 {
        match self {
            Expr::Const(_) | Expr::Prev(_) | Expr::Cur(_) | Expr::Act(_) => 1,
            Expr::Not(e) => 1 + e.size(),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => 1 + a.size() + b.size(),
            Expr::Ite(c, t, e) => 4 + 2 * c.size() + t.size() + e.size(),
            Expr::Choice(p, t, e) => 1 + p.digit_cost() + t.size() + e.size(),
        }
    }

    pub fn choice_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Prev(_) | Expr::Cur(_) | Expr::Act(_) => 0,
            Expr::Not(e) => e.choice_count(),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => a.choice_count() + b.choice_count(),
            Expr::Ite(c, t, e) => c.choice_count() + t.choice_count() + e.choice_count(),
            Expr::Choice(_, t, e) => 1 + t.choice_count() + e.choice_count(),
        }
    }

    /// Probability that the expression evaluates to true. Exact because every
    /// `Choice` node occurs once in the tree, so distinct subtrees draw
    /// independently.
    pub fn prob_true(&self, ctx: &EvalContext) -> f64 {
        match self {
            Expr::Const(v) => f64::from(u8::from(*v)),
            Expr::Prev(i) => bit(ctx.prev, *i),
            Expr::Cur(i) => bit(ctx.cur, *i),
            Expr::Act(i) => bit(ctx.action, *i),
            Expr::Not(e) => 1.0 - e.prob_true(ctx),
            Expr::And(a, b) => a.prob_true(ctx) * b.prob_true(ctx),
            Expr::Or(a, b) => {
                let (pa, pb) = (a.prob_true(ctx), b.prob_true(ctx));
                pa + pb - pa * pb
            }
            Expr::Xor(a, b) => {
                let (pa, pb) = (a.prob_true(ctx), b.prob_true(ctx));
                pa * (1.0 - pb) + pb * (1.0 - pa)
            }
            Expr::Ite(c, t, e) => {
                let pc = c.prob_true(ctx);
                pc * t.prob_true(ctx) + (1.0 - pc) * e.prob_true(ctx)
            }
            Expr::Choice(p, t, e) => {
                let p = p.value();
                p * t.prob_true(ctx) + (1.0 - p) * e.prob_true(ctx)
            }
        }
    }

    /// Draws a value. Every subtree is evaluated, so each `Choice` node
    /// consumes exactly one draw, in pre-order.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &EvalContext, rng: &mut R) -> bool {
        match self {
            Expr::Const(v) => *v,
            Expr::Prev(i) => ctx.prev >> i & 1 == 1,
            Expr::Cur(i) => ctx.cur >> i & 1 == 1,
            Expr::Act(i) => ctx.action >> i & 1 == 1,
            Expr::Not(e) => !e.sample(ctx, rng),
            Expr::And(a, b) => {
                let (x, y) = (a.sample(ctx, rng), b.sample(ctx, rng));
                x && y
            }
            Expr::Or(a, b) => {
                let (x, y) = (a.sample(ctx, rng), b.sample(ctx, rng));
                x || y
            }
            Expr::Xor(a, b) => a.sample(ctx, rng) ^ b.sample(ctx, rng),
            Expr::Ite(c, t, e) => {
                let (c, t, e) = (c.sample(ctx, rng), t.sample(ctx, rng), e.sample(ctx, rng));
                if c {
                    t
                } else {
                    e
                }
            }
            Expr::Choice(p, t, e) => {
                let take_then = rng.gen_range(0..p.den()) < p.num();
                let (t, e) = (t.sample(ctx, rng), e.sample(ctx, rng));
                if take_then {
                    t
                } else {
                    e
                }
            }
        }
    }

    /// Calls `f` on every node, parent before children.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Prev(_) | Expr::Cur(_) | Expr::Act(_) => {}
            Expr::Not(e) => e.walk(f),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Ite(c, t, e) => {
                c.walk(f);
                t.walk(f);
                e.walk(f);
            }
            Expr::Choice(_, t, e) => {
                t.walk(f);
                e.walk(f);
            }
        }
    }

    /// Bitmask of state variables read through `Prev` or `Cur`.
    pub fn state_refs(&self) -> u32 {
        let mut mask = 0;
        self.walk(&mut |e| {
            if let Expr::Prev(i) | Expr::Cur(i) = e {
                mask |= 1 << i;
            }
        });
        mask
    }

    /// Bitmask of action variables read.
    pub fn action_refs(&self) -> u32 {
        let mut mask = 0;
        self.walk(&mut |e| {
            if let Expr::Act(i) = e {
                mask |= 1 << i;
            }
        });
        mask
    }

    /// Renames state variable indices through `f`.
    pub fn map_state_indices(&self, f: &impl Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Prev(i) => Expr::Prev(f(*i)),
            Expr::Cur(i) => Expr::Cur(f(*i)),
            Expr::Act(i) => Expr::Act(*i),
            Expr::Not(e) => Expr::not(e.map_state_indices(f)),
            Expr::And(a, b) => Expr::and(a.map_state_indices(f), b.map_state_indices(f)),
            Expr::Or(a, b) => Expr::or(a.map_state_indices(f), b.map_state_indices(f)),
            Expr::Xor(a, b) => Expr::xor(a.map_state_indices(f), b.map_state_indices(f)),
            Expr::Ite(c, t, e) => Expr::ite(
                c.map_state_indices(f),
                t.map_state_indices(f),
                e.map_state_indices(f),
            ),
            Expr::Choice(p, t, e) => Expr::choice(*p, t.map_state_indices(f), e.map_state_indices(f)),
        }
    }
}

#[inline]
fn bit(word: u32, i: usize) -> f64 {
    f64::from((word >> i) & 1)
}
