//! Invariants over random programs and histories.

mod common;

use mbu_core::dbn::{self, ActionVec, DbnProgram, Expr, Filter, ObsVec, Rule};
use mbu_core::envs::{self, EnvInstance};
use mbu_core::plan::{act, predictive, PlanConfig};
use mbu_core::rng::substream;
use mbu_core::utility::{bind, u_model, u_model_general, AgentUtility, UtilitySpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case(seed: u64, max_state: usize, max_len: usize) -> (DbnProgram, dbn::History) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = common::random_program(&mut rng, max_state);
    let len = rng.gen_range(0..=max_len);
    let h = common::sampled_history(&p, len, &mut rng);
    (p, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beliefs_are_distributions(seed in any::<u64>()) {
        let (p, h) = case(seed, 3, 12);
        let mut f = Filter::new(&p);
        for s in h.steps() {
            f.update(s.action, s.obs).unwrap();
            let b = f.belief();
            prop_assert!(b.weights().iter().all(|w| *w >= 0.0));
            prop_assert!((b.total() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn filter_agrees_with_enumeration(seed in any::<u64>()) {
        let (p, h) = case(seed, 2, 6);
        let (lik, last) = common::brute_force(&p, &h);
        prop_assert!((dbn::likelihood(&p, &h).unwrap() - lik).abs() <= 1e-12);
        let b = dbn::filter(&p, &h).unwrap();
        for (x, w) in last.iter().enumerate() {
            prop_assert!((b.weights()[x] - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn likelihood_factors_into_predictions(seed in any::<u64>()) {
        let (p, h) = case(seed, 3, 10);
        let mut total = 0.0;
        for t in 0..h.len() {
            let s = &h.steps()[t];
            let dist = predictive(&p, &h.prefix(t), s.action).unwrap();
            let q = dist.iter().find(|(o, _)| *o == s.obs).map_or(0.0, |(_, q)| *q);
            total += q.ln();
            prop_assert!((dist.iter().map(|(_, q)| q).sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!((dbn::log_likelihood(&p, &h).unwrap() - total).abs() <= 1e-9);
    }

    #[test]
    fn predictions_match_enumeration(seed in any::<u64>()) {
        let (p, h) = case(seed, 2, 5);
        let a = ActionVec::new((seed % (1 << p.n_actions())) as u32, p.n_actions());
        // Dense over all observations: the oracle's rounding can leave
        // 1e-16 on outcomes the library (rightly) drops.
        let dense = |d: Vec<(ObsVec, f64)>| {
            let mut v = vec![0.0; 1 << p.n_obs()];
            for (o, q) in d {
                v[o.bits() as usize] = q;
            }
            v
        };
        let got = dense(predictive(&p, &h, a).unwrap());
        let want = dense(common::brute_predictive(&p, &h, a));
        for (q1, q2) in got.iter().zip(&want) {
            prop_assert!((q1 - q2).abs() <= 1e-12);
        }
    }

    #[test]
    fn shorter_programs_have_larger_priors(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (p, _) = case(s1, 3, 0);
        let (q, _) = case(s2, 3, 0);
        let (dp, dq) = (p.description_length(), q.description_length());
        prop_assert_eq!(dp.cmp(&dq), q.prior().value().partial_cmp(&p.prior().value()).unwrap());
        prop_assert!((p.prior().value() - 0.5f64.powi(dp as i32)).abs() <= f64::EPSILON);
    }

    #[test]
    fn growing_a_rule_halves_the_prior_per_node(seed in any::<u64>()) {
        let (p, _) = case(seed, 3, 0);
        let mut state = p.state_rules().to_vec();
        state[0] = Rule::new(state[0].name.clone(), Expr::not(state[0].expr.clone()));
        let q = DbnProgram::new(p.action_names().to_vec(), state, p.obs_rules().to_vec(), p.init().clone()).unwrap();
        prop_assert_eq!(q.description_length(), p.description_length() + 1);
        prop_assert!((q.prior().value() * 2.0 - p.prior().value()).abs() <= f64::EPSILON);
    }

    #[test]
    fn collapsed_utility_equals_the_full_sum(seed in any::<u64>(), which in 0usize..2) {
        let (model, spec) = if which == 0 {
            (envs::make_q67_prime(99, 100).unwrap(), "unobserved-equals:a")
        } else {
            (envs::make_period4(1, 4).unwrap(), "observed-equals-prev:a")
        };
        let b = bind(&spec.parse::<UtilitySpec>().unwrap(), &model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::sampled_history(&model, rng.gen_range(0..=8), &mut rng);
        let general = u_model_general(&h, &model, &b, 8).unwrap();
        prop_assert!((general - u_model(&h, &model, &b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn runs_and_decisions_are_reproducible(seed in any::<u64>()) {
        let q = envs::make_q67(99, 100).unwrap();
        let trace = |seed| {
            let mut env = EnvInstance::new(q.clone(), substream(seed, "env"));
            let mut actions = substream(seed, "actions");
            for _ in 0..20 {
                env.step(ActionVec::new(actions.gen_range(0..16), 4)).unwrap();
            }
            (env.history().clone(), env.states().to_vec())
        };
        let (h, states) = trace(seed);
        prop_assert_eq!((h.clone(), states), trace(seed));
        let model = envs::make_q67_prime(99, 100).unwrap();
        let u = AgentUtility::from_binding(bind(&"unobserved-equals:a".parse().unwrap(), &model).unwrap());
        let config = PlanConfig { horizon: 2, ..PlanConfig::default() };
        prop_assert_eq!(act(&h, &model, &u, &config).unwrap(), act(&h, &model, &u, &config).unwrap());
    }
}

#[test]
fn impossible_observations_are_rejected() {
    let q = envs::make_q67(1, 1).unwrap();
    let mut f = Filter::new(&q);
    // With the box on, o copies action bit c exactly.
    let a = ActionVec::new(0b0110, 4);
    assert!(f.update(a, ObsVec::new(0b00, 2)).is_err());
    assert_eq!(f.steps(), 0);
    assert!(f.update(a, ObsVec::new(0b01, 2)).is_ok());
}
