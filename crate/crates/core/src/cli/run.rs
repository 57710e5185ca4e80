//! Training, the maturity switch and the mature planning loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OnContradiction};
use super::CliError;
use crate::dbn::{ActionVec, DbnError, DbnProgram, Filter, VarKind};
use crate::envs::EnvInstance;
use crate::learn::{map_lambda, maturity_check, CandidateSpace, LearnError, ScoredModel, TrainingPolicy};
use crate::plan::act_filtered;
use crate::rng::substream;
use crate::utility::{bind, AgentUtility, Binding, NodeView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Mature,
}

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub action: String,
    pub obs: String,
    /// Whether the delusion switch was on.
    pub b: bool,
    /// The agent's utility of its history after this step.
    pub u: Option<f64>,
    /// Utility scored on the true state.
    pub realized: Option<f64>,
    pub model_id: Option<usize>,
    pub value: Option<f64>,
    pub runner_up: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub env: String,
    pub agent: String,
    pub spec: String,
    pub seed: u64,
    pub training_steps: usize,
    pub mature_steps: usize,
    /// `maturity` or `ceiling`.
    pub matured_by: String,
    pub models_learned: usize,
    pub mean_realized: Option<f64>,
    pub mean_u: Option<f64>,
    pub delusion_fraction: Option<f64>,
    pub description_length: u32,
    pub learned_model: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
    pub model: ScoredModel,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

impl RunSummary {
    /// Recomputes the means from the mature records alone.
    pub fn means(records: &[StepRecord]) -> (Option<f64>, Option<f64>, Option<f64>) {
        let mature = || records.iter().filter(|r| r.phase == Phase::Mature);
        (
            mean(mature().filter_map(|r| r.realized)),
            mean(mature().filter_map(|r| r.u)),
            mean(mature().map(|r| f64::from(u8::from(r.b)))),
        )
    }
}

struct Runner<'c> {
    config: &'c ExperimentConfig,
    inst: EnvInstance,
    score: Binding,
    switch: usize,
    space: CandidateSpace,
    records: Vec<StepRecord>,
    models: usize,
}

impl Runner<'_> {
    fn step(&mut self, action: ActionVec, phase: Phase) -> Result<crate::dbn::ObsVec, CliError> {
        let before = self.inst.history().last().map(|s| s.action);
        let obs = self.inst.step(action).map_err(|e| CliError::Failed(e.to_string()))?;
        let realized = self.score.state_utility(self.inst.true_state().bits(), Some(action), before);
        self.records.push(StepRecord {
            t: self.inst.history().len(),
            phase,
            action: action.to_string(),
            obs: obs.to_string(),
            b: action.get(self.switch),
            u: None,
            realized,
            model_id: None,
            value: None,
            runner_up: None,
        });
        Ok(obs)
    }

    fn learn(&mut self) -> Result<ScoredModel, CliError> {
        let m = map_lambda(self.inst.history(), &self.space).map_err(|e| match e {
            LearnError::NoExplanation => CliError::Failed(e.to_string()),
            other => CliError::Config(other.to_string()),
        })?;
        self.models += 1;
        Ok(m)
    }

    /// Trains until the learned model passes the maturity check (or the
    /// ceiling is hit) and the agent's utility binds to it.
    fn train(&mut self, policy: &mut TrainingPolicy) -> Result<(ScoredModel, AgentUtility, bool), CliError> {
        let m = self.config.maturity;
        loop {
            let t = self.inst.history().len();
            let at_check = t >= m.floor && ((t - m.floor).is_multiple_of(m.recheck) || t >= m.ceiling);
            if at_check {
                let model = self.learn()?;
                let mature = maturity_check(self.inst.history(), &model.program, m.window, m.threshold);
                if mature || t >= m.ceiling {
                    match bind(&self.config.spec, &model.program) {
                        Ok(b) => return Ok((model, AgentUtility::from_binding(b), mature)),
                        Err(e) if t >= m.ceiling || self.config.on_contradiction == OnContradiction::Fail => {
                            return Err(CliError::Failed(format!("cannot bind `{}`: {e}", self.config.spec)))
                        }
                        Err(_) => {}
                    }
                }
            }
            self.step(policy.next_action(), Phase::Training)?;
        }
    }

    /// Mature steps under `model` until `remaining` runs out or an
    /// observation contradicts the model. Returns the steps taken.
    fn mature(
        &mut self,
        model: &DbnProgram,
        utility: &AgentUtility,
        remaining: usize,
        delude: &mut impl Rng,
    ) -> Result<(usize, bool), CliError> {
        let model_id = self.models - 1;
        let mut filter = Filter::over(model, self.inst.history()).map_err(|e| CliError::Failed(e.to_string()))?;
        for done in 0..remaining {
            let (action, value, runner_up) = if self.config.forced_delusion {
                let width = model.n_actions();
                (ActionVec::new(delude.gen_range(0..1u32 << width), width).with(self.switch, true), None, None)
            } else {
                let d = act_filtered(self.inst.history(), &filter, utility, &self.config.plan)
                    .map_err(|e| CliError::Failed(e.to_string()))?;
                (d.action, Some(d.value), d.runner_up.map(|r| r.1))
            };
            let parent = filter.belief();
            let obs = self.step(action, Phase::Mature)?;
            match filter.update(action, obs) {
                Ok(_) => {}
                Err(DbnError::ModelContradiction) => return Ok((done + 1, true)),
                Err(e) => return Err(CliError::Failed(e.to_string())),
            }
            let belief = filter.belief();
            let view = NodeView {
                model,
                base: self.inst.history(),
                suffix: &[],
                belief: &belief,
                parent_belief: Some(&parent),
                log_likelihood: filter.log_likelihood(),
            };
            let u = utility.evaluate(&view);
            let rec = self.records.last_mut().expect("just pushed");
            rec.u = Some(u);
            rec.model_id = Some(model_id);
            rec.value = value;
            rec.runner_up = runner_up;
        }
        Ok((remaining, false))
    }
}

/// Runs one experiment. Deterministic in the configuration: the environment,
/// the training policy and the forced-delusion policy draw from separate
/// named streams of `config.seed`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let env = config.env_program()?;
    let score = bind(&config.env.score_spec(), &env).map_err(|e| CliError::Config(e.to_string()))?;
    let switch = env
        .index_of(VarKind::Action, &config.probe.switch)
        .ok_or_else(|| CliError::Config(format!("no action `{}`", config.probe.switch)))?;
    let mut space = CandidateSpace::for_alphabet_of(&env);
    space.gated_choice = config.gated_choice;
    space.fraction_den = config.fraction_den;
    let mut policy = TrainingPolicy::new(env.action_names(), config.probe.clone(), substream(config.seed, "probe"))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut delude = substream(config.seed, "delude");
    let mut runner = Runner {
        config,
        inst: EnvInstance::new(env, substream(config.seed, "env")),
        score,
        switch,
        space,
        records: Vec::new(),
        models: 0,
    };

    let (mut model, mut utility, matured) = runner.train(&mut policy)?;
    let training_steps = runner.inst.history().len();
    let mut left = config.steps;
    while left > 0 {
        let (taken, contradicted) = runner.mature(&model.program, &utility, left, &mut delude)?;
        left -= taken;
        if contradicted {
            if config.on_contradiction == OnContradiction::Fail {
                return Err(CliError::Failed(format!(
                    "observation at step {} contradicts the learned model",
                    runner.inst.history().len()
                )));
            }
            model = runner.learn()?;
            utility = bind(&config.spec, &model.program)
                .map(AgentUtility::from_binding)
                .map_err(|e| CliError::Failed(format!("cannot bind `{}` after relearning: {e}", config.spec)))?;
        }
    }

    let (mean_realized, mean_u, delusion_fraction) = RunSummary::means(&runner.records);
    let summary = RunSummary {
        experiment: config.experiment.clone(),
        env: config.env.name().to_owned(),
        agent: config.agent.to_string(),
        spec: config.spec.to_string(),
        seed: config.seed,
        training_steps,
        mature_steps: config.steps,
        matured_by: if matured { "maturity" } else { "ceiling" }.to_owned(),
        models_learned: runner.models,
        mean_realized,
        mean_u,
        delusion_fraction,
        description_length: model.description_length(),
        learned_model: model.program.to_string(),
    };
    Ok(RunOutput { records: runner.records, summary, model })
}
