//! Subcommands and the argument parser.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::config::{ExperimentConfig, OutputFormat, RawConfig};
use super::run::{run_experiment, RunOutput, RunSummary};
use super::CliError;
use crate::dbn::VarKind;
use crate::learn::{appendix_a, equivalent_up_to_renaming, map_lambda_top, probing_history, CandidateSpace};
use crate::selfmod::{prop4_harness, HarnessConfig, Prop4Report, SelfModConfig};
use crate::utility::{bind, AgentUtility};

#[derive(Debug, Parser)]
#[command(name = "mbu-lab", version, about = "Model-based utility agents and delusion-box experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` experiment file. Flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Mature steps for `run` and `sweep`, history length for `learn`.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Environment noise as `n/d` (the flip probability for period4).
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Directory for step records, summaries and learned models.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["json", "csv"])]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Enumerate the 1458 three-variable candidates and report the matches.
    AppendixA,
    /// Learn a model from a probing history and print the top candidates.
    Learn,
    /// Train, mature and run an agent.
    Run,
    /// Check that pi-star never hands control to another policy.
    Selfmod,
    /// Repeat `run` (or `learn`, with `experiment = learn`) over seeds.
    Sweep,
}

impl Cli {
    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::parse(
                &fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            )?,
            None => RawConfig::default(),
        };
        if let Some(s) = self.seed {
            raw.set("seed", s.to_string());
        }
        if let Some(n) = self.steps {
            if self.command == Command::Learn {
                raw.set("training_floor", n.to_string());
                raw.set("training_ceiling", n.to_string());
            } else {
                raw.set("steps", n.to_string());
            }
        }
        if let Some(a) = &self.alpha {
            raw.set("alpha", a.clone());
        }
        if let Some(h) = self.horizon {
            raw.set("horizon", h.to_string());
        }
        if let Some(o) = &self.out {
            raw.set("out", o.display().to_string());
        }
        if let Some(f) = &self.format {
            raw.set("format", f.clone());
        }
        ExperimentConfig::from_raw(&raw)
    }
}

fn write_table<T: Serialize>(rows: &[T], format: OutputFormat, w: &mut dyn Write) -> Result<(), CliError> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *w, rows).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        OutputFormat::Csv => {
            let mut c = csv::Writer::from_writer(w);
            for r in rows {
                c.serialize(r).map_err(std::io::Error::from)?;
            }
            c.flush()?;
        }
    }
    Ok(())
}

fn ext(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Json => "json",
        OutputFormat::Csv => "csv",
    }
}

/// Summary columns; the learned model goes to its own file.
#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    env: &'a str,
    agent: &'a str,
    spec: &'a str,
    seed: u64,
    training_steps: usize,
    mature_steps: usize,
    matured_by: &'a str,
    models_learned: usize,
    mean_realized: Option<f64>,
    mean_u: Option<f64>,
    delusion_fraction: Option<f64>,
    description_length: u32,
}

impl<'a> From<&'a RunSummary> for SummaryRow<'a> {
    fn from(s: &'a RunSummary) -> Self {
        SummaryRow {
            experiment: &s.experiment,
            env: &s.env,
            agent: &s.agent,
            spec: &s.spec,
            seed: s.seed,
            training_steps: s.training_steps,
            mature_steps: s.mature_steps,
            matured_by: &s.matured_by,
            models_learned: s.models_learned,
            mean_realized: s.mean_realized,
            mean_u: s.mean_u,
            delusion_fraction: s.delusion_fraction,
            description_length: s.description_length,
        }
    }
}

fn write_run(out: &RunOutput, dir: &Path, format: OutputFormat) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut steps = std::io::BufWriter::new(fs::File::create(dir.join("steps.jsonl"))?);
    for r in &out.records {
        serde_json::to_writer(&mut steps, r).map_err(std::io::Error::from)?;
        writeln!(steps)?;
    }
    steps.flush()?;
    let mut f = fs::File::create(dir.join(format!("summary.{}", ext(format))))?;
    write_table(&[SummaryRow::from(&out.summary)], format, &mut f)?;
    fs::write(dir.join("model.dbn"), &out.summary.learned_model)?;
    Ok(())
}

/// Failed expectations, one message each.
fn unmet(config: &ExperimentConfig, s: &RunSummary) -> Vec<String> {
    let mut msgs = Vec::new();
    if let Some(want) = config.expect_realized {
        match s.mean_realized {
            Some(got) if (got - want).abs() <= config.expect_tolerance => {}
            got => msgs.push(format!("mean realized utility {got:?}, expected {want} +- {}", config.expect_tolerance)),
        }
    }
    let delusion = s.delusion_fraction.unwrap_or(0.0);
    if let Some(lo) = config.expect_delusion_min {
        if delusion < lo {
            msgs.push(format!("delusion fraction {delusion} below {lo}"));
        }
    }
    if let Some(hi) = config.expect_delusion_max {
        if delusion > hi {
            msgs.push(format!("delusion fraction {delusion} above {hi}"));
        }
    }
    msgs
}

/// Runs one experiment, writes its records under `config.out` and the
/// summary to `w`. Returns whether every expectation held.
pub fn cmd_run(config: &ExperimentConfig, w: &mut dyn Write) -> Result<bool, CliError> {
    let out = run_experiment(config)?;
    if let Some(dir) = &config.out {
        write_run(&out, dir, config.format)?;
    }
    write_table(&[SummaryRow::from(&out.summary)], config.format, w)?;
    let msgs = unmet(config, &out.summary);
    for m in &msgs {
        writeln!(w, "FAIL: {m}")?;
    }
    Ok(msgs.is_empty())
}

/// One scored candidate in a learn report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedModel {
    pub rank: usize,
    pub score: f64,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub description_length: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnReport {
    pub seed: u64,
    pub steps: usize,
    /// Whether the best model has the environment's dynamics up to a
    /// renaming of state variables.
    pub recovered: bool,
    pub models: Vec<RankedModel>,
}

/// Learns from a probing history of `training_floor` steps.
pub fn learn_report(config: &ExperimentConfig) -> Result<LearnReport, CliError> {
    let env = config.env_program()?;
    let steps = config.maturity.floor;
    let h = probing_history(&env, steps, config.seed, &config.probe).map_err(|e| CliError::Config(e.to_string()))?;
    let mut space = CandidateSpace::for_alphabet_of(&env);
    space.gated_choice = config.gated_choice;
    space.fraction_den = config.fraction_den;
    let top = map_lambda_top(&h, &space, config.top_k.max(1)).map_err(|e| CliError::Failed(e.to_string()))?;
    let recovered = top.first().is_some_and(|m| equivalent_up_to_renaming(&m.program, &env));
    let models = top
        .iter()
        .enumerate()
        .map(|(i, m)| RankedModel {
            rank: i + 1,
            score: m.score(),
            log_likelihood: m.log_likelihood,
            log_prior: m.log_prior,
            description_length: m.description_length(),
            text: m.program.to_string(),
        })
        .collect();
    Ok(LearnReport { seed: config.seed, steps, recovered, models })
}

pub fn cmd_learn(config: &ExperimentConfig, w: &mut dyn Write) -> Result<bool, CliError> {
    let report = learn_report(config)?;
    match config.format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *w, &report).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        OutputFormat::Csv => {
            writeln!(w, "# seed {} steps {} recovered {}", report.seed, report.steps, report.recovered)?;
            for m in &report.models {
                writeln!(
                    w,
                    "# rank {} score {:.6} log_likelihood {:.6} log_prior {:.6} description_length {}",
                    m.rank, m.score, m.log_likelihood, m.log_prior, m.description_length
                )?;
                writeln!(w, "{}", m.text.trim_end())?;
            }
        }
    }
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        if let Some(best) = report.models.first() {
            fs::write(dir.join("model.dbn"), &best.text)?;
        }
    }
    Ok(true)
}

/// The self-modification harness with the environment's own dynamics as the
/// agent's model.
pub fn selfmod_report(config: &ExperimentConfig) -> Result<Prop4Report, CliError> {
    let model = config.env_program()?;
    let utility = AgentUtility::from_binding(bind(&config.spec, &model).map_err(|e| CliError::Config(e.to_string()))?);
    let switch = model
        .index_of(VarKind::Action, &config.probe.switch)
        .ok_or_else(|| CliError::Config(format!("no action `{}`", config.probe.switch)))?;
    let harness = HarnessConfig {
        eval: SelfModConfig { gamma: config.selfmod_gamma, depth: config.selfmod_depth },
        ..HarnessConfig::default()
    };
    prop4_harness(&model, &model, &utility, switch, config.trials, &harness, config.seed)
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_selfmod(config: &ExperimentConfig, w: &mut dyn Write) -> Result<bool, CliError> {
    let report = selfmod_report(config)?;
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("selfmod.json"))?;
        serde_json::to_writer_pretty(&mut f, &report).map_err(std::io::Error::from)?;
    }
    #[derive(Serialize)]
    struct Row<'a> {
        trial: usize,
        history_len: usize,
        min_gap: Option<f64>,
        max_gap: Option<f64>,
        successors: String,
        space: &'a str,
    }
    let rows: Vec<Row> = report
        .trials
        .iter()
        .map(|t| Row {
            trial: t.trial,
            history_len: t.history_len,
            min_gap: t.min_gap,
            max_gap: t.max_gap,
            successors: t.successors.join(" "),
            space: &t.space,
        })
        .collect();
    write_table(&rows, config.format, w)?;
    writeln!(w, "evaluations: {}", report.evaluations)?;
    writeln!(w, "self-modifications: {}", report.self_modifications)?;
    Ok(report.self_modifications == 0)
}

pub fn cmd_appendix_a(w: &mut dyn Write) -> Result<bool, CliError> {
    let all = appendix_a::enumerate();
    let found: Vec<_> = all.iter().filter(|c| appendix_a::behavior_match(c, &appendix_a::OBSERVED_CYCLE)).collect();
    for c in &found {
        writeln!(w, "{c}")?;
    }
    writeln!(w, "candidates: {}", all.len())?;
    writeln!(w, "matches: {}", found.len())?;
    Ok(found.len() == 2)
}

/// `run` or `learn` over seeds `seed, seed + 1, ...`.
pub fn cmd_sweep(config: &ExperimentConfig, w: &mut dyn Write) -> Result<bool, CliError> {
    let seeds = (0..config.sweep_seeds as u64).map(|i| config.seed.wrapping_add(i));
    let mut ok = true;
    if config.experiment == "learn" {
        #[derive(Serialize)]
        struct Row {
            seed: u64,
            recovered: bool,
            score: Option<f64>,
            description_length: Option<u32>,
        }
        let mut rows = Vec::new();
        for seed in seeds {
            let r = learn_report(&ExperimentConfig { seed, ..config.clone() })?;
            let best = r.models.first();
            rows.push(Row {
                seed,
                recovered: r.recovered,
                score: best.map(|m| m.score),
                description_length: best.map(|m| m.description_length),
            });
        }
        write_table(&rows, config.format, w)?;
        let rate = rows.iter().filter(|r| r.recovered).count() as f64 / rows.len().max(1) as f64;
        writeln!(w, "recovery rate: {rate}")?;
        if let Some(want) = config.expect_recovery {
            if rate < want {
                writeln!(w, "FAIL: recovery rate {rate} below {want}")?;
                ok = false;
            }
        }
    } else {
        let mut summaries = Vec::new();
        for seed in seeds {
            let c = ExperimentConfig { seed, out: config.out.as_ref().map(|d| d.join(format!("seed-{seed}"))), ..config.clone() };
            let out = run_experiment(&c)?;
            if let Some(dir) = &c.out {
                write_run(&out, dir, c.format)?;
            }
            for m in unmet(&c, &out.summary) {
                writeln!(w, "FAIL: seed {seed}: {m}")?;
                ok = false;
            }
            summaries.push(out.summary);
        }
        let rows: Vec<SummaryRow> = summaries.iter().map(SummaryRow::from).collect();
        write_table(&rows, config.format, w)?;
    }
    Ok(ok)
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 when every check passed, 1 when one failed, 2 on configuration errors.
pub fn main_with_args<I, T>(args: I, w: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::AppendixA => cmd_appendix_a(w),
        command => cli.experiment_config().and_then(|c| match command {
            Command::Learn => cmd_learn(&c, w),
            Command::Run => cmd_run(&c, w),
            Command::Selfmod => cmd_selfmod(&c, w),
            Command::Sweep => cmd_sweep(&c, w),
            Command::AppendixA => unreachable!(),
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("mbu-lab: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = main_with_args(std::iter::once("mbu-lab").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn appendix_a_reports_two_xor_matches() {
        let (code, text) = run_cli(&["appendix-a"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("binary_relation")).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.starts_with("binary_relation = 2 binary_place = 0 binary_inputs = 2 1")
            || l.starts_with("binary_relation = 2 binary_place = 0 binary_inputs = 1 2")));
        assert!(text.contains("candidates: 1458"));
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        assert_eq!(run_cli(&["run"]).0, 2);
        assert_eq!(run_cli(&["run", "--seed", "1", "--format", "xml"]).0, 2);
        assert_eq!(run_cli(&["run", "--seed", "1", "--config", "/nonexistent/x.cfg"]).0, 2);
        assert_eq!(run_cli(&["frobnicate"]).0, 2);
    }

    #[test]
    fn learn_ranks_models_by_score() {
        let (code, text) = run_cli(&["learn", "--seed", "2", "--steps", "0", "--format", "json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let scores: Vec<f64> = v["models"].as_array().unwrap().iter().map(|m| m["score"].as_f64().unwrap()).collect();
        assert!(!scores.is_empty());
        assert!(scores.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn selfmod_command_reports_zero() {
        let c = ExperimentConfig::parse("seed = 1\ntrials = 3\nselfmod_depth = 2").unwrap();
        let mut buf = Vec::new();
        assert!(cmd_selfmod(&c, &mut buf).unwrap());
        assert!(String::from_utf8(buf).unwrap().contains("self-modifications: 0"));
    }

    #[test]
    fn failed_expectation_exits_one() {
        let dir = std::env::temp_dir().join(format!("mbu-lab-test-{}", std::process::id()));
        let cfg = dir.join("x.cfg");
        fs::create_dir_all(&dir).unwrap();
        fs::write(&cfg, "training_floor = 600\nmaturity_window = 300\nhorizon = 2\nexpect_delusion_min = 0.5\n").unwrap();
        let out = dir.join("out");
        let (code, text) = run_cli(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "4",
            "--steps",
            "20",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1, "{text}");
        assert!(text.contains("FAIL: delusion fraction"));
        let steps = fs::read_to_string(out.join("steps.jsonl")).unwrap();
        assert!(steps.lines().count() > 20);
        assert!(out.join("summary.csv").exists() && out.join("model.dbn").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
