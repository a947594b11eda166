//! The four commands. Each takes its parsed config plus the resolved
//! output directory and returns the summary record that `main` prints and
//! writes. All output files are pure functions of (config, seed): wall
//! clock goes only into `timing.log`, which `main` owns.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rlft_core::checkpoint::{self, ModelCheckpoint};
use rlft_core::data_synth::{
    load_world, save_world, synth_demo, synth_pref_labeled, GroundTruth, World,
};
use rlft_core::domain::{
    load_demo_set, load_pref_set, save_demo_set, save_pref_set, DemoPair, DemoSet, Prompt, Vocab,
};
use rlft_core::evaluation::{
    bt_diagnostic, convergence_stats, log_prob_gap, win_rate, PairScorer,
};
use rlft_core::gradients::ml_irl_objective;
use rlft_core::oracle::{standard_battery, OracleReport};
use rlft_core::policy::{AutoregressivePolicy, PolicyModel, TabularPolicy};
use rlft_core::reward::{Beta, RewardModel, TabularReward};
use rlft_core::tabular::single_token_index;
use rlft_core::trainers::{run_irft, run_rft, run_sft, TrainTrace, TrainerConfig};
use rlft_core::{CoreError, ParamVector, Result, Rng};
use serde_json::{json, Value};

use crate::config::{
    DemoSource, EvalConfig, Method, MetricSpec, OracleCheckConfig, ScorerSpec, SynthConfig,
    TrainConfig, WorldSpec,
};

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::validation(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

/// Stream layout under the run seed: child 0 demos, child 1 preference
/// pairs, child 2 world construction, child 3 the preference draws behind
/// chosen-only demos. Fixed tags keep each dataset stable when the others'
/// sizes change.
pub fn cmd_synth(
    config: &SynthConfig,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<Value> {
    config.validate()?;
    let seed = seed_override.unwrap_or(config.seed);
    let root = Rng::seed(seed);
    let mut world_rng = root.child(2);
    let world = build_world(&config.world, &mut world_rng)?;

    let demos = match config.demo_source {
        DemoSource::Expert => synth_demo(&world, config.n_demo, &root.child(0))?,
        DemoSource::ChosenOnly => {
            let pairs = synth_pref_labeled(
                &world,
                &world.reference,
                config.n_demo,
                &root.child(3),
                config.labeling(),
            )?;
            let items = pairs
                .items()
                .iter()
                .map(|t| DemoPair {
                    prompt: t.prompt.clone(),
                    continuation: t.chosen.clone(),
                })
                .collect();
            DemoSet::new(world.vocab().clone(), items)?
        }
    };
    let prefs = synth_pref_labeled(
        &world,
        &world.reference,
        config.n_pref,
        &root.child(1),
        config.labeling(),
    )?;

    let descriptor = save_world(&world, &out.join("world"))?;
    say(quiet, format!("wrote {}", descriptor.display()));
    save_demo_set(&demos, out.join("demos.jsonl"))?;
    say(
        quiet,
        format!("wrote {} ({} items)", out.join("demos.jsonl").display(), demos.len()),
    );
    save_pref_set(&prefs, out.join("prefs.jsonl"))?;
    say(
        quiet,
        format!("wrote {} ({} items)", out.join("prefs.jsonl").display(), prefs.len()),
    );

    let mut resolved = config.clone();
    resolved.seed = seed;
    resolved.labeling = Some(config.labeling());
    resolved.out_dir = None;
    write_json(&out.join("resolved_config.json"), &resolved)?;

    Ok(json!({
        "command": "synth",
        "seed": seed,
        "world": {
            "vocab_size": world.vocab().size(),
            "n_prompts": world.prompts().len(),
            "beta_star": world.beta_star.value(),
        },
        "n_demo": demos.len(),
        "n_pref": prefs.len(),
        "files": {
            "world": "world/world.json",
            "demos": "demos.jsonl",
            "prefs": "prefs.jsonl",
        },
    }))
}

fn build_world(spec: &WorldSpec, rng: &mut Rng) -> Result<World> {
    match spec {
        WorldSpec::PointDemo { r, beta_star } => {
            let index = single_token_index(Vocab::with_size(3)?, 1)?;
            let reference = TabularPolicy::uniform(index.clone());
            let reward = TabularReward::from_params(
                index,
                ParamVector::new(vec![0.0, 0.0, *r])?,
                None,
            )?;
            World::with_uniform_prompts(
                vec![Prompt::empty()],
                GroundTruth::Tabular(reward),
                reference,
                Beta::new(*beta_star)?,
            )
        }
        WorldSpec::RandomTabular {
            vocab_size,
            n_prompts,
            beta_star,
            reward_scale,
        } => {
            if !reward_scale.is_finite() || *reward_scale <= 0.0 {
                return Err(CoreError::validation(format!(
                    "reward_scale must be positive and finite, got {reward_scale}"
                )));
            }
            let index = single_token_index(Vocab::with_size(*vocab_size)?, *n_prompts)?;
            let reference = TabularPolicy::uniform(index.clone());
            let cells: Vec<f64> = (0..index.total_cells())
                .map(|_| rng.next_f64() * reward_scale)
                .collect();
            let prompts = index.prompts().to_vec();
            let reward = TabularReward::from_params(index, ParamVector::new(cells)?, None)?;
            World::with_uniform_prompts(
                prompts,
                GroundTruth::Tabular(reward),
                reference,
                Beta::new(*beta_star)?,
            )
        }
        WorldSpec::Descriptor { path } => load_world(path),
    }
}

// ---------------------------------------------------------------------------
// train

pub fn cmd_train(
    config: &TrainConfig,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<Value> {
    let demos = load_demo_set(&config.demo_file)?;
    let trainer = config.trainer.resolve(demos.len(), seed_override)?;
    let reference = checkpoint::load_from_path(&config.reference_file)?;
    if reference.vocab_size() != demos.vocab().size() {
        return Err(CoreError::mismatch(format!(
            "reference {} has vocabulary {}, dataset {} has {}",
            config.reference_file.display(),
            reference.vocab_size(),
            config.demo_file.display(),
            demos.vocab().size()
        )));
    }
    let spin = config.method == Method::Irft && trainer.t_outer == 1;

    let mut resolved = config.clone();
    resolved.trainer = config.trainer.resolved(&trainer);
    resolved.spin_equivalent = Some(spin);
    resolved.out_dir = None;
    write_json(&out.join("resolved_config.json"), &resolved)?;
    if spin {
        say(quiet, "spin_equivalent: true (irft with T = 1)");
    }

    let (trace, files, objective_note) = match (config.method, reference) {
        (Method::Sft, ModelCheckpoint::TabularPolicy(reference)) => {
            let init = tabular_policy_init(&config.init_file, &reference)?;
            let (policy, trace) = run_sft(init, &demos, &trainer)?;
            let file = save_model(out, "policy.ckpt", ModelCheckpoint::TabularPolicy(policy))?;
            (trace, vec![file], "mean batch log-likelihood")
        }
        (Method::Sft, ModelCheckpoint::AutoregressivePolicy(reference)) => {
            let init = ar_policy_init(&config.init_file, &reference)?;
            let (policy, trace) = run_sft(init, &demos, &trainer)?;
            let file =
                save_model(out, "policy.ckpt", ModelCheckpoint::AutoregressivePolicy(policy))?;
            (trace, vec![file], "mean batch log-likelihood")
        }
        (Method::Irft, ModelCheckpoint::TabularPolicy(reference)) => {
            let init = tabular_policy_init(&config.init_file, &reference)?;
            let (policy, trace) = run_irft(init, &reference, &demos, &trainer)?;
            let file = save_model(out, "policy.ckpt", ModelCheckpoint::TabularPolicy(policy))?;
            (trace, vec![file], "mean batch surrogate value")
        }
        (Method::Irft, ModelCheckpoint::AutoregressivePolicy(reference)) => {
            let init = ar_policy_init(&config.init_file, &reference)?;
            let (policy, trace) = run_irft(init, &reference, &demos, &trainer)?;
            let file =
                save_model(out, "policy.ckpt", ModelCheckpoint::AutoregressivePolicy(policy))?;
            (trace, vec![file], "mean batch surrogate value")
        }
        (Method::Rft, ModelCheckpoint::TabularPolicy(reference)) => {
            let init = tabular_reward_init(&config.init_file, &reference)?;
            let (reward, induced, trace) = run_rft(init, &reference, &demos, &trainer)?;
            let objective = final_rft_objective(&reward, &reference, &demos, &trainer)?;
            let reward_file =
                save_model(out, "reward.ckpt", ModelCheckpoint::TabularReward(reward))?;
            let policy_file =
                save_model(out, "policy.ckpt", ModelCheckpoint::TabularPolicy(induced))?;
            say(quiet, format!("final exact objective {objective}"));
            (trace, vec![reward_file, policy_file], "exact objective")
        }
        (Method::Rft, ModelCheckpoint::AutoregressivePolicy(_)) => {
            return Err(CoreError::Unsupported(
                "method rft needs an enumerable reference for its closed-form alignment; \
                 the reference checkpoint is an autoregressive policy"
                    .to_string(),
            ));
        }
        (_, other) => {
            return Err(CoreError::mismatch(format!(
                "reference_file must hold a policy, found family {}",
                other.family()
            )));
        }
    };

    let trace_path = out.join("trace.csv");
    let mut w = BufWriter::new(File::create(&trace_path)?);
    trace.write_csv(&mut w, false)?;
    w.flush()?;
    say(
        quiet,
        format!("wrote {} ({} steps)", trace_path.display(), trace.steps.len()),
    );

    let stats = convergence_stats(&trace)?;
    Ok(json!({
        "command": "train",
        "method": config.method,
        "seed": trainer.seed,
        "steps": trace.steps.len(),
        "spin_equivalent": spin,
        "effective_eta": trainer.effective_eta(),
        "final_objective": trace.steps.last().map(|s| s.objective),
        "objective_kind": objective_note,
        "min_grad_norm": stats.min_grad_norm,
        "argmin_step": stats.argmin_step,
        "files": files,
    }))
}

fn save_model(out: &Path, name: &str, model: ModelCheckpoint) -> Result<String> {
    checkpoint::save_to_path(&model, &out.join(name))?;
    Ok(name.to_string())
}

fn tabular_policy_init(init: &Option<PathBuf>, reference: &TabularPolicy) -> Result<TabularPolicy> {
    let Some(path) = init else {
        return Ok(reference.clone());
    };
    match checkpoint::load_from_path(path)? {
        ModelCheckpoint::TabularPolicy(p) => {
            if p.index() != reference.index() {
                return Err(CoreError::mismatch(format!(
                    "init {} enumerates a different table than the reference",
                    path.display()
                )));
            }
            Ok(p)
        }
        other => Err(CoreError::mismatch(format!(
            "init {} must match the reference family tabular_policy, found {}",
            path.display(),
            other.family()
        ))),
    }
}

fn ar_policy_init(
    init: &Option<PathBuf>,
    reference: &AutoregressivePolicy,
) -> Result<AutoregressivePolicy> {
    let Some(path) = init else {
        return Ok(reference.clone());
    };
    match checkpoint::load_from_path(path)? {
        ModelCheckpoint::AutoregressivePolicy(p) => {
            if p.config() != reference.config() {
                return Err(CoreError::mismatch(format!(
                    "init {} has a different sequence-model shape than the reference",
                    path.display()
                )));
            }
            Ok(p)
        }
        other => Err(CoreError::mismatch(format!(
            "init {} must match the reference family autoregressive_policy, found {}",
            path.display(),
            other.family()
        ))),
    }
}

fn tabular_reward_init(init: &Option<PathBuf>, reference: &TabularPolicy) -> Result<TabularReward> {
    let Some(path) = init else {
        // The clamp from the trainer section is applied inside run_rft.
        return TabularReward::zeros(reference.index().clone(), None);
    };
    match checkpoint::load_from_path(path)? {
        ModelCheckpoint::TabularReward(r) => {
            if r.index() != reference.index() {
                return Err(CoreError::mismatch(format!(
                    "init {} enumerates a different table than the reference",
                    path.display()
                )));
            }
            Ok(r)
        }
        other => Err(CoreError::mismatch(format!(
            "init {} must be a tabular_reward, found {}",
            path.display(),
            other.family()
        ))),
    }
}

fn final_rft_objective(
    reward: &TabularReward,
    reference: &TabularPolicy,
    demos: &DemoSet,
    trainer: &TrainerConfig,
) -> Result<f64> {
    ml_irl_objective(reward, reference, demos, Beta::new(trainer.beta)?)
}

// ---------------------------------------------------------------------------
// eval

pub fn cmd_eval(
    config: &EvalConfig,
    out: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<Value> {
    config.validate()?;
    let seed = seed_override.unwrap_or(config.seed);
    let root = Rng::seed(seed);
    let mut stem_counts: HashMap<&'static str, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(config.metrics.len());
    for (i, metric) in config.metrics.iter().enumerate() {
        let n = stem_counts.entry(metric.stem()).or_insert(0);
        *n += 1;
        let file = if *n == 1 {
            format!("{}.csv", metric.stem())
        } else {
            format!("{}_{}.csv", metric.stem(), n)
        };
        let mut entry = run_metric(metric, &root.child(i as u64), &out.join(&file))?;
        entry["file"] = json!(file);
        say(quiet, format!("wrote {}", out.join(&file).display()));
        entries.push(entry);
    }

    let mut resolved = config.clone();
    resolved.seed = seed;
    resolved.out_dir = None;
    write_json(&out.join("resolved_config.json"), &resolved)?;

    Ok(json!({
        "command": "eval",
        "seed": seed,
        "metrics": entries,
    }))
}

fn run_metric(metric: &MetricSpec, rng: &Rng, csv_path: &Path) -> Result<Value> {
    let mut csv = BufWriter::new(File::create(csv_path)?);
    let entry = match metric {
        MetricSpec::Gap {
            policy_file,
            pref_file,
        } => {
            let policy = load_policy(policy_file)?;
            let prefs = load_pref_set(pref_file)?;
            check_vocab(policy.vocab_size(), policy_file, prefs.vocab().size(), pref_file)?;
            let report = log_prob_gap(policy.as_ref(), &prefs)?;
            report.write_csv(&mut csv)?;
            json!({
                "metric": "gap",
                "count": report.count,
                "mean": report.mean,
                "std_error": report.std_error,
            })
        }
        MetricSpec::WinRate {
            policy_a,
            policy_b,
            judge_file,
            prompts_from,
            n_per_prompt,
        } => {
            let a = load_policy(policy_a)?;
            let b = load_policy(policy_b)?;
            let (judge, judge_vocab) = load_reward(judge_file)?;
            check_vocab(a.vocab_size(), policy_a, b.vocab_size(), policy_b)?;
            check_vocab(a.vocab_size(), policy_a, judge_vocab, judge_file)?;
            let prompts = prompts_from_dataset(prompts_from)?;
            let report = win_rate(
                a.as_ref(),
                b.as_ref(),
                judge.as_ref(),
                &prompts,
                rng,
                *n_per_prompt,
            )?;
            writeln!(csv, "wins,ties,losses,total,rate")?;
            writeln!(
                csv,
                "{},{},{},{},{}",
                report.wins,
                report.ties,
                report.total - report.wins - report.ties,
                report.total,
                report.rate
            )?;
            json!({
                "metric": "win_rate",
                "wins": report.wins,
                "ties": report.ties,
                "total": report.total,
                "rate": report.rate,
            })
        }
        MetricSpec::BtDiagnostic { scorer, pref_file } => {
            let prefs = load_pref_set(pref_file)?;
            let report = match scorer {
                ScorerSpec::Explicit { reward_file } => {
                    let (reward, reward_vocab) = load_reward(reward_file)?;
                    check_vocab(reward_vocab, reward_file, prefs.vocab().size(), pref_file)?;
                    bt_diagnostic(&PairScorer::Explicit(reward.as_ref()), &prefs)?
                }
                ScorerSpec::Implicit {
                    policy_file,
                    reference_file,
                    beta,
                } => {
                    let policy = load_policy(policy_file)?;
                    let reference = load_policy(reference_file)?;
                    check_vocab(
                        policy.vocab_size(),
                        policy_file,
                        prefs.vocab().size(),
                        pref_file,
                    )?;
                    check_vocab(
                        policy.vocab_size(),
                        policy_file,
                        reference.vocab_size(),
                        reference_file,
                    )?;
                    bt_diagnostic(
                        &PairScorer::Implicit {
                            policy: policy.as_ref(),
                            reference: reference.as_ref(),
                            beta: Beta::new(*beta)?,
                        },
                        &prefs,
                    )?
                }
            };
            writeln!(csv, "mean_log_likelihood,accuracy,count")?;
            writeln!(
                csv,
                "{},{},{}",
                report.mean_log_likelihood, report.accuracy, report.count
            )?;
            json!({
                "metric": "bt_diagnostic",
                "mean_log_likelihood": report.mean_log_likelihood,
                "accuracy": report.accuracy,
                "count": report.count,
            })
        }
        MetricSpec::ConvergenceStats { trace_file } => {
            let trace = TrainTrace::read_csv(BufReader::new(File::open(trace_file)?))?;
            let stats = convergence_stats(&trace)?;
            writeln!(csv, "outer,mean_grad_norm")?;
            for (t, mean) in stats.per_outer_means.iter().enumerate() {
                writeln!(csv, "{t},{mean}")?;
            }
            json!({
                "metric": "convergence_stats",
                "min_grad_norm": stats.min_grad_norm,
                "argmin_step": stats.argmin_step,
                "n_outer": stats.per_outer_means.len(),
            })
        }
    };
    csv.flush()?;
    Ok(entry)
}

fn load_policy(path: &Path) -> Result<Box<dyn PolicyModel>> {
    match checkpoint::load_from_path(path)? {
        ModelCheckpoint::TabularPolicy(p) => Ok(Box::new(p)),
        ModelCheckpoint::AutoregressivePolicy(p) => Ok(Box::new(p)),
        other => Err(CoreError::mismatch(format!(
            "{} holds a {}, expected a policy",
            path.display(),
            other.family()
        ))),
    }
}

/// Loads a reward checkpoint, returning its vocabulary size alongside —
/// the trait object alone cannot report it.
fn load_reward(path: &Path) -> Result<(Box<dyn RewardModel>, usize)> {
    let ckpt = checkpoint::load_from_path(path)?;
    let vocab = ckpt.vocab_size();
    match ckpt {
        ModelCheckpoint::TabularReward(r) => Ok((Box::new(r), vocab)),
        ModelCheckpoint::FeaturizedReward(r) => Ok((Box::new(r), vocab)),
        other => Err(CoreError::mismatch(format!(
            "{} holds a {}, expected a reward",
            path.display(),
            other.family()
        ))),
    }
}

fn check_vocab(model_vocab: usize, model: &Path, data_vocab: usize, data: &Path) -> Result<()> {
    if model_vocab != data_vocab {
        return Err(CoreError::mismatch(format!(
            "{} has vocabulary {}, {} has {}",
            model.display(),
            model_vocab,
            data.display(),
            data_vocab
        )));
    }
    Ok(())
}

/// Distinct prompts of a dataset file, in first-appearance order. Accepts
/// demonstration or preference files.
fn prompts_from_dataset(path: &Path) -> Result<Vec<Prompt>> {
    match load_demo_set(path) {
        Ok(demos) => Ok(demos.distinct_prompts()),
        Err(demo_err) => match load_pref_set(path) {
            Ok(prefs) => {
                let mut seen = Vec::new();
                for t in prefs.items() {
                    if !seen.contains(&t.prompt) {
                        seen.push(t.prompt.clone());
                    }
                }
                Ok(seen)
            }
            Err(_) => Err(demo_err),
        },
    }
}

// ---------------------------------------------------------------------------
// oracle-check

pub fn cmd_oracle_check(
    config: &OracleCheckConfig,
    out: Option<&Path>,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<Value> {
    let opts = config.battery_options(seed_override);
    let checks = standard_battery(&opts)?;
    let mut reports: Vec<OracleReport> = Vec::with_capacity(checks.len());
    for check in &checks {
        let report = check.run();
        if !quiet || !report.passed {
            println!("{report}");
        }
        reports.push(report);
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.check.as_str())
        .collect();

    let summary = json!({
        "command": "oracle_check",
        "seed": opts.seed,
        "n_instances": opts.n_instances,
        "n_checks": reports.len(),
        "n_passed": reports.len() - failed.len(),
        "all_passed": failed.is_empty(),
        "failed": failed,
    });
    if let Some(out) = out {
        let mut w = BufWriter::new(File::create(out.join("reports.jsonl"))?);
        for report in &reports {
            let line = serde_json::to_string(report)
                .map_err(|e| CoreError::validation(format!("serializing report: {e}")))?;
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        let mut resolved = config.clone();
        resolved.seed = opts.seed;
        resolved.out_dir = None;
        write_json(&out.join("resolved_config.json"), &resolved)?;
    }
    if !failed.is_empty() {
        return Err(CoreError::OracleFailure(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            reports.len(),
            failed.join(", ")
        )));
    }
    Ok(summary)
}
