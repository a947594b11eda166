//! The standard oracle battery: named, seeded, self-contained checks over
//! every gradient kernel and exact identity in the crate.

use super::{
    exact_self_generation_gradient, exact_stationary_points, fd_gradient, point_demo_optimum,
    BatteryOptions, Check, OracleReport, SearchOptions, DEDUP_TV, FD_EPS, MAX_SEARCH_CONTS,
    MAX_SEARCH_PROMPTS, STATIONARY_TOL, TOL_ENUMERATED, TOL_EXACT, TOL_FD_NEAR_CLAMP,
    TOL_FD_SMOOTH,
};
use crate::domain::{Continuation, DemoPair, Prompt};
use crate::error::{CoreError, Result};
use crate::gradients::{
    demo_log_likelihood, irft_gradient, irft_margin, minimax_value, ml_irl_objective,
    rft_reward_gradient, sft_gradient, GradSample, SurrogateShape,
};
use crate::instances::{point_demo_instance, random_instance, TabularInstance};
use crate::params::ParamVector;
use crate::policy::{ArConfig, AutoregressivePolicy, PolicyModel, TabularPolicy};
use crate::reward::{induced_policy, Beta, FeaturizedReward, RewardModel, TabularReward};
use crate::rng::Rng;

const BETAS: [f64; 3] = [0.5, 1.0, 2.0];

/// Builds the full named battery at the given size. Refuses sizes beyond
/// the enumeration bounds of the stationary-point search so a run that
/// passes is known to have enumerated everything exactly.
pub fn standard_battery(opts: &BatteryOptions) -> Result<Vec<Check>> {
    if opts.max_prompts > MAX_SEARCH_PROMPTS {
        return Err(CoreError::TooLarge(format!(
            "battery instances capped at {MAX_SEARCH_PROMPTS} prompts, requested {}",
            opts.max_prompts
        )));
    }
    if opts.max_conts > MAX_SEARCH_CONTS {
        return Err(CoreError::TooLarge(format!(
            "battery instances capped at {MAX_SEARCH_CONTS} continuations per prompt, requested {}",
            opts.max_conts
        )));
    }
    if opts.n_instances == 0 {
        return Err(CoreError::validation("battery needs at least one instance"));
    }

    let mut checks = Vec::new();
    let o = opts.clone();
    checks.push(named(
        "policy-grad-fd-tabular",
        TOL_FD_SMOOTH,
        move || check_policy_fd_tabular(&o),
    ));
    let o = opts.clone();
    checks.push(named(
        "policy-grad-fd-autoregressive",
        TOL_FD_SMOOTH,
        move || check_policy_fd_ar(&o),
    ));
    let o = opts.clone();
    checks.push(named(
        "reward-grad-fd-tabular",
        TOL_FD_SMOOTH,
        move || check_reward_fd_tabular(&o),
    ));
    let o = opts.clone();
    checks.push(named(
        "reward-grad-fd-featurized",
        TOL_FD_SMOOTH,
        move || check_reward_fd_featurized(&o),
    ));
    let o = opts.clone();
    checks.push(named("sft-kernel-fd", TOL_FD_SMOOTH, move || {
        check_sft_kernel(&o)
    }));
    let o = opts.clone();
    checks.push(named("rft-kernel-fd", TOL_FD_SMOOTH, move || {
        check_rft_kernel(&o)
    }));
    checks.push(named(
        "rft-kernel-fd-near-clamp",
        TOL_FD_NEAR_CLAMP,
        check_rft_kernel_near_clamp,
    ));
    let o = opts.clone();
    checks.push(named(
        "irft-kernel-fd-identity",
        TOL_FD_SMOOTH,
        move || check_irft_kernel(&o, SurrogateShape::Identity),
    ));
    let o = opts.clone();
    checks.push(named(
        "irft-kernel-fd-log-sigmoid",
        TOL_FD_SMOOTH,
        move || check_irft_kernel(&o, SurrogateShape::LogSigmoid),
    ));
    let o = opts.clone();
    checks.push(named(
        "self-generation-identity",
        TOL_ENUMERATED,
        move || check_self_generation_identity(&o),
    ));
    let o = opts.clone();
    checks.push(named("minimax-consistency", TOL_EXACT, move || {
        check_minimax_consistency(&o)
    }));
    let o = opts.clone();
    checks.push(named("score-identity", 1e-12, move || {
        check_score_identity(&o)
    }));
    checks.push(named(
        "canonical-objective-value",
        TOL_EXACT,
        check_canonical_objective,
    ));
    checks.push(named("point-demo-closed-form", 1e-6, move || {
        check_point_demo_closed_form()
    }));
    let o = opts.clone();
    checks.push(named("induced-normalization", TOL_EXACT, move || {
        check_induced_normalization(&o)
    }));
    Ok(checks)
}

/// Wraps a fallible max-error computation into a [`Check`].
fn named(
    name: &'static str,
    tolerance: f64,
    body: impl Fn() -> Result<(f64, String)> + 'static,
) -> Check {
    Check::new(name, move || match body() {
        Ok((max_error, detail)) => OracleReport::from_error(name, max_error, tolerance, detail),
        Err(e) => OracleReport::from_failure(name, &e),
    })
}

fn instances(opts: &BatteryOptions, tag: u64) -> Result<Vec<(TabularInstance, TabularReward)>> {
    (0..opts.n_instances)
        .map(|k| {
            random_instance(
                opts.seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(tag * 10_000 + k as u64),
                BETAS[k % BETAS.len()],
                opts.max_prompts,
                opts.max_conts,
            )
        })
        .collect()
}

/// Componentwise max |analytic - finite difference|.
fn max_component_gap(analytic: &ParamVector, fd: &[f64]) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn check_policy_fd_tabular(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    let mut cells = 0usize;
    for (instance, _) in instances(opts, 1)? {
        let policy = instance.reference.clone();
        let index = policy.index().clone();
        for row in 0..index.n_prompts() {
            let prompt = index.prompt(row).clone();
            for cont in index.row(row) {
                let analytic = policy.grad_log_prob(&prompt, cont)?;
                let fd = fd_gradient(
                    |p| {
                        TabularPolicy::from_params(
                            index.clone(),
                            ParamVector::new(p.to_vec()).expect("finite probe"),
                        )
                        .expect("fixed shape")
                        .log_prob(&prompt, cont)
                        .expect("enumerated cell")
                    },
                    policy.params().as_slice(),
                    FD_EPS,
                )?;
                worst = worst.max(max_component_gap(&analytic, &fd));
                cells += 1;
            }
        }
    }
    Ok((worst, format!("{cells} cells over {} instances", opts.n_instances)))
}

fn random_ar_policy(seed: u64) -> Result<(AutoregressivePolicy, Prompt, Continuation)> {
    let config = ArConfig::new(4, 2, 5, None)?;
    let mut rng = Rng::seed(seed);
    let dim = AutoregressivePolicy::zeros(config.clone()).params().len();
    let params =
        ParamVector::new((0..dim).map(|_| 2.0 * rng.next_f64() - 1.0).collect())?;
    let policy = AutoregressivePolicy::from_params(config, params)?;
    let prompt = Prompt::new((0..rng.next_index(3)).map(|_| rng.next_index(4)).collect());
    let cont = Continuation::new(
        (0..1 + rng.next_index(4)).map(|_| rng.next_index(4)).collect(),
    )?;
    Ok((policy, prompt, cont))
}

fn check_policy_fd_ar(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..opts.n_instances {
        let (policy, prompt, cont) = random_ar_policy(opts.seed + 777 + k as u64)?;
        let analytic = policy.grad_log_prob(&prompt, &cont)?;
        let config = policy.config().clone();
        let fd = fd_gradient(
            |p| {
                AutoregressivePolicy::from_params(
                    config.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                )
                .expect("fixed shape")
                .log_prob(&prompt, &cont)
                .expect("in-range tokens")
            },
            policy.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    Ok((worst, format!("{} sequence models", opts.n_instances)))
}

fn check_reward_fd_tabular(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for (instance, reward) in instances(opts, 2)? {
        let index = instance.index.clone();
        for row in 0..index.n_prompts() {
            let prompt = index.prompt(row).clone();
            for cont in index.row(row) {
                let analytic = reward.grad(&prompt, cont)?;
                let fd = fd_gradient(
                    |p| {
                        TabularReward::from_params(
                            index.clone(),
                            ParamVector::new(p.to_vec()).expect("finite probe"),
                            None,
                        )
                        .expect("fixed shape")
                        .value(&prompt, cont)
                        .expect("enumerated cell")
                    },
                    reward.params().as_slice(),
                    FD_EPS,
                )?;
                worst = worst.max(max_component_gap(&analytic, &fd));
            }
        }
    }
    Ok((worst, format!("{} instances", opts.n_instances)))
}

fn check_reward_fd_featurized(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..opts.n_instances {
        let mut rng = Rng::seed(opts.seed + 31_000 + k as u64);
        let vocab_size = 3 + rng.next_index(3);
        let zero = FeaturizedReward::zeros(vocab_size)?;
        let params = ParamVector::new(
            (0..zero.params().len()).map(|_| 2.0 * rng.next_f64() - 1.0).collect(),
        )?;
        let reward = FeaturizedReward::from_params(vocab_size, params)?;
        let prompt =
            Prompt::new((0..rng.next_index(3)).map(|_| rng.next_index(vocab_size)).collect());
        let cont = Continuation::new(
            (0..1 + rng.next_index(4)).map(|_| rng.next_index(vocab_size)).collect(),
        )?;
        let analytic = reward.grad(&prompt, &cont)?;
        let fd = fd_gradient(
            |p| {
                FeaturizedReward::from_params(
                    vocab_size,
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                )
                .expect("fixed shape")
                .value(&prompt, &cont)
                .expect("in-range tokens")
            },
            reward.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    Ok((worst, format!("{} weight vectors", opts.n_instances)))
}

fn check_sft_kernel(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for (instance, _) in instances(opts, 3)? {
        let policy = instance.reference.clone();
        let index = policy.index().clone();
        let batch: Vec<&DemoPair> = instance.demos.items().iter().collect();
        let analytic = sft_gradient(&policy, &batch)?;
        let fd = fd_gradient(
            |p| {
                let probe = TabularPolicy::from_params(
                    index.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                )
                .expect("fixed shape");
                let total: f64 = batch
                    .iter()
                    .map(|d| probe.log_prob(&d.prompt, &d.continuation).expect("enumerated"))
                    .sum();
                total / batch.len() as f64
            },
            policy.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    Ok((worst, format!("{} demo batches", opts.n_instances)))
}

/// A (prompt, demo, synthetic) triple from an instance: the demo is the
/// first demonstration item, the synthetic is a different continuation in
/// the same row when one exists.
fn first_contrast(instance: &TabularInstance) -> Result<(Prompt, Continuation, Continuation)> {
    let item = &instance.demos.items()[0];
    let row = instance
        .index
        .prompt_index(&item.prompt)
        .ok_or_else(|| CoreError::mismatch("demo prompt outside enumeration".to_string()))?;
    let conts = instance.index.row(row);
    let demo_col = instance
        .index
        .cont_index(row, &item.continuation)
        .ok_or_else(|| CoreError::mismatch("demo continuation outside enumeration".to_string()))?;
    let synth = conts[(demo_col + 1) % conts.len()].clone();
    Ok((item.prompt.clone(), item.continuation.clone(), synth))
}

fn check_rft_kernel(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for (k, (instance, reward)) in instances(opts, 4)?.into_iter().enumerate() {
        let (prompt, demo, synth) = first_contrast(&instance)?;
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        let beta = Beta::new(BETAS[k % BETAS.len()])?;
        let analytic = rft_reward_gradient(&reward, &sample, beta)?;
        let index = instance.index.clone();
        let fd = fd_gradient(
            |p| {
                let probe = TabularReward::from_params(
                    index.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                    None,
                )
                .expect("fixed shape");
                (probe.value(&prompt, &demo).expect("enumerated")
                    - probe.value(&prompt, &synth).expect("enumerated"))
                    / beta.value()
            },
            reward.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    Ok((worst, format!("{} contrasts", opts.n_instances)))
}

fn check_rft_kernel_near_clamp() -> Result<(f64, String)> {
    // Canonical instance with the reward parked exactly on its clamp
    // corners (0, 0, r_max): the kernel stays linear, but this is the
    // regime where a projected trainer lives, so it gets its own check at
    // the relaxed tolerance.
    let instance = point_demo_instance(1.0, 1.0)?;
    let params = ParamVector::new(vec![0.0, 0.0, 1.0])?;
    let reward =
        TabularReward::from_params(instance.index.clone(), params, instance.clamp_max)?;
    let (prompt, demo, synth) = first_contrast(&instance)?;
    let sample = GradSample {
        prompt: &prompt,
        demo: &demo,
        synthetic: &synth,
    };
    let analytic = rft_reward_gradient(&reward, &sample, instance.beta)?;
    let index = instance.index.clone();
    let fd = fd_gradient(
        |p| {
            let probe = TabularReward::from_params(
                index.clone(),
                ParamVector::new(p.to_vec()).expect("finite probe"),
                None,
            )
            .expect("fixed shape");
            (probe.value(&prompt, &demo).expect("enumerated")
                - probe.value(&prompt, &synth).expect("enumerated"))
                / instance.beta.value()
        },
        reward.params().as_slice(),
        FD_EPS,
    )?;
    Ok((max_component_gap(&analytic, &fd), "clamp corners".to_string()))
}

fn check_irft_kernel(opts: &BatteryOptions, h: SurrogateShape) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    // Tabular family.
    for (instance, reward) in instances(opts, 5)? {
        let policy = induced_policy(&reward, &instance.reference, instance.beta)?;
        let reference = instance.reference.clone();
        let (prompt, demo, synth) = first_contrast(&instance)?;
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        let analytic = irft_gradient(&policy, &reference, &sample, h)?;
        let index = policy.index().clone();
        let fd = fd_gradient(
            |p| {
                let probe = TabularPolicy::from_params(
                    index.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                )
                .expect("fixed shape");
                h.h(irft_margin(&probe, &reference, &sample).expect("enumerated"))
            },
            policy.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    // Sequence family: an independent snapshot of the same model serves as
    // the frozen reference.
    for k in 0..opts.n_instances {
        let (policy, prompt, demo) = random_ar_policy(opts.seed + 52_000 + k as u64)?;
        let (reference, _, synth) = random_ar_policy(opts.seed + 63_000 + k as u64)?;
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        let analytic = irft_gradient(&policy, &reference, &sample, h)?;
        let config = policy.config().clone();
        let fd = fd_gradient(
            |p| {
                let probe = AutoregressivePolicy::from_params(
                    config.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                )
                .expect("fixed shape");
                h.h(irft_margin(&probe, &reference, &sample).expect("in-range"))
            },
            policy.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&analytic, &fd));
    }
    Ok((
        worst,
        format!("{} tabular + {} sequence contrasts", opts.n_instances, opts.n_instances),
    ))
}

fn check_self_generation_identity(opts: &BatteryOptions) -> Result<(f64, String)> {
    // At beta = 1 the reward table and the policy logit table share a
    // coordinate system, so the fully enumerated self-generation gradient
    // of the induced policy must equal the finite-difference gradient of
    // the exact objective in the reward coordinates, cell for cell.
    let mut worst: f64 = 0.0;
    for k in 0..opts.n_instances {
        let (instance, reward) = random_instance(
            opts.seed.wrapping_mul(1_000_003).wrapping_add(70_000 + k as u64),
            1.0,
            opts.max_prompts,
            opts.max_conts,
        )?;
        let policy = induced_policy(&reward, &instance.reference, instance.beta)?;
        let enumerated = exact_self_generation_gradient(
            &policy,
            &instance.reference,
            &instance.demos,
            SurrogateShape::Identity,
        )?;
        let index = instance.index.clone();
        let reference = instance.reference.clone();
        let demos = instance.demos.clone();
        let fd = fd_gradient(
            |p| {
                let probe = TabularReward::from_params(
                    index.clone(),
                    ParamVector::new(p.to_vec()).expect("finite probe"),
                    None,
                )
                .expect("fixed shape");
                ml_irl_objective(&probe, &reference, &demos, instance.beta)
                    .expect("enumerated")
            },
            reward.params().as_slice(),
            FD_EPS,
        )?;
        worst = worst.max(max_component_gap(&enumerated, &fd));
    }
    Ok((worst, format!("{} unit-strength instances", opts.n_instances)))
}

fn check_minimax_consistency(opts: &BatteryOptions) -> Result<(f64, String)> {
    // At any reward, plugging its induced policy into the adversarial
    // value must reproduce (a) the single-level objective exactly and
    // (b) the demonstration log-likelihood shifted by the reference's.
    let mut worst: f64 = 0.0;
    for (instance, reward) in instances(opts, 8)? {
        let induced = induced_policy(&reward, &instance.reference, instance.beta)?;
        let at_min = minimax_value(
            &reward,
            &induced,
            &instance.reference,
            &instance.demos,
            instance.beta,
        )?;
        let single = ml_irl_objective(
            &reward,
            &instance.reference,
            &instance.demos,
            instance.beta,
        )?;
        let bilevel = demo_log_likelihood(&induced, &instance.demos)?
            - demo_log_likelihood(&instance.reference, &instance.demos)?;
        worst = worst.max((at_min - single).abs()).max((at_min - bilevel).abs());
    }
    Ok((worst, format!("{} rewards, both identities", opts.n_instances)))
}

fn check_score_identity(opts: &BatteryOptions) -> Result<(f64, String)> {
    // E_{y ~ pi}[grad log pi(y|x)] = 0 for every prompt.
    let mut worst: f64 = 0.0;
    for (instance, _) in instances(opts, 9)? {
        let policy = instance.reference.clone();
        let index = policy.index().clone();
        for row in 0..index.n_prompts() {
            let prompt = index.prompt(row).clone();
            let probs = policy.row_probs(row);
            let mut mean = ParamVector::zeros(policy.params().len());
            for (cont, &p) in index.row(row).iter().zip(&probs) {
                let g = policy.grad_log_prob(&prompt, cont)?;
                mean.add_scaled(p, &g)?;
            }
            worst = worst.max(mean.max_abs());
        }
    }
    Ok((worst, format!("{} instances", opts.n_instances)))
}

fn check_canonical_objective() -> Result<(f64, String)> {
    // Objective at the canonical instance's corner reward (0, 0, 1) with
    // unit strength: 1 - ln((2 + e)/3).
    let instance = point_demo_instance(1.0, 1.0)?;
    let reward = TabularReward::from_params(
        instance.index.clone(),
        ParamVector::new(vec![0.0, 0.0, 1.0])?,
        instance.clamp_max,
    )?;
    let got = ml_irl_objective(&reward, &instance.reference, &instance.demos, instance.beta)?;
    let expected = 1.0 - ((2.0 + std::f64::consts::E) / 3.0).ln();
    Ok(((got - expected).abs(), format!("expected {expected:.10}")))
}

fn check_point_demo_closed_form() -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for (r_max, beta) in [(1.0, 1.0), (2.0, 0.5)] {
        let instance = point_demo_instance(r_max, beta)?;
        let points = exact_stationary_points(&instance, &SearchOptions::default())?;
        if points.len() != 1 {
            return Err(CoreError::OracleFailure(format!(
                "expected a unique stationary policy, found {}",
                points.len()
            )));
        }
        let expected = point_demo_optimum(r_max, beta);
        let got = points[0].induced.row_probs(0);
        for (g, e) in got.iter().zip(expected) {
            worst = worst.max((g - e).abs());
        }
        if points[0].grad_norm > STATIONARY_TOL {
            return Err(CoreError::OracleFailure(format!(
                "search reported a non-stationary point (|pg| = {})",
                points[0].grad_norm
            )));
        }
    }
    let _ = DEDUP_TV;
    Ok((worst, "two clamp settings vs algebra".to_string()))
}

fn check_induced_normalization(opts: &BatteryOptions) -> Result<(f64, String)> {
    let mut worst: f64 = 0.0;
    for (instance, reward) in instances(opts, 11)? {
        let induced = induced_policy(&reward, &instance.reference, instance.beta)?;
        for row in 0..induced.index().n_prompts() {
            let sum: f64 = induced.row_probs(row).iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    Ok((worst, format!("{} induced policies", opts.n_instances)))
}
