//! Evaluation metrics: log-probability gaps on preference pairs, paired
//! win rates under a scoring reward, the pairwise logistic diagnostic, and
//! convergence statistics over training traces.

use serde::Serialize;

use crate::domain::{Continuation, PrefSet, Prompt};
use crate::error::{CoreError, Result};
use crate::numerics::log_sigmoid;
use crate::policy::PolicyModel;
use crate::reward::{Beta, RewardModel};
use crate::rng::Rng;
use crate::trainers::TrainTrace;

/// Per-triple log-probability gaps with their mean and standard error.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    #[serde(skip_serializing)]
    pub gaps: Vec<f64>,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

impl GapReport {
    fn from_gaps(gaps: Vec<f64>) -> Self {
        let n = gaps.len();
        let mean = gaps.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        GapReport {
            gaps,
            count: n,
            mean,
            std_error,
        }
    }

    /// Per-item rows: `index,gap`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,gap")?;
        for (i, g) in self.gaps.iter().enumerate() {
            writeln!(w, "{i},{g}")?;
        }
        Ok(())
    }
}

/// `log pi(chosen) - log pi(rejected)` per preference triple.
pub fn log_prob_gap(policy: &dyn PolicyModel, prefs: &PrefSet) -> Result<GapReport> {
    let gaps = prefs
        .items()
        .iter()
        .map(|t| {
            Ok(policy.log_prob(&t.prompt, &t.chosen)? - policy.log_prob(&t.prompt, &t.rejected)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GapReport::from_gaps(gaps))
}

/// Paired-comparison tally. Losses are `total - wins - ties`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WinRateReport {
    pub wins: usize,
    pub ties: usize,
    pub total: usize,
    pub rate: f64,
}

/// Samples one continuation from each policy per (prompt, repetition) and
/// compares their scores under `scorer`; strictly higher scores a win for
/// the first policy, exact equality a tie.
///
/// Comparison `i` draws both sides from clones of `rng.child(i)`: the two
/// models consume identical random streams, so identical policies generate
/// identical continuations (all ties) and swapping the arguments swaps
/// wins and losses exactly while leaving ties fixed.
pub fn win_rate(
    policy_a: &dyn PolicyModel,
    policy_b: &dyn PolicyModel,
    scorer: &dyn RewardModel,
    prompts: &[Prompt],
    rng: &Rng,
    n_per_prompt: usize,
) -> Result<WinRateReport> {
    if prompts.is_empty() {
        return Err(CoreError::validation("win_rate needs at least one prompt"));
    }
    if n_per_prompt < 1 {
        return Err(CoreError::validation("n_per_prompt must be at least 1"));
    }
    let mut wins = 0;
    let mut ties = 0;
    let mut comparison = 0u64;
    for prompt in prompts {
        for _ in 0..n_per_prompt {
            let base = rng.child(comparison);
            comparison += 1;
            let mut rng_a = base.clone();
            let mut rng_b = base;
            let ya = policy_a.sample(prompt, &mut rng_a)?;
            let yb = policy_b.sample(prompt, &mut rng_b)?;
            let sa = scorer.value(prompt, &ya)?;
            let sb = scorer.value(prompt, &yb)?;
            if sa > sb {
                wins += 1;
            } else if sa == sb {
                ties += 1;
            }
        }
    }
    let total = prompts.len() * n_per_prompt;
    Ok(WinRateReport {
        wins,
        ties,
        total,
        rate: wins as f64 / total as f64,
    })
}

/// How a preference pair gets scored: an explicit reward model, or the
/// log-ratio reward implied by a policy against a reference. The implicit
/// form omits the per-prompt normalizer, which cancels in the differences
/// this scorer is used for.
pub enum PairScorer<'a> {
    Explicit(&'a dyn RewardModel),
    Implicit {
        policy: &'a dyn PolicyModel,
        reference: &'a dyn PolicyModel,
        beta: Beta,
    },
}

impl PairScorer<'_> {
    pub fn score(&self, x: &Prompt, y: &Continuation) -> Result<f64> {
        match self {
            PairScorer::Explicit(r) => r.value(x, y),
            PairScorer::Implicit {
                policy,
                reference,
                beta,
            } => crate::reward::implicit_reward(*policy, *reference, *beta, x, y),
        }
    }
}

/// Pairwise logistic diagnostic over a preference set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BtReport {
    /// Mean of `log sigmoid(score(chosen) - score(rejected))`.
    pub mean_log_likelihood: f64,
    /// Fraction of triples ranked correctly; exact ties credit 0.5, so an
    /// uninformative scorer lands at exactly 0.5.
    pub accuracy: f64,
    pub count: usize,
}

pub fn bt_diagnostic(scorer: &PairScorer<'_>, prefs: &PrefSet) -> Result<BtReport> {
    let mut ll = 0.0;
    let mut correct = 0.0;
    for t in prefs.items() {
        let d = scorer.score(&t.prompt, &t.chosen)? - scorer.score(&t.prompt, &t.rejected)?;
        ll += log_sigmoid(d);
        correct += if d > 0.0 {
            1.0
        } else if d == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    let n = prefs.items().len();
    Ok(BtReport {
        mean_log_likelihood: ll / n as f64,
        accuracy: correct / n as f64,
        count: n,
    })
}

/// Summary of the gradient-norm column of a trace.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStats {
    pub min_grad_norm: f64,
    /// Step index of the first occurrence of the minimum.
    pub argmin_step: usize,
    /// Mean gradient norm per outer iteration, in order.
    pub per_outer_means: Vec<f64>,
}

pub fn convergence_stats(trace: &TrainTrace) -> Result<ConvergenceStats> {
    if trace.steps.is_empty() {
        return Err(CoreError::validation("empty trace"));
    }
    let mut min_grad_norm = f64::INFINITY;
    let mut argmin_step = 0;
    for s in &trace.steps {
        if s.grad_norm < min_grad_norm {
            min_grad_norm = s.grad_norm;
            argmin_step = s.step;
        }
    }
    let n_outer = trace.steps.iter().map(|s| s.t).max().unwrap() + 1;
    let mut sums = vec![0.0; n_outer];
    let mut counts = vec![0usize; n_outer];
    for s in &trace.steps {
        sums[s.t] += s.grad_norm;
        counts[s.t] += 1;
    }
    let per_outer_means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok(ConvergenceStats {
        min_grad_norm,
        argmin_step,
        per_outer_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PrefTriple, Vocab};
    use crate::instances::point_demo_instance;
    use crate::params::ParamVector;
    use crate::policy::TabularPolicy;
    use crate::reward::{induced_policy, TabularReward};
    use crate::trainers::TrainStep;

    fn three_action_prefs(pairs: &[(usize, usize)]) -> PrefSet {
        let vocab = Vocab::with_size(3).unwrap();
        let items = pairs
            .iter()
            .map(|&(c, r)| PrefTriple {
                prompt: Prompt::empty(),
                chosen: Continuation::new(vec![c]).unwrap(),
                rejected: Continuation::new(vec![r]).unwrap(),
            })
            .collect();
        PrefSet::new(vocab, items).unwrap()
    }

    #[test]
    fn uniform_policy_has_zero_gaps() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 2), (0, 1)]);
        let report = log_prob_gap(&instance.reference, &prefs).unwrap();
        assert!(report.gaps.iter().all(|&g| g == 0.0));
        assert_eq!(report.mean, 0.0);
        assert_eq!(report.count, 3);
    }

    #[test]
    fn induced_policy_gap_equals_reward_difference() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.7, 0.2, -0.4]).unwrap(),
            None,
        )
        .unwrap();
        let policy =
            induced_policy(&reward, &instance.reference, Beta::new(1.0).unwrap()).unwrap();
        let prefs = three_action_prefs(&[(0, 1), (0, 1), (2, 1)]);
        let report = log_prob_gap(&policy, &prefs).unwrap();
        assert!((report.gaps[0] - 0.5).abs() < 1e-12);
        assert!((report.gaps[2] - (-0.6)).abs() < 1e-12);
    }

    #[test]
    fn gaps_negate_exactly_under_swap() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.3, -1.1, 0.9]).unwrap(),
            None,
        )
        .unwrap();
        let policy =
            induced_policy(&reward, &instance.reference, Beta::new(0.5).unwrap()).unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 0), (0, 2)]);
        let swapped = three_action_prefs(&[(0, 2), (0, 1), (2, 0)]);
        let a = log_prob_gap(&policy, &prefs).unwrap();
        let b = log_prob_gap(&policy, &swapped).unwrap();
        for (x, y) in a.gaps.iter().zip(&b.gaps) {
            assert_eq!(*x, -y);
        }
    }

    #[test]
    fn identical_policies_always_tie() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = instance.zero_reward().unwrap();
        let prompts = vec![Prompt::empty()];
        let report = win_rate(
            &instance.reference,
            &instance.reference,
            &reward,
            &prompts,
            &Rng::seed(5),
            200,
        )
        .unwrap();
        assert_eq!(report.ties, 200);
        assert_eq!(report.rate, 0.0);
    }

    #[test]
    fn constant_scorer_always_ties() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let sharp = TabularPolicy::from_params(
            instance.index.clone(),
            ParamVector::new(vec![4.0, 0.0, -4.0]).unwrap(),
        )
        .unwrap();
        let reward = instance.zero_reward().unwrap();
        let report = win_rate(
            &sharp,
            &instance.reference,
            &reward,
            &[Prompt::empty()],
            &Rng::seed(5),
            100,
        )
        .unwrap();
        assert_eq!(report.ties, 100);
    }

    #[test]
    fn swapping_sides_swaps_wins_and_losses() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.9, 0.1, 0.5]).unwrap(),
            None,
        )
        .unwrap();
        let sharp = TabularPolicy::from_params(
            instance.index.clone(),
            ParamVector::new(vec![2.0, -1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let forward = win_rate(
            &sharp,
            &instance.reference,
            &reward,
            &[Prompt::empty()],
            &Rng::seed(11),
            500,
        )
        .unwrap();
        let backward = win_rate(
            &instance.reference,
            &sharp,
            &reward,
            &[Prompt::empty()],
            &Rng::seed(11),
            500,
        )
        .unwrap();
        assert_eq!(forward.ties, backward.ties);
        let forward_losses = forward.total - forward.wins - forward.ties;
        assert_eq!(forward_losses, backward.wins);
        assert_eq!(backward.total - backward.wins - backward.ties, forward.wins);
    }

    #[test]
    fn win_rate_matches_exact_coupled_enumeration() {
        // Both sides consume the same uniform variate through the same
        // inverse-CDF sampler, so the joint draw is the comonotone
        // coupling; its win probability is exactly enumerable from the two
        // CDFs' breakpoints.
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let values = [0.9, 0.1, 0.5];
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(values.to_vec()).unwrap(),
            None,
        )
        .unwrap();
        let policy_a =
            induced_policy(&reward, &instance.reference, Beta::new(0.1).unwrap()).unwrap();
        let policy_b = instance.reference.clone();
        let pa = policy_a.row_probs(0);
        let pb = policy_b.row_probs(0);
        let mut exact_win = 0.0;
        let mut lo = 0.0;
        loop {
            // Indices selected at uniform variate u = lo.
            let pick = |p: &[f64], u: f64| {
                let mut acc = 0.0;
                for (i, &m) in p.iter().enumerate() {
                    acc += m;
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            };
            let ia = pick(&pa, lo);
            let ib = pick(&pb, lo);
            let cdf_a: f64 = pa[..=ia].iter().sum();
            let cdf_b: f64 = pb[..=ib].iter().sum();
            let hi = cdf_a.min(cdf_b).min(1.0);
            if values[ia] > values[ib] {
                exact_win += hi - lo;
            }
            if hi >= 1.0 {
                break;
            }
            lo = hi;
        }
        let report = win_rate(
            &policy_a,
            &policy_b,
            &reward,
            &[Prompt::empty()],
            &Rng::seed(40),
            10_000,
        )
        .unwrap();
        assert!(
            (report.rate - exact_win).abs() < 0.02,
            "sampled {} vs exact {exact_win}",
            report.rate
        );
    }

    #[test]
    fn zero_reward_diagnostic_is_exactly_uninformative() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = instance.zero_reward().unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 2)]);
        let report = bt_diagnostic(&PairScorer::Explicit(&reward), &prefs).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert!((report.mean_log_likelihood - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unit_margin_diagnostic_values() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.0, 0.0, 1.0]).unwrap(),
            None,
        )
        .unwrap();
        let prefs = three_action_prefs(&[(2, 0), (2, 1)]);
        let report = bt_diagnostic(&PairScorer::Explicit(&reward), &prefs).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!((report.mean_log_likelihood - (-0.3132616875182228)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_per_prompt_shifts() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let base = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.4, -0.2, 0.9]).unwrap(),
            None,
        )
        .unwrap();
        let shifted = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![100.4, 99.8, 100.9]).unwrap(),
            None,
        )
        .unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 0), (0, 2), (2, 1)]);
        let a = bt_diagnostic(&PairScorer::Explicit(&base), &prefs).unwrap();
        let b = bt_diagnostic(&PairScorer::Explicit(&shifted), &prefs).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn implicit_scorer_agrees_with_its_explicit_reward() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.4, -0.2, 0.9]).unwrap(),
            None,
        )
        .unwrap();
        let beta = Beta::new(0.7).unwrap();
        let policy = induced_policy(&reward, &instance.reference, beta).unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 0), (0, 2)]);
        let explicit = bt_diagnostic(&PairScorer::Explicit(&reward), &prefs).unwrap();
        let implicit = bt_diagnostic(
            &PairScorer::Implicit {
                policy: &policy,
                reference: &instance.reference,
                beta,
            },
            &prefs,
        )
        .unwrap();
        assert_eq!(explicit.accuracy, implicit.accuracy);
        assert!((explicit.mean_log_likelihood - implicit.mean_log_likelihood).abs() < 1e-9);
    }

    fn fake_trace(norms: &[f64], k: usize) -> TrainTrace {
        TrainTrace {
            steps: norms
                .iter()
                .enumerate()
                .map(|(i, &g)| TrainStep {
                    step: i,
                    t: i / k,
                    k: i % k,
                    eta: 0.1,
                    grad_norm: g,
                    objective: 0.0,
                    elapsed_ms: 0.0,
                })
                .collect(),
            final_params: ParamVector::zeros(1),
        }
    }

    #[test]
    fn convergence_stats_locates_the_minimum() {
        let trace = fake_trace(&[3.0, 2.0, 1.0, 0.5], 2);
        let stats = convergence_stats(&trace).unwrap();
        assert_eq!(stats.min_grad_norm, 0.5);
        assert_eq!(stats.argmin_step, 3);
        assert_eq!(stats.per_outer_means, vec![2.5, 0.75]);
    }

    #[test]
    fn convergence_stats_breaks_ties_at_first_occurrence() {
        let trace = fake_trace(&[1.0, 1.0, 1.0], 3);
        let stats = convergence_stats(&trace).unwrap();
        assert_eq!(stats.min_grad_norm, 1.0);
        assert_eq!(stats.argmin_step, 0);
        let empty = TrainTrace {
            steps: Vec::new(),
            final_params: ParamVector::zeros(1),
        };
        assert!(convergence_stats(&empty).is_err());
    }

    #[test]
    fn gap_report_csv_has_one_row_per_triple() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let prefs = three_action_prefs(&[(2, 0), (1, 0)]);
        let report = log_prob_gap(&instance.reference, &prefs).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("index,gap\n"));
    }

    #[test]
    fn win_rate_rejects_empty_inputs() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = instance.zero_reward().unwrap();
        assert!(win_rate(
            &instance.reference,
            &instance.reference,
            &reward,
            &[],
            &Rng::seed(0),
            5,
        )
        .is_err());
        assert!(win_rate(
            &instance.reference,
            &instance.reference,
            &reward,
            &[Prompt::empty()],
            &Rng::seed(0),
            0,
        )
        .is_err());
    }
}
