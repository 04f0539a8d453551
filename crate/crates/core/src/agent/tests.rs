use rand::Rng as _;

use super::*;
use crate::datagen::collect;
use crate::gridworld::{Level, Subtask, OBS_DIM};
use crate::numcore::{finite_diff_check, loss_and_grads, Graph, MlpSpec, ParamSet, Tensor};
use crate::repr::{pretrain, GridTransitions, ReprConfig, ReprModel, TransitionSet, PAIR_DIM};
use crate::rng::seeded;

fn small_policy(cond: usize, seed: u64) -> PolicyNet {
    PolicyNet::new(6, cond, &[8, 8], seed).unwrap()
}

#[test]
fn uniform_logits_sample_uniformly() {
    let mut p = small_policy(2, 0);
    MlpSpec::new(8, &[8, 8], 7, crate::numcore::Activation::Tanh, crate::numcore::Activation::Identity)
        .init_zero("actor/", &mut p.params)
        .unwrap();
    let mut rng = seeded(1);
    let mut counts = [0usize; 7];
    let n = 100_000;
    let x = [0.3, 0.1, -0.2, 0.5, 0.0, 1.0, 0.2, -0.4];
    for _ in 0..n {
        counts[p.act(&x, ActMode::Sample, &mut rng).unwrap().action.id()] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 7.0).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn greedy_is_deterministic_and_conditioning_is_live() {
    let p = small_policy(5, 3);
    let obs = [0.2, -0.1, 0.7, 0.0, 1.0, 0.3];
    let with = |z: [f64; 5]| [obs.as_slice(), z.as_slice()].concat();
    let a = p.act(&with([0.1; 5]), ActMode::Greedy, &mut seeded(0)).unwrap();
    let b = p.act(&with([0.1; 5]), ActMode::Greedy, &mut seeded(99)).unwrap();
    assert_eq!(a, b);
    assert_ne!(p.logits(&with([0.1; 5])).unwrap(), p.logits(&with([-2.0, 1.0, 0.5, 3.0, -1.0])).unwrap());
    let out = p.act(&with([0.4; 5]), ActMode::Sample, &mut seeded(4)).unwrap();
    assert!(out.log_prob.is_finite() && out.log_prob <= 0.0);
}

#[test]
fn gae_analytic_cases() {
    let gamma = 0.9;
    let (adv, _) = gae(&[0.0, 0.0, 0.0, 1.0], &[0.0; 4], &[false, false, false, true], 0.0, gamma, 1.0).unwrap();
    for (t, a) in adv.iter().enumerate() {
        assert!((a - gamma.powi(3 - t as i32)).abs() < 1e-12);
    }
    // Constant reward r with V = r / (1 − γ) on a never-ending stream.
    let v = 1.0 / (1.0 - gamma);
    let (adv, ret) = gae(&[1.0; 5], &[v; 5], &[false; 5], v, gamma, 0.95).unwrap();
    assert!(adv.iter().all(|a| a.abs() < 1e-12));
    assert!(ret.iter().all(|r| (r - v).abs() < 1e-12));
    assert!(gae(&[], &[], &[], 0.0, gamma, 0.95).is_err());
}

fn naive_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta = |k: usize| {
        let next = if k + 1 < n { v[k + 1] } else { last };
        r[k] + if d[k] { 0.0 } else { gamma * next } - v[k]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut w = 1.0;
            for k in t..n {
                total += w * delta(k);
                if d[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_naive_sum() {
    let mut rng = seeded(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let last = rng.gen_range(-1.0..1.0);
        let (adv, _) = gae(&r, &v, &d, last, 0.99, 0.95).unwrap();
        for (a, b) in adv.iter().zip(naive_gae(&r, &v, &d, last, 0.99, 0.95)) {
            assert!((a - b).abs() < 1e-10);
        }
        let z = normalize(&adv);
        if n > 1 {
            let m = z.iter().sum::<f64>() / n as f64;
            let s = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-9 || s < 1e-9);
        }
    }
}

#[test]
fn unit_ratio_surrogate_equals_advantage() {
    let mut g = Graph::new();
    let lp = g.constant(Tensor::vector(vec![-0.3, -1.2, -2.0]));
    let adv = [0.5, -1.0, 2.0];
    let s = clipped_surrogate_var(&mut g, lp, &[-0.3, -1.2, -2.0], &adv, 0.2).unwrap();
    assert_eq!(g.value(s).data(), &adv);
}

#[test]
fn clipped_branch_has_zero_gradient() {
    let mut p = ParamSet::new();
    p.insert("lp", Tensor::vector(vec![0.0, 0.0]));
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let lp = b.var("lp").unwrap();
    // i = e^{0.5} > 1.2 with A > 0 for the first sample; inside the band for the second.
    let s = clipped_surrogate_var(&mut g, lp, &[-0.5, -0.1], &[1.0, 1.0], 0.2).unwrap();
    let total = g.sum(s);
    let grads = loss_and_grads(&g, total, &b).unwrap();
    let d = grads["lp"].data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 0.1f64.exp()).abs() < 1e-12);
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    let cfg = PpoConfig::default();
    for seed in 0..20 {
        let policy = small_policy(2, seed);
        let mut rng = seeded(50 + seed);
        let n = 6;
        let inputs: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
        let logits = policy.logits(&inputs).unwrap();
        let old_log_probs = (0..n)
            .map(|i| crate::numcore::log_softmax(&logits[i * 7..(i + 1) * 7]).unwrap()[actions[i]] + rng.gen_range(-0.6..0.6))
            .collect();
        let batch = PpoBatch {
            inputs,
            actions,
            old_log_probs,
            advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            returns: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let worst = finite_diff_check(&policy.params, 1e-5, |ps| {
            let pol = PolicyNet { params: ps.clone(), ..policy.clone() };
            let mut g = Graph::new();
            let b = pol.params.bind(&mut g);
            let l = ppo_loss_var(&pol, &mut g, &b, &batch, &cfg)?;
            Ok((g.value(l.total).item(), loss_and_grads(&g, l.total, &b)?))
        })
        .unwrap();
        assert!(worst < 1e-4, "seed {seed}: {worst}");
    }
}

#[test]
fn ppo_update_raises_advantaged_action() {
    let mut policy = small_policy(0, 8);
    let x: Vec<f64> = vec![0.5, -0.5, 0.2, 0.1, 0.0, 0.9];
    let mut buf = RolloutBuffer::new(6);
    let mut rng = seeded(8);
    for i in 0..64 {
        let out = policy.act(&x, ActMode::Sample, &mut rng).unwrap();
        let r = if out.action.id() == 2 { 1.0 } else { 0.0 };
        buf.push(&x, out.action.id(), out.log_prob, out.value, r, true, None);
        let _ = i;
    }
    let before = crate::numcore::softmax(&policy.logits(&x).unwrap()).unwrap()[2];
    let cfg = PpoConfig { lr: 1e-2, minibatch: 16, ..PpoConfig::default() };
    let stats = ppo_update(&mut policy, &buf, &cfg, &mut rng).unwrap();
    let after = crate::numcore::softmax(&policy.logits(&x).unwrap()).unwrap()[2];
    assert!(after > before, "{before} -> {after}");
    assert!(stats.entropy > 0.0);
}

fn tiny_repr(seed: u64) -> ReprModel {
    let cfg = ReprConfig { encoder_hidden: vec![8], predictor_hidden: vec![8], seed, ..ReprConfig::default() };
    ReprModel::new(cfg, PAIR_DIM, OBS_DIM, Subtask::COUNT).unwrap()
}

fn tiny_config(seed: u64) -> AgentConfig {
    AgentConfig {
        seed,
        total_steps: 600,
        eval_interval: 300,
        eval_episodes: 3,
        policy_hidden: vec![16],
        ppo: PpoConfig { steps_per_update: 256, minibatch: 64, epochs: 2, ..PpoConfig::default() },
        predictor_window: 500,
        predictor_batch: 8,
        predictor_steps: 2,
        ..AgentConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_schema_shared() {
    let cfg = tiny_config(3);
    let a = train(&cfg, tiny_repr(1), None, |_| {}).unwrap();
    let b = train(&cfg, tiny_repr(1), None, |_| {}).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.agent, b.agent);
    assert_eq!(a.metrics.len(), 3);
    assert!(a.metrics[1].policy_loss.is_some() && a.metrics[1].segments_per_episode.is_some());

    let f1 = train_flat_baseline(&cfg, |_| {}).unwrap();
    let f2 = train_flat_baseline(&cfg, |_| {}).unwrap();
    assert_eq!(metrics_csv(&f1.metrics), metrics_csv(&f2.metrics));
    let header = |s: &str| s.lines().next().unwrap().to_string();
    assert_eq!(header(&metrics_csv(&a.metrics)), header(&metrics_csv(&f1.metrics)));

    let zero = train(&AgentConfig { total_steps: 0, ..cfg.clone() }, tiny_repr(1), None, |_| {}).unwrap();
    assert_eq!(zero.metrics.len(), 1);
    assert_eq!(zero.metrics[0].step, 0);
}

#[test]
fn evaluation_is_repeatable_and_frozen() {
    let agent = TreeAgent::new(tiny_config(4), tiny_repr(2)).unwrap();
    let before = agent.clone();
    let r1 = evaluate(&agent, Level::GoToSeqLite, 5, 11).unwrap();
    let r2 = evaluate(&agent, Level::GoToSeqLite, 5, 11).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(agent, before);
    assert!(r1.segment_counts.iter().sum::<u64>() as f64 >= 5.0);
    let dir = tempfile::tempdir().unwrap();
    agent.save(&dir.path().join("agent")).unwrap();
    let loaded = TreeAgent::load(&dir.path().join("agent")).unwrap();
    assert_eq!(evaluate(&loaded, Level::GoToSeqLite, 5, 11).unwrap(), r1);
}

#[test]
fn random_weight_policy_scores_low() {
    let agent = TreeAgent::new(tiny_config(5), tiny_repr(5)).unwrap();
    let r = evaluate(&agent, Level::GoToSeqLite, 100, 5).unwrap();
    assert!(r.mean <= 0.05, "{}", r.mean);
    let flat = PolicyNet::for_grid(0, &[64, 64], 5).unwrap();
    assert!(evaluate_flat(&flat, Level::GoToSeqLite, 1000, 5).unwrap().mean <= 0.05);
}

/// Pretrains small encoders on freshly collected data.
pub(crate) fn quick_repr(episodes: usize, iterations: usize, seed: u64) -> ReprModel {
    let data: Vec<_> = Subtask::ALL.iter().map(|&s| collect(s, episodes, [0.4, 0.3, 0.3], seed + s.id() as u64).unwrap()).collect();
    let sets: Vec<GridTransitions> = data.iter().map(GridTransitions::new).collect();
    let refs: Vec<&dyn TransitionSet> = sets.iter().map(|s| s as &dyn TransitionSet).collect();
    let cfg = ReprConfig { encoder_hidden: vec![64, 32], predictor_hidden: vec![64], iterations, seed, ..ReprConfig::default() };
    pretrain(&refs, &cfg).unwrap().model
}

#[test]
#[ignore]
fn smoke_experiment() {
    fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
        std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
    }
    let steps: usize = var("SMOKE_STEPS", 200_000);
    let d = PpoConfig::default();
    let ppo = PpoConfig {
        lr: var("SMOKE_LR", d.lr),
        steps_per_update: var("SMOKE_SPU", d.steps_per_update),
        epochs: var("SMOKE_EPOCHS", d.epochs),
        minibatch: var("SMOKE_MB", d.minibatch),
        entropy_coef: var("SMOKE_ENT", d.entropy_coef),
        ..d
    };
    let cfg = AgentConfig { seed: var("SMOKE_SEED", 0), total_steps: steps, eval_interval: steps / 5, ppo, ..AgentConfig::default() };
    let mode: String = var("SMOKE_MODE", "both".to_string());
    if mode != "flat" {
        let t0 = std::time::Instant::now();
        let repr = quick_repr(100, 300, 0);
        eprintln!("pretrain {:?}", t0.elapsed());
        let t0 = std::time::Instant::now();
        train(&cfg, repr, None, |r| eprintln!("tree {} {:.3} {:?} {:?}", r.step, r.mean_eval_reward, r.subtask_counts, r.entropy)).unwrap();
        eprintln!("tree {:?}", t0.elapsed());
    }
    if mode != "tree" {
        let t0 = std::time::Instant::now();
        train_flat_baseline(&cfg, |r| eprintln!("flat {} {:.3} {:?}", r.step, r.mean_eval_reward, r.entropy)).unwrap();
        eprintln!("flat {:?}", t0.elapsed());
    }
}
