//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each with its runtime, and exits non-zero if any failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svrdqn::env::{logistic_finite_sum, quadratic_finite_sum, FiniteSumProblem};
use svrdqn::gradcheck::{finite_difference_gradient, gradients_agree, DEFAULT_STEP};
use svrdqn::harness::checkpoint::load_checkpoint;
use svrdqn::harness::runner::{checkpoint_path, trial_csv_path, TrialKey};
use svrdqn::harness::sweep::SweepConfig;
use svrdqn::harness::{run_experiment, run_variance_sweep, ExperimentConfig, RunOptions};
use svrdqn::instrument::{empirical_gradient_variance, lipschitz_suboptimality_bound_check, SvrDqnEstimator};
use svrdqn::mlp::{Activation, Architecture, MlpNetwork};
use svrdqn::optim::{adam_step, svrg_anchor, svrg_direction, svrg_inner_step, AdamHyper, AdamState, SvrgConfig};
use svrdqn::rl::{OptimizerKind, QLearner, TargetRule, Transition};
use svrdqn::{FiniteSumObjective, Gradient, GradientSource, ParamVector, SampleGradients};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pv(v: Vec<f64>) -> ParamVector {
    ParamVector::from_flat(v).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// 1. analytic gradients against central finite differences
fn gradient_correctness() -> Outcome {
    let (rel, abs) = (1e-5, 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let quad = quadratic_finite_sum((0..8).map(|_| random_vec(&mut rng, 4, 3.0)).collect()).unwrap();
    let xs: Vec<Vec<f64>> = (0..12).map(|_| random_vec(&mut rng, 3, 2.0)).collect();
    let ys: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
    let logi = logistic_finite_sum(xs, ys, 0.1).unwrap();

    // smooth activation keeps the finite-difference oracle off ReLU kinks
    let arch = Architecture::new(vec![3, 6, 3], Activation::Tanh).unwrap();
    let online = MlpNetwork::init(arch.clone(), &mut rng);
    let target = MlpNetwork::init(arch.clone(), &mut rng);
    let learner = QLearner::new(online, 0.9, 10).unwrap().with_target(target).unwrap();
    let batch: Vec<Transition> = (0..10)
        .map(|i| Transition {
            state: random_vec(&mut rng, 3, 1.0),
            action: i % 3,
            reward: rng.gen_range(-1.0..1.0),
            next_state: random_vec(&mut rng, 3, 1.0),
            terminal: i % 4 == 0,
        })
        .collect();
    let bellman = learner.bellman_objective(&batch, TargetRule::Double).unwrap();

    let mut checked = 0;
    let mut run = |name: &str, obj: &dyn FiniteSumObjective, dim: usize, scale: f64, rng: &mut ChaCha8Rng| {
        for k in 0..20 {
            let w = pv(random_vec(rng, dim, scale));
            let analytic = obj.full_gradient(&w).map_err(|e| e.to_string())?;
            let numeric =
                finite_difference_gradient(|p| obj.loss(p).unwrap(), &w, DEFAULT_STEP).map_err(|e| e.to_string())?;
            gradients_agree(analytic.as_slice(), numeric.as_slice(), rel, abs).map_err(|e| format!("{name} point {k}: {e}"))?;
            checked += 1;
        }
        Ok::<(), String>(())
    };
    run("quadratic", &quad, 4, 3.0, &mut rng)?;
    run("logistic", &logi, 3, 2.0, &mut rng)?;
    run("bellman", &bellman, arch.param_count(), 0.8, &mut rng)?;
    Ok(format!("{checked} points across quadratic, logistic and Bellman losses"))
}

// 2. averaging the inner direction over every minibatch gives the anchor-batch gradient
fn svrg_unbiased_by_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let quad = quadratic_finite_sum((0..9).map(|_| random_vec(&mut rng, 3, 2.0)).collect()).unwrap();
    let batch = vec![0, 2, 3, 5, 7, 8];
    let anchor = pv(random_vec(&mut rng, 3, 2.0));
    let snap = svrg_anchor(&quad, &anchor, batch.clone()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let w = pv(random_vec(&mut rng, 3, 2.0));
        let mut sum = vec![0.0; 3];
        let mut count = 0.0;
        // all ordered pairs: uniform draws with replacement
        for &i in &batch {
            for &j in &batch {
                let d = svrg_direction(&quad, &w, &snap, &[i, j]).map_err(|e| e.to_string())?;
                sum.iter_mut().zip(d.as_slice()).for_each(|(s, x)| *s += x);
                count += 1.0;
            }
        }
        let full = quad.mean_gradient(&w, &batch).map_err(|e| e.to_string())?;
        for (s, f) in sum.iter().zip(full.as_slice()) {
            worst = worst.max((s / count - f).abs());
        }
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("36 minibatches, max deviation {worst:.1e}"))
}

// 3. at w = w~ every minibatch gives the same first step
fn first_inner_step_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let quad = quadratic_finite_sum((0..20).map(|_| random_vec(&mut rng, 4, 2.0)).collect()).unwrap();
    let anchor = pv(random_vec(&mut rng, 4, 2.0));
    let snap = svrg_anchor(&quad, &anchor, (0..20).collect()).map_err(|e| e.to_string())?;
    let first = svrg_inner_step(&anchor, &snap, &[0, 1, 2], 0.1, &quad).map_err(|e| e.to_string())?;
    for k in 0..100 {
        let mb: Vec<usize> = (0..4).map(|_| rng.gen_range(0..20)).collect();
        let next = svrg_inner_step(&anchor, &snap, &mb, 0.1, &quad).map_err(|e| e.to_string())?;
        check(next.as_slice() == first.as_slice(), || format!("minibatch {k} {mb:?} differs"))?;
    }
    Ok("100 minibatches, bit-identical".into())
}

// 4. Adam against a scalar hand trace, and scale invariance at epsilon = 0
fn adam_reference_trace() -> Outcome {
    let hyper = AdamHyper {
        alpha: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    // scalar oracle written out step by step
    let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.0f64);
    let mut trace = Vec::new();
    for t in 1..=2 {
        m = 0.9 * m + 0.1 * 1.0;
        v = 0.999 * v + 0.001 * 1.0;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        trace.push(w);
    }
    let mut state = AdamState::new(svrdqn::Layout::flat(1), hyper).map_err(|e| e.to_string())?;
    let mut wv = pv(vec![0.0]);
    let g = Gradient::new(pv(vec![1.0]), GradientSource::Minibatch);
    for (t, want) in trace.iter().enumerate() {
        let (nw, ns) = adam_step(&state, &wv, &g).map_err(|e| e.to_string())?;
        let got = nw.as_slice()[0];
        check((got - want).abs() <= 1e-12, || format!("step {}: {got} vs {want}", t + 1))?;
        wv = nw;
        state = ns;
    }

    let zero_eps = AdamHyper { epsilon: 0.0, ..hyper };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let w0 = pv(random_vec(&mut rng, 1000, 1.0));
    let grads: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 1000, 5.0)).collect();
    let run = |c: f64| -> Result<Vec<f64>, String> {
        let mut s = AdamState::new(svrdqn::Layout::flat(1000), zero_eps).map_err(|e| e.to_string())?;
        let mut w = w0.clone();
        for g in &grads {
            let g = Gradient::new(pv(g.iter().map(|x| c * x).collect()), GradientSource::Minibatch);
            let (nw, ns) = adam_step(&s, &w, &g).map_err(|e| e.to_string())?;
            w = nw;
            s = ns;
        }
        Ok(w.into_vec())
    };
    let base = run(1.0)?;
    // powers of two scale without rounding, so those must match bit for bit;
    // c = 10 rounds differently in the moment updates and is held to 1e-12
    for c in [0.5, 2.0] {
        let scaled = run(c)?;
        let diffs = base.iter().zip(&scaled).filter(|(a, b)| a != b).count();
        check(diffs == 0, || format!("c = {c}: {diffs} of 1000 coordinates differ"))?;
    }
    let scaled = run(10.0)?;
    let dev = base.iter().zip(&scaled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(dev <= 1e-12, || format!("c = 10: max deviation {dev:e}"))?;
    Ok(format!(
        "trace {trace:?}; c = 0.5, 2 bit-identical, c = 10 within {dev:.1e}"
    ))
}

// 5. empirical variances within their bounds along a descent path
fn variance_bound_sweep() -> Outcome {
    let text = fs::read_to_string(repo_root().join("configs/sweep.toml")).map_err(|e| e.to_string())?;
    let cfg = SweepConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
    check(
        cfg.svrg == SvrgConfig::new(64, 8, 8, 0.05).unwrap() && cfg.sweep.trials == 10_000 && cfg.sweep.points == 5,
        || "sweep config drifted from B=64, b=8, m=8, eta=0.05, 1e4 trials, 5 points".into(),
    )?;
    let out = run_variance_sweep(&cfg).map_err(|e| e.to_string())?;
    for r in &out.reports {
        check(r.pass(), || {
            format!(
                "point {} {}: {:e} > {:e} + 3 x {:e}",
                r.iteration,
                r.estimator.name(),
                r.empirical_variance,
                r.bound,
                r.standard_error
            )
        })?;
    }
    Ok(format!("{} reports within bound + 3 SE", out.reports.len()))
}

// 6. the Lipschitz-suboptimality inequality at random points
fn lipschitz_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let quad = quadratic_finite_sum((0..16).map(|_| random_vec(&mut rng, 3, 2.0)).collect()).unwrap();
    let xs: Vec<Vec<f64>> = (0..40).map(|_| random_vec(&mut rng, 3, 2.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| if x[0] + 0.3 * x[2] > 0.2 { 1.0 } else { -1.0 }).collect();
    let logi = logistic_finite_sum(xs, ys, 0.05).unwrap();
    let problems: [(&str, &dyn FiniteSumProblem); 2] = [("quadratic", &quad), ("logistic", &logi)];
    let mut min_margin = f64::INFINITY;
    for (name, p) in problems {
        for k in 0..100 {
            let w = pv(random_vec(&mut rng, 3, 5.0));
            let c = lipschitz_suboptimality_bound_check(p, &w).map_err(|e| e.to_string())?;
            check(c.holds, || format!("{name} point {k}: lhs {} > rhs {}", c.lhs, c.rhs))?;
            min_margin = min_margin.min(c.margin);
        }
    }
    Ok(format!("200 points, zero violations, smallest margin {min_margin:.2e}"))
}

// 7. no estimator variance left at the optimum with a full-batch anchor
fn variance_vanishes_at_optimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let quad = quadratic_finite_sum((0..64).map(|_| random_vec(&mut rng, 5, 2.0)).collect()).unwrap();
    let est = SvrDqnEstimator {
        objective: &quad,
        cfg: SvrgConfig::new(64, 8, 8, 0.05).unwrap(),
    };
    let w_star = quad.optimum().unwrap();
    let s = empirical_gradient_variance(&est, w_star, 1000, &mut rng).map_err(|e| e.to_string())?;
    check(s.trace_variance < 1e-10, || format!("variance {:e}", s.trace_variance))?;
    Ok(format!("variance {:.2e}", s.trace_variance))
}

fn load_experiment(name: &str, out: &Path) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(&repo_root().join("configs").join(name)).map_err(|e| e.to_string())?;
    cfg.run.output_dir = out.to_path_buf();
    Ok(cfg)
}

// 8. the desk-scale comparison on both environments
fn desk_scale_comparison() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut auc_ok = true;
    let mut faster_somewhere = false;
    for name in ["gridworld.toml", "chain.toml"] {
        let cfg = load_experiment(name, &dir.path().join(name))?;
        check(cfg.run.seeds.len() == 6, || format!("{name}: expected 6 seeds"))?;
        let out = run_experiment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        check(!out.any_aborted(), || format!("{name}: a trial aborted"))?;
        let s = &out.summary;
        let adam = s.optimizer(OptimizerKind::Adam).ok_or("no adam summary")?;
        let svr = s.optimizer(OptimizerKind::SvrDqn).ok_or("no svr-dqn summary")?;
        let (a_auc, s_auc) = (adam.median_auc.unwrap_or(f64::NAN), svr.median_auc.unwrap_or(f64::NAN));
        let a_solve = adam.median_frames_to_solved.unwrap_or(f64::INFINITY);
        let s_solve = svr.median_frames_to_solved.unwrap_or(f64::INFINITY);
        auc_ok &= s_auc >= a_auc;
        faster_somewhere |= s_solve.is_finite() && s_solve <= a_solve;
        lines.push(format!(
            "{}: median AUC svr-dqn {s_auc:.4} vs adam {a_auc:.4}; median frames to {:.3} svr-dqn {s_solve} vs adam {a_solve}",
            s.environment, s.solved_threshold
        ));
    }
    let detail = lines.join("; ");
    check(auc_ok, || format!("median AUC below baseline: {detail}"))?;
    check(faster_somewhere, || format!("never reached 95% of optimal first: {detail}"))?;
    Ok(detail)
}

// 9. double-Q and DQN targets agree after a sync; the counterexample splits them
fn double_q_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let arch = Architecture::new(vec![4, 8, 3], Activation::Relu).unwrap();
    let mut learner = QLearner::new(MlpNetwork::init(arch.clone(), &mut rng), 0.97, 5)
        .unwrap()
        .with_target(MlpNetwork::init(arch, &mut rng))
        .unwrap();
    svrdqn::rl::target_sync(&mut learner);
    for k in 0..1000 {
        let tr = Transition {
            state: random_vec(&mut rng, 4, 2.0),
            action: rng.gen_range(0..3),
            reward: rng.gen_range(-1.0..1.0),
            next_state: random_vec(&mut rng, 4, 2.0),
            terminal: rng.gen_bool(0.1),
        };
        let (d, q) = (learner.double_q_target(&tr).unwrap(), learner.dqn_target(&tr).unwrap());
        check(d.to_bits() == q.to_bits(), || format!("transition {k}: {d} vs {q}"))?;
    }

    // one-input nets fed 0 output their biases: online [5, 4], target [1, 9]
    let bias_net = |q: [f64; 2]| {
        let arch = Architecture::new(vec![1, 2], Activation::Relu).unwrap();
        let w = ParamVector::new(arch.layout(), vec![0.0, 0.0, q[0], q[1]]).unwrap();
        MlpNetwork::from_weights(arch, w).unwrap()
    };
    let l = QLearner::new(bias_net([5.0, 4.0]), 1.0, 1).unwrap().with_target(bias_net([1.0, 9.0])).unwrap();
    let tr = Transition {
        state: vec![0.0],
        action: 0,
        reward: 0.0,
        next_state: vec![0.0],
        terminal: false,
    };
    let (d, q) = (l.double_q_target(&tr).unwrap(), l.dqn_target(&tr).unwrap());
    check(d == 1.0 && q == 9.0, || format!("counterexample gave double {d}, dqn {q}"))?;
    Ok("1000 transitions identical after sync; counterexample double 1 vs dqn 9".into())
}

fn small_config(out: &Path) -> Result<ExperimentConfig, String> {
    let mut cfg = load_experiment("gridworld.toml", out)?;
    cfg.run.frames = 3000;
    cfg.run.seeds = vec![0, 1];
    cfg.run.eval_period = 250;
    cfg.run.checkpoint_period = 1500;
    cfg.run.persist_buffer = true;
    cfg.run.workers = 2;
    cfg.variance.trials = 4;
    Ok(cfg)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv" || x == "json") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

// 10. reruns are byte-identical and resumed trials continue the same trace
fn determinism_and_resume() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_experiment(&small_config(&a)?, &RunOptions::default()).map_err(|e| e.to_string())?;
    run_experiment(&small_config(&b)?, &RunOptions::default()).map_err(|e| e.to_string())?;
    let files = files_under(&a);
    check(files == files_under(&b), || "different file sets".into())?;
    for f in &files {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        check(x == y, || format!("{} differs between reruns", f.display()))?;
    }

    // resume one trial from the middle of run `a` into a fresh directory
    let key = TrialKey {
        optimizer: OptimizerKind::SvrDqn,
        seed: 1,
    };
    let mid = checkpoint_path(&a, key, 1500);
    let ckpt = load_checkpoint(&mid).map_err(|e| e.to_string())?;
    check(ckpt.frame == 1500 && ckpt.buffer.is_some(), || "unexpected checkpoint contents".into())?;
    run_experiment(&small_config(&c)?, &RunOptions { workers: Some(1), resume: Some(mid) }).map_err(|e| e.to_string())?;
    let (x, y) = (fs::read(trial_csv_path(&a, key)).unwrap(), fs::read(trial_csv_path(&c, key)).unwrap());
    check(x == y, || "resumed trial CSV differs from the unbroken run".into())?;
    let rows = String::from_utf8(x).unwrap().lines().count() - 1;
    Ok(format!("{} files byte-identical across reruns; resumed trial matches {rows} rows", files.len()))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("gradient correctness", Duration::from_secs(10), gradient_correctness),
        ("svrg unbiasedness by enumeration", Duration::from_secs(1), svrg_unbiased_by_enumeration),
        ("first inner step determinism", Duration::from_secs(1), first_inner_step_determinism),
        ("adam reference trace", Duration::from_secs(1), adam_reference_trace),
        ("variance bound sweep", Duration::from_secs(120), variance_bound_sweep),
        ("lipschitz-suboptimality inequality", Duration::from_secs(10), lipschitz_inequality),
        ("variance vanishes at optimum", Duration::from_secs(5), variance_vanishes_at_optimum),
        ("desk-scale comparison", Duration::from_secs(15 * 60), desk_scale_comparison),
        ("double-q consistency", Duration::from_secs(1), double_q_consistency),
        ("determinism and resume", Duration::from_secs(120), determinism_and_resume),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?} ({detail})")),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name} [{elapsed:.2?}]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} [{elapsed:.2?}]: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
