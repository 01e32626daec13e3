//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidefuse::affinity::{quasi_label, SideInfoSource};
use sidefuse::data::{generate_synthetic, DatasetBundle, ExperimentConfig, SynthSpec};
use sidefuse::kernels::{hsic, linear_gram};
use sidefuse::regression::{attention_predict, glorot, softmax_predict, EmbeddingNet, SoftmaxTable, PHI, PHI_PRIME};
use sidefuse::trainer::{
    evaluate, evaluate_generalized, gradient_suite, run_trial, trial_seeds, Architecture, EvalReport, Head,
    TrainConfig, GRADCHECK_TOL,
};
use sidefuse::tree_cov::random_tree;
use sidefuse::{Matrix, ParamStore};

type Verdict = (bool, String);

struct Bench {
    bundle: DatasetBundle,
    sources: Vec<SideInfoSource>,
    cache: RefCell<HashMap<(Head, u64, usize, bool), EvalReport>>,
}

impl Bench {
    fn standard() -> Self {
        let data = generate_synthetic(&SynthSpec::default()).expect("standard benchmark");
        Bench {
            bundle: data.bundle,
            sources: data.sources,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn report(&self, head: Head, alpha: f64, shots: usize, generalized: bool) -> EvalReport {
        let key = (head, alpha.to_bits(), shots, generalized);
        if let Some(r) = self.cache.borrow().get(&key) {
            return r.clone();
        }
        let cfg = TrainConfig {
            head,
            alpha,
            shots,
            ..TrainConfig::default()
        };
        let r = if generalized {
            evaluate_generalized(&self.bundle, &self.sources, &cfg)
        } else {
            evaluate(&self.bundle, &self.sources, &cfg)
        }
        .expect("evaluation");
        self.cache.borrow_mut().insert(key, r.clone());
        r
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn hsic_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10;
    let mut worst = 0.0f64;
    let start = Instant::now();
    for _ in 0..100 {
        let mut gram = || {
            let r = rng.random_range(1..=n);
            let x = Matrix::from_fn(n, r, |_, _| rng.random_range(-2.0..2.0));
            linear_gram(&x)
        };
        let (kg, kr) = (gram(), gram());
        let got = hsic(&kg, &kr).unwrap();

        let h = |i: usize, j: usize| f64::from(u8::from(i == j)) - 1.0 / n as f64;
        let prod = |a: &dyn Fn(usize, usize) -> f64, b: &dyn Fn(usize, usize) -> f64| {
            let mut out = vec![vec![0.0; n]; n];
            for (i, row) in out.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (0..n).map(|k| a(i, k) * b(k, j)).sum();
                }
            }
            out
        };
        let hk = prod(&h, &|i, j| kg[(i, j)]);
        let hkh = prod(&|i, j| hk[i][j], &h);
        let full = prod(&|i, j| hkh[i][j], &|i, j| kr[(i, j)]);
        let trace: f64 = (0..n).map(|i| full[i][i]).sum();
        let expected = trace / ((n - 1) * (n - 1)) as f64;
        worst = worst.max((got - expected).abs());
    }
    let t = start.elapsed();
    (
        worst <= 1e-10 && within(t, Duration::from_secs(1)),
        format!("max |diff| {worst:.2e} over 100 pairs in {t:.2?}"),
    )
}

fn tree_dual_construction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut largest = 0;
    let start = Instant::now();
    for _ in 0..200 {
        let leaves = rng.random_range(1..=64);
        let tree = random_tree(&mut rng, leaves, 5.0);
        largest = largest.max(tree.num_classes());
        let nca = tree.covariance().0;
        let vdv = tree.covariance_vdv().0;
        worst = worst.max(nca.max_abs_diff(&vdv).unwrap());
    }
    let t = start.elapsed();
    (
        worst <= 1e-12 && within(t, Duration::from_secs(5)),
        format!("max |diff| {worst:.2e} over 200 trees (up to {largest} leaves) in {t:.2?}"),
    )
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let suite = gradient_suite(25, 3).unwrap();
    let t = start.elapsed();
    let worst = suite.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = suite
        .iter()
        .filter(|e| !e.passes(GRADCHECK_TOL))
        .map(|e| e.objective.as_str())
        .collect();
    let checked: usize = suite.iter().map(|e| e.checked).sum();
    (
        failed.is_empty() && within(t, Duration::from_secs(60)),
        format!(
            "{} objectives x 25 points, {checked} entries, max rel err {worst:.2e}, failing {failed:?}, {t:.2?}",
            suite.len()
        ),
    )
}

fn baseline_reduction(bench: &Bench) -> Verdict {
    let mut mismatches = Vec::new();
    let seeds = trial_seeds(0, 3);
    for head in [Head::Attention, Head::Softmax] {
        let fused_cfg = TrainConfig {
            head,
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let base_cfg = TrainConfig {
            sources: Some(Vec::new()),
            ..fused_cfg.clone()
        };
        let fused = Architecture::new(&bench.bundle, &bench.sources, &fused_cfg).unwrap();
        let base = Architecture::new(&bench.bundle, &bench.sources, &base_cfg).unwrap();
        for &seed in &seeds {
            let (rf, mf, _) = run_trial(&bench.bundle, &fused, &fused_cfg, seed, &[]).unwrap();
            let (rb, mb, _) = run_trial(&bench.bundle, &base, &base_cfg, seed, &[]).unwrap();
            let shared = |s: &ParamStore| -> Vec<(String, Vec<u64>)> {
                s.iter()
                    .filter(|(n, _)| !n.starts_with("map."))
                    .map(|(n, m)| (n.to_string(), m.as_slice().iter().map(|v| v.to_bits()).collect()))
                    .collect()
            };
            if shared(&mf.store) != shared(&mb.store) || rf.accuracy.to_bits() != rb.accuracy.to_bits() {
                mismatches.push(format!("{head:?}/{seed}"));
            }
        }
    }
    (
        mismatches.is_empty(),
        format!("{} trials per head, mismatches {mismatches:?}", seeds.len()),
    )
}

fn paired_wins(fused: &EvalReport, base: &EvalReport) -> usize {
    assert_eq!(fused.seeds, base.seeds);
    fused
        .accuracies
        .iter()
        .zip(&base.accuracies)
        .filter(|(f, b)| f > b)
        .count()
}

fn fusion_gain(bench: &Bench) -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for head in [Head::Attention, Head::Softmax] {
        let base = bench.report(head, 0.0, 1, false);
        let fused = bench.report(head, 0.1, 1, false);
        let wins = paired_wins(&fused, &base);
        let n = fused.accuracies.len();
        ok &= fused.accuracy_mean > base.accuracy_mean && wins * 10 >= n * 6;
        parts.push(format!(
            "{head:?}: fused {:.4} vs base {:.4}, wins {wins}/{n}",
            fused.accuracy_mean, base.accuracy_mean
        ));
    }
    let t = start.elapsed();
    (
        ok && within(t, Duration::from_secs(600)),
        format!("{}; {t:.1?}", parts.join("; ")),
    )
}

fn alpha_shape(bench: &Bench) -> Verdict {
    let start = Instant::now();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let acc: Vec<(f64, f64)> = grid
        .iter()
        .map(|&a| (a, bench.report(Head::Attention, a, 1, false).accuracy_mean))
        .collect();
    let t = start.elapsed();
    let zero = acc[0].1;
    let (best_a, best) = acc
        .iter()
        .filter(|(a, _)| *a <= 0.3 + 1e-9)
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m });
    let one = acc.last().unwrap().1;
    let curve: Vec<String> = acc.iter().map(|(a, v)| format!("{a:.2}:{v:.4}")).collect();
    (
        best > zero && one < best && within(t, Duration::from_secs(1800)),
        format!(
            "alpha 0 {zero:.4}, best small alpha {best_a:.2} -> {best:.4}, alpha 1 {one:.4}; {t:.1?}; [{}]",
            curve.join(" ")
        ),
    )
}

fn shot_gap(bench: &Bench) -> Verdict {
    let gaps: Vec<(usize, f64)> = [1, 3, 5, 10]
        .iter()
        .map(|&k| {
            let f = bench.report(Head::Attention, 0.1, k, false);
            let b = bench.report(Head::Attention, 0.0, k, false);
            assert_eq!(f.seeds, b.seeds);
            (k, f.accuracy_mean - b.accuracy_mean)
        })
        .collect();
    let gap = |k| gaps.iter().find(|g| g.0 == k).unwrap().1;
    let text: Vec<String> = gaps.iter().map(|(k, g)| format!("k={k}: {g:+.4}")).collect();
    (gap(10) < gap(1), text.join(", "))
}

fn generalized_degrades(bench: &Bench) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for head in [Head::Attention, Head::Softmax] {
        let restricted = bench.report(head, 0.1, 1, false);
        let general = bench.report(head, 0.1, 1, true);
        assert_eq!(restricted.seeds, general.seeds);
        ok &= general.accuracy_mean < restricted.accuracy_mean;
        parts.push(format!(
            "{head:?}: generalized {:.4} vs restricted {:.4}",
            general.accuracy_mean, restricted.accuracy_mean
        ));
    }
    (ok, parts.join("; "))
}

fn distribution_violations(rows: impl IntoIterator<Item = Vec<f64>>) -> usize {
    rows.into_iter()
        .filter(|r| {
            let sum: f64 = r.iter().sum();
            r.iter().any(|&v| !v.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&v)) || (sum - 1.0).abs() > 1e-12
        })
        .count()
}

fn probability_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = 5;
    let net = EmbeddingNet::new("embed", dim, 6, 4);
    let random_store = |rng: &mut ChaCha8Rng, lots: usize, poor: usize| {
        let mut store = ParamStore::new();
        net.init(&mut store, rng);
        let scale = rng.random_range(0.1..20.0);
        for name in net.param_names() {
            let m = store.get_mut(&name).unwrap();
            *m = m.scale(scale);
        }
        let phi_scale = rng.random_range(0.1..200.0);
        store.insert(PHI, glorot(rng, 4, lots).scale(phi_scale));
        store.insert(PHI_PRIME, glorot(rng, 4, poor).scale(phi_scale));
        store
    };
    let random_x = |rng: &mut ChaCha8Rng, n: usize| {
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        Matrix::from_fn(n, dim, |_, _| rng.random_range(-s..s))
    };
    let mut counts = [0usize; 3];

    for _ in 0..10_000 {
        let classes = rng.random_range(1..=8);
        let store = random_store(&mut rng, 2, 2);
        let q = rng.random_range(1..=4);
        let x = random_x(&mut rng, q);
        let m = rng.random_range(1..=10);
        let s = random_x(&mut rng, m);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let p = attention_predict(&x, &s, &labels, classes, &net, &store).unwrap();
        counts[0] += distribution_violations(p.to_rows());
    }
    for _ in 0..10_000 {
        let (lots, poor) = (rng.random_range(1..=12), rng.random_range(1..=6));
        let store = random_store(&mut rng, lots, poor);
        let q = rng.random_range(1..=4);
        let x = random_x(&mut rng, q);
        let (table, width) = if rng.random_bool(0.5) {
            (SoftmaxTable::Lots, lots)
        } else {
            (SoftmaxTable::OneShot, poor)
        };
        let mut subset: Vec<usize> = (0..width).filter(|_| rng.random_bool(0.6)).collect();
        if subset.is_empty() {
            subset.push(rng.random_range(0..width));
        }
        let p = softmax_predict(&x, &net, &store, table, &subset).unwrap();
        counts[1] += distribution_violations(p.to_rows());
    }
    for _ in 0..10_000 {
        let c = rng.random_range(1..=10);
        let scale = 10f64.powf(rng.random_range(-2.0..2.5));
        let k = Matrix::from_fn(c, c, |_, _| rng.random_range(-scale..scale));
        let mut targets: Vec<usize> = (0..c).filter(|_| rng.random_bool(0.5)).collect();
        if targets.is_empty() {
            targets.push(rng.random_range(0..c));
        }
        let support: Vec<usize> = (0..rng.random_range(1..=12))
            .map(|_| targets[rng.random_range(0..targets.len())])
            .collect();
        let y = rng.random_range(0..c);
        counts[2] += distribution_violations([quasi_label(&k, y, &support, &targets).unwrap()]);
    }
    (
        counts == [0, 0, 0],
        format!(
            "violations: attention {}, softmax {}, quasi-label {} (10000 calls each)",
            counts[0], counts[1], counts[2]
        ),
    )
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("experiment.json");
    fs::write(&cfg, ExperimentConfig::default().to_json()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sidefuse"))
            .args(["eval", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        fs::read(out.join("report.json")).unwrap()
    };
    let a = run("first");
    let b = run("second");
    (a == b, format!("report.json {} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let bench = Bench::standard();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("hsic matches explicit trace", Box::new(hsic_oracle)),
        ("tree covariance dual construction", Box::new(tree_dual_construction)),
        ("gradient suite", Box::new(gradient_checks)),
        ("alpha = 0 reduces to baseline", Box::new(|| baseline_reduction(&bench))),
        ("fusion gain on standard benchmark", Box::new(|| fusion_gain(&bench))),
        ("alpha sensitivity shape", Box::new(|| alpha_shape(&bench))),
        ("few-shot gap shrinks", Box::new(|| shot_gap(&bench))),
        ("generalized mode degrades", Box::new(|| generalized_degrades(&bench))),
        ("probability invariants", Box::new(probability_invariants)),
        ("cli eval determinism", Box::new(cli_determinism)),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            });
        failures += usize::from(!pass);
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
