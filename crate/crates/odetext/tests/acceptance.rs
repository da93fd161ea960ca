//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its verdict line, pass or fail.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use odetext::cli;
use odetext::modelfile::{ModelFile, TrainingMeta};
use odetext::synth::{self, Task};
use odetext_core::adjoint;
use odetext_core::dynamics::{DynamicsParams, ParamGrad};
use odetext_core::eval::{self, EvalOptions, LogisticConfig, Scorer};
use odetext_core::interpret;
use odetext_core::linalg::{self, Matrix, Vector};
use odetext_core::model::{self, LabeledDataset, NodeClassifier, TrainConfig, DEFAULT_HIDDEN_DIM};
use odetext_core::odesolve::{self, Method, SolverConfig};
use odetext_core::text::TfidfModel;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_dynamics(rng: &mut ChaCha8Rng, d: usize) -> DynamicsParams {
    let w = Matrix::from_row_major(d, d, uniform(rng, d * d, -1.0, 1.0)).unwrap();
    DynamicsParams::new(w, Vector::from_vec(uniform(rng, d, -1.0, 1.0))).unwrap()
}

fn tight() -> SolverConfig {
    SolverConfig::dopri45(1e-10, 1e-12)
}

fn max_grad_err(a: &(Vector, ParamGrad), b: &(Vector, ParamGrad)) -> f64 {
    let pairs = [
        (a.0.as_slice(), b.0.as_slice()),
        (a.1.weight.as_slice(), b.1.weight.as_slice()),
        (a.1.bias.as_slice(), b.1.bias.as_slice()),
    ];
    pairs
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| rel_err(*p, *q)))
        .fold(0.0, f64::max)
}

/// Random model with every parameter uniform on [-1, 1) and a two-example
/// batch of non-negative unit-norm inputs.
fn random_classifier(rng: &mut ChaCha8Rng) -> (NodeClassifier, Vec<(Vector, usize)>) {
    let d = [2, 4, 8][rng.gen_range(0..3)];
    let v = rng.gen_range(2..=16);
    let c = rng.gen_range(2..=3);
    let labels = (0..c).map(|i| format!("c{i}")).collect();
    let mut m = NodeClassifier::zeros(v, d, labels, tight()).unwrap();
    for slice in m.param_slices_mut() {
        for p in slice.iter_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
    }
    let batch = (0..2)
        .map(|_| {
            let x = Vector::from_vec(uniform(rng, v, 0.0, 1.0));
            let norm = linalg::norm2(&x);
            (x.scale(1.0 / norm), rng.gen_range(0..c))
        })
        .collect();
    (m, batch)
}

fn gradient_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-4;
    let mut passing = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (m, batch) = random_classifier(&mut rng);
        let g = m.grad(&batch, 0.0).unwrap();
        let mut err = 0.0f64;
        for (s, analytic) in g.slices().iter().enumerate() {
            for (k, &a) in analytic.iter().enumerate() {
                let mut plus = m.clone();
                plus.param_slices_mut()[s][k] += eps;
                let mut minus = m.clone();
                minus.param_slices_mut()[s][k] -= eps;
                let fd = (plus.loss(&batch, 0.0).unwrap() - minus.loss(&batch, 0.0).unwrap()) / (2.0 * eps);
                err = err.max(rel_err(a, fd));
            }
        }
        worst = worst.max(err);
        if err <= 1e-4 {
            passing += 1;
        }
    }
    verdict(
        passing >= 99,
        format!("{passing}/100 instances within 1e-4, worst {worst:.2e}"),
    )
}

/// `|a - b| / max(|a|, |b|)` over one gradient block, 0 when both vanish.
fn block_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_entry) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let d = [2, 4, 8][i % 3];
        let p = random_dynamics(&mut rng, d);
        let h0 = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
        let dl = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
        let (h1, _) = p.flow(&h0, 0.0, 1.0, &tight()).unwrap();
        let adj = adjoint::backward(&p, &h1, &dl, 0.0, 1.0, &tight()).unwrap();
        let disc = adjoint::backward_discrete(&p, &h0, &dl, 0.0, 1.0, 4096).unwrap();
        for (a, b) in [
            (adj.0.as_slice(), disc.0.as_slice()),
            (adj.1.weight.as_slice(), disc.1.weight.as_slice()),
            (adj.1.bias.as_slice(), disc.1.bias.as_slice()),
        ] {
            worst = worst.max(block_rel_err(a, b));
        }
        worst_entry = worst_entry.max(max_grad_err(&adj, &disc));
    }
    verdict(
        worst <= 1e-3,
        format!("20 instances, worst relative difference {worst:.2e} per gradient (entrywise {worst_entry:.2e})"),
    )
}

fn solver_accuracy() -> Verdict {
    let cfg = SolverConfig::dopri45(1e-8, 1e-10);
    let exp = |_: f64, h: &[f64], o: &mut [f64]| o.copy_from_slice(h);
    let rotation = |_: f64, h: &[f64], o: &mut [f64]| {
        o[0] = -h[1];
        o[1] = h[0];
    };
    let (e, _) = odesolve::solve(exp, &Vector::from_slice(&[1.0]), 0.0, 1.0, &cfg).unwrap();
    let exp_err = (e[0] - 1f64.exp()).abs();
    let (r, _) = odesolve::solve(rotation, &Vector::from_slice(&[1.0, 0.0]), 0.0, 1.0, &cfg).unwrap();
    let rot_err = (r[0] - 1f64.cos()).abs().max((r[1] - 1f64.sin()).abs());

    let errors: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let rk4 = SolverConfig {
                method: Method::Rk4,
                fixed_step_count: n,
                ..SolverConfig::default()
            };
            let (h, _) = odesolve::solve(exp, &Vector::from_slice(&[1.0]), 0.0, 1.0, &rk4).unwrap();
            (h[0] - 1f64.exp()).abs()
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = exp_err <= 1e-7 && rot_err <= 1e-7 && orders.iter().all(|o| (3.7..=4.3).contains(o));
    verdict(
        ok,
        format!("dopri45 errors exp {exp_err:.1e}, rotation {rot_err:.1e}; rk4 orders {orders:.3?}"),
    )
}

fn adjoint_norm_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut holding = 0;
    let mut worst_ratio = 0.0f64;
    for i in 0..100 {
        let d = [2, 4, 8][i % 3];
        let p = random_dynamics(&mut rng, d);
        let h1 = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
        let a1 = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
        let (a0, _) = adjoint::backward(&p, &h1, &a1, 0.0, 1.0, &SolverConfig::default()).unwrap();
        let bound = p.lipschitz_bound().exp() * linalg::norm2(&a1);
        worst_ratio = worst_ratio.max(linalg::norm2(&a0) / bound);
        if linalg::norm2(&a0) <= bound {
            holding += 1;
        }
    }
    verdict(
        holding == 100,
        format!("{holding}/100 instances, largest |a(t0)| / bound {worst_ratio:.3}"),
    )
}

/// Seeded admit corpus: 200 training and 200 test documents.
fn admit_split() -> (LabeledDataset, LabeledDataset) {
    let docs = synth::generate(Task::Admit, 400, 7);
    let names = Task::Admit.label_names();
    let build = |part: &[(String, &str)]| {
        let texts = part.iter().map(|(t, _)| t.clone()).collect();
        let raw: Vec<&str> = part.iter().map(|(_, l)| *l).collect();
        LabeledDataset::from_raw_labels(texts, &raw, Some(&names)).unwrap()
    };
    (build(&docs[..200]), build(&docs[200..]))
}

struct Trained {
    tfidf: TfidfModel,
    model: NodeClassifier,
    test: LabeledDataset,
}

fn learnability(trained: &mut Option<Trained>) -> Verdict {
    let (train, test) = admit_split();
    let tfidf = TfidfModel::fit(&train.texts, None).unwrap();
    let init = NodeClassifier::init(
        tfidf.dim(),
        DEFAULT_HIDDEN_DIM,
        train.label_names.clone(),
        SolverConfig::default(),
        7,
    )
    .unwrap();
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, _) = model::train(&init, &train, &cfg, &tfidf).unwrap();
    let logistic = eval::train_logistic(&train, &tfidf, &LogisticConfig::default()).unwrap();
    let rows = eval::benchmark(
        &[("node", true, &model as &dyn Scorer), ("logistic", true, &logistic)],
        &test,
        &tfidf,
        &EvalOptions::default(),
    )
    .unwrap();
    let (node, base) = (rows[0].accuracy, rows[1].accuracy);
    *trained = Some(Trained { tfidf, model, test });
    verdict(
        node >= 0.95 && (node - base).abs() <= 0.05,
        format!("node accuracy {node:.3}, logistic {base:.3}"),
    )
}

fn saliency_fidelity(trained: &Trained) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (class, recipe) in Task::Admit.classes().iter().enumerate() {
        let report = interpret::class_saliency(&trained.model, &trained.tfidf, &trained.test.texts, class).unwrap();
        let top: Vec<&str> = report.top_k(5).iter().map(|(t, _)| t.as_str()).collect();
        let rank = top.iter().position(|t| *t == recipe.planted);
        ok &= rank.is_some();
        notes.push(format!(
            "{} rank {}",
            recipe.planted,
            rank.map_or("-".into(), |r| (r + 1).to_string())
        ));
    }

    // zero dynamics and an identity encoder reduce the model to its head
    let tfidf = &trained.tfidf;
    let v = tfidf.dim();
    let mut linear = NodeClassifier::zeros(v, v, Task::Admit.label_names(), SolverConfig::default()).unwrap();
    linear.encoder = Matrix::identity(v);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for w in linear.head.as_mut_slice() {
        *w = rng.gen_range(-2.0..2.0);
    }
    let mut exact = true;
    for class in 0..2 {
        let report = interpret::saliency(&linear, tfidf, &trained.test.texts, class).unwrap();
        for (token, score) in &report.entries {
            let j = tfidf.vocab().index_of(token).unwrap();
            exact &= *score == linear.head.get(class, j).abs();
        }
    }
    notes.push(format!("zero-dynamics saliency equals |head| exactly: {exact}"));
    verdict(ok && exact, notes.join(", "))
}

fn brute_force_auroc(positive: &[bool], scores: &[f64]) -> f64 {
    let mut doubled = 0u64;
    let mut pairs = 0u64;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1;
                doubled += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut matches = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=50);
        let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        // coarse scores so that ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 11.0).collect();
        if eval::auroc(&positive, &scores).unwrap() == brute_force_auroc(&positive, &scores) {
            matches += 1;
        }
    }
    let auroc = eval::auroc(&[true, false, true, false], &[0.9, 0.8, 0.4, 0.2]).unwrap();
    let f1 = eval::f1(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 1).unwrap();
    let bal = eval::balanced_accuracy(&[1, 1, 0], &[1, 0, 0]).unwrap();
    let acc = eval::accuracy(&[1, 0, 1, 0], &[1, 1, 1, 0]).unwrap();
    let worked = auroc == 0.75 && f1 == 2.0 / 3.0 && bal == 0.75 && acc == 0.75;
    verdict(
        matches == 50 && worked,
        format!(
            "{matches}/50 exact brute-force matches; auroc {auroc}, f1 {f1}, balanced accuracy {bal}, accuracy {acc}"
        ),
    )
}

fn tfidf_oracle() -> Verdict {
    let m = TfidfModel::fit(&["a b", "a"], None).unwrap();
    let idf = m.idf();
    let x = m.transform("a b");
    let hand = (idf[0] - 1.0).abs() <= 1e-5
        && (idf[1] - 1.405465).abs() <= 1e-5
        && (x[0] - 0.579739).abs() <= 1e-5
        && (x[1] - 0.814802).abs() <= 1e-5;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = [
        "walk", "in", "17", "admit", "pain", "chest", "home", "fever", "icu", "the",
    ];
    let doc = |rng: &mut ChaCha8Rng, extra: &[&str]| {
        let len = rng.gen_range(0..8);
        let pool: Vec<&str> = words.iter().chain(extra).copied().collect();
        (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut worst = 0.0f64;
    let mut unit = true;
    for _ in 0..200 {
        let corpus: Vec<String> = (0..rng.gen_range(1..6)).map(|_| doc(&mut rng, &[])).collect();
        let cap = if rng.gen_bool(0.5) {
            Some(rng.gen_range(1..6))
        } else {
            None
        };
        let m = TfidfModel::fit(&corpus, cap).unwrap();
        for _ in 0..5 {
            let norm = linalg::norm2(&m.transform(&doc(&mut rng, &["zzz", "unseen"])));
            let off = norm.min((norm - 1.0).abs());
            worst = worst.max(off);
            unit &= off <= 1e-12;
        }
    }
    verdict(
        hand && unit,
        format!("hand example reproduced: {hand}; 1000 norms, worst distance from {{0,1}} {worst:.1e}"),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["odetext"];
    argv.extend_from_slice(args);
    cli::run(argv, &mut &b""[..], &mut Vec::new(), &mut Vec::new())
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (data, a, b) = (path("admit.csv"), path("a.bin"), path("b.bin"));
    let mut codes = vec![run_cli(&["gen-synthetic", "--out", &data, "--n", "200", "--seed", "7"])];
    for out in [&a, &b] {
        codes.push(run_cli(&[
            "train",
            "--data",
            &data,
            "--labels",
            "home,admit",
            "--out",
            out,
            "--hidden-dim",
            "16",
            "--epochs",
            "5",
            "--lr",
            "0.01",
            "--seed",
            "7",
        ]));
    }
    let identical = codes.iter().all(|&c| c == 0) && fs::read(&a).unwrap() == fs::read(&b).unwrap();

    let trained = ModelFile::load(Path::new(&a)).unwrap();
    let probe: Vec<String> = synth::generate(Task::Admit, 50, 99)
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    let fresh = ModelFile {
        tfidf: trained.tfidf.clone(),
        model: trained.model.clone(),
        meta: TrainingMeta {
            seed: 7,
            epochs: 5,
            final_loss: trained.meta.final_loss,
        },
    };
    let round_trip = path("c.bin");
    fresh.save(Path::new(&round_trip)).unwrap();
    let loaded = ModelFile::load(Path::new(&round_trip)).unwrap();
    let same = probe.iter().all(|text| {
        let (la, pa) = fresh.model.predict(&fresh.tfidf, text).unwrap();
        let (lb, pb) = loaded.model.predict(&loaded.tfidf, text).unwrap();
        la == lb && pa.iter().zip(pb.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    verdict(
        identical && same,
        format!("two trainings byte-identical: {identical}; round-trip predictions bit-exact on 50 texts: {same}"),
    )
}

fn memory_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = 6;
    let p = random_dynamics(&mut rng, d);
    let h1 = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
    let a1 = Vector::from_vec(uniform(&mut rng, d, -1.0, 1.0));
    let base = SolverConfig::default();
    let raised = SolverConfig {
        max_steps: 10 * base.max_steps,
        ..base
    };
    let finer = SolverConfig {
        rtol: 1e-12,
        atol: 1e-14,
        ..raised
    };
    let r1 = adjoint::backward_report(&p, &h1, &a1, 0.0, 1.0, &base).unwrap();
    let r2 = adjoint::backward_report(&p, &h1, &a1, 0.0, 1.0, &raised).unwrap();
    let r3 = adjoint::backward_report(&p, &h1, &a1, 0.0, 1.0, &finer).unwrap();
    let steps = |r: &adjoint::BackwardReport| r.stats.accepted_steps + r.stats.rejected_steps;
    let ok = r1.census == r2.census && r1.census == r3.census && steps(&r3) > steps(&r1);
    verdict(
        ok,
        format!(
            "census {} buffers / {} f64 at {} and {} steps (d={d}, max_steps {} and {})",
            r1.census.buffers,
            r1.census.f64_slots,
            steps(&r1),
            steps(&r3),
            base.max_steps,
            raised.max_steps
        ),
    )
}

fn report(index: usize, name: &str, limit: Duration, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = check();
    let elapsed = start.elapsed();
    let passed = v.passed && elapsed < limit;
    println!(
        "criterion {index:>2} {name}: {} ({}; {:.2} s of {} s)",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    passed
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut trained = None;
    let results = [
        report(1, "gradient exactness", secs(60), gradient_exactness),
        report(2, "oracle equivalence", secs(30), oracle_equivalence),
        report(3, "solver accuracy", secs(5), solver_accuracy),
        report(4, "adjoint norm bound", secs(10), adjoint_norm_bound),
        report(5, "end-to-end learnability", secs(120), || learnability(&mut trained)),
        report(6, "saliency fidelity", secs(60), || match &trained {
            Some(t) => saliency_fidelity(t),
            None => verdict(false, "no trained model"),
        }),
        report(7, "metric oracles", secs(5), metric_oracles),
        report(8, "tf-idf oracle", secs(1), tfidf_oracle),
        report(9, "reproducibility", secs(120), reproducibility),
        report(10, "memory contract", secs(10), memory_contract),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
