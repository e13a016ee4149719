//! Acceptance criteria, one status line each.
//!
//! Criteria 1 to 6 always run. Criteria 7 to 9 need the ICEWS14 splits in
//! `$ICEWS14_DIR` (default `data/icews14` under the workspace root) and are
//! reported as SKIP without them. Criterion 10 is a multi-hour run and only
//! executes with `--ignored` or `--include-ignored`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{oracle_rank, random_toy};
use hercules::data::{Dataset, Quadruple};
use hercules::diff::{batch_loss, finite_diff_check, loss_and_grads};
use hercules::evaluation::{evaluate, temporal_probe};
use hercules::geometry::{
    exp0, givens_reflect, givens_rotate, kernel, log0, mobius_add, AngleVector, BallPoint,
};
use hercules::model::score;
use hercules::params::{
    count_params, init_params, load_checkpoint, save_checkpoint, CheckpointMeta, ParamKind,
};
use hercules::synthetic::{self, SyntheticConfig};
use hercules::training::{train, TrainConfig, TrainOutcome};
use hercules::{CurvatureSpec, Execution, ModelParams, VocabSizes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Skip,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    kernel::norm(&diff) / kernel::norm(b).max(1e-300)
}

// criterion 1: geometry

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dims = [2usize, 4, 10];
    let cases = 10_000;
    let mut failures: Vec<String> = Vec::new();
    let mut worst_round_trip: f64 = 0.0;
    for case in 0..cases {
        let n = dims[case % 3];
        let c = rng.gen_range(0.05..=5.0);
        let s = f64::sqrt(c);
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = kernel::norm(&dir).max(1e-12);
        let mut fail = |what: &str| failures.push(format!("case {case} (n={n}, c={c:.3}): {what}"));

        // exp/log round trip for √c‖u‖ up to 5
        let radius = rng.gen_range(0.0..5.0) / s;
        let u: Vec<f64> = dir.iter().map(|v| v * radius / len).collect();
        let back = log0(exp0(&u, c).unwrap().coords(), c).unwrap();
        let e = if radius == 0.0 {
            kernel::norm(&back)
        } else {
            rel_err(&back, &u)
        };
        worst_round_trip = worst_round_trip.max(e);
        if e > 1e-9 {
            fail(&format!("round trip error {e:e}"));
        }

        // Möbius identity and inverse
        let x = exp0(&u, c).unwrap();
        let zero = BallPoint::origin(n, c).unwrap();
        if rel_err(mobius_add(&x, &zero).unwrap().coords(), x.coords()) > 1e-12
            || rel_err(mobius_add(&zero, &x).unwrap().coords(), x.coords()) > 1e-12
        {
            fail("zero is not a Möbius identity");
        }
        let neg = BallPoint::new(x.coords().iter().map(|v| -v).collect(), c).unwrap();
        if mobius_add(&neg, &x).unwrap().norm() * s > 1e-9 {
            fail("(−x) ⊕ x is not the origin");
        }

        // one-dimensional reduction along the first axis
        let (a, b) = (
            rng.gen_range(-0.95..0.95) / s,
            rng.gen_range(-0.95..0.95) / s,
        );
        let mut xa = vec![0.0; n];
        let mut yb = vec![0.0; n];
        xa[0] = a;
        yb[0] = b;
        let z = mobius_add(
            &BallPoint::new(xa, c).unwrap(),
            &BallPoint::new(yb, c).unwrap(),
        )
        .unwrap();
        let expected = (a + b) / (1.0 + c * a * b);
        if (z.coords()[0] - expected).abs() > 1e-12 * (1.0 + expected.abs())
            || z.coords()[1..].iter().any(|&v| v != 0.0)
        {
            fail("1-D Möbius addition differs from (a+b)/(1+cab)");
        }

        // Euclidean limit
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tiny = 1e-12;
        let flat = mobius_add(
            &BallPoint::new(p.clone(), tiny).unwrap(),
            &BallPoint::new(q.clone(), tiny).unwrap(),
        )
        .unwrap();
        let sum: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
        if flat
            .coords()
            .iter()
            .zip(&sum)
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            fail("Möbius addition does not flatten as c → 0");
        }

        // Givens orthogonality and involution
        let th = AngleVector::new((0..n / 2).map(|_| rng.gen_range(-10.0..10.0)).collect());
        let ph = AngleVector::new((0..n / 2).map(|_| rng.gen_range(-10.0..10.0)).collect());
        let (rp, rq) = (
            givens_rotate(&p, &th).unwrap(),
            givens_rotate(&q, &th).unwrap(),
        );
        let (fp, fq) = (
            givens_reflect(&p, &ph).unwrap(),
            givens_reflect(&q, &ph).unwrap(),
        );
        let inner = kernel::dot(&p, &q);
        let tol = 1e-12 * (1.0 + kernel::norm(&p) * kernel::norm(&q));
        if (kernel::dot(&rp, &rq) - inner).abs() > tol
            || (kernel::dot(&fp, &fq) - inner).abs() > tol
        {
            fail("Givens transform does not preserve inner products");
        }
        if rel_err(&givens_rotate(&rp, &th.negated()).unwrap(), &p) > 1e-12 {
            fail("rotation by −θ does not undo rotation by θ");
        }
        if rel_err(&givens_reflect(&fp, &ph).unwrap(), &p) > 1e-12 {
            fail("reflection is not an involution");
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(10);
    let mut detail = format!(
        "{cases} cases, c in [0.05, 5], n in {{2,4,10}}, worst round-trip {worst_round_trip:.2e}, {}",
        secs(elapsed)
    );
    if let Some(first) = failures.first() {
        detail.push_str(&format!("; {} failures, first: {first}", failures.len()));
    }
    verdict(ok, detail)
}

// criterion 2: gradients

fn random_small_model(
    spec: CurvatureSpec,
    seed: u64,
) -> (ModelParams, Vec<Quadruple>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e, r, t) = (
        rng.gen_range(4..9),
        rng.gen_range(1..4),
        rng.gen_range(1..5),
    );
    let dim = 2 * rng.gen_range(1..4);
    let mut p = init_params(VocabSizes::new(e, r, t), dim, spec, seed).unwrap();
    for v in p.entity_emb.iter_mut().chain(p.rel_emb.iter_mut()) {
        *v = rng.gen_range(-0.6..0.6);
    }
    for v in p
        .rel_ctx
        .iter_mut()
        .chain(p.rel_curv.iter_mut())
        .chain(p.entity_bias.iter_mut())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    if let Some(tc) = p.time_curv.as_mut() {
        tc.iter_mut().for_each(|v| *v = rng.gen_range(0.3..1.5));
    }
    if let Some(tt) = p.time_trans.as_mut() {
        tt.iter_mut().for_each(|v| *v = rng.gen_range(-0.4..0.4));
    }
    let batch: Vec<Quadruple> = (0..4)
        .map(|_| {
            Quadruple::new(
                rng.gen_range(0..e),
                rng.gen_range(0..2 * r),
                rng.gen_range(0..e),
                rng.gen_range(0..t),
            )
        })
        .collect();
    let negs = batch
        .iter()
        .map(|_| (0..4).map(|_| rng.gen_range(0..e)).collect())
        .collect();
    (p, batch, negs)
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut failures = Vec::new();
    for spec in CurvatureSpec::ALL {
        for seed in 0..5 {
            let (p, batch, negs) = random_small_model(spec, 100 + seed);
            let report = finite_diff_check(&p, spec, &batch, &negs, 1e-5, 1e-4).unwrap();
            worst = worst.max(report.max_rel_error);
            checked += report.checked;
            if !report.passed() {
                failures.push(format!("{spec} seed {seed}: {:?}", report.worst));
            }
        }
    }
    let elapsed = start.elapsed();
    let mut detail = format!(
        "4 variants × 5 models, {checked} entries, max relative error {worst:.2e} (tol 1e-4, h 1e-5), {}",
        secs(elapsed)
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; worst failing entry {f}"));
    }
    verdict(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        detail,
    )
}

// criterion 3: ranking oracle

fn ranking_oracle() -> Outcome {
    let start = Instant::now();
    let mut queries = 0;
    let mut mismatches = Vec::new();
    for seed in 0..25u64 {
        let spec = CurvatureSpec::ALL[seed as usize % 4];
        let toy = random_toy(5000 + seed, spec);
        let report = evaluate(
            &toy.params,
            spec,
            &toy.queries,
            &toy.filter,
            Execution::Parallel,
        )
        .unwrap();
        let oracle: Vec<usize> = toy.queries.iter().map(|q| oracle_rank(&toy, q)).collect();
        queries += oracle.len();
        if report.ranks != oracle {
            mismatches.push(seed);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "25 graphs (|E| ≤ 12), {queries} queries, rank mismatches in graphs {mismatches:?}, {}",
            secs(elapsed)
        ),
    )
}

// criterion 4: parameter accounting

fn parameter_accounting() -> Outcome {
    // (|E|, |R|, |T|) of the two benchmark datasets
    let datasets = [
        ("ICEWS14", 7128u64, 230u64, 365u64),
        ("ICEWS05-15", 10488, 251, 4017),
    ];
    let mut mismatches = Vec::new();
    let mut rows = 0;
    for (name, e, r, t) in datasets {
        for n in [10u64, 20, 40, 100] {
            let atth = (e + 2 * r) * n + e + 2 * r * (1 + 3 * n);
            let hercules = atth + t;
            let sizes = VocabSizes::new(e as usize, r as usize, t as usize);
            for (spec, expected) in [
                (CurvatureSpec::RelationOnly, atth),
                (CurvatureSpec::RelationTime, hercules),
            ] {
                rows += 1;
                let counted = count_params(sizes, n as usize, spec);
                let allocated = ModelParams::zeros(sizes, n as usize, spec)
                    .unwrap()
                    .num_scalars() as u64;
                if counted != expected || allocated != expected {
                    mismatches.push(format!(
                        "{name} n={n} {spec}: {counted}/{allocated} vs {expected}"
                    ));
                }
            }
        }
    }
    let pinned = count_params(
        VocabSizes::new(7128, 230, 365),
        100,
        CurvatureSpec::RelationTime,
    );
    verdict(
        mismatches.is_empty() && pinned == 904_753,
        format!(
            "{rows} table rows match; Hercules ICEWS14 n=100 = {pinned}; mismatches {mismatches:?}"
        ),
    )
}

// criterion 5: time-unawareness of the relation-only model

fn synthetic_dataset() -> Dataset {
    synthetic::generate(&SyntheticConfig {
        entities: 80,
        timestamps: 10,
        base_facts: 250,
        seed: 17,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .dataset()
    .unwrap()
}

fn atth_probe_identity() -> Outcome {
    let data = synthetic_dataset();
    let spec = CurvatureSpec::RelationOnly;
    let config = TrainConfig {
        epochs: 8,
        batch_size: 64,
        negatives: 20,
        dim: 8,
        spec,
        seed: 3,
        valid_every: 4,
        ..TrainConfig::default()
    };
    let out = train(&config, &data).unwrap();
    // go through the on-disk format, as a user-supplied checkpoint would
    let meta = CheckpointMeta {
        vocab: data.vocab.fingerprint(),
        sizes: data.sizes(),
        dim: config.dim,
        seed: config.seed,
        epoch: out.best_epoch,
        valid_mrr: out.best_valid.as_ref().map(|r| r.mrr),
    };
    let (params, spec, _) =
        load_checkpoint(&save_checkpoint(&out.best, spec, &meta).unwrap()).unwrap();
    let test = data.augmented(&data.test);
    let all: Vec<usize> = (0..data.sizes().timestamps).collect();
    let probe = temporal_probe(
        &params,
        spec,
        &test,
        &data.filter,
        &all,
        Execution::Parallel,
    )
    .unwrap();
    let bits = |m: [f64; 4]| m.map(f64::to_bits);
    let identical = probe.per_timestamp.iter().all(|(_, r)| {
        r.ranks == probe.reference.ranks && bits(r.metrics()) == bits(probe.reference.metrics())
    });
    let s = probe.spread;
    let zero = [s.mrr, s.hits1, s.hits3, s.hits10]
        .iter()
        .all(|&v| v == 0.0);
    verdict(
        identical && zero && probe.per_timestamp.len() == all.len(),
        format!(
            "{} timestamps, reports bit-identical: {identical}, spreads (mrr, h1, h3, h10) = ({}, {}, {}, {})",
            all.len(),
            s.mrr,
            s.hits1,
            s.hits3,
            s.hits10
        ),
    )
}

// criterion 6: Hercules with τ = 1 is AttH

fn hercules_reduces_to_atth() -> Outcome {
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for seed in 0..10u64 {
        let (atth, batch, negs) = random_small_model(CurvatureSpec::RelationOnly, 700 + seed);
        let herc = atth.clone().with_time_curvature(1.0);
        let (ra, rh) = (CurvatureSpec::RelationOnly, CurvatureSpec::RelationTime);
        let s = atth.sizes;
        for sub in 0..s.entities {
            for p in 0..s.relation_rows() {
                for o in 0..s.entities {
                    for t in 0..s.timestamps {
                        compared += 1;
                        let (a, h) = (
                            score(&atth, ra, sub, p, o, t).unwrap(),
                            score(&herc, rh, sub, p, o, t).unwrap(),
                        );
                        if a.to_bits() != h.to_bits() {
                            mismatches.push(format!("seed {seed} score ({sub},{p},{o},{t})"));
                        }
                    }
                }
            }
        }
        let la = batch_loss(&atth, ra, &batch, &negs, Execution::Sequential).unwrap();
        let lh = batch_loss(&herc, rh, &batch, &negs, Execution::Sequential).unwrap();
        if la.to_bits() != lh.to_bits() {
            mismatches.push(format!("seed {seed} loss"));
        }
        let (_, ga) = loss_and_grads(&atth, ra, &batch, &negs, Execution::Sequential).unwrap();
        let (_, gh) = loss_and_grads(&herc, rh, &batch, &negs, Execution::Sequential).unwrap();
        for kind in ParamKind::ALL {
            if let (Some(a), Some(h)) = (ga.array(kind), gh.array(kind)) {
                compared += a.len();
                if a.iter().zip(h).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    mismatches.push(format!("seed {seed} gradient {}", kind.name()));
                }
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("10 random models, {compared} scores and gradient entries compared bit-for-bit, mismatches {mismatches:?}"),
    )
}

// criterion 7 to 10: ICEWS14

fn icews14_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("ICEWS14_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/icews14"));
    hercules::data::split_path(&dir, "train")
        .is_ok()
        .then_some(dir)
}

fn desk_recipe(spec: CurvatureSpec, negatives: usize) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 256,
        negatives,
        learning_rate: 0.001,
        dim: 20,
        spec,
        seed: 0,
        valid_every: 10,
        execution: Execution::Parallel,
        ..TrainConfig::default()
    }
}

fn best_mrr(out: &TrainOutcome) -> f64 {
    out.best_valid.as_ref().map_or(0.0, |r| r.mrr)
}

fn desk_scale_learning(run: &TrainOutcome, elapsed: Duration) -> Outcome {
    let mrr = best_mrr(run);
    verdict(
        mrr >= 0.30 && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "Hercules n=20 k=50 50 epochs: best validation MRR {mrr:.4} at epoch {} (bar 0.30), {}",
            run.best_epoch,
            secs(elapsed)
        ),
    )
}

fn negative_direction(data: &Dataset, k50: &TrainOutcome) -> Outcome {
    let k200 = train(&desk_recipe(CurvatureSpec::RelationTime, 200), data).unwrap();
    let (a, b) = (best_mrr(k50), best_mrr(&k200));
    verdict(
        b - a >= 0.01,
        format!(
            "validation MRR k=50 {a:.4}, k=200 {b:.4}, gain {:.2} points (bar 1.0)",
            100.0 * (b - a)
        ),
    )
}

fn hercules_probe(data: &Dataset, run: &TrainOutcome) -> Outcome {
    let test = data.augmented(&data.test);
    let all: Vec<usize> = (0..data.sizes().timestamps).collect();
    let probe = temporal_probe(
        &run.best,
        CurvatureSpec::RelationTime,
        &test,
        &data.filter,
        &all,
        Execution::Parallel,
    )
    .unwrap();
    let s = probe.spread;
    verdict(
        s.mrr < 0.01,
        format!(
            "{} timestamps, spread mrr {:.3e} (bar 1e-2), h1 {:.3e}, h3 {:.3e}, h10 {:.3e}",
            all.len(),
            s.mrr,
            s.hits1,
            s.hits3,
            s.hits10
        ),
    )
}

fn full_protocol(data: &Dataset) -> Outcome {
    let test = data.augmented(&data.test);
    let mut parts = Vec::new();
    let mut ok = true;
    for (spec, target) in [
        (CurvatureSpec::RelationOnly, 0.456),
        (CurvatureSpec::RelationTime, 0.460),
    ] {
        let config = TrainConfig {
            epochs: 500,
            negatives: 500,
            dim: 10,
            ..desk_recipe(spec, 500)
        };
        let out = train(&config, data).unwrap();
        let mrr = evaluate(&out.best, spec, &test, &data.filter, Execution::Parallel)
            .unwrap()
            .mrr;
        ok &= (mrr - target).abs() <= 0.03;
        parts.push(format!("{spec} test MRR {mrr:.4} (target {target} ± 0.03)"));
    }
    verdict(ok, parts.join(", "))
}

fn run(id: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let tag = match outcome.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("criterion {id:>2} {tag} {title}: {}", outcome.detail);
    !matches!(outcome.status, Status::Fail)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for i in 1..=10 {
            println!("criterion_{i}: test");
        }
        return ExitCode::SUCCESS;
    }
    let long = args
        .iter()
        .any(|a| a == "--ignored" || a == "--include-ignored");

    let mut ok = true;
    ok &= run(1, "geometry suite", geometry_suite);
    ok &= run(2, "gradient exactness", gradient_exactness);
    ok &= run(3, "ranking oracle equivalence", ranking_oracle);
    ok &= run(4, "parameter accounting", parameter_accounting);
    ok &= run(
        5,
        "relation-only model is time-unaware",
        atth_probe_identity,
    );
    ok &= run(
        6,
        "Hercules with unit time curvature equals AttH",
        hercules_reduces_to_atth,
    );

    let titles = [
        (7, "desk-scale learning on ICEWS14"),
        (8, "more negatives help"),
        (9, "Hercules temporal probe spread"),
    ];
    match icews14_dir().map(Dataset::load) {
        Some(Ok(data)) => {
            let start = Instant::now();
            let run7 = train(&desk_recipe(CurvatureSpec::RelationTime, 50), &data);
            let elapsed = start.elapsed();
            match run7 {
                Ok(run7) => {
                    ok &= run(7, titles[0].1, || desk_scale_learning(&run7, elapsed));
                    ok &= run(8, titles[1].1, || negative_direction(&data, &run7));
                    ok &= run(9, titles[2].1, || hercules_probe(&data, &run7));
                }
                Err(e) => {
                    for (id, title) in titles {
                        ok &= run(id, title, || {
                            verdict(false, format!("training failed: {e}"))
                        });
                    }
                }
            }
            if long {
                ok &= run(10, "full-protocol reproduction", || full_protocol(&data));
            } else {
                run(10, "full-protocol reproduction", || {
                    skip("multi-hour run, pass --include-ignored to execute")
                });
            }
        }
        Some(Err(e)) => {
            for (id, title) in titles {
                ok &= run(id, title, || {
                    verdict(false, format!("cannot load ICEWS14: {e}"))
                });
            }
            run(10, "full-protocol reproduction", || {
                skip("ICEWS14 could not be loaded")
            });
        }
        None => {
            for (id, title) in titles
                .into_iter()
                .chain([(10, "full-protocol reproduction")])
            {
                run(id, title, || {
                    skip("ICEWS14 splits not found; set ICEWS14_DIR to a directory with train/valid/test")
                });
            }
        }
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
