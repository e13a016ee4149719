use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use hercules::analysis::{curvature_delta, curvature_matrix, export_embeddings_2d, CurvatureTable};
use hercules::data::{write_splits, Dataset, Index};
use hercules::evaluation::{
    evaluate, negative_sweep, probe_csv, sweep_csv, temporal_probe, RankReport,
};
use hercules::params::{count_params, load_checkpoint, save_checkpoint, CheckpointMeta};
use hercules::synthetic::{self, SyntheticConfig};
use hercules::training::train_with;
use hercules::{CurvatureSpec, ModelParams};
use serde_json::{json, Value};

use crate::config::{FileValues, Resolved, SplitArg};
use crate::Command;

pub enum Job {
    Train,
    Eval,
    ProbeTime,
    SweepNeg { ks: Vec<usize> },
    CurvatureDiff { against: PathBuf, threshold: f64 },
    CountParams,
    Export2d { relation: String, timestamp: String },
    Synth(SyntheticConfig),
}

const DEFAULT_KS: [usize; 6] = [50, 100, 200, 300, 400, 500];

/// Folds command-specific flags and config keys into a job, recording them in
/// the resolved configuration.
pub fn prepare(command: Command, r: &mut Resolved, file: &mut FileValues) -> Result<Job> {
    let mut record = |key: &str, v: Value| {
        r.extra.insert(key.to_owned(), v);
    };
    let job = match command {
        Command::Train => Job::Train,
        Command::Eval => Job::Eval,
        Command::ProbeTime => Job::ProbeTime,
        Command::CountParams => Job::CountParams,
        Command::SweepNeg { ks } => {
            let ks = match ks {
                Some(ks) => ks,
                None => match file.take::<String>("ks")? {
                    Some(list) => list
                        .split(',')
                        .map(|k| k.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .with_context(|| format!("config key `ks` = `{list}`"))?,
                    None => DEFAULT_KS.to_vec(),
                },
            };
            if ks.is_empty() || ks.contains(&0) {
                bail!("--ks needs positive negative counts");
            }
            record("ks", json!(ks));
            Job::SweepNeg { ks }
        }
        Command::CurvatureDiff { against, threshold } => {
            let against = against
                .or(file.take("against")?)
                .ok_or_else(|| anyhow!("curvature-diff needs --against <checkpoint>"))?;
            let threshold = threshold.or(file.take("threshold")?).unwrap_or(0.1);
            if threshold.is_nan() || threshold < 0.0 {
                bail!("--threshold must be non-negative");
            }
            record("against", json!(against));
            record("threshold", json!(threshold));
            Job::CurvatureDiff { against, threshold }
        }
        Command::Export2d {
            relation,
            timestamp,
        } => {
            let relation = relation
                .or(file.take("relation")?)
                .unwrap_or_else(|| "0".into());
            let timestamp = timestamp
                .or(file.take("timestamp")?)
                .unwrap_or_else(|| "0".into());
            record("relation", json!(relation));
            record("timestamp", json!(timestamp));
            Job::Export2d {
                relation,
                timestamp,
            }
        }
        Command::Synth {
            entities,
            relations,
            timestamps,
            eras,
            facts,
            repeats,
        } => {
            let d = SyntheticConfig::default();
            let config = SyntheticConfig {
                entities: entities.or(file.take("entities")?).unwrap_or(d.entities),
                relations: relations.or(file.take("relations")?).unwrap_or(d.relations),
                timestamps: timestamps
                    .or(file.take("timestamps")?)
                    .unwrap_or(d.timestamps),
                eras: eras.or(file.take("eras")?).unwrap_or(d.eras),
                base_facts: facts.or(file.take("facts")?).unwrap_or(d.base_facts),
                repeats: repeats.or(file.take("repeats")?).unwrap_or(d.repeats),
                seed: r.seed,
                ..d
            };
            record("synthetic", serde_json::to_value(&config)?);
            Job::Synth(config)
        }
    };
    Ok(job)
}

/// Writes the resolved configuration to `<out>/<command>.config.json`.
pub fn echo_config(r: &Resolved) -> Result<()> {
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    let path = r.out.join(format!("{}.config.json", r.command));
    write_atomic(&path, serde_json::to_string_pretty(r)?.as_bytes())
}

pub fn execute(job: Job, r: &Resolved) -> Result<()> {
    match job {
        Job::Train => train(r),
        Job::Eval => eval(r),
        Job::ProbeTime => probe_time(r),
        Job::SweepNeg { ks } => sweep_neg(r, &ks),
        Job::CurvatureDiff { against, threshold } => curvature_diff(r, &against, threshold),
        Job::CountParams => count(r),
        Job::Export2d {
            relation,
            timestamp,
        } => export_2d(r, &relation, &timestamp),
        Job::Synth(config) => synth(r, &config),
    }
}

/// Write-then-rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn load_data(r: &Resolved) -> Result<Dataset> {
    let dir = r.data_dir()?;
    Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn read_checkpoint(path: &Path) -> Result<(ModelParams, CurvatureSpec, CheckpointMeta)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_checkpoint(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// Loads `--checkpoint`, checks it against the dataset vocabulary and any
/// explicitly requested model variant.
fn checkpoint_for(
    r: &Resolved,
    data: &Dataset,
) -> Result<(ModelParams, CurvatureSpec, CheckpointMeta)> {
    let path = r.checkpoint_path()?;
    let (params, spec, meta) = read_checkpoint(path)?;
    meta.verify_vocabulary(&data.vocab.fingerprint())
        .with_context(|| format!("{} was trained on a different dataset", path.display()))?;
    if r.model_explicit && spec != r.curvature_spec {
        bail!(
            "{} holds a `{spec}` model but `{}` was requested",
            path.display(),
            r.curvature_spec
        );
    }
    Ok((params, spec, meta))
}

fn metrics_json(report: &RankReport) -> Value {
    json!({
        "mrr": report.mrr,
        "h1": report.hits1,
        "h3": report.hits3,
        "h10": report.hits10,
        "queries": report.queries,
    })
}

fn split_queries(r: &Resolved, data: &Dataset) -> Vec<hercules::data::Quadruple> {
    let split = match r.split {
        SplitArg::Valid => &data.valid,
        SplitArg::Test => &data.test,
    };
    data.augmented(split)
}

fn train(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let config = r.train_config();
    let vocab_dir = r.out.join("vocab");
    fs::create_dir_all(&vocab_dir).with_context(|| format!("creating {}", vocab_dir.display()))?;
    data.vocab.dump(&vocab_dir)?;

    let meta = |epoch: usize, valid_mrr: Option<f64>| CheckpointMeta {
        vocab: data.vocab.fingerprint(),
        sizes: data.sizes(),
        dim: config.dim,
        seed: config.seed,
        epoch,
        valid_mrr,
    };
    let log_path = r.out.join("epochs.jsonl");
    let mut log =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let best_path = r.out.join("best.herc");
    let last_path = r.out.join("last.herc");
    let started = Instant::now();

    let outcome = train_with(&config, &data, |ev| {
        let line = serde_json::to_string(ev.log).expect("epoch log serialises");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| io_err(&log_path, e))?;
        let bytes = save_checkpoint(ev.params, config.spec, &meta(ev.log.epoch, ev.log.mrr))?;
        write_atomic(&last_path, &bytes).map_err(to_core)?;
        if ev.improved {
            write_atomic(&best_path, &bytes).map_err(to_core)?;
        }
        eprintln!(
            "epoch {:>4}  loss {:.5}{}  {:.1}s",
            ev.log.epoch,
            ev.log.loss,
            ev.log
                .mrr
                .map(|m| format!("  valid mrr {m:.4}"))
                .unwrap_or_default(),
            ev.log.seconds
        );
        Ok(())
    })?;
    if outcome.best_valid.is_none() {
        let bytes = save_checkpoint(&outcome.best, config.spec, &meta(outcome.best_epoch, None))?;
        write_atomic(&best_path, &bytes)?;
    }

    let test = data.augmented(&data.test);
    let test_report = if test.is_empty() {
        None
    } else {
        Some(evaluate(
            &outcome.best,
            config.spec,
            &test,
            &data.filter,
            config.execution,
        )?)
    };
    let summary = json!({
        "model": config.spec.to_string(),
        "best_epoch": outcome.best_epoch,
        "best_valid": outcome.best_valid.as_ref().map(metrics_json),
        "test": test_report.as_ref().map(metrics_json),
        "parameters": count_params(data.sizes(), config.dim, config.spec),
        "seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&r.out.join("train_report.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> hercules::Error {
    hercules::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn to_core(e: anyhow::Error) -> hercules::Error {
    hercules::Error::Checkpoint(format!("{e:#}"))
}

fn eval(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let (params, spec, meta) = checkpoint_for(r, &data)?;
    let queries = split_queries(r, &data);
    let report = evaluate(&params, spec, &queries, &data.filter, r.execution())?;
    let out = json!({
        "checkpoint": r.checkpoint,
        "model": spec.to_string(),
        "epoch": meta.epoch,
        "split": r.split,
        "metrics": metrics_json(&report),
        "config": r,
    });
    write_json(&r.out.join("eval_report.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out["metrics"])?);
    Ok(())
}

fn probe_time(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let (params, spec, _) = checkpoint_for(r, &data)?;
    let queries = split_queries(r, &data);
    let all: Vec<usize> = (0..data.sizes().timestamps).collect();
    let report = temporal_probe(&params, spec, &queries, &data.filter, &all, r.execution())?;
    let names = &data.vocab.timestamps;
    write_atomic(
        &r.out.join("probe.csv"),
        probe_csv(&report, |t| label(names, t)).as_bytes(),
    )?;
    let out = json!({
        "model": spec.to_string(),
        "split": r.split,
        "reference": metrics_json(&report.reference),
        "std": report.spread,
        "timestamps": report.per_timestamp.len(),
        "config": r,
    });
    write_json(&r.out.join("probe_report.json"), &out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"reference": out["reference"], "std": out["std"]}))?
    );
    Ok(())
}

fn sweep_neg(r: &Resolved, ks: &[usize]) -> Result<()> {
    let data = load_data(r)?;
    let csv_path = r.out.join("sweep.csv");
    let mut done = Vec::new();
    let rows = negative_sweep(&r.train_config(), &data, ks, |row| {
        done.push(row.clone());
        eprintln!("k = {:>4}  test mrr {:.4}", row.negatives, row.test.mrr);
        write_atomic(&csv_path, sweep_csv(&done).as_bytes()).map_err(to_core)
    })?;
    let table: Vec<Value> = rows
        .iter()
        .map(|row| json!({"k": row.negatives, "best_epoch": row.best_epoch, "valid_mrr": row.valid_mrr, "test": metrics_json(&row.test)}))
        .collect();
    write_json(
        &r.out.join("sweep_report.json"),
        &json!({"rows": table, "config": r}),
    )?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn curvature_diff(r: &Resolved, against: &Path, threshold: f64) -> Result<()> {
    let first = r.checkpoint_path()?;
    let (pa, sa, ma) = read_checkpoint(first)?;
    let (pb, sb, mb) = read_checkpoint(against)?;
    if ma.sizes.relations != mb.sizes.relations
        || ma.vocab.relations != mb.vocab.relations
        || (sa.uses_time_curvature()
            && sb.uses_time_curvature()
            && ma.vocab.timestamps != mb.vocab.timestamps)
    {
        bail!(
            "{} and {} were trained on different relation or timestamp vocabularies",
            first.display(),
            against.display()
        );
    }
    let vocab = match &r.data {
        Some(_) => {
            let data = load_data(r)?;
            ma.verify_vocabulary(&data.vocab.fingerprint())?;
            Some(data.vocab)
        }
        None => None,
    };
    let (a, b) = (curvature_matrix(&pa, sa)?, curvature_matrix(&pb, sb)?);
    let delta = curvature_delta(&a, &b, threshold)?;
    let rel = labeller(vocab.as_ref().map(|v| &v.relations), "r");
    let ts = labeller(vocab.as_ref().map(|v| &v.timestamps), "t");
    let table_csv = |t: &CurvatureTable| t.to_csv(&rel, &ts);
    write_atomic(&r.out.join("curvature_a.csv"), table_csv(&a).as_bytes())?;
    write_atomic(&r.out.join("curvature_b.csv"), table_csv(&b).as_bytes())?;
    write_atomic(
        &r.out.join("curvature_delta.csv"),
        table_csv(&delta.delta).as_bytes(),
    )?;
    let mut fractions = serde_json::Map::new();
    for th in [0.05, 0.1, 0.2, 1.0, threshold] {
        fractions.insert(
            th.to_string(),
            json!(curvature_delta(&a, &b, th)?.fraction_below),
        );
    }
    let out = json!({
        "a": {"checkpoint": first, "model": sa.to_string()},
        "b": {"checkpoint": against, "model": sb.to_string()},
        "entries": delta.delta.values.len(),
        "threshold": threshold,
        "fraction_below": delta.fraction_below,
        "fraction_below_by_threshold": fractions,
        "max_delta": delta.delta.values.iter().cloned().fold(0.0, f64::max),
    });
    write_json(&r.out.join("curvature_diff.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn count(r: &Resolved) -> Result<()> {
    let (sizes, spec) = match (&r.data, &r.checkpoint) {
        (Some(_), _) => (load_data(r)?.sizes(), r.curvature_spec),
        (None, Some(path)) => {
            let (_, spec, meta) = read_checkpoint(path)?;
            (
                meta.sizes,
                if r.model_explicit {
                    r.curvature_spec
                } else {
                    spec
                },
            )
        }
        (None, None) => bail!("count-params needs --data (or --checkpoint)"),
    };
    let n = count_params(sizes, r.dim, spec);
    write_json(
        &r.out.join("count_params.json"),
        &json!({"parameters": n, "model": spec.to_string(), "dim": r.dim, "sizes": sizes}),
    )?;
    println!("{n}");
    Ok(())
}

/// Resolves a vocabulary entry given by name, falling back to a numeric id.
fn lookup(index: &Index, key: &str, what: &str) -> Result<usize> {
    if let Some(id) = index.id(key) {
        return Ok(id);
    }
    match key.parse::<usize>() {
        Ok(id) if id < index.len() => Ok(id),
        _ => bail!("unknown {what} `{key}`"),
    }
}

fn export_2d(r: &Resolved, relation: &str, timestamp: &str) -> Result<()> {
    let data = load_data(r)?;
    let (params, spec, _) = checkpoint_for(r, &data)?;
    let p = lookup(&data.vocab.relations, relation, "relation")?;
    let t = lookup(&data.vocab.timestamps, timestamp, "timestamp")?;
    let path = r.out.join("embeddings_2d.csv");
    let rows = export_embeddings_2d(&params, spec, &data.vocab, p, t, &path)?;
    println!("{rows} rows written to {}", path.display());
    Ok(())
}

fn synth(r: &Resolved, config: &SyntheticConfig) -> Result<()> {
    let splits = synthetic::generate(config)?;
    write_splits(
        &r.out,
        [
            ("train", &splits.train),
            ("valid", &splits.valid),
            ("test", &splits.test),
        ],
    )?;
    println!(
        "{} / {} / {} facts written to {}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        r.out.display()
    );
    Ok(())
}

fn labeller<'a>(index: Option<&'a Index>, prefix: &'static str) -> impl Fn(usize) -> String + 'a {
    move |i| match index {
        Some(ix) => label(ix, i),
        None => format!("{prefix}{i}"),
    }
}

fn label(index: &Index, i: usize) -> String {
    index
        .name(i)
        .map(str::to_owned)
        .unwrap_or_else(|| i.to_string())
}
