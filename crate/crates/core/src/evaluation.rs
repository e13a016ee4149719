//! Filtered ranking metrics, the temporal-corruption probe and the
//! negative-count sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FilterIndex, Quadruple};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{check_ids, score_candidates_into};
use crate::params::{CurvatureSpec, ModelParams};
use crate::training::{self, TrainConfig};

/// Ranks and the metrics derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    #[serde(skip)]
    pub ranks: Vec<usize>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub queries: usize,
}

impl RankReport {
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("no queries to evaluate".into()));
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidArgument("ranks start at 1".into()));
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            queries: ranks.len(),
            ranks,
        })
    }

    /// `[mrr, h1, h3, h10]`.
    pub fn metrics(&self) -> [f64; 4] {
        [self.mrr, self.hits1, self.hits3, self.hits10]
    }
}

/// Rank of `scores[gold]` among `scores` after dropping the `filtered` indices
/// (the gold itself is never dropped). Ties are resolved in favour of the
/// gold: rank = 1 + number of strictly higher scores.
pub fn rank_from_scores(scores: &[f64], gold: usize, filtered: &[usize]) -> usize {
    let g = scores[gold];
    let above = scores.iter().filter(|&&x| x > g).count();
    let filtered_above = filtered
        .iter()
        .filter(|&&o| o != gold && scores[o] > g)
        .count();
    1 + above - filtered_above
}

/// Filtered rank of `query.o` among all entities for `(s, p, ?, t)`.
pub fn filtered_rank(
    params: &ModelParams,
    spec: CurvatureSpec,
    query: &Quadruple,
    filter: &FilterIndex,
) -> Result<usize> {
    let mut buf = Vec::new();
    probe_rank(params, spec, query, query.t, filter, &mut buf)
}

/// Ranks `query.o` when the query is scored at timestamp `at`; filtering
/// always uses the facts known for the original `(s, p, t)`.
fn probe_rank(
    params: &ModelParams,
    spec: CurvatureSpec,
    query: &Quadruple,
    at: usize,
    filter: &FilterIndex,
    buf: &mut Vec<f64>,
) -> Result<usize> {
    let Quadruple { s, p, o, t } = *query;
    check_ids(params, s, p, o, at)?;
    let known = filter.lookup(s, p, t);
    if known.binary_search(&o).is_err() {
        return Err(Error::Integrity(format!(
            "gold object {o} of ({s}, {p}, {t}) is missing from the filter index"
        )));
    }
    buf.clear();
    score_candidates_into(params, spec, s, p, at, 0..params.sizes.entities, buf)?;
    Ok(rank_from_scores(buf, o, known))
}

fn ranks_at(
    params: &ModelParams,
    spec: CurvatureSpec,
    queries: &[Quadruple],
    at: Option<usize>,
    filter: &FilterIndex,
    execution: Execution,
) -> Result<Vec<usize>> {
    let chunks = exec::map_chunks(execution, queries, |_, chunk| {
        let mut buf = Vec::with_capacity(params.sizes.entities);
        chunk
            .iter()
            .map(|q| probe_rank(params, spec, q, at.unwrap_or(q.t), filter, &mut buf))
            .collect::<Result<Vec<_>>>()
    });
    let mut ranks = Vec::with_capacity(queries.len());
    for c in chunks {
        ranks.extend(c?);
    }
    Ok(ranks)
}

/// Filtered MRR and Hits@{1,3,10} over `queries` (already augmented with
/// inverse facts). Queries are independent, so the parallel mode returns the
/// same ranks as the sequential one.
pub fn evaluate(
    params: &ModelParams,
    spec: CurvatureSpec,
    queries: &[Quadruple],
    filter: &FilterIndex,
    execution: Execution,
) -> Result<RankReport> {
    RankReport::from_ranks(ranks_at(params, spec, queries, None, filter, execution)?)
}

/// Root-mean-square deviation of each metric from the uncorrupted reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub reference: RankReport,
    /// `(timestamp id, report)` with every query's timestamp replaced.
    pub per_timestamp: Vec<(usize, RankReport)>,
    pub spread: MetricSpread,
}

/// Replaces the timestamp of every query by each of `timestamps` in turn and
/// re-evaluates. A time-unaware model yields identical reports everywhere.
pub fn temporal_probe(
    params: &ModelParams,
    spec: CurvatureSpec,
    queries: &[Quadruple],
    filter: &FilterIndex,
    timestamps: &[usize],
    execution: Execution,
) -> Result<ProbeReport> {
    if timestamps.is_empty() {
        return Err(Error::InvalidArgument(
            "temporal probe needs at least one timestamp".into(),
        ));
    }
    let reference = evaluate(params, spec, queries, filter, execution)?;
    let mut per_timestamp = Vec::with_capacity(timestamps.len());
    for &tau in timestamps {
        if tau >= params.sizes.timestamps {
            return Err(Error::InvalidArgument(format!(
                "timestamp {tau} out of range (|T| = {})",
                params.sizes.timestamps
            )));
        }
        let ranks = ranks_at(params, spec, queries, Some(tau), filter, execution)?;
        per_timestamp.push((tau, RankReport::from_ranks(ranks)?));
    }
    let base = reference.metrics();
    let mut rms = [0.0; 4];
    for (_, r) in &per_timestamp {
        for (acc, (m, b)) in rms.iter_mut().zip(r.metrics().iter().zip(base)) {
            *acc += (m - b) * (m - b);
        }
    }
    let n = per_timestamp.len() as f64;
    let [mrr, hits1, hits3, hits10] = rms.map(|s| (s / n).sqrt());
    Ok(ProbeReport {
        reference,
        per_timestamp,
        spread: MetricSpread {
            mrr,
            hits1,
            hits3,
            hits10,
        },
    })
}

/// One row of the negative-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub negatives: usize,
    pub best_epoch: usize,
    pub valid_mrr: Option<f64>,
    pub test: RankReport,
}

/// Trains one model per negative count and reports test metrics of the
/// selected checkpoint. `on_row` sees each row as it completes.
pub fn negative_sweep(
    base: &TrainConfig,
    dataset: &Dataset,
    counts: &[usize],
    mut on_row: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument(
            "negative sweep needs at least one count".into(),
        ));
    }
    let test = dataset.augmented(&dataset.test);
    let mut rows = Vec::with_capacity(counts.len());
    for &k in counts {
        let config = TrainConfig {
            negatives: k,
            ..base.clone()
        };
        let outcome = training::train(&config, dataset)?;
        let report = evaluate(
            &outcome.best,
            config.spec,
            &test,
            &dataset.filter,
            config.execution,
        )?;
        let row = SweepRow {
            negatives: k,
            best_epoch: outcome.best_epoch,
            valid_mrr: outcome.best_valid.map(|r| r.mrr),
            test: report,
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,best_epoch,valid_mrr,mrr,h1,h3,h10\n");
    for r in rows {
        let valid = r.valid_mrr.map(|v| v.to_string()).unwrap_or_default();
        let [m, h1, h3, h10] = r.test.metrics();
        let _ = writeln!(
            out,
            "{},{},{valid},{m},{h1},{h3},{h10}",
            r.negatives, r.best_epoch
        );
    }
    out
}

/// Per-timestamp CSV; `label` maps a timestamp id to its name.
pub fn probe_csv(report: &ProbeReport, label: impl Fn(usize) -> String) -> String {
    let mut out = String::from("timestamp,mrr,h1,h3,h10\n");
    for (t, r) in &report.per_timestamp {
        let [m, h1, h3, h10] = r.metrics();
        let _ = writeln!(out, "{},{m},{h1},{h3},{h10}", csv_field(&label(*t)));
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
