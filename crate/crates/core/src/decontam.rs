//! Train/benchmark leakage audit by exact embedding nearest-neighbour search,
//! and removal of the nearest training items per benchmark question.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::TrainingExample;
use crate::embedding::{EmbeddingClient, EmbeddingError, EmbeddingVector};
use crate::jsonl::{self, JsonlError};
use crate::scalar::{dot, norm_sq, Scalar};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub bench_id: String,
    pub canonical_solution: String,
    #[serde(rename = "benchmark", default)]
    pub benchmark_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub train_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemNeighbors {
    pub bench_id: String,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub top_k: usize,
    pub per_item: Vec<ItemNeighbors>,
    pub average_top1: f64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecontamPlan {
    pub remove_train_ids: BTreeSet<String>,
    pub per_item_contributions: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DecontamError {
    #[error("invalid audit argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// Which part of a training example is embedded for the audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedField {
    #[default]
    Output,
    InstructionAndOutput,
}

pub fn train_texts(examples: &[TrainingExample], field: EmbedField) -> Vec<(String, String)> {
    examples
        .iter()
        .map(|e| {
            let text = match field {
                EmbedField::Output => e.output.clone(),
                EmbedField::InstructionAndOutput => format!("{}\n{}", e.instruction, e.output),
            };
            (e.source_record_id.clone(), text)
        })
        .collect()
}

pub fn read_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, DecontamError> {
    let items: Vec<BenchmarkItem> = jsonl::read_all(path)?;
    if let Some(bad) = items.iter().find(|b| b.canonical_solution.trim().is_empty()) {
        return Err(DecontamError::InvalidArgument(format!(
            "benchmark item {} has an empty canonical solution",
            bad.bench_id
        )));
    }
    Ok(items)
}

/// Embeds both sides with `client` and runs [`audit_vectors`].
pub fn audit(
    train: &[(String, String)],
    bench: &[BenchmarkItem],
    client: &EmbeddingClient,
    top_k: usize,
    bin_width: f64,
) -> Result<LeakageReport, DecontamError> {
    check_args(train.len(), bench.len(), top_k, bin_width)?;
    let train_texts: Vec<String> = train.iter().map(|(_, t)| t.clone()).collect();
    let bench_texts: Vec<String> = bench.iter().map(|b| b.canonical_solution.clone()).collect();
    let train_vecs = client.embed_batch(&train_texts)?;
    let bench_vecs = client.embed_batch(&bench_texts)?;
    let train_ids: Vec<String> = train.iter().map(|(id, _)| id.clone()).collect();
    let bench_ids: Vec<String> = bench.iter().map(|b| b.bench_id.clone()).collect();
    audit_vectors(&train_ids, &train_vecs, &bench_ids, &bench_vecs, top_k, bin_width)
}

fn check_args(n_train: usize, n_bench: usize, top_k: usize, bin_width: f64) -> Result<(), DecontamError> {
    if n_train == 0 || n_bench == 0 {
        return Err(DecontamError::InvalidArgument("train and bench must be non-empty".into()));
    }
    if top_k == 0 {
        return Err(DecontamError::InvalidArgument("top_k must be at least 1".into()));
    }
    if !(bin_width > 0.0 && bin_width <= 2.0) {
        return Err(DecontamError::InvalidArgument(format!("bin width {bin_width} not in (0, 2]")));
    }
    Ok(())
}

/// Exact top-`top_k` cosine neighbours for every benchmark vector.
/// Ties in similarity are broken by train position.
pub fn audit_vectors<S: Scalar>(
    train_ids: &[String],
    train: &[EmbeddingVector<S>],
    bench_ids: &[String],
    bench: &[EmbeddingVector<S>],
    top_k: usize,
    bin_width: f64,
) -> Result<LeakageReport, DecontamError> {
    check_args(train.len(), bench.len(), top_k, bin_width)?;
    if train_ids.len() != train.len() || bench_ids.len() != bench.len() {
        return Err(DecontamError::InvalidArgument("ids and vectors differ in length".into()));
    }
    let dim = train[0].dim();
    let norms = train
        .iter()
        .chain(bench)
        .map(|v| {
            if v.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch { left: dim, right: v.dim() });
            }
            let n = norm_sq(v.values()).sqrt();
            if n == 0.0 {
                Err(EmbeddingError::ZeroVector)
            } else {
                Ok(n)
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (train_norms, bench_norms) = norms.split_at(train.len());

    let per_item: Vec<ItemNeighbors> = bench
        .par_iter()
        .enumerate()
        .map(|(bi, b)| {
            let mut sims: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(ti, t)| {
                    let s = dot(b.values(), t.values()) / (bench_norms[bi] * train_norms[ti]);
                    (s.clamp(-1.0, 1.0), ti)
                })
                .collect();
            let k = top_k.min(sims.len());
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < sims.len() {
                sims.select_nth_unstable_by(k - 1, order);
                sims.truncate(k);
            }
            sims.sort_by(order);
            ItemNeighbors {
                bench_id: bench_ids[bi].clone(),
                neighbors: sims
                    .into_iter()
                    .map(|(s, ti)| Neighbor {
                        train_id: train_ids[ti].clone(),
                        similarity: s,
                    })
                    .collect(),
            }
        })
        .collect();

    let top1: Vec<f64> = per_item.iter().map(|p| p.neighbors[0].similarity).collect();
    let average_top1 = top1.iter().sum::<f64>() / top1.len() as f64;
    Ok(LeakageReport {
        top_k,
        histogram: histogram(&top1, bin_width),
        per_item,
        average_top1,
    })
}

/// Fixed bins covering [-1, 1]; the top edge falls into the last bin.
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    let n_bins = (2.0 / bin_width).ceil() as usize;
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let i = (((v + 1.0) / bin_width).floor().max(0.0) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_low: ((-1.0 + i as f64 * bin_width) * 1e9).round() / 1e9,
            count,
        })
        .collect()
}

pub fn write_histogram_csv(report: &LeakageReport, path: &Path) -> Result<(), DecontamError> {
    jsonl::atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["bin_low", "count"])?;
        for b in &report.histogram {
            csv.write_record([b.bin_low.to_string(), b.count.to_string()])?;
        }
        csv.flush()
    })?;
    Ok(())
}

/// The `n_per_item` nearest train ids of every item, merged into one removal set.
pub fn plan_removal(report: &LeakageReport, n_per_item: usize) -> DecontamPlan {
    let mut plan = DecontamPlan::default();
    for item in &report.per_item {
        let ids: Vec<String> = item
            .neighbors
            .iter()
            .take(n_per_item.max(1))
            .map(|n| n.train_id.clone())
            .collect();
        plan.remove_train_ids.extend(ids.iter().cloned());
        plan.per_item_contributions.insert(item.bench_id.clone(), ids);
    }
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome<T> {
    pub kept: Vec<(String, T)>,
    pub removed_count: usize,
    /// Plan ids that were not present in the training set.
    pub missing_ids: Vec<String>,
}

pub fn apply_plan<T>(plan: &DecontamPlan, train: Vec<(String, T)>) -> ApplyOutcome<T> {
    let present: HashSet<&str> = train.iter().map(|(id, _)| id.as_str()).collect();
    let missing_ids: Vec<String> = plan
        .remove_train_ids
        .iter()
        .filter(|id| !present.contains(id.as_str()))
        .cloned()
        .collect();
    for id in &missing_ids {
        log::warn!("decontamination plan names {id}, which is not in the training set");
    }
    let before = train.len();
    let kept: Vec<(String, T)> = train
        .into_iter()
        .filter(|(id, _)| !plan.remove_train_ids.contains(id))
        .collect();
    ApplyOutcome {
        removed_count: before - kept.len(),
        kept,
        missing_ids,
    }
}
