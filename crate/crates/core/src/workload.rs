//! Multi-threaded query workloads and their aggregate metrics.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::cache::{HitCounts, PhaseHits};
use crate::error::{Error, Result};
use crate::search::{SearchIndex, SearchOutput, SearchParams};
use crate::vecdata::{recall_at_k, GroundTruth, VectorDataset};

/// When the dynamic cache is emptied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DynamicReset {
    /// Once at the start of the workload; pages persist across its queries.
    #[default]
    PerRun,
    /// Before every query.
    PerQuery,
}

impl DynamicReset {
    pub fn as_str(self) -> &'static str {
        match self {
            DynamicReset::PerRun => "run",
            DynamicReset::PerQuery => "query",
        }
    }
}

impl std::str::FromStr for DynamicReset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "run" => Ok(DynamicReset::PerRun),
            "query" => Ok(DynamicReset::PerQuery),
            other => Err(Error::arg(format!(
                "unknown reset mode {other:?} (expected run or query)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadParams {
    pub search: SearchParams,
    pub repetitions: usize,
    pub workers: usize,
    pub reset: DynamicReset,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            search: SearchParams::default(),
            repetitions: 1,
            workers: 1,
            reset: DynamicReset::PerRun,
        }
    }
}

/// Result of one query in the first repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub ids: Vec<u32>,
    pub recall: Option<f64>,
    pub output: SearchOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadReport {
    pub queries: usize,
    pub executions: usize,
    pub wall: Duration,
    pub qps: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub recall: Option<f64>,
    pub mean_io_ops: f64,
    pub mean_pages_read: f64,
    pub hits: PhaseHits,
    pub mean_iterations: f64,
    pub mean_transition_theta: Option<f64>,
    pub mean_transition_panns: Option<f64>,
    pub mean_transition_truth: Option<f64>,
    /// Lookup outcomes summed over executions, per iteration (index 0 is
    /// iteration 1).
    pub hits_by_iteration: Vec<HitCounts>,
    pub outcomes: Vec<QueryOutcome>,
}

/// Runs every query `repetitions` times across `workers` threads.
///
/// Returned ids are the same for any worker count; only timing and, through
/// the shared dynamic cache, I/O counters depend on scheduling when
/// `workers > 1`.
pub fn run_workload(
    index: &SearchIndex,
    queries: &VectorDataset,
    truth: Option<&GroundTruth>,
    params: &WorkloadParams,
) -> Result<WorkloadReport> {
    params.search.validate()?;
    if params.workers == 0 || params.repetitions == 0 {
        return Err(Error::arg("workers and repetitions must be positive"));
    }
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(gt) = truth {
        if gt.len() != queries.len() || gt.k() < params.search.k {
            return Err(Error::arg(format!(
                "ground truth has {} lists of {} ids; need {} lists of at least {}",
                gt.len(),
                gt.k(),
                queries.len(),
                params.search.k
            )));
        }
    }
    let nq = queries.len();
    let total = nq * params.repetitions;
    index.cache().reset_dynamic();
    index.cache().reset_stats();

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SearchOutput>>> = (0..total).map(|_| Mutex::new(None)).collect();
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let started = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..params.workers.min(total) {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                if job >= total || failure.lock().unwrap().is_some() {
                    break;
                }
                let q = job % nq;
                if params.reset == DynamicReset::PerQuery {
                    index.cache().reset_dynamic();
                }
                let nn = truth.map(|gt| gt.get(q)[0]);
                match index.beam_search(queries.get(q as u32), &params.search, nn) {
                    Ok(out) => *slots[job].lock().unwrap() = Some(out),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    let wall = started.elapsed();
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let outputs: Vec<SearchOutput> = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every job ran"))
        .collect();
    aggregate(outputs, nq, wall, truth, params.search.k)
}

fn aggregate(
    outputs: Vec<SearchOutput>,
    nq: usize,
    wall: Duration,
    truth: Option<&GroundTruth>,
    k: usize,
) -> Result<WorkloadReport> {
    let executions = outputs.len();
    let mean = |f: &dyn Fn(&SearchOutput) -> f64| outputs.iter().map(f).sum::<f64>() / executions as f64;
    let mean_opt = |f: &dyn Fn(&SearchOutput) -> Option<u32>| {
        let vals: Vec<f64> = outputs.iter().filter_map(f).map(f64::from).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };

    let mut latencies: Vec<f64> = outputs.iter().map(|o| o.stats.latency.as_secs_f64() * 1e3).collect();
    latencies.sort_by(f64::total_cmp);

    let mut hits = PhaseHits::default();
    let mut hits_by_iteration: Vec<HitCounts> = Vec::new();
    for o in &outputs {
        hits += o.stats.hits;
        for r in &o.stats.trace {
            let i = r.iter as usize - 1;
            if hits_by_iteration.len() <= i {
                hits_by_iteration.resize(i + 1, HitCounts::default());
            }
            hits_by_iteration[i].record(r.hit);
        }
    }

    let mut recalls = Vec::with_capacity(executions);
    if let Some(gt) = truth {
        for (job, o) in outputs.iter().enumerate() {
            recalls.push(recall_at_k(&o.ids(), &gt.get(job % nq)[..k])?);
        }
    }
    let recall = truth.map(|_| recalls.iter().sum::<f64>() / executions as f64);

    let outcomes = outputs[..nq]
        .iter()
        .enumerate()
        .map(|(i, o)| QueryOutcome {
            ids: o.ids(),
            recall: recalls.get(i).copied(),
            output: o.clone(),
        })
        .collect();

    Ok(WorkloadReport {
        queries: nq,
        executions,
        wall,
        qps: executions as f64 / wall.as_secs_f64().max(f64::MIN_POSITIVE),
        latency_mean_ms: latencies.iter().sum::<f64>() / executions as f64,
        latency_p50_ms: percentile(&latencies, 50.0),
        latency_p95_ms: percentile(&latencies, 95.0),
        latency_p99_ms: percentile(&latencies, 99.0),
        recall,
        mean_io_ops: mean(&|o| o.stats.io.io_ops as f64),
        mean_pages_read: mean(&|o| o.stats.io.pages_read as f64),
        hits,
        mean_iterations: mean(&|o| f64::from(o.stats.iterations)),
        mean_transition_theta: mean_opt(&|o| o.stats.transition_iter_theta),
        mean_transition_panns: mean_opt(&|o| o.stats.transition_iter_panns),
        mean_transition_truth: mean_opt(&|o| o.stats.transition_iter_truth),
        hits_by_iteration,
        outcomes,
    })
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn reset_mode_parsing() {
        assert_eq!("query".parse::<DynamicReset>().unwrap(), DynamicReset::PerQuery);
        assert!("never".parse::<DynamicReset>().is_err());
    }
}
