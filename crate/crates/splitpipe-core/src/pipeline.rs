//! Two-stage pipelined latency for every split of a model, exhaustive
//! split search, a discrete-event queue simulation that cross-checks the
//! analytic model, and the rows behind the speedup/latency-curve reports.
//!
//! Split index k puts units 0..k on the first-stage device and k..L on the
//! second. Per image, stage 1 runs its prefix then ships the cut tensor;
//! stage 2 runs the suffix. Steady-state latency is the bottleneck stage
//! time. The Direct path writes the cut straight into the second device's
//! memory (charged once, in stage 1); the Indirect path stages it through
//! host memory (charged in both stages). At k = 0 no cut tensor exists —
//! the raw input reaches the second device the same way under either path,
//! so both paths price that split identically.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cnn_ir::CnnModel;
use crate::cost_model::{cut_bytes, transfer_time, CostError, LinkProfile, UnitCostModel};

/// How the cut tensor travels between the devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferPath {
    /// Peer-to-peer write into the second device's memory.
    Direct,
    /// Staged through host memory; both hops billed at link speed.
    Indirect,
}

impl TransferPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransferPath::Direct => "direct",
            TransferPath::Indirect => "indirect",
        }
    }
}

/// Fully priced split: stage times, bottleneck latency and speedups against
/// the two single-device endpoint baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split_index: usize,
    pub stage1: f64,
    pub stage2: f64,
    pub steady_latency: f64,
    pub fill: f64,
    pub speedup_over_dpu: f64,
    pub speedup_over_gpu: f64,
    pub path: TransferPath,
}

/// Steady-state summary of the event simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub per_image_steady: f64,
    pub total: f64,
    pub max_queue_depth: usize,
}

/// One row of the speedup report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub path: TransferPath,
    pub split_index: usize,
    pub speedup_over_dpu: f64,
    pub speedup_over_gpu: f64,
}

/// One row of a per-split latency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub split_index: usize,
    pub stage1_s: f64,
    pub stage2_s: f64,
    pub steady_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Cost(CostError),
    IndexOutOfRange { index: usize, len: usize },
    InvalidParam(&'static str),
}

impl core::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PipelineError::Cost(e) => write!(f, "{e}"),
            PipelineError::IndexOutOfRange { index, len } => {
                write!(f, "split index {index} out of range for {len} splits")
            }
            PipelineError::InvalidParam(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PipelineError {}

impl From<CostError> for PipelineError {
    fn from(e: CostError) -> Self {
        PipelineError::Cost(e)
    }
}

/// All valid split indices: 0 (second device only) through L (first only).
pub fn enumerate_splits(model: &CnnModel) -> Vec<usize> {
    (0..=model.units.len()).collect()
}

/// Per-unit latencies under one device model, in unit order.
pub fn unit_latencies(model: &CnnModel, device: &dyn UnitCostModel) -> Result<Vec<f64>, PipelineError> {
    (0..model.units.len())
        .map(|i| device.unit_latency(model, i).map_err(PipelineError::from))
        .collect()
}

/// Cut-transfer time for every split index; length L+1.
pub fn cut_transfers(model: &CnnModel, link: &LinkProfile) -> Result<Vec<f64>, PipelineError> {
    (0..=model.units.len())
        .map(|k| Ok(transfer_time(link, cut_bytes(model, k)?)))
        .collect()
}

/// Stage times at split k from per-unit latencies and per-split transfers.
///
/// Sums run in ascending unit order so identical inputs give bitwise
/// identical results everywhere this rule is applied.
pub fn stage_times(dpu: &[f64], gpu: &[f64], transfers: &[f64], k: usize, path: TransferPath) -> (f64, f64) {
    let mut stage1 = 0.0;
    for &t in &dpu[..k] {
        stage1 += t;
    }
    stage1 += transfers[k];
    let mut stage2 = 0.0;
    for &t in &gpu[k..] {
        stage2 += t;
    }
    if path == TransferPath::Indirect && k > 0 {
        stage2 += transfers[k];
    }
    (stage1, stage2)
}

/// The same rule expressed over cumulative label vectors: `dpu_cum[i]` is
/// the prefix sum through unit i, `gpu_cum[i]` the suffix sum from unit i.
pub fn steady_from_cumulative(
    dpu_cum: &[f64],
    gpu_cum: &[f64],
    transfers: &[f64],
    k: usize,
    path: TransferPath,
) -> f64 {
    let stage1 = if k == 0 { 0.0 } else { dpu_cum[k - 1] } + transfers[k];
    let mut stage2 = if k < gpu_cum.len() { gpu_cum[k] } else { 0.0 };
    if path == TransferPath::Indirect && k > 0 {
        stage2 += transfers[k];
    }
    if stage1 > stage2 {
        stage1
    } else {
        stage2
    }
}

fn plan_from_parts(dpu: &[f64], gpu: &[f64], transfers: &[f64], k: usize, path: TransferPath) -> SplitPlan {
    let l = dpu.len();
    let (s1, s2) = stage_times(dpu, gpu, transfers, k, path);
    let steady = s1.max(s2);
    let (b1, b2) = stage_times(dpu, gpu, transfers, l, path);
    let dpu_only = b1.max(b2);
    let (g1, g2) = stage_times(dpu, gpu, transfers, 0, path);
    let gpu_only = g1.max(g2);
    SplitPlan {
        split_index: k,
        stage1: s1,
        stage2: s2,
        steady_latency: steady,
        fill: s1.min(s2),
        speedup_over_dpu: dpu_only / steady,
        speedup_over_gpu: gpu_only / steady,
        path,
    }
}

/// Price one split of a model.
pub fn split_latency(
    model: &CnnModel,
    dpu: &dyn UnitCostModel,
    gpu: &dyn UnitCostModel,
    link: &LinkProfile,
    k: usize,
    path: TransferPath,
) -> Result<SplitPlan, PipelineError> {
    let l = model.units.len();
    if k > l {
        return Err(PipelineError::IndexOutOfRange { index: k, len: l + 1 });
    }
    let dpu_lat = unit_latencies(model, dpu)?;
    let gpu_lat = unit_latencies(model, gpu)?;
    let transfers = cut_transfers(model, link)?;
    Ok(plan_from_parts(&dpu_lat, &gpu_lat, &transfers, k, path))
}

/// Exhaustive search for the split with minimum steady-state latency; ties
/// go to the smallest k so the least data leaves the near-source device.
pub fn optimal_split(
    model: &CnnModel,
    dpu: &dyn UnitCostModel,
    gpu: &dyn UnitCostModel,
    link: &LinkProfile,
    path: TransferPath,
) -> Result<SplitPlan, PipelineError> {
    let dpu_lat = unit_latencies(model, dpu)?;
    let gpu_lat = unit_latencies(model, gpu)?;
    let transfers = cut_transfers(model, link)?;
    Ok(optimal_from_parts(&dpu_lat, &gpu_lat, &transfers, path))
}

/// Split search over precomputed unit latencies and transfers.
pub fn optimal_from_parts(dpu: &[f64], gpu: &[f64], transfers: &[f64], path: TransferPath) -> SplitPlan {
    let mut best = plan_from_parts(dpu, gpu, transfers, 0, path);
    for k in 1..=dpu.len() {
        let plan = plan_from_parts(dpu, gpu, transfers, k, path);
        if plan.steady_latency < best.steady_latency {
            best = plan;
        }
    }
    best
}

/// Latency curve across every split; rows in split order.
pub fn latency_curve(
    model: &CnnModel,
    dpu: &dyn UnitCostModel,
    gpu: &dyn UnitCostModel,
    link: &LinkProfile,
    path: TransferPath,
) -> Result<Vec<CurvePoint>, PipelineError> {
    let dpu_lat = unit_latencies(model, dpu)?;
    let gpu_lat = unit_latencies(model, gpu)?;
    let transfers = cut_transfers(model, link)?;
    Ok((0..=model.units.len())
        .map(|k| {
            let (s1, s2) = stage_times(&dpu_lat, &gpu_lat, &transfers, k, path);
            CurvePoint { split_index: k, stage1_s: s1, stage2_s: s2, steady_s: s1.max(s2) }
        })
        .collect())
}

/// One optimal-split row per (model, path), models in input order with the
/// Direct row first.
pub fn speedup_report(
    models: &[CnnModel],
    dpu: &dyn UnitCostModel,
    gpu: &dyn UnitCostModel,
    link: &LinkProfile,
) -> Result<Vec<ReportRow>, PipelineError> {
    let mut rows = Vec::with_capacity(models.len() * 2);
    for model in models {
        for path in [TransferPath::Direct, TransferPath::Indirect] {
            let plan = optimal_split(model, dpu, gpu, link, path)?;
            rows.push(ReportRow {
                model: model.name.clone(),
                path,
                split_index: plan.split_index,
                speedup_over_dpu: plan.speedup_over_dpu,
                speedup_over_gpu: plan.speedup_over_gpu,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Discrete-event simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    /// Stage 2 finished an image (frees the engine; it then pops).
    Stage2Done,
    /// Stage 1 finished computing an image (it then tries to deposit).
    Stage1Done,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    /// Stage-2 events sort first at equal times so a freed slot is visible
    /// to a deposit at the same instant.
    kind: EventKind,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == core::cmp::Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        // BinaryHeap is a max-heap; reverse so the earliest event pops first.
        let rank = |k: EventKind| match k {
            EventKind::Stage2Done => 0u8,
            EventKind::Stage1Done => 1u8,
        };
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| rank(other.kind).cmp(&rank(self.kind)))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Event-driven two-stage pipeline with a bounded FIFO between the stages.
///
/// Stage 1 computes an image, then deposits it into the queue — blocking,
/// engine held, while the queue is full. Stage 2 pops at start of service.
/// This is an operational cross-check of the analytic steady-state rule and
/// never computes max(stage1, stage2) itself.
pub fn simulate_pipeline(
    model: &CnnModel,
    dpu: &dyn UnitCostModel,
    gpu: &dyn UnitCostModel,
    link: &LinkProfile,
    k: usize,
    path: TransferPath,
    n_images: usize,
    queue_capacity: usize,
) -> Result<EventSummary, PipelineError> {
    if n_images == 0 {
        return Err(PipelineError::InvalidParam("n_images must be >= 1"));
    }
    if queue_capacity == 0 {
        return Err(PipelineError::InvalidParam("queue_capacity must be >= 1"));
    }
    let l = model.units.len();
    if k > l {
        return Err(PipelineError::IndexOutOfRange { index: k, len: l + 1 });
    }
    let dpu_lat = unit_latencies(model, dpu)?;
    let gpu_lat = unit_latencies(model, gpu)?;
    let transfers = cut_transfers(model, link)?;
    let (t1, t2) = stage_times(&dpu_lat, &gpu_lat, &transfers, k, path);

    let mut heap: BinaryHeap<Event> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        heap.push(Event { time, kind, seq });
        seq += 1;
    };

    let mut queue_len = 0usize;
    let mut max_queue_depth = 0usize;
    let mut blocked = false; // stage 1 holding a finished image, queue full
    let mut s2_busy = false;
    let mut completions: Vec<f64> = Vec::with_capacity(n_images);

    push(&mut heap, t1, EventKind::Stage1Done);
    let mut fed = 1usize; // images started on stage 1

    while let Some(ev) = heap.pop() {
        match ev.kind {
            EventKind::Stage1Done => {
                if queue_len < queue_capacity {
                    queue_len += 1;
                    max_queue_depth = max_queue_depth.max(queue_len);
                    if fed < n_images {
                        push(&mut heap, ev.time + t1, EventKind::Stage1Done);
                        fed += 1;
                    }
                    if !s2_busy {
                        // Pop immediately and begin service.
                        queue_len -= 1;
                        s2_busy = true;
                        push(&mut heap, ev.time + t2, EventKind::Stage2Done);
                    }
                } else {
                    blocked = true;
                }
            }
            EventKind::Stage2Done => {
                completions.push(ev.time);
                s2_busy = false;
                if blocked {
                    // The stalled deposit lands in the slot freed by the
                    // upcoming pop; net queue length is unchanged.
                    blocked = false;
                    if fed < n_images {
                        push(&mut heap, ev.time + t1, EventKind::Stage1Done);
                        fed += 1;
                    }
                    queue_len += 1;
                    max_queue_depth = max_queue_depth.max(queue_len);
                }
                if queue_len > 0 {
                    queue_len -= 1;
                    s2_busy = true;
                    push(&mut heap, ev.time + t2, EventKind::Stage2Done);
                }
            }
        }
    }

    debug_assert_eq!(completions.len(), n_images);
    let total = *completions.last().unwrap();
    let per_image_steady = if n_images == 1 {
        total
    } else {
        let mid = n_images / 2;
        (completions[n_images - 1] - completions[mid - 1]) / (n_images - mid) as f64
    };
    Ok(EventSummary { per_image_steady, total, max_queue_depth })
}
