//! The hardware oracle: parametric per-device unit latencies and link
//! timing, standing in for measured accelerator profiles, plus ingestion of
//! real measured per-unit latency tables when available.
//!
//! Latency form per layer: alpha*macs + beta*bytes_moved + gamma, summed
//! over a unit's layers, with a flat per-unit penalty for residual blocks.
//! The shipped `dpu_like`/`gpu_like` profiles are calibrated so dense
//! convolutions favor the GPU while per-layer overhead and residual
//! synchronization favor the DPU.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cnn_ir::{unit_layer_stats, AtomicUnit, CnnError, CnnModel, LayerKind};

#[derive(Debug, Clone, PartialEq)]
pub enum CostError {
    /// Shapes must be inferred before costing.
    ShapesMissing,
    /// The profile has no coefficients for a layer kind the model uses.
    MissingKind(LayerKind),
    /// Split or unit index outside the model.
    IndexOutOfRange { index: usize, len: usize },
    /// A coefficient or link parameter violates its invariant.
    InvalidProfile(&'static str),
    /// Measured profile bound to a different model or unit count.
    ModelMismatch { expected: String, got: String },
    /// Measured table lacks this unit index.
    MissingUnit(usize),
    /// Unreadable measured-profile row (1-based line number).
    ParseError { line: usize },
}

impl core::fmt::Display for CostError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CostError::ShapesMissing => write!(f, "shapes not inferred; run infer_shapes first"),
            CostError::MissingKind(kind) => write!(f, "profile has no coefficients for {kind:?}"),
            CostError::IndexOutOfRange { index, len } => write!(f, "index {index} out of range for {len}"),
            CostError::InvalidProfile(what) => write!(f, "invalid profile: {what}"),
            CostError::ModelMismatch { expected, got } => {
                write!(f, "measured profile bound to {expected}, used with {got}")
            }
            CostError::MissingUnit(index) => write!(f, "measured profile missing unit {index}"),
            CostError::ParseError { line } => write!(f, "unparseable measured profile at line {line}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CostError {}

impl From<CnnError> for CostError {
    fn from(_: CnnError) -> Self {
        // The only CnnError reachable from an already-validated model is a
        // missing shape inference pass.
        CostError::ShapesMissing
    }
}

/// Latency coefficients for one layer kind: seconds = alpha*macs +
/// beta*bytes + gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl KindCoeffs {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        KindCoeffs { alpha, beta, gamma }
    }
}

/// Parametric per-device latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub kinds: BTreeMap<LayerKind, KindCoeffs>,
    pub residual_penalty: f64,
}

impl DeviceProfile {
    /// Uniform coefficients for every kind; building block for the shipped
    /// profiles and for tests.
    pub fn uniform(name: impl Into<String>, coeffs: KindCoeffs, residual_penalty: f64) -> Self {
        let kinds = LayerKind::ALL.iter().map(|&k| (k, coeffs)).collect();
        DeviceProfile { name: name.into(), kinds, residual_penalty }
    }

    /// Near-source accelerator: modest compute rate, tiny per-layer
    /// overhead, residual blocks at no extra cost.
    pub fn dpu_like() -> Self {
        let mut p = DeviceProfile::uniform("dpu-like", KindCoeffs::new(0.0, 5.0e-11, 2.0e-6), 0.0);
        p.kinds.insert(LayerKind::Conv, KindCoeffs::new(1.0e-12, 5.0e-11, 2.0e-6));
        p.kinds.insert(LayerKind::Linear, KindCoeffs::new(1.0e-12, 5.0e-11, 2.0e-6));
        p
    }

    /// Discrete accelerator: an order of magnitude more compute throughput,
    /// but heavy per-layer launch overhead and a synchronization penalty on
    /// residual blocks.
    pub fn gpu_like() -> Self {
        let mut p = DeviceProfile::uniform("gpu-like", KindCoeffs::new(0.0, 1.0e-11, 5.0e-5), 1.0e-4);
        p.kinds.insert(LayerKind::Conv, KindCoeffs::new(1.0e-13, 1.0e-11, 5.0e-5));
        p.kinds.insert(LayerKind::Linear, KindCoeffs::new(1.0e-13, 1.0e-11, 5.0e-5));
        p
    }

    /// Coefficient sanity: everything finite and nonnegative, every kind
    /// covered with at least one positive term.
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.residual_penalty.is_finite() && self.residual_penalty >= 0.0) {
            return Err(CostError::InvalidProfile("residual_penalty must be finite and >= 0"));
        }
        for kind in LayerKind::ALL {
            let c = self.kinds.get(&kind).ok_or(CostError::MissingKind(kind))?;
            let vals = [c.alpha, c.beta, c.gamma];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(CostError::InvalidProfile("coefficients must be finite and >= 0"));
            }
            if vals.iter().all(|v| *v == 0.0) {
                return Err(CostError::InvalidProfile("each kind needs one positive coefficient"));
            }
        }
        Ok(())
    }
}

/// Transfer-link timing: bandwidth plus a fixed per-transfer overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub bandwidth_bytes_per_s: f64,
    pub fixed_overhead_s: f64,
}

impl Default for LinkProfile {
    /// PCIe Gen3 x4-class link.
    fn default() -> Self {
        LinkProfile { bandwidth_bytes_per_s: 8.0e9, fixed_overhead_s: 5.0e-6 }
    }
}

impl LinkProfile {
    pub fn new(bandwidth_bytes_per_s: f64, fixed_overhead_s: f64) -> Self {
        LinkProfile { bandwidth_bytes_per_s, fixed_overhead_s }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.bandwidth_bytes_per_s.is_finite() && self.bandwidth_bytes_per_s > 0.0) {
            return Err(CostError::InvalidProfile("bandwidth must be finite and > 0"));
        }
        if !(self.fixed_overhead_s.is_finite() && self.fixed_overhead_s >= 0.0) {
            return Err(CostError::InvalidProfile("fixed overhead must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Measured per-unit latency table bound to one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredProfile {
    pub model: String,
    pub latencies: Vec<f64>,
}

impl MeasuredProfile {
    /// Parse `unit_index,latency_seconds` rows (header optional). Indices
    /// must cover 0..n-1 exactly once.
    pub fn from_csv(text: &str, model: impl Into<String>) -> Result<Self, CostError> {
        let mut entries: Vec<Option<f64>> = Vec::new();
        for (li, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || (li == 0 && line.starts_with("unit_index")) {
                continue;
            }
            let parse = || -> Option<(usize, f64)> {
                let (a, b) = line.split_once(',')?;
                let idx: usize = a.trim().parse().ok()?;
                let lat: f64 = b.trim().parse().ok()?;
                (lat.is_finite() && lat > 0.0).then_some((idx, lat))
            };
            let (idx, lat) = parse().ok_or(CostError::ParseError { line: li + 1 })?;
            if entries.len() <= idx {
                entries.resize(idx + 1, None);
            }
            if entries[idx].is_some() {
                return Err(CostError::ParseError { line: li + 1 });
            }
            entries[idx] = Some(lat);
        }
        let mut latencies = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            latencies.push(e.ok_or(CostError::MissingUnit(i))?);
        }
        Ok(MeasuredProfile { model: model.into(), latencies })
    }
}

/// Anything that can price one unit of a model.
pub trait UnitCostModel {
    fn unit_latency(&self, model: &CnnModel, unit: usize) -> Result<f64, CostError>;

    /// Identifier recorded in reports and provenance blocks.
    fn label(&self) -> &str;
}

impl UnitCostModel for DeviceProfile {
    fn unit_latency(&self, model: &CnnModel, unit: usize) -> Result<f64, CostError> {
        let u = model
            .units
            .get(unit)
            .ok_or(CostError::IndexOutOfRange { index: unit, len: model.units.len() })?;
        unit_latency(self, u)
    }

    fn label(&self) -> &str {
        &self.name
    }
}

impl UnitCostModel for MeasuredProfile {
    fn unit_latency(&self, model: &CnnModel, unit: usize) -> Result<f64, CostError> {
        if self.model != model.name || self.latencies.len() != model.units.len() {
            return Err(CostError::ModelMismatch { expected: self.model.clone(), got: model.name.clone() });
        }
        self.latencies
            .get(unit)
            .copied()
            .ok_or(CostError::IndexOutOfRange { index: unit, len: self.latencies.len() })
    }

    fn label(&self) -> &str {
        &self.model
    }
}

/// Parametric latency of one unit: the per-layer sum plus the residual
/// penalty when the unit carries a shortcut.
pub fn unit_latency(profile: &DeviceProfile, unit: &AtomicUnit) -> Result<f64, CostError> {
    let stats = unit_layer_stats(unit)?;
    let mut t = 0.0;
    for s in &stats {
        let c = profile.kinds.get(&s.kind).ok_or(CostError::MissingKind(s.kind))?;
        let bytes = (s.in_bytes + s.out_bytes + s.weight_bytes) as f64;
        t += c.alpha * s.macs as f64 + c.beta * bytes + c.gamma;
    }
    if unit.has_residual {
        t += profile.residual_penalty;
    }
    Ok(t)
}

/// Time to move `bytes` across the link.
pub fn transfer_time(link: &LinkProfile, bytes: u64) -> f64 {
    link.fixed_overhead_s + bytes as f64 / link.bandwidth_bytes_per_s
}

/// Bytes crossing the device boundary at split index k. The raw input
/// crosses as 8-bit pixels; any unit output crosses as INT8 elements plus a
/// 4-byte dequantization scale.
pub fn cut_bytes(model: &CnnModel, k: usize) -> Result<u64, CostError> {
    let l = model.units.len();
    if k > l {
        return Err(CostError::IndexOutOfRange { index: k, len: l + 1 });
    }
    if k == 0 {
        return Ok(model.input_shape.elements());
    }
    let out = model.units[k - 1].out_shape.ok_or(CostError::ShapesMissing)?;
    Ok(out.elements() + 4)
}
