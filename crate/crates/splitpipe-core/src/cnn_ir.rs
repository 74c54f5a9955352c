//! CNN models as ordered atomic units with shape inference, cost statistics
//! and the graph/feature encoding consumed by the split predictor.
//!
//! An atomic unit is the smallest splittable element: a single layer, or a
//! residual block that is never split internally. A model is a chain of
//! units; split index k assigns the first k units to the first-stage device.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

/// Number of entries in a node feature row: one-hot kind (6) plus kernel,
/// input height/width, output channels, output/input widths and position.
pub const NUM_FEATURES: usize = 13;

/// Feature normalization constants, in feature order after the one-hot block.
pub const NORM_KERNEL: f64 = 7.0;
pub const NORM_IN_H: f64 = 224.0;
pub const NORM_IN_W: f64 = 224.0;
pub const NORM_OUT_CH: f64 = 2048.0;
pub const NORM_OUT_DIM: f64 = 4096.0;
pub const NORM_IN_DIM: f64 = 4096.0;

/// The six supported layer kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    ReLU,
    Linear,
    AvgPool,
    MaxPool,
    Flatten,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv,
        LayerKind::ReLU,
        LayerKind::Linear,
        LayerKind::AvgPool,
        LayerKind::MaxPool,
        LayerKind::Flatten,
    ];

    /// Position in the one-hot block of the feature vector.
    pub fn one_hot_index(self) -> usize {
        match self {
            LayerKind::Conv => 0,
            LayerKind::ReLU => 1,
            LayerKind::Linear => 2,
            LayerKind::AvgPool => 3,
            LayerKind::MaxPool => 4,
            LayerKind::Flatten => 5,
        }
    }

    /// Kinds that carry a kernel and walk a spatial window.
    pub fn is_windowed(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::AvgPool | LayerKind::MaxPool)
    }
}

/// One layer inside an atomic unit.
///
/// Convention for unused fields: windowed kinds keep `in_dim`/`out_dim` at 1,
/// Linear keeps `kernel` at 0 and channels at 1, parameter-free kinds keep
/// everything at its neutral value. Shape propagation never reads an unused
/// field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, padding: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            in_dim: 1,
            out_dim: 1,
        }
    }

    pub fn relu() -> Self {
        LayerSpec {
            kind: LayerKind::ReLU,
            kernel: 0,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            in_dim: 1,
            out_dim: 1,
        }
    }

    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Linear,
            kernel: 0,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            in_dim,
            out_dim,
        }
    }

    pub fn avg_pool(kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::AvgPool,
            kernel,
            stride,
            padding,
            in_channels: 1,
            out_channels: 1,
            in_dim: 1,
            out_dim: 1,
        }
    }

    pub fn max_pool(kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel,
            stride,
            padding,
            in_channels: 1,
            out_channels: 1,
            in_dim: 1,
            out_dim: 1,
        }
    }

    pub fn flatten() -> Self {
        LayerSpec {
            kind: LayerKind::Flatten,
            kernel: 0,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            in_dim: 1,
            out_dim: 1,
        }
    }

    /// Kind-specific parameter checks (kernel pools, positive widths).
    pub fn validate(&self) -> Result<(), CnnError> {
        let windowed_kernel = matches!(self.kernel, 1 | 3 | 7);
        match self.kind {
            LayerKind::Conv => {
                if !windowed_kernel || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
                    return Err(CnnError::InvalidLayer { kind: self.kind });
                }
            }
            LayerKind::AvgPool | LayerKind::MaxPool => {
                if !windowed_kernel || self.stride == 0 {
                    return Err(CnnError::InvalidLayer { kind: self.kind });
                }
            }
            LayerKind::Linear => {
                if self.kernel != 0 || self.in_dim == 0 || self.out_dim == 0 {
                    return Err(CnnError::InvalidLayer { kind: self.kind });
                }
            }
            LayerKind::ReLU | LayerKind::Flatten => {
                if self.kernel != 0 {
                    return Err(CnnError::InvalidLayer { kind: self.kind });
                }
            }
        }
        Ok(())
    }
}

/// Shape of the tensor flowing between layers: spatial until Flatten, flat
/// afterwards. Exactly one form is active at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorShape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat { flat: usize },
}

impl TensorShape {
    pub fn spatial(channels: usize, height: usize, width: usize) -> Self {
        TensorShape::Spatial { channels, height, width }
    }

    pub fn flat(flat: usize) -> Self {
        TensorShape::Flat { flat }
    }

    pub fn elements(&self) -> u64 {
        match *self {
            TensorShape::Spatial { channels, height, width } => channels as u64 * height as u64 * width as u64,
            TensorShape::Flat { flat } => flat as u64,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, TensorShape::Spatial { .. })
    }
}

/// The smallest splittable element of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicUnit {
    pub name: String,
    pub has_residual: bool,
    pub layers: Vec<LayerSpec>,
    #[serde(skip)]
    pub in_shape: Option<TensorShape>,
    #[serde(skip)]
    pub out_shape: Option<TensorShape>,
}

impl AtomicUnit {
    pub fn new(name: impl Into<String>, has_residual: bool, layers: Vec<LayerSpec>) -> Self {
        AtomicUnit { name: name.into(), has_residual, layers, in_shape: None, out_shape: None }
    }
}

/// A CNN as an ordered chain of atomic units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub name: String,
    pub input_shape: TensorShape,
    pub units: Vec<AtomicUnit>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CnnError {
    /// A dimension disagreed with what the incoming tensor provides.
    ShapeMismatch { unit: usize, expected: usize, got: usize },
    /// A window left no output pixels, or a layer saw the wrong tensor form.
    DegenerateShape { unit: usize },
    /// Kind-specific parameter rule violated.
    InvalidLayer { kind: LayerKind },
    /// Operation needs infer_shapes to have run.
    ShapesMissing,
    /// Position encoding needs at least two units.
    SingleUnitModel,
    /// A unit must contain at least one layer.
    EmptyUnit { unit: usize },
}

impl core::fmt::Display for CnnError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CnnError::ShapeMismatch { unit, expected, got } => {
                write!(f, "shape mismatch at unit {unit}: expected {expected}, got {got}")
            }
            CnnError::DegenerateShape { unit } => write!(f, "degenerate shape at unit {unit}"),
            CnnError::InvalidLayer { kind } => write!(f, "invalid parameters for {kind:?} layer"),
            CnnError::ShapesMissing => write!(f, "shapes not inferred; run infer_shapes first"),
            CnnError::SingleUnitModel => write!(f, "model must have at least two units"),
            CnnError::EmptyUnit { unit } => write!(f, "unit {unit} has no layers"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CnnError {}

/// Faults raised by single-layer propagation, before a unit index is known.
enum LayerFault {
    Mismatch { expected: usize, got: usize },
    Degenerate,
}

/// Output spatial extent of a window pass: floor((in + 2p - k)/s) + 1.
fn window_out(in_dim: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize, LayerFault> {
    let padded = in_dim + 2 * padding;
    if padded < kernel {
        return Err(LayerFault::Degenerate);
    }
    Ok((padded - kernel) / stride + 1)
}

/// Propagate a shape through one layer.
fn apply_layer(shape: TensorShape, layer: &LayerSpec) -> Result<TensorShape, LayerFault> {
    match layer.kind {
        LayerKind::Conv => match shape {
            TensorShape::Spatial { channels, height, width } => {
                if channels != layer.in_channels {
                    return Err(LayerFault::Mismatch { expected: layer.in_channels, got: channels });
                }
                let h = window_out(height, layer.kernel, layer.stride, layer.padding)?;
                let w = window_out(width, layer.kernel, layer.stride, layer.padding)?;
                Ok(TensorShape::spatial(layer.out_channels, h, w))
            }
            TensorShape::Flat { .. } => Err(LayerFault::Degenerate),
        },
        LayerKind::AvgPool | LayerKind::MaxPool => match shape {
            TensorShape::Spatial { channels, height, width } => {
                let h = window_out(height, layer.kernel, layer.stride, layer.padding)?;
                let w = window_out(width, layer.kernel, layer.stride, layer.padding)?;
                Ok(TensorShape::spatial(channels, h, w))
            }
            TensorShape::Flat { .. } => Err(LayerFault::Degenerate),
        },
        LayerKind::ReLU => Ok(shape),
        LayerKind::Flatten => match shape {
            TensorShape::Spatial { .. } => Ok(TensorShape::flat(shape.elements() as usize)),
            TensorShape::Flat { .. } => Err(LayerFault::Degenerate),
        },
        LayerKind::Linear => match shape {
            TensorShape::Flat { flat } => {
                if flat != layer.in_dim {
                    return Err(LayerFault::Mismatch { expected: layer.in_dim, got: flat });
                }
                Ok(TensorShape::flat(layer.out_dim))
            }
            TensorShape::Spatial { .. } => {
                Err(LayerFault::Mismatch { expected: layer.in_dim, got: shape.elements() as usize })
            }
        },
    }
}

fn fault_at(unit: usize, fault: LayerFault) -> CnnError {
    match fault {
        LayerFault::Mismatch { expected, got } => CnnError::ShapeMismatch { unit, expected, got },
        LayerFault::Degenerate => CnnError::DegenerateShape { unit },
    }
}

impl CnnModel {
    pub fn new(name: impl Into<String>, input_shape: TensorShape, units: Vec<AtomicUnit>) -> Self {
        CnnModel { name: name.into(), input_shape, units }
    }

    /// Walk the chain, populating every unit's in/out shape. Fails on any
    /// dimension disagreement or a window that leaves no output.
    pub fn infer_shapes(mut self) -> Result<Self, CnnError> {
        let mut shape = self.input_shape;
        for (ui, unit) in self.units.iter_mut().enumerate() {
            if unit.layers.is_empty() {
                return Err(CnnError::EmptyUnit { unit: ui });
            }
            for layer in &unit.layers {
                layer.validate()?;
            }
            unit.in_shape = Some(shape);
            for layer in &unit.layers {
                shape = apply_layer(shape, layer).map_err(|e| fault_at(ui, e))?;
            }
            if unit.has_residual && !(unit.in_shape.unwrap().is_spatial() && shape.is_spatial()) {
                // A shortcut only makes sense between spatial tensors.
                return Err(CnnError::DegenerateShape { unit: ui });
            }
            unit.out_shape = Some(shape);
        }
        Ok(self)
    }

    pub fn shapes_inferred(&self) -> bool {
        self.units.iter().all(|u| u.in_shape.is_some() && u.out_shape.is_some())
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    /// One feature row per unit, all entries normalized into [0,1] for
    /// models inside the supported parameter ranges.
    pub fn encode_features(&self) -> Result<Matrix, CnnError> {
        if !self.shapes_inferred() {
            return Err(CnnError::ShapesMissing);
        }
        let l = self.units.len();
        if l < 2 {
            return Err(CnnError::SingleUnitModel);
        }
        let mut m = Matrix::zeros(l, NUM_FEATURES);
        for (ui, unit) in self.units.iter().enumerate() {
            let row = encode_unit(unit, ui, l);
            for (j, v) in row.iter().enumerate() {
                m.set(ui, j, *v);
            }
        }
        Ok(m)
    }

    /// Chain graph over units in the requested direction, with features.
    pub fn build_graph(&self, direction: EdgeDirection) -> Result<ModelGraph, CnnError> {
        let features = self.encode_features()?;
        let l = self.units.len();
        let mut edges = Vec::with_capacity(l.saturating_sub(1));
        for i in 0..l - 1 {
            match direction {
                EdgeDirection::Forward => edges.push((i, i + 1)),
                EdgeDirection::Reverse => edges.push((i + 1, i)),
            }
        }
        Ok(ModelGraph { features, edges, direction })
    }
}

/// A unit's feature row comes from its representative layer: the first Conv,
/// else the first Linear, else the first layer. Output channels come from
/// the unit's own output tensor so block nodes reflect what they emit.
fn representative(unit: &AtomicUnit) -> &LayerSpec {
    unit.layers
        .iter()
        .find(|l| l.kind == LayerKind::Conv)
        .or_else(|| unit.layers.iter().find(|l| l.kind == LayerKind::Linear))
        .unwrap_or(&unit.layers[0])
}

fn encode_unit(unit: &AtomicUnit, position: usize, total: usize) -> [f64; NUM_FEATURES] {
    let rep = representative(unit);
    let mut row = [0.0; NUM_FEATURES];
    row[rep.kind.one_hot_index()] = 1.0;
    row[6] = rep.kernel as f64 / NORM_KERNEL;
    if let Some(TensorShape::Spatial { height, width, .. }) = unit.in_shape {
        row[7] = height as f64 / NORM_IN_H;
        row[8] = width as f64 / NORM_IN_W;
    }
    if let Some(TensorShape::Spatial { channels, .. }) = unit.out_shape {
        row[9] = channels as f64 / NORM_OUT_CH;
    }
    if rep.kind == LayerKind::Linear {
        row[10] = rep.out_dim as f64 / NORM_OUT_DIM;
        row[11] = rep.in_dim as f64 / NORM_IN_DIM;
    }
    row[12] = position as f64 / (total - 1) as f64;
    row
}

/// Direction of the chain edges handed to the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeDirection {
    Forward,
    Reverse,
}

/// Unit-granularity graph of a model: feature rows plus directed chain edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub features: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub direction: EdgeDirection,
}

// ---------------------------------------------------------------------------
// Cost statistics
// ---------------------------------------------------------------------------

/// Aggregate arithmetic and traffic counts for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostStats {
    pub macs: u64,
    pub weight_bytes: u64,
    /// Bytes the unit's output occupies on the wire: INT8 elements + a
    /// 4-byte dequantization scale.
    pub out_bytes: u64,
}

/// Per-layer counts feeding the device latency model. Weights and
/// activations are counted at one byte per element (INT8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerStats {
    pub kind: LayerKind,
    pub macs: u64,
    pub in_bytes: u64,
    pub out_bytes: u64,
    pub weight_bytes: u64,
}

fn layer_stats(layer: &LayerSpec, in_shape: TensorShape, out_shape: TensorShape) -> LayerStats {
    let (macs, weight_bytes) = match layer.kind {
        LayerKind::Conv => {
            let out_px = match out_shape {
                TensorShape::Spatial { height, width, .. } => height as u64 * width as u64,
                TensorShape::Flat { .. } => 0,
            };
            let k2 = (layer.kernel * layer.kernel) as u64;
            let weights = k2 * layer.in_channels as u64 * layer.out_channels as u64;
            (weights * out_px, weights)
        }
        LayerKind::Linear => {
            let weights = layer.in_dim as u64 * layer.out_dim as u64;
            (weights, weights)
        }
        _ => (0, 0),
    };
    LayerStats {
        kind: layer.kind,
        macs,
        in_bytes: in_shape.elements(),
        out_bytes: out_shape.elements(),
        weight_bytes,
    }
}

/// Per-layer cost breakdown for a unit, including the synthesized 1x1
/// projection Conv when a residual shortcut must reshape its input.
pub fn unit_layer_stats(unit: &AtomicUnit) -> Result<Vec<LayerStats>, CnnError> {
    let in_shape = unit.in_shape.ok_or(CnnError::ShapesMissing)?;
    let out_shape = unit.out_shape.ok_or(CnnError::ShapesMissing)?;
    let mut stats = Vec::with_capacity(unit.layers.len() + 1);
    let mut shape = in_shape;
    for layer in &unit.layers {
        let next = apply_layer(shape, layer).map_err(|e| fault_at(0, e))?;
        stats.push(layer_stats(layer, shape, next));
        shape = next;
    }
    if unit.has_residual && in_shape != out_shape {
        if let (
            TensorShape::Spatial { channels: ic, .. },
            TensorShape::Spatial { channels: oc, height, width },
        ) = (in_shape, out_shape)
        {
            // Projection shortcut: 1x1 Conv mapping the unit input onto the
            // output geometry.
            let weights = ic as u64 * oc as u64;
            stats.push(LayerStats {
                kind: LayerKind::Conv,
                macs: weights * height as u64 * width as u64,
                in_bytes: in_shape.elements(),
                out_bytes: out_shape.elements(),
                weight_bytes: weights,
            });
        }
    }
    Ok(stats)
}

/// Aggregate cost statistics for one unit.
pub fn unit_cost_stats(unit: &AtomicUnit) -> Result<CostStats, CnnError> {
    let stats = unit_layer_stats(unit)?;
    let out_shape = unit.out_shape.ok_or(CnnError::ShapesMissing)?;
    Ok(CostStats {
        macs: stats.iter().map(|s| s.macs).sum(),
        weight_bytes: stats.iter().map(|s| s.weight_bytes).sum(),
        out_bytes: out_shape.elements() + 4,
    })
}
