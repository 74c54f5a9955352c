//! Labeled training corpus: random models, oracle cumulative-latency
//! labels, optimal-split targets, newline-delimited JSON serialization,
//! and seeded train/test splitting.
//!
//! Labels come from the same cost-model and pipeline arithmetic the
//! planner uses — summed in the same order — so the stored optimal index
//! is bitwise re-derivable from the stored label vectors.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn_ir::{CnnError, CnnModel, EdgeDirection};
use crate::cost_model::{DeviceProfile, LinkProfile};
use crate::gnn::{predict_split_from_latency, GnnError, GraphSample};
use crate::model_zoo::{generate_random, GeneratorConfig, ZooError};
use crate::pipeline::{cut_transfers, optimal_from_parts, unit_latencies, PipelineError, TransferPath};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    Zoo(ZooError),
    Cnn(CnnError),
    Pipeline(PipelineError),
    Sample(GnnError),
    ParseError { line: usize },
    LabelMismatch { stored: usize, derived: usize },
    EmptyDataset,
    InvalidParam(&'static str),
}

impl core::fmt::Display for DatasetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DatasetError::Zoo(e) => write!(f, "{e}"),
            DatasetError::Cnn(e) => write!(f, "{e}"),
            DatasetError::Pipeline(e) => write!(f, "{e}"),
            DatasetError::Sample(e) => write!(f, "{e}"),
            DatasetError::ParseError { line } => write!(f, "dataset parse error on line {line}"),
            DatasetError::LabelMismatch { stored, derived } => {
                write!(f, "stored optimal index {stored} but labels give {derived}")
            }
            DatasetError::EmptyDataset => write!(f, "dataset is empty"),
            DatasetError::InvalidParam(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DatasetError {}

impl From<ZooError> for DatasetError {
    fn from(e: ZooError) -> Self {
        DatasetError::Zoo(e)
    }
}

impl From<CnnError> for DatasetError {
    fn from(e: CnnError) -> Self {
        DatasetError::Cnn(e)
    }
}

impl From<PipelineError> for DatasetError {
    fn from(e: PipelineError) -> Self {
        DatasetError::Pipeline(e)
    }
}

impl From<GnnError> for DatasetError {
    fn from(e: GnnError) -> Self {
        DatasetError::Sample(e)
    }
}

/// Where a record's labels came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_seed: u64,
    pub dpu_profile: String,
    pub gpu_profile: String,
    pub link: LinkProfile,
    pub path: TransferPath,
}

/// One corpus entry: the model, its encoded sample, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub model: CnnModel,
    pub sample: GraphSample,
    pub provenance: Provenance,
}

impl DatasetRecord {
    /// Structural checks plus label consistency: the stored optimal index
    /// must be the argmin of the max-rule over the stored label vectors.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.sample.validate()?;
        let derived = predict_split_from_latency(
            &self.sample.dpu_cum_latency,
            &self.sample.gpu_cum_latency,
            &self.sample.transfer,
            self.provenance.path,
        )?;
        if derived != self.sample.optimal_index {
            return Err(DatasetError::LabelMismatch { stored: self.sample.optimal_index, derived });
        }
        Ok(())
    }

    /// Full re-derivation: encode the embedded model under the given
    /// profiles and require an identical sample.
    pub fn rederive(
        &self,
        dpu: &DeviceProfile,
        gpu: &DeviceProfile,
        link: &LinkProfile,
    ) -> Result<(), DatasetError> {
        let fresh = encode_sample(&self.model, dpu, gpu, link, self.provenance.path)?;
        if fresh != self.sample {
            return Err(DatasetError::LabelMismatch {
                stored: self.sample.optimal_index,
                derived: fresh.optimal_index,
            });
        }
        Ok(())
    }
}

/// Encode one model into a labeled sample under the given oracle.
pub fn encode_sample(
    model: &CnnModel,
    dpu: &DeviceProfile,
    gpu: &DeviceProfile,
    link: &LinkProfile,
    path: TransferPath,
) -> Result<GraphSample, DatasetError> {
    let features = model.encode_features()?;
    let forward_edges = model.build_graph(EdgeDirection::Forward)?.edges;
    let reverse_edges = model.build_graph(EdgeDirection::Reverse)?.edges;
    let dpu_lat = unit_latencies(model, dpu)?;
    let gpu_lat = unit_latencies(model, gpu)?;
    let transfer = cut_transfers(model, link)?;
    let l = dpu_lat.len();
    // Ascending partial sums, the same order the pipeline stage times use,
    // so label arithmetic reproduces planner arithmetic bit for bit.
    let mut dpu_cum = Vec::with_capacity(l);
    let mut gpu_cum = Vec::with_capacity(l);
    for i in 0..l {
        let mut prefix = 0.0;
        for &t in &dpu_lat[..=i] {
            prefix += t;
        }
        dpu_cum.push(prefix);
        let mut suffix = 0.0;
        for &t in &gpu_lat[i..] {
            suffix += t;
        }
        gpu_cum.push(suffix);
    }
    let optimal_index = optimal_from_parts(&dpu_lat, &gpu_lat, &transfer, path).split_index;
    Ok(GraphSample {
        features,
        forward_edges,
        reverse_edges,
        dpu_cum_latency: dpu_cum,
        gpu_cum_latency: gpu_cum,
        transfer,
        optimal_index,
    })
}

/// Generate `n` labeled records from generator seeds `seed..seed+n-1`.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    dpu: &DeviceProfile,
    gpu: &DeviceProfile,
    link: &LinkProfile,
    path: TransferPath,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::InvalidParam("record count must be >= 1"));
    }
    (0..n as u64)
        .map(|i| {
            let generator_seed = seed.wrapping_add(i);
            let model = generate_random(&GeneratorConfig::new(generator_seed))?;
            let sample = encode_sample(&model, dpu, gpu, link, path)?;
            Ok(DatasetRecord {
                model,
                sample,
                provenance: Provenance {
                    generator_seed,
                    dpu_profile: dpu.name.clone(),
                    gpu_profile: gpu.name.clone(),
                    link: link.clone(),
                    path,
                },
            })
        })
        .collect()
}

/// Seeded shuffle, then split: first `fraction` of the order trains, the
/// rest tests. Disjoint and exhaustive.
pub fn split_train_test(
    records: &[DatasetRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidParam("fraction must lie in (0, 1)"));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = libm::round(n as f64 * fraction) as usize;
    if n > 1 {
        n_train = n_train.clamp(1, n - 1);
    } else {
        n_train = 1;
    }
    let train = order[..n_train].iter().map(|&i| records[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, test))
}

/// One record per line as JSON.
pub fn to_ndjson(records: &[DatasetRecord]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for (i, record) in records.iter().enumerate() {
        let line = serde_json::to_string(record).map_err(|_| DatasetError::ParseError { line: i + 1 })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parse and re-validate a newline-delimited corpus; empty text is an
/// empty dataset. Line numbers are 1-based. Unit shapes are not part of
/// the wire format, so each embedded model is re-inferred on load.
pub fn from_ndjson(text: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let DatasetRecord { model, sample, provenance } =
            serde_json::from_str(line).map_err(|_| DatasetError::ParseError { line: i + 1 })?;
        let record = DatasetRecord { model: model.infer_shapes()?, sample, provenance };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
