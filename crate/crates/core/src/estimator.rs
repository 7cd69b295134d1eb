//! FPGA resource and latency surrogates.
//!
//! [`RuleBasedEstimator`] is a deterministic closed-form model of a fully
//! unrolled dense-layer pipeline. [`LinearSurrogate`] evaluates externally
//! fitted per-metric linear models over a small network feature vector. Both
//! produce the same [`ResourceEstimate`] and are interchangeable behind
//! [`ResourceEstimator`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ir::{ceil_log2, ActivationKind, LayerKind, NetworkDescription};

/// Bits in one 36Kb block RAM.
pub const BRAM_BITS: f64 = 36_864.0;
/// Weight storage up to this many bits stays in fabric registers.
pub const ON_CHIP_WEIGHT_BITS: f64 = (1u64 << 18) as f64;
/// Entries in a tanh/sigmoid lookup table.
pub const ACT_TABLE_ENTRIES: f64 = 1024.0;
/// Index/interpolation logic per tanh/sigmoid neuron.
pub const ACT_TABLE_LUTS: f64 = 64.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub bram: f64,
    pub dsp: f64,
    pub ff: f64,
    pub lut: f64,
    pub ii_cycles: f64,
    pub latency_cycles: f64,
}

impl ResourceEstimate {
    pub fn is_valid(&self) -> bool {
        [
            self.bram,
            self.dsp,
            self.ff,
            self.lut,
            self.ii_cycles,
            self.latency_cycles,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub lut_capacity: u64,
    pub ff_capacity: u64,
    pub dsp_capacity: u64,
    pub bram_capacity: u64,
    pub clock_period_ns: f64,
}

impl DeviceProfile {
    /// Xilinx Virtex UltraScale+ VU13P at a 5 ns clock.
    pub fn vu13p() -> Self {
        Self {
            name: "vu13p".into(),
            lut_capacity: 1_728_000,
            ff_capacity: 3_456_000,
            dsp_capacity: 12_288,
            bram_capacity: 2_688,
            clock_period_ns: 5.0,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "vu13p" | "xcvu13p" => Some(Self::vu13p()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lut_capacity == 0
            || self.ff_capacity == 0
            || self.dsp_capacity == 0
            || self.bram_capacity == 0
        {
            return Err(format!("device `{}` has a zero capacity", self.name));
        }
        if !(self.clock_period_ns > 0.0 && self.clock_period_ns.is_finite()) {
            return Err(format!("device `{}` needs a positive clock period", self.name));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Latency,
    /// Weights always live in block RAM.
    Resource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub reuse_factor: u32,
    pub strategy: Strategy,
    /// Multipliers wider than this many bits map to DSP slices.
    pub dsp_bit_threshold: u32,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            reuse_factor: 1,
            strategy: Strategy::Latency,
            dsp_bit_threshold: 10,
        }
    }
}

pub trait ResourceEstimator: Send + Sync {
    fn estimate(&self, net: &NetworkDescription) -> ResourceEstimate;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleBasedEstimator {
    pub cfg: EstimatorConfig,
}

impl RuleBasedEstimator {
    pub fn new(cfg: EstimatorConfig) -> Self {
        assert!(cfg.reuse_factor >= 1, "reuse factor must be at least 1");
        Self { cfg }
    }

    /// Multipliers instantiated for all dense layers.
    pub fn multiplier_count(&self, net: &NetworkDescription) -> f64 {
        let r = f64::from(self.cfg.reuse_factor);
        net.dense_layers()
            .map(|(l, n, m)| ((1.0 - l.sparsity) * (n * m) as f64 / r).ceil())
            .sum()
    }
}

impl ResourceEstimator for RuleBasedEstimator {
    /// Per dense layer `n -> m` with bits `bw`/`ba`, sparsity `s`, reuse `R`:
    ///
    /// * multipliers `ceil(m·n·(1-s)/R)`: one DSP each when
    ///   `max(bw, ba) > dsp_bit_threshold`, otherwise `bw·ba` LUTs each
    /// * adder tree `m·(n-1)·max(bw, ba)/R` LUTs
    /// * pipeline registers `m·(bw + ba)` FFs
    /// * `ceil(log2 n) + 1 + (R - 1)` cycles
    ///
    /// Batch norm is `d` multipliers, `d` adders, `d·(bw+ba)` FFs and one
    /// cycle. ReLU costs `d·ba` LUTs; tanh/sigmoid cost a shared
    /// `1024 x ba`-bit table (as a fraction of a BRAM) plus 64 LUTs per
    /// neuron. Every dense or batch-norm stage adds one interface register
    /// cycle. Weights and biases spill to BRAM once they exceed 2^18 bits
    /// (always under the resource strategy). II is `R` for `R > 1`, else 1.
    fn estimate(&self, net: &NetworkDescription) -> ResourceEstimate {
        let r = f64::from(self.cfg.reuse_factor);
        let thr = self.cfg.dsp_bit_threshold;
        let mut e = ResourceEstimate::default();
        let mut stages = 0u32;
        let mut cycles = 0.0;
        let mut weight_bits = 0.0;
        let mut width = net.input_dim().unwrap_or(0) as f64;

        for layer in &net.layers {
            let bw = f64::from(layer.weight_bits);
            let ba = f64::from(layer.act_bits);
            let wide = layer.weight_bits.max(layer.act_bits) > thr;
            let widest = bw.max(ba);
            match layer.kind {
                LayerKind::Dense { in_dim, out_dim } => {
                    let (n, m) = (in_dim as f64, out_dim as f64);
                    let nonzero = (1.0 - layer.sparsity) * n * m;
                    let mults = (nonzero / r).ceil();
                    if wide {
                        e.dsp += mults;
                    } else {
                        e.lut += mults * bw * ba;
                    }
                    e.lut += m * (n - 1.0) * widest / r;
                    e.ff += m * (bw + ba);
                    cycles += f64::from(ceil_log2(in_dim)) + 1.0 + (r - 1.0);
                    weight_bits += nonzero.round() * bw + m * bw;
                    stages += 1;
                    width = m;
                }
                LayerKind::BatchNorm { dim } => {
                    let d = dim as f64;
                    if wide {
                        e.dsp += d;
                    } else {
                        e.lut += d * bw * ba;
                    }
                    e.lut += d * widest;
                    e.ff += d * (bw + ba);
                    cycles += 1.0;
                    stages += 1;
                    width = d;
                }
                LayerKind::Activation { activation } => match activation {
                    ActivationKind::Relu => e.lut += width * ba,
                    ActivationKind::Tanh | ActivationKind::Sigmoid => {
                        e.bram += ACT_TABLE_ENTRIES * ba / BRAM_BITS;
                        e.lut += ACT_TABLE_LUTS * width;
                    }
                },
                LayerKind::Dropout { .. } => {}
            }
        }
        let spill = match self.cfg.strategy {
            Strategy::Latency => weight_bits > ON_CHIP_WEIGHT_BITS,
            Strategy::Resource => weight_bits > 0.0,
        };
        if spill {
            e.bram += (weight_bits / BRAM_BITS).ceil();
        }
        if stages > 0 {
            e.latency_cycles = cycles + f64::from(stages);
            e.ii_cycles = if self.cfg.reuse_factor > 1 { r } else { 1.0 };
        }
        e
    }
}

pub fn utilization_pct(count: f64, capacity: u64) -> f64 {
    100.0 * count / capacity as f64
}

/// Mean of the BRAM, DSP, FF and LUT utilization percentages.
pub fn avg_resource_pct(est: &ResourceEstimate, device: &DeviceProfile) -> f64 {
    25.0 * (est.bram / device.bram_capacity as f64
        + est.dsp / device.dsp_capacity as f64
        + est.ff / device.ff_capacity as f64
        + est.lut / device.lut_capacity as f64)
}

pub fn latency_ns(est: &ResourceEstimate, device: &DeviceProfile) -> f64 {
    est.latency_cycles * device.clock_period_ns
}

pub fn ii_ns(est: &ResourceEstimate, device: &DeviceProfile) -> f64 {
    est.ii_cycles * device.clock_period_ns
}

pub const SURROGATE_VERSION: u64 = 1;
pub const SURROGATE_FEATURES: [&str; 6] = [
    "dense_layers",
    "total_params",
    "max_width",
    "total_mults",
    "bits",
    "reuse_factor",
];
pub const METRICS: [&str; 6] = ["bram", "dsp", "ff", "lut", "ii_cycles", "latency_cycles"];

/// Feature vector of a network, in [`SURROGATE_FEATURES`] order: dense layer
/// count, parameter count, widest dense dimension, non-zero multiplies,
/// widest weight precision, reuse factor.
pub fn surrogate_features(net: &NetworkDescription, reuse_factor: u32) -> [f64; 6] {
    let dense: Vec<_> = net.dense_layers().collect();
    let max_width = dense.iter().map(|&(_, n, m)| n.max(m)).max().unwrap_or(0);
    let mults: f64 = dense
        .iter()
        .map(|&(l, n, m)| (1.0 - l.sparsity) * (n * m) as f64)
        .sum();
    let bits = net.layers.iter().map(|l| l.weight_bits).max().unwrap_or(0);
    [
        dense.len() as f64,
        net.param_count() as f64,
        max_width as f64,
        mults,
        f64::from(bits),
        f64::from(reuse_factor),
    ]
}

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("surrogate file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: [f64; 6],
}

impl LinearModel {
    pub fn predict(&self, x: &[f64; 6]) -> f64 {
        let y = self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        if y.is_finite() {
            y.max(0.0)
        } else {
            0.0
        }
    }
}

/// Per-metric linear models over [`surrogate_features`], clamped at zero.
///
/// File schema:
///
/// ```json
/// {
///   "version": 1,
///   "reuse_factor": 1,
///   "features": ["dense_layers", "total_params", "max_width", "total_mults", "bits", "reuse_factor"],
///   "metrics": {
///     "bram": {"intercept": 0.0, "weights": [0, 0, 0, 0, 0, 0]},
///     "dsp": {...}, "ff": {...}, "lut": {...}, "ii_cycles": {...}, "latency_cycles": {...}
///   }
/// }
/// ```
///
/// `reuse_factor` and `features` are optional; `weights` defaults to zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSurrogate {
    pub reuse_factor: u32,
    pub models: [LinearModel; 6],
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> SurrogateError {
    SurrogateError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

impl LinearSurrogate {
    pub fn from_json(value: &Value) -> Result<Self, SurrogateError> {
        let obj = value.as_object().ok_or_else(|| schema("$", "expected an object"))?;
        match obj.get("version").and_then(Value::as_u64) {
            Some(SURROGATE_VERSION) => {}
            Some(v) => return Err(schema("version", format!("unsupported version {v}"))),
            None => return Err(schema("version", "missing or not an integer")),
        }
        let reuse_factor = match obj.get("reuse_factor") {
            None => 1,
            Some(v) => v
                .as_u64()
                .filter(|&r| r >= 1 && r <= u64::from(u32::MAX))
                .ok_or_else(|| schema("reuse_factor", "expected a positive integer"))?
                as u32,
        };
        if let Some(features) = obj.get("features") {
            let names: Option<Vec<&str>> = features
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).collect());
            if names.as_deref() != Some(&SURROGATE_FEATURES[..]) {
                return Err(schema(
                    "features",
                    format!("must be {SURROGATE_FEATURES:?}"),
                ));
            }
        }
        let metrics = obj
            .get("metrics")
            .and_then(Value::as_object)
            .ok_or_else(|| schema("metrics", "missing or not an object"))?;
        if let Some(unknown) = metrics.keys().find(|k| !METRICS.contains(&k.as_str())) {
            return Err(schema(format!("metrics.{unknown}"), "unknown metric"));
        }
        let mut models: [LinearModel; 6] = Default::default();
        for (slot, name) in models.iter_mut().zip(METRICS) {
            let field = format!("metrics.{name}");
            let rec = metrics
                .get(name)
                .and_then(Value::as_object)
                .ok_or_else(|| schema(&field, "missing metric record"))?;
            slot.intercept = rec
                .get("intercept")
                .and_then(Value::as_f64)
                .ok_or_else(|| schema(format!("{field}.intercept"), "missing or not a number"))?;
            if let Some(w) = rec.get("weights") {
                let w: Vec<f64> = w
                    .as_array()
                    .and_then(|a| a.iter().map(Value::as_f64).collect())
                    .ok_or_else(|| schema(format!("{field}.weights"), "expected an array of numbers"))?;
                if w.len() != SURROGATE_FEATURES.len() {
                    return Err(schema(
                        format!("{field}.weights"),
                        format!("expected {} weights, found {}", SURROGATE_FEATURES.len(), w.len()),
                    ));
                }
                slot.weights.copy_from_slice(&w);
            }
        }
        Ok(Self {
            reuse_factor,
            models,
        })
    }

    pub fn to_json(&self) -> Value {
        let metrics: serde_json::Map<String, Value> = METRICS
            .iter()
            .zip(&self.models)
            .map(|(name, m)| {
                (
                    name.to_string(),
                    serde_json::json!({"intercept": m.intercept, "weights": m.weights}),
                )
            })
            .collect();
        serde_json::json!({
            "version": SURROGATE_VERSION,
            "reuse_factor": self.reuse_factor,
            "features": SURROGATE_FEATURES,
            "metrics": metrics,
        })
    }
}

pub fn load_linear_surrogate(path: &Path) -> Result<LinearSurrogate, SurrogateError> {
    let text = std::fs::read_to_string(path).map_err(|source| SurrogateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LinearSurrogate::from_json(&serde_json::from_str(&text)?)
}

impl ResourceEstimator for LinearSurrogate {
    fn estimate(&self, net: &NetworkDescription) -> ResourceEstimate {
        let x = surrogate_features(net, self.reuse_factor);
        let [bram, dsp, ff, lut, ii, lat] = &self.models;
        ResourceEstimate {
            bram: bram.predict(&x),
            dsp: dsp.predict(&x),
            ff: ff.predict(&x),
            lut: lut.predict(&x),
            ii_cycles: ii.predict(&x),
            latency_cycles: lat.predict(&x),
        }
    }
}
