//! Static parameter and FLOP accounting.
//!
//! Convention: one multiply-accumulate is 2 FLOPs. Elementwise passes
//! (bias, batch norm, ReLU, residual add, partition sum, pooling, attention
//! scaling) cost 1 FLOP per element. Frame selection is free. Counts are
//! per sample.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::BlockSpec;
use crate::model::{ModelConfig, Network};
use crate::Scalar;

pub const CONVENTION: &str = "MAC=2 FLOPs; elementwise, norm, activation and pooling passes 1 FLOP/element; per sample";

/// Where a row sits relative to the attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PreAttention,
    Attention,
    PostAttention,
    Head,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub stage: Stage,
    pub params: u64,
    pub flops: u64,
    /// `(C, T, N)` leaving the layer, or `(K,)` for the head.
    pub output_shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostMeta {
    pub input_shape: [usize; 3],
    pub frames: usize,
    pub t_prime: Option<usize>,
    pub joints: usize,
    pub streams: usize,
    pub convention: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
    pub meta: CostMeta,
}

fn block_cost(spec: &BlockSpec, t: usize) -> (u64, u64, usize) {
    let (ci, co, n, kt) = (spec.c_in as u64, spec.c_out as u64, spec.joints as u64, spec.k_t as u64);
    let t_in = t as u64;
    let mut params = 3 * (co * ci + n * n);
    let mut flops = 3 * 2 * co * ci * t_in * n // three 1×1 convolutions
        + 3 * n * n // mask combination
        + 3 * 2 * co * t_in * n * n // adjacency contraction
        + 2 * co * t_in * n; // partition sum
    if spec.spatial_bias {
        params += co;
        flops += co * t_in * n;
    }
    // batch norm then ReLU
    params += 2 * co;
    flops += 2 * co * t_in * n;
    if !spec.use_temporal {
        return (params, flops, t);
    }
    let t_out = spec.output_len(t).expect("validated extent");
    let to = t_out as u64;
    params += co * co * kt + co + 2 * co;
    flops += 2 * co * co * kt * to * n + co * to * n // convolution and bias
        + co * to * n; // batch norm
    if spec.use_residual {
        if spec.c_in != spec.c_out || spec.stride != 1 {
            params += co * ci;
            flops += 2 * co * ci * to * n;
        }
        flops += co * to * n;
    }
    flops += co * to * n; // ReLU
    (params, flops, t_out)
}

/// Analytic cost of the network `config` describes.
pub fn analyze(config: &ModelConfig) -> Result<CostReport> {
    config.validate()?;
    let n = config.num_joints;
    let mut rows = Vec::new();
    let mut t = config.sequence_length;
    // without an attention module every layer sees the full extent
    let mut stage = Stage::PreAttention;
    let mut c = config.input_channels;
    for (i, spec) in config.block_specs().iter().enumerate() {
        if let Some(tam) = config.tam.filter(|tam| tam.after_layer == i) {
            let (cl, tl, nl) = (c as u64, t as u64, n as u64);
            // frame mean, Θh, sigmoid, scaling, ReLU
            let flops = cl * tl * nl + 2 * tl * tl + tl + 2 * cl * tl * nl;
            rows.push(CostRow {
                name: "tam".into(),
                stage: Stage::Attention,
                params: tl * tl,
                flops,
                output_shape: vec![c, tam.t_prime, n],
            });
            t = tam.t_prime;
            stage = Stage::PostAttention;
        }
        let (params, flops, t_out) = block_cost(spec, t);
        rows.push(CostRow {
            name: format!("layer{}", i + 1),
            stage,
            params,
            flops,
            output_shape: vec![spec.c_out, t_out, n],
        });
        t = t_out;
        c = spec.c_out;
    }
    let (cl, k) = (c as u64, config.num_classes as u64);
    let mut head_params = k * cl;
    let mut head_flops = cl * t as u64 * n as u64 + 2 * k * cl;
    if config.classifier_bias {
        head_params += k;
        head_flops += k;
    }
    rows.push(CostRow {
        name: "head".into(),
        stage: Stage::Head,
        params: head_params,
        flops: head_flops,
        output_shape: vec![config.num_classes],
    });
    Ok(CostReport {
        name: config.name.clone(),
        total_params: rows.iter().map(|r| r.params).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        rows,
        meta: CostMeta {
            input_shape: [config.input_channels, config.sequence_length, n],
            frames: config.sequence_length,
            t_prime: config.tam.map(|t| t.t_prime),
            joints: n,
            streams: 1,
            convention: CONVENTION.into(),
        },
    })
}

/// Learnable scalars actually held by the network.
pub fn count_params<S: Scalar>(network: &Network<S>) -> u64 {
    network.param_count() as u64
}

pub fn count_flops<S: Scalar>(network: &Network<S>) -> u64 {
    analyze(network.config())
        .expect("built networks have valid configs")
        .total_flops
}

impl CostReport {
    /// `k` independent copies, as in a k-stream ensemble. Score fusion is
    /// not counted.
    pub fn streams(&self, k: usize) -> Self {
        let k64 = k as u64;
        let scale = |r: &CostRow| CostRow {
            params: r.params * k64,
            flops: r.flops * k64,
            ..r.clone()
        };
        let mut meta = self.meta.clone();
        meta.streams = self.meta.streams * k;
        Self {
            name: format!("{}s-{}", meta.streams, self.name),
            rows: self.rows.iter().map(scale).collect(),
            total_params: self.total_params * k64,
            total_flops: self.total_flops * k64,
            meta,
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn stage_flops(&self, stage: Stage) -> u64 {
        self.rows.iter().filter(|r| r.stage == stage).map(|r| r.flops).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}  input {:?}  T'={}  streams={}",
            self.name,
            self.meta.input_shape,
            self.meta.t_prime.map_or("-".into(), |t| t.to_string()),
            self.meta.streams
        );
        let _ = writeln!(
            out,
            "{:<10} {:<15} {:>12} {:>16}  output",
            "row", "stage", "params", "flops"
        );
        for r in &self.rows {
            let stage = serde_json::to_value(r.stage).expect("stage serializes");
            let _ = writeln!(
                out,
                "{:<10} {:<15} {:>12} {:>16}  {:?}",
                r.name,
                stage.as_str().unwrap_or(""),
                r.params,
                r.flops,
                r.output_shape
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:<15} {:>12} {:>16}",
            "total", "", self.total_params, self.total_flops
        );
        let _ = writeln!(
            out,
            "= {:.3}M params, {:.3}G FLOPs ({})",
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9,
            self.meta.convention
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub params_ratio: f64,
    pub flops_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioTable {
    pub baseline: String,
    pub rows: Vec<RatioRow>,
}

/// Divides every report's totals by those of the report named `baseline`.
pub fn compare(reports: &[CostReport], baseline: &str) -> Result<RatioTable> {
    if reports.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least two reports, got {}",
            reports.len()
        )));
    }
    let base = reports
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| Error::Config(format!("no report named {baseline:?} to compare against")))?;
    let rows = reports
        .iter()
        .map(|r| RatioRow {
            name: r.name.clone(),
            params: r.total_params,
            flops: r.total_flops,
            params_ratio: r.total_params as f64 / base.total_params as f64,
            flops_ratio: r.total_flops as f64 / base.total_flops as f64,
        })
        .collect();
    Ok(RatioTable {
        baseline: baseline.to_string(),
        rows,
    })
}

impl RatioTable {
    pub fn row(&self, name: &str) -> Option<&RatioRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ratios against {}", self.baseline);
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>16} {:>8} {:>8}",
            "model", "params", "flops", "xparams", "xflops"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>12} {:>16} {:>8.2} {:>8.2}",
                r.name, r.params, r.flops, r.params_ratio, r.flops_ratio
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ratio table serializes")
    }
}

/// A published cost ratio against the single-stream attention network at
/// T' = 150 on NTU input. Quoted, not recomputed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PublishedRatio {
    pub method: &'static str,
    pub flops: f64,
    pub params: f64,
}

pub const PUBLISHED_RATIOS: [PublishedRatio; 5] = [
    PublishedRatio {
        method: "ST-GCN",
        flops: 2.9,
        params: 1.3,
    },
    PublishedRatio {
        method: "AS-GCN",
        flops: 6.3,
        params: 3.2,
    },
    PublishedRatio {
        method: "2s-AGCN",
        flops: 6.6,
        params: 3.0,
    },
    PublishedRatio {
        method: "DGNN",
        flops: 12.6,
        params: 3.6,
    },
    PublishedRatio {
        method: "GCN-NAS",
        flops: 19.3,
        params: 8.9,
    },
];

/// Published totals of the canonical attention network (T' = 150).
pub const PUBLISHED_TAGCN_FLOPS: f64 = 5.64e9;
pub const PUBLISHED_TAGCN_PARAMS: f64 = 2.24e6;

pub fn published_table() -> String {
    let mut out = String::from("published ratios (quoted, not recomputed)\n");
    for p in PUBLISHED_RATIOS {
        let _ = writeln!(out, "{:<14} x{:<6} x{}", p.method, p.flops, p.params);
    }
    out
}
