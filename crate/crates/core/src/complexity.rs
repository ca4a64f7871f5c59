//! Parameter, FLOP and temporal receptive-field accounting.
//!
//! Two views are kept side by side: closed-form per-layer costs of the four
//! reference operators (2-D 3×3 conv, 3-D 3×3×3 conv, bilinear module,
//! bottleneck bilinear block), and exact enumeration over an assembled layer
//! stack. FLOPs count one multiply-accumulate as 2 FLOPs.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tb::{temporal_rfs, RfsLayer};

/// The reference operators compared in the closed-form table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Table1Method {
    Conv2d3x3,
    Conv3d3x3x3,
    TbBlock,
    BottleneckTb,
}

impl Table1Method {
    pub const ALL: [Table1Method; 4] = [
        Table1Method::Conv2d3x3,
        Table1Method::Conv3d3x3x3,
        Table1Method::TbBlock,
        Table1Method::BottleneckTb,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Table1Method::Conv2d3x3 => "2D Conv (3x3)",
            Table1Method::Conv3d3x3x3 => "3D Conv (3x3x3)",
            Table1Method::TbBlock => "TB Block",
            Table1Method::BottleneckTb => "Bottleneck TB Block",
        }
    }
}

impl FromStr for Table1Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv2d_3x3" => Ok(Table1Method::Conv2d3x3),
            "conv3d_3x3x3" => Ok(Table1Method::Conv3d3x3x3),
            "tb_block" => Ok(Table1Method::TbBlock),
            "bottleneck_tb" => Ok(Table1Method::BottleneckTb),
            other => Err(Error::contract("table1_formula", format!("unknown method {other:?}"))),
        }
    }
}

/// Closed-form cost of one reference operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaCost {
    /// Coefficient of C² in the parameter count.
    pub coefficient: f64,
    pub params: f64,
    /// Multiply-accumulates: coefficient · Q · C².
    pub macs: f64,
    pub flops: f64,
    pub rfs: usize,
    /// Symbolic form, e.g. `(6 + p/16)C^2 = 7.25C^2`.
    pub expression: String,
}

fn fmt_coef(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').to_string()
    }
}

/// Reference closed forms: 9C², 27C², pC², (6 + p/16)C² with RFS 1, 3, 2, 6.
pub fn table1_formula(method: Table1Method, c: usize, p: usize, q: usize) -> Result<FormulaCost> {
    if c == 0 || p == 0 || q == 0 {
        return Err(Error::contract("table1_formula", "C, p and Q must be at least 1"));
    }
    let pf = p as f64;
    let (coefficient, rfs, expression) = match method {
        Table1Method::Conv2d3x3 => (9.0, 1, "9C^2".to_string()),
        Table1Method::Conv3d3x3x3 => (27.0, 3, "27C^2".to_string()),
        Table1Method::TbBlock => (pf, 2, format!("pC^2 = {}C^2", fmt_coef(pf))),
        Table1Method::BottleneckTb => {
            let coef = 6.0 + pf / 16.0;
            (coef, 6, format!("(6 + p/16)C^2 = {}C^2", fmt_coef(coef)))
        }
    };
    let c2 = (c * c) as f64;
    let macs = coefficient * q as f64 * c2;
    Ok(FormulaCost {
        coefficient,
        params: coefficient * c2,
        macs,
        flops: 2.0 * macs,
        rfs,
        expression,
    })
}

/// Geometry of one learnable layer, enough to count its weights and work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerOp {
    /// Per-frame 2-D convolution; `positions` counts output T·H·W sites.
    Conv2d {
        c_in: usize,
        c_out: usize,
        k: usize,
        positions: usize,
    },
    Conv3d {
        c_in: usize,
        c_out: usize,
        k_t: usize,
        k: usize,
        positions: usize,
    },
    TemporalConv {
        c_in: usize,
        c_out: usize,
        k: usize,
        positions: usize,
    },
    /// Factorized bilinear module with factor weight C_out × p × C_in.
    TbModule {
        c_in: usize,
        c_out: usize,
        p: usize,
        positions: usize,
    },
    BatchNorm {
        c: usize,
        positions: usize,
    },
    /// Scale-only normalization (one γ per channel).
    RmsNorm {
        c: usize,
        positions: usize,
    },
    Linear {
        c_in: usize,
        c_out: usize,
        bias: bool,
    },
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv2d { .. } => "conv2d",
            LayerOp::Conv3d { .. } => "conv3d",
            LayerOp::TemporalConv { .. } => "temporal_conv",
            LayerOp::TbModule { .. } => "tb_module",
            LayerOp::BatchNorm { .. } => "batch_norm",
            LayerOp::RmsNorm { .. } => "rms_norm",
            LayerOp::Linear { .. } => "linear",
        }
    }

    /// Weight-matrix scalars (no biases, no normalization affine terms).
    pub fn weight_params(&self) -> u64 {
        let v = match *self {
            LayerOp::Conv2d { c_in, c_out, k, .. } => c_in * c_out * k * k,
            LayerOp::Conv3d { c_in, c_out, k_t, k, .. } => c_in * c_out * k_t * k * k,
            LayerOp::TemporalConv { c_in, c_out, k, .. } => c_in * c_out * k,
            LayerOp::TbModule { c_in, c_out, p, .. } => c_in * c_out * p,
            LayerOp::BatchNorm { .. } | LayerOp::RmsNorm { .. } => 0,
            LayerOp::Linear { c_in, c_out, .. } => c_in * c_out,
        };
        v as u64
    }

    /// Biases and normalization scale/shift.
    pub fn extra_params(&self) -> u64 {
        match *self {
            LayerOp::BatchNorm { c, .. } => 2 * c as u64,
            LayerOp::RmsNorm { c, .. } => c as u64,
            LayerOp::Linear { c_out, bias: true, .. } => c_out as u64,
            _ => 0,
        }
    }

    pub fn params(&self) -> u64 {
        self.weight_params() + self.extra_params()
    }

    pub fn macs(&self) -> u64 {
        let v = match *self {
            LayerOp::Conv2d { c_in, c_out, k, positions } => positions * c_in * c_out * k * k,
            LayerOp::Conv3d {
                c_in,
                c_out,
                k_t,
                k,
                positions,
            } => positions * c_in * c_out * k_t * k * k,
            LayerOp::TemporalConv { c_in, c_out, k, positions } => positions * c_in * c_out * k,
            // channel mixing to C_out·p, then one product per factor
            LayerOp::TbModule { c_in, c_out, p, positions } => positions * (c_in * c_out * p + c_out * p),
            LayerOp::BatchNorm { c, positions } | LayerOp::RmsNorm { c, positions } => positions * c,
            LayerOp::Linear { c_in, c_out, .. } => c_in * c_out,
        };
        v as u64
    }

    pub fn positions(&self) -> usize {
        match *self {
            LayerOp::Conv2d { positions, .. }
            | LayerOp::Conv3d { positions, .. }
            | LayerOp::TemporalConv { positions, .. }
            | LayerOp::TbModule { positions, .. }
            | LayerOp::BatchNorm { positions, .. }
            | LayerOp::RmsNorm { positions, .. } => positions,
            LayerOp::Linear { .. } => 1,
        }
    }

    pub fn rfs_layer(&self) -> RfsLayer {
        match *self {
            LayerOp::Conv3d { k_t, .. } => RfsLayer::Conv3d { k_t },
            LayerOp::TemporalConv { k, .. } => RfsLayer::TemporalConv { k },
            LayerOp::TbModule { .. } => RfsLayer::Tb,
            _ => RfsLayer::Spatial,
        }
    }

    /// Closed-form weight count where a reference row applies.
    pub fn formula_params(&self) -> Option<f64> {
        match *self {
            LayerOp::Conv2d { c_in, c_out, k: 3, .. } => Some(9.0 * (c_in * c_out) as f64),
            LayerOp::Conv3d {
                c_in, c_out, k_t: 3, k: 3, ..
            } => Some(27.0 * (c_in * c_out) as f64),
            LayerOp::TbModule { c_in, c_out, p, .. } => Some(p as f64 * (c_in * c_out) as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub op: LayerOp,
}

impl LayerEntry {
    pub fn new(name: impl Into<String>, op: LayerOp) -> Self {
        LayerEntry { name: name.into(), op }
    }
}

/// A bottleneck bilinear block inside a layer stack: layers
/// `first..first + 3` are its two temporal convolutions and the module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckGroup {
    pub name: String,
    pub first: usize,
    /// Channel count C entering the block.
    pub c: usize,
    pub p: usize,
}

/// A layer stack plus optional bottleneck groupings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<LayerEntry>,
    pub bottlenecks: Vec<BottleneckGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub layer: String,
    pub kind: String,
    pub params: u64,
    pub flops: u64,
    /// Temporal extent contributed by this layer.
    pub rfs: usize,
    pub formula_params: Option<f64>,
    pub discrepancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAudit {
    pub block: String,
    pub params: u64,
    pub formula_params: f64,
    pub formula: String,
    pub discrepancy: f64,
    pub rfs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub flop_convention: String,
    pub rows: Vec<ReportRow>,
    pub blocks: Vec<BlockAudit>,
    /// Output positions of the widest layer (Q at stride 1 = T·H·W).
    pub q: usize,
    pub total_params: u64,
    /// Weight-matrix scalars only, the convention of the closed-form table.
    pub total_weight_params: u64,
    pub total_flops: u64,
    /// Temporal receptive field of the whole stack if every layer were stride 1.
    pub temporal_rfs: usize,
}

/// Exact enumeration over a layer stack.
pub fn count_params(stack: &LayerStack) -> ComplexityReport {
    let rows: Vec<ReportRow> = stack
        .layers
        .iter()
        .map(|l| {
            let params = l.op.params();
            let formula = l.op.formula_params();
            ReportRow {
                layer: l.name.clone(),
                kind: l.op.kind().to_string(),
                params,
                flops: 2 * l.op.macs(),
                rfs: l.op.rfs_layer().temporal_extent(),
                formula_params: formula,
                discrepancy: formula.map(|f| l.op.weight_params() as f64 - f),
            }
        })
        .collect();
    let blocks = stack
        .bottlenecks
        .iter()
        .map(|b| {
            let members = &stack.layers[b.first..b.first + 3];
            let params: u64 = members.iter().map(|l| l.op.weight_params()).sum();
            let formula = table1_formula(Table1Method::BottleneckTb, b.c.max(1), b.p.max(1), 1).expect("positive arguments");
            let rfs_layers: Vec<RfsLayer> = members.iter().map(|l| l.op.rfs_layer()).collect();
            BlockAudit {
                block: b.name.clone(),
                params,
                formula_params: formula.params,
                formula: formula.expression,
                discrepancy: params as f64 - formula.params,
                rfs: temporal_rfs(&rfs_layers),
            }
        })
        .collect();
    let rfs_layers: Vec<RfsLayer> = stack.layers.iter().map(|l| l.op.rfs_layer()).collect();
    ComplexityReport {
        flop_convention: "1 multiply-accumulate = 2 FLOPs; params exclude nothing in totals, weight-only in formula comparisons".into(),
        q: stack.layers.iter().map(|l| l.op.positions()).max().unwrap_or(0),
        total_params: rows.iter().map(|r| r.params).sum(),
        total_weight_params: stack.layers.iter().map(|l| l.op.weight_params()).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        temporal_rfs: temporal_rfs(&rfs_layers),
        rows,
        blocks,
    }
}

/// Rendered report: an aligned text table and a JSON document.
pub struct AuditReport {
    pub report: ComplexityReport,
    pub text: String,
    pub json: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.0}")).unwrap_or_else(|| "-".into())
}

pub fn audit_report(stack: &LayerStack) -> AuditReport {
    let report = count_params(stack);
    let mut text = String::new();
    let width = report.rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(text, "# {}", report.flop_convention);
    let _ = writeln!(
        text,
        "{:<width$}  {:<13}  {:>12}  {:>16}  {:>3}  {:>12}  {:>12}",
        "layer", "kind", "params", "flops", "rfs", "formula", "discrepancy"
    );
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{:<width$}  {:<13}  {:>12}  {:>16}  {:>3}  {:>12}  {:>12}",
            r.layer,
            r.kind,
            r.params,
            r.flops,
            r.rfs,
            fmt_opt(r.formula_params),
            fmt_opt(r.discrepancy)
        );
    }
    let _ = writeln!(
        text,
        "{:<width$}  {:<13}  {:>12}  {:>16}  {:>3}",
        "total", "", report.total_params, report.total_flops, report.temporal_rfs
    );
    let _ = writeln!(text, "weight-only params: {}", report.total_weight_params);
    if !report.blocks.is_empty() {
        let _ = writeln!(text, "\nbottleneck blocks (as built vs closed form):");
        for b in &report.blocks {
            let _ = writeln!(
                text,
                "  {:<24} as-built {:>10}  formula {:>12} [{}]  discrepancy {:>10}{}  rfs {}",
                b.block,
                b.params,
                format!("{:.0}", b.formula_params),
                b.formula,
                format!("{:.0}", b.discrepancy),
                if b.discrepancy != 0.0 { " (!)" } else { "" },
                b.rfs
            );
        }
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    AuditReport { report, text, json }
}

/// Closed-form table for given C and p next to an as-built bottleneck block
/// of the same width (C → C/4 → C with temporal kernels of 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Audit {
    pub c: usize,
    pub p: usize,
    pub q: usize,
    pub rows: Vec<(String, FormulaCost)>,
    pub as_built: BlockAudit,
}

impl Table1Audit {
    /// Discrepancy between the as-built bottleneck and its closed form is nonzero.
    pub fn flagged(&self) -> bool {
        self.as_built.discrepancy != 0.0
    }

    pub fn render(&self) -> String {
        let mut text = String::new();
        let _ = writeln!(text, "C = {}, p = {}, Q = {}", self.c, self.p, self.q);
        let _ = writeln!(text, "{:<20}  {:>3}  {:>12}  {:>14}  formula", "method", "rfs", "params", "flops");
        for (label, r) in &self.rows {
            let _ = writeln!(
                text,
                "{label:<20}  {:>3}  {:>12}  {:>14}  {}",
                r.rfs,
                format!("{:.0}", r.params),
                format!("{:.0}", r.flops),
                r.expression
            );
        }
        let b = &self.as_built;
        let _ = writeln!(
            text,
            "as-built bottleneck: {} params, rfs {}, discrepancy {:.0}{}",
            b.params,
            b.rfs,
            b.discrepancy,
            if self.flagged() { " (!)" } else { "" }
        );
        text
    }
}

pub fn table1_audit(c: usize, p: usize, q: usize) -> Result<Table1Audit> {
    let rows = Table1Method::ALL
        .iter()
        .map(|&m| Ok((m.label().to_string(), table1_formula(m, c, p, q)?)))
        .collect::<Result<Vec<_>>>()?;
    let mid = c / 4;
    if mid == 0 {
        return Err(Error::contract("table1_audit", format!("bottleneck needs C ≥ 4, got {c}")));
    }
    let stack = LayerStack {
        layers: vec![
            LayerEntry::new(
                "conv_in",
                LayerOp::TemporalConv {
                    c_in: c,
                    c_out: mid,
                    k: 3,
                    positions: q,
                },
            ),
            LayerEntry::new(
                "tb",
                LayerOp::TbModule {
                    c_in: mid,
                    c_out: mid,
                    p,
                    positions: q,
                },
            ),
            LayerEntry::new(
                "conv_out",
                LayerOp::TemporalConv {
                    c_in: mid,
                    c_out: c,
                    k: 3,
                    positions: q,
                },
            ),
        ],
        bottlenecks: vec![BottleneckGroup {
            name: "bottleneck".into(),
            first: 0,
            c,
            p,
        }],
    };
    let as_built = count_params(&stack).blocks.remove(0);
    Ok(Table1Audit { c, p, q, rows, as_built })
}
