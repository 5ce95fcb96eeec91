//! Closed-form multiply-accumulate and parameter accounting for a model spec.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dfc::dfc_flops;
use crate::error::{Error, Result};
use crate::ghost::{ghost_flops, CHEAP_KERNEL};
use crate::model::ModelSpec;
use crate::ops::output_extent;

pub const CONVENTION: &str =
    "MACs = multiply-accumulates (1 MAC = 2 FLOPs); batchnorm, activations, pooling, gating and residual adds count as 0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Depthwise,
    BatchNorm,
    FcVertical,
    FcHorizontal,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub input_size: usize,
    pub convention: String,
    pub layers: Vec<LayerCost>,
    pub totals: Totals,
}

/// How ghost modules are costed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GhostAccounting {
    #[default]
    Ghost,
    /// Each ghost module replaced by one ordinary convolution with the same
    /// kernel and output width.
    Conventional,
}

struct Walker {
    layers: Vec<LayerCost>,
    accounting: GhostAccounting,
}

impl Walker {
    fn push(&mut self, name: String, kind: LayerKind, output_shape: Vec<usize>, macs: u64, params: u64) {
        self.layers.push(LayerCost { name, kind, output_shape, macs, params });
    }

    fn conv(&mut self, name: String, c_in: usize, c_out: usize, k: usize, extent: usize) {
        let macs = (extent * extent * c_out * k * k * c_in) as u64;
        self.push(name, LayerKind::Conv, vec![c_out, extent, extent], macs, (c_out * c_in * k * k) as u64);
    }

    fn depthwise(&mut self, name: String, channels: usize, k: usize, extent: usize) {
        let macs = (extent * extent * channels * k * k) as u64;
        self.push(name, LayerKind::Depthwise, vec![channels, extent, extent], macs, (channels * k * k) as u64);
    }

    fn bn(&mut self, name: String, channels: usize, extent: usize) {
        self.push(name, LayerKind::BatchNorm, vec![channels, extent, extent], 0, 2 * channels as u64);
    }

    fn ghost(&mut self, name: &str, c_in: usize, c_out: usize, s: usize, extent: usize) -> Result<()> {
        if self.accounting == GhostAccounting::Conventional || s == 1 {
            self.conv(format!("{name}.primary"), c_in, c_out, 1, extent);
            self.bn(format!("{name}.bn_primary"), c_out, extent);
            return Ok(());
        }
        let x = c_out / s;
        let cost = ghost_flops(c_in, c_out, s, 1, extent, extent)?;
        self.push(format!("{name}.primary"), LayerKind::Conv, vec![x, extent, extent], cost.primary_macs, (x * c_in) as u64);
        self.bn(format!("{name}.bn_primary"), x, extent);
        let ghosts = x * (s - 1);
        let k2 = CHEAP_KERNEL * CHEAP_KERNEL;
        self.push(format!("{name}.cheap"), LayerKind::Depthwise, vec![ghosts, extent, extent], cost.cheap_macs, (ghosts * k2) as u64);
        self.bn(format!("{name}.bn_cheap"), ghosts, extent);
        Ok(())
    }
}

pub fn analyze(spec: &ModelSpec, input_size: usize) -> Result<FlopsReport> {
    analyze_with(spec, input_size, GhostAccounting::Ghost)
}

/// Walks the stage table at `input_size` (overriding the spec's own image
/// size) and prices every layer.
pub fn analyze_with(spec: &ModelSpec, input_size: usize, accounting: GhostAccounting) -> Result<FlopsReport> {
    let mut spec = spec.clone();
    spec.image_size = input_size;
    let extents = spec.validate()?;
    let mut w = Walker { layers: Vec::new(), accounting };

    w.conv("stem.w".into(), spec.in_channels, spec.stem_channels, 3, extents.stem);
    w.bn("stem.bn".into(), spec.stem_channels, extents.stem);
    for (i, (b, &extent)) in spec.blocks.iter().zip(&extents.block_inputs).enumerate() {
        let name = format!("block{i}");
        let out_extent = if b.stride == 2 { output_extent(extent, b.kernel, 2, b.kernel / 2)? } else { extent };
        w.ghost(&format!("{name}.ghost1"), b.c_in, b.c_mid, b.ghost_s, extent)?;
        if b.use_attention {
            let f = spec.attention_downsample;
            let cost = dfc_flops(b.c_mid, b.c_in, extent, extent, f).map_err(|e| Error::Spec {
                block: Some(i),
                reason: e.to_string(),
            })?;
            let d = extent / f;
            w.push(format!("{name}.attn.proj"), LayerKind::Conv, vec![b.c_mid, d, d], cost.proj_macs, (b.c_mid * b.c_in) as u64);
            w.bn(format!("{name}.attn.bn"), b.c_mid, d);
            let (v, h) = ((b.c_mid * d * d * d) as u64, (b.c_mid * d * d * d) as u64);
            debug_assert_eq!(v + h, cost.fc_macs);
            w.push(format!("{name}.attn.theta_v"), LayerKind::FcVertical, vec![b.c_mid, d, d], v, (d * d) as u64);
            w.push(format!("{name}.attn.theta_h"), LayerKind::FcHorizontal, vec![b.c_mid, d, d], h, (d * d) as u64);
        }
        if b.stride == 2 {
            w.depthwise(format!("{name}.dw"), b.c_mid, b.kernel, out_extent);
            w.bn(format!("{name}.dw_bn"), b.c_mid, out_extent);
        }
        w.ghost(&format!("{name}.ghost2"), b.c_mid, b.c_out, b.ghost_s, out_extent)?;
        if !b.identity_shortcut() {
            w.depthwise(format!("{name}.short.dw"), b.c_in, b.kernel, out_extent);
            w.bn(format!("{name}.short.dw_bn"), b.c_in, out_extent);
            w.conv(format!("{name}.short.pw"), b.c_in, b.c_out, 1, out_extent);
            w.bn(format!("{name}.short.pw_bn"), b.c_out, out_extent);
        }
    }
    w.conv("head.w".into(), spec.last_channels(), spec.head_channels, 1, extents.head);
    w.bn("head.bn".into(), spec.head_channels, extents.head);
    let (fan_in, k) = (spec.head_channels, spec.num_classes);
    w.push("fc".into(), LayerKind::Linear, vec![k], (fan_in * k) as u64, (fan_in * k + k) as u64);

    let totals = w.layers.iter().fold(Totals::default(), |t, l| Totals { macs: t.macs + l.macs, params: t.params + l.params });
    Ok(FlopsReport { input_size, convention: CONVENTION.into(), layers: w.layers, totals })
}

impl FlopsReport {
    pub fn total_mmacs(&self) -> f64 {
        self.totals.macs as f64 / 1e6
    }

    /// MACs spent inside ghost modules (or their conventional stand-ins).
    pub fn ghost_module_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.name.contains(".ghost")).map(|l| l.macs).sum()
    }

    /// One row per layer followed by a `total` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "kind", "output", "macs", "params"])?;
        for l in &self.layers {
            let shape = l.output_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            w.write_record([l.name.as_str(), kind_name(l.kind).as_str(), &shape, &l.macs.to_string(), &l.params.to_string()])?;
        }
        w.write_record(["total", "", "", &self.totals.macs.to_string(), &self.totals.params.to_string()])?;
        let bytes = w.into_inner().map_err(|e| crate::error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width per-layer table.
    pub fn to_text(&self) -> String {
        let mut out = format!("# input {0}x{0}; {1}\n", self.input_size, self.convention);
        let _ = writeln!(out, "{:<28} {:<14} {:>16} {:>14} {:>10}", "layer", "kind", "output", "MACs", "params");
        for l in &self.layers {
            let shape = l.output_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let kind = kind_name(l.kind);
            let _ = writeln!(out, "{:<28} {:<14} {:>16} {:>14} {:>10}", l.name, kind, shape, l.macs, l.params);
        }
        let _ = writeln!(
            out,
            "{:<28} {:<14} {:>16} {:>14} {:>10}\n# total {:.3} M MACs",
            "total",
            "",
            "",
            self.totals.macs,
            self.totals.params,
            self.total_mmacs()
        );
        out
    }
}

fn kind_name(kind: LayerKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub macs: u64,
    pub params: u64,
}

/// One row per report, in the order given.
pub fn compare(reports: &[FlopsReport], labels: &[String]) -> Result<Vec<ComparisonRow>> {
    if reports.len() != labels.len() {
        return Err(crate::error::invalid(format!("{} reports but {} labels", reports.len(), labels.len())));
    }
    Ok(reports
        .iter()
        .zip(labels)
        .map(|(r, l)| ComparisonRow { label: l.clone(), macs: r.totals.macs, params: r.totals.params })
        .collect())
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn comparison_from_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn comparison_to_text(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$} {:>12} {:>12}\n", "model", "MACs (M)", "params (M)");
    for r in rows {
        let _ = writeln!(out, "{:<width$} {:>12.3} {:>12.3}", r.label, r.macs as f64 / 1e6, r.params as f64 / 1e6);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BottleneckSpec};

    #[test]
    fn params_match_built_model() {
        for spec in [ModelSpec::desk(), ModelSpec::full()] {
            let report = analyze(&spec, spec.image_size).unwrap();
            let model = build_model::<f32>(&spec).unwrap();
            assert_eq!(report.totals.params as usize, model.num_params());
        }
    }

    #[test]
    fn totals_are_layer_sums() {
        let r = analyze(&ModelSpec::desk(), 64).unwrap();
        assert_eq!(r.totals.macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.totals.params, r.layers.iter().map(|l| l.params).sum::<u64>());
    }

    #[test]
    fn empty_block_list_is_stem_plus_head() {
        let mut spec = ModelSpec::desk();
        spec.blocks.clear();
        spec.head_channels = 10;
        let r = analyze(&spec, 8).unwrap();
        // stem 4x4x8x9x3, head 4x4x10x8, fc 10x7
        assert_eq!(r.totals.macs, 3456 + 1280 + 70);
    }

    #[test]
    fn attention_rows_match_dfc_cost() {
        let mut spec = ModelSpec::desk();
        spec.blocks = vec![BottleneckSpec::new(8, 16, 8, 1, true)];
        let r = analyze(&spec, 16).unwrap();
        let attn: u64 = r.layers.iter().filter(|l| l.name.contains(".attn.")).map(|l| l.macs).sum();
        assert_eq!(attn, dfc_flops(16, 8, 8, 8, 2).unwrap().total_macs);
    }

    #[test]
    fn layer_csv_has_row_per_layer_plus_total() {
        let r = analyze(&ModelSpec::desk(), 64).unwrap();
        let csv = r.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), r.layers.len() + 2);
        assert_eq!(lines.last().unwrap(), &format!("total,,,{},{}", r.totals.macs, r.totals.params));
    }

    #[test]
    fn comparison_csv_round_trip() {
        let a = analyze(&ModelSpec::desk(), 64).unwrap();
        let b = analyze(&ModelSpec::full(), 224).unwrap();
        let rows = compare(&[a, b], &["desk".into(), "full, 224".into()]).unwrap();
        assert_eq!(rows[0].label, "desk");
        assert_eq!(comparison_from_csv(&comparison_to_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn full_model_band_and_ghost_advantage() {
        let spec = ModelSpec::full();
        let ghost = analyze(&spec, 224).unwrap();
        let conv = analyze_with(&spec, 224, GhostAccounting::Conventional).unwrap();
        assert!((30.0..=130.0).contains(&ghost.total_mmacs()));
        let module_ratio = conv.ghost_module_macs() as f64 / ghost.ghost_module_macs() as f64;
        assert!(module_ratio > 1.5 && module_ratio < 2.0, "{module_ratio}");
        // stem, depthwise, attention, shortcut and head layers are shared
        let whole = conv.totals.macs as f64 / ghost.totals.macs as f64;
        assert!(whole > 1.0 && whole < module_ratio);
    }
}
