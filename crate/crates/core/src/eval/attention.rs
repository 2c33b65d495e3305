use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionRecord, ModelConfig, QueryIndex, SoMoFormer};
use crate::scene::TrajectoryWindow;

/// One forward pass's attention together with where each slot stood.
#[derive(Debug, Clone)]
pub struct AttentionSample {
    pub record: AttentionRecord,
    /// Root joint of each slot at the last observed frame.
    pub roots: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub window: usize,
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub attention: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAttention {
    pub pairs: Vec<DistancePair>,
    pub fit: LineFit,
}

impl DistanceAttention {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,from,to,distance,attention\n");
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.window, p.from, p.to, p.distance, p.attention
            );
        }
        out
    }
}

/// Mean attention from every query of slot `from` to every key of slot
/// `to`, over all heads and layers.
pub fn cross_person_attention(record: &AttentionRecord, from: usize, to: usize) -> f64 {
    let q = record.num_queries();
    let queries: Vec<usize> = (0..q).filter(|&i| record.queries[i].slot == from).collect();
    let keys: Vec<usize> = (0..q).filter(|&i| record.queries[i].slot == to).collect();
    let mut sum = 0.0;
    for layer in 0..record.layers.len() {
        for head in 0..record.heads {
            for &qi in &queries {
                let row = record.row(layer, head, qi);
                sum += keys.iter().map(|&k| row[k]).sum::<f64>();
            }
        }
    }
    sum / (record.layers.len() * record.heads * queries.len() * keys.len()) as f64
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::Eval(format!(
            "need at least 2 points to fit a line, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Eval(
            "all distances are equal; slope is undefined".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Pairs every ordered pair of distinct real persons in each sample with
/// their root distance and cross-person attention, and fits a line.
pub fn distance_attention(samples: &[AttentionSample]) -> Result<DistanceAttention> {
    let mut pairs = Vec::new();
    for (w, s) in samples.iter().enumerate() {
        let real: Vec<usize> = (0..s.mask.len()).filter(|&i| s.mask[i]).collect();
        for &a in &real {
            for &b in &real {
                if a == b {
                    continue;
                }
                let d = (0..3)
                    .map(|k| (s.roots[a][k] - s.roots[b][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                pairs.push(DistancePair {
                    window: w,
                    from: a,
                    to: b,
                    distance: d,
                    attention: cross_person_attention(&s.record, a, b),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Eval("no window has two or more persons".into()));
    }
    let fit = fit_line(
        &pairs
            .iter()
            .map(|p| (p.distance, p.attention))
            .collect::<Vec<_>>(),
    )?;
    Ok(DistanceAttention { pairs, fit })
}

/// Runs `model` on each window and relates inter-person distance to
/// cross-person attention.
pub fn attention_distance_analysis(
    model: &SoMoFormer,
    windows: &[TrajectoryWindow],
) -> Result<DistanceAttention> {
    let root = model.config().root_joint;
    let samples = windows
        .iter()
        .map(|w| {
            let pred = model.forward(w)?;
            Ok(AttentionSample {
                record: pred.attention,
                roots: (0..w.slots()).map(|s| w.last_root(s, root)).collect(),
                mask: pred.mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    distance_attention(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    /// `[head][query][key]`.
    pub heads: Vec<Vec<Vec<f64>>>,
    /// `[J][J]`: attention from each joint type to each joint type, summed
    /// over key slots and axes and averaged over heads, real query slots
    /// and query axes. Rows sum to 1.
    pub joint_average: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
    pub mask: Vec<bool>,
    pub cells: Vec<usize>,
    pub queries: Vec<QueryIndex>,
    pub layers: Vec<LayerAttention>,
    /// Mean of the per-layer joint averages.
    pub joint_average: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl AttentionExport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn joint_average(
    record: &AttentionRecord,
    layer: usize,
    mask: &[bool],
    joints: usize,
) -> Vec<Vec<f64>> {
    let q = record.num_queries();
    let mut out = vec![vec![0.0; joints]; joints];
    let mut counts = vec![0usize; joints];
    for head in 0..record.heads {
        for qi in (0..q).filter(|&i| mask[record.queries[i].slot]) {
            let from = record.queries[qi].joint;
            counts[from] += 1;
            for (k, &a) in record.row(layer, head, qi).iter().enumerate() {
                out[from][record.queries[k].joint] += a;
            }
        }
    }
    for (row, &n) in out.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    out
}

pub fn attention_export(model: &SoMoFormer, window: &TrajectoryWindow) -> Result<AttentionExport> {
    let pred = model.forward(window)?;
    let rec = &pred.attention;
    let (q, j) = (rec.num_queries(), model.config().joints);
    let layers: Vec<LayerAttention> = (0..rec.layers.len())
        .map(|l| LayerAttention {
            heads: (0..rec.heads)
                .map(|h| (0..q).map(|i| rec.row(l, h, i).to_vec()).collect())
                .collect(),
            joint_average: joint_average(rec, l, &pred.mask, j),
        })
        .collect();
    let mut overall = vec![vec![0.0; j]; j];
    for layer in &layers {
        for (o, r) in overall.iter_mut().zip(&layer.joint_average) {
            o.iter_mut()
                .zip(r)
                .for_each(|(a, b)| *a += b / layers.len() as f64);
        }
    }
    Ok(AttentionExport {
        config: model.config().clone(),
        joint_names: None,
        mask: pred.mask.clone(),
        cells: pred.cells.clone(),
        queries: rec.queries.clone(),
        layers,
        joint_average: overall,
        meta: None,
    })
}

/// Writes the attention of one forward pass as pretty-printed JSON.
pub fn export_attention(
    model: &SoMoFormer,
    window: &TrajectoryWindow,
    path: impl AsRef<Path>,
) -> Result<AttentionExport> {
    let export = attention_export(model, window)?;
    export.save(path)?;
    Ok(export)
}
