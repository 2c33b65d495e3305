//! Pose-forecast metrics, the zero-velocity baseline, dataset-level
//! evaluation protocols and attention analyses.
//!
//! Predicted and ground-truth futures use the window layout
//! `[slot][joint][axis][frame]`.

mod attention;

pub use attention::{
    attention_distance_analysis, attention_export, cross_person_attention, distance_attention,
    export_attention, fit_line, AttentionExport, AttentionSample, DistanceAttention, DistancePair,
    LayerAttention, LineFit,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SoMoFormer;
use crate::scene::{window_at, Scene, TrajectoryWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Mean per-joint Euclidean distance.
    Mpjpe,
    /// Norm of the flattened `3J` pose difference.
    Vim,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mpjpe" => Ok(Metric::Mpjpe),
            "vim" => Ok(Metric::Vim),
            other => Err(Error::Config(format!(
                "unknown metric {other:?}; expected vim or mpjpe"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mpjpe => "mpjpe",
            Metric::Vim => "vim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonValue {
    /// 1-based index into the predicted frames.
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    pub horizons: Vec<HorizonValue>,
    /// Mean of the per-horizon values.
    pub overall: f64,
    pub persons: usize,
    pub windows: usize,
    /// Evaluated frames per person.
    pub frames: usize,
}

impl MetricReport {
    pub fn values(&self) -> Vec<f64> {
        self.horizons.iter().map(|h| h.value).collect()
    }

    /// Multiplies every value by `factor` and labels the result with `units`.
    pub fn scaled(mut self, factor: f64, units: &str) -> Self {
        for h in &mut self.horizons {
            h.value *= factor;
        }
        self.overall *= factor;
        self.units = Some(units.to_string());
        self
    }

    /// One row per horizon plus an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,frame,ms,value\n");
        let m = self.metric.name();
        for h in &self.horizons {
            let ms = h.ms.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{m},{},{ms},{}", h.frame, h.value);
        }
        let _ = writeln!(out, "{m},overall,,{}", self.overall);
        out
    }

    /// Fixed-width table: one header row of horizon labels, one row of values.
    pub fn table(&self) -> String {
        let label = |h: &HorizonValue| match h.ms {
            Some(ms) if ms >= 1000.0 && ms % 1000.0 == 0.0 => format!("{} s", ms / 1000.0),
            Some(ms) => format!("{ms} ms"),
            None => format!("frame {}", h.frame),
        };
        let units = self
            .units
            .as_deref()
            .map(|u| format!(" ({u})"))
            .unwrap_or_default();
        let mut head = format!(
            "{:<12}",
            format!("{}{units}", self.metric.name().to_uppercase())
        );
        let mut row = format!("{:<12}", "");
        for h in &self.horizons {
            let _ = write!(head, "{:>10}", label(h));
            let _ = write!(row, "{:>10.3}", h.value);
        }
        let _ = write!(head, "{:>10}", "overall");
        let _ = write!(row, "{:>10.3}", self.overall);
        format!("{head}\n{row}")
    }
}

/// Running per-horizon sums over any number of windows.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    metric: Metric,
    horizons: Vec<usize>,
    sums: Vec<f64>,
    persons: usize,
    windows: usize,
}

impl MetricAccumulator {
    pub fn new(metric: Metric, horizons: &[usize]) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::Eval("no horizon frames requested".into()));
        }
        if horizons.contains(&0) {
            return Err(Error::Eval("horizon frames are 1-based; got 0".into()));
        }
        Ok(Self {
            metric,
            horizons: horizons.to_vec(),
            sums: vec![0.0; horizons.len()],
            persons: 0,
            windows: 0,
        })
    }

    /// Adds one window's real persons.
    pub fn add(&mut self, pred: &[f64], gt: &[f64], mask: &[bool], joints: usize) -> Result<()> {
        let future_len = future_len_of(pred, gt, mask, joints)?;
        if let Some(&h) = self.horizons.iter().find(|&&h| h > future_len) {
            return Err(Error::Eval(format!(
                "horizon frame {h} is beyond the {future_len} predicted frames"
            )));
        }
        let per_slot = joints * 3 * future_len;
        for slot in (0..mask.len()).filter(|&s| mask[s]) {
            let p = &pred[slot * per_slot..(slot + 1) * per_slot];
            let g = &gt[slot * per_slot..(slot + 1) * per_slot];
            for (sum, &h) in self.sums.iter_mut().zip(&self.horizons) {
                let f = h - 1;
                let sq = |j: usize| -> f64 {
                    (0..3)
                        .map(|a| {
                            let i = (j * 3 + a) * future_len + f;
                            (p[i] - g[i]).powi(2)
                        })
                        .sum()
                };
                *sum += match self.metric {
                    Metric::Mpjpe => (0..joints).map(|j| sq(j).sqrt()).sum::<f64>() / joints as f64,
                    Metric::Vim => (0..joints).map(sq).sum::<f64>().sqrt(),
                };
            }
        }
        self.persons += mask.iter().filter(|&&m| m).count();
        self.windows += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<MetricReport> {
        if self.persons == 0 {
            return Err(Error::Eval(
                "no real persons to evaluate (empty mask)".into(),
            ));
        }
        let horizons: Vec<HorizonValue> = self
            .horizons
            .iter()
            .zip(&self.sums)
            .map(|(&frame, &s)| HorizonValue {
                frame,
                ms: None,
                value: s / self.persons as f64,
            })
            .collect();
        let overall = horizons.iter().map(|h| h.value).sum::<f64>() / horizons.len() as f64;
        Ok(MetricReport {
            metric: self.metric,
            units: None,
            frames: horizons.len(),
            horizons,
            overall,
            persons: self.persons,
            windows: self.windows,
        })
    }
}

fn future_len_of(pred: &[f64], gt: &[f64], mask: &[bool], joints: usize) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(Error::Length {
            op: "metric ground truth",
            expected: pred.len(),
            actual: gt.len(),
        });
    }
    let per_frame = mask.len() * joints * 3;
    if per_frame == 0 || !pred.len().is_multiple_of(per_frame) || pred.is_empty() {
        return Err(Error::Eval(format!(
            "prediction of length {} does not fit {} slots x {joints} joints x 3",
            pred.len(),
            mask.len()
        )));
    }
    Ok(pred.len() / per_frame)
}

fn single(
    metric: Metric,
    pred: &[f64],
    gt: &[f64],
    mask: &[bool],
    joints: usize,
    horizons: &[usize],
) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(metric, horizons)?;
    acc.add(pred, gt, mask, joints)?;
    acc.finish()
}

/// Per horizon frame, the mean over real persons and joints of the joint
/// position error.
pub fn mpjpe(
    pred: &[f64],
    gt: &[f64],
    mask: &[bool],
    joints: usize,
    horizons: &[usize],
) -> Result<MetricReport> {
    single(Metric::Mpjpe, pred, gt, mask, joints, horizons)
}

/// Per horizon frame, the mean over real persons of the Euclidean norm of
/// the whole-pose difference.
pub fn vim(
    pred: &[f64],
    gt: &[f64],
    mask: &[bool],
    joints: usize,
    horizons: &[usize],
) -> Result<MetricReport> {
    single(Metric::Vim, pred, gt, mask, joints, horizons)
}

/// Holds every person's last observed pose for all future frames.
pub fn zero_velocity(window: &TrajectoryWindow) -> Vec<f64> {
    let (t, f) = (window.history_len(), window.future_len());
    window
        .history()
        .chunks(t)
        .flat_map(|row| std::iter::repeat_n(row[t - 1], f))
        .collect()
}

/// Anything that maps a window with history to a predicted future.
/// Implementations must not read the window's ground-truth future.
pub trait Predictor {
    fn name(&self) -> &str;

    /// Rejects protocols the predictor cannot serve.
    fn check(&self, _protocol: &Protocol) -> Result<()> {
        Ok(())
    }

    fn predict(&self, window: &TrajectoryWindow) -> Result<Vec<f64>>;
}

pub struct ZeroVelocity;

impl Predictor for ZeroVelocity {
    fn name(&self) -> &str {
        "zero-velocity"
    }

    fn predict(&self, window: &TrajectoryWindow) -> Result<Vec<f64>> {
        Ok(zero_velocity(window))
    }
}

/// Returns the ground truth. Only useful for testing the evaluation plumbing.
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn predict(&self, window: &TrajectoryWindow) -> Result<Vec<f64>> {
        window
            .future()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Eval("window has no ground-truth future".into()))
    }
}

impl Predictor for SoMoFormer {
    fn name(&self) -> &str {
        "somoformer"
    }

    fn check(&self, protocol: &Protocol) -> Result<()> {
        let c = self.config();
        if c.history_len != protocol.history_len || c.future_len != protocol.future_len {
            return Err(Error::Eval(format!(
                "protocol {} uses t={}, T={}; the checkpoint expects t={}, T={}, J={}",
                protocol.name,
                protocol.history_len,
                protocol.future_len,
                c.history_len,
                c.future_len,
                c.joints
            )));
        }
        Ok(())
    }

    fn predict(&self, window: &TrajectoryWindow) -> Result<Vec<f64>> {
        SoMoFormer::predict(self, window)
    }
}

/// Window lengths, horizons and reporting units of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub history_len: usize,
    pub future_len: usize,
    /// 1-based predicted frames at which metrics are reported.
    pub horizons: Vec<usize>,
    pub horizon_ms: Vec<f64>,
    pub metrics: Vec<Metric>,
    /// Factor from scene units (metres) to reported units.
    pub report_scale: f64,
    pub report_units: String,
    /// Offset between consecutive windows of a scene; `t + T` when absent.
    #[serde(default)]
    pub stride: Option<usize>,
}

impl Protocol {
    /// 16 observed and 14 predicted frames, VIM in centimetres.
    pub fn somof() -> Self {
        Self {
            name: "somof".into(),
            history_len: 16,
            future_len: 14,
            horizons: vec![2, 4, 8, 10, 14],
            horizon_ms: vec![100.0, 240.0, 500.0, 640.0, 900.0],
            metrics: vec![Metric::Vim],
            report_scale: 100.0,
            report_units: "cm".into(),
            stride: None,
        }
    }

    /// 15 observed and 45 predicted frames at 15 fps, MPJPE in metres at 1, 2 and 3 s.
    pub fn cmu() -> Self {
        Self {
            name: "cmu".into(),
            history_len: 15,
            future_len: 45,
            horizons: vec![15, 30, 45],
            horizon_ms: vec![1000.0, 2000.0, 3000.0],
            metrics: vec![Metric::Mpjpe],
            report_scale: 1.0,
            report_units: "m".into(),
            stride: None,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "somof" => Ok(Self::somof()),
            "cmu" => Ok(Self::cmu()),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?}; expected somof or cmu"
            ))),
        }
    }

    pub fn with_metrics(mut self, metrics: Vec<Metric>) -> Self {
        self.metrics = metrics;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("protocol {}: {m}", self.name)));
        if self.history_len == 0 || self.future_len == 0 {
            return bad("window lengths must be positive".into());
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h == 0 || h > self.future_len)
        {
            return bad(format!(
                "horizons {:?} must lie in 1..={}",
                self.horizons, self.future_len
            ));
        }
        if !self.horizon_ms.is_empty() && self.horizon_ms.len() != self.horizons.len() {
            return bad("horizon_ms must match horizons".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics requested".into());
        }
        if self.stride == Some(0) {
            return bad("stride must be positive".into());
        }
        Ok(())
    }

    /// Start frames of the tiled windows of a scene with `frames` frames.
    pub fn window_starts(&self, frames: usize) -> Vec<usize> {
        let total = self.history_len + self.future_len;
        let stride = self.stride.unwrap_or(total);
        if frames < total {
            return Vec::new();
        }
        (0..=frames - total).step_by(stride).collect()
    }
}

/// Scores `predictor` on every tiled window of every scene. No randomness
/// is involved, so repeated runs give identical reports.
pub fn evaluate_dataset(
    predictor: &dyn Predictor,
    scenes: &[Scene],
    protocol: &Protocol,
) -> Result<Vec<MetricReport>> {
    protocol.validate()?;
    predictor.check(protocol)?;
    if scenes.is_empty() {
        return Err(Error::Eval("dataset is empty".into()));
    }
    let (t, f) = (protocol.history_len, protocol.future_len);
    let joints = scenes[0].joints();
    let mut accs = protocol
        .metrics
        .iter()
        .map(|&m| MetricAccumulator::new(m, &protocol.horizons))
        .collect::<Result<Vec<_>>>()?;
    for (i, scene) in scenes.iter().enumerate() {
        if scene.joints() != joints {
            return Err(Error::Eval(format!(
                "scene {i} has {} joints; the first scene has {joints}",
                scene.joints()
            )));
        }
        let starts = protocol.window_starts(scene.frames());
        if starts.is_empty() {
            return Err(Error::Eval(format!(
                "scene {i} has {} frames; protocol {} needs t+T={} (t={t}, T={f})",
                scene.frames(),
                protocol.name,
                t + f
            )));
        }
        for start in starts {
            let window = window_at(scene, start, t, f)?;
            let pred = predictor.predict(&window)?;
            let gt = window.future().expect("window_at attaches the future");
            for acc in &mut accs {
                acc.add(&pred, gt, window.mask(), joints)?;
            }
        }
    }
    accs.into_iter()
        .map(|acc| {
            let mut r = acc
                .finish()?
                .scaled(protocol.report_scale, &protocol.report_units);
            for (h, &ms) in r.horizons.iter_mut().zip(&protocol.horizon_ms) {
                h.ms = Some(ms);
            }
            Ok(r)
        })
        .collect()
}
