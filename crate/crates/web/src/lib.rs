//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it and draws on a
//! canvas. Positions are reported on the ground plane as `[x, z]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use somoformer::augment::{permute_persons, reverse_window, rotate_scene};
use somoformer::dct::DctBasis;
use somoformer::eval::{zero_velocity, Metric, MetricAccumulator};
use somoformer::model::{assign_grid_cells, ModelConfig};
use somoformer::scene::synthetic::{generate_scene, MotionConfig};
use somoformer::scene::{window_at, Scene, TrajectoryWindow};
use somoformer::train::{TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

type Track = Vec<[f64; 2]>;

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct DctView {
    coefficients: Vec<f64>,
    reconstruction: Vec<f64>,
    /// Share of the signal energy held by the kept coefficients.
    energy_kept: f64,
    max_error: f64,
}

/// DCT of `signal`, then the inverse with only the first `keep`
/// coefficients.
#[wasm_bindgen]
pub fn dct_truncate(signal: Vec<f64>, keep: usize) -> Result<String, JsError> {
    let basis = DctBasis::new(signal.len()).map_err(js_err)?;
    let coefficients = basis.forward(&signal).map_err(js_err)?;
    let mut kept = coefficients.clone();
    kept.iter_mut().skip(keep).for_each(|c| *c = 0.0);
    let reconstruction = basis.inverse(&kept).map_err(js_err)?;
    let energy = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
    let total = energy(&coefficients);
    let max_error = signal
        .iter()
        .zip(&reconstruction)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    to_js(&DctView {
        energy_kept: if total > 0.0 {
            energy(&kept) / total
        } else {
            1.0
        },
        coefficients,
        reconstruction,
        max_error,
    })
}

#[derive(Serialize)]
struct WindowView {
    /// Root track of every slot, history then future.
    roots: Vec<Track>,
    cells: Vec<usize>,
}

#[derive(Serialize)]
struct AugmentView {
    history_len: usize,
    grid: usize,
    original: WindowView,
    augmented: WindowView,
    /// `permutation[i]` is the slot that person `i` moved to.
    permutation: Vec<usize>,
    angle: f64,
}

fn root_tracks(w: &TrajectoryWindow, root: usize) -> Vec<Track> {
    (0..w.slots())
        .map(|s| {
            (0..w.total_len())
                .map(|f| {
                    let p = w.point(s, root, f);
                    [p[0], p[2]]
                })
                .collect()
        })
        .collect()
}

fn window_view(w: &TrajectoryWindow, root: usize, grid: usize) -> Result<WindowView, JsError> {
    Ok(WindowView {
        roots: root_tracks(w, root),
        cells: assign_grid_cells(w, root, grid).map_err(js_err)?,
    })
}

/// A synthetic multi-person window before and after the chosen augmentations,
/// with the grid cell each person is assigned to.
#[wasm_bindgen]
pub fn augment_preview(
    seed: u64,
    persons: usize,
    grid: usize,
    rotate: bool,
    reverse: bool,
    permute: bool,
) -> Result<String, JsError> {
    if persons == 0 || grid == 0 {
        return Err(JsError::new("persons and grid must be positive"));
    }
    let (t, big_t) = (16, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene =
        generate_scene(persons, t + big_t, &MotionConfig::default(), &mut rng).map_err(js_err)?;
    let root = scene.skeleton().root();
    let original = window_at(&scene, 0, t, big_t).map_err(js_err)?;

    let angle = if rotate {
        rng.gen_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let mut w = rotate_scene(&original, angle);
    if reverse {
        w = reverse_window(&w);
    }
    let mut permutation: Vec<usize> = (0..persons).collect();
    if permute {
        permutation.shuffle(&mut rng);
        w = permute_persons(&w, &permutation).map_err(js_err)?;
    }
    to_js(&AugmentView {
        history_len: t,
        grid,
        original: window_view(&original, root, grid)?,
        augmented: window_view(&w, root, grid)?,
        permutation,
        angle,
    })
}

const DEMO_JOINTS: [usize; 3] = [0, 9, 12];

/// A tiny model trained in the page on a handful of two-person scenes.
#[wasm_bindgen]
pub struct Forecaster {
    trainer: Trainer,
    scenes: Vec<Scene>,
}

#[derive(Serialize)]
struct TrainView {
    step: usize,
    epoch: usize,
    loss: f64,
    done: bool,
}

#[derive(Serialize)]
struct ForecastView {
    history_len: usize,
    joint_names: Vec<String>,
    /// `[slot][joint]` tracks over history and future.
    truth: Vec<Vec<Track>>,
    /// `[slot][joint]` tracks over the future only.
    prediction: Vec<Vec<Track>>,
    zero_velocity: Vec<Vec<Track>>,
    mpjpe: f64,
    zero_velocity_mpjpe: f64,
}

#[wasm_bindgen]
impl Forecaster {
    /// `windows` two-person scenes of 8 observed and 8 future frames,
    /// trained for at most `epochs` full-batch steps.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, windows: usize, epochs: usize) -> Result<Forecaster, JsError> {
        let model = ModelConfig::tiny().with_frames(8, 8);
        let frames = model.seq_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes = (0..windows.max(1))
            .map(|_| {
                generate_scene(2, frames, &MotionConfig::default(), &mut rng)?
                    .select_joints(&DEMO_JOINTS)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(js_err)?;
        let config = TrainConfig {
            model,
            epochs: epochs.max(1),
            batch_size: scenes.len(),
            augment: somoformer::augment::AugmentConfig::none(),
            seed,
            ..Default::default()
        };
        let trainer = Trainer::new(config).map_err(js_err)?;
        Ok(Forecaster { trainer, scenes })
    }

    pub fn windows(&self) -> usize {
        self.scenes.len()
    }

    /// Runs up to `steps` optimizer steps and reports the last loss.
    pub fn train(&mut self, steps: usize) -> Result<String, JsError> {
        let mut loss = f64::NAN;
        for _ in 0..steps {
            if self.trainer.is_done() {
                break;
            }
            loss = self
                .trainer
                .run_epoch(&self.scenes, |_| {})
                .map_err(js_err)?;
        }
        to_js(&TrainView {
            step: self.trainer.step(),
            epoch: self.trainer.epoch(),
            loss,
            done: self.trainer.is_done(),
        })
    }

    /// Ground truth, model forecast and the zero-velocity baseline for one
    /// training window.
    pub fn forecast(&self, index: usize) -> Result<String, JsError> {
        let scene = self
            .scenes
            .get(index)
            .ok_or_else(|| JsError::new(&format!("window {index} of {}", self.scenes.len())))?;
        let c = self.trainer.model().config();
        let w = window_at(scene, 0, c.history_len, c.future_len).map_err(js_err)?;
        let pred = self.trainer.model().predict(&w).map_err(js_err)?;
        let zv = zero_velocity(&w);
        let gt = w.future().expect("window_at keeps the future");
        let score = |p: &[f64]| -> Result<f64, JsError> {
            let mut acc =
                MetricAccumulator::new(Metric::Mpjpe, &(1..=c.future_len).collect::<Vec<_>>())
                    .map_err(js_err)?;
            acc.add(p, gt, w.mask(), c.joints).map_err(js_err)?;
            Ok(acc.finish().map_err(js_err)?.overall)
        };
        let t = c.future_len;
        let tracks = |buf: &[f64]| -> Vec<Vec<Track>> {
            (0..w.slots())
                .map(|s| {
                    (0..c.joints)
                        .map(|j| {
                            let row =
                                |axis: usize| &buf[((s * c.joints + j) * 3 + axis) * t..][..t];
                            row(0).iter().zip(row(2)).map(|(&x, &z)| [x, z]).collect()
                        })
                        .collect()
                })
                .collect()
        };
        let truth = (0..w.slots())
            .map(|s| {
                (0..c.joints)
                    .map(|j| {
                        (0..w.total_len())
                            .map(|f| {
                                let p = w.point(s, j, f);
                                [p[0], p[2]]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        to_js(&ForecastView {
            history_len: c.history_len,
            joint_names: scene.skeleton().names().to_vec(),
            truth,
            prediction: tracks(&pred),
            zero_velocity: tracks(&zv),
            mpjpe: score(&pred)?,
            zero_velocity_mpjpe: score(&zv)?,
        })
    }
}
