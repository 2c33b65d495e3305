//! Weighted per-layer loss, Adam training steps, the step learning-rate
//! schedule and a resumable epoch loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{
    default_layer_weights, Checkpoint, ModelConfig, Record, SoMoFormer, TapeForward,
};
use crate::scene::{sample_window, Scene, TrajectoryWindow};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Fraction of all steps after which the learning rate is decayed.
    pub lr_decay_at: f64,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub train_data: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_at: 0.9,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            train_data: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        if cfg.model.layer_loss_weights.is_empty() {
            cfg.model.layer_loss_weights = default_layer_weights(cfg.model.layers);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::SerdeJson(source) => Error::Json {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return Err(Error::Config("lr_decay_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) {
            return Err(Error::Config("lr_decay_at must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Base rate until `decay_at · total_steps`, then base times the decay factor.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let decay_step = (cfg.lr_decay_at * total_steps as f64).floor() as usize;
    if step >= decay_step {
        cfg.lr * cfg.lr_decay_factor
    } else {
        cfg.lr
    }
}

/// Weighted squared error of every layer's prediction over the real
/// persons' future frames, divided by the number of real persons.
///
/// Each prediction and `gt` are `[slot][joint][axis][frame]` with
/// `future_len` frames.
pub fn compute_loss(
    layer_preds: &[Vec<f64>],
    gt: &[f64],
    mask: &[bool],
    weights: &[f64],
) -> Result<f64> {
    let real = mask.iter().filter(|&&m| m).count();
    if real == 0 {
        return Err(Error::Window("loss needs at least one real person".into()));
    }
    if layer_preds.len() != weights.len() {
        return Err(Error::Length {
            op: "compute_loss weights",
            expected: layer_preds.len(),
            actual: weights.len(),
        });
    }
    if !gt.len().is_multiple_of(mask.len()) {
        return Err(Error::Length {
            op: "compute_loss",
            expected: mask.len(),
            actual: gt.len(),
        });
    }
    let per_slot = gt.len() / mask.len();
    let mut total = 0.0;
    for (pred, w) in layer_preds.iter().zip(weights) {
        if pred.len() != gt.len() {
            return Err(Error::Length {
                op: "compute_loss",
                expected: gt.len(),
                actual: pred.len(),
            });
        }
        let sq: f64 = pred
            .chunks(per_slot)
            .zip(gt.chunks(per_slot))
            .zip(mask)
            .filter(|(_, &m)| m)
            .flat_map(|((p, g), _)| p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)))
            .sum();
        total += w * sq;
    }
    Ok(total / real as f64)
}

/// Records the loss contribution of one window, already divided by
/// `denominator` (the number of real persons in the whole batch).
/// Returns the loss variable and the unweighted per-layer squared errors.
pub fn window_loss(
    tape: &mut Tape,
    pass: &TapeForward,
    weights: &[f64],
    denominator: f64,
) -> Result<(Var, Vec<f64>)> {
    let local = &pass.local;
    let gt = local
        .future()
        .ok_or_else(|| Error::Window("training windows need ground-truth futures".into()))?;
    let rows_per_slot = local.joints() * 3;
    let t = local.future_len();
    let rows: Vec<usize> = local
        .real_slots()
        .flat_map(|s| s * rows_per_slot..(s + 1) * rows_per_slot)
        .collect();
    let gt_rows: Vec<f64> = rows
        .iter()
        .flat_map(|&r| gt[r * t..(r + 1) * t].iter().copied())
        .collect();
    let target = tape.constant(Tensor::new(&[rows.len(), t], gt_rows)?);
    let mut total: Option<Var> = None;
    let mut per_layer = Vec::with_capacity(weights.len());
    for (&pred, &w) in pass.layer_futures.iter().zip(weights) {
        let real = tape.gather_rows(pred, &rows)?;
        let diff = tape.sub(real, target)?;
        let sq = tape.mul(diff, diff)?;
        let sum = tape.sum(sq);
        per_layer.push(tape.value(sum).item());
        let term = tape.scale(sum, w / denominator);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((total.expect("model has at least one layer"), per_layer))
}

/// Forward, loss, backward and one Adam update over `batch`, whose
/// windows carry ground truth in global coordinates. Gradients from every
/// window accumulate before the update and are cleared afterwards.
pub fn train_step(
    model: &mut SoMoFormer,
    adam: &mut AdamState,
    batch: &[TrajectoryWindow],
    lr: f64,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let real: usize = batch.iter().map(TrajectoryWindow::num_real).sum();
    if real == 0 {
        return Err(Error::Window("batch has no real persons".into()));
    }
    let weights = model.config().layer_loss_weights.clone();
    model.params_mut().zero_grad();
    let mut loss = 0.0;
    let mut per_layer = vec![0.0; weights.len()];
    let mut largest = 0.0f64;
    for w in batch {
        let mut tape = Tape::new();
        let rng = dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        let pass = model.forward_on_tape(&mut tape, w, rng)?;
        let (l, layers) = window_loss(&mut tape, &pass, &weights, real as f64)?;
        loss += tape.value(l).item();
        for (acc, v) in per_layer.iter_mut().zip(layers) {
            *acc += v;
        }
        for &f in &pass.layer_futures {
            largest = tape
                .value(f)
                .data()
                .iter()
                .fold(largest, |m, v| m.max(v.abs()));
        }
        if loss.is_finite() {
            tape.backward_into(l, model.params_mut())?;
        }
    }
    if !loss.is_finite() {
        model.params_mut().zero_grad();
        let layer = per_layer.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite(format!(
            "training loss is {loss}; first non-finite layer {} (squared error {}), largest |prediction| {largest:e}",
            layer + 1,
            per_layer[layer]
        )));
    }
    adam.step(model.params_mut(), lr)?;
    model.params_mut().zero_grad();
    Ok(loss)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Generator for epoch `epoch`: a fixed stream per epoch, so a run resumed
/// at an epoch boundary draws the same numbers as an uninterrupted one.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: SoMoFormer,
    adam: AdamState,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = SoMoFormer::new(config.model.clone(), &mut rng)?;
        let adam = AdamState::new(model.params(), config.adam);
        Ok(Self {
            config,
            model,
            adam,
            epoch: 0,
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.config != config.model {
            return Err(Error::Checkpoint(
                "checkpoint model config differs from the training config".into(),
            ));
        }
        let model = SoMoFormer::from_checkpoint(ckpt)?;
        let scalar = |name: &str| -> Result<f64> {
            ckpt.record(name)
                .and_then(|r| r.data.first().copied())
                .ok_or_else(|| Error::Checkpoint(format!("missing training record {name}")))
        };
        let mut adam = AdamState::new(model.params(), config.adam);
        adam.step = scalar("optim.step")? as u64;
        for (i, (name, t)) in model.params().iter().enumerate() {
            for (prefix, dst) in [("optim.m.", &mut adam.m[i]), ("optim.v.", &mut adam.v[i])] {
                let r = ckpt.record(&format!("{prefix}{name}")).ok_or_else(|| {
                    Error::Checkpoint(format!("missing optimizer state {prefix}{name}"))
                })?;
                if r.data.len() != t.len() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state {prefix}{name} has wrong size"
                    )));
                }
                dst.copy_from_slice(&r.data);
            }
        }
        Ok(Self {
            config,
            model,
            adam,
            epoch: scalar("train.epoch")? as usize,
            step: scalar("train.step")? as usize,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        for (i, (name, t)) in self.model.params().iter().enumerate() {
            for (prefix, data) in [("optim.m.", &self.adam.m[i]), ("optim.v.", &self.adam.v[i])] {
                ckpt.records.push(Record {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                    data: data.clone(),
                });
            }
        }
        for (name, v) in [
            ("optim.step", self.adam.step as f64),
            ("train.epoch", self.epoch as f64),
            ("train.step", self.step as f64),
        ] {
            ckpt.records.push(Record {
                name: name.into(),
                shape: vec![1],
                data: vec![v],
            });
        }
        ckpt
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &SoMoFormer {
        &self.model
    }

    pub fn into_model(self) -> SoMoFormer {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Checks that every scene fits the model before any training happens.
    pub fn check_data(&self, scenes: &[Scene]) -> Result<()> {
        let c = &self.config.model;
        if scenes.is_empty() {
            return Err(Error::Scene("training data is empty".into()));
        }
        for (i, s) in scenes.iter().enumerate() {
            if s.joints() != c.joints || s.frames() < c.seq_len() || s.num_persons() == 0 {
                return Err(Error::Scene(format!(
                    "scene {i} has {} joints, {} frames and {} persons; the model needs {} joints, at least {} frames and one person",
                    s.joints(),
                    s.frames(),
                    s.num_persons(),
                    c.joints,
                    c.seq_len()
                )));
            }
            if s.num_persons() > c.n_slots {
                return Err(Error::Scene(format!(
                    "scene {i} has {} persons but the model has {} slots",
                    s.num_persons(),
                    c.n_slots
                )));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, num_scenes: usize) -> usize {
        num_scenes.div_ceil(self.config.batch_size)
    }

    /// Runs one epoch: one randomly placed window per scene, shuffled, padded
    /// to `n_slots` and augmented. Permutation therefore also moves real
    /// persons into slots that would otherwise always be padding.
    pub fn run_epoch(
        &mut self,
        scenes: &[Scene],
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<f64> {
        self.check_data(scenes)?;
        let c = self.config.model.clone();
        let total_steps = self.steps_per_epoch(scenes.len()) * self.config.epochs;
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        let mut windows = scenes
            .iter()
            .map(|s| sample_window(s, c.history_len, c.future_len, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        windows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in windows.chunks(self.config.batch_size) {
            let batch = chunk
                .iter()
                .map(|w| Ok(self.config.augment.apply(&w.packed(c.n_slots)?, &mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let lr = lr_schedule(self.step, total_steps, &self.config);
            let loss = train_step(&mut self.model, &mut self.adam, &batch, lr, Some(&mut rng))?;
            on_step(&StepLog {
                step: self.step,
                epoch: self.epoch,
                loss,
                lr,
            });
            self.step += 1;
            epoch_loss += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(epoch_loss / batches as f64)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::scene::synthetic::{generate_scene, MotionConfig};

    fn tiny_scenes(n: usize, seed: u64) -> Vec<Scene> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                generate_scene(2, 8, &MotionConfig::default(), &mut rng)
                    .unwrap()
                    .select_joints(&[0, 9, 12])
                    .unwrap()
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig::tiny(),
            epochs: 3,
            batch_size: 2,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, 1000, &cfg), 0.001);
        assert_eq!(lr_schedule(899, 1000, &cfg), 0.001);
        assert!((lr_schedule(900, 1000, &cfg) - 0.0001).abs() < 1e-18);
        assert!((lr_schedule(999, 1000, &cfg) - 0.0001).abs() < 1e-18);
        let flat = TrainConfig {
            lr_decay_factor: 1.0,
            ..cfg
        };
        assert!((0..1000).all(|s| lr_schedule(s, 1000, &flat) == 0.001));
    }

    #[test]
    fn loss_examples() {
        let mask = [true];
        let gt = vec![0.5; 6];
        assert_eq!(
            compute_loss(&[gt.clone(), gt.clone()], &gt, &mask, &[0.2, 1.0]).unwrap(),
            0.0
        );
        let mut off = gt.clone();
        off[3] += 2.0;
        assert_eq!(
            compute_loss(&[off.clone()], &gt, &mask, &[1.0]).unwrap(),
            4.0
        );
        assert!(compute_loss(std::slice::from_ref(&gt), &gt, &[false], &[1.0]).is_err());

        // Two slots (second padded), two layers. Hand-summed:
        // layer 1 errors (1, -1, 0.5) → 2.25, layer 2 error (0.1) → 0.01,
        // padded slot ignored; total 0.2·2.25 + 1·0.01 = 0.46.
        let gt = vec![0.0, 0.0, 0.0, 9.0, 9.0, 9.0];
        let l1 = vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.0];
        let l2 = vec![0.0, 0.1, 0.0, -3.0, 4.0, 5.0];
        let v = compute_loss(&[l1, l2], &gt, &[true, false], &[0.2, 1.0]).unwrap();
        assert!((v - 0.46).abs() < 1e-12, "{v}");
    }

    #[test]
    fn tape_loss_matches_value_oracle() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = SoMoFormer::new(cfg.model.clone(), &mut rng).unwrap();
        for v in model
            .params_mut()
            .by_name_mut("head.weight")
            .unwrap()
            .data_mut()
        {
            *v = rng.gen_range(-0.2..0.2);
        }
        let scene = &tiny_scenes(1, 2)[0];
        let w = crate::scene::window_at(scene, 0, 4, 4)
            .unwrap()
            .packed(2)
            .unwrap();
        let pred = model.forward(&w).unwrap();
        let oracle = compute_loss(
            &pred.layers,
            w.future().unwrap(),
            w.mask(),
            &cfg.model.layer_loss_weights,
        )
        .unwrap();
        let mut tape = Tape::new();
        let pass = model.forward_on_tape(&mut tape, &w, None).unwrap();
        let (l, _) = window_loss(
            &mut tape,
            &pass,
            &cfg.model.layer_loss_weights,
            w.num_real() as f64,
        )
        .unwrap();
        assert!((tape.value(l).item() - oracle).abs() < 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn permutation_reaches_otherwise_padded_slots() {
        let scenes: Vec<Scene> = tiny_scenes(6, 4)
            .iter()
            .map(|s| {
                Scene::new(
                    s.fps,
                    s.skeleton().clone(),
                    s.frames(),
                    s.persons()[..1].to_vec(),
                )
                .unwrap()
            })
            .collect();
        let slot1 = |permute: bool| {
            let mut cfg = tiny_config();
            cfg.augment = AugmentConfig {
                permute,
                ..AugmentConfig::none()
            };
            let mut trainer = Trainer::new(cfg).unwrap();
            let before = trainer
                .model()
                .params()
                .by_name("embed.identity")
                .unwrap()
                .data()[24..]
                .to_vec();
            trainer.run_epoch(&scenes, |_| {}).unwrap();
            let after = trainer
                .model()
                .params()
                .by_name("embed.identity")
                .unwrap()
                .data()[24..]
                .to_vec();
            before != after
        };
        assert!(!slot1(false));
        assert!(slot1(true));
    }

    #[test]
    fn zero_weights_leave_params_unchanged() {
        let mut cfg = tiny_config();
        cfg.model.layer_loss_weights = vec![0.0, 0.0];
        let mut trainer = Trainer::new(cfg).unwrap();
        let before = trainer.model().params().clone();
        trainer.run_epoch(&tiny_scenes(2, 3), |_| {}).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(trainer.model().params().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn runs_are_deterministic_and_resume_exactly() {
        let scenes = tiny_scenes(4, 4);
        let run = |epochs: usize| {
            let mut t = Trainer::new(tiny_config()).unwrap();
            let mut log = Vec::new();
            for _ in 0..epochs {
                t.run_epoch(&scenes, |s| log.push(s.clone())).unwrap();
            }
            (t, log)
        };
        let (full, full_log) = run(3);
        let (again, again_log) = run(3);
        assert_eq!(full_log, again_log);
        assert_eq!(full.model().params(), again.model().params());

        let (partial, _) = run(1);
        let bytes = partial.to_checkpoint().encode().unwrap();
        let mut resumed =
            Trainer::resume(tiny_config(), &Checkpoint::decode(&bytes).unwrap()).unwrap();
        let mut resumed_log = Vec::new();
        while !resumed.is_done() {
            resumed
                .run_epoch(&scenes, |s| resumed_log.push(s.clone()))
                .unwrap();
        }
        assert_eq!(resumed_log, full_log[2..]);
        for ((_, a), (_, b)) in resumed
            .model()
            .params()
            .iter()
            .zip(full.model().params().iter())
        {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let cfg = tiny_config();
        let mut model =
            SoMoFormer::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        model
            .params_mut()
            .by_name_mut("head.bias")
            .unwrap()
            .data_mut()[5] = f64::INFINITY;
        let mut adam = AdamState::new(model.params(), cfg.adam);
        let scene = &tiny_scenes(1, 6)[0];
        let w = crate::scene::window_at(scene, 0, 4, 4).unwrap();
        let err = train_step(&mut model, &mut adam, &[w], 1e-3, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("layer 1"), "{err}");
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn bad_data_is_reported_before_training() {
        let trainer = Trainer::new(tiny_config()).unwrap();
        assert!(trainer.check_data(&[]).is_err());
        let wide = tiny_scenes(1, 7)[0].clone();
        let three = generate_scene(
            3,
            8,
            &MotionConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap()
        .select_joints(&[0, 9, 12])
        .unwrap();
        assert!(trainer.check_data(std::slice::from_ref(&wide)).is_ok());
        assert!(trainer
            .check_data(&[three])
            .unwrap_err()
            .to_string()
            .contains("slots"));
        assert!(TrainConfig {
            lr: 0.0,
            ..tiny_config()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_json_fills_defaults() {
        let cfg = TrainConfig::from_json(r#"{"epochs": 5, "model": {"layers": 2, "heads": 2, "d_token": 24, "e_grid": 8, "d_ff": 32, "grid": 5, "history_len": 4, "future_len": 4, "joints": 3, "n_slots": 2, "root_joint": 0, "layer_loss_weights": []}}"#).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.model.layer_loss_weights, vec![0.2, 1.0]);
        assert_eq!(cfg.batch_size, 32);
        cfg.validate().unwrap();
    }
}
