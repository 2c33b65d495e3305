//! Joint-trajectory transformer: every coordinate axis of every joint of
//! every person is one token holding the DCT coefficients of its padded
//! trajectory. The encoder refines those coefficients layer by layer
//! through a shared, zero-initialised output head.

mod checkpoint;
mod encoder;
mod tokens;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, Record,
};
pub use encoder::{embed_tokens, encoder_forward, EncoderOutput, LayerIds, ModelIds};
pub use tokens::{assign_grid_cells, decode_prediction, query_index, tokenize, QueryIndex};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dct::DctBasis;
use crate::error::{Error, Result};
use crate::scene::{remove_translation_at, TrajectoryWindow};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_token: usize,
    pub e_grid: usize,
    pub d_ff: usize,
    /// Grid cells per ground-plane axis.
    pub grid: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub joints: usize,
    pub n_slots: usize,
    /// Joint whose last observed position anchors each person.
    pub root_joint: usize,
    /// Per-layer loss weights; empty in a config file means the defaults.
    #[serde(default)]
    pub layer_loss_weights: Vec<f64>,
    #[serde(default)]
    pub dropout: f64,
}

/// Loss weights of 1 for the last layer and 0.2 for every earlier one.
pub fn default_layer_weights(layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|l| if l + 1 == layers { 1.0 } else { 0.2 })
        .collect()
}

impl ModelConfig {
    /// Desk-scale default on the 13-joint layout with the SoMoF frame counts.
    pub fn desk() -> Self {
        Self {
            layers: 6,
            heads: 8,
            d_token: 112,
            e_grid: 16,
            d_ff: 256,
            grid: 5,
            history_len: 16,
            future_len: 14,
            joints: 13,
            n_slots: 3,
            root_joint: 0,
            layer_loss_weights: default_layer_weights(6),
            dropout: 0.0,
        }
    }

    /// Small enough to train on one core in minutes.
    pub fn small() -> Self {
        Self {
            layers: 3,
            heads: 4,
            d_token: 48,
            e_grid: 16,
            d_ff: 128,
            layer_loss_weights: default_layer_weights(3),
            ..Self::desk()
        }
    }

    /// Minimal model for gradient checks and overfitting tests.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_token: 24,
            e_grid: 8,
            d_ff: 32,
            grid: 5,
            history_len: 4,
            future_len: 4,
            joints: 3,
            n_slots: 2,
            root_joint: 0,
            layer_loss_weights: default_layer_weights(2),
            dropout: 0.0,
        }
    }

    /// Full-size layout: 1024 wide, 6 layers, 8 heads.
    pub fn full() -> Self {
        Self {
            d_token: 1008,
            e_grid: 16,
            d_ff: 1024,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?}; expected tiny, small, desk or full"
            ))),
        }
    }

    /// Sets the frame counts, keeping everything else.
    pub fn with_frames(mut self, history_len: usize, future_len: usize) -> Self {
        self.history_len = history_len;
        self.future_len = future_len;
        self
    }

    pub fn d_model(&self) -> usize {
        self.d_token + self.e_grid
    }

    pub fn seq_len(&self) -> usize {
        self.history_len + self.future_len
    }

    pub fn queries(&self, slots: usize) -> usize {
        slots * self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_token", self.d_token),
            ("e_grid", self.e_grid),
            ("d_ff", self.d_ff),
            ("grid", self.grid),
            ("history_len", self.history_len),
            ("future_len", self.future_len),
            ("joints", self.joints),
            ("n_slots", self.n_slots),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model(),
                self.heads
            )));
        }
        if self.layer_loss_weights.len() != self.layers {
            return Err(Error::Config(format!(
                "{} layer loss weights for {} layers",
                self.layer_loss_weights.len(),
                self.layers
            )));
        }
        if self
            .layer_loss_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(
                "layer loss weights must be finite and non-negative".into(),
            ));
        }
        if self.root_joint >= self.joints {
            return Err(Error::Config(format!(
                "root joint {} out of range for {} joints",
                self.root_joint, self.joints
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Attention probabilities of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub heads: usize,
    pub queries: Vec<QueryIndex>,
    /// Per layer, `[head][query][key]` row-major.
    pub layers: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let q = self.num_queries();
        let start = (head * q + query) * q;
        &self.layers[layer][start..start + q]
    }
}

/// Output of [`SoMoFormer::forward`]. Trajectories are `[slot][joint][axis][frame]`
/// over the `future_len` predicted frames, in global coordinates; padded
/// slots are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub future: Vec<f64>,
    pub layers: Vec<Vec<f64>>,
    pub attention: AttentionRecord,
    pub cells: Vec<usize>,
    pub mask: Vec<bool>,
}

/// Tape handles for one window, for training.
pub struct TapeForward {
    pub local: TrajectoryWindow,
    pub cells: Vec<usize>,
    /// Per layer, predicted future `[queries × future_len]` relative to each
    /// person's root offset.
    pub layer_futures: Vec<Var>,
    /// Per layer, the coefficient residual `[queries × (t+T)]`.
    pub residuals: Vec<Var>,
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct SoMoFormer {
    config: ModelConfig,
    params: ParamSet,
    ids: ModelIds,
    basis: DctBasis,
}

impl SoMoFormer {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = encoder::init_params(&config, rng);
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking every expected name and shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let ids = ModelIds::resolve(&params, &config)?;
        let basis = DctBasis::new(config.seq_len())?;
        Ok(Self {
            config,
            params,
            ids,
            basis,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn basis(&self) -> &DctBasis {
        &self.basis
    }

    fn check_window(&self, window: &TrajectoryWindow) -> Result<()> {
        let c = &self.config;
        let shape_ok = window.history_len() == c.history_len
            && window.joints() == c.joints
            && (!window.has_future() || window.future_len() == c.future_len);
        if !shape_ok {
            return Err(Error::Window(format!(
                "window has t={}, T={}, J={}; model expects t={}, T={}, J={}",
                window.history_len(),
                window.future_len(),
                window.joints(),
                c.history_len,
                c.future_len,
                c.joints
            )));
        }
        if window.slots() > c.n_slots {
            return Err(Error::Window(format!(
                "window has {} slots; model supports {}",
                window.slots(),
                c.n_slots
            )));
        }
        if window.num_real() == 0 {
            return Err(Error::NoValidKeys);
        }
        if window.is_local() {
            return Err(Error::Window(
                "model input must be in global coordinates".into(),
            ));
        }
        Ok(())
    }

    /// Records the full forward pass on `tape`. Dropout is active only when
    /// an rng is supplied.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        window: &TrajectoryWindow,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<TapeForward> {
        self.check_window(window)?;
        let c = &self.config;
        let cells = assign_grid_cells(window, c.root_joint, c.grid)?;
        let local = remove_translation_at(window, c.root_joint)?;
        let tokens = tokenize(&local, &self.basis)?;
        let slots = window.slots();
        let q = c.queries(slots);
        let token_var = tape.constant(Tensor::new(&[q, c.seq_len()], tokens)?);
        let embedded = embed_tokens(tape, &self.params, &self.ids, c, token_var, slots, &cells)?;
        let key_mask: Vec<bool> = window
            .mask()
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, c.joints * 3))
            .collect();
        let enc = encoder_forward(
            tape,
            &self.params,
            &self.ids,
            c,
            embedded,
            &key_mask,
            dropout_rng,
        )?;
        let inverse = tape.constant(self.basis.inverse_tensor());
        let mut layer_futures = Vec::with_capacity(c.layers);
        for &residual in &enc.residuals {
            let coeffs = tape.add(token_var, residual)?;
            let traj = tape.matmul(coeffs, inverse)?;
            layer_futures.push(tape.slice_last(traj, c.history_len, c.future_len)?);
        }
        Ok(TapeForward {
            local,
            cells,
            layer_futures,
            residuals: enc.residuals,
            attention: enc.attention,
        })
    }

    pub fn forward(&self, window: &TrajectoryWindow) -> Result<Prediction> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, window, None)?;
        let offsets = pass.local.root_offsets().expect("local window has offsets");
        let (j, t) = (self.config.joints, self.config.future_len);
        let mask = window.mask().to_vec();
        let layers: Vec<Vec<f64>> = pass
            .layer_futures
            .iter()
            .map(|&v| {
                let mut out = tape.value(v).data().to_vec();
                for (row, chunk) in out.chunks_mut(t).enumerate() {
                    let slot = row / (j * 3);
                    if mask[slot] {
                        let d = offsets[slot][row % 3];
                        chunk.iter_mut().for_each(|x| *x += d);
                    } else {
                        chunk.fill(0.0);
                    }
                }
                out
            })
            .collect();
        let attention = AttentionRecord {
            heads: self.config.heads,
            queries: (0..self.config.queries(window.slots()))
                .map(|q| query_index(q, j))
                .collect(),
            layers: pass
                .attention
                .iter()
                .map(|&a| tape.value(a).data().to_vec())
                .collect(),
        };
        Ok(Prediction {
            future: layers.last().cloned().unwrap_or_default(),
            layers,
            attention,
            cells: pass.cells,
            mask,
        })
    }

    /// Final-layer prediction only.
    pub fn predict(&self, window: &TrajectoryWindow) -> Result<Vec<f64>> {
        Ok(self.forward(window)?.future)
    }
}

#[cfg(test)]
mod tests;
