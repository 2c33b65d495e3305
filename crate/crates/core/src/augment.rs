//! Training-time window transformations.
//!
//! Applied in a fixed order: reverse, rotate, permute.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::TrajectoryWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotate about the vertical axis by an angle uniform on `[0, 2π)`.
    pub rotate: bool,
    /// Probability of reversing a window in time.
    pub reverse_prob: f64,
    /// Shuffle person slots, padding included.
    pub permute: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            reverse_prob: 0.5,
            permute: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotate: false,
            reverse_prob: 0.0,
            permute: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reverse_prob) {
            return Err(Error::Config(format!(
                "reverse_prob must be in [0, 1], got {}",
                self.reverse_prob
            )));
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        window: &TrajectoryWindow,
        rng: &mut R,
    ) -> TrajectoryWindow {
        let mut w = window.clone();
        if self.reverse_prob > 0.0 && rng.gen::<f64>() < self.reverse_prob {
            w = reverse_window(&w);
        }
        if self.rotate {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            w = rotate_scene(&w, theta);
        }
        if self.permute {
            let mut perm: Vec<usize> = (0..w.slots()).collect();
            perm.shuffle(rng);
            w = permute_persons(&w, &perm).expect("shuffled indices form a permutation");
        }
        w
    }
}

/// Rotation by `theta` about the vertical (y) axis through the origin.
pub fn rotate_point([x, y, z]: [f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [x * c + z * s, y, -x * s + z * c]
}

pub fn rotate_scene(window: &TrajectoryWindow, theta: f64) -> TrajectoryWindow {
    let mut w = window.clone();
    w.map_points(|p| rotate_point(p, theta));
    w
}

pub fn reverse_window(window: &TrajectoryWindow) -> TrajectoryWindow {
    window.reversed()
}

/// Moves the person in slot `i` to slot `perm[i]`.
pub fn permute_persons(window: &TrajectoryWindow, perm: &[usize]) -> Result<TrajectoryWindow> {
    window.permuted(perm)
}
