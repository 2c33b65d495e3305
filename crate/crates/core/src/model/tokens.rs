use serde::{Deserialize, Serialize};

use crate::dct::DctBasis;
use crate::error::{Error, Result};
use crate::scene::{pad_future, TrajectoryWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryIndex {
    pub slot: usize,
    pub joint: usize,
    pub axis: usize,
}

/// Token `q` of a window with `joints` joints per slot.
pub fn query_index(q: usize, joints: usize) -> QueryIndex {
    QueryIndex {
        slot: q / (joints * 3),
        joint: (q / 3) % joints,
        axis: q % 3,
    }
}

/// DCT coefficients of every padded `(slot, joint, axis)` history row,
/// `[Q × (t+T)]` row-major.
pub fn tokenize(local: &TrajectoryWindow, basis: &DctBasis) -> Result<Vec<f64>> {
    if !local.is_local() {
        return Err(Error::Window(
            "tokenize expects a translation-removed window".into(),
        ));
    }
    let len = local.history_len() + local.future_len();
    if basis.len() != len {
        return Err(Error::Length {
            op: "tokenize",
            expected: len,
            actual: basis.len(),
        });
    }
    basis.forward(&pad_future(
        local.history(),
        local.history_len(),
        local.future_len(),
    ))
}

/// Grid cell (`ix * grid + iz`) of every slot's root joint at the last
/// observed frame, on a square fitted to the real persons and enlarged by
/// 5%. Padded slots get cell 0.
pub fn assign_grid_cells(
    window: &TrajectoryWindow,
    root: usize,
    grid: usize,
) -> Result<Vec<usize>> {
    let roots: Vec<Option<[f64; 3]>> = (0..window.slots())
        .map(|s| window.mask()[s].then(|| window.last_root(s, root)))
        .collect();
    let real: Vec<[f64; 3]> = roots.iter().flatten().copied().collect();
    if real.is_empty() {
        return Err(Error::NoValidKeys);
    }
    let bound = |axis: usize| {
        let lo = real.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = real
            .iter()
            .map(|p| p[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let ((x0, x1), (z0, z1)) = (bound(0), bound(2));
    let side = (x1 - x0).max(z1 - z0) * 1.05;
    let (cx, cz) = ((x0 + x1) / 2.0, (z0 + z1) / 2.0);
    let index = |v: f64, centre: f64| -> usize {
        let u = ((v - (centre - side / 2.0)) / side * grid as f64).floor();
        u.clamp(0.0, (grid - 1) as f64) as usize
    };
    Ok(roots
        .iter()
        .map(|r| match r {
            None => 0,
            Some(_) if !(side > 0.0) => (grid / 2) * grid + grid / 2,
            Some(p) => index(p[0], cx) * grid + index(p[2], cz),
        })
        .collect())
}

/// Future frames of `tokens + residual` after the inverse DCT, with each
/// slot's offset added back. Returns `[slot][joint][axis][frame]` over the
/// last `len - history_len` frames.
pub fn decode_prediction(
    tokens: &[f64],
    residual: &[f64],
    basis: &DctBasis,
    history_len: usize,
    root_offsets: &[[f64; 3]],
) -> Result<Vec<f64>> {
    if tokens.len() != residual.len() {
        return Err(Error::Length {
            op: "decode_prediction",
            expected: tokens.len(),
            actual: residual.len(),
        });
    }
    let n = basis.len();
    let rows = tokens.len() / n;
    if rows * n != tokens.len()
        || !rows.is_multiple_of(3)
        || history_len >= n
        || root_offsets.is_empty()
        || !rows.is_multiple_of(root_offsets.len())
    {
        return Err(Error::Length {
            op: "decode_prediction",
            expected: root_offsets.len() * n,
            actual: tokens.len(),
        });
    }
    let per_slot = rows / root_offsets.len();
    let coeffs: Vec<f64> = tokens.iter().zip(residual).map(|(a, b)| a + b).collect();
    let traj = basis.inverse(&coeffs)?;
    Ok(traj
        .chunks(n)
        .enumerate()
        .flat_map(|(row, r)| {
            let d = root_offsets[row / per_slot][row % 3];
            r[history_len..].iter().map(move |v| v + d)
        })
        .collect())
}
