use rand::Rng;

use super::{Person, Scene, SkeletonDef};
use crate::error::{Error, Result};

/// One sample: `history_len` observed frames (and optionally `future_len`
/// ground-truth frames) for a fixed number of person slots.
///
/// Coordinates are stored slot-major as `[slot][joint][axis][frame]`, so
/// every `(slot, joint, axis)` trajectory is one contiguous row. Slots whose
/// mask entry is false are padding and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    history_len: usize,
    future_len: usize,
    joints: usize,
    history: Vec<f64>,
    future: Option<Vec<f64>>,
    mask: Vec<bool>,
    root_offsets: Option<Vec<[f64; 3]>>,
}

/// A single person's rows extracted from a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrajectory {
    pub history: Vec<f64>,
    pub future: Option<Vec<f64>>,
    pub root_offset: Option<[f64; 3]>,
}

impl TrajectoryWindow {
    pub fn new(
        history_len: usize,
        future_len: usize,
        joints: usize,
        history: Vec<f64>,
        future: Option<Vec<f64>>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if history_len == 0 || joints == 0 {
            return Err(Error::Window(
                "history length and joint count must be positive".into(),
            ));
        }
        let slots = mask.len();
        if history.len() != slots * joints * 3 * history_len {
            return Err(Error::Length {
                op: "window history",
                expected: slots * joints * 3 * history_len,
                actual: history.len(),
            });
        }
        if let Some(f) = &future {
            if f.len() != slots * joints * 3 * future_len {
                return Err(Error::Length {
                    op: "window future",
                    expected: slots * joints * 3 * future_len,
                    actual: f.len(),
                });
            }
        }
        let mut w = Self {
            history_len,
            future_len,
            joints,
            history,
            future,
            mask,
            root_offsets: None,
        };
        w.zero_padded_slots();
        Ok(w)
    }

    fn zero_padded_slots(&mut self) {
        let (hs, fs) = (
            self.joints * 3 * self.history_len,
            self.joints * 3 * self.future_len,
        );
        for s in 0..self.mask.len() {
            if !self.mask[s] {
                self.history[s * hs..(s + 1) * hs].fill(0.0);
                if let Some(f) = &mut self.future {
                    f[s * fs..(s + 1) * fs].fill(0.0);
                }
            }
        }
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn future_len(&self) -> usize {
        self.future_len
    }

    pub fn total_len(&self) -> usize {
        self.history_len + self.future_len
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn slots(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn num_real(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn real_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn future(&self) -> Option<&[f64]> {
        self.future.as_deref()
    }

    pub fn has_future(&self) -> bool {
        self.future.is_some()
    }

    pub fn root_offsets(&self) -> Option<&[[f64; 3]]> {
        self.root_offsets.as_deref()
    }

    pub fn is_local(&self) -> bool {
        self.root_offsets.is_some()
    }

    /// Drops ground truth, as at inference time.
    pub fn without_future(mut self) -> Self {
        self.future = None;
        self
    }

    /// History row for one `(slot, joint, axis)`.
    pub fn history_row(&self, slot: usize, joint: usize, axis: usize) -> &[f64] {
        let start = ((slot * self.joints + joint) * 3 + axis) * self.history_len;
        &self.history[start..start + self.history_len]
    }

    pub fn future_row(&self, slot: usize, joint: usize, axis: usize) -> Option<&[f64]> {
        let start = ((slot * self.joints + joint) * 3 + axis) * self.future_len;
        self.future
            .as_ref()
            .map(|f| &f[start..start + self.future_len])
    }

    /// Position of a joint at a frame of the full `history + future` sequence.
    pub fn point(&self, slot: usize, joint: usize, frame: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (axis, v) in p.iter_mut().enumerate() {
            *v = if frame < self.history_len {
                self.history_row(slot, joint, axis)[frame]
            } else {
                self.future_row(slot, joint, axis)
                    .expect("window has no future")[frame - self.history_len]
            };
        }
        p
    }

    /// Root joint position at the last observed frame.
    pub fn last_root(&self, slot: usize, root: usize) -> [f64; 3] {
        self.point(slot, root, self.history_len - 1)
    }

    /// Applies `f` to every stored point (history, future and offsets).
    pub(crate) fn map_points(&mut self, f: impl Fn([f64; 3]) -> [f64; 3]) {
        fn apply(buf: &mut [f64], len: usize, f: &impl Fn([f64; 3]) -> [f64; 3]) {
            for block in buf.chunks_mut(3 * len) {
                for k in 0..len {
                    let p = f([block[k], block[len + k], block[2 * len + k]]);
                    block[k] = p[0];
                    block[len + k] = p[1];
                    block[2 * len + k] = p[2];
                }
            }
        }
        let (h, t) = (self.history_len, self.future_len);
        apply(&mut self.history, h, &f);
        if let Some(fut) = &mut self.future {
            apply(fut, t, &f);
        }
        if let Some(off) = &mut self.root_offsets {
            off.iter_mut().for_each(|o| *o = f(*o));
        }
        self.zero_padded_slots();
    }

    /// Full sequence reversed in time; the history/future split is re-taken
    /// at the same lengths.
    pub(crate) fn reversed(&self) -> Self {
        let Some(future) = &self.future else {
            let mut out = self.clone();
            for row in out.history.chunks_mut(self.history_len) {
                row.reverse();
            }
            return out;
        };
        let (h, t) = (self.history_len, self.future_len);
        let rows = self.mask.len() * self.joints * 3;
        let mut hist = Vec::with_capacity(rows * h);
        let mut fut = Vec::with_capacity(rows * t);
        for r in 0..rows {
            let mut full: Vec<f64> = self.history[r * h..(r + 1) * h].to_vec();
            full.extend_from_slice(&future[r * t..(r + 1) * t]);
            full.reverse();
            hist.extend_from_slice(&full[..h]);
            fut.extend_from_slice(&full[h..]);
        }
        Self {
            history: hist,
            future: Some(fut),
            ..self.clone()
        }
    }

    /// Moves slot `i` to slot `perm[i]`, carrying data, mask and offsets.
    pub(crate) fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.mask.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Window(format!(
                "{perm:?} is not a permutation of {n} slots"
            )));
        }
        let (hs, fs) = (
            self.joints * 3 * self.history_len,
            self.joints * 3 * self.future_len,
        );
        let mut out = self.clone();
        for (src, &dst) in perm.iter().enumerate() {
            out.history[dst * hs..(dst + 1) * hs]
                .copy_from_slice(&self.history[src * hs..(src + 1) * hs]);
            if let (Some(o), Some(i)) = (&mut out.future, &self.future) {
                o[dst * fs..(dst + 1) * fs].copy_from_slice(&i[src * fs..(src + 1) * fs]);
            }
            out.mask[dst] = self.mask[src];
            if let (Some(o), Some(i)) = (&mut out.root_offsets, &self.root_offsets) {
                o[dst] = i[src];
            }
        }
        Ok(out)
    }

    /// Extracts the real persons in slot order.
    pub fn persons(&self) -> Vec<PersonTrajectory> {
        let (hs, fs) = (
            self.joints * 3 * self.history_len,
            self.joints * 3 * self.future_len,
        );
        self.real_slots()
            .map(|s| PersonTrajectory {
                history: self.history[s * hs..(s + 1) * hs].to_vec(),
                future: self
                    .future
                    .as_ref()
                    .map(|f| f[s * fs..(s + 1) * fs].to_vec()),
                root_offset: self.root_offsets.as_ref().map(|o| o[s]),
            })
            .collect()
    }

    /// Returns a copy with `n_slots` slots: real persons packed first, the
    /// rest zero and masked out.
    pub fn packed(&self, n_slots: usize) -> Result<Self> {
        let persons = self.persons();
        if persons.len() > n_slots {
            return Err(Error::Window(format!(
                "window has {} persons but only {n_slots} slots",
                persons.len()
            )));
        }
        let (hs, fs) = (
            self.joints * 3 * self.history_len,
            self.joints * 3 * self.future_len,
        );
        let mut history = vec![0.0; n_slots * hs];
        let mut future = self.future.as_ref().map(|_| vec![0.0; n_slots * fs]);
        let mut offsets = self.root_offsets.as_ref().map(|_| vec![[0.0; 3]; n_slots]);
        let mut mask = vec![false; n_slots];
        for (s, p) in persons.into_iter().enumerate() {
            history[s * hs..(s + 1) * hs].copy_from_slice(&p.history);
            if let (Some(f), Some(pf)) = (&mut future, &p.future) {
                f[s * fs..(s + 1) * fs].copy_from_slice(pf);
            }
            if let (Some(o), Some(po)) = (&mut offsets, p.root_offset) {
                o[s] = po;
            }
            mask[s] = true;
        }
        Ok(Self {
            history_len: self.history_len,
            future_len: self.future_len,
            joints: self.joints,
            history,
            future,
            mask,
            root_offsets: offsets,
        })
    }

    /// Builds a window whose future rows are replaced by `future`
    /// (`[slot][joint][axis][frame]`, `future_len` frames).
    pub fn with_future(&self, future: Vec<f64>) -> Result<Self> {
        let mut w = self.clone();
        let expected = self.mask.len() * self.joints * 3 * self.future_len;
        if future.len() != expected {
            return Err(Error::Length {
                op: "with_future",
                expected,
                actual: future.len(),
            });
        }
        w.future = Some(future);
        w.zero_padded_slots();
        Ok(w)
    }

    /// Real persons as a scene of `history + future` frames (history only if
    /// there is no future).
    pub fn to_scene(&self, skeleton: &SkeletonDef, fps: f64, ids: &[String]) -> Result<Scene> {
        if self.is_local() {
            return Err(Error::Window(
                "window is in root-relative coordinates".into(),
            ));
        }
        let frames = if self.has_future() {
            self.total_len()
        } else {
            self.history_len
        };
        let persons = self
            .real_slots()
            .enumerate()
            .map(|(i, s)| {
                let points = (0..frames)
                    .flat_map(|f| (0..self.joints).map(move |j| (f, j)))
                    .map(|(f, j)| self.point(s, j, f))
                    .collect();
                let id = ids.get(i).cloned().unwrap_or_else(|| format!("person{i}"));
                Person::new(id, points)
            })
            .collect();
        Scene::new(fps, skeleton.clone(), frames, persons)
    }
}

/// Window of every person in `scene` starting at frame `start`. With
/// `future_len == 0` no future is attached.
pub fn window_at(
    scene: &Scene,
    start: usize,
    history_len: usize,
    future_len: usize,
) -> Result<TrajectoryWindow> {
    let total = history_len + future_len;
    if scene.frames() < start + total {
        return Err(Error::Window(format!(
            "scene has {} frames; need {} starting at {start}",
            scene.frames(),
            total
        )));
    }
    if scene.num_persons() == 0 {
        return Err(Error::Window("scene has no persons".into()));
    }
    let j = scene.joints();
    let n = scene.num_persons();
    let mut history = Vec::with_capacity(n * j * 3 * history_len);
    let mut future = Vec::with_capacity(n * j * 3 * future_len);
    for p in 0..n {
        for joint in 0..j {
            for axis in 0..3 {
                history.extend((0..history_len).map(|f| scene.point(p, start + f, joint)[axis]));
                future.extend((history_len..total).map(|f| scene.point(p, start + f, joint)[axis]));
            }
        }
    }
    let future = (future_len > 0).then_some(future);
    TrajectoryWindow::new(history_len, future_len, j, history, future, vec![true; n])
}

/// Window at a start frame drawn uniformly from every valid position.
pub fn sample_window<R: Rng + ?Sized>(
    scene: &Scene,
    history_len: usize,
    future_len: usize,
    rng: &mut R,
) -> Result<TrajectoryWindow> {
    let total = history_len + future_len;
    if scene.frames() < total {
        return Err(Error::Window(format!(
            "scene has {} frames; need at least {total}",
            scene.frames()
        )));
    }
    let start = rng.gen_range(0..=scene.frames() - total);
    window_at(scene, start, history_len, future_len)
}

/// Extends each length-`t` row of `history` to `t + future_len` by holding
/// its last value.
pub fn pad_future(history: &[f64], history_len: usize, future_len: usize) -> Vec<f64> {
    assert!(history_len >= 1, "history must have at least one frame");
    let mut out = Vec::with_capacity(history.len() / history_len * (history_len + future_len));
    for row in history.chunks(history_len) {
        out.extend_from_slice(row);
        let last = row[history_len - 1];
        out.extend(std::iter::repeat_n(last, future_len));
    }
    out
}

/// Subtracts, per person, the root joint's position at the last observed
/// frame from every joint at every frame. The offsets are kept on the
/// returned window.
pub fn remove_translation(
    window: &TrajectoryWindow,
    skeleton: &SkeletonDef,
) -> Result<TrajectoryWindow> {
    if skeleton.joints() != window.joints {
        return Err(Error::Length {
            op: "remove_translation",
            expected: skeleton.joints(),
            actual: window.joints,
        });
    }
    remove_translation_at(window, skeleton.root())
}

/// [`remove_translation`] with the root given as a joint index.
pub fn remove_translation_at(window: &TrajectoryWindow, root: usize) -> Result<TrajectoryWindow> {
    if window.is_local() {
        return Err(Error::Window("translation already removed".into()));
    }
    if root >= window.joints {
        return Err(Error::Index {
            op: "remove_translation",
            index: root,
            bound: window.joints,
        });
    }
    let offsets: Vec<[f64; 3]> = (0..window.slots())
        .map(|s| {
            if window.mask[s] {
                window.last_root(s, root)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    let mut out = window.clone();
    shift_rows(&mut out, &offsets, -1.0);
    out.root_offsets = Some(offsets);
    Ok(out)
}

/// Adds the stored offsets back.
pub fn restore_translation(local: &TrajectoryWindow) -> Result<TrajectoryWindow> {
    let offsets = local
        .root_offsets
        .clone()
        .ok_or_else(|| Error::Window("window has no root offsets to restore".into()))?;
    if offsets.len() != local.slots() {
        return Err(Error::Length {
            op: "restore_translation",
            expected: local.slots(),
            actual: offsets.len(),
        });
    }
    let mut out = local.clone();
    shift_rows(&mut out, &offsets, 1.0);
    out.root_offsets = None;
    Ok(out)
}

fn shift_rows(w: &mut TrajectoryWindow, offsets: &[[f64; 3]], sign: f64) {
    let (h, t) = (w.history_len, w.future_len);
    for s in 0..w.slots() {
        if !w.mask[s] {
            continue;
        }
        for j in 0..w.joints {
            for axis in 0..3 {
                let row = (s * w.joints + j) * 3 + axis;
                let d = offsets[s][axis];
                let apply = |v: &mut f64| {
                    if sign > 0.0 {
                        *v += d
                    } else {
                        *v -= d
                    }
                };
                w.history[row * h..(row + 1) * h].iter_mut().for_each(apply);
                if let Some(f) = &mut w.future {
                    f[row * t..(row + 1) * t].iter_mut().for_each(apply);
                }
            }
        }
    }
}

/// Fixed-slot windows ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub windows: Vec<TrajectoryWindow>,
    pub n_slots: usize,
}

impl Batch {
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.windows.iter().map(|w| w.mask.clone()).collect()
    }

    pub fn num_real(&self) -> usize {
        self.windows.iter().map(TrajectoryWindow::num_real).sum()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Packs every window into `n_slots` slots.
pub fn assemble_batch(windows: &[TrajectoryWindow], n_slots: usize) -> Result<Batch> {
    if let Some(first) = windows.first() {
        for w in windows {
            if (w.history_len, w.future_len, w.joints)
                != (first.history_len, first.future_len, first.joints)
            {
                return Err(Error::Window(
                    "batch windows disagree on frame counts or joints".into(),
                ));
            }
        }
    }
    Ok(Batch {
        windows: windows
            .iter()
            .map(|w| w.packed(n_slots))
            .collect::<Result<_>>()?,
        n_slots,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::somof_skeleton;

    fn ramp_scene(frames: usize, persons: usize) -> Scene {
        let sk = somof_skeleton();
        let people = (0..persons)
            .map(|p| {
                let pts = (0..frames * 13)
                    .map(|k| {
                        let (f, j) = ((k / 13) as f64, (k % 13) as f64);
                        [f + 100.0 * p as f64, j * 0.1, -f * 0.5 + j]
                    })
                    .collect();
                Person::new(format!("p{p}"), pts)
            })
            .collect();
        Scene::new(30.0, sk, frames, people).unwrap()
    }

    #[test]
    fn sample_window_forced_start_and_errors() {
        let scene = ramp_scene(7, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = sample_window(&scene, 4, 3, &mut rng).unwrap();
        assert_eq!(w.point(1, 0, 0), scene.point(1, 0, 0));
        assert!(sample_window(&scene, 4, 4, &mut rng).is_err());
    }

    #[test]
    fn sample_window_start_is_uniform() {
        let scene = ramp_scene(8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let w = sample_window(&scene, 4, 3, &mut rng).unwrap();
            counts[w.point(0, 0, 0)[0] as usize] += 1;
        }
        let expected = 5_000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 1 degree of freedom, p = 0.001 critical value.
        assert!(chi2 < 10.83, "{counts:?} chi2 {chi2}");
    }

    #[test]
    fn sample_window_is_seeded_and_contiguous() {
        let scene = ramp_scene(40, 2);
        let a = sample_window(&scene, 5, 6, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_window(&scene, 5, 6, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let start = a.point(0, 0, 0)[0] as usize;
        for f in 0..11 {
            for j in 0..13 {
                assert_eq!(a.point(1, j, f), scene.point(1, start + f, j));
            }
        }
    }

    #[test]
    fn pad_future_holds_last_value() {
        assert_eq!(
            pad_future(&[1.0, 2.0, 3.0], 3, 2),
            vec![1.0, 2.0, 3.0, 3.0, 3.0]
        );
        assert_eq!(pad_future(&[4.0; 3], 3, 4), vec![4.0; 7]);
        assert_eq!(
            pad_future(&[1.0, 2.0, 5.0, 6.0], 2, 1),
            vec![1.0, 2.0, 2.0, 5.0, 6.0, 6.0]
        );
    }

    #[test]
    fn translation_removal_anchors_root() {
        let scene = ramp_scene(12, 2);
        let w = window_at(&scene, 2, 5, 5).unwrap();
        let local = remove_translation(&w, scene.skeleton()).unwrap();
        for s in 0..2 {
            assert_eq!(local.last_root(s, 0), [0.0; 3]);
        }
        assert!(remove_translation(&local, scene.skeleton()).is_err());
        assert!(restore_translation(&w).is_err());

        let shifted = {
            let mut s = w.clone();
            s.map_points(|p| [p[0] + 8.0, p[1] - 2.0, p[2] + 0.5]);
            s
        };
        let a = remove_translation(&shifted, scene.skeleton()).unwrap();
        let pairs = a.history().iter().zip(local.history());
        let fut = a.future().unwrap().iter().zip(local.future().unwrap());
        assert!(pairs.chain(fut).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn batch_packing() {
        let scene = ramp_scene(6, 1);
        let w = window_at(&scene, 0, 3, 3).unwrap();
        let batch = assemble_batch(&[w.clone(), w.clone()], 3).unwrap();
        assert_eq!(batch.masks()[0], vec![true, false, false]);
        assert_eq!(batch.windows[0], batch.windows[1]);
        assert_eq!(batch.windows[0].persons(), w.persons());
        assert!(batch.windows[0].history()[13 * 3 * 3..]
            .iter()
            .all(|&v| v == 0.0));
        assert!(assemble_batch(&[window_at(&ramp_scene(6, 3), 0, 3, 3).unwrap()], 2).is_err());
    }

    /// Values on a 2^-12 grid below 2^20 subtract and add back exactly.
    fn grid_value() -> impl Strategy<Value = f64> {
        (-(1i64 << 24)..(1i64 << 24)).prop_map(|k| k as f64 / 4096.0)
    }

    proptest! {
        #[test]
        fn remove_restore_is_bitwise_inverse(
            vals in proptest::collection::vec(grid_value(), 2 * 13 * 3 * 6),
            mask1 in any::<bool>(),
        ) {
            let hist = vals[..2 * 13 * 3 * 3].to_vec();
            let fut = vals[2 * 13 * 3 * 3..].to_vec();
            let w = TrajectoryWindow::new(3, 3, 13, hist, Some(fut), vec![true, mask1]).unwrap();
            let local = remove_translation(&w, &somof_skeleton()).unwrap();
            let back = restore_translation(&local).unwrap();
            for (a, b) in back.history().iter().zip(w.history()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in back.future().unwrap().iter().zip(w.future().unwrap()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn remove_restore_general_floats(
            vals in proptest::collection::vec(-50.0f64..50.0, 13 * 3 * 4),
        ) {
            let w = TrajectoryWindow::new(4, 0, 13, vals, None, vec![true]).unwrap();
            let back = restore_translation(&remove_translation(&w, &somof_skeleton()).unwrap()).unwrap();
            for (a, b) in back.history().iter().zip(w.history()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn packing_keeps_slots_apart(
            vals in proptest::collection::vec(-5.0f64..5.0, 3 * 13 * 3 * 2),
            mask in proptest::collection::vec(any::<bool>(), 3),
        ) {
            prop_assume!(mask.iter().any(|&m| m));
            let w = TrajectoryWindow::new(2, 0, 13, vals, None, mask).unwrap();
            let packed = w.packed(5).unwrap();
            prop_assert_eq!(packed.persons(), w.persons());
            for s in packed.num_real()..5 {
                prop_assert!(!packed.mask()[s]);
                let hs = 13 * 3 * 2;
                prop_assert!(packed.history()[s * hs..(s + 1) * hs].iter().all(|&v| v == 0.0));
            }
        }
    }
}
