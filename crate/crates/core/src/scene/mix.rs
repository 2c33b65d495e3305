use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Person, Scene};
use crate::augment::rotate_point;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub n_persons: usize,
    pub history_len: usize,
    pub future_len: usize,
    /// Side of the ground-plane square, centred on the origin, within which
    /// each person's root is placed at the last observed frame.
    pub placement_extent: f64,
    /// Also turn each person by a random heading before placement.
    pub rotate: bool,
}

impl MixConfig {
    pub fn new(n_persons: usize, history_len: usize, future_len: usize) -> Self {
        Self {
            n_persons,
            history_len,
            future_len,
            placement_extent: 4.0,
            rotate: true,
        }
    }
}

/// Builds one multi-person scene of `history_len + future_len` frames from
/// single-person windows of distinct sources, each moved rigidly to a
/// random spot on the ground plane.
pub fn mix_scenes<R: Rng + ?Sized>(
    sources: &[Scene],
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<Scene> {
    let total = cfg.history_len + cfg.future_len;
    if cfg.n_persons == 0 || cfg.history_len == 0 {
        return Err(Error::Config(
            "mixing needs at least one person and one history frame".into(),
        ));
    }
    if sources.len() < cfg.n_persons {
        return Err(Error::Scene(format!(
            "need {} distinct sources, have {}",
            cfg.n_persons,
            sources.len()
        )));
    }
    let first = &sources[0];
    for (i, s) in sources.iter().enumerate() {
        if s.skeleton() != first.skeleton() {
            return Err(Error::Scene(format!(
                "source {i} uses a different skeleton"
            )));
        }
        if s.fps != first.fps {
            return Err(Error::Scene(format!(
                "source {i} runs at {} fps, expected {}",
                s.fps, first.fps
            )));
        }
        if s.frames() < total || s.num_persons() == 0 {
            return Err(Error::Scene(format!(
                "source {i} has {} frames and {} persons; need {total} frames and one person",
                s.frames(),
                s.num_persons()
            )));
        }
    }

    let j = first.joints();
    let root = first.skeleton().root();
    let picks = index::sample(rng, sources.len(), cfg.n_persons);
    let mut persons = Vec::with_capacity(cfg.n_persons);
    for (slot, src_idx) in picks.into_iter().enumerate() {
        let src = &sources[src_idx];
        let who = rng.gen_range(0..src.num_persons());
        let start = rng.gen_range(0..=src.frames() - total);
        let theta = if cfg.rotate {
            rng.gen_range(0.0..std::f64::consts::TAU)
        } else {
            0.0
        };
        let half = cfg.placement_extent / 2.0;
        let (tx, tz) = if half > 0.0 {
            (rng.gen_range(-half..half), rng.gen_range(-half..half))
        } else {
            (0.0, 0.0)
        };
        let anchor = src.point(who, start + cfg.history_len - 1, root);
        let points = (start..start + total)
            .flat_map(|f| (0..j).map(move |jj| (f, jj)))
            .map(|(f, jj)| {
                let p = src.point(who, f, jj);
                let centred = [p[0] - anchor[0], p[1], p[2] - anchor[2]];
                let r = rotate_point(centred, theta);
                [r[0] + tx, r[1], r[2] + tz]
            })
            .collect();
        let id = format!("{slot}:{}", src.persons()[who].id);
        persons.push(Person::new(id, points));
    }
    Scene::new(first.fps, first.skeleton().clone(), total, persons)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::synthetic::{generate_sources, MotionConfig};

    fn sources(n: usize) -> Vec<Scene> {
        generate_sources(
            n,
            80,
            &MotionConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap()
    }

    fn distances(scene: &Scene, person: usize, frame: usize) -> Vec<f64> {
        let j = scene.joints();
        let mut out = Vec::new();
        for a in 0..j {
            for b in a + 1..j {
                let (pa, pb) = (scene.point(person, frame, a), scene.point(person, frame, b));
                out.push((0..3).map(|k| (pa[k] - pb[k]).powi(2)).sum::<f64>().sqrt());
            }
        }
        out
    }

    #[test]
    fn single_person_mix_is_the_window_up_to_placement() {
        let src = sources(1);
        let cfg = MixConfig {
            rotate: false,
            ..MixConfig::new(1, 10, 5)
        };
        let mixed = mix_scenes(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((mixed.num_persons(), mixed.frames()), (1, 15));
        // Pure translation: every frame differs from some source window by one constant vector.
        let found = (0..=src[0].frames() - 15).any(|start| {
            let d0 = {
                let (a, b) = (mixed.point(0, 0, 0), src[0].point(0, start, 0));
                [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
            };
            d0[1] == 0.0
                && (0..15).all(|f| {
                    (0..mixed.joints()).all(|j| {
                        let (a, b) = (mixed.point(0, f, j), src[0].point(0, start + f, j));
                        (0..3).all(|k| (a[k] - b[k] - d0[k]).abs() < 1e-9)
                    })
                })
        });
        assert!(found);
    }

    #[test]
    fn three_person_mix_is_rigid_per_person() {
        let src = sources(6);
        let cfg = MixConfig::new(3, 10, 10);
        let mixed = mix_scenes(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(mixed.num_persons(), 3);
        for p in 0..3 {
            let src_idx: usize = mixed.persons()[p].id.split(':').nth(1).unwrap()[6..]
                .parse()
                .unwrap();
            let s = &src[src_idx];
            let rigid = (0..=s.frames() - 20).any(|start| {
                (0..20).all(|f| {
                    distances(&mixed, p, f)
                        .iter()
                        .zip(distances(s, 0, start + f))
                        .all(|(a, b)| (a - b).abs() < 1e-9)
                })
            });
            assert!(rigid, "person {p} is not a rigid copy of a source window");
        }
    }

    #[test]
    fn seeded_and_error_paths() {
        let src = sources(4);
        let cfg = MixConfig::new(3, 10, 10);
        let a = mix_scenes(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mix_scenes(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(mix_scenes(&src[..2], &cfg, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
        let long = MixConfig::new(2, 60, 60);
        assert!(mix_scenes(&src, &long, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }
}
