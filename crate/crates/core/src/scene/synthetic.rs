//! Procedural walking motion on the 13-joint layout.
//!
//! Each person follows a smoothly turning heading with a speed that
//! relaxes toward a target and occasionally drops to standing. Limbs swing
//! with a gait phase tied to distance travelled. Bone lengths are constant
//! per person, so the output behaves like captured skeletal motion.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{somof_skeleton, Person, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub fps: f64,
    /// Walking speed range in m/s; each person draws a target from it.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Standard deviation of the turn-rate process, rad/s.
    pub turn_std: f64,
    /// Per-second probability of switching between walking and standing.
    pub stop_rate: f64,
    /// Probability that persons of one scene walk together as a group.
    pub group_prob: f64,
    /// Side of the square in which persons start, metres.
    pub start_extent: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            fps: 15.0,
            min_speed: 0.6,
            max_speed: 1.6,
            turn_std: 0.6,
            stop_rate: 0.08,
            group_prob: 0.3,
            start_extent: 4.0,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fps > 0.0
            && self.min_speed >= 0.0
            && self.max_speed >= self.min_speed
            && self.turn_std >= 0.0
            && self.stop_rate >= 0.0
            && (0.0..=1.0).contains(&self.group_prob)
            && self.start_extent >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid motion config {self:?}")))
        }
    }
}

const UP: [f64; 3] = [0.0, 1.0, 0.0];

fn axpy(base: [f64; 3], a: f64, dir: [f64; 3]) -> [f64; 3] {
    [
        base[0] + a * dir[0],
        base[1] + a * dir[1],
        base[2] + a * dir[2],
    ]
}

/// Unit vector tilted from straight down toward `forward` by `angle`.
fn limb_dir(forward: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [s * forward[0], -c, s * forward[2]]
}

struct Walker {
    scale: f64,
    x: f64,
    z: f64,
    heading: f64,
    turn: f64,
    speed: f64,
    target: f64,
    walking: bool,
    phase: f64,
}

struct Heading {
    heading: f64,
    turn: f64,
}

impl Heading {
    fn step<R: Rng + ?Sized>(&mut self, cfg: &MotionConfig, dt: f64, rng: &mut R) {
        let tau = 1.5;
        let noise: f64 = StandardNormal.sample(rng);
        self.turn += -self.turn * dt / tau + cfg.turn_std * (2.0 * dt / tau).sqrt() * noise;
        self.heading += self.turn * dt;
    }
}

impl Walker {
    fn spawn<R: Rng + ?Sized>(cfg: &MotionConfig, rng: &mut R) -> Self {
        let half = cfg.start_extent / 2.0;
        let pick = |r: &mut R| {
            if half > 0.0 {
                r.gen_range(-half..half)
            } else {
                0.0
            }
        };
        let x = pick(rng);
        let z = pick(rng);
        let target = if cfg.max_speed > cfg.min_speed {
            rng.gen_range(cfg.min_speed..cfg.max_speed)
        } else {
            cfg.min_speed
        };
        let walking = rng.gen::<f64>() < 0.85;
        Self {
            scale: rng.gen_range(0.9..1.1),
            x,
            z,
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
            turn: 0.0,
            speed: if walking { target } else { 0.0 },
            target,
            walking,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, cfg: &MotionConfig, dt: f64, rng: &mut R) {
        if rng.gen::<f64>() < cfg.stop_rate * dt {
            self.walking = !self.walking;
        }
        let goal = if self.walking { self.target } else { 0.0 };
        self.speed += (goal - self.speed) * (dt / 0.7).min(1.0);
        self.x += self.speed * self.heading.sin() * dt;
        self.z += self.speed * self.heading.cos() * dt;
        let stride = 1.4 * self.scale;
        self.phase += std::f64::consts::TAU * self.speed * dt / stride;
    }

    fn pose(&self) -> Vec<[f64; 3]> {
        let s = self.scale;
        let (sh, ch) = self.heading.sin_cos();
        let fwd = [sh, 0.0, ch];
        let right = [ch, 0.0, -sh];
        let effort = (self.speed / 1.4).min(1.2);
        let (sp, cp) = self.phase.sin_cos();

        let thigh = 0.42 * s;
        let shin = 0.42 * s;
        let leg_swing = 0.4 * effort;
        let knee_flex = 0.6 * effort;
        let pelvis_h = (thigh + shin) * 0.98 - 0.02 * effort * (2.0 * self.phase).cos();
        let pelvis = [self.x, pelvis_h, self.z];

        let lean = 0.08 * effort;
        let torso = 0.5 * s;
        let neck = axpy(
            axpy(pelvis, torso * lean.cos(), UP),
            torso * lean.sin(),
            fwd,
        );

        let mut out = vec![[0.0; 3]; 13];
        out[0] = neck;
        for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
            // Arms swing against the leg on the same side.
            let arm = -sign * 0.35 * effort * sp;
            let bend = 0.25 + 0.35 * effort * (0.5 - 0.5 * sign * cp).max(0.0);
            let shoulder = axpy(neck, sign * 0.18 * s, right);
            let elbow = axpy(shoulder, 0.28 * s, limb_dir(fwd, arm));
            let wrist = axpy(elbow, 0.25 * s, limb_dir(fwd, arm + bend));
            let base = 1 + 3 * side;
            out[base] = shoulder;
            out[base + 1] = elbow;
            out[base + 2] = wrist;

            let leg = sign * leg_swing * sp;
            let flex = knee_flex * (-(sign * cp)).max(0.0);
            let hip = axpy(pelvis, sign * 0.1 * s, right);
            let knee = axpy(hip, thigh, limb_dir(fwd, leg));
            let ankle = axpy(knee, shin, limb_dir(fwd, leg - flex));
            let base = 7 + 3 * side;
            out[base] = hip;
            out[base + 1] = knee;
            out[base + 2] = ankle;
        }
        out
    }
}

/// One scene with `n_persons` walkers over `frames` frames.
pub fn generate_scene<R: Rng + ?Sized>(
    n_persons: usize,
    frames: usize,
    cfg: &MotionConfig,
    rng: &mut R,
) -> Result<Scene> {
    cfg.validate()?;
    let dt = 1.0 / cfg.fps;
    let mut walkers: Vec<Walker> = (0..n_persons).map(|_| Walker::spawn(cfg, rng)).collect();
    let group = n_persons > 1 && rng.gen::<f64>() < cfg.group_prob;
    let mut shared = Heading {
        heading: rng.gen_range(0.0..std::f64::consts::TAU),
        turn: 0.0,
    };
    if group {
        let (target, ox, oz, walking) = (
            walkers[0].target,
            walkers[0].x,
            walkers[0].z,
            walkers[0].walking,
        );
        for (i, w) in walkers.iter_mut().enumerate() {
            w.heading = shared.heading;
            w.target = target;
            w.walking = walking;
            w.speed = if walking { target } else { 0.0 };
            // Side by side, one metre apart across the walking direction.
            let offset = i as f64 - (n_persons - 1) as f64 / 2.0;
            w.x = ox + offset * shared.heading.cos();
            w.z = oz - offset * shared.heading.sin();
        }
    }
    let mut points: Vec<Vec<[f64; 3]>> = vec![Vec::with_capacity(frames * 13); n_persons];
    for _ in 0..frames {
        for (w, pts) in walkers.iter().zip(points.iter_mut()) {
            pts.extend(w.pose());
        }
        if group {
            shared.step(cfg, dt, rng);
            let toggle = rng.gen::<f64>() < cfg.stop_rate * dt;
            for w in walkers.iter_mut() {
                w.heading = shared.heading;
                if toggle {
                    w.walking = !w.walking;
                }
                w.step(
                    &MotionConfig {
                        stop_rate: 0.0,
                        ..*cfg
                    },
                    dt,
                    rng,
                );
            }
        } else {
            for w in walkers.iter_mut() {
                let mut h = Heading {
                    heading: w.heading,
                    turn: w.turn,
                };
                h.step(cfg, dt, rng);
                w.heading = h.heading;
                w.turn = h.turn;
                w.step(cfg, dt, rng);
            }
        }
    }
    let persons = points
        .into_iter()
        .enumerate()
        .map(|(i, p)| Person::new(format!("walker{i}"), p))
        .collect();
    Scene::new(cfg.fps, somof_skeleton(), frames, persons)
}

/// `n` single-person scenes, the building blocks for [`super::mix_scenes`].
pub fn generate_sources<R: Rng + ?Sized>(
    n: usize,
    frames: usize,
    cfg: &MotionConfig,
    rng: &mut R,
) -> Result<Vec<Scene>> {
    (0..n)
        .map(|i| {
            let mut scene = generate_scene(1, frames, cfg, rng)?;
            scene.persons[0].id = format!("walker{i}");
            Ok(scene)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const BONES: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (0, 4),
        (4, 5),
        (5, 6),
        (7, 8),
        (8, 9),
        (10, 11),
        (11, 12),
        (0, 7),
        (7, 10),
    ];

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn bones_are_rigid_and_feet_near_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = generate_scene(3, 120, &MotionConfig::default(), &mut rng).unwrap();
        assert_eq!(
            (scene.num_persons(), scene.frames(), scene.joints()),
            (3, 120, 13)
        );
        for p in 0..3 {
            for &(a, b) in &BONES[..10] {
                let l0 = dist(scene.point(p, 0, a), scene.point(p, 0, b));
                for f in 1..120 {
                    assert!((dist(scene.point(p, f, a), scene.point(p, f, b)) - l0).abs() < 1e-9);
                }
            }
            for f in 0..120 {
                let y = scene.point(p, f, 9)[1].min(scene.point(p, f, 12)[1]);
                assert!((-0.05..0.25).contains(&y), "lowest ankle at {y}");
            }
        }
    }

    #[test]
    fn people_move_and_generation_is_seeded() {
        let cfg = MotionConfig {
            stop_rate: 0.0,
            ..Default::default()
        };
        let a = generate_scene(2, 60, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = generate_scene(2, 60, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        let travelled: f64 = (0..2)
            .map(|p| dist(a.point(p, 0, 0), a.point(p, 59, 0)))
            .sum();
        assert!(travelled > 1.0, "travelled {travelled}");
        assert!(MotionConfig {
            max_speed: 0.1,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sources_are_single_person() {
        let src = generate_sources(
            4,
            30,
            &MotionConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(src.len(), 4);
        assert!(src.iter().all(|s| s.num_persons() == 1));
        assert_eq!(src[3].persons()[0].id, "walker3");
    }
}
