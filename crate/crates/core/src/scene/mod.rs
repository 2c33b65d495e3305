//! Scenes of global 3D joint trajectories, their JSON file format, and the
//! windowing/batching used for training and evaluation.

mod io;
mod mix;
pub mod synthetic;
mod window;

pub use io::{
    list_scene_files, load_dataset, load_scene, save_scene, scene_from_json, scene_to_json,
};
pub use mix::{mix_scenes, MixConfig};
pub use window::{
    assemble_batch, pad_future, remove_translation, remove_translation_at, restore_translation,
    sample_window, window_at, Batch, PersonTrajectory, TrajectoryWindow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint naming plus the joint used as each person's translation anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonDef {
    names: Vec<String>,
    root: usize,
}

impl SkeletonDef {
    pub fn new(names: Vec<String>, root: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Scene("skeleton has no joints".into()));
        }
        if root >= names.len() {
            return Err(Error::Scene(format!(
                "root joint index {root} out of range for {} joints",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Scene(format!("duplicate joint name {n:?}")));
            }
        }
        Ok(Self { names, root })
    }

    pub fn with_root_name(names: Vec<String>, root: &str) -> Result<Self> {
        let idx = names
            .iter()
            .position(|n| n == root)
            .ok_or_else(|| Error::Scene(format!("root joint {root:?} is not in the joint list")))?;
        Self::new(names, idx)
    }

    pub fn joints(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_name(&self) -> &str {
        &self.names[self.root]
    }
}

/// One person's trajectory: `frames × joints` points, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub id: String,
    points: Vec<[f64; 3]>,
}

impl Person {
    pub fn new(id: impl Into<String>, points: Vec<[f64; 3]>) -> Self {
        Self {
            id: id.into(),
            points,
        }
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub fps: f64,
    pub units: String,
    skeleton: SkeletonDef,
    frames: usize,
    persons: Vec<Person>,
}

impl Scene {
    /// Builds a scene, checking that every person has `frames × joints`
    /// finite points.
    pub fn new(
        fps: f64,
        skeleton: SkeletonDef,
        frames: usize,
        persons: Vec<Person>,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Scene(format!("fps must be positive, got {fps}")));
        }
        let j = skeleton.joints();
        for (pi, p) in persons.iter().enumerate() {
            if p.points.len() != frames * j {
                return Err(Error::Scene(format!(
                    "person {pi} ({}) has {} points, expected {frames} frames x {j} joints",
                    p.id,
                    p.points.len()
                )));
            }
            for (k, pt) in p.points.iter().enumerate() {
                if pt.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Scene(format!(
                        "person {pi} ({}) frame {} joint {} ({}) has a non-finite coordinate",
                        p.id,
                        k / j,
                        k % j,
                        skeleton.names()[k % j]
                    )));
                }
            }
        }
        Ok(Self {
            fps,
            units: "m".into(),
            skeleton,
            frames,
            persons,
        })
    }

    pub fn skeleton(&self) -> &SkeletonDef {
        &self.skeleton
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joints()
    }

    pub fn persons(&self) -> &[Person] {
        &self.persons
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn point(&self, person: usize, frame: usize, joint: usize) -> [f64; 3] {
        self.persons[person].points[frame * self.joints() + joint]
    }

    /// Keeps only the listed joints, in the given order. The root must be kept.
    pub fn select_joints(&self, joints: &[usize]) -> Result<Scene> {
        let root = joints
            .iter()
            .position(|&j| j == self.skeleton.root)
            .ok_or_else(|| Error::Scene("joint selection must keep the root joint".into()))?;
        let names = joints
            .iter()
            .map(|&j| {
                self.skeleton.names.get(j).cloned().ok_or(Error::Index {
                    op: "select_joints",
                    index: j,
                    bound: self.joints(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let skeleton = SkeletonDef::new(names, root)?;
        let persons = self
            .persons
            .iter()
            .map(|p| {
                let points = (0..self.frames)
                    .flat_map(|f| joints.iter().map(move |&j| (f, j)))
                    .map(|(f, j)| p.points[f * self.joints() + j])
                    .collect();
                Person::new(p.id.clone(), points)
            })
            .collect();
        Scene::new(self.fps, skeleton, self.frames, persons)
    }

    /// Frames `start..start+len` of every person.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Scene> {
        if start + len > self.frames || len == 0 {
            return Err(Error::Scene(format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        let j = self.joints();
        let persons = self
            .persons
            .iter()
            .map(|p| {
                Person::new(
                    p.id.clone(),
                    p.points[start * j..(start + len) * j].to_vec(),
                )
            })
            .collect();
        Scene::new(self.fps, self.skeleton.clone(), len, persons)
    }
}

/// The 13-joint body layout used by the SoMoF-style benchmark data.
pub fn somof_skeleton() -> SkeletonDef {
    let names = [
        "neck",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_hip",
        "r_knee",
        "r_ankle",
        "l_hip",
        "l_knee",
        "l_ankle",
    ];
    SkeletonDef::new(names.iter().map(|s| s.to_string()).collect(), 0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_validation() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(SkeletonDef::new(names(&["a", "b"]), 2).is_err());
        assert!(SkeletonDef::new(names(&["a", "a"]), 0).is_err());
        assert!(SkeletonDef::with_root_name(names(&["a", "b"]), "c").is_err());
        let s = SkeletonDef::with_root_name(names(&["a", "b"]), "b").unwrap();
        assert_eq!(s.root(), 1);
    }

    #[test]
    fn scene_rejects_non_finite_and_ragged() {
        let sk = somof_skeleton();
        let mut pts = vec![[0.0; 3]; 2 * 13];
        assert!(Scene::new(30.0, sk.clone(), 2, vec![Person::new("a", pts.clone())]).is_ok());
        pts[13 + 4][1] = f64::NAN;
        let err = Scene::new(30.0, sk.clone(), 2, vec![Person::new("a", pts)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame 1") && msg.contains("joint 4"), "{msg}");
        let short = vec![[0.0; 3]; 13];
        assert!(Scene::new(30.0, sk, 2, vec![Person::new("a", short)]).is_err());
    }

    #[test]
    fn select_and_slice() {
        let sk = somof_skeleton();
        let pts: Vec<[f64; 3]> = (0..3 * 13).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = Scene::new(30.0, sk, 3, vec![Person::new("a", pts)]).unwrap();
        let sub = s.select_joints(&[0, 9, 12]).unwrap();
        assert_eq!(sub.joints(), 3);
        assert_eq!(sub.point(0, 2, 1), [(2 * 13 + 9) as f64, 0.0, 0.0]);
        assert!(s.select_joints(&[9, 12]).is_err());
        let sl = s.slice_frames(1, 2).unwrap();
        assert_eq!(sl.point(0, 0, 0), s.point(0, 1, 0));
        assert!(s.slice_frames(2, 2).is_err());
    }
}
