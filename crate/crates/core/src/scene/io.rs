use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Person, Scene, SkeletonDef};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    names: Vec<String>,
    root: String,
}

#[derive(Serialize, Deserialize)]
struct PersonFile {
    id: String,
    joints: Vec<Vec<[Option<f64>; 3]>>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    fps: f64,
    units: String,
    skeleton: SkeletonFile,
    persons: Vec<PersonFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Rewrites the bare `NaN` / `Infinity` / `-Infinity` tokens some writers
/// emit into `null`, so that such files fail validation with a location
/// instead of failing to parse. Newlines are untouched, keeping parse-error
/// line numbers meaningful.
fn neutralize_non_finite(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
        } else if c == '"' {
            in_string = true;
        } else {
            let token = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push_str("null");
                rest = &rest[t.len()..];
                continue;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(&neutralize_non_finite(text))?;
    if file.units != "m" {
        return Err(Error::Scene(format!(
            "unsupported units {:?}; expected \"m\"",
            file.units
        )));
    }
    let skeleton = SkeletonDef::with_root_name(file.skeleton.names, &file.skeleton.root)?;
    let j = skeleton.joints();
    let frames = file.persons.first().map_or(0, |p| p.joints.len());
    let mut persons = Vec::with_capacity(file.persons.len());
    for (pi, p) in file.persons.into_iter().enumerate() {
        if p.joints.len() != frames {
            return Err(Error::Scene(format!(
                "person {pi} ({}) has {} frames, expected {frames}",
                p.id,
                p.joints.len()
            )));
        }
        let mut points = Vec::with_capacity(frames * j);
        for (f, frame) in p.joints.into_iter().enumerate() {
            if frame.len() != j {
                return Err(Error::Scene(format!(
                    "person {pi} ({}) frame {f} has {} joints, expected {j}",
                    p.id,
                    frame.len()
                )));
            }
            for (ji, pt) in frame.into_iter().enumerate() {
                match pt {
                    [Some(x), Some(y), Some(z)]
                        if x.is_finite() && y.is_finite() && z.is_finite() =>
                    {
                        points.push([x, y, z])
                    }
                    _ => return Err(Error::Scene(format!(
                        "person {pi} ({}) frame {f} joint {ji} ({}) has a non-finite coordinate",
                        p.id,
                        skeleton.names()[ji]
                    ))),
                }
            }
        }
        persons.push(Person::new(p.id, points));
    }
    Scene::new(file.fps, skeleton, frames, persons)
}

/// Serializes a scene, optionally embedding a free-form `meta` object.
pub fn scene_to_json(scene: &Scene, meta: Option<&serde_json::Value>) -> Result<String> {
    let j = scene.joints();
    let file = SceneFile {
        fps: scene.fps,
        units: scene.units.clone(),
        skeleton: SkeletonFile {
            names: scene.skeleton().names().to_vec(),
            root: scene.skeleton().root_name().to_string(),
        },
        persons: scene
            .persons()
            .iter()
            .map(|p| PersonFile {
                id: p.id.clone(),
                joints: p
                    .points()
                    .chunks(j)
                    .map(|frame| frame.iter().map(|pt| pt.map(Some)).collect())
                    .collect(),
            })
            .collect(),
        meta: meta.cloned(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scene_from_json(&text).map_err(|e| match e {
        Error::SerdeJson(source) => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        Error::Scene(msg) => Error::Scene(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_scene(
    scene: &Scene,
    path: impl AsRef<Path>,
    meta: Option<&serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = scene_to_json(scene, meta)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `*.json` scene files in a directory, sorted by name. `manifest.json` is skipped.
pub fn list_scene_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n != "manifest.json")
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let files = list_scene_files(&dir)?;
    if files.is_empty() {
        return Err(Error::Scene(format!(
            "{}: no scene files found",
            dir.as_ref().display()
        )));
    }
    files.iter().map(load_scene).collect()
}
