use std::fs;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use somoformer::scene::synthetic::{generate_sources, MotionConfig};
use somoformer::scene::{list_scene_files, load_scene, mix_scenes, scene_to_json, MixConfig};

use crate::util::{echo_config, resolve_seed, write_atomic, write_json};
use crate::{SynthDataArgs, SynthSourcesArgs};

pub fn sources(a: SynthSourcesArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let motion = MotionConfig {
        fps: a.fps,
        ..MotionConfig::default()
    };
    let config = json!({
        "command": "synth-sources",
        "num": a.num,
        "frames": a.frames,
        "motion": motion,
        "joints": a.joints,
        "seed": seed,
    });
    echo_config(&json!({"config": config, "out": a.out}));
    if a.num == 0 || a.frames == 0 {
        bail!("--num and --frames must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = generate_sources(a.num, a.frames, &motion, &mut rng)?;
    if !a.joints.is_empty() {
        let names = scenes[0].skeleton().names();
        let idx = a
            .joints
            .iter()
            .map(|j| {
                names
                    .iter()
                    .position(|n| n == j)
                    .with_context(|| format!("unknown joint {j:?}; known: {}", names.join(",")))
            })
            .collect::<Result<Vec<_>>>()?;
        scenes = scenes
            .iter()
            .map(|s| s.select_joints(&idx))
            .collect::<Result<Vec<_>, _>>()?;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut files = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("source_{i:04}.json");
        let meta = json!({"seed": seed, "index": i});
        let mut text = scene_to_json(scene, Some(&meta))?;
        text.push('\n');
        write_atomic(&a.out.join(&name), text.as_bytes())?;
        files.push(name);
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({"config": config, "seed": seed, "files": files}),
    )?;
    eprintln!("wrote {} source scenes to {}", files.len(), a.out.display());
    Ok(())
}

pub fn data(a: SynthDataArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let mix = MixConfig {
        placement_extent: a.extent,
        rotate: !a.no_rotate,
        ..MixConfig::new(a.num_persons, a.history_len, a.future_len)
    };
    let config = json!({
        "command": "synth-data",
        "sources": a.sources,
        "windows": a.windows,
        "mix": mix,
        "seed": seed,
    });
    echo_config(&json!({"config": config, "out": a.out}));
    if a.windows == 0 {
        bail!("--windows must be positive");
    }
    let source_files = list_scene_files(&a.sources)?;
    if source_files.is_empty() {
        bail!("{}: no source scenes found", a.sources.display());
    }
    let sources = source_files
        .iter()
        .map(load_scene)
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Mix everything before writing anything, so invalid sources leave no output.
    let scenes = (0..a.windows)
        .map(|_| mix_scenes(&sources, &mix, &mut rng))
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("mixing sources from {}", a.sources.display()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut files = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = format!("scene_{i:05}.json");
        let meta = json!({"seed": seed, "index": i});
        let mut text = scene_to_json(scene, Some(&meta))?;
        text.push('\n');
        write_atomic(&a.out.join(&name), text.as_bytes())?;
        files.push(name);
    }
    let source_names: Vec<String> = source_files
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    write_json(
        &a.out.join("manifest.json"),
        &json!({"config": config, "seed": seed, "sources": source_names, "files": files}),
    )?;
    eprintln!("wrote {} scenes to {}", files.len(), a.out.display());
    Ok(())
}
