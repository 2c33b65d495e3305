use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use somoformer::eval::{
    attention_export, evaluate_dataset, Metric, Predictor, Protocol, ZeroVelocity,
};
use somoformer::model::{load_checkpoint, SoMoFormer};
use somoformer::scene::{
    load_dataset, load_scene, scene_to_json, window_at, Scene, TrajectoryWindow,
};

use crate::util::{echo_config, resolve_seed, write_atomic, write_json};
use crate::{Baseline, EvalArgs, PredictArgs};

pub fn eval(a: EvalArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let mut protocol = Protocol::by_name(&a.protocol)?;
    if !a.metrics.is_empty() {
        let metrics = a
            .metrics
            .iter()
            .map(|m| Metric::parse(m))
            .collect::<Result<Vec<_>, _>>()?;
        protocol = protocol.with_metrics(metrics);
    }
    let model = a.ckpt.as_ref().map(load_checkpoint).transpose()?;
    let predictor: &dyn Predictor = match (&model, a.baseline) {
        (Some(m), _) => m,
        (None, Some(Baseline::ZeroVelocity)) => &ZeroVelocity,
        (None, None) => bail!("pass --ckpt or --baseline"),
    };
    let config = json!({
        "command": "eval",
        "predictor": predictor.name(),
        "checkpoint": a.ckpt,
        "model": model.as_ref().map(|m| m.config()),
        "data": a.data,
        "protocol": protocol,
        "seed": seed,
    });
    echo_config(&config);

    let scenes = load_dataset(&a.data)?;
    let reports = evaluate_dataset(predictor, &scenes, &protocol)?;
    println!(
        "{} on {} ({} protocol)",
        predictor.name(),
        a.data.display(),
        protocol.name
    );
    for r in &reports {
        println!("{}", r.table());
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({"config": config, "seed": seed, "reports": reports}),
        )?;
    }
    if let Some(path) = &a.csv {
        let mut csv = String::new();
        for (i, r) in reports.iter().enumerate() {
            let text = r.to_csv();
            csv.push_str(if i == 0 {
                &text
            } else {
                text.split_once('\n').map_or("", |(_, rest)| rest)
            });
        }
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}

/// History-only window of `t` frames starting at `start`, sized for the model.
fn history_window(model: &SoMoFormer, scene: &Scene, start: usize) -> Result<TrajectoryWindow> {
    let c = model.config();
    if scene.frames() < start + c.history_len {
        bail!(
            "scene has {} frames; the model needs t={} observed frames starting at frame {start}",
            scene.frames(),
            c.history_len
        );
    }
    if scene.joints() != c.joints {
        bail!(
            "scene has {} joints; the model expects t={}, T={}, J={}",
            scene.joints(),
            c.history_len,
            c.future_len,
            c.joints
        );
    }
    let w = window_at(scene, start, c.history_len, 0)?;
    Ok(TrajectoryWindow::new(
        c.history_len,
        c.future_len,
        c.joints,
        w.history().to_vec(),
        None,
        w.mask().to_vec(),
    )?)
}

fn artifact_meta(command: &str, a: &PredictArgs, model: &SoMoFormer, seed: u64) -> Value {
    json!({
        "command": command,
        "checkpoint": a.ckpt,
        "scene": a.scene,
        "start": a.start,
        "config": model.config(),
        "seed": seed,
    })
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let model = load_checkpoint(&a.ckpt)?;
    let meta = artifact_meta("predict", &a, &model, seed);
    echo_config(&json!({"config": meta, "out": a.out}));
    let scene = load_scene(&a.scene)?;
    let window = history_window(&model, &scene, a.start)?;
    let future = model.predict(&window)?;
    let ids: Vec<String> = scene.persons().iter().map(|p| p.id.clone()).collect();
    let out = window
        .with_future(future)?
        .to_scene(scene.skeleton(), scene.fps, &ids)
        .context("assembling the predicted scene")?;
    let mut text = scene_to_json(&out, Some(&meta))?;
    text.push('\n');
    write_atomic(&a.out, text.as_bytes())?;
    eprintln!("wrote {} ({} frames)", a.out.display(), out.frames());
    Ok(())
}

pub fn export_attention(a: PredictArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let model = load_checkpoint(&a.ckpt)?;
    let meta = artifact_meta("export-attention", &a, &model, seed);
    echo_config(&json!({"config": meta, "out": a.out}));
    let scene = load_scene(&a.scene)?;
    let window = history_window(&model, &scene, a.start)?;
    let mut export = attention_export(&model, &window)?;
    export.joint_names = Some(scene.skeleton().names().to_vec());
    export.meta = Some(meta);
    write_json(&a.out, &serde_json::to_value(&export)?)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}
