use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Value};
use somoformer::augment::AugmentConfig;
use somoformer::model::{read_checkpoint, write_checkpoint, ModelConfig};
use somoformer::scene::load_dataset;
use somoformer::train::{TrainConfig, Trainer};

use crate::util::{echo_config, resolve_seed, write_json};
use crate::TrainArgs;

/// Training config and seed stored next to each checkpoint.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut p = ckpt.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn file_layer(a: &TrainArgs) -> Result<Option<Value>> {
    if let Some(path) = &a.config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Some(value));
    }
    if let Some(resume) = &a.resume {
        let side = sidecar_path(resume);
        if side.exists() {
            let text = std::fs::read_to_string(&side)
                .with_context(|| format!("reading {}", side.display()))?;
            let value: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", side.display()))?;
            return Ok(value.get("config").cloned());
        }
    }
    Ok(None)
}

fn resolve(a: &TrainArgs) -> Result<TrainConfig> {
    let file = file_layer(a)?;
    let mut cfg = match &file {
        Some(v) => TrainConfig::from_json(&v.to_string()).context("invalid training config")?,
        None => TrainConfig::default(),
    };
    let file_seed = file
        .as_ref()
        .and_then(|v| v.get("seed"))
        .and_then(Value::as_u64);
    if let Some(name) = &a.preset {
        cfg.model = ModelConfig::preset(name)?;
    }
    if a.history_len.is_some() || a.future_len.is_some() {
        let (t, f) = (
            a.history_len.unwrap_or(cfg.model.history_len),
            a.future_len.unwrap_or(cfg.model.future_len),
        );
        cfg.model = cfg.model.with_frames(t, f);
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if a.no_augment {
        cfg.augment = AugmentConfig::none();
    }
    if let Some(d) = &a.data {
        cfg.train_data = Some(d.clone());
    }
    cfg.seed = resolve_seed(a.seed, file_seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn save(trainer: &Trainer, out: &Path) -> Result<()> {
    write_checkpoint(out, &trainer.to_checkpoint())?;
    write_json(
        &sidecar_path(out),
        &json!({
            "command": "train",
            "config": trainer.config(),
            "seed": trainer.config().seed,
            "epoch": trainer.epoch(),
            "step": trainer.step(),
        }),
    )
}

pub fn run(a: TrainArgs) -> Result<()> {
    let cfg = resolve(&a)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    echo_config(&json!({
        "command": "train",
        "config": cfg,
        "seed": cfg.seed,
        "out": a.out,
        "log": log_path,
        "resume": a.resume,
        "until_epoch": a.until_epoch,
    }));

    // Everything that can be checked is checked before any file is created.
    let data = cfg
        .train_data
        .clone()
        .ok_or_else(|| anyhow!("no training data: pass --data or set train_data in the config"))?;
    let scenes = load_dataset(&data)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(cfg.clone(), &read_checkpoint(path)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    trainer.check_data(&scenes)?;

    let file =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let header = json!({
        "config": cfg,
        "seed": cfg.seed,
        "start_epoch": trainer.epoch(),
        "start_step": trainer.step(),
    });
    writeln!(log, "{header}")?;

    let stop = a.until_epoch.unwrap_or(cfg.epochs).min(cfg.epochs);
    while trainer.epoch() < stop {
        let mut write_err = None;
        let mean = trainer.run_epoch(&scenes, |s| {
            let line = serde_json::to_string(s).expect("step logs serialize");
            if let Err(e) = writeln!(log, "{line}") {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e).with_context(|| format!("writing {}", log_path.display()));
        }
        eprintln!(
            "epoch {}/{} mean loss {mean:.6}",
            trainer.epoch(),
            cfg.epochs
        );
        let every = cfg.checkpoint_every;
        if every > 0 && trainer.epoch() % every == 0 && trainer.epoch() < stop {
            save(&trainer, &a.out)?;
        }
    }
    log.flush()
        .with_context(|| format!("writing {}", log_path.display()))?;
    save(&trainer, &a.out)?;
    eprintln!(
        "wrote {} after epoch {} (step {})",
        a.out.display(),
        trainer.epoch(),
        trainer.step()
    );
    Ok(())
}
