use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use tased_core::archive;
use tased_core::data::{
    self, export_saliency, frame_file_name, load_fixations, load_gray_sequence, load_video, preprocess,
    prepare_dataset, SynthParams,
};
use tased_core::infer::predict_video;
use tased_core::metrics::{evaluate, EvalConfig, PoolScope, VideoEval};
use tased_core::model::{ModelConfig, Network};
use tased_core::rng;
use tased_core::train::{LogRow, Trainer, MOMENTUM_PREFIX};
use tased_core::Error;

use crate::config::{required, RunConfig};
use crate::{CliError, PoolArg};

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.tasd";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn synth(out: &Path, videos: usize, frames: usize, size: [usize; 2], blobs: usize, seed: u64, json: bool) -> Result<(), CliError> {
    let params = SynthParams {
        videos,
        frames,
        size,
        blobs,
        seed,
        ..SynthParams::default()
    };
    if videos == 0 || frames == 0 || blobs == 0 || size.contains(&0) {
        return Err(CliError::Usage(format!("degenerate synth parameters {params:?}")));
    }
    let dirs = data::synth_dataset(out, &params, &mut rng::seeded(seed))?;
    if json {
        let ids: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
        outln!("{}", serde_json::json!({ "videos": ids, "params": params }));
    } else {
        outln!("wrote {} videos to {}", dirs.len(), out.display());
    }
    Ok(())
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint-{step:06}.tasd")
}

/// Keeps the header and rows up to `step` of an existing log.
fn truncated_log(path: &Path, step: usize) -> Result<String, CliError> {
    let mut out = format!("{}\n", LogRow::HEADER);
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(out);
    };
    for line in text.lines().skip(1) {
        let row_step = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
        match row_step {
            Some(s) if s <= step => {
                out.push_str(line);
                out.push('\n');
            }
            Some(_) => {}
            None => return Err(CliError::Runtime(Error::data(path, format!("unreadable log line {line:?}")))),
        }
    }
    Ok(out)
}

pub fn train(config_path: &Path, resume: Option<PathBuf>, data: Option<PathBuf>, out: Option<PathBuf>, json: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let data_root = data.or(cfg.paths.data_root.clone());
    let data_root = required(data_root.as_ref(), "data root")?;
    let out_dir = out.or(cfg.paths.output_dir.clone());
    let out_dir = required(out_dir.as_ref(), "output dir")?;
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    let train_videos = prepare_dataset(data_root, cfg.model.input_size)?;
    let val_videos = match &cfg.paths.val_root {
        Some(root) => Some(prepare_dataset(root, cfg.model.input_size)?),
        None => None,
    };

    let resume = resume.or(cfg.paths.checkpoint.clone());
    let mut trainer = match &resume {
        Some(ckpt) => {
            let t = Trainer::resume(ckpt, Some(cfg.train.clone()))?;
            if t.net.config() != &cfg.model {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different model config",
                    ckpt.display()
                )));
            }
            t
        }
        None => Trainer::new(Network::build(&cfg.model)?, cfg.train.clone())?,
    };

    let log_path = out_dir.join(LOG_FILE);
    let mut log = truncated_log(&log_path, if resume.is_some() { trainer.step_count() } else { 0 })?;
    let mut checkpoints = Vec::new();
    while !trainer.is_done() {
        let outcome = trainer.step(&train_videos, val_videos.as_deref())?;
        log.push_str(&outcome.row.csv());
        log.push('\n');
        if outcome.decayed && !trainer.is_done() {
            let path = out_dir.join(checkpoint_name(outcome.row.step));
            trainer.save_checkpoint(&path)?;
            checkpoints.push(path);
        }
        if !json && (outcome.row.step % 50 == 0 || trainer.is_done()) {
            eprintln!(
                "step {} loss {:.5} decoder_lr {}",
                outcome.row.step, outcome.row.loss, outcome.row.decoder_lr
            );
        }
    }
    fs::write(&log_path, &log).map_err(io(&log_path))?;
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    trainer.save_checkpoint(&final_path)?;
    checkpoints.push(final_path);
    if json {
        let paths: Vec<String> = checkpoints.iter().map(|p| p.display().to_string()).collect();
        outln!(
            "{}",
            serde_json::json!({ "steps": trainer.step_count(), "checkpoints": paths, "log": log_path.display().to_string() })
        );
    } else {
        outln!("trained {} steps; checkpoint {}", trainer.step_count(), out_dir.join(FINAL_CHECKPOINT).display());
    }
    Ok(())
}

/// Loads network weights from a checkpoint or exported archive, ignoring
/// optimizer state.
pub fn load_weights(net: &mut Network, path: &Path) -> Result<(), CliError> {
    let mut entries = archive::load(path)?;
    entries.retain(|(name, _)| !name.starts_with(MOMENTUM_PREFIX));
    net.load_state(&entries).map_err(|e| match e {
        Error::Archive(detail) => CliError::Runtime(Error::data(path, detail)),
        other => CliError::Runtime(other),
    })
}

pub fn predict(config_path: &Path, checkpoint: Option<PathBuf>, video: &Path, out: &Path, json: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let checkpoint = checkpoint
        .or(cfg.paths.checkpoint.clone())
        .or(cfg.paths.output_dir.as_ref().map(|d| d.join(FINAL_CHECKPOINT)));
    let checkpoint = required(checkpoint.as_ref(), "checkpoint")?;
    let mut net = Network::build(&cfg.model)?;
    load_weights(&mut net, checkpoint)?;
    let seq = load_video(video)?;
    let frames: Vec<_> = seq.frames.iter().map(|f| preprocess(f, cfg.model.input_size)).collect();
    let maps = predict_video(&net, &frames)?;
    fs::create_dir_all(out).map_err(io(out))?;
    for (i, map) in maps.iter().enumerate() {
        export_saliency(map, &out.join(frame_file_name(i + 1)), seq.native_size)?;
    }
    if json {
        outln!("{}", serde_json::json!({ "video": seq.id, "frames": maps.len(), "out": out.display().to_string() }));
    } else {
        outln!("wrote {} maps to {}", maps.len(), out.display());
    }
    Ok(())
}

struct GroundTruth {
    id: String,
    preds: Vec<tased_core::Tensor>,
    records: Vec<tased_core::metrics::FixationRecord>,
}

fn load_eval_video(pred_root: &Path, gt_dir: &Path) -> Result<GroundTruth, CliError> {
    let seq = load_video(gt_dir)?;
    let mut records = load_fixations(&gt_dir.join(data::FIXATIONS_FILE), seq.len(), seq.native_size)?;
    if let Some(maps) = data::load_density_maps(gt_dir)? {
        if maps.len() != seq.len() {
            return Err(CliError::Runtime(Error::data(gt_dir, format!("{} maps for {} frames", maps.len(), seq.len()))));
        }
        for (r, m) in records.iter_mut().zip(maps) {
            r.density = Some(m);
        }
    }
    let pred_dir = pred_root.join(&seq.id);
    let preds = load_gray_sequence(&pred_dir)?;
    if preds.len() != seq.len() {
        return Err(CliError::Runtime(Error::data(
            &pred_dir,
            format!("{} predictions for {} frames", preds.len(), seq.len()),
        )));
    }
    if let Some(p) = preds.iter().find(|p| p.shape() != seq.native_size) {
        return Err(CliError::Runtime(Error::data(
            &pred_dir,
            format!("prediction size {:?} differs from native {:?}", p.shape(), seq.native_size),
        )));
    }
    Ok(GroundTruth {
        id: seq.id,
        preds,
        records,
    })
}

pub fn eval(pred: &Path, gt: &Path, out: Option<PathBuf>, pool: PoolArg, splits: usize, seed: u64, json: bool) -> Result<(), CliError> {
    if splits == 0 {
        return Err(CliError::Usage("--splits must be positive".into()));
    }
    let videos = data::list_videos(gt)?
        .iter()
        .map(|dir| load_eval_video(pred, dir))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<VideoEval<'_>> = videos
        .iter()
        .map(|v| VideoEval {
            id: &v.id,
            preds: &v.preds,
            records: &v.records,
        })
        .collect();
    let config = EvalConfig {
        n_splits: splits,
        pool: match pool {
            PoolArg::Global => PoolScope::Global,
            PoolArg::PerVideo => PoolScope::PerVideo,
        },
        seed,
        ..EvalConfig::default()
    };
    let report = evaluate(&inputs, &config)?;
    let out = out.unwrap_or_else(|| pred.to_path_buf());
    fs::create_dir_all(&out).map_err(io(&out))?;
    let csv_path = out.join("metrics.csv");
    fs::write(&csv_path, report.to_csv()).map_err(io(&csv_path))?;
    let json_path = out.join("metrics.json");
    let aggregate = report.aggregate_json();
    let text = serde_json::to_string_pretty(&aggregate).map_err(Error::from)?;
    fs::write(&json_path, format!("{text}\n")).map_err(io(&json_path))?;
    if json {
        outln!("{}", serde_json::to_string(&aggregate).map_err(Error::from)?);
    } else {
        let a = &report.aggregate;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "videos {}  frames {}", report.videos.len(), a.frames).ok();
        writeln!(stdout, "NSS {}  CC {}  SIM {}  AUC-J {}  s-AUC {}", f(a.nss), f(a.cc), f(a.sim), f(a.aucj), f(a.sauc)).ok();
        if a.nss_degenerate_frames + a.cc_degenerate_frames > 0 {
            writeln!(
                stdout,
                "constant maps scored 0: NSS on {} frames, CC on {} frames",
                a.nss_degenerate_frames, a.cc_degenerate_frames
            )
            .ok();
        }
    }
    Ok(())
}

fn parse_enum<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|e| CliError::Usage(format!("--{flag} {value:?}: {e}")))
}

pub fn summary(config_path: &Path, aggregation: Option<String>, upsampling: Option<String>, json: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let mut model: ModelConfig = cfg.model;
    if let Some(a) = aggregation {
        model.aggregation = parse_enum("aggregation", &a)?;
    }
    if let Some(u) = upsampling {
        model.upsampling = parse_enum("upsampling", &u)?;
    }
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = Network::build(&model)?.summary();
    if json {
        outln!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    } else {
        outln!("{summary}");
    }
    Ok(())
}
