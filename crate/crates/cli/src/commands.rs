use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use casar::datamodel::synth::{split_per_class, synth_generate, SynthSpec};
use casar::datamodel::{load_clips, load_meshes, write_clips, write_contact_targets, DatasetConfig};
use casar::evaluation::{evaluate, run_ablation, write_ablation, write_reports};
use casar::geometry::ContactThresholds;
use casar::neuralcore::FocalParams;
use casar::pipeline::{
    check_compatible, derive_contact_dataset, load_action_module, load_contact_module, predict_action,
    save_action_module, save_contact_module, train_action_module, train_contact_module, CheckpointMeta,
};
use casar::{write_atomic, Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::{read_json, DataSource};
use crate::{
    AblationArgs, Command, DeriveArgs, EvalArgs, PredictArgs, Preset, SynthArgs, TrainActionArgs, TrainContactArgs,
};

/// Caps rayon's pool at `CASAR_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Some(raw) = std::env::var_os("CASAR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Validation(format!("CASAR_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Validation(format!("cannot configure thread pool: {e}")))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::DeriveContact(a) => derive_contact(a),
        Command::TrainContact(a) => train_contact(a),
        Command::TrainAction(a) => train_action(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Ablation(a) => ablation(a),
    }
}

/// Provenance record written next to each command's outputs.
#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    tool_version: &'static str,
    config: Value,
    seeds: Value,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<&'static str, String>,
    started_unix_secs: u64,
    elapsed_secs: f64,
    #[serde(skip_serializing_if = "Value::is_null")]
    summary: Value,
}

struct Run {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<&'static str, String>,
}

impl Run {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, name: &'static str, path: &Path) -> &mut Self {
        self.inputs.insert(name, path.display().to_string());
        self
    }

    fn output(&mut self, name: &'static str, path: &Path) -> &mut Self {
        self.outputs.insert(name, path.display().to_string());
        self
    }

    fn finish(self, path: &Path, config: Value, seeds: Value, summary: Value) -> Result<()> {
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_secs: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_secs: self.clock.elapsed().as_secs_f64(),
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// `dir/name.ext` → `dir/name.manifest.json`.
fn manifest_beside(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("value serializes")
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut run = Run::start("synth");
    let spec = SynthSpec {
        class_count: a.classes,
        clips_per_class: a.clips_per_class,
        frames_range: (a.min_frames, a.max_frames),
        noise_sigma: a.noise,
        seed: a.seed,
    };
    spec.validate()?;
    if a.test_per_class >= a.clips_per_class {
        return Err(Error::Validation(format!(
            "--test-per-class {} must be smaller than --clips-per-class {}",
            a.test_per_class, a.clips_per_class
        )));
    }
    let data = synth_generate(&spec)?;
    data.write(&a.out)?;
    for name in ["clips.jsonl", "contacts.jsonl", "meshes", "config.json"] {
        run.output(name_key(name), &a.out.join(name));
    }
    if a.test_per_class > 0 {
        let (train, test) = split_per_class(&data.clips, a.clips_per_class - a.test_per_class);
        write_clips(&a.out.join("train.jsonl"), &train)?;
        write_clips(&a.out.join("test.jsonl"), &test)?;
        run.output("train", &a.out.join("train.jsonl"));
        run.output("test", &a.out.join("test.jsonl"));
    }
    let config = json!({
        "classes": a.classes,
        "clips_per_class": a.clips_per_class,
        "frames_range": [a.min_frames, a.max_frames],
        "noise_sigma": a.noise,
        "test_per_class": a.test_per_class,
        "dataset": data.config,
    });
    let summary = json!({ "clips": data.clips.len(), "frames": data.contacts.len() });
    run.finish(&a.out.join("manifest.json"), config, json!({ "synth": a.seed }), summary)
}

fn name_key(name: &str) -> &'static str {
    match name {
        "clips.jsonl" => "clips",
        "contacts.jsonl" => "contacts",
        "meshes" => "meshes",
        _ => "config",
    }
}

fn derive_contact(a: DeriveArgs) -> Result<()> {
    let mut run = Run::start("derive-contact");
    let mut config: DatasetConfig = match &a.config {
        Some(p) => read_dataset_config(p)?,
        None => DataSource::new(&a.clips).dataset_config()?,
    };
    let (mut eta_c, mut eta_d) = (config.thresholds.eta_c(), config.thresholds.eta_d());
    if let Some(preset) = a.preset {
        let t = match preset {
            Preset::H2o => ContactThresholds::H2O,
            Preset::Fpha => ContactThresholds::FPHA,
        };
        (eta_c, eta_d) = (t.eta_c(), t.eta_d());
    }
    eta_c = a.eta_c.unwrap_or(eta_c);
    eta_d = a.eta_d.unwrap_or(eta_d);
    config.thresholds = ContactThresholds::new(eta_c, eta_d)?;

    let clips = load_clips(&a.clips, &config)?;
    let meshes = load_meshes(&a.meshes)?;
    let samples = derive_contact_dataset(&clips, &meshes, &config)?;
    write_contact_targets(&a.out, &samples)?;
    run.input("clips", &a.clips).input("meshes", &a.meshes).output("contacts", &a.out);
    if let Some(p) = &a.config {
        run.input("config", p);
    }
    let summary = json!({ "clips": clips.len(), "frames": samples.len() });
    run.finish(&manifest_beside(&a.out), to_value(&config), Value::Null, summary)
}

fn read_dataset_config(path: &Path) -> Result<DatasetConfig> {
    serde_json::from_value(read_json(path)?)
        .map_err(|e| Error::Validation(format!("invalid dataset config {}: {e}", path.display())))
}

fn train_contact(a: TrainContactArgs) -> Result<()> {
    let mut run = Run::start("train-contact");
    let source = DataSource::new(&a.data.data);
    let mut cfg = source.training_config(a.data.config.as_deref())?;
    let c = &mut cfg.contact;
    c.hidden_width = a.hidden.unwrap_or(c.hidden_width);
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.base_lr = a.lr.unwrap_or(c.base_lr);
    c.decay_factor = a.lr_decay.unwrap_or(c.decay_factor);
    c.period_epochs = a.lr_period.unwrap_or(c.period_epochs);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.seed = a.seed.unwrap_or(c.seed);
    if a.alpha.is_some() || a.gamma.is_some() {
        c.focal = FocalParams::new(a.alpha.unwrap_or(c.focal.alpha), a.gamma.unwrap_or(c.focal.gamma))?;
    }
    cfg.dataset.validate()?;
    cfg.contact.validate()?;

    let (clips_path, clips) = source.load_clips("train.jsonl", &cfg.dataset)?;
    for clip in &clips {
        clip.validate(&cfg.dataset)?;
    }
    let samples = source.contact_samples(&clips, &cfg.dataset, true)?;
    let (module, history) = train_contact_module(&samples, &cfg.dataset, &cfg.contact)?;
    let meta = CheckpointMeta::for_contact(&module, cfg.contact.seed, &history);
    save_contact_module(&module, &meta, &a.out)?;

    run.input("clips", &clips_path).output("checkpoint", &a.out).output("meta", &casar::pipeline::meta_path(&a.out));
    if let Some(p) = &a.data.config {
        run.input("config", p);
    }
    let summary = json!({ "frames": samples.len(), "final_loss": history.last(), "loss_history": history });
    let config = json!({ "dataset": cfg.dataset, "contact": cfg.contact });
    run.finish(&manifest_beside(&a.out), config, json!({ "contact": cfg.contact.seed }), summary)
}

fn train_action(a: TrainActionArgs) -> Result<()> {
    let mut run = Run::start("train-action");
    let source = DataSource::new(&a.data.data);
    let mut cfg = source.training_config(a.data.config.as_deref())?;
    let g = &mut cfg.action;
    g.hidden_width = a.hidden.unwrap_or(g.hidden_width);
    g.epochs = a.epochs.unwrap_or(g.epochs);
    g.base_lr = a.lr.unwrap_or(g.base_lr);
    g.decay_factor = a.lr_decay.unwrap_or(g.decay_factor);
    g.period_epochs = a.lr_period.unwrap_or(g.period_epochs);
    g.batch_size = a.batch_size.unwrap_or(g.batch_size);
    g.seed = a.seed.unwrap_or(g.seed);
    g.lambda = a.lambda.unwrap_or(g.lambda);
    if let Some(h) = a.head {
        g.head = h.into();
    }
    if a.binarize {
        g.augmentation.binarize = true;
    }
    if a.no_contact {
        g.augmentation.use_contact = false;
    }
    cfg.dataset.frames_per_clip = a.frames_per_clip.unwrap_or(cfg.dataset.frames_per_clip);
    cfg.dataset.validate()?;
    cfg.action.validate()?;

    let (contact, contact_meta) = load_contact_module(&a.contact_ckpt)?;
    if contact.dataset.frame_dim() != cfg.dataset.frame_dim() || contact.dataset.contact_dim() != cfg.dataset.contact_dim()
    {
        return Err(Error::Shape(format!(
            "contact checkpoint expects frame width {} and contact width {}, dataset has {} and {}",
            contact.dataset.frame_dim(),
            contact.dataset.contact_dim(),
            cfg.dataset.frame_dim(),
            cfg.dataset.contact_dim()
        )));
    }
    let (clips_path, clips) = source.load_clips("train.jsonl", &cfg.dataset)?;
    let (module, history) = train_action_module(&clips, &contact, &cfg.dataset, &cfg.action)?;
    let meta = CheckpointMeta::for_action(&module, cfg.action.seed, &history);
    save_action_module(&module, &meta, &a.out)?;

    run.input("clips", &clips_path)
        .input("contact_checkpoint", &a.contact_ckpt)
        .output("checkpoint", &a.out)
        .output("meta", &casar::pipeline::meta_path(&a.out));
    if let Some(p) = &a.data.config {
        run.input("config", p);
    }
    let summary = json!({ "clips": clips.len(), "final_loss": history.last(), "loss_history": history });
    let config = json!({ "dataset": cfg.dataset, "action": cfg.action });
    let seeds = json!({ "contact": contact_meta.seed, "action": cfg.action.seed });
    run.finish(&manifest_beside(&a.out), config, seeds, summary)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut run = Run::start("eval");
    let (contact, contact_meta) = load_contact_module(&a.contact_ckpt)?;
    let (action, action_meta) = load_action_module(&a.action_ckpt)?;
    check_compatible(&contact, &action)?;
    let source = DataSource::new(&a.data);
    let dataset = action.dataset.clone();
    let (clips_path, clips) = source.load_clips("test.jsonl", &dataset)?;
    let samples = source.contact_samples(&clips, &contact.dataset, false)?;
    let report = evaluate(&contact, &action, &clips, &samples)?;

    let provenance = json!({
        "clips": clips_path.display().to_string(),
        "contact_checkpoint": a.contact_ckpt.display().to_string(),
        "action_checkpoint": a.action_ckpt.display().to_string(),
        "contact_frames": samples.len(),
        "head": action.head,
        "augmentation": action.augmentation,
        "seeds": { "contact": contact_meta.seed, "action": action_meta.seed },
    });
    write_reports(&report, &provenance, &a.report)?;
    run.input("clips", &clips_path)
        .input("contact_checkpoint", &a.contact_ckpt)
        .input("action_checkpoint", &a.action_ckpt);
    for name in ["metrics.json", "confusion.csv", "per_object.csv"] {
        run.output(report_key(name), &a.report.join(name));
    }
    let summary = json!({ "top1_accuracy": report.top1_accuracy, "clips": report.clip_count });
    let seeds = json!({ "contact": contact_meta.seed, "action": action_meta.seed });
    run.finish(&a.report.join("manifest.json"), to_value(&dataset), seeds, summary)
}

fn report_key(name: &str) -> &'static str {
    match name {
        "metrics.json" => "metrics",
        "confusion.csv" => "confusion",
        _ => "per_object",
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let (contact, _) = load_contact_module(&a.contact_ckpt)?;
    let (action, _) = load_action_module(&a.action_ckpt)?;
    check_compatible(&contact, &action)?;
    let clips = load_clips(&a.clip, &action.dataset)?;
    if clips.is_empty() {
        return Err(Error::Validation(format!("{} contains no clips", a.clip.display())));
    }
    let mut out = String::new();
    for clip in &clips {
        let (class, probs) = predict_action(&contact, &action, clip)?;
        let line = json!({ "clip_id": clip.clip_id, "predicted_class": class, "probabilities": probs });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn ablation(a: AblationArgs) -> Result<()> {
    let mut run = Run::start("ablation");
    let source = DataSource::new(&a.data.data);
    let cfg = source.training_config(a.data.config.as_deref())?;
    cfg.dataset.validate()?;
    cfg.contact.validate()?;
    cfg.action.validate()?;
    let (train_path, train) = source.load_clips("train.jsonl", &cfg.dataset)?;
    let test_path = match &a.test {
        Some(p) => p.clone(),
        None => {
            let p = source.dir.join("test.jsonl");
            if !p.is_file() {
                return Err(Error::Validation(format!(
                    "no held-out clips: pass --test or add {}",
                    p.display()
                )));
            }
            p
        }
    };
    let test = load_clips(&test_path, &cfg.dataset)?;
    let train_samples = source.contact_samples(&train, &cfg.dataset, true)?;
    let test_samples = source.contact_samples(&test, &cfg.dataset, false)?;
    let report = run_ablation(&train_samples, &train, &test, &test_samples, &cfg)?;

    let provenance = json!({
        "train": train_path.display().to_string(),
        "test": test_path.display().to_string(),
        "seeds": { "contact": cfg.contact.seed, "action": cfg.action.seed },
    });
    write_ablation(&report, &provenance, &a.report)?;
    run.input("train", &train_path)
        .input("test", &test_path)
        .output("ablation_json", &a.report.join("ablation.json"))
        .output("ablation_csv", &a.report.join("ablation.csv"));
    if let Some(p) = &a.data.config {
        run.input("config", p);
    }
    let seeds = json!({ "contact": cfg.contact.seed, "action": cfg.action.seed });
    run.finish(&a.report.join("manifest.json"), to_value(&cfg), seeds, to_value(&report.rows))
}
