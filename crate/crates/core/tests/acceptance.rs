//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line even when the whole suite succeeds.

use std::path::Path;
use std::time::{Duration, Instant};

use casar::datamodel::synth::{samples_for_clips, split_per_class, synth_generate, SynthSpec};
use casar::datamodel::{encode_frame, load_clips, load_contact_targets, ActionClip, ContactSample, DatasetConfig};
use casar::evaluation::{
    ablation_with_contact, action_accuracy, confusion_matrix, evaluate, evaluate_contact, write_reports,
    AblationVariant,
};
use casar::geometry::{build_vertex_index, label_contact_map, nearest_vertex_distance, ContactThresholds, Point3};
use casar::neuralcore::{
    focal_loss, ActionHead, Activation, DenseLayer, FocalParams, LrSchedule, MlpModel,
};
use casar::pipeline::{
    action_inputs, derive_contact_dataset, load_action_module, load_contact_module, predict_action,
    predict_contact_batch, save_action_module, save_contact_module, train_action_module, train_contact_module,
    CheckpointMeta, TrainedActionModule, TrainedContactModule, TrainingConfig,
};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Point3 {
    Point3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

fn geometry_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let thresholds = ContactThresholds::H2O;
    let mut worst = 0.0f64;
    let mut map_mismatches = 0;
    let mut labelled = [0usize; 3];
    for _ in 0..1000 {
        let n = rng.random_range(1..=5000);
        let vertices: Vec<Point3> = (0..n).map(|_| random_point(&mut rng, 0.1)).collect();
        let joints: Vec<Point3> = (0..42).map(|_| random_point(&mut rng, 0.35)).collect();
        let index = build_vertex_index(&vertices).unwrap();
        let mut contact = vec![0u8; 42];
        let mut distant = vec![0u8; 42];
        for (i, q) in joints.iter().enumerate() {
            let brute = vertices
                .iter()
                .map(|v| {
                    let d = *q - *v;
                    d.x * d.x + d.y * d.y + d.z * d.z
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let indexed = nearest_vertex_distance(&index, *q).unwrap();
            worst = worst.max((brute - indexed).abs());
            contact[i] = u8::from(brute < thresholds.eta_c());
            distant[i] = u8::from(brute > thresholds.eta_d());
            labelled[if contact[i] == 1 { 0 } else if distant[i] == 1 { 2 } else { 1 }] += 1;
        }
        let map = label_contact_map(&joints, &index, &thresholds, 42).unwrap();
        if map.contact != contact || map.distant != distant {
            map_mismatches += 1;
        }
    }
    outcome(
        worst <= 1e-12 && map_mismatches == 0,
        format!(
            "max |indexed - brute| = {worst:e}, map mismatches = {map_mismatches}, labels contact/neither/distant = {labelled:?}"
        ),
    )
}

/// Naive per-element forward pass, used to stay away from rectifier kinks.
fn hidden_pre_activations(layers: &[DenseLayer], x: ArrayView2<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.outer_iter() {
        let mut a: Vec<f64> = row.to_vec();
        for layer in layers {
            let z: Vec<f64> = (0..layer.out_dim())
                .map(|o| layer.bias[o] + (0..layer.in_dim()).map(|i| layer.weights[[o, i]] * a[i]).sum::<f64>())
                .collect();
            if layer.activation == Activation::Relu {
                out.extend(&z);
            }
            a = z.iter().map(|&v| v.max(0.0)).collect();
        }
    }
    out
}

fn random_layers(dims: &[usize], output: Activation, rng: &mut ChaCha8Rng) -> Vec<DenseLayer> {
    dims.windows(2)
        .enumerate()
        .map(|(l, w)| DenseLayer {
            weights: Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-0.5..0.5)),
            activation: if l + 2 == dims.len() { output } else { Activation::Relu },
        })
        .collect()
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Worst relative error between backprop and central differences over
/// every parameter of `draws` random models.
fn gradient_check<L>(dims: &[usize], output: Activation, seed: u64, loss: L) -> f64
where
    L: Fn(ArrayView2<f64>, &mut ChaCha8Rng) -> Box<dyn Fn(ArrayView2<f64>) -> (f64, Array2<f64>)>,
{
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (layers, x) = loop {
            let layers = random_layers(dims, output, &mut rng);
            let x = Array2::from_shape_fn((4, dims[0]), |_| rng.random_range(-1.0..1.0));
            if hidden_pre_activations(&layers, x.view()).iter().all(|z| z.abs() > 1e-3) {
                break (layers, x);
            }
        };
        let objective = loss(x.view(), &mut rng);
        let model = MlpModel::from_layers(layers.clone()).unwrap();
        let (out, cache) = model.forward(x.view()).unwrap();
        let (_, grad_out) = objective(out.view());
        let grads = model.backward(&cache, grad_out.view()).unwrap();

        let eval = |layers: Vec<DenseLayer>| {
            let m = MlpModel::from_layers(layers).unwrap();
            objective(m.predict(x.view()).unwrap().view()).0
        };
        for l in 0..layers.len() {
            for ((o, i), &analytic) in grads.weights[l].indexed_iter() {
                let mut plus = layers.clone();
                plus[l].weights[[o, i]] += STEP;
                let mut minus = layers.clone();
                minus[l].weights[[o, i]] -= STEP;
                let numeric = (eval(plus) - eval(minus)) / (2.0 * STEP);
                worst = worst.max(relative_error(analytic, numeric));
            }
            for (o, &analytic) in grads.biases[l].indexed_iter() {
                let mut plus = layers.clone();
                plus[l].bias[o] += STEP;
                let mut minus = layers.clone();
                minus[l].bias[o] -= STEP;
                let numeric = (eval(plus) - eval(minus)) / (2.0 * STEP);
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
    }
    worst
}

fn gradient_checks() -> Outcome {
    let focal = gradient_check(&[5, 4, 3], Activation::Sigmoid, 2, |x, rng| {
        let target = Array2::from_shape_fn((x.nrows(), 3), |_| f64::from(rng.random_range(0..2u8)));
        Box::new(move |out| focal_loss(out, target.view(), &FocalParams::default()).unwrap())
    });
    let sigmoid_ce = gradient_check(&[6, 4, 3], Activation::Sigmoid, 3, |x, rng| {
        let labels: Vec<usize> = (0..x.nrows()).map(|_| rng.random_range(0..3)).collect();
        Box::new(move |out| ActionHead::SigmoidCe.loss(out, &labels).unwrap())
    });
    let softmax_ce = gradient_check(&[6, 4, 3], Activation::Identity, 4, |x, rng| {
        let labels: Vec<usize> = (0..x.nrows()).map(|_| rng.random_range(0..3)).collect();
        Box::new(move |out| ActionHead::SoftmaxCe.loss(out, &labels).unwrap())
    });
    let worst = focal.max(sigmoid_ce).max(softmax_ce);
    outcome(
        worst <= 1e-4,
        format!("max relative error focal {focal:.2e}, sigmoid ce {sigmoid_ce:.2e}, softmax ce {softmax_ce:.2e}"),
    )
}

fn scalar_values() -> Outcome {
    let pred = Array2::from_elem((1, 1), 0.5);
    let target = Array2::from_elem((1, 1), 1.0);
    let (loss, _) = focal_loss(pred.view(), target.view(), &FocalParams::new(0.5, 4.0).unwrap()).unwrap();
    let expected = 0.5 * 0.0625 * std::f64::consts::LN_2;
    let lr20 = LrSchedule::CONTACT.lr_at(20).unwrap();
    let lr0 = LrSchedule::CONTACT.lr_at(0).unwrap();
    let lr40 = LrSchedule::CONTACT.lr_at(40).unwrap();
    let pass = (loss - expected).abs() <= 1e-9
        && (loss - 0.021661).abs() <= 1e-6
        && lr0 == 1e-4
        && lr20 == 1e-4 * 0.7
        && (lr20 - 7e-5).abs() <= 1e-18
        && lr40 == 1e-4 * 0.7f64.powi(2)
        && LrSchedule::CONTACT.lr_at(19).unwrap() == 1e-4;
    outcome(pass, format!("focal = {loss:.9}, lr@0 = {lr0:e}, lr@20 = {lr20:e}, lr@40 = {lr40:e}"))
}

fn acceptance_config(dataset: DatasetConfig) -> TrainingConfig {
    let mut config = TrainingConfig {
        dataset,
        ..TrainingConfig::default()
    };
    config.contact.hidden_width = 64;
    config.contact.epochs = 60;
    config.contact.base_lr = 1e-3;
    config.contact.period_epochs = 12;
    config.contact.batch_size = 64;
    config.action.hidden_width = 256;
    config.action.epochs = 60;
    config.action.base_lr = 1e-3;
    config.action.period_epochs = 20;
    config.action.batch_size = 16;
    config.action.head = ActionHead::SoftmaxCe;
    config
}

fn parameter_bits(model: &MlpModel) -> Vec<u64> {
    model.parameters().map(f64::to_bits).collect()
}

struct EndToEnd {
    contact: TrainedContactModule,
    action: TrainedActionModule,
    test_clips: Vec<ActionClip>,
    test_samples: Vec<ContactSample>,
    frozen_intact: bool,
}

fn synthetic_end_to_end() -> (Outcome, Option<EndToEnd>) {
    let start = Instant::now();
    let data = synth_generate(&SynthSpec {
        class_count: 6,
        clips_per_class: 135,
        seed: 7,
        ..SynthSpec::default()
    })
    .unwrap();
    let (train, test) = split_per_class(&data.clips, 100);
    let train_samples = samples_for_clips(&data.contacts, &train);
    let test_samples = samples_for_clips(&data.contacts, &test);
    let config = acceptance_config(data.config.clone());

    let (contact, _) = train_contact_module(&train_samples, &config.dataset, &config.contact).unwrap();
    let (_, averages) = evaluate_contact(&contact, &test_samples, &config.dataset).unwrap();
    let element_acc = (averages.contact_acc + averages.distant_acc) / 2.0;

    let before = parameter_bits(&contact.model);
    let (action, _) = train_action_module(&train, &contact, &config.dataset, &config.action).unwrap();
    let frozen_intact = before == parameter_bits(&contact.model);
    let report = evaluate(&contact, &action, &test, &test_samples).unwrap();

    let ablation = ablation_with_contact(&contact, &train, &test, &test_samples, &config).unwrap();
    let acc = |v| ablation.accuracy(v).unwrap();
    let (base, c_only, d_only, both) = (
        acc(AblationVariant::Baseline),
        acc(AblationVariant::ContactOnly),
        acc(AblationVariant::DistantOnly),
        acc(AblationVariant::ContactDistant),
    );
    let elapsed = start.elapsed();

    let a = element_acc >= 0.95;
    let b = report.top1_accuracy >= 0.90;
    let c = both - base >= 0.05 && both >= c_only;
    let in_budget = elapsed <= Duration::from_secs(600);
    let detail = format!(
        "(a) contact elements {:.4} [contact {:.4}, distant {:.4}, {} frames] {}; \
         (b) test top-1 {:.4} over {} clips {}; \
         (c) ablation baseline {base:.4}, contact-only {c_only:.4}, distant-only {d_only:.4}, contact+distant {both:.4} {}; \
         runtime {:.0}s {}",
        element_acc,
        averages.contact_acc,
        averages.distant_acc,
        averages.frames,
        verdict(a),
        report.top1_accuracy,
        report.clip_count,
        verdict(b),
        verdict(c),
        elapsed.as_secs_f64(),
        verdict(in_budget),
    );
    let run = EndToEnd {
        contact,
        action,
        test_clips: test,
        test_samples,
        frozen_intact,
    };
    (outcome(a && b && c && in_budget, detail), Some(run))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn small_run_metrics(dir: &Path) -> Vec<u8> {
    let data = synth_generate(&SynthSpec {
        class_count: 3,
        clips_per_class: 8,
        frames_range: (6, 12),
        seed: 21,
        ..SynthSpec::default()
    })
    .unwrap();
    let (train, test) = split_per_class(&data.clips, 6);
    let mut config = acceptance_config(data.config.clone());
    config.contact.hidden_width = 16;
    config.contact.epochs = 3;
    config.action.hidden_width = 16;
    config.action.epochs = 5;
    let samples = derive_contact_dataset(&train, &data.meshes, &config.dataset).unwrap();
    let (contact, _) = train_contact_module(&samples, &config.dataset, &config.contact).unwrap();
    let (action, _) = train_action_module(&train, &contact, &config.dataset, &config.action).unwrap();
    let test_samples = samples_for_clips(&data.contacts, &test);
    let report = evaluate(&contact, &action, &test, &test_samples).unwrap();
    write_reports(&report, &serde_json::json!({ "seed": 21 }), dir).unwrap();
    std::fs::read(dir.join("metrics.json")).unwrap()
}

fn pipeline_contracts(run: Option<&EndToEnd>) -> Outcome {
    let Some(run) = run else {
        return outcome(false, "end-to-end run unavailable");
    };
    let tmp = tempfile::tempdir().unwrap();
    let first = small_run_metrics(&tmp.path().join("a"));
    let second = small_run_metrics(&tmp.path().join("b"));
    let deterministic = first == second;

    let f_path = tmp.path().join("contact.ckpt");
    let g_path = tmp.path().join("action.ckpt");
    save_contact_module(&run.contact, &CheckpointMeta::for_contact(&run.contact, 0, &[]), &f_path).unwrap();
    save_action_module(&run.action, &CheckpointMeta::for_action(&run.action, 0, &[]), &g_path).unwrap();
    let (f2, _) = load_contact_module(&f_path).unwrap();
    let (g2, _) = load_action_module(&g_path).unwrap();

    let dataset = &run.contact.dataset;
    let frames: Vec<f64> = run
        .test_samples
        .iter()
        .take(500)
        .flat_map(|s| encode_frame(&s.frame, dataset).unwrap())
        .collect();
    let frames = Array2::from_shape_vec((frames.len() / dataset.frame_dim(), dataset.frame_dim()), frames).unwrap();
    let f_diff = max_abs_diff(
        &predict_contact_batch(&run.contact, frames.view()).unwrap(),
        &predict_contact_batch(&f2, frames.view()).unwrap(),
    );
    let clips = &run.test_clips[..run.test_clips.len().min(60)];
    let inputs = action_inputs(&run.contact, clips, dataset, &run.action.augmentation).unwrap();
    let g_diff = max_abs_diff(
        &run.action.model.predict(inputs.view()).unwrap(),
        &g2.model.predict(inputs.view()).unwrap(),
    );
    let round_trip = f_diff <= 1e-6 && g_diff <= 1e-6;
    outcome(
        run.frozen_intact && deterministic && round_trip,
        format!(
            "contact params unchanged by action training: {}; rerun metrics.json identical: {}; \
             checkpoint max output diff contact {f_diff:.2e}, action {g_diff:.2e}",
            run.frozen_intact, deterministic
        ),
    )
}

fn metric_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..100 {
        let classes = rng.random_range(2..40);
        let n = rng.random_range(1..500);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.random_bool(0.6) { l } else { rng.random_range(0..classes) })
            .collect();
        let m = confusion_matrix(&preds, &labels, classes).unwrap();
        let diagonal: u64 = (0..classes).map(|i| m[i][i]).sum();
        let total: u64 = m.iter().flatten().sum();
        if total != n as u64 || diagonal as f64 / total as f64 != action_accuracy(&preds, &labels).unwrap() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 random sets disagree"))
}

fn inference_latency() -> Outcome {
    let dataset = DatasetConfig::default();
    let contact = TrainedContactModule::new(
        MlpModel::init(&[dataset.frame_dim(), 256, 256, dataset.contact_dim()], 0).unwrap(),
        dataset.clone(),
        true,
    )
    .unwrap();
    let action = TrainedActionModule::new(
        MlpModel::init(&[dataset.clip_dim(true), 5000, 5000, dataset.action_classes], 1).unwrap(),
        ActionHead::SigmoidCe,
        Default::default(),
        dataset.clone(),
    )
    .unwrap();
    let data = synth_generate(&SynthSpec {
        class_count: 2,
        clips_per_class: 1,
        frames_range: (40, 40),
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    let clip = &data.clips[0];
    predict_action(&contact, &action, clip).unwrap();
    let mut best = Duration::MAX;
    for _ in 0..5 {
        let t = Instant::now();
        predict_action(&contact, &action, clip).unwrap();
        best = best.min(t.elapsed());
    }
    outcome(
        best <= Duration::from_millis(100),
        format!("one clip at 197/84/8992/5000 dims: {:.1} ms (best of 5)", best.as_secs_f64() * 1e3),
    )
}

/// Runs the full-size pipeline on a converted dataset directory given in
/// `CASAR_DATASET_DIR` (train.jsonl, test.jsonl, meshes/, optional config.json).
fn real_dataset() -> Option<Outcome> {
    let dir = std::path::PathBuf::from(std::env::var_os("CASAR_DATASET_DIR")?);
    let run = || -> casar::Result<Outcome> {
        let mut config = TrainingConfig::default();
        if let Ok(text) = std::fs::read_to_string(dir.join("config.json")) {
            config.dataset = serde_json::from_str(&text).map_err(|e| casar::Error::Validation(e.to_string()))?;
        }
        config.action.head = ActionHead::SoftmaxCe;
        let train = load_clips(&dir.join("train.jsonl"), &config.dataset)?;
        let test = load_clips(&dir.join("test.jsonl"), &config.dataset)?;
        let meshes = casar::datamodel::load_meshes(&dir.join("meshes"))?;
        let samples = derive_contact_dataset(&train, &meshes, &config.dataset)?;
        let (contact, _) = train_contact_module(&samples, &config.dataset, &config.contact)?;
        let (action, _) = train_action_module(&train, &contact, &config.dataset, &config.action)?;
        let test_samples = match load_contact_targets(&dir.join("test_contacts.jsonl"), &test, &config.dataset) {
            Ok(s) => s,
            Err(_) => derive_contact_dataset(&test, &meshes, &config.dataset)?,
        };
        let report = evaluate(&contact, &action, &test, &test_samples)?;
        Ok(outcome(
            report.top1_accuracy >= 0.85,
            format!("test top-1 {:.4} over {} clips", report.top1_accuracy, report.clip_count),
        ))
    };
    Some(run().unwrap_or_else(|e| outcome(false, format!("error: {e}"))))
}

fn report(id: &str, name: &str, result: &Outcome, soft: bool) -> bool {
    let status = match (result.pass, soft) {
        (true, _) => "PASS",
        (false, true) => "FAIL (soft, not fatal)",
        (false, false) => "FAIL",
    };
    println!("acceptance {id} {name}: {status} | {}", result.detail);
    result.pass || soft
}

fn main() {
    // `cargo test -- --list` and filters from other targets should not trigger the suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let mut r = f();
        r.detail = format!("{} ({:.1}s)", r.detail, t.elapsed().as_secs_f64());
        r
    };
    ok &= report("1", "geometry oracle equivalence", &timed(&geometry_oracle), false);
    ok &= report("2", "gradient checks", &timed(&gradient_checks), false);
    ok &= report("3", "scalar value checks", &timed(&scalar_values), false);
    let (end_to_end, run) = synthetic_end_to_end();
    ok &= report("4", "synthetic end-to-end", &end_to_end, false);
    ok &= report("5", "pipeline contracts", &timed(&|| pipeline_contracts(run.as_ref())), false);
    drop(run);
    ok &= report("6", "metric consistency", &timed(&metric_consistency), false);
    ok &= report("7", "inference latency", &inference_latency(), true);
    match real_dataset() {
        Some(r) => ok &= report("8", "real dataset accuracy", &r, true),
        None => println!("acceptance 8 real dataset accuracy: SKIP | CASAR_DATASET_DIR not set"),
    }
    if !ok {
        std::process::exit(1);
    }
}
