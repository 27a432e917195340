use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gtr_core::asc_graph::{build_graph, read_jsonl_file, write_jsonl, DatasetRecord, SigmaD};
use gtr_core::autodiff::{grad_check_entries, Entries};
use gtr_core::encodings::{epe_closed_form, gne};
use gtr_core::layers::{
    ablate, init_params, load_checkpoint, model_forward, save_checkpoint, FeatureStats,
    GraphInputs, ModelConfig,
};
use gtr_core::synth_data::{builtin_templates, generate, load_templates, random_scene, Rotation};
use gtr_core::training::{ablation_study, evaluate, train_with, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::{ConfigArgs, Failure, TrainArgs};

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io(e: std::io::Error) -> Failure {
    Failure::Runtime(e.into())
}

fn required(p: Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    p.ok_or_else(|| usage(format!("--{name} is required (flag or config key)")))
}

fn resolve(cfg: &ConfigArgs, train: Option<&TrainArgs>) -> Result<RunConfig, Failure> {
    let mut rc = RunConfig::default();
    if let Some(path) = &cfg.config {
        rc.apply_file(path).map_err(usage)?;
    }
    rc.apply_overrides(&cfg.overrides).map_err(usage)?;
    if let Some(t) = train {
        if let Some(v) = t.epochs {
            rc.train.epochs = v;
        }
        if let Some(v) = t.lr {
            rc.train.lr = v;
        }
        if let Some(v) = t.batch_size {
            rc.train.batch_size = v;
        }
        if let Some(v) = t.seed {
            rc.train.seed = v;
        }
    }
    Ok(rc)
}

/// Sets `class_count` from the labels unless it was given explicitly.
fn infer_classes(rc: &mut RunConfig, records: &[DatasetRecord]) {
    if !rc.class_count_explicit {
        let max = records.iter().map(|r| r.label).max().unwrap_or(0);
        rc.model.class_count = (max + 1).max(2);
    }
}

fn finish_resolve(rc: &RunConfig) -> Result<(), Failure> {
    rc.validate().map_err(usage)?;
    eprint!("# resolved config\n{}", rc.render());
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn parse_rotation(s: &str) -> Result<Rotation, Failure> {
    if s == "full" {
        return Ok(Rotation::Full);
    }
    s.parse::<f64>()
        .ok()
        .filter(|a| a.is_finite())
        .map(Rotation::Fixed)
        .ok_or_else(|| usage(format!("--rotation expects `full` or radians, got {s:?}")))
}

fn parse_sigma(s: &str) -> Result<SigmaD, Failure> {
    if s == "auto" {
        return Ok(SigmaD::Auto);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(SigmaD::Fixed)
        .ok_or_else(|| usage(format!("--sigma-d expects `auto` or a positive number, got {s:?}")))
}

pub fn gen(
    templates: Option<&Path>,
    per_class: usize,
    seed: u64,
    out: &Path,
    rotation: &str,
) -> Result<(), Failure> {
    if per_class == 0 {
        return Err(usage("--per-class must be at least 1"));
    }
    let rotation = parse_rotation(rotation)?;
    let templates = match templates {
        Some(p) => load_templates(p)?,
        None => builtin_templates(),
    };
    let records = generate(&templates, per_class, seed, rotation)?;
    let file = File::create(out).map_err(io)?;
    write_jsonl(BufWriter::new(file), &records)?;
    print_json(&json!({
        "records": records.len(),
        "classes": templates.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
        "out": out.display().to_string(),
    }));
    Ok(())
}

pub fn encode(data: &Path, record: usize, gne_n: usize, sigma_d: &str) -> Result<(), Failure> {
    if gne_n == 0 {
        return Err(usage("--gne-n must be at least 1"));
    }
    let sigma = parse_sigma(sigma_d)?;
    let records = read_jsonl_file(data)?;
    let rec = records.get(record).ok_or(gtr_core::Error::IndexOutOfRange {
        index: record,
        len: records.len(),
    })?;
    let g = build_graph(&rec.centers, sigma)?;
    let enc = gne(&g, gne_n)?;
    let rows: Vec<&[f64]> = (0..enc.rows()).map(|r| enc.row_slice(r)).collect();
    print_json(&json!({
        "record": record,
        "label": rec.label,
        "node_count": g.node_count(),
        "sigma_d": g.sigma_d(),
        "edges": g.edges(),
        "weights": g.weights(),
        "epe": epe_closed_form(&g)?,
        "gne": rows,
    }));
    Ok(())
}

pub fn train(
    data: Option<PathBuf>,
    val: Option<PathBuf>,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
    targs: &TrainArgs,
    cargs: &ConfigArgs,
) -> Result<(), Failure> {
    let mut rc = resolve(cargs, Some(targs))?;
    rc.paths.data = data.or(rc.paths.data);
    rc.paths.val = val.or(rc.paths.val);
    rc.paths.out = out.or(rc.paths.out);
    rc.paths.metrics = metrics.or(rc.paths.metrics);
    let data = required(rc.paths.data.clone(), "data")?;
    let out = required(rc.paths.out.clone(), "out")?;
    let metrics_path = rc.paths.metrics.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".metrics.jsonl");
        s.into()
    });
    rc.paths.metrics = Some(metrics_path.clone());

    let train_set = read_jsonl_file(&data)?;
    let val_set = match &rc.paths.val {
        Some(p) => read_jsonl_file(p)?,
        None => Vec::new(),
    };
    infer_classes(&mut rc, &train_set);
    finish_resolve(&rc)?;

    let mut sink = BufWriter::new(File::create(&metrics_path).map_err(io)?);
    let mut write_err = None;
    let result = train_with(&train_set, &val_set, &rc.model, &rc.train, |m| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  train_acc {:.4}  val_acc {}",
            m.epoch,
            m.loss,
            m.train_acc,
            m.val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(sink, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io(e));
    }
    sink.flush().map_err(io)?;
    save_checkpoint(&out, &result.config, &result.params)?;
    print_json(&json!({
        "checkpoint": out.display().to_string(),
        "metrics": metrics_path.display().to_string(),
        "final": result.metrics.last(),
    }));
    Ok(())
}

/// Model config implied by explicit settings, for comparison with a
/// checkpoint. Statistics always come from the checkpoint.
fn expected_model(rc: &RunConfig, ckpt: &ModelConfig) -> ModelConfig {
    let mut m = ablate(&rc.model, rc.train.ablation);
    m.stats = ckpt.stats.clone();
    if !rc.class_count_explicit {
        m.class_count = ckpt.class_count;
    }
    m
}

pub fn eval(data: Option<PathBuf>, checkpoint: Option<PathBuf>, cargs: &ConfigArgs) -> Result<(), Failure> {
    let mut rc = resolve(cargs, None)?;
    rc.paths.data = data.or(rc.paths.data);
    rc.paths.checkpoint = checkpoint.or(rc.paths.checkpoint);
    let data = required(rc.paths.data.clone(), "data")?;
    let ckpt_path = required(rc.paths.checkpoint.clone(), "checkpoint")?;
    let (cfg, params) = load_checkpoint(&ckpt_path)?;
    let explicit = cargs.config.is_some() || !cargs.overrides.is_empty();
    if explicit {
        finish_resolve(&rc)?;
        if expected_model(&rc, &cfg) != cfg {
            return Err(Failure::Runtime(gtr_core::Error::Config(format!(
                "checkpoint {} was trained with a different model config",
                ckpt_path.display()
            ))));
        }
    }
    let records = read_jsonl_file(&data)?;
    let ev = evaluate(&records, &cfg, &params)?;
    print_json(&serde_json::to_value(&ev).expect("evaluation serializes"));
    Ok(())
}

fn ablation_table(rows: &[gtr_core::training::AblationRow]) -> String {
    let mut s = String::from("removed        mean_pcc  per-seed\n");
    for r in rows {
        let seeds: Vec<String> = r.pcc.iter().map(|p| format!("{p:.4}")).collect();
        s.push_str(&format!("{:<14} {:.4}    {}\n", r.removed, r.mean_pcc, seeds.join(" ")));
    }
    s
}

pub fn ablate_cmd(
    data: Option<PathBuf>,
    test: Option<PathBuf>,
    seeds: &[u64],
    targs: &TrainArgs,
    cargs: &ConfigArgs,
) -> Result<(), Failure> {
    let mut rc = resolve(cargs, Some(targs))?;
    rc.paths.data = data.or(rc.paths.data);
    rc.paths.test = test.or(rc.paths.test);
    let data = required(rc.paths.data.clone(), "data")?;
    let test = required(rc.paths.test.clone(), "test")?;
    if seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    if rc.train.ablation.any() {
        return Err(usage("ablate sets the disable_* flags itself; remove them from the config"));
    }
    let train_set = read_jsonl_file(&data)?;
    let test_set = read_jsonl_file(&test)?;
    infer_classes(&mut rc, &train_set);
    finish_resolve(&rc)?;
    let tc = TrainConfig { ..rc.train.clone() };
    let rows = ablation_study(&train_set, &test_set, &rc.model, &tc, seeds)?;
    eprint!("{}", ablation_table(&rows));
    for r in &rows {
        print_json(&serde_json::to_value(r).expect("row serializes"));
    }
    Ok(())
}

pub fn gradcheck(
    k: usize,
    seed: u64,
    label: usize,
    step: f64,
    tol: f64,
    sample: Option<usize>,
    cargs: &ConfigArgs,
) -> Result<(), Failure> {
    if !(2..=40).contains(&k) {
        return Err(usage(format!("--k must lie in [2, 40], got {k}")));
    }
    let rc = resolve(cargs, None)?;
    finish_resolve(&rc)?;
    if label >= rc.model.class_count {
        return Err(usage(format!(
            "--label {label} out of range for {} classes",
            rc.model.class_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = random_scene(k, &mut rng);
    let mut cfg = ablate(&rc.model, rc.train.ablation);
    cfg.stats = Some(FeatureStats::fit(&[DatasetRecord {
        label,
        centers: centers.clone(),
    }])?);
    let params = init_params(&cfg, seed)?;
    let inputs = GraphInputs::from_centers(&centers, &cfg)?;
    let entries = match sample {
        Some(n) if n > 0 => Entries::Sample { per_tensor: n, seed },
        Some(_) => return Err(usage("--sample must be at least 1")),
        None => Entries::All,
    };
    let report = grad_check_entries(
        |tape, vars| {
            let trace = model_forward(tape, &inputs, vars, &cfg)?;
            tape.cross_entropy(trace.logits, label)
        },
        &params,
        step,
        tol,
        entries,
    )?;
    let failures: Vec<_> = report.params.iter().filter(|p| !p.passed).collect();
    print_json(&json!({
        "passed": report.passed(),
        "loss": report.loss,
        "tensors": report.params.len(),
        "entries_checked": report.entries_checked(),
        "tolerance": tol,
        "step": step,
        "worst": report.worst(),
        "failures": failures,
    }));
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} tensor(s) above tolerance {tol}", failures.len())))
    }
}
