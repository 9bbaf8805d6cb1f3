//! One function per verb. Each reads its inputs, writes its artifacts
//! under the output directory and prints a short summary.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rarefsl::baseline::{fit_baseline_task, TeacherModel, TeacherRecord};
use rarefsl::config::RunConfig;
use rarefsl::data::{io::write_dataset_folder, make_synthetic_dataset, sample_task, Dataset, EpisodeTask};
use rarefsl::distill::{distill_with, student_predict, LabelDesign, LossVariant, StudentCheckpoint, Usage};
use rarefsl::eval::{render_table, Report, TaskResult};
use rarefsl::nn::EncoderCheckpoint;
use rarefsl::pipeline::{evaluate_encoder, load_data, method_ids, split};
use rarefsl::pretrain::{pretrain_from, PretrainState};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::artifacts::{
    prepare_dir, read_json, read_provenance, write_with_provenance, JsonLines, Provenance, UsageError,
};
use crate::plot::{grouped_bars, line_chart, Series};
use crate::{settings, GlobalArgs, TaskArgs};

fn out_dir(config: &RunConfig) -> PathBuf {
    PathBuf::from(&config.output_dir)
}

fn task_seed(config: &RunConfig, task: &TaskArgs) -> u64 {
    task.task_seed.unwrap_or_else(|| config.task_seed(task.task.unwrap_or(0)))
}

/// SHA-256 over class ids and pixel values, in sample order.
fn dataset_fingerprint(data: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in &data.samples {
        h.update((s.class_id as u64).to_le_bytes());
        for v in s.image.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn load_split(config: &RunConfig) -> anyhow::Result<(Dataset, Dataset, crate::artifacts::Upstream)> {
    let dataset = load_data(config).context("loading dataset")?;
    let upstream = crate::artifacts::Upstream {
        path: config.data.source.clone().unwrap_or_else(|| "synthetic".into()),
        sha256: dataset_fingerprint(&dataset),
    };
    let (base, rare) = split(config, &dataset)?;
    Ok((base, rare, upstream))
}

fn load_encoder(path: &Path) -> anyhow::Result<EncoderCheckpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading encoder checkpoint {}", path.display()))?;
    EncoderCheckpoint::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

#[derive(Serialize)]
struct Reports<'a> {
    reports: &'a [Report],
}

pub fn synth_data(g: &GlobalArgs) -> anyhow::Result<()> {
    let config = settings::load(g)?;
    let params = &config.data.synthetic;
    let data = make_synthetic_dataset(params)?;
    let dir = out_dir(&config).join("data");
    prepare_dir(&dir, g.overwrite)?;
    write_dataset_folder(&data, &dir)?;
    let meta = json!({
        "layout": "folder_per_class",
        "params": params,
        "class_names": data.class_names,
        "class_counts": data.class_counts(),
        "n_images": data.len(),
        "fingerprint": dataset_fingerprint(&data),
    });
    write_with_provenance(&dir.join("meta.json"), &meta, &Provenance::new("synth-data", &config), true)?;
    println!("wrote {} images in {} classes to {}", data.len(), data.n_classes(), dir.display());
    Ok(())
}

pub fn pretrain(g: &GlobalArgs, resume: bool) -> anyhow::Result<()> {
    let config = settings::load(g)?;
    let dir = out_dir(&config).join("pretrain");
    let state_path = dir.join("state.json");
    let (base, _, data_upstream) = load_split(&config)?;
    let mut state = if resume {
        if !state_path.exists() {
            return Err(UsageError(format!("nothing to resume: {} does not exist", state_path.display())).into());
        }
        let state: PretrainState = serde_json::from_value(read_json(&state_path)?)?;
        if state.query.config != config.encoder {
            return Err(UsageError("saved state was trained with a different encoder configuration".into()).into());
        }
        state
    } else {
        prepare_dir(&dir, g.overwrite)?;
        PretrainState::new(&config.encoder, &config.pretrain)?
    };
    if state.epoch >= config.pretrain.epochs {
        println!("already trained for {} epochs; nothing to do", state.epoch);
        return Ok(());
    }
    let mut prov = Provenance::new("pretrain", &config);
    prov.upstream.push(data_upstream);
    let mut log = JsonLines::create(&dir.join("log.jsonl"), resume)?;
    let start_epoch = state.epoch;
    pretrain_from(&mut state, &base, &config.pretrain, &config.augment, |entry, st| {
        eprintln!(
            "epoch {:>3}/{}  loss {:.4}  lr {:.5}  {:.1}s",
            entry.epoch + 1,
            config.pretrain.epochs,
            entry.mean_loss,
            entry.lr,
            entry.wall_time
        );
        log.write(entry)?;
        let save = || -> anyhow::Result<()> {
            write_with_provenance(&state_path, st, &prov, false)?;
            write_with_provenance(&dir.join("encoder.json"), &st.checkpoint(), &prov, false)
        };
        save().map_err(|e| rarefsl::Error::Io(std::io::Error::other(format!("{e:#}"))))
    })?;
    println!(
        "pretrained epochs {}..{}; encoder {} (hash {})",
        start_epoch + 1,
        state.epoch,
        dir.join("encoder.json").display(),
        &state.query.hash()[..12]
    );
    Ok(())
}

fn score(task: &EpisodeTask, probs: &rarefsl::nn::Matrix) -> anyhow::Result<TaskResult> {
    Ok(TaskResult::from_predictions(
        task.seed,
        &probs.argmax_rows(),
        &task.query_labels(),
        task.n_way,
    )?)
}

fn print_reports(reports: &[Report]) {
    for r in reports {
        println!(
            "{:<40} acc {:.4}  macro-F1 {:.4}",
            r.method_id, r.mean_acc, r.mean_f1
        );
    }
}

pub fn fit_baseline(g: &GlobalArgs, checkpoint: Option<PathBuf>, task_args: &TaskArgs) -> anyhow::Result<()> {
    let config = settings::load(g)?;
    let out = out_dir(&config);
    let ck_path = checkpoint.unwrap_or_else(|| out.join("pretrain").join("encoder.json"));
    let ck = load_encoder(&ck_path)?;
    let seed = task_seed(&config, task_args);
    let (_, rare, data_upstream) = load_split(&config)?;
    let task = sample_task(&rare, config.eval.n_way, config.eval.k_shot, seed)?;
    let teacher = fit_baseline_task(&ck.params, &task, &config.baseline)?;
    let result = score(&task, &teacher.predict_proba(&task.query_images())?)?;
    let reports = [Report::from_tasks("baseline", task.n_way, task.k_shot, vec![result])];

    let dir = out.join("baseline").join(format!("task-{seed}"));
    prepare_dir(&dir, g.overwrite)?;
    let mut prov = Provenance::new("fit-baseline", &config).with_upstream(&ck_path)?.with_task(seed);
    prov.upstream.push(data_upstream);
    let record = teacher.to_record(ck_path.to_string_lossy());
    write_with_provenance(&dir.join("teacher.json"), &record, &prov, true)?;
    write_with_provenance(&dir.join("reports.json"), &Reports { reports: &reports }, &prov, true)?;
    print_reports(&reports);
    println!("teacher written to {}", dir.join("teacher.json").display());
    Ok(())
}

pub fn distill(
    g: &GlobalArgs,
    teacher_path: Option<PathBuf>,
    task_args: &TaskArgs,
    label_design: Option<LabelDesign>,
    loss_variant: Option<LossVariant>,
    alpha_final: Option<f64>,
) -> anyhow::Result<()> {
    let mut config = settings::load(g)?;
    let out = out_dir(&config);
    let explicit_task = task_args.task_seed.is_some() || task_args.task.is_some();
    let teacher_path = teacher_path
        .unwrap_or_else(|| out.join("baseline").join(format!("task-{}", task_seed(&config, task_args))).join("teacher.json"));
    if !teacher_path.is_file() {
        bail!("teacher artifact {} not found (run fit-baseline first)", teacher_path.display());
    }
    let doc = read_json(&teacher_path)?;
    let teacher_prov = read_provenance(&doc, &teacher_path)?;
    let seed = teacher_prov
        .task_seed
        .with_context(|| format!("{} does not record its task", teacher_path.display()))?;
    if explicit_task && task_seed(&config, task_args) != seed {
        return Err(UsageError(format!("teacher was fit on task {seed}, not the requested task")).into());
    }
    let record: TeacherRecord = serde_json::from_value(doc)?;
    let encoder_path = PathBuf::from(&record.encoder_checkpoint);
    let encoder = load_encoder(&encoder_path)?;
    let teacher = TeacherModel::from_record(record, encoder.params)?;

    if let Some(d) = label_design {
        config.distill.label_design = d;
    }
    if let Some(v) = loss_variant {
        config.distill.loss_variant = v;
    }
    if let Some(a) = alpha_final {
        config.distill.alpha_final = a;
    }
    config.validate().map_err(|e| UsageError(format!("invalid configuration: {e}")))?;

    let (base, rare, data_upstream) = load_split(&config)?;
    let task = sample_task(&rare, config.eval.n_way, config.eval.k_shot, seed)?;
    if task.classes != teacher.class_map {
        bail!("teacher classes {:?} differ from task classes {:?}; was it fit with another configuration?", teacher.class_map, task.classes);
    }

    let d = &config.distill;
    let dir = out
        .join("distill")
        .join(format!("{}-{}", d.label_design, d.loss_variant))
        .join(format!("task-{seed}"));
    prepare_dir(&dir, g.overwrite)?;
    let mut log = JsonLines::create(&dir.join("log.jsonl"), false)?;
    let (student, _) = distill_with(&base, &teacher, d, &config.augment, |entry| {
        eprintln!(
            "epoch {:>3}/{}  total {:.4}  α {:.3}  {:.1}s",
            entry.epoch + 1,
            d.epochs,
            entry.total_loss,
            entry.alpha,
            entry.wall_time
        );
        Ok(log.write(entry)?)
    })?;

    let query = task.query_images();
    let direct = score(&task, &student_predict(&student, &query, Usage::Direct, None, &config.baseline)?)?;
    let refit = score(
        &task,
        &student_predict(&student, &query, Usage::LrRefit, Some(&task.support), &config.baseline)?,
    )?;
    let [_, direct_id, refit_id] = method_ids(&config);
    let reports = [
        Report::from_tasks(direct_id, task.n_way, task.k_shot, vec![direct]),
        Report::from_tasks(refit_id, task.n_way, task.k_shot, vec![refit]),
    ];
    let mut prov = Provenance::new("distill", &config)
        .with_upstream(&teacher_path)?
        .with_upstream(&encoder_path)?
        .with_task(seed);
    prov.upstream.push(data_upstream);
    write_with_provenance(&dir.join("student.json"), &StudentCheckpoint::new(student), &prov, false)?;
    write_with_provenance(&dir.join("reports.json"), &Reports { reports: &reports }, &prov, true)?;
    print_reports(&reports);
    println!("student written to {}", dir.join("student.json").display());
    Ok(())
}

pub fn evaluate(g: &GlobalArgs, checkpoint: Option<PathBuf>) -> anyhow::Result<()> {
    let config = settings::load(g)?;
    let out = out_dir(&config);
    let ck_path = checkpoint.unwrap_or_else(|| out.join("pretrain").join("encoder.json"));
    let ck = load_encoder(&ck_path)?;
    let (base, rare, data_upstream) = load_split(&config)?;
    let dir = out.join("evaluate");
    prepare_dir(&dir, g.overwrite)?;
    let mut log = JsonLines::create(&dir.join("log.jsonl"), false)?;
    let evaluation = evaluate_encoder(&config, &ck.params, &base, &rare, |seed, entry| {
        if entry.epoch + 1 == config.distill.epochs {
            eprintln!("task {seed}: distilled, final loss {:.4}", entry.total_loss);
        }
        let mut line = serde_json::to_value(entry)?;
        line["task_seed"] = seed.into();
        Ok(log.write(&line)?)
    })?;
    let mut prov = Provenance::new("evaluate", &config).with_upstream(&ck_path)?;
    prov.upstream.push(data_upstream);
    write_with_provenance(&dir.join("reports.json"), &Reports { reports: &evaluation.reports }, &prov, true)?;
    write_with_provenance(&dir.join("tasks.json"), &json!({ "tasks": evaluation.tasks }), &prov, true)?;
    let table = render_table(&evaluation.reports);
    fs::write(dir.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn find_files(root: &Path, name: &str, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(root)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            find_files(&path, name, found)?;
        } else if e.file_name() == name {
            found.push(path);
        }
    }
    Ok(())
}

fn parent_label(path: &Path) -> String {
    path.parent().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Loss curve points from a JSON-lines log, one series per task seed.
fn log_series(path: &Path) -> anyhow::Result<Vec<Series>> {
    let text = fs::read_to_string(path)?;
    let mut by_task: BTreeMap<Option<u64>, Vec<(f64, f64)>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("parsing {}", path.display()))?;
        let (Some(epoch), Some(loss)) = (
            v["epoch"].as_f64(),
            v.get("total_loss").or(v.get("mean_loss")).and_then(Value::as_f64),
        ) else {
            continue;
        };
        by_task.entry(v["task_seed"].as_u64()).or_default().push((epoch + 1.0, loss));
    }
    let label = parent_label(path);
    Ok(by_task
        .into_iter()
        .map(|(task, points)| Series {
            label: match task {
                Some(t) => format!("{label} #{t}"),
                None => label.clone(),
            },
            points,
        })
        .collect())
}

pub fn report(g: &GlobalArgs, runs: &[PathBuf]) -> anyhow::Result<()> {
    let config = settings::load(g)?;
    let mut files = Vec::new();
    let mut logs = Vec::new();
    for run in runs {
        if !run.is_dir() {
            return Err(UsageError(format!("{} is not a run directory", run.display())).into());
        }
        find_files(run, "reports.json", &mut files)?;
        find_files(run, "log.jsonl", &mut logs)?;
    }
    if files.is_empty() {
        return Err(UsageError("no reports.json found under the given run directories".into()).into());
    }

    let mut labelled: Vec<(String, Report)> = Vec::new();
    for f in &files {
        let doc = read_json(f)?;
        let reports: Vec<Report> = serde_json::from_value(doc["reports"].clone())
            .with_context(|| format!("{} does not hold reports", f.display()))?;
        labelled.extend(reports.into_iter().map(|r| (parent_label(f), r)));
    }
    // A method reported by several runs at the same setting is qualified by
    // its run so that every row survives the merge.
    let mut counts: HashMap<(String, usize, usize), usize> = HashMap::new();
    for (_, r) in &labelled {
        *counts.entry((r.method_id.clone(), r.n_way, r.k_shot)).or_default() += 1;
    }
    let merged: Vec<Report> = labelled
        .into_iter()
        .map(|(label, mut r)| {
            if counts[&(r.method_id.clone(), r.n_way, r.k_shot)] > 1 {
                r.method_id = format!("{label}: {}", r.method_id);
            }
            r
        })
        .collect();

    let dir = out_dir(&config).join("report");
    prepare_dir(&dir, g.overwrite)?;
    let table = render_table(&merged);
    fs::write(dir.join("table.md"), &table)?;
    let mut prov = Provenance::new("report", &config);
    for f in &files {
        prov = prov.with_upstream(f)?;
    }
    write_with_provenance(&dir.join("reports.json"), &Reports { reports: &merged }, &prov, true)?;

    let groups: Vec<(String, Vec<(f64, f64)>)> = merged
        .iter()
        .map(|r| {
            (
                format!("{} ({}w{}s)", r.method_id, r.n_way, r.k_shot),
                vec![(r.mean_acc, r.std_acc), (r.mean_f1, r.std_f1)],
            )
        })
        .collect();
    fs::write(dir.join("metrics.svg"), grouped_bars("Query accuracy and macro F1", &["Acc", "F1"], &groups))?;
    let mut series = Vec::new();
    for l in &logs {
        series.extend(log_series(l)?);
    }
    if !series.is_empty() {
        fs::write(dir.join("loss.svg"), line_chart("Training loss", "epoch", "loss", &series))?;
    }
    print!("{table}");
    eprintln!("report written to {}", dir.display());
    Ok(())
}
