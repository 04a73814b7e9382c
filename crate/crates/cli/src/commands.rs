use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use lmdet::checkpoint;
use lmdet::data::{
    dataset_digest, jitter_annotators, make_folds, read_annotations, write_annotations, Dataset,
    LandmarkAnnotation, ANNOTATIONS_FILE,
};
use lmdet::eval::{
    build_table, comparison_table, emit_report, format_fixed, interobserver_table,
    mean_discrepancies, parse_report_csv, prediction_errors, Column, EvalReport, FoldErrors,
    PixelSpacing, PrintedTable, ReportFormat,
};
use lmdet::gradcheck::{gradcheck_model, GradcheckOptions};
use lmdet::train::{
    config_hash, evaluate_fold, fold_dir, run_cross_validation, CvOptions, CHECKPOINT_FILE,
};
use lmdet::{Arch, Fault, Model, ModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{read_text, RunConfig};
use crate::{CompareArgs, EvalArgs, GradcheckArgs, Invalid, ReportArgs, SynthArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FOLDS_FILE: &str = "folds.json";

/// Tolerance for printed two-decimal cells.
const CELL_TOLERANCE: f64 = 0.005;
const SUMMARY_TOLERANCE: f64 = 0.01;

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.annotators < 1 {
        return Err(Invalid("--annotators must be >= 1".into()).into());
    }
    let ds = Dataset::synthetic(a.seed, a.n, a.hw, a.landmarks)?;
    ds.save(&a.out)?;
    if a.annotators > 1 {
        let all = jitter_annotators(&ds.annotations, a.annotators - 1, a.seed, a.jitter);
        let path = a.out.join(ANNOTATIONS_FILE);
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_annotations(f, &all)?;
    }
    println!("{}", dataset_digest(&a.out)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    timestamp: u64,
    arch: Arch,
    param_count: usize,
    config_hash: String,
    dataset_digest: String,
    folds: usize,
    seeds: Vec<u64>,
    best_epochs: Vec<usize>,
    mean_best_val_loss: f64,
    overall_mean_cm: f64,
    model: ModelConfig,
    versions: Versions,
}

#[derive(Debug, Serialize, Deserialize)]
struct Versions {
    lmdet: String,
    checkpoint_format: u32,
}

fn load_run_config(path: &Path, arch: Option<Arch>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(arch) = arch {
        cfg.model.arch = arch;
    }
    Ok(cfg)
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output_dir.join(cfg.model.arch.to_string())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::load(&cfg.paths.data_dir, cfg.model.input_hw, cfg.eval.reference_annotator.as_deref())?;
    if ds.is_empty() {
        return Err(Invalid(format!("no annotated images in {}", cfg.paths.data_dir.display())).into());
    }
    if ds.landmarks.len() != cfg.model.out_channels {
        return Err(Invalid(format!(
            "model.out_channels is {} but the dataset has {} landmarks",
            cfg.model.out_channels,
            ds.landmarks.len()
        ))
        .into());
    }
    if ds.len() % cfg.folds != 0 {
        return Err(Invalid(format!("folds: {} does not divide the dataset size {}", cfg.folds, ds.len())).into());
    }
    Ok(ds)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_file(&dir.join(format!("{stem}.csv")), &emit_report(report, ReportFormat::Csv))?;
    write_file(&dir.join(format!("{stem}.md")), &emit_report(report, ReportFormat::Markdown))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_file(&dir.join(format!("{stem}.json")), json.as_bytes())
}

fn print_report(report: &EvalReport, format: ReportFormat) -> Result<()> {
    std::io::stdout().write_all(&emit_report(report, format))?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(&a.config, a.arch)?;
    if a.paper_protocol {
        cfg.apply_paper_protocol();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg)?;
    let dir = run_dir(&cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut tc = cfg.train_config();
    tc.checkpoint_dir = Some(dir.clone());
    let cv = CvOptions {
        k: cfg.folds,
        jobs: cfg.jobs,
        spacing: cfg.eval.spacing,
    };
    eprintln!(
        "training {} on {} images, {} folds, {} epochs",
        cfg.model.arch,
        ds.len(),
        cfg.folds,
        tc.epochs
    );
    let res = run_cross_validation::<f64>(&ds, &tc, &cv)?;

    let mut folds_json = res.plan.to_json()?;
    folds_json.push('\n');
    write_file(&dir.join(FOLDS_FILE), folds_json.as_bytes())?;
    let report = build_table(&res.fold_errors(), Some(cfg.eval.spacing))?;
    write_report(&dir, "report", &report)?;

    let manifest = Manifest {
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        arch: cfg.model.arch,
        param_count: Model::build(cfg.model.clone())?.param_count(),
        config_hash: config_hash(&tc)?,
        dataset_digest: dataset_digest(&cfg.paths.data_dir)?,
        folds: cfg.folds,
        seeds: res.folds.iter().map(|f| f.seed).collect(),
        best_epochs: res.folds.iter().map(|f| f.best_epoch).collect(),
        mean_best_val_loss: res.mean_best_val_loss(),
        overall_mean_cm: report.overall_mean,
        model: cfg.model.clone(),
        versions: Versions {
            lmdet: lmdet::VERSION.to_string(),
            checkpoint_format: checkpoint::VERSION,
        },
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    println!(
        "{}: overall mean {} cm, best epochs {:?}, artifacts in {}",
        cfg.model.arch,
        format_fixed(report.overall_mean, 4),
        manifest.best_epochs,
        dir.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(fixture) = &a.from_fixture {
        return eval_fixture(fixture, a.format);
    }
    let path = a.config.as_ref().ok_or_else(|| Invalid("--config is required".into()))?;
    let cfg = load_run_config(path, a.arch)?;
    cfg.validate()?;
    let ds = load_dataset(&cfg)?;
    let plan = make_folds(ds.len(), cfg.folds)?;
    let spacing = cfg.eval.spacing;

    let (out_dir, errors) = if a.oracle {
        let targets = ds.targets(cfg.train.sigma)?;
        let mut errors: Vec<FoldErrors> = Vec::new();
        for fold in &plan.folds {
            let preds: Vec<Tensor> = fold.test.iter().map(|&i| targets[i].clone()).collect();
            let anns: Vec<&LandmarkAnnotation> = fold.test.iter().map(|&i| &ds.annotations[i]).collect();
            errors.push(prediction_errors(&preds, &anns, &ds.landmarks, ds.hw, &spacing)?);
        }
        (cfg.paths.output_dir.join("oracle"), errors)
    } else {
        let dir = a.run.clone().unwrap_or_else(|| run_dir(&cfg));
        let model_cfg = match fs::read_to_string(dir.join(MANIFEST_FILE)) {
            Ok(text) => serde_json::from_str::<Manifest>(&text)
                .with_context(|| format!("parsing {}", dir.join(MANIFEST_FILE).display()))?
                .model,
            Err(_) => cfg.model.clone(),
        };
        let mut errors = Vec::new();
        for (i, fold) in plan.folds.iter().enumerate() {
            let ckpt = fold_dir(&dir, i).join(CHECKPOINT_FILE);
            if !ckpt.is_file() {
                return Err(Invalid(format!("fold {}: missing checkpoint {}", i + 1, ckpt.display())).into());
            }
            let model: Model = checkpoint::load(model_cfg.clone(), &ckpt).with_context(|| format!("fold {}", i + 1))?;
            errors.push(evaluate_fold(&model, &ds, &fold.test, &spacing)?);
        }
        (dir, errors)
    };
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let report = build_table(&errors, Some(spacing))?;
    write_report(&out_dir, "report", &report)?;
    print_report(&report, a.format)?;

    let all = read_all_annotations(&[cfg.paths.data_dir.join(ANNOTATIONS_FILE)])?;
    if annotator_ids(&all).len() == 3 {
        let inter = interobserver_table(&all, &spacing)?;
        write_report(&out_dir, "interobserver", &inter)?;
        let mut sources: Vec<(Column, EvalReport)> = Vec::new();
        for arch in [Arch::Fcn, Arch::Unet] {
            let p = cfg.paths.output_dir.join(arch.to_string()).join("report.json");
            if let Ok(text) = fs::read_to_string(&p) {
                let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                let label = match arch {
                    Arch::Fcn => "CNN and doctor",
                    Arch::Unet => "U-Net and doctor",
                };
                sources.push((Column::new(arch.to_string(), label), r));
            }
        }
        if a.oracle {
            sources.push((Column::new("oracle", "Oracle and doctor"), report.clone()));
        }
        sources.push((Column::new("three_doctors", "Three doctors"), inter));
        let refs: Vec<(Column, &EvalReport)> = sources.iter().map(|(c, r)| (c.clone(), r)).collect();
        let cmp = comparison_table(&refs)?;
        write_report(&out_dir, "comparison", &cmp)?;
        eprintln!("wrote interobserver and comparison tables to {}", out_dir.display());
    }
    Ok(())
}

fn eval_fixture(path: &Path, format: ReportFormat) -> Result<()> {
    let text = read_text(path)?;
    let printed = PrintedTable::parse(&text)?;
    let splits = printed.split_values();
    if !splits.is_empty() {
        let report = build_table(&splits, None)?;
        print_report(&report, format)?;
        let disc = mean_discrepancies(&printed, &report, CELL_TOLERANCE)?;
        for d in &disc {
            println!(
                "# discrepancy: {} printed {} recomputed {} (off by {})",
                d.landmark,
                format_fixed(d.printed, 2),
                format_fixed(d.recomputed, 4),
                format_fixed(d.delta(), 4)
            );
        }
        println!(
            "# {} of {} mean cells within {}; overall mean {}",
            printed.rows.len() - disc.len(),
            printed.rows.len(),
            CELL_TOLERANCE,
            format_fixed(report.overall_mean, 4)
        );
        return Ok(());
    }
    // No split columns: recompute column means against the printed summary.
    let summary = printed
        .summary
        .as_ref()
        .ok_or_else(|| Invalid(format!("{}: neither split columns nor a summary row", path.display())))?;
    for (c, key) in printed.columns.iter().enumerate() {
        let values: Vec<f64> = printed.rows.iter().map(|(_, v)| v[c]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let ok = (mean - summary[c]).abs() <= SUMMARY_TOLERANCE;
        println!(
            "{key}: printed {} recomputed {} {}",
            format_fixed(summary[c], 2),
            format_fixed(mean, 4),
            if ok { "ok" } else { "DISCREPANCY" }
        );
    }
    Ok(())
}

fn read_all_annotations(paths: &[PathBuf]) -> Result<Vec<LandmarkAnnotation>> {
    let mut all = Vec::new();
    for p in paths {
        let f = fs::File::open(p).map_err(|e| Invalid(format!("{}: {e}", p.display())))?;
        all.extend(read_annotations(f).with_context(|| p.display().to_string())?);
    }
    Ok(all)
}

fn annotator_ids(all: &[LandmarkAnnotation]) -> BTreeSet<&str> {
    all.iter().map(|a| a.annotator_id.as_str()).collect()
}

pub fn compare_observers(a: &CompareArgs) -> Result<()> {
    let spacing = PixelSpacing::new(a.spacing.0, a.spacing.1)?;
    let all = read_all_annotations(&a.annotations)?;
    let ids = annotator_ids(&all);
    if ids.len() != 3 {
        return Err(Invalid(format!("expected exactly three annotators, found {}: {:?}", ids.len(), ids)).into());
    }
    let report = interobserver_table(&all, &spacing)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_report(out, "interobserver", &report)?;
    }
    print_report(&report, a.format)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => Some(RunConfig::load(p)?.model),
        None => None,
    };
    let opts = GradcheckOptions {
        fault: a.inject_fault.as_ref().map(|_| Fault::ConvKernelGradSignFlip),
        ..GradcheckOptions::default()
    };
    let mut failed = Vec::new();
    for arch in [Arch::Fcn, Arch::Unet] {
        let mut mc = ModelConfig::tiny(arch, (16, 16), 3);
        if let Some(b) = &base {
            mc.kernel_size = b.kernel_size;
            mc.upsample = b.upsample;
            mc.head_gain = b.head_gain;
        }
        let r = gradcheck_model(&mc, &opts)?;
        println!(
            "{arch}: {} checked, {} failures, max relative error {:.3e} ({}[{}]), seed {}, {}",
            r.checked,
            r.failures,
            r.max_relative_error,
            r.worst_param,
            r.worst_index,
            r.seed,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() {
            failed.push(arch.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed for {}", failed.join(", ")))
    }
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let report: EvalReport = if a.input.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.input.display()))?
    } else {
        parse_report_csv(&text)?
    };
    if report.rows.iter().any(|r| r.values.len() != report.columns.len()) {
        bail!("{}: rows and columns disagree", a.input.display());
    }
    print_report(&report, a.format)
}
