use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use symspot::detect::ComponentFinder;
use symspot::legend::parser::parse_table;
use symspot::matching::{extract_features, select_label, Classifier};
use symspot::pipeline::eval::{evaluate, write_csv, GroundTruth};
use symspot::pipeline::fixture::{generate_fixture, FixtureParams};
use symspot::pipeline::{
    image_id_of, run_pipeline, write_audit, PipelineConfig, Report, Sidecars,
};
use symspot::{Error, Raster, Result};

#[derive(Parser, Debug)]
#[command(name = "symspot", version, about = "Legend extraction and symbol counting for raster drawings")]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write intermediate crops and an overlay for every image.
    #[arg(long, global = true)]
    audit: bool,
    /// Base seed for fixture generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Images processed in parallel; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Sources {
    /// Detection sidecar with external table and symbol boxes.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Embedding sidecar; switches classification to embedding distance.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    no_classical_table: bool,
    #[arg(long)]
    no_classical_symbols: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline and write one report per drawing.
    Run {
        images: Vec<PathBuf>,
        #[command(flatten)]
        sources: Sources,
        /// Output directory; reports go to stdout when unset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score drawings or saved reports against ground truth as CSV.
    Eval {
        /// PNG drawings or report JSON files.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[command(flatten)]
        sources: Sources,
        /// CSV destination; stdout when unset.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic drawings with ground truth and legend keys.
    GenFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// JSON generator parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Split a cropped legend table into symbol and name crops.
    ParseTable {
        table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one query image against template images.
    Match {
        query: PathBuf,
        #[arg(required = true)]
        templates: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_sources(cfg: &mut PipelineConfig, s: &Sources) {
    if s.detections.is_some() {
        cfg.detection_sidecar = s.detections.clone();
    }
    if s.embeddings.is_some() {
        cfg.embedding_sidecar = s.embeddings.clone();
    }
    if s.no_classical_table {
        cfg.classical_table = false;
    }
    if s.no_classical_symbols {
        cfg.classical_symbols = false;
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Runs every image, writing reports and audits under `out` when given.
/// Results keep input order.
fn run_batch(
    images: &[PathBuf],
    cfg: &PipelineConfig,
    audit: bool,
    out: Option<&Path>,
    jobs: usize,
) -> Result<Vec<Result<Report>>> {
    if audit && out.is_none() {
        return Err(Error::Config("--audit needs an output directory".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let sidecars = Sidecars::load(cfg)?;
    let one = |path: &PathBuf| -> Result<Report> {
        let (img, run) = run_pipeline(path, cfg, &sidecars)?;
        if let Some(dir) = out {
            let id = &run.report.image_id;
            run.report.save(dir.join(format!("{id}.report.json")))?;
            if audit {
                write_audit(&run, &img, &dir.join(id))?;
            }
        }
        Ok(run.report)
    };
    Ok(pool(jobs)?.install(|| images.par_iter().map(one).collect()))
}

fn inputs_or_config(given: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let inputs = if given.is_empty() { cfg.inputs.clone() } else { given.to_vec() };
    if inputs.is_empty() {
        return Err(Error::Config("no input images".into()));
    }
    Ok(inputs)
}

/// Prints per-image failures and returns the first one's exit code.
fn report_failures(paths: &[PathBuf], results: &[Result<Report>]) -> i32 {
    let mut code = 0;
    for (p, r) in paths.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("symspot: {}: {e}", p.display());
            if code == 0 {
                code = e.exit_code();
            }
        }
    }
    code
}

fn cmd_run(cli: &Cli, images: &[PathBuf], sources: &Sources, out: &Option<PathBuf>) -> Result<i32> {
    let mut cfg = load_config(cli)?;
    apply_sources(&mut cfg, sources);
    cfg.validate()?;
    let images = inputs_or_config(images, &cfg)?;
    let out = out.clone().or_else(|| cfg.output_dir.clone());
    let results = run_batch(&images, &cfg, cli.audit, out.as_deref(), cli.jobs)?;
    for r in results.iter().flatten() {
        if out.is_none() {
            println!("{}", r.to_json()?);
        } else {
            let classes: Vec<String> =
                r.counts.per_class.iter().map(|(c, n)| format!("{c}:{n}")).collect();
            println!(
                "{}: {} detections [{}] outliers {}",
                r.image_id,
                r.detections.len(),
                classes.join(" "),
                r.counts.outliers
            );
        }
    }
    Ok(report_failures(&images, &results))
}

fn cmd_eval(
    cli: &Cli,
    inputs: &[PathBuf],
    ground_truth: &Option<PathBuf>,
    sources: &Sources,
    csv: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<i32> {
    let mut cfg = load_config(cli)?;
    apply_sources(&mut cfg, sources);
    cfg.validate()?;
    let gt_path = ground_truth
        .clone()
        .or_else(|| cfg.ground_truth.clone())
        .ok_or_else(|| Error::Config("eval needs --ground-truth".into()))?;
    let gt = GroundTruth::from_json(&std::fs::read_to_string(gt_path)?)?;
    let inputs = inputs_or_config(inputs, &cfg)?;
    let (saved, images): (Vec<PathBuf>, Vec<PathBuf>) = inputs
        .iter()
        .cloned()
        .partition(|p| p.extension().is_some_and(|e| e == "json"));
    let mut reports = Vec::new();
    for p in &saved {
        reports.push(Report::from_json(&std::fs::read_to_string(p)?)?);
    }
    let out = out.clone().or_else(|| cfg.output_dir.clone());
    let results = run_batch(&images, &cfg, cli.audit, out.as_deref(), cli.jobs)?;
    let code = report_failures(&images, &results);
    reports.extend(results.into_iter().flatten());
    let mut rows = Vec::with_capacity(reports.len());
    for r in &reports {
        // A drawing missing from the ground truth has no symbols present.
        let empty = symspot::pipeline::eval::GroundTruthImage {
            id: r.image_id.clone(),
            annotations: Vec::new(),
        };
        let g = gt.image(&r.image_id).unwrap_or(&empty);
        rows.push(evaluate(&r.image_id, &r.outcomes, g, cfg.eval_iou));
    }
    match csv {
        Some(p) => write_csv(&rows, std::fs::File::create(p)?)?,
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(code)
}

fn cmd_gen_fixture(
    cli: &Cli,
    out: &Path,
    count: u64,
    params: &Option<PathBuf>,
    classes: Option<usize>,
    instances: Option<usize>,
) -> Result<i32> {
    let mut p: FixtureParams = match params {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(e.to_string()))?,
        None => FixtureParams::default(),
    };
    if let Some(c) = classes {
        p.classes = c;
    }
    if let Some(n) = instances {
        p.instances_per_class = n;
    }
    let mut all = GroundTruth::default();
    for i in 0..count {
        let f = generate_fixture(&p, cli.seed + i)?;
        f.write_to(out)?;
        println!("{}", out.join(format!("{}.png", f.image_id)).display());
        all.images.push(f.ground_truth);
    }
    std::fs::write(out.join("ground_truth.json"), serde_json::to_string_pretty(&all)?)?;
    Ok(0)
}

fn cmd_parse_table(cli: &Cli, table: &Path, out: &Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(cli)?;
    let img = Raster::load_png(table)?;
    let parsed = parse_table(&img, &ComponentFinder::default(), &cfg.parser)?;
    let entries: Vec<_> = parsed
        .entries
        .iter()
        .map(|e| {
            json!({
                "class_id": e.class_id,
                "source_row": e.source_row,
                "symbol_box": e.symbol_box,
                "name_box": e.name_box,
                "direction": e.direction,
            })
        })
        .collect();
    let skipped: Vec<_> = parsed.skipped.iter().map(|(s, _)| s).collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "entries": entries,
            "skipped_rows": skipped,
            "headings_dropped": parsed.headings_dropped,
        }))?
    );
    if let Some(dir) = out {
        for sub in ["symbols", "names"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        parsed.cleaned.to_raster().save_png(dir.join("table_clean.png"))?;
        for e in &parsed.entries {
            e.symbol
                .save_png(dir.join("symbols").join(format!("class_{:03}.png", e.class_id)))?;
            e.name_img
                .save_png(dir.join("names").join(format!("class_{:03}.png", e.class_id)))?;
        }
    }
    Ok(0)
}

fn cmd_match(cli: &Cli, query: &Path, templates: &[PathBuf]) -> Result<i32> {
    let cfg = load_config(cli)?;
    let q = Raster::load_png(query)?;
    let rasters: Vec<Raster> = templates.iter().map(Raster::load_png).collect::<Result<_>>()?;
    let indexed: Vec<(usize, &Raster)> = rasters.iter().enumerate().collect();
    let classifier = Classifier::from_symbols(&indexed, cfg.matching)?;
    let scores = classifier.scores(&extract_features(&q));
    let flat: Vec<(usize, f64)> = scores.iter().map(|(c, s)| (*c, s.s)).collect();
    let (label, best) = select_label(&flat, cfg.matching.outlier_tau);
    let per_template: Vec<_> = scores
        .iter()
        .map(|(c, s)| {
            json!({
                "template": templates[*c].display().to_string(),
                "index": c,
                "s": s.s,
                "m": s.stats.m,
                "n": s.stats.n,
            })
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "query": image_id_of(query),
            "label": label,
            "best_score": best,
            "scores": per_template,
        }))?
    );
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run { images, sources, out } => cmd_run(cli, images, sources, out),
        Command::Eval {
            inputs,
            ground_truth,
            sources,
            csv,
            out,
        } => cmd_eval(cli, inputs, ground_truth, sources, csv, out),
        Command::GenFixture {
            out,
            count,
            params,
            classes,
            instances,
        } => cmd_gen_fixture(cli, out, *count, params, *classes, *instances),
        Command::ParseTable { table, out } => cmd_parse_table(cli, table, out),
        Command::Match { query, templates } => cmd_match(cli, query, templates),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(4);
        }
    };
    let code = dispatch(&cli).unwrap_or_else(|e| {
        eprintln!("symspot: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
