use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{Map, Value};

use gloflow::compositor::{composite, write_canvas, Blend};
use gloflow::graph::GraphConfig;
use gloflow::io::{
    read_coords_csv, read_frames, read_png_gray, read_steps_csv, write_coords_csv, write_dataset, write_edges_csv,
    write_steps_csv, Manifest, COORDS_FILE,
};
use gloflow::metrics::{evaluate, MetricReport, StepPair, REPORT_HEADER};
use gloflow::pairwise::{flows_at_stride, load_external_flows, retained_indices};
use gloflow::pipeline::{run_method, simulate, Method, MethodOutput, RunOptions};
use gloflow::simulator::{synthetic_tissue, SimConfig};
use gloflow::types::RNG_NAME;
use gloflow::GrayImage;

const LOG_ENV: &str = "GLOFLOW_LOG";
const RUN_FILE: &str = "run.json";
const PRED_COORDS_FILE: &str = "coords.csv";
const PRED_STEPS_FILE: &str = "steps.csv";
const EDGES_FILE: &str = "edges.csv";

#[derive(Parser)]
#[command(name = "gloflow", version, about = "Whole-slide-image stitching from a scan video")]
struct Cli {
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a simulated scan into a dataset directory.
    Simulate(SimulateArgs),
    /// Stitch a dataset with one method.
    Stitch(StitchArgs),
    /// Score a stitch against the dataset's ground truth.
    Eval(EvalArgs),
    /// Run every method on one dataset and tabulate the results.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source slide image; converted to grayscale.
    #[arg(long, conflicts_with = "synthetic")]
    source: Option<PathBuf>,
    /// Procedural source of the given size, e.g. 2000x2000.
    #[arg(long, value_parser = parse_size)]
    synthetic: Option<(usize, usize)>,
    /// Seed of the procedural source.
    #[arg(long, default_value_t = 0)]
    texture_seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON object overriding simulator fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Flow predictions for the external methods (index,dx,dy[,confidence]),
    /// one row per retained pair or per original pair.
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    stride: usize,
    /// JSON object overriding graph fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct StitchArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Write the composited slide to this PNG.
    #[arg(long)]
    canvas: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BlendArg::Overwrite)]
    blend: BlendArg,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Dataset directory holding the ground truth.
    #[arg(long = "truth")]
    truth: PathBuf,
    /// Output directory of `stitch`.
    #[arg(long = "run")]
    run: PathBuf,
    /// CSV file the report row is appended to.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for bench.csv and bench.md.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BlendArg {
    Overwrite,
    Average,
}

impl From<BlendArg> for Blend {
    fn from(b: BlendArg) -> Self {
        match b {
            BlendArg::Overwrite => Blend::Overwrite,
            BlendArg::Average => Blend::Average,
        }
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

/// Metadata written next to a stitch so `eval` can label its report row.
#[derive(serde::Serialize, serde::Deserialize)]
struct RunRecord {
    method: String,
    stride: usize,
    comparisons_made: u64,
    wall_time_s: f64,
}

/// Splits a flat JSON override object between the simulator and graph
/// configs by field name. Unknown fields are an error.
fn load_overrides(path: Option<&Path>) -> Result<(SimConfig, GraphConfig)> {
    let Some(path) = path else {
        return Ok((SimConfig::default(), GraphConfig::default()));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let user: Map<String, Value> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON object", path.display()))?;
    let Value::Object(mut sim) = serde_json::to_value(SimConfig::default())? else {
        unreachable!()
    };
    let Value::Object(mut graph) = serde_json::to_value(GraphConfig::default())? else {
        unreachable!()
    };
    for (k, v) in user {
        if sim.contains_key(&k) {
            sim.insert(k, v);
        } else if graph.contains_key(&k) {
            graph.insert(k, v);
        } else {
            bail!("{}: unknown config field {k:?}", path.display());
        }
    }
    let sim: SimConfig = serde_json::from_value(Value::Object(sim)).with_context(|| format!("{}", path.display()))?;
    let graph: GraphConfig =
        serde_json::from_value(Value::Object(graph)).with_context(|| format!("{}", path.display()))?;
    sim.validate()?;
    graph.validate()?;
    Ok((sim, graph))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let (cfg, _) = load_overrides(a.config.as_deref())?;
    let cfg = SimConfig { seed: a.seed, ..cfg };
    let (source, source_id) = match (&a.source, a.synthetic) {
        (Some(p), _) => {
            let id = p.file_stem().map_or_else(|| "source".into(), |s| s.to_string_lossy().into_owned());
            (read_png_gray(p)?, id)
        }
        (None, Some((w, h))) => (
            synthetic_tissue(w, h, a.texture_seed),
            format!("synthetic-{w}x{h}-{}", a.texture_seed),
        ),
        (None, None) => bail!("one of --source or --synthetic is required"),
    };
    let (seq, plan) = simulate(&source, &source_id, &cfg)?;
    let manifest = Manifest {
        seed: cfg.seed,
        realization: plan.realization,
        config: cfg,
        patch: cfg.patch,
        source_id,
        source_width: source.width(),
        source_height: source.height(),
        n_frames: seq.len(),
        rng: RNG_NAME.into(),
    };
    write_dataset(&a.out, &seq, &manifest)?;
    info!("wrote {} frames to {}", seq.len(), a.out.display());
    Ok(())
}

fn run_options(r: &RunArgs, n_frames: usize, needs_flows: bool) -> Result<RunOptions> {
    let (_, graph) = load_overrides(r.config.as_deref())?;
    ensure!(r.stride >= 1, "--stride must be at least 1");
    let flows = match (&r.flows, needs_flows) {
        (Some(p), true) => Some(flows_at_stride(&load_external_flows(p, None)?, n_frames, r.stride)?),
        (None, true) => bail!("this method needs --flows"),
        (_, false) => None,
    };
    Ok(RunOptions {
        stride: r.stride,
        graph,
        flows,
        ..Default::default()
    })
}

fn load_frames(dir: &Path) -> Result<Vec<GrayImage>> {
    let frames = read_frames(dir)?;
    info!("read {} frames from {}", frames.len(), dir.display());
    Ok(frames)
}

fn cmd_stitch(a: &StitchArgs) -> Result<()> {
    let frames = load_frames(&a.run.input)?;
    let opts = run_options(&a.run, frames.len(), a.method.needs_flows())?;
    let out = run_method(&frames, a.method, &opts)?;
    info!("{}: {:.2}s, {} comparisons", a.method, out.wall_time_s, out.comparisons_made);

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_coords_csv(a.out.join(PRED_COORDS_FILE), &out.coords, Some(&out.retained))?;
    if let Some(steps) = &out.steps {
        write_steps_csv(a.out.join(PRED_STEPS_FILE), steps)?;
    }
    if let Some(g) = &out.graph {
        write_edges_csv(a.out.join(EDGES_FILE), &g.edge_rows(&out.retained))?;
    }
    let record = RunRecord {
        method: a.method.name().into(),
        stride: opts.stride,
        comparisons_made: out.comparisons_made,
        wall_time_s: out.wall_time_s,
    };
    fs::write(a.out.join(RUN_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    if let Some(path) = &a.canvas {
        let selected: Vec<GrayImage> = out.retained.iter().map(|&i| frames[i].clone()).collect();
        let canvas = composite(&selected, &out.coords, a.blend.into(), 0)?;
        write_canvas(&canvas, path)?;
        info!("canvas {}x{} written to {}", canvas.width(), canvas.height(), path.display());
    }
    Ok(())
}

fn append_report(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{REPORT_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (_, truth_all) = read_coords_csv(a.truth.join(COORDS_FILE))?;
    let (indices, pred) = read_coords_csv(a.run.join(PRED_COORDS_FILE))?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= truth_all.len()) {
        bail!("frame index {bad} is beyond the {} truth frames", truth_all.len());
    }
    let truth = truth_all.select(&indices);
    let steps_path = a.run.join(PRED_STEPS_FILE);
    let pred_steps = if steps_path.exists() {
        Some(read_steps_csv(&steps_path)?)
    } else {
        None
    };
    let truth_steps = truth.steps();
    let record: Option<RunRecord> = match fs::read_to_string(a.run.join(RUN_FILE)) {
        Ok(text) => Some(serde_json::from_str(&text).context("parsing run.json")?),
        Err(_) => None,
    };
    let report = evaluate(
        record.as_ref().map_or("unknown", |r| r.method.as_str()),
        &pred,
        &truth,
        pred_steps.as_deref().map(|p| StepPair {
            pred: p,
            truth: &truth_steps,
        }),
        record.as_ref().map_or(0, |r| r.comparisons_made),
        record.as_ref().map_or(0.0, |r| r.wall_time_s),
    )?;
    println!("{REPORT_HEADER}");
    println!("{}", report.csv_row());
    if let Some(path) = &a.report {
        append_report(path, &[report])?;
    }
    Ok(())
}

fn markdown_table(rows: &[MetricReport]) -> String {
    let mut s = String::from("| Method | Frames | EPE | Re-EPE | Comparisons | Time (s) |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let epe = r.epe_pairwise.map_or_else(|| "N/A".to_string(), |e| format!("{e:.3}"));
        s += &format!(
            "| {} | {} | {} | {:.3} | {} | {:.2} |\n",
            r.method, r.n_frames, epe, r.re_epe, r.comparisons_made, r.wall_time_s
        );
    }
    s
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let frames = load_frames(&a.run.input)?;
    let (_, truth) = read_coords_csv(a.run.input.join(COORDS_FILE))?;
    ensure!(
        truth.len() == frames.len(),
        "{} truth coordinates for {} frames",
        truth.len(),
        frames.len()
    );
    let opts = run_options(&a.run, frames.len(), a.run.flows.is_some())?;
    let order = [
        Method::Lk,
        Method::External,
        Method::PureGraph,
        Method::GloflowLk,
        Method::GloflowExternal,
    ];
    let mut rows = Vec::with_capacity(order.len());
    for m in order {
        let report = if m.needs_flows() && opts.flows.is_none() {
            log::warn!("{m}: no --flows given, row left empty");
            let n = retained_indices(frames.len(), opts.stride).len();
            MetricReport {
                method: m.name().into(),
                n_frames: n,
                epe_pairwise: None,
                re_epe: f64::NAN,
                comparisons_made: 0,
                wall_time_s: 0.0,
            }
        } else {
            let out: MethodOutput = run_method(&frames, m, &opts)?;
            let mut r = out.evaluate(&truth)?;
            // Global methods report no pairwise column.
            if !m.is_pairwise() {
                r.epe_pairwise = None;
            }
            r
        };
        info!("{}", report.csv_row());
        rows.push(report);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv_path = a.out.join("bench.csv");
    let _ = fs::remove_file(&csv_path);
    append_report(&csv_path, &rows)?;
    let md = markdown_table(&rows);
    fs::write(a.out.join("bench.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            std::process::exit(2);
        }
    }
    let res = match &cli.cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Stitch(a) => cmd_stitch(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
