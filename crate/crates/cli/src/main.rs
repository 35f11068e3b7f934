use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use paradyn::dynamics::SystemManifest;
use paradyn::parax::{bony_remainder, paraproduct};
use paradyn::pfld::{read_pfld, write_pfld};
use paradyn::pipeline::{
    emit_plot_data, manifest_reports, read_system_manifest, run_pipeline, ExperimentConfig, Manifest, PotentialSpec,
    StageKind, MANIFEST_FILE,
};
use paradyn::resonance::Backend;
use paradyn::spectral::{block_norms, estimate_regularity, lp_decompose, Scale};
use paradyn::microlocal::ThresholdLocation;

#[derive(Parser)]
#[command(name = "paradyn", version, about = "Paradifferential and spectral diagnostics for hyperbolic toral dynamics")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a field into dyadic blocks.
    Decompose {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bony decomposition of a product of two scalar fields.
    Paraproduct {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dyadic regularity estimate of a field.
    Regularity {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "holder")]
        scale: ScaleArg,
        /// Inclusive band window `lo,hi`.
        #[arg(long, value_parser = parse_bands)]
        bands: Option<(i32, i32)>,
    },
    /// Unstable bundle by graph transform.
    Bundle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Rigidity thresholds and margins of the threshold condition.
    Thresholds {
        #[command(flatten)]
        run: RunArgs,
        /// Sobolev indices to evaluate.
        #[arg(long = "s", value_delimiter = ',')]
        s: Vec<f64>,
        /// Orbit time.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        location: Option<String>,
    },
    /// Resonances of the weighted transfer operator.
    Resonances {
        #[command(flatten)]
        run: RunArgs,
        /// Escape weight `u,s`; repeat for several weights.
        #[arg(long = "weight", value_parser = parse_weight)]
        weights: Vec<[f64; 2]>,
        #[arg(long)]
        trunc: Option<usize>,
        #[arg(long)]
        cone_aperture: Option<f64>,
        /// Use the suspension generator with this many fiber modes.
        #[arg(long)]
        fiber_modes: Option<usize>,
        /// Constant potential.
        #[arg(long, allow_hyphen_values = true)]
        potential: Option<f64>,
    },
    /// Run a configured experiment (a TOML file or a bundled name).
    Pipeline {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        cone_aperture: Option<f64>,
        #[arg(long = "weight", value_parser = parse_weight)]
        weights: Vec<[f64; 2]>,
        #[arg(long)]
        trunc: Option<usize>,
    },
    /// Per-figure CSV tables from pipeline reports.
    PlotData {
        /// Report files; a run directory expands to the reports in its manifest.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// System manifest (`.toml` or `.json`); the cat map by default.
    #[arg(long)]
    system: Option<PathBuf>,
    /// Suspend the map with this constant roof.
    #[arg(long)]
    roof: Option<f64>,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Holder,
    Sobolev,
}

fn parse_weight(s: &str) -> Result<[f64; 2], String> {
    let (u, v) = s.split_once(',').ok_or("expected u,s")?;
    let u = u.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let v = v.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([u, v])
}

fn parse_bands(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    Ok((
        a.trim().parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
        b.trim().parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
    ))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

impl RunArgs {
    fn config(&self, name: &str, stage: StageKind) -> Result<ExperimentConfig> {
        let (mut system, base) = match &self.system {
            Some(p) => (
                read_system_manifest(p).with_context(|| format!("reading {}", p.display()))?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (SystemManifest::cat_map(), PathBuf::from(".")),
        };
        if self.roof.is_some() {
            system.roof = self.roof;
        }
        let mut cfg = ExperimentConfig::new(name, system, self.grid, vec![stage])?;
        cfg.seed = self.seed;
        cfg.base_dir = base;
        Ok(cfg)
    }
}

fn execute(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.output_dir(out);
    let result = run_pipeline(cfg, &dir);
    eprintln!("manifest: {}", dir.join(MANIFEST_FILE).display());
    let manifest = result?;
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, a.path);
    }
    Ok(manifest)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Decompose { input, out } => {
            let u = read_pfld(&input)?;
            fs::create_dir_all(&out)?;
            let blocks = lp_decompose(&u);
            let mut norms = Vec::new();
            for (j, b) in blocks.iter() {
                let name = if j < 0 { "block_m1.pfld".to_string() } else { format!("block_{j}.pfld") };
                write_pfld(&out.join(&name), b)?;
                norms.push(serde_json::json!({"j": j, "file": name, "l2": b.l2_norm(), "sup": b.sup_norm()}));
            }
            print_json(&norms)?;
        }
        Command::Paraproduct { a, b, out } => {
            let (a, b) = (read_pfld(&a)?, read_pfld(&b)?);
            fs::create_dir_all(&out)?;
            let tab = paraproduct(&a, &b)?;
            let tba = paraproduct(&b, &a)?;
            let r = bony_remainder(&a, &b)?;
            let product = a.mul(&b)?;
            let defect = product.sub(&tab.add(&tba)?.add(&r)?)?.sup_norm();
            write_pfld(&out.join("t_a_b.pfld"), &tab)?;
            write_pfld(&out.join("t_b_a.pfld"), &tba)?;
            write_pfld(&out.join("remainder.pfld"), &r)?;
            print_json(&serde_json::json!({
                "identity_defect": defect,
                "product_sup": product.sup_norm(),
            }))?;
        }
        Command::Regularity { input, scale, bands } => {
            let u = read_pfld(&input)?;
            let scale = match scale {
                ScaleArg::Holder => Scale::Holder,
                ScaleArg::Sobolev => Scale::Sobolev,
            };
            let estimate = estimate_regularity(&u, scale, bands)?;
            print_json(&serde_json::json!({
                "estimate": estimate,
                "block_norms": block_norms(&u, scale),
            }))?;
        }
        Command::Bundle { run, tol, max_iter } => {
            let mut cfg = run.config("bundle", StageKind::Bundle)?;
            if let Some(t) = tol {
                cfg.bundle.tol = t;
            }
            if let Some(m) = max_iter {
                cfg.bundle.max_iter = m;
            }
            execute(&cfg, run.out.as_deref())?;
        }
        Command::Thresholds { run, s, time, location } => {
            let mut cfg = run.config("thresholds", StageKind::Thresholds)?;
            if !s.is_empty() {
                cfg.thresholds.s = s;
            }
            if let Some(t) = time {
                cfg.thresholds.t = t;
            }
            if let Some(l) = location {
                cfg.thresholds.location = ThresholdLocation::parse(&l)?;
            }
            execute(&cfg, run.out.as_deref())?;
        }
        Command::Resonances {
            run,
            weights,
            trunc,
            cone_aperture,
            fiber_modes,
            potential,
        } => {
            let mut cfg = run.config("resonances", StageKind::Resonances)?;
            if !weights.is_empty() {
                cfg.resonances.weights = weights;
            }
            if let Some(n) = trunc {
                cfg.resonances.truncation = n;
            }
            if let Some(a) = cone_aperture {
                cfg.resonances.aperture_deg = a;
            }
            if let Some(f) = fiber_modes {
                cfg.resonances.backend = Backend::Flow { fiber_modes: f };
            }
            if let Some(c) = potential {
                cfg.resonances.potential = PotentialSpec::Constant { value: c };
            }
            execute(&cfg, run.out.as_deref())?;
        }
        Command::Pipeline {
            config,
            out,
            seed,
            grid,
            tol,
            cone_aperture,
            weights,
            trunc,
        } => {
            let mut cfg = ExperimentConfig::resolve(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(g) = grid {
                cfg.grid = g;
            }
            if let Some(t) = tol {
                cfg.bundle.tol = t;
            }
            if let Some(a) = cone_aperture {
                cfg.wavefront.apertures_deg = vec![a];
                cfg.resonances.aperture_deg = a;
            }
            if !weights.is_empty() {
                cfg.resonances.weights = weights;
            }
            if let Some(n) = trunc {
                cfg.resonances.truncation = n;
            }
            execute(&cfg, out.as_deref())?;
        }
        Command::PlotData { reports, out } => {
            let mut files = Vec::new();
            for r in reports {
                if r.is_dir() {
                    files.extend(manifest_reports(&r).with_context(|| format!("reading manifest in {}", r.display()))?);
                } else {
                    files.push(r);
                }
            }
            let summary = emit_plot_data(&files, &out)?;
            for s in &summary.skipped {
                eprintln!("skipped {}: {}", s.path.display(), s.reason);
            }
            for p in &summary.written {
                println!("{}", p.display());
            }
            if summary.written.is_empty() {
                bail!("no plot data produced");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
