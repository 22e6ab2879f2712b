//! Command-line entry points: config scaffolding, prior pretraining,
//! co-design training runs (DiCoDe, baselines and ablations), and plot
//! generation from experiment directories.
//!
//! Plots are drawn without embedded text (no font backend is bundled); each
//! image is accompanied by a `.txt` legend mapping series order to labels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use dicode::codesign::{
    config_hash, load_metrics, pretrain_prior, run_experiment, ExperimentConfig, Method,
};
use dicode::diffusion::{load_denoiser, sample_unconditional, save_denoiser};
use dicode::envs::{DesignRecord, Scenario};
use dicode::guidance::EnvCritic;
use dicode::rng::rng_from_seed;
use dicode::{DicodeError, Result};

#[derive(Parser)]
#[command(name = "dicode", version, about = "Agent-environment co-design experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a default configuration for a scenario.
    Init {
        /// Scenario id: warehouse_lite, nav_lite or wind_lite.
        scenario: String,
        /// Path of the config file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Pretrain the diffusion prior and write a feasibility report.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Output root; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run a training method over the configured seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// dicode, fixed, dr, rl, dicode-descent, dicode-sampling,
        /// dicode-add or dicode-mc.
        #[arg(long)]
        method: String,
        /// Comma-separated seed list overriding the config.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        /// Worker count (fallback: DICODE_WORKERS). Recorded in run
        /// metadata; execution is sequential for bit-exact replay.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render plots from experiment directories.
    Plot {
        /// curves, heatmap or method_bars.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
        /// Experiment directories produced by `train`.
        dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    method: String,
    seed: u64,
    scenario_id: String,
    config_hash: String,
    workers: usize,
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                DicodeError::Config(_) | DicodeError::InvalidArgument(_) => 2,
                _ => 3,
            }
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Init {
            scenario,
            out,
            overwrite,
        } => cmd_init(&scenario, &out, overwrite),
        Cmd::Pretrain {
            config,
            out,
            overwrite,
        } => cmd_pretrain(&config, out.as_deref(), overwrite),
        Cmd::Train {
            config,
            method,
            seeds,
            out,
            overwrite,
            workers,
        } => cmd_train(&config, &method, seeds.as_deref(), out.as_deref(), overwrite, workers),
        Cmd::Plot {
            kind,
            out,
            overwrite,
            dirs,
        } => cmd_plot(&kind, &out, overwrite, &dirs),
    }
}

fn refuse_clobber(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(DicodeError::Config(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DicodeError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

fn cmd_init(scenario: &str, out: &Path, overwrite: bool) -> Result<()> {
    let cfg = ExperimentConfig::default_for(scenario)?;
    refuse_clobber(out, overwrite)?;
    std::fs::write(out, cfg.to_toml_string()?)?;
    println!("wrote {} (hash {})", out.display(), config_hash(&cfg)?);
    Ok(())
}

fn prior_path(root: &Path, scenario_id: &str) -> PathBuf {
    root.join(format!("prior-{scenario_id}.ckpt"))
}

#[derive(Serialize)]
struct FeasibilityReport {
    n_samples: usize,
    /// Fraction of raw chain outputs already fixed by the soft projection.
    raw_feasible: f64,
    /// Fraction of finalized samples passing scenario validation.
    finalized_valid: f64,
}

fn cmd_pretrain(config: &Path, out: Option<&Path>, overwrite: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    std::fs::create_dir_all(&root)?;
    let scenario = Scenario::from_id(&cfg.scenario.id)?;
    let ckpt = prior_path(&root, scenario.scenario_id());
    refuse_clobber(&ckpt, overwrite)?;

    let seed = cfg.seeds[0];
    let (denoiser, schedule) = pretrain_prior(&cfg, seed)?;
    save_denoiser(&ckpt, &denoiser, &schedule, scenario.scenario_id())?;

    let proj = scenario.projection();
    let mut rng = rng_from_seed(seed ^ 0xfea5_1b11);
    let n_samples = 256;
    let mut raw_ok = 0usize;
    let mut valid = 0usize;
    for _ in 0..n_samples {
        let sample = sample_unconditional(
            &denoiser,
            &schedule,
            cfg.diffusion.n_ddim_steps,
            scenario.design_dim(),
            scenario.scenario_id(),
            &mut rng,
        )?;
        let projected = proj.project(&sample.data)?;
        if sample
            .data
            .iter()
            .zip(projected.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-9)
        {
            raw_ok += 1;
        }
        if scenario.validate(&proj.finalize(&sample.data)?).valid {
            valid += 1;
        }
    }
    let report = FeasibilityReport {
        n_samples,
        raw_feasible: raw_ok as f64 / n_samples as f64,
        finalized_valid: valid as f64 / n_samples as f64,
    };
    std::fs::write(
        root.join("feasibility.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "wrote {} (raw feasible {:.1}%, finalized valid {:.1}%)",
        ckpt.display(),
        100.0 * report.raw_feasible,
        100.0 * report.finalized_valid
    );
    Ok(())
}

fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    let workers = match flag {
        Some(w) => w,
        None => match std::env::var("DICODE_WORKERS") {
            Ok(v) => v
                .parse()
                .map_err(|_| DicodeError::Config(format!("bad DICODE_WORKERS value {v:?}")))?,
            Err(_) => 1,
        },
    };
    if workers == 0 {
        return Err(DicodeError::Config("workers must be >= 1".into()));
    }
    Ok(workers)
}

fn cmd_train(
    config: &Path,
    method_name: &str,
    seeds: Option<&str>,
    out: Option<&Path>,
    overwrite: bool,
    workers: Option<usize>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let method = Method::from_str(method_name)?;
    let workers = resolve_workers(workers)?;
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    std::fs::create_dir_all(&root)?;
    let scenario = Scenario::from_id(&cfg.scenario.id)?;
    let seeds: Vec<u64> = match seeds {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| DicodeError::Config(format!("bad seed {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => cfg.seeds.clone(),
    };

    let prior = if method.needs_prior() {
        let path = prior_path(&root, scenario.scenario_id());
        if !path.exists() {
            return Err(DicodeError::Checkpoint(format!(
                "prior checkpoint {} not found; run `dicode pretrain` first",
                path.display()
            )));
        }
        let (denoiser, schedule, ckpt_scenario) = load_denoiser(&path)?;
        if ckpt_scenario != scenario.scenario_id() {
            return Err(DicodeError::Checkpoint(format!(
                "prior was trained for {ckpt_scenario}, config wants {}",
                scenario.scenario_id()
            )));
        }
        Some((denoiser, schedule))
    } else {
        None
    };

    for &seed in &seeds {
        let dir = root.join(format!("{}-seed{}", method.as_str(), seed));
        refuse_clobber(&dir, overwrite)?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        let result = run_experiment(&cfg, method, seed, &dir, prior.clone())?;
        let meta = RunMeta {
            method: method.as_str().to_string(),
            seed,
            scenario_id: scenario.scenario_id().to_string(),
            config_hash: result.config_hash.clone(),
            workers,
        };
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
        println!(
            "{} seed {seed}: final smoothed return {:.4} ({} iterations)",
            method.as_str(),
            result.final_ema_return(),
            result.metrics.len()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

fn perr<E: std::fmt::Display>(e: E) -> DicodeError {
    DicodeError::Numeric(format!("plot backend: {e}"))
}

fn read_meta(dir: &Path) -> Result<RunMeta> {
    let text = std::fs::read_to_string(dir.join("run.json")).map_err(|e| {
        DicodeError::Config(format!("{} has no run.json: {e}", dir.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}

struct CurveSeries {
    label: String,
    mean: Vec<(f64, f64)>,
    band: Option<Vec<(f64, f64, f64)>>,
}

fn bootstrap_band(per_seed: &[Vec<f64>], seed: u64) -> Vec<(f64, f64)> {
    let n_iters = per_seed.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut rng = rng_from_seed(seed);
    let mut band = Vec::with_capacity(n_iters);
    use rand::Rng as _;
    for t in 0..n_iters {
        let mut means = Vec::with_capacity(200);
        for _ in 0..200 {
            let mut acc = 0.0;
            for _ in 0..per_seed.len() {
                acc += per_seed[rng.random_range(0..per_seed.len())][t];
            }
            means.push(acc / per_seed.len() as f64);
        }
        means.sort_by(f64::total_cmp);
        band.push((means[4], means[194]));
    }
    band
}

fn curve_data(groups: &BTreeMap<String, Vec<PathBuf>>) -> Result<Vec<CurveSeries>> {
    let mut series = Vec::new();
    for (method, dirs) in groups {
        let mut per_seed: Vec<Vec<f64>> = Vec::new();
        for dir in dirs {
            let metrics = load_metrics(&dir.join("metrics.csv"))?;
            let returns: Vec<f64> = metrics.iter().map(|r| r.mean_return).collect();
            per_seed.push(dicode::analysis::ema(&returns, 0.95));
        }
        let n_iters = per_seed.iter().map(|s| s.len()).min().unwrap_or(0);
        if n_iters == 0 {
            return Err(DicodeError::InvalidArgument(format!(
                "method {method} has empty metrics"
            )));
        }
        let mean: Vec<(f64, f64)> = (0..n_iters)
            .map(|t| {
                let m = per_seed.iter().map(|s| s[t]).sum::<f64>() / per_seed.len() as f64;
                (t as f64, m)
            })
            .collect();
        let band = if per_seed.len() >= 2 {
            Some(
                bootstrap_band(&per_seed, 7)
                    .into_iter()
                    .enumerate()
                    .map(|(t, (lo, hi))| (t as f64, lo, hi))
                    .collect(),
            )
        } else {
            None
        };
        series.push(CurveSeries {
            label: method.clone(),
            mean,
            band,
        });
    }
    Ok(series)
}

fn draw_curves<DB: DrawingBackend>(area: DrawingArea<DB, plotters::coord::Shift>, series: &[CurveSeries]) -> Result<()>
where
    DB::ErrorType: 'static,
{
    area.fill(&WHITE).map_err(perr)?;
    let x_max = series
        .iter()
        .flat_map(|s| s.mean.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for p in &s.mean {
            y_lo = y_lo.min(p.1);
            y_hi = y_hi.max(p.1);
        }
        if let Some(band) = &s.band {
            for &(_, lo, hi) in band {
                y_lo = y_lo.min(lo);
                y_hi = y_hi.max(hi);
            }
        }
    }
    let pad = 0.1 * (y_hi - y_lo).max(1e-6);
    let mut chart = ChartBuilder::on(&area)
        .margin(20)
        .build_cartesian_2d(0.0..x_max + 1.0, y_lo - pad..y_hi + pad)
        .map_err(perr)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .disable_y_mesh()
        .draw()
        .map_err(perr)?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if let Some(band) = &s.band {
            let mut polygon: Vec<(f64, f64)> = band.iter().map(|&(x, lo, _)| (x, lo)).collect();
            polygon.extend(band.iter().rev().map(|&(x, _, hi)| (x, hi)));
            chart
                .draw_series(std::iter::once(Polygon::new(polygon, color.mix(0.2))))
                .map_err(perr)?;
        }
        chart
            .draw_series(LineSeries::new(s.mean.iter().cloned(), color.stroke_width(2)))
            .map_err(perr)?;
    }
    area.present().map_err(perr)?;
    Ok(())
}

/// Per-cell design occupancy over a scenario-specific grid.
fn occupancy(scenario: &Scenario, designs: &[Vec<f64>]) -> (usize, usize, Vec<f64>) {
    match scenario {
        Scenario::Warehouse(spec) => {
            let (w, h) = (spec.grid_w, spec.grid_h);
            let mut freq = vec![0.0; w * h];
            for design in designs {
                for cell in 0..spec.n_cells() {
                    if (0..spec.n_colors).any(|c| design[c * spec.n_cells() + cell] > 0.5) {
                        freq[cell] += 1.0;
                    }
                }
            }
            for f in freq.iter_mut() {
                *f /= designs.len() as f64;
            }
            (w, h, freq)
        }
        Scenario::Nav(spec) => {
            let bins = 16;
            let mut freq = vec![0.0; bins * bins];
            for design in designs {
                for (x, y) in spec.obstacle_centers(design) {
                    let i = (((x + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
                    let j = (((y + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
                    freq[j * bins + i] += 1.0;
                }
            }
            let max = freq.iter().cloned().fold(1.0, f64::max);
            for f in freq.iter_mut() {
                *f /= max;
            }
            (bins, bins, freq)
        }
        Scenario::Wind(_) => {
            let bins = 16;
            let mut freq = vec![0.0; bins * bins];
            for design in designs {
                for pair in design.chunks(2) {
                    let i = ((pair[0] * bins as f64) as usize).min(bins - 1);
                    let j = ((pair[1] * bins as f64) as usize).min(bins - 1);
                    freq[j * bins + i] += 1.0;
                }
            }
            let max = freq.iter().cloned().fold(1.0, f64::max);
            for f in freq.iter_mut() {
                *f /= max;
            }
            (bins, bins, freq)
        }
    }
}

fn draw_heatmap<DB: DrawingBackend>(
    area: DrawingArea<DB, plotters::coord::Shift>,
    w: usize,
    h: usize,
    freq: &[f64],
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    area.fill(&WHITE).map_err(perr)?;
    let mut chart = ChartBuilder::on(&area)
        .margin(20)
        .build_cartesian_2d(0..w as i32, 0..h as i32)
        .map_err(perr)?;
    chart
        .draw_series((0..w * h).map(|cell| {
            let (x, y) = ((cell % w) as i32, (cell / w) as i32);
            let f = freq[cell].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - f)) as u8;
            Rectangle::new(
                [(x, y), (x + 1, y + 1)],
                RGBColor(shade, shade, 255).filled(),
            )
        }))
        .map_err(perr)?;
    area.present().map_err(perr)?;
    Ok(())
}

fn draw_bars<DB: DrawingBackend>(
    area: DrawingArea<DB, plotters::coord::Shift>,
    bars: &[(String, f64, f64)],
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    area.fill(&WHITE).map_err(perr)?;
    let y_lo = bars.iter().map(|b| b.1 - b.2).fold(0.0, f64::min);
    let y_hi = bars.iter().map(|b| b.1 + b.2).fold(0.0, f64::max);
    let pad = 0.1 * (y_hi - y_lo).max(1e-6);
    let mut chart = ChartBuilder::on(&area)
        .margin(20)
        .build_cartesian_2d(0.0..bars.len() as f64, y_lo - pad..y_hi + pad)
        .map_err(perr)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .disable_y_mesh()
        .draw()
        .map_err(perr)?;
    for (i, (_, mean, stderr)) in bars.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let x = i as f64;
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x + 0.1, 0.0), (x + 0.9, *mean)],
                color.filled(),
            )))
            .map_err(perr)?;
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(x + 0.5, mean - stderr), (x + 0.5, mean + stderr)],
                BLACK.stroke_width(2),
            )))
            .map_err(perr)?;
    }
    area.present().map_err(perr)?;
    Ok(())
}

fn read_designs(dir: &Path, limit: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(dir.join("designs.jsonl"))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(DicodeError::InvalidArgument(format!(
            "{} has an empty design archive",
            dir.display()
        )));
    }
    lines
        .iter()
        .rev()
        .take(limit)
        .map(|l| DesignRecord::from_line(l).map(|r| r.data))
        .collect()
}

fn cmd_plot(kind: &str, out: &Path, overwrite: bool, dirs: &[PathBuf]) -> Result<()> {
    if dirs.is_empty() {
        return Err(DicodeError::InvalidArgument(
            "plot needs at least one experiment directory".into(),
        ));
    }
    let metas: Vec<RunMeta> = dirs.iter().map(|d| read_meta(d)).collect::<Result<_>>()?;
    for m in &metas[1..] {
        if m.scenario_id != metas[0].scenario_id || m.config_hash != metas[0].config_hash {
            return Err(DicodeError::Config(format!(
                "refusing to mix runs: {}/{} vs {}/{}",
                metas[0].scenario_id, metas[0].config_hash, m.scenario_id, m.config_hash
            )));
        }
    }
    let scenario = Scenario::from_id(&metas[0].scenario_id)?;
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (meta, dir) in metas.iter().zip(dirs.iter()) {
        groups.entry(meta.method.clone()).or_default().push(dir.clone());
    }

    std::fs::create_dir_all(out)?;
    let png = out.join(format!("{kind}.png"));
    let svg = out.join(format!("{kind}.svg"));
    let legend = out.join(format!("{kind}.txt"));
    for p in [&png, &svg, &legend] {
        refuse_clobber(p, overwrite)?;
    }
    let size = (900u32, 600u32);

    match kind {
        "curves" => {
            let series = curve_data(&groups)?;
            draw_curves(BitMapBackend::new(&png, size).into_drawing_area(), &series)?;
            draw_curves(SVGBackend::new(&svg, size).into_drawing_area(), &series)?;
            let labels: Vec<String> = series
                .iter()
                .enumerate()
                .map(|(i, s)| format!("series {i}: {} ({} pts)", s.label, s.mean.len()))
                .collect();
            std::fs::write(&legend, labels.join("\n"))?;
        }
        "heatmap" => {
            let mut designs = Vec::new();
            for dir in dirs {
                designs.extend(read_designs(dir, 256)?);
            }
            let (w, h, freq) = occupancy(&scenario, &designs);
            draw_heatmap(BitMapBackend::new(&png, size).into_drawing_area(), w, h, &freq)?;
            draw_heatmap(SVGBackend::new(&svg, size).into_drawing_area(), w, h, &freq)?;
            std::fs::write(
                &legend,
                format!(
                    "occupancy over {} designs on a {w}x{h} grid (dark = frequent)",
                    designs.len()
                ),
            )?;
        }
        "method_bars" => {
            let mut bars = Vec::new();
            for (method, group_dirs) in &groups {
                let mut means = Vec::new();
                for dir in group_dirs {
                    let critic: dicode::guidance::MlpEnvCritic = serde_json::from_str(
                        &std::fs::read_to_string(dir.join("env_critic.json"))?,
                    )?;
                    let designs = read_designs(dir, 100)?;
                    let mean = designs.iter().map(|d| critic.value(d)).sum::<f64>()
                        / designs.len() as f64;
                    means.push(mean);
                }
                let n = means.len() as f64;
                let mean = means.iter().sum::<f64>() / n;
                let stderr = if means.len() > 1 {
                    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                } else {
                    0.0
                };
                bars.push((method.clone(), mean, stderr));
            }
            draw_bars(BitMapBackend::new(&png, size).into_drawing_area(), &bars)?;
            draw_bars(SVGBackend::new(&svg, size).into_drawing_area(), &bars)?;
            let labels: Vec<String> = bars
                .iter()
                .enumerate()
                .map(|(i, (m, mean, se))| format!("bar {i}: {m} critic value {mean:.4} +- {se:.4}"))
                .collect();
            std::fs::write(&legend, labels.join("\n"))?;
        }
        other => {
            return Err(DicodeError::InvalidArgument(format!(
                "unknown plot kind {other:?} (expected curves, heatmap or method_bars)"
            )))
        }
    }
    println!("wrote {} and {}", png.display(), svg.display());
    Ok(())
}
