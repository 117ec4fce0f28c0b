//! Command implementations behind the `wam` binary.

pub mod figure;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use wam_core::config::Heads;
use wam_core::flowmatch::SamplerConfig;
use wam_core::metrics::{aggregate_reports, evaluate_split, EvalOptions, Report, Which};
use wam_core::microworld::{build_dataset, read_episodes, write_episodes, CameraConfig, EpisodeRecord, Split};
use wam_core::trainer::{ablation_table, read_checkpoint, run_ablation_matrix, Checkpoint, LossReport, Trainer, Variant};
use wam_core::{mix_seed, Error, RunConfig};

use figure::{bar_chart, depth_image, line_plot, rgb_frame, smooth, trajectory_overlay, Canvas, OverheadProjection, WHITE};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "WAM_CONFIG";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "wam", version, about = "World-action model on a procedural driving world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Run config file (defaults to $WAM_CONFIG, then built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.lr=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WhichArg {
    Plan,
    Depth,
    Video,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an episode file.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints and a loss log into `--out`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Enabled experts, e.g. `action` or `depth,video,action`.
        #[arg(long)]
        heads: Option<Heads>,
        /// Continue from a checkpoint (its config wins over `--config`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on an episode file.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        which: WhichArg,
        /// Number of sampler seeds; the report holds means and `.std` entries.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Report path (defaults to `eval-<which>.txt` beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a matrix of variants under one budget.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `heads`, `depth-video`, `queries`, `standard`, `all`, or variant names.
        #[arg(long, default_value = "standard")]
        matrix: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Training episodes file (generated from the config when absent).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out episodes file (generated when absent).
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        train_episodes: usize,
        #[arg(long, default_value_t = 100)]
        test_episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground truth vs generated depth, frames and trajectory for one episode.
    RenderEpisode {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Format(_) => CliError::Io(msg),
            Error::Numeric { .. } | Error::Numerics(_) => CliError::Numeric(msg),
            Error::Input(_) | Error::Config(_) => CliError::Usage(msg),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = Result<T, CliError>;

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let path = self.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                RunConfig::from_toml_str(&text)?
            }
            None => RunConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        for o in &self.overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(())
    }
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write_file(p: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(p, bytes).map_err(|e| io_err(p, e))
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> CliResult<PathBuf> {
    let p = dir.join(RESOLVED_CONFIG);
    write_file(&p, cfg.to_toml_string().as_bytes())?;
    Ok(p)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn load_episodes(path: &Path, cfg: &RunConfig) -> CliResult<Vec<EpisodeRecord>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_episodes(BufReader::new(f), cfg.world.dt)?)
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

fn save_episodes(path: &Path, recs: &[EpisodeRecord]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_episodes(&mut w, recs)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { cfg, split, episodes, seed, out } => gen_data(&cfg.resolve()?, split, episodes, seed, &out),
        Command::Train { cfg, data, out, heads, resume } => train(&cfg, &data, &out, heads, resume.as_deref()),
        Command::Eval { cfg, checkpoint, data, which, seeds, out } => {
            eval(&cfg, &checkpoint, &data, which, seeds, out.as_deref()).map(|_| ())
        }
        Command::Ablate { cfg, matrix, seeds, data, test_data, train_episodes, test_episodes, out } => ablate(
            &cfg.resolve()?,
            &matrix,
            seeds,
            data.as_deref(),
            test_data.as_deref(),
            (train_episodes, test_episodes),
            &out,
        ),
        Command::RenderEpisode { cfg, checkpoint, data, episode, out } => {
            render_episode(&cfg, &checkpoint, &data, episode, &out).map(|_| ())
        }
    }
}

pub fn gen_data(cfg: &RunConfig, split: Split, n: usize, seed: u64, out: &Path) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let ds = build_dataset(&cfg.world, n, seed, split)?;
    let dir = parent_dir(out);
    create_dir(&dir)?;
    save_episodes(out, &ds.records)?;
    let mut resolved = out.as_os_str().to_owned();
    resolved.push(".config.toml");
    write_file(Path::new(&resolved), cfg.to_toml_string().as_bytes())?;
    println!("wrote {} episodes to {} ({} rejected draws)", ds.records.len(), out.display(), ds.rejected);
    for (sc, count) in &ds.per_scenario {
        println!("  {:<16} {count}", sc.name());
    }
    Ok(())
}

pub const LOG_FILE: &str = "train.log";
pub const LATEST_CHECKPOINT: &str = "checkpoint.wack";

fn save_checkpoint(tr: &Trainer, path: &Path) -> CliResult<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    tr.write_checkpoint(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn train(args: &ConfigArgs, data: &Path, out: &Path, heads: Option<Heads>, resume: Option<&Path>) -> CliResult<()> {
    create_dir(out)?;
    let ck = resume.map(load_checkpoint).transpose()?;
    let cfg = match &ck {
        Some(c) => {
            let mut cfg = c.config.clone();
            args.apply(&mut cfg)?;
            if heads.is_some_and(|h| h != cfg.train.heads) {
                return Err(CliError::Usage("--heads cannot change on resume".into()));
            }
            cfg
        }
        None => {
            let mut cfg = args.resolve()?;
            if let Some(h) = heads {
                cfg.train.heads = h;
            }
            cfg
        }
    };
    let records = load_episodes(data, &cfg)?;
    let mut tr = match ck {
        Some(mut c) => {
            let same_shape = {
                let mut a = c.config.clone();
                a.train.steps = cfg.train.steps;
                a.train.checkpoint_every = cfg.train.checkpoint_every;
                a == cfg
            };
            if !same_shape {
                return Err(CliError::Usage("only train.steps and train.checkpoint_every may change on resume".into()));
            }
            c.config = cfg.clone();
            Trainer::resume(c, &records)?
        }
        None => Trainer::new(&cfg, &records)?,
    };
    write_resolved(out, &cfg)?;
    let log_path = out.join(LOG_FILE);
    let log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(log);
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.steps;
    let report_every = (total / 20).max(1);
    let res = tr.run(|tr, r| {
        writeln!(log, "{}", r.log_line())?;
        let done = r.step + 1;
        if done % report_every == 0 || done == total {
            println!("{}", r.log_line());
        }
        if every > 0 && done % every == 0 {
            log.flush()?;
            save_checkpoint(tr, &out.join(format!("step-{done:07}.wack"))).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(())
    });
    log.flush().map_err(|e| io_err(&log_path, e))?;
    res?;
    save_checkpoint(&tr, &out.join(LATEST_CHECKPOINT))?;
    println!("checkpoint written to {}", out.join(LATEST_CHECKPOINT).display());
    Ok(())
}

fn which_flags(w: WhichArg) -> (Which, &'static str) {
    match w {
        WhichArg::Plan => (Which { plan: true, depth: false, video: false }, "plan"),
        WhichArg::Depth => (Which { plan: false, depth: true, video: false }, "depth"),
        WhichArg::Video => (Which { plan: false, depth: false, video: true }, "video"),
        WhichArg::All => (Which::ALL, "all"),
    }
}

pub fn eval(
    args: &ConfigArgs,
    checkpoint: &Path,
    data: &Path,
    which: WhichArg,
    seeds: usize,
    out: Option<&Path>,
) -> CliResult<Report> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let ck = load_checkpoint(checkpoint)?;
    let mut cfg = ck.config.clone();
    args.apply(&mut cfg)?;
    let (mut flags, name) = which_flags(which);
    let heads = ck.model.heads;
    if which == WhichArg::All {
        flags = Which { plan: heads.action, depth: heads.depth, video: heads.video };
    } else if (flags.plan && !heads.action) || (flags.depth && !heads.depth) || (flags.video && !heads.video) {
        return Err(CliError::Usage(format!("checkpoint was trained without the expert needed for --which {name}")));
    }
    let records = load_episodes(data, &cfg)?;
    let mut reports = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let mut c = cfg.clone();
        c.sampler.seed = cfg.sampler.seed.wrapping_add(k as u64);
        reports.push(evaluate_split(&ck.model, &records, &EvalOptions::from_config(&c, flags))?);
    }
    let mut report = aggregate_reports(&reports);
    report.insert("seeds", seeds as f64);
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(checkpoint).join(format!("eval-{name}.txt")));
    let dir = parent_dir(&path);
    create_dir(&dir)?;
    write_file(&path, report.to_text().as_bytes())?;
    write_file(&dir.join(format!("eval-{name}.config.toml")), cfg.to_toml_string().as_bytes())?;
    print!("{}", report.to_text());
    Ok(report)
}

fn data_or_generate(cfg: &RunConfig, path: Option<&Path>, n: usize, split: Split) -> CliResult<Vec<EpisodeRecord>> {
    match path {
        Some(p) => load_episodes(p, cfg),
        None => Ok(build_dataset(&cfg.world, n, cfg.train.seed, split)?.records),
    }
}

pub fn ablate(
    cfg: &RunConfig,
    matrix: &str,
    seeds: usize,
    data: Option<&Path>,
    test_data: Option<&Path>,
    (n_train, n_test): (usize, usize),
    out: &Path,
) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let variants = Variant::matrix(matrix)?;
    create_dir(&out.join("reports"))?;
    write_resolved(out, cfg)?;
    let train = data_or_generate(cfg, data, n_train, Split::Train)?;
    let test = data_or_generate(cfg, test_data, n_test, Split::Test)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| cfg.train.seed + k).collect();
    let results = run_ablation_matrix(cfg, &variants, &seed_list, &train, &test, |name, seed, r| {
        let file = out.join("reports").join(format!("{}-seed{seed}.txt", name.replace('/', "-")));
        if let Err(e) = fs::write(&file, r.to_text()) {
            eprintln!("warning: {}: {e}", file.display());
        }
        println!("{name} seed {seed}: pdms {}", r.get("plan.pdms").map_or("-".into(), |v| format!("{v:.4}")));
    })?;
    let table = ablation_table(&results);
    write_file(&out.join("table.txt"), table.as_bytes())?;
    print!("{table}");

    let curves: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            let n = r.loss_curves.iter().map(Vec::len).min().unwrap_or(0);
            let mean: Vec<f64> = (0..n)
                .map(|i| r.loss_curves.iter().map(|c| c[i].l_total as f64).sum::<f64>() / r.loss_curves.len() as f64)
                .collect();
            smooth(&mean, 50)
        })
        .collect();
    write_file(&out.join("loss_curves.ppm"), &line_plot(&curves, 480, 320).to_ppm())?;
    let mut legend = String::from("# wam figure legend v1\n");
    for (i, r) in results.iter().enumerate() {
        legend.push_str(&format!("{i} {}\n", r.variant.name));
    }
    write_file(&out.join("legend.txt"), legend.as_bytes())?;
    for (key, file) in [("plan.pdms", "pdms_bars.ppm"), ("video.psnr", "psnr_bars.ppm"), ("depth.absrel", "absrel_bars.ppm")] {
        let vals: Vec<f64> = results.iter().map(|r| r.mean(key).unwrap_or(f64::NAN)).collect();
        if vals.iter().any(|v| v.is_finite()) {
            write_file(&out.join(file), &bar_chart(&vals, 480, 320).to_ppm())?;
        }
    }
    Ok(())
}

/// Artifact paths written by [`render_episode`].
#[derive(Debug, Clone)]
pub struct RenderedEpisode {
    pub depth: PathBuf,
    pub frames: PathBuf,
    pub trajectory: PathBuf,
    pub projection: OverheadProjection,
    pub predicted: wam_core::experts::Trajectory,
}

pub fn render_episode(args: &ConfigArgs, checkpoint: &Path, data: &Path, episode: usize, out: &Path) -> CliResult<RenderedEpisode> {
    let ck = load_checkpoint(checkpoint)?;
    let mut cfg = ck.config.clone();
    args.apply(&mut cfg)?;
    let records = load_episodes(data, &cfg)?;
    let rec = records
        .get(episode)
        .ok_or_else(|| CliError::Usage(format!("episode {episode} out of range (file has {})", records.len())))?;
    create_dir(out)?;
    write_resolved(out, &cfg)?;
    let model = &ck.model;
    let sm = &cfg.sampler;
    let sampler = |steps, head| SamplerConfig { steps, method: sm.method, seed: mix_seed(&[sm.seed, episode as u64, head]) };
    let (h, w) = (rec.frames.h, rec.frames.w);
    let d_max = cfg.world.d_max.min(80.0);
    let up = 4;

    let gt_depth = depth_image(&rec.depth_map(0), d_max).upscale(up);
    let depth_panel = if model.heads.depth {
        let pred = model.predict_depth(rec, sampler(sm.depth_steps, 1))?;
        Canvas::hstack(&[gt_depth, depth_image(&pred, d_max).upscale(up)], 4, WHITE)
    } else {
        gt_depth
    };
    let depth_path = out.join("depth.ppm");
    write_file(&depth_path, &depth_panel.to_ppm())?;

    let horizon = model.config.horizon.min(rec.expert.len());
    let cam = CameraConfig::from_world(&cfg.world);
    let gt = rec.future_frames(&cam, horizon)?;
    let row = |seq: &wam_core::experts::FrameSequence| {
        let parts: Vec<Canvas> = (0..seq.frames).map(|i| rgb_frame(seq.frame(i), h, w).upscale(up)).collect();
        Canvas::hstack(&parts, 4, WHITE)
    };
    let current = rgb_frame(rec.front_frame(), h, w).upscale(up);
    let mut rows = vec![Canvas::hstack(&[current.clone(), row(&gt)], 12, WHITE)];
    if model.heads.video {
        let pred = model.predict_video(rec, sampler(sm.video_steps, 2))?;
        rows.push(Canvas::hstack(&[current, row(&pred)], 12, WHITE));
    }
    let frames_path = out.join("frames.ppm");
    write_file(&frames_path, &Canvas::vstack(&rows, 4, WHITE).to_ppm())?;

    let predicted = if model.heads.action {
        model.plan(rec, sampler(sm.action_steps, 3))?
    } else {
        wam_core::experts::Trajectory { states: Vec::new(), dt: rec.expert.dt }
    };
    let projection = OverheadProjection::default();
    let traj_path = out.join("trajectory.ppm");
    write_file(&traj_path, &trajectory_overlay(&rec.scene, &rec.expert, &predicted, &projection).to_ppm())?;
    println!("wrote {}, {}, {}", depth_path.display(), frames_path.display(), traj_path.display());
    Ok(RenderedEpisode { depth: depth_path, frames: frames_path, trajectory: traj_path, projection, predicted })
}

/// Parses a training log written by `wam train`.
pub fn read_log(path: &Path) -> CliResult<Vec<LossReport>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| LossReport::parse_line(l).map_err(CliError::from)).collect()
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
