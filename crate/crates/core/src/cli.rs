//! The `cdlab` command line: one subcommand per pipeline stage, all driven
//! by a [`RunConfig`] plus `--key value` overrides.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::channel::{build_dataset, write_atomic, DatasetBundle, Mobility};
use crate::config::{RunConfig, SweepKind};
use crate::error::{Error, IoContext, Result};
use crate::eval::{
    cdf_plot_data, evaluate, file_stem, parse_reports_csv, reports_csv, serve_plot_data, serve_trajectory,
    serving_truth, sweep_disturbance, sweep_past_length, sweep_pilot_size, sweep_plot_data, EvalReport,
    InputNoise, Labels, ServeLog, ServeMode,
};
use crate::nn::{Model, ModelSpec, Network, Variant};
use crate::seed;
use crate::train::{run, trace_csv, TrainState};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_ENV: &str = "CDLAB_OUT";
const DEFAULT_OUT: &str = "cdlab-out";
const TRUE_CHANNEL: &str = "true-channel";

#[derive(Parser, Debug)]
#[command(name = "cdlab", version, about = "Channel deduction laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate and write the train and test datasets.
    GenData(Common),
    /// Train one model variant on the training set.
    Train(Common),
    /// Score models on both test sets.
    Eval(Common),
    /// Pilot-size, past-length or disturbance sweep.
    Sweep(Common),
    /// Serve one user along a fresh trajectory, slot by slot.
    Serve(Common),
    /// Rebuild plot tables from earlier reports.
    PlotData(Common),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output root; overrides the CDLAB_OUT environment variable.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel work.
    #[arg(long, short)]
    pub jobs: Option<usize>,
    /// Config overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

/// Resolved config and output root of one invocation.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Self {
        Self { cfg, out: out.into() }
    }

    /// Config file, then overrides; `--out` beats the environment.
    pub fn from_common(common: &Common) -> Result<(Self, Option<usize>)> {
        let mut config = common.config.clone();
        let mut out = common.out.clone();
        let mut jobs = common.jobs;
        let mut pairs = Vec::new();
        let mut it = common.overrides.iter();
        while let Some(tok) = it.next() {
            let key = tok
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key, got {tok:?}")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| Error::Config(format!("--{key} needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            match key.as_str() {
                "config" => config = Some(value.into()),
                "out" => out = Some(value.into()),
                "jobs" => {
                    jobs = Some(value.parse().map_err(|_| Error::Config(format!("--jobs: bad count {value:?}")))?)
                }
                _ => pairs.push((key.replace('-', "_"), value)),
            }
        }
        let mut cfg = match &config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        let out = out
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok((Self { cfg, out }, jobs))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.cfg.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn model_dir(&self, spec: &ModelSpec) -> PathBuf {
        self.out.join("models").join(model_stem(spec))
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).at(&d)?;
        Ok(d)
    }

    fn echo_into(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("config.txt"), self.cfg.echo().as_bytes())
    }

    fn load_data(&self) -> Result<DatasetBundle> {
        let dir = self.data_dir();
        DatasetBundle::load(&dir).map_err(|e| Error::Config(format!("dataset at {}: {e}", dir.display())))
    }
}

/// Directory name identifying a model spec.
pub fn model_stem(spec: &ModelSpec) -> String {
    format!(
        "{}-n{}-p{}x{}-k{}.{}.{}-s{}-h{}-f{}-e{}",
        spec.variant,
        spec.past,
        spec.pilot_t,
        spec.pilot_c,
        spec.k1,
        spec.k2,
        spec.k3,
        spec.width,
        spec.heads,
        spec.ff_width,
        spec.estimation_depth
    )
}

pub fn cmd_gen_data(ctx: &Context) -> Result<DatasetBundle> {
    let bundle = build_dataset(&ctx.cfg.scenario, &ctx.cfg.counts, ctx.cfg.data_seed())?;
    let dir = ctx.data_dir();
    bundle.save(&dir)?;
    let manifest = format!(
        "root_seed={}\ndata_seed={}\nscene_seed={}\ntrain_area={}\ntest_area={}\n",
        ctx.cfg.seed,
        ctx.cfg.data_seed(),
        ctx.cfg.scenario.scene_seed,
        ctx.cfg.scenario.train_area.to_text(),
        ctx.cfg.scenario.test_area.to_text()
    );
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;
    ctx.echo_into(&dir)?;
    Ok(bundle)
}

/// Trains `spec` into its model directory, resuming from the saved state
/// when `resume` is set.
fn train_spec(ctx: &Context, spec: &ModelSpec, data: &DatasetBundle) -> Result<TrainState> {
    let tcfg = ctx.cfg.train_config();
    let dir = ctx.model_dir(spec);
    std::fs::create_dir_all(&dir).at(&dir)?;
    let state_path = dir.join("state.ckpt");
    let mut state = if ctx.cfg.resume && state_path.exists() {
        let s = TrainState::load(&state_path)?;
        if &s.network.spec != spec {
            return Err(Error::Config(format!(
                "saved state in {} was trained with a different spec",
                dir.display()
            )));
        }
        s
    } else {
        TrainState::fresh(spec.clone(), tcfg.seed)?
    };
    run(&mut state, &data.train, &tcfg, tcfg.steps, |s| {
        s.save(dir.join(format!("state-{:06}.ckpt", s.step())))?;
        s.save(&state_path)
    })?;
    state.save(&state_path)?;
    state.network.save(dir.join("model.ckpt"))?;
    write_atomic(&dir.join("loss.csv"), trace_csv(&state.trace).as_bytes())?;
    ctx.echo_into(&dir)?;
    Ok(state)
}

pub fn cmd_train(ctx: &Context) -> Result<TrainState> {
    let spec = ctx.cfg.model_spec(ctx.cfg.model.variant);
    spec.validate()?;
    let data = ctx.load_data()?;
    train_spec(ctx, &spec, &data)
}

/// The saved model for `spec`, trained on the spot when allowed.
fn obtain(ctx: &Context, spec: &ModelSpec, data: Option<&DatasetBundle>) -> Result<Model> {
    let path = ctx.model_dir(spec).join("model.ckpt");
    if path.exists() {
        let net = Network::load(&path)?;
        if &net.spec != spec {
            return Err(Error::Config(format!(
                "checkpoint {} holds {}x{} {} but the config asks for {}x{} {}",
                path.display(),
                net.spec.n_t,
                net.spec.n_c,
                net.spec.variant,
                spec.n_t,
                spec.n_c,
                spec.variant
            )));
        }
        return Ok(Model::Net(net));
    }
    if ctx.cfg.train_in_place {
        let state = match data {
            Some(d) => train_spec(ctx, spec, d)?,
            None => train_spec(ctx, spec, &ctx.load_data()?)?,
        };
        return Ok(Model::Net(state.network));
    }
    Err(Error::Config(format!(
        "missing checkpoint {} (train it first or set train_in_place = true)",
        path.display()
    )))
}

fn named_model(ctx: &Context, name: &str, data: Option<&DatasetBundle>) -> Result<Model> {
    if name == TRUE_CHANNEL {
        let spec = ctx.cfg.model_spec(ctx.cfg.model.variant);
        return Ok(Model::TrueChannel {
            past: spec.past,
            pattern: spec.pattern()?,
        });
    }
    let variant: Variant = name.parse()?;
    obtain(ctx, &ctx.cfg.model_spec(variant), data)
}

fn network_specs(ctx: &Context) -> Result<Vec<ModelSpec>> {
    ctx.cfg
        .models
        .iter()
        .map(|name| {
            let v: Variant = name
                .parse()
                .map_err(|_| Error::Config(format!("{name:?} cannot be trained inside a sweep")))?;
            Ok(ctx.cfg.model_spec(v))
        })
        .collect()
}

fn write_reports(ctx: &Context, dir: &Path, reports: &[EvalReport]) -> Result<()> {
    write_atomic(&dir.join("report.csv"), reports_csv(reports).as_bytes())?;
    let samples = dir.join("samples");
    std::fs::create_dir_all(&samples).at(&samples)?;
    for r in reports {
        let mut s = String::from("index,nmse\n");
        for (i, v) in r.per_sample.iter().enumerate() {
            s.push_str(&format!("{i},{v:e}\n"));
        }
        write_atomic(&samples.join(format!("{}.csv", r.stem())), s.as_bytes())?;
    }
    write_atomic(&dir.join("plot.csv"), sweep_plot_data(reports).as_bytes())?;
    write_atomic(&dir.join("cdf.csv"), cdf_plot_data(reports).as_bytes())?;
    ctx.echo_into(dir)
}

pub fn cmd_eval(ctx: &Context) -> Result<Vec<EvalReport>> {
    let data = ctx.load_data()?;
    let mut reports = Vec::new();
    for name in &ctx.cfg.models {
        let model = named_model(ctx, name, Some(&data))?;
        for m in [Mobility::Mobile, Mobility::QuasiStatic] {
            let labels = Labels::new("eval", "clean", ctx.cfg.seed);
            reports.push(evaluate(&model, data.test_set(m), &InputNoise::none(), &labels)?);
        }
    }
    write_reports(ctx, &ctx.subdir("eval")?, &reports)?;
    Ok(reports)
}

pub fn cmd_sweep(ctx: &Context) -> Result<Vec<EvalReport>> {
    let data = ctx.load_data()?;
    let cfg = &ctx.cfg;
    let provider = |spec: &ModelSpec| obtain(ctx, spec, Some(&data));
    let reports = match cfg.sweep {
        SweepKind::PilotSize => sweep_pilot_size(&provider, &network_specs(ctx)?, &data, &cfg.pilot_sizes, cfg.seed)?,
        SweepKind::PastLength => {
            let mut all = Vec::new();
            for spec in network_specs(ctx)?.iter().filter(|s| s.variant.uses_past()) {
                all.extend(sweep_past_length(&provider, spec, &data, &cfg.past_lengths, cfg.seed)?);
            }
            all
        }
        SweepKind::Disturbance => {
            let models = cfg
                .models
                .iter()
                .map(|n| named_model(ctx, n, Some(&data)))
                .collect::<Result<Vec<_>>>()?;
            sweep_disturbance(&models, &data, &cfg.sigmas, cfg.disturb_mode, cfg.seed)?
        }
    };
    let dir = ctx.subdir(&format!("sweep/{}", cfg.sweep.name()))?;
    write_reports(ctx, &dir, &reports)?;
    Ok(reports)
}

pub fn cmd_serve(ctx: &Context) -> Result<Vec<ServeLog>> {
    let cfg = &ctx.cfg;
    let truth = serving_truth(&cfg.scenario, Mobility::Mobile, cfg.serve_slots, seed::derive(cfg.seed, "serve", 0))?;
    let dir = ctx.subdir("serve")?;
    let mut logs = Vec::new();
    for name in &cfg.models {
        let model = named_model(ctx, name, None)?;
        for &mode in &cfg.serve_modes {
            let log = serve_trajectory(&model, &truth, model.past_len(), mode, &InputNoise::none())?;
            let stem = file_stem(&["serve", &log.model, mode.name(), &cfg.seed.to_string()]);
            write_atomic(&dir.join(format!("{stem}.csv")), log.to_csv().as_bytes())?;
            logs.push(log);
        }
    }
    write_atomic(&dir.join("plot.csv"), serve_plot_data(&logs).as_bytes())?;
    ctx.echo_into(&dir)?;
    Ok(logs)
}

fn parse_serve_csv(text: &str, model: &str, mode: ServeMode) -> Result<ServeLog> {
    let rows = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("serve row {l:?}"));
            Ok(crate::eval::ServeRow {
                slot: f.first().ok_or_else(bad)?.parse().map_err(|_| bad())?,
                nmse: f.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?,
                window: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ServeLog {
        model: model.to_string(),
        mode,
        past: 0,
        rows,
    })
}

/// Rebuilds `plots/` from report tables and serve logs under the output
/// root. Returns the files written.
pub fn cmd_plot_data(ctx: &Context) -> Result<Vec<PathBuf>> {
    let plots = ctx.subdir("plots")?;
    let mut written = Vec::new();
    let mut tables = vec![ctx.out.join("eval")];
    if let Ok(rd) = std::fs::read_dir(ctx.out.join("sweep")) {
        let mut dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        tables.extend(dirs);
    }
    for dir in tables {
        let path = dir.join("report.csv");
        if !path.exists() {
            continue;
        }
        let mut reports = parse_reports_csv(&std::fs::read_to_string(&path).at(&path)?)?;
        for r in &mut reports {
            let p = dir.join("samples").join(format!("{}.csv", r.stem()));
            if let Ok(text) = std::fs::read_to_string(&p) {
                r.per_sample = text
                    .lines()
                    .skip(1)
                    .filter_map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()))
                    .collect();
            }
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("report").to_string();
        let target = plots.join(format!("{name}.csv"));
        write_atomic(&target, sweep_plot_data(&reports).as_bytes())?;
        written.push(target);
        if reports.iter().all(|r| !r.per_sample.is_empty()) && !reports.is_empty() {
            let target = plots.join(format!("{name}-cdf.csv"));
            write_atomic(&target, cdf_plot_data(&reports).as_bytes())?;
            written.push(target);
        }
    }
    if let Ok(rd) = std::fs::read_dir(ctx.out.join("serve")) {
        let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        let mut logs = Vec::new();
        for f in files {
            let Some(stem) = f.file_stem().and_then(|s| s.to_str()) else { continue };
            let parts: Vec<&str> = stem.split('_').collect();
            if let ["serve", model, mode, _seed] = parts[..] {
                let Ok(mode) = mode.parse::<ServeMode>() else { continue };
                logs.push(parse_serve_csv(&std::fs::read_to_string(&f).at(&f)?, model, mode)?);
            }
        }
        if !logs.is_empty() {
            let target = plots.join("serve.csv");
            write_atomic(&target, serve_plot_data(&logs).as_bytes())?;
            written.push(target);
        }
    }
    ctx.echo_into(&plots)?;
    Ok(written)
}

fn dispatch(cli: Cli) -> Result<()> {
    let (Command::GenData(c)
    | Command::Train(c)
    | Command::Eval(c)
    | Command::Sweep(c)
    | Command::Serve(c)
    | Command::PlotData(c)) = &cli.command;
    let (ctx, jobs) = Context::from_common(c)?;
    if let Some(j) = jobs {
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match cli.command {
        Command::GenData(_) => {
            let b = cmd_gen_data(&ctx)?;
            eprintln!(
                "wrote {} train, {} mobile and {} quasi-static sequences to {}",
                b.train.len(),
                b.test_mobile.len(),
                b.test_quasi_static.len(),
                ctx.data_dir().display()
            );
        }
        Command::Train(_) => {
            let s = cmd_train(&ctx)?;
            let last = s.trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
            eprintln!("trained {} to step {} (last loss {last:.4e})", s.network.spec.variant, s.step());
        }
        Command::Eval(_) | Command::Sweep(_) => {
            let reports = if matches!(cli.command, Command::Eval(_)) {
                cmd_eval(&ctx)?
            } else {
                cmd_sweep(&ctx)?
            };
            for r in &reports {
                eprintln!("{:<14} {:<10} {:<12} {:>9.3} dB  rho {:.4}", r.model, r.cell, r.test_set, r.nmse_db, r.rho);
            }
        }
        Command::Serve(_) => {
            for log in cmd_serve(&ctx)? {
                let v = log.nmse();
                let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                eprintln!("{:<14} {:<14} {} slots, mean NMSE {:.4e}", log.model, log.mode, v.len(), mean);
            }
        }
        Command::PlotData(_) => {
            for p in cmd_plot_data(&ctx)? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand. Errors go
/// to standard error with a nonzero exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
