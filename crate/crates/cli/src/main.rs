mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crband_core::finegray::fit_mple;
use crband_core::imputation::impute_many;
use crband_core::io::{
    read_dataset_path, write_augmented_long, write_band_csv, write_coverage_csv, write_dataset, write_json, BandSidecar,
};
use crband_core::ipcw::fit_mple_ipcw;
use crband_core::resampling::{bipcw_band, cc_band, wb_mi_band};
use crband_core::simulation::{calibrate_censoring, run_coverage, CensoringLevel, Generator, SimConfig};
use crband_core::{
    band_interval, BandSettings, CenterRule, Completeness, Dataset, Error, ImputationConfig, ImputationMethod,
    IntervalRule, IpcwContext, NewtonOptions, TailRule,
};
use serde_json::json;

use manifest::{digest, manifest_path, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "crband", version, about = "Confidence bands for Fine-Gray cumulative incidence functions")]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true, env = "CRBAND_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the Fine-Gray model and write the fit as JSON
    Fit(FitArgs),
    /// Multiply impute missing censoring times
    Impute(ImputeArgs),
    /// Time-simultaneous confidence band for the cumulative incidence at a covariate value
    Band(BandArgs),
    /// Run the coverage study and write the coverage table
    #[command(visible_alias = "coverage")]
    Simulate(SimulateArgs),
    /// Repeat a run from its manifest
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FitKind {
    Cc,
    Ipcw,
}

#[derive(Args, Debug)]
struct NewtonArgs {
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl NewtonArgs {
    fn options(&self) -> NewtonOptions {
        NewtonOptions { tol: self.tol, max_iter: self.max_iter, ..NewtonOptions::default() }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: FitKind,
    #[command(flatten)]
    newton: NewtonArgs,
    /// Output JSON file
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum GModel {
    Km,
    Cox,
    Uniform,
    Weibull,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Tail {
    Largest,
    Horizon,
}

#[derive(Args, Debug)]
struct ImputationArgs {
    /// Censoring survival model used for the draws
    #[arg(long, value_enum, default_value = "km")]
    g_model: GModel,
    /// Anchor time of the uniform model; give two for the Weibull model
    #[arg(long, num_args = 1..=2, value_delimiter = ',')]
    anchor: Vec<f64>,
    /// End of follow-up; defaults to the largest time in the data
    #[arg(long)]
    horizon: Option<f64>,
    /// Value imputed when the conditional survival never drops far enough
    #[arg(long, value_enum, default_value = "largest")]
    tail: Tail,
}

impl ImputationArgs {
    fn method(&self) -> Result<ImputationMethod> {
        Ok(match (self.g_model, self.anchor.as_slice()) {
            (GModel::Km, _) => ImputationMethod::KaplanMeier,
            (GModel::Cox, _) => ImputationMethod::Cox,
            (GModel::Uniform, [a]) => ImputationMethod::Uniform { anchor: *a },
            (GModel::Weibull, [a, b]) => ImputationMethod::Weibull { anchor1: *a, anchor2: *b },
            (GModel::Uniform, _) => bail!(Error::InvalidArgument("--g-model uniform needs one --anchor".into())),
            (GModel::Weibull, _) => bail!(Error::InvalidArgument("--g-model weibull needs two anchors".into())),
        })
    }

    fn tail_rule(&self) -> TailRule {
        match self.tail {
            Tail::Largest => TailRule::LargestObservedTime,
            Tail::Horizon => TailRule::Horizon,
        }
    }
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long)]
    seed: u64,
    /// Single long-format CSV with an `m` column
    #[arg(long, conflicts_with = "out_dir")]
    out: Option<PathBuf>,
    /// Directory receiving one CSV per augmented dataset
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BandKind {
    Cc,
    Wbmi,
    Bipcw,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Center {
    Subsample,
    Fullmean,
}

#[derive(Args, Debug)]
struct BandArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: BandKind,
    /// Covariate values of the query, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    z: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    i: usize,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[arg(long, value_enum, default_value = "subsample")]
    center: Center,
    /// `deciles` or `t1,t2`
    #[arg(long, default_value = "deciles")]
    interval: String,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    newton: NewtonArgs,
    /// Band CSV; the JSON summary goes next to it
    #[arg(long, default_value = "band.csv")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum GeneratorKind {
    CauseSpecific,
    FgDirect,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `n,censoring,a1,a2`, e.g. `100,light,0.08,0.008`; repeat for more rows
    #[arg(long, required = true)]
    setting: Vec<String>,
    #[arg(long, default_value_t = 500)]
    sims: usize,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    i: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "cause-specific")]
    generator: GeneratorKind,
    /// Cause-1 mass of the fg-direct generator
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, value_enum, default_value = "subsample")]
    center: Center,
    #[arg(long, default_value = "coverage.csv")]
    out: PathBuf,
}

fn center_rule(c: Center) -> CenterRule {
    match c {
        Center::Subsample => CenterRule::SubsampleDraw,
        Center::Fullmean => CenterRule::FullMean,
    }
}

fn parse_interval(arg: &str) -> Result<IntervalRule> {
    if arg == "deciles" {
        return Ok(IntervalRule::SingleSample);
    }
    let parts: Vec<&str> = arg.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok(IntervalRule::Fixed(a.trim().parse()?, b.trim().parse()?)),
        _ => bail!(Error::InvalidArgument(format!("--interval expects `deciles` or `t1,t2`, got `{arg}`"))),
    }
}

fn parse_setting(arg: &str) -> Result<(usize, CensoringLevel, (f64, f64))> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let [n, level, a1, a2] = parts.as_slice() else {
        bail!(Error::InvalidArgument(format!("--setting expects `n,censoring,a1,a2`, got `{arg}`")));
    };
    let level = match *level {
        "light" => CensoringLevel::Light,
        "strong" => CensoringLevel::Strong,
        other => bail!(Error::InvalidArgument(format!("censoring level must be light or strong, got `{other}`"))),
    };
    Ok((n.parse()?, level, (a1.parse()?, a2.parse()?)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn finish(self, primary: &Path, parameters: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let inputs = self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: self.argv,
            parameters,
            seed,
            inputs,
            outputs: self.outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        manifest.write(&manifest_path(primary))
    }
}

fn read(path: &Path, completeness: Option<Completeness>, horizon: Option<f64>) -> Result<Dataset> {
    read_dataset_path(path, completeness, horizon).with_context(|| format!("reading {}", path.display()))
}

fn cmd_fit(args: &FitArgs, mut run: Run) -> Result<()> {
    let opts = args.newton.options();
    let outcome = match args.method {
        FitKind::Cc => fit_mple(&read(&args.data, Some(Completeness::CensoringComplete), None)?, None, &opts),
        FitKind::Ipcw => {
            let d = read(&args.data, None, None)?.degrade_to_incomplete();
            IpcwContext::new(d).and_then(|ctx| fit_mple_ipcw(&ctx, None, &opts))
        }
    };
    let params = json!({ "data": args.data, "method": format!("{:?}", args.method).to_lowercase(),
                         "tol": args.newton.tol, "max_iter": args.newton.max_iter });
    run.inputs.push(args.data.clone());
    run.outputs.push(args.out.clone());
    match outcome {
        Ok(fit) => {
            write_json(create(&args.out)?, &fit)?;
            run.finish(&args.out, params, None)
        }
        Err(Error::NonConvergence(diag)) => {
            let method = params["method"].clone();
            write_json(create(&args.out)?, &json!({ "method": method, "converged": false, "diagnostics": diag }))?;
            run.finish(&args.out, params, None)?;
            Err(Error::NonConvergence(diag).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_impute(args: &ImputeArgs, mut run: Run) -> Result<()> {
    let d = read(&args.data, None, args.imputation.horizon)?.degrade_to_incomplete();
    let method = args.imputation.method()?;
    let g = method.fit(&d, &NewtonOptions::default())?;
    let config = ImputationConfig::new(method, args.seed).with_m(args.m).with_tail_rule(args.imputation.tail_rule());
    let augmented = impute_many(&d, &g, &config)?;
    run.inputs.push(args.data.clone());
    let primary = match (&args.out, &args.out_dir) {
        (Some(out), None) => {
            write_augmented_long(create(out)?, &augmented)?;
            run.outputs.push(out.clone());
            out.clone()
        }
        (None, Some(dir)) => {
            fs::create_dir_all(dir)?;
            let width = args.m.to_string().len();
            for (k, a) in augmented.iter().enumerate() {
                let path = dir.join(format!("augmented_{:0width$}.csv", k + 1));
                write_dataset(create(&path)?, a)?;
                run.outputs.push(path);
            }
            dir.join("impute")
        }
        _ => bail!(Error::InvalidArgument("give exactly one of --out and --out-dir".into())),
    };
    let params = json!({ "data": args.data, "imputation": config, "g_model": g.name(), "horizon": d.horizon() });
    run.finish(&primary, params, Some(args.seed))
}

fn cmd_band(args: &BandArgs, mut run: Run) -> Result<()> {
    let completeness = match args.method {
        BandKind::Cc => Some(Completeness::CensoringComplete),
        _ => None,
    };
    let data = read(&args.data, completeness, args.imputation.horizon)?;
    let interval = band_interval(&data, 1, parse_interval(&args.interval)?)?;
    let mut settings = BandSettings::new(args.z.clone(), args.alpha, args.boot, interval, args.seed);
    settings.newton = args.newton.options();
    let mut params = json!({ "data": args.data, "method": format!("{:?}", args.method).to_lowercase(),
                             "settings": settings });
    let band = match args.method {
        BandKind::Cc => cc_band(&data, &settings)?,
        BandKind::Bipcw => bipcw_band(&data.degrade_to_incomplete(), &settings)?,
        BandKind::Wbmi => {
            let inc = data.degrade_to_incomplete();
            let method = args.imputation.method()?;
            let g = method.fit(&inc, &settings.newton)?;
            let config = ImputationConfig::new(method, args.seed)
                .with_m(args.m)
                .with_tail_rule(args.imputation.tail_rule());
            params["imputation"] = json!(config);
            params["i"] = json!(args.i);
            params["center"] = json!(center_rule(args.center));
            wb_mi_band(&inc, &g, &config, &settings, args.i, center_rule(args.center))?
        }
    };
    let sidecar = args.out.with_extension("json");
    write_band_csv(create(&args.out)?, &band)?;
    write_json(create(&sidecar)?, &BandSidecar::from(&band))?;
    run.inputs.push(args.data.clone());
    run.outputs.extend([args.out.clone(), sidecar]);
    run.finish(&args.out, params, Some(args.seed))
}

fn cmd_simulate(args: &SimulateArgs, mut run: Run) -> Result<()> {
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for arg in &args.setting {
        let (n, level, rates) = parse_setting(arg)?;
        let mut cfg = SimConfig::study(n, level, rates, args.seed);
        cfg.n_sims = args.sims;
        cfg.boot = args.boot;
        cfg.m = args.m;
        cfg.i = args.i;
        cfg.center_rule = center_rule(args.center);
        cfg.generator = match args.generator {
            GeneratorKind::CauseSpecific => Generator::CauseSpecific,
            GeneratorKind::FgDirect => Generator::FineGrayDirect { p: args.p },
        };
        let cal = calibrate_censoring(&cfg)?;
        log::info!("{arg}: c = {:.4}, censoring rate {:.4}", cal.c, cal.rate);
        let report = run_coverage(&cfg, cal.c)?;
        for msg in &report.failure_messages {
            log::warn!("{msg}");
        }
        rows.extend(report.rows);
        configs.push(json!({ "config": cfg, "calibration": cal, "interval": report.interval,
                             "failures": report.failures }));
    }
    write_coverage_csv(create(&args.out)?, &rows)?;
    run.outputs.push(args.out.clone());
    run.finish(&args.out, json!({ "settings": configs }), Some(args.seed))
}

fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let run = |command| Run { command, argv: argv.clone(), started: Instant::now(), inputs: vec![], outputs: vec![] };
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, run("fit")),
        Command::Impute(a) => cmd_impute(a, run("impute")),
        Command::Band(a) => cmd_band(a, run("band")),
        Command::Simulate(a) => cmd_simulate(a, run("simulate")),
        Command::Replay { manifest } => {
            let m = RunManifest::read(manifest)?;
            let stale = m.stale_inputs()?;
            if !stale.is_empty() {
                bail!(Error::InvalidArgument(format!("inputs changed since the manifest was written: {stale:?}")));
            }
            let replayed = Cli::try_parse_from(&m.argv).map_err(|e| anyhow!("manifest argv: {e}"))?;
            if matches!(replayed.command, Command::Replay { .. }) {
                bail!(Error::InvalidArgument("a manifest cannot replay another replay".into()));
            }
            dispatch(&replayed, m.argv)
        }
    }
}

/// 2 for numerical non-convergence, 3 for too many failed bootstrap
/// replicates, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NonConvergence(_) | Error::SingularInformation) => 2,
        Some(Error::FitFailed { first, .. }) if matches!(**first, Error::NonConvergence(_)) => 2,
        Some(Error::TooManyFailedReplicates { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
