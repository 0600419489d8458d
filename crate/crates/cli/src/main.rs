use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfa_core::baseline::run_baseline;
use qfa_core::data::{ErrorKind, GrowthCurve, Repeat, Screen};
use qfa_core::diagnostics::report;
use qfa_core::error::{Error, Result};
use qfa_core::hierarchy::{
    fit_ihm, fit_jhm, fit_shm, fitness_products, generate_screen, shm_fitnesses, GeneratorConfig, JhmVariant,
    ScreenFitOptions,
};
use qfa_core::io::{self as qio, LoadOptions, RunConfig};
use qfa_core::lna::ModelKind;
use qfa_core::mcmc::{fit_sde, fit_sde_exact, Chain, ExactOptions, SdeFitOptions};
use qfa_core::rng::derive_seed;
use qfa_core::sde::{linspace, named_params, observe, simulate_paths, SdeKind, SdeParams, DEFAULT_SUBSTEPS};

#[derive(Parser)]
#[command(name = "qfa-infer", version, about = "Growth-curve and genetic interaction inference for QFA screens")]
struct Cli {
    /// Worker threads.
    #[arg(long, global = true, env = "QFA_INFER_THREADS")]
    threads: Option<usize>,
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, e.g. `--set growth.k_mu=-2` or `--set priors=sde-priors`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate growth paths or a planted two-condition screen.
    Simulate(SimulateArgs),
    /// Fit one growth curve with an SDE approximation or the exact sampler.
    FitGrowth(FitGrowthArgs),
    /// Fit the hierarchical interaction models to a screen.
    FitScreen(FitScreenArgs),
    /// Frequentist per-gene comparison with FDR control.
    Baseline(BaselineArgs),
    /// ESS, Heidelberger-Welch and autocorrelation for every column of a chain.
    Diagnose(DiagnoseArgs),
    /// Fitness-plot table from an interaction or baseline result file.
    ExportPlotData(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimPreset {
    Fig4nonu,
    RowA,
    RowE,
    RowI,
}

impl SimPreset {
    fn key(self) -> &'static str {
        match self {
            SimPreset::Fig4nonu => "fig4nonu",
            SimPreset::RowA => "row-a",
            SimPreset::RowE => "row-e",
            SimPreset::RowI => "row-i",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScreenSize {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Diffusion {
    Slgm,
    DemographicSqrt,
    DemographicSym,
}

#[derive(Clone, Copy, ValueEnum)]
enum ErrorModel {
    Normal,
    Lognormal,
}

impl From<ErrorModel> for ErrorKind {
    fn from(e: ErrorModel) -> Self {
        match e {
            ErrorModel::Normal => ErrorKind::Normal,
            ErrorModel::Lognormal => ErrorKind::LogNormal,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Named parameter set for path simulation.
    #[arg(long, value_enum, conflicts_with = "screen")]
    preset: Option<SimPreset>,
    /// Generate a planted screen instead of paths.
    #[arg(long, value_enum)]
    screen: Option<ScreenSize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Measurement error scale; 0 records the latent paths.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_enum, default_value = "normal")]
    error: ErrorModel,
    #[arg(long, value_enum, default_value = "slgm")]
    diffusion: Diffusion,
    #[arg(long, default_value_t = 100)]
    paths: usize,
    #[arg(long, default_value_t = 27)]
    points: usize,
    #[arg(long, default_value_t = 6.0)]
    t_end: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    substeps: usize,
    /// Output TSV in the screen format.
    #[arg(long)]
    out: PathBuf,
    /// Planted-truth JSON for screens.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GrowthModel {
    Rrtr,
    Lnam,
    Lnaa,
    Exact,
}

#[derive(Args)]
struct FitGrowthArgs {
    #[arg(long)]
    data: PathBuf,
    /// Gene to fit; defaults to the first in the file.
    #[arg(long)]
    orf: Option<String>,
    /// Repeat id; defaults to the gene's first repeat.
    #[arg(long)]
    repeat: Option<String>,
    #[arg(long, value_enum, default_value = "lnaa")]
    model: GrowthModel,
    #[arg(long, value_enum, default_value = "normal")]
    error: ErrorModel,
    /// Drop observations at or below zero before fitting a log-scale model.
    #[arg(long)]
    drop_nonpositive: bool,
    /// Chain CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScreenInput {
    /// Tab-delimited screen export with a Treatment column.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "control")]
    control: String,
    #[arg(long, default_value = "query")]
    query: String,
    /// File of genes to leave out, one per line.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Drop cultures on plate edges.
    #[arg(long)]
    drop_edges: bool,
}

#[derive(Args)]
struct FitScreenArgs {
    #[command(flatten)]
    input: ScreenInput,
    /// Joint growth and interaction model.
    #[arg(long, conflicts_with = "two_stage")]
    one_stage: bool,
    /// Separate growth fits followed by the fitness-level interaction model.
    #[arg(long)]
    two_stage: bool,
    /// Plate batch effects (one-stage only).
    #[arg(long, conflicts_with = "transform")]
    batch: bool,
    /// Condition-specific scale transformation (one-stage only).
    #[arg(long)]
    transform: bool,
    /// Interaction result CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional chain CSV.
    #[arg(long)]
    chain: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    input: ScreenInput,
    /// Inoculum density held fixed in the curve fits; defaults to the prior location.
    #[arg(long)]
    inoculum: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    chain: PathBuf,
    #[arg(long, default_value_t = 40)]
    max_lag: usize,
    /// JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_input(input: &ScreenInput, cfg: &RunConfig) -> Result<qfa_core::data::ScreenDataset> {
    let exclude = match input.exclude.as_ref().or(cfg.exclude.as_ref()) {
        Some(p) => qio::read_gene_list(p)?,
        None => Default::default(),
    };
    let opts = LoadOptions { drop_edges: input.drop_edges, exclude };
    qio::load_screen(&input.data, &input.control, &input.query, &opts)
}

fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<()> {
    if let Some(size) = a.screen {
        let gen = match size {
            ScreenSize::Desk => GeneratorConfig::desk(),
            ScreenSize::Paper => GeneratorConfig::paper(),
        };
        let g = generate_screen(&cfg.hyper, &gen, derive_seed(cfg.seed, "simulate-screen"))?;
        qio::write_screens(create(&a.out)?, &[&g.dataset.control, &g.dataset.query])?;
        if let Some(t) = &a.truth {
            qio::write_json(create(t)?, &g.truth)?;
        }
        eprintln!("wrote {} genes, {} planted, to {}", gen.genes, g.planted_genes().len(), a.out.display());
        return Ok(());
    }
    let base = match a.preset {
        Some(p) => named_params(p.key()).expect("listed preset"),
        None if a.k.is_some() && a.r.is_some() && a.p.is_some() => SdeParams::new(0.0, 0.0, 0.0, 0.0, 0.0),
        None => return Err(Error::Config("simulate needs --preset, --screen, or all of --k --r --p".into())),
    };
    let g = &base.growth;
    let params = SdeParams::new(
        a.k.unwrap_or(g.k),
        a.r.unwrap_or(g.r),
        a.p.unwrap_or(g.p),
        a.sigma.unwrap_or(base.sigma),
        a.nu.unwrap_or(base.nu),
    );
    let kind = match a.diffusion {
        Diffusion::Slgm => SdeKind::Slgm,
        Diffusion::DemographicSqrt => SdeKind::DemographicSqrt,
        Diffusion::DemographicSym => SdeKind::DemographicSym,
    };
    let grid = linspace(0.0, a.t_end, a.points);
    let paths = simulate_paths(&params, kind, &grid, a.substeps, a.paths, derive_seed(cfg.seed, "simulate-paths"))?;
    let mut screen = Screen::new("simulated");
    let reps = paths
        .iter()
        .enumerate()
        .map(|(i, traj)| {
            let curve = if params.nu > 0.0 {
                observe(traj, a.error.into(), params.nu, derive_seed(traj.seed, "observe"))
            } else {
                GrowthCurve { times: traj.times.clone(), values: traj.values.clone() }
            };
            Repeat { id: (i + 1).to_string(), batch: None, curve }
        })
        .collect();
    screen.genes.insert("sim".into(), reps);
    qio::write_screens(create(&a.out)?, &[&screen])?;
    eprintln!(
        "wrote {} paths (K={}, r={}, P={}, sigma={}, nu={}) to {}",
        a.paths,
        params.growth.k,
        params.growth.r,
        params.growth.p,
        params.sigma,
        params.nu,
        a.out.display()
    );
    Ok(())
}

fn summarise(chain: &Chain) -> BTreeMap<String, (f64, f64)> {
    chain.names.iter().map(|n| (n.clone(), (chain.mean(n).unwrap_or(f64::NAN), chain.sd(n).unwrap_or(f64::NAN)))).collect()
}

fn fit_growth(a: &FitGrowthArgs, cfg: &RunConfig) -> Result<()> {
    let screen = qio::load_condition(&a.data, "data", &LoadOptions::default())?;
    let (gene, reps) = match &a.orf {
        Some(o) => screen.genes.get_key_value(o).ok_or_else(|| Error::Data(format!("no ORF {o:?} in {}", a.data.display())))?,
        None => screen.genes.iter().next().ok_or_else(|| Error::Data(format!("{} holds no curves", a.data.display())))?,
    };
    let rep = match &a.repeat {
        Some(id) => reps.iter().find(|r| &r.id == id).ok_or_else(|| Error::Data(format!("ORF {gene} has no repeat {id:?}")))?,
        None => reps.first().ok_or_else(|| Error::Data(format!("ORF {gene} has no repeats")))?,
    };
    let schedule = cfg.sde_schedule()?;
    let chain = match a.model {
        GrowthModel::Exact => {
            let mut o = ExactOptions::new(a.error.into());
            (o.priors, o.schedule, o.seed) = (cfg.sde_priors, schedule, cfg.seed);
            fit_sde_exact(&rep.curve, &o)?
        }
        m => {
            let kind = match m {
                GrowthModel::Rrtr => ModelKind::Rrtr,
                GrowthModel::Lnam => ModelKind::Lnam,
                _ => ModelKind::Lnaa,
            };
            let mut o = SdeFitOptions::new(kind, a.error.into());
            (o.priors, o.schedule, o.seed) = (cfg.sde_priors, schedule, cfg.seed);
            if a.drop_nonpositive && kind.log_scale() {
                let kept = rep.curve.positive_only();
                eprintln!("dropped {} non-positive observations", rep.curve.len() - kept.len());
                fit_sde(&kept, &o)?
            } else {
                fit_sde(&rep.curve, &o)?
            }
        }
    };
    qio::save_chain(&a.out, &chain)?;
    qio::write_json(io::stdout().lock(), &summarise(&chain))?;
    println!();
    Ok(())
}

fn fit_screen(a: &FitScreenArgs, cfg: &RunConfig) -> Result<()> {
    let data = load_input(&a.input, cfg)?;
    let opts = ScreenFitOptions { hyper: cfg.hyper, schedule: cfg.screen_schedule()?, seed: cfg.seed, ..Default::default() };
    let two_stage = a.two_stage || (!a.one_stage && cfg.model.as_deref() == Some("two-stage"));
    let (results, chain) = if two_stage {
        if a.batch || a.transform {
            return Err(Error::Config("--batch and --transform apply to the one-stage model only".into()));
        }
        let c = fit_shm(&data.control, &ScreenFitOptions { seed: derive_seed(cfg.seed, "shm-control"), ..opts.clone() })?;
        let q = fit_shm(&data.query, &ScreenFitOptions { seed: derive_seed(cfg.seed, "shm-query"), ..opts.clone() })?;
        let fit = fit_ihm(&fitness_products(&shm_fitnesses(&c)), &fitness_products(&shm_fitnesses(&q)), &opts)?;
        if !fit.skipped.is_empty() {
            eprintln!("skipped genes without repeats in both conditions: {}", fit.skipped.join(", "));
        }
        (fit.results, fit.chain)
    } else {
        let variant = match (a.batch, a.transform) {
            (true, _) => JhmVariant::Batch,
            (_, true) => JhmVariant::Transform,
            _ => JhmVariant::Plain,
        };
        let fit = fit_jhm(&data, variant, &opts)?;
        (fit.results, fit.chain)
    };
    qio::write_interactions(create(&a.out)?, &results)?;
    if let Some(p) = &a.chain {
        qio::write_chain(create(p)?, &chain)?;
    }
    let hits = results.iter().filter(|r| r.classification.is_interaction()).count();
    eprintln!("{} genes, {hits} interactions; results in {}", results.len(), a.out.display());
    Ok(())
}

fn baseline(a: &BaselineArgs, cfg: &RunConfig) -> Result<()> {
    let data = load_input(&a.input, cfg)?;
    let p = a.inoculum.unwrap_or(cfg.hyper.growth.p_mu.exp());
    let rep = run_baseline(&data, p)?;
    for (g, why) in &rep.skipped {
        eprintln!("skipped {g}: {why}");
    }
    qio::write_baseline(create(&a.out)?, &rep.results)?;
    eprintln!("{} genes tested, {} significant; results in {}", rep.results.len(), rep.significant_genes().len(), a.out.display());
    Ok(())
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    let chain = qio::load_chain(&a.chain)?;
    if chain.is_empty() {
        return Err(Error::Data(format!("{} holds no draws", a.chain.display())));
    }
    let rep = report(&chain, a.max_lag);
    match &a.out {
        Some(p) => qio::write_json(create(p)?, &rep)?,
        None => {
            qio::write_json(io::stdout().lock(), &rep)?;
            println!();
        }
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let points = qio::read_plot_points(File::open(&a.results)?, &a.results)?;
    qio::write_plot_points(create(&a.out)?, &points)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, &cfg),
        Command::FitGrowth(a) => fit_growth(a, &cfg),
        Command::FitScreen(a) => fit_screen(a, &cfg),
        Command::Baseline(a) => baseline(a, &cfg),
        Command::Diagnose(a) => diagnose(a),
        Command::ExportPlotData(a) => export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qfa-infer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
