//! Command-line surface. Exit codes: 0 success, 1 usage problems (bad
//! flags or argument values), 2 data problems (unreadable or invalid
//! inputs, failed computations).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dists::{
    chi2_sf, f_cdf, hedges_j, hedges_j_approx, ln_gamma, noncentral_f_cdf, normal_quantile,
    solve_chi2_ncp, NoncentralFParams,
};
use crate::effects::{derive_effect, steiger_ci, StudySummary};
use crate::io::{
    analyze_effects, derive_studies, expand_config, load_simulate_config, read_studies_csv,
    render_report, render_svg, write_manifest, write_results_csv, RunManifest,
};
use crate::magnitude::extra_coverage_same_sign;
use crate::simulation::{
    default_grid, mix_seed, run_scenario, smoke_grid, summarize, MethodTag, ScenarioConfig,
    ScenarioResult,
};
use crate::{Error, Result};

const DEFAULT_REPS: u32 = 2000;
const FULL_REPS: u32 = 10_000;
const DEFAULT_SEED: u64 = 1729;

/// Environment variable consulted for the worker count when --workers is
/// not given.
pub const THREADS_ENV: &str = "MAGMETA_THREADS";

#[derive(Parser)]
#[command(
    name = "magmeta",
    version,
    about = "Meta-analysis of magnitude effects (squared and absolute standardized mean differences)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation scenarios and write summary rows as CSV.
    Simulate(SimulateArgs),
    /// Analyze a CSV of studies and emit a magnitude meta-analysis report.
    Analyze(AnalyzeArgs),
    /// Profile confidence interval for a single study's delta^2 and |delta|.
    Ci(CiArgs),
    /// Run the built-in oracle suite and report each check.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mp,
    Ssc,
    Kdb,
}

impl From<MethodArg> for MethodTag {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mp => MethodTag::Mp,
            MethodArg::Ssc => MethodTag::Ssc,
            MethodArg::Kdb => MethodTag::Kdb,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario grid: "default" (full design) or "smoke" (small
    /// subset for quick runs).
    #[arg(long, conflicts_with = "config")]
    grid: Option<String>,
    /// Scenario config file (TOML); see the README for the schema.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replications per scenario.
    #[arg(long, conflicts_with = "full")]
    reps: Option<u32>,
    /// Use the large-scale replication count (10,000).
    #[arg(long)]
    full: bool,
    /// Base seed; scenario and replication streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write panel plots (one metric vs tau^2) to this SVG file.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Metric plotted when --svg is given.
    #[arg(long, default_value = "bias_tau2")]
    svg_metric: String,
    /// Heterogeneity method to run; repeatable. Defaults to mp and ssc.
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
    /// Worker threads. Falls back to MAGMETA_THREADS, then to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Studies CSV: either study_id,n_t,n_c,mean_t,mean_c,sd_t,sd_c or
    /// study_id,n_t,n_c,d.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap draws for the test references; values >= 1000 switch the
    /// tests from the chi-square reference to the exact bootstrap.
    #[arg(long, default_value_t = 0)]
    bootstrap_b: u64,
    /// Seed for the bootstrap stream.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Heterogeneity method to report; repeatable. Defaults to mp and ssc.
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
}

#[derive(Args)]
struct CiArgs {
    /// Observed standardized mean difference.
    #[arg(long)]
    d: f64,
    /// Treatment-arm size.
    #[arg(long)]
    nt: u64,
    /// Control-arm size.
    #[arg(long)]
    nc: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

/// Parses argv and runs the chosen subcommand, mapping errors to the
/// documented exit codes.
pub fn cli_dispatch(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors print to stderr and exit 1.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_default_env().try_init();
    let result = match cli.command {
        Command::Simulate(args) => run_simulate(&args),
        Command::Analyze(args) => run_analyze(&args),
        Command::Ci(args) => run_ci(&args),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Domain(_) => 1,
                Error::Data(_) | Error::Convergence(_) | Error::Io(_) | Error::Csv(_) => 2,
            }
        }
    }
}

fn resolve_methods(methods: &[MethodArg]) -> Vec<MethodTag> {
    if methods.is_empty() {
        vec![MethodTag::Mp, MethodTag::Ssc]
    } else {
        methods.iter().map(|&m| m.into()).collect()
    }
}

fn resolve_workers(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(w) = flag {
        return Ok(Some(w));
    }
    match std::env::var(THREADS_ENV) {
        Ok(raw) => {
            let w: usize = raw.trim().parse().map_err(|_| {
                Error::domain(format!(
                    "{THREADS_ENV} must be a positive integer, got {raw:?}"
                ))
            })?;
            if w == 0 {
                return Err(Error::domain(format!("{THREADS_ENV} must be positive")));
            }
            Ok(Some(w))
        }
        Err(_) => Ok(None),
    }
}

fn build_scenarios(args: &SimulateArgs) -> Result<Vec<ScenarioConfig>> {
    let reps = if args.full {
        FULL_REPS
    } else {
        args.reps.unwrap_or(DEFAULT_REPS)
    };
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let methods = resolve_methods(&args.methods);
    if let Some(path) = &args.config {
        let config = load_simulate_config(path)?;
        return expand_config(&config, args.reps, args.seed, DEFAULT_REPS, DEFAULT_SEED);
    }
    match args.grid.as_deref().unwrap_or("default") {
        "default" => Ok(default_grid(seed, reps, &methods)),
        "smoke" => Ok(smoke_grid(seed, reps, &methods)),
        other => Err(Error::domain(format!(
            "unknown grid {other:?}; expected \"default\" or \"smoke\""
        ))),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let scenarios = build_scenarios(args)?;
    let run = || -> Result<Vec<ScenarioResult>> {
        scenarios
            .iter()
            .enumerate()
            .map(|(i, config)| {
                let result = run_scenario(config)?;
                log::info!(
                    "scenario {}/{} ({}) done in {:.2?}",
                    i + 1,
                    scenarios.len(),
                    config.scenario_id(),
                    result.elapsed
                );
                Ok(result)
            })
            .collect()
    };
    let results = match resolve_workers(args.workers)? {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::data(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    }?;
    let rows = summarize(&results);
    write_results_csv(&rows, &args.out)?;

    let mut manifest = RunManifest::new("simulate");
    manifest.config_path = args.config.as_ref().map(|p| p.display().to_string());
    manifest.seed = Some(args.seed.unwrap_or(DEFAULT_SEED));
    manifest.output_paths = vec![args.out.display().to_string()];
    if let Some(svg_path) = &args.svg {
        let svg = render_svg(&rows, &args.svg_metric);
        std::fs::write(svg_path, svg)?;
        manifest.output_paths.push(svg_path.display().to_string());
        write_manifest(&manifest, svg_path)?;
    }
    write_manifest(&manifest, &args.out)?;
    println!(
        "wrote {} rows from {} scenarios to {}",
        rows.len(),
        results.len(),
        args.out.display()
    );
    Ok(())
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let studies = read_studies_csv(&args.input)?;
    let effects = derive_studies(&studies)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = analyze_effects(
        &effects,
        &resolve_methods(&args.methods),
        args.alpha,
        args.bootstrap_b,
        &mut rng,
    )?;
    let text = render_report(&report);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            let mut manifest = RunManifest::new("analyze");
            manifest.input_path = Some(args.input.display().to_string());
            manifest.seed = Some(args.seed);
            manifest.output_paths = vec![path.display().to_string()];
            write_manifest(&manifest, path)?;
            println!("wrote report to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

// Human-facing number: six decimals with trailing zeros trimmed.
fn trim6(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" || s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn run_ci(args: &CiArgs) -> Result<()> {
    let effect = derive_effect(StudySummary::Precomputed {
        d: args.d,
        n_t: args.nt,
        n_c: args.nc,
    })?;
    let (delta2_ci, abs_ci) = steiger_ci(effect.d, effect.m, effect.n_eff, args.alpha)?;
    let pct = (1.0 - args.alpha) * 100.0;
    println!(
        "d = {}, g = {}, m = {}, n_eff = {}",
        trim6(effect.d),
        trim6(effect.g),
        effect.m,
        trim6(effect.n_eff)
    );
    println!(
        "delta^2 {}% CI: [{}, {}]",
        trim6(pct),
        trim6(delta2_ci.lower),
        trim6(delta2_ci.upper)
    );
    println!(
        "|delta| {}% CI: [{}, {}]",
        trim6(pct),
        trim6(abs_ci.lower),
        trim6(abs_ci.upper)
    );
    Ok(())
}

fn check(name: &str, ok: bool, failures: &mut Vec<String>) {
    if ok {
        println!("ok      {name}");
    } else {
        println!("FAILED  {name}");
        failures.push(name.to_string());
    }
}

fn run_selftest() -> Result<()> {
    let mut failures = Vec::new();

    check(
        "normal quantile anchor",
        (normal_quantile(0.975)? - 1.959_963_984_540_054).abs() < 1e-12,
        &mut failures,
    );
    check(
        "log-gamma half-integer",
        (ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14,
        &mut failures,
    );
    check(
        "small-sample bias factor",
        (hedges_j(38)? - hedges_j_approx(38)?).abs() < 1e-4,
        &mut failures,
    );
    check(
        "chi-square tail anchor",
        (chi2_sf(11.0705, 5)? - 0.05).abs() < 1e-4,
        &mut failures,
    );
    let central = {
        let params = NoncentralFParams::new(1, 38, 0.0)?;
        (noncentral_f_cdf(2.5, &params)? - f_cdf(2.5, 1, 38)?).abs() <= 1e-10
    };
    check("noncentral F central reduction", central, &mut failures);
    let r = -normal_quantile(0.025)?;
    check(
        "mirror-coverage anchor",
        (extra_coverage_same_sign(r, 0.05, 0.025)? - 0.025).abs() / 0.025 < 0.02,
        &mut failures,
    );
    let (delta2_ci, _) = steiger_ci(0.0, 38, 10.0, 0.05)?;
    check(
        "degenerate profile interval",
        delta2_ci.lower == 0.0 && delta2_ci.upper == 0.0,
        &mut failures,
    );
    let ncp = solve_chi2_ncp(25.0, 10, 0.5)?;
    check(
        "noncentrality solver round trip",
        (crate::dists::noncentral_chi2_cdf(25.0, 10, ncp)? - 0.5).abs() < 1e-9,
        &mut failures,
    );
    let config = ScenarioConfig {
        k: 3,
        sizes: vec![40; 3],
        f: 0.5,
        delta: 0.2,
        tau2: 0.1,
        reps: 20,
        seed: 7,
        methods: vec![MethodTag::Mp],
        bootstrap_b: 0,
    };
    let a = run_scenario(&config)?;
    let b = run_scenario(&config)?;
    let deterministic = a.cells.len() == b.cells.len()
        && a.cells
            .iter()
            .zip(&b.cells)
            .all(|(x, y)| x.value.to_bits() == y.value.to_bits());
    check("scenario determinism", deterministic, &mut failures);
    check(
        "seed mixing is stable",
        mix_seed(42, 0) != mix_seed(42, 1) && mix_seed(42, 0) == mix_seed(42, 0),
        &mut failures,
    );

    if failures.is_empty() {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(Error::data(format!(
            "selftest: {} check(s) failed: {}",
            failures.len(),
            failures.join(", ")
        )))
    }
}
