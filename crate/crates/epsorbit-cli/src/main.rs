//! `epsorbit` — orbit, profile, order, boxdim, simulate, and report commands
//! over the neighborhood-length pipeline.
//!
//! Exit codes: 0 success (an indeterminate order is a success with a flag),
//! 1 usage errors, 2 data errors. Errors go to stderr as one-line JSON
//! `{"code": ..., "message": ...}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use epsorbit::estimator::{
    box_dimension, critical_order_with_threads, plot_data_csv, OrderReport, Thresholds,
};
use epsorbit::expr::{parse, Expression};
use epsorbit::neighborhood::{profile, EpsilonProfile, GridSpec, ProfileInput};
use epsorbit::orbit::{Orbit, DEFAULT_N_MAX, DEFAULT_X_MIN};
use epsorbit::poincare::{
    builtin_field_json, poincare_orbit, IntegratorParams, PlanarField, Section,
};
use epsorbit::scales::{builtin, ChebyshevScale};

#[derive(Parser)]
#[command(
    name = "epsorbit",
    version,
    about = "multiplicity bounds from ε-neighborhoods of orbits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an orbit of g = id - f and write it as CSV.
    Orbit(OrbitArgs),
    /// Tabulate ε-neighborhood lengths over a geometric ε-grid.
    Profile(ProfileArgs),
    /// Classify a profile against a Chebyshev scale and report the critical order.
    Order(OrderArgs),
    /// Estimate the box dimension from the log-log slope of the profile.
    Boxdim(BoxdimArgs),
    /// Integrate a planar field and emit the Poincaré-map orbit as CSV.
    Simulate(SimulateArgs),
    /// Full pipeline: profile + order report + plot data.
    Report(ReportArgs),
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct CommonInput {
    /// Map expression f in x (g = id - f), e.g. "x^2*(-log(x))".
    #[arg(long = "f")]
    f: Option<String>,
    /// Initial point; defaults to the largest sampled-contraction start.
    #[arg(long)]
    x0: Option<f64>,
    /// JSON file overriding any of this command's flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct GridArgs {
    #[arg(long)]
    eps_max: Option<f64>,
    #[arg(long)]
    eps_min: Option<f64>,
    /// Grid points per decade.
    #[arg(long)]
    ppd: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct ThresholdArgs {
    /// Comparable band width (max/min).
    #[arg(long)]
    r_band: Option<f64>,
    /// Comparable trend-slope bound against log(-log ε).
    #[arg(long)]
    tau: Option<f64>,
    /// Divergence/vanishing total factor across the grid.
    #[arg(long)]
    growth_factor: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct OrbitArgs {
    #[command(flatten)]
    input: CommonInput,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reserved for randomized fixtures; recorded in configs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct ProfileArgs {
    #[command(flatten)]
    input: CommonInput,
    /// Profile an existing orbit CSV instead of iterating --f.
    #[arg(long)]
    orbit: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the JSON mirror here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct OrderArgs {
    #[command(flatten)]
    input: CommonInput,
    /// Classify an existing profile (CSV or JSON) instead of iterating --f.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Built-in scale name or path to a scale JSON file.
    #[arg(long)]
    scale: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-data CSV (ε and one ratio column per member).
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct BoxdimArgs {
    #[command(flatten)]
    input: CommonInput,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct SimulateArgs {
    /// Built-in field name or path to a field JSON file.
    #[arg(long)]
    field: Option<String>,
    /// "ray" (positive-x axis) or "ox,oy,tx,ty,sign".
    #[arg(long)]
    section: Option<String>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    x_min: Option<f64>,
    /// Integrator tolerance in [1e-12, 1e-6].
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
struct ReportArgs {
    #[command(flatten)]
    input: CommonInput,
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    section: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    sim_x_min: Option<f64>,
    #[arg(long)]
    sim_n_max: Option<usize>,
    #[arg(long)]
    scale: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Output prefix: writes <prefix>.report.json, <prefix>.profile.csv,
    /// <prefix>.plot.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own rendering for --help/--version
            if e.use_stderr() {
                fail(1, "usage", &e.to_string())
            } else {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
        }
    };
    let result = match cli.cmd {
        Cmd::Orbit(a) => cmd_orbit(a),
        Cmd::Profile(a) => cmd_profile(a),
        Cmd::Order(a) => cmd_order(a),
        Cmd::Boxdim(a) => cmd_boxdim(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "code": e.code, "message": e.message })
            );
            ExitCode::from(e.exit)
        }
    }
}

struct CmdError {
    exit: u8,
    code: &'static str,
    message: String,
}

fn usage(code: &'static str, message: impl Into<String>) -> CmdError {
    CmdError {
        exit: 1,
        code,
        message: message.into(),
    }
}

fn data(code: &'static str, message: impl Into<String>) -> CmdError {
    CmdError {
        exit: 2,
        code,
        message: message.into(),
    }
}

fn fail(exit: u8, code: &str, message: &str) -> ! {
    eprintln!(
        "{}",
        serde_json::json!({ "code": code, "message": message })
    );
    std::process::exit(exit as i32)
}

type CmdResult = Result<(), CmdError>;

// --config overlays file values over flags (the file wins).
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(
    args: T,
    config: Option<&Path>,
) -> Result<T, CmdError> {
    let Some(path) = config else { return Ok(args) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| data("config_io", format!("{}: {e}", path.display())))?;
    let file: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| data("config_parse", e.to_string()))?;
    let mut base = serde_json::to_value(&args).expect("args serialize");
    merge_json(&mut base, &file);
    serde_json::from_value(base).map_err(|e| usage("config_fields", e.to_string()))
}

fn merge_json(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn parse_expression(src: &str) -> Result<Expression, CmdError> {
    parse(src).map_err(|e| usage("expr_parse", e.to_string()))
}

/// Largest start from a fixed ladder where the sampled contraction holds and
/// a single step keeps at least half of x (avoids single-step collapse for
/// very flat maps).
fn default_x0(f: &Expression) -> Result<f64, CmdError> {
    let cap = 0.8 * f.domain().min(0.5);
    let mut x0 = cap;
    for _ in 0..24 {
        let ok = (|| {
            let fx = f.eval(x0).ok()?;
            if !(fx > 0.0 && fx <= 0.5 * x0) {
                return None;
            }
            Orbit::generate(f, x0, x0 * 1e-6, 2).ok()
        })();
        if ok.is_some() {
            return Ok(x0);
        }
        x0 *= 0.75;
    }
    Err(data(
        "not_contracting",
        "could not find a contracting start; pass --x0 explicitly",
    ))
}

fn resolve_grid(g: &GridArgs) -> GridSpec {
    let d = GridSpec::default();
    GridSpec::new(
        g.eps_max.unwrap_or(d.eps_max),
        g.eps_min.unwrap_or(d.eps_min),
        g.ppd.unwrap_or(d.points_per_decade),
    )
}

fn resolve_thresholds(t: &ThresholdArgs) -> Thresholds {
    let d = Thresholds::default();
    Thresholds {
        r_band: t.r_band.unwrap_or(d.r_band),
        tau: t.tau.unwrap_or(d.tau),
        trend_factor: t.growth_factor.unwrap_or(d.trend_factor),
    }
}

fn load_scale(spec: &str) -> Result<ChebyshevScale, CmdError> {
    if let Some(scale) = builtin(spec) {
        return Ok(scale);
    }
    let path = Path::new(spec);
    if path.exists() {
        let text =
            std::fs::read_to_string(path).map_err(|e| data("scale_io", format!("{spec}: {e}")))?;
        return ChebyshevScale::from_json(&text).map_err(|e| data("scale_parse", e.to_string()));
    }
    Err(usage(
        "unknown_scale",
        format!("'{spec}' is neither a built-in scale nor an existing file"),
    ))
}

fn load_field(spec: &str) -> Result<PlanarField, CmdError> {
    let json = if let Some(builtin) = builtin_field_json(spec) {
        builtin.to_string()
    } else {
        let path = Path::new(spec);
        if !path.exists() {
            return Err(usage(
                "unknown_field",
                format!("'{spec}' is neither a built-in field nor an existing file"),
            ));
        }
        std::fs::read_to_string(path).map_err(|e| data("field_io", format!("{spec}: {e}")))?
    };
    PlanarField::from_json(&json).map_err(|e| data("field_parse", e.to_string()))
}

fn parse_section(spec: Option<&str>) -> Result<Section, CmdError> {
    match spec {
        None => Ok(Section::positive_x_ray()),
        Some("ray") => Ok(Section::positive_x_ray()),
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != 5 {
                return Err(usage("section", "expected 'ray' or 'ox,oy,tx,ty,sign'"));
            }
            let mut vals = [0.0f64; 5];
            for (i, p) in parts.iter().enumerate() {
                vals[i] = p
                    .trim()
                    .parse()
                    .map_err(|_| usage("section", format!("bad number '{p}'")))?;
            }
            Ok(Section::new(
                [vals[0], vals[1]],
                [vals[2], vals[3]],
                vals[4],
            ))
        }
    }
}

fn threads_from_env() -> usize {
    std::env::var("EPSORBIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .map(|n| n.clamp(1, 64))
        .unwrap_or(1)
}

fn write_or_print(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| data("write", format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn map_orbit_error(e: epsorbit::orbit::OrbitError) -> CmdError {
    data("orbit", e.to_string())
}

fn map_profile_error(e: epsorbit::neighborhood::NeighborhoodError) -> CmdError {
    data("profile", e.to_string())
}

/// The resolved inputs of a run, embedded in every JSON report.
#[derive(Serialize)]
struct RunConfig {
    command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    orbit: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    grid: GridSpec,
    thresholds: Thresholds,
    seed: u64,
    threads: usize,
    extras: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    fn new(command: &str, grid: GridSpec, thresholds: Thresholds, seed: Option<u64>) -> RunConfig {
        RunConfig {
            command: command.to_string(),
            f: None,
            orbit: None,
            profile: None,
            field: None,
            scale: None,
            x0: None,
            grid,
            thresholds,
            seed: seed.unwrap_or(0),
            threads: threads_from_env(),
            extras: BTreeMap::new(),
        }
    }
}

fn cmd_orbit(args: OrbitArgs) -> CmdResult {
    let args = overlay(args.clone(), args.input.config.as_deref())?;
    let src = args
        .input
        .f
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "--f is required"))?;
    let f = parse_expression(src)?;
    let x0 = match args.input.x0 {
        Some(v) => v,
        None => default_x0(&f)?,
    };
    let x_min = args.x_min.unwrap_or(DEFAULT_X_MIN);
    let n_max = args.n_max.unwrap_or(DEFAULT_N_MAX);
    let orbit = Orbit::generate(&f, x0, x_min, n_max).map_err(map_orbit_error)?;
    let mut text = String::new();
    for x in orbit.points() {
        text.push_str(&format!("{x}\n"));
    }
    write_or_print(args.out.as_deref(), &text)
}

enum ProfileSource {
    Expr { f: Expression, src: String, x0: f64 },
    OrbitFile { orbit: Orbit },
}

fn build_profile(src: &ProfileSource, grid: GridSpec) -> Result<EpsilonProfile, CmdError> {
    match src {
        ProfileSource::Expr { f, x0, .. } => profile(
            ProfileInput::Map {
                f,
                x0: *x0,
                x_min: 1e-300,
                n_max: DEFAULT_N_MAX,
            },
            grid,
        )
        .map_err(map_profile_error),
        ProfileSource::OrbitFile { orbit, .. } => {
            profile(ProfileInput::Orbit(orbit), grid).map_err(map_profile_error)
        }
    }
}

fn profile_source(
    input: &CommonInput,
    orbit_path: Option<&Path>,
) -> Result<ProfileSource, CmdError> {
    if let Some(path) = orbit_path {
        let orbit = Orbit::import_csv(path).map_err(map_orbit_error)?;
        return Ok(ProfileSource::OrbitFile { orbit });
    }
    let src = input
        .f
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "either --f or an input file is required"))?;
    let f = parse_expression(src)?;
    let x0 = match input.x0 {
        Some(v) => v,
        None => default_x0(&f)?,
    };
    Ok(ProfileSource::Expr {
        f,
        src: src.to_string(),
        x0,
    })
}

fn cmd_profile(args: ProfileArgs) -> CmdResult {
    let args = overlay(args.clone(), args.input.config.as_deref())?;
    let source = profile_source(&args.input, args.orbit.as_deref())?;
    let grid = resolve_grid(&args.grid);
    let prof = build_profile(&source, grid)?;
    if let Some(json_path) = &args.json {
        std::fs::write(json_path, prof.to_json())
            .map_err(|e| data("write", format!("{}: {e}", json_path.display())))?;
    }
    write_or_print(args.out.as_deref(), &prof.to_csv())
}

fn load_profile_file(path: &Path) -> Result<EpsilonProfile, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data("profile_io", format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        EpsilonProfile::from_json(&text)
    } else {
        EpsilonProfile::from_csv(&text)
    };
    parsed.map_err(|e| data("profile_parse", e.to_string()))
}

fn order_payload(
    config: RunConfig,
    scale: &ChebyshevScale,
    report: &OrderReport,
) -> serde_json::Value {
    let validation = scale.validate();
    serde_json::json!({
        "config": config,
        "scale_valid": validation.passed,
        "flags": match report.m {
            epsorbit::estimator::CriticalOrder::Indeterminate => vec!["indeterminate"],
            epsorbit::estimator::CriticalOrder::BeyondScale => vec!["beyond_scale"],
            _ => Vec::<&str>::new(),
        },
        "report": report,
    })
}

fn cmd_order(args: OrderArgs) -> CmdResult {
    let args = overlay(args.clone(), args.input.config.as_deref())?;
    let scale_spec = args
        .scale
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "--scale is required"))?;
    let scale = load_scale(scale_spec)?;
    let grid_args = resolve_grid(&args.grid);
    let thresholds = resolve_thresholds(&args.thresholds);
    let (prof, mut config) = if let Some(path) = &args.profile {
        let prof = load_profile_file(path)?;
        let mut config = RunConfig::new("order", prof.grid, thresholds, args.seed);
        config.profile = Some(path.display().to_string());
        (prof, config)
    } else {
        let source = profile_source(&args.input, None)?;
        let prof = build_profile(&source, grid_args)?;
        let mut config = RunConfig::new("order", grid_args, thresholds, args.seed);
        if let ProfileSource::Expr { src, x0, .. } = &source {
            config.f = Some(src.clone());
            config.x0 = Some(*x0);
        }
        (prof, config)
    };
    config.scale = Some(scale_spec.to_string());
    let report = critical_order_with_threads(&prof, &scale, &thresholds, false, config.threads)
        .map_err(|e| data("order", e.to_string()))?;
    if let Some(plot) = &args.plot {
        let csv = plot_data_csv(&prof, &scale).map_err(|e| data("plot", e.to_string()))?;
        std::fs::write(plot, csv).map_err(|e| data("write", format!("{}: {e}", plot.display())))?;
    }
    let payload = order_payload(config, &scale, &report);
    let mut text = serde_json::to_string_pretty(&payload).expect("report serializes");
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_boxdim(args: BoxdimArgs) -> CmdResult {
    let args = overlay(args.clone(), args.input.config.as_deref())?;
    let grid_args = resolve_grid(&args.grid);
    let (prof, mut config) = if let Some(path) = &args.profile {
        let prof = load_profile_file(path)?;
        let mut config = RunConfig::new("boxdim", prof.grid, Thresholds::default(), args.seed);
        config.profile = Some(path.display().to_string());
        (prof, config)
    } else {
        let source = profile_source(&args.input, None)?;
        let prof = build_profile(&source, grid_args)?;
        let mut config = RunConfig::new("boxdim", grid_args, Thresholds::default(), args.seed);
        if let ProfileSource::Expr { src, x0, .. } = &source {
            config.f = Some(src.clone());
            config.x0 = Some(*x0);
        }
        (prof, config)
    };
    let (dim, stderr) = box_dimension(&prof).map_err(|e| data("boxdim", e.to_string()))?;
    config
        .extras
        .insert("rows".into(), serde_json::json!(prof.rows.len()));
    let payload = serde_json::json!({ "config": config, "dim": dim, "stderr": stderr });
    let mut text = serde_json::to_string_pretty(&payload).expect("serializes");
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)
}

fn simulate_orbit(
    field_spec: &str,
    section_spec: Option<&str>,
    x0: f64,
    n_max: usize,
    x_min: f64,
    tol: f64,
) -> Result<Orbit, CmdError> {
    let field = load_field(field_spec)?;
    let section = parse_section(section_spec)?;
    let params = IntegratorParams {
        tol,
        ..Default::default()
    };
    poincare_orbit(&field, &section, x0, n_max, x_min, params)
        .map_err(|e| data("simulate", e.to_string()))
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let args = overlay(args.clone(), args.config.as_deref())?;
    let field_spec = args
        .field
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "--field is required"))?;
    let x0 = args
        .x0
        .ok_or_else(|| usage("missing_flag", "--x0 is required"))?;
    let orbit = simulate_orbit(
        field_spec,
        args.section.as_deref(),
        x0,
        args.n_max.unwrap_or(100_000),
        args.x_min.unwrap_or(1e-6),
        args.tol.unwrap_or(1e-10),
    )?;
    let mut text = String::new();
    for x in orbit.points() {
        text.push_str(&format!("{x}\n"));
    }
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let args = overlay(args.clone(), args.input.config.as_deref())?;
    let scale_spec = args
        .scale
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "--scale is required"))?;
    let scale = load_scale(scale_spec)?;
    let thresholds = resolve_thresholds(&args.thresholds);

    let (prof, mut config) = if let Some(field_spec) = &args.field {
        // field defaults resolve shallower than the map path: a simulated
        // orbit is only as deep as its crossing count
        let grid = GridSpec::new(
            args.grid.eps_max.unwrap_or(1e-2),
            args.grid.eps_min.unwrap_or(1e-7),
            args.grid.ppd.unwrap_or(8),
        );
        let x0 = args.input.x0.unwrap_or(0.4);
        let orbit = simulate_orbit(
            field_spec,
            args.section.as_deref(),
            x0,
            args.sim_n_max.unwrap_or(100_000),
            args.sim_x_min.unwrap_or(2e-3),
            args.tol.unwrap_or(1e-9),
        )?;
        let prof = profile(ProfileInput::Orbit(&orbit), grid).map_err(map_profile_error)?;
        let mut config = RunConfig::new("report", grid, thresholds, args.seed);
        config.field = Some(field_spec.clone());
        config.x0 = Some(x0);
        (prof, config)
    } else {
        let grid = resolve_grid(&args.grid);
        let source = profile_source(&args.input, None)?;
        let prof = build_profile(&source, grid)?;
        let mut config = RunConfig::new("report", grid, thresholds, args.seed);
        if let ProfileSource::Expr { src, x0, .. } = &source {
            config.f = Some(src.clone());
            config.x0 = Some(*x0);
        }
        (prof, config)
    };
    config.scale = Some(scale_spec.to_string());

    let report = critical_order_with_threads(&prof, &scale, &thresholds, false, config.threads)
        .map_err(|e| data("order", e.to_string()))?;

    let prefix = args
        .out
        .as_deref()
        .ok_or_else(|| usage("missing_flag", "--out PREFIX is required"))?;
    let prefix = prefix.to_string_lossy();
    let plot = plot_data_csv(&prof, &scale).map_err(|e| data("plot", e.to_string()))?;
    std::fs::write(format!("{prefix}.profile.csv"), prof.to_csv())
        .map_err(|e| data("write", e.to_string()))?;
    std::fs::write(format!("{prefix}.plot.csv"), plot).map_err(|e| data("write", e.to_string()))?;
    let payload = order_payload(config, &scale, &report);
    let mut text = serde_json::to_string_pretty(&payload).expect("serializes");
    text.push('\n');
    std::fs::write(format!("{prefix}.report.json"), text)
        .map_err(|e| data("write", e.to_string()))?;
    Ok(())
}
