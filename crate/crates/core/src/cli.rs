//! Command-line interface: configuration ingestion, runs, and report
//! emission for every subsystem.
//!
//! Exit codes: 0 success, 1 condition failure or reported divergence,
//! 2 solver non-convergence, 64 usage error. Identical invocations produce
//! byte-identical reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    admissible_radius, boundedness_level, caccioppoli_sides, condition19_example_ratio,
    condition19_lhs, excess_trace, fit_decay, sobolev_exponent, CaccioppoliCheckSpec,
    CaccioppoliConstants, CaccioppoliSides, ExcessTraceParams, RadialField, RadialDiagnostics,
    radial_diagnostics,
};
use crate::coefficients::{
    check_structure, default_l_grid, CoefficientTensor, ExampleTensorSpec, SampleSpec,
    StructureReport, TensorKind,
};
use crate::degiorgi::{simulate_recursion, RecursionParams};
use crate::error::{Error, Result};
use crate::field::{read_field, write_field, DiscreteField};
use crate::mesh::Mesh;
use crate::report::{fmt_f64, to_json_pretty};
use crate::solver::{
    picard_solve, weak_residual, BoundaryPreset, DirichletData, PicardConfig, SolveResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONDITION_FAILED: i32 = 1;
pub const EXIT_SOLVER_DIVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "divform",
    about = "Numerical laboratory for quasilinear elliptic systems in divergence form",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify the structure conditions of a coefficient tensor.
    Check(CheckArgs),
    /// Solve the system with Dirichlet data by frozen-coefficient iteration.
    Solve(SolveArgs),
    /// Run diagnostics on a stored solution or on closed-form objects.
    Analyze(AnalyzeArgs),
    /// Trace the iteration-lemma recursion and its smallness threshold.
    Lemma(LemmaArgs),
    /// Sup and first-order energy of the singular radial field on annuli.
    Radial(RadialArgs),
    /// Full reproduction pipeline for the two-equation example system.
    Example(ExampleArgs),
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Tensor name (example4, identity, diagonal, constant_offdiag) or a
    /// JSON spec file.
    #[arg(long)]
    tensor: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// y box as two values lo hi (applied to every component).
    #[arg(long = "y-box", num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    y_box: Option<Vec<f64>>,
    /// Sample-grid points per y axis.
    #[arg(long, default_value_t = 101)]
    grid: usize,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// JSON run configuration; command-line flags override nothing when a
    /// config file is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long, default_value_t = 8)]
    cells: usize,
    /// Boundary preset: linear, constant, bounded_sine.
    #[arg(long, default_value = "bounded_sine")]
    boundary: String,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(subcommand)]
    what: AnalyzeCommand,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Excess trace J_h along the level/radius schedules.
    Excess(ExcessArgs),
    /// Both sides of the superlevel energy estimate on a solution.
    Caccioppoli(CaccioppoliArgs),
    /// Scan the closed-form violation of the off-diagonal condition.
    Cond19(Cond19Args),
    /// Boundedness-level search on a stored solution.
    Bound(BoundArgs),
}

#[derive(Args, Debug)]
struct ExcessArgs {
    /// Solution CSV (its mesh sidecar is <field>.mesh.json).
    #[arg(long)]
    field: PathBuf,
    #[arg(long = "d")]
    d: f64,
    #[arg(long = "R")]
    base_radius: f64,
    #[arg(long = "H", default_value_t = 12)]
    steps: u32,
    /// Ball center (defaults to the mesh box center).
    #[arg(long, num_args = 2..=3, value_name = "COORD", allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CaccioppoliArgs {
    #[arg(long)]
    field: PathBuf,
    /// Tensor whose certified constants enter the estimate factor.
    #[arg(long, default_value = "example4")]
    tensor: String,
    #[arg(long)]
    level: f64,
    #[arg(long = "s")]
    inner: f64,
    #[arg(long = "t")]
    outer: f64,
    #[arg(long, num_args = 2..=3, value_name = "COORD", allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    /// Override the certified boundedness constant.
    #[arg(long = "c-const")]
    c_const: Option<f64>,
    /// Override the certified ellipticity constant.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Cond19Args {
    /// Integer range a..b (inclusive).
    #[arg(long, conflicts_with = "k")]
    scan: Option<String>,
    /// Single integer to evaluate instead of a range.
    #[arg(long = "k")]
    k: Option<i64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long = "R")]
    base_radius: f64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Support threshold L0; candidate levels start at 2·L0.
    #[arg(long = "min-level")]
    min_level: Option<f64>,
    #[arg(long, num_args = 2..=3, value_name = "COORD", allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    #[arg(long = "A", default_value_t = 1.0)]
    factor: f64,
    #[arg(long = "lambda", default_value_t = 2.0)]
    base: f64,
    #[arg(long = "gamma0", default_value_t = 1.0)]
    exponent: f64,
    #[arg(long = "J0")]
    j0: f64,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RadialArgs {
    #[arg(long, default_value_t = 1.2)]
    gamma: f64,
    #[arg(long = "n", default_value_t = 3)]
    dim: usize,
    /// Comma-separated inner radii.
    #[arg(long, default_value = "1e-2,1e-3,1e-4")]
    inner: String,
    #[arg(long, default_value_t = 1.0)]
    outer: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExampleArgs {
    #[arg(long, default_value_t = 8)]
    cells: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Parses and runs, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Json(_)
        | Error::InvalidParameter(_)
        | Error::FieldFormat(_)
        | Error::Io(_)
        | Error::DimensionMismatch { .. }
        | Error::DegenerateBox
        | Error::EmptySampleSet => EXIT_USAGE,
        Error::LinearSolve { .. } => EXIT_SOLVER_DIVERGED,
        _ => EXIT_CONDITION_FAILED,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Analyze(args) => match args.what {
            AnalyzeCommand::Excess(a) => cmd_analyze_excess(a),
            AnalyzeCommand::Caccioppoli(a) => cmd_analyze_caccioppoli(a),
            AnalyzeCommand::Cond19(a) => cmd_analyze_cond19(a),
            AnalyzeCommand::Bound(a) => cmd_analyze_bound(a),
        },
        Command::Lemma(args) => cmd_lemma(args),
        Command::Radial(args) => cmd_radial(args),
        Command::Example(args) => cmd_example(args),
    }
}

/// Resolves a tensor argument: a built-in name or a JSON spec file.
pub fn resolve_tensor(name: &str) -> Result<CoefficientTensor> {
    match name {
        "example4" => Ok(CoefficientTensor::example4(ExampleTensorSpec::default())),
        "identity" | "diagonal" => Ok(CoefficientTensor::identity(3, 2)),
        "constant_offdiag" => {
            let n = 2;
            let nn = 2;
            let mut entries = vec![0.0; n * n * nn * nn];
            let idx = |a: usize, b: usize, i: usize, j: usize| ((a * nn + b) * n + i) * n + j;
            for a in 0..nn {
                for i in 0..n {
                    entries[idx(a, a, i, i)] = 1.0;
                }
            }
            entries[idx(0, 1, 0, 0)] = 1.0;
            CoefficientTensor::new(TensorKind::ConstantBlocks {
                n,
                components: nn,
                entries,
            })
        }
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(Error::InvalidParameter(format!(
                    "unknown tensor {path:?} (not a built-in name, not a file)"
                )));
            }
            CoefficientTensor::from_json(&std::fs::read_to_string(p)?)
        }
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn cmd_check(args: CheckArgs) -> Result<i32> {
    let tensor = resolve_tensor(&args.tensor)?;
    let mut spec = SampleSpec::default_for(&tensor);
    if let Some(yb) = &args.y_box {
        let nn = tensor.components();
        spec = spec.with_y_box(vec![yb[0]; nn], vec![yb[1]; nn], args.grid);
    } else {
        spec.y_points = args.grid;
    }
    let report = check_structure(&tensor, &spec, &default_l_grid())?;
    let path = write_out(&args.out, "structure_report.json", &to_json_pretty(&report)?)?;
    let all = report.passed_a1 && report.passed_a2 && report.passed_a3;
    println!(
        "check {}: c = {}, nu = {}, L0 = {:?} -> {}",
        args.tensor,
        fmt_f64(report.c),
        fmt_f64(report.nu),
        report.l0,
        path.display()
    );
    if !all {
        for w in &report.witnesses {
            println!(
                "  staircase witness: y = {:?}, (alpha, beta) = ({}, {}), L = {}",
                w.y, w.alpha, w.beta, w.level
            );
        }
    }
    Ok(if all { EXIT_OK } else { EXIT_CONDITION_FAILED })
}

/// JSON schema of a solve run.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tensor: TensorKind,
    pub mesh: MeshConfig,
    pub boundary: BoundaryPreset,
    #[serde(default)]
    pub picard: PicardConfigJson,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeshConfig {
    pub n: usize,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    pub cells_per_axis: usize,
}

/// Picard parameters with JSON defaults.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardConfigJson {
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub linear_tol: f64,
    pub linear_max_iters: usize,
}

impl Default for PicardConfigJson {
    fn default() -> Self {
        let c = PicardConfig::default();
        Self {
            max_outer_iters: c.max_outer_iters,
            outer_tol: c.outer_tol,
            linear_tol: c.linear_tol,
            linear_max_iters: c.linear_max_iters,
        }
    }
}

impl PicardConfigJson {
    fn to_config(&self) -> PicardConfig {
        PicardConfig {
            max_outer_iters: self.max_outer_iters,
            outer_tol: self.outer_tol,
            linear_tol: self.linear_tol,
            linear_max_iters: self.linear_max_iters,
            ..PicardConfig::default()
        }
    }
}

#[derive(Debug, Serialize)]
struct RunReport {
    converged: bool,
    outer_iters: usize,
    final_update_norm: f64,
    final_weak_residual: f64,
    interior_sup: f64,
    cells_per_axis: usize,
    linear_iterations: Vec<usize>,
    linear_residuals: Vec<f64>,
}

impl RunReport {
    fn of(result: &SolveResult, cells: usize) -> Self {
        Self {
            converged: result.converged,
            outer_iters: result.outer_iters,
            final_update_norm: result.final_update_norm,
            final_weak_residual: result.final_weak_residual,
            interior_sup: result.field.interior_sup(),
            cells_per_axis: cells,
            linear_iterations: result.linear_diagnostics.iter().map(|d| d.iterations).collect(),
            linear_residuals: result.linear_diagnostics.iter().map(|d| d.residual).collect(),
        }
    }
}

fn parse_boundary(name: &str, amplitude: f64) -> Result<BoundaryPreset> {
    match name {
        "linear" => Ok(BoundaryPreset::Linear),
        "constant" => Ok(BoundaryPreset::Constant { value: amplitude }),
        "bounded_sine" => Ok(BoundaryPreset::BoundedSine { amplitude }),
        other => Err(Error::InvalidParameter(format!(
            "unknown boundary preset {other:?}"
        ))),
    }
}

fn run_solve(config: &SolveConfig) -> Result<(SolveResult, Arc<Mesh>)> {
    let tensor = CoefficientTensor::new(config.tensor.clone())?;
    if config.mesh.n != tensor.dim() {
        return Err(Error::DimensionMismatch {
            context: "mesh dimension vs tensor",
            expected: tensor.dim(),
            got: config.mesh.n,
        });
    }
    let mesh = Arc::new(Mesh::box_mesh(
        &config.mesh.box_lower,
        &config.mesh.box_upper,
        config.mesh.cells_per_axis,
    )?);
    let g = DirichletData::from_preset(config.boundary, tensor.components());
    let result = picard_solve(&tensor, &mesh, &g, &config.picard.to_config())?;
    Ok((result, mesh))
}

fn cmd_solve(args: SolveArgs) -> Result<i32> {
    let config: SolveConfig = if let Some(path) = &args.config {
        serde_json::from_str(&std::fs::read_to_string(path)?)?
    } else {
        let tensor_name = args.tensor.as_deref().unwrap_or("example4");
        let tensor = resolve_tensor(tensor_name)?;
        let n = tensor.dim();
        SolveConfig {
            tensor: tensor.kind().clone(),
            mesh: MeshConfig {
                n,
                box_lower: vec![0.0; n],
                box_upper: vec![1.0; n],
                cells_per_axis: args.cells,
            },
            boundary: parse_boundary(&args.boundary, args.amplitude)?,
            picard: PicardConfigJson::default(),
        }
    };

    let (result, _mesh) = run_solve(&config)?;
    std::fs::create_dir_all(&args.out)?;
    write_field(
        &result.field,
        &args.out.join("solution.csv"),
        &args.out.join("solution.mesh.json"),
    )?;
    let report = RunReport::of(&result, config.mesh.cells_per_axis);
    write_out(&args.out, "run_report.json", &to_json_pretty(&report)?)?;
    println!(
        "solve: converged = {}, outer iterations = {}, interior sup = {}",
        result.converged,
        result.outer_iters,
        fmt_f64(report.interior_sup)
    );
    Ok(if result.converged {
        EXIT_OK
    } else {
        EXIT_SOLVER_DIVERGED
    })
}

fn load_field(csv: &Path) -> Result<DiscreteField> {
    if !csv.exists() {
        return Err(Error::InvalidParameter(format!(
            "solution file {csv:?} does not exist"
        )));
    }
    let sidecar = csv.with_extension("mesh.json");
    read_field(csv, &sidecar)
}

fn box_center(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.dim())
        .map(|i| 0.5 * (mesh.lower()[i] + mesh.upper()[i]))
        .collect()
}

fn cmd_analyze_excess(args: ExcessArgs) -> Result<i32> {
    let field = load_field(&args.field)?;
    let center = args.x0.unwrap_or_else(|| box_center(field.mesh()));
    let n = field.mesh().dim();
    let params = ExcessTraceParams::step4(n, args.d, args.base_radius, args.steps);
    let trace = excess_trace(&field, &center, &params)?;
    let mut csv = String::from("h,k_h,rho_h,J_h\n");
    for e in &trace.entries {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.h,
            fmt_f64(e.level),
            fmt_f64(e.radius),
            fmt_f64(e.excess)
        ));
    }
    let path = write_out(&args.out, "excess_trace.csv", &csv)?;
    let fit = fit_decay(&trace);
    println!(
        "excess trace: J_0 = {}, J_{} = {}, decay fit = {:?} -> {}",
        fmt_f64(trace.entries[0].excess),
        trace.entries.last().unwrap().h,
        fmt_f64(trace.last_excess()),
        fit.map(|f| f.c_fit),
        path.display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CaccioppoliReport {
    lhs: f64,
    rhs: f64,
    ratio: Option<f64>,
    constant: f64,
    level: f64,
    inner_radius: f64,
    outer_radius: f64,
    center: Vec<f64>,
    constants: CaccioppoliConstants,
}

fn cmd_analyze_caccioppoli(args: CaccioppoliArgs) -> Result<i32> {
    let field = load_field(&args.field)?;
    let tensor = resolve_tensor(&args.tensor)?;
    let (c, nu) = match (args.c_const, args.nu) {
        (Some(c), Some(nu)) => (c, nu),
        _ => {
            let spec = SampleSpec::default_for(&tensor);
            let report = check_structure(&tensor, &spec, &default_l_grid())?;
            (
                args.c_const.unwrap_or(report.c),
                args.nu.unwrap_or(report.nu),
            )
        }
    };
    let constants = CaccioppoliConstants {
        c,
        n: tensor.dim(),
        components: tensor.components(),
        nu,
    };
    let center = args.x0.unwrap_or_else(|| box_center(field.mesh()));
    let spec = CaccioppoliCheckSpec::new(center.clone(), args.inner, args.outer, args.level)?;
    let sides: CaccioppoliSides = caccioppoli_sides(&field, &spec, &constants)?;
    let report = CaccioppoliReport {
        lhs: sides.lhs,
        rhs: sides.rhs,
        ratio: sides.ratio,
        constant: sides.constant,
        level: args.level,
        inner_radius: args.inner,
        outer_radius: args.outer,
        center,
        constants,
    };
    let path = write_out(&args.out, "caccioppoli.json", &to_json_pretty(&report)?)?;
    println!(
        "caccioppoli: lhs = {}, rhs = {}, ratio = {:?} -> {}",
        fmt_f64(sides.lhs),
        fmt_f64(sides.rhs),
        sides.ratio,
        path.display()
    );
    Ok(EXIT_OK)
}

fn parse_scan(text: &str) -> Result<(i64, i64)> {
    let parts: Vec<&str> = text.split("..").collect();
    if parts.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "scan must be a..b, got {text:?}"
        )));
    }
    let a: i64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad scan start {:?}", parts[0])))?;
    let b: i64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad scan end {:?}", parts[1])))?;
    if a > b {
        return Err(Error::InvalidParameter("scan start exceeds end".into()));
    }
    Ok((a, b))
}

const COND19_THRESHOLD: f64 = -2.4;

fn cmd_analyze_cond19(args: Cond19Args) -> Result<i32> {
    let (a, b) = match (&args.scan, args.k) {
        (Some(scan), None) => parse_scan(scan)?,
        (None, Some(k)) => (k, k),
        _ => {
            return Err(Error::InvalidParameter(
                "give exactly one of --scan a..b or --k".into(),
            ))
        }
    };
    if a < 2 {
        return Err(Error::InvalidParameter(
            "the closed form needs k ≥ 2".into(),
        ));
    }
    let mut csv = String::from("k,ratio,threshold\n");
    for k in a..=b {
        let ratio = condition19_example_ratio(k)?;
        csv.push_str(&format!(
            "{},{},{}\n",
            k,
            fmt_f64(ratio),
            fmt_f64(COND19_THRESHOLD)
        ));
    }
    let path = write_out(&args.out, "cond19_scan.csv", &csv)?;
    let first = (a..=b).find(|&k| condition19_example_ratio(k).unwrap() < COND19_THRESHOLD);
    println!(
        "cond19 scan {}..{}: first ratio below {} at k = {:?} -> {}",
        a,
        b,
        COND19_THRESHOLD,
        first,
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_analyze_bound(args: BoundArgs) -> Result<i32> {
    let field = load_field(&args.field)?;
    let center = args.x0.unwrap_or_else(|| box_center(field.mesh()));
    let report = boundedness_level(&field, &center, args.base_radius, args.tol, args.min_level)?;
    let path = write_out(&args.out, "boundedness.json", &to_json_pretty(&report)?)?;
    println!(
        "boundedness: upper = {:?}, lower = {:?} -> {}",
        report.upper_level,
        report.lower_level,
        path.display()
    );
    Ok(if report.upper_level.is_some() {
        EXIT_OK
    } else {
        EXIT_CONDITION_FAILED
    })
}

fn cmd_lemma(args: LemmaArgs) -> Result<i32> {
    let params = RecursionParams::new(args.factor, args.base, args.exponent)?;
    let trace = simulate_recursion(&params, args.j0, args.steps)?;
    let mut csv = format!("# threshold = {}\n", fmt_f64(params.threshold()));
    if let Some(h) = trace.diverged_at {
        csv.push_str(&format!("# diverged_at = {h}\n"));
    }
    csv.push_str("h,J_h\n");
    for (h, j) in trace.values.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", h, fmt_f64(*j)));
    }
    let path = write_out(&args.out, "lemma_trace.csv", &csv)?;
    println!(
        "lemma: threshold = {}, diverged = {:?} -> {}",
        fmt_f64(params.threshold()),
        trace.diverged_at,
        path.display()
    );
    Ok(if trace.diverged_at.is_some() {
        EXIT_CONDITION_FAILED
    } else {
        EXIT_OK
    })
}

fn cmd_radial(args: RadialArgs) -> Result<i32> {
    let field = RadialField::new(args.gamma, args.dim)?;
    let mut radii = Vec::new();
    for part in args.inner.split(',') {
        let r: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad radius {part:?}")))?;
        radii.push(r);
    }
    let mut csv = String::from("r,sup,seminorm\n");
    for &r in &radii {
        let d: RadialDiagnostics = radial_diagnostics(&field, r, args.outer)?;
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(r),
            fmt_f64(d.sup),
            fmt_f64(d.seminorm)
        ));
    }
    let path = write_out(&args.out, "radial_diagnostics.csv", &csv)?;
    println!("radial diagnostics for gamma = {} -> {}", args.gamma, path.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct ExampleReport {
    structure: StructureReport,
    caccioppoli_constant: f64,
    cond19_first_violation_k: Option<i64>,
    cond19_ratio_at_first: Option<f64>,
    lemma_threshold: f64,
    lemma_converges_at_threshold: bool,
    lemma_diverges_above_threshold: bool,
    solve_bounded: ExampleSolveSummary,
    solve_tall: ExampleSolveSummary,
    caccioppoli: Vec<ExampleCaccioppoliRow>,
    boundedness_upper: Option<f64>,
    boundedness_lower: Option<f64>,
    admissible_radius: f64,
    radial: Vec<ExampleRadialRow>,
}

#[derive(Debug, Serialize)]
struct ExampleSolveSummary {
    amplitude: f64,
    converged: bool,
    outer_iters: usize,
    interior_sup: f64,
    weak_residual: f64,
}

#[derive(Debug, Serialize)]
struct ExampleCaccioppoliRow {
    level: f64,
    lhs: f64,
    rhs: f64,
    ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ExampleRadialRow {
    inner_radius: f64,
    sup: f64,
    seminorm: f64,
}

fn cmd_example(args: ExampleArgs) -> Result<i32> {
    let tensor = CoefficientTensor::example4(ExampleTensorSpec::default());

    // Structure conditions over the default box.
    let spec = SampleSpec::default_for(&tensor);
    let structure = check_structure(&tensor, &spec, &default_l_grid())?;
    let constant = crate::degiorgi::caccioppoli_constant(
        structure.c,
        tensor.dim(),
        tensor.components(),
        structure.nu,
    )?;

    // Closed-form condition scan.
    let first = (2..=50).find(|&k| condition19_example_ratio(k).unwrap() < COND19_THRESHOLD);
    let first_ratio = first.map(|k| condition19_example_ratio(k).unwrap());
    // Cross-check against the brute-force double sum at the witness point.
    if let Some(k) = first {
        let kf = k as f64;
        let mut p = vec![0.0; 6];
        p[0] = 1.0;
        p[1] = 1.0;
        let lhs = condition19_lhs(&tensor, &[0.0; 3], &[kf + 1.0, kf], &p)?;
        let want = first_ratio.unwrap();
        if (lhs - want).abs() > 1e-12 * want.abs() {
            return Err(Error::InvalidParameter(format!(
                "closed form and brute force disagree at k = {k}: {lhs} vs {want}"
            )));
        }
    }

    // Iteration lemma at the canonical parameters.
    let params = RecursionParams::new(1.0, 2.0, 1.0)?;
    let at = simulate_recursion(&params, params.threshold(), 60)?;
    let above = simulate_recursion(&params, params.threshold() * (1.0 + 1e-6), 200)?;

    // Two solves on the unit cube: bounded-by-one data for the boundedness
    // pipeline, taller data so the energy estimate sees nonempty superlevel
    // sets at levels above 1.
    let mk_config = |amplitude: f64| SolveConfig {
        tensor: tensor.kind().clone(),
        mesh: MeshConfig {
            n: 3,
            box_lower: vec![0.0; 3],
            box_upper: vec![1.0; 3],
            cells_per_axis: args.cells,
        },
        boundary: BoundaryPreset::BoundedSine { amplitude },
        picard: PicardConfigJson::default(),
    };
    let (low, low_mesh) = run_solve(&mk_config(1.0))?;
    let (tall, tall_mesh) = run_solve(&mk_config(4.0))?;
    let low_wr = weak_residual(&tensor, &low_mesh, &low.field)?;
    let tall_wr = weak_residual(&tensor, &tall_mesh, &tall.field)?;

    let center = vec![0.5, 0.5, 0.5];
    let mut caccioppoli = Vec::new();
    for level in [1.0, 1.5, 2.0] {
        let spec = CaccioppoliCheckSpec::new(center.clone(), 0.15, 0.3, level)?;
        let constants = CaccioppoliConstants {
            c: structure.c,
            n: tensor.dim(),
            components: tensor.components(),
            nu: structure.nu,
        };
        let sides = caccioppoli_sides(&tall.field, &spec, &constants)?;
        caccioppoli.push(ExampleCaccioppoliRow {
            level,
            lhs: sides.lhs,
            rhs: sides.rhs,
            ratio: sides.ratio,
        });
    }

    let p_star = sobolev_exponent(3, 2.0);
    let r_adm = admissible_radius(&low.field, &center, p_star)?;
    let r_run = (0.4f64).min(r_adm);
    let bound = boundedness_level(&low.field, &center, r_run, 1e-12, structure.l0)?;

    let radial_field = RadialField::new(1.2, 3)?;
    let mut radial = Vec::new();
    for r in [1e-2, 1e-3, 1e-4] {
        let d = radial_diagnostics(&radial_field, r, 1.0)?;
        radial.push(ExampleRadialRow {
            inner_radius: r,
            sup: d.sup,
            seminorm: d.seminorm,
        });
    }

    let report = ExampleReport {
        structure,
        caccioppoli_constant: constant,
        cond19_first_violation_k: first,
        cond19_ratio_at_first: first_ratio,
        lemma_threshold: params.threshold(),
        lemma_converges_at_threshold: at.diverged_at.is_none()
            && at.values.last().copied().unwrap_or(1.0) < 1e-12,
        lemma_diverges_above_threshold: above.diverged_at.is_some(),
        solve_bounded: ExampleSolveSummary {
            amplitude: 1.0,
            converged: low.converged,
            outer_iters: low.outer_iters,
            interior_sup: low.field.interior_sup(),
            weak_residual: low_wr,
        },
        solve_tall: ExampleSolveSummary {
            amplitude: 4.0,
            converged: tall.converged,
            outer_iters: tall.outer_iters,
            interior_sup: tall.field.interior_sup(),
            weak_residual: tall_wr,
        },
        caccioppoli,
        boundedness_upper: bound.upper_level,
        boundedness_lower: bound.lower_level,
        admissible_radius: r_adm,
        radial,
    };

    std::fs::create_dir_all(&args.out)?;
    write_field(
        &low.field,
        &args.out.join("example_solution.csv"),
        &args.out.join("example_solution.mesh.json"),
    )?;
    let path = write_out(&args.out, "example_report.json", &to_json_pretty(&report)?)?;
    println!("example pipeline -> {}", path.display());

    let ok = report.structure.passed_a1
        && report.structure.passed_a2
        && report.structure.passed_a3
        && report.cond19_first_violation_k == Some(4)
        && report.lemma_converges_at_threshold
        && report.lemma_diverges_above_threshold
        && report.solve_bounded.converged
        && report.solve_tall.converged
        && report.boundedness_upper.is_some();
    Ok(if ok { EXIT_OK } else { EXIT_CONDITION_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_parsing() {
        assert_eq!(parse_scan("2..20").unwrap(), (2, 20));
        assert!(parse_scan("5").is_err());
        assert!(parse_scan("7..3").is_err());
    }

    #[test]
    fn tensor_names_resolve() {
        assert_eq!(resolve_tensor("example4").unwrap().components(), 2);
        assert_eq!(resolve_tensor("identity").unwrap().dim(), 3);
        assert!(resolve_tensor("constant_offdiag").is_ok());
        assert!(resolve_tensor("no_such_tensor").is_err());
    }

    #[test]
    fn boundary_names_resolve() {
        assert!(matches!(
            parse_boundary("linear", 1.0),
            Ok(BoundaryPreset::Linear)
        ));
        assert!(matches!(
            parse_boundary("bounded_sine", 2.0),
            Ok(BoundaryPreset::BoundedSine { .. })
        ));
        assert!(parse_boundary("warp", 1.0).is_err());
    }
}
