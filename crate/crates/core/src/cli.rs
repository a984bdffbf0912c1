//! The `mbt` command line: `validate`, `generate`, `run` and `trace-matrix`.
//!
//! Exit codes: 0 success, 1 verdict or diagnostic failures, 2 usage or configuration
//! errors, 3 internal errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::coverage::{gen, Strategy, SymbolicTestCase};
use crate::frontend::{parse_model, parse_trace_log};
use crate::model::Model;
use crate::oracle::{parse_tolerances, Tolerance, ToleranceSpec};
use crate::procgen::{
    emit, execute, mutate, parse_procedure, print_procedure, Adapter, Mode, Mutation, ProcError,
};
use crate::semantics::{build_relation, static_ambiguities, ValueOrder};
use crate::solver::{SolveOutcome, SolverConfig};
use crate::tracing::{compile_traceability, select_suite, AssuranceLevel, TracingResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mbt",
    version,
    about = "Model-based test generation for timed state machines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a model; diagnostics go to standard error.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate test cases, the traceability matrix and test procedures.
    Generate(GenerateArgs),
    /// Execute generated procedures.
    Run(RunArgs),
    /// Print the traceability matrix.
    TraceMatrix(MatrixArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma separated coverage strategies; empty for requirement cases only.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Largest trace index searched by the solver.
    #[arg(long, default_value_t = 16)]
    pub bound: usize,
    /// Shuffles the order in which input values are tried.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Assurance level: 1, 2, 3 or 45.
    #[arg(long, default_value = "1")]
    pub level: String,
    #[arg(long, default_value = "strict")]
    pub mode: String,
    #[arg(long)]
    pub tolerances: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Run directory written by `generate`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run against a mutant, e.g. `constant-tweak:ON -> OFF:340:300`.
    #[arg(long)]
    pub mutation: Vec<String>,
    /// Directory of observed logs `<procedure id>.log` instead of the interpreter.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Write the matrix here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failure(m) | CliError::Internal(m) => m,
        }
    }
}

/// Validated settings of a generation run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub strategies: Vec<Strategy>,
    pub level: AssuranceLevel,
    pub bound: usize,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub mode: Mode,
    pub tolerances: Option<PathBuf>,
    pub jobs: usize,
}

pub fn parse_strategies(s: Option<&str>) -> Result<Vec<Strategy>, CliError> {
    let Some(s) = s else {
        return Ok(Strategy::COVERAGE.to_vec());
    };
    let mut out = Vec::new();
    for w in s.split(',').map(str::trim).filter(|w| !w.is_empty()) {
        let st = Strategy::from_tag(w)
            .filter(|st| Strategy::COVERAGE.contains(st))
            .ok_or_else(|| CliError::Usage(format!("unknown strategy `{w}`")))?;
        if !out.contains(&st) {
            out.push(st);
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_args(a: &GenerateArgs) -> Result<RunConfig, CliError> {
        let level = AssuranceLevel::parse(&a.level).ok_or_else(|| {
            CliError::Usage(format!("invalid level `{}` (1, 2, 3 or 45)", a.level))
        })?;
        let mode = Mode::parse(&a.mode).ok_or_else(|| {
            CliError::Usage(format!("invalid mode `{}` (strict or tolerant)", a.mode))
        })?;
        if let Some(t) = &a.tolerances {
            if !t.exists() {
                return Err(CliError::Usage(format!("{}: file not found", t.display())));
            }
        }
        if a.search.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(RunConfig {
            model_path: a.search.model.clone(),
            strategies: parse_strategies(a.search.strategy.as_deref())?,
            level,
            bound: a.search.bound,
            seed: a.search.seed,
            out: a.out.clone(),
            mode,
            tolerances: a.tolerances.clone(),
            jobs: a.search.jobs,
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        solver_config(self.bound, self.seed)
    }
}

fn solver_config(bound: usize, seed: Option<u64>) -> SolverConfig {
    let mut cfg = SolverConfig {
        max_bound: bound,
        ..SolverConfig::default()
    };
    if let Some(s) = seed {
        cfg.successors.value_order = ValueOrder::Shuffled;
        cfg.successors.seed = s;
    }
    cfg
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        dispatch(&cli, &mut *out, &mut *err)
    }));
    match res {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
        Err(_) => {
            let _ = writeln!(err, "error: internal failure");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Validate { model } => cmd_validate(model, err),
        Command::Generate(a) => cmd_generate(&RunConfig::from_args(a)?, out, err),
        Command::Run(a) => cmd_run(a, out, err),
        Command::TraceMatrix(a) => cmd_trace_matrix(a, out, err),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Usage(format!("{}: file not found", path.display()))
    } else {
        CliError::Internal(format!("{}: {e}", path.display()))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

/// Parse errors and validation diagnostics of a model file.
pub fn diagnostics(path: &Path) -> Result<(Option<Model>, Vec<String>), CliError> {
    let text = read(path)?;
    let model = match parse_model(&text) {
        Ok(m) => m,
        Err(e) => return Ok((None, vec![format!("{}: {e}", path.display())])),
    };
    let mut diags: Vec<String> = model
        .validate()
        .iter()
        .map(|d| format!("{}:{d}", path.display()))
        .collect();
    diags.extend(
        static_ambiguities(&model)
            .iter()
            .map(|a| format!("{}: {a}", path.display())),
    );
    Ok((Some(model), diags))
}

fn load_valid_model(path: &Path, err: &mut dyn Write) -> Result<Model, CliError> {
    let (model, diags) = diagnostics(path)?;
    for d in &diags {
        let _ = writeln!(err, "{d}");
    }
    match model {
        Some(m) if diags.is_empty() => Ok(m),
        _ => Err(CliError::Failure(format!(
            "{}: invalid model",
            path.display()
        ))),
    }
}

pub fn cmd_validate(path: &Path, err: &mut dyn Write) -> Result<i32, CliError> {
    let (_, diags) = diagnostics(path)?;
    for d in &diags {
        let _ = writeln!(err, "{d}");
    }
    Ok(if diags.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn tolerance_spec(
    model: &Model,
    mode: Mode,
    path: Option<&Path>,
) -> Result<ToleranceSpec, CliError> {
    let spec = match (mode, path) {
        (Mode::Strict, _) => return Ok(ToleranceSpec::default()),
        (Mode::Tolerant, None) => ToleranceSpec::uniform(model, Tolerance::zero()),
        (Mode::Tolerant, Some(p)) => parse_tolerances(&read(p)?, model)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
    };
    crate::oracle::build_oracle(model, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn trace(
    model: &Model,
    strategies: &[Strategy],
    cfg: &SolverConfig,
    jobs: usize,
) -> Result<TracingResult, CliError> {
    let rel = build_relation(model).map_err(|e| CliError::Failure(e.to_string()))?;
    let cases: Vec<SymbolicTestCase> = strategies.iter().flat_map(|&s| gen(s, model)).collect();
    compile_traceability(model, &rel, &cases, cfg, jobs)
        .map_err(|e| CliError::Failure(e.to_string()))
}

/// The selected suite; without coverage strategies, every requirement case with a witness.
pub fn suite_for(
    result: &TracingResult,
    strategies: &[Strategy],
    level: AssuranceLevel,
) -> Vec<String> {
    if strategies.is_empty() {
        result
            .cases
            .iter()
            .filter(|c| c.strategy == Strategy::Requirement && result.witness(&c.id).is_some())
            .map(|c| c.id.clone())
            .collect()
    } else {
        select_suite(result, level)
    }
}

fn status(outcome: Option<&Option<SolveOutcome>>) -> String {
    match outcome {
        Some(Some(SolveOutcome::Witness(w))) => format!("witness len={}", w.trace.len()),
        Some(Some(SolveOutcome::UnsatAtBound(k))) => format!("unsat bound={k}"),
        Some(None) => "unsolved".into(),
        None => "not solved".into(),
    }
}

/// Writes testcases.txt, traceability.tsv, report.txt, procedures/*.proc and manifest.txt.
pub fn cmd_generate(
    cfg: &RunConfig,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let model = load_valid_model(&cfg.model_path, err)?;
    let tolerances = tolerance_spec(&model, cfg.mode, cfg.tolerances.as_deref())?;
    let result = trace(&model, &cfg.strategies, &cfg.solver_config(), cfg.jobs)?;
    let suite = suite_for(&result, &cfg.strategies, cfg.level);
    let reqs_of = result.matrix.reverse();
    let no_reqs = Vec::new();

    let mut cases = format!("# level={} bound={}\n", cfg.level, cfg.bound);
    cases += "id\tstrategy\tselected\tformula\n";
    let mut report = format!(
        "model {}\nlevel {}\nbound {}\n\n",
        cfg.model_path.display(),
        cfg.level,
        cfg.bound
    );
    let (mut n_wit, mut n_unsat, mut n_other) = (0, 0, 0);
    for c in &result.cases {
        let selected = suite.contains(&c.id);
        let formula = c.formula.display(&model).to_string();
        cases += &format!(
            "{}\t{}\t{}\t{}\n",
            c.id,
            c.strategy.tag(),
            if selected { "yes" } else { "no" },
            formula
        );
        let st = status(result.outcomes.get(&c.id));
        match result.outcomes.get(&c.id) {
            Some(Some(SolveOutcome::Witness(_))) => n_wit += 1,
            Some(Some(SolveOutcome::UnsatAtBound(_))) => n_unsat += 1,
            _ => n_other += 1,
        }
        let reqs = reqs_of.get(&c.id).unwrap_or(&no_reqs);
        report += &format!(
            "{}{} [{}]\n  formula: {}\n  requirements: {}\n  status: {}\n",
            c.id,
            if selected { " *" } else { "" },
            c.strategy.tag(),
            formula,
            if reqs.is_empty() {
                "-".to_string()
            } else {
                reqs.join(", ")
            },
            st
        );
    }
    report += &format!(
        "\ncases {} witnesses {} unsat {} unsolved {}\nsuite {}\nuncovered requirements {}\n",
        result.cases.len(),
        n_wit,
        n_unsat,
        n_other,
        suite.len(),
        if result.matrix.uncovered.is_empty() {
            "-".to_string()
        } else {
            result.matrix.uncovered.join(", ")
        }
    );

    let proc_dir = cfg.out.join("procedures");
    fs::create_dir_all(&proc_dir)
        .map_err(|e| CliError::Internal(format!("{}: {e}", proc_dir.display())))?;
    clear_procedures(&proc_dir)?;
    let mut files = vec![
        "testcases.txt".to_string(),
        "traceability.tsv".into(),
        "report.txt".into(),
    ];
    let mut texts = vec![cases, result.matrix.to_tsv(), report];
    for id in &suite {
        let w = result.witness(id).expect("suite cases have witnesses");
        let p = emit(
            &model,
            id,
            std::slice::from_ref(id),
            w,
            cfg.mode,
            &tolerances,
        )
        .map_err(|e| CliError::Failure(format!("{id}: {e}")))?;
        files.push(format!("procedures/{id}.proc"));
        texts.push(print_procedure(&p, &model));
    }
    for (f, t) in files.iter().zip(&texts) {
        write_file(&cfg.out.join(f), t)?;
    }
    let mut manifest =
        format!(
        "mbt {}\nmodel {}\nstrategies {}\nlevel {}\nbound {}\nseed {}\nmode {}\ntolerances {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.model_path.display(),
        cfg.strategies.iter().map(|s| s.tag()).collect::<Vec<_>>().join(","),
        cfg.level,
        cfg.bound,
        cfg.seed.map_or("none".to_string(), |s| s.to_string()),
        cfg.mode,
        cfg.tolerances.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
    );
    for (f, t) in files.iter().zip(&texts) {
        manifest += &format!("file {f} {}\n", t.len());
    }
    write_file(&cfg.out.join("manifest.txt"), &manifest)?;
    let _ = writeln!(
        out,
        "{} cases, {} selected at level {}, {} procedures in {}",
        result.cases.len(),
        suite.len(),
        cfg.level,
        suite.len(),
        cfg.out.display()
    );
    Ok(EXIT_OK)
}

fn clear_procedures(dir: &Path) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for e in entries.flatten() {
        let p = e.path();
        if p.extension().is_some_and(|x| x == "proc") {
            fs::remove_file(&p).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
        }
    }
    Ok(())
}

fn list_procedures(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|_| CliError::Usage(format!("{}: no procedures found", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "proc"))
        .collect();
    out.sort();
    Ok(out)
}

/// Test case id to requirement ids, from a traceability matrix file.
fn requirement_links(tsv: &str) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in tsv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() >= 3 && cols[2] != "-" {
            out.entry(cols[1].to_string())
                .or_default()
                .push(cols[0].to_string());
        }
    }
    out
}

enum Outcome {
    Pass,
    Fail(String),
    Error(String),
}

/// Executes every procedure of a run directory and writes verdicts.txt.
pub fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let model = load_valid_model(&a.model, err)?;
    let mut sut = model.clone();
    for spec in &a.mutation {
        let m = Mutation::parse(spec)
            .ok_or_else(|| CliError::Usage(format!("invalid mutation `{spec}`")))?;
        sut = mutate(&sut, &m).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(d) = &a.logs {
        if !d.is_dir() {
            return Err(CliError::Failure(
                ProcError::AdapterFailure(format!("{}: log directory not found", d.display()))
                    .to_string(),
            ));
        }
    }
    let paths = list_procedures(&a.out.join("procedures"))?;
    let links = fs::read_to_string(a.out.join("traceability.tsv"))
        .map(|t| requirement_links(&t))
        .unwrap_or_default();
    let run_one = |path: &PathBuf| -> (String, Vec<String>, Outcome) {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let p = match fs::read_to_string(path) {
            Ok(t) => match parse_procedure(&t, &model) {
                Ok(p) => p,
                Err(e) => return (stem, Vec::new(), Outcome::Error(e.to_string())),
            },
            Err(e) => return (stem, Vec::new(), Outcome::Error(e.to_string())),
        };
        let adapter = match &a.logs {
            None => Ok(Adapter::Interpreter(&sut)),
            Some(d) => {
                let f = d.join(format!("{}.log", p.id));
                match fs::read_to_string(&f) {
                    Err(_) => Err(ProcError::AdapterFailure(format!(
                        "{}: log missing",
                        f.display()
                    ))),
                    Ok(t) => parse_trace_log(&t, &model)
                        .map(Adapter::ExternalLog)
                        .map_err(|e| ProcError::AdapterFailure(format!("{}: {e}", f.display()))),
                }
            }
        };
        let outcome = match adapter.and_then(|ad| execute(&p, &model, &ad)) {
            Ok(ex) if ex.verdict.passed() => Outcome::Pass,
            Ok(ex) => Outcome::Fail(ex.verdict.to_string()),
            Err(e) => Outcome::Error(e.to_string()),
        };
        (p.id.clone(), p.covers.clone(), outcome)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let results: Vec<(String, Vec<String>, Outcome)> =
        pool.install(|| paths.par_iter().map(run_one).collect());

    let (mut pass, mut fail, mut error) = (0, 0, 0);
    let mut verdicts = String::new();
    let mut first_failures = Vec::new();
    let mut covered: Vec<String> = Vec::new();
    for (id, covers, o) in &results {
        let line = match o {
            Outcome::Pass => {
                pass += 1;
                for c in covers.iter().chain(std::iter::once(id)) {
                    covered.extend(links.get(c).into_iter().flatten().cloned());
                }
                format!("{id}\tPASS")
            }
            Outcome::Fail(v) => {
                fail += 1;
                format!("{id}\t{v}")
            }
            Outcome::Error(e) => {
                error += 1;
                format!("{id}\tERROR {e}")
            }
        };
        if !matches!(o, Outcome::Pass) && first_failures.len() < 5 {
            first_failures.push(line.clone());
        }
        verdicts += &line;
        verdicts.push('\n');
    }
    covered.sort();
    covered.dedup();
    let mut summary = format!(
        "procedures {} passed {pass} failed {fail} errors {error}\n",
        results.len()
    );
    for f in &first_failures {
        summary += &format!("  {f}\n");
    }
    summary += &format!(
        "requirements covered {}/{}: {}\n",
        covered.len(),
        model.requirements.len(),
        if covered.is_empty() {
            "-".to_string()
        } else {
            covered.join(", ")
        }
    );
    write_file(&a.out.join("verdicts.txt"), &(verdicts + "\n" + &summary))?;
    let _ = write!(out, "{summary}");
    Ok(if fail + error == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

pub fn cmd_trace_matrix(
    a: &MatrixArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    if a.search.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let strategies = parse_strategies(a.search.strategy.as_deref())?;
    let model = load_valid_model(&a.search.model, err)?;
    let result = trace(
        &model,
        &strategies,
        &solver_config(a.search.bound, a.search.seed),
        a.search.jobs,
    )?;
    let tsv = result.matrix.to_tsv();
    match &a.out {
        Some(p) => write_file(p, &tsv)?,
        None => {
            let _ = write!(out, "{tsv}");
        }
    }
    Ok(if result.matrix.uncovered.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}
