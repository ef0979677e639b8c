//! Batch commands behind the `cogcubes` binary.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use cogcubes_core::analysis::{
    aggregate, aggregate_csv, build_sequence_tree, correlate_with, export_curves, measure_correlations, GroupSummary,
};
use cogcubes_core::formats::{self, load_library, load_log, load_prototype, read_session_dir, write_prototype, PrototypeFile};
use cogcubes_core::measures::trace_points;
use cogcubes_core::protogen::{gen_prototypes, GenerateError};
use cogcubes_core::similarity::similarity_trace;
use cogcubes_core::{
    compute_measures, simulate_session, AgentKind, AgentProfile, AnalysisError, Factor, FormatError, Measure, MeasureError,
    MeasureRow, MeasureSet, MeasureTable, ShapeType, SimulateError, TaskKind, TaskRecord, TaskSpec,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: unparsable files, invalid logs or tasks, refused requests.
    #[error("{code}: {message}")]
    Invalid { code: String, message: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn invalid(code: impl Into<String>, message: impl ToString) -> Self {
        CliError::Invalid { code: code.into(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid { .. } => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        let code = match &e {
            FormatError::Io { .. } => return CliError::Io(e.to_string()),
            FormatError::Parse { .. } | FormatError::Json { .. } | FormatError::MissingHeader => "ParseError",
            FormatError::InvalidTask { violations, .. } => {
                let codes: Vec<String> = violations
                    .iter()
                    .map(|v| serde_json::to_value(v).ok().and_then(|j| j["code"].as_str().map(str::to_owned)).unwrap_or_default())
                    .collect();
                return CliError::invalid(codes.join(","), e);
            }
            FormatError::EmptyLibrary => "EmptyLibrary",
        };
        CliError::invalid(code, e)
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::invalid(e.code(), e)
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        let code = match e {
            SimulateError::InvalidTask { .. } => "InvalidTask",
            SimulateError::Stuck(_) => "AgentStuck",
        };
        CliError::invalid(code, e)
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        let code = match e {
            GenerateError::TooManyCubes(_) => "TooManyCubes",
            GenerateError::NoCubes => "NoCubes",
            GenerateError::Exhausted { .. } => "Exhausted",
        };
        CliError::invalid(code, e)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Lines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    #[value(name = "2d", alias = "two-d")]
    TwoD,
    #[value(name = "3d", alias = "three-d")]
    ThreeD,
}

impl From<ShapeArg> for ShapeType {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::TwoD => ShapeType::TwoD,
            ShapeArg::ThreeD => ShapeType::ThreeD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Intro,
    Follow,
    Match,
    Reshape,
}

impl From<KindArg> for TaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Intro => TaskKind::Intro,
            KindArg::Follow => TaskKind::Follow,
            KindArg::Match => TaskKind::Match,
            KindArg::Reshape => TaskKind::Reshape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactorArg {
    Group,
    Participant,
    Task,
    Kind,
    Shape,
}

impl From<FactorArg> for Factor {
    fn from(f: FactorArg) -> Self {
        match f {
            FactorArg::Group => Factor::Group,
            FactorArg::Participant => Factor::Participant,
            FactorArg::Task => Factor::Task,
            FactorArg::Kind => Factor::Kind,
            FactorArg::Shape => Factor::ShapeType,
        }
    }
}

/// Scoring, simulation, prototype generation, analysis and the live session
/// server for tangible cube construction assessments.
///
/// Exit codes: 0 success, 1 invalid input, 2 I/O failure.
#[derive(Debug, Parser)]
#[command(name = "cogcubes", version)]
pub struct Cli {
    /// Seed for every random choice (agents, prototype generation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file for `score`; output directory for the other commands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// How tabular results are printed.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Lines)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay an event log and print its four measures.
    Score {
        /// JSON Lines event log.
        log: PathBuf,
        /// Prototype shape file.
        prototype: PathBuf,
        /// Also write the similarity trace (t, similarity) as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run seeded synthetic participants through a task library.
    Simulate {
        /// Task library JSON.
        #[arg(long, required_unless_present = "prototype", conflicts_with = "prototype")]
        library: Option<PathBuf>,
        /// Single prototype file, used instead of a library.
        #[arg(long)]
        prototype: Option<PathBuf>,
        /// Task kind when `--prototype` is given.
        #[arg(long, value_enum, default_value_t = KindArg::Match)]
        kind: KindArg,
        /// Agent kinds: monotone, erratic, slow. Repeat or separate with commas.
        #[arg(long = "agent", value_delimiter = ',', default_value = "monotone")]
        agents: Vec<AgentKind>,
        /// Participants per agent kind; seeds run from `--seed` upward.
        #[arg(long, default_value_t = 1)]
        participants: u64,
    },
    /// Generate distinct random prototypes.
    GenPrototypes {
        /// Number of prototypes.
        #[arg(long)]
        count: usize,
        /// Cubes per prototype (1 to 10).
        #[arg(long)]
        cells: usize,
        /// Shape type of every prototype.
        #[arg(long, value_enum)]
        shape: ShapeArg,
    },
    /// Score every session under a directory and write tables, curves and trees.
    Analyze {
        /// Directory of session directories (or a single session directory).
        sessions: PathBuf,
        /// Factors for the aggregate table.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "group")]
        by: Vec<FactorArg>,
        /// CSV of `participant_code,score` to correlate each measure with.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Run the HTTP session service.
    Serve {
        /// Address to listen on; port 0 picks a free port.
        #[arg(long, env = "COGCUBES_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        /// Where session directories are stored.
        #[arg(long, env = "COGCUBES_SESSIONS_DIR", default_value = "sessions")]
        sessions_dir: PathBuf,
        /// Default task library.
        #[arg(long, env = "COGCUBES_LIBRARY")]
        library: Option<PathBuf>,
        /// Shared secret for assessor endpoints.
        #[arg(long, env = "COGCUBES_ASSESSOR_TOKEN")]
        assessor_token: Option<String>,
    },
}

/// Measures of one log, plus its trace if requested.
pub fn cmd_score(log: &Path, prototype: &Path, trace: Option<&Path>) -> Result<MeasureSet, CliError> {
    let record = load_log(log)?;
    let proto = load_prototype(prototype)?.cells;
    let measures = compute_measures(&record, &proto)?;
    if let Some(path) = trace {
        let points = similarity_trace(&record, &proto).map_err(|e| CliError::invalid("Trace", e))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "similarity"]).map_err(|e| CliError::Io(e.to_string()))?;
        for (t, s) in trace_points(&points) {
            w.write_record([t.to_string(), s.to_string()]).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        write_file(path, &String::from_utf8_lossy(&bytes))?;
    }
    Ok(measures)
}

pub fn format_measures(m: &MeasureSet, format: OutputFormat) -> String {
    match format {
        OutputFormat::Lines => format!(
            "similarity {}\nlast_connect {}\nderivative {}\nzero_crossings {}\n",
            m.similarity, m.last_connect, m.derivative, m.zero_crossings
        ),
        OutputFormat::Csv => format!(
            "similarity,last_connect,derivative,zero_crossings\n{},{},{},{}\n",
            m.similarity, m.last_connect, m.derivative, m.zero_crossings
        ),
    }
}

/// Tasks from a library file, or a one-task list around a single prototype.
pub fn load_tasks(library: Option<&Path>, prototype: Option<&Path>, kind: TaskKind) -> Result<Vec<TaskSpec>, CliError> {
    match (library, prototype) {
        (Some(lib), _) => Ok(load_library(lib)?),
        (None, Some(path)) => {
            let file = load_prototype(path)?;
            let id = file
                .id
                .clone()
                .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "prototype".into()));
            let spec = TaskSpec::new(format!("{kind}-{id}"), kind, id, file.cells);
            cogcubes_core::validate_task(&spec).map_err(|v| FormatError::InvalidTask { task_id: spec.task_id.clone(), violations: v })?;
            Ok(vec![spec])
        }
        (None, None) => Err(CliError::invalid("MissingInput", "give --library or --prototype")),
    }
}

/// One session directory per (agent kind, seed). Returns the directories in
/// the order written.
pub fn cmd_simulate(tasks: &[TaskSpec], agents: &[AgentKind], participants: u64, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::new();
    for &kind in agents {
        for k in 0..participants {
            let profile = AgentProfile::new(kind, seed + k);
            let export = simulate_session(tasks, &profile)?;
            let dir = out.join(&export.manifest.participant_code);
            formats::write_session_dir(&dir, &export)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

/// Writes `count` prototype files and returns their paths.
pub fn cmd_gen_prototypes(count: usize, cells: usize, shape: ShapeType, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let shapes = gen_prototypes(count, cells, shape, seed)?;
    let tag = match shape {
        ShapeType::TwoD => "2d",
        ShapeType::ThreeD => "3d",
    };
    let mut paths = Vec::new();
    for (i, poly) in shapes.into_iter().enumerate() {
        let id = format!("p{cells}-{tag}-{i:02}");
        let path = out.join(format!("{id}.txt"));
        let file = PrototypeFile { id: Some(id), task_hint: None, cells: poly };
        write_file(&path, &write_prototype(&file))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Default)]
pub struct AnalyzeReport {
    pub table: MeasureTable,
    pub aggregate: Vec<GroupSummary>,
    pub correlations: Vec<(Measure, Measure, Result<f64, AnalysisError>)>,
    pub score_correlations: BTreeMap<Measure, Result<f64, AnalysisError>>,
    /// Rows in the curves file, header excluded.
    pub curve_rows: usize,
    pub trees: Vec<String>,
    /// `(item, problem)` for everything skipped.
    pub failures: Vec<(String, String)>,
}

fn session_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join(formats::MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    let mut scores = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::invalid("ParseError", e))?;
        let (Some(code), Some(score)) = (row.get(0), row.get(1)) else {
            return Err(CliError::invalid("ParseError", format!("{}: line {} needs two fields", path.display(), i + 1)));
        };
        match score.parse::<f64>() {
            Ok(v) => {
                scores.insert(code.to_owned(), v);
            }
            Err(_) if i == 0 => {} // header
            Err(e) => return Err(CliError::invalid("ParseError", format!("{}: line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(scores)
}

/// Scores every session under `sessions` and writes `measures.csv`,
/// `aggregate.csv`, `correlations.csv`, `curves.csv` and `trees/` into `out`.
/// Unreadable sessions and unscorable records are reported and skipped.
pub fn cmd_analyze(sessions: &Path, by: &[Factor], scores: Option<&Path>, out: &Path) -> Result<AnalyzeReport, CliError> {
    let mut report = AnalyzeReport::default();
    let mut curves: Vec<(TaskRecord, cogcubes_core::Polycube)> = Vec::new();
    let mut by_task: BTreeMap<String, Vec<TaskRecord>> = BTreeMap::new();
    for dir in session_dirs(sessions)? {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let export = match read_session_dir(&dir) {
            Ok(e) => e,
            Err(e) => {
                report.failures.push((name, e.to_string()));
                continue;
            }
        };
        let group = export.manifest.group.clone().unwrap_or_default();
        for (spec, record) in export.tasks_and_records() {
            let item = format!("{name}/{}", record.task_id);
            if let Err(e) = cogcubes_core::replay(record) {
                report.failures.push((item, format!("{}: {e}", e.code())));
                continue;
            }
            curves.push((record.clone(), spec.prototype.clone()));
            by_task.entry(record.task_id.clone()).or_default().push(record.clone());
            let measures = match compute_measures(record, &spec.prototype) {
                Ok(m) => m,
                Err(e) => {
                    report.failures.push((item, format!("{}: {e}", e.code())));
                    continue;
                }
            };
            let row = MeasureRow {
                participant_code: export.manifest.participant_code.clone(),
                group: group.clone(),
                task_id: record.task_id.clone(),
                kind: spec.kind,
                shape_type: spec.shape_type().unwrap_or(ShapeType::ThreeD),
                measures,
            };
            if let Err(e) = report.table.push(row) {
                report.failures.push((item, e.to_string()));
            }
        }
    }
    if report.table.is_empty() {
        return Err(CliError::invalid("EmptyTable", format!("no scorable records under {}", sessions.display())));
    }

    write_file(&out.join("measures.csv"), &report.table.to_csv())?;
    report.aggregate = aggregate(&report.table, by).map_err(|e| CliError::invalid(e.code(), e))?;
    write_file(&out.join("aggregate.csv"), &aggregate_csv(by, &report.aggregate))?;

    report.correlations = measure_correlations(&report.table);
    if let Some(path) = scores {
        let scores = read_scores(path)?;
        report.score_correlations = correlate_with(&report.table, &scores, |_| true);
    }
    write_file(&out.join("correlations.csv"), &format_correlations(&report, OutputFormat::Csv))?;

    let curves_csv = export_curves(curves.iter().map(|(r, p)| (r, p))).map_err(|e| CliError::invalid(e.code(), e))?;
    report.curve_rows = curves_csv.lines().count().saturating_sub(1);
    write_file(&out.join("curves.csv"), &curves_csv)?;

    for (task_id, records) in &by_task {
        match build_sequence_tree(records) {
            Ok(tree) => {
                let stem = formats::log_file_name(0, task_id);
                let stem = stem.trim_start_matches("00-").trim_end_matches(".jsonl");
                write_file(&out.join("trees").join(format!("{stem}.json")), &tree.to_json())?;
                write_file(&out.join("trees").join(format!("{stem}.txt")), &tree.to_text())?;
                report.trees.push(task_id.clone());
            }
            Err(e) => report.failures.push((format!("tree {task_id}"), e.to_string())),
        }
    }
    Ok(report)
}

/// Human-readable correlation summary.
pub fn format_correlations(report: &AnalyzeReport, format: OutputFormat) -> String {
    let mut out = String::new();
    if format == OutputFormat::Csv {
        out.push_str("a,b,r,error\n");
    }
    let score_rows = report.score_correlations.iter().map(|(m, r)| ("score", m.name(), r));
    for (a, b, r) in report.correlations.iter().map(|(a, b, r)| (a.name(), b.name(), r)).chain(score_rows) {
        match (format, r) {
            (OutputFormat::Csv, Ok(v)) => writeln!(out, "{a},{b},{v},").unwrap(),
            (OutputFormat::Csv, Err(e)) => writeln!(out, "{a},{b},,{}", e.code()).unwrap(),
            (OutputFormat::Lines, Ok(v)) => writeln!(out, "r({a}, {b}) = {v:.4}").unwrap(),
            (OutputFormat::Lines, Err(e)) => writeln!(out, "r({a}, {b}) not computed: {} ({e})", e.code()).unwrap(),
        }
    }
    out
}

fn print(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn cmd_serve(listen: &str, config: cogcubes_service::ServiceConfig) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async {
        let state = cogcubes_service::AppState::open(config).map_err(|e| match e {
            cogcubes_service::ServiceError::Storage(FormatError::Io { .. }) => CliError::Io(e.to_string()),
            e => CliError::invalid(e.code(), e),
        })?;
        let listener = tokio::net::TcpListener::bind(listen).await.map_err(|e| CliError::Io(format!("{listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        print(&format!("listening on http://{addr}\n"))?;
        cogcubes_service::serve(listener, state).await.map_err(|e| CliError::Io(e.to_string()))
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score { log, prototype, trace } => {
            let m = cmd_score(&log, &prototype, trace.as_deref())?;
            let text = format_measures(&m, cli.format);
            match &cli.out {
                Some(path) => write_file(path, &text),
                None => print(&text),
            }
        }
        Command::Simulate { library, prototype, kind, agents, participants } => {
            let tasks = load_tasks(library.as_deref(), prototype.as_deref(), kind.into())?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("simulated"));
            let dirs = cmd_simulate(&tasks, &agents, participants, cli.seed, &out)?;
            let mut text = String::new();
            for dir in dirs {
                let export = read_session_dir(&dir)?;
                for (spec, record) in export.tasks_and_records() {
                    let m = compute_measures(record, &spec.prototype)?;
                    writeln!(
                        text,
                        "{} {} events={} similarity={} last_connect={} derivative={} zero_crossings={}",
                        dir.display(),
                        record.task_id,
                        record.events.len(),
                        m.similarity,
                        m.last_connect,
                        m.derivative,
                        m.zero_crossings
                    )
                    .unwrap();
                }
            }
            print(&text)
        }
        Command::GenPrototypes { count, cells, shape } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("prototypes"));
            let paths = cmd_gen_prototypes(count, cells, shape.into(), cli.seed, &out)?;
            print(&paths.iter().map(|p| format!("{}\n", p.display())).collect::<String>())
        }
        Command::Analyze { sessions, by, scores } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("analysis"));
            let factors: Vec<Factor> = by.into_iter().map(Factor::from).collect();
            let report = cmd_analyze(&sessions, &factors, scores.as_deref(), &out)?;
            for (item, problem) in &report.failures {
                eprintln!("skipped {item}: {problem}");
            }
            let mut text = format!("rows {}\ncurve_rows {}\ntrees {}\n", report.table.len(), report.curve_rows, report.trees.len());
            text.push_str(&format_correlations(&report, cli.format));
            print(&text)
        }
        Command::Serve { listen, sessions_dir, library, assessor_token } => {
            cmd_serve(&listen, cogcubes_service::ServiceConfig { sessions_dir, library, assessor_token })
        }
    }
}
