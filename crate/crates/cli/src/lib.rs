//! Command implementations. Each command returns its output and exit code
//! instead of printing, so the binary and the tests share one code path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use opcircuit::duotensor::{convert_all, decompose, default_fiducials, reconstruct, FiducialSets, CONDITION_WARNING};
use opcircuit::evaluator::{
    formalism_locality_ratio, probability_foliated, probability_with_plan, Binding,
};
use opcircuit::io::{
    duotensor_from_json, duotensor_to_json, operator_to_json, read_binding, read_circuit, read_fiducials, read_operator,
    write_fiducials, write_operator,
};
use opcircuit::notation::{foliate, FragmentKind};
use opcircuit::optensor::{is_physical, witness_nonphysical, WitnessKind, PHYSICAL_EPS};
use opcircuit::tomography::{reconstruct_operation, BlackBox, ExactBox, SampledBox};
use opcircuit::{print_circuit, CircuitFragment, DotColor, Error, LabeledOperator, SystemType, TypeRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NONPHYSICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;

#[derive(Debug, Parser)]
#[command(name = "opcircuit", version, about = "Operator-tensor circuit calculus")]
pub struct Cli {
    #[command(flatten)]
    pub config: RunConfig,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command.
#[derive(Debug, Args)]
pub struct RunConfig {
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    /// Tolerance for physicality and proportionality tests
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Random seed for sampled runs
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tensor,
    Foliation,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Color {
    White,
    Black,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a circuit file and check the wiring rules
    Validate { circuit: PathBuf },
    /// Compute the probability of a circuit under a binding manifest
    Eval {
        circuit: PathBuf,
        binding: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Tensor)]
        method: Method,
        /// Print the contraction plan
        #[arg(long)]
        explain: bool,
        /// Type registry (`name dim` per line) to check bound dimensions against
        #[arg(long)]
        types: Option<PathBuf>,
        /// Fail with exit code 3 if any bound operator is not physical
        #[arg(long)]
        require_physical: bool,
    },
    /// Test an operator file for physicality
    Physical {
        operator: PathBuf,
        /// Construct a witness circuit when the operator is not physical
        #[arg(long)]
        witness: bool,
        /// Directory for the witness preparation and result operator files
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        require_physical: bool,
    },
    /// Expand an operator in fiducial bases
    Decompose {
        operator: PathBuf,
        #[arg(long, value_enum, default_value_t = Color::White)]
        color: Color,
        /// Fiducial manifests overriding the default sets
        #[arg(long)]
        fiducials: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild an operator from a duotensor file
    Reconstruct {
        duotensor: PathBuf,
        #[arg(long)]
        fiducials: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated process tomography of a hidden operator
    Tomography {
        operator: PathBuf,
        /// Shots per fiducial circuit; 0 uses exact probabilities
        #[arg(long, default_value_t = 0)]
        shots: u64,
        #[arg(long)]
        fiducials: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test whether two fragments have proportional operators
    Locality { fragment_a: PathBuf, fragment_b: PathBuf, binding: PathBuf },
    /// List the earliest-layer foliation of a circuit
    Foliate { circuit: PathBuf },
    /// Write the default fiducial set of a type
    Fiducials { name: String, dim: usize, out: PathBuf },
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Syntax { .. } | Error::Wiring(_) | Error::NonCircuitTerm(_) => EXIT_VALIDATION,
            Error::NotFound(_) | Error::Io(_) => EXIT_NO_INPUT,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome = Result<Report, Failure>;

/// Text lines and the matching JSON object; warnings go to stderr.
#[derive(Default)]
struct Report {
    text: String,
    json: serde_json::Map<String, Value>,
    warnings: Vec<String>,
}

impl Report {
    fn field(&mut self, key: &str, text: impl std::fmt::Display, value: Value) {
        let _ = writeln!(self.text, "{key}: {text}");
        self.json.insert(key.to_string(), value);
    }

    fn line(&mut self, line: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{line}");
    }
}

/// Parses arguments and runs the command.
pub fn run<I, T>(args: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            return if code == EXIT_OK {
                Output { code, stdout: rendered, stderr: String::new() }
            } else {
                Output { code, stdout: String::new(), stderr: rendered }
            };
        }
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Output {
    match dispatch(cli) {
        Ok(report) => {
            let stdout = match cli.config.format {
                Format::Text => report.text,
                Format::Json => serde_json::to_string_pretty(&Value::Object(report.json)).unwrap() + "\n",
            };
            let stderr = report.warnings.iter().map(|w| format!("warning: {w}\n")).collect();
            Output { code: EXIT_OK, stdout, stderr }
        }
        Err(f) => Output { code: f.code, stdout: String::new(), stderr: format!("error: {}\n", f.message) },
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let eps = cli.config.eps.unwrap_or(PHYSICAL_EPS);
    match &cli.command {
        Command::Validate { circuit } => validate(circuit),
        Command::Eval { circuit, binding, method, explain, types, require_physical } => {
            eval(circuit, binding, *method, *explain, types.as_deref(), *require_physical, eps)
        }
        Command::Physical { operator, witness, out, require_physical } => physical(operator, *witness, out.as_deref(), *require_physical, eps),
        Command::Decompose { operator, color, fiducials, out } => decompose_cmd(operator, *color, fiducials, out.as_deref()),
        Command::Reconstruct { duotensor, fiducials, out } => reconstruct_cmd(duotensor, fiducials, out.as_deref()),
        Command::Tomography { operator, shots, fiducials, out } => tomography(operator, *shots, cli.config.seed, fiducials, out.as_deref()),
        Command::Locality { fragment_a, fragment_b, binding } => {
            locality(fragment_a, fragment_b, binding, cli.config.eps.unwrap_or(opcircuit::evaluator::LOCALITY_EPS))
        }
        Command::Foliate { circuit } => foliate_cmd(circuit),
        Command::Fiducials { name, dim, out } => fiducials_cmd(name, *dim, out),
    }
}

fn kind_name(kind: FragmentKind) -> &'static str {
    match kind {
        FragmentKind::Circuit => "circuit",
        FragmentKind::Preparation => "preparation",
        FragmentKind::Result => "result",
        FragmentKind::Transformation => "transformation",
        FragmentKind::General => "general",
    }
}

fn validate(path: &Path) -> Outcome {
    let f = read_circuit(path)?;
    let mut r = Report::default();
    r.field("status", "valid", json!("valid"));
    r.field("kind", kind_name(f.kind), json!(kind_name(f.kind)));
    r.field("operations", f.ops.len(), json!(f.ops.len()));
    r.field("wires", f.wires.len(), json!(f.wires.len()));
    let canonical = print_circuit(&f);
    r.field("canonical", &canonical, json!(canonical));
    Ok(r)
}

fn fmt_prob(p: f64) -> String {
    format!("{p:.12}")
}

fn nonphysical_warnings(f: &CircuitFragment, b: &Binding, eps: f64, require: bool, r: &mut Report) -> Result<(), Failure> {
    let bad = b.nonphysical(f, eps)?;
    if !bad.is_empty() {
        let msg = format!("non-physical operators bound to {}", bad.join(", "));
        if require {
            return Err(Failure { code: EXIT_NONPHYSICAL, message: msg });
        }
        r.warnings.push(msg);
    }
    Ok(())
}

fn eval(circuit: &Path, binding: &Path, method: Method, explain: bool, types: Option<&Path>, require: bool, eps: f64) -> Outcome {
    let f = read_circuit(circuit)?;
    let b = read_binding(binding)?;
    if let Some(t) = types {
        let registry = TypeRegistry::parse(&std::fs::read_to_string(t).map_err(Error::from)?)?;
        b.check_types(&registry)?;
    }
    let mut r = Report::default();
    nonphysical_warnings(&f, &b, eps, require, &mut r)?;
    let mut tensor = None;
    if method != Method::Foliation {
        let (p, plan) = probability_with_plan(&f, &b)?;
        tensor = Some(p);
        if explain {
            let steps: Vec<String> = plan.to_string().lines().map(str::to_string).collect();
            for s in &steps {
                r.line(s);
            }
            r.json.insert("plan".into(), json!(steps));
            r.field("peak_dim", plan.peak_dim, json!(plan.peak_dim));
        }
    }
    let foliated = if method != Method::Tensor { Some(probability_foliated(&f, &b)?) } else { None };
    match (tensor, foliated) {
        (Some(p), None) | (None, Some(p)) => r.field("probability", fmt_prob(p), json!(p)),
        (Some(p), Some(q)) => {
            r.field("tensor", fmt_prob(p), json!(p));
            r.field("foliation", fmt_prob(q), json!(q));
            r.field("difference", format!("{:.3e}", (p - q).abs()), json!((p - q).abs()));
        }
        (None, None) => unreachable!(),
    }
    Ok(r)
}

fn physical(path: &Path, witness: bool, out: Option<&Path>, require: bool, eps: f64) -> Outcome {
    let op = read_operator(path)?;
    let rep = is_physical(&op, eps);
    if require && !rep.physical {
        return Err(Failure {
            code: EXIT_NONPHYSICAL,
            message: format!("operator is not physical (positivity margin {:.6e}, trace margin {:.6e})", rep.positivity_margin, rep.trace_margin),
        });
    }
    let mut r = Report::default();
    r.field("positivity_margin", format!("{:.6e}", rep.positivity_margin), json!(rep.positivity_margin));
    r.field("trace_margin", format!("{:.6e}", rep.trace_margin), json!(rep.trace_margin));
    let verdict = if rep.physical { "physical" } else { "non-physical" };
    r.field("verdict", verdict, json!(verdict));
    if witness && !rep.physical {
        let w = witness_nonphysical(&op, eps)?;
        let kind = match w.kind {
            WitnessKind::Positivity => "positivity",
            WitnessKind::Trace => "trace",
        };
        r.field("witness_kind", kind, json!(kind));
        r.field("witness_value", format!("{:.12}", w.value), json!(w.value));
        let text = w.circuit_text(&op, "B");
        r.field("witness_circuit", &text, json!(text));
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(Error::from)?;
            write_operator(&dir.join("W.json"), &w.preparation)?;
            write_operator(&dir.join("V.json"), &w.result)?;
            write_operator(&dir.join("B.json"), &op)?;
            std::fs::write(dir.join("binding.txt"), "B = B.json\nW = W.json\nV = V.json\n").map_err(Error::from)?;
            std::fs::write(dir.join("circuit.txt"), format!("{text}\n")).map_err(Error::from)?;
            r.field("witness_files", dir.display(), json!(dir.display().to_string()));
        }
    }
    Ok(r)
}

fn fiducial_sets(types: impl IntoIterator<Item = SystemType>, manifests: &[PathBuf], r: &mut Report) -> Result<FiducialSets, Failure> {
    let mut sets = FiducialSets::new();
    for m in manifests {
        let f = read_fiducials(m)?;
        sets.insert(f.sys_type.name.clone(), f);
    }
    for t in types {
        if !sets.contains_key(&t.name) {
            sets.insert(t.name.clone(), default_fiducials(&t)?);
        }
    }
    for f in sets.values() {
        let c = f.condition_number();
        if c > CONDITION_WARNING {
            r.warnings.push(format!("fiducial metric for type {} has condition number {c:.3e}", f.sys_type.name));
        }
    }
    Ok(sets)
}

fn emit(r: &mut Report, key: &str, content: String, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, content + "\n").map_err(Error::from)?;
            r.field("written", p.display(), json!(p.display().to_string()));
        }
        None => {
            r.line(&content);
            r.json.insert(key.into(), serde_json::from_str(&content).expect("valid JSON"));
        }
    }
    Ok(())
}

fn decompose_cmd(path: &Path, color: Color, manifests: &[PathBuf], out: Option<&Path>) -> Outcome {
    let op = read_operator(path)?;
    let mut r = Report::default();
    let fs = fiducial_sets(op.slots().iter().map(|s| s.system_type()), manifests, &mut r)?;
    let mut dt = decompose(&op, &fs)?;
    if color == Color::Black {
        dt = convert_all(&dt, DotColor::Black, &fs)?;
    }
    emit(&mut r, "duotensor", duotensor_to_json(&dt), out)?;
    Ok(r)
}

fn reconstruct_cmd(path: &Path, manifests: &[PathBuf], out: Option<&Path>) -> Outcome {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let dt = duotensor_from_json(&text)?;
    let mut r = Report::default();
    let types: Vec<SystemType> = dt.indices.iter().map(|i| SystemType::new(i.label.sys.clone(), i.dim)).collect::<Result<_, _>>()?;
    let fs = fiducial_sets(types, manifests, &mut r)?;
    let white = convert_all(&dt, DotColor::White, &fs)?;
    emit(&mut r, "operator", operator_to_json(&reconstruct(&white, &fs)?), out)?;
    Ok(r)
}

fn tomography(path: &Path, shots: u64, seed: u64, manifests: &[PathBuf], out: Option<&Path>) -> Outcome {
    let hidden = read_operator(path)?;
    let mut r = Report::default();
    let fs = fiducial_sets(hidden.slots().iter().map(|s| s.system_type()), manifests, &mut r)?;
    let bb: Box<dyn BlackBox> = if shots == 0 {
        Box::new(ExactBox::new(hidden.clone()))
    } else {
        Box::new(SampledBox::new(hidden.clone(), shots, seed))
    };
    let rec = reconstruct_operation(bb.as_ref(), &fs)?;
    let mode = if shots == 0 { "exact".to_string() } else { format!("{shots} shots, seed {seed}") };
    r.field("mode", &mode, json!(mode));
    let err = rec.max_abs_diff(&hidden)?;
    r.field("max_entry_error", format!("{err:.6e}"), json!(err));
    if let Some(p) = out {
        write_operator(p, &rec)?;
        r.field("written", p.display(), json!(p.display().to_string()));
    }
    Ok(r)
}

fn locality(a: &Path, b_path: &Path, binding: &Path, eps: f64) -> Outcome {
    let fa = read_circuit(a)?;
    let fb = read_circuit(b_path)?;
    let b = read_binding(binding)?;
    let mut r = Report::default();
    let ratio = formalism_locality_ratio(&fa, &fb, &b, eps)?;
    match ratio {
        Some(x) => r.field("ratio", format!("{x:.12}"), json!(x)),
        None => r.field("ratio", "none", Value::Null),
    }
    r.field("proportional", ratio.is_some(), json!(ratio.is_some()));
    Ok(r)
}

fn foliate_cmd(path: &Path) -> Outcome {
    let f = read_circuit(path)?;
    let fol = foliate(&f);
    let mut r = Report::default();
    let layers = fol.describe(&f);
    r.field("layers", layers.len(), json!(layers.len()));
    for (k, l) in layers.iter().enumerate() {
        r.line(format!("layer {}: {l}", k + 1));
    }
    r.json.insert("layer_contents".into(), json!(layers));
    Ok(r)
}

fn fiducials_cmd(name: &str, dim: usize, out: &Path) -> Outcome {
    let f = default_fiducials(&SystemType::new(name, dim)?)?;
    let manifest = write_fiducials(out, &f)?;
    let mut r = Report::default();
    r.field("elements", f.count(), json!(f.count()));
    r.field("condition_number", format!("{:.6e}", f.condition_number()), json!(f.condition_number()));
    r.field("manifest", manifest.display(), json!(manifest.display().to_string()));
    Ok(r)
}

/// Operator JSON for `op`; exposed for tests that build input files.
pub fn operator_json(op: &LabeledOperator) -> String {
    operator_to_json(op)
}
