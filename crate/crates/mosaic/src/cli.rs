//! The `mosaic` executable: simulate, check, design, bench, and library
//! subcommands over one configuration model.
//!
//! Configuration precedence is flags > environment > config file >
//! defaults. The config file is flat `key=value` text; the API token for
//! remote generators is read only from the environment
//! (`MOSAIC_API_TOKEN`), never from files. Exit codes: 0 success, 1
//! verification failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent::{run_design_loop, Generator, ReplayGenerator, RemoteGenerator};
use crate::bench::{leaderboard_csv, render_leaderboard, run_benchmark, BenchConfig};
use crate::checks::{verify_circuit, InverterPolarity, VerifyOptions};
use crate::library::{load_from, render_library_table, ToolLibrary};
use crate::netlist::{parse_netlist, parse_netlist_partial, Circuit};
use crate::sim::{ac_gain, dc_sweep, solve_op, transient};
use crate::tasks::{benchmark_task, benchmark_tasks};

pub const ENV_TOKEN: &str = "MOSAIC_API_TOKEN";
pub const ENV_LIBRARY: &str = "MOSAIC_LIBRARY";
pub const ENV_CONFIG: &str = "MOSAIC_CONFIG";
pub const ENV_ENDPOINT: &str = "MOSAIC_ENDPOINT";
pub const ENV_MODEL: &str = "MOSAIC_MODEL";

#[derive(Parser)]
#[command(
    name = "mosaic",
    about = "Analog circuit verification engine and design-agent harness",
    version
)]
struct Cli {
    /// Flat key=value config file (also via MOSAIC_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Tool library file (also via MOSAIC_LIBRARY).
    #[arg(long, global = true)]
    library: Option<PathBuf>,
    /// Supply rail in volts.
    #[arg(long, global = true)]
    vdd: Option<f64>,
    #[arg(long, global = true, value_enum)]
    output: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    #[value(name = "json-lines")]
    JsonLines,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorKind {
    Remote,
    Replay,
}

#[derive(Args)]
struct GeneratorArgs {
    #[arg(long, value_enum)]
    generator: Option<GeneratorKind>,
    /// Replay script: replies separated by lines of `%%%`.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completions endpoint URL for the remote generator.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the remote generator.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a netlist and run DC, sweep, transient, or AC analyses.
    Simulate {
        netlist: PathBuf,
        /// DC operating point (default when no other analysis is given).
        #[arg(long)]
        op: bool,
        /// DC sweep: SOURCE:START:STOP:STEP.
        #[arg(long)]
        sweep: Option<String>,
        /// Transient: TSTEP:TSTOP (seconds).
        #[arg(long)]
        tran: Option<String>,
        /// AC magnitude/phase at one frequency (Hz); needs --input.
        #[arg(long)]
        ac: Option<f64>,
        /// Source to excite for --ac.
        #[arg(long)]
        input: Option<String>,
        /// Node to report (--ac) or column subset (--tran/--sweep).
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Write sweep/transient results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the four-stage verification flow on a netlist.
    Check {
        netlist: PathBuf,
        #[arg(long)]
        task: u32,
        /// Read the inverter endpoint criteria as written or accept
        /// either polarity.
        #[arg(long, value_enum, default_value = "verbatim")]
        inverter_polarity: PolarityArg,
        /// Treat the run as tool-assisted: composite tasks must
        /// instantiate a library subcircuit.
        #[arg(long)]
        tools_active: bool,
    },
    /// Drive the generate -> verify -> feedback loop for one task.
    Design {
        #[arg(long)]
        task: u32,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
    /// Run n trials per task and score Pass@k with Wilson intervals.
    Bench {
        /// "all" or a comma-separated id list.
        #[arg(long, default_value = "all")]
        tasks: String,
        #[arg(long, default_value_t = 30)]
        n: u32,
        #[arg(long, default_value = "1,5")]
        k: String,
        #[command(flatten)]
        generator: GeneratorArgs,
        /// Append-only trial ledger; reruns resume from it.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
        /// Do not archive successes (frozen-library ablation).
        #[arg(long)]
        freeze_library: bool,
        /// Write the leaderboard as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inspect or edit the tool library.
    Library {
        #[command(subcommand)]
        action: LibraryAction,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolarityArg {
    Verbatim,
    Either,
}

#[derive(Subcommand)]
enum LibraryAction {
    /// Print the specification table.
    List,
    /// Print one entry's subcircuit netlist.
    Export { task_id: u32 },
    /// Verify a netlist against a task and archive it on success.
    Add {
        netlist: PathBuf,
        #[arg(long)]
        task: u32,
    },
}

/// Merged configuration after precedence resolution.
pub struct RunConfig {
    pub vdd: f64,
    pub library_path: Option<PathBuf>,
    pub concurrency: usize,
    pub output_json: bool,
    pub generator: GeneratorChoice,
}

pub enum GeneratorChoice {
    Replay { script: PathBuf },
    Remote { endpoint: String, model: String, token: String },
    Unconfigured,
}

struct ConfigError(String);

impl ConfigError {
    fn fail(self) -> ExitCode {
        eprintln!("config error: {}", self.0);
        ExitCode::from(2)
    }
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ConfigError(format!(
                "{}:{}: expected key=value, got \"{line}\"",
                path.display(),
                idx + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn load_config(cli: &Cli, gen_args: Option<&GeneratorArgs>) -> Result<RunConfig, ConfigError> {
    let env = |k: &str| std::env::var(k).ok();
    let file_path = cli
        .config
        .clone()
        .or_else(|| env(ENV_CONFIG).map(PathBuf::from));
    let file = match &file_path {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let fget = |k: &str| file.get(k).cloned();

    let vdd = match cli.vdd {
        Some(v) => v,
        None => match fget("vdd") {
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError(format!("vdd is not a number: {s}")))?,
            None => 5.0,
        },
    };
    if vdd <= 0.0 {
        return Err(ConfigError(format!("vdd must be positive, got {vdd}")));
    }
    let library_path = cli
        .library
        .clone()
        .or_else(|| env(ENV_LIBRARY).map(PathBuf::from))
        .or_else(|| fget("library").map(PathBuf::from));
    let concurrency = match fget("concurrency") {
        Some(s) => s
            .parse()
            .map_err(|_| ConfigError(format!("concurrency is not a number: {s}")))?,
        None => 1,
    };
    if concurrency == 0 {
        return Err(ConfigError("concurrency must be at least 1".into()));
    }

    let kind = gen_args.and_then(|g| g.generator).or_else(|| {
        match fget("generator").as_deref() {
            Some("remote") => Some(GeneratorKind::Remote),
            Some("replay") => Some(GeneratorKind::Replay),
            _ => None,
        }
    });
    let generator = match kind {
        Some(GeneratorKind::Replay) => {
            let script = gen_args
                .and_then(|g| g.script.clone())
                .or_else(|| fget("script").map(PathBuf::from))
                .ok_or_else(|| ConfigError("replay generator needs --script".into()))?;
            GeneratorChoice::Replay { script }
        }
        Some(GeneratorKind::Remote) => {
            let endpoint = gen_args
                .and_then(|g| g.endpoint.clone())
                .or_else(|| env(ENV_ENDPOINT))
                .or_else(|| fget("endpoint"))
                .ok_or_else(|| ConfigError("remote generator needs --endpoint".into()))?;
            let model = gen_args
                .and_then(|g| g.model.clone())
                .or_else(|| env(ENV_MODEL))
                .or_else(|| fget("model"))
                .ok_or_else(|| ConfigError("remote generator needs --model".into()))?;
            let token = env(ENV_TOKEN).ok_or_else(|| {
                ConfigError(format!(
                    "remote generator needs the {ENV_TOKEN} environment variable (tokens are never read from files)"
                ))
            })?;
            GeneratorChoice::Remote { endpoint, model, token }
        }
        None => GeneratorChoice::Unconfigured,
    };

    let output_json = match cli.output {
        Some(OutputFormat::JsonLines) => true,
        Some(OutputFormat::Text) => false,
        None => fget("output").as_deref() == Some("json-lines"),
    };
    Ok(RunConfig {
        vdd,
        library_path,
        concurrency,
        output_json,
        generator,
    })
}

fn load_library(config: &RunConfig) -> Result<ToolLibrary, ConfigError> {
    match &config.library_path {
        Some(path) if path.exists() => {
            load_from(path).map_err(|e| ConfigError(format!("library: {e}")))
        }
        Some(path) => Ok(ToolLibrary::with_path(path)),
        None => Ok(ToolLibrary::new()),
    }
}

fn make_generator(config: &RunConfig) -> Result<Box<dyn Generator>, ConfigError> {
    match &config.generator {
        GeneratorChoice::Replay { script } => {
            let text = std::fs::read_to_string(script)
                .map_err(|e| ConfigError(format!("cannot read script {}: {e}", script.display())))?;
            Ok(Box::new(ReplayGenerator::from_script(&text)))
        }
        GeneratorChoice::Remote { endpoint, model, token } => {
            Ok(Box::new(RemoteGenerator::new(endpoint, model, token)))
        }
        GeneratorChoice::Unconfigured => Err(ConfigError(
            "no generator configured: pass --generator replay|remote".into(),
        )),
    }
}

fn read_circuit(path: &Path) -> Result<Circuit, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_netlist(&text).map_err(|e| e.to_string())
}

fn json_line(value: serde_json::Value) {
    println!("{value}");
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&cli),
        Command::Check { .. } => cmd_check(&cli),
        Command::Design { .. } => cmd_design(&cli),
        Command::Bench { .. } => cmd_bench(&cli),
        Command::Library { .. } => cmd_library(&cli),
    }
}

fn cmd_simulate(cli: &Cli) -> ExitCode {
    let Command::Simulate {
        netlist,
        op,
        sweep,
        tran,
        ac,
        input,
        nodes,
        csv,
    } = &cli.command
    else {
        unreachable!()
    };
    let config = match load_config(cli, None) {
        Ok(c) => c,
        Err(e) => return e.fail(),
    };
    let circuit = match read_circuit(netlist) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let flat = match circuit.flatten() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };

    if let Some(spec) = sweep {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 4 {
            eprintln!("--sweep wants SOURCE:START:STOP:STEP");
            return ExitCode::from(2);
        }
        let nums: Result<Vec<f64>, _> = parts[1..].iter().map(|s| s.parse::<f64>()).collect();
        let Ok(nums) = nums else {
            eprintln!("--sweep values must be numbers");
            return ExitCode::from(2);
        };
        return match dc_sweep(&flat, parts[0], nums[0], nums[1], nums[2]) {
            Ok(result) => {
                let watch = pick_nodes(&flat, nodes);
                if config.output_json {
                    for (vin, op) in &result.points {
                        let vs: BTreeMap<&String, f64> = watch
                            .iter()
                            .filter_map(|n| op.voltage(n).map(|v| (n, v)))
                            .collect();
                        json_line(serde_json::json!({
                            "type": "sweep_point", "source": result.swept_source,
                            "input_v": vin, "converged": op.converged, "voltages": vs,
                        }));
                    }
                } else {
                    println!("sweep of {} ({} points)", result.swept_source, result.points.len());
                    print!("{:>12}", "input_v");
                    for n in &watch {
                        print!(" {n:>14}");
                    }
                    println!();
                    for (vin, op) in &result.points {
                        print!("{vin:>12.6}");
                        for n in &watch {
                            print!(" {:>14.6}", op.voltage(n).unwrap_or(f64::NAN));
                        }
                        println!();
                    }
                }
                if let Some(path) = csv {
                    let mut out = String::from("input_v");
                    for n in &watch {
                        out.push_str(&format!(",{n}"));
                    }
                    out.push('\n');
                    for (vin, op) in &result.points {
                        out.push_str(&format!("{vin:.8e}"));
                        for n in &watch {
                            out.push_str(&format!(",{:.8e}", op.voltage(n).unwrap_or(f64::NAN)));
                        }
                        out.push('\n');
                    }
                    if std::fs::write(path, out).is_err() {
                        eprintln!("cannot write {}", path.display());
                        return ExitCode::from(1);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        };
    }

    if let Some(spec) = tran {
        let parts: Vec<&str> = spec.split(':').collect();
        let nums: Result<Vec<f64>, _> = parts.iter().map(|s| s.parse::<f64>()).collect();
        let Ok(nums) = nums else {
            eprintln!("--tran wants TSTEP:TSTOP in seconds");
            return ExitCode::from(2);
        };
        if nums.len() != 2 {
            eprintln!("--tran wants TSTEP:TSTOP in seconds");
            return ExitCode::from(2);
        }
        return match transient(&flat, nums[0], nums[1]) {
            Ok(wave) => {
                let watch = pick_nodes(&flat, nodes);
                if config.output_json {
                    json_line(serde_json::json!({
                        "type": "waveform", "samples": wave.len(),
                        "truncation": wave.truncation,
                    }));
                } else {
                    println!(
                        "transient: {} samples to t = {:.6e} s{}",
                        wave.len(),
                        wave.time_s.last().copied().unwrap_or(0.0),
                        wave.truncation
                            .as_deref()
                            .map(|t| format!(" ({t})"))
                            .unwrap_or_default()
                    );
                }
                if let Some(path) = csv {
                    let mut out = String::from("time_s");
                    for n in &watch {
                        out.push_str(&format!(",{n}"));
                    }
                    out.push('\n');
                    for (i, t) in wave.time_s.iter().enumerate() {
                        out.push_str(&format!("{t:.8e}"));
                        for n in &watch {
                            let v = wave.signal(n).map(|s| s[i]).unwrap_or(f64::NAN);
                            out.push_str(&format!(",{v:.8e}"));
                        }
                        out.push('\n');
                    }
                    if std::fs::write(path, out).is_err() {
                        eprintln!("cannot write {}", path.display());
                        return ExitCode::from(1);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        };
    }

    if let Some(freq) = ac {
        let Some(source) = input else {
            eprintln!("--ac needs --input SOURCE");
            return ExitCode::from(2);
        };
        let out_node = nodes.first().cloned().unwrap_or_default();
        if out_node.is_empty() {
            eprintln!("--ac needs --nodes OUTPUT");
            return ExitCode::from(2);
        }
        let mut excitation = BTreeMap::new();
        excitation.insert(source.clone(), num_complex::Complex64::new(1.0, 0.0));
        return match ac_gain(&flat, &excitation, &out_node, *freq) {
            Ok(gain) => {
                if config.output_json {
                    json_line(serde_json::json!({
                        "type": "ac_gain", "frequency_hz": freq, "output": out_node,
                        "magnitude": gain.norm(), "phase_deg": gain.arg().to_degrees(),
                        "re": gain.re, "im": gain.im,
                    }));
                } else {
                    println!(
                        "|gain| = {:.9} ({:.4} dB), phase = {:.4} deg at {freq} Hz",
                        gain.norm(),
                        20.0 * gain.norm().max(1e-300).log10(),
                        gain.arg().to_degrees()
                    );
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        };
    }

    // default: operating point
    let _ = op;
    match solve_op(&flat) {
        Ok(solution) => {
            if config.output_json {
                json_line(serde_json::json!({
                    "type": "op", "converged": solution.converged,
                    "iterations": solution.iterations,
                    "node_voltages": solution.node_voltages,
                    "branch_currents": solution.branch_currents,
                }));
                for d in &solution.devices {
                    json_line(serde_json::json!({
                        "type": "device_state", "name": d.element_name,
                        "region": d.region, "id_a": d.id, "vgs_v": d.vgs,
                        "vds_v": d.vds, "gm_s": d.gm, "gds_s": d.gds,
                    }));
                }
            } else {
                println!("operating point converged in {} iterations", solution.iterations);
                for (node, v) in &solution.node_voltages {
                    println!("V({node}) = {v:.9}");
                }
                for (src, i) in &solution.branch_currents {
                    println!("I({src}) = {i:.9e}");
                }
                for d in &solution.devices {
                    println!(
                        "{}: {} id={:.6e} A vgs={:.6} vds={:.6} gm={:.6e} gds={:.6e}",
                        d.element_name, d.region, d.id, d.vgs, d.vds, d.gm, d.gds
                    );
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn pick_nodes(circuit: &Circuit, requested: &[String]) -> Vec<String> {
    if requested.is_empty() {
        circuit.nodes().into_iter().filter(|n| n != "0").collect()
    } else {
        requested
            .iter()
            .map(|n| crate::netlist::normalize_node(n))
            .collect()
    }
}

fn cmd_check(cli: &Cli) -> ExitCode {
    let Command::Check {
        netlist,
        task,
        inverter_polarity,
        tools_active,
    } = &cli.command
    else {
        unreachable!()
    };
    let config = match load_config(cli, None) {
        Ok(c) => c,
        Err(e) => return e.fail(),
    };
    let Some(task) = benchmark_task(*task) else {
        eprintln!("unknown task id {task}; the benchmark has tasks 1..=24");
        return ExitCode::from(2);
    };
    let text = match std::fs::read_to_string(netlist) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", netlist.display());
            return ExitCode::from(2);
        }
    };
    let opts = VerifyOptions {
        vdd: config.vdd,
        tools_active: *tools_active,
        inverter_polarity: match inverter_polarity {
            PolarityArg::Verbatim => InverterPolarity::Verbatim,
            PolarityArg::Either => InverterPolarity::Either,
        },
    };
    let parsed = parse_netlist_partial(&text).and_then(|mut circuit| {
        if let Ok(lib) = load_library(&config) {
            for def in lib.subckt_defs() {
                circuit
                    .subckts
                    .entry(def.name.clone())
                    .or_insert_with(|| def.clone());
            }
        }
        circuit.resolve()?;
        Ok(circuit)
    });
    let outcome = match parsed {
        Ok(circuit) => verify_circuit(&circuit, &task, &opts),
        Err(e) => crate::report::VerificationOutcome {
            task_id: task.id,
            stages: vec![crate::report::StageReport::failed(
                crate::report::Stage::Requirement,
                vec![e.to_string()],
            )],
            final_pass: false,
            bias_substitutions: Default::default(),
        },
    };

    if config.output_json {
        for stage in &outcome.stages {
            json_line(serde_json::to_value(stage).expect("stage reports serialize"));
        }
        json_line(serde_json::json!({
            "type": "verification_outcome", "task_id": outcome.task_id,
            "final_pass": outcome.final_pass,
            "bias_substitutions": outcome.bias_substitutions,
        }));
    } else {
        for stage in &outcome.stages {
            let verdict = if stage.passed { "pass" } else { "FAIL" };
            println!("stage {:<12} {}", stage.stage.to_string(), verdict);
            if !stage.feedback.is_empty() {
                for line in stage.feedback.lines() {
                    println!("    {line}");
                }
            }
            for (name, value) in &stage.measurements {
                println!("    {name} = {value:.6e}");
            }
        }
        println!("result: {}", if outcome.final_pass { "PASS" } else { "FAIL" });
    }
    if outcome.final_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_design(cli: &Cli) -> ExitCode {
    let Command::Design { task, generator } = &cli.command else {
        unreachable!()
    };
    let config = match load_config(cli, Some(generator)) {
        Ok(c) => c,
        Err(e) => return e.fail(),
    };
    let Some(task) = benchmark_task(*task) else {
        eprintln!("unknown task id {task}; the benchmark has tasks 1..=24");
        return ExitCode::from(2);
    };
    let mut lib = match load_library(&config) {
        Ok(l) => l,
        Err(e) => return e.fail(),
    };
    let mut gen = match make_generator(&config) {
        Ok(g) => g,
        Err(e) => return e.fail(),
    };
    let opts = VerifyOptions {
        vdd: config.vdd,
        ..Default::default()
    };
    let record = run_design_loop(&task, gen.as_mut(), &mut lib, &opts);
    if config.output_json {
        json_line(serde_json::json!({
            "type": "trial_record", "task_id": record.task_id,
            "attempts": record.attempts.len(), "success": record.success,
            "tokens_estimate": record.tokens_estimate,
            "transport_failure": record.transport_failure,
        }));
    } else {
        println!(
            "task {}: {} after {} attempt(s), ~{} tokens",
            record.task_id,
            if record.success { "success" } else { "failure" },
            record.attempts.len(),
            record.tokens_estimate
        );
        if let Some(err) = &record.transport_failure {
            println!("transport failure: {err}");
        }
        for attempt in &record.attempts {
            let verdict = match &attempt.outcome {
                Some(o) if o.final_pass => "pass".to_string(),
                Some(o) => o
                    .first_failure()
                    .map(|s| format!("failed at {}", s.stage))
                    .unwrap_or_else(|| "failed".to_string()),
                None => "no netlist extracted".to_string(),
            };
            println!("  attempt {}: {}", attempt.index, verdict);
        }
    }
    if record.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_bench(cli: &Cli) -> ExitCode {
    let Command::Bench {
        tasks,
        n,
        k,
        generator,
        ledger,
        concurrency,
        freeze_library,
        csv,
    } = &cli.command
    else {
        unreachable!()
    };
    let config = match load_config(cli, Some(generator)) {
        Ok(c) => c,
        Err(e) => return e.fail(),
    };
    if !(k == "1,5" || k == "1" || k == "5") {
        eprintln!("--k supports 1,5 (pass@1 and pass@5)");
        return ExitCode::from(2);
    }
    let selected = if tasks == "all" {
        benchmark_tasks()
    } else {
        let mut out = Vec::new();
        for part in tasks.split(',') {
            match part.trim().parse::<u32>().ok().and_then(benchmark_task) {
                Some(t) => out.push(t),
                None => {
                    eprintln!("unknown task id \"{part}\"");
                    return ExitCode::from(2);
                }
            }
        }
        out
    };
    let mut lib = match load_library(&config) {
        Ok(l) => l,
        Err(e) => return e.fail(),
    };
    // one replay script (or remote session) per trial
    let choice = config.generator;
    let factory = move |_task: u32, _trial: u32| -> Box<dyn Generator> {
        match &choice {
            GeneratorChoice::Replay { script } => {
                let text = std::fs::read_to_string(script).unwrap_or_default();
                Box::new(ReplayGenerator::from_script(&text))
            }
            GeneratorChoice::Remote { endpoint, model, token } => {
                Box::new(RemoteGenerator::new(endpoint, model, token))
            }
            GeneratorChoice::Unconfigured => Box::new(ReplayGenerator::new(vec![])),
        }
    };
    let bench_config = BenchConfig {
        n: *n,
        concurrency: concurrency.unwrap_or(config.concurrency),
        ledger_path: ledger.clone(),
        freeze_library: *freeze_library,
        verify: VerifyOptions {
            vdd: config.vdd,
            ..Default::default()
        },
    };
    match run_benchmark(&selected, &factory, &bench_config, &mut lib) {
        Ok((_ledger, report)) => {
            if config.output_json {
                for (task_id, score) in &report.per_task {
                    json_line(serde_json::json!({
                        "type": "task_score", "task_id": task_id, "n": report.n,
                        "successes": score.successes, "pass_at_1": score.pass_at_1,
                        "pass_at_5": score.pass_at_5,
                        "wilson_90_lo": score.wilson_90.0, "wilson_90_hi": score.wilson_90.1,
                    }));
                }
                json_line(serde_json::json!({
                    "type": "bench_report", "n": report.n,
                    "avg_pass_at_1": report.avg_pass_at_1,
                    "avg_pass_at_5": report.avg_pass_at_5,
                    "num_solved": report.num_solved,
                }));
            } else {
                print!("{}", render_leaderboard(&report));
            }
            if let Some(path) = csv {
                if std::fs::write(path, leaderboard_csv(&report)).is_err() {
                    eprintln!("cannot write {}", path.display());
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_library(cli: &Cli) -> ExitCode {
    let Command::Library { action } = &cli.command else {
        unreachable!()
    };
    let config = match load_config(cli, None) {
        Ok(c) => c,
        Err(e) => return e.fail(),
    };
    let mut lib = match load_library(&config) {
        Ok(l) => l,
        Err(e) => return e.fail(),
    };
    match action {
        LibraryAction::List => {
            if config.output_json {
                for entry in lib.entries.values() {
                    json_line(serde_json::json!({
                        "type": "tool_entry", "task_id": entry.task_id,
                        "circuit_type": entry.circuit_type, "gain_db": entry.gain_db,
                        "common_mode_gain_db": entry.common_mode_gain_db,
                        "ports": entry.ports, "phase_relation": entry.phase_relation,
                    }));
                }
            } else {
                print!("{}", render_library_table(&lib));
            }
            ExitCode::SUCCESS
        }
        LibraryAction::Export { task_id } => match lib.get(*task_id) {
            Some(entry) => {
                let mut host = Circuit::default();
                host.subckts
                    .insert(entry.subckt.name.clone(), entry.subckt.clone());
                print!("{}", host.to_netlist());
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("no library entry for task {task_id}");
                ExitCode::from(1)
            }
        },
        LibraryAction::Add { netlist, task } => {
            let Some(task) = benchmark_task(*task) else {
                eprintln!("unknown task id {task}");
                return ExitCode::from(2);
            };
            let circuit = match read_circuit(netlist) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            let opts = VerifyOptions {
                vdd: config.vdd,
                ..Default::default()
            };
            let outcome = verify_circuit(&circuit, &task, &opts);
            if !outcome.final_pass {
                let stage = outcome
                    .first_failure()
                    .map(|s| format!("{}: {}", s.stage, s.feedback))
                    .unwrap_or_default();
                eprintln!("netlist does not pass verification; not archived\n{stage}");
                return ExitCode::from(1);
            }
            match crate::library::archive_design(&mut lib, &task, &circuit, &outcome) {
                Ok(stored) => {
                    println!(
                        "task {}: {}",
                        task.id,
                        if stored { "archived" } else { "kept existing (better) entry" }
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
