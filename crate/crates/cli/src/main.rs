use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadfl::config::{ConfigError, ScenarioConfig};
use quadfl::math::Vec3;
use quadfl::model::{hover_trim, VehicleParams};
use quadfl::sim::{
    fd_derivative_check_strided, linearization_exactness_check, simulate, CheckError, OutputChannel, RunSummary,
    SimError, Telemetry,
};
use quadfl::verify::{self, Mutation, VerifyConfig};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DOMAIN: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Feedback-linearized quadrotor simulator and verification suite.
#[derive(Debug, Parser)]
#[command(name = "quadfl", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run scenario files and write telemetry plus a summary per file.
    Simulate(SimulateArgs),
    /// Run the property suite and print the pass/fail ledger.
    Verify(VerifyArgs),
    /// Print the hover trim state and command.
    Trim(TrimArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario files (TOML). Several files run concurrently.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Output directory; each scenario writes to `<out>/<file stem>/`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the integration step (s).
    #[arg(long, value_name = "S")]
    dt: Option<f64>,
    /// Override the horizon (s).
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    /// Override the position-chain pole magnitude (rad/s).
    #[arg(long, value_name = "RAD_S")]
    lambda_pos: Option<f64>,
    /// Override the heading-chain pole magnitude (rad/s).
    #[arg(long, value_name = "RAD_S")]
    lambda_psi: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MutationArg {
    #[value(name = "negate-h-r")]
    NegateHR,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Random states per sampled check (0 skips them).
    #[arg(long, default_value_t = verify::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = verify::DEFAULT_SEED)]
    seed: u64,
    /// Also write `ledger.txt` and `ledger.jsonl` here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vehicle parameters from a scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, hide = true, value_enum)]
    mutate: Option<MutationArg>,
}

#[derive(Debug, Args)]
struct TrimArgs {
    /// Heading (rad).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    psi: f64,
    /// Hover position `x,y,z` (m).
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    position: Vec3,
    /// Vehicle parameters from a scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {} values", parts.len())),
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_CONFIG };
        Self::new(code, e.to_string())
    }
}

fn load_params(config: Option<&Path>) -> Result<VehicleParams, Failure> {
    match config {
        Some(path) => Ok(ScenarioConfig::load(path)?.vehicle.params().map_err(ConfigError::from)?),
        None => Ok(VehicleParams::default()),
    }
}

fn write_telemetry(path: &Path, tel: &Telemetry) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::io(path, e))?;
    let mut out = BufWriter::new(file);
    tel.write_csv(&mut out).map_err(|e| Failure::io(path, e))?;
    out.flush().map_err(|e| Failure::io(path, e))
}

/// Post-run checks requested by the scenario; returns report lines and
/// whether all passed.
fn scenario_checks(cfg: &ScenarioConfig, tel: &Telemetry) -> Result<(Vec<String>, bool), Failure> {
    let sc = cfg.scenario()?;
    let mut lines = Vec::new();
    let mut ok = true;
    if sc.verification.exactness_check {
        match linearization_exactness_check(&sc) {
            Ok(rep) => {
                for c in &rep.channels {
                    lines.push(format!("exactness {:?}: max {:.3e}, rms {:.3e}", c.channel, c.max, c.rms));
                }
                let pass = rep.max_deviation() < 1e-6;
                ok &= pass;
                lines.push(format!("exactness {}", if pass { "PASS" } else { "FAIL" }));
            }
            Err(CheckError::DisturbanceNotZero) => lines.push("exactness skipped: scenario is disturbed".into()),
            Err(e) => {
                ok = false;
                lines.push(format!("exactness FAIL: {e}"));
            }
        }
    }
    if sc.verification.fd_checks {
        for ch in OutputChannel::ALL {
            for order in 1..=ch.chain_order() {
                let stride = [1, 1, 5, 10, 20][order];
                match fd_derivative_check_strided(tel, ch, order, stride) {
                    Ok(rep) => {
                        ok &= rep.passed();
                        lines.push(format!(
                            "fd {:?} order {}: residual {:.3e}, bound {:.3e} {}",
                            ch,
                            order,
                            rep.max_residual,
                            rep.expected_bound,
                            if rep.passed() { "PASS" } else { "FAIL" }
                        ));
                    }
                    Err(e) => lines.push(format!("fd {ch:?} order {order} skipped: {e}")),
                }
            }
        }
    }
    Ok((lines, ok))
}

fn run_scenario(path: &Path, args: &SimulateArgs) -> Result<String, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(dt) = args.dt {
        cfg.run.step_s = dt;
    }
    if let Some(d) = args.duration {
        cfg.run.duration_s = d;
    }
    cfg.set_poles(args.lambda_pos, args.lambda_psi);
    let sc = cfg.scenario()?;

    let stem = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    let dir = args.out.join(&stem);
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;

    let (tel, abort) = match simulate(&sc) {
        Ok(tel) => (tel, None),
        Err(a) => (a.partial, Some(a.error)),
    };
    write_telemetry(&dir.join("telemetry.csv"), &tel)?;

    let mut summary = format!("scenario              {}\n{}\n", path.display(), RunSummary::from_telemetry(&tel));
    let mut failure = None;
    match abort {
        Some(e) => {
            summary.push_str(&format!("aborted               {e}\n"));
            let code = if matches!(e, SimError::InvalidScenario(_)) { EXIT_CONFIG } else { EXIT_DOMAIN };
            failure = Some(Failure::new(code, format!("{}: {e}", path.display())));
        }
        None => {
            let (lines, ok) = scenario_checks(&cfg, &tel)?;
            for l in lines {
                summary.push_str(&l);
                summary.push('\n');
            }
            if !ok {
                failure = Some(Failure::new(EXIT_VERIFY, format!("{}: scenario checks failed", path.display())));
            }
        }
    }
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, &summary).map_err(|e| Failure::io(&summary_path, e))?;
    match failure {
        Some(f) => {
            print!("{summary}");
            Err(f)
        }
        None => Ok(summary),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let results: Vec<Result<String, Failure>> = if args.files.len() == 1 {
        vec![run_scenario(&args.files[0], args)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = args.files.iter().map(|f| s.spawn(move || run_scenario(f, args))).collect();
            handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
        })
    };
    let mut worst: Option<Failure> = None;
    for r in results {
        match r {
            Ok(summary) => print!("{summary}"),
            Err(f) => {
                eprintln!("error: {}", f.message);
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let cfg = VerifyConfig {
        samples: args.samples,
        seed: args.seed,
        params: load_params(args.config.as_deref())?,
        mutation: args.mutate.map(|MutationArg::NegateHR| Mutation::NegateKnownSnapTerm),
    };
    let ledger = verify::run(&cfg);
    println!("{ledger}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let text = dir.join("ledger.txt");
        fs::write(&text, format!("{ledger}\n")).map_err(|e| Failure::io(&text, e))?;
        let json = dir.join("ledger.jsonl");
        fs::write(&json, ledger.to_json_lines()).map_err(|e| Failure::io(&json, e))?;
    }
    if ledger.passed() {
        Ok(())
    } else {
        let ids: Vec<&str> = ledger.failures().map(|e| e.id).collect();
        Err(Failure::new(EXIT_VERIFY, format!("verification failed: {}", ids.join(", "))))
    }
}

fn cmd_trim(args: &TrimArgs) -> Result<(), Failure> {
    let p = load_params(args.config.as_deref())?;
    let (x, u) = hover_trim(&p, args.position, args.psi);
    println!("r        [{}, {}, {}] m", x.r.x, x.r.y, x.r.z);
    println!("v        [0, 0, 0] m/s");
    println!("euler    [{}, {}, {}] rad", x.theta.phi, x.theta.theta, x.theta.psi);
    println!("omega_b  [0, 0, 0] rad/s");
    println!("zeta     {} m/s^2", x.zeta);
    println!("chi      {} m/s^3", x.chi);
    println!("u_bar    [{}, {}, {}, {}]", u.u1_ddot, u.u2, u.u3, u.u4);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Trim(a) => cmd_trim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !matches!(cli.command, Command::Simulate(_)) {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
