use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segregation::analysis::{interface_velocity, extract_interface, write_fronts_csv, InterfaceTrack};
use segregation::entropy::{
    concentration_check, default_gammas, flow_scaling, g_reference, kappa, DiscreteVariable,
};
use segregation::experiment::{emit_plotdata, initial_data, preset, run_experiment, ExperimentConfig, Profile, PRESETS};
use segregation::kmc::{mean_profiles, SimParams};
use segregation::lattice::TorusGeometry;
use segregation::master::{entropy_trajectory, write_entropy_csv, ProductBernoulli, ReferencePath};
use segregation::rd::{solve, write_state_csv, RdParams, SolveOptions};

type AnyError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "segregation", version, about = "Two-species exclusion with divergent annihilation rates")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replica-averaged KMC profiles.
    Kmc {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
    },
    /// Semi-discrete solve with a-priori monitors.
    Rd {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Exact relative-entropy series against the rd reference (N^d <= 8).
    Master {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Flow and concentration checks.
    Entropy {
        #[command(subcommand)]
        what: EntropyCmd,
    },
    /// Interface extraction on a finished artifact directory.
    Analyze { dir: PathBuf },
    /// Full experiment from a preset name or a config file.
    Run {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Gnuplot-ready profile files for an artifact directory.
    Plotdata { dir: PathBuf },
}

#[derive(Subcommand)]
enum EntropyCmd {
    Flow {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        l_sweep: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Concentration {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
        p: Vec<f64>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    case: u8,
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Fixed K (overrides --delta).
    #[arg(long)]
    k: Option<f64>,
    /// K = max(delta sqrt(log N), 1).
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    offsets: Option<String>,
    /// Profile JSON, e.g. '{"kind":"step","from":0,"to":0.5,"height":0.8}'.
    #[arg(long, default_value = r#"{"kind":"step","from":0.0,"to":0.5,"height":0.8}"#)]
    u0: String,
    #[arg(long, default_value = r#"{"kind":"step","from":0.5,"to":1.0,"height":0.6}"#)]
    v0: String,
    #[arg(long, default_value_t = 0.1)]
    horizon: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1")]
    times: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ModelArgs {
    fn config(&self) -> Result<ExperimentConfig, AnyError> {
        let profile = |s: &str| -> Result<Profile, AnyError> { Ok(serde_json::from_str(s)?) };
        let k_rule = match self.k {
            Some(k) => segregation::experiment::KRule::Constant { k },
            None => segregation::experiment::KRule::SqrtLog { delta: self.delta },
        };
        let mut cfg = preset("case2-demo").expect("preset exists");
        cfg.name = "cli".into();
        cfg.case = self.case;
        cfg.m = self.m;
        cfg.d = self.d;
        cfg.n = vec![self.n];
        cfg.k_rule = k_rule;
        cfg.offsets = self.offsets.clone();
        cfg.u0 = profile(&self.u0)?;
        cfg.v0 = profile(&self.v0)?;
        cfg.horizon = self.horizon;
        cfg.checkpoints = self.times.clone();
        cfg.seed = self.seed;
        cfg.output = self.out.clone();
        cfg.kmc_n = None;
        cfg.validate_model()?;
        Ok(cfg)
    }
}

fn writer(path: &Path) -> Result<BufWriter<fs::File>, AnyError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn main() -> ExitCode {
    // Usage errors are execution errors here; exit code 2 is reserved for
    // failed checks.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means the run completed but an assertion failed.
fn dispatch(cmd: Cmd) -> Result<bool, AnyError> {
    match cmd {
        Cmd::Kmc { model, replicas } => {
            let cfg = model.config()?;
            let geom = TorusGeometry::new(model.n, model.d)?;
            let k = cfg.k_rule.k(model.n);
            let (c1, c2) = cfg.rates()?;
            let init = initial_data(&cfg, &geom, k)?;
            let params = SimParams::new(geom, k, c1, c2, cfg.horizon, cfg.seed)?;
            let hash = cfg.hash();
            for p in mean_profiles(&params, &init.u0, &init.v0, &cfg.checkpoints, replicas)? {
                let path = model.out.join(format!("kmc_t{}.csv", p.time));
                p.write_csv(writer(&path)?, cfg.seed, &hash)?;
                println!("{}", path.display());
            }
            Ok(true)
        }
        Cmd::Rd { model } => {
            let cfg = model.config()?;
            let geom = TorusGeometry::new(model.n, model.d)?;
            let k = cfg.k_rule.k(model.n);
            let (c1, c2) = cfg.rates()?;
            let init = initial_data(&cfg, &geom, k)?;
            let params = RdParams::new(geom, k, c1, c2)?;
            let opts = SolveOptions { dt: None, strict: false };
            let traj = solve(&init, &params, cfg.horizon, &cfg.checkpoints, opts)?;
            for &t in &cfg.checkpoints {
                let i = traj.index_of(t).expect("checkpoint stored");
                write_state_csv(&traj.state(i), writer(&model.out.join(format!("rd_t{t}.csv")))?)?;
            }
            let text = serde_json::to_string_pretty(&traj.monitors)?;
            fs::write(model.out.join("monitors.json"), text + "\n")?;
            println!("K={k} dt={} steps={} monitors={}", traj.dt, traj.steps, traj.monitors.passed());
            for b in &traj.monitors.breaches {
                println!("breach: {b}");
            }
            Ok(traj.monitors.passed())
        }
        Cmd::Master { model } => {
            let cfg = model.config()?;
            let geom = TorusGeometry::new(model.n, model.d)?;
            let k = cfg.k_rule.k(model.n);
            let (c1, c2) = cfg.rates()?;
            let init = initial_data(&cfg, &geom, k)?;
            let params = RdParams::new(geom, k, c1.clone(), c2.clone())?;
            let times = cfg.solve_times();
            let traj = solve(&init, &params, cfg.horizon, &times, SolveOptions::default())?;
            let reference = ReferencePath { times: traj.times.clone(), u: traj.u, v: traj.v };
            let sim = SimParams::new(geom, k, c1, c2, cfg.horizon, cfg.seed)?;
            let mu0 = ProductBernoulli::from_fields(&init.u0, &init.v0)?.distribution();
            let series = entropy_trajectory(&sim, &reference, &mu0, &times)?;
            let path = model.out.join("entropy.csv");
            write_entropy_csv(&series, writer(&path)?)?;
            println!("{}", path.display());
            Ok(true)
        }
        Cmd::Entropy { what: EntropyCmd::Flow { d, l_sweep, out } } => {
            let report = flow_scaling(d, &l_sweep)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(writer(p)?),
                None => Box::new(io::stdout().lock()),
            };
            writeln!(sink, "l,energy,g_d_reference")?;
            for (&l, e) in report.ells.iter().zip(&report.energies) {
                writeln!(sink, "{l},{e},{}", g_reference(d, l))?;
            }
            sink.flush()?;
            eprintln!("d={d} class={:?} expected={:?} ratios={:?}", report.class, report.expected, report.ratios);
            Ok(report.matches_expected())
        }
        Cmd::Entropy { what: EntropyCmd::Concentration { n, p } } => {
            let mut ok = true;
            println!("p,gamma,lhs,rhs,slack");
            for &p in &p {
                let vars = vec![DiscreteVariable::bernoulli(p); n];
                let r = concentration_check(&vars, &default_gammas(kappa(&vars)))?;
                for row in &r.rows {
                    println!("{p},{},{},{},{}", row.gamma, row.lhs, row.rhs, row.slack);
                }
                ok &= r.pass;
            }
            Ok(ok)
        }
        Cmd::Analyze { dir } => analyze(&dir),
        Cmd::Run { target, out, dry_run } => {
            let cfg = match preset(&target) {
                Some(c) => c,
                None if Path::new(&target).is_file() => ExperimentConfig::from_json(&fs::read_to_string(&target)?)?,
                None => return Err(format!("{target} is neither a preset ({}) nor a config file", PRESETS.join(", ")).into()),
            };
            let outcome = run_experiment(&cfg, out.as_deref(), dry_run)?;
            if let Some(report) = &outcome.report {
                for t in &report.trends {
                    println!("{}: {:?} {:?} over N = {:?}", t.metric, t.verdict, t.values, t.ns);
                }
                for c in report.checks.iter().filter(|c| !c.pass) {
                    println!("FAIL {}: {} > {}", c.name, c.value, c.bound);
                }
                println!("{}", if report.pass { "PASS" } else { "FAIL" });
            }
            println!("artifacts in {}", outcome.dir.display());
            Ok(outcome.passed())
        }
        Cmd::Plotdata { dir } => {
            for p in emit_plotdata(&dir)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

/// Re-extracts interfaces from the stored rd checkpoints of the largest size
/// and rewrites `fronts.csv`; the exit status follows the stored report.
fn analyze(dir: &Path) -> Result<bool, AnyError> {
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(dir.join("config.json"))?)?;
    let n = *cfg.n.last().expect("validated config");
    let geom = TorusGeometry::new(n, cfg.d)?;
    let mut entries = Vec::new();
    for &t in &cfg.checkpoints {
        let text = fs::read_to_string(dir.join(format!("N{n}/rd_t{t}.csv")))?;
        let (mut u, mut v) = (Vec::new(), Vec::new());
        for line in text.lines().skip(2) {
            let f: Vec<&str> = line.split(',').collect();
            u.push(f[1].parse::<f64>()?);
            v.push(f[2].parse::<f64>()?);
        }
        let e = extract_interface(&geom, &u, &v, cfg.m as f64, cfg.eps_int, t);
        let (a, b, c) = e.areas();
        println!("t={t} crossings={:?} areas=({a:.4},{b:.4},{c:.4}) mixing={}", e.crossings, e.mixing);
        entries.push(e);
    }
    if cfg.d == 1 && entries.len() >= 3 {
        match interface_velocity(&InterfaceTrack { entries }) {
            Ok(fronts) => write_fronts_csv(&fronts, writer(&dir.join("fronts.csv"))?)?,
            Err(e) => println!("no velocities: {e}"),
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("report_case{}.json", cfg.case)))?)?;
    let pass = report["pass"].as_bool().unwrap_or(false);
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}
