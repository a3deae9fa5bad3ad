//! `persisters`: critical thresholds and simulation for bacteria with
//! persister cells under antibiotic mass-killings.
//!
//! Every subcommand prints one JSON object on stdout. Tables go to `--out`
//! (CSV or JSON per `--format`) and sweep plots to `--svg`.
//!
//! Exit status: 0 success, 1 output file error, 2 bad configuration or
//! flags, 3 analytic precondition failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use persisters::critical::{self, Axis, SweepVar, DEFAULT_TOL_P, DEFAULT_TOL_T};
use persisters::environment::{self, BetaSearch, EnvFamily, EnvKind, LyapunovConfig};
use persisters::io::{self, AxesSpec, BetaSearchSpec, OutputFormat, RunConfig};
use persisters::model::{ModelParams, PopulationState, RawParams};
use persisters::rng::{stream, DEFAULT_SEED};
use persisters::simulate::{self, KillSchedule, StopRule};
use persisters::Error;

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    b: Option<f64>,
    #[arg(long, global = true)]
    dn: Option<f64>,
    #[arg(long, global = true)]
    dr: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Master seed [default: 20241017].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result table to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of the `--out` file [default: json].
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone, Default)]
struct ScheduleArgs {
    /// Periodic killing with this period.
    #[arg(long)]
    period: Option<f64>,
    /// Explicit comma-separated killing times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Random gaps from this family (geometric, exponential, twopoint).
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// Seed of the random killing times [default: master seed].
    #[arg(long)]
    env_seed: Option<u64>,
    #[arg(long)]
    init_n: Option<u64>,
    #[arg(long)]
    init_r: Option<u64>,
    /// Kill epochs survived that count as survival [default: 200].
    #[arg(long)]
    max_epochs: Option<u64>,
    /// Population that counts as survival [default: 10000].
    #[arg(long)]
    escape: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Critical period T_c(p) for periodic killing.
    CriticalTime {
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Smallest p guaranteeing extinction at a given period.
    CriticalP {
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Extinction or survival for a given period.
    Classify {
        #[arg(long)]
        period: Option<f64>,
    },
    /// T_c over a grid of one or two parameters.
    Sweep {
        #[arg(long)]
        var: Option<SweepVar>,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Optional second axis; varies fastest.
        #[arg(long)]
        var2: Option<SweepVar>,
        #[arg(long)]
        from2: Option<f64>,
        #[arg(long)]
        to2: Option<f64>,
        #[arg(long)]
        steps2: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Write an SVG chart of T_c.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// One trajectory; `--out` receives the event log.
    Simulate {
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Monte Carlo survival probability.
    McSurvival {
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// [default: 1000]
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Monte Carlo mean of (N_t, R_t) without killing.
    McMean {
        #[arg(long)]
        t: Option<f64>,
        /// [default: 1000]
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        init_n: Option<u64>,
        #[arg(long)]
        init_r: Option<u64>,
    },
    /// Lyapunov exponent for random killing times.
    Lyapunov {
        /// geometric, exponential, twopoint, atom
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        /// [default: 10000]
        #[arg(long)]
        epochs: Option<usize>,
        /// [default: 32]
        #[arg(long)]
        replicates: Option<usize>,
        /// [default: epochs / 10]
        #[arg(long)]
        burn_in: Option<usize>,
        /// [default: 1]
        #[arg(long)]
        renorm_every: Option<usize>,
    },
    /// Bracket the critical beta of a family.
    BetaCritical {
        /// geometric, exponential, atom
        #[arg(long)]
        family: Option<EnvKind>,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        /// [default: 0.001]
        #[arg(long)]
        tol: Option<f64>,
        /// [default: 10000]
        #[arg(long)]
        epochs: Option<usize>,
        /// [default: 8 * epochs]
        #[arg(long)]
        max_epochs: Option<usize>,
        /// [default: 32]
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Draw killing gaps from a family.
    EnvSample {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        /// [default: 1000]
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Parser)]
#[command(name = "persisters", version, about)]
struct Top {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

enum Failure {
    Config(String),
    Analytic(Error),
    Output(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_precondition() {
            Failure::Analytic(e)
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type Outcome<T> = Result<T, Failure>;

/// Config file plus flags.
struct Ctx {
    cfg: RunConfig,
    common: Common,
}

impl Ctx {
    fn load(common: Common) -> Outcome<Self> {
        let cfg = match &common.config {
            None => RunConfig::default(),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                io::load_config(&text).map_err(|mut e| {
                    e.path = Some(path.clone());
                    Failure::Config(e.to_string())
                })?
            }
        };
        Ok(Ctx { cfg, common })
    }

    fn params(&self) -> Outcome<ModelParams> {
        let base = self.cfg.params;
        let c = &self.common;
        let pick = |flag: Option<f64>, file: Option<f64>, name: &str| {
            flag.or(file)
                .ok_or_else(|| Failure::Config(format!("missing parameter `{name}` (flag --{name} or config params)")))
        };
        let raw = RawParams {
            lambda: pick(c.lambda, base.map(|r| r.lambda), "lambda")?,
            a: pick(c.a, base.map(|r| r.a), "a")?,
            b: pick(c.b, base.map(|r| r.b), "b")?,
            dn: pick(c.dn, base.map(|r| r.dn), "dn")?,
            dr: pick(c.dr, base.map(|r| r.dr), "dr")?,
            p: pick(c.p, base.map(|r| r.p), "p")?,
        };
        Ok(ModelParams::validate(raw)?)
    }

    fn seed(&self) -> u64 {
        self.common.seed.or(self.cfg.seed).unwrap_or(DEFAULT_SEED)
    }

    fn format(&self) -> OutputFormat {
        match self.common.format {
            Some(Format::Csv) => OutputFormat::Csv,
            Some(Format::Json) => OutputFormat::Json,
            None => self.cfg.format.unwrap_or_default(),
        }
    }

    fn out(&self) -> Option<PathBuf> {
        self.common.out.clone().or_else(|| self.cfg.out.clone())
    }

    fn family(&self, name: Option<&str>, beta: Option<f64>) -> Outcome<EnvFamily> {
        match (name, beta) {
            (Some(name), Some(beta)) => Ok(family_by_name(name, beta)?),
            (Some(_), None) => Err(Failure::Config("--family needs --beta".into())),
            (None, _) => self
                .cfg
                .family
                .clone()
                .ok_or_else(|| Failure::Config("missing environment family (--family/--beta or config family)".into())),
        }
    }

    fn init(&self, n: Option<u64>, r: Option<u64>) -> PopulationState {
        let (n0, r0) = self.cfg.init.unwrap_or((1, 0));
        PopulationState::new(n.unwrap_or(n0), r.unwrap_or(r0))
    }

    fn schedule(&self, s: &ScheduleArgs) -> Outcome<KillSchedule> {
        if let Some(period) = s.period {
            return Ok(KillSchedule::periodic(period)?);
        }
        if let Some(times) = &s.times {
            return Ok(KillSchedule::explicit(times.clone())?);
        }
        if let Some(name) = &s.family {
            let beta = s.beta.ok_or_else(|| Failure::Config("--family needs --beta".into()))?;
            let family = family_by_name(name, beta)?;
            return Ok(KillSchedule::random(family, s.env_seed.unwrap_or(self.seed())));
        }
        self.cfg
            .schedule
            .clone()
            .or_else(|| self.cfg.period.map(|p| KillSchedule::Periodic { period: p }))
            .ok_or_else(|| Failure::Config("missing schedule (--period, --times, --family or config schedule)".into()))
    }

    fn stop(&self, s: &ScheduleArgs) -> StopRule {
        let mut stop = self.cfg.stop.unwrap_or_default();
        if s.max_epochs.is_some() {
            stop.max_epochs = s.max_epochs;
        }
        if s.escape.is_some() {
            stop.escape = s.escape;
        }
        if s.horizon.is_some() {
            stop.horizon = s.horizon;
        }
        stop
    }
}

fn family_by_name(name: &str, beta: f64) -> Result<EnvFamily, Error> {
    match name {
        "geometric" => EnvFamily::geometric(beta),
        "exponential" => EnvFamily::exponential(beta),
        "twopoint" => EnvFamily::two_point(beta),
        "atom" => EnvFamily::constant(beta),
        other => Err(Error::InvalidParameter {
            field: "family",
            reason: format!("unknown family `{other}`"),
        }),
    }
}

fn required<T>(flag: Option<T>, file: Option<T>, what: &str) -> Outcome<T> {
    flag.or(file).ok_or_else(|| Failure::Config(format!("missing `{what}`")))
}

/// A JSON object with the command name and inputs merged in front of the
/// result's own fields.
fn object(command: &str, inputs: Value, result: impl Serialize) -> Value {
    let mut map = Map::new();
    map.insert("command".into(), command.into());
    if let Value::Object(m) = inputs {
        map.extend(m);
    }
    match serde_json::to_value(result).expect("result serializes") {
        Value::Object(m) => map.extend(m),
        other => {
            map.insert("result".into(), other);
        }
    }
    Value::Object(map)
}

/// Flat CSV of the top-level scalar fields of an object.
fn scalar_csv(v: &Value) -> String {
    let Value::Object(map) = v else { return String::new() };
    let (keys, vals): (Vec<&str>, Vec<String>) = map
        .iter()
        .filter_map(|(k, v)| match v {
            Value::Number(n) => Some((k.as_str(), n.to_string())),
            Value::String(s) => Some((k.as_str(), s.clone())),
            Value::Bool(b) => Some((k.as_str(), b.to_string())),
            _ => None,
        })
        .unzip();
    format!("{}\n{}\n", keys.join(","), vals.join(","))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome<()> {
    fs::write(path, bytes).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

/// Write `--out` in the selected format; `table_csv` renders the command's
/// table when there is one.
fn emit_out(ctx: &Ctx, value: &Value, table_csv: Option<Vec<u8>>) -> Outcome<()> {
    let Some(path) = ctx.out() else { return Ok(()) };
    let bytes = match ctx.format() {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(value).expect("json");
            s.push('\n');
            s.into_bytes()
        }
        OutputFormat::Csv => table_csv.unwrap_or_else(|| scalar_csv(value).into_bytes()),
    };
    write_file(&path, &bytes)
}

fn run(top: Top) -> Outcome<Value> {
    let ctx = Ctx::load(top.common)?;
    let cfg = &ctx.cfg;
    let value = match top.command {
        Command::CriticalTime { tol } => {
            let params = ctx.params()?;
            let tol = tol.or(cfg.tol_t).unwrap_or(DEFAULT_TOL_T);
            let res = critical::critical_time(&params, tol)?;
            let v = object("critical-time", json!({ "params": params, "tol": tol }), res);
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::CriticalP { period, tol } => {
            let params = ctx.params()?;
            let period = required(period, cfg.period, "period")?;
            let tol = tol.or(cfg.tol_p).unwrap_or(DEFAULT_TOL_P);
            let p_c = critical::critical_p(&params, period, tol)?;
            let v = object(
                "critical-p",
                json!({ "params": params, "period": period, "tol": tol }),
                json!({ "p_c": p_c }),
            );
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::Classify { period } => {
            let params = ctx.params()?;
            let period = required(period, cfg.period, "period")?;
            let res = critical::classify(&params, period)?;
            let v = object("classify", json!({ "params": params, "period": period }), res);
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::Sweep {
            var,
            from,
            to,
            steps,
            var2,
            from2,
            to2,
            steps2,
            tol,
            svg,
        } => {
            let params = ctx.params()?;
            let axes = sweep_axes(cfg, [var, var2], [from, from2], [to, to2], [steps, steps2])?;
            let tol = tol.or(cfg.tol_t).unwrap_or(DEFAULT_TOL_T);
            let table = critical::sweep(&params, &axes, tol)?;
            let v = object("sweep", json!({ "params": params, "tol": tol }), &table);
            if let Some(path) = svg.or_else(|| cfg.svg.clone()) {
                let x_var = axes.last().expect("at least one axis").var;
                let spec = AxesSpec {
                    x_label: x_var.name().into(),
                    y_label: "T_c".into(),
                    title: None,
                };
                let doc = io::emit_svg(&io::sweep_series(&table), &spec)?;
                write_file(&path, doc.as_bytes())?;
            }
            emit_out(&ctx, &v, Some(csv_bytes(|w| io::write_sweep_csv(&table, w))))?;
            v
        }
        Command::Simulate { schedule } => {
            let params = ctx.params()?;
            let sched = ctx.schedule(&schedule)?;
            let stop = ctx.stop(&schedule);
            let init = ctx.init(schedule.init_n, schedule.init_r);
            let seed = ctx.seed();
            let mut rng = stream(seed, 0);
            let record = ctx.out().is_some();
            let mut outcome = simulate::run(&params, &sched, init, &stop, record, &mut rng)?;
            let rows = outcome.trajectory.take();
            let v = object(
                "simulate",
                json!({ "params": params, "schedule": sched, "stop": stop, "init": [init.n, init.r], "seed": seed }),
                &outcome,
            );
            let table = rows.as_deref().map(|r| csv_bytes(|w| io::write_trajectory_csv(r, w)));
            if let (Some(path), OutputFormat::Json) = (ctx.out(), ctx.format()) {
                let mut s = serde_json::to_string_pretty(&rows).expect("json");
                s.push('\n');
                write_file(&path, s.as_bytes())?;
            } else {
                emit_out(&ctx, &v, table)?;
            }
            v
        }
        Command::McSurvival { schedule, trials } => {
            let params = ctx.params()?;
            let sched = ctx.schedule(&schedule)?;
            let stop = ctx.stop(&schedule);
            let init = ctx.init(schedule.init_n, schedule.init_r);
            let trials = trials.or(cfg.trials).unwrap_or(io::DEFAULT_TRIALS);
            let seed = ctx.seed();
            let est = simulate::mc_survival(&params, &sched, init, trials, &stop, seed)?;
            let v = object(
                "mc-survival",
                json!({ "params": params, "schedule": sched, "init": [init.n, init.r], "seed": seed }),
                est,
            );
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::McMean {
            t,
            trials,
            init_n,
            init_r,
        } => {
            let params = ctx.params()?;
            let t = required(t, cfg.t, "t")?;
            let trials = trials.or(cfg.trials).unwrap_or(io::DEFAULT_TRIALS);
            let init = ctx.init(init_n, init_r);
            let seed = ctx.seed();
            let est = simulate::mc_mean(&params, t, init, trials, seed)?;
            let v = object(
                "mc-mean",
                json!({ "params": params, "init": [init.n, init.r], "seed": seed }),
                est,
            );
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::Lyapunov {
            family,
            beta,
            epochs,
            replicates,
            burn_in,
            renorm_every,
        } => {
            let params = ctx.params()?;
            let fam = ctx.family(family.as_deref(), beta)?;
            let mut lc = LyapunovConfig::new(
                epochs.or(cfg.epochs).unwrap_or(io::DEFAULT_EPOCHS),
                replicates.or(cfg.replicates).unwrap_or(io::DEFAULT_REPLICATES),
                ctx.seed(),
            );
            lc.burn_in = burn_in.or(cfg.burn_in);
            if let Some(k) = renorm_every.or(cfg.renorm_every) {
                lc.renorm_every = k;
            }
            let est = environment::lyapunov_with(&params, &fam, &lc)?;
            let exact = environment::exact_log_mean(&params, &fam).ok();
            let v = object(
                "lyapunov",
                json!({ "params": params, "family": fam, "seed": lc.master_seed, "exact_log_mean": exact }),
                est,
            );
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::BetaCritical {
            family,
            lo,
            hi,
            tol,
            epochs,
            max_epochs,
            replicates,
        } => {
            let params = ctx.params()?;
            let spec: Option<BetaSearchSpec> = cfg.beta_search;
            let kind = required(family, spec.map(|s| s.kind), "family")?;
            let epochs = epochs
                .or(spec.and_then(|s| s.epochs))
                .unwrap_or(io::DEFAULT_EPOCHS);
            let search = BetaSearch {
                lo: required(lo, spec.map(|s| s.lo), "lo")?,
                hi: required(hi, spec.map(|s| s.hi), "hi")?,
                tol: tol.or(spec.and_then(|s| s.tol)).unwrap_or(io::DEFAULT_BETA_TOL),
                epochs,
                max_epochs: max_epochs.or(spec.and_then(|s| s.max_epochs)).unwrap_or(8 * epochs),
                replicates: replicates
                    .or(spec.and_then(|s| s.replicates))
                    .unwrap_or(io::DEFAULT_REPLICATES),
                master_seed: ctx.seed(),
            };
            let bracket = environment::beta_critical(&params, kind, &search)?;
            let v = object(
                "beta-critical",
                json!({ "params": params, "family": kind, "search": search }),
                bracket,
            );
            emit_out(&ctx, &v, None)?;
            v
        }
        Command::EnvSample { family, beta, samples } => {
            let fam = ctx.family(family.as_deref(), beta)?;
            let n = samples.or(cfg.samples).unwrap_or(io::DEFAULT_SAMPLES);
            let seed = ctx.seed();
            let draws = environment::sample_times(&fam, n, &mut stream(seed, 0));
            let mean = draws.iter().sum::<f64>() / n.max(1) as f64;
            let v = object(
                "env-sample",
                json!({ "family": fam, "seed": seed }),
                json!({ "samples": n, "sample_mean": mean, "family_mean": fam.mean() }),
            );
            let table = csv_bytes(|w| io::write_samples_csv(&draws, w));
            if let (Some(path), OutputFormat::Json) = (ctx.out(), ctx.format()) {
                write_file(&path, format!("{}\n", json!(draws)).as_bytes())?;
            } else {
                emit_out(&ctx, &v, Some(table))?;
            }
            v
        }
    };
    Ok(value)
}

fn sweep_axes(
    cfg: &RunConfig,
    var: [Option<SweepVar>; 2],
    from: [Option<f64>; 2],
    to: [Option<f64>; 2],
    steps: [Option<usize>; 2],
) -> Outcome<Vec<Axis>> {
    let from_flags: Vec<Axis> = (0..2)
        .filter_map(|i| var[i].map(|v| (i, v)))
        .map(|(i, v)| {
            let (f, t, s) = match (from[i], to[i], steps[i]) {
                (Some(f), Some(t), Some(s)) => (f, t, s),
                _ => return Err(Failure::Config(format!("axis `{}` needs from, to and steps", v.name()))),
            };
            Ok(Axis::linspace(v, f, t, s))
        })
        .collect::<Outcome<_>>()?;
    if !from_flags.is_empty() {
        return Ok(from_flags);
    }
    match &cfg.sweep {
        Some(specs) if !specs.is_empty() => Ok(specs
            .iter()
            .map(|s| Axis::linspace(s.var, s.from, s.to, s.steps))
            .collect()),
        _ => Err(Failure::Config("missing sweep axis (--var/--from/--to/--steps or config sweep)".into())),
    }
}

fn main() -> ExitCode {
    let top = match Top::try_parse() {
        Ok(t) => t,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(top) {
        Ok(v) => {
            println!("{}", serde_json::to_string(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Analytic(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Output(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
