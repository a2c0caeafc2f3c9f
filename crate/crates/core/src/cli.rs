//! Command-line front end: `run`, `bench`, `sweep` and `validate`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::{BigInt, BigUint};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::config::{DataConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fe::{funkey_agg, Ciphertext, PublicKey, Scheme};
use crate::numtheory::{setup_group, PlaintextBound};
use crate::protocol::{run_experiment, ExperimentReport};
use crate::report::{csv_header, write_experiment};
use crate::rng::stream;

#[derive(Debug, Parser)]
#[command(name = "privfl", version, about = "Poisoning-robust federated learning over functional encryption")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its metrics.
    Run(RunArgs),
    /// Time the cryptographic operations.
    Bench(BenchArgs),
    /// Run one experiment per value of a parameter.
    Sweep(SweepArgs),
    /// Check a config and report the derived sizes.
    Validate(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate and print the resolved config without running.
    #[arg(long)]
    pub dry_run: bool,
    /// Also run undefended FedAvg on the same clients.
    #[arg(long)]
    pub control_fedavg: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    MaliciousFraction,
    Alpha,
    AttackKind,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub control_fedavg: bool,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let cfg = match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

pub enum RunOutcome {
    DryRun(String),
    Completed { dir: PathBuf, report: Box<ExperimentReport> },
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome> {
    let mut cfg = load(&args.cfg)?;
    if args.control_fedavg {
        cfg.control_fedavg = true;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if args.dry_run {
        return Ok(RunOutcome::DryRun(serde_json::to_string_pretty(&cfg)?));
    }
    let dir = out_dir(&args.out, &cfg, "out");
    let report = run_experiment(&cfg)?;
    write_experiment(&dir, &report)?;
    Ok(RunOutcome::Completed {
        dir,
        report: Box::new(report),
    })
}

/// Derived sizes reported by `validate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub param_count: Option<usize>,
    pub clients: usize,
    pub rounds: u64,
    pub group_bits: u64,
}

pub fn cmd_validate(args: &ConfigArgs) -> Result<ValidationSummary> {
    let cfg = load(args)?;
    let param_count = match cfg.data {
        DataConfig::Synthetic { n_features, .. } => Some(cfg.param_count(n_features)),
        DataConfig::Csv { .. } => None,
    };
    Ok(ValidationSummary {
        param_count,
        clients: cfg.federation.clients,
        rounds: cfg.federation.rounds,
        group_bits: cfg.group.bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Stat {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            stddev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub bit_length: u64,
    pub repetitions: usize,
    pub clients: usize,
    pub encrypt_per_parameter: Stat,
    /// Indexed by parameter group.
    pub projection_per_layer: Vec<(usize, Stat)>,
    pub aggregation_per_parameter: Stat,
    pub decrypt_result_one: Stat,
    pub decrypt_result_large: Stat,
    /// Slower over faster of the two decryptions above.
    pub magnitude_ratio: f64,
}

fn time<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let start = Instant::now();
    let v = f();
    (start.elapsed().as_secs_f64(), v)
}

/// Mean wall time of one functional decryption returning a result of the
/// given magnitude; `reps` timed calls after one warm-up.
pub fn time_decryption(scheme: &Scheme, result: u64, reps: usize, seed: u64) -> Result<Stat> {
    let kp = scheme.keygen(1, &mut stream(seed, "bench-key", &[]), 3 * scheme.params.bit_length())?;
    let ct = scheme.encrypt(&kp, &BigInt::from(result), &BigUint::from(0u32), 0, 0)?;
    let y = [BigInt::from(1)];
    let key = scheme.funkeygen_projection(&kp, &y, 0, 0, 0..1)?;
    let got = scheme.agg_dec(&key.value, &[&ct], &y)?;
    if got != BigInt::from(result) {
        return Err(Error::Malformed(format!("decryption returned {got}, expected {result}")));
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (t, r) = time(|| scheme.agg_dec(&key.value, &[&ct], &y));
        r?;
        samples.push(t);
    }
    Ok(Stat::of(&samples))
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let cfg = load(&args.cfg)?;
    let reps = args.repetitions.max(1);
    let seed = cfg.seed;
    let n_features = match cfg.data {
        DataConfig::Synthetic { n_features, .. } => n_features,
        DataConfig::Csv { ref train, .. } => crate::ml::load_csv(train, Some(cfg.data.n_classes()))?.n_features,
    };
    let dims = cfg.layer_dims(n_features);
    let zeta = cfg.param_count(n_features);
    let clients = cfg.federation.clients;
    let params = setup_group(cfg.group.bits, &mut stream(seed, "crypto", &[]))?;
    let bound = PlaintextBound::new(params.n(), cfg.bound_dimension(zeta))?;
    let codec = crate::fixedpoint::FixedPointCodec::new(cfg.group.scale_bits, &bound);
    let scheme = Scheme::new(params, bound);
    let mut rng = stream(seed, "bench", &[]);
    let keys = (0..clients)
        .map(|i| scheme.keygen(i as u32 + 1, &mut stream(seed, "keygen", &[i as u64 + 1]), cfg.group.sigma_bits))
        .collect::<Result<Vec<_>>>()?;
    let pks: Vec<PublicKey> = keys.iter().map(|k| k.public().clone()).collect();
    let eta = BigUint::from(1u32);
    let param = |rng: &mut crate::rng::StreamRng| BigInt::from(codec.encode_clipped(rng.random_range(-1.0..1.0)).0);

    let mut enc = Vec::with_capacity(reps);
    for r in 0..reps {
        let x = param(&mut rng);
        let (t, ct) = time(|| scheme.encrypt(&keys[0], &x, &eta, 0, r as u64));
        ct?;
        enc.push(t);
    }

    let model = crate::ml::Model::mlp(&dims, &mut stream(seed, "init", &[]));
    let mut projection = Vec::new();
    for range in model.group_ranges() {
        let x: Vec<BigInt> = range.clone().map(|_| param(&mut rng)).collect();
        let y: Vec<BigInt> = range.clone().map(|_| param(&mut rng)).collect();
        let cts = range
            .clone()
            .zip(&x)
            .map(|(e, xv)| scheme.encrypt(&keys[0], xv, &eta, 0, e as u64))
            .collect::<Result<Vec<Ciphertext>>>()?;
        let refs: Vec<&Ciphertext> = cts.iter().collect();
        let key = scheme.funkeygen_projection(&keys[0], &y, 0, 0, range.start as u64..range.end as u64)?;
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let (t, v) = time(|| scheme.agg_dec(&key.value, &refs, &y));
            v?;
            samples.push(t);
        }
        projection.push((range.len(), Stat::of(&samples)));
    }

    let gamma: Vec<BigInt> = vec![BigInt::from(1); clients];
    let partials = keys
        .iter()
        .map(|k| scheme.funkeygen_partial(k, &pks, 1, 0, 1))
        .collect::<Result<Vec<_>>>()?;
    let agg_key = funkey_agg(&partials)?;
    let cts = keys
        .iter()
        .map(|k| {
            let x = param(&mut rng);
            scheme.encrypt(k, &x, &eta, 0, 0)
        })
        .collect::<Result<Vec<Ciphertext>>>()?;
    let refs: Vec<&Ciphertext> = cts.iter().collect();
    let mut agg = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (t, v) = time(|| scheme.agg_dec(&agg_key[0], &refs, &gamma));
        v?;
        agg.push(t);
    }

    let one = time_decryption(&scheme, 1, reps, seed)?;
    let large = time_decryption(&scheme, 1_000_000_007, reps, seed)?;
    let ratio = one.mean.max(large.mean) / one.mean.min(large.mean);
    let report = BenchReport {
        bit_length: scheme.params.bit_length(),
        repetitions: reps,
        clients,
        encrypt_per_parameter: Stat::of(&enc),
        projection_per_layer: projection,
        aggregation_per_parameter: Stat::of(&agg),
        decrypt_result_one: one,
        decrypt_result_large: large,
        magnitude_ratio: ratio,
    };
    if let Some(dir) = &args.out {
        write_bench(dir, &cfg, &report)?;
    }
    Ok(report)
}

fn write_bench(dir: &Path, cfg: &ExperimentConfig, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = csv_header(cfg)?;
    text.push_str("operation,elements,bit_length,repetitions,mean_s,stddev_s\n");
    let mut row = |op: &str, elements: usize, s: &Stat| {
        text.push_str(&format!(
            "{op},{elements},{},{},{:.9},{:.9}\n",
            report.bit_length, report.repetitions, s.mean, s.stddev
        ));
    };
    row("encrypt", 1, &report.encrypt_per_parameter);
    for (l, (m, s)) in report.projection_per_layer.iter().enumerate() {
        row(&format!("projection_layer_{l}"), *m, s);
    }
    row("aggregate", report.clients, &report.aggregation_per_parameter);
    row("decrypt_result_1", 1, &report.decrypt_result_one);
    row("decrypt_result_1e9", 1, &report.decrypt_result_large);
    std::fs::write(dir.join("bench.csv"), text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub dir: PathBuf,
    pub srfed: crate::ml::Metrics,
    pub fedavg: Option<crate::ml::Metrics>,
}

fn apply(cfg: &ExperimentConfig, param: SweepParam, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let parse = |field: &str| {
        value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::config(field, format!("{value:?} is not a number")))
    };
    match param {
        SweepParam::MaliciousFraction => c.attack.malicious_fraction = parse("attack.malicious_fraction")?,
        SweepParam::Alpha => c.federation.alpha = parse("federation.alpha")?,
        SweepParam::AttackKind => c.attack.kind = value.trim().parse::<AttackKind>()?,
    }
    c.validate()?;
    Ok(c)
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::MaliciousFraction => "malicious_fraction",
            SweepParam::Alpha => "alpha",
            SweepParam::AttackKind => "attack_kind",
        }
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepPoint>> {
    if args.values.is_empty() {
        return Err(Error::config("values", "need at least one value to sweep"));
    }
    let mut base = load(&args.cfg)?;
    if args.control_fedavg {
        base.control_fedavg = true;
    }
    let configs = args
        .values
        .iter()
        .map(|v| apply(&base, args.param, v))
        .collect::<Result<Vec<_>>>()?;
    let root = out_dir(&args.out, &base, "sweep");
    let mut points = Vec::new();
    for (value, cfg) in args.values.iter().zip(configs) {
        let dir = root.join(format!("{}_{}", args.param.name(), value.trim()));
        log::info!("sweep point {}={}", args.param.name(), value.trim());
        let report = run_experiment(&cfg)?;
        write_experiment(&dir, &report)?;
        points.push(SweepPoint {
            value: value.trim().to_string(),
            dir,
            srfed: report.srfed.final_metrics(),
            fedavg: report.fedavg.as_ref().map(|r| r.final_metrics()),
        });
    }
    let mut text = csv_header(&base)?;
    text.push_str(&format!(
        "{},srfed_oa,srfed_sa,srfed_asr,fedavg_oa,fedavg_sa,fedavg_asr\n",
        args.param.name()
    ));
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &points {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.value,
            p.srfed.oa,
            f(p.srfed.sa),
            f(p.srfed.asr),
            f(p.fedavg.map(|m| m.oa)),
            f(p.fedavg.and_then(|m| m.sa)),
            f(p.fedavg.and_then(|m| m.asr)),
        ));
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("comparison.csv"), text)?;
    Ok(points)
}
