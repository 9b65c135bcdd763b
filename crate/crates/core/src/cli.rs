//! Command-line driver: `run`, `verify` and `sweep`.
//!
//! Exit codes: 0 on accept (or all verification cells passing), 2 on a
//! refined abort (or any failing cell), 1 on usage and configuration errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use serde::Serialize;

use crate::adversary::AttackPolicy;
use crate::analysis::{
    estimate_errors, min_epsilon, predict_average, predict_rates, sifted_fraction,
    subset_frequencies, weighted_average, Decision, ErrorReport,
};
use crate::postprocess::{
    bits_to_hex, privacy_amplify, reconcile, Party, SiftedKey, DEFAULT_SAFETY_MARGIN,
};
use crate::session::{
    run_session, substream, write_records_csv, SampleSizes, SessionConfig, SubsetLabel,
    SubsetTally, STREAM_HASH_SEED, STREAM_RECONCILIATION, STREAM_TEST_SAMPLING,
};
use crate::Error;

pub const EXIT_ACCEPT: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_ABORT: u8 = 2;

/// Environment variable consulted for the seed when neither `--seed` nor the
/// config file sets one.
pub const SEED_ENV: &str = "QKD_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "biased-qkd",
    version,
    about = "Biased-basis entanglement QKD simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session end to end and write the report, records and key.
    Run(RunArgs),
    /// Compare Monte Carlo subset error rates with the closed-form predictions.
    Verify(VerifyArgs),
    /// Vary one parameter and emit a CSV of rates and efficiencies.
    Sweep(SweepArgs),
}

/// Flags shared by every subcommand. Any flag given overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct SessionArgs {
    /// JSON file with `SessionConfig` fields; missing fields take defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; falls back to the config file, then QKD_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability of choosing the diagonal basis / primed source, in (0, 1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Squared amplitude of the HH term, in [0, 1].
    #[arg(long = "alpha-sq")]
    pub alpha_sq: Option<f64>,
    /// Number of entangled pairs to simulate.
    #[arg(long = "pairs")]
    pub pairs: Option<u64>,
    /// Eve's basis probabilities as `p1,p2,p3`.
    #[arg(long, value_parser = parse_policy)]
    pub attack: Option<AttackPolicy>,
    /// Acceptance threshold for estimated error rates.
    #[arg(long = "e-max")]
    pub e_max: Option<f64>,
    /// Test sample sizes as `m1,m1p,m2,m2p,m3,m3p`.
    #[arg(long, value_parser = parse_samples)]
    pub samples: Option<SampleSizes>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Per-pair records CSV.
    #[arg(long = "records-out", value_name = "PATH")]
    pub records_out: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long = "report-out", value_name = "PATH")]
    pub report_out: Option<PathBuf>,
    /// Final key as hex; written only when the session is accepted.
    #[arg(long = "key-out", value_name = "PATH")]
    pub key_out: Option<PathBuf>,
    /// Reconciliation rounds.
    #[arg(long, default_value_t = 6)]
    pub rounds: usize,
    /// Reconciliation block size; derived from the observed error rate when omitted.
    #[arg(long = "block-size")]
    pub block_size: Option<usize>,
    /// Extra bits removed by privacy amplification beyond the leaked count.
    #[arg(long = "safety-margin", default_value_t = DEFAULT_SAFETY_MARGIN)]
    pub safety_margin: usize,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// alpha² grid, comma separated.
    #[arg(long = "alpha-grid", value_delimiter = ',', default_values_t = vec![0.5, 0.6, 0.8, 0.95])]
    pub alpha_grid: Vec<f64>,
    /// Attack policies separated by `;`, each `p1,p2,p3`.
    #[arg(long = "policy-grid", value_parser = parse_policy_grid)]
    pub policy_grid: Option<PolicyGrid>,
    /// Maximum allowed |z| per compared quantity.
    #[arg(long = "z-max", default_value_t = 4.0)]
    pub z_max: f64,
    /// Comparison table destination; stdout when omitted.
    #[arg(long = "table-out", value_name = "PATH")]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Epsilon,
    AlphaSq,
    Pairs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Explicit values, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "range")]
    pub values: Vec<f64>,
    /// Inclusive range `start:stop:step`.
    #[arg(long)]
    pub range: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid(pub Vec<AttackPolicy>);

fn parse_floats(s: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!(
            "expected {expected} comma-separated values, got {}",
            values.len()
        ));
    }
    Ok(values)
}

pub fn parse_policy(s: &str) -> std::result::Result<AttackPolicy, String> {
    let p = parse_floats(s, 3)?;
    AttackPolicy::new(p[0], p[1], p[2]).map_err(|e| e.to_string())
}

pub fn parse_policy_grid(s: &str) -> std::result::Result<PolicyGrid, String> {
    s.split(';')
        .map(parse_policy)
        .collect::<std::result::Result<_, _>>()
        .map(PolicyGrid)
}

pub fn parse_samples(s: &str) -> std::result::Result<SampleSizes, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let arr: [usize; 6] = values
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected 6 comma-separated sizes, got {}", v.len()))?;
    Ok(SampleSizes(arr))
}

/// Failure that maps to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Builds the session config: defaults, then the config file, then flags.
/// The seed falls back to `QKD_SEED` only when neither flag nor file sets it.
pub fn resolve_config(
    args: &SessionArgs,
    env_seed: Option<&str>,
) -> Result<SessionConfig, CliError> {
    let (mut cfg, file_has_seed) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let has_seed = value.get("seed").is_some();
            let cfg: SessionConfig = serde_json::from_value(value)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            (cfg, has_seed)
        }
        None => (SessionConfig::default(), false),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    } else if !file_has_seed {
        if let Some(s) = env_seed {
            cfg.seed = s.trim().parse().map_err(|e| {
                CliError::Config(Error::InvalidConfig {
                    field: "seed",
                    reason: format!("{SEED_ENV}=`{s}`: {e}"),
                })
            })?;
        }
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.alpha_sq {
        cfg.alpha_sq = v;
    }
    if let Some(v) = args.pairs {
        cfg.n_pairs = v;
    }
    if let Some(v) = args.attack {
        cfg.attack = v;
    }
    if let Some(v) = args.e_max {
        cfg.e_max = v;
    }
    if let Some(v) = args.samples {
        cfg.m_samples = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, contents).map_err(io_err(p)),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeySummary {
    pub sifted_key_length: usize,
    pub block_size: usize,
    pub rounds: usize,
    pub leaked_bits: usize,
    pub corrected_bits: usize,
    pub residual_mismatches: usize,
    /// `None` when the key is too short for the requested compression.
    pub final_key_length: Option<usize>,
}

/// Everything `run` writes to the report file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: SessionConfig,
    pub tally: SubsetTally,
    pub error_report: ErrorReport,
    /// Present only when the refined test accepts.
    pub key: Option<KeySummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: u8,
    pub report: RunReport,
    pub final_key: Option<Vec<u8>>,
}

/// Block size targeting about one error per block, kept within `[8, 4096]`.
fn auto_block_size(error_rate: f64) -> usize {
    if error_rate <= 0.0 {
        return 4096;
    }
    ((0.73 / error_rate) as usize).clamp(8, 4096)
}

pub fn cmd_run(cfg: &SessionConfig, args: &RunArgs) -> Result<RunOutcome, CliError> {
    let session = run_session(cfg)?;
    if let Some(path) = &args.records_out {
        let file = fs::File::create(path).map_err(io_err(path))?;
        write_records_csv(&session.records, file).map_err(io_err(path))?;
    }

    let mut sampler = substream(cfg.seed, STREAM_TEST_SAMPLING);
    let est = estimate_errors(
        &session.records,
        &cfg.m_samples,
        cfg.epsilon,
        cfg.e_max,
        &mut sampler,
    )?;

    let mut key = None;
    let mut final_key = None;
    if est.report.refined_decision == Decision::Accept {
        let bits = |f: fn(&crate::session::PairRecord) -> u8| {
            est.key_positions
                .iter()
                .map(|&p| f(&session.records[p]))
                .collect::<Vec<u8>>()
        };
        let alice = SiftedKey::new(bits(|r| r.alice_bit), Party::Alice);
        let bob = SiftedKey::new(bits(|r| r.bob_bit), Party::Bob);
        let block_size = args
            .block_size
            .unwrap_or_else(|| auto_block_size(est.report.pooled_error));
        let mut shuffler = substream(cfg.seed, STREAM_RECONCILIATION);
        let rec = reconcile(&alice, &bob, args.rounds, block_size, &mut shuffler)?;
        let hash_seed = substream(cfg.seed, STREAM_HASH_SEED).next_u64();
        let amplified = match privacy_amplify(&rec.key_a, rec.leaked, args.safety_margin, hash_seed)
        {
            Ok(k) => Some(k),
            Err(Error::KeyTooShort { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        key = Some(KeySummary {
            sifted_key_length: alice.len(),
            block_size,
            rounds: args.rounds,
            leaked_bits: rec.leaked,
            corrected_bits: rec.corrected.len(),
            residual_mismatches: rec.key_a.hamming_distance(&rec.key_b),
            final_key_length: amplified.as_ref().map(|k| k.bits.len()),
        });
        final_key = amplified.map(|k| k.bits);
    }

    let report = RunReport {
        config: cfg.clone(),
        tally: session.tally,
        error_report: est.report,
        key,
    };
    let json =
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail") + "\n";
    write_output(args.report_out.as_deref(), &json)?;
    if let (Some(path), Some(bits)) = (&args.key_out, &final_key) {
        fs::write(path, bits_to_hex(bits) + "\n").map_err(io_err(path))?;
    }

    let exit_code = match report.error_report.refined_decision {
        Decision::Accept => EXIT_ACCEPT,
        Decision::Abort => EXIT_ABORT,
    };
    Ok(RunOutcome {
        exit_code,
        report,
        final_key,
    })
}

pub const VERIFY_HEADER: &str =
    "alpha_sq,p1,p2,p3,epsilon,n_pairs,quantity,predicted,empirical,n,z,status";

/// Standard score of an observed binomial frequency. Degenerate predictions
/// (0 or 1) give 0 on an exact match and infinity otherwise.
pub fn binomial_z(empirical: f64, predicted: f64, n: u64) -> f64 {
    let var = predicted * (1.0 - predicted) / n as f64;
    if var > 0.0 {
        (empirical - predicted) / var.sqrt()
    } else if empirical == predicted {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub alpha_sq: f64,
    pub policy: AttackPolicy,
    pub epsilon: f64,
    pub n_pairs: u64,
    pub quantity: String,
    pub predicted: Option<f64>,
    pub empirical: Option<f64>,
    pub n: u64,
    pub z: Option<f64>,
    pub passed: bool,
    pub status: String,
}

impl VerifyRow {
    fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.alpha_sq,
            self.policy.p1(),
            self.policy.p2(),
            self.policy.p3(),
            self.epsilon,
            self.n_pairs,
            self.quantity,
            opt(self.predicted),
            opt(self.empirical),
            self.n,
            opt(self.z),
            self.status
        )
    }
}

pub fn default_policy_grid() -> PolicyGrid {
    let third = 1.0 / 3.0;
    PolicyGrid(
        [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (third, third, third),
        ]
        .into_iter()
        .map(|(a, b, c)| AttackPolicy::new(a, b, c).expect("static policy"))
        .collect(),
    )
}

/// Runs one session per grid cell and compares the full-subset mismatch
/// frequencies and their pooled average against the predictions.
pub fn verify_cells(
    base: &SessionConfig,
    alpha_grid: &[f64],
    policies: &PolicyGrid,
    z_max: f64,
) -> Result<Vec<VerifyRow>, CliError> {
    let mut rows = Vec::new();
    let cells = alpha_grid
        .iter()
        .flat_map(|&a| policies.0.iter().map(move |p| (a, *p)));
    for (cell, (alpha_sq, policy)) in cells.enumerate() {
        let cfg = SessionConfig {
            alpha_sq,
            attack: policy,
            seed: base.seed.wrapping_add(cell as u64),
            ..base.clone()
        };
        cfg.validate()?;
        let row = |quantity: &str| VerifyRow {
            alpha_sq,
            policy,
            epsilon: cfg.epsilon,
            n_pairs: cfg.n_pairs,
            quantity: quantity.to_string(),
            predicted: None,
            empirical: None,
            n: 0,
            z: None,
            passed: false,
            status: String::new(),
        };

        let session = run_session(&cfg)?;
        let mut sampler = substream(cfg.seed, STREAM_TEST_SAMPLING);
        match estimate_errors(
            &session.records,
            &cfg.m_samples,
            cfg.epsilon,
            cfg.e_max,
            &mut sampler,
        ) {
            Ok(_) => {}
            Err(Error::InsufficientSamples {
                label,
                available,
                required,
            }) => {
                rows.push(VerifyRow {
                    n: available as u64,
                    status: format!("insufficient_samples:{label}:{available}<{required}"),
                    ..row("cell")
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        }

        let amps = cfg.amplitudes()?;
        let predicted = predict_rates(amps, &policy);
        let freqs = subset_frequencies(&session.records);
        let mut compare = |quantity: &str, pred: f64, mismatches: u64, n: u64| {
            if n == 0 {
                rows.push(VerifyRow {
                    predicted: Some(pred),
                    status: "empty".into(),
                    ..row(quantity)
                });
                return;
            }
            let emp = mismatches as f64 / n as f64;
            let z = binomial_z(emp, pred, n);
            let passed = z.abs() <= z_max;
            rows.push(VerifyRow {
                predicted: Some(pred),
                empirical: Some(emp),
                n,
                z: Some(z),
                passed,
                status: if passed { "pass" } else { "fail" }.into(),
                ..row(quantity)
            });
        };
        for label in SubsetLabel::ALL {
            let f = freqs[label.index()];
            compare(
                label.token(),
                predicted.get(label),
                f.mismatches,
                f.population,
            );
        }
        let sifted: u64 = freqs.iter().map(|f| f.population).sum();
        let mismatches: u64 = freqs.iter().map(|f| f.mismatches).sum();
        compare(
            "average",
            predict_average(amps, &policy, cfg.epsilon),
            mismatches,
            sifted,
        );
    }
    Ok(rows)
}

pub fn cmd_verify(cfg: &SessionConfig, args: &VerifyArgs) -> Result<u8, CliError> {
    let policies = args.policy_grid.clone().unwrap_or_else(default_policy_grid);
    let rows = verify_cells(cfg, &args.alpha_grid, &policies, args.z_max)?;
    let mut table = String::from(VERIFY_HEADER);
    table.push('\n');
    for r in &rows {
        table.push_str(&r.csv());
        table.push('\n');
    }
    write_output(args.table_out.as_deref(), &table)?;
    Ok(if rows.iter().all(|r| r.passed) {
        EXIT_ACCEPT
    } else {
        EXIT_ABORT
    })
}

pub const SWEEP_HEADER: &str = "param,value,sifted_fraction_predicted,sifted_fraction_empirical,\
avg_error_predicted,avg_error_empirical,e1,e1p,e2,e2p,e3,e3p,min_epsilon,epsilon_sufficient";

/// Expands `start:stop:step` into an inclusive list, snapping each value to
/// 12 decimal places so the CSV shows `0.15` rather than float noise.
pub fn parse_range(s: &str) -> Result<Vec<f64>, CliError> {
    let parts = parse_floats(&s.replace(':', ","), 3).map_err(CliError::Usage)?;
    let (start, stop, step) = (parts[0], parts[1], parts[2]);
    if step.is_nan() || step <= 0.0 || stop.is_nan() || stop < start {
        return Err(CliError::Usage(format!("range `{s}` is empty")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub fn sweep_rows(
    base: &SessionConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<String>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let m_diag = [
        SubsetLabel::E2,
        SubsetLabel::E2P,
        SubsetLabel::E3,
        SubsetLabel::E3P,
    ]
    .iter()
    .map(|l| base.m_samples.get(*l))
    .max()
    .unwrap_or(1) as f64;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        let name = match param {
            SweepParam::Epsilon => {
                cfg.epsilon = value;
                "epsilon"
            }
            SweepParam::AlphaSq => {
                cfg.alpha_sq = value;
                "alpha_sq"
            }
            SweepParam::Pairs => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(CliError::Usage(format!(
                        "pairs value {value} is not a positive integer"
                    )));
                }
                cfg.n_pairs = value as u64;
                "pairs"
            }
        };
        cfg.validate()?;
        let amps = cfg.amplitudes()?;
        let session = run_session(&cfg)?;
        let freqs = subset_frequencies(&session.records);
        let rates: Vec<Option<f64>> = freqs.iter().map(|f| f.rate()).collect();
        let avg_emp = rates
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|r| weighted_average(&r.try_into().expect("six rates"), cfg.epsilon));
        let min_eps = 2.0 * (2.0 * m_diag / cfg.n_pairs as f64).sqrt();
        let sufficient = min_epsilon(cfg.n_pairs, m_diag as u64).is_ok_and(|e| cfg.epsilon >= e);
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut line = format!(
            "{name},{value},{},{},{},{}",
            sifted_fraction(cfg.epsilon),
            session.sifted_count() as f64 / cfg.n_pairs as f64,
            predict_average(amps, &cfg.attack, cfg.epsilon),
            opt(avg_emp),
        );
        for r in &rates {
            line.push(',');
            line.push_str(&opt(*r));
        }
        line.push_str(&format!(",{min_eps},{sufficient}"));
        rows.push(line);
    }
    Ok(rows)
}

pub fn cmd_sweep(cfg: &SessionConfig, args: &SweepArgs) -> Result<u8, CliError> {
    let values = match &args.range {
        Some(r) => parse_range(r)?,
        None => args.values.clone(),
    };
    let rows = sweep_rows(cfg, args.param, &values)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    write_output(args.out.as_deref(), &csv)?;
    Ok(EXIT_ACCEPT)
}

/// Parses `argv`, dispatches, and returns the process exit code. Diagnostics
/// go to stderr.
pub fn main_with_args<I, T>(argv: I, env_seed: Option<&str>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_ACCEPT
            };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => resolve_config(&args.session, env_seed)
            .and_then(|cfg| cmd_run(&cfg, args))
            .map(|o| o.exit_code),
        Command::Verify(args) => {
            resolve_config(&args.session, env_seed).and_then(|cfg| cmd_verify(&cfg, args))
        }
        Command::Sweep(args) => {
            resolve_config(&args.session, env_seed).and_then(|cfg| cmd_sweep(&cfg, args))
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
