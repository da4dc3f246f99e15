use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use brise::data::{Group, MultiSourceDataset, SourceSchema};
use brise::dissimilarity::Norm;
use brise::error::{Error, Result};
use brise::exec::{with_threads, Exec};
use brise::graph::RankMatrix;
use brise::io::ingest;
use brise::moments::{enumeration_oracle, null_moments, BlockMoments};
use brise::pipeline::{prepare, run_prepared, TestOptions};
use brise::sim::{self, SimMethod, SimulationConfig};
use brise::stats::{c_form, project, v_form, Inference, Method, RankSums};
use brise::FORMAT_VERSION;

#[derive(Parser, Debug)]
#[command(
    name = "brise",
    about = "Two-sample tests for multi-source data with block-wise missingness"
)]
struct Cli {
    /// TOML or JSON file with `[test]` and `[simulate]` defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a test on a CSV file.
    Test(TestArgs),
    /// Estimate size or power on synthetic data.
    Simulate(SimArgs),
    /// Compare closed-form null moments with exhaustive enumeration.
    OracleCheck,
    /// Check a CSV against its schema and report the pattern partition.
    Validate(InputArgs),
    /// Report the limiting-distribution condition ratios.
    Diagnostics(TestArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long = "n-thres")]
    n_thres: Option<usize>,
    #[arg(long = "p-thres")]
    p_thres: Option<f64>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// BRISE-c or BRISE-v.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    k: Option<usize>,
    /// asymptotic, pattern-perm or standard-perm.
    #[arg(long)]
    inference: Option<Inference>,
    /// Permutation replicates.
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// sqrt or identity.
    #[arg(long)]
    norm: Option<String>,
    /// Divide summed dissimilarities by the shared dimension.
    #[arg(long = "per-dimension")]
    per_dimension: bool,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "dump-distances")]
    dump_distances: Option<PathBuf>,
    #[arg(long = "dump-ranks")]
    dump_ranks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Number of sources L.
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "pX")]
    p_x: Option<f64>,
    #[arg(long = "pY")]
    p_y: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated: BRISE-c, BRISE-v, BRISE-c(sp).
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated p grid; sweeps pX = pY = p (power curve).
    #[arg(long = "p-grid")]
    p_grid: Option<String>,
    /// Tidy CSV of rejection rates.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary with per-replicate draws.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ConfigFile {
    test: Option<TestOptions>,
    simulate: Option<SimulationConfig>,
}

impl ConfigFile {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
        }
    }
}

fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    brise::rng::derive_seed(nanos, std::process::id() as u64)
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).unwrap_or_else(|| {
        let s = fresh_seed();
        eprintln!("seed: {s}");
        s
    })
}

fn test_options(args: &TestArgs, cfg: &ConfigFile, file_seed: Option<u64>) -> Result<TestOptions> {
    let mut o = cfg.test.clone().unwrap_or_default();
    if let Some(v) = args.method {
        o.method = v;
    }
    if let Some(v) = args.k {
        o.k = v;
    }
    if let Some(v) = args.inference {
        o.inference = v;
    }
    if let Some(v) = args.b {
        if o.inference == Inference::Asymptotic {
            return Err(Error::InvalidConfig(
                "--B only applies to permutation inference".into(),
            ));
        }
        o.replicates = v;
    }
    if let Some(v) = args.input.n_thres {
        o.n_thres = v;
    }
    if let Some(v) = args.input.p_thres {
        o.p_thres = v;
    }
    if let Some(v) = &args.norm {
        o.norm = match v.as_str() {
            "sqrt" => Norm::Sqrt,
            "identity" => Norm::Identity,
            _ => return Err(Error::InvalidConfig(format!("unknown norm `{v}`"))),
        };
    }
    o.per_dimension |= args.per_dimension;
    if o.inference != Inference::Asymptotic {
        o.seed = resolve_seed(args.seed, file_seed);
    } else if let Some(s) = args.seed {
        o.seed = s;
    }
    Ok(o)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn file_seed_of_test(cfg: &ConfigFile) -> Option<u64> {
    cfg.test.as_ref().map(|t| t.seed)
}

fn run_test_cmd(args: &TestArgs, cfg: &ConfigFile) -> Result<()> {
    let opts = test_options(args, cfg, file_seed_of_test(cfg))?;
    let data = ingest(&args.input.data, &args.input.schema)?;
    let prep = prepare(&data, &opts)?;
    if let Some(p) = &args.dump_distances {
        prep.write_distances(p)?;
    }
    if let Some(p) = &args.dump_ranks {
        prep.write_ranks(p)?;
    }
    let result = run_prepared(&prep, &opts)?;
    emit_json(&result, args.out.as_deref())
}

fn run_diagnostics(args: &TestArgs, cfg: &ConfigFile) -> Result<()> {
    let opts = test_options(args, cfg, file_seed_of_test(cfg))?;
    let data = ingest(&args.input.data, &args.input.schema)?;
    let prep = prepare(&data, &opts)?;
    emit_json(&prep.diagnostics(), args.out.as_deref())
}

fn run_validate(args: &InputArgs, cfg: &ConfigFile) -> Result<()> {
    let defaults = cfg.test.clone().unwrap_or_default();
    let data = ingest(&args.data, &args.schema)?;
    let (canonical, _) = data.canonicalized();
    let part = canonical.partition().filter(
        args.n_thres.unwrap_or(defaults.n_thres),
        args.p_thres.unwrap_or(defaults.p_thres),
    )?;
    #[derive(Serialize)]
    struct Report {
        rows: usize,
        m: usize,
        n: usize,
        sources: Vec<String>,
        partition: brise::data::PartitionSummary,
    }
    emit_json(
        &Report {
            rows: data.len(),
            m: data.count(Group::X),
            n: data.count(Group::Y),
            sources: data
                .schema()
                .sources()
                .iter()
                .map(|s| s.name.clone())
                .collect(),
            partition: part.summary(),
        },
        None,
    )
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn run_simulate(args: &SimArgs, cfg: &ConfigFile, exec: Exec) -> Result<()> {
    let mut c = cfg.simulate.clone().unwrap_or_default();
    if let Some(v) = &args.setting {
        c.setting = v.parse()?;
    }
    if let Some(v) = &args.variant {
        c.variant = v.parse()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { c.$field = v; })* };
    }
    set!(d, sources, m, n, p_x, p_y, k, theta, reps);
    if let Some(v) = &args.methods {
        c.methods = parse_list::<SimMethod>(v)?;
    }
    c.seed = resolve_seed(args.seed, cfg.simulate.as_ref().map(|s| s.seed));
    let rows = if let Some(grid) = &args.p_grid {
        let grid: Vec<f64> =
            parse_list(grid).map_err(|e| Error::InvalidConfig(format!("bad --p-grid: {e}")))?;
        sim::power_curve(&c, &grid, exec)?
    } else {
        let report = sim::simulate(&c, exec)?;
        if let Some(p) = &args.summary {
            sim::write_report_json(&report, p)?;
        }
        report.rates
    };
    match &args.out {
        Some(p) => sim::write_rates_csv(&rows, p)?,
        None => emit_json(&rows, None)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleInstance {
    name: &'static str,
    max_mean_deviation: f64,
    max_cov_deviation: f64,
    note: String,
}

fn bundled_two_pattern() -> Result<MultiSourceDataset> {
    let schema = SourceSchema::uniform(2, 1)?;
    let g = [Group::X, Group::Y, Group::X, Group::Y, Group::Y];
    let vals = [0.3, 1.7, 2.2, 0.9, 1.4, 1.1, 2.9, 0.4, 3.3];
    let mut rows = Vec::new();
    for i in 0..5 {
        rows.push((
            g[i],
            vec![Some(vec![vals[i]]), Some(vec![vals[i] * 0.5 + 0.1])],
        ));
    }
    for i in 0..4 {
        rows.push((g[i], vec![Some(vec![vals[5 + i]]), None]));
    }
    MultiSourceDataset::from_blocks(schema, rows)
}

fn bundled_single_pattern() -> Result<MultiSourceDataset> {
    let schema = SourceSchema::uniform(1, 2)?;
    let pts = [
        [0.0, 0.1],
        [1.0, 0.4],
        [0.3, 2.0],
        [1.5, 1.2],
        [2.2, 0.7],
        [0.8, 0.9],
    ];
    let rows = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                if i % 2 == 0 { Group::X } else { Group::Y },
                vec![Some(p.to_vec())],
            )
        })
        .collect();
    MultiSourceDataset::from_blocks(schema, rows)
}

fn compare(
    name: &'static str,
    r: &RankMatrix,
    part: &brise::PatternPartition,
    note: String,
) -> Result<OracleInstance> {
    let bm = BlockMoments::compute(r, part)?;
    let closed = null_moments(&bm, part)?;
    let exact = enumeration_oracle(r, part)?;
    let scale = |x: f64| x.abs().max(1.0);
    let dev = |a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / scale(*y))
            .fold(0.0, f64::max)
    };
    let mean_dev = closed
        .mean
        .iter()
        .zip(exact.mean.iter())
        .map(|(x, y)| (x - y).abs() / scale(*y))
        .fold(0.0, f64::max);
    Ok(OracleInstance {
        name,
        max_mean_deviation: mean_dev,
        max_cov_deviation: dev(&closed.cov, &exact.cov),
        note,
    })
}

fn run_oracle_check() -> Result<bool> {
    let opts = TestOptions {
        k: 2,
        n_thres: 0,
        p_thres: 0.0,
        ..TestOptions::default()
    };
    let mut out = Vec::new();

    let two = prepare(&bundled_two_pattern()?, &opts)?;
    out.push(compare(
        "two-pattern",
        &two.ranks,
        &two.partition,
        format!("{} patterns", two.partition.n_patterns()),
    )?);

    let single = prepare(&bundled_single_pattern()?, &opts)?;
    let nm = single.null_moments()?;
    let u = RankSums::new(&single.ranks, &single.partition).evaluate(single.partition.is_x());
    let tv = v_form(&nm)?.eval(&project(Method::BriseV, &u));
    let tc = c_form(&nm)?.eval(&project(Method::BriseC, &u));
    let same = tv.to_bits() == tc.to_bits();
    out.push(compare(
        "single-pattern",
        &single.ranks,
        &single.partition,
        format!("T_v = {tv}, T_c = {tc}, bitwise equal: {same}"),
    )?);

    // Every off-diagonal rank equal: all variances vanish.
    let part = single.partition.clone();
    let n = part.len();
    let values = (0..n * n)
        .map(|t| if t / n == t % n { 0.0 } else { 0.75 })
        .collect();
    let constant = RankMatrix::from_values(&part, 2, values, true);
    let cnm = null_moments(&BlockMoments::compute(&constant, &part)?, &part)?;
    let degenerate = cnm.cov.iter().all(|v| v.abs() < 1e-12);
    out.push(compare(
        "constant-rank",
        &constant,
        &part,
        format!("zero covariance (degenerate): {degenerate}"),
    )?);

    let pass = same
        && degenerate
        && out
            .iter()
            .all(|o| o.max_mean_deviation <= 1e-9 && o.max_cov_deviation <= 1e-9);
    emit_json(&serde_json::json!({ "instances": out, "pass": pass }), None)?;
    Ok(pass)
}

fn fail(e: &Error) -> ExitCode {
    let body = serde_json::json!({ "code": e.code(), "message": e.to_string() });
    eprintln!("{body}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let version = format!("{} (format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"));
    let version: &'static str = Box::leak(version.into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let cfg = match cli.config.as_deref().map(ConfigFile::read).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return fail(&e),
    };
    let outcome = with_threads(cli.threads, || match &cli.command {
        Command::Test(a) => run_test_cmd(a, &cfg).map(|_| true),
        Command::Simulate(a) => run_simulate(a, &cfg, Exec::Parallel).map(|_| true),
        Command::OracleCheck => run_oracle_check(),
        Command::Validate(a) => run_validate(a, &cfg).map(|_| true),
        Command::Diagnostics(a) => run_diagnostics(a, &cfg).map(|_| true),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(&e),
    }
}
