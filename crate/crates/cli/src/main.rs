use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dnlfa::data::{self, DatasetStats, SparseDataset, TripleSet};
use dnlfa::eval::{self, Timing};
use dnlfa::model::{Hyperparameters, Model, ModelError, Variant};
use dnlfa::trainer::TrainError;

#[derive(Debug, Parser)]
#[command(name = "dnlfa", version, about = "Nonnegative latent factor analysis with dynamic bias masks")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "DNLFA_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print entry count, dimensions, density and value range of a triple file
    Stats {
        #[arg(long, env = "DNLFA_DATA")]
        data: PathBuf,
    },
    /// Train one model and write it with a per-iteration report
    Train(TrainArgs),
    /// Tenfold cross-validation over one or more variants
    Cv(CvArgs),
    /// Predict ratings for (row, col) pairs with a trained model
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct Hyper {
    /// Latent dimension
    #[arg(long, default_value_t = 20, env = "DNLFA_D1")]
    d1: usize,
    /// Bias dimension [default: 0 for nlfa, 1 for bnlfa, 5 otherwise]
    #[arg(long, env = "DNLFA_D2")]
    d2: Option<usize>,
    /// Regularization coefficient (artifact default, not a published value)
    #[arg(long, default_value_t = 0.05, env = "DNLFA_LAMBDA")]
    lambda: f64,
    /// Mask deactivation threshold (artifact default, not a published value)
    #[arg(long, default_value_t = 0.01, env = "DNLFA_THRESHOLD_E")]
    threshold_e: f64,
    #[arg(long, default_value_t = 1000, env = "DNLFA_MAX_ITERS")]
    max_iters: usize,
    /// Stop when consecutive monitored RMSEs differ by less than this
    #[arg(long, default_value_t = 1e-5, env = "DNLFA_TOL")]
    tol: f64,
    #[arg(long, default_value_t = 0, env = "DNLFA_SEED")]
    seed: u64,
    /// Initial entries are uniform on (0, init-scale] (artifact default)
    #[arg(long, default_value_t = 0.05, env = "DNLFA_INIT_SCALE")]
    init_scale: f64,
}

impl Hyper {
    fn build(&self, variant: Variant) -> Hyperparameters {
        Hyperparameters {
            variant,
            d1: self.d1,
            d2: self.d2.unwrap_or(variant.default_d2()),
            lambda: self.lambda,
            threshold_e: self.threshold_e,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Dnlfa, env = "DNLFA_MODEL")]
    model: VariantArg,
    #[arg(long, env = "DNLFA_TRAIN")]
    train: PathBuf,
    /// Monitored for termination when given
    #[arg(long, env = "DNLFA_VALID")]
    valid: Option<PathBuf>,
    /// Scored once after training
    #[arg(long, env = "DNLFA_TEST")]
    test: Option<PathBuf>,
    /// Model file to write
    #[arg(long, env = "DNLFA_OUT")]
    out: PathBuf,
    /// Per-iteration CSV [default: <out>.report.csv]
    #[arg(long, env = "DNLFA_REPORT")]
    report: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long, env = "DNLFA_DATA")]
    data: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "nlfa,bnlfa,ebnl,dnlfa",
        env = "DNLFA_VARIANTS"
    )]
    variants: Vec<VariantArg>,
    #[arg(
        long,
        default_value_t = 10,
        value_parser = clap::value_parser!(u8).range(1..=10),
        env = "DNLFA_REPETITIONS"
    )]
    repetitions: u8,
    /// Run repetitions one after another or all at once
    #[arg(long, value_enum, default_value_t = TimingArg::Sequential, env = "DNLFA_TIMING")]
    timing: TimingArg,
    /// Output prefix: writes <out>.csv, <out>.md and <out>.runs.csv
    #[arg(long, env = "DNLFA_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, env = "DNLFA_MODEL_FILE")]
    model: PathBuf,
    /// File of `row col` lines ("-" for stdin); extra columns are ignored
    #[arg(long, env = "DNLFA_PAIRS")]
    pairs: Option<PathBuf>,
    /// Inline pair, repeatable
    #[arg(long, num_args = 2, value_names = ["ROW", "COL"], allow_negative_numbers = true)]
    pair: Vec<i64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Nlfa,
    Bnlfa,
    Ebnl,
    Dnlfa,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Nlfa => Variant::Nlfa,
            VariantArg::Bnlfa => Variant::Bnlfa,
            VariantArg::Ebnl => Variant::Ebnl,
            VariantArg::Dnlfa => Variant::Dnlfa,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TimingArg {
    Sequential,
    Concurrent,
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Runtime(e) => e,
        }
    }
}

fn from_model_error(e: ModelError) -> Failure {
    match e {
        ModelError::InvalidHyperparameters(_) => Failure::Usage(e.into()),
        _ => Failure::Data(e.into()),
    }
}

fn from_train_error(e: TrainError) -> Failure {
    match e {
        TrainError::EmptyTrainingSet => Failure::Data(e.into()),
        TrainError::Model(m) => from_model_error(m),
    }
}

fn from_eval_error(e: eval::EvalError) -> Failure {
    use eval::EvalError as E;
    match e {
        E::Repetitions(_) => Failure::Usage(e.into()),
        E::Data(_) | E::EmptyScoredSet => Failure::Data(e.into()),
        E::Model(m) => from_model_error(m),
        E::Train(t) => from_train_error(t),
    }
}

type Outcome = Result<(), Failure>;

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn open(path: &Path) -> Result<Box<dyn BufRead>, Failure> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    File::open(path)
        .map(|f| Box::new(BufReader::new(f)) as Box<dyn BufRead>)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::Data)
}

fn read_set(path: &Path) -> Result<TripleSet, Failure> {
    data::read_triples(open(path)?)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    runtime(
        File::create(path)
            .map(BufWriter::new)
            .with_context(|| format!("cannot create {}", path.display())),
    )
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Outcome {
    let mut out = create(path)?;
    runtime(
        f(&mut out)
            .and_then(|_| out.flush())
            .with_context(|| format!("writing {}", path.display())),
    )
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_stats(path: &Path) -> Outcome {
    let set = read_set(path)?;
    let ds = data::align(&[&set]).pop().expect("one dataset");
    let s = DatasetStats::of(&ds);
    let num = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v}"));
    println!("entries  {}", s.known);
    println!("rows     {}", s.rows);
    println!("cols     {}", s.cols);
    match s.density {
        Some(d) => println!("density  {:.2}%", d * 100.0),
        None => println!("density  n/a"),
    }
    println!("min      {}", num(s.min));
    println!("max      {}", num(s.max));
    println!("mean     {}", num(s.mean));
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Outcome {
    let hp = args.hyper.build(args.model.into());
    hp.validate().map_err(from_model_error)?;

    let mut sets = vec![read_set(&args.train)?];
    if let Some(p) = &args.valid {
        sets.push(read_set(p)?);
    }
    if let Some(p) = &args.test {
        sets.push(read_set(p)?);
    }
    let refs: Vec<&TripleSet> = sets.iter().collect();
    let mut aligned = data::align(&refs).into_iter();
    let train = aligned.next().expect("train set");
    let valid = args.valid.as_ref().and_then(|_| aligned.next());
    let test = args.test.as_ref().and_then(|_| aligned.next());

    let (model, report) =
        dnlfa::train(&hp, &train, valid.as_ref(), hp.seed).map_err(from_train_error)?;

    write_with(&args.out, |w| model.write(w))?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".report.csv"));
    write_with(&report_path, |w| report.write_csv(w))?;

    println!(
        "{} after {} iterations ({} monitored)",
        report.termination,
        report.iterations(),
        report.monitor
    );
    if let Some(last) = report.last() {
        println!("train rmse {:.6}", last.train_rmse);
        if let Some(v) = last.valid_rmse {
            println!("valid rmse {v:.6}");
        }
        if hp.variant.dynamic_masks() {
            println!("active masks {} rows, {} cols", last.active_i, last.active_j);
        }
    }
    if let Some(test) = test.filter(|t| !t.is_empty()) {
        let r = eval::rmse(&model, &test).map_err(from_eval_error)?;
        println!("test rmse  {r:.6}");
    }
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Outcome {
    let variants: Vec<Variant> = args.variants.iter().map(|&v| v.into()).collect();
    let base = args.hyper.build(Variant::Dnlfa);
    for &v in &variants {
        base.for_variant(v).validate().map_err(from_model_error)?;
    }
    let set = read_set(&args.data)?;
    let ds: SparseDataset = data::align(&[&set]).pop().expect("one dataset");
    let timing = match args.timing {
        TimingArg::Sequential => Timing::Sequential,
        TimingArg::Concurrent => Timing::Concurrent,
    };
    let table = eval::compare_variants(
        &base,
        &ds,
        &variants,
        args.repetitions as usize,
        base.seed,
        timing,
    )
    .map_err(from_eval_error)?;

    let markdown = table.to_markdown();
    print!("{markdown}");
    if let Some(prefix) = &args.out {
        write_with(&with_suffix(prefix, ".csv"), |w| table.write_csv(w))?;
        write_with(&with_suffix(prefix, ".md"), |w| w.write_all(markdown.as_bytes()))?;
        write_with(&with_suffix(prefix, ".runs.csv"), |w| table.write_runs_csv(w))?;
    }
    Ok(())
}

fn parse_pair(line: &str) -> Option<(i64, i64)> {
    let mut it = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty());
    let row = it.next()?.parse().ok()?;
    let col = it.next()?.parse().ok()?;
    Some((row, col))
}

enum Query {
    Pair(i64, i64),
    Malformed(String),
}

fn predict_line(model: &Model, q: &Query) -> Result<String, String> {
    match *q {
        Query::Malformed(ref raw) => Err(format!("{raw} ERR:malformed")),
        Query::Pair(row, col) => {
            let m = model.row_map.dense(row);
            let n = model.col_map.dense(col);
            match (m, n) {
                (None, _) => Err(format!("{row} {col} ERR:unknown-row")),
                (_, None) => Err(format!("{row} {col} ERR:unknown-col")),
                (Some(m), Some(n)) => Ok(format!("{row} {col} {}", model.predict_unchecked(m, n))),
            }
        }
    }
}

fn cmd_predict(args: &PredictArgs) -> Outcome {
    if args.pairs.is_none() && args.pair.is_empty() {
        return Err(Failure::Usage(anyhow!("give --pairs FILE or --pair ROW COL")));
    }
    let model = Model::read(open(&args.model)?)
        .with_context(|| format!("reading model {}", args.model.display()))
        .map_err(Failure::Data)?;

    let mut queries: Vec<Query> = args.pair.chunks(2).map(|p| Query::Pair(p[0], p[1])).collect();
    if let Some(path) = &args.pairs {
        for line in open(path)?.lines() {
            let line = runtime(line.with_context(|| format!("reading {}", path.display())))?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            queries.push(match parse_pair(text) {
                Some((r, c)) => Query::Pair(r, c),
                None => Query::Malformed(text.to_string()),
            });
        }
    }

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut failures = 0;
    for q in &queries {
        let line = predict_line(&model, q).unwrap_or_else(|marker| {
            failures += 1;
            marker
        });
        runtime(writeln!(out, "{line}").context("writing predictions"))?;
    }
    runtime(out.flush().context("writing predictions"))?;
    if !queries.is_empty() && failures == queries.len() {
        return Err(Failure::Data(anyhow!("no pair could be predicted")));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")
            .map_err(Failure::Usage)?;
    }
    match &cli.command {
        Command::Stats { data } => cmd_stats(data),
        Command::Train(args) => cmd_train(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Predict(args) => cmd_predict(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
