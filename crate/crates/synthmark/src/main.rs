use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use synthmark::data::{Dataset, Schema};
use synthmark::forest::AnonParams;
use synthmark::harness::{
    compare_reports, measure, write_plot_csv, HarnessError, MeasureOptions, MeasureSource,
    RegressionSpec,
};
use synthmark::metrics::{GroupFilter, InconsistencyRule};
use synthmark::microdata::{synthesize_to_store, SynthesisPlan};
use synthmark::privacy::AttackConfig;
use synthmark::store::{FetchPolicy, SingleTableSource, SynTableStore};

#[derive(Parser)]
#[command(name = "synthmark", version, about = "Synthesize anonymized tables and measure their quality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Original data CSV
    #[arg(long)]
    input: PathBuf,
    /// Column schema JSON
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct AnonArgs {
    /// Average suppression threshold
    #[arg(long, default_value_t = 5.0)]
    avg_thresh: f64,
    /// Hard lower bound on suppression thresholds
    #[arg(long, default_value_t = 3)]
    abs_thresh: u32,
    /// Standard deviation of the sticky count noise
    #[arg(long, default_value_t = 1.4)]
    noise_sd: f64,
    /// Secret salt, hex-encoded (defaults to a fixed development salt)
    #[arg(long)]
    salt_hex: Option<String>,
    /// Maximum tree dimensionality
    #[arg(long, default_value_t = 4)]
    max_tree_dim: usize,
}

impl AnonArgs {
    fn params(&self) -> Result<AnonParams, HarnessError> {
        let salt = match &self.salt_hex {
            Some(h) => {
                hex::decode(h).map_err(|e| HarnessError::BadArg(format!("bad salt hex: {e}")))?
            }
            None => AnonParams::default().salt,
        };
        Ok(AnonParams {
            avg_suppress_threshold: self.avg_thresh,
            abs_suppress_threshold: self.abs_thresh,
            noise_sd: self.noise_sd,
            salt,
        })
    }
}

#[derive(Args)]
struct MeasureArgs {
    /// Synthetic table store directory
    #[arg(long, conflicts_with = "synthetic")]
    store: Option<PathBuf>,
    /// A single synthetic CSV standing in for every combination
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Missing-table policy: exact | project
    #[arg(long, default_value = "exact")]
    policy: String,
    /// Comma-separated metric subset (default: all applicable)
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Inconsistency rules JSON
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Attack configuration JSON
    #[arg(long)]
    attack: Option<PathBuf>,
    /// Regression measure as x:y
    #[arg(long)]
    regression: Option<String>,
    /// Regression group filters JSON
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Seed for marginal selection and sampling-equivalence draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also compute the sampling-equivalence of the k-marginal score
    #[arg(long)]
    sampling: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build synthetic tables into a store
    Synthesize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        anon: AnonArgs,
        /// Synthesis plan JSON (lists and/or {"all_subsets_of_size": k})
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Shorthand plan: every subset up to this size
        #[arg(long, conflicts_with = "plan")]
        all_subsets: Option<usize>,
        /// Output store directory
        #[arg(long)]
        store: PathBuf,
    },
    /// Measure synthetic tables against the original
    Measure {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        args: MeasureArgs,
        /// Report output path (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two techniques measure-by-measure
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        args: MeasureArgs,
        /// The alternative technique's synthetic CSV
        #[arg(long)]
        alt_synthetic: PathBuf,
        #[arg(long, default_value = "synthmark")]
        ref_name: String,
        #[arg(long, default_value = "alternative")]
        alt_name: String,
        /// Plot CSV output path
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_input(input: &InputArgs) -> Result<(Dataset, Schema), HarnessError> {
    let schema = Schema::from_json_file(&input.schema)?;
    let ds = Dataset::load_csv(&input.input, &schema)?;
    Ok((ds, schema))
}

fn parse_policy(s: &str) -> Result<FetchPolicy, HarnessError> {
    match s {
        "exact" => Ok(FetchPolicy::Exact),
        "project" => Ok(FetchPolicy::ProjectFromSuperset),
        other => Err(HarnessError::BadArg(format!(
            "unknown policy `{other}` (expected exact | project)"
        ))),
    }
}

fn build_options(args: &MeasureArgs) -> Result<MeasureOptions, HarnessError> {
    let rules: Vec<InconsistencyRule> = match &args.rules {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| HarnessError::BadArg(format!("rules json: {e}")))?,
        None => Vec::new(),
    };
    let attack = match &args.attack {
        Some(p) => Some(
            AttackConfig::from_json(&std::fs::read_to_string(p)?)
                .map_err(HarnessError::Privacy)?,
        ),
        None => None,
    };
    let regression = match &args.regression {
        Some(spec) => {
            let (x, y) = spec
                .split_once(':')
                .ok_or_else(|| HarnessError::BadArg("regression must be x:y".into()))?;
            let groups: Vec<GroupFilter> = match &args.groups {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| HarnessError::BadArg(format!("groups json: {e}")))?,
                None => Vec::new(),
            };
            Some(RegressionSpec {
                x: x.to_string(),
                y: y.to_string(),
                groups,
            })
        }
        None => None,
    };
    Ok(MeasureOptions {
        metrics: if args.metrics.is_empty() {
            None
        } else {
            Some(args.metrics.iter().cloned().collect::<BTreeSet<_>>())
        },
        rules,
        attack,
        regression,
        seed: args.seed,
        sampling: args.sampling,
        ..Default::default()
    })
}

enum Holder {
    Store(SynTableStore),
    Single(SingleTableSource),
}

fn open_source(
    args: &MeasureArgs,
    schema: &Schema,
) -> Result<Holder, HarnessError> {
    let policy = parse_policy(&args.policy)?;
    match (&args.store, &args.synthetic) {
        (Some(dir), None) => Ok(Holder::Store(SynTableStore::open(dir, schema, policy)?)),
        (None, Some(csv)) => {
            let table = Dataset::load_csv(csv, schema)?;
            Ok(Holder::Single(SingleTableSource::new(table)))
        }
        _ => Err(HarnessError::BadArg(
            "exactly one of --store or --synthetic is required".into(),
        )),
    }
}

fn run() -> Result<(), HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synthesize {
            input,
            anon,
            plan,
            all_subsets,
            store,
        } => {
            let (ds, _) = load_input(&input)?;
            let params = anon.params()?;
            let plan = match (plan, all_subsets) {
                (Some(p), None) => SynthesisPlan::from_json(&std::fs::read_to_string(&p)?)?,
                (None, Some(k)) => SynthesisPlan::all_subsets(k),
                (None, None) => SynthesisPlan::single(ds.schema().data_column_names()),
                _ => unreachable!("clap enforces the conflict"),
            };
            let built = synthesize_to_store(&ds, &plan, &params, anon.max_tree_dim, &store)?;
            eprintln!(
                "wrote {} tables to {}",
                built.combinations().len(),
                store.display()
            );
            Ok(())
        }
        Command::Measure { input, args, out } => {
            let (ds, schema) = load_input(&input)?;
            let opts = build_options(&args)?;
            let holder = open_source(&args, &schema)?;
            let source = match &holder {
                Holder::Store(s) => MeasureSource::Store(s),
                Holder::Single(s) => MeasureSource::Single(s),
            };
            let report = measure(&ds, &source, &opts)?;
            let json = report.to_json();
            match out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Compare {
            input,
            args,
            alt_synthetic,
            ref_name,
            alt_name,
            out,
        } => {
            let (ds, schema) = load_input(&input)?;
            let opts = build_options(&args)?;
            let holder = open_source(&args, &schema)?;
            let source = match &holder {
                Holder::Store(s) => MeasureSource::Store(s),
                Holder::Single(s) => MeasureSource::Single(s),
            };
            let ref_report = measure(&ds, &source, &opts)?;

            let alt_table = Dataset::load_csv(&alt_synthetic, &schema)?;
            let alt_single = SingleTableSource::new(alt_table);
            let alt_source = MeasureSource::Single(&alt_single);
            let alt_report = measure(&ds, &alt_source, &opts)?;

            let rows = compare_reports(&ref_report, &alt_report);
            write_plot_csv(&out, &ref_name, &alt_name, &rows)?;
            eprintln!("wrote {} comparison rows to {}", rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
