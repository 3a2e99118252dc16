//! `hetgnn` — metapath homophily metrics and heterophily-aware training.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (or failed check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetgnn_core::harness::{
    bucket_report_for_run, evaluate, gradcheck_graph, gradcheck_objective, infer, load_run, train, write_json,
    write_synth, SynthSpec, TrainRunConfig, BUCKETS_FILE,
};
use hetgnn_core::hetgraph::{load_graph, Split};
use hetgnn_core::homophily::{metapath_metrics, BucketScheme, Level, LocalKind};
use hetgnn_core::metapath::{induce_subgraph, Metapath};
use hetgnn_core::model::{Fuse, ModelConfig};
use hetgnn_core::numcore::GradCheckOptions;
use hetgnn_core::Error;

#[derive(Parser)]
#[command(
    name = "hetgnn",
    version,
    about = "Metapath homophily metrics and heterophily-aware HGNN training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random draw of the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Per-metapath label homophily and Dirichlet energy (metrics.json).
    Metrics {
        #[arg(long)]
        graph: PathBuf,
        /// Target node type; defaults to the labeled type.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value = "edge")]
        level: String,
        #[command(flatten)]
        common: Common,
    },
    /// Metapath-induced homogeneous subgraph (induced.tsv, induced.json).
    Induce {
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated relation names, e.g. `writes,rev_writes`.
        #[arg(long)]
        metapath: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        graph: PathBuf,
        /// JSON run configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained run on every split (eval.json).
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-bucket scores of a trained run by local metric (buckets.csv, buckets.json).
    Buckets {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// `mlh` or `mde`.
        #[arg(long, default_value = "mlh")]
        metric: String,
        /// Number of quantile buckets.
        #[arg(long, default_value_t = 5, conflicts_with = "edges")]
        quantiles: usize,
        /// Fixed comma-separated bucket edges instead of quantiles.
        #[arg(long)]
        edges: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a planted-homophily graph (manifest, TSVs, synth.json).
    Synth {
        /// JSON spec; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        target_nodes: Option<usize>,
        /// Comma-separated node counts, one intermediate type each.
        #[arg(long)]
        intermediates: Option<String>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        q_alt: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the full objective on a small graph (gradcheck.json).
    Gradcheck {
        #[arg(long, default_value = "mean")]
        fuse: String,
        #[arg(long)]
        contrastive_completion: bool,
        #[arg(long, default_value_t = 6)]
        hidden_dim: usize,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    /// The command ran but its check did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad {what} value `{x}`")))
        })
        .collect()
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Metrics {
            graph,
            target,
            level,
            common,
        } => {
            let level: Level = level.parse()?;
            let g = load_graph(&graph)?;
            let target = target.unwrap_or_else(|| g.labels.target_type.clone());
            let report = metapath_metrics(&g, &target, level)?;
            ensure_dir(&common.out)?;
            write_json(&common.out.join("metrics.json"), &report)?;
            println!("{}", report.to_json());
        }
        Command::Induce {
            graph,
            metapath,
            common,
        } => {
            let g = load_graph(&graph)?;
            // the metapath is user input, so a bad one is a usage error
            let p = Metapath::parse(&g, &metapath).map_err(|e| Failure::Usage(e.to_string()))?;
            let ig = induce_subgraph(&g, &p)?;
            ensure_dir(&common.out)?;
            ig.write_tsv(common.out.join("induced.tsv"))?;
            let summary = serde_json::json!({
                "metapath": ig.metapath,
                "relations": metapath,
                "node_type": ig.node_type,
                "nodes": ig.node_count,
                "edges": ig.n_edges(),
            });
            write_json(&common.out.join("induced.json"), &summary)?;
            println!("{summary}");
        }
        Command::Train {
            graph,
            config,
            epochs,
            common,
        } => {
            let g = load_graph(&graph)?;
            let mut cfg: TrainRunConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainRunConfig::default(),
            };
            cfg.seed = common.seed;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let outcome = train(&g, &cfg, &common.out)?;
            println!("{}", serde_json::to_string(&outcome.metrics).expect("serialisable"));
        }
        Command::Eval { graph, run, common } => {
            let g = load_graph(&graph)?;
            let (cfg, params) = load_run(&g, &run)?;
            let logits = infer(&g, &params, &cfg.model)?;
            let mut out = serde_json::Map::new();
            for split in [Split::Train, Split::Val, Split::Test] {
                let nodes = g.splits.nodes(split);
                if !nodes.is_empty() {
                    let s = evaluate(&logits, &g.labels, &nodes)?;
                    out.insert(split.as_str().into(), serde_json::to_value(s).expect("serialisable"));
                }
            }
            if out.is_empty() {
                return Err(Failure::Data("graph has no split members to evaluate".into()));
            }
            ensure_dir(&common.out)?;
            let value = serde_json::Value::Object(out);
            write_json(&common.out.join("eval.json"), &value)?;
            println!("{value}");
        }
        Command::Buckets {
            graph,
            run,
            metric,
            quantiles,
            edges,
            common,
        } => {
            let kind: LocalKind = metric.parse()?;
            let scheme = match edges {
                Some(e) => BucketScheme::FixedEdges(parse_list(&e, "bucket edge")?),
                None => BucketScheme::Quantiles(quantiles),
            };
            let g = load_graph(&graph)?;
            let report = bucket_report_for_run(&g, &run, kind, &scheme)?;
            ensure_dir(&common.out)?;
            fs::write(common.out.join(BUCKETS_FILE), report.to_csv())
                .map_err(|e| Failure::Data(format!("{}: {e}", common.out.display())))?;
            write_json(&common.out.join("buckets.json"), &report)?;
            print!("{}", report.to_csv());
        }
        Command::Synth {
            spec,
            classes,
            target_nodes,
            intermediates,
            q,
            q_alt,
            s,
            feature_dim,
            k,
            common,
        } => {
            let mut sp: SynthSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SynthSpec::default(),
            };
            sp.seed = common.seed;
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = $f { sp.$f = v; } )* };
            }
            set!(classes, target_nodes, q, s, feature_dim, k);
            if q_alt.is_some() {
                sp.q_alt = q_alt;
            }
            if let Some(list) = intermediates {
                sp.intermediate_sizes = parse_list(&list, "intermediate size")?;
            }
            let g = write_synth(&sp, &common.out)?;
            println!(
                "wrote {} ({} nodes, expected metapath homophily {:.6})",
                common.out.display(),
                g.total_nodes(),
                sp.expected_homophily()
            );
        }
        Command::Gradcheck {
            fuse,
            contrastive_completion,
            hidden_dim,
            common,
        } => {
            let fuse: Fuse = fuse.parse()?;
            let cfg = ModelConfig {
                hidden_dim,
                fuse,
                contrastive_completion,
                edge_mask_ratio: 0.5,
                ..Default::default()
            };
            let g = gradcheck_graph(common.seed)?;
            let opts = GradCheckOptions {
                seed: common.seed,
                ..Default::default()
            };
            let report = gradcheck_objective(&g, &cfg, common.seed, &opts)?;
            ensure_dir(&common.out)?;
            write_json(&common.out.join("gradcheck.json"), &report)?;
            println!(
                "{} parameters checked, max relative error {:.3e} (tol {:.0e})",
                report.params.len(),
                report.max_rel_error(),
                report.tol
            );
            if !report.passed {
                return Err(Failure::Check("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) | Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
