use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use l2reps::compress1d::{compress, ShallowNet1D};
use l2reps::cprank::{cp_rank_lower_bound, graph_gram, is_triangle_free, Graph};
use l2reps::experiments::{
    export_forces, forces_csv, run_trial, sweep, verify_counterexample, ExperimentConfig,
};
use l2reps::linalg::numerical_rank;
use l2reps::network::train;
use l2reps::reform_k::{
    chain_from_weights, rank_sigma_bounds, representation_cost_shallow, CovariancePair,
    SearchBudget, GRAM_TOL,
};
use l2reps::reform_z::{default_epsilon, phi};
use l2reps::{Activation, NetworkParams};

#[derive(Parser)]
#[command(
    name = "l2reps",
    about = "Representation-space tools for L2-regularized networks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated hidden widths.
    #[arg(long, global = true, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network at the widest configured width and emit its loss curve.
    Train {
        /// Also write the covariance chain of the trained network as JSON.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Width sweep; fails when the loss curve increases beyond the tolerance.
    Sweep,
    /// Train a network and export attraction and repulsion forces of a layer.
    Forces {
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Check the two-neuron counterexample for each configured lambda.
    Counterexample {
        /// Comma-separated perturbation sizes.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// CP-rank bounds for the Gram matrix of a graph.
    Cprank {
        /// Edge-list file (`N k` header, then `k` lines `v w`).
        #[arg(long, conflicts_with = "bipartite")]
        graph: Option<PathBuf>,
        /// Use the complete bipartite graph on `N` vertices (N even).
        #[arg(long)]
        bipartite: Option<usize>,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
    },
    /// Compress a one-dimensional shallow ReLU network on data points.
    Compress1d {
        /// Network CSV (`b,<value>` line, `a,c,d` header, one neuron per row).
        #[arg(long)]
        net: PathBuf,
        /// Comma-separated data points.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        points: Vec<f64>,
    },
    /// Shallow representation cost of the configured dataset (inputs must be the identity).
    Repcost {
        #[arg(long, default_value_t = 50)]
        restarts: usize,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(l) = common.lambda {
        cfg.sweep.lambda = l;
        cfg.counterexample.lambdas = vec![l];
    }
    if let Some(s) = common.seed {
        cfg.sweep.seed = s;
    }
    if let Some(w) = &common.widths {
        cfg.sweep.widths = w.clone();
    }
    if let Some(t) = common.trials {
        cfg.sweep.trials = t;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn widest(cfg: &ExperimentConfig) -> anyhow::Result<usize> {
    cfg.sweep.validate()?;
    Ok(*cfg
        .sweep
        .widths
        .last()
        .expect("validated widths are nonempty"))
}

fn trained(cfg: &ExperimentConfig, width: usize) -> anyhow::Result<NetworkParams> {
    let (x, y) = cfg.data.generate()?;
    match run_trial(&cfg.sweep, &x, &y, width, 0)?.1 {
        Some(p) => Ok(p),
        None => bail!("training diverged at width {width}"),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.out.as_deref();
    match cli.command {
        Command::Train { chain } => {
            let (cost, act) = cfg.sweep.validate()?;
            let width = widest(&cfg)?;
            let (x, y) = cfg.data.generate()?;
            let mut rng = l2reps::seeds::rng_for(cfg.sweep.seed, &[width as u64]);
            let widths = cfg.sweep.layer_widths(x.nrows(), width, y.nrows());
            let init =
                NetworkParams::random(&widths, cfg.sweep.beta, act, cfg.sweep.init_gain, &mut rng)?;
            let rep = train(&init, &x, &y, cost, cfg.sweep.lambda, &cfg.sweep.optimizer)?;
            let mut s = String::from("step,phase,loss\n");
            for (i, l) in rep.losses.iter().enumerate() {
                let phase = if i < rep.gd_start { "adam" } else { "gd" };
                let _ = writeln!(s, "{i},{phase},{l}");
            }
            emit(out, &s)?;
            if let Some(p) = chain {
                let json = chain_from_weights(&rep.params, &x)?.to_json()?;
                std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?;
            }
            eprintln!("final_loss={} grad_norm={}", rep.final_loss, rep.grad_norm);
            Ok(rep.final_loss.is_finite())
        }
        Command::Sweep => {
            let report = sweep(&cfg.sweep, &cfg.data)?;
            emit(out, &report.to_csv())?;
            let violations = report.monotonicity_violations();
            if !violations.is_empty() {
                eprintln!("loss increases at widths {violations:?}");
            }
            match report.plateau_start() {
                Some(w) => eprintln!("plateau starts at width {w}"),
                None => eprintln!("no width reached the plateau"),
            }
            Ok(violations.is_empty() && report.plateau_start().is_some())
        }
        Command::Forces { layer, epsilon } => {
            let layer = layer.unwrap_or(cfg.forces.layer);
            let params = trained(&cfg, cfg.forces.width)?;
            let (x, _) = cfg.data.generate()?;
            let reps = phi(&params, &x)?;
            if layer == 0 || layer >= params.depth() {
                bail!("layer must be a hidden layer in 1..{}", params.depth());
            }
            let eps = match epsilon.or(cfg.forces.epsilon) {
                Some(e) => e,
                None => default_epsilon(&reps.activated_gram(layer - 1)),
            };
            match out {
                Some(p) => {
                    export_forces(&params, &x, layer, eps, p)?;
                }
                None => {
                    let ff = l2reps::reform_z::forces(&reps, layer, eps)?;
                    print!("{}", forces_csv(&reps.reps[layer - 1], &ff));
                }
            }
            Ok(true)
        }
        Command::Counterexample { epsilons } => {
            let eps = epsilons.unwrap_or_else(|| cfg.counterexample.epsilons.clone());
            let mut s = String::from("lambda,check,passed,value,expected\n");
            let mut ok = true;
            for &l in &cfg.counterexample.lambdas {
                let report = verify_counterexample(l, &eps, cfg.sweep.seed)?;
                report.append_rows(&mut s);
                for f in report.failures() {
                    eprintln!("lambda={l}: check {f} failed");
                }
                ok &= report.passed();
            }
            emit(out, &s)?;
            Ok(ok)
        }
        Command::Cprank {
            graph,
            bipartite,
            restarts,
        } => {
            let g = match (graph, bipartite) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    Graph::parse_edge_list(&text)?
                }
                (None, Some(n)) => {
                    if n < 2 || n % 2 != 0 {
                        bail!("bipartite size must be even and at least 2");
                    }
                    Graph::complete_bipartite(n / 2)
                }
                (None, None) => bail!("pass --graph or --bipartite"),
            };
            let a = graph_gram(&g);
            let lower = cp_rank_lower_bound(&a, Some(&g))?;
            let pair = CovariancePair::new(a.clone(), a.clone(), 0.0)?;
            let budget = SearchBudget {
                restarts,
                seed: cfg.sweep.seed,
                ..Default::default()
            };
            let bounds = rank_sigma_bounds(&pair, Activation::Relu, &budget)?;
            let tf = is_triangle_free(&g);
            let s = format!(
                "vertices,edges,triangle_free,rank,cp_lower,search_lower,search_upper,certified\n{},{},{},{},{},{},{},{}\n",
                g.num_vertices(),
                g.num_edges(),
                u8::from(tf),
                numerical_rank(&a, GRAM_TOL),
                lower,
                bounds.lower,
                bounds.upper,
                u8::from(bounds.witness.is_some()),
            );
            emit(out, &s)?;
            Ok(bounds.lower <= bounds.upper && bounds.witness.is_some())
        }
        Command::Compress1d { net, points } => {
            let text = std::fs::read_to_string(&net)
                .with_context(|| format!("reading {}", net.display()))?;
            let net = ShallowNet1D::from_csv(&text)?;
            let small = compress(&net, &points)?;
            emit(out, &small.to_csv())?;
            let max_dev = points
                .iter()
                .map(|&x| (net.eval(x) - small.eval(x)).abs() / (1.0 + net.eval(x).abs()))
                .fold(0.0, f64::max);
            let width_ok = small.width() <= 4 * points.len();
            let norm_ok = small.norm_sq() <= net.norm_sq() * (1.0 + 1e-12) + 1e-12;
            eprintln!(
                "width {} -> {}, norm {} -> {}, max relative deviation {max_dev:e}",
                net.width(),
                small.width(),
                net.norm_sq(),
                small.norm_sq()
            );
            Ok(width_ok && norm_ok && max_dev <= 1e-9)
        }
        Command::Repcost { restarts } => {
            let (x, y) = cfg.data.generate()?;
            let budget = SearchBudget {
                restarts,
                seed: cfg.sweep.seed,
                ..Default::default()
            };
            let rc = representation_cost_shallow(&x, &y, &budget)?;
            let width = rc.witness.as_ref().map_or(0, |w| w.len());
            let s = format!(
                "points,value,cp_verified,witness_width\n{},{},{},{}\n",
                x.ncols(),
                rc.value,
                u8::from(rc.cp_verified),
                width
            );
            emit(out, &s)?;
            Ok(rc.cp_verified)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
