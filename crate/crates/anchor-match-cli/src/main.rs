//! Command line for the anchor-guided graph matcher: match graph pairs,
//! learn proximity matrices, run benchmark sweeps, and dump node signatures.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use anchor_match::graph::SpectralDecomposition;
use anchor_match::io::{
    assignment_to_json, parse_anchors_json, parse_graph_json, parse_points_csv,
    proximity_to_json, write_results_csv, PointSequence,
};
use anchor_match::learn::{learn_proximity, AnchorSet, LearnConfig};
use anchor_match::matcher::{match_graphs, MatchConfig, Variant};
use anchor_match::signatures::{
    heat_kernel_signature, wave_kernel_signature, wks_default_grid, NodeFeatures,
};
use anchor_match::{points_to_graph, run_sweep, SweepAxis, SweepSpec, WeightedGraph};

#[derive(Parser)]
#[command(name = "anchor-match", version, about = "Anchor-guided weighted-graph matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Base RNG seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Diffusion time (defaults to a spectrum-derived value).
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Eigenpairs per node feature (defaults to the full spectrum).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of the learned-proximity distance.
    #[arg(long = "c-b", global = true, default_value_t = 8.0)]
    c_b: f64,
    /// Weight of the anchor-profile distance.
    #[arg(long = "c-ap", global = true, default_value_t = 3.0)]
    c_ap: f64,
    /// Regularization constant for proximity learning.
    #[arg(long = "c-reg", global = true)]
    c_reg: Option<f64>,
    /// Compatibility variant i..vi (default vi; bench sweeps all when unset).
    #[arg(long, global = true, value_parser = Variant::from_str)]
    variant: Option<Variant>,
    /// Trials per sweep cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Match two graphs and emit the assignment as JSON.
    Match(MatchArgs),
    /// Learn a proximity matrix from anchors and emit it as JSON.
    Learn(LearnArgs),
    /// Sweep matching accuracy along an axis and emit results CSV.
    Bench(BenchArgs),
    /// Dump per-node spectral signatures as CSV.
    Signatures(SignaturesArgs),
}

#[derive(Args)]
struct PairInput {
    /// Two graph JSON files (omit when using --points).
    #[arg(value_name = "GRAPH", num_args = 2, conflicts_with = "points")]
    graphs: Vec<PathBuf>,
    /// Landmark CSV with `frame,point,x,y` rows.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Two frame ids to match from the landmark CSV.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"], requires = "points")]
    frames: Option<Vec<u64>>,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    pair: PairInput,
    /// Anchor pairs JSON: [[i, a], ...].
    #[arg(long)]
    anchors: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    pair: PairInput,
    /// Anchor pairs JSON: [[i, a], ...].
    #[arg(long)]
    anchors: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Sweep axis.
    #[arg(long, value_parser = SweepAxis::from_str)]
    axis: SweepAxis,
    /// Axis values, comma separated (defaults to the axis grid).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Inlier node count.
    #[arg(long = "n-in")]
    n_in: Option<usize>,
    /// Edge density on non-density axes.
    #[arg(long)]
    rho: Option<f64>,
    /// Noise std on non-deformation axes.
    #[arg(long)]
    sigma: Option<f64>,
    /// Anchor count on non-anchor axes.
    #[arg(long = "anchor-count")]
    anchor_count: Option<usize>,
}

#[derive(Args)]
struct SignaturesArgs {
    /// Graph JSON file (omit when using --points).
    #[arg(value_name = "GRAPH")]
    graph: Option<PathBuf>,
    /// Landmark CSV with `frame,point,x,y` rows.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Frame id from the landmark CSV.
    #[arg(long, requires = "points")]
    frame: Option<u64>,
}

type AnyError = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match &cli.command {
        Command::Match(args) => run_match(args, &cli.global),
        Command::Learn(args) => run_learn(args, &cli.global),
        Command::Bench(args) => run_bench(args, &cli.global),
        Command::Signatures(args) => run_signatures(args, &cli.global),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), AnyError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("{}: {e}", path.display()).into()),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{}", text.trim_end()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn frame_graph(seq: &PointSequence, id: u64) -> Result<WeightedGraph, AnyError> {
    let frame = seq
        .frame(id)
        .ok_or_else(|| format!("frame {id} not present in the points file"))?;
    Ok(points_to_graph(&frame.points)?)
}

fn load_pair(input: &PairInput) -> Result<(WeightedGraph, WeightedGraph), AnyError> {
    match (&input.points, &input.frames) {
        (Some(path), Some(frames)) => {
            let seq = parse_points_csv(path)?;
            Ok((frame_graph(&seq, frames[0])?, frame_graph(&seq, frames[1])?))
        }
        (Some(_), None) => Err("--points requires --frames FIRST SECOND".into()),
        (None, _) => {
            if input.graphs.len() != 2 {
                return Err("expected exactly two graph files (or --points with --frames)".into());
            }
            Ok((
                parse_graph_json(&input.graphs[0])?,
                parse_graph_json(&input.graphs[1])?,
            ))
        }
    }
}

fn learn_config(global: &GlobalOpts) -> LearnConfig {
    let mut learn = LearnConfig::default();
    if let Some(c) = global.c_reg {
        learn.c_reg = c;
    }
    learn.k = global.k;
    learn.diffusion_time = global.t;
    learn
}

fn match_config(global: &GlobalOpts) -> MatchConfig {
    MatchConfig {
        variant: global.variant.unwrap_or_default(),
        c_b: global.c_b,
        c_ap: global.c_ap,
        k: global.k,
        diffusion_time: global.t,
        learn: learn_config(global),
        ..MatchConfig::default()
    }
}

fn run_match(args: &MatchArgs, global: &GlobalOpts) -> Result<(), AnyError> {
    let (g, h) = load_pair(&args.pair)?;
    let anchors = parse_anchors_json(&args.anchors)?;
    let config = match_config(global);
    let outcome = match_graphs(&g, &h, &anchors, &config)?;
    if let Some(converged) = outcome.learn_converged {
        eprintln!(
            "proximity learning {}",
            if converged { "converged" } else { "hit its round limit" }
        );
    }
    eprintln!(
        "matched {} pairs, objective {:.6}",
        outcome.assignment.pairs.len(),
        outcome.assignment.objective
    );
    emit(&global.out, &assignment_to_json(&outcome.assignment))
}

fn run_learn(args: &LearnArgs, global: &GlobalOpts) -> Result<(), AnyError> {
    let (g, h) = load_pair(&args.pair)?;
    let anchors: AnchorSet = parse_anchors_json(&args.anchors)?;
    let spec_g = SpectralDecomposition::of_graph(&g)?;
    let spec_h = SpectralDecomposition::of_graph(&h)?;
    let result = learn_proximity(&spec_g, &spec_h, &anchors, &learn_config(global))?;
    eprintln!(
        "{} after {} rounds, {} active constraints",
        if result.converged { "converged" } else { "round limit reached" },
        result.iterations,
        result.active_constraints.len()
    );
    emit(&global.out, &proximity_to_json(&result.proximity))
}

fn run_bench(args: &BenchArgs, global: &GlobalOpts) -> Result<(), AnyError> {
    let mut spec = SweepSpec::for_axis(args.axis);
    if let Some(values) = &args.values {
        spec.values = values.clone();
    }
    if let Some(trials) = global.trials {
        spec.trials = trials;
    }
    if let Some(v) = global.variant {
        spec.variants = vec![v];
    }
    if let Some(n_in) = args.n_in {
        spec.n_in = n_in;
    }
    if let Some(rho) = args.rho {
        spec.rho = rho;
    }
    if let Some(sigma) = args.sigma {
        spec.sigma = sigma;
    }
    if let Some(count) = args.anchor_count {
        spec.anchor_count = count;
    }
    spec.base_seed = global.seed;
    spec.config = match_config(global);

    let records = run_sweep(&spec)?;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &records)?;
    emit(&global.out, std::str::from_utf8(&buf)?)
}

fn run_signatures(args: &SignaturesArgs, global: &GlobalOpts) -> Result<(), AnyError> {
    let g = match (&args.graph, &args.points, args.frame) {
        (Some(path), None, _) => parse_graph_json(path)?,
        (None, Some(path), Some(frame)) => frame_graph(&parse_points_csv(path)?, frame)?,
        (None, Some(_), None) => return Err("--points requires --frame".into()),
        (Some(_), Some(_), _) => return Err("give either a graph file or --points".into()),
        (None, None, _) => return Err("expected a graph file or --points with --frame".into()),
    };
    let spec = SpectralDecomposition::of_graph(&g)?;
    let n = spec.len();

    let t = match global.t {
        Some(t) => t,
        None => spec.default_diffusion_time()?,
    };
    let times: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|s| s * t).collect();
    let hks = heat_kernel_signature(&spec, &times)?;

    let wks = match wks_default_grid(spec.eigenvalues()) {
        Some((energies, sigma)) => Some(wave_kernel_signature(&spec, &energies, sigma)?),
        None => None,
    };

    let k = global.k.unwrap_or(n).min(n);
    let features = NodeFeatures::compute(&spec, k)?;

    let mut csv = String::from("node,family,index,value\n");
    for u in 0..n {
        for (idx, _) in times.iter().enumerate() {
            writeln!(csv, "{u},hks,{idx},{}", hks[(u, idx)])?;
        }
        if let Some(wks) = &wks {
            for idx in 0..wks.ncols() {
                writeln!(csv, "{u},wks,{idx},{}", wks[(u, idx)])?;
            }
        }
        let theta = features.feature(u);
        for idx in 0..theta.len() {
            writeln!(csv, "{u},theta,{idx},{}", theta[idx])?;
        }
    }
    emit(&global.out, &csv)
}
