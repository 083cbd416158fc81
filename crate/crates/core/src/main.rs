use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bufkd::buffer_tree::BufferConfig;
use bufkd::device::DeviceSpec;
use bufkd::io::bench::{run_benchmark, BenchConfig, Engine};
use bufkd::io::dataset::{load_dataset, save_dataset, Format};
use bufkd::io::digest;
use bufkd::io::outliers::{all_nearest_neighbors, outlier_scores};
use bufkd::io::synth::{self, SynthKind};
use bufkd::{
    brute_knn, run_multi_device, BufferKdTree, DeviceFleet, KdTree, NeighborList, PointMatrix,
    SearchParams,
};

#[derive(Parser)]
#[command(
    name = "bufkd",
    version,
    about = "Batched exact k-nearest-neighbor search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Build a buffer k-d tree and print its shape.
    Build(BuildArgs),
    /// k-NN of every query point.
    Query(QueryArgs),
    /// Rank reference points by mean distance to their k nearest neighbors.
    Outliers(OutlierArgs),
    /// Compare engines on the same data.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// uniform or gaussian-mixture
    #[arg(long, default_value = "uniform")]
    kind: String,
    #[arg(long)]
    n: usize,
    /// Dimensionality; alternatively use --preset.
    #[arg(long, short)]
    d: Option<usize>,
    /// psf_mag (d=5), psf_model_mag (d=10) or all_mag (d=15)
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    format: String,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SearchArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Height of the top tree.
    #[arg(long, default_value_t = 8)]
    height: usize,
    /// Chunks the leaf structure is streamed in.
    #[arg(long)]
    num_chunks: Option<usize>,
    #[arg(long, default_value_t = 1)]
    devices: usize,
    /// Leaf buffer capacity B (default 2^(24 - height)).
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// Queries fetched per iteration, as a multiple of B.
    #[arg(long, default_value_t = BufferConfig::DEFAULT_FETCH_MULTIPLE)]
    fetch_multiple: usize,
    /// Queries per device search.
    #[arg(long)]
    query_chunk_size: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Input file format: auto, binary or csv.
    #[arg(long, default_value = "auto")]
    format: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
    }

    fn buffer_config(&self) -> BufferConfig {
        let b = self
            .buffer_capacity
            .unwrap_or_else(|| BufferConfig::for_height(self.height).buffer_capacity);
        BufferConfig::with_capacity(b, self.fetch_multiple)
    }
}

#[derive(Args)]
struct BuildArgs {
    refs: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct QueryArgs {
    refs: PathBuf,
    queries: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "bufferkdtree")]
    engine: String,
    /// Neighbor output (CSV: query,rank,index,distance). Defaults to stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct OutlierArgs {
    refs: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "bufferkdtree")]
    engine: String,
    /// How many top-ranked points to print.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Reference file; synthetic uniform data when omitted.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 5_000)]
    m: usize,
    #[arg(long, short, default_value_t = 5)]
    d: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Comma-separated engines: brute, kdtree, bufferkdtree.
    #[arg(long, default_value = "brute,kdtree,bufferkdtree")]
    engine: String,
    /// Simulated host-to-device bytes per second.
    #[arg(long)]
    copy_rate: Option<f64>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

fn parse_engines(s: &str) -> Result<Vec<Engine>> {
    let engines = s
        .split(',')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|e| e.parse::<Engine>())
        .collect::<Result<Vec<_>, _>>()?;
    if engines.is_empty() {
        bail!(bufkd::Error::Usage("no engines selected".into()));
    }
    Ok(engines)
}

fn load(path: &Path, format: &str) -> Result<PointMatrix> {
    let format: Format = format.parse()?;
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn search(
    engine: Engine,
    refs: &PointMatrix,
    queries: &PointMatrix,
    params: SearchParams,
    args: &SearchArgs,
) -> Result<Vec<NeighborList>> {
    let workers = args.workers();
    Ok(match engine {
        Engine::Brute => brute_knn(refs, queries, params, workers)?,
        Engine::KdTree => KdTree::build(refs, bufkd::kdtree::DEFAULT_LEAF_SIZE)?
            .query_parallel(queries, params, workers)?,
        Engine::BufferKdTree => {
            let tree = BufferKdTree::build(refs, args.height)?;
            let m = queries.n();
            if m == 0 {
                return Ok(Vec::new());
            }
            let per_device = m.div_ceil(args.devices.max(1));
            let qcap = args
                .query_chunk_size
                .unwrap_or(per_device)
                .clamp(1, per_device);
            let chunks = args.num_chunks.unwrap_or(1);
            let base = DeviceSpec {
                worker_lanes: workers,
                ..DeviceSpec::default()
            };
            let mut fleet = DeviceFleet::sized(
                args.devices,
                &base,
                refs.d(),
                params.k,
                refs.n().div_ceil(chunks),
                qcap,
            )?
            .with_num_chunks(Some(chunks))
            .with_query_chunk_size(Some(qcap));
            run_multi_device(&mut fleet, &tree, queries, params, args.buffer_config())?.neighbors
        }
    })
}

fn gen(a: GenArgs) -> Result<()> {
    let kind: SynthKind = a.kind.parse()?;
    let d = match (a.d, &a.preset) {
        (Some(d), None) => d,
        (None, Some(p)) => p.parse::<synth::Preset>()?.dim(),
        (None, None) => bail!("one of --d or --preset is required"),
        (Some(_), Some(_)) => bail!("--d and --preset are mutually exclusive"),
    };
    if a.n == 0 || d == 0 {
        bail!("n and d must be at least 1");
    }
    let points = synth::generate(kind, a.n, d, a.seed);
    save_dataset(&a.out, &points, a.format.parse()?)?;
    eprintln!(
        "wrote {} points of dimension {d} to {}",
        a.n,
        a.out.display()
    );
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let refs = load(&a.refs, &a.search.format)?;
    let t = Instant::now();
    let tree = BufferKdTree::build(&refs, a.search.height)?;
    let train_ms = t.elapsed().as_secs_f64() * 1e3;
    let sizes: Vec<usize> = tree
        .leaves()
        .leaf_bounds()
        .iter()
        .map(|(l, r)| r - l)
        .collect();
    let cfg = a.search.buffer_config();
    let summary = serde_json::json!({
        "n": tree.n(),
        "d": tree.d(),
        "h": tree.height(),
        "leaves": sizes.len(),
        "min_leaf": sizes.iter().min(),
        "max_leaf": sizes.iter().max(),
        "B": cfg.buffer_capacity,
        "M": cfg.fetch_size,
        "train_ms": train_ms,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let engine: Engine = a.engine.parse()?;
    let refs = load(&a.refs, &a.search.format)?;
    let queries = load(&a.queries, &a.search.format)?;
    let params = SearchParams::new(a.search.k);
    let t = Instant::now();
    let lists = search(engine, &refs, &queries, params, &a.search)?;
    let test_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut w: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    writeln!(w, "query,rank,index,distance")?;
    for (q, l) in lists.iter().enumerate() {
        for (r, nb) in l.entries().iter().enumerate() {
            writeln!(w, "{q},{r},{},{}", nb.index, nb.sq_dist.sqrt())?;
        }
    }
    w.flush()?;
    if let Some(p) = &a.report_out {
        write_json(
            p,
            &serde_json::json!({
                "engine": engine.to_string(),
                "n": refs.n(), "m": queries.n(), "d": refs.d(), "k": params.k,
                "test_ms": test_ms,
                "digest": digest(&lists),
            }),
        )?;
    }
    Ok(())
}

fn outliers(a: OutlierArgs) -> Result<()> {
    let engine: Engine = a.engine.parse()?;
    let refs = load(&a.refs, &a.search.format)?;
    let lists = all_nearest_neighbors(&refs, a.search.k, |r, p| {
        search(engine, r, r, p, &a.search).map_err(|e| match e.downcast::<bufkd::Error>() {
            Ok(e) => e,
            Err(e) => bufkd::Error::Config(e.to_string()),
        })
    })?;
    let ranking = outlier_scores(&lists);
    println!("rank,index,score");
    for (r, &i) in ranking.top(a.top).iter().enumerate() {
        println!("{r},{i},{}", ranking.scores[i as usize]);
    }
    if let Some(p) = &a.report_out {
        write_json(
            p,
            &serde_json::json!({
                "k": a.search.k,
                "ranking": ranking.ranking,
                "scores": ranking.scores,
            }),
        )?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let s = &a.search;
    let refs = match &a.refs {
        Some(p) => load(p, &s.format)?,
        None => synth::uniform(a.n, a.d, s.seed),
    };
    let queries = match &a.queries {
        Some(p) => load(p, &s.format)?,
        None => synth::uniform(a.m, refs.d(), s.seed.wrapping_add(1)),
    };
    let cfg = BenchConfig {
        engines: parse_engines(&a.engine)?,
        k: s.k,
        height: s.height,
        buffer_capacity: s.buffer_capacity,
        fetch_multiple: s.fetch_multiple,
        num_chunks: s.num_chunks,
        devices: s.devices,
        workers: s.workers(),
        query_chunk_size: s.query_chunk_size,
        copy_rate: a.copy_rate,
        seed: s.seed,
        trace_out: a.trace_out.clone(),
    };
    let report = run_benchmark(&cfg, &refs, &queries)?;
    match &a.report_out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Outliers(a) => outliers(a),
        Command::Bench(a) => bench(a),
    }
}
