//! Runs several engines on the same data and reports times and digests.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::brute::brute_knn;
use crate::buffer_tree::{BufferConfig, BufferKdTree};
use crate::device::{write_trace, DeviceSpec};
use crate::error::{Error, Result};
use crate::kdtree::{KdTree, DEFAULT_LEAF_SIZE};
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::PointMatrix;
use crate::scheduler::{run_multi_device, DeviceFleet, FleetOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Brute,
    KdTree,
    BufferKdTree,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Brute => "brute",
            Engine::KdTree => "kdtree",
            Engine::BufferKdTree => "bufferkdtree",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(Engine::Brute),
            "kdtree" => Ok(Engine::KdTree),
            "bufferkdtree" | "buffer" => Ok(Engine::BufferKdTree),
            other => Err(Error::Usage(format!("unknown engine {other:?}"))),
        }
    }
}

/// SHA-256 over all neighbor indices, little-endian `u32`, query by query.
pub fn digest(lists: &[NeighborList]) -> String {
    let mut h = Sha256::new();
    for l in lists {
        for i in l.indices() {
            h.update(i.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub engines: Vec<Engine>,
    pub k: usize,
    pub height: usize,
    /// Overrides `B = 2^(24 - h)`.
    pub buffer_capacity: Option<usize>,
    /// `M = fetch_multiple * B`.
    pub fetch_multiple: usize,
    /// Chunks of the leaf structure; `None` means one.
    pub num_chunks: Option<usize>,
    pub devices: usize,
    /// Threads for the host engines and kernel lanes per device.
    pub workers: usize,
    /// Queries per device search; `None` gives each device one search.
    pub query_chunk_size: Option<usize>,
    /// Simulated host-to-device bytes per second.
    pub copy_rate: Option<f64>,
    pub seed: u64,
    /// Where to write the timeline of device 0 in the main run.
    pub trace_out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            engines: vec![Engine::Brute, Engine::KdTree, Engine::BufferKdTree],
            k: SearchParams::default().k,
            height: 8,
            buffer_capacity: None,
            fetch_multiple: BufferConfig::DEFAULT_FETCH_MULTIPLE,
            num_chunks: None,
            devices: 1,
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            query_chunk_size: None,
            copy_rate: None,
            seed: 0,
            trace_out: None,
        }
    }
}

impl BenchConfig {
    pub fn buffer_config(&self) -> BufferConfig {
        match self.buffer_capacity {
            Some(b) => BufferConfig::with_capacity(b, self.fetch_multiple),
            None => {
                let d = BufferConfig::for_height(self.height);
                BufferConfig::with_capacity(d.buffer_capacity, self.fetch_multiple)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchParams {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub h: usize,
    #[serde(rename = "B")]
    pub buffer_capacity: usize,
    #[serde(rename = "M")]
    pub fetch_size: usize,
    #[serde(rename = "N")]
    pub num_chunks: usize,
    pub devices: usize,
    pub workers: usize,
    pub seed: u64,
}

/// Simulated time split of the buffer k-d tree's query phase, in ms.
#[derive(Debug, Clone, Serialize)]
pub struct TestPhases {
    pub find_leaf_ms: f64,
    pub buffer_ms: f64,
    pub stage_ms: f64,
    pub copy_ms: f64,
    pub compute_ms: f64,
    pub process_rounds: u64,
    pub leaf_scans: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineReport {
    pub engine: String,
    pub train_ms: f64,
    pub test_ms: f64,
    /// Query phase on the simulated device timeline (buffer k-d tree only).
    pub test_simulated_ms: Option<f64>,
    pub phases: Option<TestPhases>,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    /// Query time of the reference run (one chunk, or one device).
    pub baseline_ms: f64,
    pub baseline_simulated_ms: f64,
    pub test_ms: f64,
    pub test_simulated_ms: f64,
    /// `test / baseline` for chunk runs, `baseline / test` for device runs.
    pub ratio: f64,
    pub simulated_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub params: BenchParams,
    pub engines: Vec<EngineReport>,
    /// test(chunks) / test, both with the configured device count.
    pub chunk_ratio: Option<Comparison>,
    /// Speed-up of the configured device count over one device.
    pub device_speedup: Option<Comparison>,
    pub digest: String,
    pub hazard_violations: usize,
    pub trace: Option<String>,
}

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

struct BufferRun {
    out: FleetOutput,
    wall_ms: f64,
    violations: usize,
}

fn run_buffer(
    cfg: &BenchConfig,
    tree: &BufferKdTree,
    queries: &PointMatrix,
    devices: usize,
    chunks: usize,
    trace: Option<&PathBuf>,
) -> Result<BufferRun> {
    let params = SearchParams::new(cfg.k);
    let (n, m, d) = (tree.n(), queries.n(), tree.d());
    let per_device = m.div_ceil(devices).max(1);
    let qcap = cfg
        .query_chunk_size
        .unwrap_or(per_device)
        .clamp(1, per_device);
    let base = DeviceSpec {
        worker_lanes: cfg.workers.max(1),
        simulated_copy_rate: cfg.copy_rate,
        ..DeviceSpec::default()
    };
    let mut fleet = DeviceFleet::sized(devices, &base, d, cfg.k, n.div_ceil(chunks), qcap)?
        .with_num_chunks(Some(chunks))
        .with_query_chunk_size(Some(qcap));
    let t = Instant::now();
    let out = run_multi_device(&mut fleet, tree, queries, params, cfg.buffer_config())?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    let violations = fleet
        .devices()
        .iter()
        .map(|d| d.hazard_violations().len())
        .sum();
    if let Some(path) = trace {
        let f = std::fs::File::create(path)?;
        write_trace(&fleet.devices()[0].trace(), std::io::BufWriter::new(f))?;
    }
    Ok(BufferRun {
        out,
        wall_ms,
        violations,
    })
}

fn compare(base: &BufferRun, test: &BufferRun, speedup: bool) -> Comparison {
    let (b, t) = (base.wall_ms, test.wall_ms);
    let (bs, ts) = (
        ms(base.out.stats.simulated_ns),
        ms(test.out.stats.simulated_ns),
    );
    let ratio = |x: f64, y: f64| if y > 0.0 { x / y } else { f64::NAN };
    Comparison {
        baseline_ms: b,
        baseline_simulated_ms: bs,
        test_ms: t,
        test_simulated_ms: ts,
        ratio: if speedup { ratio(b, t) } else { ratio(t, b) },
        simulated_ratio: if speedup {
            ratio(bs, ts)
        } else {
            ratio(ts, bs)
        },
    }
}

fn check_digest(expected: &mut Option<(String, String)>, label: String, got: &str) -> Result<()> {
    match expected {
        None => *expected = Some((label, got.to_string())),
        Some((first, d)) if d != got => {
            return Err(Error::DigestMismatch(format!(
                "{first} gave {d}, {label} gave {got}"
            )));
        }
        _ => {}
    }
    Ok(())
}

/// Runs every configured engine on `refs`/`queries`. Digests of all runs must
/// agree.
pub fn run_benchmark(
    cfg: &BenchConfig,
    refs: &PointMatrix,
    queries: &PointMatrix,
) -> Result<BenchReport> {
    if cfg.engines.is_empty() {
        return Err(Error::Usage("no engines selected".into()));
    }
    if cfg.devices == 0 {
        return Err(Error::Usage("at least one device is required".into()));
    }
    let params = SearchParams::new(cfg.k);
    params.validate(refs.n())?;
    let chunks = cfg.num_chunks.unwrap_or(1);
    let bcfg = cfg.buffer_config();
    bcfg.validate()?;
    let mut report = BenchReport {
        params: BenchParams {
            n: refs.n(),
            m: queries.n(),
            d: refs.d(),
            k: cfg.k,
            h: cfg.height,
            buffer_capacity: bcfg.buffer_capacity,
            fetch_size: bcfg.fetch_size,
            num_chunks: chunks,
            devices: cfg.devices,
            workers: cfg.workers,
            seed: cfg.seed,
        },
        engines: Vec::new(),
        chunk_ratio: None,
        device_speedup: None,
        digest: String::new(),
        hazard_violations: 0,
        trace: None,
    };
    let mut expected = None;

    for &engine in &cfg.engines {
        log::info!("running {engine}");
        let entry = match engine {
            Engine::Brute => {
                let t = Instant::now();
                let lists = brute_knn(refs, queries, params, cfg.workers)?;
                EngineReport {
                    engine: engine.to_string(),
                    train_ms: 0.0,
                    test_ms: t.elapsed().as_secs_f64() * 1e3,
                    test_simulated_ms: None,
                    phases: None,
                    digest: digest(&lists),
                }
            }
            Engine::KdTree => {
                let t = Instant::now();
                let tree = KdTree::build(refs, DEFAULT_LEAF_SIZE)?;
                let train_ms = t.elapsed().as_secs_f64() * 1e3;
                let t = Instant::now();
                let lists = tree.query_parallel(queries, params, cfg.workers)?;
                EngineReport {
                    engine: engine.to_string(),
                    train_ms,
                    test_ms: t.elapsed().as_secs_f64() * 1e3,
                    test_simulated_ms: None,
                    phases: None,
                    digest: digest(&lists),
                }
            }
            Engine::BufferKdTree => {
                let t = Instant::now();
                let tree = BufferKdTree::build(refs, cfg.height)?;
                let train_ms = t.elapsed().as_secs_f64() * 1e3;
                let main = run_buffer(
                    cfg,
                    &tree,
                    queries,
                    cfg.devices,
                    chunks,
                    cfg.trace_out.as_ref(),
                )?;
                report.hazard_violations += main.violations;
                report.trace = cfg.trace_out.as_ref().map(|p| p.display().to_string());
                let d = digest(&main.out.neighbors);
                if chunks > 1 {
                    let one = run_buffer(cfg, &tree, queries, cfg.devices, 1, None)?;
                    report.hazard_violations += one.violations;
                    check_digest(
                        &mut expected,
                        format!("{engine} N=1"),
                        &digest(&one.out.neighbors),
                    )?;
                    report.chunk_ratio = Some(compare(&one, &main, false));
                }
                if cfg.devices > 1 {
                    let single = run_buffer(cfg, &tree, queries, 1, chunks, None)?;
                    report.hazard_violations += single.violations;
                    check_digest(
                        &mut expected,
                        format!("{engine} 1 device"),
                        &digest(&single.out.neighbors),
                    )?;
                    report.device_speedup = Some(compare(&single, &main, true));
                }
                let s = &main.out.stats;
                EngineReport {
                    engine: engine.to_string(),
                    train_ms,
                    test_ms: main.wall_ms,
                    test_simulated_ms: Some(ms(s.simulated_ns)),
                    phases: Some(TestPhases {
                        find_leaf_ms: ms(s.find_leaf_ns),
                        buffer_ms: ms(s.buffer_ns),
                        stage_ms: ms(s.stage_ns),
                        copy_ms: ms(s.copy_ns),
                        compute_ms: ms(s.compute_ns),
                        process_rounds: s.process_rounds,
                        leaf_scans: s.leaf_scans,
                    }),
                    digest: d,
                }
            }
        };
        check_digest(&mut expected, entry.engine.clone(), &entry.digest)?;
        report.engines.push(entry);
    }
    report.digest = expected.map(|(_, d)| d).unwrap_or_default();
    Ok(report)
}
