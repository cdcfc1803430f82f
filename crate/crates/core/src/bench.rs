//! Forward-pass timing and memory measurements on random graphs.
//!
//! Peak memory comes from [`CountingAlloc`], which a binary or test must
//! install with `#[global_allocator]`; without it `peak_bytes` is zero.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::Write as _;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_synthetic, Synthetic};
use crate::error::{GenError, Result};
use crate::graph::CsrGraph;
use crate::layer::{self, GenLayerParams, LayerConfig};
use crate::tensor::{Tape, Tensor};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator wrapper that tracks live and peak heap bytes.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record_alloc(layout.size());
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
            record_alloc(new_size);
        }
        p
    }
}

fn record_alloc(size: usize) {
    ACTIVE.store(true, Ordering::Relaxed);
    let now = CURRENT.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

pub fn allocator_installed() -> bool {
    ACTIVE.load(Ordering::Relaxed)
}

pub fn current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

/// Restarts peak tracking from the current live size.
pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub nodes: usize,
    pub edges: usize,
    pub k: usize,
    pub l: usize,
    pub ms_median: f64,
    /// Heap high-water mark of one forward above the pre-forward baseline.
    pub peak_bytes: usize,
    pub edge_visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub avg_degree: f64,
    pub width: usize,
    pub eliminate: bool,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            avg_degree: 10.0,
            width: 8,
            eliminate: true,
            seed: 0,
        }
    }
}

/// Graph, features and layer parameters for one benchmark size.
pub struct BenchCase {
    pub graph: Rc<CsrGraph>,
    pub x: Tensor,
    pub layers: Vec<GenLayerParams>,
}

impl BenchCase {
    pub fn new(nodes: usize, k: usize, l: usize, opts: &BenchOptions) -> Result<Self> {
        if nodes < 2 {
            return Err(GenError::Input("benchmark graphs need at least two nodes".into()));
        }
        let arcs_estimate = (nodes as f64 * opts.avg_degree) as usize;
        arcs_estimate
            .checked_mul(opts.width)
            .and_then(|v| v.checked_mul(8 * (k + 1)))
            .filter(|&b| b < isize::MAX as usize)
            .ok_or_else(|| GenError::Size(format!("{nodes} nodes exceed addressable memory")))?;
        let p = opts.avg_degree / (nodes - 1) as f64;
        let g = make_synthetic(Synthetic::ErdosRenyi { n: nodes, p }, opts.seed)?.with_self_loops();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xbe7c);
        let x = Tensor::uniform(nodes, opts.width, 1.0, &mut rng);
        let mut cfg = LayerConfig::new(opts.width, k);
        cfg.eliminate = opts.eliminate;
        let layers = (0..l)
            .map(|_| GenLayerParams::init(cfg.clone(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph: Rc::new(g),
            x,
            layers,
        })
    }

    /// One inference forward through every layer; returns edge visits.
    pub fn forward(&self) -> Result<u64> {
        let tape = Tape::new();
        let mut z = tape.constant(self.x.clone());
        let mut visits = 0;
        for p in &self.layers {
            let vars = p.bind(&tape, false);
            let out = layer::forward(&self.graph, z, &vars, &p.cfg, None)?;
            visits += out.edge_visits;
            z = out.z;
        }
        std::hint::black_box(z.value());
        Ok(visits)
    }
}

/// Stops glibc from handing large freed blocks back to the kernel. Without
/// this, buffers above its (adaptive) mmap threshold are unmapped after each
/// forward and page-faulted in again on the next, and which sizes cross the
/// threshold shifts during a run, so the timings measure the allocator
/// rather than the kernels.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn keep_heap_resident() {
    // SAFETY: mallopt only adjusts allocator tunables.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn keep_heap_resident() {}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median forward time per size on Erdős–Rényi graphs of fixed average
/// degree. Graph construction and one warm-up forward are excluded. Timed
/// repeats go round-robin over the sizes so slow drift in machine speed
/// lands on every size alike instead of skewing the ratios.
pub fn scaling_run(sizes: &[usize], k: usize, l: usize, repeats: usize, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if repeats < 3 {
        return Err(GenError::Input(format!("need at least 3 repeats, got {repeats}")));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GenError::Input("sizes must be non-empty and strictly ascending".into()));
    }
    keep_heap_resident();
    let mut cases = Vec::with_capacity(sizes.len());
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let case = BenchCase::new(n, k, l, opts)?;
        case.forward()?;
        let base = current_bytes();
        reset_peak();
        let visits = case.forward()?;
        let peak = peak_bytes().saturating_sub(base);
        out.push(BenchRecord {
            nodes: n,
            edges: case.graph.num_edges(),
            k,
            l,
            ms_median: 0.0,
            peak_bytes: peak,
            edge_visits: visits,
        });
        cases.push(case);
    }
    let mut times = vec![Vec::with_capacity(repeats); sizes.len()];
    for _ in 0..repeats {
        for (case, t) in cases.iter().zip(&mut times) {
            let start = Instant::now();
            case.forward()?;
            t.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    for (r, t) in out.iter_mut().zip(times) {
        r.ms_median = median(t);
    }
    Ok(out)
}

pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from("nodes,edges,K,L,ms_median,peak_bytes,edge_visits\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{},{}",
            r.nodes, r.edges, r.k, r.l, r.ms_median, r.peak_bytes, r.edge_visits
        );
    }
    s
}
