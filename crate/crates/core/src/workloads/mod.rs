//! Synthetic victims standing in for the CUDA sample applications and an
//! MLP trainer, plus background noise.
//!
//! A workload owns one buffer in its home GPU's memory and runs as several
//! lanes, each on its own forked session, the way a kernel runs as several
//! thread blocks. Lanes are lazy op streams; the infinite kinds repeat
//! their kernel until the scheduler's cycle limit stops them.
//!
//! Signatures, per kernel:
//!
//! | kind | pattern |
//! |---|---|
//! | `vectoradd` | three linear streams `c[i] = a[i] + b[i]`, then a long host gap |
//! | `matmul` | four 32+32-line tiles, each reused 12 times with compute between reuses, then a host gap |
//! | `histogram` | one linear input stream, each element followed by a skewed hit on 16 hot bin lines |
//! | `quasirandom` | golden-ratio scatter over the whole buffer at a high steady rate |
//! | `blackscholes` | a burst over five linear arrays, then a long compute phase touching only four parameter lines |
//! | `walsh` | butterfly stages pairing `i` with `i ^ 2^s`, a barrier after each stage |
//! | `mlp` | each training epoch reads the dataset, then runs 7 batches back to back, each sweeping the weight lines (`base + c * neurons`) and its own data slice, then idles until the next epoch |
//! | `idle` | nothing |
//! | `noise` | uniformly random lines at `intensity` accesses per 1000 cycles |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{derive_seed, Agent, AgentProgram, AgentView, BufferHandle, Op, SessionId, SimError, Simulator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid workload parameters: {0}")]
    InvalidParams(String),
}

pub const MLP_SIZES: [usize; 4] = [64, 128, 256, 512];
/// Cycles between MLP training epoch starts.
pub const MLP_EPOCH_CYCLES: u64 = 1_600_000;
pub const MLP_BATCHES_PER_EPOCH: u64 = 7;
const MLP_DATA_LINES_PER_BATCH: u64 = 128;
const MLP_DATASET_LINES: u64 = 1024;
const MLP_DATA_OFFSET: u64 = 4096;
const MLP_DATASET_OFFSET: u64 = 8192;

fn default_base_lines() -> u64 {
    256
}

fn default_lines_per_neuron() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadKind {
    VectorAdd,
    Histogram,
    BlackScholes,
    MatMul,
    QuasiRandom,
    Walsh,
    Mlp {
        neurons: usize,
        epochs: usize,
        base_lines: u64,
        lines_per_neuron: f64,
    },
    Idle,
    Noise {
        intensity: f64,
    },
}

impl WorkloadKind {
    /// The six application stand-ins, in a fixed order.
    pub const APPS: [WorkloadKind; 6] = [
        WorkloadKind::VectorAdd,
        WorkloadKind::Histogram,
        WorkloadKind::BlackScholes,
        WorkloadKind::MatMul,
        WorkloadKind::QuasiRandom,
        WorkloadKind::Walsh,
    ];

    pub fn mlp(neurons: usize, epochs: usize) -> Self {
        WorkloadKind::Mlp {
            neurons,
            epochs,
            base_lines: default_base_lines(),
            lines_per_neuron: default_lines_per_neuron(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::VectorAdd => "vectoradd",
            WorkloadKind::Histogram => "histogram",
            WorkloadKind::BlackScholes => "blackscholes",
            WorkloadKind::MatMul => "matmul",
            WorkloadKind::QuasiRandom => "quasirandom",
            WorkloadKind::Walsh => "walsh",
            WorkloadKind::Mlp { .. } => "mlp",
            WorkloadKind::Idle => "idle",
            WorkloadKind::Noise { .. } => "noise",
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self, WorkloadKind::Noise { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub seed: u64,
    pub lanes: usize,
    pub region_bytes: u64,
}

/// Flat on-disk form of [`WorkloadSpec`], so unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neurons: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_lines: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lines_per_neuron: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intensity: Option<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "WorkloadSpec::default_lanes")]
    lanes: usize,
    #[serde(default = "WorkloadSpec::default_region")]
    region_bytes: u64,
}

impl TryFrom<RawSpec> for WorkloadSpec {
    type Error = String;

    fn try_from(r: RawSpec) -> Result<Self, String> {
        let stray = |name: &str, present: bool| {
            if present {
                Err(format!("field `{name}` does not apply to kind `{}`", r.kind))
            } else {
                Ok(())
            }
        };
        let is_mlp = r.kind == "mlp";
        stray("neurons", !is_mlp && r.neurons.is_some())?;
        stray("epochs", !is_mlp && r.epochs.is_some())?;
        stray("base_lines", !is_mlp && r.base_lines.is_some())?;
        stray("lines_per_neuron", !is_mlp && r.lines_per_neuron.is_some())?;
        stray("intensity", r.kind != "noise" && r.intensity.is_some())?;
        let kind = match r.kind.as_str() {
            "vectoradd" => WorkloadKind::VectorAdd,
            "histogram" => WorkloadKind::Histogram,
            "blackscholes" => WorkloadKind::BlackScholes,
            "matmul" => WorkloadKind::MatMul,
            "quasirandom" => WorkloadKind::QuasiRandom,
            "walsh" => WorkloadKind::Walsh,
            "idle" => WorkloadKind::Idle,
            "mlp" => WorkloadKind::Mlp {
                neurons: r.neurons.ok_or("mlp needs `neurons`")?,
                epochs: r.epochs.unwrap_or(1),
                base_lines: r.base_lines.unwrap_or_else(default_base_lines),
                lines_per_neuron: r.lines_per_neuron.unwrap_or_else(default_lines_per_neuron),
            },
            "noise" => WorkloadKind::Noise { intensity: r.intensity.ok_or("noise needs `intensity`")? },
            other => return Err(format!("unknown workload kind `{other}`")),
        };
        Ok(WorkloadSpec { kind, seed: r.seed, lanes: r.lanes, region_bytes: r.region_bytes })
    }
}

impl From<WorkloadSpec> for RawSpec {
    fn from(w: WorkloadSpec) -> Self {
        let mut r = RawSpec {
            kind: w.kind.name().to_string(),
            neurons: None,
            epochs: None,
            base_lines: None,
            lines_per_neuron: None,
            intensity: None,
            seed: w.seed,
            lanes: w.lanes,
            region_bytes: w.region_bytes,
        };
        match w.kind {
            WorkloadKind::Mlp { neurons, epochs, base_lines, lines_per_neuron } => {
                r.neurons = Some(neurons);
                r.epochs = Some(epochs);
                r.base_lines = Some(base_lines);
                r.lines_per_neuron = Some(lines_per_neuron);
            }
            WorkloadKind::Noise { intensity } => r.intensity = Some(intensity),
            _ => {}
        }
        r
    }
}

impl WorkloadSpec {
    fn default_lanes() -> usize {
        4
    }

    fn default_region() -> u64 {
        4 << 20
    }

    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            lanes: Self::default_lanes(),
            region_bytes: Self::default_region(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidParams(m));
        if self.lanes == 0 {
            return bad("lanes must be at least 1".into());
        }
        if self.region_bytes < 1 << 20 {
            return bad(format!("region of {} bytes is below 1 MiB", self.region_bytes));
        }
        match &self.kind {
            WorkloadKind::Mlp { neurons, epochs, lines_per_neuron, .. } => {
                if *neurons == 0 || *epochs == 0 {
                    return bad("mlp needs neurons >= 1 and epochs >= 1".into());
                }
                if !(*lines_per_neuron >= 0.0) {
                    return bad("mlp lines_per_neuron must be non-negative".into());
                }
            }
            WorkloadKind::Noise { intensity } if !(0.0..=1.0).contains(intensity) => {
                return bad(format!("noise intensity {intensity} outside [0, 1]"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Weight lines one MLP batch sweeps; zero for other kinds.
    pub fn mlp_footprint_lines(&self) -> u64 {
        match self.kind {
            WorkloadKind::Mlp { neurons, base_lines, lines_per_neuron, .. } => {
                base_lines + (lines_per_neuron * neurons as f64).round() as u64
            }
            _ => 0,
        }
    }
}

/// Keep noise agents out of the schedule when `exclusive` is set, the way
/// a spy that fills every free thread-block slot keeps other kernels off
/// the GPU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyPolicy {
    pub exclusive: bool,
}

impl OccupancyPolicy {
    pub fn admits(&self, spec: &WorkloadSpec) -> bool {
        !(self.exclusive && spec.kind.is_noise())
    }
}

type OpStream = Box<dyn Iterator<Item = Op>>;

/// One lane's op stream, built on the first call from the lane's clock at
/// that moment, so schedules are relative to when the lane actually starts.
pub struct Lane {
    pending: Option<Box<dyn FnOnce(u64) -> OpStream>>,
    ops: OpStream,
    accesses: u64,
}

impl Lane {
    fn new<I, F>(build: F) -> Self
    where
        I: Iterator<Item = Op> + 'static,
        F: FnOnce(u64) -> I + 'static,
    {
        Self {
            pending: Some(Box::new(move |t| Box::new(build(t)) as OpStream)),
            ops: Box::new(std::iter::empty()),
            accesses: 0,
        }
    }

    pub fn accesses(&self) -> u64 {
        self.accesses
    }
}

impl AgentProgram for Lane {
    fn next_op(&mut self, view: AgentView<'_>) -> Option<Op> {
        if let Some(build) = self.pending.take() {
            self.ops = build(view.now);
        }
        let op = self.ops.next();
        if matches!(op, Some(Op::Access(_))) {
            self.accesses += 1;
        }
        op
    }
}

pub struct Workload {
    pub spec: WorkloadSpec,
    pub buffer: BufferHandle,
    pub lanes: Vec<(SessionId, Lane)>,
}

impl Workload {
    pub fn agents(&mut self) -> Vec<Agent<'_>> {
        self.lanes
            .iter_mut()
            .map(|(sid, lane)| Agent::new(*sid, lane as &mut dyn AgentProgram))
            .collect()
    }

    pub fn accesses(&self) -> u64 {
        self.lanes.iter().map(|(_, l)| l.accesses()).sum()
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    base: u64,
    lines: u64,
    line_bytes: u64,
}

impl Geometry {
    fn addr(&self, line: u64) -> u64 {
        self.base + (line % self.lines) * self.line_bytes
    }

    /// Line `j` of a footprint scattered over the whole buffer. Multiplying
    /// by an odd constant permutes a power-of-two line count, so distinct
    /// `j` below `lines` never collide.
    fn scatter(&self, j: u64) -> u64 {
        self.addr(j.wrapping_mul(0x9e37_79b9) % self.lines)
    }
}

/// Allocates the workload's buffer in `session`'s home GPU memory and forks
/// one session per lane. Lanes start at the parent's current clock; move
/// their sessions forward to start later.
pub fn make_workload(sim: &mut Simulator, session: SessionId, spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let home = sim.home_gpu(session)?;
    let line_bytes = sim.topology().gpus()[home].cache.line_bytes;
    if !(spec.region_bytes / line_bytes).is_power_of_two() {
        return Err(WorkloadError::InvalidParams("region must hold a power-of-two number of lines".into()));
    }
    let buffer = sim.allocate(session, home, spec.region_bytes)?;
    let geo = Geometry {
        base: buffer.base_vaddr,
        lines: spec.region_bytes / line_bytes,
        line_bytes,
    };
    let k = spec.lanes as u64;
    let mut lanes = Vec::with_capacity(spec.lanes);
    for l in 0..k {
        let sid = sim.fork_session(session)?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x57_0a_d5, l));
        let lane = match spec.kind.clone() {
            WorkloadKind::Idle => Lane::new(|_| std::iter::empty()),
            WorkloadKind::VectorAdd => Lane::new(move |_| vectoradd(geo, l, k, rng)),
            WorkloadKind::MatMul => Lane::new(move |_| matmul(geo, l, k, rng)),
            WorkloadKind::Histogram => Lane::new(move |_| histogram(geo, l, k, rng)),
            WorkloadKind::QuasiRandom => Lane::new(move |_| quasirandom(geo, l, k, rng)),
            WorkloadKind::BlackScholes => Lane::new(move |_| blackscholes(geo, l, k, rng)),
            WorkloadKind::Walsh => Lane::new(move |_| walsh(geo, l, k, rng)),
            WorkloadKind::Mlp { epochs, .. } => {
                let weights = spec.mlp_footprint_lines();
                Lane::new(move |t| mlp(geo, l, k, t, epochs as u64, weights))
            }
            WorkloadKind::Noise { intensity } => {
                let per_lane = intensity / k as f64;
                Lane::new(move |t| noise(geo, per_lane, t, rng))
            }
        };
        lanes.push((sid, lane));
    }
    Ok(Workload { spec: spec.clone(), buffer, lanes })
}

/// Noise agent on `session`'s home GPU.
pub fn make_noise_agent(sim: &mut Simulator, session: SessionId, intensity: f64, seed: u64) -> Result<Workload, WorkloadError> {
    let spec = WorkloadSpec { lanes: 1, ..WorkloadSpec::new(WorkloadKind::Noise { intensity }, seed) };
    make_workload(sim, session, &spec)
}

fn start_jitter(rng: &mut ChaCha8Rng) -> Op {
    Op::Burn(rng.random_range(0..100_000))
}

/// Repeats `kernel` forever after a random start delay.
fn forever<F>(mut rng: ChaCha8Rng, mut kernel: F) -> impl Iterator<Item = Op>
where
    F: FnMut(&mut ChaCha8Rng, &mut Vec<Op>) + 'static,
{
    let first = start_jitter(&mut rng);
    let mut buf = Vec::new();
    std::iter::once(first).chain(
        std::iter::repeat_with(move || {
            buf.clear();
            kernel(&mut rng, &mut buf);
            std::mem::take(&mut buf)
        })
        .flatten(),
    )
}

fn vectoradd(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    let n = g.lines / 16;
    forever(rng, move |rng, out| {
        for i in (l..n).step_by(k as usize) {
            out.push(Op::Access(g.addr(i)));
            out.push(Op::Access(g.addr(n + i)));
            out.push(Op::Access(g.addr(2 * n + i)));
        }
        out.push(Op::Burn(300_000 + rng.random_range(0..20_000)));
    })
}

fn matmul(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    const TILE: u64 = 32;
    let region = g.lines / 2;
    let tiles = region / TILE;
    let mut j = 0u64;
    forever(rng, move |rng, out| {
        for _ in 0..4 {
            // Odd-multiplier hop so one lane's tiles spread over every page.
            let t = (l + k * j).wrapping_mul(0x9e37_79b9) % tiles;
            j += 1;
            for _ in 0..12 {
                for x in 0..TILE {
                    out.push(Op::Access(g.addr(t * TILE + x)));
                    out.push(Op::Access(g.addr(region + t * TILE + x)));
                }
                out.push(Op::Burn(8_000 + rng.random_range(0..200)));
            }
        }
        out.push(Op::Burn(400_000 + rng.random_range(0..20_000)));
    })
}

fn histogram(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    let input = g.lines / 2;
    let bins = g.lines / 2;
    let mut i = l;
    forever(rng, move |rng, out| {
        for _ in 0..256 {
            out.push(Op::Access(g.addr(i % input)));
            let u: f64 = rng.random();
            out.push(Op::Access(g.addr(bins + (16.0 * u * u) as u64)));
            out.push(Op::Burn(300));
            i += k;
        }
    })
}

fn quasirandom(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut i = l;
    forever(rng, move |_, out| {
        for _ in 0..256 {
            let x = (i as f64 * PHI).fract();
            out.push(Op::Access(g.addr((x * g.lines as f64) as u64)));
            out.push(Op::Burn(100));
            i += k;
        }
    })
}

fn blackscholes(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    let n = g.lines / 32;
    let params = 5 * n;
    forever(rng, move |rng, out| {
        for i in (l..n).step_by(k as usize) {
            for a in 0..5 {
                out.push(Op::Access(g.addr(a * n + i)));
            }
        }
        for step in 0..300u64 {
            out.push(Op::Access(g.addr(params + step % 4)));
            out.push(Op::Burn(2_000 + rng.random_range(0..100)));
        }
    })
}

fn walsh(g: Geometry, l: u64, k: u64, rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    let n = g.lines / 8;
    let stages = 63 - n.leading_zeros() as u64;
    forever(rng, move |rng, out| {
        for s in 0..stages {
            let bit = 1 << s;
            let mut lane_pair = 0u64;
            for i in (0..n).filter(|i| i & bit == 0) {
                if lane_pair % k == l {
                    out.push(Op::Access(g.addr(i)));
                    out.push(Op::Access(g.addr(i ^ bit)));
                }
                lane_pair += 1;
            }
            out.push(Op::Burn(50_000));
        }
        out.push(Op::Burn(200_000 + rng.random_range(0..10_000)));
    })
}

fn mlp(g: Geometry, l: u64, k: u64, start: u64, epochs: u64, weights: u64) -> impl Iterator<Item = Op> {
    (0..epochs).flat_map(move |e| {
        let t0 = start + e * MLP_EPOCH_CYCLES;
        let load = std::iter::once(Op::WaitUntil(t0)).chain(
            (l..MLP_DATASET_LINES)
                .step_by(k as usize)
                .map(move |j| Op::Access(g.scatter(MLP_DATASET_OFFSET + j))),
        );
        let batches = (0..MLP_BATCHES_PER_EPOCH).flat_map(move |b| {
            let w = (l..weights).step_by(k as usize).map(move |j| Op::Access(g.scatter(j)));
            let d = (l..MLP_DATA_LINES_PER_BATCH)
                .step_by(k as usize)
                .map(move |j| Op::Access(g.scatter(MLP_DATA_OFFSET + b * MLP_DATA_LINES_PER_BATCH + j)));
            w.chain(d)
        });
        load.chain(batches)
    })
    .chain(std::iter::once(Op::WaitUntil(start + epochs * MLP_EPOCH_CYCLES)))
}

fn noise(g: Geometry, intensity: f64, start: u64, mut rng: ChaCha8Rng) -> impl Iterator<Item = Op> {
    let interval = if intensity > 0.0 { 1000.0 / intensity } else { f64::INFINITY };
    let mut i = 0u64;
    std::iter::from_fn(move || {
        if !interval.is_finite() {
            return None;
        }
        i += 1;
        Some([
            Op::WaitUntil(start + (i as f64 * interval) as u64),
            Op::Access(g.addr(rng.random_range(0..g.lines))),
        ])
    })
    .flatten()
}
