mod flat;
mod layerwise;
mod mas;
mod softpipe;
mod tileflow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::{groups, kv_slices, row_blocks, Group, KvSlice, RowBlock, TilingConfig,
    WorkloadShape};

/// The five dataflows this simulator can expand into task graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    LayerWise,
    SoftPipe,
    Flat,
    TileFlow,
    Mas,
}

pub const SCHEDULERS: [SchedulerKind; 5] = [
    SchedulerKind::LayerWise,
    SchedulerKind::SoftPipe,
    SchedulerKind::Flat,
    SchedulerKind::TileFlow,
    SchedulerKind::Mas,
];

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::LayerWise => "layerwise",
            SchedulerKind::SoftPipe => "softpipe",
            SchedulerKind::Flat => "flat",
            SchedulerKind::TileFlow => "tileflow",
            SchedulerKind::Mas => "mas",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "layerwise" | "layer-wise" => Ok(SchedulerKind::LayerWise),
            "softpipe" | "soft-pipe" => Ok(SchedulerKind::SoftPipe),
            "flat" => Ok(SchedulerKind::Flat),
            "tileflow" | "tile-flow" => Ok(SchedulerKind::TileFlow),
            "mas" => Ok(SchedulerKind::Mas),
            other => Err(Error::Config(format!(
                "unknown scheduler '{other}'; known: layerwise, softpipe, flat, tileflow, mas"
            ))),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::parse(s)
    }
}

pub type TaskId = u32;
pub type BufferId = u32;

/// Execution resources: one MAC and one VEC engine per core, plus a single
/// inbound and a single outbound DRAM channel shared by all cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    Mac(u16),
    Vec(u16),
    DmaIn,
    DmaOut,
}

impl Engine {
    pub fn is_compute(&self) -> bool {
        matches!(self, Engine::Mac(_) | Engine::Vec(_))
    }

    pub fn core(&self) -> Option<u16> {
        match self {
            Engine::Mac(c) | Engine::Vec(c) => Some(*c),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Engine::Mac(c) => format!("mac{c}"),
            Engine::Vec(c) => format!("vec{c}"),
            Engine::DmaIn => "dma_in".into(),
            Engine::DmaOut => "dma_out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    LoadQ,
    LoadK,
    LoadV,
    LoadC,
    LoadP,
    QkMatmul,
    Softmax,
    PvMatmul,
    StoreC,
    StoreP,
    StoreO,
}

impl TaskKind {
    pub fn is_load(&self) -> bool {
        matches!(
            self,
            TaskKind::LoadQ | TaskKind::LoadK | TaskKind::LoadV | TaskKind::LoadC | TaskKind::LoadP
        )
    }

    pub fn is_store(&self) -> bool {
        matches!(self, TaskKind::StoreC | TaskKind::StoreP | TaskKind::StoreO)
    }

    pub fn is_compute(&self) -> bool {
        matches!(self, TaskKind::QkMatmul | TaskKind::Softmax | TaskKind::PvMatmul)
    }

    /// Tie-break rank inside one (round, block, sub) slot: loads first, then
    /// the compute chain in dataflow order, stores last.
    pub fn rank(&self) -> u8 {
        match self {
            k if k.is_load() => 0,
            TaskKind::QkMatmul => 1,
            TaskKind::Softmax => 2,
            TaskKind::PvMatmul => 3,
            _ => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::LoadQ => "load_q",
            TaskKind::LoadK => "load_k",
            TaskKind::LoadV => "load_v",
            TaskKind::LoadC => "load_c",
            TaskKind::LoadP => "load_p",
            TaskKind::QkMatmul => "qk_matmul",
            TaskKind::Softmax => "softmax",
            TaskKind::PvMatmul => "pv_matmul",
            TaskKind::StoreC => "store_c",
            TaskKind::StoreP => "store_p",
            TaskKind::StoreO => "store_o",
        }
    }
}

/// Compute payload dimensions. DMA tasks carry `Work::None` and a byte count
/// instead. `instances` is the number of independent (batch, head) planes the
/// task covers; the engine processes them back to back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Work {
    None,
    Matmul { m: u32, kk: u32, n: u32, instances: u32 },
    SoftmaxRows { rows: u32, row_len: u32, instances: u32 },
}

impl Work {
    /// Scalar operations: multiply-accumulates for a matmul, five elementwise
    /// passes per element for a softmax.
    pub fn ops(&self) -> u64 {
        match *self {
            Work::None => 0,
            Work::Matmul { m, kk, n, instances } => {
                m as u64 * kk as u64 * n as u64 * instances as u64
            }
            Work::SoftmaxRows { rows, row_len, instances } => {
                5 * rows as u64 * row_len as u64 * instances as u64
            }
        }
    }

    /// Elements produced into the output buffer.
    pub fn out_elems(&self) -> u64 {
        match *self {
            Work::None => 0,
            Work::Matmul { m, n, instances, .. } => m as u64 * n as u64 * instances as u64,
            Work::SoftmaxRows { rows, row_len, instances } => {
                rows as u64 * row_len as u64 * instances as u64
            }
        }
    }

    /// Elements streamed in from operands, counted once per task.
    pub fn in_elems(&self) -> u64 {
        match *self {
            Work::None => 0,
            Work::Matmul { m, kk, n, instances } => {
                (m as u64 * kk as u64 + kk as u64 * n as u64) * instances as u64
            }
            Work::SoftmaxRows { rows, row_len, instances } => {
                rows as u64 * row_len as u64 * instances as u64
            }
        }
    }
}

/// What an on-chip buffer holds. Only K and V tiles are ever eviction
/// victims; Q, C, P, and O are protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BufferKind {
    Q,
    K,
    V,
    C,
    P,
    O,
}

impl BufferKind {
    pub fn evictable(&self) -> bool {
        matches!(self, BufferKind::K | BufferKind::V)
    }

    pub fn label(&self) -> &'static str {
        match self {
            BufferKind::Q => "Q",
            BufferKind::K => "K",
            BufferKind::V => "V",
            BufferKind::C => "C",
            BufferKind::P => "P",
            BufferKind::O => "O",
        }
    }
}

/// One allocatable L1 resident. `block` is the 1-based row-block index (0 for
/// group-scoped K/V tiles), `sub` the 1-based key/value slice index (0 when
/// not sliced), `instance` distinguishes re-streamed copies of the same tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferInfo {
    pub kind: BufferKind,
    pub block: u32,
    pub group: u32,
    pub sub: u32,
    pub instance: u32,
    pub bytes: u64,
}

/// Range into `TaskGraph::pool`, keeping per-task operand lists compact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub off: u32,
    pub len: u32,
}

impl Span {
    pub const EMPTY: Span = Span { off: 0, len: 0 };
}

/// Scheduling priority: lower tuples run first when an engine must choose.
pub type Priority = (u32, u32, u32, u8, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileTask {
    pub id: TaskId,
    pub engine: Engine,
    pub kind: TaskKind,
    pub block: u32,
    pub group: u32,
    pub sub: u32,
    pub round: u32,
    pub bytes: u64,
    pub work: Work,
    pub reads: Span,
    pub writes: Span,
}

impl TileTask {
    pub fn priority(&self) -> Priority {
        (self.round, self.block, self.sub, self.kind.rank(), self.id)
    }
}

/// Dependency-annotated unit-of-work expansion of one (workload, tiling)
/// pair under one dataflow. Immutable once built.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    pub scheduler: SchedulerKind,
    pub shape: WorkloadShape,
    pub tiling: TilingConfig,
    pub cores: usize,
    pub t_r: usize,
    pub t_c: usize,
    /// When set, every compute task in round r+1 of a core additionally
    /// waits for all compute tasks in round r of the same core.
    pub round_barriers: bool,
    pub tasks: Vec<TileTask>,
    pub deps: Vec<(TaskId, TaskId)>,
    pub buffers: Vec<BufferInfo>,
    pub pool: Vec<BufferId>,
}

impl TaskGraph {
    pub fn reads_of(&self, t: &TileTask) -> &[BufferId] {
        &self.pool[t.reads.off as usize..(t.reads.off + t.reads.len) as usize]
    }

    pub fn writes_of(&self, t: &TileTask) -> &[BufferId] {
        &self.pool[t.writes.off as usize..(t.writes.off + t.writes.len) as usize]
    }

    pub fn dma_in_bytes(&self) -> u64 {
        self.tasks
            .iter()
            .filter(|t| t.engine == Engine::DmaIn)
            .map(|t| t.bytes)
            .sum()
    }

    pub fn dma_out_bytes(&self) -> u64 {
        self.tasks
            .iter()
            .filter(|t| t.engine == Engine::DmaOut)
            .map(|t| t.bytes)
            .sum()
    }

    pub fn store_o_bytes(&self) -> u64 {
        self.tasks
            .iter()
            .filter(|t| t.kind == TaskKind::StoreO)
            .map(|t| t.bytes)
            .sum()
    }

    /// Total scalar operations per engine class over the whole graph.
    pub fn compute_ops(&self) -> (u64, u64) {
        let mut mac = 0;
        let mut vec = 0;
        for t in &self.tasks {
            match t.engine {
                Engine::Mac(_) => mac += t.work.ops(),
                Engine::Vec(_) => vec += t.work.ops(),
                _ => {}
            }
        }
        (mac, vec)
    }

    /// Debug/trace export: resolved task list plus edge list.
    pub fn export_json(&self) -> serde_json::Value {
        let tasks: Vec<serde_json::Value> = self
            .tasks
            .iter()
            .map(|t| {
                serde_json::json!({
                    "id": t.id,
                    "engine": t.engine.label(),
                    "kind": t.kind.label(),
                    "block": t.block,
                    "group": t.group,
                    "sub": t.sub,
                    "round": t.round,
                    "bytes": t.bytes,
                    "work": t.work,
                    "reads": self.reads_of(t),
                    "writes": self.writes_of(t),
                })
            })
            .collect();
        serde_json::json!({
            "scheduler": self.scheduler.name(),
            "shape": self.shape,
            "tiling": self.tiling,
            "cores": self.cores,
            "t_r": self.t_r,
            "t_c": self.t_c,
            "round_barriers": self.round_barriers,
            "tasks": tasks,
            "deps": self.deps,
            "buffers": self.buffers,
        })
    }
}

/// Expands one workload into a task graph under the chosen dataflow.
pub fn build(
    kind: SchedulerKind,
    shape: &WorkloadShape,
    tiling: &TilingConfig,
    cores: usize,
) -> Result<TaskGraph> {
    let b = GraphBuilder::new(kind, shape, tiling, cores)?;
    Ok(match kind {
        SchedulerKind::LayerWise => layerwise::build(b),
        SchedulerKind::SoftPipe => softpipe::build(b),
        SchedulerKind::Flat => flat::build(b),
        SchedulerKind::TileFlow => tileflow::build(b),
        SchedulerKind::Mas => mas::build(b),
    })
}

/// Peak pinned working set in bytes: what must be simultaneously resident
/// for the dataflow to make progress at this tiling, excluding everything
/// the simulator is free to evict or stream (hoisted K/V sets, prefetched
/// blocks beyond the pipeline depth).
pub fn min_l1_bytes(kind: SchedulerKind, shape: &WorkloadShape, tiling: &TilingConfig) -> u64 {
    let eb = shape.element_bytes as u64;
    let inst = (tiling.b_b.min(shape.batch) * tiling.h_h.min(shape.heads)) as u64;
    let n = shape.seq_len as u64;
    let e = shape.embed as u64;
    let n_q = tiling.n_q.min(shape.seq_len) as u64;
    let n_kv = tiling.n_kv.min(shape.seq_len) as u64;
    let unit = eb * inst;
    let q = n_q * e;
    let c_row = n_q * n;
    let kv_tile = n_kv * e;
    let kv_chunk = n * e;
    let o = n_q * e;
    let per = match kind {
        // chunk-granular phases: phase 1 holds Q + the whole re-streamed K
        // chunk + the score block; phase 3 holds P + the V chunk + O
        SchedulerKind::LayerWise => (q + kv_chunk + c_row).max(c_row + kv_chunk + o),
        // phase 1 pipelines two score blocks (one filling, one in softmax);
        // phase 2 is chunk-serial with one reloaded P block in flight
        SchedulerKind::SoftPipe => (2 * c_row + 2 * q + kv_tile).max(c_row + kv_tile + 2 * o),
        // one fused block chain, softmax in place, double-buffered Q
        SchedulerKind::Flat => c_row + 2 * q + 2 * kv_tile + o,
        // two-stage pipeline: two in-flight blocks
        SchedulerKind::TileFlow => 2 * c_row + 2 * q + 2 * kv_tile + 2 * o,
        // P_i plus the previous P (or equivalently the next C block), the
        // current Q block, one K and one V tile, and the O accumulator
        SchedulerKind::Mas => 2 * c_row + q + 2 * kv_tile + o,
    };
    per * unit
}

/// True iff the peak pinned working set fits the given L1 capacity.
pub fn feasible(
    kind: SchedulerKind,
    shape: &WorkloadShape,
    tiling: &TilingConfig,
    l1_bytes: u64,
) -> bool {
    tiling.validate(shape).is_ok() && min_l1_bytes(kind, shape, tiling) <= l1_bytes
}

/// Largest sequence length whose minimal-tiling residency fits L1: the
/// pipelined dataflows must hold two full-length score rows on chip, the
/// unpipelined ones only one (streamed K/V excluded by convention).
pub fn max_seq_len(kind: SchedulerKind, l1_bytes: u64, element_bytes: u64) -> u64 {
    let rows = match kind {
        SchedulerKind::LayerWise | SchedulerKind::Flat => 1,
        SchedulerKind::SoftPipe | SchedulerKind::TileFlow | SchedulerKind::Mas => 2,
    };
    l1_bytes / (rows * element_bytes)
}

/// Incremental task-graph constructor shared by the five dataflow builders.
pub struct GraphBuilder {
    pub scheduler: SchedulerKind,
    pub shape: WorkloadShape,
    pub tiling: TilingConfig,
    pub cores: usize,
    pub blocks: Vec<RowBlock>,
    pub groups: Vec<Group>,
    pub slices: Vec<KvSlice>,
    tasks: Vec<TileTask>,
    deps: Vec<(TaskId, TaskId)>,
    buffers: Vec<BufferInfo>,
    pool: Vec<BufferId>,
}

impl GraphBuilder {
    pub fn new(
        scheduler: SchedulerKind,
        shape: &WorkloadShape,
        tiling: &TilingConfig,
        cores: usize,
    ) -> Result<Self> {
        shape.validate()?;
        tiling.validate(shape)?;
        if cores == 0 {
            return Err(Error::Config("cores must be at least 1".into()));
        }
        Ok(GraphBuilder {
            scheduler,
            shape: *shape,
            tiling: *tiling,
            cores,
            blocks: row_blocks(shape, tiling),
            groups: groups(shape, tiling),
            slices: kv_slices(shape, tiling),
            tasks: Vec::new(),
            deps: Vec::new(),
            buffers: Vec::new(),
            pool: Vec::new(),
        })
    }

    pub fn eb(&self) -> u64 {
        self.shape.element_bytes as u64
    }

    pub fn instances(&self, group: usize) -> u64 {
        self.groups[group].instances() as u64
    }

    pub fn q_bytes(&self, block: &RowBlock) -> u64 {
        block.rows as u64 * self.shape.embed as u64 * self.instances(block.group) * self.eb()
    }

    pub fn c_bytes(&self, block: &RowBlock) -> u64 {
        block.rows as u64 * self.shape.seq_len as u64 * self.instances(block.group) * self.eb()
    }

    pub fn o_bytes(&self, block: &RowBlock) -> u64 {
        self.q_bytes(block)
    }

    pub fn kv_bytes(&self, group: usize, slice: &KvSlice) -> u64 {
        slice.cols as u64 * self.shape.embed as u64 * self.instances(group) * self.eb()
    }

    pub fn qk_work(&self, block: &RowBlock, slice: &KvSlice) -> Work {
        Work::Matmul {
            m: block.rows as u32,
            kk: self.shape.embed as u32,
            n: slice.cols as u32,
            instances: self.instances(block.group) as u32,
        }
    }

    pub fn softmax_work(&self, block: &RowBlock) -> Work {
        Work::SoftmaxRows {
            rows: block.rows as u32,
            row_len: self.shape.seq_len as u32,
            instances: self.instances(block.group) as u32,
        }
    }

    pub fn pv_work(&self, block: &RowBlock, slice: &KvSlice) -> Work {
        Work::Matmul {
            m: block.rows as u32,
            kk: slice.cols as u32,
            n: self.shape.embed as u32,
            instances: self.instances(block.group) as u32,
        }
    }

    pub fn add_buffer(
        &mut self,
        kind: BufferKind,
        block: u32,
        group: u32,
        sub: u32,
        instance: u32,
        bytes: u64,
    ) -> BufferId {
        let id = self.buffers.len() as BufferId;
        self.buffers.push(BufferInfo { kind, block, group, sub, instance, bytes });
        id
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_task(
        &mut self,
        engine: Engine,
        kind: TaskKind,
        block: u32,
        group: u32,
        sub: u32,
        round: u32,
        bytes: u64,
        work: Work,
        reads: &[BufferId],
        writes: &[BufferId],
    ) -> TaskId {
        let id = self.tasks.len() as TaskId;
        let span = |pool: &mut Vec<BufferId>, ids: &[BufferId]| {
            if ids.is_empty() {
                return Span::EMPTY;
            }
            let off = pool.len() as u32;
            pool.extend_from_slice(ids);
            Span { off, len: ids.len() as u32 }
        };
        let reads = span(&mut self.pool, reads);
        let writes = span(&mut self.pool, writes);
        self.tasks.push(TileTask {
            id,
            engine,
            kind,
            block,
            group,
            sub,
            round,
            bytes,
            work,
            reads,
            writes,
        });
        id
    }

    pub fn dep(&mut self, before: TaskId, after: TaskId) {
        debug_assert_ne!(before, after, "self-dependency on task {before}");
        self.deps.push((before, after));
    }

    /// Core that owns a 1-based block index under round-robin splitting.
    pub fn core_of(&self, block_index: usize) -> u16 {
        ((block_index - 1) % self.cores) as u16
    }

    /// 1-based position of a block within its core's round-robin list.
    pub fn local_pos(&self, block_index: usize) -> u32 {
        ((block_index - 1) / self.cores) as u32 + 1
    }

    pub fn finish(mut self, round_barriers: bool) -> TaskGraph {
        self.deps.sort_unstable();
        self.deps.dedup();
        let graph = TaskGraph {
            scheduler: self.scheduler,
            shape: self.shape,
            tiling: self.tiling,
            cores: self.cores,
            t_r: self.blocks.len(),
            t_c: self.slices.len(),
            round_barriers,
            tasks: self.tasks,
            deps: self.deps,
            buffers: self.buffers,
            pool: self.pool,
        };
        debug_assert!(graph_is_valid(&graph));
        graph
    }
}

/// Structural sanity: DMA tasks move bytes and carry no work, compute tasks
/// the reverse; edges never decrease round labels; the graph is acyclic;
/// each block has exactly one output store.
fn graph_is_valid(g: &TaskGraph) -> bool {
    for t in &g.tasks {
        if t.engine.is_compute() {
            assert!(t.bytes == 0 && t.work != Work::None, "compute task {} malformed", t.id);
        } else {
            assert!(t.bytes > 0 && t.work == Work::None, "dma task {} malformed", t.id);
        }
    }
    for &(a, b) in &g.deps {
        let (ta, tb) = (&g.tasks[a as usize], &g.tasks[b as usize]);
        assert!(
            ta.round <= tb.round,
            "edge {}({}) -> {}({}) decreases round",
            a,
            ta.round,
            b,
            tb.round
        );
    }
    let stores = g.tasks.iter().filter(|t| t.kind == TaskKind::StoreO).count();
    assert_eq!(stores, g.t_r, "expected one output store per row block");
    // Kahn's algorithm: all tasks must drain if the graph is acyclic.
    let n = g.tasks.len();
    let mut indeg = vec![0u32; n];
    let mut succ: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(a, b) in &g.deps {
        indeg[b as usize] += 1;
        succ[a as usize].push(b);
    }
    let mut queue: Vec<u32> = (0..n as u32).filter(|&i| indeg[i as usize] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop() {
        seen += 1;
        for &s in &succ[i as usize] {
            indeg[s as usize] -= 1;
            if indeg[s as usize] == 0 {
                queue.push(s);
            }
        }
    }
    assert_eq!(seen, n, "task graph contains a dependency cycle");
    true
}
