pub mod audit;
pub mod buffers;
mod functional;
pub mod report;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::hardware::{AccessCounters, HardwareSpec};
use crate::schedule::{
    feasible, min_l1_bytes, BufferId, BufferKind, Engine, Priority, Span, TaskGraph, TaskId,
    TaskKind, TileTask, Work,
};
use crate::tensor::Tensor4;

pub use buffers::{
    capacity_victims, guardian_victims, rescue_victims, ArbKey, MacActivity, VictimCandidate,
};
pub use functional::FunctionalInputs;
pub use report::{
    EngineUtil, OverwriteEvent, OverwriteTrigger, RoundUtil, SimulationReport, TraceRow,
};

/// What to collect beyond cycles and counters. `seed` is recorded in the
/// report when the inputs came from a seeded generator.
#[derive(Default, Clone, Copy)]
pub struct SimOptions<'a> {
    pub functional: Option<FunctionalInputs<'a>>,
    pub collect_trace: bool,
    pub collect_rounds: bool,
    pub seed: Option<u64>,
}

pub struct SimOutcome {
    pub report: SimulationReport,
    /// Attention output assembled from the tasks' own tile computations,
    /// present when the run was functional.
    pub output: Option<Tensor4>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TState {
    Pending,
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BufState {
    Unallocated,
    Loading,
    Resident,
    Evicted,
}

#[derive(Debug, Clone, Copy)]
enum Policy {
    Guardian { core: u16 },
    Capacity,
    /// All engines are idle and nothing fits: the frontmost task may claim
    /// any tile except its own operands so the pipeline drains serially.
    /// The ungated tier also skips the admission check, trading placement
    /// discipline for one more chance at progress.
    Rescue { gated: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StartMode {
    Normal,
    Rescue { gated: bool },
}

/// Block-major reading of a task priority, used for memory arbitration in
/// pipelined dataflows without round barriers: space contention resolves
/// in the order blocks retire and release their buffers.
fn block_major(p: Priority) -> Priority {
    (p.1, p.0, p.2, p.3, p.4)
}

struct RoundAcc {
    start: u64,
    end: u64,
    mac: u64,
    vec: u64,
}

struct Barrier {
    /// Unfinished compute tasks per (core, round).
    members: Vec<Vec<u32>>,
    /// Compute tasks of round r+1 waiting on (core, round r).
    waiters: Vec<Vec<Vec<TaskId>>>,
}

struct Sim<'a> {
    g: &'a TaskGraph,
    hw: &'a HardwareSpec,
    eb: u64,
    n_static: usize,
    cores: usize,
    n_engines: usize,

    dyn_tasks: Vec<TileTask>,
    dyn_pool: Vec<BufferId>,
    dyn_prio: Vec<Priority>,

    dep_left: Vec<u32>,
    tstate: Vec<TState>,
    succ_off: Vec<u32>,
    succ_dat: Vec<TaskId>,
    extra_succ: HashMap<TaskId, Vec<TaskId>>,

    bstate: Vec<BufState>,
    writers_left: Vec<u32>,
    readers_left: Vec<u32>,
    readers: Vec<Vec<TaskId>>,
    writers: Vec<Vec<TaskId>>,
    free: u64,
    /// Core whose pipeline each task belongs to: its engine's core for
    /// compute, the earliest compute consumer's (or producer's) for DMA.
    task_core: Vec<u16>,
    /// Drain-order keys of tasks that may still need to allocate, validated
    /// lazily; the front entry is the admission gate's reference point.
    demand_heap: BinaryHeap<Reverse<ArbKey>>,

    barrier: Option<Barrier>,

    busy_until: Vec<u64>,
    current: Vec<Option<TaskId>>,
    cur_start: Vec<u64>,
    busy_cycles: Vec<u64>,
    ready: Vec<BinaryHeap<Reverse<Priority>>>,
    events: BinaryHeap<Reverse<(u64, usize)>>,

    counters: AccessCounters,
    over_events: Vec<OverwriteEvent>,
    func: Option<functional::FunctionalState<'a>>,
    trace: Option<Vec<(TaskId, usize, u64, u64)>>,
    rounds: Option<BTreeMap<u32, RoundAcc>>,
    done: usize,
    /// Rescue starts since the last scheduled task finished; bounds the
    /// reload churn a wedged schedule could otherwise spin on forever.
    rescues_since_static: u64,
}

impl<'a> Sim<'a> {
    fn new(g: &'a TaskGraph, hw: &'a HardwareSpec, opts: &SimOptions<'a>) -> Result<Self> {
        let n = g.tasks.len();
        let cores = g.cores;
        let n_engines = 2 * cores + 2;

        let mut dep_left = vec![0u32; n];
        let mut succ_count = vec![0u32; n];
        for &(a, b) in &g.deps {
            dep_left[b as usize] += 1;
            succ_count[a as usize] += 1;
        }
        let mut succ_off = vec![0u32; n + 1];
        for i in 0..n {
            succ_off[i + 1] = succ_off[i] + succ_count[i];
        }
        let mut succ_dat = vec![0u32; g.deps.len()];
        let mut cursor = succ_off.clone();
        for &(a, b) in &g.deps {
            succ_dat[cursor[a as usize] as usize] = b;
            cursor[a as usize] += 1;
        }

        let nb = g.buffers.len();
        let mut writers_left = vec![0u32; nb];
        let mut readers: Vec<Vec<TaskId>> = vec![Vec::new(); nb];
        let mut writers: Vec<Vec<TaskId>> = vec![Vec::new(); nb];
        for t in &g.tasks {
            for &w in g.writes_of(t) {
                writers_left[w as usize] += 1;
                writers[w as usize].push(t.id);
            }
            for &r in g.reads_of(t) {
                readers[r as usize].push(t.id);
            }
        }
        let readers_left: Vec<u32> = readers.iter().map(|r| r.len() as u32).collect();

        let mut task_core = vec![0u16; n];
        for t in &g.tasks {
            if let Some(c) = t.engine.core() {
                task_core[t.id as usize] = c;
            }
        }
        for t in &g.tasks {
            let peer = match t.engine {
                Engine::DmaIn => g
                    .writes_of(t)
                    .iter()
                    .flat_map(|&b| readers[b as usize].iter())
                    .filter(|&&r| g.tasks[r as usize].engine.is_compute())
                    .copied()
                    .min(),
                Engine::DmaOut => g
                    .reads_of(t)
                    .iter()
                    .flat_map(|&b| writers[b as usize].iter())
                    .filter(|&&w| g.tasks[w as usize].engine.is_compute())
                    .copied()
                    .min(),
                Engine::Mac(_) | Engine::Vec(_) => None,
            };
            if let Some(p) = peer {
                task_core[t.id as usize] = task_core[p as usize];
            }
        }

        let mut bstate = vec![BufState::Unallocated; nb];
        let mut free = hw.l1_bytes;
        for (i, b) in g.buffers.iter().enumerate() {
            if writers_left[i] == 0 {
                if b.bytes > free {
                    return Err(Error::Capacity(format!(
                        "pre-resident buffers exceed L1: need {} more bytes",
                        b.bytes - free
                    )));
                }
                free -= b.bytes;
                bstate[i] = BufState::Resident;
            }
        }

        let barrier = if g.round_barriers {
            let max_round =
                g.tasks.iter().map(|t| t.round).max().unwrap_or(0) as usize;
            let mut members = vec![vec![0u32; max_round + 2]; cores];
            for t in &g.tasks {
                if let Some(c) = t.engine.core() {
                    if t.kind.is_compute() {
                        members[c as usize][t.round as usize] += 1;
                    }
                }
            }
            let mut waiters = vec![vec![Vec::new(); max_round + 2]; cores];
            for t in &g.tasks {
                if let Some(c) = t.engine.core() {
                    if t.kind.is_compute() && t.round >= 2 {
                        let prev = (t.round - 1) as usize;
                        if members[c as usize][prev] > 0 {
                            dep_left[t.id as usize] += 1;
                            waiters[c as usize][prev].push(t.id);
                        }
                    }
                }
            }
            Some(Barrier { members, waiters })
        } else {
            None
        };

        let mut sim = Sim {
            g,
            hw,
            eb: g.shape.element_bytes as u64,
            n_static: n,
            cores,
            n_engines,
            dyn_tasks: Vec::new(),
            dyn_pool: Vec::new(),
            dyn_prio: Vec::new(),
            dep_left,
            tstate: vec![TState::Pending; n],
            succ_off,
            succ_dat,
            extra_succ: HashMap::new(),
            bstate,
            writers_left,
            readers_left,
            readers,
            writers,
            free,
            task_core,
            demand_heap: BinaryHeap::new(),
            barrier,
            busy_until: vec![0; n_engines],
            current: vec![None; n_engines],
            cur_start: vec![0; n_engines],
            busy_cycles: vec![0; n_engines],
            ready: (0..n_engines).map(|_| BinaryHeap::new()).collect(),
            events: BinaryHeap::new(),
            counters: AccessCounters::default(),
            over_events: Vec::new(),
            func: opts
                .functional
                .map(|inputs| functional::FunctionalState::new(g, inputs)),
            trace: opts.collect_trace.then(Vec::new),
            rounds: opts.collect_rounds.then(BTreeMap::new),
            done: 0,
            rescues_since_static: 0,
        };
        for i in 0..n as u32 {
            if sim.dep_left[i as usize] == 0 {
                let e = sim.engine_index(sim.g.tasks[i as usize].engine);
                let p = sim.prio(i);
                sim.ready[e].push(Reverse(p));
            }
            if sim.g.tasks[i as usize].writes.len > 0 {
                let p = sim.arb_key(i);
                sim.demand_heap.push(Reverse(p));
            }
        }
        Ok(sim)
    }

    fn engine_index(&self, e: Engine) -> usize {
        match e {
            Engine::Mac(c) => c as usize,
            Engine::Vec(c) => self.cores + c as usize,
            Engine::DmaIn => 2 * self.cores,
            Engine::DmaOut => 2 * self.cores + 1,
        }
    }

    fn engine_at(&self, idx: usize) -> Engine {
        if idx < self.cores {
            Engine::Mac(idx as u16)
        } else if idx < 2 * self.cores {
            Engine::Vec((idx - self.cores) as u16)
        } else if idx == 2 * self.cores {
            Engine::DmaIn
        } else {
            Engine::DmaOut
        }
    }

    fn task(&self, t: TaskId) -> TileTask {
        let i = t as usize;
        if i < self.n_static {
            self.g.tasks[i]
        } else {
            self.dyn_tasks[i - self.n_static]
        }
    }

    fn prio(&self, t: TaskId) -> Priority {
        let i = t as usize;
        if i < self.n_static {
            self.g.tasks[i].priority()
        } else {
            self.dyn_prio[i - self.n_static]
        }
    }

    fn span_ids(&self, t: TaskId, span: Span, out: &mut Vec<BufferId>) {
        out.clear();
        let pool =
            if (t as usize) < self.n_static { &self.g.pool } else { &self.dyn_pool };
        out.extend_from_slice(
            &pool[span.off as usize..(span.off + span.len) as usize],
        );
    }

    fn total_tasks(&self) -> usize {
        self.n_static + self.dyn_tasks.len()
    }

    fn duration(&self, t: &TileTask) -> u64 {
        let d = match t.work {
            Work::None => self.hw.dram_transfer_cycles(t.bytes),
            Work::Matmul { m, kk, n, instances } => {
                self.hw.mac_tile_cycles(m as usize, kk as usize, n as usize)
                    * instances as u64
            }
            Work::SoftmaxRows { rows, row_len, instances } => self
                .hw
                .vec_softmax_cycles(row_len as usize, rows as usize * instances as usize),
        };
        d.max(1)
    }

    fn release_dep(&mut self, t: TaskId) {
        let i = t as usize;
        self.dep_left[i] -= 1;
        if self.dep_left[i] == 0 && self.tstate[i] == TState::Pending {
            let e = self.engine_index(self.task(t).engine);
            let p = self.prio(t);
            self.ready[e].push(Reverse(p));
        }
    }

    fn add_extra_edge(&mut self, from: TaskId, to: TaskId) {
        self.dep_left[to as usize] += 1;
        self.extra_succ.entry(from).or_default().push(to);
    }

    fn maybe_free(&mut self, b: BufferId) {
        let i = b as usize;
        if self.readers_left[i] == 0 && self.writers_left[i] == 0 {
            if self.bstate[i] == BufState::Resident {
                self.free += self.g.buffers[i].bytes;
            }
            self.bstate[i] = BufState::Unallocated;
        }
    }

    /// Earliest priority among not-yet-finished, not-running readers.
    fn earliest_pending_consumer(&self, b: BufferId) -> Option<Priority> {
        self.readers[b as usize]
            .iter()
            .filter(|&&r| self.tstate[r as usize] == TState::Pending)
            .map(|&r| self.prio(r))
            .min()
    }

    /// Memory arbitration order. Allocation and eviction contention
    /// resolves along the serial schedule whose peak residency defines the
    /// dataflow's feasibility floor, so a memory passing the floor check
    /// can always drain that way. Without round barriers the blocks retire
    /// independently and that schedule is block-major within one shared
    /// position. With round barriers the floor budgets a single core's
    /// staggered working set, so the cores take the memory one at a time,
    /// each draining its rounds in priority order before the next core's
    /// claims count. An inbound transfer holds the place of the earliest
    /// reader still waiting for its tile, wherever that reader sits now: a
    /// shared tile's readers span both cores and finish out of creation
    /// order, so a frozen position would strand the transfer behind the
    /// very core that needs it. Engine dispatch keeps the pipelined
    /// priority order either way, so overlap still appears whenever memory
    /// allows.
    fn arb_key(&self, t: TaskId) -> ArbKey {
        let p = self.prio(t);
        if !self.g.round_barriers {
            return (0, block_major(p));
        }
        let task = self.task(t);
        if task.engine == Engine::DmaIn {
            let pool =
                if (t as usize) < self.n_static { &self.g.pool } else { &self.dyn_pool };
            let span = task.writes;
            let mut best: Option<ArbKey> = None;
            for &b in &pool[span.off as usize..(span.off + span.len) as usize] {
                if let Some(k) = self.earliest_pending_consumer_arb(b) {
                    if best.is_none_or(|x| k < x) {
                        best = Some(k);
                    }
                }
            }
            if let Some((core, cp)) = best {
                return (core, (cp.0, cp.1, cp.2, 0, p.4));
            }
        }
        (self.task_core[t as usize], p)
    }

    /// Like `earliest_pending_consumer` but in the memory arbitration
    /// order, for deciding which resident tiles a requester may claim.
    fn earliest_pending_consumer_arb(&self, b: BufferId) -> Option<ArbKey> {
        self.readers[b as usize]
            .iter()
            .filter(|&&r| self.tstate[r as usize] == TState::Pending)
            .map(|&r| self.arb_key(r))
            .min()
    }

    /// Bytes the task would still have to allocate to start.
    fn task_demand(&self, tid: TaskId) -> u64 {
        let t = self.task(tid);
        let mut buf = Vec::new();
        self.span_ids(tid, t.writes, &mut buf);
        buf.iter()
            .filter(|&&w| {
                matches!(self.bstate[w as usize], BufState::Unallocated | BufState::Evicted)
            })
            .map(|&w| self.g.buffers[w as usize].bytes)
            .sum()
    }

    /// The pending task earliest in the arbitration order, other than
    /// `exclude`, that still has bytes to allocate. Entries whose task
    /// started or whose targets are already placed are discarded on the
    /// way; eviction re-adds a demander through its reload transfer. A
    /// transfer's place in line moves with its readers, so entries are
    /// re-keyed lazily when the stored position no longer matches.
    fn front_demander(&mut self, exclude: TaskId) -> Option<ArbKey> {
        let mut stash = Vec::new();
        let found = loop {
            let Some(&Reverse(p)) = self.demand_heap.peek() else {
                break None;
            };
            let tid = p.1 .4;
            if tid == exclude {
                stash.extend(self.demand_heap.pop());
                continue;
            }
            if self.tstate[tid as usize] != TState::Pending || self.task_demand(tid) == 0 {
                self.demand_heap.pop();
                continue;
            }
            let fresh = self.arb_key(tid);
            if fresh != p {
                self.demand_heap.pop();
                self.demand_heap.push(Reverse(fresh));
                continue;
            }
            break Some(p);
        };
        for s in stash {
            self.demand_heap.push(s);
        }
        found
    }

    /// Largest single allocation a task earlier in the arbitration order
    /// still has to place, ignoring the requester's own targets. Streamable
    /// tiles are excluded: a K or V shortfall is always coverable by
    /// eviction, but compute outputs must find real room.
    fn reserve_need(&self, req_key: ArbKey, req_writes: &[BufferId]) -> u64 {
        let mut r = 0u64;
        for (i, info) in self.g.buffers.iter().enumerate() {
            if info.kind.evictable()
                || self.bstate[i] != BufState::Unallocated
                || info.bytes <= r
                || req_writes.contains(&(i as BufferId))
            {
                continue;
            }
            let earlier_writer = self.writers[i].iter().any(|&w| {
                self.tstate[w as usize] != TState::Done && self.arb_key(w) < req_key
            });
            if earlier_writer {
                r = info.bytes;
            }
        }
        r
    }

    /// True when `x` writes a buffer the front demander itself reads or
    /// writes: such a task is producing the demander's own inputs and
    /// holding it back cannot help the demander start sooner.
    fn writes_toward(&self, x: TaskId, front: TaskId) -> bool {
        let (tx, tf) = (self.task(x), self.task(front));
        let mut xw = Vec::new();
        self.span_ids(x, tx.writes, &mut xw);
        let mut fb = Vec::new();
        self.span_ids(front, tf.reads, &mut fb);
        let mut fw = Vec::new();
        self.span_ids(front, tf.writes, &mut fw);
        xw.iter().any(|b| fb.contains(b) || fw.contains(b))
    }

    /// Admission check run before committing an allocation from a task that
    /// runs after the front demander, the earliest-priority task that still
    /// has bytes to place. The front's claim counts as coverable when free
    /// space, the tiles it could evict on its own turn, and the buffers
    /// draining ahead of it add up to its demand. The grant is denied only
    /// when the front is coverable today and this grant would change that:
    /// such a denial stalls the requester until the front makes progress.
    /// When the front is not coverable either way, only later work can
    /// release the space it is missing, so the grant goes through rather
    /// than wedging the machine behind an unservable claim.
    fn admission_ok(
        &mut self,
        req: TaskId,
        demand: u64,
        picked: &[usize],
        cands: &[VictimCandidate],
    ) -> bool {
        let Some(front) = self.front_demander(req) else {
            return true;
        };
        let req_key = self.arb_key(req);
        if front >= req_key {
            return true;
        }
        let ftid = front.1 .4;
        if self.writes_toward(req, ftid) {
            return true;
        }
        let picked_bufs: Vec<BufferId> = picked.iter().map(|&i| cands[i].buffer).collect();
        let picked_bytes: u64 = picked.iter().map(|&i| cands[i].bytes).sum();
        debug_assert!(self.free + picked_bytes >= demand);
        let free_after = self.free + picked_bytes - demand;
        let tr = self.task(req);
        let mut r_writes = Vec::new();
        self.span_ids(req, tr.writes, &mut r_writes);
        let reserve = self.reserve_need(req_key, &r_writes);
        if reserve > 0 {
            let mut kv_after = 0u64;
            let mut kv_margin = 0u64;
            for (i, info) in self.g.buffers.iter().enumerate() {
                let b = i as BufferId;
                let counted = info.kind.evictable()
                    && ((self.bstate[i] == BufState::Resident && !picked_bufs.contains(&b))
                        || r_writes.contains(&b));
                if counted {
                    kv_after += info.bytes;
                    kv_margin = kv_margin.max(info.bytes);
                }
            }
            if free_after + kv_after - kv_margin < reserve {
                return false;
            }
        }
        let front_need = self.task_demand(ftid);
        let tf = self.task(ftid);
        let front_softmax = tf.kind == TaskKind::Softmax;
        let mut f_reads = Vec::new();
        self.span_ids(ftid, tf.reads, &mut f_reads);
        let mut claim_now = 0u64;
        let mut claim_after = 0u64;
        let mut drain = 0u64;
        for (i, info) in self.g.buffers.iter().enumerate() {
            if self.bstate[i] != BufState::Resident {
                continue;
            }
            let b = i as BufferId;
            if info.kind.evictable() {
                if f_reads.contains(&b) {
                    continue;
                }
                let later = self
                    .earliest_pending_consumer_arb(b)
                    .is_none_or(|c| c > front);
                if front_softmax || later {
                    claim_now += info.bytes;
                    if !picked_bufs.contains(&b) {
                        claim_after += info.bytes;
                    }
                }
            } else {
                let drains_first = self.readers[i]
                    .iter()
                    .chain(self.writers[i].iter())
                    .all(|&t| {
                        self.tstate[t as usize] == TState::Done
                            || self.arb_key(t) < front
                    });
                if drains_first {
                    drain += info.bytes;
                }
            }
        }
        if self.free + claim_now + drain < front_need {
            return true;
        }
        free_after + claim_after + drain >= front_need
    }

    /// Frees at least `demand` bytes for `req` under the given policy, or
    /// returns false leaving the state untouched. Claimed tiles get reload
    /// transfers that wait for the requester; their future readers wait for
    /// the reload. The guardian policy may abort the requesting core's
    /// running matmul mid-flight; its finished share is counted as redone
    /// work and the task re-queued behind the reload of its claimed operand.
    fn ensure_space(&mut self, req: TaskId, demand: u64, policy: Policy, now: u64) -> bool {
        let gated = !matches!(policy, Policy::Rescue { gated: false });
        if self.free >= demand {
            return !gated || self.admission_ok(req, demand, &[], &[]);
        }
        let mut running_reads: Vec<(BufferId, usize)> = Vec::new();
        let mut buf = Vec::new();
        for e in 0..self.n_engines {
            if let Some(tid) = self.current[e] {
                let t = self.task(tid);
                self.span_ids(tid, t.reads, &mut buf);
                for &b in &buf {
                    running_reads.push((b, e));
                }
            }
        }
        let guardian_mac = match policy {
            Policy::Guardian { core } => self.current[core as usize],
            Policy::Capacity | Policy::Rescue { .. } => None,
        };
        let mac_engine_idx = match policy {
            Policy::Guardian { core } => core as usize,
            Policy::Capacity | Policy::Rescue { .. } => usize::MAX,
        };

        let mut cands: Vec<VictimCandidate> = Vec::new();
        for (i, info) in self.g.buffers.iter().enumerate() {
            if !info.kind.evictable() || self.bstate[i] != BufState::Resident {
                continue;
            }
            let b = i as BufferId;
            let mut killable = false;
            let mut blocked = false;
            for &(rb, e) in &running_reads {
                if rb != b {
                    continue;
                }
                if e == mac_engine_idx && guardian_mac.is_some() {
                    killable = true;
                } else {
                    blocked = true;
                }
            }
            if blocked {
                continue;
            }
            cands.push(VictimCandidate {
                buffer: b,
                kind: info.kind,
                bytes: info.bytes,
                sub: info.sub,
                running_operand: killable,
                consumer: self.earliest_pending_consumer_arb(b),
            });
        }

        let chosen = match policy {
            Policy::Guardian { .. } => {
                let activity = match guardian_mac {
                    Some(tid) => match self.task(tid).kind {
                        TaskKind::QkMatmul => MacActivity::QkMatmul,
                        TaskKind::PvMatmul => MacActivity::PvMatmul,
                        _ => MacActivity::Idle,
                    },
                    None => MacActivity::Idle,
                };
                guardian_victims(&cands, self.free, demand, activity)
            }
            Policy::Capacity => {
                capacity_victims(&cands, self.free, demand, self.arb_key(req))
            }
            Policy::Rescue { .. } => {
                let t = self.task(req);
                let mut excluded = Vec::new();
                self.span_ids(req, t.reads, &mut excluded);
                rescue_victims(&cands, self.free, demand, &excluded)
            }
        };
        let Some(picked) = chosen else {
            return false;
        };
        if gated && !self.admission_ok(req, demand, &picked, &cands) {
            return false;
        }

        let trigger = match policy {
            Policy::Guardian { .. } => OverwriteTrigger::SoftmaxDemand,
            Policy::Capacity | Policy::Rescue { .. } => OverwriteTrigger::Capacity,
        };
        for i in picked {
            let cand = cands[i];
            let b = cand.buffer;
            let mut stalled = None;
            if cand.running_operand {
                if let Some(run_tid) = self.current[mac_engine_idx] {
                    self.kill(mac_engine_idx, now);
                    stalled = Some(run_tid);
                }
            }
            self.bstate[b as usize] = BufState::Evicted;
            self.free += cand.bytes;
            let reload = self.inject_reload(b, req);
            let readers: Vec<TaskId> = self.readers[b as usize].clone();
            for rd in readers {
                if self.tstate[rd as usize] == TState::Pending {
                    self.add_extra_edge(reload, rd);
                }
            }
            let info = self.g.buffers[b as usize];
            self.over_events.push(OverwriteEvent {
                time: now,
                trigger,
                victim_buffer: b,
                victim_kind: info.kind,
                victim_group: info.group,
                victim_sub: info.sub,
                victim_instance: info.instance,
                bytes_freed: cand.bytes,
                stalled_task: stalled,
                reload_obligation: cand.bytes,
            });
        }
        debug_assert!(self.free >= demand);
        true
    }

    /// Aborts the task running on engine `e`: the engine frees immediately,
    /// the finished fraction of its operations is charged as redone work,
    /// and the task returns to pending to be re-queued once the reloads of
    /// its claimed operands land.
    fn kill(&mut self, e: usize, now: u64) {
        let tid = self.current[e].take().expect("kill targets a running task");
        let start = self.cur_start[e];
        let dur = self.busy_until[e].saturating_sub(start).max(1);
        let elapsed = now - start;
        self.busy_cycles[e] += elapsed;
        let ops = self.task(tid).work.ops();
        let partial = (ops as u128 * elapsed as u128 / dur as u128) as u64;
        self.counters.mac_ops += partial;
        self.counters.redo_mac_ops += partial;
        self.tstate[tid as usize] = TState::Pending;
    }

    /// Creates the reload transfer for an evicted tile, prioritized to run
    /// just ahead of the tile's earliest waiting consumer and gated on the
    /// requester that claimed the space.
    fn inject_reload(&mut self, b: BufferId, req: TaskId) -> TaskId {
        let info = self.g.buffers[b as usize];
        let kind = match info.kind {
            BufferKind::K => TaskKind::LoadK,
            BufferKind::V => TaskKind::LoadV,
            other => unreachable!("reload of non-streamable buffer kind {other:?}"),
        };
        let consumer = self
            .earliest_pending_consumer(b)
            .unwrap_or_else(|| self.prio(req));
        let id = self.total_tasks() as TaskId;
        let woff = self.dyn_pool.len() as u32;
        self.dyn_pool.push(b);
        self.dyn_tasks.push(TileTask {
            id,
            engine: Engine::DmaIn,
            kind,
            block: info.block,
            group: info.group,
            sub: info.sub,
            round: consumer.0,
            bytes: info.bytes,
            work: Work::None,
            reads: Span::EMPTY,
            writes: Span { off: woff, len: 1 },
        });
        self.dyn_prio.push((consumer.0, consumer.1, consumer.2, 0, id));
        self.task_core.push(self.task_core[consumer.4 as usize]);
        self.dep_left.push(1);
        self.tstate.push(TState::Pending);
        self.writers_left[b as usize] += 1;
        self.extra_succ.entry(req).or_default().push(id);
        self.demand_heap.push(Reverse(self.arb_key(id)));
        id
    }

    fn start(&mut self, e: usize, tid: TaskId, now: u64) {
        let t = self.task(tid);
        let dur = self.duration(&t);
        self.current[e] = Some(tid);
        self.cur_start[e] = now;
        self.busy_until[e] = now + dur;
        self.tstate[tid as usize] = TState::Running;
        self.events.push(Reverse((now + dur, e)));
    }

    fn try_start(&mut self, e: usize, tid: TaskId, now: u64, mode: StartMode) -> bool {
        let t = self.task(tid);
        let mut writes = Vec::new();
        self.span_ids(tid, t.writes, &mut writes);
        match t.engine {
            Engine::DmaIn => {
                let mut demand = 0u64;
                for &w in &writes {
                    match self.bstate[w as usize] {
                        BufState::Unallocated | BufState::Evicted => {
                            demand += self.g.buffers[w as usize].bytes;
                        }
                        BufState::Loading | BufState::Resident => {}
                    }
                }
                let policy = match mode {
                    StartMode::Normal => Policy::Capacity,
                    StartMode::Rescue { gated } => Policy::Rescue { gated },
                };
                if demand > 0 && !self.ensure_space(tid, demand, policy, now) {
                    return false;
                }
                for &w in &writes {
                    if matches!(
                        self.bstate[w as usize],
                        BufState::Unallocated | BufState::Evicted
                    ) {
                        self.free -= self.g.buffers[w as usize].bytes;
                    }
                    self.bstate[w as usize] = BufState::Loading;
                }
                self.start(e, tid, now);
                true
            }
            Engine::DmaOut => {
                self.start(e, tid, now);
                true
            }
            Engine::Mac(_) | Engine::Vec(_) => {
                let mut reads = Vec::new();
                self.span_ids(tid, t.reads, &mut reads);
                for &r in &reads {
                    if self.bstate[r as usize] != BufState::Resident {
                        return false;
                    }
                }
                let mut demand = 0u64;
                for &w in &writes {
                    if self.bstate[w as usize] == BufState::Unallocated {
                        demand += self.g.buffers[w as usize].bytes;
                    }
                }
                if demand > 0 {
                    let policy = match mode {
                        StartMode::Rescue { gated } => Policy::Rescue { gated },
                        StartMode::Normal if t.kind == TaskKind::Softmax => Policy::Guardian {
                            core: t.engine.core().expect("compute has a core"),
                        },
                        StartMode::Normal => Policy::Capacity,
                    };
                    if !self.ensure_space(tid, demand, policy, now) {
                        return false;
                    }
                    for &w in &writes {
                        if self.bstate[w as usize] == BufState::Unallocated {
                            self.free -= self.g.buffers[w as usize].bytes;
                            self.bstate[w as usize] = BufState::Resident;
                        }
                    }
                }
                self.start(e, tid, now);
                true
            }
        }
    }

    fn apply_counters(&mut self, t: &TileTask) {
        let eb = self.eb;
        match t.engine {
            Engine::DmaIn => {
                self.counters.dram_read_bytes += t.bytes;
                self.counters.l1_write_bytes += t.bytes;
            }
            Engine::DmaOut => {
                self.counters.dram_write_bytes += t.bytes;
                self.counters.l1_read_bytes += t.bytes;
            }
            Engine::Mac(_) => {
                let ops = t.work.ops();
                self.counters.mac_ops += ops;
                self.counters.l1_read_bytes += t.work.in_elems() * eb;
                self.counters.l1_write_bytes += t.work.out_elems() * eb;
                self.counters.l0_read_bytes += 2 * ops * eb;
                self.counters.l0_write_bytes += t.work.out_elems() * eb;
            }
            Engine::Vec(_) => {
                let ops = t.work.ops();
                self.counters.vec_ops += ops;
                self.counters.l1_read_bytes += t.work.in_elems() * eb;
                self.counters.l1_write_bytes += t.work.out_elems() * eb;
                self.counters.l0_read_bytes += ops * eb;
                self.counters.l0_write_bytes += t.work.out_elems() * eb;
            }
        }
    }

    fn complete(&mut self, e: usize, time: u64) {
        let tid = self.current[e].take().expect("completion of idle engine");
        let t = self.task(tid);
        let start = self.cur_start[e];
        self.busy_cycles[e] += time - start;
        self.tstate[tid as usize] = TState::Done;
        self.done += 1;
        if (tid as usize) < self.n_static {
            self.rescues_since_static = 0;
        }
        self.apply_counters(&t);
        if let Some(f) = &mut self.func {
            f.on_complete(&t);
        }
        if let Some(tr) = &mut self.trace {
            tr.push((tid, e, start, time));
        }
        if t.kind.is_compute() {
            if let Some(r) = &mut self.rounds {
                let acc = r.entry(t.round).or_insert(RoundAcc {
                    start,
                    end: time,
                    mac: 0,
                    vec: 0,
                });
                acc.start = acc.start.min(start);
                acc.end = acc.end.max(time);
                match t.engine {
                    Engine::Mac(_) => acc.mac += time - start,
                    Engine::Vec(_) => acc.vec += time - start,
                    _ => {}
                }
            }
            let mut released = Vec::new();
            if let Some(bar) = &mut self.barrier {
                if let Some(c) = t.engine.core() {
                    let r = t.round as usize;
                    bar.members[c as usize][r] -= 1;
                    if bar.members[c as usize][r] == 0 {
                        released = std::mem::take(&mut bar.waiters[c as usize][r]);
                    }
                }
            }
            for w in released {
                self.release_dep(w);
            }
        }
        let mut buf = Vec::new();
        self.span_ids(tid, t.reads, &mut buf);
        for i in 0..buf.len() {
            let b = buf[i];
            self.readers_left[b as usize] -= 1;
            self.maybe_free(b);
        }
        self.span_ids(tid, t.writes, &mut buf);
        for i in 0..buf.len() {
            let b = buf[i];
            self.writers_left[b as usize] -= 1;
            if t.engine == Engine::DmaIn {
                self.bstate[b as usize] = BufState::Resident;
            }
            self.maybe_free(b);
        }
        let (lo, hi) = if (tid as usize) < self.n_static {
            (self.succ_off[tid as usize], self.succ_off[tid as usize + 1])
        } else {
            (0, 0)
        };
        for i in lo..hi {
            self.release_dep(self.succ_dat[i as usize]);
        }
        if let Some(extra) = self.extra_succ.remove(&tid) {
            for s in extra {
                self.release_dep(s);
            }
        }
    }

    fn schedule_pass(&mut self, now: u64) {
        loop {
            let mut progress = false;
            for e in 0..self.n_engines {
                if self.current[e].is_some() {
                    continue;
                }
                let mut stash: Vec<Reverse<Priority>> = Vec::new();
                while let Some(Reverse(p)) = self.ready[e].pop() {
                    let tid = p.4;
                    if self.tstate[tid as usize] != TState::Pending
                        || self.dep_left[tid as usize] != 0
                    {
                        continue;
                    }
                    if self.try_start(e, tid, now, StartMode::Normal) {
                        progress = true;
                        break;
                    }
                    stash.push(Reverse(p));
                }
                for p in stash {
                    self.ready[e].push(p);
                }
            }
            if !progress {
                break;
            }
        }
    }

    /// Called when every engine is idle, nothing could start, and work
    /// remains: walks the schedulable tasks in arbitration order and
    /// starts the first one that fits once it may claim any tile but its
    /// own operands. Arbitration order matters more than dispatch
    /// priority here, since freeing memory means finishing the work that
    /// already holds it, and dispatch order would keep opening new blocks
    /// instead. Each call that succeeds runs at least one task, so the
    /// machine drains serially instead of wedging when the memory is
    /// sized right at the residency floor. Returns false when even full
    /// eviction cannot make room, or when repeated claims stop advancing
    /// the schedule, which the caller reports as a real deadlock.
    fn rescue(&mut self, now: u64) -> bool {
        if self.rescues_since_static > self.g.buffers.len() as u64 + 64 {
            return false;
        }
        let mut cands: Vec<(ArbKey, TaskId)> = (0..self.total_tasks() as TaskId)
            .filter(|&t| {
                self.tstate[t as usize] == TState::Pending && self.dep_left[t as usize] == 0
            })
            .map(|t| (self.arb_key(t), t))
            .collect();
        cands.sort_unstable();
        for gated in [true, false] {
            for &(_, tid) in &cands {
                let e = self.engine_index(self.task(tid).engine);
                debug_assert!(self.current[e].is_none(), "rescue requires idle engines");
                if self.try_start(e, tid, now, StartMode::Rescue { gated }) {
                    self.rescues_since_static += 1;
                    return true;
                }
            }
        }
        false
    }

    fn deadlock_error(&mut self) -> Error {
        let pending: Vec<TaskId> = (0..self.total_tasks() as TaskId)
            .filter(|&t| self.tstate[t as usize] != TState::Done)
            .collect();
        let reclaimable: u64 = self
            .g
            .buffers
            .iter()
            .enumerate()
            .filter(|(i, info)| {
                info.kind.evictable() && self.bstate[*i] == BufState::Resident
            })
            .map(|(_, info)| info.bytes)
            .sum();
        let mut capacity_bound = false;
        let mut lines = Vec::new();
        let mut buf = Vec::new();
        for &tid in pending.iter().take(6) {
            let t = self.task(tid);
            let mut why = format!(
                "task {} ({} block {} sub {} round {}): {} deps unresolved",
                tid,
                t.kind.label(),
                t.block,
                t.sub,
                t.round,
                self.dep_left[tid as usize]
            );
            if self.dep_left[tid as usize] == 0 {
                self.span_ids(tid, t.writes, &mut buf);
                let demand: u64 = buf
                    .iter()
                    .filter(|&&w| {
                        matches!(
                            self.bstate[w as usize],
                            BufState::Unallocated | BufState::Evicted
                        )
                    })
                    .map(|&w| self.g.buffers[w as usize].bytes)
                    .sum();
                if demand > 0 {
                    why.push_str(&format!(
                        "; needs {} bytes with {} free and {} reclaimable",
                        demand, self.free, reclaimable
                    ));
                    if demand > self.free + reclaimable {
                        capacity_bound = true;
                    }
                }
            } else {
                let mut blockers: Vec<String> = self
                    .g
                    .deps
                    .iter()
                    .filter(|&&(a, b)| b == tid && self.tstate[a as usize] != TState::Done)
                    .map(|&(a, _)| format!("{}", a))
                    .collect();
                for (&req, succs) in &self.extra_succ {
                    if succs.contains(&tid) && self.tstate[req as usize] != TState::Done {
                        blockers.push(format!("{}*", req));
                    }
                }
                if let Some(bar) = &self.barrier {
                    for (c, rounds) in bar.waiters.iter().enumerate() {
                        for (r, waiters) in rounds.iter().enumerate() {
                            if waiters.contains(&tid) {
                                blockers.push(format!("barrier{}r{}", c, r));
                            }
                        }
                    }
                }
                why.push_str(&format!(" (waiting on {})", blockers.join(",")));
            }
            lines.push(why);
        }
        let resident: Vec<String> = self
            .g
            .buffers
            .iter()
            .enumerate()
            .filter(|(i, _)| self.bstate[*i] == BufState::Resident)
            .map(|(_, info)| {
                format!(
                    "{}g{}b{}.{}:{}",
                    info.kind.label(),
                    info.group,
                    info.block,
                    info.sub,
                    info.bytes
                )
            })
            .collect();
        let dynamics: Vec<String> = (self.n_static..self.total_tasks())
            .filter(|&i| self.tstate[i] != TState::Done)
            .map(|i| {
                let t = &self.dyn_tasks[i - self.n_static];
                let b = self.dyn_pool[t.writes.off as usize];
                let info = self.g.buffers[b as usize];
                format!(
                    "{} {} {}g{}b{}.{} dep{} target={:?}",
                    t.id,
                    t.kind.label(),
                    info.kind.label(),
                    info.group,
                    info.block,
                    info.sub,
                    self.dep_left[i],
                    self.bstate[b as usize]
                )
            })
            .collect();
        let heaps: Vec<String> = (0..self.n_engines)
            .map(|e| {
                let mut entries: Vec<Priority> =
                    self.ready[e].iter().map(|Reverse(p)| *p).collect();
                entries.sort_unstable();
                let shown: Vec<String> = entries
                    .iter()
                    .take(8)
                    .map(|p| {
                        let tid = p.4;
                        let live = self.tstate[tid as usize] == TState::Pending
                            && self.dep_left[tid as usize] == 0;
                        format!("{}{}", tid, if live { "" } else { "!" })
                    })
                    .collect();
                format!("{}=[{}]", self.engine_at(e).label(), shown.join(","))
            })
            .collect();
        let msg = format!(
            "no runnable task with {} of {} unfinished: {}; resident: {}; pending reloads: {}; ready heaps: {}",
            pending.len(),
            self.total_tasks(),
            lines.join("; "),
            resident.join(" "),
            dynamics.join(", "),
            heaps.join(" ")
        );
        if capacity_bound {
            Error::Capacity(format!("L1 too small to make progress: {msg}"))
        } else {
            Error::Simulation(msg)
        }
    }

    fn run(&mut self) -> Result<u64> {
        self.schedule_pass(0);
        let mut last = 0u64;
        loop {
            while let Some(&Reverse((time, _))) = self.events.peek() {
                while let Some(&Reverse((t2, e2))) = self.events.peek() {
                    if t2 != time {
                        break;
                    }
                    self.events.pop();
                    if self.current[e2].is_some() && self.busy_until[e2] == time {
                        self.complete(e2, time);
                    }
                }
                last = time;
                self.schedule_pass(time);
            }
            if self.done >= self.total_tasks() {
                return Ok(last);
            }
            if !self.rescue(last) {
                return Err(self.deadlock_error());
            }
        }
    }
}

fn precheck(graph: &TaskGraph, hw: &HardwareSpec) -> Result<()> {
    hw.validate()?;
    if !feasible(graph.scheduler, &graph.shape, &graph.tiling, hw.l1_bytes) {
        return Err(Error::Capacity(format!(
            "tiling {} needs at least {} bytes of L1 under {} but only {} are available",
            graph.tiling,
            min_l1_bytes(graph.scheduler, &graph.shape, &graph.tiling),
            graph.scheduler,
            hw.l1_bytes
        )));
    }
    let dram_need = crate::footprint::unique_dram_bytes(graph.scheduler, &graph.shape);
    if dram_need > hw.dram_bytes {
        return Err(Error::Capacity(format!(
            "workload needs {} DRAM bytes under {} but only {} are available",
            dram_need, graph.scheduler, hw.dram_bytes
        )));
    }
    Ok(())
}

/// Runs the task graph to completion and assembles the full report.
pub fn simulate(graph: &TaskGraph, hw: &HardwareSpec, opts: &SimOptions) -> Result<SimOutcome> {
    precheck(graph, hw)?;
    let mut sim = Sim::new(graph, hw, opts)?;
    let total_cycles = sim.run()?;
    let energy = sim.counters.energy(&hw.energy);
    let engine_utilization = (0..sim.n_engines)
        .map(|e| EngineUtil {
            engine: sim.engine_at(e).label(),
            busy_cycles: sim.busy_cycles[e],
            utilization: if total_cycles > 0 {
                sim.busy_cycles[e] as f64 / total_cycles as f64
            } else {
                0.0
            },
        })
        .collect();
    let round_utilization = sim
        .rounds
        .take()
        .map(|r| {
            r.into_iter()
                .map(|(round, acc)| RoundUtil {
                    round,
                    span_start: acc.start,
                    span_end: acc.end,
                    mac_busy_cycles: acc.mac,
                    vec_busy_cycles: acc.vec,
                })
                .collect()
        })
        .unwrap_or_default();
    let trace = sim.trace.take().map(|rows| {
        let mut rows = rows;
        rows.sort_by_key(|&(tid, e, s, _)| (s, e, tid));
        rows.into_iter()
            .map(|(tid, e, s, end)| {
                let t = sim.task(tid);
                TraceRow {
                    task: tid,
                    engine: sim.engine_at(e).label(),
                    kind: t.kind.label().into(),
                    block: t.block,
                    sub: t.sub,
                    round: t.round,
                    start: s,
                    end,
                }
            })
            .collect()
    });
    let mut over_events = std::mem::take(&mut sim.over_events);
    over_events.sort_by_key(|e| (e.time, e.victim_buffer));
    let output = sim.func.take().map(|f| f.finish());
    let report = SimulationReport {
        scheduler: graph.scheduler.name().into(),
        shape: graph.shape,
        tiling: graph.tiling,
        cores: graph.cores,
        hardware: hw.clone(),
        seed: opts.seed,
        total_cycles,
        energy,
        counters: sim.counters,
        overwrite_events: over_events,
        engine_utilization,
        round_utilization,
        trace,
    };
    Ok(SimOutcome { report, output })
}

/// Cycles and counters only, for search loops.
pub fn simulate_cost(graph: &TaskGraph, hw: &HardwareSpec) -> Result<(u64, AccessCounters)> {
    precheck(graph, hw)?;
    let mut sim = Sim::new(graph, hw, &SimOptions::default())?;
    let total = sim.run()?;
    Ok((total, sim.counters))
}
