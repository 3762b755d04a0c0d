mod genetic;
mod grid;
mod mcts;

pub use genetic::genetic_search;
pub use grid::{feasible_count, grid_search};
pub use mcts::mcts_search;

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hardware::HardwareSpec;
use crate::schedule::{build, feasible, SchedulerKind};
use crate::shape::{TilingConfig, WorkloadShape};
use crate::sim::simulate_cost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TunerKind {
    Grid,
    Genetic,
    Mcts,
}

impl TunerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TunerKind::Grid => "grid",
            TunerKind::Genetic => "ga",
            TunerKind::Mcts => "mcts",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(TunerKind::Grid),
            "ga" | "genetic" => Ok(TunerKind::Genetic),
            "mcts" => Ok(TunerKind::Mcts),
            other => Err(Error::Config(format!(
                "unknown tuner '{other}'; known: grid, ga, mcts"
            ))),
        }
    }
}

impl std::fmt::Display for TunerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tile sizes worth trying for one dimension: every divisor (perfect tiling)
/// plus every power of two (ragged tails allowed), capped at the dimension.
pub fn ladder(dim: usize) -> Vec<usize> {
    let mut rungs: Vec<usize> = (1..=dim).filter(|d| dim % d == 0).collect();
    let mut p = 1;
    while p <= dim {
        rungs.push(p);
        p *= 2;
    }
    rungs.sort_unstable();
    rungs.dedup();
    rungs
}

/// The candidate rungs per tiling dimension for one workload.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub b_b: Vec<usize>,
    pub h_h: Vec<usize>,
    pub n_q: Vec<usize>,
    pub n_kv: Vec<usize>,
}

impl SearchSpace {
    pub fn for_shape(shape: &WorkloadShape) -> Self {
        SearchSpace {
            b_b: ladder(shape.batch),
            h_h: ladder(shape.heads),
            n_q: ladder(shape.seq_len),
            n_kv: ladder(shape.seq_len),
        }
    }

    pub fn size(&self) -> usize {
        self.b_b.len() * self.h_h.len() * self.n_q.len() * self.n_kv.len()
    }

    pub fn rungs(&self, dim: usize) -> &[usize] {
        match dim {
            0 => &self.b_b,
            1 => &self.h_h,
            2 => &self.n_q,
            3 => &self.n_kv,
            _ => unreachable!("tiling has four dimensions"),
        }
    }

    pub fn tiling(&self, genome: [usize; 4]) -> TilingConfig {
        TilingConfig {
            b_b: self.b_b[genome[0]],
            h_h: self.h_h[genome[1]],
            n_q: self.n_q[genome[2]],
            n_kv: self.n_kv[genome[3]],
        }
    }
}

/// A tiling with its simulated cost.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScoredTiling {
    pub tiling: TilingConfig,
    pub cycles: u64,
    pub energy_pj: f64,
}

/// Lower cycles win; energy breaks cycle ties; the smaller config tuple
/// breaks exact ties so every search is deterministic.
pub fn better(a: &ScoredTiling, b: &ScoredTiling) -> bool {
    (a.cycles, a.energy_pj, a.tiling) < (b.cycles, b.energy_pj, b.tiling)
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub scheduler: SchedulerKind,
    pub tuner: TunerKind,
    pub best: ScoredTiling,
    /// Simulator invocations; repeated candidates are memoized and counted
    /// once.
    pub evaluations: usize,
    /// Every feasible tiling that was simulated, in evaluation order.
    pub history: Vec<ScoredTiling>,
    pub seed: Option<u64>,
}

/// Memoizing cost oracle shared by all searches.
pub struct Evaluator<'a> {
    scheduler: SchedulerKind,
    shape: &'a WorkloadShape,
    hw: &'a HardwareSpec,
    cores: usize,
    memo: HashMap<(usize, usize, usize, usize), Option<(u64, f64)>>,
    pub evaluations: usize,
    pub history: Vec<ScoredTiling>,
    pub best: Option<ScoredTiling>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        scheduler: SchedulerKind,
        shape: &'a WorkloadShape,
        hw: &'a HardwareSpec,
        cores: usize,
    ) -> Self {
        Evaluator {
            scheduler,
            shape,
            hw,
            cores,
            memo: HashMap::new(),
            evaluations: 0,
            history: Vec::new(),
            best: None,
        }
    }

    pub fn feasible(&self, t: &TilingConfig) -> bool {
        feasible(self.scheduler, self.shape, t, self.hw.l1_bytes)
    }

    /// Cost of one tiling, or None when it cannot run in L1.
    pub fn score(&mut self, t: TilingConfig) -> Result<Option<ScoredTiling>> {
        let key = (t.b_b, t.h_h, t.n_q, t.n_kv);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.map(|(cycles, energy_pj)| ScoredTiling { tiling: t, cycles, energy_pj }));
        }
        if !self.feasible(&t) {
            self.memo.insert(key, None);
            return Ok(None);
        }
        let graph = build(self.scheduler, self.shape, &t, self.cores)?;
        let (cycles, counters) = simulate_cost(&graph, self.hw)?;
        let energy_pj = counters.energy(&self.hw.energy).total_pj;
        self.evaluations += 1;
        let scored = ScoredTiling { tiling: t, cycles, energy_pj };
        self.history.push(scored);
        if self.best.map_or(true, |b| better(&scored, &b)) {
            self.best = Some(scored);
        }
        self.memo.insert(key, Some((cycles, energy_pj)));
        Ok(Some(scored))
    }

    fn finish(self, tuner: TunerKind, seed: Option<u64>) -> Result<SearchResult> {
        let best = self.best.ok_or_else(|| {
            Error::Infeasible(format!(
                "no tiling of {} fits {} bytes of L1 under {}",
                self.shape, self.hw.l1_bytes, self.scheduler
            ))
        })?;
        Ok(SearchResult {
            scheduler: self.scheduler,
            tuner,
            best,
            evaluations: self.evaluations,
            history: self.history,
            seed,
        })
    }
}

/// Runs the chosen search over the full rung space for one scheduler.
pub fn tune(
    tuner: TunerKind,
    scheduler: SchedulerKind,
    shape: &WorkloadShape,
    hw: &HardwareSpec,
    cores: usize,
    seed: u64,
) -> Result<SearchResult> {
    let space = SearchSpace::for_shape(shape);
    match tuner {
        TunerKind::Grid => grid_search(&space, scheduler, shape, hw, cores),
        TunerKind::Genetic => genetic_search(&space, scheduler, shape, hw, cores, seed),
        TunerKind::Mcts => mcts_search(&space, scheduler, shape, hw, cores, seed),
    }
}
