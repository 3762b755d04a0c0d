use crate::error::Result;
use crate::hardware::HardwareSpec;
use crate::schedule::SchedulerKind;
use crate::shape::{TilingConfig, WorkloadShape};

use super::{Evaluator, SearchResult, SearchSpace, TunerKind};

/// Simulates every feasible rung combination and returns the exact optimum.
pub fn grid_search(
    space: &SearchSpace,
    scheduler: SchedulerKind,
    shape: &WorkloadShape,
    hw: &HardwareSpec,
    cores: usize,
) -> Result<SearchResult> {
    let mut eval = Evaluator::new(scheduler, shape, hw, cores);
    for &b_b in &space.b_b {
        for &h_h in &space.h_h {
            for &n_q in &space.n_q {
                for &n_kv in &space.n_kv {
                    eval.score(TilingConfig { b_b, h_h, n_q, n_kv })?;
                }
            }
        }
    }
    eval.finish(TunerKind::Grid, None)
}

/// How many rung combinations actually fit in L1; the grid simulates
/// exactly this many configurations.
pub fn feasible_count(
    space: &SearchSpace,
    scheduler: SchedulerKind,
    shape: &WorkloadShape,
    l1_bytes: u64,
) -> usize {
    let mut count = 0;
    for &b_b in &space.b_b {
        for &h_h in &space.h_h {
            for &n_q in &space.n_q {
                for &n_kv in &space.n_kv {
                    let t = TilingConfig { b_b, h_h, n_q, n_kv };
                    if crate::schedule::feasible(scheduler, shape, &t, l1_bytes) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}
