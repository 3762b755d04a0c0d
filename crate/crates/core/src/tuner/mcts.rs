use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hardware::HardwareSpec;
use crate::schedule::SchedulerKind;
use crate::shape::WorkloadShape;

use super::{Evaluator, SearchResult, SearchSpace, TunerKind};

const ITERATIONS: usize = 2000;
const EXPLORATION: f64 = 1.414;

struct Node {
    depth: usize,
    visits: u64,
    reward: f64,
    children: Vec<Option<usize>>,
}

/// Monte Carlo tree search over the rung ladders, one tree level per tiling
/// dimension in batch, head, query, key/value order. Unexpanded children are
/// opened lowest rung first; rollouts fill the remaining dimensions
/// uniformly. Reward is the best cycle count seen so far divided by the
/// candidate's, and zero for tilings that do not fit in L1, so the tree
/// steers toward fast feasible regions while the memoized evaluator keeps
/// revisits free.
pub fn mcts_search(
    space: &SearchSpace,
    scheduler: SchedulerKind,
    shape: &WorkloadShape,
    hw: &HardwareSpec,
    cores: usize,
    seed: u64,
) -> Result<SearchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = Evaluator::new(scheduler, shape, hw, cores);
    let mut nodes = vec![Node {
        depth: 0,
        visits: 0,
        reward: 0.0,
        children: vec![None; space.rungs(0).len()],
    }];

    for _ in 0..ITERATIONS {
        let mut path = vec![0usize];
        let mut genome = [0usize; 4];
        let mut node = 0usize;

        loop {
            let depth = nodes[node].depth;
            if depth == 4 {
                break;
            }
            if let Some(slot) = nodes[node].children.iter().position(Option::is_none) {
                let child_depth = depth + 1;
                let child = nodes.len();
                nodes.push(Node {
                    depth: child_depth,
                    visits: 0,
                    reward: 0.0,
                    children: if child_depth == 4 {
                        Vec::new()
                    } else {
                        vec![None; space.rungs(child_depth).len()]
                    },
                });
                nodes[node].children[slot] = Some(child);
                genome[depth] = slot;
                path.push(child);
                for gene in child_depth..4 {
                    genome[gene] = rng.random_range(0..space.rungs(gene).len());
                }
                break;
            }
            let parent_visits = nodes[node].visits.max(1) as f64;
            let mut chosen = 0;
            let mut best_uct = f64::NEG_INFINITY;
            for (slot, child) in nodes[node].children.iter().enumerate() {
                let child = child.expect("fully expanded node");
                let c = &nodes[child];
                let mean = if c.visits == 0 { 0.0 } else { c.reward / c.visits as f64 };
                let uct = mean
                    + EXPLORATION * (parent_visits.ln() / c.visits.max(1) as f64).sqrt();
                if uct > best_uct {
                    best_uct = uct;
                    chosen = slot;
                }
            }
            genome[depth] = chosen;
            node = nodes[node].children[chosen].expect("fully expanded node");
            path.push(node);
        }

        let reward = match eval.score(space.tiling(genome))? {
            Some(scored) => {
                let best = eval.best.expect("best is set once anything scored");
                best.cycles as f64 / scored.cycles as f64
            }
            None => 0.0,
        };
        for n in path {
            nodes[n].visits += 1;
            nodes[n].reward += reward;
        }
    }

    debug_assert_eq!(nodes[0].visits as usize, ITERATIONS);
    eval.finish(TunerKind::Mcts, Some(seed))
}
