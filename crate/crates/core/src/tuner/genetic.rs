use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hardware::HardwareSpec;
use crate::schedule::SchedulerKind;
use crate::shape::WorkloadShape;

use super::{better, Evaluator, ScoredTiling, SearchResult, SearchSpace, TunerKind};

const POPULATION: usize = 32;
const GENERATIONS: usize = 40;
const CROSSOVER_P: f64 = 0.8;
const MUTATION_P: f64 = 0.1;
const TOURNAMENT: usize = 3;
const ELITES: usize = 2;

type Genome = [usize; 4];

fn better_opt(a: &Option<ScoredTiling>, b: &Option<ScoredTiling>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => better(x, y),
        (Some(_), None) => true,
        _ => false,
    }
}

/// Walks a genome down the rung ladders until the tiling fits in L1:
/// query rows shrink first, then key/value rows, then the head and batch
/// group sizes. Stops at the all-minimum genome even if still infeasible.
fn repair(space: &SearchSpace, eval: &Evaluator, genome: &mut Genome) {
    let order = [2usize, 3, 1, 0];
    loop {
        if eval.feasible(&space.tiling(*genome)) {
            return;
        }
        let mut moved = false;
        for gene in order {
            if genome[gene] > 0 {
                genome[gene] -= 1;
                moved = true;
                break;
            }
        }
        if !moved {
            return;
        }
    }
}

fn random_genome(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Genome {
    [
        rng.random_range(0..space.b_b.len()),
        rng.random_range(0..space.h_h.len()),
        rng.random_range(0..space.n_q.len()),
        rng.random_range(0..space.n_kv.len()),
    ]
}

fn mutate(space: &SearchSpace, rng: &mut ChaCha8Rng, genome: &mut Genome) {
    for gene in 0..4 {
        if rng.random::<f64>() < MUTATION_P {
            let len = space.rungs(gene).len();
            if rng.random_bool(0.5) {
                if genome[gene] + 1 < len {
                    genome[gene] += 1;
                }
            } else if genome[gene] > 0 {
                genome[gene] -= 1;
            }
        }
    }
}

/// Evolves rung-index genomes with tournament selection, single-point
/// crossover, one-rung mutations, and elitism. Every candidate is repaired
/// to feasibility before scoring, so the search never wastes simulator runs.
pub fn genetic_search(
    space: &SearchSpace,
    scheduler: SchedulerKind,
    shape: &WorkloadShape,
    hw: &HardwareSpec,
    cores: usize,
    seed: u64,
) -> Result<SearchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = Evaluator::new(scheduler, shape, hw, cores);

    let mut pop: Vec<Genome> = (0..POPULATION)
        .map(|_| {
            let mut g = random_genome(space, &mut rng);
            repair(space, &eval, &mut g);
            g
        })
        .collect();
    let mut fitness: Vec<Option<ScoredTiling>> = Vec::with_capacity(POPULATION);
    for g in &pop {
        fitness.push(eval.score(space.tiling(*g))?);
    }

    for _ in 0..GENERATIONS {
        let mut order: Vec<usize> = (0..POPULATION).collect();
        order.sort_by(|&a, &b| {
            if better_opt(&fitness[a], &fitness[b]) {
                std::cmp::Ordering::Less
            } else if better_opt(&fitness[b], &fitness[a]) {
                std::cmp::Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        let mut next: Vec<Genome> = order.iter().take(ELITES).map(|&i| pop[i]).collect();

        let tournament = |rng: &mut ChaCha8Rng| -> Genome {
            let mut best = rng.random_range(0..POPULATION);
            for _ in 1..TOURNAMENT {
                let contender = rng.random_range(0..POPULATION);
                if better_opt(&fitness[contender], &fitness[best]) {
                    best = contender;
                }
            }
            pop[best]
        };

        while next.len() < POPULATION {
            let p1 = tournament(&mut rng);
            let p2 = tournament(&mut rng);
            let (mut c1, mut c2) = if rng.random::<f64>() < CROSSOVER_P {
                let point = rng.random_range(1..4);
                let mut a = p1;
                let mut b = p2;
                for gene in point..4 {
                    a[gene] = p2[gene];
                    b[gene] = p1[gene];
                }
                (a, b)
            } else {
                (p1, p2)
            };
            mutate(space, &mut rng, &mut c1);
            mutate(space, &mut rng, &mut c2);
            repair(space, &eval, &mut c1);
            repair(space, &eval, &mut c2);
            next.push(c1);
            if next.len() < POPULATION {
                next.push(c2);
            }
        }

        pop = next;
        fitness.clear();
        for g in &pop {
            fitness.push(eval.score(space.tiling(*g))?);
        }
    }

    eval.finish(TunerKind::Genetic, Some(seed))
}
