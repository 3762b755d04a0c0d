use crate::schedule::{BufferId, BufferKind, Priority};

/// Position in the memory arbitration order: the core whose pipeline a
/// task belongs to, then its dispatch priority read in the graph's drain
/// order. Space contention compares these keys, never raw priorities.
pub type ArbKey = (u16, Priority);

/// What the MAC engine on the requesting core is doing when the memory
/// guardian must find space for a softmax output block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacActivity {
    QkMatmul,
    PvMatmul,
    Idle,
}

/// One resident K or V tile the eviction policies may claim.
#[derive(Debug, Clone, Copy)]
pub struct VictimCandidate {
    pub buffer: BufferId,
    pub kind: BufferKind,
    pub bytes: u64,
    pub sub: u32,
    /// The tile is an operand of the task currently running on the
    /// requesting core's MAC engine; claiming it aborts that task.
    pub running_operand: bool,
    /// Place in the claim arbitration order of the earliest
    /// not-yet-finished consumer.
    pub consumer: Option<ArbKey>,
}

/// Claim order: biggest reclaim first, and among equals the highest slice
/// index, whose consumers lie furthest in the future.
fn claim_order(a: &VictimCandidate, b: &VictimCandidate) -> std::cmp::Ordering {
    b.bytes
        .cmp(&a.bytes)
        .then(b.sub.cmp(&a.sub))
        .then(a.buffer.cmp(&b.buffer))
}

fn take_until(
    ordered: Vec<usize>,
    cands: &[VictimCandidate],
    free: u64,
    demand: u64,
) -> Option<Vec<usize>> {
    let mut have = free;
    let mut victims = Vec::new();
    for i in ordered {
        if have >= demand {
            break;
        }
        have += cands[i].bytes;
        victims.push(i);
    }
    if have >= demand {
        Some(victims)
    } else {
        None
    }
}

/// Memory-guardian policy: a softmax needs `demand` bytes for its output
/// block and may claim K/V tiles, including operands of the same core's
/// running MAC task (which is then aborted and re-run). The class the MAC
/// engine is consuming goes first: its tiles are the ones whose reuse
/// window the pipeline has already passed. Returns indices into `cands`
/// in claim order, empty if `free` already covers the demand, or `None`
/// when even claiming everything would not be enough.
pub fn guardian_victims(
    cands: &[VictimCandidate],
    free: u64,
    demand: u64,
    activity: MacActivity,
) -> Option<Vec<usize>> {
    if free >= demand {
        return Some(Vec::new());
    }
    let primary = match activity {
        MacActivity::PvMatmul => Some(BufferKind::V),
        MacActivity::QkMatmul => Some(BufferKind::K),
        MacActivity::Idle => None,
    };
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = Some(cands[a].kind) != primary && primary.is_some();
        let pb = Some(cands[b].kind) != primary && primary.is_some();
        pa.cmp(&pb).then(claim_order(&cands[a], &cands[b]))
    });
    take_until(order, cands, free, demand)
}

/// Capacity policy for ordinary allocations (transfer targets and matmul
/// outputs): only tiles whose earliest waiting consumer runs strictly
/// after the requester may be claimed, so the frontmost schedulable work
/// never loses its own operands and progress is guaranteed. Running
/// operands are never touched and nothing is aborted.
pub fn capacity_victims(
    cands: &[VictimCandidate],
    free: u64,
    demand: u64,
    requester: ArbKey,
) -> Option<Vec<usize>> {
    if free >= demand {
        return Some(Vec::new());
    }
    let mut order: Vec<usize> = (0..cands.len())
        .filter(|&i| {
            !cands[i].running_operand
                && match cands[i].consumer {
                    Some(c) => c > requester,
                    None => true,
                }
        })
        .collect();
    order.sort_by(|&a, &b| claim_order(&cands[a], &cands[b]));
    take_until(order, cands, free, demand)
}

/// Last-resort policy used only when every engine is idle and nothing can
/// start: the frontmost schedulable task may claim any resident tile that
/// is not one of its own operands, ignoring consumer order, so a memory
/// sized right at the residency floor drains instead of wedging. Claimed
/// tiles still come back through ordinary reload transfers.
pub fn rescue_victims(
    cands: &[VictimCandidate],
    free: u64,
    demand: u64,
    excluded: &[BufferId],
) -> Option<Vec<usize>> {
    if free >= demand {
        return Some(Vec::new());
    }
    let mut order: Vec<usize> = (0..cands.len())
        .filter(|&i| !cands[i].running_operand && !excluded.contains(&cands[i].buffer))
        .collect();
    order.sort_by(|&a, &b| claim_order(&cands[a], &cands[b]));
    take_until(order, cands, free, demand)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(buffer: u32, kind: BufferKind, bytes: u64, sub: u32) -> VictimCandidate {
        VictimCandidate { buffer, kind, bytes, sub, running_operand: false, consumer: None }
    }

    #[test]
    fn no_claim_when_space_already_suffices() {
        let cands = [cand(0, BufferKind::V, 8192, 1)];
        let v = guardian_victims(&cands, 16384, 10240, MacActivity::Idle);
        assert_eq!(v, Some(vec![]), "demand below free space must claim nothing");
    }

    #[test]
    fn single_tile_claim_covers_small_shortfall() {
        let cands = [cand(0, BufferKind::V, 8192, 1), cand(1, BufferKind::V, 8192, 2)];
        let v = guardian_victims(&cands, 4096, 8192, MacActivity::PvMatmul)
            .expect("claim must succeed");
        assert_eq!(v.len(), 1, "one 8 KiB tile covers a 4 KiB shortfall");
    }

    #[test]
    fn shortfall_spanning_two_tiles_claims_highest_slices_first() {
        let cands = [cand(0, BufferKind::V, 8192, 1), cand(1, BufferKind::V, 8192, 2)];
        let v = guardian_victims(&cands, 0, 10240, MacActivity::PvMatmul)
            .expect("two tiles cover the demand");
        assert_eq!(v, vec![1, 0], "equal-size tiles fall in descending slice order");
    }

    #[test]
    fn unmeetable_demand_returns_none() {
        let cands = [cand(0, BufferKind::V, 4096, 1)];
        assert_eq!(guardian_victims(&cands, 0, 65536, MacActivity::Idle), None);
    }

    #[test]
    fn value_tiles_go_before_key_tiles_during_value_matmul() {
        let cands = [cand(0, BufferKind::K, 8192, 1), cand(1, BufferKind::V, 4096, 1)];
        let v = guardian_victims(&cands, 0, 4096, MacActivity::PvMatmul)
            .expect("claim must succeed");
        assert_eq!(v, vec![1], "the class the MAC is consuming is claimed first");
    }

    #[test]
    fn capacity_policy_spares_tiles_needed_sooner() {
        let requester: ArbKey = (0, (5, 5, 0, 0, 10));
        let mut early = cand(0, BufferKind::K, 8192, 1);
        early.consumer = Some((0, (4, 1, 1, 1, 2)));
        let mut late = cand(1, BufferKind::K, 8192, 2);
        late.consumer = Some((0, (9, 1, 1, 1, 3)));
        let v = capacity_victims(&[early, late], 0, 8192, requester)
            .expect("the later tile is claimable");
        assert_eq!(v, vec![1], "only tiles consumed after the requester may be claimed");
    }

    #[test]
    fn capacity_policy_ranks_cores_before_priorities() {
        let requester: ArbKey = (1, (1, 2, 0, 0, 10));
        let mut other_core = cand(0, BufferKind::V, 8192, 1);
        other_core.consumer = Some((0, (9, 9, 9, 3, 2)));
        let v = capacity_victims(&[other_core], 0, 8192, requester);
        assert_eq!(
            v, None,
            "a tile draining on an earlier core is safe from later cores at any priority"
        );
    }

    #[test]
    fn capacity_policy_never_touches_running_operands() {
        let mut c = cand(0, BufferKind::V, 8192, 1);
        c.running_operand = true;
        assert_eq!(capacity_victims(&[c], 0, 4096, (0, (9, 9, 9, 4, 9))), None);
    }

    #[test]
    fn rescue_policy_ignores_consumer_order_but_spares_own_operands() {
        let mut early = cand(0, BufferKind::K, 8192, 1);
        early.consumer = Some((0, (1, 1, 1, 1, 2)));
        let operand = cand(1, BufferKind::V, 8192, 1);
        let v = rescue_victims(&[early, operand], 0, 8192, &[1])
            .expect("the early-consumer tile is claimable in a rescue");
        assert_eq!(v, vec![0], "rescue may claim any tile except the requester's operands");
        assert_eq!(
            rescue_victims(&[operand], 0, 8192, &[1]),
            None,
            "a requester's own operand never covers its demand"
        );
    }
}
