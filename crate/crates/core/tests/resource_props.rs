use proptest::prelude::*;
use qfw_core::qpm::procs_for_circuit;
use qfw_core::resource::{partition_pool, Grant, InstanceId, NodeSpec, PoolState};

#[derive(Debug, Clone)]
enum Op {
    Request(usize),
    /// Release the active instance at this index (modulo the active count).
    Release(usize),
    /// Cancel the queued request at this index.
    Cancel(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (1usize..=16).prop_map(Op::Request),
        4 => any::<usize>().prop_map(Op::Release),
        1 => any::<usize>().prop_map(Op::Cancel),
    ]
}

fn pool() -> impl Strategy<Value = Vec<NodeSpec>> {
    prop::collection::vec(1usize..=8, 1..=4).prop_map(|slots| {
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| NodeSpec::new(format!("node{}", i + 1), s))
            .collect()
    })
}

/// Apply `ops`, checking invariants after each, then drain. Returns the
/// number of operations applied.
fn churn(nodes: Vec<NodeSpec>, ops: &[Op]) -> Result<usize, TestCaseError> {
    let mut state = PoolState::new(nodes).unwrap();
    let cap = state.capacity();
    let mut active: Vec<InstanceId> = Vec::new();
    let mut queued: Vec<InstanceId> = Vec::new();
    for op in ops {
        match *op {
            Op::Request(p) => match state.request(p) {
                Ok(Grant::Placed(pl)) => {
                    prop_assert_eq!(pl.procs(), p);
                    prop_assert!(queued.is_empty(), "placement overtook a queued request");
                    active.push(pl.instance_id);
                }
                Ok(Grant::Queued { instance_id, position }) => {
                    prop_assert_eq!(position, queued.len());
                    queued.push(instance_id);
                }
                Err(_) => prop_assert!(p > cap),
            },
            Op::Release(i) if !active.is_empty() => {
                let id = active.swap_remove(i % active.len());
                let before = state.utilization().allocated();
                let summary = state.release(id).unwrap();
                let freed: usize = summary.freed.iter().map(|(_, n)| n).sum();
                let granted: usize = summary.granted.iter().map(|p| p.procs()).sum();
                prop_assert_eq!(state.utilization().allocated(), before - freed + granted);
                for g in summary.granted {
                    // grants come off the head of the queue in order
                    prop_assert_eq!(queued.remove(0), g.instance_id);
                    active.push(g.instance_id);
                }
            }
            Op::Cancel(i) if !queued.is_empty() => {
                let id = queued.remove(i % queued.len());
                state.cancel(id).unwrap();
            }
            _ => {}
        }
        state.check_invariants().map_err(TestCaseError::fail)?;
        prop_assert!(state.utilization().allocated() <= cap);
    }
    while let Some(id) = active.pop() {
        for g in state.release(id).unwrap().granted {
            queued.retain(|q| *q != g.instance_id);
            active.push(g.instance_id);
        }
        state.check_invariants().map_err(TestCaseError::fail)?;
    }
    prop_assert!(queued.is_empty());
    prop_assert_eq!(state.queue_len(), 0);
    prop_assert_eq!(state.free(), cap);
    Ok(ops.len())
}

proptest! {
    #[test]
    fn conservation_under_churn(nodes in pool(), ops in prop::collection::vec(op(), 0..500)) {
        churn(nodes, &ops)?;
    }

    #[test]
    fn try_place_never_queues(nodes in pool(), reqs in prop::collection::vec(1usize..=8, 0..40)) {
        let mut state = PoolState::new(nodes).unwrap();
        for p in reqs {
            let free = state.free();
            match state.try_place(p) {
                Ok(Some(pl)) => prop_assert_eq!(state.free(), free - pl.procs()),
                Ok(None) => prop_assert!(free < p),
                Err(_) => prop_assert!(p > state.capacity()),
            }
            prop_assert_eq!(state.queue_len(), 0);
        }
    }

    #[test]
    fn procs_heuristic_is_monotone(a in 1usize..10_000, b in 1usize..10_000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(procs_for_circuit(lo) <= procs_for_circuit(hi));
        prop_assert_eq!(procs_for_circuit(a), a.div_ceil(10));
    }

    #[test]
    fn partitions_cover_the_pool(nodes in pool(), k in 1usize..=4) {
        let total: usize = nodes.iter().map(|n| n.slots).sum();
        prop_assume!(k <= total);
        let parts = partition_pool(&nodes, 1.0 / k as f64).unwrap();
        prop_assert_eq!(parts.len(), k);
        let covered: usize = parts.iter().flatten().map(|n| n.slots).sum();
        prop_assert_eq!(covered, total);
        prop_assert!(parts.iter().all(|p| p.iter().map(|n| n.slots).sum::<usize>() >= 1));
    }
}
