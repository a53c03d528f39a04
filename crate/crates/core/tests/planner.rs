mod common;

use common::random_instance;
use cqstream::dp::{
    brute_force_plan, buffer_step, plan, BufferGrid, FinalBuffer, PlanError, PlanRequest,
};
use cqstream::ladder::Level;
use cqstream::utility::Objective;
use proptest::prelude::*;

fn objectives() -> [Objective; 4] {
    [
        Objective::max_mean(),
        Objective::max_min(),
        Objective::alpha_fair(1.0),
        Objective::alpha_fair(2.0).with_switching(0.8),
    ]
}

#[test]
fn matches_exhaustive_search_on_seeded_instances() {
    let mut feasible = 0;
    for seed in 0..200 {
        let inst = random_instance(seed);
        for obj in objectives() {
            let req = inst.request(obj);
            match (plan(&req), brute_force_plan(&req)) {
                (Ok(a), Ok(b)) => {
                    assert_eq!(a.achieved_utility, b.achieved_utility, "seed {seed} {obj}");
                    assert_eq!(a.levels, b.levels, "seed {seed} {obj}");
                    assert_eq!(a.b_offset, b.b_offset, "seed {seed} {obj}");
                    feasible += 1;
                }
                (Err(PlanError::Infeasible { .. }), Err(PlanError::Infeasible { .. })) => {}
                (a, b) => panic!("seed {seed} {obj}: {a:?} vs {b:?}"),
            }
        }
    }
    assert!(feasible > 400, "too few feasible instances: {feasible}");
}

#[test]
fn trajectory_is_consistent_and_bounded() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        for obj in objectives() {
            let Ok(r) = plan(&inst.request(obj)) else {
                continue;
            };
            let g = inst.grid;
            assert_eq!(r.trajectory.len(), inst.window.len() + 1);
            assert_eq!(r.trajectory[0], inst.b_init);
            for (m, w) in r.trajectory.windows(2).enumerate() {
                assert_eq!(
                    w[1],
                    buffer_step(w[0], r.bitrates[m], inst.bandwidth, inst.tau)
                );
            }
            for &b in &r.trajectory {
                assert!(
                    b >= g.b_low() && b <= g.b_high(),
                    "seed {seed}: {b} outside grid"
                );
            }
            for (m, &l) in r.levels.iter().enumerate() {
                assert_eq!(r.bitrates[m], inst.window[m][l].bitrate_bps);
                assert_eq!(r.qualities[m], inst.window[m][l].quality);
            }
        }
    }
}

#[test]
fn transition_count_is_bounded() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let h = inst.window.len() as u64;
        let l = inst.window.iter().map(Vec::len).max().unwrap() as u64;
        let k = inst.grid.bins() as u64;
        if let Ok(r) = plan(&inst.request(Objective::max_mean())) {
            assert!(
                r.transitions <= h * k * l,
                "seed {seed}: {} > {}",
                r.transitions,
                h * k * l
            );
        }
    }
}

#[test]
fn zero_offset_means_target_bin_reached() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let FinalBuffer::Target(b_final) = inst.b_final else {
            continue;
        };
        for obj in objectives() {
            let Ok(r) = plan(&inst.request(obj)) else {
                continue;
            };
            let last = *r.trajectory.last().unwrap();
            if r.b_offset == 0.0 {
                assert_eq!(inst.grid.bin(last), inst.grid.bin(b_final), "seed {seed}");
            } else {
                assert_ne!(inst.grid.bin(last), inst.grid.bin(b_final), "seed {seed}");
            }
        }
    }
}

#[test]
fn oracle_refuses_huge_instances() {
    let window = vec![
        vec![
            Level::new(1e6, 1.0),
            Level::new(2e6, 2.0),
            Level::new(3e6, 3.0)
        ];
        16
    ];
    let req = PlanRequest {
        b_init: 5.0,
        b_final: FinalBuffer::Free,
        grid: BufferGrid::new(0.0, 10.0, 10).unwrap(),
        tau: 1.0,
        bandwidth_bps: 2e6,
        window: &window,
        objective: Objective::max_mean(),
        prev_level: None,
    };
    assert!(matches!(
        brute_force_plan(&req),
        Err(PlanError::InstanceTooLarge { .. })
    ));
    assert!(plan(&req).is_ok());
}

/// Widening the grid by whole bins on both sides keeps every original bin
/// edge, so every plan of the narrow grid is still available.
#[test]
fn wider_bounds_never_hurt() {
    let mut checked = 0;
    for seed in 0..200 {
        let inst = random_instance(seed);
        let g = inst.grid;
        let db = g.delta_b();
        let extra = 1 + (seed as usize % 20);
        let lo = (g.b_low() - extra as f64 * db).max(0.0);
        let added_low = ((g.b_low() - lo) / db + 1e-9).floor() as usize;
        let lo = g.b_low() - added_low as f64 * db;
        let wide = BufferGrid::new(
            lo,
            g.b_high() + extra as f64 * db,
            g.bins() + added_low + extra,
        )
        .unwrap();
        for obj in [Objective::max_mean(), Objective::max_min()] {
            let narrow = inst.request(obj);
            let Ok(a) = plan(&narrow) else { continue };
            let mut wide_req = narrow.clone();
            wide_req.grid = wide;
            wide_req.b_final = FinalBuffer::Free;
            let mut narrow_free = narrow.clone();
            narrow_free.b_final = FinalBuffer::Free;
            let a = plan(&narrow_free).unwrap_or(a);
            let b = plan(&wide_req).unwrap();
            assert!(
                b.achieved_utility >= a.achieved_utility,
                "seed {seed} {obj}: {} < {}",
                b.achieved_utility,
                a.achieved_utility
            );
            checked += 1;
        }
    }
    assert!(checked > 100);
}

proptest! {
    #[test]
    fn plan_is_deterministic(seed in any::<u64>()) {
        let inst = random_instance(seed);
        for obj in objectives() {
            let req = inst.request(obj);
            prop_assert_eq!(plan(&req), plan(&req));
        }
    }

    #[test]
    fn stored_buffers_fall_in_their_bins(seed in any::<u64>()) {
        let inst = random_instance(seed);
        if let Ok(r) = plan(&inst.request(Objective::max_mean())) {
            for &b in &r.trajectory {
                let k = inst.grid.bin(b).unwrap();
                let (lo, hi) = inst.grid.interval(k);
                prop_assert!(b >= lo - 1e-9 && b <= hi + 1e-9);
            }
        }
    }
}
