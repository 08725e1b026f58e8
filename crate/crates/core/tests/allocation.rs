mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::instances::random_coalition;
use windpool_core::allocation::{
    audit_core, audit_superadditivity, characteristic_value, expected_allocation, expost_shares,
};
use windpool_core::market::{solve_offer, PriceTriple};

fn allocate(bottom: &[Vec<f64>], p: &PriceTriple, cap: f64) -> Vec<f64> {
    let agg: Vec<f64> = bottom.iter().map(|r| r.iter().sum()).collect();
    let sol = solve_offer(&agg, p, cap).unwrap();
    expected_allocation(bottom, &agg, &sol).unwrap().a
}

#[test]
fn allocation_is_positively_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let inst = random_coalition(&mut rng, 4, 12);
        let a = allocate(&inst.bottom, &inst.prices, inst.total_capacity());
        let scale = rng.random_range(0.5..3.0);
        let scaled: Vec<Vec<f64>> = inst
            .bottom
            .iter()
            .map(|r| r.iter().map(|v| v * scale).collect())
            .collect();
        let b = allocate(&scaled, &inst.prices, inst.total_capacity() * scale);
        for (x, y) in a.iter().zip(&b) {
            assert!((x * scale - y).abs() <= 1e-8 * (1.0 + y.abs()), "{x} {y}");
        }
    }
}

#[test]
fn identical_producers_share_equally() {
    let rows: Vec<Vec<f64>> = [3.0, 9.0, 1.0, 7.0, 4.0]
        .iter()
        .map(|v| vec![*v; 3])
        .collect();
    let a = allocate(&rows, &PriceTriple::reference(), 30.0);
    assert!((a[0] - a[1]).abs() < 1e-12 && (a[1] - a[2]).abs() < 1e-12);
    let single = characteristic_value(&[0], &rows, &PriceTriple::reference(), &[10.0; 3]).unwrap();
    assert!((a[0] - single).abs() < 1e-9);
}

#[test]
fn pooling_never_costs_more() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let m = rng.random_range(2..=5);
        let inst = random_coalition(&mut rng, m, 10);
        let audit = audit_superadditivity(&inst.bottom, &inst.prices, &inst.capacities, 1000, 1).unwrap();
        assert!(audit.passed, "gap {}", audit.worst_violation);
        let a = allocate(&inst.bottom, &inst.prices, inst.total_capacity());
        let core = audit_core(&a, &inst.bottom, &inst.prices, &inst.capacities, 0, 0).unwrap();
        assert!(core.is_core, "violation {}", core.worst_violation);
    }
}

#[test]
fn shares_follow_allocation_and_balance() {
    let c = expost_shares(&[1.0, 3.0], 40.0, &[5.0, 5.0]);
    assert_eq!(c, vec![10.0, 30.0]);
    let fallback = expost_shares(&[0.0, 0.0], 12.0, &[1.0, 2.0]);
    assert_eq!(fallback.iter().sum::<f64>(), 12.0);
    assert!((fallback[0] - 4.0).abs() < 1e-12);
    let equal = expost_shares(&[0.0, 0.0, 0.0], 9.0, &[0.0; 3]);
    assert_eq!(equal, vec![3.0, 3.0, 3.0]);
}
