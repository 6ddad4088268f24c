mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use v2g_sim::allocation::{allocate, redistribute_residual, safety_clamp, select_validator, stakes_for, AllocationConfig, EvSlotInput, StakeRecord};

#[test]
fn validator_frequencies_follow_stakes() {
    const DRAWS: usize = 100_000;
    let stakes: Vec<StakeRecord> =
        (0..3).map(|i| StakeRecord { ev_id: i, locked_energy: (i + 1) as f64, battery_age: 10.0 }).collect();
    let mut r = rng(21);
    let mut counts = [0usize; 3];
    for _ in 0..DRAWS {
        counts[select_validator(&stakes, &mut r).unwrap()] += 1;
    }
    let expected = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
    for (c, p) in counts.iter().zip(expected) {
        let f = *c as f64 / DRAWS as f64;
        assert!((f - p).abs() < 0.02, "frequency {f} vs {p}");
    }
    // Pearson goodness of fit against the multinomial expectation.
    let chi2: f64 = counts
        .iter()
        .zip(expected)
        .map(|(c, p)| {
            let e = p * DRAWS as f64;
            (*c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    assert!(p_value > 1e-3, "chi-square {chi2}, p = {p_value}");
}

#[test]
fn older_batteries_win_less_often() {
    let stakes = [
        StakeRecord { ev_id: 0, locked_energy: 5.0, battery_age: 0.0 },
        StakeRecord { ev_id: 1, locked_energy: 5.0, battery_age: 400.0 },
    ];
    let mut r = rng(22);
    let young = (0..20_000).filter(|_| select_validator(&stakes, &mut r).unwrap() == 0).count();
    // Scores 5 and 5 / 2.
    assert!((young as f64 / 20_000.0 - 2.0 / 3.0).abs() < 0.02, "{young}");
}

fn random_input(r: &mut impl Rng, id: usize) -> EvSlotInput {
    let energy = r.random_range(4.0..20.0);
    EvSlotInput {
        ev_id: id,
        connected: r.random_bool(0.85),
        energy,
        lower_next: energy - r.random_range(0.0..6.0),
        upper_next: energy + r.random_range(0.0..6.0),
        p_dis_max: -r.random_range(1.0..7.0),
        p_ch_max: r.random_range(1.0..7.0),
        efficiency: 1.0,
    }
}

/// Largest (or smallest) total power over a grid of per-EV powers that
/// respects every power limit and next-slot energy bound.
fn brute_force_extreme(inputs: &[EvSlotInput], charging: bool) -> f64 {
    const LEVELS: usize = 281;
    let options: Vec<Vec<f64>> = inputs
        .iter()
        .map(|i| {
            if !i.connected {
                return vec![0.0];
            }
            (0..LEVELS)
                .map(|j| i.p_dis_max + (i.p_ch_max - i.p_dis_max) * j as f64 / (LEVELS - 1) as f64)
                .filter(|p| {
                    let e = i.next_energy(*p, 1.0);
                    e >= i.lower_next - 1e-12 && e <= i.upper_next + 1e-12
                })
                .collect()
        })
        .collect();
    // Per-EV choices are independent, so the extreme sum is the sum of
    // per-EV extremes over the grid.
    options
        .iter()
        .map(|o| {
            if charging {
                o.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                o.iter().copied().fold(f64::INFINITY, f64::min)
            }
        })
        .sum()
}

#[test]
fn shortfall_leaves_maximum_transferable_power() {
    let cfg = AllocationConfig::default();
    let mut r = rng(23);
    let mut flagged = 0;
    for _ in 0..500 {
        let inputs: Vec<EvSlotInput> = (0..3).map(|i| random_input(&mut r, i)).collect();
        if !inputs.iter().any(|i| i.connected) {
            continue;
        }
        let charging = r.random_bool(0.5);
        let target = if charging { 30.0 } else { -30.0 };
        let proposed: Vec<f64> = inputs.iter().map(|i| if i.connected { target / 3.0 } else { 0.0 }).collect();
        let clamped: Vec<f64> = proposed.iter().zip(&inputs).map(|(p, i)| safety_clamp(*p, i, 1.0)).collect();
        let out = redistribute_residual(target, &clamped, &inputs, 1.0, &cfg);
        if out.residual.abs() < cfg.balance_tolerance {
            continue;
        }
        flagged += 1;
        let delivered: f64 = out.powers.iter().sum();
        let best = brute_force_extreme(&inputs, charging);
        // The grid step bounds how far the brute force can lag the optimum.
        let step = 14.0 / 280.0;
        assert!((delivered - best).abs() <= 3.0 * step, "delivered {delivered}, brute force {best}");
        if charging {
            assert!(delivered >= best - 1e-9);
        } else {
            assert!(delivered <= best + 1e-9);
        }
    }
    assert!(flagged > 100, "only {flagged} shortfalls exercised");
}

proptest! {
    #[test]
    fn feasible_requests_are_balanced_and_accepted(seed in 0u64..100_000, frac in 0.0..=1.0f64, n in 1usize..12) {
        let cfg = AllocationConfig::default();
        let mut r = rng(seed);
        let inputs: Vec<EvSlotInput> = (0..n).map(|i| random_input(&mut r, i)).collect();
        let (lo, hi) = inputs.iter().map(|i| i.power_box(1.0)).fold((0.0, 0.0), |(a, b), (l, h)| (a + l, b + h));
        let target = lo + frac * (hi - lo);
        prop_assume!(inputs.iter().any(|i| i.connected) && target.abs() > 1e-9);
        let ages: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let stakes = stakes_for(&inputs, &ages, &cfg);
        let p = allocate(0, target, &inputs, &stakes, &mut r, &cfg, 1.0).unwrap();
        prop_assert!(p.accepted);
        prop_assert!((p.final_kw.iter().sum::<f64>() - target).abs() < 1e-6);
        for (x, i) in p.final_kw.iter().zip(&inputs) {
            let (l, h) = i.power_box(1.0);
            prop_assert!(*x >= l - 1e-9 && *x <= h + 1e-9);
        }
        let v = p.validator.unwrap();
        prop_assert!(inputs.iter().any(|i| i.connected && i.ev_id == v));
    }
}
