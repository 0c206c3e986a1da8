//! Cross-module invariants.

use pvsearch_core::inference::{default_lambda_grid, exclusion_curve, field_to_coupling, ForwardModel};
use pvsearch_core::{Channel, ForceRange, RotorConfig};
use proptest::prelude::*;

fn coarse() -> ForwardModel {
    ForwardModel::lead(Channel::neutron_ne(), 4).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coupling_round_trip(log_g in -40.0f64..-34.0, lambda in 0.05f64..100.0) {
        let model = coarse();
        let l = ForceRange::new(lambda).unwrap();
        let g = 10f64.powf(log_g);
        let b = g * model.weighted_amplitude(l).unwrap();
        let back = field_to_coupling(b, l, &model).unwrap();
        prop_assert!(((back - g) / g).abs() < 1e-12);
    }

    #[test]
    // Advancing every block by the same angle is a shift of the time origin.
    fn limits_ignore_the_time_origin(offset in 0.0f64..std::f64::consts::TAU) {
        let base = coarse();
        let shifted = ForwardModel {
            rotor: RotorConfig {
                block_phase_offsets: base.rotor.block_phase_offsets.iter().map(|o| (o + offset).rem_euclid(std::f64::consts::TAU)).collect(),
                ..base.rotor.clone()
            },
            ..base.clone()
        };
        let grid = [0.1, 1.0, 10.0];
        let a = exclusion_curve(1e-18, &grid, &base, 0.95).unwrap();
        let b = exclusion_curve(1e-18, &grid, &shifted, 0.95).unwrap();
        for (x, y) in a.g_limit.iter().zip(&b.g_limit) {
            prop_assert!(((x - y) / x).abs() < 1e-3, "{x} vs {y}");
        }
    }
}

#[test]
fn limits_weaken_at_short_range() {
    let curve = exclusion_curve(1e-18, &default_lambda_grid(), &coarse(), 0.95).unwrap();
    assert!(curve.g_limit.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}
