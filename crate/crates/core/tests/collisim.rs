use latentode::collisim::{self, Particle, SimConfig};
use proptest::prelude::*;

fn particle(position: [f64; 2], velocity: [f64; 2]) -> Particle {
    Particle {
        position,
        velocity,
        radius: 0.05,
        mass: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pair_collisions_conserve_momentum_and_energy(
        angle in 0.0..std::f64::consts::TAU,
        u1 in prop::array::uniform2(-1.0..1.0f64),
        u2 in prop::array::uniform2(-1.0..1.0f64),
    ) {
        let d = [0.09 * angle.cos(), 0.09 * angle.sin()];
        let a = particle([0.5, 0.5], u1);
        let b = particle([0.5 + d[0], 0.5 + d[1]], u2);
        let (na, nb) = collisim::resolve_pair_collision(&a, &b).unwrap();
        let scale = 1.0 + u1[0].hypot(u1[1]) + u2[0].hypot(u2[1]);
        for k in 0..2 {
            prop_assert!((na.velocity[k] + nb.velocity[k] - u1[k] - u2[k]).abs() < 1e-12 * scale);
        }
        let before = a.kinetic_energy() + b.kinetic_energy();
        let after = na.kinetic_energy() + nb.kinetic_energy();
        prop_assert!((after - before).abs() <= 1e-12 * before.max(1e-300));
    }

    #[test]
    fn tangential_velocity_is_untouched(
        u1 in prop::array::uniform2(-1.0..1.0f64),
        u2 in prop::array::uniform2(-1.0..1.0f64),
    ) {
        // Line of centres along x: y components must survive unchanged.
        let (na, nb) = collisim::resolve_pair_collision(
            &particle([0.4, 0.5], u1),
            &particle([0.49, 0.5], u2),
        )
        .unwrap();
        prop_assert_eq!(na.velocity[1], u1[1]);
        prop_assert_eq!(nb.velocity[1], u2[1]);
        prop_assert!((na.velocity[0] - u2[0]).abs() < 1e-15);
        prop_assert!((nb.velocity[0] - u1[0]).abs() < 1e-15);
    }

    #[test]
    fn particles_stay_inside_the_box(seed in 0u64..1000, speed in 0.001..0.05f64) {
        let cfg = SimConfig { n_steps: 300, seed, speed_scale: speed, ..SimConfig::default() };
        let t = collisim::run(&cfg).unwrap();
        for &v in t.features.as_slice() {
            prop_assert!(v >= cfg.radius - 1e-12 && v <= 1.0 - cfg.radius + 1e-12);
        }
    }
}

#[test]
fn head_on_equal_masses_swap_velocities() {
    let (a, b) = collisim::resolve_pair_collision(
        &particle([0.3, 0.5], [0.2, 0.0]),
        &particle([0.38, 0.5], [-0.1, 0.0]),
    )
    .unwrap();
    assert!((a.velocity[0] + 0.1).abs() < 1e-15 && a.velocity[1] == 0.0);
    assert!((b.velocity[0] - 0.2).abs() < 1e-15 && b.velocity[1] == 0.0);
}

#[test]
fn coincident_centres_are_degenerate() {
    let p = particle([0.5, 0.5], [0.1, 0.0]);
    assert!(matches!(
        collisim::resolve_pair_collision(&p, &p),
        Err(latentode::Error::DegenerateGeometry(_))
    ));
}

#[test]
fn runs_are_reproducible_per_seed() {
    let cfg = SimConfig {
        n_steps: 200,
        seed: 11,
        ..SimConfig::default()
    };
    let a = collisim::run(&cfg).unwrap();
    let b = collisim::run(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_frames(), 200);
    assert_eq!(a.n_particles(), 5);
    let other = collisim::run(&SimConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.features, other.features);
}

#[test]
fn kinetic_energy_is_constant_over_a_long_run() {
    let cfg = SimConfig {
        n_steps: 5000,
        speed_scale: 0.02,
        seed: 5,
        ..SimConfig::default()
    };
    let (_, stats) = collisim::run_with_stats(&cfg).unwrap();
    assert!(stats.collisions > 0 && stats.wall_reflections > 0);
    assert!(stats.max_energy_drift < 1e-9);
}

#[test]
fn crowded_box_is_a_config_error() {
    let cfg = SimConfig {
        n_particles: 400,
        ..SimConfig::default()
    };
    assert!(matches!(collisim::run(&cfg), Err(latentode::Error::Config(_))));
}
