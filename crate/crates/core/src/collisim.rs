//! Equal-mass elastic collisions of disks in a rectangular box.
//!
//! Fixed-step integration: advance, reflect off walls, then resolve every
//! overlapping pair in ascending `(i, j)` order. Velocities of a colliding
//! pair exchange their components along the line of centres; overlapping
//! pairs are pushed apart symmetrically along that line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trajkit::TrajectorySet;

const COINCIDENT: f64 = 1e-12;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub radius: f64,
    pub mass: f64,
}

impl Particle {
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * (self.velocity[0].powi(2) + self.velocity[1].powi(2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_particles: usize,
    pub box_w: f64,
    pub box_h: f64,
    pub radius: f64,
    pub mass: f64,
    /// Initial velocity components are uniform in `[-speed_scale, speed_scale]`.
    pub speed_scale: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Side of the centred square (as a fraction of the box) in which
    /// particles start. 1.0 uses the whole box.
    pub spawn_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_particles: 5,
            box_w: 1.0,
            box_h: 1.0,
            radius: 0.04,
            mass: 1.0,
            speed_scale: 0.005,
            dt: 1.0,
            n_steps: 500,
            seed: 0,
            spawn_fraction: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        if !(self.radius > 0.0) || !(self.mass > 0.0) {
            return bad("radius and mass must be positive".into());
        }
        if !(self.box_w > 4.0 * self.radius) || !(self.box_h > 4.0 * self.radius) {
            return bad(format!(
                "box {}x{} must exceed 4 radii ({})",
                self.box_w,
                self.box_h,
                4.0 * self.radius
            ));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.speed_scale >= 0.0) || !(self.spawn_fraction > 0.0 && self.spawn_fraction <= 1.0) {
            return bad("speed_scale must be >= 0 and spawn_fraction in (0, 1]".into());
        }
        Ok(())
    }
}

/// Mutable simulation state. The RNG is only consulted for coincident-centre jitter.
#[derive(Clone, Debug)]
pub struct SimState {
    pub particles: Vec<Particle>,
    rng: ChaCha8Rng,
}

/// Conservation bookkeeping for one resolved pair collision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionRecord {
    pub i: usize,
    pub j: usize,
    /// Max componentwise |(v1+v2) - (u1+u2)| divided by (|u1| + |u2|).
    pub momentum_error: f64,
    /// |KE_after - KE_before| / KE_before.
    pub energy_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub collisions: Vec<CollisionRecord>,
    pub wall_reflections: usize,
    pub separations: usize,
}

pub fn init_state(config: &SimConfig) -> Result<SimState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = config.radius;
    let (cx, cy) = (config.box_w / 2.0, config.box_h / 2.0);
    let half_w = (config.box_w * config.spawn_fraction / 2.0).min(cx - r);
    let half_h = (config.box_h * config.spawn_fraction / 2.0).min(cy - r);
    let mut particles: Vec<Particle> = Vec::with_capacity(config.n_particles);
    for n in 0..config.n_particles {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = [
                cx + rng.random_range(-1.0..=1.0) * half_w,
                cy + rng.random_range(-1.0..=1.0) * half_h,
            ];
            if particles.iter().all(|q| distance(p, q.position) > 2.0 * r) {
                placed = Some(p);
                break;
            }
        }
        let position = placed.ok_or_else(|| {
            Error::Config(format!(
                "could not place particle {} of {} without overlap; box too crowded",
                n + 1,
                config.n_particles
            ))
        })?;
        particles.push(Particle {
            position,
            velocity: [0.0, 0.0],
            radius: r,
            mass: config.mass,
        });
    }
    // velocities drawn after placement so rejection retries do not shift them
    for p in &mut particles {
        p.velocity = [
            rng.random_range(-1.0..=1.0) * config.speed_scale,
            rng.random_range(-1.0..=1.0) * config.speed_scale,
        ];
    }
    Ok(SimState { particles, rng })
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Exchanges the velocity components along the line of centres of two
/// equal-mass particles. Tangential components are untouched.
pub fn resolve_pair_collision(p1: &Particle, p2: &Particle) -> Result<(Particle, Particle)> {
    let d = [p2.position[0] - p1.position[0], p2.position[1] - p1.position[1]];
    let dist = d[0].hypot(d[1]);
    if dist < COINCIDENT {
        return Err(Error::DegenerateGeometry(format!(
            "coincident centres at ({}, {})",
            p1.position[0], p1.position[1]
        )));
    }
    debug_assert!((p1.mass - p2.mass).abs() <= 1e-12 * p1.mass.max(p2.mass));
    let n = [d[0] / dist, d[1] / dist];
    let rel = (p1.velocity[0] - p2.velocity[0]) * n[0] + (p1.velocity[1] - p2.velocity[1]) * n[1];
    let mut a = *p1;
    let mut b = *p2;
    a.velocity = [p1.velocity[0] - rel * n[0], p1.velocity[1] - rel * n[1]];
    b.velocity = [p2.velocity[0] + rel * n[0], p2.velocity[1] + rel * n[1]];
    Ok((a, b))
}

fn collision_record(i: usize, j: usize, before: (&Particle, &Particle), after: (&Particle, &Particle)) -> CollisionRecord {
    let (u1, u2) = (before.0.velocity, before.1.velocity);
    let (v1, v2) = (after.0.velocity, after.1.velocity);
    let scale = u1[0].hypot(u1[1]) + u2[0].hypot(u2[1]);
    let mom = (0..2)
        .map(|k| ((v1[k] + v2[k]) - (u1[k] + u2[k])).abs())
        .fold(0.0, f64::max);
    let ke_before = before.0.kinetic_energy() + before.1.kinetic_energy();
    let ke_after = after.0.kinetic_energy() + after.1.kinetic_energy();
    CollisionRecord {
        i,
        j,
        momentum_error: if scale > 0.0 { mom / scale } else { mom },
        energy_error: if ke_before > 0.0 {
            (ke_after - ke_before).abs() / ke_before
        } else {
            ke_after.abs()
        },
    }
}

fn clamp_into_box(p: &mut Particle, config: &SimConfig) {
    let r = p.radius;
    p.position[0] = p.position[0].clamp(r, config.box_w - r);
    p.position[1] = p.position[1].clamp(r, config.box_h - r);
}

/// Advances one step in place and reports the collisions it resolved.
pub fn step(state: &mut SimState, config: &SimConfig) -> StepReport {
    let mut report = StepReport::default();
    let bounds = [config.box_w, config.box_h];

    for p in &mut state.particles {
        for (k, &bound) in bounds.iter().enumerate() {
            p.position[k] += p.velocity[k] * config.dt;
            let r = p.radius;
            if p.position[k] <= r && p.velocity[k] < 0.0
                || p.position[k] >= bound - r && p.velocity[k] > 0.0
            {
                p.velocity[k] = -p.velocity[k];
                report.wall_reflections += 1;
            }
        }
        clamp_into_box(p, config);
    }

    let n = state.particles.len();
    for i in 0..n {
        for j in i + 1..n {
            let (head, tail) = state.particles.split_at_mut(j);
            let (a, b) = (&mut head[i], &mut tail[0]);
            let contact = a.radius + b.radius;
            let mut dist = distance(a.position, b.position);
            if dist >= contact {
                continue;
            }
            if dist < COINCIDENT {
                let angle = state.rng.random_range(0.0..std::f64::consts::TAU);
                let nudge = 1e-9 * contact;
                b.position[0] += nudge * angle.cos();
                b.position[1] += nudge * angle.sin();
                dist = distance(a.position, b.position);
            }
            let nrm = [
                (b.position[0] - a.position[0]) / dist,
                (b.position[1] - a.position[1]) / dist,
            ];
            let approaching = (a.velocity[0] - b.velocity[0]) * nrm[0]
                + (a.velocity[1] - b.velocity[1]) * nrm[1]
                > 0.0;
            if approaching {
                if let Ok((na, nb)) = resolve_pair_collision(a, b) {
                    report.collisions.push(collision_record(i, j, (a, b), (&na, &nb)));
                    a.velocity = na.velocity;
                    b.velocity = nb.velocity;
                }
            }
            let push = 0.5 * (contact - dist);
            a.position[0] -= push * nrm[0];
            a.position[1] -= push * nrm[1];
            b.position[0] += push * nrm[0];
            b.position[1] += push * nrm[1];
            clamp_into_box(a, config);
            clamp_into_box(b, config);
            report.separations += 1;
        }
    }
    report
}

pub fn total_kinetic_energy(particles: &[Particle]) -> f64 {
    particles.iter().map(Particle::kinetic_energy).sum()
}

/// Aggregate conservation statistics of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimStats {
    pub collisions: usize,
    pub wall_reflections: usize,
    pub separations: usize,
    pub max_momentum_error: f64,
    pub max_energy_error: f64,
    /// max over steps of |KE(t) - KE(0)| / KE(0).
    pub max_energy_drift: f64,
}

fn positions_row(particles: &[Particle], row: &mut [f64]) {
    for (k, p) in particles.iter().enumerate() {
        row[2 * k] = p.position[0];
        row[2 * k + 1] = p.position[1];
    }
}

/// Runs `n_steps` rows: row 0 is the initial state, each later row one step on.
pub fn run(config: &SimConfig) -> Result<TrajectorySet> {
    run_with_stats(config).map(|(t, _)| t)
}

pub fn run_with_stats(config: &SimConfig) -> Result<(TrajectorySet, SimStats)> {
    if config.n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let mut state = init_state(config)?;
    let k = config.n_particles;
    let mut features = Matrix::zeros(config.n_steps, 2 * k);
    positions_row(&state.particles, features.row_mut(0));
    let ke0 = total_kinetic_energy(&state.particles);
    let mut stats = SimStats::default();
    for r in 1..config.n_steps {
        let rep = step(&mut state, config);
        stats.collisions += rep.collisions.len();
        stats.wall_reflections += rep.wall_reflections;
        stats.separations += rep.separations;
        for c in &rep.collisions {
            stats.max_momentum_error = stats.max_momentum_error.max(c.momentum_error);
            stats.max_energy_error = stats.max_energy_error.max(c.energy_error);
        }
        if ke0 > 0.0 {
            let drift = (total_kinetic_energy(&state.particles) - ke0).abs() / ke0;
            stats.max_energy_drift = stats.max_energy_drift.max(drift);
        }
        positions_row(&state.particles, features.row_mut(r));
    }
    let t = TrajectorySet::with_default_ids(features, 1.0 / config.dt)?;
    Ok((t, stats))
}
