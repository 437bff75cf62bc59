//! Toy ground-truth particle simulators and the on-disk dataset.
//!
//! Two scenarios are provided, both in a closed 2D box under gravity with
//! short-range pairwise repulsion, linear drag and damped wall reflection:
//!
//! - `gravity_bounce`: independent granules scattered through the box.
//! - `springs`: a lattice blob whose neighbors are joined by damped springs
//!   fixed at the initial configuration (a crude elastic "goop").
//!
//! Integration is symplectic Euler with several substeps per stored frame.

mod dataset;
mod format;

pub use dataset::{make_dataset, Dataset, Manifest, Split, SplitCounts};
pub use format::{Trajectory, TRAJECTORY_VERSION};

pub use crate::features::{BoxBounds, Material};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    GravityBounce,
    Springs,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::GravityBounce => "gravity-bounce",
            ScenarioKind::Springs => "springs",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = GnsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gravity-bounce" | "gravity_bounce" => Ok(ScenarioKind::GravityBounce),
            "springs" => Ok(ScenarioKind::Springs),
            other => Err(GnsError::Config(format!(
                "unknown scenario {other:?} (expected gravity-bounce or springs)"
            ))),
        }
    }
}

/// Physical setup of a family of trajectories. Units: box side ≈ 1, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub bounds: BoxBounds,
    /// Inclusive range of the particle count.
    pub particles: [usize; 2],
    /// Stored frames per trajectory.
    pub frames: usize,
    /// Seconds between stored frames.
    pub dt: f64,
    pub substeps: usize,
    /// Range of the gravitational acceleration, drawn per trajectory.
    pub gravity: [f64; 2],
    /// Linear drag coefficient (1/s).
    pub drag: f64,
    /// Fraction of normal velocity kept when bouncing off a wall.
    pub restitution: f64,
    pub repulsion_radius: f64,
    pub repulsion_stiffness: f64,
    /// Damping of the relative normal velocity of touching particles.
    pub contact_damping: f64,
    pub spring_stiffness: f64,
    pub spring_damping: f64,
    /// Pairs closer than this at the start are joined by springs.
    pub spring_radius: f64,
    pub lattice_spacing: f64,
    /// Standard deviation of initial velocities per axis.
    pub initial_speed: f64,
    /// Suggested connectivity radius for learned models.
    pub connectivity_radius: f64,
}

impl Scenario {
    pub fn gravity_bounce() -> Self {
        Scenario {
            kind: ScenarioKind::GravityBounce,
            bounds: BoxBounds::unit(2),
            particles: [80, 120],
            frames: 200,
            dt: 0.005,
            substeps: 4,
            gravity: [4.0, 6.0],
            drag: 0.3,
            restitution: 0.6,
            repulsion_radius: 0.04,
            repulsion_stiffness: 2000.0,
            contact_damping: 4.0,
            spring_stiffness: 0.0,
            spring_damping: 0.0,
            spring_radius: 0.0,
            lattice_spacing: 0.0,
            initial_speed: 0.5,
            connectivity_radius: 0.09,
        }
    }

    pub fn springs() -> Self {
        Scenario {
            kind: ScenarioKind::Springs,
            particles: [80, 120],
            repulsion_radius: 0.035,
            spring_stiffness: 600.0,
            spring_damping: 2.0,
            spring_radius: 0.06,
            lattice_spacing: 0.04,
            initial_speed: 0.3,
            // diagonal springs (0.057) sit two graph hops apart
            connectivity_radius: 0.045,
            ..Scenario::gravity_bounce()
        }
    }

    pub fn for_kind(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::GravityBounce => Scenario::gravity_bounce(),
            ScenarioKind::Springs => Scenario::springs(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn material(&self) -> Material {
        match self.kind {
            ScenarioKind::GravityBounce => Material::Sand,
            ScenarioKind::Springs => Material::Goop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.bounds.dim() != 2 {
            return Err(GnsError::Config("scenarios are two-dimensional".into()));
        }
        let positive = [
            ("dt", self.dt),
            ("repulsion_radius", self.repulsion_radius),
            ("connectivity_radius", self.connectivity_radius),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(GnsError::Config(format!("{name} must be positive, got {v}")));
        }
        let non_negative = [
            ("drag", self.drag),
            ("repulsion_stiffness", self.repulsion_stiffness),
            ("contact_damping", self.contact_damping),
            ("spring_stiffness", self.spring_stiffness),
            ("spring_damping", self.spring_damping),
            ("initial_speed", self.initial_speed),
        ];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(GnsError::Config(format!("{name} must be non-negative, got {v}")));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(GnsError::Config("restitution must lie in [0, 1]".into()));
        }
        if self.frames < 2 || self.substeps < 1 {
            return Err(GnsError::Config("need frames >= 2 and substeps >= 1".into()));
        }
        if self.particles[0] < 1 || self.particles[0] > self.particles[1] {
            return Err(GnsError::Config(format!("bad particle range {:?}", self.particles)));
        }
        if self.gravity[0] > self.gravity[1] {
            return Err(GnsError::Config(format!("bad gravity range {:?}", self.gravity)));
        }
        if self.kind == ScenarioKind::Springs && !(self.lattice_spacing > 0.0) {
            return Err(GnsError::Config("springs need a positive lattice_spacing".into()));
        }
        Ok(())
    }
}

/// Initial conditions of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy)]
struct Spring {
    i: usize,
    j: usize,
    rest: f64,
}

/// Deterministic integrator for one scenario.
#[derive(Debug, Clone)]
pub struct Physics<'a> {
    scenario: &'a Scenario,
    gravity: f64,
    springs: Vec<Spring>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl<'a> Physics<'a> {
    pub fn new(scenario: &'a Scenario, init: InitialState) -> Self {
        let mut springs = Vec::new();
        if scenario.kind == ScenarioKind::Springs && scenario.spring_stiffness > 0.0 {
            let n = init.positions.len() / 2;
            for i in 0..n {
                for j in i + 1..n {
                    let d = dist(&init.positions, i, j);
                    if d < scenario.spring_radius {
                        springs.push(Spring { i, j, rest: d });
                    }
                }
            }
        }
        Physics {
            scenario,
            gravity: init.gravity,
            springs,
            positions: init.positions,
            velocities: init.velocities,
        }
    }

    fn forces(&self) -> Vec<f64> {
        let s = self.scenario;
        let p = &self.positions;
        let v = &self.velocities;
        let n = p.len() / 2;
        let mut f = vec![0.0; p.len()];
        for i in 0..n {
            f[2 * i] -= s.drag * v[2 * i];
            f[2 * i + 1] -= s.drag * v[2 * i + 1] + self.gravity;
        }
        let pair = |i: usize, j: usize, magnitude: f64, damping: f64, f: &mut [f64], d: f64| {
            let nx = (p[2 * i] - p[2 * j]) / d;
            let ny = (p[2 * i + 1] - p[2 * j + 1]) / d;
            let rel = (v[2 * i] - v[2 * j]) * nx + (v[2 * i + 1] - v[2 * j + 1]) * ny;
            let m = magnitude - damping * rel;
            f[2 * i] += m * nx;
            f[2 * i + 1] += m * ny;
            f[2 * j] -= m * nx;
            f[2 * j + 1] -= m * ny;
        };
        let r0 = s.repulsion_radius;
        for i in 0..n {
            for j in i + 1..n {
                let dx = p[2 * i] - p[2 * j];
                let dy = p[2 * i + 1] - p[2 * j + 1];
                let d2 = dx * dx + dy * dy;
                if d2 < r0 * r0 && d2 > 0.0 {
                    let d = d2.sqrt();
                    pair(i, j, s.repulsion_stiffness * (r0 - d), s.contact_damping, &mut f, d);
                }
            }
        }
        for sp in &self.springs {
            let d = dist(p, sp.i, sp.j);
            if d > 0.0 {
                pair(sp.i, sp.j, -s.spring_stiffness * (d - sp.rest), s.spring_damping, &mut f, d);
            }
        }
        f
    }

    /// One substep of length `h`: velocities first, then positions, then walls.
    pub fn substep(&mut self, h: f64) {
        let f = self.forces();
        for (v, a) in self.velocities.iter_mut().zip(&f) {
            *v += h * a;
        }
        for (p, v) in self.positions.iter_mut().zip(&self.velocities) {
            *p += h * v;
        }
        let b = &self.scenario.bounds;
        let e = self.scenario.restitution;
        for (k, (p, v)) in self.positions.iter_mut().zip(self.velocities.iter_mut()).enumerate() {
            let (lo, hi) = (b.lo[k % 2], b.hi[k % 2]);
            if *p < lo {
                *p = lo + e * (lo - *p);
                *v = -e * *v;
            } else if *p > hi {
                *p = hi - e * (*p - hi);
                *v = -e * *v;
            }
        }
    }

    /// Kinetic, gravitational, repulsion and spring energy (unit masses).
    pub fn energy(&self) -> f64 {
        let s = self.scenario;
        let p = &self.positions;
        let n = p.len() / 2;
        let mut e = 0.0;
        for i in 0..n {
            let (vx, vy) = (self.velocities[2 * i], self.velocities[2 * i + 1]);
            e += 0.5 * (vx * vx + vy * vy) + self.gravity * (p[2 * i + 1] - s.bounds.lo[1]);
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = dist(p, i, j);
                if d < s.repulsion_radius {
                    e += 0.5 * s.repulsion_stiffness * (s.repulsion_radius - d).powi(2);
                }
            }
        }
        for sp in &self.springs {
            e += 0.5 * s.spring_stiffness * (dist(p, sp.i, sp.j) - sp.rest).powi(2);
        }
        e
    }

    pub fn num_springs(&self) -> usize {
        self.springs.len()
    }
}

fn dist(p: &[f64], i: usize, j: usize) -> f64 {
    let dx = p[2 * i] - p[2 * j];
    let dy = p[2 * i + 1] - p[2 * j + 1];
    (dx * dx + dy * dy).sqrt()
}

/// Draws the initial conditions for `seed`.
pub fn initial_state(scenario: &Scenario, seed: u64) -> Result<InitialState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(scenario.particles[0]..=scenario.particles[1]);
    let gravity = if scenario.gravity[0] == scenario.gravity[1] {
        scenario.gravity[0]
    } else {
        rng.random_range(scenario.gravity[0]..scenario.gravity[1])
    };
    let (lo, hi) = (&scenario.bounds.lo, &scenario.bounds.hi);
    let margin = 0.05 * (hi[0] - lo[0]);
    let speed = scenario.initial_speed;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) };
    let (positions, velocities) = match scenario.kind {
        ScenarioKind::GravityBounce => {
            let y_lo = lo[1] + 0.3 * (hi[1] - lo[1]);
            let min_sep = scenario.repulsion_radius;
            let mut pos: Vec<f64> = Vec::with_capacity(2 * n);
            let mut attempts = 0;
            while pos.len() < 2 * n {
                attempts += 1;
                if attempts > 200_000 {
                    return Err(GnsError::Generation(format!(
                        "could not place {n} particles {min_sep} apart in the box"
                    )));
                }
                let x = rng.random_range(lo[0] + margin..hi[0] - margin);
                let y = rng.random_range(y_lo..hi[1] - margin);
                let clear = pos.chunks_exact(2).all(|q| (q[0] - x).powi(2) + (q[1] - y).powi(2) >= min_sep * min_sep);
                if clear {
                    pos.extend_from_slice(&[x, y]);
                }
            }
            let vel = (0..2 * n).map(|_| speed * gauss(&mut rng)).collect();
            (pos, vel)
        }
        ScenarioKind::Springs => {
            let s = scenario.lattice_spacing;
            let cols = ((n as f64).sqrt().round() as usize).max(1);
            let rows = n.div_ceil(cols);
            let (w, h) = ((cols - 1) as f64 * s, (rows - 1) as f64 * s);
            let x0 = rng.random_range(lo[0] + margin..(hi[0] - margin - w).max(lo[0] + margin + 1e-9));
            let y0 = rng.random_range(lo[1] + 0.35 * (hi[1] - lo[1])..(hi[1] - margin - h).max(lo[1] + 0.36 * (hi[1] - lo[1])));
            let jitter = 0.05 * s;
            let mut pos = Vec::with_capacity(2 * n);
            for k in 0..n {
                let (r, c) = (k / cols, k % cols);
                pos.push(x0 + c as f64 * s + rng.random_range(-jitter..jitter));
                pos.push(y0 + r as f64 * s + rng.random_range(-jitter..jitter));
            }
            let (cx, cy) = (x0 + w / 2.0, y0 + h / 2.0);
            let (ux, uy) = (speed * gauss(&mut rng), speed * gauss(&mut rng));
            let omega = 2.0 * speed * gauss(&mut rng);
            let mut vel = Vec::with_capacity(2 * n);
            for q in pos.chunks_exact(2) {
                vel.push(ux - omega * (q[1] - cy) + 0.05 * speed * gauss(&mut rng));
                vel.push(uy + omega * (q[0] - cx) + 0.05 * speed * gauss(&mut rng));
            }
            (pos, vel)
        }
    };
    Ok(InitialState {
        positions,
        velocities,
        gravity,
    })
}

/// Integrates from `init` and returns `scenario.frames` frames in full precision.
pub fn simulate_from(scenario: &Scenario, init: InitialState) -> Result<Vec<Vec<f64>>> {
    let mut physics = Physics::new(scenario, init);
    let h = scenario.dt / scenario.substeps as f64;
    let mut frames = Vec::with_capacity(scenario.frames);
    frames.push(physics.positions.clone());
    for k in 1..scenario.frames {
        for _ in 0..scenario.substeps {
            physics.substep(h);
        }
        if physics.positions.iter().chain(&physics.velocities).any(|v| !v.is_finite()) {
            return Err(GnsError::Generation(format!(
                "{} became unstable at frame {k} (dt {}, substeps {}, repulsion stiffness {}, spring stiffness {})",
                scenario.name(),
                scenario.dt,
                scenario.substeps,
                scenario.repulsion_stiffness,
                scenario.spring_stiffness
            )));
        }
        frames.push(physics.positions.clone());
    }
    Ok(frames)
}

/// One trajectory for `seed`, rounded to the stored precision. The single
/// global feature is the trajectory's gravitational acceleration.
pub fn simulate_scenario(scenario: &Scenario, seed: u64) -> Result<Trajectory> {
    scenario.validate()?;
    let init = initial_state(scenario, seed)?;
    let n = init.positions.len() / 2;
    let gravity = init.gravity;
    let frames = simulate_from(scenario, init)?;
    let mut t = Trajectory {
        name: format!("{}-{seed}", scenario.name()),
        dim: 2,
        dt: scenario.dt,
        materials: vec![scenario.material(); n],
        globals: vec![vec![gravity]; frames.len()],
        frames,
    };
    t.round_to_f32();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(kind: ScenarioKind) -> Scenario {
        Scenario {
            gravity: [0.0, 0.0],
            drag: 0.0,
            frames: 50,
            ..Scenario::for_kind(kind)
        }
    }

    #[test]
    fn resting_particle_stays() {
        let s = quiet(ScenarioKind::GravityBounce);
        let frames = simulate_from(
            &s,
            InitialState {
                positions: vec![0.4, 0.6],
                velocities: vec![0.0, 0.0],
                gravity: 0.0,
            },
        )
        .unwrap();
        assert!(frames.iter().all(|f| f == &vec![0.4, 0.6]));
    }

    #[test]
    fn free_fall_closed_form() {
        for substeps in [1, 4] {
            let s = Scenario {
                substeps,
                frames: 20,
                ..quiet(ScenarioKind::GravityBounce)
            };
            let g = 5.0;
            let frames = simulate_from(
                &s,
                InitialState {
                    positions: vec![0.5, 0.9],
                    velocities: vec![0.0, 0.0],
                    gravity: g,
                },
            )
            .unwrap();
            // After m substeps of length h from rest: y = y0 - g h² m(m+1)/2.
            let h = s.dt / substeps as f64;
            for (k, f) in frames.iter().enumerate() {
                let m = (k * substeps) as f64;
                let expected = 0.9 - g * h * h * m * (m + 1.0) / 2.0;
                assert!((f[1] - expected).abs() < 1e-14, "frame {k}");
                assert_eq!(f[0], 0.5);
            }
        }
    }

    #[test]
    fn repulsion_conserves_momentum() {
        let s = quiet(ScenarioKind::GravityBounce);
        let init = InitialState {
            positions: vec![0.47, 0.5, 0.53, 0.51],
            velocities: vec![0.3, 0.0, -0.2, 0.05],
            gravity: 0.0,
        };
        let p0 = [0.1, 0.05];
        let mut phys = Physics::new(&s, init);
        let mut touched = false;
        for _ in 0..40 {
            phys.substep(s.dt / s.substeps as f64);
            touched |= dist(&phys.positions, 0, 1) < s.repulsion_radius;
            let px = phys.velocities[0] + phys.velocities[2];
            let py = phys.velocities[1] + phys.velocities[3];
            assert!((px - p0[0]).abs() < 1e-9 && (py - p0[1]).abs() < 1e-9);
        }
        assert!(touched);
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for s in [Scenario::gravity_bounce(), Scenario::springs()] {
            let a = simulate_scenario(&s, 17).unwrap();
            let b = simulate_scenario(&s, 17).unwrap();
            assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
            assert!((80..=120).contains(&a.num_particles()));
            assert_eq!(a.num_frames(), 200);
            let tol = 0.01;
            assert!(a.frames.iter().flatten().all(|&v| (-tol..=1.0 + tol).contains(&v)));
        }
    }

    #[test]
    fn springs_are_connected() {
        let s = Scenario::springs();
        let init = initial_state(&s, 3).unwrap();
        let n = init.positions.len() / 2;
        let phys = Physics::new(&s, init);
        assert!(phys.num_springs() >= 2 * n);
    }

    #[test]
    fn energy_does_not_grow() {
        for s in [Scenario::gravity_bounce(), Scenario::springs()] {
            let mut phys = Physics::new(&s, initial_state(&s, 5).unwrap());
            let h = s.dt / s.substeps as f64;
            let mut energies = vec![phys.energy()];
            for _ in 0..s.frames {
                for _ in 0..s.substeps {
                    phys.substep(h);
                }
                energies.push(phys.energy());
            }
            let scale = energies[0];
            for w in energies.windows(11) {
                assert!(w[10] <= w[0] + 1e-3 * scale, "{} energy rose from {} to {}", s.name(), w[0], w[10]);
            }
        }
    }

    #[test]
    fn bad_constants_are_rejected() {
        let s = Scenario {
            restitution: 2.0,
            ..Scenario::gravity_bounce()
        };
        assert!(s.validate().is_err());
        let init = InitialState {
            positions: vec![0.5, 0.5],
            velocities: vec![f64::NAN, 0.0],
            gravity: 5.0,
        };
        let err = simulate_from(&Scenario::gravity_bounce(), init).unwrap_err();
        assert!(err.to_string().contains("repulsion stiffness"), "{err}");
    }
}
