//! Deterministic inputs shared by the benchmarks.

use gns_core::datagen::simulate_scenario;
use gns_core::train::TrainingPair;
use gns_core::{GnsConfig, Scenario, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform points in the unit cube of dimension `dim`, flattened.
pub fn uniform_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random::<f64>()).collect()
}

/// One gravity-bounce trajectory at the default desk scale.
pub fn desk_trajectory(seed: u64) -> Trajectory {
    simulate_scenario(&Scenario::gravity_bounce(), seed).expect("default scenario simulates")
}

/// Two training pairs from the middle of `traj`.
pub fn desk_batch(traj: &Trajectory, context: usize) -> Vec<TrainingPair> {
    [60, 140]
        .iter()
        .map(|&t| TrainingPair::from_trajectory(traj, t, context).expect("pair in range"))
        .collect()
}

/// The model sizes used for desk-scale runs, with the connectivity radius of the scenario.
pub fn desk_model(latent: usize, steps: usize) -> GnsConfig {
    GnsConfig {
        latent_size: latent,
        mlp_hidden_size: latent,
        message_passing_steps: steps,
        connectivity_radius: Scenario::gravity_bounce().connectivity_radius,
        ..GnsConfig::default()
    }
}
