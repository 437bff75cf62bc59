//! Criteria that need no training: gradients, neighbour search, integrator
//! identities, symmetry of the network, noise identities and metric oracles.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use gns_core::features::{featurize, finite_diff_accel, finite_diff_velocity};
use gns_core::graph::{connectivity, radius_edges};
use gns_core::metrics::{mmd, mse, sinkhorn_ot, SinkhornConfig};
use gns_core::noise::{adjust_target, corrupt};
use gns_core::rollout::{euler_update, AccelPredictor};
use gns_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::*;
use crate::Verdict;

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero so the relu kink is never straddled by the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

fn reduce(tape: &mut Tape, x: gns_core::tensor::Var, target: &Tensor) -> gns_core::tensor::Var {
    tape.mse_loss(x, target.clone(), None).unwrap()
}

type Builder = Box<dyn Fn(&mut Tape, &[gns_core::tensor::Var]) -> gns_core::tensor::Var>;

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Builder)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, Builder)> = Vec::new();
    let t45 = tensor(rng, &[4, 5]);
    cases.push(("matmul", vec![tensor(rng, &[4, 3]), tensor(rng, &[3, 5])], {
        let t = t45.clone();
        Box::new(move |tp, v| {
            let y = tp.matmul(v[0], v[1]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    let t43 = tensor(rng, &[4, 3]);
    cases.push(("add_bias", vec![tensor(rng, &[4, 3]), tensor(rng, &[3])], {
        let t = t43.clone();
        Box::new(move |tp, v| {
            let y = tp.add_bias(v[0], v[1]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("linear", vec![tensor(rng, &[4, 3]), tensor(rng, &[3, 5]), tensor(rng, &[5])], {
        let t = t45.clone();
        Box::new(move |tp, v| {
            let y = tp.linear(v[0], v[1], v[2]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("add", vec![tensor(rng, &[4, 3]), tensor(rng, &[4, 3])], {
        let t = t43.clone();
        Box::new(move |tp, v| {
            let y = tp.add(v[0], v[1]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("relu", vec![away_from_zero(rng, &[4, 3])], {
        let t = t43.clone();
        Box::new(move |tp, v| {
            let y = tp.relu(v[0]);
            reduce(tp, y, &t)
        })
    }));
    let t46 = tensor(rng, &[4, 6]);
    cases.push(("layer_norm", vec![tensor(rng, &[4, 6]), tensor(rng, &[6]), tensor(rng, &[6])], {
        let t = t46.clone();
        Box::new(move |tp, v| {
            let y = tp.layer_norm(v[0], v[1], v[2]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("scatter_sum", vec![tensor(rng, &[6, 3])], {
        let t = tensor(rng, &[5, 3]);
        let index: Arc<[usize]> = Arc::from(vec![0, 2, 2, 1, 0, 3]);
        Box::new(move |tp, v| {
            let y = tp.scatter_sum(v[0], index.clone(), 5).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("gather_rows", vec![tensor(rng, &[4, 3])], {
        let t = tensor(rng, &[5, 3]);
        let index: Arc<[usize]> = Arc::from(vec![3, 0, 0, 2, 1]);
        Box::new(move |tp, v| {
            let y = tp.gather_rows(v[0], index.clone()).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("concat", vec![tensor(rng, &[4, 2]), tensor(rng, &[4, 3])], {
        let t = t45.clone();
        Box::new(move |tp, v| {
            let y = tp.concat(&[v[0], v[1]]).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("slice_rows", vec![tensor(rng, &[6, 3])], {
        let t = tensor(rng, &[3, 3]);
        Box::new(move |tp, v| {
            let y = tp.slice_rows(v[0], 2, 3).unwrap();
            reduce(tp, y, &t)
        })
    }));
    cases.push(("mean", vec![tensor(rng, &[4, 3])], Box::new(|tp, v| tp.mean(v[0]))));
    cases.push(("mse_loss", vec![tensor(rng, &[5, 2])], {
        let t = tensor(rng, &[5, 2]);
        Box::new(move |tp, v| tp.mse_loss(v[0], t.clone(), Some(vec![true, false, true, true, false])).unwrap())
    }));
    cases
}

fn state_from(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, materials: Vec<Material>) -> ParticleState {
    let base: Vec<f64> = (0..2 * n).map(|_| rng.random_range(lo..hi)).collect();
    let vel: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.01..0.01)).collect();
    let history = (0..6)
        .map(|k| base.iter().zip(&vel).map(|(p, v)| p + v * k as f64).collect())
        .collect();
    ParticleState::new(2, history, materials, vec![rng.random_range(4.0..6.0)]).unwrap()
}

/// Normalization statistics from a few random states, so the network never
/// sees the identity normalization.
fn warm_stats(cfg: &GnsConfig, rng: &mut ChaCha8Rng) -> NormStats {
    let layout = cfg.layout();
    let mut stats = NormStats::new(&layout);
    for _ in 0..4 {
        let s = state_from(rng, 12, 0.2, 0.8, vec![Material::Water; 12]);
        let e = connectivity(s.current(), 2, cfg.connectivity_radius, false).unwrap();
        let node = layout.raw_node_features(&s).unwrap();
        let edge = layout.raw_edge_features(s.current(), &e);
        let t = Tensor::new(vec![12, 2], (0..24).map(|_| rng.random_range(-1e-3..1e-3)).collect()).unwrap();
        stats.observe(&node, Some(&edge), Some((&t, &[true; 12])));
    }
    stats
}

fn network_gradient_error(rng: &mut ChaCha8Rng) -> (f64, usize) {
    let cfg = GnsConfig {
        latent_size: 12,
        mlp_hidden_size: 12,
        material_embedding_size: 4,
        message_passing_steps: 3,
        connectivity_radius: 0.3,
        ..GnsConfig::default()
    };
    let mut model = GnsModel::new(cfg.clone(), 17).unwrap();
    let stats = warm_stats(&cfg, rng);
    let materials = vec![
        Material::Water,
        Material::Sand,
        Material::Goop,
        Material::Water,
        Material::Rigid,
        Material::Boundary,
    ];
    let state = state_from(rng, 6, 0.35, 0.65, materials);
    let edges = connectivity(state.current(), 2, cfg.connectivity_radius, false).unwrap();
    let target = Tensor::new(vec![6, 2], (0..12).map(|_| rng.random_range(-1e-3..1e-3)).collect()).unwrap();
    let sample = featurize(&state, &edges, &cfg.layout(), &stats, Some(&target)).unwrap();
    let loss = |model: &GnsModel| {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let l = model.loss(&mut tape, &p, &sample).unwrap();
        tape.value(l).data()[0]
    };

    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let l = model.loss(&mut tape, &p, &sample).unwrap();
    let grads = tape.backward(l);
    let analytic = p.collect_grads(&grads, model.params());

    let h = 1e-5;
    let ids: Vec<_> = model.params().iter().map(|(id, _, _)| id).collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, id) in ids.iter().enumerate() {
        for i in 0..model.params().get(*id).len() {
            let orig = model.params().get(*id).data()[i];
            model.params_mut().get_mut(*id).data_mut()[i] = orig + h;
            let plus = loss(&model);
            model.params_mut().get_mut(*id).data_mut()[i] = orig - h;
            let minus = loss(&model);
            model.params_mut().get_mut(*id).data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic[k].data()[i], (plus - minus) / (2.0 * h)));
            count += 1;
        }
    }
    (worst, count)
}

pub fn autodiff() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_primitive = ("", 0.0f64);
    for (name, inputs, build) in primitive_cases(&mut rng) {
        let err = gradient_error(&inputs, build, 1e-5);
        if err >= worst_primitive.1 {
            worst_primitive = (name, err);
        }
    }
    let (net, count) = network_gradient_error(&mut rng);
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        pass: worst_primitive.1 < 1e-4 && net < 1e-4 && secs < 60.0,
        detail: format!(
            "worst primitive {} rel {:.2e}; full network rel {net:.2e} over {count} params; {secs:.1}s (limit 1e-4, 60s)",
            worst_primitive.0, worst_primitive.1
        ),
    }
}

pub fn neighbors() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut edges_checked = 0usize;
    for config in 0..1000 {
        let dim = if rng.random_bool(0.5) { 2 } else { 3 };
        let n = rng.random_range(1..=300);
        let (points, radius): (Vec<f64>, f64) = if config % 3 == 0 {
            // lattice coordinates k/8: ties at exactly the radius and duplicate points
            let pts = (0..n * dim).map(|_| rng.random_range(0..=8) as f64 / 8.0).collect();
            (pts, [0.125, 0.25, 0.375][rng.random_range(0..3)])
        } else {
            let pts = (0..n * dim).map(|_| rng.random::<f64>()).collect();
            (pts, rng.random_range(0.01..0.3))
        };
        let tree = KdTree::build(&points, dim).unwrap();
        let edges = radius_edges(&tree, &points, radius, false).unwrap();
        let got: BTreeSet<(usize, usize)> = edges.pairs().collect();
        let want = brute_force_pairs(&points, dim, radius);
        if got != want || got.len() != edges.len() {
            mismatches += 1;
        }
        edges_checked += want.len();
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        pass: mismatches == 0 && secs < 60.0,
        detail: format!("{mismatches}/1000 configs differ from brute force ({edges_checked} edges); {secs:.1}s (limit 60s)"),
    }
}

pub fn integrator() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let dim = rng.random_range(2..=3);
        let curr: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let prev: Vec<f64> = curr.iter().map(|p| p - rng.random_range(-0.02..0.02)).collect();
        let next: Vec<f64> = curr.iter().map(|p| p + rng.random_range(-0.02..0.02)).collect();
        let a = finite_diff_accel(&prev, &curr, &next);
        let v: Vec<f64> = curr.iter().zip(&prev).map(|(c, p)| c - p).collect();
        let (p_next, v_next) = euler_update(&curr, &v, &a);
        let vels = finite_diff_velocity(&[prev.clone(), curr.clone(), next.clone()]);
        for k in 0..dim {
            worst = worst
                .max((p_next[k] - next[k]).abs())
                .max((v_next[k] - (next[k] - curr[k])).abs())
                .max((prev[k] + vels[0][k] + vels[1][k] - next[k]).abs())
                .max((vels[1][k] - vels[0][k] - a[k]).abs())
                .max((vels[0][k] - v[k]).abs());
        }
    }
    Verdict {
        pass: worst <= 1e-12,
        detail: format!("max deviation {worst:.2e} over 1e4 triples (limit 1e-12)"),
    }
}

fn equivariance_config(m: usize, radius: f64, variant: EncoderVariant) -> GnsConfig {
    GnsConfig {
        latent_size: 16,
        mlp_hidden_size: 16,
        material_embedding_size: 4,
        message_passing_steps: m,
        connectivity_radius: radius,
        encoder_variant: variant,
        ..GnsConfig::default()
    }
}

fn simulator(cfg: GnsConfig, rng: &mut ChaCha8Rng) -> Simulator {
    let model = GnsModel::new(cfg.clone(), 21).unwrap();
    let stats = warm_stats(&cfg, rng);
    Simulator::new(model, stats)
}

/// `max |a - b| / max |a|`.
fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / a.iter().map(|x| x.abs()).fold(1e-300, f64::max)
}

/// Response of the last particle of a straight chain, linked only to its
/// neighbours, when the first particle moves.
fn chain_response(len: usize, m: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(len as u64);
    let sim = simulator(equivariance_config(m, 0.06, EncoderVariant::Relative), &mut rng);
    let chain = |x0: f64| {
        let frame: Vec<f64> = (0..len)
            .flat_map(|i| [if i == 0 { x0 } else { 0.2 + 0.05 * i as f64 }, 0.5])
            .collect();
        ParticleState::new(2, vec![frame; 6], vec![Material::Water; len], vec![5.0]).unwrap()
    };
    let a = sim.predict_accel(&chain(0.2)).unwrap();
    let b = sim.predict_accel(&chain(0.21)).unwrap();
    let last = 2 * (len - 1);
    (a[last] - b[last]).abs() + (a[last + 1] - b[last + 1]).abs()
}

pub fn equivariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sc = Scenario::gravity_bounce();
    let r = sc.connectivity_radius;

    let sim = simulator(equivariance_config(5, r, EncoderVariant::Relative), &mut rng);
    let traj = gns_core::datagen::simulate_scenario(&sc, 7).unwrap();
    let mut perm_gap = 0.0f64;
    for t in [5, 60, 150] {
        let state = ParticleState::new(
            traj.dim,
            traj.frames[t - 5..=t].to_vec(),
            traj.materials.clone(),
            traj.globals[t].clone(),
        )
        .unwrap();
        let n = state.num_particles();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = sim.predict_accel(&state).unwrap();
        let b = sim.predict_accel(&state.permuted(&perm)).unwrap();
        let back: Vec<f64> = {
            let mut out = vec![0.0; a.len()];
            for (new, &old) in perm.iter().enumerate() {
                out[old * 2..old * 2 + 2].copy_from_slice(&b[new * 2..new * 2 + 2]);
            }
            out
        };
        perm_gap = perm_gap.max(relative_gap(&a, &back));
    }

    // a cluster that stays farther than the radius from every wall before and after the shift
    let shift = [0.1, -0.08];
    let mut trans_gap = 0.0f64;
    let mut abs_gap = f64::INFINITY;
    let abs_sim = simulator(equivariance_config(5, r, EncoderVariant::Absolute), &mut rng);
    for _ in 0..3 {
        let state = state_from(&mut rng, 40, 0.35, 0.55, vec![Material::Water; 40]);
        let a = sim.predict_accel(&state).unwrap();
        let b = sim.predict_accel(&state.translated(&shift)).unwrap();
        trans_gap = trans_gap.max(relative_gap(&a, &b));
        let a = abs_sim.predict_accel(&state).unwrap();
        let b = abs_sim.predict_accel(&state.translated(&shift)).unwrap();
        abs_gap = abs_gap.min(relative_gap(&a, &b));
    }

    let mut field_ok = true;
    let mut field = Vec::new();
    for len in [3, 5, 8] {
        for m in 1..=7 {
            let resp = chain_response(len, m);
            let reaches = m + 1 >= len;
            field_ok &= if reaches { resp > 0.0 } else { resp == 0.0 };
            if m + 2 == len || m + 1 == len {
                field.push(format!("len{len}/M{m}={resp:.1e}"));
            }
        }
    }
    Verdict {
        pass: perm_gap <= 1e-5 && trans_gap <= 1e-5 && abs_gap > 1e-3 && field_ok,
        detail: format!(
            "permutation {perm_gap:.1e}, translation {trans_gap:.1e} (limit 1e-5, relative to max |a|); \
             absolute variant moves by {abs_gap:.1e} (needs > 1e-3); receptive field exact: {field_ok} [{}]",
            field.join(" ")
        ),
    }
}

pub fn noise() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let n = 20;
        let materials = (0..n)
            .map(|i| if i % 7 == 0 { Material::Boundary } else { Material::Water })
            .collect();
        let state = state_from(&mut rng, n, 0.1, 0.9, materials);
        let next: Vec<f64> = state
            .current()
            .iter()
            .zip(state.current_velocity())
            .map(|(p, v)| p + v + rng.random_range(-1e-3..1e-3))
            .collect();
        let a = finite_diff_accel(state.previous(), state.current(), &next);
        let cfg = NoiseConfig {
            sigma_v: rng.random_range(1e-4..1e-2),
            ..NoiseConfig::default()
        };
        let c = corrupt(&state, &cfg, &mut rng);
        let v_noisy = c.state.current_velocity();
        let p_noisy = c.state.current();
        let vel_target = adjust_target(&a, &c.velocity_noise, &c.position_noise, 0.0);
        let pos_target = adjust_target(&a, &c.velocity_noise, &c.position_noise, 1.0);
        for i in 0..next.len() {
            let v_true = next[i] - state.current()[i];
            worst = worst
                .max((v_noisy[i] + vel_target[i] - v_true).abs())
                .max((p_noisy[i] + v_noisy[i] + pos_target[i] - next[i]).abs());
        }
    }

    let sigma = 3e-4;
    let cfg = NoiseConfig {
        sigma_v: sigma,
        ..NoiseConfig::default()
    };
    let big = state_from(&mut rng, 1000, 0.1, 0.9, vec![Material::Water; 1000]);
    let mut draws = Vec::with_capacity(100_000);
    while draws.len() < 100_000 {
        draws.extend(corrupt(&big, &cfg, &mut rng).velocity_noise);
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let std = (draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / draws.len() as f64).sqrt();
    let ratio = std / sigma;
    Verdict {
        pass: worst <= 1e-12 && (ratio - 1.0).abs() <= 0.02,
        detail: format!(
            "round trips max deviation {worst:.2e} (limit 1e-12); last-step std / sigma_v = {ratio:.4} over {} draws (limit 2%)",
            draws.len()
        ),
    }
}

fn shuffled(points: &[f64], dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = points.chunks(dim).collect();
    rows.shuffle(rng);
    rows.concat()
}

pub fn metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sinkhorn = SinkhornConfig::default();

    let mut oracle_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let a: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        oracle_gap = oracle_gap.max((exact_ot(&a, &b, 2) - permutation_ot(&a, &b, 2)).abs());
    }

    let mut ot_rel = 0.0f64;
    let mut invariant = true;
    for case in 0..300 {
        let dim = 2 + case % 2;
        let n = rng.random_range(2..=16);
        let spread = [1.0, 0.1, 0.01][case % 3];
        let a: Vec<f64> = (0..dim * n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect();
        let exact = exact_ot(&a, &b, dim);
        let got = sinkhorn_ot(&a, &b, dim, &sinkhorn).unwrap().cost;
        ot_rel = ot_rel.max((got - exact).abs() / exact);
        let (pa, pb) = (shuffled(&a, dim, &mut rng), shuffled(&b, dim, &mut rng));
        invariant &= sinkhorn_ot(&pa, &pb, dim, &sinkhorn).unwrap().cost == got;
        invariant &= mmd(&pa, &pb, dim, 0.1).unwrap() == mmd(&a, &b, dim, 0.1).unwrap();
    }

    let mut mmd_gap = 0.0f64;
    for _ in 0..200 {
        let dim = rng.random_range(2..=3);
        let (n, m) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let a: Vec<f64> = (0..dim * n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..dim * m).map(|_| rng.random_range(0.2..0.8)).collect();
        mmd_gap = mmd_gap.max((mmd(&a, &b, dim, 0.1).unwrap() - mmd_loops(&a, &b, dim, 0.1)).abs());
    }

    let mut mse_gap = 0.0f64;
    for _ in 0..200 {
        let dim = rng.random_range(2..=3);
        let (frames, n) = (rng.random_range(1..=20), rng.random_range(1..=50));
        let truth: Vec<Vec<f64>> = (0..frames).map(|_| (0..dim * n).map(|_| rng.random::<f64>()).collect()).collect();
        let pred: Vec<Vec<f64>> = truth
            .iter()
            .map(|f| f.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect())
            .collect();
        mse_gap = mse_gap.max((mse(&pred, &truth).unwrap() - mse_loops(&pred, &truth, dim)).abs());
    }

    Verdict {
        pass: oracle_gap <= 1e-12 && ot_rel <= 0.02 && mmd_gap <= 1e-12 && mse_gap <= 1e-12 && invariant,
        detail: format!(
            "Sinkhorn vs exact OT worst rel {ot_rel:.2e} (limit 2%, 300 sets of 2..16 points); \
             MMD gap {mmd_gap:.1e}, MSE gap {mse_gap:.1e} (limit 1e-12); \
             permutation invariance exact: {invariant}; Hungarian vs brute force {oracle_gap:.1e}"
        ),
    }
}
