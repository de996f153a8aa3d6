use lps_core::metrics::{
    control_spectral_norm, elbo, emc, ess, free_energy_bound, log_z_hat, magnetization_histogram, sinkhorn,
    SinkhornOptions,
};
use lps_tape::{Tape, TapeError, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| shift + rng.gen::<f64>() * 2.0 - 1.0).collect()).collect()
}

/// Weights on a 2⁻¹⁰ grid, so that adding a small dyadic constant is exact.
fn dyadic_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-4096..0) as f64 / 1024.0).collect()
}

#[test]
fn weight_metrics_shift_exactly() {
    let lw = dyadic_weights(1, 300);
    for c in [0.5, -3.25, 7.0] {
        let shifted: Vec<f64> = lw.iter().map(|w| w + c).collect();
        assert_eq!(ess(&shifted).unwrap(), ess(&lw).unwrap());
        let (a, b) = (log_z_hat(&shifted).unwrap(), c + log_z_hat(&lw).unwrap());
        assert!((a - b).abs() <= f64::EPSILON * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn jensen_holds_on_random_weight_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(1..50);
        let lw: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..10.0)).collect();
        assert!(log_z_hat(&lw).unwrap() >= elbo(&lw).unwrap() - 1e-12);
        let e = ess(&lw).unwrap();
        assert!(e > 0.0 && e <= 1.0);
    }
}

#[test]
fn degenerate_weights() {
    let m = 64;
    let mut lw = vec![-1e4; m];
    lw[5] = 0.0;
    assert!((ess(&lw).unwrap() - 1.0 / m as f64).abs() < 1e-12);
    lw.iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
    lw[0] = 0.0;
    assert!((ess(&lw).unwrap() - 1.0 / m as f64).abs() < 1e-12);
    assert!(ess(&[]).is_err());
    assert!(ess(&[f64::NEG_INFINITY; 3]).is_err());
}

#[test]
fn sinkhorn_of_identical_sets_is_small() {
    let a = cloud(3, 200, 2, 0.0);
    let s = sinkhorn(&a, &a, &SinkhornOptions::default()).unwrap();
    let mean_sq: f64 = a
        .iter()
        .flat_map(|x| a.iter().map(move |y| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>()))
        .sum::<f64>()
        / (a.len() * a.len()) as f64;
    assert!(s.converged);
    assert!(s.cost < 0.05 * mean_sq, "{} vs {mean_sq}", s.cost);
}

#[test]
fn sinkhorn_is_permutation_invariant_and_symmetric() {
    let a = cloud(4, 150, 2, 0.0);
    let mut b = cloud(5, 150, 2, 0.7);
    let opts = SinkhornOptions { epsilon: Some(0.05), ..SinkhornOptions::default() };
    let base = sinkhorn(&a, &b, &opts).unwrap().cost;
    b.shuffle(&mut ChaCha8Rng::seed_from_u64(6));
    let perm = sinkhorn(&a, &b, &opts).unwrap().cost;
    assert!((perm - base).abs() < 1e-6 * base.max(1.0));
    let swapped = sinkhorn(&b, &a, &opts).unwrap().cost;
    assert!((swapped - base).abs() < 1e-5 * base.max(1.0));
}

#[test]
fn sinkhorn_between_point_masses_is_squared_distance() {
    let delta: f64 = 1.7;
    let a = vec![vec![0.0, 0.0]; 3];
    let b = vec![vec![delta, 0.0]; 3];
    for eps in [1e-1, 1e-2, 1e-3] {
        let s = sinkhorn(&a, &b, &SinkhornOptions { epsilon: Some(eps), ..SinkhornOptions::default() }).unwrap();
        assert!((s.cost - delta * delta).abs() < 1e-9, "eps {eps}: {}", s.cost);
    }
}

#[test]
fn emc_endpoints_and_reference() {
    let centers = vec![vec![-5.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
    let single: Vec<Vec<f64>> = (0..30).map(|i| vec![-5.0 + 0.01 * i as f64, 0.1]).collect();
    assert_eq!(emc(&single, &centers).unwrap(), 0.0);
    let uniform: Vec<Vec<f64>> = centers.iter().cycle().take(60).cloned().collect();
    assert!((emc(&uniform, &centers).unwrap() - 1.0).abs() < 1e-12);
    let two = vec![vec![0.0], vec![10.0]];
    let pts = vec![vec![0.1], vec![-0.2], vec![0.3], vec![9.0]];
    let want = (-0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln()) / 2f64.ln();
    assert!((emc(&pts, &two).unwrap() - want).abs() < 1e-12);
    assert!((want - 0.8113).abs() < 1e-4);
    assert_eq!(emc(&pts, &[vec![0.0]]).unwrap(), 0.0);
    assert!(emc(&[], &two).is_err());
}

#[test]
fn emc_invariant_to_relabeling_and_translation() {
    let centers = vec![vec![-3.0, 1.0], vec![4.0, 0.0], vec![0.0, 6.0], vec![2.0, -5.0]];
    let pts = cloud(7, 400, 2, 0.0).into_iter().map(|p| vec![p[0] * 6.0, p[1] * 6.0]).collect::<Vec<_>>();
    let base = emc(&pts, &centers).unwrap();
    let mut relabeled = centers.clone();
    relabeled.reverse();
    assert_eq!(emc(&pts, &relabeled).unwrap(), base);
    let t = [0.5, -0.25];
    let mv = |v: &Vec<Vec<f64>>| v.iter().map(|p| vec![p[0] + t[0], p[1] + t[1]]).collect::<Vec<_>>();
    assert!((emc(&mv(&pts), &mv(&centers)).unwrap() - base).abs() < 1e-12);
}

fn states(seed: u64, steps: usize, batch: usize, d: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..=steps)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..batch).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            Tensor::from_rows(&rows).unwrap()
        })
        .collect()
}

#[test]
fn spectral_norm_of_linear_control() {
    // A = [[2, 1], [0, 1]] has ‖A‖₂ = sqrt(3 + sqrt(5))
    let a = Tensor::new(vec![2, 2], vec![2.0, 0.0, 1.0, 1.0]).unwrap();
    let norm = (3.0 + 5f64.sqrt()).sqrt();
    let dts = [0.1, 0.05, 0.2, 0.01];
    let sigma = 1.3;
    let xs = states(8, dts.len(), 16, 2);
    let s = control_spectral_norm(&xs, &dts, sigma, |tape, x, _| x.matmul(tape.constant(a.clone()))).unwrap();
    let want = sigma * norm * dts.iter().sum::<f64>();
    assert!((s.value - want).abs() < 1e-3 * want, "{} vs {want}", s.value);
}

fn nonlinear<'t>(_: &'t Tape, x: Var<'t>, n: usize) -> Result<Var<'t>, TapeError> {
    Ok(x.tanh().scale(1.0 + n as f64))
}

#[test]
fn spectral_norm_of_zero_control_and_permuted_batch() {
    let dts = [0.1, 0.1, 0.1];
    let xs = states(9, 3, 8, 2);
    let zero = control_spectral_norm(&xs, &dts, 1.0, |_, x, _| Ok(x.scale(0.0))).unwrap();
    assert_eq!(zero.value, 0.0);
    let base = control_spectral_norm(&xs, &dts, 1.0, nonlinear).unwrap().value;
    let permuted: Vec<Tensor> = xs
        .iter()
        .map(|t| {
            let mut rows: Vec<Vec<f64>> = t.rows().map(|r| r.to_vec()).collect();
            rows.reverse();
            Tensor::from_rows(&rows).unwrap()
        })
        .collect();
    let perm = control_spectral_norm(&permuted, &dts, 1.0, nonlinear).unwrap().value;
    assert!((perm - base).abs() < 1e-12 * base);
}

#[test]
fn free_energy_bound_scales_with_elbo() {
    let lw = vec![-3.2; 10];
    assert!((free_energy_bound(elbo(&lw).unwrap(), 4) + 3.2 / 16.0).abs() < 1e-15);
    assert!(free_energy_bound(-1.0, 4) > free_energy_bound(-2.0, 4));
}

#[test]
fn magnetization_histograms() {
    let same = vec![vec![0.5; 4]; 10];
    let h = magnetization_histogram(&same, 7, None).unwrap();
    assert_eq!(h.mass.iter().filter(|m| **m > 0.0).count(), 1);
    assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let fields = cloud(10, 250, 16, 0.2);
    let mut sym = fields.clone();
    sym.extend(fields.iter().map(|f| f.iter().map(|v| -v).collect::<Vec<_>>()));
    let h = magnetization_histogram(&sym, 12, None).unwrap();
    assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for i in 0..6 {
        assert!((h.mass[i] - h.mass[11 - i]).abs() < 1e-12, "bin {i}");
    }
    assert!(magnetization_histogram(&[], 4, None).is_err());
}
