use ppca_core::field_data::{generate_dataset, Field, GrfParams, SolverConfig};
use ppca_core::patching::{hanning_window, make_layout, AssemblyMode};
use ppca_core::pca::{fit_global, fit_patch_bank, fit_pca, FieldBasis, PcaBasis, Selection};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lcg_matrix(m: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // decaying column scales give a well separated spectrum
    (0..m * d)
        .map(|i| rng.random_range(-1.0..1.0) / (1.0 + (i % d) as f64))
        .collect()
}

fn orthonormality_error(b: &PcaBasis) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..b.k() {
        for j in 0..b.k() {
            let dot: f64 = b.component(i).iter().zip(b.component(j)).map(|(x, y)| x * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

fn reconstruction_error(data: &[f64], m: usize, d: usize, mean: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut err = 0.0;
    for r in 0..m {
        let x: Vec<f64> = (0..d).map(|c| data[r * d + c] - mean[c]).collect();
        let mut rec = vec![0.0; d];
        for v in basis {
            let z: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            for c in 0..d {
                rec[c] += z * v[c];
            }
        }
        err += x.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    err
}

fn random_orthonormal(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for c in 0..d {
                v[c] -= dot * u[c];
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            out.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    out
}

#[test]
fn basis_is_orthonormal_and_round_trips_at_full_variance() {
    let (m, d) = (60, 40);
    let x = lcg_matrix(m, d, 1);
    let b = fit_pca(&x, m, d, Selection::VarianceTarget(1.0)).unwrap();
    assert!(orthonormality_error(&b) <= 1e-10);
    for r in 0..m {
        let row = &x[r * d..(r + 1) * d];
        let back = b.decode(&b.encode(row).unwrap()).unwrap();
        for (a, e) in back.iter().zip(row) {
            assert!((a - e).abs() <= 1e-8);
        }
    }
    // more features than samples: rank is bounded by m - 1
    let wide = lcg_matrix(10, 50, 2);
    let b = fit_pca(&wide, 10, 50, Selection::VarianceTarget(1.0)).unwrap();
    assert!(b.k() <= 10);
    assert!(orthonormality_error(&b) <= 1e-10);
}

#[test]
fn variance_target_picks_the_minimal_k() {
    let (m, d) = (80, 30);
    let x = lcg_matrix(m, d, 3);
    let full = fit_pca(&x, m, d, Selection::FixedK(d)).unwrap();
    let energy: Vec<f64> = full.singular_values().iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    for target in [0.5, 0.9, 0.99] {
        let b = fit_pca(&x, m, d, Selection::VarianceTarget(target)).unwrap();
        let kept: f64 = energy[..b.k()].iter().sum::<f64>() / total;
        let before: f64 = energy[..b.k() - 1].iter().sum::<f64>() / total;
        assert!(kept >= target - 1e-12, "target {target}: kept {kept}");
        assert!(before < target, "target {target}: k-1 already reaches it");
        assert!((b.variance_ratio() - kept).abs() < 1e-10);
    }
    for w in full.singular_values().windows(2) {
        assert!(w[0] >= w[1]);
    }
}

#[test]
fn eckart_young_on_solution_fields() {
    let d = 32;
    let ds = generate_dataset(500, d, &GrfParams::default(), &SolverConfig::for_resolution(d)).unwrap();
    let us = ds.solutions();
    let b = fit_global(&us, Selection::FixedK(6)).unwrap();
    let dim = d * d;
    let data: Vec<f64> = us.iter().flat_map(|u| u.values().iter().copied()).collect();
    let pca_basis: Vec<Vec<f64>> = (0..b.k()).map(|i| b.component(i).to_vec()).collect();
    let best = reconstruction_error(&data, us.len(), dim, b.mean(), &pca_basis);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let other = random_orthonormal(b.k(), dim, &mut rng);
        assert!(best <= reconstruction_error(&data, us.len(), dim, b.mean(), &other));
    }
}

#[test]
fn patch_bank_round_trips_at_full_variance() {
    let d = 24;
    let ds = generate_dataset(40, d, &GrfParams::default(), &SolverConfig::for_resolution(d)).unwrap();
    let fs = ds.coefficients();
    for (p, s) in [(8, 8), (8, 4)] {
        let layout = make_layout(d, p, s).unwrap();
        let (bank, _) = fit_patch_bank(&fs, &layout, Selection::VarianceTarget(1.0)).unwrap();
        let basis = FieldBasis::Patch(bank);
        let mode = if s == p {
            AssemblyMode::Mosaic
        } else {
            AssemblyMode::Blend(hanning_window(p).unwrap())
        };
        for f in fs.iter().take(5) {
            let back = basis.decode_field(&basis.encode_field(f).unwrap(), &mode).unwrap();
            let err = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8, "p={p} s={s}: {err}");
        }
    }
}

#[test]
fn encoding_checks_resolution() {
    let ds = generate_dataset(5, 16, &GrfParams::default(), &SolverConfig::for_resolution(16)).unwrap();
    let basis = FieldBasis::Global(fit_global(&ds.solutions(), Selection::default()).unwrap());
    assert!(basis.encode_field(&Field::zeros(32)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Projection is idempotent and never increases the centred norm.
    #[test]
    fn projection_is_idempotent(seed in 0u64..10_000, m in 5usize..30, d in 3usize..20, k in 1usize..6) {
        let x = lcg_matrix(m, d, seed);
        let b = fit_pca(&x, m, d, Selection::FixedK(k)).unwrap();
        let row = &x[..d];
        let once = b.decode(&b.encode(row).unwrap()).unwrap();
        let twice = b.decode(&b.encode(&once).unwrap()).unwrap();
        for (a, c) in once.iter().zip(&twice) {
            prop_assert!((a - c).abs() <= 1e-10);
        }
        let centred: f64 = row.iter().zip(b.mean()).map(|(a, m)| (a - m).powi(2)).sum();
        let kept: f64 = b.encode(row).unwrap().iter().map(|z| z * z).sum();
        prop_assert!(kept <= centred * (1.0 + 1e-10) + 1e-14);
        prop_assert!(orthonormality_error(&b) <= 1e-10);
    }

    /// Retained dimension is monotone in the variance target.
    #[test]
    fn k_is_monotone_in_target(seed in 0u64..10_000, t1 in 0.1f64..0.999, t2 in 0.1f64..0.999) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let x = lcg_matrix(40, 15, seed);
        let a = fit_pca(&x, 40, 15, Selection::VarianceTarget(lo)).unwrap();
        let b = fit_pca(&x, 40, 15, Selection::VarianceTarget(hi)).unwrap();
        prop_assert!(a.k() <= b.k());
    }
}
