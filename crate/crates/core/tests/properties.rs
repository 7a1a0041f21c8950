mod common;

use common::*;
use mnpca::baselines::{fit_2d2pca, kong_bandwidth};
use mnpca::io::SavedModel;
use mnpca::kernels::{default_bandwidth, BaseKernel, KernelSpec, Parity};
use mnpca::mnpca::{fit_features, fit_transform, FitOptions};
use mnpca::svd_features::{sample_svds, truncated_svd, FeatureConfig, FeatureSet, DEFAULT_TIE_TOL};
use mnpca::{Execution, MatrixSample};
use nalgebra::DVector;
use proptest::prelude::*;

fn base_kernel() -> impl Strategy<Value = BaseKernel> {
    prop_oneof![
        Just(BaseKernel::Linear),
        (0.05f64..5.0).prop_map(|sigma2| BaseKernel::Gaussian { sigma2 }),
        (1u32..5, 0.0f64..2.0).prop_map(|(degree, offset)| BaseKernel::Polynomial { degree, offset }),
    ]
}

fn pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-2.0f64..2.0, d), prop::collection::vec(-2.0f64..2.0, d))
}

fn neg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

proptest! {
    #[test]
    fn induced_kernels_are_symmetric_with_fixed_parity(base in base_kernel(), (x, y) in pair(4)) {
        for parity in [Parity::Odd, Parity::Even] {
            let k = KernelSpec::new(base, parity).unwrap();
            let kxy = k.eval(&x, &y).unwrap();
            let tol = 1e-12 * (1.0 + kxy.abs());
            prop_assert!((kxy - k.eval(&y, &x).unwrap()).abs() <= tol);
            let s = if parity == Parity::Odd { -1.0 } else { 1.0 };
            prop_assert_eq!(k.eval(&neg(&x), &y).unwrap(), s * kxy);
            prop_assert!((k.eval(&x, &neg(&y)).unwrap() - s * kxy).abs() <= tol);
        }
    }

    #[test]
    fn bandwidth_ignores_vector_signs(seed in any::<u64>(), flips in prop::collection::vec(any::<bool>(), 12)) {
        let mut rng = rng(seed);
        let vs: Vec<DVector<f64>> = (0..12).map(|_| random_unit(&mut rng, 5)).collect();
        let flipped: Vec<DVector<f64>> = vs.iter().zip(&flips).map(|(v, &f)| if f { -v } else { v.clone() }).collect();
        let (a, b) = (default_bandwidth(&vs).unwrap(), default_bandwidth(&flipped).unwrap());
        prop_assert!((a - b).abs() <= 1e-14 * a);
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
    }

    #[test]
    fn truncated_svd_reconstructs_full_rank(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let x = random_matrix(&mut rng, 5, 4);
        let svd = truncated_svd(&x, 4, DEFAULT_TIE_TOL).unwrap();
        prop_assert!(max_abs_dev(&svd.reconstruct(), &x) < 1e-12);
        prop_assert!(svd.singular_values().windows(2).all(|w| w[0] > w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mnpca_is_permutation_equivariant(seed in any::<u64>(), odd in any::<bool>()) {
        let mut rng = rng(seed);
        let s = random_sample(&mut rng, 10, 5, 4);
        let parity = if odd { Parity::Odd } else { Parity::Even };
        let k = KernelSpec::gaussian(0.8, parity).unwrap();
        let opts = FitOptions { dims: Some((2, 2)), execution: Execution::Sequential, ..FitOptions::default() };
        let (m, z) = fit_transform(&s, k, k, &opts).unwrap();
        let perm: Vec<usize> = (0..10).rev().collect();
        let (mp, zp) = fit_transform(&s.select(&perm).unwrap(), k, k, &opts).unwrap();
        let scale = m.eigvals1()[0].max(1.0);
        for (a, b) in m.eigvals1().iter().zip(mp.eigvals1().iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
        let permuted: Vec<_> = perm.iter().map(|&i| z[i].clone()).collect();
        prop_assert!(max_dev_up_to_signs(&permuted, &zp) < 1e-8);
    }

    #[test]
    fn mnpca_ignores_singular_pair_signs(seed in any::<u64>(), odd in any::<bool>()) {
        let mut rng = rng(seed);
        let s = random_sample(&mut rng, 8, 5, 5);
        let parity = if odd { Parity::Odd } else { Parity::Even };
        let k = KernelSpec::gaussian(0.6, parity).unwrap();
        let config = FeatureConfig { r: 3, m: 2, ..FeatureConfig::default() };
        let svds = sample_svds(&s, 3, DEFAULT_TIE_TOL, Execution::Sequential).unwrap();
        let mut flipped = svds.clone();
        for svd in &mut flipped {
            for j in 0..3 {
                if rand::Rng::random_bool(&mut rng, 0.5) {
                    svd.flip_pair(j);
                }
            }
        }
        let fs = FeatureSet::from_svds(&svds, k, k, config, Execution::Sequential).unwrap();
        let ff = FeatureSet::from_svds(&flipped, k, k, config, Execution::Sequential).unwrap();
        let (m, mf) = (fit_features(&fs, Some((2, 2))).unwrap(), fit_features(&ff, Some((2, 2))).unwrap());
        prop_assert!((m.eigvals1() - mf.eigvals1()).amax() < 1e-10);
        prop_assert!((m.eigvals2() - mf.eigvals2()).amax() < 1e-10);
        for (a, b) in m.latents(&fs).iter().zip(&mf.latents(&ff)) {
            prop_assert!((a.0.abs() - b.0.abs()).amax() < 1e-10);
        }
    }

    #[test]
    fn linear_baselines_are_permutation_invariant(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let s = random_sample(&mut rng, 12, 4, 3);
        let rev: Vec<usize> = (0..12).rev().collect();
        let sp = s.select(&rev).unwrap();
        let (a, b) = (fit_2d2pca(&s, 2, 2).unwrap(), fit_2d2pca(&sp, 2, 2).unwrap());
        prop_assert!((a.left_eigenvalues() - b.left_eigenvalues()).amax() < 1e-12);
        for x in s.observations() {
            let (za, zb) = (a.transform(x).unwrap(), b.transform(x).unwrap());
            prop_assert!((za.0.abs() - zb.0.abs()).amax() < 1e-9);
        }
        prop_assert!((kong_bandwidth(&s) - kong_bandwidth(&sp)).abs() < 1e-12);
    }

    #[test]
    fn saved_model_transforms_identically(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let s = random_sample(&mut rng, 9, 4, 4);
        let k = KernelSpec::new(BaseKernel::Polynomial { degree: 3, offset: 0.5 }, Parity::Odd).unwrap();
        let opts = FitOptions { dims: Some((2, 1)), ..FitOptions::default() };
        let (m, z) = fit_transform(&s, k, k, &opts).unwrap();
        let back = SavedModel::from_json(&SavedModel::Mnpca(Box::new(m)).to_json().unwrap()).unwrap();
        for (x, zi) in s.observations().iter().zip(&z) {
            prop_assert!(max_abs_dev(&back.transform(x).unwrap().0, &zi.0) <= 1e-12);
        }
    }
}

#[test]
fn scaled_sample_scales_linear_latents() {
    let mut rng = rng(77);
    let s = random_sample(&mut rng, 10, 4, 4);
    let doubled = MatrixSample::new(s.observations().iter().map(|x| x * 2.0).collect()).unwrap();
    let (a, b) = (fit_2d2pca(&s, 2, 2).unwrap(), fit_2d2pca(&doubled, 2, 2).unwrap());
    for (x, y) in s.observations().iter().zip(doubled.observations()) {
        let (za, zb) = (a.transform(x).unwrap(), b.transform(y).unwrap());
        assert!(((za.0 * 2.0).abs() - zb.0.abs()).amax() < 1e-10);
    }
}
