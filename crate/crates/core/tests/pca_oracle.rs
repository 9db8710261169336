//! PCA checked against nalgebra's symmetric eigensolver on the same covariance.

use mmctr_core::data::{generate_synthetic, SignalPlacement, SyntheticSpec};
use mmctr_core::fusion::{fit_fusion, FusionModel, Strategy};
use mmctr_core::pca::{normalize_sign, pca_fit, pca_transform};
use mmctr_core::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenpairs of the `n − 1` covariance, strongest first, sign-normalized.
fn oracle(x: &Tensor, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order[..k].iter().map(|&j| eig.eigenvalues[j].max(0.0)).collect();
    let vectors = order[..k]
        .iter()
        .map(|&j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            normalize_sign(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    // distinct column scales keep the spectrum well separated
    let data = (0..n * d)
        .map(|i| rng.random_range(-1.0..1.0) * (1.0 + (i % d) as f64))
        .collect();
    Tensor::new(&[n, d], data).unwrap()
}

#[test]
fn random_20x5_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = random_matrix(&mut rng, 20, 5);
    let model = pca_fit(&x, 3).unwrap();
    let (values, vectors) = oracle(&x, 3);
    for j in 0..3 {
        assert!((model.explained_variance[j] - values[j]).abs() < 1e-8);
        for (a, b) in model.components.row(j).iter().zip(&vectors[j]) {
            assert!((a - b).abs() < 1e-8, "component {j}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigenpairs_match_oracle(seed in any::<u64>(), d in 1usize..12, extra in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d + extra;
        let x = random_matrix(&mut rng, n, d);
        let k = rng.random_range(1..=d);
        let model = pca_fit(&x, k).unwrap();
        let (values, vectors) = oracle(&x, k);
        for j in 0..k {
            prop_assert!((model.explained_variance[j] - values[j]).abs() < 1e-8 * (1.0 + values[j]));
            for (a, b) in model.components.row(j).iter().zip(&vectors[j]) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn scores_have_diagonal_covariance(seed in any::<u64>(), d in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let x = random_matrix(&mut rng, n, d);
        let model = pca_fit(&x, d).unwrap();
        let y = pca_transform(&model, &x).unwrap();
        for a in 0..d {
            let mean: f64 = (0..n).map(|i| y.at(i, a)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            let var: f64 = (0..n).map(|i| y.at(i, a).powi(2)).sum::<f64>() / (n - 1) as f64;
            prop_assert!((var - model.explained_variance[a]).abs() <= 1e-6 * model.explained_variance[a]);
        }
    }
}

/// Squared norm of `dir` after projection onto the rows of `components`.
fn retained(components: &Tensor, dir: &[f64]) -> f64 {
    (0..components.rows())
        .map(|j| {
            components
                .row(j)
                .iter()
                .zip(dir)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .powi(2)
        })
        .sum()
}

#[test]
fn separate_reduction_keeps_both_signal_directions() {
    let spec = SyntheticSpec {
        n_items: 400,
        n_records: 10,
        d_text: 32,
        d_image: 32,
        signal: SignalPlacement::Both,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 1).unwrap();
    let (k_text, k_image) = (4, 4);

    let (v4, ..) = fit_fusion(Some(&data.text), Some(&data.image), Strategy::V4, k_text, k_image).unwrap();
    let FusionModel::Separate { text, image } = v4 else {
        panic!("V4 fits two PCAs")
    };
    assert!(retained(&text.components, &data.text_signal) > 0.95);
    assert!(retained(&image.components, &data.image_signal) > 0.95);

    let (v3, ..) = fit_fusion(Some(&data.text), Some(&data.image), Strategy::V3, k_text, k_image).unwrap();
    let FusionModel::Joint(joint) = v3 else {
        panic!("V3 fits one PCA")
    };
    let text_dir: Vec<f64> = data
        .text_signal
        .iter()
        .copied()
        .chain(vec![0.0; spec.d_image])
        .collect();
    let image_dir: Vec<f64> = vec![0.0; spec.d_text]
        .into_iter()
        .chain(data.image_signal.iter().copied())
        .collect();
    assert!(retained(&joint.components, &text_dir) > 0.95);
    assert!(retained(&joint.components, &image_dir) < 0.05);
}
