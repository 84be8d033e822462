//! Single-view spectral clustering: Laplacian, its `k` smallest
//! eigenvectors, k-means on the rows.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, ClusterIndicator, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::linalg::{laplacian, laplacian_of, sym_eig, LaplacianKind, LaplacianPair, SimilarityMatrix, Which};

/// `½ Σ_u W(B_u, B̄_u) / |B_u|`.
pub fn ratio_cut(s: &SimilarityMatrix, ind: &ClusterIndicator) -> Result<f64> {
    ratio_cut_of(s.s.view(), ind)
}

pub fn ratio_cut_of(s: ArrayView2<f64>, ind: &ClusterIndicator) -> Result<f64> {
    let n = s.nrows();
    if ind.len() != n {
        return Err(Error::LengthMismatch(ind.len(), n));
    }
    let sizes = ind.sizes();
    if let Some(u) = sizes.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(u));
    }
    let mut cut = vec![0.0; ind.k];
    for i in 0..n {
        let ci = ind.assignments[i];
        for j in 0..n {
            if ind.assignments[j] != ci {
                cut[ci] += s[[i, j]];
            }
        }
    }
    Ok(0.5 * cut.iter().zip(&sizes).map(|(w, &b)| w / b as f64).sum::<f64>())
}

/// Orthonormal eigenvectors of `L` for its `k` smallest eigenvalues.
pub fn spectral_embed(l: &LaplacianPair, k: usize) -> Result<Array2<f64>> {
    Ok(sym_eig(l.l.view(), k, Which::Smallest)?.vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectralLaplacian {
    /// `L = D − S`, the default.
    #[default]
    Unnormalized,
    /// Eigenvectors of `L_rw = I − D⁻¹S`.
    RandomWalk,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub laplacian: SpectralLaplacian,
    pub restarts: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            laplacian: SpectralLaplacian::Unnormalized,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub indicator: ClusterIndicator,
    pub embedding: Array2<f64>,
    pub eigenvalues: Array1<f64>,
}

pub fn spectral_cluster(s: &SimilarityMatrix, k: usize, seed: u64) -> Result<ClusterIndicator> {
    spectral_cluster_with(s, k, seed, SpectralOptions::default()).map(|f| f.indicator)
}

pub fn spectral_cluster_with(
    s: &SimilarityMatrix,
    k: usize,
    seed: u64,
    opts: SpectralOptions,
) -> Result<SpectralFit> {
    let n = s.s.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount(format!("k = {k} for {n} nodes")));
    }
    let (embedding, eigenvalues) = match opts.laplacian {
        SpectralLaplacian::Unnormalized => {
            let eig = sym_eig(laplacian(s).l.view(), k, Which::Smallest)?;
            (eig.vectors, eig.values)
        }
        SpectralLaplacian::RandomWalk => {
            // L_rw u = λ u  <=>  L_sym v = λ v with u = D^{-1/2} v
            let pair = laplacian_of(s.s.view(), LaplacianKind::Symmetric);
            let eig = sym_eig(pair.l.view(), k, Which::Smallest)?;
            let mut u = eig.vectors;
            for (mut row, &d) in u.rows_mut().into_iter().zip(pair.d.iter()) {
                let scale = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
                row.mapv_inplace(|x| x * scale);
            }
            (u, eig.values)
        }
    };
    let indicator = kmeans(embedding.view(), k, seed, opts.restarts)?;
    Ok(SpectralFit {
        indicator,
        embedding,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::adjusted_rand_index;
    use crate::linalg::{gaussian_similarity, orthogonality_residual, trace_form, Sigma};
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_cliques(n: usize) -> SimilarityMatrix {
        let s = Array2::from_shape_fn((2 * n, 2 * n), |(i, j)| {
            if (i < n) == (j < n) {
                1.0
            } else {
                0.0
            }
        });
        SimilarityMatrix { s, sigma: 1.0 }
    }

    #[test]
    fn ratio_cut_closed_forms() {
        let s = two_cliques(3);
        let good = ClusterIndicator::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(ratio_cut(&s, &good).unwrap(), 0.0);

        let ones = SimilarityMatrix { s: Array2::ones((4, 4)), sigma: 1.0 };
        let half = ClusterIndicator::new(vec![0, 0, 1, 1], 2).unwrap();
        // W(B, B̄) = 4 for each side of size 2
        assert_eq!(ratio_cut(&ones, &half).unwrap(), 2.0);

        let single = ClusterIndicator::new(vec![0; 4], 1).unwrap();
        assert_eq!(ratio_cut(&ones, &single).unwrap(), 0.0);

        let empty = ClusterIndicator::new(vec![0; 4], 2).unwrap();
        assert!(matches!(ratio_cut(&ones, &empty), Err(Error::EmptyCluster(1))));
    }

    #[test]
    fn components_give_zero_eigenvalues() {
        let s = SimilarityMatrix {
            s: Array2::from_shape_fn((9, 9), |(i, j)| if i / 3 == j / 3 { 0.7 } else { 0.0 }),
            sigma: 1.0,
        };
        let lp = laplacian(&s);
        let eig = sym_eig(lp.l.view(), 4, Which::Smallest).unwrap();
        assert!(eig.values.iter().take(3).all(|v| v.abs() < 1e-9));
        assert!(eig.values[3] > 1e-3);
    }

    #[test]
    fn embedding_trace_matches_eigenvalue_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Array2::from_shape_fn((15, 3), |_| rng.random_range(-1.0..1.0));
        let lp = laplacian(&gaussian_similarity(p.view(), Sigma::Auto).unwrap());
        for k in [1, 3, 15] {
            let c = spectral_embed(&lp, k).unwrap();
            assert!(orthogonality_residual(c.view()) <= 1e-10);
            let eig = sym_eig(lp.l.view(), k, Which::Smallest).unwrap();
            assert!((trace_form(c.view(), lp.l.view()) - eig.values.sum()).abs() < 1e-8);
        }
        let full = spectral_embed(&lp, 15).unwrap();
        assert!((trace_form(full.view(), lp.l.view()) - lp.l.diag().sum()).abs() < 1e-8);
    }

    #[test]
    fn recovers_disconnected_cliques() {
        let s = two_cliques(5);
        let ind = spectral_cluster(&s, 2, 0).unwrap();
        let truth: Vec<usize> = (0..10).map(|i| i / 5).collect();
        assert_eq!(adjusted_rand_index(&ind.assignments, &truth).unwrap(), 1.0);
        assert_eq!(ratio_cut(&s, &ind).unwrap(), 0.0);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let p = array![[0.0], [1.0], [3.0], [7.0]];
        let s = gaussian_similarity(p.view(), Sigma::Auto).unwrap();
        let ind = spectral_cluster(&s, 4, 1).unwrap();
        assert_eq!(ind.sizes(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn random_walk_variant_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Array2::from_shape_fn((40, 2), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i < 20 { z } else { 12.0 + z }
        });
        let s = gaussian_similarity(p.view(), Sigma::Fixed(2.0)).unwrap();
        let opts = SpectralOptions { laplacian: SpectralLaplacian::RandomWalk, ..Default::default() };
        let fit = spectral_cluster_with(&s, 2, 0, opts).unwrap();
        let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
        assert_eq!(adjusted_rand_index(&fit.indicator.assignments, &truth).unwrap(), 1.0);
    }

    #[test]
    fn planted_blobs_recovered_over_seeds() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p = Array2::from_shape_fn((60, 2), |(i, _)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if i % 2 == 0 { z } else { 10.0 + z }
            });
            let s = gaussian_similarity(p.view(), Sigma::Fixed(1.5)).unwrap();
            let ind = spectral_cluster(&s, 2, seed).unwrap();
            let truth: Vec<usize> = (0..60).map(|i| i % 2).collect();
            assert!(adjusted_rand_index(&ind.assignments, &truth).unwrap() >= 0.99);
        }
    }

    #[test]
    fn node_permutation_permutes_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Array2::from_shape_fn((30, 2), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (i % 3) as f64 * 8.0 + z
        });
        let perm: Vec<usize> = (0..30).rev().collect();
        let s = gaussian_similarity(p.view(), Sigma::Fixed(1.5)).unwrap();
        let sp = gaussian_similarity(p.select(Axis(0), &perm).view(), Sigma::Fixed(1.5)).unwrap();
        let a = spectral_cluster(&s, 3, 0).unwrap();
        let b = spectral_cluster(&sp, 3, 0).unwrap();
        let a_perm: Vec<usize> = perm.iter().map(|&i| a.assignments[i]).collect();
        assert_eq!(adjusted_rand_index(&a_perm, &b.assignments).unwrap(), 1.0);
    }
}
