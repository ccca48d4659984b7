//! Covariance estimation, shrinkage and the symmetric-definite generalized
//! eigensolver shared by every spatial filter trainer.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("covariance needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("zero trace: covariance of a constant signal cannot be trace-normalized")]
    ZeroTrace,
    #[error("shrinkage gamma {0} outside [0, 1]")]
    InvalidGamma(f64),
    #[error("automatic shrinkage needs observation statistics; covariance was built from averaged matrices")]
    NoObservationStatistics,
    #[error("matrix shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("metric matrix is not positive definite even after regularization")]
    NotPositiveDefinite,
    #[error("non-finite values in input")]
    NonFinite,
}

/// Symmetric channel × channel covariance.
///
/// `dispersion` carries `Σ_k ‖x_k x_kᵀ − S‖²_F / n²` when the matrix was
/// estimated from raw observations, which is what the Ledoit-Wolf shrinkage
/// coefficient needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub n_observations: usize,
    dispersion: Option<f64>,
}

impl Covariance {
    /// Wraps an already symmetric matrix (no observation statistics).
    pub fn from_matrix(matrix: DMatrix<f64>, n_observations: usize) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Self { matrix: sym, n_observations, dispersion: None }
    }

    /// Mean-removed covariance (1/n normalization) of observation rows
    /// `n × d`, keeping the Ledoit-Wolf dispersion statistic.
    pub fn from_observations(rows: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = rows.nrows();
        if n < 2 {
            return Err(LinalgError::TooFewSamples(n));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mean = rows.row_mean();
        let centered = DMatrix::from_fn(n, rows.ncols(), |i, j| rows[(i, j)] - mean[j]);
        Ok(Self::from_centered(&centered))
    }

    /// Like [`Covariance::from_observations`] but for rows that are already
    /// centred (e.g. class-centred pooled data).
    pub fn from_centered(centered: &DMatrix<f64>) -> Self {
        let n = centered.nrows() as f64;
        let s = centered.transpose() * centered / n;
        let fourth: f64 = centered.row_iter().map(|r| r.norm_squared().powi(2)).sum();
        let dispersion = ((fourth / n - s.norm_squared()) / n).max(0.0);
        let s = (&s + s.transpose()) * 0.5;
        Self { matrix: s, n_observations: centered.nrows(), dispersion: Some(dispersion) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Average of same-shaped covariances.
    pub fn mean<'a, I>(items: I) -> Option<Covariance>
    where
        I: IntoIterator<Item = &'a Covariance>,
    {
        let mut it = items.into_iter();
        let first = it.next()?;
        let mut sum = first.matrix.clone();
        let mut count = 1usize;
        let mut n_obs = first.n_observations;
        for c in it {
            sum += &c.matrix;
            count += 1;
            n_obs += c.n_observations;
        }
        Some(Covariance::from_matrix(sum / count as f64, n_obs))
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.matrix *= factor;
        self.dispersion = self.dispersion.map(|d| d * factor * factor);
        self
    }
}

/// Mean-removed covariance of a `channel × sample` block. With
/// `normalize_trace` the result is scaled to trace = channel count.
pub fn covariance(x: &DMatrix<f64>, normalize_trace: bool) -> Result<Covariance, LinalgError> {
    let n = x.ncols();
    if n < 2 {
        return Err(LinalgError::TooFewSamples(n));
    }
    let d = x.nrows();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        let m = row.mean();
        let m = m + row.iter().map(|v| v - m).sum::<f64>() / n as f64;
        row.add_scalar_mut(-m);
    }
    let matrix = &centered * centered.transpose() / n as f64;
    let cov = Covariance::from_matrix(matrix, n);
    if !normalize_trace {
        return Ok(cov);
    }
    let tr = cov.trace();
    if !(tr > 0.0) {
        return Err(LinalgError::ZeroTrace);
    }
    Ok(cov.scaled(d as f64 / tr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shrinkage {
    Fixed(f64),
    Auto,
}

impl Default for Shrinkage {
    fn default() -> Self {
        Shrinkage::Auto
    }
}

/// Analytic Ledoit-Wolf coefficient for shrinkage toward `(tr S / d)·I`.
pub fn ledoit_wolf_gamma(c: &Covariance) -> Result<f64, LinalgError> {
    let dispersion = c.dispersion.ok_or(LinalgError::NoObservationStatistics)?;
    let d = c.dim() as f64;
    let mu = c.trace() / d;
    let mut target_gap = c.matrix.clone();
    for i in 0..c.dim() {
        target_gap[(i, i)] -= mu;
    }
    let delta = target_gap.norm_squared();
    if delta <= 0.0 {
        return Ok(0.0);
    }
    Ok(dispersion.min(delta) / delta)
}

/// `(1−γ)·C + γ·(tr C / d)·I`. Returns the shrunk covariance and the γ used.
pub fn shrink(c: &Covariance, gamma: Shrinkage) -> Result<(Covariance, f64), LinalgError> {
    let g = match gamma {
        Shrinkage::Fixed(g) if (0.0..=1.0).contains(&g) => g,
        Shrinkage::Fixed(g) => return Err(LinalgError::InvalidGamma(g)),
        Shrinkage::Auto => ledoit_wolf_gamma(c)?,
    };
    let d = c.dim();
    let mu = c.trace() / d as f64;
    let mut m = &c.matrix * (1.0 - g);
    for i in 0..d {
        m[(i, i)] += g * mu;
    }
    Ok((Covariance { matrix: m, n_observations: c.n_observations, dispersion: None }, g))
}

/// Solution of `A w = λ B w`, eigenvalues descending, columns B-orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// True when `B` needed the positive-definiteness floor.
    pub regularized: bool,
}

pub const PD_FLOOR_GAMMA: f64 = 1e-6;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Generalized symmetric-definite eigenproblem via Cholesky whitening of
/// `b` and a standard symmetric eigendecomposition.
///
/// If `b`'s smallest eigenvalue is at most `1e-10 · tr(b)` (or Cholesky
/// fails), `b` is shrunk by [`PD_FLOOR_GAMMA`] toward a scaled identity and
/// the result is flagged `regularized`.
pub fn generalized_eig_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<EigenBasis, LinalgError> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(LinalgError::ShapeMismatch(a.shape(), b.shape()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let d = a.nrows();
    let a = symmetrize(a);
    let mut b = symmetrize(b);
    let tr = b.trace();
    let min_eig = SymmetricEigen::new(b.clone()).eigenvalues.min();
    let mut regularized = false;
    let mut chol = if min_eig > 1e-10 * tr { Cholesky::new(b.clone()) } else { None };
    if chol.is_none() {
        if !(tr > 0.0) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        log::warn!("metric matrix not positive definite (min eigenvalue {min_eig:e}); applying {PD_FLOOR_GAMMA} shrinkage floor");
        b = shrink(&Covariance::from_matrix(b, 0), Shrinkage::Fixed(PD_FLOOR_GAMMA))?.0.matrix;
        regularized = true;
        chol = Cholesky::new(b);
    }
    let l = chol.ok_or(LinalgError::NotPositiveDefinite)?.unpack();

    // C = L⁻¹ A L⁻ᵀ
    let y = l.solve_lower_triangular(&a).ok_or(LinalgError::NotPositiveDefinite)?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(LinalgError::NotPositiveDefinite)?
        .transpose();
    let eig = SymmetricEigen::new(symmetrize(&c));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let u = DMatrix::from_fn(d, d, |r, k| eig.eigenvectors[(r, order[k])]);
    // W = L⁻ᵀ U
    let w = l.transpose().solve_upper_triangular(&u).ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(EigenBasis { eigenvalues, eigenvectors: w, regularized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = gaussian(rng, d, 2 * d);
        &m * m.transpose() / (2 * d) as f64 + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn white_noise_covariance_nearly_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 2, 100_000);
        let c = covariance(&x, true).unwrap();
        assert!(c.matrix[(0, 1)].abs() < 0.02);
        assert!((c.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_signal_has_zero_trace() {
        let x = DMatrix::from_element(3, 50, 4.2);
        assert_eq!(covariance(&x, false).unwrap().matrix, DMatrix::zeros(3, 3));
        assert_eq!(covariance(&x, true), Err(LinalgError::ZeroTrace));
        assert_eq!(covariance(&DMatrix::zeros(2, 1), false), Err(LinalgError::TooFewSamples(1)));
    }

    #[test]
    fn duplicated_channel_is_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = gaussian(&mut rng, 2, 500);
        let x = DMatrix::from_fn(3, 500, |r, t| base[(r.min(1), t)]);
        let c = covariance(&x, true).unwrap();
        let min = SymmetricEigen::new(c.matrix).eigenvalues.min();
        assert!(min.abs() < 1e-12, "{min}");
    }

    #[test]
    fn shrink_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Covariance::from_matrix(random_spd(&mut rng, 4), 10);
        let (same, g) = shrink(&c, Shrinkage::Fixed(0.0)).unwrap();
        assert_eq!(g, 0.0);
        assert_eq!(same.matrix, c.matrix);
        let (full, _) = shrink(&c, Shrinkage::Fixed(1.0)).unwrap();
        let mu = c.trace() / 4.0;
        assert!((full.matrix - DMatrix::identity(4, 4) * mu).abs().max() < 1e-12);
        assert!(shrink(&c, Shrinkage::Fixed(1.5)).is_err());
        assert_eq!(shrink(&c, Shrinkage::Auto).unwrap_err(), LinalgError::NoObservationStatistics);
    }

    /// Direct transcription of the Ledoit-Wolf (2004) estimator on raw rows.
    fn ledoit_wolf_oracle(x: &DMatrix<f64>) -> f64 {
        let (n, d) = x.shape();
        let mut xc = x.clone();
        for j in 0..d {
            let m = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
            for i in 0..n {
                xc[(i, j)] -= m;
            }
        }
        let mut s = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    s[a][b] += xc[(i, a)] * xc[(i, b)] / n as f64;
                }
            }
        }
        let mu = (0..d).map(|a| s[a][a]).sum::<f64>() / d as f64;
        let mut delta = 0.0;
        for a in 0..d {
            for b in 0..d {
                let t = if a == b { mu } else { 0.0 };
                delta += (s[a][b] - t).powi(2) / d as f64;
            }
        }
        let mut beta = 0.0;
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    beta += (xc[(i, a)] * xc[(i, b)] - s[a][b]).powi(2) / d as f64;
                }
            }
        }
        beta /= (n * n) as f64;
        beta.min(delta) / delta
    }

    #[test]
    fn auto_shrinkage_matches_oracle_and_is_heavy_for_few_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 5, 10);
        let c = Covariance::from_observations(&x).unwrap();
        let g = ledoit_wolf_gamma(&c).unwrap();
        assert!((g - ledoit_wolf_oracle(&x)).abs() < 1e-12);
        assert!(g > 0.3, "{g}");

        let x = gaussian(&mut rng, 400, 3);
        let c = Covariance::from_observations(&x).unwrap();
        assert!((ledoit_wolf_gamma(&c).unwrap() - ledoit_wolf_oracle(&x)).abs() < 1e-12);
    }

    #[test]
    fn auto_shrinkage_matches_frozen_reference() {
        // sklearn.covariance.ledoit_wolf_shrinkage on this 6 × 3 table: 0.8320872180353441
        let x = DMatrix::from_row_slice(6, 3, &[
            0.3, -1.2, 0.5, 1.1, 0.4, -0.7, -0.9, 0.8, 1.6, 0.2, -0.3, -1.1, 1.4, 1.0, 0.1, -0.6, -0.2, 0.9,
        ]);
        let g = ledoit_wolf_gamma(&Covariance::from_observations(&x).unwrap()).unwrap();
        assert!((g - 0.8320872180353441).abs() < 1e-12, "{g}");
    }

    #[test]
    fn diagonal_pencil() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let e = generalized_eig_sym(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((e.eigenvalues[0] - 4.0).abs() < 1e-12 && (e.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((e.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((e.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-12);
        assert!(!e.regularized);
    }

    #[test]
    fn identity_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_spd(&mut rng, 5);
        let e = generalized_eig_sym(&a, &a).unwrap();
        assert!(e.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-9));
    }

    fn check_basis(a: &DMatrix<f64>, b: &DMatrix<f64>, e: &EigenBasis) -> (f64, f64) {
        let d = a.nrows();
        let mut worst = 0.0f64;
        for i in 0..d {
            let w = e.eigenvectors.column(i);
            let aw = a * w;
            let r = (&aw - b * w * e.eigenvalues[i]).norm() / aw.norm();
            worst = worst.max(r);
        }
        let ortho = (e.eigenvectors.transpose() * b * &e.eigenvectors - DMatrix::identity(d, d)).abs().max();
        (worst, ortho)
    }

    #[test]
    fn random_pairs_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(&mut rng, 6);
        let b = random_spd(&mut rng, 6);
        let e = generalized_eig_sym(&a, &b).unwrap();
        let (res, ortho) = check_basis(&a, &b, &e);
        assert!(res < 1e-8 && ortho < 1e-8, "{res} {ortho}");
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_metric_gets_floor() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let e = generalized_eig_sym(&DMatrix::identity(2, 2), &b).unwrap();
        assert!(e.regularized);
        assert!(generalized_eig_sym(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn csp_pencil_eigenvalues_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = rng.random_range(2..10);
            let c1 = random_spd(&mut rng, d);
            let c2 = random_spd(&mut rng, d);
            let e = generalized_eig_sym(&c1, &(&c1 + &c2)).unwrap();
            assert!(e.eigenvalues.iter().all(|&l| (-1e-12..=1.0 + 1e-12).contains(&l)));
        }
    }

    proptest::proptest! {
        #[test]
        fn eigenvalues_scale_invariant(seed in 0u64..1000, s in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, 5);
            let b = random_spd(&mut rng, 5);
            let e1 = generalized_eig_sym(&a, &b).unwrap();
            let e2 = generalized_eig_sym(&(&a * s), &(&b * s)).unwrap();
            for (x, y) in e1.eigenvalues.iter().zip(&e2.eigenvalues) {
                proptest::prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn shrink_preserves_trace(seed in 0u64..1000, g in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Covariance::from_matrix(random_spd(&mut rng, 6), 20);
            let (s, _) = shrink(&c, Shrinkage::Fixed(g)).unwrap();
            proptest::prop_assert!((s.trace() - c.trace()).abs() <= 1e-12 * c.trace());
        }
    }
}
