//! Local-average observation operator and the Gaussian observation density.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{chol_logdet, cholesky};
use crate::rng::standard_normals;
use crate::spectral::{LinearDynamics, SpectralGrid};

/// Linear observations `y = L x + eps`, `eps ~ N(0, Sigma)`, in mode coordinates.
#[derive(Debug, Clone)]
pub struct ObservationScheme {
    l: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_chol: Cholesky<f64, Dyn>,
    sigma_inv: DMatrix<f64>,
    logdet_sigma: f64,
    cells: Option<(Vec<f64>, f64)>,
}

impl ObservationScheme {
    /// Arbitrary observation matrix `L` (m x M) and SPD noise covariance `Sigma`.
    pub fn from_matrices(l: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        check_len(l.nrows(), sigma.nrows(), "noise covariance rows")?;
        check_len(l.nrows(), sigma.ncols(), "noise covariance columns")?;
        if l.nrows() == 0 {
            return Err(Error::InvalidParameter("no observation rows".into()));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-12 * sigma.abs().max() {
            return Err(Error::NotPositiveDefinite("noise covariance is not symmetric".into()));
        }
        let sigma_chol = cholesky(&sigma, "observation noise covariance")?;
        let sigma_inv = sigma_chol.inverse();
        let logdet_sigma = chol_logdet(&sigma_chol);
        Ok(Self {
            l,
            sigma,
            sigma_chol,
            sigma_inv,
            logdet_sigma,
            cells: None,
        })
    }

    /// Averages over the cells `[c_j - w/2, c_j + w/2]` with `Sigma = sigma_scale * I`.
    pub fn local_average(
        grid: &SpectralGrid,
        centers: &[f64],
        width: f64,
        sigma_scale: f64,
    ) -> Result<Self> {
        let l = build_local_average_operator(grid, centers, width)?;
        if !(sigma_scale > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "noise scale must be positive, got {sigma_scale}"
            )));
        }
        let m = centers.len();
        let mut s = Self::from_matrices(l, DMatrix::identity(m, m) * sigma_scale)?;
        s.cells = Some((centers.to_vec(), width));
        Ok(s)
    }

    /// Number of observed functionals `m`.
    pub fn len(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.l.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.l.ncols()
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn logdet_sigma(&self) -> f64 {
        self.logdet_sigma
    }

    pub fn cells(&self) -> Option<(&[f64], f64)> {
        self.cells.as_ref().map(|(c, w)| (c.as_slice(), *w))
    }

    /// Draws `L x + Sigma^{1/2} z`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        check_len(self.state_dim(), x.len(), "state")?;
        let z = DVector::from_vec(standard_normals(rng, self.len()));
        Ok(&self.l * DVector::from_column_slice(x) + self.sigma_chol.l() * z)
    }

    /// Gaussian log-density `log f(y; L x, Sigma)`.
    pub fn log_density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.state_dim(), x.len(), "state")?;
        check_len(self.len(), y.len(), "observation")?;
        Ok(self.log_density_unchecked(x, y))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r = DVector::from_column_slice(y);
        for j in 0..self.len() {
            let row = self.l.row(j);
            r[j] -= row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.log_density_residual(&r)
    }

    /// `log f(r; 0, Sigma)`.
    pub fn log_density_residual(&self, r: &DVector<f64>) -> f64 {
        let w = self
            .sigma_chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("Cholesky factor is nonsingular");
        let m = self.len() as f64;
        -0.5 * (m * (2.0 * PI).ln() + self.logdet_sigma + w.norm_squared())
    }

    /// `L diag(q) L^T`.
    pub fn lql_matrix(&self, dynamics: &LinearDynamics) -> Result<DMatrix<f64>> {
        check_len(self.state_dim(), dynamics.dim(), "dynamics dimension")?;
        Ok(weighted_gram(&self.l, dynamics.noise_spectrum()))
    }
}

/// `A diag(w) A^T` for an `m x M` matrix `A`.
pub(crate) fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let mut g = &scaled * a.transpose();
    crate::linalg::symmetrize(&mut g);
    g
}

/// Equally spaced centres `-|D|/2 + (j - 1/2)|D|/m` for `j = 1..m`.
pub fn equally_spaced_centers(domain_length: f64, m: usize) -> Vec<f64> {
    (1..=m)
        .map(|j| -0.5 * domain_length + (j as f64 - 0.5) * domain_length / m as f64)
        .collect()
}

/// Rows `L[j, l] = (1/w) int_{c_j - w/2}^{c_j + w/2} e_l`, from exact antiderivatives.
pub fn build_local_average_operator(
    grid: &SpectralGrid,
    centers: &[f64],
    width: f64,
) -> Result<DMatrix<f64>> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter("no observation cells".into()));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("cell width must be positive, got {width}")));
    }
    let half = 0.5 * grid.domain_length();
    let tol = 1e-12 * grid.domain_length();
    for &c in centers {
        if c - 0.5 * width < -half - tol || c + 0.5 * width > half + tol {
            return Err(Error::InvalidParameter(format!(
                "cell centred at {c} with width {width} leaves the domain"
            )));
        }
    }
    let mut sorted = centers.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if w[1] - w[0] < width - tol {
            return Err(Error::InvalidParameter(format!(
                "cells centred at {} and {} overlap",
                w[0], w[1]
            )));
        }
    }
    let m = grid.len();
    Ok(DMatrix::from_fn(centers.len(), m, |j, l| {
        let a = centers[j] - 0.5 * width;
        let b = centers[j] + 0.5 * width;
        (grid.basis_antiderivative(l, b) - grid.basis_antiderivative(l, a)) / width
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn reference_scheme(m: usize) -> (SpectralGrid, ObservationScheme) {
        let g = SpectralGrid::new(20.0 * PI, m).unwrap();
        let centers = equally_spaced_centers(20.0 * PI, 15);
        let s = ObservationScheme::local_average(&g, &centers, 1.0, 0.01).unwrap();
        (g, s)
    }

    #[test]
    fn constant_field_is_reproduced() {
        let (g, s) = reference_scheme(64);
        let x = g.to_modes(&vec![1.7; 64]).unwrap();
        let y = s.operator() * x;
        for v in y.iter() {
            assert_relative_eq!(*v, 1.7, epsilon = 1e-12);
        }
        assert_eq!(s.len(), 15);
    }

    #[test]
    fn centers_layout() {
        let c = equally_spaced_centers(20.0 * PI, 15);
        assert_relative_eq!(c[7], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c[0], -10.0 * PI + 10.0 * PI / 15.0, epsilon = 1e-12);
    }

    #[test]
    fn whole_domain_cell() {
        let g = SpectralGrid::new(6.0, 16).unwrap();
        let l = build_local_average_operator(&g, &[0.0], 6.0).unwrap();
        assert_relative_eq!(l[(0, 0)], 1.0 / 6.0f64.sqrt(), epsilon = 1e-14);
        for k in 1..16 {
            assert!(l[(0, k)].abs() < 1e-14);
        }
    }

    #[test]
    fn cosine_cell_average() {
        // average of sqrt(2/|D|) cos(k s) over [a, b], s = xi + |D|/2, by hand
        let len = 20.0 * PI;
        let g = SpectralGrid::new(len, 32).unwrap();
        let l = build_local_average_operator(&g, &[1.3], 1.0).unwrap();
        for idx in [1usize, 5, 9] {
            let k = g.wavenumber(idx);
            let (a, b) = (1.3 - 0.5 + len / 2.0, 1.3 + 0.5 + len / 2.0);
            let exact = (2.0 / len).sqrt() * ((k * b).sin() - (k * a).sin()) / k;
            assert_relative_eq!(l[(0, idx)], exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn invalid_cells() {
        let g = SpectralGrid::new(10.0, 16).unwrap();
        assert!(build_local_average_operator(&g, &[0.0, 0.5], 1.0).is_err());
        assert!(build_local_average_operator(&g, &[4.8], 1.0).is_err());
        assert!(build_local_average_operator(&g, &[], 1.0).is_err());
        assert!(build_local_average_operator(&g, &[0.0], 0.0).is_err());
    }

    #[test]
    fn zero_residual_density() {
        let (g, s) = reference_scheme(32);
        let x: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let y = s.operator() * DVector::from_column_slice(&x);
        let ld = s.log_density(&x, y.as_slice()).unwrap();
        let expect = -7.5 * (2.0 * PI).ln() - 0.5 * 15.0 * 0.01f64.ln();
        assert_relative_eq!(ld, expect, epsilon = 1e-10);
        assert_eq!(g.len(), 32);
    }

    #[test]
    fn density_integrates_to_one() {
        let l = DMatrix::identity(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let s = ObservationScheme::from_matrices(l, sigma).unwrap();
        let h = 0.02;
        let mut total = 0.0;
        for i in -300..=300 {
            for j in -300..=300 {
                let y = [i as f64 * h, j as f64 * h];
                total += s.log_density(&[0.0, 0.0], &y).unwrap().exp() * h * h;
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn lql_brute_force() {
        let g = SpectralGrid::new(4.0, 8).unwrap();
        let s = ObservationScheme::local_average(&g, &[-1.0, 1.0], 0.8, 0.01).unwrap();
        let q = DVector::from_fn(8, |i, _| 1.0 / (1.0 + i as f64));
        let dynamics = LinearDynamics::uniform_decay(1.0, q.clone()).unwrap();
        let c = s.lql_matrix(&dynamics).unwrap();
        let l = s.operator();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..8 {
                    acc += q[k] * l[(i, k)] * l[(j, k)];
                }
                assert_relative_eq!(c[(i, j)], acc, epsilon = 1e-14);
            }
        }
        assert_eq!(c[(0, 1)], c[(1, 0)]);
        let zero = LinearDynamics::uniform_decay(1.0, DVector::zeros(8)).unwrap();
        assert!(s.lql_matrix(&zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lql_is_psd() {
        let (g, s) = reference_scheme(128);
        let q = crate::spectral::matern_spectrum(&crate::spectral::MaternParams::new(3e5, 5e-5, 1.0), &g).unwrap();
        let d = LinearDynamics::uniform_decay(1.0, q).unwrap();
        let eig = SymmetricEigen::new(s.lql_matrix(&d).unwrap());
        assert!(eig.eigenvalues.min() >= -1e-12);
    }

    #[test]
    fn observe_is_seeded() {
        let (_, s) = reference_scheme(16);
        let x = vec![0.1; 16];
        let a = s.observe(&x, &mut crate::rng::stream(3, &[])).unwrap();
        let b = s.observe(&x, &mut crate::rng::stream(3, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_sigma() {
        let l = DMatrix::identity(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(ObservationScheme::from_matrices(l, bad).is_err());
    }
}
