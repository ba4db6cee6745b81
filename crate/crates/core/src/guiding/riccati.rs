//! Backward information filter `(U_t, V_t, c_t)` with
//! `log g(t, x) = c_t + <V_t, x> - x^T U_t x / 2`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dump::{write_dump, DumpMeta};
use crate::error::{check_len, Error, Result};
use crate::integrator::TimeGrid;
use crate::linalg::symmetrize;
use crate::observation::ObservationScheme;
use crate::spectral::LinearDynamics;

use super::Guide;

#[derive(Debug, Clone)]
struct Node {
    u: DMatrix<f64>,
    v: DVector<f64>,
    c: f64,
}

/// Riccati guide stored at every node of a time grid.
///
/// Memory is `O(nodes * M^2)`, so this is meant for moderate `M`.
#[derive(Debug, Clone)]
pub struct RiccatiGuide {
    grid: TimeGrid,
    dim: usize,
    /// `nodes[k][j]` is node `j` of interval `k`; the last node of an
    /// interval includes the observation jump at its end.
    nodes: Vec<Vec<Node>>,
}

struct Rhs<'a> {
    a: &'a DVector<f64>,
    q: &'a DVector<f64>,
}

impl Rhs<'_> {
    /// Derivatives in the backward variable `s = t_k - t`.
    fn eval(&self, u: &DMatrix<f64>, v: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = u.nrows();
        let mut uq = u.clone();
        for (j, mut col) in uq.column_iter_mut().enumerate() {
            col *= self.q[j];
        }
        let uqu = &uq * u;
        let du = DMatrix::from_fn(n, n, |i, j| -(self.a[i] * u[(i, j)] + u[(i, j)] * self.a[j] + uqu[(i, j)]));
        let uqv = &uq * v;
        let dv = DVector::from_fn(n, |i, _| -(self.a[i] * v[i] + uqv[i]));
        let tr: f64 = (0..n).map(|i| uq[(i, i)]).sum();
        let vqv: f64 = (0..n).map(|i| self.q[i] * v[i] * v[i]).sum();
        (du, dv, -0.5 * tr + 0.5 * vqv)
    }
}

impl RiccatiGuide {
    /// Integrates backward with classical RK4 at the grid step of each interval.
    pub fn build(
        scheme: &ObservationScheme,
        dynamics: &LinearDynamics,
        grid: &TimeGrid,
        y: &[DVector<f64>],
    ) -> Result<Self> {
        let dim = dynamics.dim();
        check_len(scheme.state_dim(), dim, "observation operator columns")?;
        check_len(grid.num_intervals(), y.len(), "observation rows")?;
        for row in y {
            check_len(scheme.len(), row.len(), "observation row")?;
        }
        let l = scheme.operator();
        let lt_si = l.transpose() * scheme.sigma_inv();
        let mut jump_u = &lt_si * l;
        symmetrize(&mut jump_u);
        let rhs = Rhs {
            a: dynamics.decay_rates(),
            q: dynamics.noise_spectrum(),
        };
        let n = grid.num_intervals();
        let mut nodes: Vec<Vec<Node>> = vec![Vec::new(); n];
        let mut u = DMatrix::zeros(dim, dim);
        let mut v = DVector::zeros(dim);
        let mut c = 0.0;
        for k in (0..n).rev() {
            u += &jump_u;
            v += &lt_si * &y[k];
            c += scheme.log_density_residual(&y[k]);
            let steps = grid.substeps(k);
            let h = grid.step(k);
            let mut col = Vec::with_capacity(steps + 1);
            col.push(Node {
                u: u.clone(),
                v: v.clone(),
                c,
            });
            for _ in 0..steps {
                let (k1u, k1v, k1c) = rhs.eval(&u, &v);
                let (k2u, k2v, k2c) = rhs.eval(&(&u + &k1u * (0.5 * h)), &(&v + &k1v * (0.5 * h)));
                let (k3u, k3v, k3c) = rhs.eval(&(&u + &k2u * (0.5 * h)), &(&v + &k2v * (0.5 * h)));
                let (k4u, k4v, k4c) = rhs.eval(&(&u + &k3u * h), &(&v + &k3v * h));
                u += (k1u + (k2u + k3u) * 2.0 + k4u) * (h / 6.0);
                v += (k1v + (k2v + k3v) * 2.0 + k4v) * (h / 6.0);
                c += (k1c + 2.0 * (k2c + k3c) + k4c) * (h / 6.0);
                symmetrize(&mut u);
                if !c.is_finite() || !u.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "Riccati integration diverged on interval {k}"
                    )));
                }
                col.push(Node {
                    u: u.clone(),
                    v: v.clone(),
                    c,
                });
            }
            col.reverse();
            nodes[k] = col;
        }
        Ok(Self {
            grid: grid.clone(),
            dim,
            nodes,
        })
    }

    fn node(&self, k: usize, t: f64) -> &Node {
        let start = self.grid.start(k);
        let h = self.grid.step(k);
        let j = ((t - start) / h).round().clamp(0.0, self.grid.substeps(k) as f64) as usize;
        &self.nodes[k][j]
    }

    /// `(U_t, V_t, c_t)` at the grid node nearest to `t` in interval `k`.
    pub fn state_at(&self, k: usize, t: f64) -> (&DMatrix<f64>, &DVector<f64>, f64) {
        let n = self.node(k, t);
        (&n.u, &n.v, n.c)
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Writes every stored node as a row `[t, c, V (M), U (M x M row-major)]`.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let m = self.dim;
        let width = 2 + m + m * m;
        let mut data = Vec::new();
        let mut times = Vec::new();
        for (k, col) in self.nodes.iter().enumerate() {
            for (j, node) in col.iter().enumerate() {
                let t = self.grid.node_time(k, j);
                times.push(t);
                data.push(t);
                data.push(node.c);
                data.extend(node.v.iter());
                for r in 0..m {
                    data.extend(node.u.row(r).iter());
                }
            }
        }
        let mut meta = DumpMeta::new(
            vec![times.len(), width],
            format!(
                "one row per (interval, node): t, c, V[0..{m}], U row-major [{m} x {m}]; \
                 node at an interval end includes its observation"
            ),
        );
        meta.row_times = times;
        write_dump(path, &data, &meta)
    }
}

impl Guide for RiccatiGuide {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_intervals(&self) -> usize {
        self.grid.num_intervals()
    }

    fn interval_bounds(&self, k: usize) -> (f64, f64) {
        (self.grid.start(k), self.grid.end(k))
    }

    fn score_into(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.node(k, t);
        for i in 0..self.dim {
            let ux: f64 = n.u.column(i).iter().zip(x).map(|(a, b)| a * b).sum();
            out[i] = n.v[i] - ux;
        }
    }

    fn log_g(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        let n = self.node(k, t);
        let xv = DVector::from_column_slice(x);
        n.c + n.v.dot(&xv) - 0.5 * xv.dot(&(&n.u * &xv))
    }
}

/// Exact scalar solution `u(tau) = e^{-2 a tau} / (1/u_T + q/(2a) (1 - e^{-2 a tau}))`
/// of the decoupled Riccati equation at lag `tau` before the terminal time.
pub fn riccati_mode_closed_form(a: f64, q: f64, u_terminal: f64, tau: f64) -> Result<f64> {
    if !(u_terminal > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "terminal value must be positive, got {u_terminal}"
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("lag must be nonnegative, got {tau}")));
    }
    let e = (-2.0 * a * tau).exp();
    Ok(e / (1.0 / u_terminal + q / (2.0 * a) * -(-2.0 * a * tau).exp_m1()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_limits() {
        assert_eq!(riccati_mode_closed_form(1.0, 0.5, 2.0, 0.0).unwrap(), 2.0);
        assert_relative_eq!(
            riccati_mode_closed_form(1.3, 0.0, 2.0, 0.7).unwrap(),
            2.0 * (-2.0 * 1.3 * 0.7f64).exp(),
            max_relative = 1e-14
        );
        assert!(riccati_mode_closed_form(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(riccati_mode_closed_form(1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn closed_form_matches_scalar_rk4() {
        // du/ds = -(2 a u + q u^2)
        let (a, q, u0, tau) = (1.0, 0.5, 2.0, 0.3);
        let f = |u: f64| -(2.0 * a * u + q * u * u);
        let n = 3000;
        let h = tau / n as f64;
        let mut u = u0;
        for _ in 0..n {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert_relative_eq!(riccati_mode_closed_form(a, q, u0, tau).unwrap(), u, epsilon = 1e-8);
    }

    #[test]
    fn no_dynamics_keeps_u_constant() {
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let scheme = ObservationScheme::from_matrices(l.clone(), DMatrix::from_element(1, 1, 0.1)).unwrap();
        // tiny decay stands in for A = 0; Q = 0
        let dynamics = LinearDynamics::uniform_decay(1e-300, DVector::zeros(2)).unwrap();
        let grid = TimeGrid::new(vec![1.0], vec![10]).unwrap();
        let y = [DVector::from_element(1, 0.4)];
        let r = RiccatiGuide::build(&scheme, &dynamics, &grid, &y).unwrap();
        let expect = l.transpose() * l * 10.0;
        for j in 0..=10 {
            let (u, _, _) = r.state_at(0, j as f64 * 0.1);
            assert!((u - &expect).amax() < 1e-12);
        }
    }

    #[test]
    fn terminal_values() {
        let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.2, -0.3, 1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let scheme = ObservationScheme::from_matrices(l.clone(), sigma.clone()).unwrap();
        let dynamics = LinearDynamics::uniform_decay(1.0, DVector::from_element(3, 0.3)).unwrap();
        let grid = TimeGrid::new(vec![0.5, 1.0], vec![5, 5]).unwrap();
        let y = [DVector::from_vec(vec![0.1, 0.2]), DVector::from_vec(vec![-0.3, 0.4])];
        let r = RiccatiGuide::build(&scheme, &dynamics, &grid, &y).unwrap();
        let si = sigma.try_inverse().unwrap();
        let (u, v, c) = r.state_at(1, 1.0);
        assert!((u - l.transpose() * &si * &l).amax() < 1e-12);
        assert!((v - l.transpose() * &si * &y[1]).amax() < 1e-12);
        assert_relative_eq!(c, scheme.log_density_residual(&y[1]), epsilon = 1e-12);
        let x = [0.0; 3];
        let mut s = [0.0; 3];
        r.score_into(0, 0.2, &x, &mut s);
        let (_, v0, c0) = r.state_at(0, 0.2);
        assert_eq!(&s[..], v0.as_slice());
        assert_eq!(r.log_g(0, 0.2, &x), c0);
    }

    #[test]
    fn dump_writes_rows() {
        let l = DMatrix::identity(2, 2);
        let scheme = ObservationScheme::from_matrices(l, DMatrix::identity(2, 2)).unwrap();
        let dynamics = LinearDynamics::uniform_decay(1.0, DVector::from_element(2, 0.3)).unwrap();
        let grid = TimeGrid::new(vec![0.5], vec![4]).unwrap();
        let r = RiccatiGuide::build(&scheme, &dynamics, &grid, &[DVector::zeros(2)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.bin");
        r.dump(&p).unwrap();
        let (data, meta) = crate::dump::read_dump(&p).unwrap();
        assert_eq!(meta.shape, vec![5, 8]);
        assert_eq!(data.len(), 40);
        assert_eq!(data[0], 0.0);
    }
}
