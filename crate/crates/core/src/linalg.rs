//! Dense symmetric positive-definite precision state.
//!
//! [`SpdState`] carries `Σ`, a maintained `Σ⁻¹` and `ln det Σ` together.
//! Rank-one updates keep all three in sync through the Sherman–Morrison
//! identity and the matrix determinant lemma; every [`REFRESH_INTERVAL`]
//! updates the inverse and log-determinant are rebuilt from a Cholesky
//! factorisation of `Σ` to bound accumulated rounding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of rank-one updates between full refactorisations.
pub const REFRESH_INTERVAL: usize = 4096;

/// Slack allowed on the unit-norm precondition of update directions.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdState {
    dim: usize,
    lambda: f64,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    log_det: f64,
    since_refresh: usize,
    updates: usize,
}

impl SpdState {
    /// `λ·I_d` with inverse `λ⁻¹·I_d` and log-determinant `d·ln λ`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            dim,
            lambda,
            sigma: DMatrix::identity(dim, dim) * lambda,
            sigma_inv: DMatrix::identity(dim, dim) * lambda.recip(),
            log_det: dim as f64 * lambda.ln(),
            since_refresh: 0,
            updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Total number of non-trivial rank-one updates applied.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// `Σ ← Σ + w·φφᵀ` with `w = inv_weight > 0` and `‖φ‖₂ ≤ 1`.
    pub fn rank_one_update(&mut self, phi: &[f64], inv_weight: f64) -> Result<()> {
        self.check_len(phi)?;
        if !(inv_weight > 0.0) || !inv_weight.is_finite() {
            return Err(invalid(format!("update weight must be positive, got {inv_weight}")));
        }
        let norm_sq: f64 = phi.iter().map(|x| x * x).sum();
        if norm_sq.sqrt() > 1.0 + NORM_SLACK {
            return Err(invalid(format!(
                "update direction norm {} exceeds 1",
                norm_sq.sqrt()
            )));
        }
        if norm_sq == 0.0 {
            return Ok(());
        }

        let d = self.dim;
        let phi_v = DVector::from_column_slice(phi);
        let u = &self.sigma_inv * &phi_v;
        let denom = 1.0 + inv_weight * phi_v.dot(&u);
        let scale = inv_weight / denom;
        for j in 0..d {
            for i in 0..d {
                self.sigma[(i, j)] += inv_weight * phi[i] * phi[j];
                self.sigma_inv[(i, j)] -= scale * u[i] * u[j];
            }
        }
        symmetrize(&mut self.sigma);
        symmetrize(&mut self.sigma_inv);
        self.log_det += denom.ln();
        self.updates += 1;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
        Ok(())
    }

    /// `φᵀ Σ⁻¹ φ`, clamped below at zero.
    pub fn quad_form(&self, phi: &[f64]) -> Result<f64> {
        self.check_len(phi)?;
        Ok(quad_with(&self.sigma_inv, phi))
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        self.check_len(b)?;
        Ok(&self.sigma_inv * DVector::from_column_slice(b))
    }

    /// Same as [`solve`](Self::solve) for an owned vector.
    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.as_slice())?;
        Ok(&self.sigma_inv * b)
    }

    /// Rebuild `Σ⁻¹` and `ln det Σ` from a Cholesky factorisation of `Σ`.
    pub fn refresh(&mut self) {
        self.since_refresh = 0;
        // Σ ⪰ λI with λ > 0, so the factorisation exists up to rounding.
        if let Some(chol) = self.sigma.clone().cholesky() {
            let l = chol.l_dirty();
            self.log_det = 2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>();
            self.sigma_inv = chol.inverse();
            symmetrize(&mut self.sigma_inv);
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(invalid(format!(
                "vector has length {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// `φᵀ A φ` for symmetric `A`, clamped below at zero.
pub fn quad_with(a: &DMatrix<f64>, phi: &[f64]) -> f64 {
    let d = phi.len();
    let mut acc = 0.0;
    for j in 0..d {
        let pj = phi[j];
        if pj == 0.0 {
            continue;
        }
        let col = a.column(j);
        let mut inner = 0.0;
        for i in 0..d {
            inner += col[i] * phi[i];
        }
        acc += pj * inner;
    }
    acc.max(0.0)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        use nalgebra::DMatrix;

        pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
            (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs()))
        }
    }

    fn random_unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r: f64 = rng.gen_range(0.0..1.0);
        v.into_iter().map(|x| x / n * r).collect()
    }

    fn grown_state(seed: u64, d: usize, lambda: f64, updates: usize) -> SpdState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = SpdState::new(d, lambda).unwrap();
        for _ in 0..updates {
            let phi = random_unit_ball(&mut rng, d);
            let w = rng.gen_range(0.05..1.0);
            st.rank_one_update(&phi, w).unwrap();
        }
        st
    }

    #[test]
    fn init_identity() {
        let st = SpdState::new(2, 1.0).unwrap();
        assert_eq!(st.sigma(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(st.log_det(), 0.0);
    }

    #[test]
    fn init_scaled_log_det() {
        let st = SpdState::new(3, 0.25).unwrap();
        assert!((st.log_det() - 3.0 * 0.25f64.ln()).abs() < 1e-15);
        assert!((st.sigma_inv()[(1, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn init_lambda_one_over_h_squared() {
        let h = 4.0;
        let st = SpdState::new(1, 1.0 / (h * h)).unwrap();
        assert_eq!(st.sigma()[(0, 0)], 1.0 / 16.0);
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(SpdState::new(0, 1.0).is_err());
        assert!(SpdState::new(2, 0.0).is_err());
        assert!(SpdState::new(2, -1.0).is_err());
    }

    #[test]
    fn zero_direction_leaves_state_unchanged() {
        let mut st = grown_state(3, 4, 0.5, 10);
        let before = st.clone();
        st.rank_one_update(&[0.0; 4], 0.7).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn axis_aligned_update() {
        let mut st = SpdState::new(2, 1.0).unwrap();
        st.rank_one_update(&[1.0, 0.0], 1.0).unwrap();
        assert_eq!(st.sigma(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert!((st.log_det() - 2f64.ln()).abs() < 1e-15);
        assert!((st.sigma_inv()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn update_rejects_precondition_violations() {
        let mut st = SpdState::new(2, 1.0).unwrap();
        assert!(st.rank_one_update(&[1.0, 1.0], 1.0).is_err());
        assert!(st.rank_one_update(&[0.5, 0.0], 0.0).is_err());
        assert!(st.rank_one_update(&[0.5], 1.0).is_err());
    }

    #[test]
    fn maintained_inverse_matches_direct_inversion() {
        let st = grown_state(11, 4, 1.0, 50);
        let direct = st.sigma().clone().try_inverse().unwrap();
        assert!(max_abs(st.sigma_inv(), &direct) <= 1e-8);
        let direct_log_det = st.sigma().clone().lu().determinant().ln();
        assert!((st.log_det() - direct_log_det).abs() <= 1e-10);
    }

    #[test]
    fn quad_form_scaled_identity() {
        let st = SpdState::new(3, 0.5).unwrap();
        let phi = [0.6, 0.0, 0.8];
        assert!((st.quad_form(&phi).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(st.quad_form(&[0.0; 3]).unwrap(), 0.0);
        assert!(st.quad_form(&[1.0]).is_err());
    }

    #[test]
    fn quad_form_matches_linear_solve() {
        let st = grown_state(5, 5, 0.3, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let phi = random_unit_ball(&mut rng, 5);
            let x = st
                .sigma()
                .clone()
                .lu()
                .solve(&DVector::from_column_slice(&phi))
                .unwrap();
            let expected = DVector::from_column_slice(&phi).dot(&x);
            assert!((st.quad_form(&phi).unwrap() - expected).abs() <= 1e-9);
        }
    }

    #[test]
    fn solve_examples() {
        let st = SpdState::new(3, 2.0).unwrap();
        assert_eq!(st.solve(&[0.0; 3]).unwrap(), DVector::zeros(3));
        let x = st.solve(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(x, DVector::from_column_slice(&[1.0, 2.0, 3.0]));
        assert!(st.solve(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn solve_residual_small() {
        let st = grown_state(8, 6, 0.1, 200);
        let b = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
        let x = st.solve(b.as_slice()).unwrap();
        let r = st.sigma() * x - &b;
        assert!(r.amax() <= 1e-7);
    }

    #[test]
    fn refresh_keeps_state_consistent() {
        let mut st = grown_state(21, 3, 0.2, REFRESH_INTERVAL + 10);
        let direct = st.sigma().clone().try_inverse().unwrap();
        assert!(max_abs(st.sigma_inv(), &direct) <= 1e-8);
        let before = st.log_det();
        st.refresh();
        assert!((st.log_det() - before).abs() <= 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn log_det_monotone_and_quad_bounded(seed in 0u64..500, d in 1usize..6, n in 1usize..40) {
            let lambda = 0.25;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut st = SpdState::new(d, lambda).unwrap();
            for _ in 0..n {
                let phi = random_unit_ball(&mut rng, d);
                let w = rng.gen_range(1e-4..1.0);
                let prev = st.log_det();
                st.rank_one_update(&phi, w).unwrap();
                proptest::prop_assert!(st.log_det() >= prev);
                let probe = random_unit_ball(&mut rng, d);
                let bound = probe.iter().map(|x| x * x).sum::<f64>() / lambda;
                proptest::prop_assert!(st.quad_form(&probe).unwrap() <= bound + 1e-12);
            }
            let eig = st.sigma().clone().symmetric_eigen();
            proptest::prop_assert!(eig.eigenvalues.min() >= lambda - 1e-9);
            let asym = max_abs(st.sigma(), &st.sigma().transpose());
            proptest::prop_assert!(asym <= 1e-9);
        }
    }
}
