//! Error-state Kalman filter engine: transition matrix, time update, Joseph
//! measurement update and closed-loop feedback.
//!
//! The linear algebra of the time and measurement updates goes through
//! [`sparse`] products that skip structural zeros and accumulate every
//! element in ascending index order. A block of a larger filter whose
//! cross-covariances are zero therefore evolves bit-for-bit like a
//! standalone filter of the block's size.

use crate::geom::{apply_small_angle, skew, Mat3, Vec3};
use crate::model::{idx, Corrections, Covariance, ErrorState, ImuSample, NavState, SensorErrorModel};
use nalgebra::{SMatrix, SVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EkfError {
    #[error("error state must be zero entering prediction")]
    OpenLoop,
    #[error("covariance asymmetric by {0:e}")]
    Asymmetric(f64),
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("attitude correction of {0} rad exceeds the small-angle limit")]
    Divergence(f64),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// Observation of the error state: innovation `z = ẑ − z̃`, design matrix
/// and diagonal noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMeasurement<const M: usize, const N: usize = { idx::N }> {
    pub z: SVector<f64, M>,
    pub h: SMatrix<f64, M, N>,
    pub r: SVector<f64, M>,
}

impl<const M: usize, const N: usize> LinearMeasurement<M, N> {
    pub fn validate(&self) -> Result<(), EkfError> {
        if !self.z.iter().chain(self.h.iter()).all(|v| v.is_finite()) {
            return Err(EkfError::NonFinite("measurement"));
        }
        if let Some(r) = self.r.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(EkfError::InvalidMeasurement(format!("noise variance {r} must be positive")));
        }
        Ok(())
    }

    /// Same rows with the columns placed at `offset` of a larger state.
    pub fn embed<const N2: usize>(&self, offset: usize) -> LinearMeasurement<M, N2> {
        assert!(offset + N <= N2);
        let mut h = SMatrix::<f64, M, N2>::zeros();
        h.fixed_view_mut::<M, N>(0, offset).copy_from(&self.h);
        LinearMeasurement { z: self.z, h, r: self.r }
    }
}

/// What an update did, for logging and consistency checks.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateInfo<const M: usize, const N: usize> {
    /// `z − Hx` before the update.
    pub innovation: SVector<f64, M>,
    pub s: SMatrix<f64, M, M>,
    pub gain: SMatrix<f64, N, M>,
    /// Normalized innovation squared.
    pub nis: f64,
}

/// Continuous-time error dynamics `F` at attitude `c_bn` with compensated
/// angular rate `omega` and specific force `f`.
pub fn error_dynamics(c_bn: &Mat3, omega: &Vec3, f: &Vec3, err: &SensorErrorModel) -> Covariance {
    use idx::*;
    let mut m = Covariance::zeros();
    m.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&Mat3::identity());
    m.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&skew(&(c_bn * f)));
    m.fixed_view_mut::<3, 3>(VEL, BA).copy_from(c_bn);
    m.fixed_view_mut::<3, 3>(VEL, SA).copy_from(&(c_bn * Mat3::from_diagonal(f)));
    m.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&(-c_bn));
    m.fixed_view_mut::<3, 3>(ATT, SG).copy_from(&(-c_bn * Mat3::from_diagonal(omega)));
    for (start, tau) in [(BG, err.tau_bg), (BA, err.tau_ba), (SG, err.tau_sg), (SA, err.tau_sa)] {
        for k in start..start + 3 {
            m[(k, k)] = -1.0 / tau;
        }
    }
    m
}

/// Diagonal of the continuous process noise PSD.
pub fn noise_psd(err: &SensorErrorModel) -> ErrorState {
    use idx::*;
    let mut q = ErrorState::zeros();
    let gm = |sigma: f64, tau: f64| 2.0 * sigma * sigma / tau;
    for k in 0..3 {
        q[VEL + k] = err.vrw * err.vrw;
        q[ATT + k] = err.arw * err.arw;
        q[BG + k] = gm(err.gyro_bias_std, err.tau_bg);
        q[BA + k] = gm(err.accel_bias_std, err.tau_ba);
        q[SG + k] = gm(err.gyro_sf_std, err.tau_sg);
        q[SA + k] = gm(err.accel_sf_std, err.tau_sa);
    }
    q
}

/// First-order transition `Φ = I + F dt` and trapezoidal process noise
/// `Qd = ½(Φ Q Φᵀ + Q) dt`, for a compensated `sample`.
pub fn build_transition(
    state: &NavState,
    sample: &ImuSample,
    err: &SensorErrorModel,
    dt: f64,
) -> Result<(Covariance, Covariance), EkfError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EkfError::BadStep(dt));
    }
    let phi = transition_matrix(state, sample, err, dt);
    let q = Covariance::from_diagonal(&noise_psd(err));
    let qd = (phi * q * phi.transpose() + q) * (0.5 * dt);
    if !phi.iter().chain(qd.iter()).all(|v| v.is_finite()) {
        return Err(EkfError::NonFinite("transition"));
    }
    Ok((phi, qd))
}

pub(crate) fn transition_matrix(state: &NavState, sample: &ImuSample, err: &SensorErrorModel, dt: f64) -> Covariance {
    let mut phi = error_dynamics(state.att.matrix(), &sample.gyro, &sample.accel, err) * dt;
    for k in 0..idx::N {
        phi[(k, k)] += 1.0;
    }
    phi
}

/// Time update `P ← Φ P Φᵀ + Qd`. The error state must be zero (closed loop).
pub fn predict<const N: usize>(
    x: &SVector<f64, N>,
    p: &SMatrix<f64, N, N>,
    phi: &SMatrix<f64, N, N>,
    qd: &SMatrix<f64, N, N>,
) -> Result<SMatrix<f64, N, N>, EkfError> {
    if x.iter().any(|v| *v != 0.0) {
        return Err(EkfError::OpenLoop);
    }
    let mut out = sparse::sandwich(phi, p);
    out += qd;
    symmetrize(&mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EkfError::NonFinite("covariance"));
    }
    Ok(out)
}

/// Time update with diagonal noise, `P ← Φ(P + ½Q dt)Φᵀ + ½Q dt`; equal to
/// [`predict`] with the trapezoidal `Qd` of [`build_transition`].
pub fn predict_diag<const N: usize>(
    p: &mut SMatrix<f64, N, N>,
    phi: &SMatrix<f64, N, N>,
    q_half_dt: &SVector<f64, N>,
) -> Result<(), EkfError> {
    let mut pq = *p;
    for k in 0..N {
        pq[(k, k)] += q_half_dt[k];
    }
    let mut out = sparse::sandwich(phi, &pq);
    for k in 0..N {
        out[(k, k)] += q_half_dt[k];
    }
    symmetrize(&mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EkfError::NonFinite("covariance"));
    }
    *p = out;
    Ok(())
}

/// Joseph-form measurement update.
pub fn update<const N: usize, const M: usize>(
    x: &mut SVector<f64, N>,
    p: &mut SMatrix<f64, N, N>,
    m: &LinearMeasurement<M, N>,
) -> Result<UpdateInfo<M, N>, EkfError> {
    m.validate()?;
    let pht = sparse::mul_transposed(p, &m.h);
    let mut s = sparse::mul(&m.h, &pht);
    for k in 0..M {
        s[(k, k)] += m.r[k];
    }
    let s = (s + s.transpose()) * 0.5;
    let s_inv = s.cholesky().ok_or(EkfError::SingularInnovation)?.inverse();
    let gain = sparse::mul(&pht, &s_inv);
    let innovation = m.z - sparse::mul(&m.h, x);
    let nis = (innovation.transpose() * s_inv * innovation)[0];

    let mut a = sparse::mul(&gain, &m.h);
    a.neg_mut();
    for k in 0..N {
        a[(k, k)] += 1.0;
    }
    let mut out = sparse::sandwich(&a, p);
    for i in 0..N {
        for j in 0..N {
            let mut krk = 0.0;
            for k in 0..M {
                krk += gain[(i, k)] * m.r[k] * gain[(j, k)];
            }
            out[(i, j)] += krk;
        }
    }
    symmetrize(&mut out);
    let dx = sparse::mul(&gain, &innovation);
    if !out.iter().chain(dx.iter()).all(|v| v.is_finite()) {
        return Err(EkfError::NonFinite("update"));
    }
    *x += dx;
    *p = out;
    Ok(UpdateInfo { innovation, s, gain, nis })
}

/// Applies the error estimate to the navigation state and sensor
/// corrections, then zeroes it. A zero block leaves its part untouched.
pub fn feedback(nav: &mut NavState, corr: &mut Corrections, x: &mut ErrorState) -> Result<(), EkfError> {
    use idx::*;
    let block = |k: usize| Vec3::new(x[k], x[k + 1], x[k + 2]);
    let phi = block(ATT);
    if phi != Vec3::zeros() {
        nav.att = apply_small_angle(&nav.att, &-phi).map_err(|_| EkfError::Divergence(phi.norm()))?;
    }
    nav.pos -= block(POS);
    nav.vel -= block(VEL);
    corr.gyro_bias += block(BG);
    corr.accel_bias += block(BA);
    corr.gyro_scale += block(SG);
    corr.accel_scale += block(SA);
    x.fill(0.0);
    Ok(())
}

/// Elementwise `(P + Pᵀ)/2`.
pub fn symmetrize<const N: usize>(p: &mut SMatrix<f64, N, N>) {
    for i in 0..N {
        for j in i + 1..N {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Symmetric within 1e-10 (relative to the largest entry) and positive
/// semidefinite up to round-off (eigenvalues ≥ −1e-12·trace).
pub fn check_covariance<const N: usize>(p: &SMatrix<f64, N, N>) -> Result<(), EkfError> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(EkfError::NonFinite("covariance"));
    }
    let scale = p.amax().max(f64::MIN_POSITIVE);
    let asym = (p - p.transpose()).amax() / scale;
    if asym > 1e-10 {
        return Err(EkfError::Asymmetric(asym));
    }
    let mut shifted = *p;
    let eps = 1e-12 * p.trace().abs().max(f64::MIN_POSITIVE);
    for k in 0..N {
        shifted[(k, k)] += eps;
    }
    shifted.cholesky().map(|_| ()).ok_or(EkfError::NotPsd)
}

/// Products that skip structural zeros of one factor. Each output element
/// is accumulated in ascending index order starting from zero.
pub mod sparse {
    use nalgebra::SMatrix;

    /// `a · b`, skipping zeros of `a`.
    pub fn mul<const R: usize, const K: usize, const C: usize>(
        a: &SMatrix<f64, R, K>,
        b: &SMatrix<f64, K, C>,
    ) -> SMatrix<f64, R, C> {
        let (ptr, nz) = columns(a);
        let mut out = SMatrix::<f64, R, C>::zeros();
        let o = out.as_mut_slice();
        let bs = b.as_slice();
        for j in 0..C {
            for k in 0..K {
                let bkj = bs[j * K + k];
                for &(i, aik) in &nz[ptr[k]..ptr[k + 1]] {
                    o[j * R + i] += aik * bkj;
                }
            }
        }
        out
    }

    /// `a · bᵀ`, skipping zeros of `b`.
    pub fn mul_transposed<const R: usize, const K: usize, const C: usize>(
        a: &SMatrix<f64, R, K>,
        b: &SMatrix<f64, C, K>,
    ) -> SMatrix<f64, R, C> {
        let mut out = SMatrix::<f64, R, C>::zeros();
        let o = out.as_mut_slice();
        let a_s = a.as_slice();
        for c in 0..C {
            for k in 0..K {
                let bck = b[(c, k)];
                if bck == 0.0 {
                    continue;
                }
                let src = &a_s[k * R..(k + 1) * R];
                let dst = &mut o[c * R..(c + 1) * R];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * bck;
                }
            }
        }
        out
    }

    /// `a · p · aᵀ`, skipping zeros of `a`.
    pub fn sandwich<const N: usize>(a: &SMatrix<f64, N, N>, p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
        mul_transposed(&mul(a, p), a)
    }

    /// Column-compressed nonzeros of `a`: `(row, value)` per column.
    fn columns<const R: usize, const K: usize>(a: &SMatrix<f64, R, K>) -> (Vec<usize>, Vec<(usize, f64)>) {
        let mut ptr = Vec::with_capacity(K + 1);
        let mut nz = Vec::new();
        ptr.push(0);
        for k in 0..K {
            for (i, v) in a.column(k).iter().enumerate() {
                if *v != 0.0 {
                    nz.push((i, *v));
                }
            }
            ptr.push(nz.len());
        }
        (ptr, nz)
    }
}
