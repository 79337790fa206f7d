//! Kalman filtering, Riccati and Lyapunov solvers, LQG design.
//!
//! Time indices follow the usual convention: a [`FilterState`] at time `k`
//! holds the one-step prediction `x̂_{k|k-1}` and `P_{k|k-1}`; the
//! measurement update at `k` produces `x̂_{k|k}`, the gain `K_k` and the
//! normalized residue `z_k`, and the time update with `u_k` moves to `k+1`.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::SystemModel;

pub const RICCATI_RTOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;

/// Kalman filter state at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub k: usize,
    /// `x̂_{k|k-1}`
    pub x_pred: Vector,
    /// `P_{k|k-1}`
    pub p_pred: Matrix,
    /// `x̂_{k-1|k-1}` from the last measurement update (prior mean at k = 0).
    pub x_filt: Vector,
    /// `K_{k-1}` from the last measurement update (zero at k = 0).
    pub gain: Matrix,
    /// `z_{k-1}` from the last measurement update (zero at k = 0).
    pub z: Vector,
}

impl FilterState {
    pub fn initial(model: &SystemModel) -> Self {
        FilterState {
            k: 0,
            x_pred: model.x0_mean.clone(),
            p_pred: model.x0_cov.clone(),
            x_filt: model.x0_mean.clone(),
            gain: Matrix::zeros(model.n(), model.m()),
            z: Vector::zeros(model.m()),
        }
    }
}

/// Output of the measurement update at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementUpdate {
    pub x_filt: Vector,
    pub gain: Matrix,
    pub z: Vector,
    /// `P_{k|k}`
    pub p_filt: Matrix,
}

/// Gain and residue normalization for a given prediction covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GainStep {
    pub gain: Matrix,
    /// `(C P C' + R)^{-1/2}`, symmetric root.
    pub pz_inv_sqrt: Matrix,
}

pub fn gain_step(model: &SystemModel, p_pred: &Matrix) -> Result<GainStep> {
    let pz = linalg::symmetrize(&(&model.c * p_pred * model.c.transpose() + &model.r));
    let pz_inv = linalg::inverse_pd(&pz).map_err(|_| Error::InnovationNotPd)?;
    let pz_inv_sqrt = linalg::inv_sqrt_pd(&pz).map_err(|_| Error::InnovationNotPd)?;
    Ok(GainStep {
        gain: p_pred * model.c.transpose() * pz_inv,
        pz_inv_sqrt,
    })
}

/// `P_{k+1|k} = A P A' + Q - A K C P A'`.
pub fn predict_covariance(model: &SystemModel, p_pred: &Matrix, gain: &Matrix) -> Matrix {
    let a = &model.a;
    let next = a * p_pred * a.transpose() + &model.q - a * gain * &model.c * p_pred * a.transpose();
    linalg::symmetrize(&next)
}

pub fn measurement_update(
    state: &FilterState,
    model: &SystemModel,
    y: &Vector,
) -> Result<MeasurementUpdate> {
    if y.len() != model.m() {
        return Err(dim_err("y", (model.m(), 1), (y.len(), 1)));
    }
    let g = gain_step(model, &state.p_pred)?;
    let innovation = y - &model.c * &state.x_pred;
    let x_filt = &state.x_pred + &g.gain * &innovation;
    let p_filt = &state.p_pred - &g.gain * &model.c * &state.p_pred;
    Ok(MeasurementUpdate {
        x_filt,
        z: &g.pz_inv_sqrt * innovation,
        gain: g.gain,
        p_filt: linalg::symmetrize(&p_filt),
    })
}

pub fn time_update(
    state: &FilterState,
    upd: MeasurementUpdate,
    model: &SystemModel,
    u: &Vector,
) -> Result<FilterState> {
    if u.len() != model.p() {
        return Err(dim_err("u", (model.p(), 1), (u.len(), 1)));
    }
    let x_pred = &model.a * &upd.x_filt + &model.b * u;
    let p_pred = predict_covariance(model, &state.p_pred, &upd.gain);
    Ok(FilterState {
        k: state.k + 1,
        x_pred,
        p_pred,
        x_filt: upd.x_filt,
        gain: upd.gain,
        z: upd.z,
    })
}

/// One full Kalman recursion: measurement update with `y_k`, then time
/// update with `u_k`.
pub fn kalman_step(
    state: &FilterState,
    model: &SystemModel,
    u: &Vector,
    y: &Vector,
) -> Result<FilterState> {
    let upd = measurement_update(state, model, y)?;
    time_update(state, upd, model, u)
}

/// Data-independent part of the filter over a horizon: `P_{k|k-1}`, `K_k`
/// and the residue normalization for `k = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSchedule {
    pub p_pred: Vec<Matrix>,
    pub steps: Vec<GainStep>,
}

impl CovarianceSchedule {
    /// Time-varying schedule starting from `P_{0|-1} = x0_cov`.
    pub fn time_varying(model: &SystemModel, horizon: usize) -> Result<Self> {
        let mut p = model.x0_cov.clone();
        let mut p_pred = Vec::with_capacity(horizon + 1);
        let mut steps = Vec::with_capacity(horizon + 1);
        for _ in 0..=horizon {
            let g = gain_step(model, &p)?;
            let next = predict_covariance(model, &p, &g.gain);
            p_pred.push(p);
            steps.push(g);
            p = next;
        }
        Ok(CovarianceSchedule { p_pred, steps })
    }

    /// Constant schedule from a steady-state filter.
    pub fn steady(ssf: &SteadyStateFilter, horizon: usize) -> Self {
        let g = GainStep {
            gain: ssf.k.clone(),
            pz_inv_sqrt: ssf.pz_inv_sqrt.clone(),
        };
        CovarianceSchedule {
            p_pred: alloc::vec![ssf.p.clone(); horizon + 1],
            steps: alloc::vec![g; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Converged filter quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateFilter {
    /// Fixed-point prediction covariance.
    pub p: Matrix,
    pub k: Matrix,
    /// Innovation covariance `C P C' + R`.
    pub pz: Matrix,
    pub pz_inv_sqrt: Matrix,
    /// Open-loop steady covariance of `x̂_{k|k-1}` when `A` is stable. The
    /// feedback setting uses [`estimate_covariance`] instead.
    pub w_open_loop: Option<Matrix>,
}

/// Solution of the control-form discrete algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub s: Matrix,
    /// `-(B'SB + Wu)^{-1} B'SA`
    pub gain: Matrix,
    pub iterations: usize,
}

fn riccati_map(a: &Matrix, b: &Matrix, wx: &Matrix, wu: &Matrix, s: &Matrix) -> Result<(Matrix, Matrix)> {
    let bt_s = b.transpose() * s;
    let h = linalg::symmetrize(&(&bt_s * b + wu));
    let h_inv = linalg::inverse_pd(&h)?;
    let gain = -(&h_inv * &bt_s * a);
    let next = a.transpose() * s * a + wx + a.transpose() * s * b * &gain;
    Ok((linalg::symmetrize(&next), gain))
}

/// Fixed-point iteration for `S = A'SA - A'SB(B'SB+Wu)^{-1}B'SA + Wx`
/// started at `S = Wx`.
pub fn solve_dare(a: &Matrix, b: &Matrix, wx: &Matrix, wu: &Matrix) -> Result<DareSolution> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(dim_err("A", (n, n), (a.nrows(), a.ncols())));
    }
    if b.nrows() != n {
        return Err(dim_err("B", (n, b.ncols()), (b.nrows(), b.ncols())));
    }
    let p = b.ncols();
    if wx.shape() != (n, n) {
        return Err(dim_err("Wx", (n, n), wx.shape()));
    }
    if wu.shape() != (p, p) {
        return Err(dim_err("Wu", (p, p), wu.shape()));
    }
    let mut s = linalg::symmetrize(wx);
    let mut residual = f64::INFINITY;
    for it in 1..=RICCATI_MAX_ITER {
        let (next, _) = riccati_map(a, b, wx, wu, &s)?;
        let change = (&next - &s).amax();
        let scale = next.amax();
        s = next;
        residual = change;
        if !s.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= RICCATI_RTOL * scale || scale == 0.0 {
            let (_, gain) = riccati_map(a, b, wx, wu, &s)?;
            let rho = linalg::spectral_radius(&(a + b * &gain));
            if rho >= 1.0 {
                return Err(Error::Unstable { spectral_radius: rho });
            }
            return Ok(DareSolution {
                s,
                gain,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "Riccati iteration",
        iterations: RICCATI_MAX_ITER,
        residual,
    })
}

/// Solve `X = M X M' + V` for Schur-stable `M`.
///
/// Uses the vectorized form `(I - M⊗M) vec X = vec V`, which is exact up to
/// the LU solve and fine at the sizes used here.
pub fn solve_dlyap(m: &Matrix, v: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(dim_err("M", (n, n), m.shape()));
    }
    if v.shape() != (n, n) {
        return Err(dim_err("V", (n, n), v.shape()));
    }
    let rho = linalg::spectral_radius(m);
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let kron = m.kronecker(m);
    let lhs = Matrix::identity(n * n, n * n) - kron;
    let rhs = Vector::from_column_slice(v.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Unstable { spectral_radius: rho })?;
    Ok(linalg::symmetrize(&Matrix::from_column_slice(n, n, sol.as_slice())))
}

/// Converged Kalman filter: `P` from the filtering Riccati equation,
/// `K = P C' (C P C' + R)^{-1}`.
pub fn steady_state_filter(model: &SystemModel) -> Result<SteadyStateFilter> {
    // The filtering equation is the control equation of the dual pair.
    let at = model.a.transpose();
    let ct = model.c.transpose();
    let p = match solve_dare(&at, &ct, &model.q, &model.r) {
        Ok(sol) => sol.s,
        Err(Error::Unstable { spectral_radius }) => {
            return Err(Error::Precondition(alloc::format!(
                "(A, C) not detectable: estimator spectral radius {spectral_radius}"
            )))
        }
        Err(e) => return Err(e),
    };
    let g = gain_step(model, &p)?;
    let pz = linalg::symmetrize(&(&model.c * &p * &ct + &model.r));
    let w_open_loop = if linalg::spectral_radius(&model.a) < 1.0 {
        let ak = &model.a * &g.gain;
        Some(solve_dlyap(&model.a, &(&ak * &pz * ak.transpose()))?)
    } else {
        None
    };
    Ok(SteadyStateFilter {
        p,
        k: g.gain,
        pz,
        pz_inv_sqrt: g.pz_inv_sqrt,
        w_open_loop,
    })
}

/// State feedback `u = L x̂_{k|k}` with the estimator-driven closed loop
/// matrix `𝒜 = (A + BL)(I - KC)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub l: Matrix,
    pub acl: Matrix,
    pub spectral_radius: f64,
    /// Steady covariance of `x̂_{k|k-1}` in the closed loop without
    /// watermark.
    pub w: Matrix,
}

impl FeedbackLaw {
    /// Wrap an arbitrary gain, computing `𝒜` and the closed-loop `W`.
    pub fn from_gain(model: &SystemModel, ssf: &SteadyStateFilter, l: Matrix) -> Result<Self> {
        if l.shape() != (model.p(), model.n()) {
            return Err(dim_err("L", (model.p(), model.n()), l.shape()));
        }
        let n = model.n();
        let acl = (&model.a + &model.b * &l) * (Matrix::identity(n, n) - &ssf.k * &model.c);
        let spectral_radius = linalg::spectral_radius(&acl);
        let w = estimate_covariance(model, ssf, &l, None)?;
        Ok(FeedbackLaw {
            l,
            acl,
            spectral_radius,
            w,
        })
    }
}

/// Steady covariance of `x̂_{k|k-1}` under `u = L x̂_{k|k} + Δu`,
/// `Δu ~ N(0, 𝒬)`:
/// `W = F W F' + F K 𝒫 K' F' + B 𝒬 B'` with `F = A + BL`.
pub fn estimate_covariance(
    model: &SystemModel,
    ssf: &SteadyStateFilter,
    l: &Matrix,
    watermark: Option<&Matrix>,
) -> Result<Matrix> {
    let f = &model.a + &model.b * l;
    let fk = &f * &ssf.k;
    let mut v = &fk * &ssf.pz * fk.transpose();
    if let Some(wm) = watermark {
        v += &model.b * wm * model.b.transpose();
    }
    solve_dlyap(&f, &v)
}

/// LQG design with identity weights on state and input.
pub fn design_lqg(model: &SystemModel) -> Result<FeedbackLaw> {
    if model.p() == 0 {
        return Err(Error::Precondition("LQG design needs at least one control input".into()));
    }
    let ssf = steady_state_filter(model)?;
    let n = model.n();
    let p = model.p();
    let sol = solve_dare(&model.a, &model.b, &Matrix::identity(n, n), &Matrix::identity(p, p))?;
    FeedbackLaw::from_gain(model, &ssf, sol.gain)
}

/// Steady-state expected per-step cost `E[x'x + u'u]` of the watermarked
/// LQG loop, evaluated exactly on the joint `(x, e)` system where
/// `e = x - x̂_{k|k-1}`.
pub fn lqg_cost(
    model: &SystemModel,
    ssf: &SteadyStateFilter,
    law: &FeedbackLaw,
    watermark: Option<&Matrix>,
) -> Result<f64> {
    let n = model.n();
    let p = model.p();
    let m = model.m();
    let (a, b, c, l, k) = (&model.a, &model.b, &model.c, &law.l, &ssf.k);
    let i_kc = Matrix::identity(n, n) - k * c;

    // ξ_{k+1} = F ξ_k + G η_k, η = (w, v, Δu)
    let mut f = Matrix::zeros(2 * n, 2 * n);
    f.view_mut((0, 0), (n, n)).copy_from(&(a + b * l));
    f.view_mut((0, n), (n, n)).copy_from(&(-(b * l * &i_kc)));
    f.view_mut((n, n), (n, n)).copy_from(&(a * &i_kc));

    let mut g = Matrix::zeros(2 * n, n + m + p);
    g.view_mut((0, 0), (n, n)).copy_from(&Matrix::identity(n, n));
    g.view_mut((0, n), (n, m)).copy_from(&(b * l * k));
    g.view_mut((0, n + m), (n, p)).copy_from(b);
    g.view_mut((n, 0), (n, n)).copy_from(&Matrix::identity(n, n));
    g.view_mut((n, n), (n, m)).copy_from(&(-(a * k)));

    let wm = watermark.cloned().unwrap_or_else(|| Matrix::zeros(p, p));
    if wm.shape() != (p, p) {
        return Err(dim_err("watermark_cov", (p, p), wm.shape()));
    }
    let mut noise = Matrix::zeros(n + m + p, n + m + p);
    noise.view_mut((0, 0), (n, n)).copy_from(&model.q);
    noise.view_mut((n, n), (m, m)).copy_from(&model.r);
    noise.view_mut((n + m, n + m), (p, p)).copy_from(&wm);

    let x = solve_dlyap(&f, &(&g * &noise * g.transpose()))?;

    // u = H ξ + L K v + Δu
    let mut h = Matrix::zeros(p, 2 * n);
    h.view_mut((0, 0), (p, n)).copy_from(l);
    h.view_mut((0, n), (p, n)).copy_from(&(-(l * &i_kc)));
    let lk = l * k;
    let state_cost = x.view((0, 0), (n, n)).trace();
    let input_cost = (&h * &x * h.transpose()).trace() + (&lk * &model.r * lk.transpose()).trace() + wm.trace();
    Ok(state_cost + input_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const PHI: f64 = 1.618_033_988_749_895;

    fn scalar(a: f64, b: f64, c: f64, q: f64, r: f64) -> SystemModel {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        SystemModel {
            a: s(a),
            b: s(b),
            c: s(c),
            q: s(q),
            r: s(r),
            x0_mean: Vector::zeros(1),
            x0_cov: s(1.0),
        }
    }

    #[test]
    fn scalar_kalman_converges_to_golden_ratio() {
        let model = scalar(1.0, 1.0, 1.0, 1.0, 1.0);
        let mut st = FilterState::initial(&model);
        for _ in 0..200 {
            st = kalman_step(&st, &model, &Vector::zeros(1), &Vector::zeros(1)).unwrap();
        }
        assert_relative_eq!(st.p_pred[(0, 0)], PHI, epsilon = 1e-12);
    }

    #[test]
    fn residue_vanishes_on_predicted_output() {
        let model = SystemModel::double_integrator();
        let st = FilterState::initial(&model);
        let y = &model.c * &st.x_pred;
        let upd = measurement_update(&st, &model, &y).unwrap();
        assert!(upd.z.amax() == 0.0);
    }

    #[test]
    fn dare_dead_beat() {
        let a = Matrix::zeros(1, 1);
        let sol = solve_dare(&a, &Matrix::identity(1, 1), &Matrix::identity(1, 1), &Matrix::identity(1, 1)).unwrap();
        assert_relative_eq!(sol.s[(0, 0)], 1.0);
        assert_relative_eq!(sol.gain[(0, 0)], 0.0);
    }

    #[test]
    fn dare_scalar_unit() {
        // s = s - s²/(s+1) + 1  ⇒  s² = s + 1
        let one = Matrix::identity(1, 1);
        let sol = solve_dare(&one, &one, &one, &one).unwrap();
        assert_relative_eq!(sol.s[(0, 0)], PHI, epsilon = 1e-10);
        assert_relative_eq!(sol.gain[(0, 0)], -PHI / (PHI + 1.0), epsilon = 1e-10);
    }

    #[test]
    fn dare_unstabilizable_fails() {
        let a = Matrix::from_element(1, 1, 2.0);
        let b = Matrix::zeros(1, 1);
        let err = solve_dare(&a, &b, &Matrix::identity(1, 1), &Matrix::identity(1, 1)).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. } | Error::Unstable { .. }));
    }

    #[test]
    fn dlyap_scalar() {
        let x = solve_dlyap(&Matrix::from_element(1, 1, 0.5), &Matrix::from_element(1, 1, 0.75)).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dlyap_zero_dynamics() {
        let v = linalg::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let x = solve_dlyap(&Matrix::zeros(2, 2), &v).unwrap();
        assert_relative_eq!(x, v, epsilon = 1e-14);
    }

    #[test]
    fn dlyap_unstable_rejected() {
        let r = solve_dlyap(&Matrix::from_element(1, 1, 1.0), &Matrix::identity(1, 1));
        assert!(matches!(r, Err(Error::Unstable { .. })));
    }

    #[test]
    fn steady_filter_scalar() {
        let ssf = steady_state_filter(&scalar(1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(ssf.p[(0, 0)], PHI, epsilon = 1e-10);
        assert_relative_eq!(ssf.k[(0, 0)], PHI / (PHI + 1.0), epsilon = 1e-10);
        assert!(ssf.w_open_loop.is_none());
    }

    #[test]
    fn steady_filter_tends_to_q_for_perfect_measurements() {
        let mut model = SystemModel::double_integrator();
        model.r = Matrix::identity(2, 2) * 1e-10;
        let ssf = steady_state_filter(&model).unwrap();
        assert_relative_eq!(ssf.p, model.q, epsilon = 1e-8);
    }

    #[test]
    fn lqg_needs_inputs() {
        let mut model = SystemModel::double_integrator();
        model.b = Matrix::zeros(2, 0);
        assert!(matches!(design_lqg(&model), Err(Error::Precondition(_))));
    }

    #[test]
    fn lqg_scalar_closed_loop_stable() {
        let law = design_lqg(&scalar(0.5, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!(law.spectral_radius < 1.0);
        // scalar eigenvalue oracle
        let acl = law.acl[(0, 0)].abs();
        assert_relative_eq!(acl, law.spectral_radius, epsilon = 1e-12);
    }

    #[test]
    fn lqg_cost_is_affine_in_watermark() {
        let model = SystemModel::double_integrator();
        let ssf = steady_state_filter(&model).unwrap();
        let law = design_lqg(&model).unwrap();
        let j0 = lqg_cost(&model, &ssf, &law, None).unwrap();
        let q1 = Matrix::identity(1, 1) * 0.3;
        let q2 = Matrix::identity(1, 1) * 0.6;
        let j1 = lqg_cost(&model, &ssf, &law, Some(&q1)).unwrap();
        let j2 = lqg_cost(&model, &ssf, &law, Some(&q2)).unwrap();
        assert!(j1 > j0);
        assert_relative_eq!(j2 - j0, 2.0 * (j1 - j0), max_relative = 1e-9);
    }
}
