//! Existence and synthesis of zero-information-flow attacks.
//!
//! An injection leaves the output distribution untouched exactly when its
//! forced output deviation `Δy_{0:T}` (from `Δx_0 = 0`) vanishes. Two views
//! are offered: the finite-horizon null space of the stacked forced-response
//! map, and the Rosenbrock pencil
//! `[λI - A, B̂a; C, D̂a]` with `B̂a = [Ba 0]`, `D̂a = [0 Da]`.

use alloc::vec::Vec;

pub use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{build_da, AttackChannels, SystemModel};

pub const DEFAULT_RANK_RTOL: f64 = 1e-9;
pub const RANDOM_PROBES: usize = 32;
const PROBE_SEED: u64 = 0x5eed_0f_9e11c11;

#[derive(Debug, Clone, PartialEq)]
pub struct PencilReport {
    /// The pencil loses rank for every λ: the attacked system is not left
    /// invertible, so a nonzero output-nulling injection exists.
    pub stealthy_exists: bool,
    /// `n + p′ + m′`
    pub full_rank: usize,
    /// Generic rank over the probes.
    pub normal_rank: usize,
    /// A probe at which the rank is deficient, if any.
    pub witness_lambda: Option<Complex64>,
    /// Isolated rank drops below the normal rank (invariant zeros).
    pub invariant_zeros: Vec<Complex64>,
    pub rank_profile: Vec<(Complex64, usize)>,
    pub tolerance: f64,
}

/// Pencil matrix at `λ`, realified as `[[Re, -Im], [Im, Re]]`.
fn pencil_realified(a: &Matrix, bh: &Matrix, c: &Matrix, dh: &Matrix, lambda: Complex64) -> Matrix {
    let n = a.nrows();
    let m = c.nrows();
    let cols = n + bh.ncols();
    let rows = n + m;
    let mut re = Matrix::zeros(rows, cols);
    let mut im = Matrix::zeros(rows, cols);
    re.view_mut((0, 0), (n, n)).copy_from(&(Matrix::identity(n, n) * lambda.re - a));
    im.view_mut((0, 0), (n, n)).copy_from(&(Matrix::identity(n, n) * lambda.im));
    re.view_mut((0, n), (n, bh.ncols())).copy_from(bh);
    re.view_mut((n, 0), (m, n)).copy_from(c);
    re.view_mut((n, n), (m, dh.ncols())).copy_from(dh);
    let mut out = Matrix::zeros(2 * rows, 2 * cols);
    out.view_mut((0, 0), (rows, cols)).copy_from(&re);
    out.view_mut((0, cols), (rows, cols)).copy_from(&(-&im));
    out.view_mut((rows, 0), (rows, cols)).copy_from(&im);
    out.view_mut((rows, cols), (rows, cols)).copy_from(&re);
    out
}

fn hat_matrices(model: &SystemModel, channels: &AttackChannels) -> Result<(Matrix, Matrix)> {
    let n = model.n();
    let m = model.m();
    let (pa, ma) = (channels.p_attack(), channels.m_attack());
    let da = build_da(channels, m)?;
    let mut bh = Matrix::zeros(n, pa + ma);
    bh.view_mut((0, 0), (n, pa)).copy_from(&channels.ba);
    let mut dh = Matrix::zeros(m, pa + ma);
    dh.view_mut((0, pa), (m, ma)).copy_from(&da);
    Ok((bh, dh))
}

/// Finite eigenvalues of the square pencil `λE - F`, via a shift `μ` at
/// which the pencil is regular: `λ = μ - 1/ν` for eigenvalues `ν ≠ 0` of
/// `(μE - F)^{-1} E`.
fn square_pencil_eigenvalues(a: &Matrix, bh: &Matrix, c: &Matrix, dh: &Matrix) -> Vec<Complex64> {
    let n = a.nrows();
    let m = c.nrows();
    let size = n + m;
    let mut e = Matrix::zeros(size, size);
    e.view_mut((0, 0), (n, n)).copy_from(&Matrix::identity(n, n));
    let mut f = Matrix::zeros(size, size);
    f.view_mut((0, 0), (n, n)).copy_from(a);
    f.view_mut((0, n), (n, bh.ncols())).copy_from(&(-bh));
    f.view_mut((n, 0), (m, n)).copy_from(&(-c));
    f.view_mut((n, n), (m, dh.ncols())).copy_from(&(-dh));
    for &mu in &[0.318_309_886, -1.234_567_89, 2.718_281_83, -0.577_215_66] {
        let shifted = &e * mu - &f;
        let sv = shifted.clone().svd(false, false).singular_values;
        let smax = sv.max();
        if smax == 0.0 || sv.min() < 1e-8 * smax {
            continue;
        }
        let Some(inv) = shifted.try_inverse() else { continue };
        let g = inv * &e;
        let scale = g.amax().max(1.0);
        return g
            .complex_eigenvalues()
            .iter()
            .filter(|nu| nu.norm() > 1e-10 * scale)
            .map(|nu| Complex64::new(mu, 0.0) - Complex64::new(1.0, 0.0) / nu)
            .collect();
    }
    Vec::new()
}

fn complex_rank(real: &Matrix, rtol: f64) -> usize {
    linalg::rank(real, rtol) / 2
}

/// Rank profile of the pencil at the eigenvalues of `A`, 32 fixed
/// pseudorandom complex points and, when the pencil is square, its finite
/// generalized eigenvalues.
pub fn pencil_rank_test(model: &SystemModel, channels: &AttackChannels, rtol: f64) -> Result<PencilReport> {
    let (bh, dh) = hat_matrices(model, channels)?;
    let full_rank = model.n() + bh.ncols();
    let mut probes: Vec<Complex64> = model
        .a
        .complex_eigenvalues()
        .iter()
        .map(|c| Complex64::new(c.re, c.im))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let radius = 1.0 + linalg::spectral_radius(&model.a);
    for _ in 0..RANDOM_PROBES {
        probes.push(Complex64::new(
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        ));
    }
    if model.n() + model.m() == full_rank {
        probes.extend(square_pencil_eigenvalues(&model.a, &bh, &model.c, &dh));
    }
    let rank_profile: Vec<(Complex64, usize)> = probes
        .iter()
        .map(|&l| (l, complex_rank(&pencil_realified(&model.a, &bh, &model.c, &dh, l), rtol)))
        .collect();
    let normal_rank = rank_profile[model.n()..model.n() + RANDOM_PROBES]
        .iter()
        .map(|&(_, r)| r)
        .max()
        .unwrap_or(0);
    let stealthy_exists = normal_rank < full_rank;
    let witness_lambda = rank_profile.iter().find(|&&(_, r)| r < full_rank).map(|&(l, _)| l);
    let mut invariant_zeros: Vec<Complex64> = Vec::new();
    for &(l, r) in &rank_profile {
        if r < normal_rank && !invariant_zeros.iter().any(|z| (z - l).norm() < 1e-8 * (1.0 + l.norm())) {
            invariant_zeros.push(l);
        }
    }
    Ok(PencilReport {
        stealthy_exists,
        full_rank,
        normal_rank,
        witness_lambda,
        invariant_zeros,
        rank_profile,
        tolerance: rtol,
    })
}

/// Output-nulling injection over `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessAttack {
    /// `u^a_{0:T-1}`
    pub ua_seq: Vec<Vector>,
    /// `d^a_{0:T}`
    pub da_seq: Vec<Vector>,
    pub max_output_deviation: f64,
}

impl WitnessAttack {
    pub fn scaled(&self, s: f64) -> WitnessAttack {
        WitnessAttack {
            ua_seq: self.ua_seq.iter().map(|v| v * s).collect(),
            da_seq: self.da_seq.iter().map(|v| v * s).collect(),
            max_output_deviation: self.max_output_deviation * s.abs(),
        }
    }
}

/// Forced output deviation: `Δx_{k+1} = AΔx_k + Ba u^a_k`, `Δx_0 = 0`,
/// `Δy_k = CΔx_k + Da d^a_k`.
pub fn forced_response(
    model: &SystemModel,
    channels: &AttackChannels,
    ua_seq: &[Vector],
    da_seq: &[Vector],
) -> Result<Vec<Vector>> {
    let da = build_da(channels, model.m())?;
    let horizon = da_seq.len().saturating_sub(1);
    if ua_seq.len() < horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: ua_seq.len(),
        });
    }
    let mut dx = Vector::zeros(model.n());
    let mut out = Vec::with_capacity(da_seq.len());
    for (k, d) in da_seq.iter().enumerate() {
        out.push(&model.c * &dx + &da * d);
        if k < horizon {
            dx = &model.a * dx + &channels.ba * &ua_seq[k];
        }
    }
    Ok(out)
}

/// Stacked map `(u^a_{0:T-1}, d^a_{0:T}) ↦ Δy_{0:T}` (block Toeplitz).
pub fn stacked_response_matrix(model: &SystemModel, channels: &AttackChannels, horizon: usize) -> Result<Matrix> {
    let da = build_da(channels, model.m())?;
    let (m, pa, ma) = (model.m(), channels.p_attack(), channels.m_attack());
    let rows = m * (horizon + 1);
    let cols = pa * horizon + ma * (horizon + 1);
    let mut phi = Matrix::zeros(rows, cols);
    // Markov parameters C A^i Ba
    let mut markov = Vec::with_capacity(horizon);
    let mut ai_ba = channels.ba.clone();
    for _ in 0..horizon {
        markov.push(&model.c * &ai_ba);
        ai_ba = &model.a * ai_ba;
    }
    for k in 0..=horizon {
        for j in 0..k {
            phi.view_mut((k * m, j * pa), (m, pa)).copy_from(&markov[k - 1 - j]);
        }
        phi.view_mut((k * m, pa * horizon + k * ma), (m, ma)).copy_from(&da);
    }
    Ok(phi)
}

/// Unit-norm output-nulling injection over `0..=T`, or `None` when the
/// stacked forced response is injective.
pub fn synthesize_zero_flow_attack(
    model: &SystemModel,
    channels: &AttackChannels,
    horizon: usize,
    rtol: f64,
) -> Result<Option<WitnessAttack>> {
    let required = (model.n() + 1).saturating_sub(channels.p_attack());
    if horizon < required {
        return Err(Error::HorizonTooShort { horizon, required });
    }
    let phi = stacked_response_matrix(model, channels, horizon)?;
    let cols = phi.ncols();
    if cols == 0 {
        return Ok(None);
    }
    let size = phi.nrows().max(cols);
    let mut padded = Matrix::zeros(size, cols);
    padded.view_mut((0, 0), (phi.nrows(), cols)).copy_from(&phi);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Precondition("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let smax = sv.max();
    let (imin, smin) = sv.argmin();
    if smax > 0.0 && smin > rtol * smax {
        return Ok(None);
    }
    let v: Vector = v_t.row(imin).transpose().normalize();
    let (pa, ma) = (channels.p_attack(), channels.m_attack());
    let ua_seq: Vec<Vector> = (0..horizon)
        .map(|k| v.rows(k * pa, pa).into_owned())
        .collect();
    let da_seq: Vec<Vector> = (0..=horizon)
        .map(|k| v.rows(pa * horizon + k * ma, ma).into_owned())
        .collect();
    let dy = forced_response(model, channels, &ua_seq, &da_seq)?;
    let max_output_deviation = dy.iter().map(|d| d.amax()).fold(0.0, f64::max);
    Ok(Some(WitnessAttack {
        ua_seq,
        da_seq,
        max_output_deviation,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_unstable() -> SystemModel {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        SystemModel {
            a: s(2.0),
            b: s(1.0),
            c: s(1.0),
            q: s(1.0),
            r: s(1.0),
            x0_mean: Vector::zeros(1),
            x0_cov: s(1.0),
        }
    }

    #[test]
    fn sensor_attack_on_scalar_has_zero_at_pole_only() {
        let model = scalar_unstable();
        let ch = AttackChannels::sensors_only(1, vec![1]);
        let rep = pencil_rank_test(&model, &ch, DEFAULT_RANK_RTOL).unwrap();
        // det [λ-2, 0; 1, 1] = λ - 2
        assert!(!rep.stealthy_exists);
        let wl = rep.witness_lambda.unwrap();
        assert!((wl - Complex64::new(2.0, 0.0)).norm() < 1e-9);
        assert_eq!(rep.invariant_zeros.len(), 1);
        assert!(synthesize_zero_flow_attack(&model, &ch, 2, DEFAULT_RANK_RTOL).unwrap().is_none());
    }

    #[test]
    fn no_channels_not_stealthy() {
        let model = SystemModel::double_integrator();
        let rep = pencil_rank_test(&model, &AttackChannels::none(2), DEFAULT_RANK_RTOL).unwrap();
        assert!(!rep.stealthy_exists);
        assert!(rep.witness_lambda.is_none());
    }

    #[test]
    fn fully_actuated_left_invertible_not_stealthy() {
        // C = I, Ba = I: the pencil [λI-A, I; I, 0] is unimodular.
        let model = SystemModel::double_integrator();
        let ch = AttackChannels {
            ba: Matrix::identity(2, 2),
            sensors: vec![],
        };
        let rep = pencil_rank_test(&model, &ch, DEFAULT_RANK_RTOL).unwrap();
        assert!(!rep.stealthy_exists);
        assert!(rep.invariant_zeros.is_empty());
    }

    #[test]
    fn actuator_plus_sensor_on_scalar_is_stealthy() {
        let model = scalar_unstable();
        let ch = AttackChannels {
            ba: Matrix::identity(1, 1),
            sensors: vec![1],
        };
        assert!(pencil_rank_test(&model, &ch, DEFAULT_RANK_RTOL).unwrap().stealthy_exists);
        let w = synthesize_zero_flow_attack(&model, &ch, 3, DEFAULT_RANK_RTOL).unwrap().unwrap();
        assert!(w.max_output_deviation < 1e-10);
        let big = w.scaled(10.0);
        let dy = forced_response(&model, &ch, &big.ua_seq, &big.da_seq).unwrap();
        assert!(dy.iter().all(|d| d.amax() < 1e-9));
    }

    #[test]
    fn horizon_condition_enforced() {
        let model = SystemModel::double_integrator();
        let ch = AttackChannels::sensors_only(2, vec![1]);
        assert_eq!(
            synthesize_zero_flow_attack(&model, &ch, 2, DEFAULT_RANK_RTOL),
            Err(Error::HorizonTooShort { horizon: 2, required: 3 })
        );
    }

    #[test]
    fn stacked_matrix_matches_forced_response() {
        let model = SystemModel::double_integrator();
        let ch = AttackChannels {
            ba: model.b.clone(),
            sensors: vec![2],
        };
        let t = 4;
        let phi = stacked_response_matrix(&model, &ch, t).unwrap();
        let ua: Vec<Vector> = (0..t).map(|k| Vector::from_element(1, 1.0 + k as f64)).collect();
        let da: Vec<Vector> = (0..=t).map(|k| Vector::from_element(1, 0.5 - k as f64)).collect();
        let mut stacked = Vector::zeros(phi.ncols());
        for k in 0..t {
            stacked[k] = ua[k][0];
        }
        for k in 0..=t {
            stacked[t + k] = da[k][0];
        }
        let via_phi = &phi * stacked;
        let dy = forced_response(&model, &ch, &ua, &da).unwrap();
        for k in 0..=t {
            for i in 0..2 {
                assert!((via_phi[2 * k + i] - dy[k][i]).abs() < 1e-12);
            }
        }
    }
}
