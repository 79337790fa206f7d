//! Information flow: normalized KL divergence between attacked and nominal
//! output distributions, with the closed forms available for Gaussian
//! residues.
//!
//! Residues are standard normal and white under normal operation, so every
//! nominal distribution below is `N(0, I)` in residue coordinates.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::estimation::{CovarianceSchedule, FeedbackLaw, SteadyStateFilter};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{build_da, AttackChannels, SystemModel};

/// Joint Gaussian evaluations are capped at this many dimensions.
pub const MAX_JOINT_DIM: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianDist {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        GaussianDist { mean, cov }
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDist {
            mean: Vector::zeros(dim),
            cov: Matrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `D_KL(p1 ‖ p0)` for Gaussians:
/// `-l/2 + tr(Σ₀⁻¹Σ₁)/2 + log det(Σ₀Σ₁⁻¹)/2 + (μ₁-μ₀)'Σ₀⁻¹(μ₁-μ₀)/2`.
///
/// Both covariances must be positive definite.
pub fn kl_gaussian(p1: &GaussianDist, p0: &GaussianDist) -> Result<f64> {
    let l = p0.dim();
    if l == 0 {
        return Err(dim_err("mean", (1, 1), (0, 1)));
    }
    if p1.dim() != l {
        return Err(dim_err("mean", (l, 1), (p1.dim(), 1)));
    }
    if p0.cov.shape() != (l, l) {
        return Err(dim_err("cov", (l, l), p0.cov.shape()));
    }
    if p1.cov.shape() != (l, l) {
        return Err(dim_err("cov", (l, l), p1.cov.shape()));
    }
    let chol0 = nalgebra::Cholesky::new(linalg::symmetrize(&p0.cov)).ok_or(Error::SingularCovariance)?;
    let chol1 = nalgebra::Cholesky::new(linalg::symmetrize(&p1.cov)).ok_or(Error::SingularCovariance)?;
    let l0 = chol0.l();
    let l1 = chol1.l();
    let logdet = |l: &Matrix| -> Result<f64> {
        let mut s = 0.0;
        for i in 0..l.nrows() {
            if l[(i, i)] <= 0.0 {
                return Err(Error::SingularCovariance);
            }
            s += libm::log(l[(i, i)]);
        }
        Ok(2.0 * s)
    };
    let ld0 = logdet(&l0)?;
    let ld1 = logdet(&l1)?;
    // tr(Σ₀⁻¹Σ₁) = ‖L₀⁻¹L₁‖²_F
    let solved = l0
        .solve_lower_triangular(&l1)
        .ok_or(Error::SingularCovariance)?;
    let trace = solved.norm_squared();
    let dmu = &p1.mean - &p0.mean;
    let white = l0
        .solve_lower_triangular(&dmu)
        .ok_or(Error::SingularCovariance)?;
    let kl = 0.5 * (trace - l as f64 + ld0 - ld1 + white.norm_squared());
    Ok(kl.max(0.0))
}

/// KL of `N(μ, I + S)` against `N(0, I)`, split as
/// `(μ'μ, -log det(I + S), tr S)`.
pub fn kl_terms_vs_standard(mean: &Vector, excess_cov: &Matrix) -> Result<(f64, f64, f64)> {
    let d = mean.len();
    let c1 = mean.norm_squared();
    let c2 = -linalg::logdet_pd(&(Matrix::identity(d, d) + excess_cov))?;
    let c3 = excess_cov.trace();
    Ok((c1, c2, c3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfMethod {
    /// Output-independent injection; residues are independent so the bound
    /// is exact.
    FalseDataInjection,
    /// Joint Gaussian of the replayed residues, no watermark.
    ReplayExact,
    /// Per-step bound under replay with watermark.
    ReplayWatermark,
    /// Exact joint Gaussian of a linear closed loop.
    LinearJoint,
    /// Per-step bound only.
    LowerBound,
}

/// Information flow over `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoFlowReport {
    pub horizon: usize,
    pub exact_if: Option<f64>,
    pub lower_bound_if: f64,
    /// `D_KL` of the marginal residue at each step, `T + 1` entries.
    pub per_step_kl: Vec<f64>,
    pub method: IfMethod,
}

impl InfoFlowReport {
    pub fn from_per_step(per_step_kl: Vec<f64>, exact_if: Option<f64>, method: IfMethod) -> Self {
        InfoFlowReport {
            horizon: per_step_kl.len().saturating_sub(1),
            exact_if,
            lower_bound_if: if_lower_bound(&per_step_kl),
            per_step_kl,
            method,
        }
    }
}

/// Per-step lower bound: `(Σ_k D_k) / (T + 1)`. The gap to the exact flow
/// is the scaled mutual information between each residue and its past.
pub fn if_lower_bound(per_step: &[f64]) -> f64 {
    linalg::mean(per_step)
}

/// Residue bias of an output-independent injection, `Δe_{k|k-1}` and `Δz_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdiResidueBias {
    pub delta_e: Vec<Vector>,
    pub delta_z: Vec<Vector>,
}

/// `Δe_{k+1|k} = (A - A K_k C) Δe_{k|k-1} + Ba u^a_k - A K_k Da d^a_k`,
/// `Δz_k = (C P_{k|k-1} C' + R)^{-1/2} (C Δe_{k|k-1} + Da d^a_k)`, with
/// `Δe_{0|-1} = 0` and the time-varying filter.
pub fn fdi_residue_bias(
    model: &SystemModel,
    channels: &AttackChannels,
    ua_seq: &[Vector],
    da_seq: &[Vector],
) -> Result<FdiResidueBias> {
    if da_seq.is_empty() {
        return Err(Error::HorizonMismatch { expected: 1, found: 0 });
    }
    let schedule = CovarianceSchedule::time_varying(model, da_seq.len() - 1)?;
    fdi_residue_bias_with(&schedule, model, channels, ua_seq, da_seq)
}

/// As [`fdi_residue_bias`] with a precomputed covariance schedule.
pub fn fdi_residue_bias_with(
    schedule: &CovarianceSchedule,
    model: &SystemModel,
    channels: &AttackChannels,
    ua_seq: &[Vector],
    da_seq: &[Vector],
) -> Result<FdiResidueBias> {
    let horizon = da_seq.len().saturating_sub(1);
    if da_seq.is_empty() || schedule.horizon() < horizon {
        return Err(Error::HorizonMismatch {
            expected: schedule.horizon() + 1,
            found: da_seq.len(),
        });
    }
    if ua_seq.len() < horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: ua_seq.len(),
        });
    }
    let da = build_da(channels, model.m())?;
    let n = model.n();
    let mut de = Vector::zeros(n);
    let mut delta_e = Vec::with_capacity(horizon + 1);
    let mut delta_z = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let d = &da_seq[k];
        if d.len() != channels.m_attack() {
            return Err(dim_err("da", (channels.m_attack(), 1), (d.len(), 1)));
        }
        let step = &schedule.steps[k];
        let sensor = &da * d;
        delta_z.push(&step.pz_inv_sqrt * (&model.c * &de + &sensor));
        delta_e.push(de.clone());
        if k < horizon {
            let u = &ua_seq[k];
            if u.len() != channels.p_attack() {
                return Err(dim_err("ua", (channels.p_attack(), 1), (u.len(), 1)));
            }
            let ak = &model.a * &step.gain;
            de = &model.a * &de - &ak * (&model.c * &de) + &channels.ba * u - &ak * sensor;
        }
    }
    Ok(FdiResidueBias { delta_e, delta_z })
}

/// `IF_T = ‖Δz_{0:T}‖² / (2(T+1))`; per-step KL is `‖Δz_k‖²/2`.
pub fn if_fdi(bias: &FdiResidueBias, horizon: usize) -> Result<InfoFlowReport> {
    if bias.delta_z.len() < horizon + 1 {
        return Err(Error::HorizonMismatch {
            expected: horizon + 1,
            found: bias.delta_z.len(),
        });
    }
    let per_step: Vec<f64> = bias.delta_z[..=horizon]
        .iter()
        .map(|dz| 0.5 * dz.norm_squared())
        .collect();
    let exact = if_lower_bound(&per_step);
    Ok(InfoFlowReport::from_per_step(per_step, Some(exact), IfMethod::FalseDataInjection))
}

/// Quantities shared by the replay closed forms: `𝒜`, `𝒫^{-1/2} C`, the
/// prior estimate and the replayed-estimate covariance `𝒲`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayGeometry {
    pub acl: Matrix,
    /// `𝒫^{-1/2} C`
    pub pc: Matrix,
    pub x0_mean: Vector,
    pub w: Matrix,
    pub b: Matrix,
}

impl ReplayGeometry {
    /// `watermark` selects the loop whose `x̂` covariance is replayed; `None`
    /// reuses the law's closed-loop `W`.
    pub fn new(
        model: &SystemModel,
        ssf: &SteadyStateFilter,
        law: &FeedbackLaw,
        watermark: Option<&Matrix>,
    ) -> Result<Self> {
        if law.spectral_radius >= 1.0 {
            return Err(Error::Unstable {
                spectral_radius: law.spectral_radius,
            });
        }
        let w = match watermark {
            Some(q) => crate::estimation::estimate_covariance(model, ssf, &law.l, Some(q))?,
            None => law.w.clone(),
        };
        Ok(ReplayGeometry {
            acl: law.acl.clone(),
            pc: &ssf.pz_inv_sqrt * &model.c,
            x0_mean: model.x0_mean.clone(),
            w,
            b: model.b.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.pc.nrows()
    }
}

/// Replay without watermark, exact and bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFlow {
    pub report: InfoFlowReport,
    /// Horizon-independent bound on the un-normalized divergence.
    pub m_star: f64,
}

/// Mean and covariance of the replayed residues `z_{0:T}`:
/// `μ(j) = -𝒫^{-1/2} C 𝒜^j x̂_{0|-1}` and
/// `Σ(j,l) = 𝒫^{-1/2} C 𝒜^j 𝒲 (𝒜^l)' C' 𝒫^{-1/2} + δ(l-j) I`.
pub fn replay_joint_gaussian(geo: &ReplayGeometry, horizon: usize) -> Result<GaussianDist> {
    let m = geo.m();
    let dim = m * (horizon + 1);
    if dim > MAX_JOINT_DIM {
        return Err(Error::DimensionTooLarge {
            dim,
            cap: MAX_JOINT_DIM,
        });
    }
    let pows = linalg::powers(&geo.acl, horizon + 1);
    let blocks: Vec<Matrix> = pows.iter().map(|p| &geo.pc * p).collect();
    let mut mean = Vector::zeros(dim);
    let mut cov = Matrix::identity(dim, dim);
    let gw: Vec<Matrix> = blocks.iter().map(|g| g * &geo.w).collect();
    for j in 0..=horizon {
        mean.rows_mut(j * m, m).copy_from(&(-(&blocks[j] * &geo.x0_mean)));
        for l in 0..=horizon {
            let blk = &gw[j] * blocks[l].transpose();
            let mut view = cov.view_mut((j * m, l * m), (m, m));
            view += blk;
        }
    }
    Ok(GaussianDist {
        mean,
        cov: linalg::symmetrize(&cov),
    })
}

/// Exact replay information flow (no watermark) through the joint residue
/// Gaussian, the per-step marginals, and the horizon-free bound `M*`.
pub fn if_replay_exact(geo: &ReplayGeometry, horizon: usize) -> Result<ReplayFlow> {
    let m = geo.m();
    let joint = replay_joint_gaussian(geo, horizon)?;
    let kl = kl_gaussian(&joint, &GaussianDist::standard(joint.dim()))?;
    let mut per_step = Vec::with_capacity(horizon + 1);
    for j in 0..=horizon {
        let mu = joint.mean.rows(j * m, m).into_owned();
        let excess = joint.cov.view((j * m, j * m), (m, m)) - Matrix::identity(m, m);
        let (c1, c2, c3) = kl_terms_vs_standard(&mu, &excess)?;
        per_step.push((0.5 * (c1 + c2 + c3)).max(0.0));
    }
    let report = InfoFlowReport::from_per_step(per_step, Some(kl / (horizon + 1) as f64), IfMethod::ReplayExact);
    Ok(ReplayFlow {
        report,
        m_star: replay_divergence_bound(geo)?,
    })
}

/// `M* = (tr(𝒫^{-1/2} C X₁ C' 𝒫^{-1/2}) + x̂'X₂x̂ + log det(I + 𝒲^{1/2} X₂ 𝒲^{1/2})) / 2`
/// with `X₁ = 𝒜X₁𝒜' + 𝒲` and `X₂ = 𝒜'X₂𝒜 + C'𝒫⁻¹C`.
pub fn replay_divergence_bound(geo: &ReplayGeometry) -> Result<f64> {
    let n = geo.acl.nrows();
    let x1 = crate::estimation::solve_dlyap(&geo.acl, &geo.w)?;
    let x2 = crate::estimation::solve_dlyap(&geo.acl.transpose(), &(geo.pc.transpose() * &geo.pc))?;
    let c1 = (&geo.pc * &x1 * geo.pc.transpose()).trace();
    let c2 = (geo.x0_mean.transpose() * &x2 * &geo.x0_mean)[(0, 0)];
    let ws = linalg::sqrt_psd(&geo.w);
    let c3 = linalg::logdet_pd(&(Matrix::identity(n, n) + &ws * &x2 * &ws))?;
    Ok(0.5 * (c1 + c2 + c3))
}

/// Un-normalized replay divergence `D_T = (c₁ + c₂ + c₃)/2` for every
/// `T = 0..=horizon`, computed in state space with Sylvester's determinant
/// identity. Cheap enough for whole curves.
pub fn replay_divergence_curve(geo: &ReplayGeometry, horizon: usize) -> Result<Vec<f64>> {
    let n = geo.acl.nrows();
    let ws = linalg::sqrt_psd(&geo.w);
    let mut pow = Matrix::identity(n, n);
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    let mut gram = Matrix::zeros(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let g = &geo.pc * &pow;
        c1 += (&g * &geo.w * g.transpose()).trace();
        c2 += (&g * &geo.x0_mean).norm_squared();
        gram += g.transpose() * &g;
        let c3 = -linalg::logdet_pd(&(Matrix::identity(n, n) + &ws * &gram * &ws))?;
        out.push((0.5 * (c1 + c2 + c3)).max(0.0));
        pow = &geo.acl * pow;
    }
    Ok(out)
}

/// Watermark lower bound `ε = tr(𝒫⁻¹ C Σ C') / 2`, `Σ = 𝒜Σ𝒜' + B𝒬B'`.
pub fn if_replay_watermark_bound(
    model: &SystemModel,
    ssf: &SteadyStateFilter,
    law: &FeedbackLaw,
    watermark: &Matrix,
) -> Result<f64> {
    if law.spectral_radius >= 1.0 {
        return Err(Error::Unstable {
            spectral_radius: law.spectral_radius,
        });
    }
    if watermark.shape() != (model.p(), model.p()) {
        return Err(dim_err("watermark_cov", (model.p(), model.p()), watermark.shape()));
    }
    let sigma = crate::estimation::solve_dlyap(&law.acl, &(&model.b * watermark * model.b.transpose()))?;
    let pc = &ssf.pz_inv_sqrt * &model.c;
    Ok(0.5 * (&pc * sigma * pc.transpose()).trace())
}

/// Per-step replay divergence under watermarking, with its three terms.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkFlow {
    pub report: InfoFlowReport,
    /// `μ_k`, the conditional mean of the replayed residue.
    pub means: Vec<Vector>,
    /// `Σ_k`, residue covariance in excess of the identity.
    pub excess_covs: Vec<Matrix>,
    /// `(c¹_k, c²_k, c³_k)` = `(μ'μ, -log det(I+Σ_k), tr Σ_k)`.
    pub terms: Vec<(f64, f64, f64)>,
}

/// Replayed residue at `k` is `N(μ_k, Σ_k + I)` given the defender's own
/// watermark realization `Δu`:
/// `μ_k = -𝒫^{-1/2} C (𝒜^k x̂_{0|-1} + Σ_{j<k} 𝒜^{k-1-j} B Δu_j)`,
/// `Σ_k = 𝒫^{-1/2} C (𝒜^k 𝒲 𝒜^k' + Σ_{j<k} 𝒜^j B 𝒬 B' 𝒜^j') C' 𝒫^{-1/2}`.
pub fn if_replay_watermark_perstep(
    geo: &ReplayGeometry,
    watermark: &Matrix,
    realization: &[Vector],
    horizon: usize,
) -> Result<WatermarkFlow> {
    if realization.len() < horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: realization.len(),
        });
    }
    let bqb = &geo.b * watermark * geo.b.transpose();
    let mut s = geo.x0_mean.clone();
    let mut v = geo.w.clone();
    let mut per_step = Vec::with_capacity(horizon + 1);
    let mut means = Vec::with_capacity(horizon + 1);
    let mut covs = Vec::with_capacity(horizon + 1);
    let mut terms = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let mu = -(&geo.pc * &s);
        let excess = linalg::symmetrize(&(&geo.pc * &v * geo.pc.transpose()));
        let t = kl_terms_vs_standard(&mu, &excess)?;
        per_step.push((0.5 * (t.0 + t.1 + t.2)).max(0.0));
        means.push(mu);
        covs.push(excess);
        terms.push(t);
        if k < horizon {
            s = &geo.acl * s + &geo.b * &realization[k];
            v = &geo.acl * v * geo.acl.transpose() + &bqb;
        }
    }
    Ok(WatermarkFlow {
        report: InfoFlowReport::from_per_step(per_step, None, IfMethod::ReplayWatermark),
        means,
        excess_covs: covs,
        terms,
    })
}

/// Defender control policy for the exact linear-Gaussian evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum DefenderPolicy {
    /// `u ≡ 0`
    Zero,
    /// `u_k = L x̂_{k|k}`
    StateFeedback(Matrix),
    /// `u_k = sat(L x̂_{k|k})`, clipped entrywise at `±limit`.
    Saturated { l: Matrix, limit: f64 },
}

impl DefenderPolicy {
    pub fn is_linear(&self) -> bool {
        !matches!(self, DefenderPolicy::Saturated { .. })
    }

    pub fn apply(&self, x_filt: &Vector, p: usize) -> Vector {
        match self {
            DefenderPolicy::Zero => Vector::zeros(p),
            DefenderPolicy::StateFeedback(l) => l * x_filt,
            DefenderPolicy::Saturated { l, limit } => (l * x_filt).map(|v| v.clamp(-limit, *limit)),
        }
    }
}

/// An affine function `offset + gain · ξ` of the primitive noise vector.
#[derive(Debug, Clone)]
struct Affine {
    offset: Vector,
    gain: Matrix,
}

impl Affine {
    fn constant(v: Vector, dim: usize) -> Self {
        let rows = v.len();
        Affine {
            offset: v,
            gain: Matrix::zeros(rows, dim),
        }
    }

    fn lmul(&self, m: &Matrix) -> Affine {
        Affine {
            offset: m * &self.offset,
            gain: m * &self.gain,
        }
    }

    fn add(&self, o: &Affine) -> Affine {
        Affine {
            offset: &self.offset + &o.offset,
            gain: &self.gain + &o.gain,
        }
    }

    fn sub(&self, o: &Affine) -> Affine {
        Affine {
            offset: &self.offset - &o.offset,
            gain: &self.gain - &o.gain,
        }
    }

    fn shift(&self, v: &Vector) -> Affine {
        Affine {
            offset: &self.offset + v,
            gain: self.gain.clone(),
        }
    }
}

/// Stacked outputs and residues of a linear closed loop as affine maps of
/// `ξ = (x₀ - x̂_{0|-1}, w_{0:T-1}, v_{0:T})`.
struct LinearTrace {
    y: Vec<Affine>,
    z: Vec<Affine>,
}

fn noise_cov(model: &SystemModel, horizon: usize) -> Matrix {
    let (n, m) = (model.n(), model.m());
    let dim = n + n * horizon + m * (horizon + 1);
    let mut cov = Matrix::zeros(dim, dim);
    cov.view_mut((0, 0), (n, n)).copy_from(&model.x0_cov);
    for k in 0..horizon {
        let o = n + n * k;
        cov.view_mut((o, o), (n, n)).copy_from(&model.q);
    }
    for k in 0..=horizon {
        let o = n + n * horizon + m * k;
        cov.view_mut((o, o), (m, m)).copy_from(&model.r);
    }
    cov
}

fn trace_linear_loop(
    model: &SystemModel,
    schedule: &CovarianceSchedule,
    l: Option<&Matrix>,
    ba: &Matrix,
    da: &Matrix,
    ua_seq: &[Vector],
    da_seq: &[Vector],
    horizon: usize,
) -> LinearTrace {
    let (n, m) = (model.n(), model.m());
    let dim = n + n * horizon + m * (horizon + 1);
    let unit = |offset: usize, rows: usize| {
        let mut g = Matrix::zeros(rows, dim);
        g.view_mut((0, offset), (rows, rows)).copy_from(&Matrix::identity(rows, rows));
        Affine {
            offset: Vector::zeros(rows),
            gain: g,
        }
    };
    let mut x = unit(0, n).shift(&model.x0_mean);
    let mut x_pred = Affine::constant(model.x0_mean.clone(), dim);
    let mut ys = Vec::with_capacity(horizon + 1);
    let mut zs = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let v = unit(n + n * horizon + m * k, m);
        let y = x.lmul(&model.c).add(&v).shift(&(da * &da_seq[k]));
        let step = &schedule.steps[k];
        let innov = y.sub(&x_pred.lmul(&model.c));
        zs.push(innov.lmul(&step.pz_inv_sqrt));
        let x_filt = x_pred.add(&innov.lmul(&step.gain));
        ys.push(y);
        if k == horizon {
            break;
        }
        let u = match l {
            Some(l) => x_filt.lmul(l),
            None => Affine::constant(Vector::zeros(model.p()), dim),
        };
        let w = unit(n + n * k, n);
        x = x
            .lmul(&model.a)
            .add(&u.lmul(&model.b))
            .add(&w)
            .shift(&(ba * &ua_seq[k]));
        x_pred = x_filt.lmul(&model.a).add(&u.lmul(&model.b));
    }
    LinearTrace { y: ys, z: zs }
}

fn stack(parts: &[Affine], noise: &Matrix) -> GaussianDist {
    let rows: usize = parts.iter().map(|a| a.offset.len()).sum();
    let dim = noise.nrows();
    let mut mean = Vector::zeros(rows);
    let mut gain = Matrix::zeros(rows, dim);
    let mut r = 0;
    for a in parts {
        let h = a.offset.len();
        mean.rows_mut(r, h).copy_from(&a.offset);
        gain.view_mut((r, 0), (h, dim)).copy_from(&a.gain);
        r += h;
    }
    let cov = linalg::symmetrize(&(&gain * noise * gain.transpose()));
    GaussianDist { mean, cov }
}

/// Joint Gaussians of `y_{0:T}` and `z_{0:T}`, nominal and attacked, for a
/// linear defender policy and a deterministic injection.
pub struct LinearJoint {
    pub y_nominal: GaussianDist,
    pub y_attacked: GaussianDist,
    pub z_nominal: GaussianDist,
    pub z_attacked: GaussianDist,
}

pub fn linear_joint_gaussians(
    model: &SystemModel,
    channels: &AttackChannels,
    policy: &DefenderPolicy,
    ua_seq: &[Vector],
    da_seq: &[Vector],
    horizon: usize,
) -> Result<LinearJoint> {
    let l = match policy {
        DefenderPolicy::Zero => None,
        DefenderPolicy::StateFeedback(l) => Some(l),
        DefenderPolicy::Saturated { .. } => {
            return Err(Error::UnsupportedPolicy(
                "saturated feedback makes the outputs non-Gaussian".into(),
            ))
        }
    };
    let dim = model.m() * (horizon + 1);
    if dim > MAX_JOINT_DIM {
        return Err(Error::DimensionTooLarge {
            dim,
            cap: MAX_JOINT_DIM,
        });
    }
    if da_seq.len() < horizon + 1 {
        return Err(Error::HorizonMismatch {
            expected: horizon + 1,
            found: da_seq.len(),
        });
    }
    if ua_seq.len() < horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: ua_seq.len(),
        });
    }
    let da = build_da(channels, model.m())?;
    let schedule = CovarianceSchedule::time_varying(model, horizon)?;
    let noise = noise_cov(model, horizon);
    let zero_u: Vec<Vector> = (0..horizon).map(|_| Vector::zeros(channels.p_attack())).collect();
    let zero_d: Vec<Vector> = (0..=horizon).map(|_| Vector::zeros(channels.m_attack())).collect();
    let nominal = trace_linear_loop(model, &schedule, l, &channels.ba, &da, &zero_u, &zero_d, horizon);
    let attacked = trace_linear_loop(model, &schedule, l, &channels.ba, &da, ua_seq, da_seq, horizon);
    Ok(LinearJoint {
        y_nominal: stack(&nominal.y, &noise),
        y_attacked: stack(&attacked.y, &noise),
        z_nominal: stack(&nominal.z, &noise),
        z_attacked: stack(&attacked.z, &noise),
    })
}

/// Divergences of the stacked outputs and of the stacked residues, both
/// computed from explicitly constructed joint Gaussians. The two agree for
/// any linear policy because residues are an invertible affine function of
/// outputs.
pub fn kl_outputs_equals_kl_residues_check(
    model: &SystemModel,
    channels: &AttackChannels,
    policy: &DefenderPolicy,
    ua_seq: &[Vector],
    da_seq: &[Vector],
    horizon: usize,
) -> Result<(f64, f64)> {
    let j = linear_joint_gaussians(model, channels, policy, ua_seq, da_seq, horizon)?;
    let kl_y = kl_gaussian(&j.y_attacked, &j.y_nominal)?;
    let kl_z = kl_gaussian(&j.z_attacked, &j.z_nominal)?;
    Ok((kl_y, kl_z))
}

/// Exact information flow of a deterministic injection against a linear
/// closed loop, alongside the per-step bound from the residue marginals.
pub fn if_linear_exact(
    model: &SystemModel,
    channels: &AttackChannels,
    policy: &DefenderPolicy,
    ua_seq: &[Vector],
    da_seq: &[Vector],
    horizon: usize,
) -> Result<InfoFlowReport> {
    let j = linear_joint_gaussians(model, channels, policy, ua_seq, da_seq, horizon)?;
    let m = model.m();
    let mut per_step = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let marg = |g: &GaussianDist| GaussianDist {
            mean: g.mean.rows(k * m, m).into_owned(),
            cov: g.cov.view((k * m, k * m), (m, m)).into_owned(),
        };
        per_step.push(kl_gaussian(&marg(&j.z_attacked), &marg(&j.z_nominal))?);
    }
    let exact = kl_gaussian(&j.z_attacked, &j.z_nominal)? / (horizon + 1) as f64;
    Ok(InfoFlowReport::from_per_step(per_step, Some(exact), IfMethod::LinearJoint))
}
