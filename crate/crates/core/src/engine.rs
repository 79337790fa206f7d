//! Closed-loop simulation and the seeded Monte Carlo experiment.
//!
//! A trial is a pure function of its seed. Experiments derive one seed per
//! `(master seed, trial index, ensemble)` and reduce per-trial results in
//! trial order, so output does not depend on how trials are scheduled.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attack::{replay_injection, AttackPolicy, ReplayBuffer};
use crate::detection::{
    chi_squared_series, decay_rate_uncensored, estimate_roc, DetectorKind, DetectorSpec, RocRecord, StepLikelihood,
};
use crate::error::{Error, Result};
use crate::estimation::{
    design_lqg, gain_step, lqg_cost, steady_state_filter, CovarianceSchedule, FeedbackLaw, GainStep, SteadyStateFilter,
};
use crate::infoflow::{
    fdi_residue_bias_with, if_lower_bound, if_replay_watermark_bound, if_replay_watermark_perstep, kl_gaussian,
    replay_divergence_curve, replay_joint_gaussian, DefenderPolicy, GaussianDist, ReplayGeometry,
};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{build_da, validate_channels, AttackChannels, AttackSpec, ScenarioConfig, SystemModel};
use crate::stealth::{synthesize_zero_flow_attack, DEFAULT_RANK_RTOL};

/// Steps simulated before the replay recording starts.
pub const REPLAY_BURN_IN: usize = 500;
/// States beyond this magnitude mark a trial as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e100;

const TAG_NOMINAL: u64 = 0;
const TAG_ATTACKED: u64 = 1;
const RECORDING_STREAM: u64 = 0x7265_636f_7264;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trial seed from the master seed, trial index and ensemble tag.
pub fn trial_seed(master: u64, trial: usize, tag: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(trial as u64)) ^ splitmix64(tag.wrapping_add(0x51)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// `K_k`, `P_{k|k-1}` from `P_{0|-1} = x0_cov`; the plant starts from
    /// `N(x0_mean, x0_cov)`.
    TimeVarying,
    /// Constant steady-state gain; the plant starts from
    /// `N(x0_mean, P)` with the fixed-point `P` so residues stay white.
    SteadyState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Sampled,
    /// No process, measurement or watermark noise and `x_0 = x0_mean`.
    Off,
}

/// Everything a trial needs besides the attack and the seed.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub model: SystemModel,
    pub channels: AttackChannels,
    pub policy: DefenderPolicy,
    pub filter: FilterMode,
    pub watermark: Option<Matrix>,
    pub noise: NoiseMode,
    pub horizon: usize,
    pub burn_in: usize,
}

impl LoopConfig {
    pub fn new(model: SystemModel, channels: AttackChannels, horizon: usize) -> Self {
        LoopConfig {
            model,
            channels,
            policy: DefenderPolicy::Zero,
            filter: FilterMode::TimeVarying,
            watermark: None,
            noise: NoiseMode::Sampled,
            horizon,
            burn_in: REPLAY_BURN_IN,
        }
    }
}

/// A [`LoopConfig`] with its data-independent quantities precomputed.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub config: LoopConfig,
    pub ssf: Option<SteadyStateFilter>,
    gains: GainSource,
    da: Matrix,
    sqrt_q: Matrix,
    sqrt_r: Matrix,
    sqrt_x0: Matrix,
    sqrt_wm: Option<Matrix>,
}

impl ClosedLoop {
    pub fn new(config: LoopConfig) -> Result<Self> {
        let model = &config.model;
        validate_channels(&config.channels, model)?;
        let ssf = steady_state_filter(model).ok();
        let (gains, x0_cov) = match config.filter {
            FilterMode::TimeVarying => (
                GainSource::Schedule(CovarianceSchedule::time_varying(model, config.horizon)?),
                model.x0_cov.clone(),
            ),
            FilterMode::SteadyState => {
                let ssf = ssf.as_ref().ok_or(Error::Precondition(
                    "steady-state filter unavailable for this model".into(),
                ))?;
                (GainSource::Constant(gain_step(model, &ssf.p)?), ssf.p.clone())
            }
        };
        if let Some(wm) = &config.watermark {
            if wm.shape() != (model.p(), model.p()) {
                return Err(crate::error::dim_err("watermark_cov", (model.p(), model.p()), wm.shape()));
            }
        }
        Ok(ClosedLoop {
            da: build_da(&config.channels, model.m())?,
            sqrt_q: linalg::sqrt_psd(&model.q),
            sqrt_r: linalg::sqrt_psd(&model.r),
            sqrt_x0: linalg::sqrt_psd(&x0_cov),
            sqrt_wm: config.watermark.as_ref().map(linalg::sqrt_psd),
            gains,
            ssf,
            config,
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Filter covariances and gains for steps `0..=T`.
    pub fn schedule(&self) -> CovarianceSchedule {
        match &self.gains {
            GainSource::Schedule(s) => s.clone(),
            GainSource::Constant(_) => {
                CovarianceSchedule::steady(self.ssf.as_ref().expect("constant gains come from a filter"), self.horizon())
            }
        }
    }
}

/// What the defender and the plant see at step `k`.
#[derive(Debug)]
pub struct StepView<'a> {
    pub k: usize,
    pub x: &'a Vector,
    pub y_plant: &'a Vector,
    /// Output delivered to the defender.
    pub y: &'a Vector,
    pub x_pred: &'a Vector,
    pub x_filt: &'a Vector,
    pub z: &'a Vector,
    /// Control, watermark and actuator injection applied at `k`
    /// (absent at the final step).
    pub u: Option<&'a Vector>,
    pub watermark: Option<&'a Vector>,
    pub ua: Option<&'a Vector>,
    pub da: &'a Vector,
}

/// The replay attacker's recording run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub buffer: ReplayBuffer,
    /// Defender residues during the recorded segment.
    pub z: Vec<Vector>,
    /// Defender prediction `x̂` at the first recorded step.
    pub x_pred0: Vector,
    /// Watermark applied during the recorded segment.
    pub watermark: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub diverged: bool,
    pub steps: usize,
    pub replay: Option<ReplayTrace>,
}

struct Noise<'a> {
    lp: &'a ClosedLoop,
    rng: ChaCha8Rng,
}

impl Noise<'_> {
    fn std(&mut self, dim: usize) -> Vector {
        Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut self.rng))
    }

    fn scaled(&mut self, root: &Matrix) -> Vector {
        let e = self.std(root.ncols());
        match self.lp.config.noise {
            NoiseMode::Sampled => root * e,
            NoiseMode::Off => Vector::zeros(root.nrows()),
        }
    }

    fn watermark(&mut self) -> Vector {
        let p = self.lp.config.model.p();
        let e = self.std(p);
        match (&self.lp.sqrt_wm, self.lp.config.noise) {
            (Some(root), NoiseMode::Sampled) => root * e,
            _ => Vector::zeros(p),
        }
    }
}

fn diverged(x: &Vector) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

#[derive(Debug, Clone)]
enum GainSource {
    Schedule(CovarianceSchedule),
    Constant(GainStep),
}

impl GainSource {
    fn at(&self, k: usize) -> &GainStep {
        match self {
            GainSource::Schedule(s) => &s.steps[k],
            GainSource::Constant(g) => g,
        }
    }
}

/// Run the attacker's recording: burn in, then record `record_len`
/// outputs of the unattacked loop.
fn record_replay(lp: &ClosedLoop, record_len: usize, seed: u64) -> Result<ReplayTrace> {
    let model = &lp.config.model;
    let ssf = lp
        .ssf
        .as_ref()
        .ok_or(Error::Precondition("replay recording needs a steady-state filter".into()))?;
    let gains = GainSource::Constant(gain_step(model, &ssf.p)?);
    let mut noise = Noise {
        lp,
        rng: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ RECORDING_STREAM)),
    };
    let sqrt_p = linalg::sqrt_psd(&ssf.p);
    let mut x = &model.x0_mean + noise.scaled(&sqrt_p);
    let mut x_pred = model.x0_mean.clone();
    let total = lp.config.burn_in + record_len;
    let mut buffer = ReplayBuffer::with_capacity(record_len);
    let mut zs = Vec::with_capacity(record_len);
    let mut wms = Vec::with_capacity(record_len);
    let mut x_pred0 = x_pred.clone();
    for k in 0..total {
        let v = noise.scaled(&lp.sqrt_r);
        let y = &model.c * &x + v;
        let g = gains.at(k);
        let innov = &y - &model.c * &x_pred;
        let x_filt = &x_pred + &g.gain * &innov;
        let recording = k >= lp.config.burn_in;
        if k == lp.config.burn_in {
            x_pred0 = x_pred.clone();
        }
        if recording {
            buffer.record(&y);
            zs.push(&g.pz_inv_sqrt * &innov);
        }
        let wm = noise.watermark();
        let u = lp.config.policy.apply(&x_filt, model.p()) + &wm;
        if recording {
            wms.push(wm);
        }
        let w = noise.scaled(&lp.sqrt_q);
        x = &model.a * &x + &model.b * &u + w;
        x_pred = &model.a * &x_filt + &model.b * &u;
        if diverged(&x) {
            return Err(Error::Unstable {
                spectral_radius: f64::INFINITY,
            });
        }
    }
    Ok(ReplayTrace {
        buffer,
        z: zs,
        x_pred0,
        watermark: wms,
    })
}

/// Run one closed-loop trial, calling `visit` at every step `0..=T`.
pub fn run_loop<F: FnMut(&StepView)>(
    lp: &ClosedLoop,
    attack: &AttackPolicy,
    seed: u64,
    mut visit: F,
) -> Result<LoopOutcome> {
    let model = &lp.config.model;
    let channels = &lp.config.channels;
    let horizon = lp.config.horizon;
    let replay = match attack {
        AttackPolicy::Replay { record_len } => {
            if channels.m_attack() < model.m() {
                return Err(Error::ReplayRequiresAllSensors);
            }
            if *record_len < horizon + 1 {
                return Err(Error::HorizonMismatch {
                    expected: horizon + 1,
                    found: *record_len,
                });
            }
            Some(record_replay(lp, *record_len, seed)?)
        }
        _ => None,
    };
    let gains = &lp.gains;
    let mut noise = Noise {
        lp,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut x = &model.x0_mean + noise.scaled(&lp.sqrt_x0);
    let mut x_pred = model.x0_mean.clone();
    for k in 0..=horizon {
        let v = noise.scaled(&lp.sqrt_r);
        let y_plant = &model.c * &x + v;
        let (ua, da) = match (&replay, attack.injection(k, channels)) {
            (Some(trace), _) => {
                let recorded = trace.buffer.playback(k)?;
                // Da is the identity when every sensor is attacked.
                (Vector::zeros(channels.p_attack()), replay_injection(recorded, &y_plant))
            }
            (None, Some(inj)) => inj,
            (None, None) => unreachable!("non-replay policies always inject"),
        };
        let y = &y_plant + &lp.da * &da;
        let g = gains.at(k);
        let innov = &y - &model.c * &x_pred;
        let x_filt = &x_pred + &g.gain * &innov;
        let z = &g.pz_inv_sqrt * &innov;
        if k == horizon {
            visit(&StepView {
                k,
                x: &x,
                y_plant: &y_plant,
                y: &y,
                x_pred: &x_pred,
                x_filt: &x_filt,
                z: &z,
                u: None,
                watermark: None,
                ua: None,
                da: &da,
            });
            break;
        }
        let wm = noise.watermark();
        let u = lp.config.policy.apply(&x_filt, model.p()) + &wm;
        visit(&StepView {
            k,
            x: &x,
            y_plant: &y_plant,
            y: &y,
            x_pred: &x_pred,
            x_filt: &x_filt,
            z: &z,
            u: Some(&u),
            watermark: Some(&wm),
            ua: Some(&ua),
            da: &da,
        });
        let w = noise.scaled(&lp.sqrt_q);
        x = &model.a * &x + &model.b * &u + &channels.ba * &ua + w;
        x_pred = &model.a * &x_filt + &model.b * &u;
        if diverged(&x) {
            return Ok(LoopOutcome {
                diverged: true,
                steps: k + 1,
                replay,
            });
        }
    }
    Ok(LoopOutcome {
        diverged: false,
        steps: horizon + 1,
        replay,
    })
}

/// Full record of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub x_seq: Vec<Vector>,
    pub u_seq: Vec<Vector>,
    /// Outputs the defender received.
    pub y_seq: Vec<Vector>,
    /// Outputs the plant produced.
    pub y_plant_seq: Vec<Vector>,
    pub x_pred_seq: Vec<Vector>,
    pub z_seq: Vec<Vector>,
    pub watermark_seq: Vec<Vector>,
    pub ua_seq: Vec<Vector>,
    pub da_seq: Vec<Vector>,
    /// Detector statistic per step, filled by [`score_record`].
    pub detector_stat: Vec<f64>,
    pub diverged: bool,
    pub replay: Option<ReplayTrace>,
}

pub fn simulate_trial(lp: &ClosedLoop, attack: &AttackPolicy, seed: u64) -> Result<TrialRecord> {
    let cap = lp.horizon() + 1;
    let mut rec = TrialRecord {
        seed,
        x_seq: Vec::with_capacity(cap),
        u_seq: Vec::with_capacity(cap),
        y_seq: Vec::with_capacity(cap),
        y_plant_seq: Vec::with_capacity(cap),
        x_pred_seq: Vec::with_capacity(cap),
        z_seq: Vec::with_capacity(cap),
        watermark_seq: Vec::with_capacity(cap),
        ua_seq: Vec::with_capacity(cap),
        da_seq: Vec::with_capacity(cap),
        detector_stat: Vec::new(),
        diverged: false,
        replay: None,
    };
    let out = run_loop(lp, attack, seed, |s| {
        rec.x_seq.push(s.x.clone());
        rec.y_seq.push(s.y.clone());
        rec.y_plant_seq.push(s.y_plant.clone());
        rec.x_pred_seq.push(s.x_pred.clone());
        rec.z_seq.push(s.z.clone());
        rec.da_seq.push(s.da.clone());
        if let (Some(u), Some(wm), Some(ua)) = (s.u, s.watermark, s.ua) {
            rec.u_seq.push(u.clone());
            rec.watermark_seq.push(wm.clone());
            rec.ua_seq.push(ua.clone());
        }
    })?;
    rec.diverged = out.diverged;
    rec.replay = out.replay;
    Ok(rec)
}

/// Scalar multiplier of a watermark shape hitting a target relative cost
/// increase, with the resulting costs and detectability bound.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkDesign {
    pub scale: f64,
    pub cov: Matrix,
    pub j_star: f64,
    pub j: f64,
    pub ratio: f64,
    pub epsilon: f64,
}

/// Bisection on `s` so that `(J(s·shape) - J*) / J* = target`.
pub fn calibrate_watermark(
    model: &SystemModel,
    ssf: &SteadyStateFilter,
    law: &FeedbackLaw,
    shape: &Matrix,
    target_ratio: f64,
) -> Result<WatermarkDesign> {
    if !(target_ratio >= 0.0 && target_ratio.is_finite()) {
        return Err(Error::InvalidScenario("watermark cost ratio must be nonnegative".into()));
    }
    let j_star = lqg_cost(model, ssf, law, None)?;
    let ratio_at = |s: f64| -> Result<f64> { Ok((lqg_cost(model, ssf, law, Some(&(shape * s)))? - j_star) / j_star) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while ratio_at(hi)? < target_ratio {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::NoConvergence {
                what: "watermark calibration",
                iterations: grow,
                residual: target_ratio,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid)? < target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let scale = 0.5 * (lo + hi);
    let cov = shape * scale;
    let j = lqg_cost(model, ssf, law, Some(&cov))?;
    Ok(WatermarkDesign {
        scale,
        epsilon: if_replay_watermark_bound(model, ssf, law, &cov)?,
        ratio: (j - j_star) / j_star,
        cov,
        j_star,
        j,
    })
}

/// Runs `count` independent trials. Implementations must return results
/// in trial order.
pub trait TrialExecutor {
    fn map_trials<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs trials one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialExecutor;

impl TrialExecutor for SequentialExecutor {
    fn map_trials<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(f).collect()
    }
}

/// Closed form of the attacked residue law used for scoring.
#[derive(Debug, Clone)]
enum ResidueLaw {
    /// Same distribution as the null.
    Null,
    /// Same per-step Gaussians in every trial; `exact` is the exact
    /// `IF_k` curve.
    Fixed {
        per_step_kl: Vec<f64>,
        dists: Vec<GaussianDist>,
        exact: Vec<f64>,
    },
    /// Depends on the trial's watermark realization.
    ReplayWatermark { geo: ReplayGeometry, cov: Matrix },
}

/// Prepared experiment: loop, attack and scoring rule.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub lp: ClosedLoop,
    pub attack: AttackPolicy,
    pub detector: DetectorSpec,
    law: ResidueLaw,
}

/// Scores of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    /// Closed-form per-step divergence of the attacked residue law
    /// (attacked ensemble only).
    pub per_step_kl: Vec<f64>,
    /// `μ_k'μ_k` under watermarked replay (attacked ensemble only).
    pub mean_energy: Vec<f64>,
    pub stat: Vec<f64>,
    pub diverged: bool,
}

fn feedback_law(lp: &ClosedLoop) -> Result<Option<(FeedbackLaw, &SteadyStateFilter)>> {
    match (&lp.config.policy, &lp.ssf) {
        (DefenderPolicy::StateFeedback(l), Some(ssf)) => {
            Ok(Some((FeedbackLaw::from_gain(&lp.config.model, ssf, l.clone())?, ssf)))
        }
        _ => Ok(None),
    }
}

impl TrialPlan {
    /// Derive the attacked residue law of `attack` against `lp`.
    pub fn new(lp: ClosedLoop, attack: AttackPolicy, detector: DetectorSpec) -> Result<Self> {
        detector.validate()?;
        let model = &lp.config.model;
        let horizon = lp.horizon();
        let m = model.m();
        let law = match &attack {
            AttackPolicy::None => ResidueLaw::Null,
            AttackPolicy::Replay { .. } => {
                let (law, ssf) = feedback_law(&lp)?
                    .ok_or(Error::Precondition("replay analysis needs state feedback".into()))?;
                let geo = ReplayGeometry::new(model, ssf, &law, lp.config.watermark.as_ref())?;
                match &lp.config.watermark {
                    Some(cov) => ResidueLaw::ReplayWatermark { geo, cov: cov.clone() },
                    None => {
                        let joint = replay_joint_gaussian(&geo, horizon)?;
                        let mut per_step_kl = Vec::with_capacity(horizon + 1);
                        let mut dists = Vec::with_capacity(horizon + 1);
                        for j in 0..=horizon {
                            let d = GaussianDist::new(
                                joint.mean.rows(j * m, m).into_owned(),
                                joint.cov.view((j * m, j * m), (m, m)).into_owned(),
                            );
                            per_step_kl.push(kl_gaussian(&d, &GaussianDist::standard(m))?);
                            dists.push(d);
                        }
                        let exact = replay_divergence_curve(&geo, horizon)?
                            .iter()
                            .enumerate()
                            .map(|(k, d)| d / (k + 1) as f64)
                            .collect();
                        ResidueLaw::Fixed {
                            per_step_kl,
                            dists,
                            exact,
                        }
                    }
                }
            }
            other => {
                let (ua, da) = other
                    .sequences(&lp.config.channels, horizon)
                    .ok_or(Error::Precondition("attack has no injection sequences".into()))?;
                let bias = fdi_residue_bias_with(&lp.schedule(), model, &lp.config.channels, &ua, &da)?;
                let per_step_kl: Vec<f64> = bias.delta_z.iter().map(|dz| 0.5 * dz.norm_squared()).collect();
                let dists = bias
                    .delta_z
                    .iter()
                    .map(|dz| GaussianDist::new(dz.clone(), Matrix::identity(m, m)))
                    .collect();
                // Deterministic residue shifts keep residues independent,
                // so the per-step bound is exact.
                let exact = (0..=horizon).map(|k| if_lower_bound(&per_step_kl[..=k])).collect();
                ResidueLaw::Fixed {
                    per_step_kl,
                    dists,
                    exact,
                }
            }
        };
        Ok(TrialPlan {
            lp,
            attack,
            detector,
            law,
        })
    }

    fn attack_dists(&self, watermark: &[Vector]) -> Result<(Vec<f64>, Vec<f64>, Vec<GaussianDist>)> {
        let horizon = self.lp.horizon();
        let m = self.lp.config.model.m();
        match &self.law {
            ResidueLaw::Null => Ok((
                alloc::vec![0.0; horizon + 1],
                Vec::new(),
                alloc::vec![GaussianDist::standard(m); horizon + 1],
            )),
            ResidueLaw::Fixed { per_step_kl, dists, .. } => Ok((per_step_kl.clone(), Vec::new(), dists.clone())),
            ResidueLaw::ReplayWatermark { geo, cov } => {
                let flow = if_replay_watermark_perstep(geo, cov, watermark, horizon)?;
                let dists = flow
                    .means
                    .iter()
                    .zip(&flow.excess_covs)
                    .map(|(mu, s)| GaussianDist::new(mu.clone(), s + Matrix::identity(m, m)))
                    .collect();
                let energy = flow.terms.iter().map(|t| t.0).collect();
                Ok((flow.report.per_step_kl, energy, dists))
            }
        }
    }

    /// Simulate and score one trial of the given ensemble.
    pub fn score(&self, seed: u64, attacked: bool) -> Result<TrialScore> {
        let none = AttackPolicy::None;
        let attack = if attacked { &self.attack } else { &none };
        let mut z = Vec::with_capacity(self.lp.horizon() + 1);
        let mut wm = Vec::with_capacity(self.lp.horizon());
        let out = run_loop(&self.lp, attack, seed, |s| {
            z.push(s.z.clone());
            if let Some(w) = s.watermark {
                wm.push(w.clone());
            }
        })?;
        if out.diverged {
            return Ok(TrialScore {
                per_step_kl: Vec::new(),
                mean_energy: Vec::new(),
                stat: Vec::new(),
                diverged: true,
            });
        }
        let (per_step_kl, mean_energy, dists) = self.attack_dists(&wm)?;
        let stat = match self.detector.kind {
            DetectorKind::ChiSquared => chi_squared_series(&z, self.detector.window),
            DetectorKind::NeymanPearson => {
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(z.len());
                for (zk, d) in z.iter().zip(&dists) {
                    acc += StepLikelihood::new(d)?.llr(zk);
                    out.push(acc);
                }
                out
            }
        };
        Ok(TrialScore {
            per_step_kl: if attacked { per_step_kl } else { Vec::new() },
            mean_energy: if attacked { mean_energy } else { Vec::new() },
            stat,
            diverged: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub scenario_id: String,
    /// Calibrate the watermark so that `ΔJ/J*` equals this ratio.
    pub delta_j_target: Option<f64>,
    /// First step used by the decay-rate regression.
    pub decay_k_min: usize,
    pub burn_in: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            scenario_id: "scenario".into(),
            delta_j_target: None,
            decay_k_min: 10,
            burn_in: REPLAY_BURN_IN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqgCosts {
    pub j_star: f64,
    pub j: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub scenario_id: String,
    pub attack: &'static str,
    pub filter: FilterMode,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Mean over attacked trials of the per-step divergence.
    pub mean_perstep_kl: Vec<f64>,
    /// Running per-step lower bound on `IF_k`.
    pub cum_if_lower_bound: Vec<f64>,
    /// Exact `IF_k` where a closed form exists.
    pub exact_if: Option<Vec<f64>>,
    /// Mean of `μ_k'μ_k` over attacked trials (watermarked replay only).
    pub mean_energy: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub roc: Vec<RocRecord>,
    pub decay_rate: Option<f64>,
    pub costs: Option<LqgCosts>,
    pub watermark_cov: Option<Matrix>,
    pub diverged_trials: usize,
}

/// Build the loop and attack of a scenario: LQG feedback when the plant
/// has inputs, steady-state filtering for replay, time-varying otherwise.
pub fn plan_experiment(
    config: &ScenarioConfig,
    model: &SystemModel,
    channels: &AttackChannels,
    options: &ExperimentOptions,
) -> Result<TrialPlan> {
    let horizon = config.horizon;
    let law = if model.p() > 0 { Some(design_lqg(model)?) } else { None };
    let mut watermark = config.watermark_cov.clone();
    if let Some(target) = options.delta_j_target {
        let law = law
            .as_ref()
            .ok_or(Error::Precondition("watermark calibration needs control inputs".into()))?;
        let ssf = steady_state_filter(model)?;
        let shape = config
            .watermark_cov
            .clone()
            .unwrap_or_else(|| Matrix::identity(model.p(), model.p()));
        watermark = Some(calibrate_watermark(model, &ssf, law, &shape, target)?.cov);
    }
    let filter = match config.attack {
        AttackSpec::Replay { .. } => FilterMode::SteadyState,
        _ => FilterMode::TimeVarying,
    };
    let lp = ClosedLoop::new(LoopConfig {
        model: model.clone(),
        channels: channels.clone(),
        policy: law
            .as_ref()
            .map(|l| DefenderPolicy::StateFeedback(l.l.clone()))
            .unwrap_or(DefenderPolicy::Zero),
        filter,
        watermark,
        noise: NoiseMode::Sampled,
        horizon,
        burn_in: options.burn_in,
    })?;
    let attack = match &config.attack {
        AttackSpec::None => AttackPolicy::None,
        AttackSpec::Fdi { ua, da } => crate::attack::fdi_constant(ua, da, horizon),
        AttackSpec::ZeroDynamics { scale } => {
            let witness = synthesize_zero_flow_attack(model, channels, horizon, DEFAULT_RANK_RTOL)?
                .ok_or(Error::Precondition("no output-nulling injection exists for these channels".into()))?
                .scaled(*scale);
            crate::attack::zero_dynamics_policy(&witness)
        }
        AttackSpec::Replay { record_len } => crate::attack::replay_policy(*record_len, horizon, channels, model.m())?,
    };
    TrialPlan::new(lp, attack, config.detector.clone())
}

fn mean_columns(rows: &[&Vec<f64>], len: usize) -> Vec<f64> {
    let mut col = Vec::with_capacity(rows.len());
    (0..len)
        .map(|k| {
            col.clear();
            col.extend(rows.iter().map(|r| r[k]));
            linalg::mean(&col)
        })
        .collect()
}

/// Run `trials` nominal and `trials` attacked trials of a plan and
/// aggregate in trial order.
pub fn run_plan<E: TrialExecutor>(
    plan: &TrialPlan,
    trials: usize,
    master: u64,
    options: &ExperimentOptions,
    executor: &E,
) -> Result<ExperimentSummary> {
    let horizon = plan.lp.horizon();
    let model = &plan.lp.config.model;
    let watermark = plan.lp.config.watermark.as_ref();
    let mut costs = None;
    let mut epsilon = None;
    if let Some((law, ssf)) = feedback_law(&plan.lp)? {
        if law.spectral_radius < 1.0 {
            let j_star = lqg_cost(model, ssf, &law, None)?;
            let j = lqg_cost(model, ssf, &law, watermark)?;
            costs = Some(LqgCosts {
                j_star,
                j,
                ratio: (j - j_star) / j_star,
            });
        }
        if let (ResidueLaw::ReplayWatermark { .. }, Some(cov)) = (&plan.law, watermark) {
            epsilon = Some(if_replay_watermark_bound(model, ssf, &law, cov)?);
        }
    }

    let run = |tag: u64| -> Result<Vec<TrialScore>> {
        let attacked = tag == TAG_ATTACKED;
        executor
            .map_trials(trials, |i| plan.score(trial_seed(master, i, tag), attacked))
            .into_iter()
            .collect()
    };
    let h1 = run(TAG_ATTACKED)?;
    let h0 = run(TAG_NOMINAL)?;
    let ok1: Vec<&TrialScore> = h1.iter().filter(|s| !s.diverged).collect();
    let ok0: Vec<&TrialScore> = h0.iter().filter(|s| !s.diverged).collect();
    let diverged_trials = (h1.len() - ok1.len()) + (h0.len() - ok0.len());
    if ok1.is_empty() || ok0.is_empty() {
        return Err(Error::Unstable {
            spectral_radius: f64::INFINITY,
        });
    }

    let kl_rows: Vec<&Vec<f64>> = ok1.iter().map(|s| &s.per_step_kl).collect();
    let mean_perstep_kl = mean_columns(&kl_rows, horizon + 1);
    let cum_if_lower_bound = (0..=horizon).map(|k| if_lower_bound(&mean_perstep_kl[..=k])).collect();
    let (exact_if, mean_energy) = match &plan.law {
        ResidueLaw::Null => (Some(alloc::vec![0.0; horizon + 1]), None),
        ResidueLaw::Fixed { exact, .. } => (Some(exact.clone()), None),
        ResidueLaw::ReplayWatermark { .. } => {
            let rows: Vec<&Vec<f64>> = ok1.iter().map(|s| &s.mean_energy).collect();
            (None, Some(mean_columns(&rows, horizon + 1)))
        }
    };
    let stats1: Vec<Vec<f64>> = ok1.iter().map(|s| s.stat.clone()).collect();
    let stats0: Vec<Vec<f64>> = ok0.iter().map(|s| s.stat.clone()).collect();
    let roc = estimate_roc(&stats0, &stats1, &plan.detector)?;
    let alphas: Vec<f64> = roc.iter().map(|r| r.alpha).collect();
    let decay_rate = decay_rate_uncensored(&alphas, options.decay_k_min, ok0.len()).ok();

    Ok(ExperimentSummary {
        scenario_id: options.scenario_id.clone(),
        attack: plan.attack.kind_name(),
        filter: plan.lp.config.filter,
        horizon,
        trials,
        seed: master,
        mean_perstep_kl,
        cum_if_lower_bound,
        exact_if,
        mean_energy,
        epsilon,
        roc,
        decay_rate,
        costs,
        watermark_cov: plan.lp.config.watermark.clone(),
        diverged_trials,
    })
}

/// Validate, plan and run a scenario.
pub fn run_experiment<E: TrialExecutor>(
    config: &ScenarioConfig,
    model: &SystemModel,
    channels: &AttackChannels,
    options: &ExperimentOptions,
    executor: &E,
) -> Result<ExperimentSummary> {
    let config = crate::model::validate_scenario(config.clone(), model, channels)?;
    let plan = plan_experiment(&config, model, channels, options)?;
    run_plan(&plan, config.trials, config.seed, options, executor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn seeds_differ_by_index_and_tag() {
        let a = trial_seed(1, 0, 0);
        assert_ne!(a, trial_seed(1, 1, 0));
        assert_ne!(a, trial_seed(1, 0, 1));
        assert_ne!(a, trial_seed(2, 0, 0));
        assert_eq!(a, trial_seed(1, 0, 0));
    }

    #[test]
    fn noiseless_loop_has_zero_residues() {
        let mut model = SystemModel::double_integrator();
        model.q = Matrix::zeros(2, 2);
        let mut cfg = LoopConfig::new(model, AttackChannels::none(2), 30);
        cfg.noise = NoiseMode::Off;
        cfg.watermark = Some(Matrix::zeros(1, 1));
        let lp = ClosedLoop::new(cfg).unwrap();
        let rec = simulate_trial(&lp, &AttackPolicy::None, 3).unwrap();
        assert_eq!(rec.z_seq.len(), 31);
        assert!(rec.z_seq.iter().all(|z| z.amax() == 0.0));
        assert_eq!(rec.x_seq[0], lp.config.model.x0_mean);
    }

    #[test]
    fn same_seed_same_record() {
        let lp = ClosedLoop::new(LoopConfig::new(
            SystemModel::double_integrator(),
            AttackChannels::none(2),
            20,
        ))
        .unwrap();
        let a = simulate_trial(&lp, &AttackPolicy::None, 99).unwrap();
        let b = simulate_trial(&lp, &AttackPolicy::None, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_trial(&lp, &AttackPolicy::None, 100).unwrap();
        assert_ne!(a.z_seq, c.z_seq);
    }

    #[test]
    fn unstable_open_loop_diverges() {
        let mut model = SystemModel::double_integrator();
        model.a = Matrix::identity(2, 2) * 1e30;
        let lp = ClosedLoop::new(LoopConfig::new(model, AttackChannels::none(2), 50));
        // the filter itself may already fail on such a model
        if let Ok(lp) = lp {
            if let Ok(rec) = simulate_trial(&lp, &AttackPolicy::None, 1) {
                assert!(rec.diverged);
            }
        }
    }

    #[test]
    fn calibration_hits_ratio() {
        let model = SystemModel::double_integrator();
        let ssf = steady_state_filter(&model).unwrap();
        let law = design_lqg(&model).unwrap();
        let d = calibrate_watermark(&model, &ssf, &law, &Matrix::identity(1, 1), 0.4).unwrap();
        assert!((d.ratio - 0.4).abs() < 1e-9);
        assert!(d.epsilon > 0.0);
    }

    #[test]
    fn replay_recording_fills_buffer() {
        let model = SystemModel::double_integrator();
        let law = design_lqg(&model).unwrap();
        let mut cfg = LoopConfig::new(model, AttackChannels::sensors_only(2, vec![1, 2]), 10);
        cfg.policy = DefenderPolicy::StateFeedback(law.l.clone());
        cfg.filter = FilterMode::SteadyState;
        let lp = ClosedLoop::new(cfg).unwrap();
        let rec = simulate_trial(&lp, &AttackPolicy::Replay { record_len: 11 }, 5).unwrap();
        let trace = rec.replay.as_ref().unwrap();
        assert_eq!(trace.buffer.len(), 11);
        for (y, r) in rec.y_seq.iter().zip(trace.buffer.recorded()) {
            assert!((y - r).amax() < 1e-12);
        }
    }
}
