//! Attack strategies as policies over the attacker's information set.
//!
//! The interface shape enforces what each family may read: injections are
//! precomputed sequences that never see outputs, and the replay policy sees
//! only its recording and the live public output it overwrites.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::estimation::CovarianceSchedule;
use crate::linalg::{self, Matrix, Vector};
use crate::model::{build_da, AttackChannels, SystemModel};
use crate::stealth::WitnessAttack;

/// Outputs recorded by a replay attacker before onset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayBuffer {
    recorded_y: Vec<Vector>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        ReplayBuffer {
            recorded_y: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// Returns `false` once the buffer is full.
    pub fn record(&mut self, y: &Vector) -> bool {
        if self.recorded_y.len() >= self.capacity {
            return false;
        }
        self.recorded_y.push(y.clone());
        true
    }

    pub fn is_full(&self) -> bool {
        self.recorded_y.len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.recorded_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded_y.is_empty()
    }

    pub fn playback(&self, k: usize) -> Result<&Vector> {
        self.recorded_y.get(k).ok_or(Error::HorizonMismatch {
            expected: k + 1,
            found: self.recorded_y.len(),
        })
    }

    pub fn recorded(&self) -> &[Vector] {
        &self.recorded_y
    }
}

/// Attack policy families.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackPolicy {
    None,
    /// Output-independent injection: `u^a_k = ua_seq[k]`, `d^a_k = da_seq[k]`.
    Fdi { ua_seq: Vec<Vector>, da_seq: Vec<Vector> },
    /// Output-nulling sequences from the stealth audit.
    ZeroDynamics { ua_seq: Vec<Vector>, da_seq: Vec<Vector> },
    /// Replay of `record_len` outputs recorded in steady state.
    Replay { record_len: usize },
}

impl AttackPolicy {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AttackPolicy::None => "none",
            AttackPolicy::Fdi { .. } => "fdi",
            AttackPolicy::ZeroDynamics { .. } => "zero_dynamics",
            AttackPolicy::Replay { .. } => "replay",
        }
    }

    /// Injected `(u^a_k, d^a_k)` for output-independent policies; `None`
    /// for the replay policy, whose sensor injection depends on the live
    /// output.
    pub fn injection(&self, k: usize, channels: &AttackChannels) -> Option<(Vector, Vector)> {
        let zero_u = || Vector::zeros(channels.p_attack());
        let zero_d = || Vector::zeros(channels.m_attack());
        match self {
            AttackPolicy::None => Some((zero_u(), zero_d())),
            AttackPolicy::Fdi { ua_seq, da_seq } | AttackPolicy::ZeroDynamics { ua_seq, da_seq } => Some((
                ua_seq.get(k).cloned().unwrap_or_else(zero_u),
                da_seq.get(k).cloned().unwrap_or_else(zero_d),
            )),
            AttackPolicy::Replay { .. } => None,
        }
    }

    /// Sequences of an output-independent policy over `0..=T`, zero-padded.
    pub fn sequences(&self, channels: &AttackChannels, horizon: usize) -> Option<(Vec<Vector>, Vec<Vector>)> {
        if matches!(self, AttackPolicy::Replay { .. }) {
            return None;
        }
        let mut ua = Vec::with_capacity(horizon);
        let mut da = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let (u, d) = self.injection(k, channels)?;
            if k < horizon {
                ua.push(u);
            }
            da.push(d);
        }
        Some((ua, da))
    }
}

/// Sensor injection that makes the defender see `recorded` instead of the
/// live output. Requires the attacker to own every sensor.
pub fn replay_injection(recorded: &Vector, live: &Vector) -> Vector {
    recorded - live
}

/// Wrap fixed sequences covering `u^a_{0:T-1}` and `d^a_{0:T}`.
pub fn fdi_policy(ua_seq: Vec<Vector>, da_seq: Vec<Vector>, horizon: usize) -> Result<AttackPolicy> {
    if ua_seq.len() < horizon {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: ua_seq.len(),
        });
    }
    if da_seq.len() < horizon + 1 {
        return Err(Error::HorizonMismatch {
            expected: horizon + 1,
            found: da_seq.len(),
        });
    }
    Ok(AttackPolicy::Fdi { ua_seq, da_seq })
}

/// Constant biases held over the horizon.
pub fn fdi_constant(ua: &Vector, da: &Vector, horizon: usize) -> AttackPolicy {
    AttackPolicy::Fdi {
        ua_seq: alloc::vec![ua.clone(); horizon],
        da_seq: alloc::vec![da.clone(); horizon + 1],
    }
}

/// Sensor-only injection realizing the requested residue biases `Δz_k`
/// exactly, by inverting the residue-bias recursion step by step with
/// `u^a = 0`. Fails when some target is outside the reachable set of the
/// attacked sensors.
pub fn fdi_for_residue_targets(
    model: &SystemModel,
    channels: &AttackChannels,
    targets: &[Vector],
) -> Result<AttackPolicy> {
    if targets.is_empty() {
        return Err(Error::HorizonMismatch { expected: 1, found: 0 });
    }
    let horizon = targets.len() - 1;
    let da = build_da(channels, model.m())?;
    let schedule = CovarianceSchedule::time_varying(model, horizon)?;
    let n = model.n();
    let mut de = Vector::zeros(n);
    let mut da_seq = Vec::with_capacity(horizon + 1);
    let pinv = if channels.m_attack() > 0 {
        // Da has orthonormal columns, so Da' is its pseudo-inverse.
        da.transpose()
    } else {
        Matrix::zeros(0, model.m())
    };
    for (k, target) in targets.iter().enumerate() {
        if target.len() != model.m() {
            return Err(dim_err("residue target", (model.m(), 1), (target.len(), 1)));
        }
        let step = &schedule.steps[k];
        let pz_sqrt = linalg::inverse(&step.pz_inv_sqrt)?;
        let needed = &pz_sqrt * target - &model.c * &de;
        let d = &pinv * &needed;
        let miss = (&da * &d - &needed).amax();
        if miss > 1e-9 * needed.amax().max(1.0) {
            return Err(Error::Precondition(alloc::format!(
                "residue target at step {k} not reachable through the attacked sensors"
            )));
        }
        let sensor = &da * &d;
        let ak = &model.a * &step.gain;
        de = &model.a * &de - &ak * (&model.c * &de) - &ak * sensor;
        da_seq.push(d);
    }
    let ua_seq = alloc::vec![Vector::zeros(channels.p_attack()); horizon];
    Ok(AttackPolicy::Fdi { ua_seq, da_seq })
}

/// Replay `record_len` outputs. The horizon must fit in the recording.
pub fn replay_policy(record_len: usize, horizon: usize, channels: &AttackChannels, m: usize) -> Result<AttackPolicy> {
    if channels.m_attack() < m {
        return Err(Error::ReplayRequiresAllSensors);
    }
    if record_len < horizon + 1 {
        return Err(Error::HorizonMismatch {
            expected: horizon + 1,
            found: record_len,
        });
    }
    Ok(AttackPolicy::Replay { record_len })
}

/// Wrap a synthesized witness as an output-independent policy.
pub fn zero_dynamics_policy(witness: &WitnessAttack) -> AttackPolicy {
    AttackPolicy::ZeroDynamics {
        ua_seq: witness.ua_seq.clone(),
        da_seq: witness.da_seq.clone(),
    }
}
