//! Plant, attacker channels and scenario configuration.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::detection::DetectorSpec;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Relative tolerance on eigenvalues and asymmetry of covariance inputs.
pub const PSD_TOL: f64 = 1e-8;

/// Linear time-invariant plant with Gaussian noise and Gaussian prior.
///
/// `x_{k+1} = A x_k + B u_k + w_k`, `y_k = C x_k + v_k`, with
/// `w ~ N(0, Q)`, `v ~ N(0, R)` and `x_0 ~ N(x0_mean, x0_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub x0_mean: Vector,
    pub x0_cov: Matrix,
}

impl SystemModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    /// Double integrator sampled at 0.1 s: a vehicle on a single axis with
    /// position and velocity measured.
    pub fn double_integrator() -> Self {
        let dt = 0.1;
        SystemModel {
            a: linalg::from_rows(&[&[1.0, dt], &[0.0, 1.0]]),
            b: linalg::from_rows(&[&[0.005], &[dt]]),
            c: Matrix::identity(2, 2),
            q: Matrix::identity(2, 2) * 0.1,
            r: Matrix::identity(2, 2) * 0.1,
            x0_mean: Vector::from_vec(alloc::vec![1.0, 0.0]),
            x0_cov: Matrix::identity(2, 2),
        }
    }
}

fn check_shape(field: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(dim_err(field, (rows, cols), (m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Symmetrize a covariance if its asymmetry is within tolerance and check
/// that it is positive semidefinite.
fn validate_cov(field: &str, m: &Matrix) -> Result<Matrix> {
    let norm = linalg::spectral_norm(m);
    let asym = linalg::asymmetry(m);
    if asym > PSD_TOL * norm.max(1.0) {
        return Err(Error::NotSymmetric {
            field: field.to_string(),
            asymmetry: asym,
        });
    }
    let s = linalg::symmetrize(m);
    let min = linalg::min_eigenvalue(&s);
    if min < -PSD_TOL * norm {
        return Err(Error::NotPsd {
            field: field.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(s)
}

/// Check dimensions, symmetry and definiteness; returns the model with
/// covariances symmetrized.
pub fn validate_model(model: SystemModel) -> Result<SystemModel> {
    let n = model.a.nrows();
    check_shape("A", &model.a, n, n)?;
    if n == 0 {
        return Err(dim_err("A", (1, 1), (0, 0)));
    }
    let p = model.b.ncols();
    check_shape("B", &model.b, n, p)?;
    let m = model.c.nrows();
    if m == 0 {
        return Err(dim_err("C", (1, n), (0, model.c.ncols())));
    }
    check_shape("C", &model.c, m, n)?;
    check_shape("Q", &model.q, n, n)?;
    check_shape("R", &model.r, m, m)?;
    if model.x0_mean.len() != n {
        return Err(dim_err("x0_mean", (n, 1), (model.x0_mean.len(), 1)));
    }
    check_shape("x0_cov", &model.x0_cov, n, n)?;

    let q = validate_cov("Q", &model.q)?;
    let r = validate_cov("R", &model.r)?;
    let x0_cov = validate_cov("x0_cov", &model.x0_cov)?;
    let r_norm = linalg::spectral_norm(&r);
    if r_norm == 0.0 || linalg::min_eigenvalue(&r) <= 1e-12 * r_norm {
        return Err(Error::SingularR);
    }
    Ok(SystemModel {
        q,
        r,
        x0_cov,
        ..model
    })
}

/// Attacker access: actuator injection matrix `Ba` and the attacked sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackChannels {
    /// n×p′ actuator attack map, full column rank.
    pub ba: Matrix,
    /// 1-based, strictly increasing sensor indices.
    pub sensors: Vec<usize>,
}

impl AttackChannels {
    pub fn none(n: usize) -> Self {
        AttackChannels {
            ba: Matrix::zeros(n, 0),
            sensors: Vec::new(),
        }
    }

    pub fn sensors_only(n: usize, sensors: Vec<usize>) -> Self {
        AttackChannels {
            ba: Matrix::zeros(n, 0),
            sensors,
        }
    }

    pub fn p_attack(&self) -> usize {
        self.ba.ncols()
    }

    pub fn m_attack(&self) -> usize {
        self.sensors.len()
    }
}

pub fn validate_channels(channels: &AttackChannels, model: &SystemModel) -> Result<()> {
    let n = model.n();
    if channels.ba.nrows() != n {
        return Err(dim_err(
            "Ba",
            (n, channels.ba.ncols()),
            (channels.ba.nrows(), channels.ba.ncols()),
        ));
    }
    if channels.p_attack() > 0 && linalg::rank(&channels.ba, 1e-9) < channels.p_attack() {
        return Err(Error::BaRankDeficient);
    }
    check_sensors(&channels.sensors, model.m())
}

fn check_sensors(sensors: &[usize], m: usize) -> Result<()> {
    for &s in sensors {
        if s == 0 || s > m {
            return Err(Error::SensorOutOfRange { index: s, m });
        }
    }
    if sensors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::SensorsNotIncreasing);
    }
    Ok(())
}

/// Sensor selection matrix: `Da[u, v] = 1` iff `u = γ_v` (1-based sensors).
pub fn build_da(channels: &AttackChannels, m: usize) -> Result<Matrix> {
    check_sensors(&channels.sensors, m)?;
    let mut da = Matrix::zeros(m, channels.sensors.len());
    for (v, &s) in channels.sensors.iter().enumerate() {
        da[(s - 1, v)] = 1.0;
    }
    Ok(da)
}

/// Which attack a scenario runs, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    None,
    /// Output-independent injection of constant biases on the attacker
    /// channels (`ua` has length p′, `da` length m′).
    Fdi { ua: Vector, da: Vector },
    /// Synthesized output-nulling sequence, scaled.
    ZeroDynamics { scale: f64 },
    /// Record `record_len` outputs in steady state, replay them from time 0.
    Replay { record_len: usize },
}

impl AttackSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Fdi { .. } => "fdi",
            AttackSpec::ZeroDynamics { .. } => "zero_dynamics",
            AttackSpec::Replay { .. } => "replay",
        }
    }
}

/// Monte Carlo experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub attack: AttackSpec,
    /// Watermark covariance on the actuator space, p×p.
    pub watermark_cov: Option<Matrix>,
    pub detector: DetectorSpec,
}

pub fn validate_scenario(
    config: ScenarioConfig,
    model: &SystemModel,
    channels: &AttackChannels,
) -> Result<ScenarioConfig> {
    if config.horizon < 1 {
        return Err(Error::InvalidScenario("horizon must be at least 1".into()));
    }
    if config.trials < 1 {
        return Err(Error::InvalidScenario("trials must be at least 1".into()));
    }
    let watermark_cov = match &config.watermark_cov {
        Some(wm) => {
            check_shape("watermark_cov", wm, model.p(), model.p())?;
            Some(validate_cov("watermark_cov", wm)?)
        }
        None => None,
    };
    match &config.attack {
        AttackSpec::Fdi { ua, da } => {
            if ua.len() != channels.p_attack() {
                return Err(dim_err("attack_kind.ua", (channels.p_attack(), 1), (ua.len(), 1)));
            }
            if da.len() != channels.m_attack() {
                return Err(dim_err("attack_kind.da", (channels.m_attack(), 1), (da.len(), 1)));
            }
        }
        AttackSpec::Replay { record_len } => {
            if channels.m_attack() != model.m() {
                return Err(Error::ReplayRequiresAllSensors);
            }
            if *record_len < config.horizon + 1 {
                return Err(Error::InvalidScenario(format!(
                    "replay record_len {} shorter than horizon + 1 = {}",
                    record_len,
                    config.horizon + 1
                )));
            }
        }
        AttackSpec::ZeroDynamics { scale } => {
            if !scale.is_finite() {
                return Err(Error::InvalidScenario("zero_dynamics scale must be finite".into()));
            }
        }
        AttackSpec::None => {}
    }
    config.detector.validate()?;
    Ok(ScenarioConfig {
        watermark_cov,
        ..config
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar() -> SystemModel {
        let one = || Matrix::identity(1, 1);
        SystemModel {
            a: one() * 0.9,
            b: one(),
            c: one(),
            q: one(),
            r: one(),
            x0_mean: Vector::zeros(1),
            x0_cov: one(),
        }
    }

    #[test]
    fn scalar_model_accepted() {
        let m = validate_model(scalar()).unwrap();
        assert_eq!(m, scalar());
    }

    #[test]
    fn singular_r_rejected() {
        let mut m = scalar();
        m.r = Matrix::zeros(1, 1);
        assert_eq!(validate_model(m), Err(Error::SingularR));
    }

    #[test]
    fn indefinite_q_rejected() {
        let mut m = SystemModel::double_integrator();
        m.q = linalg::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match validate_model(m) {
            Err(Error::NotPsd { field, min_eigenvalue }) => {
                assert_eq!(field, "Q");
                assert!((min_eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_shape_names_field() {
        let mut m = SystemModel::double_integrator();
        m.a = Matrix::zeros(2, 3);
        match validate_model(m) {
            Err(Error::DimensionMismatch { field, .. }) => assert_eq!(field, "A"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tiny_asymmetry_symmetrized() {
        let mut m = SystemModel::double_integrator();
        m.q[(0, 1)] = 1e-17;
        let v = validate_model(m).unwrap();
        assert_eq!(v.q[(0, 1)], v.q[(1, 0)]);
    }

    #[test]
    fn validate_is_idempotent() {
        let once = validate_model(SystemModel::double_integrator()).unwrap();
        let twice = validate_model(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn da_single_sensor() {
        let ch = AttackChannels::sensors_only(2, vec![2]);
        let da = build_da(&ch, 3).unwrap();
        assert_eq!(da, Matrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]));
    }

    #[test]
    fn da_all_sensors_is_identity() {
        let ch = AttackChannels::sensors_only(2, vec![1, 2]);
        assert_eq!(build_da(&ch, 2).unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn da_out_of_range() {
        let ch = AttackChannels::sensors_only(2, vec![3]);
        assert_eq!(
            build_da(&ch, 2),
            Err(Error::SensorOutOfRange { index: 3, m: 2 })
        );
    }

    #[test]
    fn rank_deficient_ba_rejected() {
        let model = SystemModel::double_integrator();
        let ch = AttackChannels {
            ba: linalg::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]),
            sensors: vec![],
        };
        assert_eq!(validate_channels(&ch, &model), Err(Error::BaRankDeficient));
    }

    proptest::proptest! {
        #[test]
        fn da_columns_select_one_sensor(mask in proptest::collection::vec(proptest::bool::ANY, 1..8)) {
            let m = mask.len();
            let sensors: Vec<usize> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i + 1).collect();
            let ch = AttackChannels::sensors_only(1, sensors.clone());
            let da = build_da(&ch, m).unwrap();
            for j in 0..da.ncols() {
                proptest::prop_assert_eq!(da.column(j).sum(), 1.0);
            }
            for i in 0..m {
                proptest::prop_assert!(da.row(i).sum() <= 1.0);
            }
        }
    }
}
