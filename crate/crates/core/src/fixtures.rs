//! Reference systems for tests, examples and benchmarks.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, from_rows, Matrix, Vector};
use crate::model::{AttackChannels, SystemModel};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_pd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> Matrix {
    let g = gaussian(rng, dim, dim);
    linalg::symmetrize(&(&g * g.transpose() * (0.5 / dim as f64) + Matrix::identity(dim, dim) * floor))
}

/// Random model with `n ≤ 2` states, spectral radius `< 0.95`, PD
/// covariances, and attacker channels with `p′ ≤ 1`, `1 ≤ m′ ≤ m`.
pub fn random_system(seed: u64) -> (SystemModel, AttackChannels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2usize);
    let m = rng.random_range(1..=2usize);
    let p = 1;
    let mut a = gaussian(&mut rng, n, n);
    let rho = linalg::spectral_radius(&a);
    let target = rng.random_range(0.3..0.95);
    if rho > 0.0 {
        a *= target / rho;
    }
    let model = SystemModel {
        a,
        b: gaussian(&mut rng, n, p),
        c: gaussian(&mut rng, m, n),
        q: random_pd(&mut rng, n, 0.05),
        r: random_pd(&mut rng, m, 0.1),
        x0_mean: gaussian(&mut rng, n, 1).column(0).into_owned(),
        x0_cov: random_pd(&mut rng, n, 0.1),
    };
    let pa = rng.random_range(0..=1usize);
    let sensors: Vec<usize> = (1..=m).filter(|_| rng.random_bool(0.6)).collect();
    let sensors = if sensors.is_empty() { vec![1] } else { sensors };
    let channels = AttackChannels {
        ba: gaussian(&mut rng, n, pa),
        sensors,
    };
    (model, channels)
}

/// Attack sequences `(u^a_{0:T-1}, d^a_{0:T})` with standard normal entries.
pub fn random_injection(seed: u64, channels: &AttackChannels, horizon: usize) -> (Vec<Vector>, Vec<Vector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ua = (0..horizon)
        .map(|_| gaussian(&mut rng, channels.p_attack(), 1).column(0).into_owned())
        .collect();
    let da = (0..=horizon)
        .map(|_| gaussian(&mut rng, channels.m_attack(), 1).column(0).into_owned())
        .collect();
    (ua, da)
}

/// A named plant/channel pair with its known stealth verdict.
#[derive(Debug, Clone)]
pub struct StealthCase {
    pub name: &'static str,
    pub model: SystemModel,
    pub channels: AttackChannels,
    /// Whether a nonzero output-nulling injection exists.
    pub stealthy: bool,
}

fn plant(a: Matrix, b: Matrix, c: Matrix) -> SystemModel {
    let (n, m) = (a.nrows(), c.nrows());
    SystemModel {
        a,
        b,
        c,
        q: Matrix::identity(n, n) * 0.1,
        r: Matrix::identity(m, m) * 0.1,
        x0_mean: Vector::zeros(n),
        x0_cov: Matrix::identity(n, n),
    }
}

/// Five systems that admit an output-nulling injection and five that do
/// not. Every case has `C B^a` of full column rank or a genuinely
/// invisible actuator, so finite-horizon and pencil verdicts coincide.
pub fn stealth_catalog() -> Vec<StealthCase> {
    let di = SystemModel::double_integrator();
    let e1 = from_rows(&[&[1.0], &[0.0]]);
    let e2 = from_rows(&[&[0.0], &[1.0]]);
    let upper = from_rows(&[&[0.9, 0.2], &[0.0, 0.8]]);
    let lower = from_rows(&[&[0.5, 0.0], &[0.3, 0.7]]);
    vec![
        StealthCase {
            name: "scalar actuator and sensor",
            model: plant(from_rows(&[&[0.5]]), from_rows(&[&[1.0]]), from_rows(&[&[1.0]])),
            channels: AttackChannels {
                ba: from_rows(&[&[1.0]]),
                sensors: vec![1],
            },
            stealthy: true,
        },
        StealthCase {
            name: "double integrator, velocity actuator and all sensors",
            model: di.clone(),
            channels: AttackChannels {
                ba: e2.clone(),
                sensors: vec![1, 2],
            },
            stealthy: true,
        },
        StealthCase {
            name: "fully actuated with one sensor",
            model: di.clone(),
            channels: AttackChannels {
                ba: Matrix::identity(2, 2),
                sensors: vec![1],
            },
            stealthy: true,
        },
        StealthCase {
            name: "decoupled actuator masked on its sensor",
            model: plant(upper.clone(), e1.clone(), Matrix::identity(2, 2)),
            channels: AttackChannels {
                ba: e1.clone(),
                sensors: vec![1],
            },
            stealthy: true,
        },
        StealthCase {
            name: "actuator on an unobservable state",
            model: plant(lower, e1.clone(), from_rows(&[&[1.0, 0.0]])),
            channels: AttackChannels {
                ba: e2.clone(),
                sensors: vec![],
            },
            stealthy: true,
        },
        StealthCase {
            name: "no attacker channels",
            model: di.clone(),
            channels: AttackChannels::none(2),
            stealthy: false,
        },
        StealthCase {
            name: "unstable scalar, sensor only",
            model: plant(from_rows(&[&[2.0]]), from_rows(&[&[1.0]]), from_rows(&[&[1.0]])),
            channels: AttackChannels::sensors_only(1, vec![1]),
            stealthy: false,
        },
        StealthCase {
            name: "double integrator, all sensors",
            model: di.clone(),
            channels: AttackChannels::sensors_only(2, vec![1, 2]),
            stealthy: false,
        },
        StealthCase {
            name: "fully actuated, full state output",
            model: plant(upper.clone(), e1.clone(), Matrix::identity(2, 2)),
            channels: AttackChannels {
                ba: Matrix::identity(2, 2),
                sensors: vec![],
            },
            stealthy: false,
        },
        StealthCase {
            name: "single actuator, full state output",
            model: plant(upper, e1.clone(), Matrix::identity(2, 2)),
            channels: AttackChannels {
                ba: e1,
                sensors: vec![],
            },
            stealthy: false,
        },
    ]
}
