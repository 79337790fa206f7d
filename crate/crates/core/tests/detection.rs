use flowtrace_core::attack::AttackPolicy;
use flowtrace_core::detection::{chi_squared_stat, DetectorSpec};
use flowtrace_core::engine::{
    plan_experiment, run_experiment, simulate_trial, trial_seed, ClosedLoop, ExperimentOptions, LoopConfig,
    SequentialExecutor,
};
use flowtrace_core::estimation::{design_lqg, steady_state_filter};
use flowtrace_core::infoflow::{kl_gaussian, replay_joint_gaussian, GaussianDist, ReplayGeometry};
use flowtrace_core::linalg::{from_rows, mean, Vector};
use flowtrace_core::model::{AttackChannels, AttackSpec, ScenarioConfig, SystemModel};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn scalar_plant() -> SystemModel {
    SystemModel {
        a: from_rows(&[&[0.9]]),
        b: from_rows(&[&[1.0]]),
        c: from_rows(&[&[1.0]]),
        q: from_rows(&[&[1.0]]),
        r: from_rows(&[&[1.0]]),
        x0_mean: Vector::zeros(1),
        x0_cov: from_rows(&[&[1.0]]),
    }
}

#[test]
fn chi_squared_mean_is_degrees_of_freedom() {
    let lp = ClosedLoop::new(LoopConfig::new(scalar_plant(), AttackChannels::none(1), 39)).unwrap();
    let mut stats = Vec::new();
    for trial in 0..10_000 {
        let rec = simulate_trial(&lp, &AttackPolicy::None, trial_seed(1, trial, 0)).unwrap();
        stats.extend(rec.z_seq.chunks(4).map(chi_squared_stat));
    }
    assert_eq!(stats.len(), 100_000);
    assert!((mean(&stats) - 4.0).abs() < 0.08);
}

#[test]
fn chi_squared_false_alarms_match_analytic_quantile() {
    let model = SystemModel::double_integrator();
    let lp = ClosedLoop::new(LoopConfig::new(model, AttackChannels::none(2), 24)).unwrap();
    let a = 0.05;
    let window = 5;
    let threshold = ChiSquared::new((2 * window) as f64).unwrap().inverse_cdf(1.0 - a);
    let trials = 20_000;
    let mut alarms = 0;
    for trial in 0..trials {
        let rec = simulate_trial(&lp, &AttackPolicy::None, trial_seed(2, trial, 0)).unwrap();
        if chi_squared_stat(&rec.z_seq[20..25]) >= threshold {
            alarms += 1;
        }
    }
    let rate = alarms as f64 / trials as f64;
    assert!((rate - a).abs() < 3.0 * (a / trials as f64).sqrt(), "{rate}");
}

#[test]
fn np_statistic_means_are_plus_and_minus_divergences() {
    let horizon = 15;
    let model = SystemModel::double_integrator();
    let channels = AttackChannels::sensors_only(2, vec![1, 2]);
    let config = ScenarioConfig {
        horizon,
        trials: 1,
        seed: 0,
        attack: AttackSpec::Replay { record_len: horizon + 1 },
        watermark_cov: None,
        detector: DetectorSpec::neyman_pearson(0.1),
    };
    let plan = plan_experiment(&config, &model, &channels, &ExperimentOptions::default()).unwrap();
    let ssf = steady_state_filter(&model).unwrap();
    let law = design_lqg(&model).unwrap();
    let geo = ReplayGeometry::new(&model, &ssf, &law, None).unwrap();
    let joint = replay_joint_gaussian(&geo, horizon).unwrap();
    let (mut forward, mut reverse) = (0.0, 0.0);
    for k in 0..=horizon {
        let d = GaussianDist::new(
            joint.mean.rows(2 * k, 2).into_owned(),
            joint.cov.view((2 * k, 2 * k), (2, 2)).into_owned(),
        );
        forward += kl_gaussian(&d, &GaussianDist::standard(2)).unwrap();
        reverse += kl_gaussian(&GaussianDist::standard(2), &d).unwrap();
    }
    for (attacked, expected) in [(true, forward), (false, -reverse)] {
        let llr: Vec<f64> = (0..3000)
            .map(|i| plan.score(trial_seed(5, i, attacked as u64), attacked).unwrap().stat[horizon])
            .collect();
        let m = mean(&llr);
        let sd = (llr.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (llr.len() - 1) as f64).sqrt();
        assert!((m - expected).abs() < 3.0 * sd / (llr.len() as f64).sqrt(), "{m} vs {expected}");
    }
}

#[test]
fn neyman_pearson_dominates_chi_squared_on_watermarked_replay() {
    let model = SystemModel::double_integrator();
    let channels = AttackChannels::sensors_only(2, vec![1, 2]);
    let trials = 1000;
    let run = |detector| {
        let config = ScenarioConfig {
            horizon: 100,
            trials,
            seed: 21,
            attack: AttackSpec::Replay { record_len: 101 },
            watermark_cov: None,
            detector,
        };
        let options = ExperimentOptions {
            delta_j_target: Some(0.4),
            ..Default::default()
        };
        run_experiment(&config, &model, &channels, &options, &SequentialExecutor).unwrap()
    };
    let np = run(DetectorSpec::neyman_pearson(0.05));
    let chi = run(DetectorSpec::chi_squared(10, 0.05));
    for (a, b) in np.roc.iter().zip(&chi.roc).skip(10) {
        let p = b.alpha;
        let slack = 3.0 * (2.0 * p * (1.0 - p) / trials as f64).sqrt() + 1.0 / trials as f64;
        assert!(a.alpha <= b.alpha + slack, "k={} np {} chi2 {}", a.k, a.alpha, b.alpha);
    }
}
