//! Watermarked replay on the double integrator: false-alarm decay of the
//! Neyman-Pearson detector against a windowed chi-squared detector.

use flowtrace_core::detection::DetectorSpec;
use flowtrace_core::engine::{run_experiment, ExperimentOptions, SequentialExecutor};
use flowtrace_core::model::{AttackChannels, AttackSpec, ScenarioConfig, SystemModel};

fn main() {
    let model = SystemModel::double_integrator();
    let channels = AttackChannels::sensors_only(2, vec![1, 2]);
    let horizon = 200;
    let options = ExperimentOptions {
        delta_j_target: Some(0.40),
        ..Default::default()
    };
    for detector in [DetectorSpec::neyman_pearson(0.05), DetectorSpec::chi_squared(10, 0.05)] {
        let config = ScenarioConfig {
            horizon,
            trials: 1000,
            seed: 1,
            attack: AttackSpec::Replay { record_len: horizon + 1 },
            watermark_cov: None,
            detector: detector.clone(),
        };
        let s = run_experiment(&config, &model, &channels, &options, &SequentialExecutor).expect("experiment");
        println!(
            "{:>15}: eps = {:.5}, decay rate = {}",
            detector.kind.name(),
            s.epsilon.unwrap_or(0.0),
            s.decay_rate.map_or("n/a".to_string(), |r| format!("{r:.5}"))
        );
        let alphas: Vec<String> = s.roc.iter().step_by(20).map(|r| format!("{:.3}", r.alpha)).collect();
        println!("{:>15}  alpha every 20 steps: {}", "", alphas.join(" "));
    }
}
