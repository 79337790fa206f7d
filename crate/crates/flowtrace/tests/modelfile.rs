use std::path::PathBuf;

use flowtrace::modelfile::{load_model, load_model_file, save_model, ModelFile, ModelFileError};
use flowtrace_core::detection::DetectorSpec;
use flowtrace_core::linalg::{Matrix, Vector};
use flowtrace_core::model::{AttackChannels, AttackSpec, ScenarioConfig, SystemModel};

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/double_integrator.model")
}

fn vehicle() -> ModelFile {
    ModelFile {
        model: SystemModel::double_integrator(),
        channels: AttackChannels::sensors_only(2, vec![1, 2]),
        scenario: ScenarioConfig {
            horizon: 200,
            trials: 1000,
            seed: 1,
            attack: AttackSpec::Replay { record_len: 201 },
            watermark_cov: None,
            detector: DetectorSpec::neyman_pearson(0.05),
        },
    }
}

/// Regenerate with `FLOWTRACE_BLESS=1 cargo test -p flowtrace --test modelfile`.
#[test]
fn shipped_fixture_is_serializer_output() {
    let text = save_model(&vehicle());
    if std::env::var_os("FLOWTRACE_BLESS").is_some() {
        std::fs::write(fixture_path(), &text).unwrap();
    }
    assert_eq!(std::fs::read_to_string(fixture_path()).unwrap(), text);
}

#[test]
fn shipped_fixture_loads_as_vehicle() {
    let f = load_model_file(&fixture_path()).unwrap();
    assert_eq!((f.model.n(), f.model.p(), f.model.m()), (2, 1, 2));
    assert_eq!(f.model.a, Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
    assert_eq!(f.model.b, Matrix::from_row_slice(2, 1, &[0.005, 0.1]));
    assert_eq!(f.model.c, Matrix::identity(2, 2));
    assert_eq!(f.model.q, Matrix::identity(2, 2) * 0.1);
    assert_eq!(f.model.r, Matrix::identity(2, 2) * 0.1);
    assert_eq!(f.model.x0_mean, Vector::from_vec(vec![1.0, 0.0]));
    assert_eq!(f.model.x0_cov, Matrix::identity(2, 2));
    assert_eq!(f.channels.ba.shape(), (2, 0));
    assert_eq!(f.channels.sensors, vec![1, 2]);
    assert_eq!(f, vehicle());
}

#[test]
fn round_trip_is_bit_identical() {
    let mut f = vehicle();
    f.model.a[(0, 1)] = 0.1 + 1e-17 * 3.0;
    f.model.q = Matrix::from_row_slice(2, 2, &[1.0 / 3.0, 1e-300, 1e-300, 2.0f64.sqrt()]);
    f.channels = AttackChannels {
        ba: Matrix::from_row_slice(2, 1, &[std::f64::consts::PI, -0.0]),
        sensors: vec![2],
    };
    f.scenario.attack = AttackSpec::Fdi {
        ua: Vector::from_vec(vec![-1.25e-7]),
        da: Vector::from_vec(vec![0.1 + 0.2]),
    };
    f.scenario.watermark_cov = Some(Matrix::from_row_slice(1, 1, &[0.7]));
    f.scenario.detector = DetectorSpec::chi_squared(7, 0.1);
    let text = save_model(&f);
    let back = load_model(&text).unwrap();
    for (x, y) in f.model.q.iter().zip(back.model.q.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert_eq!(back, f);
    assert_eq!(save_model(&back), text);
}

#[test]
fn every_attack_kind_round_trips() {
    for attack in [
        AttackSpec::None,
        AttackSpec::ZeroDynamics { scale: 2.5 },
        AttackSpec::Replay { record_len: 300 },
    ] {
        let mut f = vehicle();
        f.scenario.attack = attack;
        assert_eq!(load_model(&save_model(&f)).unwrap(), f);
    }
}

#[test]
fn empty_document_is_a_parse_error() {
    assert!(matches!(load_model(""), Err(ModelFileError::Parse { .. })));
}

#[test]
fn unknown_key_is_rejected_with_path() {
    let text = save_model(&vehicle()).replacen("\"horizon\"", "\"horizn\": 3,\n    \"horizon\"", 1);
    match load_model(&text) {
        Err(ModelFileError::Parse { field, message, .. }) => {
            assert_eq!(field, "scenario.horizn");
            assert!(message.contains("horizn"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn wrong_shape_names_field() {
    let mut f = vehicle();
    f.model.a = Matrix::from_row_slice(2, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.0]);
    let text = save_model(&f);
    match load_model(&text) {
        Err(ModelFileError::Invalid(flowtrace_core::Error::DimensionMismatch { field, .. })) => {
            assert_eq!(field, "A")
        }
        other => panic!("expected dimension mismatch, got {other:?}"),
    }
}

#[test]
fn missing_file_names_path() {
    let err = load_model_file(std::path::Path::new("/nonexistent/x.model")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.model"));
}
