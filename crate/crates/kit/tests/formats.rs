use std::path::Path;

use bilbo_core::data::{encode_idx_images, encode_idx_labels, IdxImages, SyntheticSpec};
use bilbo_core::model::{Architecture, MetricsRow, MlpVae, ModelSpec, TrainConfig};
use bilbo_core::{LikelihoodSpec, ObjectiveMode, ObjectiveSpec, Rng};
use bilbo_kit::checkpoint;
use bilbo_kit::formats::{
    read_csv, read_metrics, write_csv, write_metrics, ScatterRow, SweepRow, METRICS_HEADER, SCATTER_HEADER, SWEEP_HEADER,
};
use bilbo_kit::io::{load_idx, read_f64_le, write_f64_le};
use bilbo_kit::manifest::{CommandConfig, DataSource, RunConfig, RunManifest};
use bilbo_kit::KitError;

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn model(encoder_var_head: bool) -> MlpVae {
    let obj = if encoder_var_head {
        ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_learned())
    } else {
        ObjectiveSpec::new(ObjectiveMode::Bilbo, vec![0.5; 3], LikelihoodSpec::bernoulli())
    };
    let mut arch = Architecture::mlp(3);
    arch.hidden = 7;
    arch.hidden_layers = 2;
    arch.latent_scale = 0.25;
    let spec = ModelSpec::for_objective(5, arch, &obj);
    let mut m = MlpVae::init(spec, &mut Rng::new(4)).unwrap();
    if !encoder_var_head {
        m.set_sigma_const(vec![0.5; 3]).unwrap();
    }
    m.set_prior_var(vec![1.5, 2.5, 3.5]).unwrap();
    m
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    for learned in [false, true] {
        let m = model(learned);
        let bytes = checkpoint::to_bytes(&m);
        assert_eq!(&bytes[..4], b"BVAE");
        let back = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.sigma_const(), m.sigma_const());
        assert_eq!(back.prior_var(), m.prior_var());
        let a: Vec<u64> = m.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(checkpoint::to_bytes(&back), bytes);
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let bytes = checkpoint::to_bytes(&model(false));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(checkpoint::from_bytes(&flipped).unwrap_err().contains("checksum"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(checkpoint::from_bytes(&magic).unwrap_err().contains("magic"));
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn checkpoint_file_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bvae");
    std::fs::write(&path, b"BVAE\x01\0\0\0garbage").unwrap();
    let err = checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, KitError::Format { .. }));
    assert!(err.to_string().contains("bad.bvae"));
}

#[test]
fn metrics_csv_header_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let rows = vec![
        MetricsRow {
            step: 0,
            objective: -1.25,
            kl_term: 0.1,
            loglik_term: -1.15,
            tr_s2: 3.0,
            baggins_t_median: f64::NAN,
        },
        MetricsRow {
            step: 1,
            objective: 1e-300,
            kl_term: 0.1 + 0.2,
            loglik_term: -7.0,
            tr_s2: 2.5,
            baggins_t_median: 0.04,
        },
    ];
    write_metrics(&path, &rows).unwrap();
    assert_eq!(first_line(&path), METRICS_HEADER);
    assert_eq!(METRICS_HEADER, "step,objective,kl_term,loglik_term,trS2,baggins_t_median");
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert!(back[0].baggins_t_median.is_nan());
    assert_eq!(back[1], rows[1]);
}

#[test]
fn empty_metrics_still_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics(&path, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), METRICS_HEADER);
}

#[test]
fn scatter_and_sweep_headers_match_fields() {
    let dir = tempfile::tempdir().unwrap();
    let scatter = dir.path().join("scatter.csv");
    let row = ScatterRow {
        mu_1: 0.5,
        mu_2: -1.0,
        sigma2_1: 0.1,
        sigma2_2: 0.2,
        label: None,
    };
    write_csv(&scatter, SCATTER_HEADER, &[row.clone()]).unwrap();
    assert_eq!(first_line(&scatter), "mu_1,mu_2,sigma2_1,sigma2_2,label");
    assert_eq!(read_csv::<ScatterRow>(&scatter).unwrap(), vec![row]);

    let sweep = dir.path().join("sweep.csv");
    let row = SweepRow {
        axis: "tau".into(),
        value: 0.2,
        seed: 3,
        final_objective: -10.0,
        eval_bound: -11.0,
        recon_rmse: 0.3,
        normalized_recon_error: 0.3,
        baggins_t_median: 0.01,
        clip_events: 2,
    };
    write_csv(&sweep, SWEEP_HEADER, &[row.clone()]).unwrap();
    assert_eq!(first_line(&sweep), SWEEP_HEADER);
    assert_eq!(read_csv::<SweepRow>(&sweep).unwrap(), vec![row]);
}

fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let images = IdxImages {
        count: 2,
        rows: 2,
        cols: 2,
        pixels: vec![0, 51, 102, 255, 255, 0, 17, 34],
    };
    let img = dir.join("img.idx");
    let lab = dir.join("lab.idx");
    std::fs::write(&img, encode_idx_images(&images)).unwrap();
    std::fs::write(&lab, encode_idx_labels(&[3, 9])).unwrap();
    (img, lab)
}

#[test]
fn idx_fixture_loads_exact_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = write_fixture(dir.path());
    let raw = std::fs::read(&img).unwrap();
    assert_eq!(&raw[..4], &[0, 0, 8, 3]);
    let ds = load_idx(&img, Some(&lab), None, 1.0).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.xs().row(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
    assert_eq!(ds.xs().row(1), &[1.0, 0.0, 17.0 / 255.0, 34.0 / 255.0]);
    assert_eq!(ds.labels(), Some(&[3u32, 9][..]));

    let doubled = load_idx(&img, Some(&lab), None, 2.0).unwrap();
    for (a, b) in doubled.xs().data().iter().zip(ds.xs().data()) {
        assert_eq!(*a, 2.0 * b);
    }
    assert_eq!(load_idx(&img, None, Some(1), 1.0).unwrap().len(), 1);
}

#[test]
fn idx_errors_carry_offset_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = write_fixture(dir.path());
    let mut bytes = std::fs::read(&img).unwrap();
    bytes[3] = 0x02;
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, &bytes).unwrap();
    let err = load_idx(&bad, None, None, 1.0).unwrap_err();
    match &err {
        KitError::Data { source, .. } => assert!(matches!(source, bilbo_core::Error::Parse { offset: 0, .. })),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("bad.idx"));

    let short_labels = dir.path().join("short.idx");
    std::fs::write(&short_labels, encode_idx_labels(&[1])).unwrap();
    let err = load_idx(&img, Some(&short_labels), None, 1.0).unwrap_err();
    assert!(err.to_string().contains("short.idx"), "{err}");
    assert!(load_idx(&dir.path().join("missing"), Some(&lab), None, 1.0).is_err());
}

#[test]
fn raw_f64_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.f64");
    let vals = [0.0, -1.5, f64::MAX, 1e-310];
    write_f64_le(&path, &vals).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 32);
    assert_eq!(read_f64_le(&path).unwrap(), vals);
}

#[test]
fn manifest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let obj = ObjectiveSpec::new(ObjectiveMode::BilboBaggins, vec![1.0; 2], LikelihoodSpec::baggins(0.2));
    let config = RunConfig {
        data: DataSource::Synthetic {
            spec: SyntheticSpec::ring(10, 100, 7),
        },
        lambda: 10.0,
        train: TrainConfig::new(obj, Architecture::mlp(2)),
    };
    let m = RunManifest::new(CommandConfig::Train(config), dir.path(), 5, vec!["metrics.csv".into()]);
    m.write(dir.path()).unwrap();
    let back = RunManifest::read(dir.path()).unwrap();
    assert_eq!(back, m);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "train");
    assert_eq!(json["config"]["train"]["learning_rate"], 0.001);
    assert_eq!(json["config"]["train"]["batch_size"], 300);
    assert!(json["tool_version"].as_str().unwrap().starts_with('v'));
}
