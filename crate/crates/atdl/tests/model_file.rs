use atdl::model_file::{decode, encode, load, save, ModelFile};
use atdl_core::atdl::{relations_from_outputs, DistanceForm, RelationOptions, TargetModel};
use atdl_core::baselines::{pca_logistic, BaselineKind, Classifier};
use atdl_core::network::{Activation, LayerSpec, Network, TrainConfig};
use atdl_core::sda::SourceModel;
use atdl_core::{Matrix, Rng};
use proptest::prelude::*;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class {i}")).collect()
}

fn source(seed: u64, dims: &[usize]) -> SourceModel {
    let mut rng = Rng::new(seed);
    let mut specs: Vec<LayerSpec> = dims.windows(2).map(|w| LayerSpec::new(w[0], w[1], Activation::Sigmoid)).collect();
    specs.last_mut().unwrap().activation = Activation::Linear;
    let net = Network::new(&specs, &mut rng).unwrap();
    SourceModel::new(net, names(*dims.last().unwrap()), format!("synthetic seed={seed}")).unwrap()
}

fn inputs(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
    let x = Matrix::from_fn(rows, cols, |i, _| {
        (0.3 + 0.4 * labels[i] as f64 + 0.2 * rng.uniform(-1.0, 1.0)).clamp(0.0, 1.0)
    });
    (x, labels)
}

fn target(seed: u64) -> TargetModel {
    let src = source(seed, &[5, 4, 3]);
    let (x, labels) = inputs(12, 5, seed);
    let rel = relations_from_outputs(&src.net.predict(&x).unwrap(), &labels, 2, &RelationOptions::default()).unwrap();
    TargetModel::new(
        src.net,
        rel,
        DistanceForm::Literal,
        vec!["neg".into(), "pos".into()],
        src.provenance,
    )
    .unwrap()
}

fn pca_baseline() -> ModelFile {
    let (x, labels) = inputs(20, 6, 3);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (classifier, _) = pca_logistic(&x, &labels, 2, 0.9, &cfg).unwrap();
    ModelFile::Baseline {
        classifier,
        label_names: names(2),
    }
}

fn oquab_baseline() -> ModelFile {
    let mut rng = Rng::new(9);
    let net = Network::new(
        &[
            LayerSpec::new(4, 3, Activation::Sigmoid),
            LayerSpec::new(3, 7, Activation::Sigmoid),
            LayerSpec::new(7, 2, Activation::Softmax),
        ],
        &mut rng,
    )
    .unwrap();
    ModelFile::Baseline {
        classifier: Classifier::new(BaselineKind::Oquab { adapt_dim: 7 }, net, None).unwrap(),
        label_names: names(2),
    }
}

#[test]
fn every_kind_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (i, m) in [
        ModelFile::Source(source(1, &[6, 5, 4, 3])),
        ModelFile::Target(target(2)),
        pca_baseline(),
        oquab_baseline(),
    ]
    .into_iter()
    .enumerate()
    {
        let p = dir.path().join(format!("m{i}.atdlnn"));
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, m, "model {i}");
        let p2 = dir.path().join(format!("m{i}b.atdlnn"));
        save(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}

#[test]
fn header_fields() {
    let bytes = encode(&ModelFile::Target(target(4)));
    assert_eq!(&bytes[..8], b"ATDLNN01");
    let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    assert_eq!(u(8), 1, "version");
    assert_eq!(u(12), 2, "target kind");
    assert_eq!(u(32), 2, "layer count");
    assert_eq!((u(36), u(40)), (5, 4));
    assert_eq!((u(48), u(52)), (4, 3));
}

#[test]
fn damage_is_detected() {
    let bytes = encode(&ModelFile::Source(source(5, &[3, 2, 2])));
    let mut flipped = bytes.clone();
    flipped[60] ^= 0x10;
    assert!(decode(&flipped).unwrap_err().contains("checksum"));

    let reseal = |mut b: Vec<u8>| {
        let n = b.len();
        let sum = b[..n - 8].iter().fold(0u64, |a, &x| a.wrapping_add(x as u64));
        b[n - 8..].copy_from_slice(&sum.to_le_bytes());
        b
    };
    let mut kind = bytes.clone();
    kind[12] = 9;
    assert!(decode(&reseal(kind)).unwrap_err().contains("kind"));

    let mut act = bytes.clone();
    act[44] = 77;
    assert!(decode(&reseal(act)).unwrap_err().contains("activation"));

    let mut longer = bytes[..bytes.len() - 8].to_vec();
    longer.push(0);
    longer.extend_from_slice(&[0; 8]);
    assert!(decode(&reseal(longer)).unwrap_err().contains("trailing"));

    assert!(decode(&bytes[..30]).is_err());
    assert!(decode(b"ATDLDS01aaaaaaaaaaaaaaaa").unwrap_err().contains("magic"));
}

#[test]
fn loading_a_missing_file_is_an_io_error() {
    let err = load(std::path::Path::new("/nonexistent/m.atdlnn")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_load_save_is_byte_identical(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 1..4), outputs in 1usize..5, scale in -1e3f64..1e3) {
        let mut dims = vec![3];
        dims.extend(&hidden);
        dims.push(outputs);
        let mut m = source(seed, &dims);
        let (w, _) = m.net.layer_mut(0).params_mut();
        w[0] *= scale;
        let model = ModelFile::Source(m);
        let bytes = encode(&model);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(encode(&back), bytes);
    }
}
