use ghostlite::checkpoint::{Checkpoint, TensorKind, FORMAT_VERSION, MAGIC};
use ghostlite::data::{Lesion, NormStats};
use ghostlite::model::{build_model, ModelSpec};
use ghostlite::train::{EpochRecord, History, Monitor, TrainConfig};
use ghostlite::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn sample() -> Checkpoint {
    let mut model = build_model::<f32>(&ModelSpec::desk()).unwrap();
    // non-trivial values everywhere, including the zero-initialized gammas and the buffers
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.store.params_mut() {
        p.value = Tensor::uniform(p.value.shape().to_vec(), -2.0, 2.0, &mut rng);
    }
    let names: Vec<String> = model.store.buffers().iter().map(|b| b.name.clone()).collect();
    for name in names {
        let shape = model.store.buffer_by_name(&name).unwrap().value.shape().to_vec();
        model.store.set_named(&name, Tensor::uniform(shape, 0.1, 3.0, &mut rng)).unwrap();
    }
    let history = History {
        monitor: Monitor::ValMacroF1,
        epochs: vec![EpochRecord {
            epoch: 1,
            lr: 0.1,
            batches: 3,
            train_loss: 1.5,
            train_accuracy: 0.25,
            val_loss: 1.75,
            val_accuracy: 0.3,
            val_macro_f1: 0.1,
            monitor: 0.1,
            improved: true,
        }],
        best_epoch: 1,
        best_monitor: 0.1,
        train_size: 10,
        val_size: 2,
        class_weights: vec![1.0 / 3.0; 7],
        ..History::default()
    };
    let norm = NormStats { mean: [0.1, 0.2, 0.3], std: [0.9, 0.8, 0.7] };
    Checkpoint::from_model(&model, Lesion::names(), norm, history, Some(TrainConfig::default()), "ab".repeat(32))
}

#[test]
fn round_trip_is_bitwise() {
    let ckpt = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.glnw");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.tensors.len(), ckpt.tensors.len());
    for (a, b) in ckpt.tensors.iter().zip(&back.tensors) {
        assert_eq!((&a.name, a.kind, a.tensor.shape()), (&b.name, b.kind, b.tensor.shape()));
        assert_eq!(bits(&a.tensor), bits(&b.tensor), "{}", a.name);
    }
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn fresh_desk_model_round_trips_and_predicts_identically() {
    let model = build_model::<f32>(&ModelSpec::desk()).unwrap();
    let ckpt = Checkpoint::from_model(&model, Lesion::names(), NormStats::identity(), History::default(), None, String::new());
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let rebuilt = back.to_model().unwrap();
    assert_eq!(rebuilt.store, model.store);
    let x = Tensor::uniform([2, 3, 64, 64], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(bits(&rebuilt.predict(&x).unwrap()), bits(&model.predict(&x).unwrap()));
}

#[test]
fn buffers_are_stored_as_buffers() {
    let ckpt = sample();
    let model = build_model::<f32>(&ModelSpec::desk()).unwrap();
    let buffers = ckpt.tensors.iter().filter(|t| t.kind == TensorKind::Buffer).count();
    assert_eq!(buffers, model.store.buffers().len());
    assert!(buffers > 0);
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let bytes = sample().to_bytes().unwrap();
    let manifest_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    // every header and manifest byte, then a stride through the tensor data
    let positions = (0..13 + manifest_len).chain((13 + manifest_len..bytes.len()).step_by(97));
    for i in positions {
        let mut bad = bytes.clone();
        bad[i] ^= 0x01;
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flipped byte {i} was accepted");
    }
}

#[test]
fn manifest_corruption_names_the_checksum() {
    let mut bytes = sample().to_bytes().unwrap();
    bytes[20] = b'#';
    match Checkpoint::from_bytes(&bytes) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum"), "{msg}"),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
}

#[test]
fn version_bump_is_unsupported() {
    let mut bytes = sample().to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    bytes[4] = FORMAT_VERSION + 1;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::UnsupportedVersion(v)) if v == FORMAT_VERSION + 1));
    assert!(Error::UnsupportedVersion(2).to_string().contains("unsupported"));
}

#[test]
fn bad_magic_and_truncation_are_rejected() {
    let bytes = sample().to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
    for cut in [0, 3, 12, 13, 200, bytes.len() - 4, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0, 0, 0, 0]);
    assert!(Checkpoint::from_bytes(&longer).is_err());
}

#[test]
fn tensor_set_must_match_the_model() {
    let mut ckpt = sample();
    ckpt.tensors.pop();
    let reloaded = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert!(matches!(reloaded.to_model(), Err(Error::Checkpoint(m)) if m.contains("tensors")));

    let mut ckpt = sample();
    ckpt.tensors[0].name = "stem.w.renamed".into();
    assert!(ckpt.to_model().is_err());

    let mut ckpt = sample();
    let t = &mut ckpt.tensors[0];
    t.tensor = Tensor::zeros([t.tensor.numel() + 1]);
    assert!(ckpt.to_model().is_err());

    let mut ckpt = sample();
    let last = ckpt.tensors.len() - 1;
    ckpt.tensors[last].kind = TensorKind::Param;
    assert!(ckpt.to_model().is_err());
}

#[test]
fn repeated_save_leaves_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.glnw");
    let ckpt = sample();
    ckpt.save(&path).unwrap();
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    assert!(Checkpoint::load(dir.path().join("absent.glnw")).is_err());
}
