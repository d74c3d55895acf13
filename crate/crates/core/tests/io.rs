use ckn::io::{load_checkpoint, load_cifar10, load_cifar10_file, save_checkpoint, Checkpoint, Head, Split};
use ckn::layer::{LayerConfig, NetworkConfig};
use ckn::optim::{EpochRecord, LinearModel};
use ckn::tasks::classify::ClassifierHead;
use ckn::tasks::synth::grating_dataset;
use ckn::{CknError, Network, Network32};
use ndarray::Array2;

fn classifier_checkpoint() -> Checkpoint<f64> {
    let cfg = NetworkConfig {
        input_channels: 1,
        layers: vec![LayerConfig::new(3, 5, 2.0), LayerConfig::new(3, 4, 1.5)],
    };
    let net = Network::random(&cfg, 11).unwrap();
    let dim = net.output_channels() * {
        let (h, w) = net.output_grid(12, 12);
        h * w
    };
    let w = Array2::from_shape_fn((3, dim), |(i, j)| ((i * 7 + j) % 11) as f64 / 11.0 - 0.5);
    let mut ck = Checkpoint::new(net);
    ck.head = Head::Classifier {
        classes: 3,
        model: LinearModel::new(w, 0.01).unwrap(),
    };
    ck.history.push(EpochRecord {
        epoch: 0,
        objective: 0.25,
        eta: 10.0,
        accepted: true,
        active: 12,
    });
    ck.seed = 9;
    ck
}

#[test]
fn evaluation_after_reload_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let ck = classifier_checkpoint();
    save_checkpoint(&path, &ck).unwrap();
    let back: Checkpoint<f64> = load_checkpoint(&path).unwrap();
    let (Head::Classifier { model: m0, .. }, Head::Classifier { model: m1, classes }) = (&ck.head, &back.head) else {
        panic!("head kind changed");
    };
    let before = ClassifierHead::new(ck.net.clone(), m0.clone(), 3).unwrap();
    let after = ClassifierHead::new(back.net.clone(), m1.clone(), *classes as usize).unwrap();
    let (images, _) = grating_dataset(5, 3, 1, 12, 2);
    for img in &images {
        let a = before.scores(img).unwrap();
        let b = after.scores(img).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert_eq!(diff, 0.0);
    }
    for (l0, l1) in ck.net.layers().iter().zip(back.net.layers()) {
        assert!(l0.filters().iter().zip(l1.filters().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn f64_checkpoint_loads_as_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &classifier_checkpoint()).unwrap();
    let ck: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    let net: Network32 = ck.net;
    assert_eq!(net.depth(), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_checkpoint::<f64>(std::path::Path::new("/nonexistent/x.ckpt")).unwrap_err();
    assert!(matches!(err, CknError::Io { .. }));
}

fn record(label: u8, seed: u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072u32).map(|i| (i as u8).wrapping_mul(seed)));
    r
}

#[test]
fn cifar_fixture_of_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = record(4, 3);
    bytes.extend(record(9, 5));
    assert_eq!(bytes.len(), 2 * 3073);
    std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
    let (images, labels) = load_cifar10(dir.path(), Split::Test, None).unwrap();
    assert_eq!(labels, vec![4, 9]);
    assert_eq!(images.len(), 2);
    // pixel (c, y, x) is byte 1 + c*1024 + y*32 + x of its record
    let i = 1024 + 5 * 32 + 7;
    assert_eq!(images[1].get(1, 5, 7), ((i as u32) as u8).wrapping_mul(5) as f64 / 255.0);
    // training batches are absent
    assert!(matches!(load_cifar10(dir.path(), Split::Train, None), Err(CknError::Io { .. })));
    let (one, _) = load_cifar10_file(&dir.path().join("test_batch.bin"), Some(1)).unwrap();
    assert_eq!(one.len(), 1);
}
