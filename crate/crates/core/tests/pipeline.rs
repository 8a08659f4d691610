use std::fs::File;

use lognet::chaos::MapParams;
use lognet::dataio::{self, LabeledDataset, Provenance};
use lognet::network::{self, Architecture, NetworkModel, TrainConfig};
use lognet::reservoir::{FillMethod, ReservoirConfig, PIXELS};

/// Each class is a bright horizontal band at its own row range.
fn bands(count: usize, salt: usize) -> LabeledDataset {
    let mut images = vec![0u8; count * PIXELS];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 10;
        let img = &mut images[i * PIXELS..(i + 1) * PIXELS];
        for r in 2 + 2 * label..4 + 2 * label {
            for c in 4..24 {
                img[r * 28 + c] = 200 + ((i + salt + c) % 50) as u8;
            }
        }
        labels.push(label as u8);
    }
    LabeledDataset::new(images, labels, Provenance::Custom).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn idx_round_trip_then_train_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let train = bands(300, 0);
    let test = bands(100, 7);
    for (set, img, lab) in [
        (&train, dataio::TRAIN_IMAGES, dataio::TRAIN_LABELS),
        (&test, dataio::TEST_IMAGES, dataio::TEST_LABELS),
    ] {
        dataio::write_idx_images(set, File::create(dir.path().join(img)).unwrap()).unwrap();
        dataio::write_idx_labels(set, File::create(dir.path().join(lab)).unwrap()).unwrap();
    }
    let (train, test) = dataio::load_mnist_dir(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (300, 100));

    for arch in [Architecture::single(25), Architecture::with_hidden(25, 12)] {
        let rc = ReservoirConfig::new(
            FillMethod::Method4,
            MapParams::reference(0.7),
            arch.reservoir,
        );
        let model = network::train(&train, &arch, &rc, &quick(150)).unwrap();
        let acc = network::evaluate(&model, &test).unwrap();
        assert!(acc > 0.5, "{arch}: {acc}");

        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = NetworkModel::load(&path).unwrap();
        assert_eq!(network::evaluate(&loaded, &test).unwrap(), acc);
        assert_eq!(
            network::confusion(&loaded, &test).unwrap().counts,
            network::confusion(&model, &test).unwrap().counts
        );
    }
}

#[test]
fn same_seed_same_model() {
    let data = bands(200, 3);
    let arch = Architecture::single(10);
    let rc = ReservoirConfig::new(FillMethod::Method6, MapParams::reference(0.5), 10);
    let a = network::train(&data, &arch, &rc, &quick(3)).unwrap();
    let b = network::train(&data, &arch, &rc, &quick(3)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}
