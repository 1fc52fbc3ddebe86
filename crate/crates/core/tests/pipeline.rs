//! Cross-module checks through the public API only.

use ambsec_core::channel::{draw_channel, synthesize_frame, ChannelParams, FadingModel};
use ambsec_core::experiment::{
    count_bit_errors, generate_dataset, with_workers, CsiMode, Detector, DlModels, FrameLayout, LinkPoint,
};
use ambsec_core::features::{featurize_frame, read_dataset, write_dataset, CsiSource};
use ambsec_core::mlk::PerfectCsi;
use ambsec_core::nn::{init_model, train, TrainConfig};
use ambsec_core::{Dataset, MlpModel, Prng};

fn small_point() -> LinkPoint {
    LinkPoint { alpha_dt_db: 5.0, alpha_bt_db: -5.0, antennas: 2, spreading: 20, fading: FadingModel::Rayleigh }
}

#[test]
fn featurized_frame_survives_dataset_file() {
    let mut rng = Prng::new(3, 0);
    let params = ChannelParams::new(3.0, 0.3, 2, 20, FadingModel::Rician { k_factor: 2.0 }).unwrap();
    let chan = draw_channel(&mut rng, &params);
    let bits: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
    let blocks = synthesize_frame(&mut rng, &chan, &params, &bits).unwrap();
    let csi = PerfectCsi::from_channel(&chan, &params);

    let mut data = Dataset::new(24);
    for source in [CsiSource::Estimated, CsiSource::Perfect(&csi)] {
        let feats = featurize_frame(&blocks, 10, source).unwrap();
        assert_eq!(feats.len(), 20);
        for (f, &b) in feats.iter().zip(&bits[10..]) {
            data.push(f.values(), b).unwrap();
        }
    }
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &data).unwrap();
    assert_eq!(bytes.len(), data.len() * (7 + 48 * 4));
    assert_eq!(read_dataset(bytes.as_slice()).unwrap(), data);
}

#[test]
fn trained_model_survives_file_and_keeps_predictions() {
    let data = generate_dataset(&small_point(), 10, 0.5, CsiMode::Pcsi, 200, 5, 0).unwrap().dataset;
    let mut model = init_model(&mut Prng::new(5, 1), &[24, 16, 2]).unwrap();
    let cfg = TrainConfig { learning_rate: 0.05, batch_size: 50, epochs: 5, seed: 5 };
    train(&mut model, &data, &cfg).unwrap();

    let mut bytes = Vec::new();
    model.write_to(&mut bytes).unwrap();
    let back = MlpModel::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.predict_batch(data.features()).unwrap(), model.predict_batch(data.features()).unwrap());
}

#[test]
fn error_counts_ignore_worker_count() {
    let layout = FrameLayout { frame_bits: 40, pilots: 10 };
    let run = |workers| {
        with_workers(Some(workers), || {
            count_bit_errors(&small_point(), layout, 0.5, &[Detector::Mlk, Detector::Energy], DlModels::default(), 60, 9, 0)
                .unwrap()
        })
        .unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert!(one[0] < one[1], "MLK should beat energy detection: {one:?}");
}
