//! Fixtures shared by the benchmarks.

use ambsec_core::channel::{draw_channel, synthesize_block, ChannelParams, ChannelRealization, FadingModel};
use ambsec_core::experiment::{fresh_model, generate_dataset, CsiMode, LinkPoint};
use ambsec_core::mlk::{build_covariances, CovPair, PerfectCsi};
use ambsec_core::{Dataset, MlpModel, Prng, ReceivedBlock};

pub const SEED: u64 = 7;

/// One channel draw at the nominal operating point and a block for each tag bit.
pub struct LinkFixture {
    pub params: ChannelParams,
    pub channel: ChannelRealization,
    pub cov: CovPair,
    pub blocks: [ReceivedBlock; 2],
}

pub fn link_fixture(antennas: usize, spreading: usize) -> LinkFixture {
    let mut rng = Prng::new(SEED, 0);
    let params = ChannelParams::new(10f64.powf(0.5), 0.1, antennas, spreading, FadingModel::Rayleigh).unwrap();
    let channel = draw_channel(&mut rng, &params);
    let cov = build_covariances(&PerfectCsi::from_channel(&channel, &params));
    let blocks = [0u8, 1].map(|e| synthesize_block(&mut rng, &channel, &params, e).unwrap());
    LinkFixture { params, channel, cov, blocks }
}

/// A freshly initialized detector and a labelled batch for it.
pub fn detector_fixture(antennas: usize, records: usize) -> (MlpModel, Dataset) {
    let point = LinkPoint { alpha_dt_db: 5.0, alpha_bt_db: -10.0, antennas, spreading: 50, fading: FadingModel::Rayleigh };
    let data = generate_dataset(&point, 40, 0.5, CsiMode::Pcsi, records, SEED, 0).unwrap().dataset;
    (fresh_model(antennas, SEED).unwrap(), data)
}
