//! Shared fixtures for the benchmarks.

use fdpc::lab::{self, McSettings};
use fdpc::{ChannelSpec, CsitModel, FadingModel, SampleBank};

/// A preset at `snr_db` with a single no-CSIT cell of `n_inner` draws.
pub fn fixture(preset: &str, snr_db: f64, n_inner: usize) -> (ChannelSpec, FadingModel, SampleBank) {
    let cfg = lab::preset(preset).expect("preset loads");
    let spec = cfg.template().expect("template").at_snr_db(snr_db).expect("spec");
    let fading = cfg.fading_model().expect("fading");
    let mc = McSettings { n_outer: 1, n_inner };
    let bank = lab::bank_for(spec.dims(), &CsitModel::NoCsit, &fading, mc, 7).expect("bank");
    (spec, fading, bank)
}
