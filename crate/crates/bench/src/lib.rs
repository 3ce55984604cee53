//! Shared fixtures for the benchmarks: simulated data sets and systems
//! built once per process.

use gencut_core::models::gauss_chain::{
    gauss_chain_simulate, gauss_chain_system, GaussChainSettings,
};
use gencut_core::models::hpv::{hpv_simulate, hpv_system, HpvLoss, HpvTruth};
use gencut_core::models::re::{re_simulate, re_system, ReLoss, ReTruth};
use gencut_core::TwoModuleSystem;

/// The dose-response benchmark at its usual size (13 countries).
pub fn hpv_fixture() -> TwoModuleSystem {
    let data = hpv_simulate(13, &HpvTruth::default(), 11).expect("simulation");
    hpv_system(&data, HpvLoss::Poisson, 1.0, 1.0).expect("system")
}

/// The grouped random-effects benchmark (100 groups of 10).
pub fn re_fixture() -> TwoModuleSystem {
    let data = re_simulate(100, 10, &ReTruth::default(), 0).expect("simulation");
    re_system(&data, ReLoss::Gaussian, 1.0, 1.0).expect("system")
}

/// The conjugate Gaussian chain, moderate size.
pub fn gauss_chain_fixture() -> TwoModuleSystem {
    let settings = GaussChainSettings { d_eta: 2, ..GaussChainSettings::default() };
    let (z, w) = gauss_chain_simulate(2000, 400, 0.2, &[0.4, -0.3], &settings, 21)
        .expect("simulation");
    gauss_chain_system(z, w, &settings, 1.0, 1.0).expect("system")
}
