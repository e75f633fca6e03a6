//! Shared fixtures for the criterion benches.

use liquidsim_core::erasure::{Backend, Codec, CodecParams, ObjectData};
use liquidsim_core::sim::{RepairerKind, Scenario, Timing};
use liquidsim_core::SeededRng;

pub fn byte_codec(n: u32, k: u32, flen_bytes: u64) -> Codec {
    Codec::new(CodecParams::new(n, k, flen_bytes * 8).expect("valid code"), Backend::Byte).expect("byte codec")
}

pub fn random_object(codec: &Codec, seed: u64) -> ObjectData {
    let mut bytes = vec![0u8; codec.flen_bytes() * codec.params().k as usize];
    SeededRng::new(seed, 0).fill_bytes(&mut bytes);
    ObjectData { object: 0, content: Some(bytes.into()) }
}

/// Poisson liquid at N = 100, beta = 0.2, lambda N = 1.
pub fn liquid_poisson_scenario(failures: u64) -> Scenario {
    let mut sc = Scenario::new(100, 180_000, 0.2, RepairerKind::Liquid, Timing::Poisson);
    sc.backend = Backend::Symbolic;
    sc.eps.eps = 0.2;
    sc.failures = failures;
    sc
}
