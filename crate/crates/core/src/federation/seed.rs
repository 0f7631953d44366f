//! Per-purpose seeds derived from one master seed.
//!
//! A draw's seed depends only on (master, vehicle, round, purpose), so the
//! velocities, selections and augmentations of two strategies run with the
//! same master seed are identical.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Partition,
    Selection,
    Velocity,
    Train,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x494e_4954,
            Purpose::Partition => 0x5041_5254,
            Purpose::Selection => 0x5345_4c45,
            Purpose::Velocity => 0x5645_4c4f,
            Purpose::Train => 0x5452_4149,
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, vehicle: u64, round: u64, purpose: Purpose) -> u64 {
    [vehicle, round, purpose.tag()]
        .into_iter()
        .fold(mix(master), |h, x| mix(mix(h) ^ x))
}
