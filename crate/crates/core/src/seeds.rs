//! Seed derivation for independent random streams.

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for `(stream, index)` from `base`.
pub(crate) fn derive(base: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(base ^ mix64(stream)).wrapping_add(index))
}

pub(crate) mod stream {
    pub const ACQUISITION: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const WORKERS: u64 = 3;
    pub const FEW_SHOT_TRAIN: u64 = 4;
    pub const FEW_SHOT_DEV: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const SAMPLING: u64 = 7;
}
