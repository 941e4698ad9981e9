//! Deterministic derivation of independent sub-seeds from a master seed.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `tag`, item `index` of `master`.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ tag.wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub mod tag {
    pub const COLLECT: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const INIT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const DAGGER: u64 = 5;
    pub const SUBSET: u64 = 6;
    pub const TEMPLATES: u64 = 7;
    pub const DROPOUT: u64 = 8;
    pub const PROBE: u64 = 9;
}
