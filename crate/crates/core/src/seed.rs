//! Deterministic seed splitting: every random stream in the pipeline is a
//! pure function of one root seed and a path of stream indices.

/// Stream tags for the top-level consumers of a root seed.
pub mod stream {
    pub const THRESHOLDS: u64 = 0x7468_7265_7368;
    pub const BATCH: u64 = 0x62_6174_6368;
    pub const TRIAL: u64 = 0x74_7269_616c;
    pub const GP_RESTARTS: u64 = 0x6770_7273;
    pub const GA: u64 = 0x6761;
    pub const EVALUATE: u64 = 0x6576_616c;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed `index` of `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Child seed along a path of indices.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &i| derive_seed(s, i))
}
