//! Counter-based seed derivation: one global seed fans out into independent
//! streams for init, shuffling, synthesis and augmentation.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Synth = 3,
    Augment = 4,
    Gradcheck = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(global: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ stream as u64) ^ index)
}
