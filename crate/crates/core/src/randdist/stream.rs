use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Address of an independent random stream.
///
/// The generator is ChaCha8 keyed by `master_seed` (expanded to 256 bits by
/// `SeedableRng::seed_from_u64`), with `stream_id` as the 64-bit ChaCha
/// stream (nonce) and a 128-bit block counter. Any `(master_seed, stream_id,
/// counter)` triple names a fixed position in a fixed sequence, so draws do
/// not depend on thread count or on what other streams are doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        self.rng_at(0)
    }

    /// Generator positioned at `word_pos` 32-bit words into the stream.
    pub fn rng_at(&self, word_pos: u128) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(word_pos);
        rng
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one stream identifier.
pub fn derive_stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// FNV-1a over bytes; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
