//! XORSHIFT key streams and key-sort permutations.
//!
//! Coordinates are visited in the order obtained by drawing one 32-bit key
//! per coordinate and sorting indices by key (ties broken by index). Keys
//! are produced in fixed-size blocks, each block seeded independently, so a
//! key array is identical no matter how many threads generate it.

/// Number of keys generated from one block seed.
pub const KEY_BLOCK: usize = 4096;

/// 64-bit xorshift generator with the (13, 7, 17) shift triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64 {
    state: u64,
}

impl XorShift64 {
    /// A zero seed would lock the generator at zero; it is remapped.
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        Self { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x
    }

    /// Low 32 bits of the next output.
    #[inline]
    pub fn next_key(&mut self) -> u32 {
        self.next_u64() as u32
    }
}

/// splitmix64 finalizer; used to derive independent seeds.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed from a base seed and a sequence of stream identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

fn fill_block(seed: u64, block: usize, out: &mut [u32]) {
    let mut gen = XorShift64::new(derive_seed(seed, &[block as u64]));
    for k in out.iter_mut() {
        *k = gen.next_key();
    }
}

/// Generates `n` 32-bit keys for `seed` using up to `threads` threads.
///
/// The output depends only on `(seed, n)`.
pub fn generate_keys(seed: u64, n: usize, threads: usize) -> Vec<u32> {
    let mut keys = vec![0u32; n];
    let threads = threads.max(1);
    let n_blocks = n.div_ceil(KEY_BLOCK);
    if threads == 1 || n_blocks <= 1 {
        for (b, chunk) in keys.chunks_mut(KEY_BLOCK).enumerate() {
            fill_block(seed, b, chunk);
        }
        return keys;
    }
    let blocks: Vec<(usize, &mut [u32])> = keys.chunks_mut(KEY_BLOCK).enumerate().collect();
    let per_thread = n_blocks.div_ceil(threads);
    let mut groups: Vec<Vec<(usize, &mut [u32])>> = Vec::new();
    let mut iter = blocks.into_iter().peekable();
    while iter.peek().is_some() {
        groups.push(iter.by_ref().take(per_thread).collect());
    }
    std::thread::scope(|s| {
        for group in groups {
            s.spawn(move || {
                for (b, chunk) in group {
                    fill_block(seed, b, chunk);
                }
            });
        }
    });
    keys
}

/// Sorts indices `0..keys.len()` by `(key, index)`.
pub fn permutation_from_keys(keys: &[u32]) -> Vec<usize> {
    let mut tagged: Vec<u64> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| ((k as u64) << 32) | i as u64)
        .collect();
    tagged.sort_unstable();
    tagged.into_iter().map(|t| (t & 0xFFFF_FFFF) as usize).collect()
}

/// Stream of coordinate permutations; each call to [`permute`] consumes one
/// seed from an internal xorshift stream.
///
/// [`permute`]: PermutationGenerator::permute
#[derive(Debug, Clone)]
pub struct PermutationGenerator {
    stream: XorShift64,
    threads: usize,
}

impl PermutationGenerator {
    pub fn new(seed: u64) -> Self {
        Self { stream: XorShift64::new(mix64(seed)), threads: 1 }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    /// Seed of the next key array; advances the stream.
    pub fn next_seed(&mut self) -> u64 {
        self.stream.next_u64()
    }

    pub fn permute(&mut self, n: usize) -> Vec<usize> {
        let seed = self.next_seed();
        permutation_from_keys(&generate_keys(seed, n, self.threads))
    }
}
