//! Seedable randomness for the hashing experiments.
//!
//! All randomness comes from degree-20 polynomials over the Mersenne prime
//! field `p = 2^61 - 1`. Evaluating such a polynomial at consecutive counters
//! gives a 21-wise independent stream, which is used to fill the lookup tables
//! of a double tabulation hash over 64-bit keys.
//!
//! Layouts are fixed so results replay bit-for-bit:
//!
//! * polynomial coefficients come from a splitmix64 sequence seeded with the
//!   polynomial seed, keeping the low 61 bits after a right shift by 3 and
//!   rejecting the single value `>= p`;
//! * a 64-bit stream word is built from two consecutive residues, the low 32
//!   bits of the first forming the high half;
//! * a [`DoubleTabulation`] consumes exactly [`DoubleTabulation::STREAM_RESIDUES`]
//!   residues: the 8 outer tables first, then the 8 inner tables, each table in
//!   index order;
//! * keys are split into 8 little-endian 8-bit characters.

/// The Mersenne prime `2^61 - 1`.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Number of coefficients of a degree-20 polynomial.
pub const POLY_COEFFS: usize = 21;

const CHARS: usize = 8;
const CHAR_BITS: u32 = 8;
const TABLE_LEN: usize = 1 << CHAR_BITS;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// One splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    mix64(*state)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; turns a stream label into a seed word.
pub fn label_word(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a child seed from a parent seed and a list of words.
///
/// Different word lists (including different orders) give unrelated seeds.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = mix64(seed ^ GOLDEN_GAMMA);
    for &part in parts {
        let mut s = part;
        state = mix64(state ^ splitmix64(&mut s)).wrapping_add(GOLDEN_GAMMA);
    }
    mix64(state)
}

#[inline]
fn reduce_u64(x: u64) -> u64 {
    let r = (x & MERSENNE_61) + (x >> 61);
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    let prod = u128::from(a) * u128::from(b);
    let folded = (prod as u64 & MERSENNE_61) + (prod >> 61) as u64;
    reduce_u64(folded)
}

#[inline]
fn add_mod(a: u64, b: u64) -> u64 {
    reduce_u64(a + b)
}

/// A degree-20 polynomial over `GF(2^61 - 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyHash {
    seed: u64,
    coefficients: [u64; POLY_COEFFS],
}

impl PolyHash {
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed;
        let mut coefficients = [0u64; POLY_COEFFS];
        for c in coefficients.iter_mut() {
            *c = loop {
                let v = splitmix64(&mut state) >> 3;
                if v < MERSENNE_61 {
                    break v;
                }
            };
        }
        PolyHash { seed, coefficients }
    }

    /// Builds a polynomial from explicit coefficients (`coefficients[i]`
    /// multiplies `key^i`). Values are reduced mod p.
    pub fn from_coefficients(coefficients: [u64; POLY_COEFFS]) -> Self {
        PolyHash {
            seed: 0,
            coefficients: coefficients.map(reduce_u64),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coefficients(&self) -> &[u64; POLY_COEFFS] {
        &self.coefficients
    }

    /// Horner evaluation at `key mod p`; the result is in `[0, p)`.
    #[inline]
    pub fn eval(&self, key: u64) -> u64 {
        let x = reduce_u64(key);
        self.coefficients[..POLY_COEFFS - 1]
            .iter()
            .rev()
            .fold(self.coefficients[POLY_COEFFS - 1], |acc, &c| {
                add_mod(mul_mod(acc, x), c)
            })
    }
}

/// Counter-mode stream over a [`PolyHash`]: output `i` is `poly(i)`.
#[derive(Clone, Debug)]
pub struct PolyStream {
    poly: PolyHash,
    counter: u64,
}

impl PolyStream {
    pub fn new(poly: PolyHash) -> Self {
        PolyStream { poly, counter: 0 }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(PolyHash::from_seed(seed))
    }

    pub fn poly(&self) -> &PolyHash {
        &self.poly
    }

    /// Number of residues drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn next_residue(&mut self) -> u64 {
        let v = self.poly.eval(self.counter);
        self.counter += 1;
        v
    }

    /// 64 bits from two residues.
    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_residue() & 0xffff_ffff;
        let lo = self.next_residue() & 0xffff_ffff;
        (hi << 32) | lo
    }
}

/// The two independent streams used by an experiment.
#[derive(Clone, Debug)]
pub struct SeedStreams {
    /// Drives vector generation.
    pub vector: PolyStream,
    /// Drives hash-table construction.
    pub hashing: PolyStream,
}

pub const VECTOR_LABEL: &str = "vec";
pub const HASHING_LABEL: &str = "hash";

/// Splits a seed into a vector-generation stream and a hashing stream.
pub fn derive_streams(master_seed: u64) -> SeedStreams {
    SeedStreams {
        vector: PolyStream::from_seed(mix_seed(master_seed, &[label_word(VECTOR_LABEL)])),
        hashing: PolyStream::from_seed(mix_seed(master_seed, &[label_word(HASHING_LABEL)])),
    }
}

type Tables = [[u64; TABLE_LEN]; CHARS];

/// Double tabulation hashing over 64-bit keys.
///
/// The key's 8 characters index the outer tables; XOR of the looked-up words
/// is a derived key, whose 8 characters index the inner tables. The XOR of
/// those words is the hash.
#[derive(Clone)]
pub struct DoubleTabulation {
    outer: Box<Tables>,
    inner: Box<Tables>,
}

impl std::fmt::Debug for DoubleTabulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoubleTabulation")
            .field("char_count", &CHARS)
            .finish_non_exhaustive()
    }
}

impl DoubleTabulation {
    /// Characters per 64-bit key.
    pub const CHAR_COUNT: usize = CHARS;
    /// Residues consumed from the stream while filling the tables.
    pub const STREAM_RESIDUES: u64 = (2 * 2 * CHARS * TABLE_LEN) as u64;

    pub fn from_seed(seed: u64) -> Self {
        Self::from_stream(&mut PolyStream::from_seed(seed))
    }

    /// Fills the tables from `stream`, consuming exactly
    /// [`Self::STREAM_RESIDUES`] residues.
    pub fn from_stream(stream: &mut PolyStream) -> Self {
        let mut fill = || {
            let mut t: Box<Tables> = Box::new([[0; TABLE_LEN]; CHARS]);
            for row in t.iter_mut() {
                for word in row.iter_mut() {
                    *word = stream.next_u64();
                }
            }
            t
        };
        let outer = fill();
        let inner = fill();
        DoubleTabulation { outer, inner }
    }

    #[inline]
    fn tabulate(tables: &Tables, key: u64) -> u64 {
        let mut h = 0;
        for (i, row) in tables.iter().enumerate() {
            h ^= row[((key >> (CHAR_BITS * i as u32)) & 0xff) as usize];
        }
        h
    }

    #[inline]
    pub fn hash(&self, key: u64) -> u64 {
        Self::tabulate(&self.inner, Self::tabulate(&self.outer, key))
    }
}
