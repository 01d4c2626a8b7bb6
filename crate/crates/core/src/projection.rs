//! The feature-hashing projection `x -> Ax`, where column `j` of `A` holds a
//! single `sigma_j` in row `h(j)`.

use std::cmp::Ordering;
use std::ops::Range;

use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{invalid, Error, Result};
use crate::rng_hash::{derive_streams, DoubleTabulation, PolyStream};

/// Above this many nonzeros, bucket sums use compensated summation.
pub const COMPENSATED_THRESHOLD: usize = 1_000_000;

/// A vector over 64-bit keys with finite, nonzero values in key order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u64, f64)>,
    l2: f64,
    linf: f64,
}

impl Default for SparseVector {
    fn default() -> Self {
        SparseVector {
            entries: Vec::new(),
            l2: 0.0,
            linf: 0.0,
        }
    }
}

impl SparseVector {
    /// Builds a vector from unordered `(key, value)` pairs. Zero values are
    /// dropped; duplicate keys and non-finite values are rejected.
    pub fn from_entries(entries: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut entries: Vec<(u64, f64)> = entries.into_iter().collect();
        if let Some(&(key, value)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(format!("non-finite value {value} at key {key}")));
        }
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(k, _)| k);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(invalid(format!("duplicate key {}", w[0].0)));
        }
        Ok(Self::from_sorted_unchecked(entries))
    }

    /// The 0/1 vector supported on `keys`.
    pub fn ones(keys: Range<u64>) -> Self {
        Self::from_sorted_unchecked(keys.map(|k| (k, 1.0)).collect())
    }

    fn from_sorted_unchecked(entries: Vec<(u64, f64)>) -> Self {
        let mut sq = Neumaier::default();
        let mut linf = 0.0f64;
        for &(_, v) in &entries {
            sq.add(v * v);
            linf = linf.max(v.abs());
        }
        SparseVector {
            entries,
            l2: sq.total().sqrt(),
            linf,
        }
    }

    /// Parses the line format `index value`. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line_no = no as u64 + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let mut fields = line.split_whitespace();
            let (Some(idx), Some(val), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(format!("expected `index value`, got {line:?}")));
            };
            let idx: u64 = idx
                .parse()
                .map_err(|e| parse_err(format!("bad index {idx:?}: {e}")))?;
            let val: f64 = val
                .parse()
                .map_err(|e| parse_err(format!("bad value {val:?}: {e}")))?;
            entries.push((idx, val));
        }
        Self::from_entries(entries)
    }

    /// `a * x + b * y`.
    pub fn combine(a: f64, x: &SparseVector, b: f64, y: &SparseVector) -> Result<Self> {
        let mut out = Vec::with_capacity(x.len() + y.len());
        let (mut i, mut j) = (0, 0);
        while i < x.len() || j < y.len() {
            let next = match (x.entries.get(i), y.entries.get(j)) {
                (Some(&(kx, vx)), Some(&(ky, vy))) => match kx.cmp(&ky) {
                    Ordering::Less => {
                        i += 1;
                        (kx, a * vx)
                    }
                    Ordering::Greater => {
                        j += 1;
                        (ky, b * vy)
                    }
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                        (kx, a * vx + b * vy)
                    }
                },
                (Some(&(kx, vx)), None) => {
                    i += 1;
                    (kx, a * vx)
                }
                (None, Some(&(ky, vy))) => {
                    j += 1;
                    (ky, b * vy)
                }
                (None, None) => unreachable!(),
            };
            out.push(next);
        }
        Self::from_entries(out)
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    /// Number of nonzeros.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn l2_squared(&self) -> f64 {
        self.l2 * self.l2
    }

    pub fn linf(&self) -> f64 {
        self.linf
    }
}

/// A hash pair `(h, sigma)`: a bucket in `[0, buckets)` and a sign per key.
pub trait BucketSign {
    fn buckets(&self) -> usize;
    fn bucket(&self, key: u64) -> usize;
    /// `true` when `sigma(key) = -1`.
    fn negative(&self, key: u64) -> bool;
}

/// Feature hasher backed by two independent double tabulation hashes.
#[derive(Clone, Debug)]
pub struct FeatureHasher {
    m: usize,
    mask: Option<u64>,
    bucket_hash: DoubleTabulation,
    sign_hash: DoubleTabulation,
}

impl FeatureHasher {
    /// Hasher for target dimension `m` from the hashing stream of `seed`.
    pub fn from_seed(m: usize, seed: u64) -> Result<Self> {
        Self::from_stream(m, &mut derive_streams(seed).hashing)
    }

    /// Draws one table seed for `h` and one for `sigma` from `stream`.
    pub fn from_stream(m: usize, stream: &mut PolyStream) -> Result<Self> {
        if m == 0 {
            return Err(invalid("target dimension m must be at least 1"));
        }
        let bucket_seed = stream.next_u64();
        let sign_seed = stream.next_u64();
        Ok(FeatureHasher {
            m,
            mask: m.is_power_of_two().then_some(m as u64 - 1),
            bucket_hash: DoubleTabulation::from_seed(bucket_seed),
            sign_hash: DoubleTabulation::from_seed(sign_seed),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

impl BucketSign for FeatureHasher {
    fn buckets(&self) -> usize {
        self.m
    }

    #[inline]
    fn bucket(&self, key: u64) -> usize {
        let h = self.bucket_hash.hash(key);
        match self.mask {
            Some(mask) => (h & mask) as usize,
            None => (h % self.m as u64) as usize,
        }
    }

    #[inline]
    fn negative(&self, key: u64) -> bool {
        self.sign_hash.hash(key) >> 63 == 1
    }
}

/// An explicit `(h, sigma)` assignment for keys `0..len`, used when
/// enumerating every hash function on a small instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableHashing {
    m: usize,
    buckets: Vec<usize>,
    negative: Vec<bool>,
}

impl TableHashing {
    pub fn new(m: usize, buckets: Vec<usize>, negative: Vec<bool>) -> Result<Self> {
        if m == 0 {
            return Err(invalid("target dimension m must be at least 1"));
        }
        if buckets.len() != negative.len() {
            return Err(invalid("bucket and sign tables differ in length"));
        }
        if let Some(b) = buckets.iter().find(|&&b| b >= m) {
            return Err(invalid(format!("bucket {b} out of range for m = {m}")));
        }
        Ok(TableHashing {
            m,
            buckets,
            negative,
        })
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

impl BucketSign for TableHashing {
    fn buckets(&self) -> usize {
        self.m
    }

    /// Panics if `key` is outside the table.
    fn bucket(&self, key: u64) -> usize {
        self.buckets[key as usize]
    }

    fn negative(&self, key: u64) -> bool {
        self.negative[key as usize]
    }
}

impl<H: BucketSign + ?Sized> BucketSign for &H {
    fn buckets(&self) -> usize {
        (**self).buckets()
    }
    fn bucket(&self, key: u64) -> usize {
        (**self).bucket(key)
    }
    fn negative(&self, key: u64) -> bool {
        (**self).negative(key)
    }
}

/// Arithmetic needed to accumulate bucket sums, in floating point or exactly.
pub trait Scalar: Clone {
    fn zero() -> Self;
    fn add_assign(&mut self, other: &Self);
    fn neg(&self) -> Self;
    fn square(&self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += *other;
    }
    fn neg(&self) -> Self {
        -*self
    }
    fn square(&self) -> Self {
        *self * *self
    }
}

impl Scalar for i64 {
    fn zero() -> Self {
        0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += *other;
    }
    fn neg(&self) -> Self {
        -*self
    }
    fn square(&self) -> Self {
        *self * *self
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn neg(&self) -> Self {
        -self.clone()
    }
    fn square(&self) -> Self {
        self * self
    }
}

/// Per-bucket sums `sum_{j : h(j) = i} sigma_j x_j` for the touched buckets,
/// in increasing bucket order.
pub fn bucket_sums<H, T, I>(hasher: &H, entries: I) -> Vec<(usize, T)>
where
    H: BucketSign + ?Sized,
    T: Scalar,
    I: IntoIterator<Item = (u64, T)>,
{
    let mut signed: Vec<(usize, T)> = entries
        .into_iter()
        .map(|(key, v)| {
            let v = if hasher.negative(key) { v.neg() } else { v };
            (hasher.bucket(key), v)
        })
        .collect();
    signed.sort_by_key(|&(b, _)| b);
    let mut out: Vec<(usize, T)> = Vec::new();
    for (b, v) in signed {
        match out.last_mut() {
            Some((last, acc)) if *last == b => acc.add_assign(&v),
            _ => out.push((b, v)),
        }
    }
    out
}

/// Sum of squared bucket sums.
pub fn norm_sq_from_buckets<T: Scalar>(sums: &[(usize, T)]) -> T {
    let mut total = T::zero();
    for (_bucket, s) in sums {
        let sq = s.square();
        #[cfg(feature = "fault-injection")]
        let sq = if *_bucket == 0 { sq.neg() } else { sq };
        total.add_assign(&sq);
    }
    total
}

/// `Ax` as a dense vector of length `m`.
pub fn project<H: BucketSign + ?Sized>(hasher: &H, x: &SparseVector) -> Result<Vec<f64>> {
    let m = hasher.buckets();
    if m == 0 {
        return Err(invalid("target dimension m must be at least 1"));
    }
    if x.len() > COMPENSATED_THRESHOLD {
        let mut acc = vec![Neumaier::default(); m];
        for &(key, v) in x.entries() {
            let v = if hasher.negative(key) { -v } else { v };
            acc[hasher.bucket(key)].add(v);
        }
        return Ok(acc.iter().map(Neumaier::total).collect());
    }
    let mut out = vec![0.0; m];
    for &(key, v) in x.entries() {
        let v = if hasher.negative(key) { -v } else { v };
        out[hasher.bucket(key)] += v;
    }
    Ok(out)
}

/// `||Ax||_2^2` without materializing `Ax`.
pub fn projected_norm_sq<H: BucketSign + ?Sized>(hasher: &H, x: &SparseVector) -> Result<f64> {
    if hasher.buckets() == 0 {
        return Err(invalid("target dimension m must be at least 1"));
    }
    if x.len() > COMPENSATED_THRESHOLD {
        let sums = bucket_sums(
            hasher,
            x.entries().iter().map(|&(k, v)| (k, Neumaier::from(v))),
        );
        return Ok(norm_sq_from_buckets(&sums).total());
    }
    let sums = bucket_sums(hasher, x.entries().iter().copied());
    Ok(norm_sq_from_buckets(&sums))
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl From<f64> for Neumaier {
    fn from(v: f64) -> Self {
        Neumaier { sum: v, comp: 0.0 }
    }
}

impl Scalar for Neumaier {
    fn zero() -> Self {
        Neumaier::default()
    }
    fn add_assign(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }
    fn neg(&self) -> Self {
        Neumaier {
            sum: -self.sum,
            comp: -self.comp,
        }
    }
    fn square(&self) -> Self {
        Neumaier::from(self.total() * self.total())
    }
}

/// Distortion `| ||Ax||^2 - ||x||^2 | / ||x||^2`; zero for the zero vector.
pub fn distortion<H: BucketSign + ?Sized>(hasher: &H, x: &SparseVector) -> Result<f64> {
    let norm = x.l2_squared();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok((projected_norm_sq(hasher, x)? - norm).abs() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_hash::PolyStream;
    use proptest::prelude::*;

    struct Flipped<'a>(&'a FeatureHasher);

    impl BucketSign for Flipped<'_> {
        fn buckets(&self) -> usize {
            self.0.buckets()
        }
        fn bucket(&self, key: u64) -> usize {
            self.0.bucket(key)
        }
        fn negative(&self, key: u64) -> bool {
            !self.0.negative(key)
        }
    }

    fn random_vector(stream: &mut PolyStream, len: usize) -> SparseVector {
        SparseVector::from_entries((0..len).map(|_| {
            let key = stream.next_u64();
            let v = (stream.next_residue() % 2001) as f64 / 1000.0 - 1.0;
            (key, if v == 0.0 { 0.5 } else { v })
        }))
        .unwrap()
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(SparseVector::from_entries([(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::from_entries([(1, f64::NAN)]).is_err());
        assert!(SparseVector::from_entries([(1, f64::INFINITY)]).is_err());
        let v = SparseVector::from_entries([(5, 0.0), (3, 2.0), (1, -4.0)]).unwrap();
        assert_eq!(v.entries(), &[(1, -4.0), (3, 2.0)]);
        assert_eq!(v.linf(), 4.0);
        assert!((v.l2() - 20f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parses_text_format() {
        let v = SparseVector::parse_text("# comment\n3 0.5\n\n1 -2\n").unwrap();
        assert_eq!(v.entries(), &[(1, -2.0), (3, 0.5)]);
        match SparseVector::parse_text("1 1\n2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(FeatureHasher::from_seed(0, 1).is_err());
        assert!(TableHashing::new(0, vec![], vec![]).is_err());
        assert!(TableHashing::new(2, vec![2], vec![false]).is_err());
    }

    #[test]
    fn single_entry_maps_to_one_bucket() {
        let fh = FeatureHasher::from_seed(32, 7).unwrap();
        let x = SparseVector::from_entries([(12345, -2.5)]).unwrap();
        let y = project(&fh, &x).unwrap();
        let nz: Vec<_> = y.iter().filter(|v| **v != 0.0).collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].abs(), 2.5);
    }

    #[test]
    fn all_sixteen_hash_pairs_on_two_entries() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = SparseVector::from_entries([(0, s), (1, s)]).unwrap();
        let mut counts = [0u32; 3];
        for h in 0..4usize {
            for sg in 0..4usize {
                let th = TableHashing::new(2, vec![h & 1, h >> 1], vec![sg & 1 == 1, sg >> 1 == 1])
                    .unwrap();
                let n = projected_norm_sq(&th, &x).unwrap();
                let idx = n.round() as usize;
                assert!((n - idx as f64).abs() < 1e-12);
                counts[idx] += 1;
            }
        }
        assert_eq!(counts, [4, 8, 4]);
    }

    #[test]
    fn empty_vector_has_zero_norm() {
        let fh = FeatureHasher::from_seed(8, 1).unwrap();
        assert_eq!(
            projected_norm_sq(&fh, &SparseVector::default()).unwrap(),
            0.0
        );
        assert_eq!(distortion(&fh, &SparseVector::default()).unwrap(), 0.0);
    }

    #[test]
    fn distinct_buckets_preserve_norm() {
        let th = TableHashing::new(4, vec![3, 0, 2], vec![true, false, true]).unwrap();
        let x = SparseVector::from_entries([(0, 1.5), (1, -2.0), (2, 0.25)]).unwrap();
        assert_eq!(projected_norm_sq(&th, &x).unwrap(), x.l2_squared());
    }

    #[test]
    fn streaming_norm_matches_dense_projection() {
        let mut stream = PolyStream::from_seed(3);
        for (m, len) in [(1usize, 10usize), (7, 100), (64, 1000), (1000, 50)] {
            let fh = FeatureHasher::from_stream(m, &mut stream).unwrap();
            let x = random_vector(&mut stream, len);
            let dense: f64 = project(&fh, &x).unwrap().iter().map(|v| v * v).sum();
            let streamed = projected_norm_sq(&fh, &x).unwrap();
            assert!(
                (dense - streamed).abs() <= 1e-12 * dense.max(1e-300),
                "{dense} vs {streamed}"
            );
        }
    }

    #[test]
    fn compensated_path_agrees_with_exact_integer_sum() {
        let fh = FeatureHasher::from_seed(16, 11).unwrap();
        let n = COMPENSATED_THRESHOLD as u64 + 10;
        let x = SparseVector::ones(0..n);
        let mut ints = vec![0i64; 16];
        for k in 0..n {
            ints[fh.bucket(k)] += if fh.negative(k) { -1 } else { 1 };
        }
        let exact: i64 = ints.iter().map(|v| v * v).sum();
        assert_eq!(projected_norm_sq(&fh, &x).unwrap(), exact as f64);
        let dense = project(&fh, &x).unwrap();
        assert!(dense.iter().zip(&ints).all(|(a, b)| *a == *b as f64));
    }

    #[test]
    fn chebyshev_regime_moments() {
        // Disjoint-support copies of one vector under a single hasher.
        const M: usize = 64;
        const TRIALS: u64 = 20_000;
        let mut stream = PolyStream::from_seed(2024);
        let base = random_vector(&mut stream, 40);
        let fh = FeatureHasher::from_stream(M, &mut stream).unwrap();
        let norm = base.l2_squared();
        let values: Vec<f64> = (0..TRIALS)
            .map(|t| {
                let shifted = SparseVector::from_entries(
                    base.entries()
                        .iter()
                        .enumerate()
                        .map(|(i, &(_, v))| (t * 40 + i as u64, v)),
                )
                .unwrap();
                projected_norm_sq(&fh, &shifted).unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / TRIALS as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (TRIALS - 1) as f64;
        let bound = 2.0 * norm * norm / M as f64;
        let se = (bound / TRIALS as f64).sqrt();
        assert!((mean - norm).abs() < 4.0 * se, "mean {mean} vs {norm}");
        assert!(var <= 1.1 * bound, "var {var} vs bound {bound}");
    }

    fn small_int_vector() -> impl Strategy<Value = SparseVector> {
        proptest::collection::btree_map(0u64..500, -20i32..=20, 0..40).prop_map(|m| {
            SparseVector::from_entries(m.into_iter().map(|(k, v)| (k, v as f64))).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_is_linear(x in small_int_vector(), y in small_int_vector(),
                                a in -5i32..=5, b in -5i32..=5, seed in any::<u64>()) {
            let fh = FeatureHasher::from_seed(16, seed).unwrap();
            let (a, b) = (a as f64, b as f64);
            let lhs = project(&fh, &SparseVector::combine(a, &x, b, &y).unwrap()).unwrap();
            let px = project(&fh, &x).unwrap();
            let py = project(&fh, &y).unwrap();
            for i in 0..16 {
                prop_assert_eq!(lhs[i], a * px[i] + b * py[i]);
            }
        }

        #[test]
        fn global_sign_flip_keeps_norm(x in small_int_vector(), seed in any::<u64>()) {
            let fh = FeatureHasher::from_seed(8, seed).unwrap();
            prop_assert_eq!(
                projected_norm_sq(&fh, &x).unwrap(),
                projected_norm_sq(&Flipped(&fh), &x).unwrap()
            );
        }

        #[test]
        fn relabelling_keys_keeps_norm(
            vals in proptest::collection::vec(prop_oneof![-9i32..=-1, 1i32..=9], 1..8),
            buckets in proptest::collection::vec(0usize..4, 8),
            signs in proptest::collection::vec(any::<bool>(), 8),
            perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let n = vals.len();
            let x = SparseVector::from_entries(
                vals.iter().enumerate().map(|(i, &v)| (i as u64, v as f64))).unwrap();
            let th = TableHashing::new(4, buckets.clone(), signs.clone()).unwrap();
            // key i moves to perm[i]; the hash follows it.
            let y = SparseVector::from_entries(
                vals.iter().enumerate().map(|(i, &v)| (perm[i] as u64, v as f64))).unwrap();
            let mut pb = vec![0; 8];
            let mut ps = vec![false; 8];
            for i in 0..8 {
                pb[perm[i]] = buckets[i];
                ps[perm[i]] = signs[i];
            }
            let tp = TableHashing::new(4, pb, ps).unwrap();
            prop_assert_eq!(x.len(), n);
            prop_assert_eq!(projected_norm_sq(&th, &x).unwrap(), projected_norm_sq(&tp, &y).unwrap());
        }
    }
}
