//! Exhaustive ground truth on tiny instances.
//!
//! Every result here is an exact rational. Failure probabilities and moments
//! are computed by enumerating all `m^k * 2^k` hash/sign assignments through
//! the projection code; the moments are also computed by a second route that
//! enumerates ordered sequences of index pairs and never touches a hash
//! function. The two routes must agree exactly.

use std::collections::HashMap;
use std::hash::Hash;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{delta_formula, log2_bigint, log2_rational};
use crate::error::{invalid, Error, Result};
use crate::projection::{self, bucket_sums, norm_sq_from_buckets, SparseVector, TableHashing};

/// Default cap on enumerated points.
pub const DEFAULT_BUDGET: u128 = 1 << 26;

fn check_budget(cost: Option<u128>, budget: u128) -> Result<u128> {
    match cost {
        Some(c) if c <= budget => Ok(c),
        Some(c) => Err(Error::BudgetExceeded { cost: c, budget }),
        None => Err(Error::BudgetExceeded {
            cost: u128::MAX,
            budget,
        }),
    }
}

fn pow_u128(base: u128, exp: u32) -> Option<u128> {
    base.checked_pow(exp)
}

fn rational(n: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(n.into())
}

/// A vector `sqrt(sq_scale) * v` on keys `0..len` with exact rational `v`.
///
/// The scale lets `x^(k)` (entries `1/sqrt(k)`) be handled exactly: it is
/// the all-ones vector with `sq_scale = 1/k`. Since `X(c x) = c^2 X(x)`, the
/// `r`-th moment picks up a factor `sq_scale^r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactVector {
    values: Vec<BigRational>,
    sq_scale: BigRational,
}

impl ExactVector {
    /// The unit vector with `k` entries equal to `1/sqrt(k)`.
    pub fn flat_unit(k: usize) -> Self {
        ExactVector {
            values: vec![BigRational::one(); k],
            sq_scale: if k == 0 {
                BigRational::one()
            } else {
                BigRational::new(BigInt::one(), BigInt::from(k))
            },
        }
    }

    pub fn new(values: Vec<BigRational>, sq_scale: BigRational) -> Result<Self> {
        if sq_scale <= BigRational::zero() {
            return Err(invalid("scale must be positive"));
        }
        if values.iter().any(Zero::is_zero) {
            return Err(invalid("entries must be nonzero"));
        }
        Ok(ExactVector { values, sq_scale })
    }

    /// Exact copy of a float vector; keys are relabelled `0..len` in order.
    pub fn from_sparse(x: &SparseVector) -> Self {
        ExactVector {
            values: x
                .entries()
                .iter()
                .map(|&(_, v)| BigRational::from_float(v).expect("finite by construction"))
                .collect(),
            sq_scale: BigRational::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[BigRational] {
        &self.values
    }

    pub fn sq_scale(&self) -> &BigRational {
        &self.sq_scale
    }

    /// Exact `||x||_2^2`.
    pub fn norm_sq(&self) -> BigRational {
        let s: BigRational = self.values.iter().map(|v| v * v).sum();
        s * &self.sq_scale
    }

    fn integer_values(&self) -> Option<Vec<i64>> {
        self.values
            .iter()
            .map(|v| v.is_integer().then(|| v.to_integer().to_i64()).flatten())
            .collect::<Option<Vec<_>>>()
            .filter(|vals| vals.iter().map(|v| v.unsigned_abs()).sum::<u64>() < (1 << 31))
    }
}

/// `m^k * 2^k`, the number of `(h, sigma)` assignments on `k` keys.
pub fn assignment_count(m: usize, k: usize) -> Option<u128> {
    let k = u32::try_from(k).ok()?;
    pow_u128(m as u128, k)?.checked_mul(pow_u128(2, k)?)
}

/// Visits every `(h, sigma)` on keys `0..k` in lexicographic order (key 0 is
/// the most significant digit, hash before sign) and tallies `||A v||^2`.
fn tally_norms<T>(m: usize, values: &[T]) -> Result<HashMap<T, u64>>
where
    T: projection::Scalar + Hash + Eq,
{
    let k = values.len();
    let mut tally = HashMap::new();
    let mut buckets = vec![0usize; k];
    loop {
        for signs in 0u64..(1u64 << k) {
            let negative: Vec<bool> = (0..k).map(|j| (signs >> (k - 1 - j)) & 1 == 1).collect();
            let th = TableHashing::new(m, buckets.clone(), negative)?;
            let sums = bucket_sums(
                &th,
                values
                    .iter()
                    .cloned()
                    .enumerate()
                    .map(|(j, v)| (j as u64, v)),
            );
            *tally.entry(norm_sq_from_buckets(&sums)).or_insert(0) += 1;
        }
        // odometer over [m]^k, last key fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(tally);
            }
            pos -= 1;
            buckets[pos] += 1;
            if buckets[pos] < m {
                break;
            }
            buckets[pos] = 0;
        }
    }
}

/// Exact `Pr[ | ||A x||^2 - 1 | >= eps ]` for `x = x^(k)` under uniform `(h, sigma)`.
pub fn exact_delta(m: usize, k: usize, eps: f64, budget: u128) -> Result<BigRational> {
    if m == 0 || k == 0 {
        return Err(invalid("need m >= 1 and k >= 1"));
    }
    let eps_q = BigRational::from_float(eps)
        .filter(|e| *e > BigRational::zero())
        .ok_or_else(|| invalid(format!("eps must be positive and finite, got {eps}")))?;
    let total = check_budget(assignment_count(m, k), budget)?;
    // ||A 1_k||^2 = k ||A x^(k)||^2, and the deviation is an integer, so
    // |T - k| >= eps k  iff  |T - k| >= ceil(eps k).
    let threshold = (eps_q * rational(k)).ceil().to_integer();
    let tally = tally_norms(m, &vec![1i64; k])?;
    let failures: u64 = tally
        .iter()
        .filter(|(t, _)| BigInt::from((*t - k as i64).abs()) >= threshold)
        .map(|(_, c)| c)
        .sum();
    Ok(BigRational::new(
        BigInt::from(failures),
        BigInt::from(total),
    ))
}

fn check_even_r(r: u32) -> Result<()> {
    if r == 0 || r % 2 == 1 {
        return Err(invalid(format!(
            "r must be a positive even integer, got {r}"
        )));
    }
    Ok(())
}

/// `E[X^r]` with `X = | ||Ax||^2 - ||x||^2 |`, by enumerating every `(h, sigma)`.
pub fn exact_moment_bruteforce(
    m: usize,
    x: &ExactVector,
    r: u32,
    budget: u128,
) -> Result<BigRational> {
    check_even_r(r)?;
    if m == 0 {
        return Err(invalid("need m >= 1"));
    }
    let total = check_budget(assignment_count(m, x.len()), budget)?;
    let raw = match x.integer_values() {
        Some(ints) => {
            let norm: i64 = ints.iter().map(|v| v * v).sum();
            let tally = tally_norms(m, &ints)?;
            tally
                .into_iter()
                .map(|(t, c)| rational(t - norm).pow(r as i32) * rational(c))
                .sum::<BigRational>()
        }
        None => {
            let norm: BigRational = x.values.iter().map(|v| v * v).sum();
            let tally = tally_norms(m, &x.values)?;
            tally
                .into_iter()
                .map(|(t, c)| (t - &norm).pow(r as i32) * rational(c))
                .sum::<BigRational>()
        }
    };
    Ok(raw / rational(total) * x.sq_scale.clone().pow(r as i32))
}

/// Connected components with at least two nodes of the graph on `0..n`
/// with the given edges: `(alpha, beta)` = (covered vertices, components).
fn components(n: usize, edges: &[(usize, usize)]) -> (usize, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    let mut covered = vec![false; n];
    for &(a, b) in edges {
        covered[a] = true;
        covered[b] = true;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let alpha = covered.iter().filter(|c| **c).count();
    let beta = (0..n)
        .filter(|&v| covered[v] && find(&mut parent, v) == v)
        .count();
    (alpha, beta)
}

struct SequenceWalk<'a> {
    pairs: &'a [(usize, usize)],
    r: usize,
    degrees: Vec<u32>,
    odd: usize,
    edges: Vec<(usize, usize)>,
    tally: HashMap<(usize, Vec<u32>), u64>,
}

impl SequenceWalk<'_> {
    fn toggle(&mut self, v: usize, up: bool) {
        if up {
            self.degrees[v] += 1;
        } else {
            self.degrees[v] -= 1;
        }
        if self.degrees[v] % 2 == 1 {
            self.odd += 1;
        } else {
            self.odd -= 1;
        }
    }

    fn walk(&mut self) {
        let remaining = self.r - self.edges.len();
        // each further pair fixes at most two odd degrees
        if self.odd > 2 * remaining {
            return;
        }
        if remaining == 0 {
            let (alpha, beta) = components(self.degrees.len(), &self.edges);
            *self
                .tally
                .entry((alpha - beta, self.degrees.clone()))
                .or_insert(0) += 1;
            return;
        }
        for &(j, l) in self.pairs {
            self.toggle(j, true);
            self.toggle(l, true);
            self.edges.push((j, l));
            self.walk();
            self.edges.pop();
            self.toggle(j, false);
            self.toggle(l, false);
        }
    }
}

/// `E[X^r]` as the sum over `S in ([k] x [k] \ I)^r` with all degrees even of
/// `m^-(alpha(S) - beta(S)) * prod_q x_q^{d_S(q)}`.
pub fn exact_moment_sequences(
    m: usize,
    x: &ExactVector,
    r: u32,
    budget: u128,
) -> Result<BigRational> {
    check_even_r(r)?;
    if m == 0 {
        return Err(invalid("need m >= 1"));
    }
    let k = x.len();
    if k < 2 {
        return Ok(BigRational::zero());
    }
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|j| (0..k).filter(move |&l| l != j).map(move |l| (j, l)))
        .collect();
    check_budget(pow_u128(pairs.len() as u128, r), budget)?;
    let mut walk = SequenceWalk {
        pairs: &pairs,
        r: r as usize,
        degrees: vec![0; k],
        odd: 0,
        edges: Vec::with_capacity(r as usize),
        tally: HashMap::new(),
    };
    walk.walk();
    let m_q = rational(m);
    let mut total = BigRational::zero();
    for ((excess, degrees), count) in walk.tally {
        let mut term = rational(count) / m_q.clone().pow(excess as i32);
        for (v, d) in x.values.iter().zip(&degrees) {
            if *d > 0 {
                term *= v.clone().pow(*d as i32);
            }
        }
        total += term;
    }
    Ok(total * x.sq_scale.clone().pow(r as i32))
}

/// Count of labelled Eulerian multigraphs with a fixed `(alpha, beta, r)`,
/// next to the estimate `Delta(alpha, beta)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EulerianCountResult {
    pub alpha: u32,
    pub beta: u32,
    pub r: u32,
    #[serde(serialize_with = "ser_display")]
    pub exact_count: BigInt,
    #[serde(serialize_with = "ser_display")]
    pub delta_ref: BigRational,
    /// `|log2(count / Delta)| / r`; infinite for an empty family.
    pub log2_ratio_per_r: f64,
}

fn ser_display<T: std::fmt::Display, S: serde::Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Number of edge sequences enumerated for `alpha` vertices and `r` labels.
pub fn eulerian_enumeration_cost(alpha: u32, r: u32) -> Option<u128> {
    let pairs = u128::from(alpha) * u128::from(alpha.saturating_sub(1)) / 2;
    pow_u128(pairs, r)
}

fn walk_eulerian(
    pairs: &[(usize, usize)],
    alpha: usize,
    r: usize,
    parity: u32,
    covered: u32,
    edges: &mut Vec<(usize, usize)>,
    hist: &mut [u64],
) {
    let remaining = r - edges.len();
    if parity.count_ones() as usize > 2 * remaining {
        return;
    }
    if remaining == 0 {
        if parity == 0 && covered.count_ones() as usize == alpha {
            let (_, beta) = components(alpha, edges);
            hist[beta] += 1;
        }
        return;
    }
    for &(a, b) in pairs {
        let bits = (1u32 << a) | (1u32 << b);
        edges.push((a, b));
        walk_eulerian(pairs, alpha, r, parity ^ bits, covered | bits, edges, hist);
        edges.pop();
    }
}

/// For every `beta`, the number of length-`r` sequences of unordered pairs on
/// `[alpha]` whose multigraph has all degrees even, no isolated vertex and
/// `beta` components. Index `beta` of the returned vector.
pub fn eulerian_histogram(alpha: u32, r: u32, budget: u128) -> Result<Vec<u64>> {
    if !(2..=16).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [2, 16], got {alpha}")));
    }
    if r == 0 {
        return Err(invalid("r must be positive"));
    }
    check_budget(eulerian_enumeration_cost(alpha, r), budget)?;
    let a = alpha as usize;
    let pairs: Vec<(usize, usize)> = (0..a)
        .flat_map(|i| (i + 1..a).map(move |j| (i, j)))
        .collect();
    let r = r as usize;
    // one work unit per first pair; exact integer counts merge in any order
    let hist = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut hist = vec![0u64; a / 2 + 1];
            let mut edges = Vec::with_capacity(r);
            edges.push((i, j));
            let bits = (1u32 << i) | (1u32 << j);
            walk_eulerian(&pairs, a, r, bits, bits, &mut edges, &mut hist);
            hist
        })
        .reduce(
            || vec![0u64; a / 2 + 1],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(s, v)| *s += v);
                x
            },
        );
    Ok(hist)
}

pub fn eulerian_result(alpha: u32, beta: u32, r: u32, count: u64) -> Result<EulerianCountResult> {
    let delta_ref = delta_formula(alpha, beta, r)?;
    let exact_count = BigInt::from(count);
    let log2_ratio_per_r = if count == 0 {
        f64::INFINITY
    } else {
        (log2_bigint(&exact_count) - log2_rational(&delta_ref)).abs() / f64::from(r)
    };
    Ok(EulerianCountResult {
        alpha,
        beta,
        r,
        exact_count,
        delta_ref,
        log2_ratio_per_r,
    })
}

/// `|G_{alpha, beta, r}|` by exhaustive enumeration of edge sequences.
pub fn count_eulerian_graphs(
    alpha: u32,
    beta: u32,
    r: u32,
    budget: u128,
) -> Result<EulerianCountResult> {
    delta_formula(alpha, beta, r)?;
    let hist = eulerian_histogram(alpha, r, budget)?;
    eulerian_result(alpha, beta, r, hist[beta as usize])
}

/// `E[X^r]` for `x^(k)` in closed form for `r = 2`: `(2/m)(1 - 1/k)`.
pub fn second_moment_closed_form(m: usize, k: usize) -> BigRational {
    BigRational::new(BigInt::from(2), BigInt::from(m))
        * (BigRational::one() - BigRational::new(BigInt::one(), BigInt::from(k)))
}

/// Rational to `f64`, for reporting.
pub fn to_f64(q: &BigRational) -> f64 {
    let (n, d) = (q.numer(), q.denom());
    match (n.to_f64(), d.to_f64()) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() && b != 0.0 => a / b,
        _ => {
            let sign = if n.is_negative() { -1.0 } else { 1.0 };
            sign * (log2_bigint(&n.abs()) - log2_bigint(d)).exp2()
        }
    }
}

/// `gcd` of numerator and denominator is 1 for every value returned here.
pub fn is_reduced(q: &BigRational) -> bool {
    q.numer().gcd(q.denom()).is_one()
}
