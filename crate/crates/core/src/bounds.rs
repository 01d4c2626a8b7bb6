//! Closed forms for the tradeoff `nu(m, eps, delta)`, the moment bound
//! `Lambda(m, r, k)` and the Eulerian counting estimate `Delta(alpha, beta)`.
//!
//! `lg` is base 2 and `ln` is natural, as in the formulas they come from.

use std::f64::consts::E;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::Serialize;

use crate::error::{invalid, Result};

/// Upper-regime constant used when none is configured.
pub const DEFAULT_C: f64 = 4.0;
/// Lower-regime constant used when none is configured (placeholder).
pub const DEFAULT_D: f64 = 1.0 / 16.0;
/// Multiplier applied to the middle-regime value.
pub const DEFAULT_SCALE: f64 = 0.725;

/// `Lambda(m, r, k)`; `k` plays the role of `||x||_inf^{-2}`.
pub fn lambda(m: f64, r: f64, k: f64) -> Result<f64> {
    if !(m > 0.0 && r > 0.0 && k > 0.0) || !(m.is_finite() && r.is_finite() && k.is_finite()) {
        return Err(invalid(format!(
            "lambda needs positive finite m, r, k (got {m}, {r}, {k})"
        )));
    }
    let mr = m * r;
    let base = (r / m).sqrt();
    if k >= mr {
        return Ok(base);
    }
    let second = r * r / (k * (E * mr / k).ln().powi(2));
    if k >= mr.sqrt() {
        return Ok(base.max(second));
    }
    let third = r / (k * (E * mr / (k * k)).ln());
    Ok(base.max(second).max(third))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `m >= 2 / (eps^2 delta)`: every vector is preserved.
    TrivialOne,
    Middle,
    /// `m < D lg(1/delta) / eps^2`.
    Zero,
    /// Between the lower and upper constants, or a middle-regime log argument
    /// that is not above 1.
    Indeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TradeoffQuery {
    pub m: f64,
    pub eps: f64,
    pub delta: f64,
    pub c: f64,
    pub d: f64,
    pub scale: f64,
}

impl TradeoffQuery {
    /// Query with the default constants.
    pub fn new(m: f64, eps: f64, delta: f64) -> Self {
        TradeoffQuery {
            m,
            eps,
            delta,
            c: DEFAULT_C,
            d: DEFAULT_D,
            scale: DEFAULT_SCALE,
        }
    }

    pub fn with_constants(mut self, c: f64, d: f64, scale: f64) -> Self {
        self.c = c;
        self.d = d;
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.m >= 1.0 && self.m.is_finite()) {
            return Err(invalid(format!(
                "m must be a positive integer, got {}",
                self.m
            )));
        }
        if !unit(self.eps) {
            return Err(invalid(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !unit(self.delta) {
            return Err(invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.d > 0.0 && self.d <= self.c && self.c.is_finite()) {
            return Err(invalid(format!(
                "constants must satisfy 0 < D <= C, got C = {}, D = {}",
                self.c, self.d
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffResult {
    pub regime: Regime,
    pub nu: f64,
    pub left_term: Option<f64>,
    pub right_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// The two terms of the middle-regime minimum:
/// `lg(eps m / lg(1/delta)) / lg(1/delta)` and
/// `sqrt(lg(eps^2 m / lg(1/delta)) / lg(1/delta))`.
///
/// Returns `None` when `delta >= 1` or either log argument is not above 1.
pub fn min_terms(m: f64, eps: f64, delta: f64) -> Option<(f64, f64)> {
    let lg_inv = (1.0 / delta).log2();
    if lg_inv.is_nan() || lg_inv <= 0.0 {
        return None;
    }
    let arg_left = eps * m / lg_inv;
    let arg_right = eps * eps * m / lg_inv;
    if !(arg_left > 1.0 && arg_right > 1.0) {
        return None;
    }
    Some((arg_left.log2() / lg_inv, (arg_right.log2() / lg_inv).sqrt()))
}

/// Evaluates the tradeoff with the regime thresholds, checked in the order
/// `2/(eps^2 delta)`, `D lg(1/delta)/eps^2`, `C lg(1/delta)/eps^2`.
pub fn nu_theoretical(q: &TradeoffQuery) -> Result<TradeoffResult> {
    q.validate()?;
    let TradeoffQuery {
        m,
        eps,
        delta,
        c,
        d,
        scale,
    } = *q;
    let eps2 = eps * eps;
    if m >= 2.0 / (eps2 * delta) {
        return Ok(TradeoffResult {
            regime: Regime::TrivialOne,
            nu: 1.0,
            left_term: None,
            right_term: None,
            diagnostic: None,
        });
    }
    let lg_inv = (1.0 / delta).log2();
    let terms = min_terms(m, eps, delta);
    let (left_term, right_term) = (terms.map(|t| t.0), terms.map(|t| t.1));
    if m < d * lg_inv / eps2 {
        return Ok(TradeoffResult {
            regime: Regime::Zero,
            nu: 0.0,
            left_term,
            right_term,
            diagnostic: None,
        });
    }
    if m < c * lg_inv / eps2 {
        return Ok(TradeoffResult {
            regime: Regime::Indeterminate,
            nu: 0.0,
            left_term,
            right_term,
            diagnostic: Some(format!(
                "m lies between D lg(1/delta)/eps^2 = {} and C lg(1/delta)/eps^2 = {}",
                d * lg_inv / eps2,
                c * lg_inv / eps2
            )),
        });
    }
    match terms {
        Some((left, right)) => Ok(TradeoffResult {
            regime: Regime::Middle,
            nu: (scale * eps.sqrt() * left.min(right)).clamp(0.0, 1.0),
            left_term: Some(left),
            right_term: Some(right),
            diagnostic: None,
        }),
        None => Ok(TradeoffResult {
            regime: Regime::Indeterminate,
            nu: 0.0,
            left_term: None,
            right_term: None,
            diagnostic: Some(
                "a logarithm argument in the middle regime is not above 1".to_string(),
            ),
        }),
    }
}

/// `Delta(alpha, beta) = alpha^(2 alpha) beta^(-beta) [(alpha - 2 beta)^2 + 4 (alpha - beta)]^(r - alpha)`,
/// exactly. Requires `1 <= beta <= alpha / 2` and `alpha <= r`.
pub fn delta_formula(alpha: u32, beta: u32, r: u32) -> Result<BigRational> {
    if beta < 1 || 2 * beta > alpha || alpha > r {
        return Err(invalid(format!(
            "need 1 <= beta <= alpha/2 and alpha <= r, got alpha = {alpha}, beta = {beta}, r = {r}"
        )));
    }
    let a = BigInt::from(alpha);
    let b = BigInt::from(beta);
    let diff: BigInt = &a - 2u32 * &b;
    let base: BigInt = &diff * &diff + 4u32 * (&a - &b);
    let num = a.pow(2 * alpha) * base.pow(r - alpha);
    let den = b.pow(beta);
    Ok(BigRational::new(num, den))
}

/// `log2` of a positive rational, accurate to a few ulps for huge values.
pub fn log2_rational(q: &BigRational) -> f64 {
    log2_bigint(q.numer()) - log2_bigint(q.denom())
}

/// `log2(n)` for `n > 0`; `-inf` for zero.
pub fn log2_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    let shift = bits.saturating_sub(64);
    let top: BigInt = n >> shift;
    let top: u64 = top.try_into().unwrap_or(u64::MAX);
    (top as f64).log2() + shift as f64
}

/// `Lambda(m, 2r, k) / Lambda(m, r, k)`.
pub fn lambda_doubling_ratio(m: f64, r: f64, k: f64) -> Result<f64> {
    Ok(lambda(m, 2.0 * r, k)? / lambda(m, r, k)?)
}
