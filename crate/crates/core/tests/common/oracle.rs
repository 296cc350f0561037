//! Direct-summation reference for the subsampled Gaussian RDP bound.
//!
//! Every term of the bracketed binomial sum is evaluated in big-integer
//! fixed point (2^-PRECISION resolution, unbounded range) from exact
//! rational inputs and summed without any log-space rewriting. Only the
//! final logarithm of the sum is taken in `f64`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

const PRECISION: u64 = 320;

/// A non-negative rational `num / den` with small integer parts.
#[derive(Clone, Copy, Debug)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    /// Exact conversion of a decimal-representable f64 with up to 9 fractional digits.
    pub fn from_decimal(x: f64) -> Self {
        let den = 1_000_000_000u64;
        let num = (x * den as f64).round() as u64;
        assert!(
            ((num as f64) / (den as f64) - x).abs() <= 1e-15 * x.abs().max(1.0),
            "{x} is not a short decimal"
        );
        Self { num, den }
    }
}

fn one() -> BigUint {
    BigUint::one() << PRECISION
}

fn fixed_from_ratio(num: &BigUint, den: &BigUint) -> BigUint {
    (num << PRECISION) / den
}

fn fixed_mul(a: &BigUint, b: &BigUint) -> BigUint {
    (a * b) >> PRECISION
}

/// e^x in fixed point for rational x >= 0, by halving to below 1/2, a
/// Taylor series, then repeated squaring.
fn fixed_exp(num: &BigUint, den: &BigUint) -> BigUint {
    let mut halvings = 0u32;
    let mut den = den.clone();
    // x / 2^s < 1/2
    while num * 2u32 >= den {
        den <<= 1;
        halvings += 1;
    }
    let x = fixed_from_ratio(num, &den);
    let mut sum = one();
    let mut term = one();
    let mut k = 1u32;
    loop {
        term = fixed_mul(&term, &x) / k;
        if term.is_zero() {
            break;
        }
        sum += &term;
        k += 1;
    }
    for _ in 0..halvings {
        sum = fixed_mul(&sum, &sum);
    }
    sum
}

fn binomial(n: u64, k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn ln_fixed(s: &BigUint) -> f64 {
    let one = one();
    if *s < (&one << 1u32) {
        assert!(*s >= one, "bracketed sum below 1");
        let frac = (s - &one).to_f64().unwrap() / 2f64.powi(PRECISION as i32);
        return frac.ln_1p();
    }
    let bits = s.bits();
    let shift = bits.saturating_sub(64);
    let mantissa = (s >> shift).to_f64().unwrap();
    mantissa.ln() + (shift as f64 - PRECISION as f64) * std::f64::consts::LN_2
}

/// Reference per-step RDP for integer `alpha >= 2`, rational `q` and `z`.
pub fn per_step_rdp(alpha: u64, q: Ratio, z: Ratio) -> f64 {
    assert!(alpha >= 2);
    let qn = BigUint::from(q.num);
    let qd = BigUint::from(q.den);
    let pn = &qd - &qn; // numerator of 1 - q
    let qd_pow_alpha = qd.pow(alpha as u32);

    // l = 0, 1: (1-q)^(a-1) (a q - q + 1)
    let head = pn.pow(alpha as u32 - 1) * ((alpha - 1) * q.num + q.den);
    let mut sum = fixed_from_ratio(&head, &qd_pow_alpha);

    // 1 / z^2 = den^2 / num^2
    let zn2 = BigUint::from(z.num) * z.num;
    let zd2 = BigUint::from(z.den) * z.den;

    // l = 2 with exponent 1/z^2, as printed.
    let weight = binomial(alpha, 2) * pn.pow(alpha as u32 - 2) * qn.pow(2);
    let e = fixed_exp(&zd2, &zn2);
    sum += (weight * e) / &qd_pow_alpha;

    for l in 3..=alpha {
        let weight = binomial(alpha, l) * pn.pow((alpha - l) as u32) * qn.pow(l as u32);
        if weight.is_zero() {
            continue;
        }
        // (l-1) l / (2 z^2)
        let e = fixed_exp(&(&zd2 * ((l - 1) * l)), &(&zn2 * 2u32));
        sum += (weight * e) / &qd_pow_alpha;
    }
    ln_fixed(&sum) / (alpha - 1) as f64
}

/// Reference RDP to DP conversion, summed in the same arithmetic order as
/// written but with the logs of exact rationals.
pub fn rdp_to_dp(alpha: u64, rdp: f64, delta: f64) -> f64 {
    let a = alpha as f64;
    rdp + (-1.0 / a).ln_1p() - (delta.ln() + a.ln()) / (a - 1.0)
}
