//! Small numerical kernels shared across the crate: stable log-domain helpers
//! and a double-double type used where signed sums cancel heavily.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(1 + exp(z))`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic function, accurate in both tails.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 - exp(-x))` for `x > 0`, switching branches at `log 2`.
#[inline]
pub fn log1m_exp_neg(x: f64) -> f64 {
    if x < std::f64::consts::LN_2 {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}

/// Streaming log-sum-exp accumulator that also tracks weighted sums of
/// auxiliary quantities, rescaling whenever the running maximum grows.
#[derive(Debug, Clone)]
pub struct LogWeightedSums {
    max: f64,
    total: f64,
    total_sq: f64,
    sums: Vec<f64>,
    count: u64,
}

impl LogWeightedSums {
    pub fn new(width: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            total: 0.0,
            total_sq: 0.0,
            sums: vec![0.0; width],
            count: 0,
        }
    }

    /// Adds a sample with log weight `log_w`; `values[k]` is accumulated
    /// as `w * values[k]`.
    pub fn push(&mut self, log_w: f64, values: &[f64]) {
        self.count += 1;
        if log_w == f64::NEG_INFINITY {
            return;
        }
        if log_w > self.max {
            let scale = (self.max - log_w).exp();
            self.total *= scale;
            self.total_sq *= scale * scale;
            for s in &mut self.sums {
                *s *= scale;
            }
            self.max = log_w;
        }
        let w = (log_w - self.max).exp();
        self.total += w;
        self.total_sq += w * w;
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += w * v;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `log Σ w`.
    pub fn log_total(&self) -> f64 {
        if self.total > 0.0 {
            self.max + self.total.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Weighted means `Σ w v_k / Σ w`, or `None` when every weight is zero.
    pub fn means(&self) -> Option<Vec<f64>> {
        (self.total > 0.0).then(|| self.sums.iter().map(|s| s / self.total).collect())
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn effective_sample_size(&self) -> f64 {
        if self.total_sq > 0.0 {
            self.total * self.total / self.total_sq
        } else {
            0.0
        }
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Unevaluated sum `hi + lo` with roughly 106 bits of significand.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// `1 - x` with the subtraction carried exactly.
    #[inline]
    pub fn one_minus(x: f64) -> Self {
        let (hi, lo) = two_sum(1.0, -x);
        Self { hi, lo }
    }

    /// `e^{-theta}` and its complement `1 - e^{-theta}`, each accurate to
    /// double-double working precision relative to its own magnitude.
    ///
    /// For small `theta` the complement is the accurate quantity
    /// (`-expm1(-theta)`) and the value is derived from it exactly; for
    /// large `theta` the roles swap.
    pub fn exp_neg_pair(theta: f64) -> (Self, Self) {
        if theta < std::f64::consts::LN_2 {
            let complement = -(-theta).exp_m1();
            (Self::one_minus(complement), Self::from_f64(complement))
        } else {
            let value = (-theta).exp();
            (Self::from_f64(value), Self::one_minus(value))
        }
    }

    #[inline]
    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Self { hi, lo }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    #[inline]
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::from_f64(q3)
    }
}
