//! Numerical workhorses: compensated summation, streaming log-sum-exp, and
//! the handful of special functions the statistics need.

use crate::scalar::Real;

/// Neumaier-compensated accumulator. O(N^2) log-sums at large N lose digits
/// with naive summation; every energy reduction in the crate goes through
/// this.
#[derive(Debug, Clone, Copy)]
pub struct KahanSum<S: Real> {
    sum: S,
    comp: S,
}

impl<S: Real> Default for KahanSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> KahanSum<S> {
    pub fn new() -> Self {
        Self {
            sum: S::zero(),
            comp: S::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, value: S) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn ksum<S: Real, I: IntoIterator<Item = S>>(iter: I) -> S {
    let mut acc = KahanSum::new();
    for v in iter {
        acc.add(v);
    }
    acc.value()
}

/// Streaming log-sum-exp: accumulates log(sum_i exp(t_i)) with a running
/// maximum, rescaling when a new maximum arrives. Deterministic for a fixed
/// visit order.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp<S: Real> {
    max: S,
    sum: S,
}

impl<S: Real> Default for LogSumExp<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> LogSumExp<S> {
    pub fn new() -> Self {
        Self {
            max: S::neg_infinity(),
            sum: S::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, term: S) {
        if term.is_infinite() && term < S::zero() {
            return;
        }
        if term <= self.max {
            self.sum += (term - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - term).exp() + S::one();
            self.max = term;
        }
    }

    pub fn value(&self) -> S {
        if self.max.is_infinite() && self.max < S::zero() {
            S::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Regularized lower incomplete gamma P(a, x), by series for x < a + 1 and
/// continued fraction otherwise (Lentz).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p domain");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series representation
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - libm::lgamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - libm::lgamma(a)).exp() * h
}

/// Survival function of the chi-squared distribution with `dof` degrees of
/// freedom (the p-value of a goodness-of-fit statistic).
pub fn chi_squared_sf(stat: f64, dof: usize) -> f64 {
    1.0 - gamma_p(dof as f64 / 2.0, stat / 2.0)
}

/// Kolmogorov-Smirnov asymptotic p-value for the scaled statistic
/// lambda = D * (sqrt(n) + 0.12 + 0.11/sqrt(n)).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `data` against U(0, 1). Returns (D, p).
pub fn ks_uniform_test(data: &mut [f64]) -> (f64, f64) {
    data.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = data.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in data.iter().enumerate() {
        let cdf = x; // U(0,1)
        let upper = (i as f64 + 1.0) / n - cdf;
        let lower = cdf - i as f64 / n;
        d = d.max(upper.max(lower));
    }
    let lambda = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    (d, kolmogorov_sf(lambda))
}

/// Least-squares line fit; returns (slope, intercept, r_squared).
pub fn linear_fit<S: Real>(xs: &[S], ys: &[S]) -> (S, S, S) {
    assert_eq!(xs.len(), ys.len());
    let n = S::of_usize(xs.len());
    let mean_x = ksum(xs.iter().copied()) / n;
    let mean_y = ksum(ys.iter().copied()) / n;
    let sxy = ksum(
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (x - mean_x) * (y - mean_y)),
    );
    let sxx = ksum(xs.iter().map(|&x| (x - mean_x) * (x - mean_x)));
    let syy = ksum(ys.iter().map(|&y| (y - mean_y) * (y - mean_y)));
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = ksum(xs.iter().zip(ys).map(|(&x, &y)| {
        let r = y - (slope * x + intercept);
        r * r
    }));
    let r2 = if syy == S::zero() {
        S::one()
    } else {
        S::one() - ss_res / syy
    };
    (slope, intercept, r2)
}

/// Number of weak compositions of `n` into `m` parts, C(n + m - 1, m - 1),
/// saturating at u128 overflow.
pub fn composition_count(n: u64, m: u64) -> u128 {
    if m == 0 {
        return if n == 0 { 1 } else { 0 };
    }
    // C(n + m - 1, m - 1) with the smaller of the two symmetric choices
    let top = (n + m - 1) as u128;
    let k = ((m - 1) as u128).min(n as u128);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(top - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}
