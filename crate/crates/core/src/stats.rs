//! Numeric statistics used by calibration and validation: line fitting
//! (ordinary, weighted, RANSAC), small dense least squares, Shapiro-Wilk and
//! two-sample Kolmogorov-Smirnov tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n-1) sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated quantile of an unsorted sample, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub inlier_mask: Vec<bool>,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    pub fn inlier_fraction(&self) -> f64 {
        self.inlier_count() as f64 / self.inlier_mask.len().max(1) as f64
    }
}

/// Coefficient of determination of `slope*x + intercept` on `pairs`.
pub fn r_squared(pairs: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    let ybar = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(x, y) in pairs {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        ss_tot += (y - ybar) * (y - ybar);
    }
    if ss_tot == 0.0 {
        if ss_res <= f64::EPSILON {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn weighted_line(pairs: &[(f64, f64)], weights: Option<&[f64]>) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &(x, y)) in pairs.iter().enumerate() {
        sw += w(i);
        sx += w(i) * x;
        sy += w(i) * y;
    }
    let (xm, ym) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (i, &(x, y)) in pairs.iter().enumerate() {
        sxx += w(i) * (x - xm) * (x - xm);
        sxy += w(i) * (x - xm) * (y - ym);
    }
    let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.0.abs())).max(1.0);
    if !(sxx > 1e-24 * scale * scale * sw) {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, ym - slope * xm))
}

/// Ordinary least-squares line through all pairs.
pub fn ols_line(pairs: &[(f64, f64)]) -> Result<LineFit> {
    let (slope, intercept) = weighted_line(pairs, None)?;
    Ok(LineFit { slope, intercept, r2: r_squared(pairs, slope, intercept), inlier_mask: vec![true; pairs.len()] })
}

/// Weighted least-squares line; `r2` is reported unweighted.
pub fn wls_line(pairs: &[(f64, f64)], weights: &[f64]) -> Result<LineFit> {
    if weights.len() != pairs.len() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite, nonnegative and aligned".into()));
    }
    let (slope, intercept) = weighted_line(pairs, Some(weights))?;
    Ok(LineFit { slope, intercept, r2: r_squared(pairs, slope, intercept), inlier_mask: vec![true; pairs.len()] })
}

/// Weighted fit for data whose spread grows with the line itself
/// (mean/variance pairs): weights `1 / line(x)^2`, re-estimated a few times.
pub fn variance_weighted_line(pairs: &[(f64, f64)], start: (f64, f64), rounds: usize) -> Result<LineFit> {
    let (mut slope, mut intercept) = start;
    let floor = pairs.iter().map(|p| p.1.abs()).fold(0.0f64, f64::max) * 1e-6 + f64::MIN_POSITIVE;
    for _ in 0..rounds {
        let w: Vec<f64> = pairs
            .iter()
            .map(|&(x, _)| {
                let v = (slope * x + intercept).max(floor);
                1.0 / (v * v)
            })
            .collect();
        (slope, intercept) = weighted_line(pairs, Some(&w))?;
    }
    Ok(LineFit { slope, intercept, r2: r_squared(pairs, slope, intercept), inlier_mask: vec![true; pairs.len()] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InlierThreshold {
    /// Absolute vertical distance.
    Absolute(f64),
    /// Fraction of the interquartile range of y.
    IqrFraction(f64),
    /// Fraction of the line's own value, `|y - line(x)| <= f * |line(x)|`;
    /// suits data whose scatter is proportional to its level.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refit {
    Ols,
    /// Iterated `1/line(x)^2` weights, for mean/variance data.
    VarianceWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    pub threshold: InlierThreshold,
    /// Smallest accepted consensus set, as a fraction of all pairs.
    pub min_consensus: f64,
    pub refit: Refit,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 500, threshold: InlierThreshold::IqrFraction(0.1), min_consensus: 0.2, refit: Refit::Ols }
    }
}

/// RANSAC line over two-point minimal samples, refit on the best consensus set.
/// `r2` is computed on the inliers only.
pub fn ransac_line(pairs: &[(f64, f64)], config: &RansacConfig, seed: u64) -> Result<LineFit> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 pairs, got {n}")));
    }
    let ymax = pairs.iter().map(|p| p.1.abs()).fold(0.0f64, f64::max);
    let tiny = ymax * 1e-12 + f64::MIN_POSITIVE;
    let iqr_band = match config.threshold {
        InlierThreshold::IqrFraction(f) => {
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            (f * (quantile(&ys, 0.75) - quantile(&ys, 0.25))).max(tiny)
        }
        _ => tiny,
    };
    let band = |slope: f64, intercept: f64, x: f64| -> f64 {
        match config.threshold {
            InlierThreshold::Absolute(t) => t.max(tiny),
            InlierThreshold::IqrFraction(_) => iqr_band,
            InlierThreshold::Relative(f) => (f * (slope * x + intercept).abs()).max(tiny),
        }
    };
    let inside =
        |slope: f64, intercept: f64, (x, y): (f64, f64)| (y - slope * x - intercept).abs() <= band(slope, intercept, x);
    let required = 2usize.max((config.min_consensus * n as f64).ceil() as usize);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, f64)> = None;
    for _ in 0..config.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let ((x1, y1), (x2, y2)) = (pairs[i], pairs[j]);
        if x1 == x2 {
            continue;
        }
        let slope = (y2 - y1) / (x2 - x1);
        let intercept = y1 - slope * x1;
        let count = pairs.iter().filter(|&&p| inside(slope, intercept, p)).count();
        if best.is_none_or(|b| count > b.0) {
            best = Some((count, slope, intercept));
        }
    }
    let (count, slope, intercept) = best.unwrap_or((0, 0.0, 0.0));
    if count < required {
        return Err(Error::NoConsensus { required, best: count });
    }
    // Refit on the consensus set, then re-select inliers around the refined
    // line once so the final set does not depend on the minimal sample.
    let mut line = (slope, intercept);
    let mut fit = None;
    for _ in 0..2 {
        let mask: Vec<bool> = pairs.iter().map(|&p| inside(line.0, line.1, p)).collect();
        let inliers: Vec<(f64, f64)> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        if inliers.len() < 2 {
            break;
        }
        let f = match config.refit {
            Refit::Ols => ols_line(&inliers)?,
            Refit::VarianceWeighted => variance_weighted_line(&inliers, line, 3)?,
        };
        line = (f.slope, f.intercept);
        fit = Some(LineFit { inlier_mask: mask, ..f });
    }
    fit.ok_or(Error::NoConsensus { required, best: count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstsqFit {
    pub coeffs: Vec<f64>,
    pub r2: f64,
}

/// Least-squares solution of an overdetermined system `A c = b` given as rows
/// `(a_i, b_i)`, by Householder QR.
pub fn lstsq(rows: &[(Vec<f64>, f64)]) -> Result<LstsqFit> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.0.len());
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!("need at least {n} rows for {n} unknowns, got {m}")));
    }
    if rows.iter().any(|r| r.0.len() != n) {
        return Err(Error::InvalidArgument("rows have different lengths".into()));
    }
    // column-major copy of A, plus rhs
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    let mut b: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let amax = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..n {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * amax {
            return Err(Error::RankDeficient);
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
                let s = 2.0 * dot / vnorm2;
                col[k..].iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
            }
            let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
            let s = 2.0 * dot / vnorm2;
            b[k..].iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
        }
    }
    let mut coeffs = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[j][k] * coeffs[j]).sum();
        coeffs[k] = (b[k] - s) / a[k][k];
    }
    let ybar = rows.iter().map(|r| r.1).sum::<f64>() / m as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, y) in rows {
        let pred: f64 = row.iter().zip(&coeffs).map(|(p, q)| p * q).sum();
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - ybar) * (y - ybar);
    }
    let scale = rows.iter().map(|r| r.1 * r.1).sum::<f64>();
    let r2 = if ss_tot <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        if ss_res <= 1e-20 * scale.max(f64::MIN_POSITIVE) {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LstsqFit { coeffs, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W test with Royston's (1992/1995) coefficient and p-value
/// approximations, valid for 3 <= n <= 5000.
pub fn shapiro_wilk(samples: &[f64]) -> Result<TestResult> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidArgument(format!("Shapiro-Wilk needs 3..=5000 samples, got {n}")));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::Degenerate("zero variance sample".into()));
    }
    let nf = n as f64;
    let half = n / 2;

    // coefficients for the upper half, a[i] pairs with x[n-1-i]
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (0..half).map(|i| -normal_quantile((i as f64 + 1.0 - 0.375) / (nf + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let u = 1.0 / nf.sqrt();
        let a1 = m[0] / ssumm2 + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        if n > 5 {
            let a2 = m[1] / ssumm2 + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[0] = a1;
            a[1] = a2;
            for i in 2..half {
                a[i] = m[i] / fac;
            }
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            a[0] = a1;
            for i in 1..half {
                a[i] = m[i] / fac;
            }
        }
    }

    // centre and scale by the range before forming W, to keep precision
    let xm = mean(&x);
    let z: Vec<f64> = x.iter().map(|v| (v - xm) / range).collect();
    let ssq: f64 = z.iter().map(|v| v * v).sum();
    let num: f64 = (0..half).map(|i| a[i] * (z[n - 1 - i] - z[i])).sum();
    let w = ((num * num) / ssq).min(1.0);

    let p = if n == 3 {
        let w = w.max(0.75);
        (6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin())).clamp(0.0, 1.0)
    } else {
        let w1 = (1.0 - w).max(f64::MIN_POSITIVE);
        if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], nf);
            let y = w1.ln();
            if y >= gamma {
                1e-19
            } else {
                let y = -(gamma - y).ln();
                let mu = poly(&[0.5440, -0.39978, 0.025054, -6.714e-4], nf);
                let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
                normal_sf((y - mu) / sigma)
            }
        } else {
            let ln_n = nf.ln();
            let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n);
            let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp();
            normal_sf((w1.ln() - mu) / sigma)
        }
    };
    Ok(TestResult { statistic: w, p_value: p.clamp(0.0, 1.0) })
}

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = f64::from(j);
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestResult> {
    ks_one_sample_impl(samples, &cdf, &cdf)
}

/// One-sample KS test against a distribution on a lattice; `cdf(x)` is
/// `P(X <= x)` and `cdf_below(x)` is `P(X < x)`. The asymptotic p-value is
/// conservative for discrete laws.
pub fn ks_one_sample_lattice<F, G>(samples: &[f64], cdf: F, cdf_below: G) -> Result<TestResult>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    ks_one_sample_impl(samples, &cdf, &cdf_below)
}

fn ks_one_sample_impl(samples: &[f64], cdf: &dyn Fn(f64) -> f64, below: &dyn Fn(f64) -> f64) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test needs a nonempty sample".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < x.len() {
        let v = x[i];
        let mut j = i;
        while j < x.len() && x[j] == v {
            j += 1;
        }
        d = d.max((j as f64 / n - cdf(v)).abs()).max((below(v) - i as f64 / n).abs());
        i = j;
    }
    let en = n.sqrt();
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d) })
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction applied to the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("KS test needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] == v {
            i += 1;
        }
        while j < nb && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = ((na * nb) as f64 / (na + nb) as f64).sqrt();
    let p = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    Ok(TestResult { statistic: d, p_value: p })
}
