//! Small numerical routines shared across the crate: log-domain helpers,
//! incomplete gamma machinery for chi-square quantiles, and Gaussian densities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// log(sum(exp(x))) without overflow. Empty input yields -inf.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Force exact symmetry; cheap insurance after covariance updates.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix; used by validity checks.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Lanczos approximation, accurate to ~1e-13 for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x), by series for x < a + 1 and by
/// continued fraction otherwise.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let ln_norm = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series: P = x^a e^-x / Gamma(a) * sum_n x^n / (a (a+1) ... (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (ln_norm.exp() * sum).min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x)
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
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (ln_norm.exp() * h).min(1.0)
    }
}

/// Chi-square quantile by bisection on the regularized lower incomplete gamma.
pub fn chi2_quantile(prob: f64, dof: usize) -> Result<f64> {
    if !(0.0 < prob && prob < 1.0) {
        return Err(Error::Contract(format!(
            "chi2_quantile needs 0 < prob < 1, got {prob}"
        )));
    }
    if dof == 0 {
        return Err(Error::Contract("chi2_quantile needs dof >= 1".into()));
    }
    let a = dof as f64 / 2.0;
    let cdf = |x: f64| reg_lower_gamma(a, x / 2.0);
    let mut hi = 1.0;
    while cdf(hi) < prob {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical("chi2_quantile bracket blew up".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Log density of N(x; mean, cov). Fails if cov is not positive definite.
pub fn log_mvn_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = mean.len();
    if x.len() != n {
        return Err(Error::Dimension {
            what: "log_mvn_pdf argument",
            expected: n,
            got: x.len(),
        });
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance not positive definite".into()))?;
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let maha2 = diff.dot(&sol);
    Ok(-0.5 * (n as f64 * LN_2PI + ln_det + maha2))
}
