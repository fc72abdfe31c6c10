//! Small statistics helpers: moments, the two-sample Kolmogorov–Smirnov
//! test and log-linear fits.

use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|k| {
                let a = (2 * k - 1) as f64;
                (-a * a * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
}

impl KsResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Two-sample KS statistic with the asymptotic p-value
/// `P(K > sqrt(nm/(n+m))·D)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n * m) as f64 / (n + m) as f64;
    KsResult { statistic: d, p_value: kolmogorov_sf(en.sqrt() * d), n, m }
}

/// Least-squares line through `(x, ln y)`; returns `(slope, intercept)`.
/// Non-positive `y` values are skipped.
pub fn log_linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(x, y)| (*x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Some((slope, my - slope * mx))
}

/// Per-step geometric base `exp(slope)` of a sequence indexed `0, 1, …`.
pub fn geometric_base(ys: &[f64]) -> Option<f64> {
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    log_linear_fit(&xs, ys).map(|(s, _)| s.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values from scipy.stats: kstwobign.sf, and ks_2samp statistics
    #[test]
    fn kolmogorov_tail_matches_reference() {
        for (l, want) in [
            (0.5, 0.9639452436648751),
            (1.0, 0.26999967167735456),
            (1.358, 0.05002679733444698),
            (2.0, 0.0006709252557796953),
        ] {
            assert!((kolmogorov_sf(l) - want).abs() < 1e-10, "{l}");
        }
    }

    #[test]
    fn two_sample_matches_reference() {
        let x: Vec<f64> = (0..40).map(|i| (1.3 * i as f64).sin() * 2.0 + (0.1 * i as f64) % 1.7).collect();
        let y: Vec<f64> = (0..55).map(|i| (0.7 * i as f64).cos() * 2.2 + 0.3).collect();
        let r = ks_two_sample(&x, &y);
        assert!((r.statistic - 0.21818181818181814).abs() < 1e-12);
        assert!((r.p_value - 0.220252785521096).abs() < 1e-9);

        let x2: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let y2: Vec<f64> = (0..150).map(|i| ((i as f64 * 0.61) % 1.0).powf(1.3)).collect();
        let r = ks_two_sample(&x2, &y2);
        assert!((r.statistic - 0.11).abs() < 1e-12);
        assert!((r.p_value - 0.2507938452139255).abs() < 1e-9);
    }

    #[test]
    fn identical_samples_have_zero_statistic() {
        let x = vec![1.0, 3.0, 2.0, 2.0];
        let r = ks_two_sample(&x, &x);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn log_fit_recovers_geometric_rate() {
        let ys: Vec<f64> = (0..6).map(|i| 3.0 * 0.4f64.powi(i)).collect();
        assert!((geometric_base(&ys).unwrap() - 0.4).abs() < 1e-12);
        assert!(geometric_base(&[1.0]).is_none());
    }

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert!((std_error(&x) - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
