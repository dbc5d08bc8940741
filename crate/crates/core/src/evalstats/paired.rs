use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{param, Result};

/// Paired comparison over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTestResult {
    pub label: String,
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    /// Two-sided paired t-test; `None` when the deltas have zero variance.
    pub p_t: Option<f64>,
    /// Exact two-sided sign test (zero deltas dropped).
    pub p_sign: f64,
    pub n: usize,
}

impl PairedTestResult {
    pub fn t_degenerate(&self) -> bool {
        self.p_t.is_none()
    }

    /// The t-test p-value when defined, else the sign-test p-value.
    pub fn p_value(&self) -> f64 {
        self.p_t.unwrap_or(self.p_sign)
    }

    /// `+0.031 (p=2.1e-05, n=15)`.
    pub fn summary(&self) -> String {
        let p = match self.p_t {
            Some(p) => format!("p={p:.1e}"),
            None => format!("p_sign={:.1e}", self.p_sign),
        };
        format!("{:+.3} ({p}, n={})", self.mean_delta, self.n)
    }
}

/// `P(X <= m)` for `X ~ Binomial(n, 1/2)`.
fn binom_half_cdf(m: usize, n: usize) -> f64 {
    // accumulate in log space to stay finite for large n
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut total = 0.0;
    for i in 0..=m.min(n) {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        total += (ln_c + ln_half_n).exp();
    }
    total.min(1.0)
}

pub fn sign_test(deltas: &[f64]) -> f64 {
    let pos = deltas.iter().filter(|d| **d > 0.0).count();
    let neg = deltas.iter().filter(|d| **d < 0.0).count();
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    (2.0 * binom_half_cdf(pos.min(neg), n)).min(1.0)
}

pub fn paired_test(label: impl Into<String>, deltas: &[f64]) -> Result<PairedTestResult> {
    let n = deltas.len();
    if n < 3 {
        return param(format!("paired test needs n >= 3, got {n}"));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return param("paired test: non-finite delta");
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let p_t = if sd <= 1e-12 * scale || sd == 0.0 {
        None
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 3");
        Some((2.0 * dist.sf(t.abs())).clamp(f64::MIN_POSITIVE, 1.0))
    };
    Ok(PairedTestResult {
        label: label.into(),
        deltas: deltas.to_vec(),
        mean_delta: mean,
        p_t,
        p_sign: sign_test(deltas).max(f64::MIN_POSITIVE),
        n,
    })
}
