//! Reference implementations used to cross-check the production code.
//!
//! Everything here is written directly from the defining formulas, with no
//! shared helpers from the rest of the crate, and evaluated in f64.

use num_complex::Complex64;

use crate::representation::Spectrogram;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Passes when `statistic <= tolerance`.
    pub fn at_most(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        OracleReport {
            name: name.into(),
            statistic,
            tolerance,
            pass: statistic <= tolerance,
        }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        OracleReport {
            name: name.into(),
            statistic,
            tolerance: threshold,
            pass: statistic >= threshold,
        }
    }

    pub const CSV_HEADER: &'static str = "name,statistic,tolerance,pass";

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{}", self.name, self.statistic, self.tolerance, self.pass)
    }
}

/// NT-Xent by explicit double loop: for every anchor `i` and its positive
/// `j`, `-log(exp(sim(i,j)/t) / sum_{k != i} exp(sim(i,k)/t))`.
pub fn oracle_nt_xent(views: &[Vec<f64>], temperature: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for k in 0..a.len() {
            dot += a[k] * b[k];
            na += a[k] * a[k];
            nb += b[k] * b[k];
        }
        dot / (na.sqrt() * nb.sqrt())
    };
    let n = views.len();
    let mut total = 0.0;
    for i in 0..n {
        let j = if i % 2 == 0 { i + 1 } else { i - 1 };
        let numerator = (cos(&views[i], &views[j]) / temperature).exp();
        let mut denominator = 0.0;
        for k in 0..n {
            if k != i {
                denominator += (cos(&views[i], &views[k]) / temperature).exp();
            }
        }
        total += -(numerator / denominator).ln();
    }
    total
}

/// Central finite-difference gradient of `f` at `x`.
pub fn oracle_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`: error relative to the
/// scale of the reference gradient.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// RMS delay spread of a power delay profile (second central moment).
pub fn rms_delay_spread(delays: &[f64], powers: &[f64]) -> f64 {
    let total: f64 = powers.iter().sum();
    let mean: f64 = delays.iter().zip(powers).map(|(d, p)| d * p).sum::<f64>() / total;
    let second: f64 = delays
        .iter()
        .zip(powers)
        .map(|(d, p)| (d - mean) * (d - mean) * p)
        .sum::<f64>()
        / total;
    second.sqrt()
}

/// Normalized autocorrelation `Re E[g(t) g*(t+lag)] / E|g|^2` of a set of
/// complex gain sequences at the given sample lags.
pub fn empirical_autocorrelation(series: &[Vec<Complex64>], lags: &[usize]) -> Vec<f64> {
    let mut power = 0.0;
    let mut count = 0usize;
    for s in series {
        for g in s {
            power += g.norm_sqr();
            count += 1;
        }
    }
    power /= count as f64;
    lags.iter()
        .map(|&lag| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for s in series {
                for t in 0..s.len().saturating_sub(lag) {
                    acc += (s[t] * s[t + lag].conj()).re;
                    n += 1;
                }
            }
            acc / n as f64 / power
        })
        .collect()
}

/// Mean of per-realization energies.
pub fn mean_energy(energies: &[f64]) -> f64 {
    energies.iter().sum::<f64>() / energies.len() as f64
}

/// Channel statistics over a population of realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub rms_delay_spread: f64,
    pub autocorr_curve: Vec<f64>,
    pub mean_energy: f64,
}

/// `taps` holds per realization the delays and one complex gain sequence per
/// tap. The delay spread is taken from the average PDP across realizations.
pub fn oracle_channel_stats(
    delays: &[f64],
    taps: &[Vec<Vec<Complex64>>],
    lags: &[usize],
) -> ChannelStats {
    let mut pdp = vec![0.0; delays.len()];
    let mut energies = Vec::new();
    let mut flat = Vec::new();
    for real in taps {
        let mut e = 0.0;
        for (l, seq) in real.iter().enumerate() {
            let p = seq[0].norm_sqr();
            pdp[l] += p;
            e += p;
            flat.push(seq.clone());
        }
        energies.push(e);
    }
    ChannelStats {
        rms_delay_spread: rms_delay_spread(delays, &pdp),
        autocorr_curve: empirical_autocorrelation(&flat, lags),
        mean_energy: mean_energy(&energies),
    }
}

/// Bessel function of the first kind, order 0, by Simpson integration of
/// `(1/pi) * int_0^pi cos(x sin t) dt`.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 2000;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = f(0.0) + f(std::f64::consts::PI);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(k as f64 * h);
    }
    s * h / 3.0 / std::f64::consts::PI
}

/// Direct `O(N^2)` DFT, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, v)| {
                    let ang = -2.0 * std::f64::consts::PI * (k * m % n) as f64 / n as f64;
                    v * Complex64::new(ang.cos(), ang.sin())
                })
                .sum()
        })
        .collect()
}

/// Per-frame index of the strongest bin.
pub fn oracle_ridge(spec: &Spectrogram) -> Vec<usize> {
    (0..spec.n_frames)
        .map(|f| {
            let mut best = 0;
            for b in 1..spec.n_bins {
                if spec.values[b * spec.n_frames + f] > spec.values[best * spec.n_frames + f] {
                    best = b;
                }
            }
            best
        })
        .collect()
}

/// Measured SNR in dB of `noisy` against the noiseless `clean` samples.
pub fn measured_snr_db(clean: &[Complex64], noisy: &[Complex64]) -> f64 {
    let ps: f64 = clean.iter().map(|c| c.norm_sqr()).sum();
    let pn: f64 = clean.iter().zip(noisy).map(|(c, n)| (n - c).norm_sqr()).sum();
    10.0 * (ps / pn).log10()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + x[1];
        let g = oracle_grad(f, &[0.7, -1.3], DEFAULT_FD_STEP);
        assert!((g[0] - (6.0 * 0.7 + 2.0 * 1.3)).abs() < 1e-9);
        assert!((g[1] - (-2.0 * 0.7 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn delay_spread_simple_profiles() {
        assert_eq!(rms_delay_spread(&[0.0], &[1.0]), 0.0);
        assert!((rms_delay_spread(&[0.0, 2.0e-7], &[1.0, 1.0]) - 1.0e-7).abs() < 1e-20);
    }

    #[test]
    fn bessel_known_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-12);
        assert!((bessel_j0(2.404_825_557_695_773)).abs() < 1e-10);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_oracle_zero() {
        let v = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(oracle_nt_xent(&v, 0.05).abs() < 1e-15);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]) - 1.0).abs() < 1e-12);
    }
}
