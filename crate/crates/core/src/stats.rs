//! Small numerical helpers: reproducible reductions, running moments and
//! least-squares slope fits.

/// Pairwise (tree) summation. The order of additions only depends on the
/// slice length, so the result is reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `log(sum(exp(xs)))` with max subtraction. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Welford accumulator for a scalar stream.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Mean and sample standard deviation (zero when `xs.len() < 2`).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&ss) / (n - 1) as f64).sqrt())
}

/// Mean with a normal-approximation 95% confidence interval
/// `mean ± 1.96·sd/√R`.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64, f64) {
    let (mean, sd) = mean_sd(xs);
    let half = if xs.len() < 2 {
        0.0
    } else {
        1.96 * sd / (xs.len() as f64).sqrt()
    };
    (mean, mean - half, mean + half)
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    ols_slope(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1e6, -1e6]);
        assert!((v - (-1e6 + 2f64.ln())).abs() < 1e-9);
        assert!((log_sum_exp(&[0.0, f64::NEG_INFINITY])).abs() < 1e-15);
    }

    #[test]
    fn running_moments_agree_with_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 8.0];
        let mut acc = RunningMoments::default();
        xs.iter().for_each(|&x| acc.push(x));
        let (mean, sd) = mean_sd(&xs);
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance().sqrt() - sd).abs() < 1e-12);
    }

    #[test]
    fn single_sample_ci_collapses() {
        let (m, lo, hi) = mean_ci95(&[3.5]);
        assert_eq!((m, lo, hi), (3.5, 3.5, 3.5));
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (1..50).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.5)).collect();
        assert!((log_log_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    }
}
