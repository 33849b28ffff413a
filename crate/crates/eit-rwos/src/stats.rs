//! Moment accumulation, order-of-convergence fitting and the efficiency
//! metric variance x time.

/// Streaming mean / variance accumulator with exact pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combine two accumulators as if their samples had been pooled.
    pub fn merge(self, other: RunningMoments) -> RunningMoments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 =
            self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        RunningMoments { n, mean, m2 }
    }

    /// Rebuild an accumulator from reported (n, mean, variance).
    pub fn from_parts(n: u64, mean: f64, variance: f64) -> Self {
        RunningMoments { n, mean, m2: variance * n.saturating_sub(1) as f64 }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Paired accumulator tracking the covariance of two per-sample scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairedMoments {
    n: u64,
    mean: [f64; 2],
    m2: [f64; 2],
    m11: f64,
}

impl PairedMoments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let nf = self.n as f64;
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        self.mean[0] += dx / nf;
        self.mean[1] += dy / nf;
        self.m2[0] += dx * (x - self.mean[0]);
        self.m2[1] += dy * (y - self.mean[1]);
        self.m11 += dx * (y - self.mean[1]);
    }

    pub fn merge(self, o: PairedMoments) -> PairedMoments {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let w = self.n as f64 * o.n as f64 / n as f64;
        let dx = o.mean[0] - self.mean[0];
        let dy = o.mean[1] - self.mean[1];
        PairedMoments {
            n,
            mean: [
                self.mean[0] + dx * o.n as f64 / n as f64,
                self.mean[1] + dy * o.n as f64 / n as f64,
            ],
            m2: [self.m2[0] + o.m2[0] + dx * dx * w, self.m2[1] + o.m2[1] + dy * dy * w],
            m11: self.m11 + o.m11 + dx * dy * w,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn means(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }

    pub fn variances(&self) -> (f64, f64) {
        if self.n < 2 {
            (0.0, 0.0)
        } else {
            let d = (self.n - 1) as f64;
            (self.m2[0] / d, self.m2[1] / d)
        }
    }

    pub fn covariance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m11 / (self.n - 1) as f64
        }
    }

    /// Moments of the linear combination x + c*y.
    pub fn combined(&self, c: f64) -> RunningMoments {
        let (v0, v1) = self.variances();
        let var = v0 + c * c * v1 + 2.0 * c * self.covariance();
        RunningMoments {
            n: self.n,
            mean: self.mean[0] + c * self.mean[1],
            m2: var * (self.n.saturating_sub(1)) as f64,
        }
    }
}

/// Least-squares fit of log |bias| against log h.
#[derive(Debug, Clone)]
pub struct EocFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: Vec<(f64, f64)>,
}

/// Fit the estimated order of convergence from (h, bias) pairs.
/// Zero-bias points are dropped.
pub fn fit_eoc(pairs: &[(f64, f64)]) -> EocFit {
    let points: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|&&(_, b)| b != 0.0)
        .map(|&(h, b)| (h.ln(), b.abs().ln()))
        .collect();
    assert!(points.len() >= 2, "fit_eoc needs at least two nonzero-bias points");
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual = points
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        .sqrt();
    EocFit { slope, intercept, residual, points }
}

/// Efficiency C = sample variance x computational time; lower is better.
#[derive(Debug, Clone, Copy)]
pub struct EfficiencyRecord {
    pub variance: f64,
    pub wall_time: f64,
    pub c: f64,
}

pub fn efficiency(moments: &RunningMoments, wall_time: f64) -> EfficiencyRecord {
    let variance = moments.variance();
    EfficiencyRecord { variance, wall_time, c: variance * wall_time }
}
