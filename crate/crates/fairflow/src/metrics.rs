//! Sliding-window unfairness index and revenue accounting.
//!
//! The unfairness index is the time average of (aggregate dropout rate) /
//! (aggregate arrival rate) over the trailing window `t_i`. Samples are
//! treated as piecewise-constant backwards in time: a sample recorded at `t`
//! carries the ratio over the interval since the previous sample, which makes
//! the integral exact for the stepwise signals produced by the simulator.

use std::collections::VecDeque;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("non-monotone timestamp: {t} is not after the last recorded {last}")]
    NonMonotoneTimestamp { t: f64, last: f64 },
}

/// Trailing window of (timestamp, dropout/arrival ratio) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessWindow<R> {
    samples: VecDeque<(R, R)>,
    horizon: R,
    /// Left edge of the oldest retained segment: the timestamp of the most
    /// recently evicted sample, or the history origin (time zero).
    left_edge: R,
}

impl<R: Real> FairnessWindow<R> {
    pub fn new(horizon: R) -> Self {
        Self {
            samples: VecDeque::new(),
            horizon,
            left_edge: R::zero(),
        }
    }

    pub fn horizon(&self) -> R {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Retained samples, oldest first.
    pub fn samples(&self) -> impl Iterator<Item = (R, R)> + '_ {
        self.samples.iter().copied()
    }

    pub fn last_timestamp(&self) -> Option<R> {
        self.samples.back().map(|&(t, _)| t)
    }

    /// Record the ratio observed over the interval ending at `t`. A zero
    /// arrival rate records ratio 0: no demand means no one is excluded.
    /// Samples that have fallen out of the window are evicted.
    pub fn record_sample(&mut self, t: R, dropout_rate: R, k: R) -> Result<(), MetricsError> {
        if let Some(&(last, _)) = self.samples.back() {
            if t <= last {
                return Err(MetricsError::NonMonotoneTimestamp {
                    t: t.as_f64(),
                    last: last.as_f64(),
                });
            }
        }
        let ratio = if k > R::zero() {
            (dropout_rate / k).max(R::zero())
        } else {
            R::zero()
        };
        self.samples.push_back((t, ratio));
        let cutoff = t - self.horizon;
        while let Some(&(t0, _)) = self.samples.front() {
            if t0 < cutoff {
                self.samples.pop_front();
                self.left_edge = t0;
            } else {
                break;
            }
        }
        Ok(())
    }

    /// Integral of the stored ratio signal over `[lo, hi]`.
    fn integral_over(&self, lo: R, hi: R) -> R {
        if hi <= lo {
            return R::zero();
        }
        let mut total = R::zero();
        let mut seg_left = self.left_edge;
        for &(t, ratio) in &self.samples {
            let a = seg_left.max(lo);
            let b = t.min(hi);
            if b > a {
                total = total + ratio * (b - a);
            }
            seg_left = t;
            if seg_left >= hi {
                break;
            }
        }
        total
    }

    /// Unfairness index at time `t`: the ratio integral over
    /// `[max(0, t - t_i), t]` divided by `min(t, t_i)`, so early in a run the
    /// index is a genuine average over the elapsed time rather than a
    /// full-window one.
    pub fn unfairness_index(&self, t: R) -> R {
        if self.samples.is_empty() {
            return R::zero();
        }
        let norm = t.min(self.horizon);
        if norm <= R::zero() {
            return R::zero();
        }
        let lo = (t - self.horizon).max(R::zero());
        self.integral_over(lo, t) / norm
    }

    /// Coefficients `(a, b)` such that the index at `t_now + t_d`, assuming
    /// the ratio equals some `r` over `(t_now, t_now + t_d]`, is `a + b * r`.
    pub fn prediction_coeffs(&self, t_now: R, t_d: R) -> (R, R) {
        let t_pred = t_now + t_d;
        let norm = t_pred.min(self.horizon);
        if norm <= R::zero() {
            return (R::zero(), R::zero());
        }
        let lo = (t_pred - self.horizon).max(R::zero());
        let history = self.integral_over(lo, t_now.min(t_pred));
        let ext = (t_pred - t_now.max(lo)).max(R::zero());
        (history / norm, ext / norm)
    }

    /// Unfairness index one window ahead, assuming the ratio equals
    /// `predicted_ratio` over `(t_now, t_now + t_d]` and history as recorded.
    pub fn predict_index(&self, t_now: R, t_d: R, predicted_ratio: R) -> R {
        let (a, b) = self.prediction_coeffs(t_now, t_d);
        a + b * predicted_ratio
    }
}

/// Running revenue total and the latest instantaneous revenue rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RevenueAccumulator<R> {
    pub total: R,
    pub last_rate: R,
}

impl<R: Real> RevenueAccumulator<R> {
    /// Accrue `p * alpha * z * dt` and remember the instantaneous rate.
    pub fn step(&mut self, p: R, alpha: R, z: R, dt: R) {
        let rate = p * alpha * z;
        self.total = self.total + rate * dt;
        self.last_rate = rate;
    }
}
