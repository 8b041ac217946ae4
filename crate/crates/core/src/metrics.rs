//! Undercount / overcount scoring of predicted heel strikes.
//!
//! Metric 1 cuts a segment at every ground-truth strike, metric 2 at the
//! midpoints between consecutive strikes, and metric 3 only compares totals
//! per segment. In each interval with `k` predicted strikes, `k = 0` is one
//! undercount and `k > 1` is `k - 1` overcounts. Rates divide event totals by
//! the number of ground-truth strikes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEval {
    pub segment: String,
    /// Ground-truth strike times, ascending.
    pub ground_truth: Vec<f64>,
    /// Predicted strike times, ascending.
    pub predicted: Vec<f64>,
    pub span: (f64, f64),
}

impl SegmentEval {
    pub fn new(
        segment: impl Into<String>,
        ground_truth: Vec<f64>,
        predicted: Vec<f64>,
        span: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = span;
        if lo > hi {
            return Err(Error::OrderViolation(format!("span [{lo}, {hi}] is reversed")));
        }
        for (name, times) in [("ground truth", &ground_truth), ("predicted", &predicted)] {
            if times.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::OrderViolation(format!("{name} times are not ascending")));
            }
            if times.iter().any(|&t| t < lo || t > hi) {
                return Err(Error::OrderViolation(format!(
                    "{name} time outside span [{lo}, {hi}]"
                )));
            }
        }
        Ok(SegmentEval {
            segment: segment.into(),
            ground_truth,
            predicted,
            span,
        })
    }
}

/// (undercount events, overcount events)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Events {
    pub under: u64,
    pub over: u64,
}

impl Events {
    pub const fn new(under: u64, over: u64) -> Self {
        Events { under, over }
    }
}

impl std::ops::AddAssign for Events {
    fn add_assign(&mut self, rhs: Self) {
        self.under += rhs.under;
        self.over += rhs.over;
    }
}

/// How metric 1 treats predictions outside `[T_1, T_N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric1Boundary {
    /// Predictions before `T_1` are overcounts; the last interval runs from
    /// `T_N` to the span end.
    #[default]
    ExtendToSpan,
    /// Only the `N - 1` intervals between strikes are scored.
    StrictBetweenStrikes,
}

/// Number of sorted `times` in `[lo, hi)`, or `[lo, hi]` when `closed`.
fn count_in(times: &[f64], lo: f64, hi: f64, closed: bool) -> usize {
    let a = times.partition_point(|&t| t < lo);
    let b = if closed {
        times.partition_point(|&t| t <= hi)
    } else {
        times.partition_point(|&t| t < hi)
    };
    b.saturating_sub(a)
}

fn score(k: usize) -> Events {
    match k {
        0 => Events::new(1, 0),
        k => Events::new(0, k as u64 - 1),
    }
}

pub fn metric1(eval: &SegmentEval, boundary: Metric1Boundary) -> Result<Events> {
    let gt = &eval.ground_truth;
    let n = gt.len();
    if n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let p = &eval.predicted;
    let mut ev = Events::default();
    for i in 0..n - 1 {
        ev += score(count_in(p, gt[i], gt[i + 1], false));
    }
    if boundary == Metric1Boundary::ExtendToSpan {
        ev += score(count_in(p, gt[n - 1], eval.span.1, true));
        ev.over += p.partition_point(|&t| t < gt[0]) as u64;
    }
    Ok(ev)
}

/// Interval boundaries for metric 2: span start, midpoints, span end.
pub fn metric2_bounds(eval: &SegmentEval) -> Vec<f64> {
    let gt = &eval.ground_truth;
    let mut b = Vec::with_capacity(gt.len() + 1);
    b.push(eval.span.0);
    b.extend(gt.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    b.push(eval.span.1);
    b
}

pub fn metric2(eval: &SegmentEval) -> Result<Events> {
    let n = eval.ground_truth.len();
    if n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let bounds = metric2_bounds(eval);
    let mut ev = Events::default();
    for i in 0..n {
        let closed = i == n - 1;
        ev += score(count_in(&eval.predicted, bounds[i], bounds[i + 1], closed));
    }
    Ok(ev)
}

pub fn metric3(eval: &SegmentEval) -> Events {
    let g = eval.ground_truth.len() as u64;
    let p = eval.predicted.len() as u64;
    Events::new(g.saturating_sub(p), p.saturating_sub(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRates {
    pub undercount_rate: f64,
    pub overcount_rate: f64,
    pub undercount_events: u64,
    pub overcount_events: u64,
}

impl MetricRates {
    fn from_events(ev: Events, total: u64) -> Self {
        MetricRates {
            undercount_rate: ev.under as f64 / total as f64,
            overcount_rate: ev.over as f64 / total as f64,
            undercount_events: ev.under,
            overcount_events: ev.over,
        }
    }

    pub fn combined(&self) -> f64 {
        self.undercount_rate + self.overcount_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepErrorReport {
    pub metric1: MetricRates,
    pub metric2: MetricRates,
    pub metric3: MetricRates,
    /// Sample-weighted fraction of correctly binarized samples.
    pub signal_accuracy: f64,
    pub total_steps: u64,
    pub segments: usize,
    pub skipped_segments: usize,
    /// Metric-1 overcounts that came from predictions before the first strike.
    pub metric1_leading_overcounts: u64,
}

impl StepErrorReport {
    pub fn metric(&self, m: usize) -> &MetricRates {
        match m {
            1 => &self.metric1,
            2 => &self.metric2,
            3 => &self.metric3,
            _ => panic!("metric index {m} out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub metric1_boundary: Metric1Boundary,
}

/// Sum events over segments with at least one ground-truth strike and turn
/// them into rates. `accuracies` holds `(accuracy, sample_count)` per scored
/// stretch of signal.
pub fn aggregate(
    evals: &[SegmentEval],
    accuracies: &[(f64, usize)],
    cfg: &MetricsConfig,
) -> Result<StepErrorReport> {
    let mut m1 = Events::default();
    let mut m2 = Events::default();
    let mut m3 = Events::default();
    let mut total = 0u64;
    let mut skipped = 0usize;
    let mut leading = 0u64;
    for ev in evals {
        if ev.ground_truth.is_empty() {
            log::debug!("segment `{}` has no ground-truth strikes; not scored", ev.segment);
            skipped += 1;
            continue;
        }
        m1 += metric1(ev, cfg.metric1_boundary)?;
        m2 += metric2(ev)?;
        m3 += metric3(ev);
        if cfg.metric1_boundary == Metric1Boundary::ExtendToSpan {
            leading += ev.predicted.partition_point(|&t| t < ev.ground_truth[0]) as u64;
        }
        total += ev.ground_truth.len() as u64;
    }
    if total == 0 {
        return Err(Error::NoValidSegments);
    }
    if skipped > 0 {
        log::info!("{skipped} segment(s) without ground-truth strikes left out of the rates");
    }
    let weight: usize = accuracies.iter().map(|&(_, n)| n).sum();
    let signal_accuracy = if weight == 0 {
        f64::NAN
    } else {
        accuracies.iter().map(|&(a, n)| a * n as f64).sum::<f64>() / weight as f64
    };
    Ok(StepErrorReport {
        metric1: MetricRates::from_events(m1, total),
        metric2: MetricRates::from_events(m2, total),
        metric3: MetricRates::from_events(m3, total),
        signal_accuracy,
        total_steps: total,
        segments: evals.len() - skipped,
        skipped_segments: skipped,
        metric1_leading_overcounts: leading,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(gt: &[f64], pred: &[f64], span: (f64, f64)) -> SegmentEval {
        SegmentEval::new("s", gt.to_vec(), pred.to_vec(), span).unwrap()
    }

    const EXT: Metric1Boundary = Metric1Boundary::ExtendToSpan;

    #[test]
    fn perfect_prediction_scores_nothing() {
        let gt = [1.0, 2.0, 3.0, 4.0];
        let e = eval(&gt, &gt, (0.5, 5.0));
        assert_eq!(metric1(&e, EXT).unwrap(), Events::new(0, 0));
        assert_eq!(metric2(&e).unwrap(), Events::new(0, 0));
        assert_eq!(metric3(&e), Events::new(0, 0));
    }

    #[test]
    fn metric1_hand_case() {
        let e = eval(&[1.0, 2.0, 3.0], &[1.1, 1.2, 2.5], (0.0, 4.0));
        assert_eq!(metric1(&e, EXT).unwrap(), Events::new(1, 1));
    }

    #[test]
    fn metric2_forgives_early_then_late() {
        let e = eval(&[2.0, 4.0], &[2.9, 3.1], (0.0, 6.0));
        assert_eq!(metric2(&e).unwrap(), Events::new(0, 0));
        assert_eq!(metric1(&e, EXT).unwrap(), Events::new(1, 1));
    }

    #[test]
    fn alternating_offsets() {
        // six strikes; predictions alternate late (+0.3) and early (-0.3)
        let gt = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let pred = [1.3, 1.7, 3.3, 3.7, 5.3, 5.7];
        let e = eval(&gt, &pred, (0.5, 6.5));
        // between strikes: [1,2): 2  [2,3): 0  [3,4): 2  [4,5): 0  [5,6): 2
        assert_eq!(
            metric1(&e, Metric1Boundary::StrictBetweenStrikes).unwrap(),
            Events::new(2, 3)
        );
        // the closing [6, 6.5] interval is empty
        assert_eq!(metric1(&e, EXT).unwrap(), Events::new(3, 3));
        assert_eq!(metric2(&e).unwrap(), Events::new(0, 0));
        assert_eq!(metric3(&e), Events::new(0, 0));
    }

    #[test]
    fn strict_mode_ignores_the_edges() {
        let e = eval(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5, 3.6], (0.0, 4.0));
        assert_eq!(metric1(&e, Metric1Boundary::StrictBetweenStrikes).unwrap(), Events::new(0, 0));
        assert_eq!(metric1(&e, EXT).unwrap(), Events::new(0, 2));
    }

    #[test]
    fn metric3_subtracts() {
        let gt: Vec<f64> = (1..=10).map(f64::from).collect();
        let e = eval(&gt, &gt[..7], (0.0, 11.0));
        assert_eq!(metric3(&e), Events::new(3, 0));
    }

    #[test]
    fn empty_ground_truth() {
        let e = eval(&[], &[1.0], (0.0, 2.0));
        assert!(matches!(metric1(&e, EXT), Err(Error::EmptyGroundTruth)));
        assert!(matches!(metric2(&e), Err(Error::EmptyGroundTruth)));
        let cfg = MetricsConfig::default();
        assert!(matches!(aggregate(&[e.clone()], &[], &cfg), Err(Error::NoValidSegments)));
        let ok = eval(&[1.0], &[1.0], (0.0, 2.0));
        let r = aggregate(&[e, ok], &[(1.0, 10)], &cfg).unwrap();
        assert_eq!(r.skipped_segments, 1);
        assert_eq!(r.total_steps, 1);
    }

    #[test]
    fn aggregate_rates() {
        // 15 strikes each; one segment undercounts once, the other overcounts twice
        let gt: Vec<f64> = (1..=15).map(f64::from).collect();
        let mut missing = gt.clone();
        missing.remove(7);
        let mut extra = gt.clone();
        extra.push(15.2);
        extra.push(15.4);
        let a = eval(&gt, &missing, (0.0, 16.0));
        let b = eval(&gt, &extra, (0.0, 16.0));
        assert_eq!(metric3(&a), Events::new(1, 0));
        assert_eq!(metric3(&b), Events::new(0, 2));
        let r = aggregate(&[a, b], &[(1.0, 100), (0.5, 100)], &MetricsConfig::default()).unwrap();
        assert_eq!(r.total_steps, 30);
        assert!((r.metric3.undercount_rate - 1.0 / 30.0).abs() < 1e-15);
        assert!((r.metric3.overcount_rate - 2.0 / 30.0).abs() < 1e-15);
        assert!((r.signal_accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_span() {
        assert!(SegmentEval::new("s", vec![1.0], vec![3.0], (0.0, 2.0)).is_err());
        assert!(SegmentEval::new("s", vec![2.0, 1.0], vec![], (0.0, 2.0)).is_err());
    }
}
