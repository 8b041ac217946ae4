//! Windowing of labeled spans, fold construction, input standardization and
//! minibatch order.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::UsableSpan;
use crate::labeling::StrideSignal;
use crate::neural::{WindowSource, INPUT_CHANNELS};

pub const DEFAULT_TIMESTEPS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 256;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowExample {
    /// (timesteps, 6), channel order rotX rotY rotZ accX accY accZ
    pub inputs: Array2<f64>,
    pub target_seq: Array1<f64>,
    pub slice_id: String,
    /// Index of the window's last sample within its slice.
    pub end_index: usize,
}

pub fn span_id(span: &UsableSpan) -> String {
    format!(
        "{}/{}/{}@{}",
        span.participant_id, span.path_id, span.segment_id, span.lo
    )
}

/// Inputs of a span as an (L, 6) matrix.
pub fn span_inputs(span: &UsableSpan) -> Array2<f64> {
    let mut m = Array2::zeros((span.samples.len(), INPUT_CHANNELS));
    for (mut row, s) in m.rows_mut().into_iter().zip(&span.samples) {
        row.assign(&ndarray::ArrayView1::from(&s.channels()));
    }
    m
}

/// One stride-1 window per end position `timesteps - 1 ..= len - 1`.
pub fn make_windows(span: &UsableSpan, sig: &StrideSignal, timesteps: usize) -> Result<Vec<WindowExample>> {
    let len = span.samples.len();
    if sig.len() != len {
        return Err(Error::LengthMismatch {
            left: len,
            right: sig.len(),
        });
    }
    if timesteps == 0 || len < timesteps {
        return Err(Error::SliceTooShort { len, timesteps });
    }
    let inputs = span_inputs(span);
    let id = span_id(span);
    Ok((timesteps - 1..len)
        .map(|e| {
            let lo = e + 1 - timesteps;
            WindowExample {
                inputs: inputs.slice(ndarray::s![lo..=e, ..]).to_owned(),
                target_seq: sig.values[lo..=e].iter().map(|&v| f64::from(v)).collect(),
                slice_id: id.clone(),
                end_index: e,
            }
        })
        .collect())
}

impl WindowSource for [WindowExample] {
    fn len(&self) -> usize {
        <[WindowExample]>::len(self)
    }

    fn timesteps(&self) -> usize {
        self.first().map_or(0, |w| w.target_seq.len())
    }

    fn window(&self, idx: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let w = &self[idx];
        (w.inputs.view(), w.target_seq.as_slice().expect("owned vector"))
    }
}

/// A labeled, standardized slice kept whole; windows are views into it.
#[derive(Debug, Clone)]
pub struct PreparedSlice {
    pub id: String,
    pub participant_id: String,
    pub times: Vec<f64>,
    /// (L, 6)
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
    pub scored_steps: Vec<f64>,
}

/// Windows addressed as `(slice, end index)` over a set of prepared slices,
/// so overlapping windows share storage.
#[derive(Debug, Clone)]
pub struct SliceWindows<'a> {
    pub slices: &'a [PreparedSlice],
    pub refs: Vec<(usize, usize)>,
    pub timesteps: usize,
}

impl WindowSource for SliceWindows<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn window(&self, idx: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (s, e) = self.refs[idx];
        let slice = &self.slices[s];
        let lo = e + 1 - self.timesteps;
        (
            slice.inputs.slice(ndarray::s![lo..=e, ..]),
            &slice.labels[lo..=e],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Vec<usize>>,
}

impl SplitPlan {
    /// Check that train, test and validation are pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<_> = self.train.iter().collect();
        let test: BTreeSet<_> = self.test.iter().collect();
        let overlap = |a: &BTreeSet<&usize>, b: &BTreeSet<&usize>| a.intersection(b).next().is_some();
        let mut bad = overlap(&train, &test);
        if let Some(v) = &self.validation {
            let val: BTreeSet<_> = v.iter().collect();
            bad |= overlap(&val, &train) || overlap(&val, &test);
        }
        if bad {
            return Err(Error::InvalidConfig(format!("split `{}` is not disjoint", self.name)));
        }
        Ok(())
    }
}

/// Shuffle `0..n` with `seed` and cut it into `k` folds whose sizes differ
/// by at most one. Plan `i` tests on fold `i`.
pub fn split_mixed_kfold(n: usize, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewExamples { needed: k, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[0xf01d]));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(&order[at..at + size]);
        at += size;
    }
    Ok((0..k)
        .map(|i| {
            let mut test = folds[i].to_vec();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            train.sort_unstable();
            SplitPlan {
                name: format!("cv{i}"),
                train,
                test,
                validation: None,
            }
        })
        .collect())
}

/// Hold out every example of `held`; optionally also hold out `validation`.
/// `participants[i]` is the participant of example `i`.
pub fn split_leave_one_out<S: AsRef<str>>(
    participants: &[S],
    held: &str,
    validation: Option<&str>,
) -> Result<SplitPlan> {
    let distinct: BTreeSet<&str> = participants.iter().map(|p| p.as_ref()).collect();
    if distinct.len() < 2 {
        return Err(Error::SingleParticipant);
    }
    for p in std::iter::once(held).chain(validation) {
        if !distinct.contains(p) {
            return Err(Error::UnknownParticipant(p.to_string()));
        }
    }
    if validation == Some(held) {
        return Err(Error::InvalidConfig("validation participant equals the test participant".into()));
    }
    if validation.is_some() && distinct.len() < 3 {
        return Err(Error::TooFewParticipants {
            needed: 3,
            got: distinct.len(),
        });
    }
    let mut plan = SplitPlan {
        name: match validation {
            Some(v) => format!("test={held},valid={v}"),
            None => format!("test={held}"),
        },
        train: Vec::new(),
        test: Vec::new(),
        validation: validation.map(|_| Vec::new()),
    };
    for (i, p) in participants.iter().enumerate() {
        let p = p.as_ref();
        if p == held {
            plan.test.push(i);
        } else if Some(p) == validation {
            plan.validation.as_mut().expect("set above").push(i);
        } else {
            plan.train.push(i);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; INPUT_CHANNELS],
    pub std: [f64; INPUT_CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; INPUT_CHANNELS],
            std: [1.0; INPUT_CHANNELS],
        }
    }

    pub fn apply_rows(&self, m: &mut Array2<f64>) {
        for mut row in m.rows_mut() {
            for c in 0..INPUT_CHANNELS {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Per-channel mean and population standard deviation over every row of
/// every training window. Each channel is shifted by its first value before
/// summing to limit cancellation.
pub fn fit_norm_stats<'a, I>(windows: I) -> Result<NormStats>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let mut shift: Option<[f64; INPUT_CHANNELS]> = None;
    let mut sum = [0.0; INPUT_CHANNELS];
    let mut sq = [0.0; INPUT_CHANNELS];
    let mut n = 0usize;
    for w in windows {
        if w.ncols() != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch(format!("window with {} channels", w.ncols())));
        }
        for row in w.rows() {
            let k = *shift.get_or_insert_with(|| std::array::from_fn(|c| row[c]));
            for c in 0..INPUT_CHANNELS {
                let d = row[c] - k[c];
                sum[c] += d;
                sq[c] += d * d;
            }
            n += 1;
        }
    }
    let Some(k) = shift else {
        return Err(Error::EmptyTrainSet);
    };
    let nf = n as f64;
    let mut stats = NormStats::identity();
    for c in 0..INPUT_CHANNELS {
        let m = sum[c] / nf;
        stats.mean[c] = k[c] + m;
        stats.std[c] = (sq[c] / nf - m * m).max(0.0).sqrt().max(STD_FLOOR);
    }
    Ok(stats)
}

pub fn apply_norm(example: &WindowExample, stats: &NormStats) -> WindowExample {
    let mut out = example.clone();
    stats.apply_rows(&mut out.inputs);
    out
}

/// The batches of one epoch: a seeded shuffle of `0..n` cut into runs of
/// `batch_size`, the last one possibly short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let bs = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[0xba7c, epoch]));
    order.chunks(bs).map(<[usize]>::to_vec).collect()
}

/// Endless minibatch stream, reshuffled every epoch.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> BatchStream {
    BatchStream {
        n,
        batch_size: batch_size.max(1),
        seed,
        epoch: 0,
        pending: epoch_batches(n, batch_size, seed, 0).into_iter(),
    }
}

impl BatchStream {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.n == 0 {
            return None;
        }
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.epoch += 1;
        self.pending = epoch_batches(self.n, self.batch_size, self.seed, self.epoch).into_iter();
        self.pending.next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Foot, SensorSample, StepEvent};
    use crate::labeling::build_square_wave;

    fn span(len: usize) -> UsableSpan {
        UsableSpan {
            participant_id: "p".into(),
            path_id: "x".into(),
            segment_id: "s".into(),
            lo: 0.0,
            hi: len as f64,
            steps: vec![StepEvent {
                t: 0.0,
                foot: Foot::Left,
            }],
            samples: (0..len)
                .map(|i| SensorSample::from_channels(i as f64 * 0.04, [i as f64; 6]))
                .collect(),
            sample_period: 0.04,
        }
    }

    #[test]
    fn window_counts() {
        let s = span(53);
        let sig = build_square_wave(&s.steps, &s.times());
        let w = make_windows(&s, &sig, 50).unwrap();
        assert_eq!(w.iter().map(|x| x.end_index).collect::<Vec<_>>(), vec![49, 50, 51, 52]);
        assert_eq!(w[1].inputs[[0, 0]], 1.0);
        assert_eq!(w[1].inputs.nrows(), 50);
        let exact = span(50);
        let sig = build_square_wave(&exact.steps, &exact.times());
        assert_eq!(make_windows(&exact, &sig, 50).unwrap().len(), 1);
        let short = span(49);
        let sig = build_square_wave(&short.steps, &short.times());
        assert!(matches!(
            make_windows(&short, &sig, 50),
            Err(Error::SliceTooShort { len: 49, timesteps: 50 })
        ));
    }

    #[test]
    fn kfold_shapes() {
        let plans = split_mixed_kfold(10, 10, 1).unwrap();
        assert_eq!(plans.len(), 10);
        assert!(plans.iter().all(|p| p.test.len() == 1 && p.train.len() == 9));
        let mut tested: Vec<usize> = plans.iter().flat_map(|p| p.test.clone()).collect();
        tested.sort_unstable();
        assert_eq!(tested, (0..10).collect::<Vec<_>>());
        assert_eq!(plans[3].name, "cv3");
        assert!(split_mixed_kfold(3, 10, 1).is_err());
        assert!(split_mixed_kfold(30, 1, 1).is_err());
    }

    #[test]
    fn kfold_seeding() {
        let a = split_mixed_kfold(100, 10, 7).unwrap();
        let b = split_mixed_kfold(100, 10, 7).unwrap();
        let c = split_mixed_kfold(100, 10, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let sizes: Vec<usize> = split_mixed_kfold(103, 10, 0).unwrap().iter().map(|p| p.test.len()).collect();
        assert_eq!(sizes, vec![11, 11, 11, 10, 10, 10, 10, 10, 10, 10]);
    }

    #[test]
    fn leave_one_out() {
        let who = ["1", "1", "2", "3", "2", "3"];
        let p = split_leave_one_out(&who, "2", None).unwrap();
        assert_eq!(p.test, vec![2, 4]);
        assert_eq!(p.train, vec![0, 1, 3, 5]);
        let v = split_leave_one_out(&who, "2", Some("3")).unwrap();
        assert_eq!(v.validation, Some(vec![3, 5]));
        assert_eq!(v.train, vec![0, 1]);
        v.validate().unwrap();
        assert!(matches!(split_leave_one_out(&who, "9", None), Err(Error::UnknownParticipant(_))));
        assert!(matches!(split_leave_one_out(&["1", "1"], "1", None), Err(Error::SingleParticipant)));
        let two = split_leave_one_out(&["a", "b"], "b", None).unwrap();
        assert_eq!((two.train, two.test), (vec![0], vec![1]));
    }

    #[test]
    fn norm_stats() {
        let w = Array2::from_shape_vec((2, 6), vec![1.0, 0.0, 5.0, 5.0, 5.0, 5.0, 3.0, 0.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let s = fit_norm_stats([w.view()]).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[1], STD_FLOOR);
        let ex = WindowExample {
            inputs: w,
            target_seq: Array1::zeros(2),
            slice_id: "s".into(),
            end_index: 1,
        };
        let n = apply_norm(&ex, &s);
        assert_eq!(n.inputs.column(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(n.inputs.column(0).to_vec(), vec![-1.0, 1.0]);
        assert!(matches!(fit_norm_stats(std::iter::empty()), Err(Error::EmptyTrainSet)));
    }

    #[test]
    fn normalized_train_is_centered() {
        let s = span(300);
        let sig = build_square_wave(&s.steps, &s.times());
        let mut ws = make_windows(&s, &sig, 20).unwrap();
        for w in &mut ws {
            w.inputs.mapv_inplace(|v| 1e3 + v.sin() * 7.0);
        }
        let stats = fit_norm_stats(ws.iter().map(|w| w.inputs.view())).unwrap();
        let normed: Vec<_> = ws.iter().map(|w| apply_norm(w, &stats)).collect();
        let again = fit_norm_stats(normed.iter().map(|w| w.inputs.view())).unwrap();
        for c in 0..6 {
            assert!(again.mean[c].abs() < 1e-10, "{}", again.mean[c]);
        }
    }

    #[test]
    fn batch_sizes() {
        let sizes: Vec<usize> = epoch_batches(1000, 256, 3, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![256, 256, 256, 232]);
        assert_eq!(epoch_batches(7, 1, 3, 0).len(), 7);
        let a: Vec<_> = make_batches(10, 4, 5).take(6).collect();
        let b: Vec<_> = make_batches(10, 4, 5).take(6).collect();
        assert_eq!(a, b);
        // second epoch reshuffles
        assert_ne!(a[..3], a[3..]);
        let mut all: Vec<usize> = a[3..].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
