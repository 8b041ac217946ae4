use std::ops::Range;

use ndarray::ArrayView2;

use super::lstm::{forward_batch, stack_time_major};
use super::LstmModel;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

const INFER_BATCH: usize = 128;

/// Predicted signal at positions `range` of a slice with inputs (L, 6).
///
/// Position `e >= timesteps - 1` takes the last output of the window ending
/// at `e`. Earlier positions lack a full history and take the intermediate
/// outputs of the first window. Dropout is never applied.
pub fn predict_positions(
    model: &LstmModel,
    inputs: ArrayView2<'_, f64>,
    timesteps: usize,
    range: Range<usize>,
    exec: Execution,
) -> Result<Vec<f64>> {
    let len = inputs.nrows();
    if timesteps == 0 || len < timesteps {
        return Err(Error::SliceTooShort { len, timesteps });
    }
    if range.end > len {
        return Err(Error::ShapeMismatch(format!("positions {range:?} in a slice of {len}")));
    }
    if range.is_empty() {
        return Ok(Vec::new());
    }
    let first_end = timesteps - 1;
    let ends: Vec<usize> = (range.start.max(first_end)..range.end.max(first_end + 1)).collect();
    let groups: Vec<&[usize]> = ends.chunks(INFER_BATCH).collect();
    let need_prefix = range.start < first_end;
    let outputs = par::map(exec, &groups, |group| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let windows: Vec<ArrayView2<'_, f64>> = group
            .iter()
            .map(|&e| inputs.slice_move(ndarray::s![e + 1 - timesteps..=e, ..]))
            .collect();
        let x = stack_time_major(&windows);
        let cache = forward_batch::<rand_chacha::ChaCha8Rng>(model, x.view(), None)?;
        let y = cache.outputs();
        let last = y.row(timesteps - 1).to_vec();
        let prefix = (need_prefix && group[0] == first_end).then(|| y.column(0).to_vec());
        Ok((last, prefix))
    });
    let mut last = Vec::with_capacity(ends.len());
    let mut prefix = None;
    for r in outputs {
        let (l, p) = r?;
        last.extend(l);
        prefix = prefix.or(p);
    }
    let base = ends[0];
    Ok(range
        .map(|p| {
            if p < first_end {
                prefix.as_ref().expect("first window computed")[p]
            } else {
                last[p - base]
            }
        })
        .collect())
}

/// Predicted signal for every position of a slice.
pub fn predict_slice(model: &LstmModel, inputs: ArrayView2<'_, f64>, timesteps: usize, exec: Execution) -> Result<Vec<f64>> {
    predict_positions(model, inputs, timesteps, 0..inputs.nrows(), exec)
}
