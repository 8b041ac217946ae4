use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LstmLayerParams, LstmModel, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Squared error of the final timestep only.
    LastOutput,
    /// Mean squared error over every timestep. The default: the first
    /// positions of every slice are predicted from intermediate outputs,
    /// which only this mode trains.
    #[default]
    FullSequence,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one layer over a whole batch, time-major. Rows of the
/// `(steps * batch, _)` matrices are ordered `t * batch + b`.
#[derive(Debug, Clone)]
struct LayerCache {
    /// (T*B, D) layer input
    x: Array2<f64>,
    /// (T*B, 4H) gate activations i, f, g, o
    act: Array2<f64>,
    /// ((T+1)*B, H) cell state, first block is the zero initial state
    c: Array2<f64>,
    /// ((T+1)*B, H) hidden state, first block is the zero initial state
    h: Array2<f64>,
    /// (T*B, H)
    tanh_c: Array2<f64>,
}

fn view2(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("contiguous block")
}

fn view2_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("contiguous block")
}

fn layer_forward(p: &LstmLayerParams, x: Array2<f64>, steps: usize, batch: usize) -> LayerCache {
    let hs = p.hidden();
    let g4 = 4 * hs;
    let mut act = Array2::zeros((steps * batch, g4));
    general_mat_mul(1.0, &x, &p.w_x.t(), 0.0, &mut act);
    act += &p.b;
    let mut c = Array2::<f64>::zeros(((steps + 1) * batch, hs));
    let mut h = Array2::<f64>::zeros(((steps + 1) * batch, hs));
    let mut tanh_c = Array2::<f64>::zeros((steps * batch, hs));
    let block = batch * hs;
    {
        let act_s = act.as_slice_mut().expect("standard layout");
        let c_s = c.as_slice_mut().expect("standard layout");
        let h_s = h.as_slice_mut().expect("standard layout");
        let tc_s = tanh_c.as_slice_mut().expect("standard layout");
        for t in 0..steps {
            let z = &mut act_s[t * batch * g4..(t + 1) * batch * g4];
            let (h_done, h_rest) = h_s.split_at_mut((t + 1) * block);
            let h_prev = &h_done[t * block..];
            let h_new = &mut h_rest[..block];
            general_mat_mul(
                1.0,
                &view2(h_prev, batch, hs),
                &p.w_h.t(),
                1.0,
                &mut view2_mut(z, batch, g4),
            );
            let (c_done, c_rest) = c_s.split_at_mut((t + 1) * block);
            let c_prev = &c_done[t * block..];
            let c_new = &mut c_rest[..block];
            let tc = &mut tc_s[t * block..(t + 1) * block];
            for b in 0..batch {
                let zr = &mut z[b * g4..(b + 1) * g4];
                for j in 0..hs {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[hs + j]);
                    let g = zr[2 * hs + j].tanh();
                    let o = sigmoid(zr[3 * hs + j]);
                    zr[j] = i;
                    zr[hs + j] = f;
                    zr[2 * hs + j] = g;
                    zr[3 * hs + j] = o;
                    let k = b * hs + j;
                    let cv = f * c_prev[k] + i * g;
                    let th = cv.tanh();
                    c_new[k] = cv;
                    tc[k] = th;
                    h_new[k] = o * th;
                }
            }
        }
    }
    LayerCache {
        x,
        act,
        c,
        h,
        tanh_c,
    }
}

/// Gradients of one layer plus, optionally, the gradient w.r.t. its input.
fn layer_backward(
    p: &LstmLayerParams,
    cache: &LayerCache,
    dh_out: &Array2<f64>,
    steps: usize,
    batch: usize,
    want_dx: bool,
) -> (LstmLayerParams, Option<Array2<f64>>) {
    let hs = p.hidden();
    let g4 = 4 * hs;
    let block = batch * hs;
    let mut dz = Array2::<f64>::zeros((steps * batch, g4));
    let mut dh_next = Array2::<f64>::zeros((batch, hs));
    let mut dc_next = vec![0.0; block];
    let act = cache.act.as_slice().expect("standard layout");
    let c_s = cache.c.as_slice().expect("standard layout");
    let tc_s = cache.tanh_c.as_slice().expect("standard layout");
    let dho = dh_out.as_slice().expect("standard layout");
    {
        let dz_s = dz.as_slice_mut().expect("standard layout");
        for t in (0..steps).rev() {
            let a = &act[t * batch * g4..(t + 1) * batch * g4];
            let c_prev = &c_s[t * block..(t + 1) * block];
            let tc = &tc_s[t * block..(t + 1) * block];
            let dh_in = &dho[t * block..(t + 1) * block];
            let dz_t = &mut dz_s[t * batch * g4..(t + 1) * batch * g4];
            let dhn = dh_next.as_slice().expect("standard layout");
            for b in 0..batch {
                let ar = &a[b * g4..(b + 1) * g4];
                let dzr = &mut dz_t[b * g4..(b + 1) * g4];
                for j in 0..hs {
                    let k = b * hs + j;
                    let (i, f, g, o) = (ar[j], ar[hs + j], ar[2 * hs + j], ar[3 * hs + j]);
                    let dh = dh_in[k] + dhn[k];
                    let th = tc[k];
                    let dc = dc_next[k] + dh * o * (1.0 - th * th);
                    dc_next[k] = dc * f;
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[hs + j] = dc * c_prev[k] * f * (1.0 - f);
                    dzr[2 * hs + j] = dc * i * (1.0 - g * g);
                    dzr[3 * hs + j] = dh * th * o * (1.0 - o);
                }
            }
            general_mat_mul(1.0, &view2(dz_t, batch, g4), &p.w_h, 0.0, &mut dh_next);
        }
    }
    let mut grads = LstmLayerParams::zeros(p.input(), hs);
    general_mat_mul(1.0, &dz.t(), &cache.x, 0.0, &mut grads.w_x);
    let h_prev = cache.h.slice(ndarray::s![..steps * batch, ..]);
    general_mat_mul(1.0, &dz.t(), &h_prev, 0.0, &mut grads.w_h);
    grads.b = dz.sum_axis(Axis(0));
    let dx = want_dx.then(|| dz.dot(&p.w_x));
    (grads, dx)
}

/// Everything the backward pass needs from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    batch: usize,
    shape: super::ModelShape,
    l1: LayerCache,
    l2: LayerCache,
    /// (T*B, H1) inverted-dropout multipliers, when dropout was active
    mask: Option<Array2<f64>>,
    /// (T, B) readout in (0, 1)
    outputs: Array2<f64>,
}

impl ForwardCache {
    /// Readout values, shape (timesteps, batch).
    pub fn outputs(&self) -> &Array2<f64> {
        &self.outputs
    }

    /// Final-layer hidden states at timestep `t`, shape (batch, H2).
    pub fn hidden2(&self, t: usize) -> ArrayView2<'_, f64> {
        self.l2
            .h
            .slice(ndarray::s![(t + 1) * self.batch..(t + 2) * self.batch, ..])
    }

    pub fn cell2(&self, t: usize) -> ArrayView2<'_, f64> {
        self.l2
            .c
            .slice(ndarray::s![(t + 1) * self.batch..(t + 2) * self.batch, ..])
    }
}

/// Batched forward pass. `inputs` is time-major (timesteps, batch, channels).
/// Passing an RNG enables dropout between the layers.
pub fn forward_batch<R: Rng>(
    model: &LstmModel,
    inputs: ArrayView3<'_, f64>,
    dropout: Option<&mut R>,
) -> Result<ForwardCache> {
    model.check_consistent()?;
    let (steps, batch, d) = inputs.dim();
    let shape = model.shape();
    if d != shape.input || steps == 0 || batch == 0 {
        return Err(Error::ShapeMismatch(format!(
            "inputs {:?} for a model with {} input channels",
            inputs.dim(),
            shape.input
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("inputs"));
    }
    let p = &model.params;
    let x1 = inputs
        .to_owned()
        .into_shape_with_order((steps * batch, d))
        .expect("owned array is contiguous");
    let l1 = layer_forward(&p.layer1, x1, steps, batch);
    let mut x2 = l1.h.slice(ndarray::s![batch.., ..]).to_owned();
    let mask = match dropout {
        Some(rng) if model.dropout_rate > 0.0 => {
            let keep = 1.0 - model.dropout_rate;
            let m = Array2::from_shape_simple_fn(x2.raw_dim(), || {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            x2 *= &m;
            Some(m)
        }
        _ => None,
    };
    let l2 = layer_forward(&p.layer2, x2, steps, batch);
    let h2 = l2.h.slice(ndarray::s![batch.., ..]);
    let logits = h2.dot(&p.readout_w) + p.readout_b[0];
    let outputs = logits
        .mapv(sigmoid)
        .into_shape_with_order((steps, batch))
        .expect("contiguous");
    if outputs.iter().any(|v| !v.is_finite()) || l2.c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("forward pass"));
    }
    Ok(ForwardCache {
        steps,
        batch,
        shape,
        l1,
        l2,
        mask,
        outputs,
    })
}

/// Forward pass over a single window (timesteps, channels), dropout off.
/// Returns one output per timestep.
pub fn lstm_forward(model: &LstmModel, inputs: ArrayView2<'_, f64>) -> Result<(Array1<f64>, ForwardCache)> {
    let (t, d) = inputs.dim();
    let x = inputs.insert_axis(ndarray::Axis(1));
    debug_assert_eq!(x.dim(), (t, 1, d));
    let cache = forward_batch::<rand_chacha::ChaCha8Rng>(model, x, None)?;
    let out = cache.outputs.column(0).to_owned();
    Ok((out, cache))
}

/// Per-window loss for one output sequence.
pub fn loss(outputs: ArrayView1<'_, f64>, targets: ArrayView1<'_, f64>, mode: LossMode) -> Result<f64> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    Ok(match mode {
        LossMode::LastOutput => {
            let n = outputs.len() - 1;
            (outputs[n] - targets[n]).powi(2)
        }
        LossMode::FullSequence => {
            outputs
                .iter()
                .zip(targets)
                .map(|(y, t)| (y - t).powi(2))
                .sum::<f64>()
                / outputs.len() as f64
        }
    })
}

/// Sum over the batch of per-window losses; `outputs` and `targets` are
/// (timesteps, batch).
pub(crate) fn batch_loss_sum(outputs: &Array2<f64>, targets: ArrayView2<'_, f64>, mode: LossMode) -> Result<f64> {
    if outputs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!(
            "outputs {:?} vs targets {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    let mut total = 0.0;
    for (y, t) in outputs.axis_iter(Axis(1)).zip(targets.axis_iter(Axis(1))) {
        total += loss(y, t, mode)?;
    }
    Ok(total)
}

/// Mean loss over the batch.
pub fn batch_loss(outputs: &Array2<f64>, targets: ArrayView2<'_, f64>, mode: LossMode) -> Result<f64> {
    Ok(batch_loss_sum(outputs, targets, mode)? / outputs.ncols() as f64)
}

/// Exact gradient of the batch-mean loss w.r.t. every parameter.
pub fn lstm_backward(
    model: &LstmModel,
    cache: &ForwardCache,
    targets: ArrayView2<'_, f64>,
    mode: LossMode,
) -> Result<ParamSet> {
    backward_scaled(model, cache, targets, mode, 1.0 / cache.batch as f64)
}

/// Gradient of `scale * sum over the batch of per-window losses`.
pub(crate) fn backward_scaled(
    model: &LstmModel,
    cache: &ForwardCache,
    targets: ArrayView2<'_, f64>,
    mode: LossMode,
    scale: f64,
) -> Result<ParamSet> {
    let (steps, batch) = (cache.steps, cache.batch);
    if cache.shape != model.shape() {
        return Err(Error::StaleCache);
    }
    if targets.dim() != (steps, batch) {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} for a cache of {:?}",
            targets.dim(),
            (steps, batch)
        )));
    }
    let p = &model.params;
    let h2n = p.layer2.hidden();

    // d loss / d logit, (T, B)
    let mut dlogit = Array2::<f64>::zeros((steps, batch));
    let y = &cache.outputs;
    let first = match mode {
        LossMode::LastOutput => steps - 1,
        LossMode::FullSequence => 0,
    };
    let per_step = match mode {
        LossMode::LastOutput => 2.0 * scale,
        LossMode::FullSequence => 2.0 * scale / steps as f64,
    };
    for t in first..steps {
        for b in 0..batch {
            let yv = y[[t, b]];
            dlogit[[t, b]] = per_step * (yv - targets[[t, b]]) * yv * (1.0 - yv);
        }
    }
    let dlogit = dlogit.into_shape_with_order(steps * batch).expect("contiguous");
    let h2 = cache.l2.h.slice(ndarray::s![batch.., ..]);
    let mut grads = ParamSet::zeros_like(&model.params);
    grads.readout_w = h2.t().dot(&dlogit);
    grads.readout_b[0] = dlogit.sum();

    let mut dh2 = Array2::<f64>::zeros((steps * batch, h2n));
    for (mut row, &g) in dh2.axis_iter_mut(Axis(0)).zip(dlogit.iter()) {
        if g != 0.0 {
            row.scaled_add(g, &p.readout_w);
        }
    }
    let (g2, dx2) = layer_backward(&p.layer2, &cache.l2, &dh2, steps, batch, true);
    let mut dh1 = dx2.expect("requested");
    if let Some(mask) = &cache.mask {
        dh1 *= mask;
    }
    let (g1, _) = layer_backward(&p.layer1, &cache.l1, &dh1, steps, batch, false);
    grads.layer1 = g1;
    grads.layer2 = g2;
    Ok(grads)
}

/// Copy a list of (timesteps, channels) windows into a time-major batch.
pub(crate) fn stack_time_major(windows: &[ArrayView2<'_, f64>]) -> Array3<f64> {
    let (t, d) = windows[0].dim();
    let mut out = Array3::zeros((t, windows.len(), d));
    for (b, w) in windows.iter().enumerate() {
        out.index_axis_mut(Axis(1), b).assign(w);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let m = LstmModel::zeros(6, (4, 3));
        let x = Array2::<f64>::zeros((7, 6));
        let (y, _) = lstm_forward(&m, x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn repeatable_and_bounded() {
        let m = LstmModel::new(6, (5, 4), 0.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array3::from_shape_simple_fn((9, 3, 6), || rng.gen_range(-3.0..3.0));
        let a = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        let b = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        assert_eq!(a.outputs(), b.outputs());
        assert!(a.outputs().iter().all(|&v| v > 0.0 && v < 1.0));
        for t in 0..9 {
            assert!(a.hidden2(t).iter().all(|h| h.abs() <= 1.0));
            assert!(a.cell2(t).iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn batch_matches_single_windows() {
        let m = LstmModel::new(6, (5, 4), 0.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array3::from_shape_simple_fn((6, 4, 6), || rng.gen_range(-1.0..1.0));
        let batch = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        for b in 0..4 {
            let single = x.index_axis(Axis(1), b);
            let (y, _) = lstm_forward(&m, single).unwrap();
            for t in 0..6 {
                assert!((y[t] - batch.outputs()[[t, b]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loss_values() {
        let l = |y: &[f64], t: &[f64], m| loss(ArrayView1::from(y), ArrayView1::from(t), m).unwrap();
        assert_eq!(l(&[0.3, 0.7], &[0.3, 0.7], LossMode::FullSequence), 0.0);
        assert_eq!(l(&[0.2, 0.5], &[0.0, 1.0], LossMode::LastOutput), 0.25);
        assert_eq!(l(&[0.5, 1.0], &[0.0, 1.0], LossMode::FullSequence), 0.125);
        assert!(loss(ArrayView1::from(&[0.1]), ArrayView1::from(&[0.1, 0.2]), LossMode::LastOutput).is_err());
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let m = LstmModel::new(6, (3, 3), 0.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array3::from_shape_simple_fn((4, 2, 6), || rng.gen_range(-1.0..1.0));
        let cache = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        let targets = cache.outputs().clone();
        assert_eq!(batch_loss(cache.outputs(), targets.view(), LossMode::LastOutput).unwrap(), 0.0);
        let g = lstm_backward(&m, &cache, targets.view(), LossMode::LastOutput).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let m = LstmModel::new(6, (3, 3), 0.0, 4).unwrap();
        let other = LstmModel::new(6, (4, 3), 0.0, 4).unwrap();
        let x = Array3::<f64>::zeros((4, 2, 6));
        let cache = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        let t = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            lstm_backward(&other, &cache, t.view(), LossMode::LastOutput),
            Err(Error::StaleCache)
        ));
        let wrong = Array2::<f64>::zeros((3, 2));
        assert!(lstm_backward(&m, &cache, wrong.view(), LossMode::LastOutput).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let m = LstmModel::new(6, (8, 4), 0.5, 1).unwrap();
        let x = Array3::from_elem((5, 2, 6), 0.3);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = forward_batch(&m, x.view(), Some(&mut r1)).unwrap();
        let b = forward_batch(&m, x.view(), Some(&mut r2)).unwrap();
        assert_ne!(a.outputs(), b.outputs());
        let c = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        let d = forward_batch::<ChaCha8Rng>(&m, x.view(), None).unwrap();
        assert_eq!(c.outputs(), d.outputs());
    }
}
