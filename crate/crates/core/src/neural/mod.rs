//! Two-layer LSTM regressor trained from scratch: batched forward pass,
//! exact backpropagation through time, Adam, checkpoints.

mod adam;
mod checkpoint;
mod lstm;
mod predict;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use lstm::{
    batch_loss, forward_batch, lstm_backward, lstm_forward, loss, ForwardCache, LossMode,
};
pub use predict::{predict_positions, predict_slice};
pub use train::{train, TrainConfig, Trainer, WindowSource};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 6;

/// Weights of one LSTM layer. Gate blocks are stacked in the order
/// input, forget, candidate, output along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// (4H, D)
    pub w_x: Array2<f64>,
    /// (4H, H)
    pub w_h: Array2<f64>,
    /// (4H)
    pub b: Array1<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_x.ncols()
    }

    fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let ax = 1.0 / (input as f64).sqrt();
        let ah = 1.0 / (hidden as f64).sqrt();
        p.w_x.mapv_inplace(|_| rng.gen_range(-ax..ax));
        p.w_h.mapv_inplace(|_| rng.gen_range(-ah..ah));
        p.b.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        p
    }
}

/// Every trainable tensor of the model. Also used for gradients and Adam
/// moments, which mirror the parameters one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layer1: LstmLayerParams,
    pub layer2: LstmLayerParams,
    /// (H2)
    pub readout_w: Array1<f64>,
    /// (1)
    pub readout_b: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "layer1.w_x",
    "layer1.w_h",
    "layer1.b",
    "layer2.w_x",
    "layer2.w_h",
    "layer2.b",
    "readout.w",
    "readout.b",
];

impl ParamSet {
    pub fn zeros(input: usize, h1: usize, h2: usize) -> Self {
        ParamSet {
            layer1: LstmLayerParams::zeros(input, h1),
            layer2: LstmLayerParams::zeros(h1, h2),
            readout_w: Array1::zeros(h2),
            readout_b: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layer1.input(), self.layer1.hidden(), self.layer2.hidden())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.layer1.w_x.shape().to_vec(),
            self.layer1.w_h.shape().to_vec(),
            self.layer1.b.shape().to_vec(),
            self.layer2.w_x.shape().to_vec(),
            self.layer2.w_h.shape().to_vec(),
            self.layer2.b.shape().to_vec(),
            self.readout_w.shape().to_vec(),
            self.readout_b.shape().to_vec(),
        ]
    }

    /// Flat views of every tensor in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            self.layer1.w_x.as_slice().expect("standard layout"),
            self.layer1.w_h.as_slice().expect("standard layout"),
            self.layer1.b.as_slice().expect("standard layout"),
            self.layer2.w_x.as_slice().expect("standard layout"),
            self.layer2.w_h.as_slice().expect("standard layout"),
            self.layer2.b.as_slice().expect("standard layout"),
            self.readout_w.as_slice().expect("standard layout"),
            self.readout_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.layer1.w_x.as_slice_mut().expect("standard layout"),
            self.layer1.w_h.as_slice_mut().expect("standard layout"),
            self.layer1.b.as_slice_mut().expect("standard layout"),
            self.layer2.w_x.as_slice_mut().expect("standard layout"),
            self.layer2.w_h.as_slice_mut().expect("standard layout"),
            self.layer2.b.as_slice_mut().expect("standard layout"),
            self.readout_w.as_slice_mut().expect("standard layout"),
            self.readout_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: ParamSet,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl LstmModel {
    /// Uniform ±1/sqrt(fan-in) weights, forget-gate bias 1, zero readout bias.
    pub fn new(input: usize, hidden: (usize, usize), dropout_rate: f64, seed: u64) -> Result<Self> {
        if input == 0 || hidden.0 == 0 || hidden.1 == 0 {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let mut rng = crate::rng::stream(seed, &[0x1417]);
        let layer1 = LstmLayerParams::init(input, hidden.0, &mut rng);
        let layer2 = LstmLayerParams::init(hidden.0, hidden.1, &mut rng);
        let ar = 1.0 / (hidden.1 as f64).sqrt();
        let readout_w = Array1::from_shape_fn(hidden.1, |_| rng.gen_range(-ar..ar));
        Ok(LstmModel {
            params: ParamSet {
                layer1,
                layer2,
                readout_w,
                readout_b: Array1::zeros(1),
            },
            dropout_rate,
        })
    }

    pub fn zeros(input: usize, hidden: (usize, usize)) -> Self {
        LstmModel {
            params: ParamSet::zeros(input, hidden.0, hidden.1),
            dropout_rate: 0.0,
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input: self.params.layer1.input(),
            hidden1: self.params.layer1.hidden(),
            hidden2: self.params.layer2.hidden(),
        }
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let p = &self.params;
        let (d, h1, h2) = (p.layer1.input(), p.layer1.hidden(), p.layer2.hidden());
        let ok = p.layer1.w_x.shape() == [4 * h1, d]
            && p.layer1.w_h.shape() == [4 * h1, h1]
            && p.layer1.b.len() == 4 * h1
            && p.layer2.w_x.shape() == [4 * h2, h1]
            && p.layer2.w_h.shape() == [4 * h2, h2]
            && p.layer2.b.len() == 4 * h2
            && p.readout_w.len() == h2
            && p.readout_b.len() == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("inconsistent layer shapes {:?}", p.shapes())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_follows_fan_in() {
        let m = LstmModel::new(6, (8, 5), 0.2, 3).unwrap();
        m.check_consistent().unwrap();
        let bound = 1.0 / 6f64.sqrt();
        assert!(m.params.layer1.w_x.iter().all(|w| w.abs() <= bound));
        let bound = 1.0 / 8f64.sqrt();
        assert!(m.params.layer1.w_h.iter().all(|w| w.abs() <= bound));
        let b = &m.params.layer2.b;
        assert!(b.slice(ndarray::s![5..10]).iter().all(|&x| x == 1.0));
        assert!(b.slice(ndarray::s![..5]).iter().all(|&x| x == 0.0));
        assert_eq!(m.params.len(), 4 * 8 * (6 + 8 + 1) + 4 * 5 * (8 + 5 + 1) + 5 + 1);
    }

    #[test]
    fn rejects_bad_dropout() {
        assert!(LstmModel::new(6, (4, 4), 1.0, 0).is_err());
        assert!(LstmModel::new(6, (0, 4), 0.0, 0).is_err());
    }
}
