use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout driven by an explicit random stream. Without a stream
/// (inference, or rate 0) every call is the identity.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: (rate > 0.0).then_some(rng),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    /// A keep-mask scaled by `1 / (1 - rate)`, or `None` when inactive.
    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let rate = self.rate;
        let rng = self.rng.as_mut()?;
        let keep = 1.0 / (1.0 - rate);
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        }))
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let (r, c) = g.value(x).dim();
        match self.mask(r, c) {
            Some(m) => g.mul_const(x, m),
            None => x,
        }
    }
}
