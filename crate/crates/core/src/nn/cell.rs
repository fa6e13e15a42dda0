//! Elman RNN, GRU and LSTM cells.
//!
//! Gate pre-activations are `W·x + U·h + b` with the per-gate blocks stacked
//! row-wise: RNN `[a]`, GRU `[z, r, n]`, LSTM `[i, f, g, o]`.
//!
//! ```text
//! rnn:  h' = tanh(a)
//! gru:  z = σ(a_z)  r = σ(a_r)  n = tanh(W_n x + U_n (r ⊙ h) + b_n)
//!       h' = (1 - z) ⊙ n + z ⊙ h
//! lstm: i, f, o = σ(·)  g = tanh(·)  c' = f ⊙ c + i ⊙ g  h' = o ⊙ tanh(c')
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{axpy, sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    /// (gates·h) × d
    pub w: Matrix,
    /// (gates·h) × h
    pub u: Matrix,
    /// gates·h
    pub b: Vec<f64>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden: usize) -> Self {
        let rows = kind.gates() * hidden;
        CellParams {
            kind,
            input_dim,
            hidden,
            w: Matrix::zeros(rows, input_dim),
            u: Matrix::zeros(rows, hidden),
            b: vec![0.0; rows],
        }
    }

    /// Glorot-uniform weights per gate block, zero biases, LSTM forget bias 1.
    pub fn init(kind: CellKind, input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let rows = kind.gates() * hidden;
        let lw = (6.0 / (input_dim + hidden) as f64).sqrt();
        let lu = (6.0 / (2 * hidden) as f64).sqrt();
        let w = Matrix::from_fn(rows, input_dim, |_, _| rng.gen_range(-lw..=lw));
        let u = Matrix::from_fn(rows, hidden, |_, _| rng.gen_range(-lu..=lu));
        let mut b = vec![0.0; rows];
        if kind == CellKind::Lstm {
            b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        }
        CellParams { kind, input_dim, hidden, w, u, b }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.input_dim, self.hidden)
    }

    pub fn initial_state(&self) -> CellState {
        CellState {
            h: vec![0.0; self.hidden],
            c: (self.kind == CellKind::Lstm).then(|| vec![0.0; self.hidden]),
        }
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &[f64]); 3] {
        [("w", self.w.as_slice()), ("u", self.u.as_slice()), ("b", &self.b)]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 3] {
        [("w", self.w.as_mut_slice()), ("u", self.u.as_mut_slice()), ("b", &mut self.b)]
    }

    pub(crate) fn shapes(&self) -> [(&'static str, Vec<usize>); 3] {
        let rows = self.kind.gates() * self.hidden;
        [("w", vec![rows, self.input_dim]), ("u", vec![rows, self.hidden]), ("b", vec![rows])]
    }
}

/// Hidden state, plus the memory cell for LSTMs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

/// Everything the backward step needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked like the pre-activations.
    act: Vec<f64>,
    /// LSTM: tanh(c'). GRU: r ⊙ h_prev.
    aux: Vec<f64>,
}

/// One step of the recurrence with dimension checks.
pub fn cell_step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    if x.len() != params.input_dim {
        return Err(Error::Shape(format!("input has {} values, cell expects {}", x.len(), params.input_dim)));
    }
    if state.h.len() != params.hidden {
        return Err(Error::Shape(format!("hidden state has {} values, cell expects {}", state.h.len(), params.hidden)));
    }
    let c_ok = match (&state.c, params.kind) {
        (Some(c), CellKind::Lstm) => c.len() == params.hidden,
        (None, CellKind::Lstm) => false,
        (c, _) => c.is_none(),
    };
    if !c_ok {
        return Err(Error::Shape("cell state does not match the cell kind".into()));
    }
    let (next, _) = step_forward(params, x, state);
    Ok(next)
}

pub(crate) fn step_forward(p: &CellParams, x: &[f64], state: &CellState) -> (CellState, StepCache) {
    let h = p.hidden;
    let mut a = p.b.clone();
    p.w.gemv_acc(x, &mut a);
    let h_prev = state.h.clone();
    match p.kind {
        CellKind::Rnn => {
            p.u.gemv_acc(&h_prev, &mut a);
            let act: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            let next = CellState { h: act.clone(), c: None };
            (next, StepCache { h_prev, c_prev: Vec::new(), act, aux: Vec::new() })
        }
        CellKind::Gru => {
            // z and r blocks see h, the candidate block sees r ⊙ h
            p.u.gemv_rows_acc(0, 2 * h, &h_prev, &mut a[..2 * h]);
            let mut act = vec![0.0; 3 * h];
            for k in 0..2 * h {
                act[k] = sigmoid(a[k]);
            }
            let rh: Vec<f64> = (0..h).map(|k| act[h + k] * h_prev[k]).collect();
            p.u.gemv_rows_acc(2 * h, h, &rh, &mut a[2 * h..]);
            for k in 0..h {
                act[2 * h + k] = a[2 * h + k].tanh();
            }
            let hn: Vec<f64> = (0..h)
                .map(|k| {
                    let z = act[k];
                    (1.0 - z) * act[2 * h + k] + z * h_prev[k]
                })
                .collect();
            (CellState { h: hn, c: None }, StepCache { h_prev, c_prev: Vec::new(), act, aux: rh })
        }
        CellKind::Lstm => {
            p.u.gemv_acc(&h_prev, &mut a);
            let c_prev = state.c.clone().expect("lstm state carries a cell");
            let mut act = vec![0.0; 4 * h];
            for k in 0..h {
                act[k] = sigmoid(a[k]);
                act[h + k] = sigmoid(a[h + k]);
                act[2 * h + k] = a[2 * h + k].tanh();
                act[3 * h + k] = sigmoid(a[3 * h + k]);
            }
            let c: Vec<f64> = (0..h).map(|k| act[h + k] * c_prev[k] + act[k] * act[2 * h + k]).collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hn: Vec<f64> = (0..h).map(|k| act[3 * h + k] * tc[k]).collect();
            (CellState { h: hn, c: Some(c) }, StepCache { h_prev, c_prev, act, aux: tc })
        }
    }
}

/// Backward through one step.
///
/// `dh` and `dc` hold the loss gradient w.r.t. this step's outputs and are
/// overwritten with the gradient w.r.t. the previous state. Parameter
/// gradients accumulate into `grad`; the input gradient into `dx` (if any).
pub(crate) fn step_backward(
    p: &CellParams,
    x: &[f64],
    cache: &StepCache,
    dh: &mut Vec<f64>,
    dc: &mut Vec<f64>,
    grad: &mut CellParams,
    dx: Option<&mut [f64]>,
) {
    let h = p.hidden;
    let act = &cache.act;
    let mut da = vec![0.0; p.kind.gates() * h];
    let mut dh_prev = vec![0.0; h];
    match p.kind {
        CellKind::Rnn => {
            for k in 0..h {
                da[k] = dh[k] * (1.0 - act[k] * act[k]);
            }
            grad.u.outer_acc(&da, &cache.h_prev);
            p.u.gemv_t_acc(&da, &mut dh_prev);
        }
        CellKind::Gru => {
            for k in 0..h {
                let (z, n) = (act[k], act[2 * h + k]);
                dh_prev[k] = dh[k] * z;
                da[k] = dh[k] * (cache.h_prev[k] - n) * z * (1.0 - z);
                da[2 * h + k] = dh[k] * (1.0 - z) * (1.0 - n * n);
            }
            grad.u.outer_rows_acc(2 * h, &da[2 * h..], &cache.aux);
            let mut drh = vec![0.0; h];
            p.u.gemv_t_rows_acc(2 * h, &da[2 * h..], &mut drh);
            for k in 0..h {
                let r = act[h + k];
                da[h + k] = drh[k] * cache.h_prev[k] * r * (1.0 - r);
                dh_prev[k] += drh[k] * r;
            }
            grad.u.outer_rows_acc(0, &da[..2 * h], &cache.h_prev);
            p.u.gemv_t_rows_acc(0, &da[..2 * h], &mut dh_prev);
        }
        CellKind::Lstm => {
            let tc = &cache.aux;
            for k in 0..h {
                let (i, f, g, o) = (act[k], act[h + k], act[2 * h + k], act[3 * h + k]);
                let dct = dc[k] + dh[k] * o * (1.0 - tc[k] * tc[k]);
                da[k] = dct * g * i * (1.0 - i);
                da[h + k] = dct * cache.c_prev[k] * f * (1.0 - f);
                da[2 * h + k] = dct * i * (1.0 - g * g);
                da[3 * h + k] = dh[k] * tc[k] * o * (1.0 - o);
                dc[k] = dct * f;
            }
            grad.u.outer_acc(&da, &cache.h_prev);
            p.u.gemv_t_acc(&da, &mut dh_prev);
        }
    }
    grad.w.outer_acc(&da, x);
    axpy(1.0, &da, &mut grad.b);
    if let Some(dx) = dx {
        p.w.gemv_t_acc(&da, dx);
    }
    *dh = dh_prev;
}
