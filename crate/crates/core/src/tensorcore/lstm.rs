//! Fused single-layer LSTM over a whole sequence, with backpropagation
//! through time.
//!
//! Gate layout along the `4H` axis is input, forget, candidate, output.
//! Hidden and cell state start at zero for every sequence.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{sigmoid, Graph, Op, Var};
use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;

/// Graph handles of one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmLayerVars {
    /// `[4H×D]`
    pub w_ih: Var,
    /// `[4H×H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

pub(crate) struct LstmCache<S> {
    x: Var,
    p: LstmLayerVars,
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    /// Post-activation gates, `[N×T×4H]`.
    gates: Vec<S>,
    /// Cell states, `[N×T×H]`.
    cells: Vec<S>,
}

impl<S: Scalar> Graph<S> {
    /// Runs one LSTM layer over `x[N×T×D]` (or `[T×D]`), returning the hidden
    /// sequence `[N×T×H]`.
    pub fn lstm_layer(&mut self, x: Var, p: LstmLayerVars) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, steps, input) = match *sx {
            [t, d] => (1, t, d),
            [n, t, d] => (n, t, d),
            _ => return Err(dim_err!("lstm: expected [T×D] or [N×T×D] input, got {:?}", sx)),
        };
        let (si, sh, sb) = (self.shape(p.w_ih).to_vec(), self.shape(p.w_hh).to_vec(), self.shape(p.bias).to_vec());
        if si.len() != 2 || si[0] % 4 != 0 {
            return Err(dim_err!("lstm: input weight must be [4H×D], got {:?}", si));
        }
        let hidden = si[0] / 4;
        if si[1] != input {
            return Err(dim_err!("lstm: input width {input} does not match weight {:?}", si));
        }
        if sh != [4 * hidden, hidden] || sb.iter().product::<usize>() != 4 * hidden {
            return Err(dim_err!("lstm: recurrent weight {:?} / bias {:?} for hidden size {hidden}", sh, sb));
        }
        let g4 = 4 * hidden;
        let (xd, wih, whh, bias) = (self.data(x), self.data(p.w_ih), self.data(p.w_hh), self.data(p.bias));
        let mut gates = vec![S::zero(); batch * steps * g4];
        let mut cells = vec![S::zero(); batch * steps * hidden];
        let mut hs = vec![S::zero(); batch * steps * hidden];
        for n in 0..batch {
            let pre = &mut gates[n * steps * g4..(n + 1) * steps * g4];
            for t in 0..steps {
                pre[t * g4..(t + 1) * g4].copy_from_slice(bias);
            }
            gemm_nt(steps, g4, input, &xd[n * steps * input..(n + 1) * steps * input], wih, pre);
            for t in 0..steps {
                let z = &mut pre[t * g4..(t + 1) * g4];
                if t > 0 {
                    let h_prev = &hs[(n * steps + t - 1) * hidden..(n * steps + t) * hidden];
                    gemm_nt(1, g4, hidden, h_prev, whh, z);
                }
                for j in 0..hidden {
                    z[j] = sigmoid(z[j]);
                    z[hidden + j] = sigmoid(z[hidden + j]);
                    z[2 * hidden + j] = z[2 * hidden + j].tanh();
                    z[3 * hidden + j] = sigmoid(z[3 * hidden + j]);
                }
                let at = (n * steps + t) * hidden;
                for j in 0..hidden {
                    let c_prev = if t > 0 { cells[at - hidden + j] } else { S::zero() };
                    let c = z[hidden + j] * c_prev + z[j] * z[2 * hidden + j];
                    cells[at + j] = c;
                    hs[at + j] = z[3 * hidden + j] * c.tanh();
                }
            }
        }
        let shape = if sx.len() == 2 { vec![steps, hidden] } else { vec![batch, steps, hidden] };
        let value = Tensor::new(&shape, hs)?;
        let rg = self.rg(x) || self.rg(p.w_ih) || self.rg(p.w_hh) || self.rg(p.bias);
        let cache = LstmCache { x, p, batch, steps, input, hidden, gates, cells };
        Ok(self.push(value, Op::Lstm(cache), rg))
    }

    /// Stacked LSTM: each layer consumes the previous layer's hidden sequence.
    pub fn lstm_forward(&mut self, x: Var, layers: &[LstmLayerVars]) -> Result<Var> {
        if layers.is_empty() {
            return Err(contract_err!("lstm: at least one layer is required"));
        }
        layers.iter().try_fold(x, |h, &p| self.lstm_layer(h, p))
    }
}

pub(crate) fn lstm_backward<S: Scalar>(
    gr: &Graph<S>,
    cache: &LstmCache<S>,
    hs: &[S],
    grad: &[S],
    out: &mut Vec<(Var, Vec<S>)>,
) {
    let LstmCache { x, p, batch, steps, input, hidden, ref gates, ref cells } = *cache;
    let g4 = 4 * hidden;
    let xd = gr.data(x);
    let (wih, whh) = (gr.data(p.w_ih), gr.data(p.w_hh));
    let mut d_wih = vec![S::zero(); g4 * input];
    let mut d_whh = vec![S::zero(); g4 * hidden];
    let mut d_b = vec![S::zero(); g4];
    let mut dx = vec![S::zero(); batch * steps * input];
    let mut dz = vec![S::zero(); steps * g4];
    let mut dh_next = vec![S::zero(); hidden];
    let mut dc_next = vec![S::zero(); hidden];
    for n in 0..batch {
        dh_next.iter_mut().for_each(|v| *v = S::zero());
        dc_next.iter_mut().for_each(|v| *v = S::zero());
        for t in (0..steps).rev() {
            let r = n * steps + t;
            let gt = &gates[r * g4..(r + 1) * g4];
            let dzt = &mut dz[t * g4..(t + 1) * g4];
            for j in 0..hidden {
                let (i, f, g, o) = (gt[j], gt[hidden + j], gt[2 * hidden + j], gt[3 * hidden + j]);
                let c = cells[r * hidden + j];
                let c_prev = if t > 0 { cells[(r - 1) * hidden + j] } else { S::zero() };
                let tc = c.tanh();
                let dh = grad[r * hidden + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o * (S::one() - tc * tc) + dc_next[j];
                dc_next[j] = dc * f;
                dzt[j] = dc * g * i * (S::one() - i);
                dzt[hidden + j] = dc * c_prev * f * (S::one() - f);
                dzt[2 * hidden + j] = dc * i * (S::one() - g * g);
                dzt[3 * hidden + j] = d_o * o * (S::one() - o);
            }
            dh_next.iter_mut().for_each(|v| *v = S::zero());
            gemm_nn(1, hidden, g4, dzt, whh, &mut dh_next);
        }
        let xs = &xd[n * steps * input..(n + 1) * steps * input];
        gemm_tn(g4, input, steps, &dz, xs, &mut d_wih);
        if steps > 1 {
            let h_prev = &hs[n * steps * hidden..(n * steps + steps - 1) * hidden];
            gemm_tn(g4, hidden, steps - 1, &dz[g4..], h_prev, &mut d_whh);
        }
        for t in 0..steps {
            for (db, &v) in d_b.iter_mut().zip(&dz[t * g4..(t + 1) * g4]) {
                *db += v;
            }
        }
        gemm_nn(steps, input, g4, &dz, wih, &mut dx[n * steps * input..(n + 1) * steps * input]);
    }
    if gr.rg(x) {
        out.push((x, dx));
    }
    if gr.rg(p.w_ih) {
        out.push((p.w_ih, d_wih));
    }
    if gr.rg(p.w_hh) {
        out.push((p.w_hh, d_whh));
    }
    if gr.rg(p.bias) {
        out.push((p.bias, d_b));
    }
}
