//! A second, deliberately plain implementation of the instance loss in
//! double-double precision. It shares no arithmetic with the `f64` forward
//! pass, so finite differences taken on it are limited by the difference
//! step rather than by `f64` rounding of the loss.

use super::double_double::DoubleDouble as Dd;
use crate::lstm::{LstmParameters, ModelDims, GROUP_COUNT};
use crate::text::SparseTermVector;

// Group slots, in `LstmParameters::groups` order.
const W: [usize; 4] = [0, 1, 2, 3];
const REC: [usize; 4] = [4, 5, 6, 7];
const PEEP_OUT: usize = 8;
const PEEP_FORGET: usize = 9;
const PEEP_IN: usize = 10;
const BIAS: [usize; 4] = [11, 12, 13, 14];
const OUT: usize = 0;
const FORGET: usize = 1;
const IN: usize = 2;
const CELL: usize = 3;

#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub dims: ModelDims,
    pub groups: [Vec<Dd>; GROUP_COUNT],
}

impl ReferenceModel {
    pub fn new(params: &LstmParameters) -> Self {
        let groups = params.groups().map(|g| g.iter().map(|&v| Dd::from(v)).collect());
        ReferenceModel {
            dims: params.dims(),
            groups,
        }
    }

    fn gate_input(&self, gate: usize, row: usize, x: &SparseTermVector, y_prev: &[Dd]) -> Dd {
        let (d, n) = (self.dims.input_dim, self.dims.ncell);
        let mut acc = self.groups[BIAS[gate]][row];
        for &(col, count) in x.pairs() {
            acc += self.groups[W[gate]][row * d + col] * f64::from(count);
        }
        for (j, &yj) in y_prev.iter().enumerate() {
            acc += self.groups[REC[gate]][row * n + j] * yj;
        }
        acc
    }

    /// Final output of the sequence, starting from a zero state.
    pub fn embed(&self, seq: &[SparseTermVector]) -> Vec<Dd> {
        let n = self.dims.ncell;
        let mut y = vec![Dd::ZERO; n];
        let mut c = vec![Dd::ZERO; n];
        for x in seq {
            let mut y_next = vec![Dd::ZERO; n];
            let mut c_next = vec![Dd::ZERO; n];
            for k in 0..n {
                let cand = self.gate_input(CELL, k, x, &y).tanh();
                let i = (self.gate_input(IN, k, x, &y) + self.groups[PEEP_IN][k] * c[k]).sigmoid();
                let f = (self.gate_input(FORGET, k, x, &y) + self.groups[PEEP_FORGET][k] * c[k]).sigmoid();
                c_next[k] = f * c[k] + i * cand;
                let o = (self.gate_input(OUT, k, x, &y) + self.groups[PEEP_OUT][k] * c_next[k]).sigmoid();
                y_next[k] = o * c_next[k].tanh();
            }
            y = y_next;
            c = c_next;
        }
        y
    }

    /// `-log softmax` of the clicked document's gamma-scaled cosine.
    /// `docs[0]` is the clicked document.
    pub fn instance_loss(&self, query: &[SparseTermVector], docs: &[Vec<SparseTermVector>], gamma: f64) -> Dd {
        let q = self.embed(query);
        let q_norm = q.iter().fold(Dd::ZERO, |a, &v| a + v.square()).sqrt();
        let scaled: Vec<Dd> = docs
            .iter()
            .map(|doc| {
                let d = self.embed(doc);
                let d_norm = d.iter().fold(Dd::ZERO, |a, &v| a + v.square()).sqrt();
                let dot = q.iter().zip(&d).fold(Dd::ZERO, |a, (&x, &y)| a + x * y);
                dot / (q_norm * d_norm) * gamma
            })
            .collect();
        let max = scaled.iter().copied().fold(scaled[0], |m, s| if s > m { s } else { m });
        let sum = scaled.iter().fold(Dd::ZERO, |a, &s| a + (s - max).exp());
        max + sum.ln() - scaled[0]
    }
}
