//! Single-layer peephole LSTM over hashed word sequences.
//!
//! Per timestep, with `x` the hashed word and `y_prev`, `c_prev` the previous
//! output and cell state:
//!
//! ```text
//! y_g = tanh(W_cell x + R_cell y_prev + b_cell)
//! i   = σ(W_in x + R_in y_prev + p_in ∘ c_prev + b_in)
//! f   = σ(W_forget x + R_forget y_prev + p_forget ∘ c_prev + b_forget)
//! c   = f ∘ c_prev + i ∘ y_g
//! o   = σ(W_out x + R_out y_prev + p_out ∘ c + b_out)
//! y   = o ∘ tanh(c)
//! ```
//!
//! The output gate peeks at the *new* cell state; the input and forget gates
//! see the previous one. Peepholes are diagonal.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::SparseTermVector;

/// Gate slots, in the order used by every per-gate array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Output = 0,
    Forget = 1,
    Input = 2,
    Cell = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Output, Gate::Forget, Gate::Input, Gate::Cell];
    /// Gates that carry a peephole connection.
    pub const PEEPHOLED: [Gate; 3] = [Gate::Output, Gate::Forget, Gate::Input];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Output => "out",
            Gate::Forget => "forget",
            Gate::Input => "in",
            Gate::Cell => "cell",
        }
    }
}

/// Number of parameter groups: 4 input matrices, 4 recurrent matrices,
/// 3 peephole vectors, 4 biases.
pub const GROUP_COUNT: usize = 15;

/// Names of the parameter groups, in [`LstmParameters::groups`] order.
pub const GROUP_NAMES: [&str; GROUP_COUNT] = [
    "w_out", "w_forget", "w_in", "w_cell", "rec_out", "rec_forget", "rec_in", "rec_cell", "peep_out",
    "peep_forget", "peep_in", "b_out", "b_forget", "b_in", "b_cell",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Trigram vocabulary dimension.
    pub input_dim: usize,
    /// Number of LSTM cells, which is also the embedding width.
    pub ncell: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, ncell: usize) -> Result<Self> {
        if input_dim == 0 || ncell == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive (input_dim {input_dim}, ncell {ncell})"
            )));
        }
        Ok(ModelDims { input_dim, ncell })
    }
}

/// Trainable scalar count for a single tower with diagonal peepholes.
pub fn count_parameters(dims: ModelDims) -> u64 {
    let (d, n) = (dims.input_dim as u64, dims.ncell as u64);
    4 * n * d + 4 * n * n + 3 * n + 4 * n
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · x`
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · x`
    pub fn mul_t_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                for (o, &w) in out.iter_mut().zip(self.row(r)) {
                    *o += w * xr;
                }
            }
        }
    }

    /// `out += self · l` for a sparse count vector: count-scaled columns.
    pub fn mul_sparse_add(&self, l: &SparseTermVector, out: &mut [f64]) {
        for &(col, count) in l.pairs() {
            let count = f64::from(count);
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.get(r, col) * count;
            }
        }
    }

    /// `self += u vᵀ`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        for (r, &ur) in u.iter().enumerate() {
            if ur != 0.0 {
                let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
                for (w, &vc) in row.iter_mut().zip(v) {
                    *w += ur * vc;
                }
            }
        }
    }

    /// `self += u lᵀ` for a sparse `l`; only the touched columns change.
    pub fn add_outer_sparse(&mut self, u: &[f64], l: &SparseTermVector) {
        for &(col, count) in l.pairs() {
            let count = f64::from(count);
            for (r, &ur) in u.iter().enumerate() {
                *self.get_mut(r, col) += ur * count;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every trainable weight of the cell. Arrays are indexed by [`Gate`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParameters {
    dims: ModelDims,
    /// Input weights, `ncell × input_dim`.
    pub input: [Matrix; 4],
    /// Recurrent weights, `ncell × ncell`.
    pub recurrent: [Matrix; 4],
    /// Diagonal peepholes for the output, forget and input gates.
    pub peephole: [Vec<f64>; 3],
    pub bias: [Vec<f64>; 4],
}

impl LstmParameters {
    pub fn zeros(dims: ModelDims) -> Self {
        let (d, n) = (dims.input_dim, dims.ncell);
        LstmParameters {
            dims,
            input: std::array::from_fn(|_| Matrix::zeros(n, d)),
            recurrent: std::array::from_fn(|_| Matrix::zeros(n, n)),
            peephole: std::array::from_fn(|_| vec![0.0; n]),
            bias: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// The fifteen parameter groups as flat slices, in [`GROUP_NAMES`] order.
    pub fn groups(&self) -> [&[f64]; GROUP_COUNT] {
        let [w0, w1, w2, w3] = &self.input;
        let [r0, r1, r2, r3] = &self.recurrent;
        let [p0, p1, p2] = &self.peephole;
        let [b0, b1, b2, b3] = &self.bias;
        [
            w0.as_slice(),
            w1.as_slice(),
            w2.as_slice(),
            w3.as_slice(),
            r0.as_slice(),
            r1.as_slice(),
            r2.as_slice(),
            r3.as_slice(),
            p0,
            p1,
            p2,
            b0,
            b1,
            b2,
            b3,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; GROUP_COUNT] {
        let [w0, w1, w2, w3] = &mut self.input;
        let [r0, r1, r2, r3] = &mut self.recurrent;
        let [p0, p1, p2] = &mut self.peephole;
        let [b0, b1, b2, b3] = &mut self.bias;
        [
            w0.as_mut_slice(),
            w1.as_mut_slice(),
            w2.as_mut_slice(),
            w3.as_mut_slice(),
            r0.as_mut_slice(),
            r1.as_mut_slice(),
            r2.as_mut_slice(),
            r3.as_mut_slice(),
            p0,
            p1,
            p2,
            b0,
            b1,
            b2,
            b3,
        ]
    }

    /// Number of scalars actually stored.
    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.groups().into_iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, other: &LstmParameters, alpha: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn fill(&mut self, value: f64) {
        for g in self.groups_mut() {
            g.fill(value);
        }
    }

    /// Global L2 norm over all groups.
    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &LstmParameters) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Glorot-uniform input and recurrent weights, zero peepholes, forget bias
/// 1.0 and all other biases zero.
pub fn init_parameters(dims: ModelDims, seed: u64) -> LstmParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LstmParameters::zeros(dims);
    let input_bound = (6.0 / (dims.input_dim + dims.ncell) as f64).sqrt();
    let rec_bound = (6.0 / (2 * dims.ncell) as f64).sqrt();
    let input_dist = Uniform::new_inclusive(-input_bound, input_bound);
    let rec_dist = Uniform::new_inclusive(-rec_bound, rec_bound);
    for m in &mut params.input {
        m.as_mut_slice().iter_mut().for_each(|v| *v = input_dist.sample(&mut rng));
    }
    for m in &mut params.recurrent {
        m.as_mut_slice().iter_mut().for_each(|v| *v = rec_dist.sample(&mut rng));
    }
    params.bias[Gate::Forget as usize].fill(1.0);
    params
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one timestep computed, including the pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSnapshot {
    pub y_g: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    /// `tanh(c)`
    pub h_c: Vec<f64>,
    pub y: Vec<f64>,
    /// Pre-activation sums, indexed by [`Gate`].
    pub pre: [Vec<f64>; 4],
}

/// One forward step of the cell.
pub fn cell_step(
    params: &LstmParameters,
    l_t: &SparseTermVector,
    y_prev: &[f64],
    c_prev: &[f64],
) -> Result<CellSnapshot> {
    let ModelDims { input_dim, ncell } = params.dims;
    if l_t.dimension() != input_dim {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            actual: l_t.dimension(),
        });
    }
    for v in [y_prev, c_prev] {
        if v.len() != ncell {
            return Err(Error::DimensionMismatch {
                expected: ncell,
                actual: v.len(),
            });
        }
    }

    // Shared part of every gate: W l + R y_prev + b.
    let pre_common = |gate: Gate| {
        let g = gate as usize;
        let mut a = params.bias[g].clone();
        params.input[g].mul_sparse_add(l_t, &mut a);
        params.recurrent[g].mul_add(y_prev, &mut a);
        a
    };

    let a_g = pre_common(Gate::Cell);
    let y_g: Vec<f64> = a_g.iter().map(|v| v.tanh()).collect();

    let mut a_i = pre_common(Gate::Input);
    let mut a_f = pre_common(Gate::Forget);
    for k in 0..ncell {
        a_i[k] += params.peephole[Gate::Input as usize][k] * c_prev[k];
        a_f[k] += params.peephole[Gate::Forget as usize][k] * c_prev[k];
    }
    let i: Vec<f64> = a_i.iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a_f.iter().map(|&v| sigmoid(v)).collect();

    let c: Vec<f64> = (0..ncell).map(|k| f[k] * c_prev[k] + i[k] * y_g[k]).collect();

    let mut a_o = pre_common(Gate::Output);
    for k in 0..ncell {
        a_o[k] += params.peephole[Gate::Output as usize][k] * c[k];
    }
    let o: Vec<f64> = a_o.iter().map(|&v| sigmoid(v)).collect();
    let h_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let y: Vec<f64> = o.iter().zip(&h_c).map(|(o, h)| o * h).collect();

    if !c.iter().chain(&y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("cell state".into()));
    }
    Ok(CellSnapshot {
        y_g,
        i,
        f,
        o,
        c,
        h_c,
        y,
        pre: [a_o, a_f, a_i, a_g],
    })
}

/// Forward record of a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub inputs: Vec<SparseTermVector>,
    pub snapshots: Vec<CellSnapshot>,
    /// Initial output and cell state the recursion started from.
    pub y0: Vec<f64>,
    pub c0: Vec<f64>,
}

impl SequenceTrace {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// `y` at the last timestep.
    pub fn embedding(&self) -> &[f64] {
        &self.snapshots.last().expect("trace is never empty").y
    }

    /// `(y(t-1), c(t-1))` for the 0-based step `t`.
    pub fn previous_state(&self, t: usize) -> (&[f64], &[f64]) {
        if t == 0 {
            (&self.y0, &self.c0)
        } else {
            let s = &self.snapshots[t - 1];
            (&s.y, &s.c)
        }
    }
}

/// Runs the cell over `sequence` from a zero state.
pub fn embed_sequence(params: &LstmParameters, sequence: &[SparseTermVector]) -> Result<SequenceTrace> {
    let n = params.dims.ncell;
    embed_sequence_from(params, sequence, vec![0.0; n], vec![0.0; n])
}

/// Runs the cell over `sequence` from the given initial state.
pub fn embed_sequence_from(
    params: &LstmParameters,
    sequence: &[SparseTermVector],
    y0: Vec<f64>,
    c0: Vec<f64>,
) -> Result<SequenceTrace> {
    if sequence.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut snapshots: Vec<CellSnapshot> = Vec::with_capacity(sequence.len());
    for l_t in sequence {
        let (y_prev, c_prev) = match snapshots.last() {
            Some(s) => (&s.y, &s.c),
            None => (&y0, &c0),
        };
        let snap = cell_step(params, l_t, y_prev, c_prev)?;
        snapshots.push(snap);
    }
    Ok(SequenceTrace {
        inputs: sequence.to_vec(),
        snapshots,
        y0,
        c0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::SparseTermVector;

    fn unit(dim: usize, idx: usize) -> SparseTermVector {
        SparseTermVector::from_pairs(dim, [(idx, 1)]).unwrap()
    }

    fn scalar_model(w_cell: f64) -> LstmParameters {
        let mut p = LstmParameters::zeros(ModelDims::new(1, 1).unwrap());
        *p.input[Gate::Cell as usize].get_mut(0, 0) = w_cell;
        p
    }

    #[test]
    fn param_counts() {
        assert_eq!(count_parameters(ModelDims::new(1, 1).unwrap()), 15);
        assert_eq!(count_parameters(ModelDims::new(50, 8).unwrap()), 1912);
        assert_eq!(count_parameters(ModelDims::new(37_500, 96).unwrap()), 14_437_536);
        for (d, n) in [(1, 1), (50, 8), (7, 3), (200, 16)] {
            let dims = ModelDims::new(d, n).unwrap();
            assert_eq!(LstmParameters::zeros(dims).len() as u64, count_parameters(dims));
        }
        assert!(ModelDims::new(0, 3).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = ModelDims::new(50, 8).unwrap();
        let a = init_parameters(dims, 11);
        assert_eq!(a, init_parameters(dims, 11));
        assert_ne!(a, init_parameters(dims, 12));
        assert!(a.bias[Gate::Forget as usize].iter().all(|&b| b == 1.0));
        for g in [Gate::Output, Gate::Input, Gate::Cell] {
            assert!(a.bias[g as usize].iter().all(|&b| b == 0.0));
        }
        assert!(a.peephole.iter().flatten().all(|&p| p == 0.0));
        let bound = (6.0f64 / 58.0).sqrt();
        for m in &a.input {
            assert!(m.as_slice().iter().all(|v| v.abs() <= bound));
        }
        let rec_bound = (6.0f64 / 16.0).sqrt();
        for m in &a.recurrent {
            assert!(m.as_slice().iter().all(|v| v.abs() <= rec_bound));
        }
    }

    #[test]
    fn zero_model_step() {
        let dims = ModelDims::new(5, 3).unwrap();
        let p = LstmParameters::zeros(dims);
        let s = cell_step(&p, &unit(5, 2), &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(s.y_g.iter().all(|&v| v == 0.0));
        for gate in [&s.i, &s.f, &s.o] {
            assert!(gate.iter().all(|&v| v == 0.5));
        }
        assert!(s.c.iter().chain(&s.y).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_step_by_hand() {
        let p = scalar_model(0.5);
        let s = cell_step(&p, &unit(1, 0), &[0.0], &[0.2]).unwrap();
        let y_g = 0.5f64.tanh();
        let c = 0.5 * 0.2 + 0.5 * y_g;
        assert!((s.y_g[0] - 0.462_117_157_260_009_8).abs() < 1e-15);
        assert!((s.c[0] - c).abs() < 1e-15);
        assert!((s.c[0] - 0.331_06).abs() < 1e-5);
        assert!((s.y[0] - 0.5 * c.tanh()).abs() < 1e-15);
        assert!((s.y[0] - 0.1597).abs() < 1e-4);
    }

    #[test]
    fn closed_input_gate_keeps_cell() {
        let dims = ModelDims::new(4, 2).unwrap();
        let mut p = LstmParameters::zeros(dims);
        p.bias[Gate::Input as usize].fill(-50.0);
        *p.input[Gate::Cell as usize].get_mut(0, 1) = 3.0;
        let c_prev = [0.7, -1.3];
        let s = cell_step(&p, &unit(4, 1), &[0.1, 0.2], &c_prev).unwrap();
        for (k, cp) in c_prev.iter().enumerate() {
            assert!((s.i[k] * s.y_g[k]).abs() < 1e-20);
            assert!((s.c[k] - s.f[k] * cp).abs() < 1e-20);
        }
    }

    #[test]
    fn dimension_checks() {
        let p = LstmParameters::zeros(ModelDims::new(4, 2).unwrap());
        assert!(cell_step(&p, &unit(3, 0), &[0.0; 2], &[0.0; 2]).is_err());
        assert!(cell_step(&p, &unit(4, 0), &[0.0; 3], &[0.0; 2]).is_err());
        assert!(matches!(embed_sequence(&p, &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let mut p = scalar_model(0.0);
        p.bias[Gate::Cell as usize][0] = f64::NAN;
        assert!(matches!(
            cell_step(&p, &unit(1, 0), &[0.0], &[0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let p = LstmParameters::zeros(ModelDims::new(6, 4).unwrap());
        let seq: Vec<_> = (0..5).map(|i| unit(6, i)).collect();
        assert!(embed_sequence(&p, &seq).unwrap().embedding().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_scalar_chain() {
        let p = scalar_model(0.5);
        let trace = embed_sequence_from(&p, &[unit(1, 0), unit(1, 0)], vec![0.0], vec![0.2]).unwrap();
        // Step 2 by hand: gates are 0.5 (zero recurrent weights), y_g = tanh(0.5).
        let c1 = 0.5 * 0.2 + 0.5 * 0.5f64.tanh();
        let c2 = 0.5 * c1 + 0.5 * 0.5f64.tanh();
        assert!((trace.snapshots[1].c[0] - c2).abs() < 1e-15);
        assert!((trace.embedding()[0] - 0.5 * c2.tanh()).abs() < 1e-15);
    }

    #[test]
    fn embedding_is_last_output() {
        let dims = ModelDims::new(10, 4).unwrap();
        let p = init_parameters(dims, 3);
        let seq = vec![unit(10, 1), unit(10, 7)];
        let trace = embed_sequence(&p, &seq).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.embedding(), trace.snapshots[1].y.as_slice());
        let first = cell_step(&p, &seq[0], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(embed_sequence(&p, &seq[..1]).unwrap().embedding(), first.y.as_slice());
    }
}
