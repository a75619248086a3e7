//! Minimal dense-tensor compute tape with reverse-mode differentiation.
//!
//! Tensors are 64-bit, row-major, and effectively 2-D (`[rows, cols]`;
//! scalars are `[1, 1]`). Operations are recorded on a [`Tape`] whenever any
//! input requires gradients; [`Tape::backward`] replays the tape in reverse.
//! There is no broadcasting except scalar-by-tensor `scale`; all shape
//! alignment is explicit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{primitive}: shape mismatch: {detail}")]
    ShapeMismatch { primitive: &'static str, detail: String },
    #[error("{primitive}: non-finite value in {which}")]
    NonFinite { primitive: &'static str, which: &'static str },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: variable {0} is not on this tape")]
    DetachedLoss(usize),
    #[error("grad_check: function is not deterministic ({0} vs {1})")]
    NonDeterministic(f64, f64),
    #[error("embed_lookup: index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense 64-bit tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { shape: vec![r, c], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

impl VarId {
    /// Position of this value on its tape; indexes the gradient slots
    /// returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Add,
    Scale(f64),
    Relu,
    Gelu,
    LayerNorm,
    SoftmaxRows,
    MseReduce,
    Transpose,
    Slice { r0: usize, c0: usize },
    ConcatRows,
    ConcatCols,
    Reshape,
    EmbedLookup { ids: Vec<usize> },
    /// Externally computed scalar with a fixed gradient w.r.t. its input.
    Spliced { grad: Tensor },
}

struct Node {
    op: Op,
    inputs: Vec<VarId>,
    value: Tensor,
    requires_grad: bool,
}

/// Single-owner Wengert tape. Nodes are appended in topological order;
/// `backward` visits them exactly once in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// Inference-only tape: values are tracked but never marked differentiable.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> VarId {
        let rg = requires_grad && self.recording;
        self.push(Op::Leaf, vec![], t, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(Op::Leaf, vec![], t, false)
    }

    fn push(&mut self, op: Op, inputs: Vec<VarId>, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node { op, inputs, value, requires_grad });
        VarId(self.nodes.len() - 1)
    }

    fn out(&mut self, primitive: &'static str, op: Op, inputs: Vec<VarId>, value: Tensor) -> Result<VarId> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { primitive, which: "output" });
        }
        let rg = self.recording && inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, inputs, value, rg))
    }

    fn check_finite(&self, primitive: &'static str, v: VarId) -> Result<()> {
        if !self.nodes[v.0].value.is_finite() {
            return Err(AutodiffError::NonFinite { primitive, which: "input" });
        }
        Ok(())
    }

    // ── Primitives ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.is_2d() || !tb.is_2d() || ta.cols() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        self.check_finite("matmul", a)?;
        self.check_finite("matmul", b)?;
        let out = matmul_raw(ta, tb);
        self.out("matmul", Op::Matmul, vec![a, b], out)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        self.check_finite("add", a)?;
        self.check_finite("add", b)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape.clone(), data);
        self.out("add", Op::Add, vec![a, b], out)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        if !c.is_finite() {
            return Err(AutodiffError::NonFinite { primitive: "scale", which: "factor" });
        }
        self.check_finite("scale", a)?;
        let ta = &self.nodes[a.0].value;
        let out = Tensor::new(ta.shape.clone(), ta.data.iter().map(|x| x * c).collect());
        self.out("scale", Op::Scale(c), vec![a], out)
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        self.check_finite("relu", a)?;
        let ta = &self.nodes[a.0].value;
        let out = Tensor::new(ta.shape.clone(), ta.data.iter().map(|&x| x.max(0.0)).collect());
        self.out("relu", Op::Relu, vec![a], out)
    }

    pub fn gelu(&mut self, a: VarId) -> Result<VarId> {
        self.check_finite("gelu", a)?;
        let ta = &self.nodes[a.0].value;
        let out = Tensor::new(ta.shape.clone(), ta.data.iter().map(|&x| gelu_fwd(x)).collect());
        self.out("gelu", Op::Gelu, vec![a], out)
    }

    /// Row-wise layer normalization with learned gain and bias (`[1, d]` each).
    /// Variance uses eps = 1e-5.
    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId) -> Result<VarId> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let d = tx.cols();
        if tg.shape() != [1, d] || tb.shape() != [1, d] {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "layer_norm",
                detail: format!("x {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            });
        }
        self.check_finite("layer_norm", x)?;
        self.check_finite("layer_norm", gain)?;
        self.check_finite("layer_norm", bias)?;
        let mut out = Tensor::zeros(tx.rows(), d);
        for r in 0..tx.rows() {
            let row = &tx.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..d {
                out.data[r * d + c] = (row[c] - mean) * inv * tg.data[c] + tb.data[c];
            }
        }
        self.out("layer_norm", Op::LayerNorm, vec![x, gain, bias], out)
    }

    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId> {
        self.check_finite("softmax_rows", a)?;
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = &ta.data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out.data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out.data[i * c + j] /= z;
            }
        }
        self.out("softmax_rows", Op::SoftmaxRows, vec![a], out)
    }

    /// Mean over all elements of the squared difference. Scalar output.
    pub fn mse_reduce(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "mse_reduce",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        self.check_finite("mse_reduce", a)?;
        self.check_finite("mse_reduce", b)?;
        let n = ta.data.len() as f64;
        let s: f64 = ta.data.iter().zip(&tb.data).map(|(x, y)| (x - y) * (x - y)).sum();
        self.out("mse_reduce", Op::MseReduce, vec![a, b], Tensor::scalar(s / n))
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        self.check_finite("transpose", a)?;
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = ta.data[i * c + j];
            }
        }
        self.out("transpose", Op::Transpose, vec![a], out)
    }

    /// Rectangular slice `[r0..r1, c0..c1]`.
    pub fn slice(&mut self, a: VarId, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        if r1 > ta.rows() || c1 > ta.cols() || r0 >= r1 || c0 >= c1 {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "slice",
                detail: format!("[{r0}..{r1}, {c0}..{c1}] of {:?}", ta.shape()),
            });
        }
        self.check_finite("slice", a)?;
        let cols = ta.cols();
        let mut out = Tensor::zeros(r1 - r0, c1 - c0);
        for (ri, r) in (r0..r1).enumerate() {
            let src = &ta.data[r * cols + c0..r * cols + c1];
            out.data[ri * (c1 - c0)..(ri + 1) * (c1 - c0)].copy_from_slice(src);
        }
        self.out("slice", Op::Slice { r0, c0 }, vec![a], out)
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "concat",
                detail: "empty input list".into(),
            });
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.cols() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    primitive: "concat",
                    detail: format!("column mismatch: {} vs {}", t.cols(), cols),
                });
            }
            self.check_finite("concat", p)?;
            rows += t.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        self.out("concat", Op::ConcatRows, parts.to_vec(), Tensor::new(vec![rows, cols], data))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "concat",
                detail: "empty input list".into(),
            });
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    primitive: "concat",
                    detail: format!("row mismatch: {} vs {}", t.rows(), rows),
                });
            }
            self.check_finite("concat", p)?;
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                data.extend_from_slice(&t.data[r * t.cols()..(r + 1) * t.cols()]);
            }
        }
        self.out("concat", Op::ConcatCols, parts.to_vec(), Tensor::new(vec![rows, cols], data))
    }

    pub fn reshape(&mut self, a: VarId, rows: usize, cols: usize) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        if rows * cols != ta.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "reshape",
                detail: format!("{:?} -> [{rows}, {cols}]", ta.shape()),
            });
        }
        self.check_finite("reshape", a)?;
        let out = Tensor::new(vec![rows, cols], ta.data.clone());
        self.out("reshape", Op::Reshape, vec![a], out)
    }

    /// Gather rows of `table` by index.
    pub fn embed_lookup(&mut self, table: VarId, ids: &[usize]) -> Result<VarId> {
        let tt = &self.nodes[table.0].value;
        let (rows, d) = (tt.rows(), tt.cols());
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange { index: id, rows });
            }
        }
        self.check_finite("embed_lookup", table)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tt.data[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], data);
        self.out("embed_lookup", Op::EmbedLookup { ids: ids.to_vec() }, vec![table], out)
    }

    /// Splice an externally computed scalar into the tape with a fixed
    /// gradient w.r.t. `x`. Used for losses whose gradient comes from an
    /// analytic side computation (forward-backward occupancies).
    pub fn spliced_scalar(&mut self, x: VarId, value: f64, grad_wrt_x: Tensor) -> Result<VarId> {
        let tx = &self.nodes[x.0].value;
        if grad_wrt_x.shape() != tx.shape() {
            return Err(AutodiffError::ShapeMismatch {
                primitive: "spliced_scalar",
                detail: format!("grad {:?} vs input {:?}", grad_wrt_x.shape(), tx.shape()),
            });
        }
        if !value.is_finite() || !grad_wrt_x.is_finite() {
            return Err(AutodiffError::NonFinite { primitive: "spliced_scalar", which: "input" });
        }
        self.out("spliced_scalar", Op::Spliced { grad: grad_wrt_x }, vec![x], Tensor::scalar(value))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns one gradient slot per tape
    /// node; nodes with `requires_grad` get a tensor (zero if unused), the
    /// rest get `None`.
    pub fn backward(&self, loss: VarId) -> Result<Vec<Option<Tensor>>> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::DetachedLoss(loss.0));
        }
        let lt = &self.nodes[loss.0].value;
        if lt.shape() != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    Some(Tensor::new(n.value.shape.clone(), vec![0.0; n.value.data.len()]))
                } else {
                    None
                }
            })
            .collect();
        if grads[loss.0].is_none() {
            // Loss does not depend on any differentiable leaf; all grads stay zero.
            return Ok(grads);
        }
        grads[loss.0].as_mut().unwrap().data[0] = 1.0;

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(grads)
    }

    fn accumulate(&self, id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let needs = |v: &VarId| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(&a) {
                    // dA = gy . B^T
                    let bt = transpose_raw(tb);
                    let da = matmul_raw(gy, &bt);
                    add_into(grads[a.0].as_mut().unwrap(), &da);
                }
                if needs(&b) {
                    // dB = A^T . gy
                    let at = transpose_raw(ta);
                    let db = matmul_raw(&at, gy);
                    add_into(grads[b.0].as_mut().unwrap(), &db);
                }
            }
            Op::Add => {
                for inp in &node.inputs {
                    if needs(inp) {
                        add_into(grads[inp.0].as_mut().unwrap(), gy);
                    }
                }
            }
            Op::Scale(c) => {
                let a = node.inputs[0];
                if needs(&a) {
                    let g = grads[a.0].as_mut().unwrap();
                    for (o, y) in g.data.iter_mut().zip(&gy.data) {
                        *o += c * y;
                    }
                }
            }
            Op::Relu => {
                let a = node.inputs[0];
                if needs(&a) {
                    let ta = &self.nodes[a.0].value;
                    let g = grads[a.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        if ta.data[i] > 0.0 {
                            g.data[i] += gy.data[i];
                        }
                    }
                }
            }
            Op::Gelu => {
                let a = node.inputs[0];
                if needs(&a) {
                    let ta = &self.nodes[a.0].value;
                    let g = grads[a.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        g.data[i] += gy.data[i] * gelu_bwd(ta.data[i]);
                    }
                }
            }
            Op::LayerNorm => {
                let (x, gain, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let tx = &self.nodes[x.0].value;
                let tg = &self.nodes[gain.0].value;
                let d = tx.cols();
                for r in 0..tx.rows() {
                    let row = &tx.data[r * d..(r + 1) * d];
                    let gyr = &gy.data[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    if needs(&gain) {
                        let g = grads[gain.0].as_mut().unwrap();
                        for c in 0..d {
                            g.data[c] += gyr[c] * xhat[c];
                        }
                    }
                    if needs(&bias) {
                        let g = grads[bias.0].as_mut().unwrap();
                        for c in 0..d {
                            g.data[c] += gyr[c];
                        }
                    }
                    if needs(&x) {
                        // dxhat = gy * gain; dx via the standard layer-norm backward.
                        let dxhat: Vec<f64> = (0..d).map(|c| gyr[c] * tg.data[c]).collect();
                        let s1 = dxhat.iter().sum::<f64>() / d as f64;
                        let s2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let g = grads[x.0].as_mut().unwrap();
                        for c in 0..d {
                            g.data[r * d + c] += inv * (dxhat[c] - s1 - xhat[c] * s2);
                        }
                    }
                }
            }
            Op::SoftmaxRows => {
                let a = node.inputs[0];
                if needs(&a) {
                    let p = &node.value;
                    let c = p.cols();
                    let g = grads[a.0].as_mut().unwrap();
                    for r in 0..p.rows() {
                        let pr = &p.data[r * c..(r + 1) * c];
                        let gyr = &gy.data[r * c..(r + 1) * c];
                        let dot: f64 = pr.iter().zip(gyr).map(|(x, y)| x * y).sum();
                        for j in 0..c {
                            g.data[r * c + j] += pr[j] * (gyr[j] - dot);
                        }
                    }
                }
            }
            Op::MseReduce => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = ta.data.len() as f64;
                let gs = gy.data[0];
                if needs(&a) {
                    let g = grads[a.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        g.data[i] += gs * 2.0 * (ta.data[i] - tb.data[i]) / n;
                    }
                }
                if needs(&b) {
                    let g = grads[b.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        g.data[i] -= gs * 2.0 * (ta.data[i] - tb.data[i]) / n;
                    }
                }
            }
            Op::Transpose => {
                let a = node.inputs[0];
                if needs(&a) {
                    let gt = transpose_raw(gy);
                    add_into(grads[a.0].as_mut().unwrap(), &gt);
                }
            }
            Op::Slice { r0, c0 } => {
                let a = node.inputs[0];
                if needs(&a) {
                    let cols = self.nodes[a.0].value.cols();
                    let (sr, sc) = (node.value.rows(), node.value.cols());
                    let g = grads[a.0].as_mut().unwrap();
                    for r in 0..sr {
                        for c in 0..sc {
                            g.data[(r0 + r) * cols + c0 + c] += gy.data[r * sc + c];
                        }
                    }
                }
            }
            Op::ConcatRows => {
                let mut off = 0;
                for inp in &node.inputs {
                    let len = self.nodes[inp.0].value.data.len();
                    if needs(inp) {
                        let g = grads[inp.0].as_mut().unwrap();
                        for i in 0..len {
                            g.data[i] += gy.data[off + i];
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatCols => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for inp in &node.inputs {
                    let c = self.nodes[inp.0].value.cols();
                    if needs(inp) {
                        let g = grads[inp.0].as_mut().unwrap();
                        for r in 0..rows {
                            for j in 0..c {
                                g.data[r * c + j] += gy.data[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::Reshape => {
                let a = node.inputs[0];
                if needs(&a) {
                    let g = grads[a.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        g.data[i] += gy.data[i];
                    }
                }
            }
            Op::EmbedLookup { ids } => {
                let a = node.inputs[0];
                if needs(&a) {
                    let d = node.value.cols();
                    let g = grads[a.0].as_mut().unwrap();
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            g.data[id * d + c] += gy.data[row * d + c];
                        }
                    }
                }
            }
            Op::Spliced { grad } => {
                let a = node.inputs[0];
                if needs(&a) {
                    let gs = gy.data[0];
                    let g = grads[a.0].as_mut().unwrap();
                    for i in 0..g.data.len() {
                        g.data[i] += gs * grad.data[i];
                    }
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let dst = &mut out.data[i * n..(i + 1) * n];
        for k in 0..p {
            let av = a.data[i * p + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                dst[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out.data[j * r + i] = a.data[i * c + j];
        }
    }
    out
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Max relative error between analytic gradients of `f` and central finite
/// differences with step `epsilon`, over every entry of every parameter.
/// Relative error is `|analytic - fd| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = ps.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    // Determinism probe: two evaluations at the base point must agree bitwise.
    let v0 = eval(params)?;
    let v1 = eval(params)?;
    if v0.to_bits() != v1.to_bits() {
        return Err(AutodiffError::NonDeterministic(v0, v1));
    }

    let mut tape = Tape::new();
    let vars: Vec<VarId> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut max_err: f64 = 0.0;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads[vars[pi].0].as_ref().expect("leaf requires grad");
        for i in 0..p.data.len() {
            let orig = probe[pi].data[i];
            probe[pi].data[i] = orig + epsilon;
            let fp = eval(&probe)?;
            probe[pi].data[i] = orig - epsilon;
            let fm = eval(&probe)?;
            probe[pi].data[i] = orig;
            let fd = (fp - fm) / (2.0 * epsilon);
            let a = analytic.data[i];
            let err = (a - fd).abs() / a.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
