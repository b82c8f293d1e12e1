//! Operation recording and reverse-mode replay.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

enum Record {
    Matmul { a: Tensor, b: Tensor, out: Tensor },
    MatmulNt { a: Tensor, b: Tensor, out: Tensor },
    Bin { kind: BinKind, a: Tensor, b: Tensor, row_broadcast: bool, out: Tensor },
    Relu { a: Tensor, out: Tensor },
    Exp { a: Tensor, out: Tensor },
    Log { a: Tensor, out: Tensor },
    Scale { a: Tensor, factor: f64, out: Tensor },
    ScaleByScalar { a: Tensor, s: Tensor, out: Tensor },
    SoftmaxRows { a: Tensor, temp: f64, out: Tensor },
    LogSoftmaxRows { a: Tensor, temp: f64, out: Tensor },
    SegmentSum { a: Tensor, ids: Rc<Vec<usize>>, out: Tensor },
    SegmentMax { a: Tensor, argmax: Vec<usize>, out: Tensor },
    GatherRows { a: Tensor, idx: Rc<Vec<usize>>, out: Tensor },
    ScaleRows { a: Tensor, coeffs: Rc<Vec<f64>>, out: Tensor },
    ConcatCols { parts: Vec<Tensor>, out: Tensor },
    LayerNorm { a: Tensor, gain: Tensor, bias: Tensor, mean: Vec<f64>, rstd: Vec<f64>, out: Tensor },
    Dropout { a: Tensor, mask_scale: Vec<f64>, out: Tensor },
    SumAll { a: Tensor, out: Tensor },
    CrossEntropy { logits: Tensor, labels: Rc<Vec<usize>>, probs: Vec<f64>, out: Tensor },
}

impl Record {
    fn output(&self) -> &Tensor {
        match self {
            Record::Matmul { out, .. }
            | Record::MatmulNt { out, .. }
            | Record::Bin { out, .. }
            | Record::Relu { out, .. }
            | Record::Exp { out, .. }
            | Record::Log { out, .. }
            | Record::Scale { out, .. }
            | Record::ScaleByScalar { out, .. }
            | Record::SoftmaxRows { out, .. }
            | Record::LogSoftmaxRows { out, .. }
            | Record::SegmentSum { out, .. }
            | Record::SegmentMax { out, .. }
            | Record::GatherRows { out, .. }
            | Record::ScaleRows { out, .. }
            | Record::ConcatCols { out, .. }
            | Record::LayerNorm { out, .. }
            | Record::Dropout { out, .. }
            | Record::SumAll { out, .. }
            | Record::CrossEntropy { out, .. } => out,
        }
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(TensorError::Contract {
            op,
            msg: format!("expected a 2-d tensor, got shape {:?}", s),
        });
    }
    Ok((s[0], s[1]))
}

/// Records forward operations and replays them in reverse for gradients.
///
/// One tape serves one forward/backward pass and is confined to a single
/// logical thread; independent passes on independent tapes may run on
/// separate threads.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_records(&self) -> usize {
        self.records.borrow().len()
    }

    fn push(&self, rec: Record) {
        self.records.borrow_mut().push(rec);
    }

    fn finish<F>(&self, out: Tensor, on_path: bool, make: F) -> Tensor
    where
        F: FnOnce(Tensor) -> Record,
    {
        if on_path {
            self.push(make(out.clone()));
        }
        out
    }

    /// `a [m×k] · b [k×n] -> [m×n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, ka) = require_2d("matmul", a)?;
        let (kb, n) = require_2d("matmul", b)?;
        if ka != kb {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = gemm_nn(&a.data(), &b.data(), m, ka, n);
        let on_path = a.is_grad_path() || b.is_grad_path();
        let out = Tensor::op_output(vec![m, n], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Matmul { a: a.clone(), b: b.clone(), out }))
    }

    /// `a [m×k] · b[n×k]ᵀ -> [m×n]`.
    pub fn matmul_nt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, ka) = require_2d("matmul_nt", a)?;
        let (n, kb) = require_2d("matmul_nt", b)?;
        if ka != kb {
            return Err(TensorError::DimensionMismatch {
                op: "matmul_nt",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let data = gemm_nt(&a.data(), &b.data(), m, ka, n);
        let on_path = a.is_grad_path() || b.is_grad_path();
        let out = Tensor::op_output(vec![m, n], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::MatmulNt { a: a.clone(), b: b.clone(), out }))
    }

    fn binary(&self, kind: BinKind, op: &'static str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let sa = a.shape();
        let sb = b.shape();
        let row_broadcast = if sa == sb {
            false
        } else {
            // The only supported broadcast: b is a trailing row vector.
            let cols = *sa.last().unwrap_or(&0);
            let b_is_row = sb == [cols] || sb == [1, cols];
            if sa.len() == 2 && b_is_row {
                true
            } else {
                return Err(TensorError::DimensionMismatch { op, lhs: sa, rhs: sb });
            }
        };
        let av = a.data();
        let bv = b.data();
        let data: Vec<f64> = if row_broadcast {
            let cols = sa[1];
            av.iter()
                .enumerate()
                .map(|(i, x)| {
                    let y = bv[i % cols];
                    match kind {
                        BinKind::Add => x + y,
                        BinKind::Sub => x - y,
                        BinKind::Mul => x * y,
                    }
                })
                .collect()
        } else {
            av.iter()
                .zip(bv.iter())
                .map(|(x, y)| match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                })
                .collect()
        };
        drop(av);
        drop(bv);
        let on_path = a.is_grad_path() || b.is_grad_path();
        let out = Tensor::op_output(sa, data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Bin {
            kind,
            a: a.clone(),
            b: b.clone(),
            row_broadcast,
            out,
        }))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinKind::Add, "add", a, b)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinKind::Sub, "sub", a, b)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinKind::Mul, "mul", a, b)
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Relu { a: a.clone(), out }))
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data().iter().map(|x| x.exp()).collect();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Exp { a: a.clone(), out }))
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        if let Some(bad) = a.data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("log of non-positive value {}", bad),
            });
        }
        let data: Vec<f64> = a.data().iter().map(|x| x.ln()).collect();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Log { a: a.clone(), out }))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let data: Vec<f64> = a.data().iter().map(|x| x * factor).collect();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Scale { a: a.clone(), factor, out }))
    }

    /// Multiplication by a single-element tensor, differentiable in both.
    pub fn scale_by(&self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(TensorError::Contract {
                op: "scale_by",
                msg: format!("scale tensor must hold one element, got shape {:?}", s.shape()),
            });
        }
        let sv = s.item();
        let data: Vec<f64> = a.data().iter().map(|x| x * sv).collect();
        let on_path = a.is_grad_path() || s.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::ScaleByScalar { a: a.clone(), s: s.clone(), out }))
    }

    /// Per-row softmax of `a / temperature`, stabilized by row-max subtraction.
    pub fn softmax_rows(&self, a: &Tensor, temperature: f64) -> Result<Tensor> {
        let (m, n) = require_2d("softmax_rows", a)?;
        if temperature <= 0.0 {
            return Err(TensorError::Parameter {
                op: "softmax_rows",
                msg: format!("temperature must be positive, got {}", temperature),
            });
        }
        let av = a.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let hi = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x / temperature));
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] / temperature - hi).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![m, n], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::SoftmaxRows { a: a.clone(), temp: temperature, out }))
    }

    /// Per-row log-softmax of `a / temperature` via log-sum-exp.
    pub fn log_softmax_rows(&self, a: &Tensor, temperature: f64) -> Result<Tensor> {
        let (m, n) = require_2d("log_softmax_rows", a)?;
        if temperature <= 0.0 {
            return Err(TensorError::Parameter {
                op: "log_softmax_rows",
                msg: format!("temperature must be positive, got {}", temperature),
            });
        }
        let av = a.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let hi = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x / temperature));
            let sum: f64 = row.iter().map(|&x| (x / temperature - hi).exp()).sum();
            let lse = hi + sum.ln();
            for j in 0..n {
                data[i * n + j] = row[j] / temperature - lse;
            }
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![m, n], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::LogSoftmaxRows { a: a.clone(), temp: temperature, out }))
    }

    /// Sums value rows into `num_segments` buckets; empty buckets stay zero.
    pub fn segment_sum(&self, a: &Tensor, ids: &[usize], num_segments: usize) -> Result<Tensor> {
        let (rows, d) = require_2d("segment_sum", a)?;
        if ids.len() != rows {
            return Err(TensorError::Contract {
                op: "segment_sum",
                msg: format!("{} segment ids for {} rows", ids.len(), rows),
            });
        }
        for (row, &id) in ids.iter().enumerate() {
            if id >= num_segments {
                return Err(TensorError::SegmentOutOfRange { id, num_segments, row });
            }
        }
        let av = a.data();
        let mut data = vec![0.0; num_segments * d];
        for (i, &id) in ids.iter().enumerate() {
            let src = &av[i * d..(i + 1) * d];
            let dst = &mut data[id * d..(id + 1) * d];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![num_segments, d], data, on_path);
        let ids = Rc::new(ids.to_vec());
        Ok(self.finish(out, on_path, |out| Record::SegmentSum { a: a.clone(), ids, out }))
    }

    /// Per-column maximum within each segment; empty buckets yield zero rows.
    pub fn segment_max(&self, a: &Tensor, ids: &[usize], num_segments: usize) -> Result<Tensor> {
        let (rows, d) = require_2d("segment_max", a)?;
        if ids.len() != rows {
            return Err(TensorError::Contract {
                op: "segment_max",
                msg: format!("{} segment ids for {} rows", ids.len(), rows),
            });
        }
        for (row, &id) in ids.iter().enumerate() {
            if id >= num_segments {
                return Err(TensorError::SegmentOutOfRange { id, num_segments, row });
            }
        }
        let av = a.data();
        let mut data = vec![f64::NEG_INFINITY; num_segments * d];
        let mut argmax = vec![usize::MAX; num_segments * d];
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..d {
                let v = av[i * d + j];
                if v > data[id * d + j] {
                    data[id * d + j] = v;
                    argmax[id * d + j] = i;
                }
            }
        }
        for (v, am) in data.iter_mut().zip(&argmax) {
            if *am == usize::MAX {
                *v = 0.0;
            }
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![num_segments, d], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::SegmentMax { a: a.clone(), argmax, out }))
    }

    /// Copies rows `idx` of `a` into a new tensor; rows may repeat.
    pub fn gather_rows(&self, a: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let (rows, d) = require_2d("gather_rows", a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Contract {
                op: "gather_rows",
                msg: format!("row index {} out of range for {} rows", bad, rows),
            });
        }
        let av = a.data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&av[i * d..(i + 1) * d]);
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![idx.len(), d], data, on_path);
        let idx = Rc::new(idx.to_vec());
        Ok(self.finish(out, on_path, |out| Record::GatherRows { a: a.clone(), idx, out }))
    }

    /// Multiplies row `i` by the constant `coeffs[i]` (not differentiable in
    /// the coefficients; they encode graph structure).
    pub fn scale_rows(&self, a: &Tensor, coeffs: &[f64]) -> Result<Tensor> {
        let (rows, d) = require_2d("scale_rows", a)?;
        if coeffs.len() != rows {
            return Err(TensorError::Contract {
                op: "scale_rows",
                msg: format!("{} coefficients for {} rows", coeffs.len(), rows),
            });
        }
        let av = a.data();
        let mut data = vec![0.0; rows * d];
        for i in 0..rows {
            let c = coeffs[i];
            for j in 0..d {
                data[i * d + j] = av[i * d + j] * c;
            }
        }
        drop(av);
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![rows, d], data, on_path);
        let coeffs = Rc::new(coeffs.to_vec());
        Ok(self.finish(out, on_path, |out| Record::ScaleRows { a: a.clone(), coeffs, out }))
    }

    /// Concatenates 2-d tensors with equal row counts along the columns.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::Contract {
                op: "concat_cols",
                msg: "no tensors to concatenate".into(),
            });
        }
        let (rows, _) = require_2d("concat_cols", &parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = require_2d("concat_cols", p)?;
            if r != rows {
                return Err(TensorError::DimensionMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = p.data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let on_path = parts.iter().any(Tensor::is_grad_path);
        let out = Tensor::op_output(vec![rows, total], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::ConcatCols { parts: parts.to_vec(), out }))
    }

    /// Per-row standardization (population variance, eps inside the root),
    /// then element-wise gain and bias.
    pub fn layer_norm(&self, a: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (m, d) = require_2d("layer_norm", a)?;
        if eps <= 0.0 {
            return Err(TensorError::Parameter {
                op: "layer_norm",
                msg: format!("eps must be positive, got {}", eps),
            });
        }
        if gain.numel() != d || bias.numel() != d {
            return Err(TensorError::DimensionMismatch {
                op: "layer_norm",
                lhs: a.shape(),
                rhs: gain.shape(),
            });
        }
        let av = a.data();
        let gv = gain.data();
        let bv = bias.data();
        let mut data = vec![0.0; m * d];
        let mut means = vec![0.0; m];
        let mut rstds = vec![0.0; m];
        for i in 0..m {
            let row = &av[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            means[i] = mean;
            rstds[i] = rstd;
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        drop(av);
        drop(gv);
        drop(bv);
        let on_path = a.is_grad_path() || gain.is_grad_path() || bias.is_grad_path();
        let out = Tensor::op_output(vec![m, d], data, on_path);
        Ok(self.finish(out, on_path, |out| Record::LayerNorm {
            a: a.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            mean: means,
            rstd: rstds,
            out,
        }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; in
    /// inference mode (or at rate 0) the input passes through untouched and
    /// the rng is not consumed.
    pub fn dropout<R: Rng>(&self, a: &Tensor, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Parameter {
                op: "dropout",
                msg: format!("rate must lie in [0, 1), got {}", rate),
            });
        }
        if !training || rate == 0.0 {
            return Ok(a.clone());
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask_scale: Vec<f64> = (0..a.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = a.data().iter().zip(&mask_scale).map(|(x, m)| x * m).collect();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(a.shape(), data, on_path);
        Ok(self.finish(out, on_path, |out| Record::Dropout { a: a.clone(), mask_scale, out }))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().sum();
        let on_path = a.is_grad_path();
        let out = Tensor::op_output(vec![1], vec![total], on_path);
        Ok(self.finish(out, on_path, |out| Record::SumAll { a: a.clone(), out }))
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        let n = a.numel();
        let s = self.sum_all(a)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// Mean over rows of `-log softmax(logits)[label]`, fused and computed
    /// through log-sum-exp.
    pub fn cross_entropy(&self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (b, c) = require_2d("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(TensorError::Contract {
                op: "cross_entropy",
                msg: format!("{} labels for {} rows", labels.len(), b),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Contract {
                op: "cross_entropy",
                msg: format!("label {} out of range for {} classes", bad, c),
            });
        }
        let lv = logits.data();
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for i in 0..b {
            let row = &lv[i * c..(i + 1) * c];
            let hi = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let sum: f64 = row.iter().map(|&x| (x - hi).exp()).sum();
            let lse = hi + sum.ln();
            total += lse - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        drop(lv);
        let loss = total / b as f64;
        let on_path = logits.is_grad_path();
        let out = Tensor::op_output(vec![1], vec![loss], on_path);
        let labels = Rc::new(labels.to_vec());
        Ok(self.finish(out, on_path, |out| Record::CrossEntropy {
            logits: logits.clone(),
            labels,
            probs,
            out,
        }))
    }

    /// Replays the tape in reverse from a scalar loss, accumulating
    /// `d(loss)/d(t)` into `t.grad` for every `requires_grad` tensor reached.
    /// Calling it again without zeroing accumulates on top.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", loss.shape()),
            });
        }
        // Local buffers keyed by tensor id; flushed into `.grad` as soon as
        // a tensor's total gradient is final.
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        let mut handles: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(loss.id(), vec![1.0]);
        handles.insert(loss.id(), loss.clone());

        let records = self.records.borrow();
        for rec in records.iter().rev() {
            let out = rec.output();
            let Some(g) = grads.remove(&out.id()) else { continue };
            handles.remove(&out.id());
            if out.is_requires_grad() {
                out.accumulate_grad(&g);
            }
            propagate(rec, &g, &mut grads, &mut handles);
        }
        drop(records);

        // Whatever is left belongs to leaves.
        for (id, g) in grads {
            let t = &handles[&id];
            if t.is_requires_grad() {
                t.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

fn add_contribution(
    grads: &mut HashMap<u64, Vec<f64>>,
    handles: &mut HashMap<u64, Tensor>,
    t: &Tensor,
    contrib: Vec<f64>,
) {
    if !t.is_grad_path() {
        return;
    }
    match grads.entry(t.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (acc, v) in e.get_mut().iter_mut().zip(&contrib) {
                *acc += v;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(contrib);
            handles.insert(t.id(), t.clone());
        }
    }
}

fn propagate(
    rec: &Record,
    g: &[f64],
    grads: &mut HashMap<u64, Vec<f64>>,
    handles: &mut HashMap<u64, Tensor>,
) {
    match rec {
        Record::Matmul { a, b, .. } => {
            let (m, k) = (a.dim(0), a.dim(1));
            let n = b.dim(1);
            if a.is_grad_path() {
                let da = gemm_nt(g, &b.data(), m, n, k);
                add_contribution(grads, handles, a, da);
            }
            if b.is_grad_path() {
                let db = gemm_tn(&a.data(), g, m, k, n);
                add_contribution(grads, handles, b, db);
            }
        }
        Record::MatmulNt { a, b, .. } => {
            let (m, k) = (a.dim(0), a.dim(1));
            let n = b.dim(0);
            if a.is_grad_path() {
                let da = gemm_nn(g, &b.data(), m, n, k);
                add_contribution(grads, handles, a, da);
            }
            if b.is_grad_path() {
                let db = gemm_tn(g, &a.data(), m, n, k);
                add_contribution(grads, handles, b, db);
            }
        }
        Record::Bin { kind, a, b, row_broadcast, .. } => {
            match kind {
                BinKind::Add | BinKind::Sub => {
                    if a.is_grad_path() {
                        add_contribution(grads, handles, a, g.to_vec());
                    }
                    if b.is_grad_path() {
                        let sign = if *kind == BinKind::Sub { -1.0 } else { 1.0 };
                        let db = reduce_to_row(g, *row_broadcast, b.numel(), sign);
                        add_contribution(grads, handles, b, db);
                    }
                }
                BinKind::Mul => {
                    if a.is_grad_path() {
                        let bv = b.data();
                        let da: Vec<f64> = if *row_broadcast {
                            let cols = bv.len();
                            g.iter().enumerate().map(|(i, gv)| gv * bv[i % cols]).collect()
                        } else {
                            g.iter().zip(bv.iter()).map(|(gv, x)| gv * x).collect()
                        };
                        drop(bv);
                        add_contribution(grads, handles, a, da);
                    }
                    if b.is_grad_path() {
                        let av = a.data();
                        let prod: Vec<f64> = g.iter().zip(av.iter()).map(|(gv, x)| gv * x).collect();
                        drop(av);
                        let db = reduce_to_row(&prod, *row_broadcast, b.numel(), 1.0);
                        add_contribution(grads, handles, b, db);
                    }
                }
            }
        }
        Record::Relu { a, .. } => {
            if a.is_grad_path() {
                let av = a.data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(av.iter())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                drop(av);
                add_contribution(grads, handles, a, da);
            }
        }
        Record::Exp { a, out } => {
            if a.is_grad_path() {
                let ov = out.data();
                let da: Vec<f64> = g.iter().zip(ov.iter()).map(|(gv, y)| gv * y).collect();
                drop(ov);
                add_contribution(grads, handles, a, da);
            }
        }
        Record::Log { a, .. } => {
            if a.is_grad_path() {
                let av = a.data();
                let da: Vec<f64> = g.iter().zip(av.iter()).map(|(gv, x)| gv / x).collect();
                drop(av);
                add_contribution(grads, handles, a, da);
            }
        }
        Record::Scale { a, factor, .. } => {
            if a.is_grad_path() {
                let da: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                add_contribution(grads, handles, a, da);
            }
        }
        Record::ScaleByScalar { a, s, .. } => {
            let sv = s.item();
            if a.is_grad_path() {
                let da: Vec<f64> = g.iter().map(|gv| gv * sv).collect();
                add_contribution(grads, handles, a, da);
            }
            if s.is_grad_path() {
                let av = a.data();
                let ds: f64 = g.iter().zip(av.iter()).map(|(gv, x)| gv * x).sum();
                drop(av);
                add_contribution(grads, handles, s, vec![ds]);
            }
        }
        Record::SoftmaxRows { a, temp, out } => {
            if a.is_grad_path() {
                let ov = out.data();
                let n = out.dim(1);
                let mut da = vec![0.0; ov.len()];
                for i in 0..out.dim(0) {
                    let y = &ov[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..n {
                        da[i * n + j] = y[j] * (gr[j] - dot) / temp;
                    }
                }
                drop(ov);
                add_contribution(grads, handles, a, da);
            }
        }
        Record::LogSoftmaxRows { a, temp, out } => {
            if a.is_grad_path() {
                let ov = out.data();
                let n = out.dim(1);
                let mut da = vec![0.0; ov.len()];
                for i in 0..out.dim(0) {
                    let ls = &ov[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        da[i * n + j] = (gr[j] - ls[j].exp() * gsum) / temp;
                    }
                }
                drop(ov);
                add_contribution(grads, handles, a, da);
            }
        }
        Record::SegmentSum { a, ids, .. } => {
            if a.is_grad_path() {
                let d = a.dim(1);
                let mut da = vec![0.0; a.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    da[i * d..(i + 1) * d].copy_from_slice(&g[id * d..(id + 1) * d]);
                }
                add_contribution(grads, handles, a, da);
            }
        }
        Record::SegmentMax { a, argmax, .. } => {
            if a.is_grad_path() {
                let d = a.dim(1);
                let mut da = vec![0.0; a.numel()];
                for (flat, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        da[src * d + flat % d] += g[flat];
                    }
                }
                add_contribution(grads, handles, a, da);
            }
        }
        Record::GatherRows { a, idx, .. } => {
            if a.is_grad_path() {
                let d = a.dim(1);
                let mut da = vec![0.0; a.numel()];
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g[r * d..(r + 1) * d];
                    let dst = &mut da[i * d..(i + 1) * d];
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += v;
                    }
                }
                add_contribution(grads, handles, a, da);
            }
        }
        Record::ScaleRows { a, coeffs, .. } => {
            if a.is_grad_path() {
                let d = a.dim(1);
                let mut da = vec![0.0; a.numel()];
                for (i, &c) in coeffs.iter().enumerate() {
                    for j in 0..d {
                        da[i * d + j] = g[i * d + j] * c;
                    }
                }
                add_contribution(grads, handles, a, da);
            }
        }
        Record::ConcatCols { parts, out } => {
            let rows = out.dim(0);
            let total = out.dim(1);
            let mut offset = 0;
            for p in parts {
                let w = p.dim(1);
                if p.is_grad_path() {
                    let mut dp = vec![0.0; rows * w];
                    for i in 0..rows {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    add_contribution(grads, handles, p, dp);
                }
                offset += w;
            }
        }
        Record::LayerNorm { a, gain, bias, mean, rstd, .. } => {
            let (m, d) = (a.dim(0), a.dim(1));
            let av = a.data();
            let gv = gain.data();
            if a.is_grad_path() {
                let mut da = vec![0.0; m * d];
                for i in 0..m {
                    let row = &av[i * d..(i + 1) * d];
                    let gr = &g[i * d..(i + 1) * d];
                    let rs = rstd[i];
                    let mu = mean[i];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let gg = gr[j] * gv[j];
                        let xh = (row[j] - mu) * rs;
                        s1 += gg;
                        s2 += gg * xh;
                    }
                    let inv_d = 1.0 / d as f64;
                    for j in 0..d {
                        let gg = gr[j] * gv[j];
                        let xh = (row[j] - mu) * rs;
                        da[i * d + j] = rs * (gg - s1 * inv_d - xh * s2 * inv_d);
                    }
                }
                add_contribution(grads, handles, a, da);
            }
            if gain.is_grad_path() {
                let mut dg = vec![0.0; d];
                for i in 0..m {
                    for j in 0..d {
                        let xh = (av[i * d + j] - mean[i]) * rstd[i];
                        dg[j] += g[i * d + j] * xh;
                    }
                }
                add_contribution(grads, handles, gain, dg);
            }
            if bias.is_grad_path() {
                let mut db = vec![0.0; d];
                for i in 0..m {
                    for j in 0..d {
                        db[j] += g[i * d + j];
                    }
                }
                add_contribution(grads, handles, bias, db);
            }
        }
        Record::Dropout { a, mask_scale, .. } => {
            if a.is_grad_path() {
                let da: Vec<f64> = g.iter().zip(mask_scale).map(|(gv, m)| gv * m).collect();
                add_contribution(grads, handles, a, da);
            }
        }
        Record::SumAll { a, .. } => {
            if a.is_grad_path() {
                add_contribution(grads, handles, a, vec![g[0]; a.numel()]);
            }
        }
        Record::CrossEntropy { logits, labels, probs, .. } => {
            if logits.is_grad_path() {
                let (b, c) = (logits.dim(0), logits.dim(1));
                let scale = g[0] / b as f64;
                let mut dl = vec![0.0; b * c];
                for i in 0..b {
                    for j in 0..c {
                        let y = if labels[i] == j { 1.0 } else { 0.0 };
                        dl[i * c + j] = scale * (probs[i * c + j] - y);
                    }
                }
                add_contribution(grads, handles, logits, dl);
            }
        }
    }
}

fn reduce_to_row(g: &[f64], row_broadcast: bool, numel: usize, sign: f64) -> Vec<f64> {
    if row_broadcast {
        let mut out = vec![0.0; numel];
        for (i, gv) in g.iter().enumerate() {
            out[i % numel] += sign * gv;
        }
        out
    } else {
        g.iter().map(|gv| sign * gv).collect()
    }
}
