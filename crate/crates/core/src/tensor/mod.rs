//! Dense double-precision tensors and the numeric kernels built on them.
//!
//! [`Tensor`] is a plain row-major value; differentiation happens on a
//! [`Tape`] which records operations over tensors and replays them in reverse.

pub mod fft;
pub mod optim;
pub mod params;
pub mod tape;

pub use optim::{Adam, AdamState};
pub use params::{NamedParams, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite entries.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for op outputs whose shapes are correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Relative L2 distance `‖self − other‖ / ‖other‖` (absolute when `other` is zero).
    pub fn rel_l2(&self, other: &Tensor) -> f64 {
        let num = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = other.norm();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Element access for small tensors and tests.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for extent {n}");
            acc * n + i
        })
    }

    pub fn transpose2(&self) -> Result<Self> {
        let [m, n] = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: vec![0, 0],
            }),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: vec![0, 0, 0],
            }),
        }
    }

    /// Slice along the last axis of a `[B, C, T]` tensor, keeping steps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        let [b, c, t] = self.dims3("slice_time")?;
        if start > end || end > t {
            return Err(Error::InvalidLength(format!("time slice {start}..{end} of length {t}")));
        }
        let len = end - start;
        let mut out = Vec::with_capacity(b * c * len);
        for row in self.data.chunks(t) {
            out.extend_from_slice(&row[start..end]);
        }
        Ok(Self::from_parts(vec![b, c, len], out))
    }

    /// Concatenates `[B, C_i, T]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let [b, _, t] = first.dims3("concat_channels")?;
        let mut channels = 0;
        for p in parts {
            let [pb, pc, pt] = p.dims3("concat_channels")?;
            if pb != b || pt != t {
                return Err(Error::Dimension {
                    op: "concat_channels",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            channels += pc;
        }
        let mut out = Vec::with_capacity(b * channels * t);
        for bi in 0..b {
            for p in parts {
                let pc = p.shape[1];
                out.extend_from_slice(&p.data[bi * pc * t..(bi + 1) * pc * t]);
            }
        }
        Ok(Self::from_parts(vec![b, channels, t], out))
    }
}

/// Plain matrix product `[m×k]·[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2("matmul")?;
    let [k2, n] = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let n = rows[0].len();
        Tensor::new(&[rows.len(), n], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let [m, k] = a.dims2("t").unwrap();
        let [_, n] = b.dims2("t").unwrap();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        assert_eq!(matmul(&Tensor::zeros(&[2, 2]), &a).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_matches_reference() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t2(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let oracle = triple_loop(&a, &b);
        assert_eq!(oracle, t2(&[&[19.0, 22.0], &[43.0, 50.0]]));
        assert_eq!(matmul(&a, &b).unwrap(), oracle);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn gemm_variants_agree() {
        let a = t2(&[&[1.0, -2.0, 0.5], &[3.0, 4.0, -1.0]]);
        let b = t2(&[&[2.0, 1.0], &[0.0, -1.0], &[1.5, 2.5]]);
        let ab = matmul(&a, &b).unwrap();
        let mut nt = vec![0.0; 4];
        gemm_nt(a.data(), b.transpose2().unwrap().data(), &mut nt, 2, 3, 2);
        assert_eq!(nt, ab.data());
        let mut tn = vec![0.0; 4];
        gemm_tn(a.transpose2().unwrap().data(), b.data(), &mut tn, 3, 2, 2);
        assert_eq!(tn, ab.data());
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[1, 2, 3], vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 3, 3]);
        assert_eq!(c.slice_time(1, 3).unwrap().data(), &[2.0, 3.0, 5.0, 6.0, 8.0, 9.0]);
    }
}
