//! Dense row-major tensors and the raw numeric kernels used by the autodiff
//! graph. Precision is selectable through the [`Element`] trait: `f32` for
//! training, `f64` for verification runs and gradient checking.

use std::fmt;

use crate::error::{Error, Result};

/// Scalar type a tensor can hold.
pub trait Element:
    num_traits::Float + num_traits::NumCast + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
}

/// Convert an `f64` into the element type. All randomness and constants are
/// produced in `f64` and narrowed, so f32/f64 runs draw identical streams.
pub fn scalar<E: Element>(x: f64) -> E {
    E::from(x).expect("f64 -> element conversion cannot fail for float targets")
}

/// Dense multi-dimensional array, row-major.
///
/// Invariants: element count equals the product of the shape extents, and all
/// elements are finite. Constructors and every graph primitive enforce both;
/// NaN/Inf is an error, never silent.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor::new",
                detail: format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor::new" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![E::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, value: E) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| scalar(v)).collect())
    }

    pub fn scalar_value(value: E) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "tensor::item",
                detail: format!("expected scalar, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Cast element type; f32 -> f64 is exact, f64 -> f32 rounds to nearest.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from(v).unwrap()).collect(),
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

// ── matmul kernels ──────────────────────────────────────────────────────
//
// Three variants so backward never materializes a transposed copy:
//   nn: C = A · B          A[m,k]  B[k,n]
//   nt: C = A · Bᵀ         A[m,k]  B[n,k]
//   tn: C = Aᵀ · B         A[m,k'] (used as [k',m] transposed)  B[m,n]
// All accumulate into `out` (caller zeroes when assignment is wanted).

pub(crate) fn mm_nn<E: Element>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

pub(crate) fn mm_nt<E: Element>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for p in 0..k {
                acc = acc + arow[p] * brow[p];
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

pub(crate) fn mm_tn<E: Element>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    // a is [m, k] read as transposed: out[k, n] += aᵀ · b with b[m, n]
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// Permute axes of a row-major buffer, returning the new buffer and shape.
/// Walks the output in order with an odometer over input strides; when the
/// innermost output axis is contiguous in the input, rows are copied whole.
pub(crate) fn permute_data<E: Element>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<E>, Vec<usize>) {
    let ndim = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut coords = vec![0usize; ndim];
    let mut src = 0usize;
    let inner = out_shape[ndim - 1];
    let inner_contiguous = step[ndim - 1] == 1;
    while out.len() < data.len() {
        if inner_contiguous {
            out.extend_from_slice(&data[src..src + inner]);
            src += inner;
            coords[ndim - 1] = inner;
        } else {
            out.push(data[src]);
            src += step[ndim - 1];
            coords[ndim - 1] += 1;
        }
        // odometer carry, rewinding the stride walked on each wrapped axis
        for d in (0..ndim).rev() {
            if coords[d] < out_shape[d] {
                break;
            }
            src -= step[d] * out_shape[d];
            coords[d] = 0;
            if d == 0 {
                break;
            }
            coords[d - 1] += 1;
            src += step[d - 1];
        }
    }
    (out, out_shape)
}
