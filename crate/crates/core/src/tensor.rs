//! Dense row-major tensors.
//!
//! Activations are rank 4 in channels-last order `[B, H, W, C]`, with element
//! `(b, h, w, c)` stored at `((b·H + h)·W + w)·C + c`. Parameters and logits use
//! the same type with whatever rank fits them (`[Cin, Cout]`, `[C]`, `[B, K]`).

use crate::dtype::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor<{}>{:?}", std::any::type_name::<T>(), self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Tensor::from_vec",
                format!("shape {shape:?} holds {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Size of the trailing (channel) axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as `[N, last_dim]`.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.last_dim()).unwrap_or(0)
    }

    /// Shape as `(B, H, W, C)`; errors unless rank 4.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, h, w, c] => Ok((b, h, w, c)),
            _ => Err(Error::dim(
                op,
                format!("expected rank-4 [B,H,W,C], got {:?}", self.shape),
            )),
        }
    }

    #[inline]
    pub fn index4(&self, b: usize, h: usize, w: usize, c: usize) -> usize {
        let (hh, ww, cc) = (self.shape[1], self.shape[2], self.shape[3]);
        ((b * hh + h) * ww + w) * cc + c
    }

    #[inline]
    pub fn at4(&self, b: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.index4(b, h, w, c)]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn norm_l2(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b * b).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Select samples along axis 0.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let per = if self.shape.is_empty() || self.shape[0] == 0 {
            0
        } else {
            self.data.len() / self.shape[0]
        };
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("Tensor::stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim(
                    "Tensor::stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_index_formula() {
        let t = Tensor::<f64>::from_fn([2, 3, 4, 5], |i| i as f64);
        let (b, h, w, c) = (1, 2, 3, 4);
        let i = ((b * 3 + h) * 4 + w) * 5 + c;
        assert_eq!(t.index4(b, h, w, c), i);
        assert_eq!(t.at4(b, h, w, c), i as f64);
    }

    #[test]
    fn reshape_round_trip() {
        let t = Tensor::<f32>::from_fn([2, 2, 3, 1], |i| i as f32);
        let flat = t.clone().reshape([12]).unwrap();
        let back = flat.reshape([2, 2, 3, 1]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::<f64>::from_vec([2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn gather_and_stack() {
        let t = Tensor::<f64>::from_fn([3, 2], |i| i as f64);
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
        let a = Tensor::<f64>::ones([2]);
        let s = Tensor::stack(&[&a, &a]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
    }
}
