use std::fmt;

use super::AutodiffError;

/// Dense row-major tensor of rank 0, 1 or 2.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.len() > 2 || shape.contains(&0) {
            return Err(AutodiffError::InvalidShape(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows and columns when viewed as a matrix; rank-1 tensors are one row.
    pub fn rows_cols(&self) -> (usize, usize) {
        rows_cols(&self.shape)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

pub(crate) fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("rank > 2"),
    }
}

/// Right-aligned broadcast of two shapes of rank at most 2.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

pub(crate) fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    let (sr, sc) = rows_cols(&x.shape);
    let (tr, tc) = rows_cols(shape);
    let mut data = Vec::with_capacity(tr * tc);
    for i in 0..tr {
        let si = if sr == 1 { 0 } else { i };
        for j in 0..tc {
            let sj = if sc == 1 { 0 } else { j };
            data.push(x.data[si * sc + sj]);
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Inverse of [`broadcast_to`]: sums over broadcast dimensions.
pub(crate) fn sum_to(x: &Tensor, shape: &[usize]) -> Tensor {
    let (sr, sc) = rows_cols(&x.shape);
    let (tr, tc) = rows_cols(shape);
    let mut data = vec![0.0; tr * tc];
    for i in 0..sr {
        let ti = if tr == 1 { 0 } else { i };
        for j in 0..sc {
            let tj = if tc == 1 { 0 } else { j };
            data[ti * tc + tj] += x.data[i * sc + j];
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.rows_cols();
    let (_, n) = b.rows_cols();
    let mut c = vec![0.0; m * n];
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements in row-major
    // order, matching the strides handed to dgemm.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor {
        shape: vec![m, n],
        data: c,
    }
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = a.rows_cols();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor {
        shape: vec![c, r],
        data,
    }
}

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    s
}

pub(crate) fn slice_last(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (r, c) = x.rows_cols();
    let mut data = Vec::with_capacity(r * len);
    for i in 0..r {
        data.extend_from_slice(&x.data[i * c + start..i * c + start + len]);
    }
    Tensor {
        shape: with_last(&x.shape, len),
        data,
    }
}

pub(crate) fn pad_last(x: &Tensor, start: usize, total: usize) -> Tensor {
    let (r, c) = x.rows_cols();
    let mut data = vec![0.0; r * total];
    for i in 0..r {
        data[i * total + start..i * total + start + c].copy_from_slice(&x.data[i * c..(i + 1) * c]);
    }
    Tensor {
        shape: with_last(&x.shape, total),
        data,
    }
}

pub(crate) fn concat_last(parts: &[&Tensor]) -> Tensor {
    let (r, _) = parts[0].rows_cols();
    let total: usize = parts.iter().map(|p| p.rows_cols().1).sum();
    let mut data = Vec::with_capacity(r * total);
    for i in 0..r {
        for p in parts {
            let (_, c) = p.rows_cols();
            data.extend_from_slice(&p.data[i * c..(i + 1) * c]);
        }
    }
    Tensor {
        shape: with_last(&parts[0].shape, total),
        data,
    }
}

/// `y[.., t] = sum(x[.., t..t+w])` along the last axis.
pub(crate) fn window_sum(x: &Tensor, w: usize) -> Tensor {
    let (r, c) = x.rows_cols();
    let m = c + 1 - w;
    let mut data = Vec::with_capacity(r * m);
    for i in 0..r {
        let row = &x.data[i * c..(i + 1) * c];
        for t in 0..m {
            data.push(row[t..t + w].iter().sum());
        }
    }
    Tensor {
        shape: with_last(&x.shape, m),
        data,
    }
}

/// Adjoint of [`window_sum`]: spreads each window total back over its members.
pub(crate) fn window_sum_adjoint(g: &Tensor, w: usize) -> Tensor {
    let (r, m) = g.rows_cols();
    let n = m + w - 1;
    let mut data = Vec::with_capacity(r * n);
    for i in 0..r {
        let row = &g.data[i * m..(i + 1) * m];
        for j in 0..n {
            let lo = (j + 1).saturating_sub(w);
            let hi = j.min(m - 1);
            data.push(row[lo..=hi].iter().sum());
        }
    }
    Tensor {
        shape: with_last(&g.shape, n),
        data,
    }
}

pub(crate) fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    Tensor {
        shape: vec![idx.len()],
        data: idx.iter().map(|&i| x.data[i]).collect(),
    }
}

pub(crate) fn scatter_add(g: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(shape);
    for (&i, &v) in idx.iter().zip(&g.data) {
        out.data[i] += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[3, 4], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 4], &[3, 1]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shape(&[3, 4], &[4, 3]), None);
    }

    #[test]
    fn window_sum_adjoint_is_transpose() {
        // <window_sum(x), g> == <x, adjoint(g)>
        let x = Tensor::matrix(2, 7, (0..14).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let g = Tensor::matrix(2, 5, (0..10).map(|v| (v as f64).sin()).collect()).unwrap();
        let y = window_sum(&x, 3);
        let xa = window_sum_adjoint(&g, 3);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xa.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        assert_eq!(matmul(&a, &b).data(), &[58., 64., 139., 154.]);
        assert_eq!(transpose(&a).shape(), &[3, 2]);
        assert_eq!(transpose(&a).data(), &[1., 4., 2., 5., 3., 6.]);
    }
}
