use crate::error::{Error, Result};

/// Dense row-major 2-D array of `f64`. Scalars are `1 x 1`, row vectors `1 x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!("tensor shape {rows}x{cols} does not match {} values", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    /// `n x 1` column.
    pub fn column(values: Vec<f64>) -> Self {
        Tensor { rows: values.len(), cols: 1, data: values }
    }

    /// `1 x n` row.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise combination of equal-shape tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column sums as a `1 x cols` row.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *o += v;
            }
        }
        Tensor::row(out)
    }

    /// Repeats a `1 x cols` row `rows` times, or a `1 x 1` scalar over any shape.
    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Tensor {
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.data[r * cols + c] = self.data[bidx(self.shape(), r, c)];
            }
        }
        out
    }

    /// Sums a broadcast result back down to `shape`.
    pub fn reduce_to(&self, shape: (usize, usize)) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape.0, shape.1);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[bidx(shape, r, c)] += self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul(&self, trans_self: bool, other: &Tensor, trans_other: bool) -> Result<Tensor> {
        let (m, k) = if trans_self { (self.cols, self.rows) } else { (self.rows, self.cols) };
        let (k2, n) = if trans_other { (other.cols, other.rows) } else { (other.rows, other.cols) };
        if k != k2 {
            return Err(Error::invalid(format!(
                "matmul inner dimensions differ: {:?}{} x {:?}{}",
                self.shape(),
                if trans_self { "^T" } else { "" },
                other.shape(),
                if trans_other { "^T" } else { "" }
            )));
        }
        let mut out = Tensor::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return Ok(out);
        }
        let (rsa, csa) = if trans_self { (1, self.cols as isize) } else { (self.cols as isize, 1) };
        let (rsb, csb) = if trans_other { (1, other.cols as isize) } else { (other.cols as isize, 1) };
        // SAFETY: strides and extents describe exactly the buffers owned by
        // `self`, `other` and `out`, which outlive the call.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                rsa,
                csa,
                other.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }
}

/// Flat index into a tensor of `shape` for output position `(r, c)` under broadcasting.
#[inline]
pub(crate) fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
}

/// Result shape of broadcasting two shapes; each dimension must match or be 1.
pub fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::invalid(format!("shapes {a:?} and {b:?} cannot be broadcast together"))),
    }
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == shape && b.shape() == shape {
        return Ok(a.zip_map(b, f));
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            out.data[r * shape.1 + c] = f(a.data[bidx(a.shape(), r, c)], b.data[bidx(b.shape(), r, c)]);
        }
    }
    Ok(out)
}
