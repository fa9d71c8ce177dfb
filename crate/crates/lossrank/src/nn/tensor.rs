//! Dense row-major tensor over `f64`.
//!
//! All reductions run in fixed row-major order so that repeated evaluation
//! of the same inputs is bitwise identical.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{expected} values for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// 2-D convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument(
                "rows have unequal lengths".to_string(),
            ));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            shape: vec![n],
            data,
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when viewed as 2-D.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns when viewed as 2-D.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn require_shape(&self, context: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{shape:?}"),
                got: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }

    /// `self[m,k] · other[k,n] -> [m,n]`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = other.dims2("matmul rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: format!("inner dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            let lhs_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in lhs_row.iter().enumerate() {
                let rhs_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ[k,m] · other[k,n] -> [m,n]` (used for weight gradients).
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.dims2("matmul_tn lhs")?;
        let (k2, n) = other.dims2("matmul_tn rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                context: "matmul_tn",
                expected: format!("inner dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for p in 0..k {
            let lhs_row = &self.data[p * m..(p + 1) * m];
            let rhs_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in lhs_row.iter().enumerate() {
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self[m,k] · otherᵀ[n,k] -> [m,n]` (used to push gradients backward).
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_nt lhs")?;
        let (n, k2) = other.dims2("matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                context: "matmul_nt",
                expected: format!("inner dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            let lhs_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (j, o) in out_row.iter_mut().enumerate() {
                let rhs_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in lhs_row.iter().zip(rhs_row.iter()) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    /// Column sums of a 2-D tensor (bias gradients).
    pub fn col_sum(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("col_sum")?;
        let mut out = Tensor::zeros(vec![n]);
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            for (o, &v) in out.data.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// `self += scale * other`, elementwise.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) -> Result<()> {
        other.require_shape("axpy", &self.shape)?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn validate_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        Ok(())
    }

    fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                context: "dims2",
                expected: format!("rank-2 tensor in {context}"),
                got: format!("rank {}", self.rank()),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}
