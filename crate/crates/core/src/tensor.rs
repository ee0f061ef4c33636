//! Dense row-major tensors, matrices and the handful of linear-algebra
//! primitives the rest of the crate is built on.
//!
//! All reductions accumulate in ascending index order so results are
//! bitwise reproducible regardless of how callers schedule work.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic prefix of the on-disk tensor format.
pub const TENSOR_MAGIC: &[u8; 4] = b"JPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(
            dims.iter().all(|&d| d >= 1),
            "tensor extents must be >= 1, got {dims:?}"
        );
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(dims);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "tensor extents must be >= 1, got {dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::ExtentMismatch {
                from: vec![data.len()],
                from_len: data.len(),
                to: dims.to_vec(),
                to_len: len,
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Relabels the extents without touching element order.
    pub fn reshape(self, new_dims: &[usize]) -> Result<Tensor> {
        let to_len: usize = new_dims.iter().product();
        if new_dims.is_empty() || new_dims.contains(&0) || to_len != self.data.len() {
            return Err(Error::ExtentMismatch {
                from_len: self.data.len(),
                from: self.dims,
                to: new_dims.to_vec(),
                to_len,
            });
        }
        Ok(Tensor {
            dims: new_dims.to_vec(),
            data: self.data,
        })
    }

    /// Views a tensor with dims `[rows, ...]` as a `rows × rest` matrix.
    pub fn to_matrix(&self) -> Matrix {
        let rows = self.dims[0];
        let cols = self.data.len() / rows;
        Matrix {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes the tensor in the `JPT1` binary format (float32 payload).
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Tensor::decode(&bytes).map_err(|(offset, msg)| Error::Parse {
            path: path.to_path_buf(),
            offset,
            msg,
        })
    }

    /// Parses a `JPT1` buffer. On failure returns the byte offset where
    /// decoding stopped and a description.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, (u64, String)> {
        let mut cursor = 0usize;
        let mut take = |n: usize, what: &str| -> std::result::Result<&[u8], (u64, String)> {
            if cursor + n > bytes.len() {
                return Err((cursor as u64, format!("truncated while reading {what}")));
            }
            let s = &bytes[cursor..cursor + n];
            cursor += n;
            Ok(s)
        };
        if take(4, "magic")? != TENSOR_MAGIC {
            return Err((0, "bad magic, expected JPT1".into()));
        }
        let ndim = u32::from_le_bytes(take(4, "ndim")?.try_into().unwrap()) as usize;
        if ndim == 0 {
            return Err((4, "ndim must be >= 1".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let d = u32::from_le_bytes(take(4, "extent")?.try_into().unwrap()) as usize;
            if d == 0 {
                return Err((8 + 4 * i as u64, format!("extent {i} is zero")));
            }
            dims.push(d);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or((8, "element count overflows".to_string()))?;
        let payload = take(len * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let end = 8 + 4 * ndim + 4 * len;
        if bytes.len() != end {
            return Err((end as u64, format!("{} trailing bytes", bytes.len() - end)));
        }
        Ok(Tensor { dims, data })
    }
}

/// Row-major dense matrix.
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!("matrix {rows}x{cols}")));
        }
        if rows * cols != data.len() {
            return Err(Error::ExtentMismatch {
                from: vec![data.len()],
                from_len: data.len(),
                to: vec![rows, cols],
                to_len: rows * cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Matrix> {
        match t.dims() {
            [r, c] => Matrix::from_vec(*r, *c, t.data().to_vec()),
            d => Err(Error::InvalidShape(format!("expected 2-D tensor, got {d:?}"))),
        }
    }
}

/// Standard matrix product. Every output element is accumulated from zero
/// over `k` in ascending order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n) = (a.rows, b.cols);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::dims(
            "matmul_bt",
            format!("{}x{} · ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(arow, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::dims(
            "matmul_at",
            format!("({}x{})ᵀ · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    matmul(&a.transpose(), b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm. A zero vector is returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}
