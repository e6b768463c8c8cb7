use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("dims must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidTensor(format!("shape {shape:?} needs {len} values, got {}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite value at index {i}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of leading-dimension slices ("channels" for weight matrices).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    /// Same shape, new data; the caller guarantees finiteness.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    pub fn scaled(&self, s: f32) -> Tensor {
        self.with_data(self.data.iter().map(|v| v * s).collect())
    }
}

/// `[rows, cols]` row-major matrix used inside the network engine.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · wᵀ` where `w` is `[out, in]` with `in == self.cols`.
    pub fn matmul_t(&self, w: &[f32], out: usize) -> Mat {
        let inn = self.cols;
        let mut y = Mat::zeros(self.rows, out);
        for r in 0..self.rows {
            let x = self.row(r);
            let yr = &mut y.data[r * out..(r + 1) * out];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &w[o * inn..(o + 1) * inn];
                *yo = x.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        y
    }

    /// `self · w` where `w` is `[out, in]` and `self.cols == out`.
    pub fn matmul(&self, w: &[f32], inn: usize) -> Mat {
        let out = self.cols;
        let mut y = Mat::zeros(self.rows, inn);
        for r in 0..self.rows {
            let d = self.row(r);
            let yr = &mut y.data[r * inn..(r + 1) * inn];
            for (o, &dv) in d.iter().enumerate().take(out) {
                if dv == 0.0 {
                    continue;
                }
                let wr = &w[o * inn..(o + 1) * inn];
                for (yi, &wv) in yr.iter_mut().zip(wr) {
                    *yi += dv * wv;
                }
            }
        }
        y
    }

    /// `selfᵀ · x`, giving `[self.cols, x.cols]`.
    pub fn t_matmul(&self, x: &Mat) -> Vec<f32> {
        let (out, inn) = (self.cols, x.cols);
        let mut g = vec![0.0f32; out * inn];
        for r in 0..self.rows {
            let d = self.row(r);
            let xr = x.row(r);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let gr = &mut g[o * inn..(o + 1) * inn];
                for (gi, &xv) in gr.iter_mut().zip(xr) {
                    *gi += dv * xv;
                }
            }
        }
        g
    }

    pub fn add_row_vector(&mut self, b: &[f32]) {
        for r in 0..self.rows {
            for (y, &bv) in self.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(b) {
                *y += bv;
            }
        }
    }
}
