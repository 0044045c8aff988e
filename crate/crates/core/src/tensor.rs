use crate::error::{shape_err, Result};

/// A stack of `maps` 2D feature maps, each `rows x cols`, stored row-major
/// map after map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    maps: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(maps: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(maps, rows, cols, vec![0.0; maps * rows * cols])
    }

    pub fn from_vec(maps: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if maps == 0 || rows == 0 || cols == 0 {
            return shape_err(format!("tensor dims must be >= 1, got {maps}x{rows}x{cols}"));
        }
        if data.len() != maps * rows * cols {
            return shape_err(format!(
                "tensor {maps}x{rows}x{cols} needs {} values, got {}",
                maps * rows * cols,
                data.len()
            ));
        }
        Ok(Self { maps, rows, cols, data })
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.maps, self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, map: usize, row: usize, col: usize) -> usize {
        debug_assert!(map < self.maps && row < self.rows && col < self.cols);
        (map * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, map: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(map, row, col)]
    }

    #[inline]
    pub fn set(&mut self, map: usize, row: usize, col: usize, value: f64) {
        let i = self.index(map, row, col);
        self.data[i] = value;
    }

    pub fn map(&self, map: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[map * n..(map + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}
