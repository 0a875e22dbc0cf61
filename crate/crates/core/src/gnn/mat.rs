use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major matrix. Rows are graph items (nodes or edges), columns
/// are feature channels.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        m
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Sum of all rows.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    /// Rows reordered so that row `perm[i]` of the result is row `i` here.
    pub fn scatter_rows(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(p).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Row-wise concatenation of column blocks; every block has `rows` rows or
/// is a single row broadcast to all rows.
pub(crate) fn hcat(rows: usize, blocks: &[BlockRef<'_>]) -> Mat {
    let cols = blocks.iter().map(|b| b.cols()).sum();
    let mut out = Mat::zeros(rows, cols);
    for i in 0..rows {
        let row = out.row_mut(i);
        let mut at = 0;
        for b in blocks {
            let src = b.row(i);
            row[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
    }
    out
}

pub(crate) enum BlockRef<'a> {
    /// Row `idx[i]` of the matrix.
    Gather(&'a Mat, &'a [usize]),
    Rows(&'a Mat),
    Broadcast(&'a [f64]),
}

impl BlockRef<'_> {
    fn cols(&self) -> usize {
        match self {
            BlockRef::Gather(m, _) | BlockRef::Rows(m) => m.cols(),
            BlockRef::Broadcast(v) => v.len(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        match self {
            BlockRef::Gather(m, idx) => m.row(idx[i]),
            BlockRef::Rows(m) => m.row(i),
            BlockRef::Broadcast(v) => v,
        }
    }
}
