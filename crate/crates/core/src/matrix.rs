use std::fmt;
use std::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Returns a copy with a zero-filled row inserted before `at`.
    pub fn insert_row(&self, at: usize, value: f64) -> Self {
        assert!(at <= self.rows);
        Matrix::from_fn(self.rows + 1, self.cols, |r, c| match r.cmp(&at) {
            std::cmp::Ordering::Less => self[(r, c)],
            std::cmp::Ordering::Equal => value,
            std::cmp::Ordering::Greater => self[(r - 1, c)],
        })
    }

    /// Returns a copy with a column inserted before `at`, filled by `f(row)`.
    pub fn insert_col(&self, at: usize, mut f: impl FnMut(usize) -> f64) -> Self {
        assert!(at <= self.cols);
        Matrix::from_fn(self.rows, self.cols + 1, |r, c| match c.cmp(&at) {
            std::cmp::Ordering::Less => self[(r, c)],
            std::cmp::Ordering::Equal => f(r),
            std::cmp::Ordering::Greater => self[(r, c - 1)],
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for v in self.row(r) {
                write!(f, "{v:>9.4} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_row_and_col() {
        let m = Matrix::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        let r = m.insert_row(1, 9.0);
        assert_eq!(r.as_slice(), &[0.0, 1.0, 9.0, 9.0, 2.0, 3.0]);
        let c = m.insert_col(2, |_| 7.0);
        assert_eq!(c.as_slice(), &[0.0, 1.0, 7.0, 2.0, 3.0, 7.0]);
    }
}
