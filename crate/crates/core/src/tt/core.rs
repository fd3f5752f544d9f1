use crate::linalg::{view, view_mut};
use faer::{MatMut, MatRef};

/// An order-3 TT core of shape `left x mode x right`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self { left, mode, right, data: vec![0.0; left * mode * right] }
    }

    /// Panics if `data.len() != left * mode * right`.
    pub fn from_vec(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), left * mode * right, "core payload does not match its shape");
        Self { left, mode, right, data }
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
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
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.mode + i) * self.right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, value: f64) {
        self.data[(a * self.mode + i) * self.right + b] = value;
    }

    /// `(left * mode) x right` view.
    pub fn left_unfolding(&self) -> MatRef<'_, f64> {
        view(&self.data, self.left * self.mode, self.right)
    }

    /// `left x (mode * right)` view.
    pub fn right_unfolding(&self) -> MatRef<'_, f64> {
        view(&self.data, self.left, self.mode * self.right)
    }

    pub fn right_unfolding_mut(&mut self) -> MatMut<'_, f64> {
        view_mut(&mut self.data, self.left, self.mode * self.right)
    }

    /// Rearranges `(a, i, b)` into a `mode x (left * right)` row-major matrix indexed `(i, (a, b))`.
    pub(crate) fn mode_major(&self) -> Vec<f64> {
        let (l, n, r) = self.shape();
        let mut out = vec![0.0; l * n * r];
        for a in 0..l {
            for i in 0..n {
                let src = &self.data[(a * n + i) * r..(a * n + i + 1) * r];
                out[i * l * r + a * r..i * l * r + (a + 1) * r].copy_from_slice(src);
            }
        }
        out
    }

    /// Inverse of [`Core::mode_major`].
    pub(crate) fn from_mode_major(left: usize, mode: usize, right: usize, mm: &[f64]) -> Self {
        let mut data = vec![0.0; left * mode * right];
        for i in 0..mode {
            for a in 0..left {
                let src = &mm[i * left * right + a * right..i * left * right + (a + 1) * right];
                data[(a * mode + i) * right..(a * mode + i + 1) * right].copy_from_slice(src);
            }
        }
        Self { left, mode, right, data }
    }

    pub(crate) fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }
}
