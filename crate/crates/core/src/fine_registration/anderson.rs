//! Anderson acceleration of a fixed-point iteration on twists.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector6};

use crate::geometry::Twist;

/// Window size used by the fine stage.
pub const DEFAULT_WINDOW: usize = 5;

/// Difference matrices with a larger condition number are not trusted.
pub const MAX_HISTORY_CONDITION: f64 = 1e10;

/// Recent iterates `xi_k` and their images `G(xi_k)`.
///
/// With window `h` the state keeps `h + 1` pairs, which yield `h` residual
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct AndersonState {
    window: usize,
    iterates: VecDeque<Vector6<f64>>,
    images: VecDeque<Vector6<f64>>,
}

/// Result of one acceleration request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndersonStep {
    pub xi: Twist,
    /// False when `xi` is the plain image `G(xi_k)`: short history, a zero
    /// residual, or an ill-conditioned difference matrix.
    pub accelerated: bool,
}

impl AndersonState {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            iterates: VecDeque::with_capacity(window + 1),
            images: VecDeque::with_capacity(window + 1),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of stored `(xi, G(xi))` pairs.
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn clear(&mut self) {
        self.iterates.clear();
        self.images.clear();
    }

    /// Most recent residual `G(xi_k) - xi_k`.
    pub fn last_residual(&self) -> Option<Vector6<f64>> {
        Some(self.images.back()? - self.iterates.back()?)
    }

    /// Records `(xi, g_xi)` and extrapolates
    /// `G_k - sum_j theta_j (G_{j+1} - G_j)` with `theta` the least-squares
    /// fit of the residual differences to the current residual.
    pub fn accelerate(&mut self, xi: &Twist, g_xi: &Twist) -> AndersonStep {
        let plain = AndersonStep {
            xi: *g_xi,
            accelerated: false,
        };
        if self.window == 0 {
            return plain;
        }
        self.iterates.push_back(xi.to_vector());
        self.images.push_back(g_xi.to_vector());
        if self.iterates.len() > self.window + 1 {
            self.iterates.pop_front();
            self.images.pop_front();
        }
        let m = self.iterates.len() - 1;
        let h_k = self.images[m] - self.iterates[m];
        if m == 0 || h_k.iter().all(|&v| v == 0.0) {
            return plain;
        }
        let mut dh = DMatrix::zeros(6, m);
        let mut dg = DMatrix::zeros(6, m);
        for j in 0..m {
            let h0 = self.images[j] - self.iterates[j];
            let h1 = self.images[j + 1] - self.iterates[j + 1];
            dh.column_mut(j).copy_from(&(h1 - h0));
            dg.column_mut(j).copy_from(&(self.images[j + 1] - self.images[j]));
        }
        let svd = dh.svd(true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        if !(s_min > 0.0) || s_max / s_min > MAX_HISTORY_CONDITION {
            return plain;
        }
        let rhs = DVector::from_column_slice(h_k.as_slice());
        let Ok(theta) = svd.solve(&rhs, 0.0) else {
            return plain;
        };
        let step = dg * theta;
        let out = self.images[m] - Vector6::from_column_slice(step.as_slice());
        if !out.iter().all(|v| v.is_finite()) {
            return plain;
        }
        AndersonStep {
            xi: Twist::from_vector(&out),
            accelerated: true,
        }
    }
}

impl Default for AndersonState {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}
