//! Chebyshev series and collocation on an interval `[lo, hi]`.
//!
//! Nodes are the Chebyshev extrema `x_j = cos(pi j / n)`, `j = 0..=n`, mapped
//! affinely onto the interval, so node 0 is `hi` and node `n` is `lo`.

use num_dual::DualNum;
use std::f64::consts::PI;

/// Extrema nodes mapped to `[lo, hi]`, ordered from `hi` down to `lo`.
pub fn extrema_nodes(n_points: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n_points >= 2, "need at least two Chebyshev nodes");
    let n = n_points - 1;
    (0..=n)
        .map(|j| {
            let x = (PI * j as f64 / n as f64).cos();
            0.5 * (lo + hi) + 0.5 * (hi - lo) * x
        })
        .collect()
}

/// Spectral differentiation matrix on the extrema nodes (row-major, `n_points²`).
pub fn diff_matrix(n_points: usize, lo: f64, hi: f64) -> Vec<f64> {
    let n = n_points - 1;
    let x: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| {
        let base = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let scale = 2.0 / (hi - lo);
    let mut d = vec![0.0; n_points * n_points];
    for i in 0..=n {
        let mut row_sum = 0.0;
        for j in 0..=n {
            if i != j {
                let v = c(i) / c(j) / (x[i] - x[j]);
                d[i * n_points + j] = v * scale;
                row_sum += v;
            }
        }
        d[i * n_points + i] = -row_sum * scale;
    }
    d
}

/// Barycentric interpolation of nodal values given on [`extrema_nodes`].
#[derive(Debug, Clone)]
pub struct NodalInterpolant {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl NodalInterpolant {
    pub fn new(n_points: usize, lo: f64, hi: f64) -> Self {
        let nodes = extrema_nodes(n_points, lo, hi);
        let n = n_points - 1;
        let weights = (0..=n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Cardinal-function values `l_j(x)`, so that `f(x) = Σ l_j(x) f_j`.
    pub fn cardinals(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        if let Some(j) = self.nodes.iter().position(|&xj| xj == x) {
            out[j] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for (j, (&xj, &wj)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let t = wj / (x - xj);
            out[j] = t;
            denom += t;
        }
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }

    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        self.cardinals(x).iter().zip(values).map(|(l, v)| l * v).sum()
    }
}

/// A truncated Chebyshev expansion `Σ c_k T_k(x(s))` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSeries {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ChebSeries {
    /// Interpolate values sampled at [`extrema_nodes`] (same ordering).
    pub fn from_nodal(values: &[f64], lo: f64, hi: f64) -> Self {
        let n = values.len() - 1;
        let mut coeffs = vec![0.0; n + 1];
        for (k, ck) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &f) in values.iter().enumerate() {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                acc += w * f * (PI * (j * k) as f64 / n as f64).cos();
            }
            *ck = 2.0 * acc / n as f64;
        }
        coeffs[0] *= 0.5;
        coeffs[n] *= 0.5;
        Self { coeffs, lo, hi }
    }

    pub fn from_fn(n_points: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> Self {
        let vals: Vec<f64> = extrema_nodes(n_points, lo, hi).into_iter().map(f).collect();
        Self::from_nodal(&vals, lo, hi)
    }

    fn to_unit<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        (s * 2.0 - (self.lo + self.hi)) * (1.0 / (self.hi - self.lo))
    }

    /// Clenshaw evaluation; works for plain floats and dual numbers alike.
    pub fn eval_generic<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        let x = self.to_unit(s);
        let two_x = x * 2.0;
        let mut b1 = D::from(0.0);
        let mut b2 = D::from(0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = two_x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coeffs[0]
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_generic(s)
    }

    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n < 2 {
            return Self { coeffs: vec![0.0], lo: self.lo, hi: self.hi };
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..n).rev() {
            d[k - 1] = d[k + 1] + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (self.hi - self.lo);
        d.iter_mut().for_each(|c| *c *= scale);
        Self { coeffs: d, lo: self.lo, hi: self.hi }
    }

    /// An antiderivative (constant term chosen as zero).
    pub fn antiderivative(&self) -> Self {
        let n = self.coeffs.len();
        let c = |k: usize| self.coeffs.get(k).copied().unwrap_or(0.0);
        let mut out = vec![0.0; n + 1];
        for (k, o) in out.iter_mut().enumerate().skip(1) {
            let prev = if k == 1 { 2.0 * c(0) } else { c(k - 1) };
            *o = (prev - c(k + 1)) / (2.0 * k as f64);
        }
        let scale = 0.5 * (self.hi - self.lo);
        out.iter_mut().for_each(|v| *v *= scale);
        Self { coeffs: out, lo: self.lo, hi: self.hi }
    }

    /// Largest magnitude among the last `k` coefficients relative to the largest overall.
    pub fn relative_tail(&self, k: usize) -> f64 {
        let max = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let tail = self.coeffs.iter().rev().take(k).fold(0.0f64, |m, c| m.max(c.abs()));
        if max == 0.0 {
            0.0
        } else {
            tail / max
        }
    }
}
