//! Reconstruction of first integrals polynomial in the momenta.
//!
//! A candidate `F = Σ a_jk(φ, ρ) p_φ^j p_ρ^k` is expanded in a Fourier basis in
//! the angle and a Chebyshev nodal basis in the radial coordinate of a chart whose
//! metric depends on `ρ` only and whose potential is `v₀(ρ) + v₁(ρ) cos φ`. The
//! condition `{F, H} = 0` is then a linear map on the coefficients, evaluated by
//! exact polynomial algebra in the momenta and exact trigonometric products.
//!
//! The map splits into four independent blocks by momentum parity and by parity
//! under `(φ, p_φ) ↦ (-φ, -p_φ)`. Each block is banded in the Fourier mode
//! (the potential couples neighbouring modes only), which the factorization uses.

use crate::chart::{ChartKind, ChartedSystem};
use crate::cheb::{diff_matrix, extrema_nodes, NodalInterpolant};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Basis parameters of an ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    /// Maximal total degree in the momenta.
    pub degree: usize,
    /// Highest Fourier mode `M`.
    pub fourier: usize,
    /// Number `N` of Chebyshev extrema nodes.
    pub radial: usize,
    pub chart: String,
    /// Radial interval covered by the nodes.
    pub window: (f64, f64),
}

impl AnsatzSpec {
    /// Ansatz for `sys` on its natural chart and window.
    pub fn for_system(sys: &ChartedSystem, degree: usize, fourier: usize, radial: usize) -> Result<Self> {
        let (chart, window) = default_chart(sys)?;
        Ok(Self { degree, fourier, radial, chart, window })
    }

    pub fn monomials(&self) -> Vec<(usize, usize)> {
        monomials(self.degree)
    }

    pub fn trig_count(&self) -> usize {
        2 * self.fourier + 1
    }

    /// `(#momentum monomials) × (2M+1) × N`.
    pub fn basis_size(&self) -> usize {
        self.monomials().len() * self.trig_count() * self.radial
    }

    fn index(&self, mono: usize, trig: usize, node: usize) -> usize {
        (mono * self.trig_count() + trig) * self.radial + node
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        if self.radial < 4 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadParams(format!(
                "ansatz needs at least 4 radial nodes and a finite window lo < hi (got N={}, window=({lo}, {hi}))",
                self.radial
            )));
        }
        Ok(())
    }
}

fn default_chart(sys: &ChartedSystem) -> Result<(String, (f64, f64))> {
    let pick = |kind: ChartKind| sys.charts().iter().find(|c| c.kind == kind).map(|c| c.name.clone());
    if let Some(name) = pick(ChartKind::KovW) {
        return Ok((name, (-1.0, 1.0)));
    }
    if let Some(name) = pick(ChartKind::Cylinder) {
        // Wide enough to contain the potential wells of the quartic families.
        return Ok((name, (-2.0, 2.0)));
    }
    if let Some(name) = pick(ChartKind::General) {
        let usol = sys.u_solution().ok_or_else(|| Error::BadParams("general chart without a u solution".into()))?;
        let (lo, hi) = usol.range();
        return Ok((name, (lo.max(-1.0), hi.min(1.0))));
    }
    if let Some(c) = sys.charts().iter().find(|c| matches!(c.kind, ChartKind::Flat { angular: true })) {
        return Ok((c.name.clone(), (-1.0, 1.0)));
    }
    Err(Error::WindowOutsideChart("system has no chart with an angular coordinate".into()))
}

/// All `(j, k)` with `j + k ≤ m`, ordered by degree and then by decreasing `j`.
fn monomials(m: usize) -> Vec<(usize, usize)> {
    (0..=m).flat_map(|d| (0..=d).rev().map(move |j| (j, d - j))).collect()
}

fn mono_index(j: usize, k: usize) -> usize {
    let d = j + k;
    d * (d + 1) / 2 + (d - j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Cos,
    Sin,
}

/// Position of `cos lφ` / `sin lφ` in the trigonometric basis `1, cos φ, sin φ, cos 2φ, …`.
fn trig_index(kind: Kind, l: usize) -> usize {
    match (kind, l) {
        (Kind::Cos, 0) => 0,
        (Kind::Cos, l) => 2 * l - 1,
        (Kind::Sin, l) => 2 * l,
    }
}

fn trig_values(phi: f64, m: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for l in 1..=m {
        let (s, c) = (l as f64 * phi).sin_cos();
        out.push(c);
        out.push(s);
    }
    out
}

type TrigTerms = Vec<(f64, Kind, i64)>;

fn normalize(terms: TrigTerms) -> Vec<(f64, Kind, usize)> {
    terms
        .into_iter()
        .filter_map(|(c, kind, l)| match kind {
            Kind::Cos => Some((c, kind, l.unsigned_abs() as usize)),
            Kind::Sin if l == 0 => None,
            Kind::Sin => Some((c * l.signum() as f64, kind, l.unsigned_abs() as usize)),
        })
        .collect()
}

fn d_phi(kind: Kind, l: usize) -> Vec<(f64, Kind, usize)> {
    let lf = l as f64;
    match kind {
        Kind::Cos => normalize(vec![(-lf, Kind::Sin, l as i64)]),
        Kind::Sin => normalize(vec![(lf, Kind::Cos, l as i64)]),
    }
}

fn times_cos(kind: Kind, l: usize) -> Vec<(f64, Kind, usize)> {
    let l = l as i64;
    normalize(vec![(0.5, kind, l - 1), (0.5, kind, l + 1)])
}

fn times_sin(kind: Kind, l: usize) -> Vec<(f64, Kind, usize)> {
    let l = l as i64;
    match kind {
        Kind::Cos => normalize(vec![(0.5, Kind::Sin, l + 1), (-0.5, Kind::Sin, l - 1)]),
        Kind::Sin => normalize(vec![(0.5, Kind::Cos, l - 1), (-0.5, Kind::Cos, l + 1)]),
    }
}

/// Trig kind carried by monomial `p_φ^j` in a reflection sector.
fn sector_kind(j: usize, reflection: usize) -> Kind {
    if (j + reflection) % 2 == 0 {
        Kind::Cos
    } else {
        Kind::Sin
    }
}

/// Metric and potential data sampled at the radial nodes.
#[derive(Debug, Clone)]
struct RadialData {
    g1: Vec<f64>,
    g2: Vec<f64>,
    dg1: Vec<f64>,
    dg2: Vec<f64>,
    v1: Vec<f64>,
    dv0: Vec<f64>,
    dv1: Vec<f64>,
}

fn radial_data(sys: &ChartedSystem, chart: usize, nodes: &[f64]) -> Result<RadialData> {
    let window_err = |rho: f64, e: Error| Error::WindowOutsideChart(format!("radial node {rho}: {e}"));
    let mut d = RadialData { g1: vec![], g2: vec![], dg1: vec![], dg2: vec![], v1: vec![], dv0: vec![], dv1: vec![] };
    for &rho in nodes {
        let j0 = sys.jets(chart, [0.0, rho]).map_err(|e| window_err(rho, e))?;
        let jpi = sys.jets(chart, [PI, rho]).map_err(|e| window_err(rho, e))?;
        let probe = sys.local(chart, [1.0, rho]).map_err(|e| window_err(rho, e))?;
        // The ansatz needs E(ρ) and V = v₀(ρ) + v₁(ρ) cos φ.
        let v0 = 0.5 * (j0.v.v + jpi.v.v);
        let v1 = 0.5 * (j0.v.v - jpi.v.v);
        let tol = 1e-12 * (1.0 + v0.abs() + v1.abs() + j0.e[0].v.abs() + j0.e[1].v.abs());
        let separable = (probe[2] - v0 - v1 * 1f64.cos()).abs() <= tol
            && (probe[0] - j0.e[0].v).abs() <= tol
            && (probe[1] - j0.e[1].v).abs() <= tol;
        if !separable {
            return Err(Error::BadParams(format!(
                "chart {:?} is not of the form E(ρ), v₀(ρ) + v₁(ρ) cos φ required by the integral ansatz",
                sys.chart(chart)?.name
            )));
        }
        let g = j0.inverse_metric();
        if !(j0.e[0].v > 0.0 && j0.e[1].v > 0.0) {
            return Err(Error::WindowOutsideChart(format!("metric not positive at radial node {rho}")));
        }
        d.g1.push(g[0].v);
        d.g2.push(g[1].v);
        d.dg1.push(g[0].g[1]);
        d.dg2.push(g[1].g[1]);
        d.v1.push(v1);
        d.dv0.push(0.5 * (j0.v.g[1] + jpi.v.g[1]));
        d.dv1.push(0.5 * (j0.v.g[1] - jpi.v.g[1]));
    }
    Ok(d)
}

/// One of the four independent blocks of the bracket map.
#[derive(Debug, Clone)]
struct Sector {
    momentum_parity: usize,
    reflection: usize,
    /// Full coefficient index of each column; columns ordered by Fourier mode.
    cols: Vec<usize>,
    col_mode_sizes: Vec<usize>,
    rows: Vec<usize>,
    row_mode_sizes: Vec<usize>,
    /// `(row, col, value)` in sector-local numbering.
    entries: Vec<(usize, usize, f64)>,
}

/// The discretized map `coefficients ↦ {F, H}`.
#[derive(Debug, Clone)]
pub struct BracketOperator {
    pub spec: AnsatzSpec,
    chart: usize,
    out_trig: usize,
    sectors: Vec<Sector>,
}

/// Assembles the bracket operator of `sys` on the ansatz `spec`.
pub fn bracket_operator(sys: &ChartedSystem, spec: &AnsatzSpec) -> Result<BracketOperator> {
    spec.validate()?;
    let chart = sys
        .chart_index(&spec.chart)
        .map_err(|_| Error::WindowOutsideChart(format!("no chart named {:?}", spec.chart)))?;
    if sys.chart(chart)?.angular_coord() != Some(0) {
        return Err(Error::WindowOutsideChart(format!("chart {:?} has no leading angle coordinate", spec.chart)));
    }
    let n = spec.radial;
    let nodes = extrema_nodes(n, spec.window.0, spec.window.1);
    let rd = radial_data(sys, chart, &nodes)?;
    let dmat = diff_matrix(n, spec.window.0, spec.window.1);
    let m = spec.degree;
    let big_m = spec.fourier;
    let out_trig = 2 * (big_m + 1) + 1;
    let in_monos = monomials(m);
    let out_monos = monomials(m + 1);

    let mut sectors = Vec::new();
    for momentum_parity in 0..2 {
        for reflection in 0..2 {
            let mono_in: Vec<(usize, usize)> =
                in_monos.iter().copied().filter(|&(j, k)| (j + k) % 2 == momentum_parity).collect();
            if mono_in.is_empty() {
                continue;
            }
            let mono_out: Vec<(usize, usize)> =
                out_monos.iter().copied().filter(|&(j, k)| (j + k) % 2 != momentum_parity).collect();
            let layout = |monos: &[(usize, usize)], modes: usize, trig_count: usize| {
                let mut full = Vec::new();
                let mut sizes = Vec::new();
                for l in 0..=modes {
                    let before = full.len();
                    for &(j, k) in monos {
                        let kind = sector_kind(j, reflection);
                        if kind == Kind::Sin && l == 0 {
                            continue;
                        }
                        let t = trig_index(kind, l);
                        for node in 0..n {
                            full.push((mono_index(j, k) * trig_count + t) * n + node);
                        }
                    }
                    sizes.push(full.len() - before);
                }
                (full, sizes)
            };
            let (cols, col_mode_sizes) = layout(&mono_in, big_m, spec.trig_count());
            let (rows, row_mode_sizes) = layout(&mono_out, big_m + 1, out_trig);
            let row_pos: std::collections::HashMap<usize, usize> =
                rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();

            let entries: Vec<(usize, usize, f64)> = cols
                .par_iter()
                .enumerate()
                .flat_map_iter(|(ci, &full)| {
                    let node = full % n;
                    let trig = (full / n) % spec.trig_count();
                    let (j, k) = in_monos[full / n / spec.trig_count()];
                    let (kind, l) = if trig == 0 {
                        (Kind::Cos, 0)
                    } else if trig % 2 == 1 {
                        (Kind::Cos, trig.div_ceil(2))
                    } else {
                        (Kind::Sin, trig / 2)
                    };
                    let mut out: Vec<(usize, usize, f64)> = Vec::new();
                    let mut push = |oj: usize, ok: usize, terms: &[(f64, Kind, usize)], radial: &[(usize, f64)]| {
                        for &(c, kd, ll) in terms {
                            let t = trig_index(kd, ll);
                            for &(nn, val) in radial {
                                let full_row = (mono_index(oj, ok) * out_trig + t) * n + nn;
                                let r = *row_pos.get(&full_row).expect("bracket term outside its sector");
                                out.push((r, ci, c * val));
                            }
                        }
                    };
                    let same = [(1.0, kind, l)];
                    let kf = k as f64;
                    push(j + 1, k, &d_phi(kind, l), &[(node, rd.g1[node])]);
                    let transport: Vec<(usize, f64)> = (0..n).map(|r| (r, rd.g2[r] * dmat[r * n + node])).collect();
                    push(j, k + 1, &same, &transport);
                    if k >= 1 {
                        push(j + 2, k - 1, &same, &[(node, -0.5 * kf * rd.dg1[node])]);
                        push(j, k + 1, &same, &[(node, -0.5 * kf * rd.dg2[node])]);
                        push(j, k - 1, &same, &[(node, -kf * rd.dv0[node])]);
                        push(j, k - 1, &times_cos(kind, l), &[(node, -kf * rd.dv1[node])]);
                    }
                    if j >= 1 {
                        push(j - 1, k, &times_sin(kind, l), &[(node, j as f64 * rd.v1[node])]);
                    }
                    out.into_iter()
                })
                .collect();
            sectors.push(Sector { momentum_parity, reflection, cols, col_mode_sizes, rows, row_mode_sizes, entries });
        }
    }
    Ok(BracketOperator { spec: spec.clone(), chart, out_trig, sectors })
}

impl BracketOperator {
    pub fn chart(&self) -> usize {
        self.chart
    }

    /// Length of the output vector of [`BracketOperator::apply`].
    pub fn output_size(&self) -> usize {
        monomials(self.spec.degree + 1).len() * self.out_trig * self.spec.radial
    }

    /// `{F, H}` sampled on the output basis.
    pub fn apply(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.spec.basis_size() {
            return Err(Error::BadParams(format!(
                "coefficient vector has length {}, basis has {}",
                coeffs.len(),
                self.spec.basis_size()
            )));
        }
        let mut out = vec![0.0; self.output_size()];
        for s in &self.sectors {
            for &(r, c, v) in &s.entries {
                out[s.rows[r]] += v * coeffs[s.cols[c]];
            }
        }
        Ok(out)
    }
}

/// `R` of a QR factorization, stored by Fourier mode: block `n` holds the rows of
/// mode `n` over the columns of modes `n`, `n+1`, `n+2`.
struct BandedR {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    blocks: Vec<Mat<f64>>,
}

impl BandedR {
    fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn span(&self, n: usize) -> usize {
        (n..(n + 3).min(self.sizes.len())).map(|i| self.sizes[i]).sum()
    }

    /// Factors `[A; eps·I]`. The ridge keeps R invertible when A has an exact
    /// nullspace; it shifts squared singular values by `eps²` only.
    fn factor(a: &Mat<f64>, sizes_col: &[usize], sizes_row: &[usize], eps: f64) -> Self {
        let modes = sizes_col.len();
        let mut offsets = vec![0];
        for s in sizes_col {
            offsets.push(offsets.last().unwrap() + s);
        }
        let mut row_off = vec![0];
        for s in sizes_row {
            row_off.push(row_off.last().unwrap() + s);
        }
        let span = |n: usize| (n..(n + 3).min(modes)).map(|i| sizes_col[i]).sum::<usize>();
        let mut blocks = Vec::with_capacity(modes);
        let mut leftover = Mat::<f64>::zeros(0, 0);
        for n in 0..modes {
            let width = span(n);
            // Output modes whose lowest coupled input mode is n.
            let mut row_blocks = vec![n + 1];
            if n == 0 {
                row_blocks.insert(0, 0);
            }
            if n + 1 == modes {
                row_blocks.push(n + 2);
            }
            let row_blocks: Vec<usize> = row_blocks.into_iter().filter(|&r| r < sizes_row.len()).collect();
            let c_n = sizes_col[n];
            let new_rows: usize = row_blocks.iter().map(|&r| sizes_row[r]).sum::<usize>() + c_n;
            let mut stack = Mat::<f64>::zeros(leftover.nrows() + new_rows, width);
            for i in 0..leftover.nrows() {
                for j in 0..leftover.ncols().min(width) {
                    stack[(i, j)] = leftover[(i, j)];
                }
            }
            let mut r0 = leftover.nrows();
            for &r in &row_blocks {
                for i in 0..sizes_row[r] {
                    for j in 0..width {
                        stack[(r0 + i, j)] = a[(row_off[r] + i, offsets[n] + j)];
                    }
                }
                r0 += sizes_row[r];
            }
            for i in 0..c_n {
                stack[(r0 + i, i)] = eps;
            }
            let r_full = if stack.nrows() == 0 { Mat::<f64>::zeros(0, width) } else { stack.qr().thin_R().to_owned() };
            let mut block = Mat::<f64>::zeros(c_n, width);
            for i in 0..c_n.min(r_full.nrows()) {
                for j in 0..width {
                    block[(i, j)] = r_full[(i, j)];
                }
            }
            let rest = r_full.nrows().saturating_sub(c_n);
            leftover = Mat::from_fn(rest, width - c_n, |i, j| r_full[(c_n + i, c_n + j)]);
            blocks.push(block);
        }
        offsets.pop();
        Self { offsets, sizes: sizes_col.to_vec(), blocks }
    }

    fn mul(&self, x: &Mat<f64>) -> Mat<f64> {
        let mut y = Mat::<f64>::zeros(x.nrows(), x.ncols());
        for (n, b) in self.blocks.iter().enumerate() {
            let off = self.offsets[n];
            let xs = x.as_ref().subrows(off, self.span(n));
            let prod = b.as_ref() * xs;
            for i in 0..b.nrows() {
                for c in 0..x.ncols() {
                    y[(off + i, c)] = prod[(i, c)];
                }
            }
        }
        y
    }

    /// Solves `R x = b`.
    fn solve(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        for n in (0..self.blocks.len()).rev() {
            let off = self.offsets[n];
            let c_n = self.sizes[n];
            let blk = &self.blocks[n];
            let tail = self.span(n) - c_n;
            let mut rhs = x.as_ref().subrows(off, c_n).to_owned();
            if tail > 0 {
                let coupled = blk.as_ref().submatrix(0, c_n, c_n, tail) * x.as_ref().subrows(off + c_n, tail);
                rhs -= &coupled;
            }
            solve_upper_triangular_in_place(blk.as_ref().submatrix(0, 0, c_n, c_n), rhs.as_mut(), Par::Seq);
            x.as_mut().subrows_mut(off, c_n).copy_from(&rhs);
        }
        x
    }

    /// Solves `Rᵀ x = b`.
    fn solve_transpose(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        for n in 0..self.blocks.len() {
            let off = self.offsets[n];
            let c_n = self.sizes[n];
            let mut rhs = x.as_ref().subrows(off, c_n).to_owned();
            for k in 1..=2 {
                if n < k {
                    continue;
                }
                let src = n - k;
                let col0: usize = (src..n).map(|i| self.sizes[i]).sum();
                let blk = &self.blocks[src];
                if col0 + c_n > blk.ncols() {
                    continue;
                }
                let coupled = blk.as_ref().submatrix(0, col0, self.sizes[src], c_n).transpose()
                    * x.as_ref().subrows(self.offsets[src], self.sizes[src]);
                rhs -= &coupled;
            }
            solve_lower_triangular_in_place(
                self.blocks[n].as_ref().submatrix(0, 0, c_n, c_n).transpose(),
                rhs.as_mut(),
                Par::Seq,
            );
            x.as_mut().subrows_mut(off, c_n).copy_from(&rhs);
        }
        x
    }
}

fn orthonormalize(x: &Mat<f64>) -> Mat<f64> {
    x.qr().compute_thin_Q()
}

/// Smallest `p` singular triplets of `R` by inverse subspace iteration, ascending.
fn smallest_singular(r: &BandedR, p: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Mat<f64>) {
    let n = r.dim();
    let p = p.min(n);
    let mut x = orthonormalize(&Mat::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5));
    let mut prev: Vec<f64> = vec![f64::INFINITY; p];
    let mut sigma = prev.clone();
    let mut vecs = x.clone();
    for _ in 0..200 {
        x = orthonormalize(&r.solve(&r.solve_transpose(&x)));
        let b = r.mul(&x);
        let Ok(svd) = b.thin_svd() else { break };
        let s = svd.S().column_vector();
        let v = svd.V();
        // faer orders singular values descending; reverse to ascending.
        sigma = (0..p).rev().map(|i| s[i]).collect();
        let ritz = x.as_ref() * v;
        vecs = Mat::from_fn(n, p, |i, j| ritz[(i, p - 1 - j)]);
        let settled = sigma.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1e-14 * sigma[p - 1]));
        prev = sigma.clone();
        if settled {
            break;
        }
    }
    (sigma, vecs)
}

fn largest_singular(r: &BandedR, rng: &mut ChaCha8Rng) -> f64 {
    let n = r.dim();
    let mut x = Mat::from_fn(n, 1, |_, _| rng.gen::<f64>() - 0.5);
    let mut sigma = 0.0;
    for _ in 0..300 {
        let norm = x.norm_l2();
        x = Mat::from_fn(n, 1, |i, _| x[(i, 0)] / norm);
        let y = r.mul(&x);
        let next = y.norm_l2();
        // Rᵀ R x.
        let mut z = Mat::<f64>::zeros(n, 1);
        for (k, b) in r.blocks.iter().enumerate() {
            let off = r.offsets[k];
            let part = b.as_ref().transpose() * y.as_ref().subrows(off, b.nrows());
            for i in 0..part.nrows() {
                z[(off + i, 0)] += part[(i, 0)];
            }
        }
        x = z;
        if (next - sigma).abs() <= 1e-10 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    /// `0` for even total degree in the momenta, `1` for odd.
    pub momentum_parity: usize,
    /// `0` for functions invariant under `(φ, p_φ) ↦ (-φ, -p_φ)`, `1` for anti-invariant.
    pub reflection: usize,
    pub columns: usize,
    /// Smallest computed singular values, ascending.
    pub singular_values: Vec<f64>,
    pub null_dim: usize,
    pub trivial_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullspaceReport {
    pub spec: AnsatzSpec,
    pub sigma_max: f64,
    /// Relative cut: singular values below `threshold · sigma_max` count as zero.
    pub threshold: f64,
    /// Smallest computed singular values over all sectors, ascending.
    pub singular_values: Vec<f64>,
    pub raw_dim: usize,
    pub trivial_rank: usize,
    pub deflated_dim: usize,
    /// `σ_{k+1} / σ_k` at the cut (`k = raw_dim`), when both exist.
    pub gap_ratio: Option<f64>,
    /// Orthonormal (in column-scaled coordinates) nullspace basis as coefficient vectors.
    pub basis: Vec<Vec<f64>>,
    /// Nullspace directions independent of the trivial integrals.
    pub deflated_basis: Vec<Vec<f64>>,
    pub sectors: Vec<SectorReport>,
}

impl NullspaceReport {
    pub fn integral(&self, index: usize) -> Option<QuarticAnsatz> {
        self.deflated_basis.get(index).map(|c| QuarticAnsatz { spec: self.spec.clone(), coeffs: c.clone() })
    }
}

/// Number of singular values computed per sector.
const SECTOR_PROBES: usize = 10;
/// Ridge added to the unit-norm columns before factoring.
const RIDGE: f64 = 1e-10;

/// Nullspace of the bracket operator with the trivial integrals projected out.
pub fn find_integrals(op: &BracketOperator, trivials: &[Vec<f64>], threshold: f64) -> Result<NullspaceReport> {
    if !(threshold > 0.0) {
        return Err(Error::BadParams(format!("threshold must be positive, got {threshold}")));
    }
    for t in trivials {
        if t.len() != op.spec.basis_size() {
            return Err(Error::BadParams("trivial vector does not match the ansatz".into()));
        }
    }
    struct Factored {
        scale: Vec<f64>,
        sigma: Vec<f64>,
        vecs: Mat<f64>,
        sigma_max: f64,
    }
    let factored: Vec<Factored> = op
        .sectors
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + si as u64);
            let mut a = Mat::<f64>::zeros(s.rows.len(), s.cols.len());
            for &(r, c, v) in &s.entries {
                a[(r, c)] += v;
            }
            let norms: Vec<f64> = (0..s.cols.len()).map(|c| a.as_ref().col(c).norm_l2()).collect();
            let top = norms.iter().cloned().fold(0.0, f64::max);
            // Columns that vanish to roundoff stay unscaled; normalizing them
            // would turn noise into unit-size columns.
            let scale: Vec<f64> = norms.iter().map(|&norm| if norm > 1e-12 * top { 1.0 / norm } else { 1.0 }).collect();
            for c in 0..s.cols.len() {
                for r in 0..s.rows.len() {
                    a[(r, c)] *= scale[c];
                }
            }
            let rmat = BandedR::factor(&a, &s.col_mode_sizes, &s.row_mode_sizes, RIDGE);
            let (_, vecs) = smallest_singular(&rmat, SECTOR_PROBES, &mut rng);
            // Report the unregularized residuals of the Ritz vectors.
            let av = a.as_ref() * vecs.as_ref();
            let mut order: Vec<(f64, usize)> = (0..vecs.ncols()).map(|j| (av.col(j).norm_l2(), j)).collect();
            order.sort_by(|x, y| x.0.total_cmp(&y.0));
            let sigma: Vec<f64> = order.iter().map(|o| o.0).collect();
            let vecs = Mat::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, order[j].1)]);
            drop(a);
            let sigma_max = largest_singular(&rmat, &mut rng);
            Factored { scale, sigma, vecs, sigma_max }
        })
        .collect();
    let sigma_max = factored.iter().map(|f| f.sigma_max).fold(0.0, f64::max);
    let cut = threshold * sigma_max;

    let mut all_sigma: Vec<f64> = Vec::new();
    let mut basis = Vec::new();
    let mut deflated_basis = Vec::new();
    let mut sectors = Vec::new();
    for (s, f) in op.sectors.iter().zip(&factored) {
        all_sigma.extend(&f.sigma);
        let null_dim = f.sigma.iter().filter(|&&x| x < cut).count();
        // Nullspace vectors in scaled coordinates, orthonormal.
        let null: Vec<Vec<f64>> = (0..null_dim).map(|j| (0..s.cols.len()).map(|i| f.vecs[(i, j)]).collect()).collect();
        let to_full = |x: &[f64]| {
            let mut c = vec![0.0; op.spec.basis_size()];
            for (i, &full) in s.cols.iter().enumerate() {
                c[full] = x[i] * f.scale[i];
            }
            normalized(c)
        };
        // Trivial vectors restricted to the sector, in scaled coordinates.
        let mut trivial_span: Vec<Vec<f64>> = Vec::new();
        for t in trivials {
            let tx: Vec<f64> = s.cols.iter().enumerate().map(|(i, &full)| t[full] / f.scale[i]).collect();
            let tn = norm(&tx);
            if tn == 0.0 {
                continue;
            }
            let proj = project(&null, &tx);
            let resid: Vec<f64> = tx.iter().zip(&proj).map(|(a, b)| a - b).collect();
            if norm(&resid) > 0.5 * tn {
                continue;
            }
            if let Some(v) = gram_schmidt(&trivial_span, &proj, 0.1) {
                trivial_span.push(v);
            }
        }
        let mut kept: Vec<Vec<f64>> = trivial_span.clone();
        let mut sector_deflated = Vec::new();
        for v in &null {
            if let Some(w) = gram_schmidt(&kept, v, 0.5) {
                kept.push(w.clone());
                sector_deflated.push(w);
            }
        }
        basis.extend(null.iter().map(|x| to_full(x)));
        deflated_basis.extend(sector_deflated.iter().map(|x| to_full(x)));
        sectors.push(SectorReport {
            momentum_parity: s.momentum_parity,
            reflection: s.reflection,
            columns: s.cols.len(),
            singular_values: f.sigma.clone(),
            null_dim,
            trivial_rank: trivial_span.len(),
        });
    }
    all_sigma.sort_by(f64::total_cmp);
    let raw_dim = sectors.iter().map(|s| s.null_dim).sum::<usize>();
    let trivial_rank = sectors.iter().map(|s| s.trivial_rank).sum::<usize>();
    let gap_ratio = if raw_dim > 0 && raw_dim < all_sigma.len() {
        Some(all_sigma[raw_dim] / all_sigma[raw_dim - 1].max(f64::MIN_POSITIVE))
    } else {
        None
    };
    Ok(NullspaceReport {
        spec: op.spec.clone(),
        sigma_max,
        threshold,
        singular_values: all_sigma,
        raw_dim,
        trivial_rank,
        deflated_dim: deflated_basis.len(),
        gap_ratio,
        basis,
        deflated_basis,
        sectors,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalized(mut x: Vec<f64>) -> Vec<f64> {
    let n = norm(&x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonal projection onto the span of orthonormal `basis`.
fn project(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in basis {
        let c = dot(b, x);
        out.iter_mut().zip(b).for_each(|(o, bi)| *o += c * bi);
    }
    out
}

/// Normalized component of `x` orthogonal to orthonormal `basis`, if it keeps
/// more than `keep` of the original norm.
fn gram_schmidt(basis: &[Vec<f64>], x: &[f64], keep: f64) -> Option<Vec<f64>> {
    let n0 = norm(x);
    if n0 == 0.0 {
        return None;
    }
    let mut r = x.to_vec();
    for _ in 0..2 {
        let p = project(basis, &r);
        r.iter_mut().zip(&p).for_each(|(a, b)| *a -= b);
    }
    (norm(&r) > keep * n0).then(|| normalized(r))
}

/// A candidate integral: basis parameters plus coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticAnsatz {
    pub spec: AnsatzSpec,
    pub coeffs: Vec<f64>,
}

impl QuarticAnsatz {
    /// Samples `F = Σ a_jk(φ, ρ) p_φ^j p_ρ^k` given `a(j, k, φ, ρ)`. Angular
    /// projections are exact for trigonometric polynomials of order ≤ 2M.
    pub fn sample(spec: &AnsatzSpec, a: impl Fn(usize, usize, f64, f64) -> f64) -> Self {
        let nodes = extrema_nodes(spec.radial, spec.window.0, spec.window.1);
        let n_phi = 4 * spec.fourier + 4;
        let mut coeffs = vec![0.0; spec.basis_size()];
        for (mi, &(j, k)) in spec.monomials().iter().enumerate() {
            for (node, &rho) in nodes.iter().enumerate() {
                let vals: Vec<f64> = (0..n_phi).map(|q| a(j, k, TAU * q as f64 / n_phi as f64, rho)).collect();
                for t in 0..spec.trig_count() {
                    let (l, is_sin) = if t == 0 { (0, false) } else { (t.div_ceil(2), t % 2 == 0) };
                    let w = if l == 0 { 1.0 / n_phi as f64 } else { 2.0 / n_phi as f64 };
                    let c: f64 = vals
                        .iter()
                        .enumerate()
                        .map(|(q, v)| {
                            let ang = l as f64 * TAU * q as f64 / n_phi as f64;
                            v * if is_sin { ang.sin() } else { ang.cos() }
                        })
                        .sum();
                    coeffs[spec.index(mi, t, node)] = w * c;
                }
            }
        }
        Self { spec: spec.clone(), coeffs }
    }

    /// `F(φ, ρ, p)`; `ρ` must lie in the window.
    pub fn eval(&self, q: [f64; 2], p: [f64; 2]) -> Result<f64> {
        let (lo, hi) = self.spec.window;
        if !(q[1] >= lo && q[1] <= hi) {
            return Err(Error::BadParams(format!("radial coordinate {} outside window ({lo}, {hi})", q[1])));
        }
        let interp = NodalInterpolant::new(self.spec.radial, lo, hi);
        let card = interp.cardinals(q[1]);
        let trig = trig_values(q[0], self.spec.fourier);
        let mut total = 0.0;
        for (mi, &(j, k)) in self.spec.monomials().iter().enumerate() {
            let mono = p[0].powi(j as i32) * p[1].powi(k as i32);
            let mut a = 0.0;
            for (t, tv) in trig.iter().enumerate() {
                let base = self.spec.index(mi, t, 0);
                a += tv * dot(&self.coeffs[base..base + self.spec.radial], &card);
            }
            total += a * mono;
        }
        Ok(total)
    }
}

/// `1`, `H`, `H²` (as far as the degree allows) sampled into the ansatz.
pub fn trivial_integrals(sys: &ChartedSystem, spec: &AnsatzSpec) -> Result<Vec<Vec<f64>>> {
    let chart = sys.chart_index(&spec.chart)?;
    let local = |phi: f64, rho: f64| sys.local(chart, [phi, rho]).unwrap_or([f64::NAN; 3]);
    let mut out = vec![QuarticAnsatz::sample(spec, |j, k, _, _| f64::from(j + k == 0)).coeffs];
    if spec.degree >= 2 {
        out.push(
            QuarticAnsatz::sample(spec, |j, k, phi, rho| {
                let [e1, e2, v] = local(phi, rho);
                match (j, k) {
                    (2, 0) => 0.5 / e1,
                    (0, 2) => 0.5 / e2,
                    (0, 0) => v,
                    _ => 0.0,
                }
            })
            .coeffs,
        );
    }
    if spec.degree >= 4 {
        out.push(
            QuarticAnsatz::sample(spec, |j, k, phi, rho| {
                let [e1, e2, v] = local(phi, rho);
                let (g1, g2) = (1.0 / e1, 1.0 / e2);
                match (j, k) {
                    (4, 0) => 0.25 * g1 * g1,
                    (2, 2) => 0.5 * g1 * g2,
                    (0, 4) => 0.25 * g2 * g2,
                    (2, 0) => g1 * v,
                    (0, 2) => g2 * v,
                    (0, 0) => v * v,
                    _ => 0.0,
                }
            })
            .coeffs,
        );
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::WindowOutsideChart("trivial integrals not finite on the window".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    /// `max_t |F(t) - F(0)| / scale`.
    pub drift: f64,
    pub f0: f64,
    pub scale: f64,
    pub samples: usize,
}

/// Evaluates `F` along `traj` (mapped into the ansatz chart) and reports its drift,
/// relative to `max(|F(0)|, spread of F over random states of the window)`.
pub fn certify(f: &QuarticAnsatz, sys: &ChartedSystem, traj: &Trajectory, seed: u64) -> Result<Certification> {
    let chart = sys.chart_index(&f.spec.chart)?;
    let (lo, hi) = f.spec.window;
    let mut values = Vec::with_capacity(traj.samples.len());
    let mut p_scale = 0.0f64;
    for s in &traj.samples {
        let mapped = sys.transition(&s.state, chart).map_err(|_| Error::WindowExit { t: s.t })?;
        if !(mapped.q[1] >= lo && mapped.q[1] <= hi) {
            return Err(Error::WindowExit { t: s.t });
        }
        p_scale = p_scale.max(mapped.p[0].abs()).max(mapped.p[1].abs());
        values.push(f.eval(mapped.q, mapped.p)?);
    }
    let Some(&f0) = values.first() else {
        return Ok(Certification { drift: 0.0, f0: 0.0, scale: 0.0, samples: 0 });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_scale = if p_scale > 0.0 { p_scale } else { 1.0 };
    let random: Vec<f64> = (0..64)
        .map(|_| {
            let q = [rng.gen_range(0.0..TAU), rng.gen_range(lo..=hi)];
            let p = [rng.gen_range(-p_scale..=p_scale), rng.gen_range(-p_scale..=p_scale)];
            f.eval(q, p)
        })
        .collect::<Result<_>>()?;
    let spread =
        random.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - random.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let scale = f0.abs().max(spread);
    let drift = values.iter().fold(0.0f64, |m, v| m.max((v - f0).abs())) / scale;
    Ok(Certification { drift, f0, scale, samples: values.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{build_base, Scope};

    fn spec(degree: usize) -> AnsatzSpec {
        AnsatzSpec { degree, fourier: 3, radial: 16, chart: "cylinder".into(), window: (-1.0, 1.0) }
    }

    #[test]
    fn monomial_indexing_is_consistent() {
        for (i, &(j, k)) in monomials(5).iter().enumerate() {
            assert_eq!(mono_index(j, k), i);
        }
        assert_eq!(spec(4).basis_size(), 15 * 7 * 16);
    }

    #[test]
    fn trig_products() {
        assert_eq!(times_cos(Kind::Cos, 0), vec![(0.5, Kind::Cos, 1), (0.5, Kind::Cos, 1)]);
        assert_eq!(times_sin(Kind::Sin, 1), vec![(0.5, Kind::Cos, 0), (-0.5, Kind::Cos, 2)]);
        assert_eq!(d_phi(Kind::Cos, 0), vec![]);
    }

    #[test]
    fn constants_map_to_zero() {
        let sys = build_base(1.0, 1.0, Scope::Global).unwrap();
        let op = bracket_operator(&sys, &spec(0)).unwrap();
        let one = QuarticAnsatz::sample(&op.spec, |_, _, _, _| 1.0);
        let out = op.apply(&one.coeffs).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sampling_round_trips_through_eval() {
        let s = spec(2);
        let f = QuarticAnsatz::sample(&s, |j, k, phi, rho| (j as f64 + 1.0) * (2.0 * phi).sin() * rho + k as f64);
        let v = f.eval([0.4, 0.3], [1.5, -0.5]).unwrap();
        let a = |j: usize, k: usize| (j as f64 + 1.0) * 0.8f64.sin() * 0.3 + k as f64;
        let expected = a(0, 0) + a(1, 0) * 1.5 + a(0, 1) * -0.5 + a(2, 0) * 2.25 + a(1, 1) * -0.75 + a(0, 2) * 0.25;
        assert!((v - expected).abs() < 1e-12, "{v} {expected}");
        assert!(f.eval([0.0, 1.5], [0.0, 0.0]).is_err());
    }

    #[test]
    fn hamiltonian_is_nearly_annihilated() {
        let sys = build_base(1.0, 1.0, Scope::Global).unwrap();
        let s = AnsatzSpec { radial: 32, ..spec(2) };
        let op = bracket_operator(&sys, &s).unwrap();
        let triv = trivial_integrals(&sys, &s).unwrap();
        let out = op.apply(&triv[1]).unwrap();
        let rel = norm(&out) / norm(&triv[1]);
        assert!(rel < 1e-8, "{rel}");
    }
}
