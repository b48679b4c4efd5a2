//! Explicit leapfrog solver for `∂_t²u − Δu + qu = F` on the truncated
//! waveguide, with Dirichlet data on the lateral boundary, homogeneous caps
//! and zero initial state.
//!
//! Complex fields are advanced as two real fields through the same kernel.
//! Only axial slabs that can be nonzero (the numerical domain of dependence
//! of the data and sources) are swept, which leaves results unchanged.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{LateralField, PotentialField};
use crate::geometry::{cfl_limit, MultiplierField, NodeKind, WaveguideGrid};

/// Dirichlet data on the lateral boundary, evaluated one axial column at a time.
pub trait BoundaryData: Sync {
    /// Writes the values at every axial node of the column through the
    /// boundary point `point` (nearest trace point `trace`) at time `t`.
    /// Returns `false`, leaving the buffers untouched, when the column is zero.
    fn column(&self, t: f64, point: [f64; 2], trace: usize, re: &mut [f64], im: &mut [f64])
        -> bool;

    /// Axial interval outside which the data vanish, if known.
    fn axial_support(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Homogeneous Dirichlet data.
pub struct ZeroData;

impl BoundaryData for ZeroData {
    fn column(&self, _: f64, _: [f64; 2], _: usize, _: &mut [f64], _: &mut [f64]) -> bool {
        false
    }

    fn axial_support(&self) -> Option<(f64, f64)> {
        Some((f64::INFINITY, f64::NEG_INFINITY))
    }
}

impl BoundaryData for LateralField {
    fn column(
        &self,
        t: f64,
        _point: [f64; 2],
        trace: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) -> bool {
        self.column_at(t, trace, re, im)
    }
}

/// Inclusive lattice index range.
type Span = (usize, usize);

/// Axis-aligned box `[lo, hi]` in `(x₁, x₂, x₃)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Interior source term.
pub trait Forcing: Sync {
    /// Box containing the support at time `t`; `None` when the source is off.
    fn bounds(&self, t: f64) -> Option<Bounds>;
    /// Value at lattice node `node` with position `x`.
    fn value(&self, t: f64, node: usize, x: [f64; 3]) -> Complex64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Diff {
    Central,
    Forward,
    Backward,
    ForwardShort,
    BackwardShort,
    None,
}

/// Stencil choice for a derivative along one lattice line, given which
/// neighbors carry values.
fn diff_kind(m2: bool, m1: bool, p1: bool, p2: bool) -> Diff {
    match (m2, m1, p1, p2) {
        (_, true, true, _) => Diff::Central,
        (_, _, true, true) => Diff::Forward,
        (true, true, _, _) => Diff::Backward,
        (_, _, true, false) => Diff::ForwardShort,
        (_, true, false, _) => Diff::BackwardShort,
        _ => Diff::None,
    }
}

#[inline]
fn apply_diff(kind: Diff, a: &[f64], idx: usize, stride: usize, h: f64) -> f64 {
    match kind {
        Diff::Central => (a[idx + stride] - a[idx - stride]) / (2.0 * h),
        Diff::Forward => (-3.0 * a[idx] + 4.0 * a[idx + stride] - a[idx + 2 * stride]) / (2.0 * h),
        Diff::Backward => (3.0 * a[idx] - 4.0 * a[idx - stride] + a[idx - 2 * stride]) / (2.0 * h),
        Diff::ForwardShort => (a[idx + stride] - a[idx]) / h,
        Diff::BackwardShort => (a[idx] - a[idx - stride]) / h,
        Diff::None => 0.0,
    }
}

/// Per-node stencil choices for the planar gradient.
struct GradientPlan {
    x: Vec<Diff>,
    y: Vec<Diff>,
}

impl GradientPlan {
    fn new(grid: &WaveguideGrid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let valued = |i: isize, j: isize| {
            i >= 0
                && j >= 0
                && (i as usize) < nx
                && (j as usize) < ny
                && grid.kind(grid.node2(i as usize, j as usize)) != NodeKind::Exterior
        };
        let mut x = vec![Diff::None; nx * ny];
        let mut y = vec![Diff::None; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let n = grid.node2(i, j);
                if grid.kind(n) == NodeKind::Exterior {
                    continue;
                }
                let (ii, jj) = (i as isize, j as isize);
                x[n] = diff_kind(
                    valued(ii - 2, jj),
                    valued(ii - 1, jj),
                    valued(ii + 1, jj),
                    valued(ii + 2, jj),
                );
                y[n] = diff_kind(
                    valued(ii, jj - 2),
                    valued(ii, jj - 1),
                    valued(ii, jj + 1),
                    valued(ii, jj + 2),
                );
            }
        }
        GradientPlan { x, y }
    }
}

/// Spatial gradient of `a` at lattice node `(node2, k)`.
fn gradient(
    grid: &WaveguideGrid,
    plan: &GradientPlan,
    a: &[f64],
    node2: usize,
    k: usize,
) -> [f64; 3] {
    let nxy = grid.nxy();
    let idx = k * nxy + node2;
    let gz = if k == 0 {
        apply_diff(Diff::Forward, a, idx, nxy, grid.hz)
    } else if k + 1 == grid.nz {
        apply_diff(Diff::Backward, a, idx, nxy, grid.hz)
    } else {
        apply_diff(Diff::Central, a, idx, nxy, grid.hz)
    };
    [
        apply_diff(plan.x[node2], a, idx, 1, grid.hx),
        apply_diff(plan.y[node2], a, idx, grid.nx, grid.hy),
        gz,
    ]
}

#[derive(Debug, Clone, Default)]
struct Component {
    prev: Vec<f64>,
    cur: Vec<f64>,
}

/// Time-stepping state. After `n` calls to [`WaveSolver::advance`] the solver
/// holds `u^{n−1}` and `u^n`.
pub struct WaveSolver<'a> {
    grid: &'a WaveguideGrid,
    q: Option<&'a [f64]>,
    parallel: bool,
    parts: Vec<Component>,
    step: usize,
    /// Inclusive range of axial slabs that may hold nonzero values.
    active: Option<(usize, usize)>,
    data_slabs: Option<(usize, usize)>,
    col_re: Vec<f64>,
    col_im: Vec<f64>,
    record_source: bool,
    /// `F^n` at the nodes where it was applied in the last step.
    pub last_source: Vec<(usize, Complex64)>,
}

impl<'a> WaveSolver<'a> {
    /// `complex` selects whether an imaginary part is carried.
    pub fn new(
        grid: &'a WaveguideGrid,
        q: Option<&'a PotentialField>,
        data: &dyn BoundaryData,
        complex: bool,
        parallel: bool,
    ) -> Result<Self> {
        let limit = cfl_limit(grid.h_min());
        if grid.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt: grid.dt, limit });
        }
        let n = grid.n_nodes();
        let parts = (0..if complex { 2 } else { 1 })
            .map(|_| Component {
                prev: vec![0.0; n],
                cur: vec![0.0; n],
            })
            .collect();
        let q = q.filter(|q| !q.is_zero()).map(|q| q.values.as_slice());
        let data_slabs = match data.axial_support() {
            None => Some((1, grid.nz - 2)),
            Some((lo, hi)) => slab_range(grid, lo, hi),
        };
        let mut s = WaveSolver {
            grid,
            q,
            parallel,
            parts,
            step: 0,
            active: None,
            data_slabs,
            col_re: vec![0.0; grid.nz],
            col_im: vec![0.0; grid.nz],
            record_source: false,
            last_source: Vec::new(),
        };
        s.impose(data, 0.0);
        Ok(s)
    }

    /// Keep the applied source values of each step in `last_source`.
    pub fn record_source(&mut self, on: bool) {
        self.record_source = on;
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.step)
    }

    pub fn is_complex(&self) -> bool {
        self.parts.len() == 2
    }

    /// Current level `u^n`, real and (if carried) imaginary parts.
    pub fn current(&self) -> (&[f64], Option<&[f64]>) {
        (
            &self.parts[0].cur,
            self.parts.get(1).map(|c| c.cur.as_slice()),
        )
    }

    /// Previous level `u^{n−1}`.
    pub fn previous(&self) -> (&[f64], Option<&[f64]>) {
        (
            &self.parts[0].prev,
            self.parts.get(1).map(|c| c.prev.as_slice()),
        )
    }

    pub fn active_slabs(&self) -> Option<(usize, usize)> {
        self.active
    }

    fn impose(&mut self, data: &dyn BoundaryData, t: f64) {
        let grid = self.grid;
        let nxy = grid.nxy();
        let nz = grid.nz;
        let complex = self.is_complex();
        let Some((k0, k1)) = self.data_slabs else {
            return;
        };
        for d in grid.dirichlet_nodes() {
            let nonzero = data.column(
                t,
                d.boundary_point,
                d.trace,
                &mut self.col_re,
                &mut self.col_im,
            );
            for k in k0..=k1.min(nz - 2) {
                let idx = k * nxy + d.node;
                let (re, im) = if nonzero {
                    (self.col_re[k], self.col_im[k])
                } else {
                    (0.0, 0.0)
                };
                self.parts[0].cur[idx] = re;
                if complex {
                    self.parts[1].cur[idx] = im;
                }
            }
            if nonzero {
                // data enter the active range
                self.active = Some(match self.active {
                    None => (k0, k1),
                    Some((a, b)) => (a.min(k0), b.max(k1)),
                });
            }
        }
    }

    /// Advances from level `n` to `n+1` using `F^n` and imposing `f^{n+1}`.
    pub fn advance(&mut self, data: &dyn BoundaryData, source: Option<&dyn Forcing>) -> Result<()> {
        let grid = self.grid;
        let nz = grid.nz;
        let t = self.time();
        let first = self.step == 0;
        let coef = if first { 0.5 } else { 1.0 } * grid.dt * grid.dt;

        // Source support at this level joins the active range.
        let source_box = source
            .and_then(|s| s.bounds(t))
            .and_then(|b| self.box_ranges(&b));
        if let Some((_, _, (k0, k1))) = source_box {
            self.active = Some(match self.active {
                None => (k0, k1),
                Some((a, b)) => (a.min(k0), b.max(k1)),
            });
        }

        let sweep = self
            .active
            .map(|(a, b)| (a.saturating_sub(1).max(1), (b + 1).min(nz - 2)));
        let mut checksum = 0.0;
        if let Some((k0, k1)) = sweep {
            for part in self.parts.iter_mut() {
                if first {
                    part.prev.copy_from_slice(&part.cur);
                }
                checksum += sweep_slabs(
                    grid,
                    self.q,
                    &part.cur,
                    &mut part.prev,
                    coef,
                    k0,
                    k1,
                    self.parallel,
                );
            }
        }

        self.last_source.clear();
        if let (Some(src), Some((ir, jr, kr))) = (source, source_box) {
            let nxy = grid.nxy();
            for k in kr.0..=kr.1 {
                for j in jr.0..=jr.1 {
                    for i in ir.0..=ir.1 {
                        let node2 = grid.node2(i, j);
                        if grid.kind(node2) != NodeKind::Interior {
                            continue;
                        }
                        let p = grid.position(node2);
                        let idx = k * nxy + node2;
                        let f = src.value(t, idx, [p[0], p[1], grid.z(k)]);
                        if f.re == 0.0 && f.im == 0.0 {
                            continue;
                        }
                        self.parts[0].prev[idx] += coef * f.re;
                        if let Some(im) = self.parts.get_mut(1) {
                            im.prev[idx] += coef * f.im;
                        }
                        if self.record_source {
                            self.last_source.push((idx, f));
                        }
                        checksum += f.norm_sqr();
                    }
                }
            }
        }
        if !checksum.is_finite() {
            return Err(Error::NonFinite { step: self.step });
        }

        for part in self.parts.iter_mut() {
            std::mem::swap(&mut part.prev, &mut part.cur);
        }
        if let Some((a, b)) = sweep {
            self.active = Some(match self.active {
                None => (a, b),
                Some((x, y)) => (x.min(a), y.max(b)),
            });
        }
        self.step += 1;
        self.impose(data, grid.time(self.step));
        Ok(())
    }

    /// Lattice index ranges `(i, j, k)` covering a box, clipped to the grid.
    fn box_ranges(&self, b: &Bounds) -> Option<(Span, Span, Span)> {
        let g = self.grid;
        let range = |lo: f64, hi: f64, o: f64, h: f64, n: usize, min: usize, max: usize| {
            let a = ((lo - o) / h).floor().max(min as f64);
            let b = ((hi - o) / h).ceil().min(max as f64);
            if a > b {
                None
            } else {
                Some((a as usize, b as usize))
            }
            .filter(|_| n > 0)
        };
        let ir = range(b.lo[0], b.hi[0], g.origin[0], g.hx, g.nx, 0, g.nx - 1)?;
        let jr = range(b.lo[1], b.hi[1], g.origin[1], g.hy, g.ny, 0, g.ny - 1)?;
        let kr = range(b.lo[2], b.hi[2], -g.x_cap, g.hz, g.nz, 1, g.nz - 2)?;
        Some((ir, jr, kr))
    }

    /// Neumann trace of a level (`u^n` when `level_prev` is false, `u^{n−1}`
    /// otherwise) at every trace point and axial node, written as
    /// `out[m·nz + k]`. `data` and `t` supply the boundary term of disk stencils.
    pub fn traces(
        &mut self,
        data: &dyn BoundaryData,
        t: f64,
        level_prev: bool,
        out_re: &mut [f64],
        out_im: &mut [f64],
    ) {
        let grid = self.grid;
        let nz = grid.nz;
        let nxy = grid.nxy();
        out_re.iter_mut().for_each(|v| *v = 0.0);
        out_im.iter_mut().for_each(|v| *v = 0.0);
        let Some((a, b)) = self.active else {
            return;
        };
        let re = if level_prev {
            &self.parts[0].prev
        } else {
            &self.parts[0].cur
        };
        let im = self
            .parts
            .get(1)
            .map(|c| if level_prev { &c.prev } else { &c.cur });
        for (m, tp) in grid.trace_points().iter().enumerate() {
            let row = m * nz;
            for &(node, c) in &tp.stencil {
                for k in a..=b {
                    out_re[row + k] += c * re[k * nxy + node];
                }
                if let Some(im) = im {
                    for k in a..=b {
                        out_im[row + k] += c * im[k * nxy + node];
                    }
                }
            }
            if tp.boundary_coeff != 0.0
                && data.column(t, tp.point, m, &mut self.col_re, &mut self.col_im)
            {
                for k in 1..nz - 1 {
                    out_re[row + k] += tp.boundary_coeff * self.col_re[k];
                    out_im[row + k] += tp.boundary_coeff * self.col_im[k];
                }
            }
        }
    }
}

fn slab_range(grid: &WaveguideGrid, lo: f64, hi: f64) -> Option<(usize, usize)> {
    if !(lo <= hi) {
        return None;
    }
    let a = ((lo + grid.x_cap) / grid.hz).floor().max(1.0);
    let b = ((hi + grid.x_cap) / grid.hz)
        .ceil()
        .min((grid.nz - 2) as f64);
    (a <= b).then_some((a as usize, b as usize))
}

/// One leapfrog sweep over slabs `k0..=k1`, writing `u^{n+1}` over `prev`.
/// Returns the sum of squares of the new values.
#[allow(clippy::too_many_arguments)]
fn sweep_slabs(
    grid: &WaveguideGrid,
    q: Option<&[f64]>,
    cur: &[f64],
    prev: &mut [f64],
    coef: f64,
    k0: usize,
    k1: usize,
    parallel: bool,
) -> f64 {
    let nxy = grid.nxy();
    let nx = grid.nx;
    let (ihx2, ihy2, ihz2) = (
        1.0 / (grid.hx * grid.hx),
        1.0 / (grid.hy * grid.hy),
        1.0 / (grid.hz * grid.hz),
    );
    let diag = 2.0 * (ihx2 + ihy2 + ihz2);
    let runs = grid.interior_runs();
    let body = |k: usize, out: &mut [f64]| -> f64 {
        let base = k * nxy;
        let mut acc = 0.0;
        for &(j, i0, i1) in runs {
            let len = i1 - i0;
            let off = base + j * nx + i0;
            let c = &cur[off..off + len];
            let cl = &cur[off - 1..off - 1 + len];
            let cr = &cur[off + 1..off + 1 + len];
            let cs = &cur[off - nx..off - nx + len];
            let cn = &cur[off + nx..off + nx + len];
            let cd = &cur[off - nxy..off - nxy + len];
            let cu = &cur[off + nxy..off + nxy + len];
            let o = &mut out[j * nx + i0..j * nx + i0 + len];
            match q {
                None => {
                    for t in 0..len {
                        let u = c[t];
                        let lap = (cl[t] + cr[t]) * ihx2
                            + (cs[t] + cn[t]) * ihy2
                            + (cd[t] + cu[t]) * ihz2
                            - diag * u;
                        let v = 2.0 * u - o[t] + coef * lap;
                        o[t] = v;
                        acc += v * v;
                    }
                }
                Some(q) => {
                    let qs = &q[off..off + len];
                    for t in 0..len {
                        let u = c[t];
                        let lap = (cl[t] + cr[t]) * ihx2
                            + (cs[t] + cn[t]) * ihy2
                            + (cd[t] + cu[t]) * ihz2
                            - diag * u;
                        let v = 2.0 * u - o[t] + coef * (lap - qs[t] * u);
                        o[t] = v;
                        acc += v * v;
                    }
                }
            }
        }
        acc
    };
    let slabs = &mut prev[k0 * nxy..(k1 + 1) * nxy];
    if parallel {
        slabs
            .par_chunks_mut(nxy)
            .enumerate()
            .map(|(s, out)| body(k0 + s, out))
            .sum()
    } else {
        slabs
            .chunks_mut(nxy)
            .enumerate()
            .map(|(s, out)| body(k0 + s, out))
            .sum()
    }
}

/// Options for [`solve_ibvp`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Store the Neumann trace every `trace_stride` steps.
    pub trace_stride: usize,
    /// Store the interior field every `history_stride` steps, if set.
    pub history_stride: Option<usize>,
    /// Record the discrete energy after every step.
    pub track_energy: bool,
    /// Carry an imaginary part.
    pub complex: bool,
    pub parallel: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            trace_stride: 1,
            history_stride: None,
            track_energy: false,
            complex: true,
            parallel: false,
        }
    }
}

/// Field snapshots at every `stride`-th level.
#[derive(Debug, Clone)]
pub struct History {
    pub stride: usize,
    pub levels: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone)]
pub struct FinalState {
    pub u: Vec<Complex64>,
    pub u_t: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub history: Option<History>,
    pub neumann_trace: LateralField,
    /// `(t_{n+1/2}, E^{n+1/2})`, the leapfrog energy between consecutive levels.
    pub energy_series: Vec<(f64, f64)>,
    pub final_state: FinalState,
}

fn to_complex(re: &[f64], im: Option<&[f64]>) -> Vec<Complex64> {
    match im {
        Some(im) => re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
        None => re.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
    }
}

/// Discrete energy `½Σ V[((u^{n+1}−u^n)/dt)² + ⟨(−Δ_h+q)u^{n+1}, u^n⟩]` over
/// interior nodes, conserved by the scheme when data and sources vanish.
pub fn leapfrog_energy(
    grid: &WaveguideGrid,
    q: Option<&PotentialField>,
    solver: &WaveSolver,
) -> f64 {
    let Some((a, b)) = solver.active_slabs() else {
        return 0.0;
    };
    let nxy = grid.nxy();
    let nx = grid.nx;
    let vol = grid.hx * grid.hy * grid.hz;
    let (ihx2, ihy2, ihz2) = (
        1.0 / (grid.hx * grid.hx),
        1.0 / (grid.hy * grid.hy),
        1.0 / (grid.hz * grid.hz),
    );
    let dt2 = 1.0 / (grid.dt * grid.dt);
    let mut total = 0.0;
    for part in &solver.parts {
        let (old, new) = (&part.prev, &part.cur);
        for k in a.max(1)..=b.min(grid.nz - 2) {
            for &(j, i0, i1) in grid.interior_runs() {
                for i in i0..i1 {
                    let idx = k * nxy + j * nx + i;
                    let u = new[idx];
                    let lap = (new[idx - 1] + new[idx + 1] - 2.0 * u) * ihx2
                        + (new[idx - nx] + new[idx + nx] - 2.0 * u) * ihy2
                        + (new[idx - nxy] + new[idx + nxy] - 2.0 * u) * ihz2;
                    let qv = q.map_or(0.0, |q| q.values[idx]);
                    let d = u - old[idx];
                    total += d * d * dt2 + (qv * u - lap) * old[idx];
                }
            }
        }
    }
    0.5 * vol * total
}

/// Solves the boundary value problem with Dirichlet data `f` and optional
/// interior source, from zero initial state up to `T`.
pub fn solve_ibvp(
    grid: &WaveguideGrid,
    q: &PotentialField,
    f: &dyn BoundaryData,
    source: Option<&dyn Forcing>,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let mut solver = WaveSolver::new(grid, Some(q), f, opts.complex, opts.parallel)?;
    let nz = grid.nz;
    let n_trace = grid.trace_points().len();
    let stride = opts.trace_stride.max(1);
    let mut trace = LateralField::zeros(grid, stride);
    let (mut tr_re, mut tr_im) = (vec![0.0; n_trace * nz], vec![0.0; n_trace * nz]);
    let mut store_trace = |solver: &mut WaveSolver, trace: &mut LateralField, level: usize| {
        if !level.is_multiple_of(stride) || level / stride >= trace.n_times {
            return;
        }
        solver.traces(f, grid.time(level), false, &mut tr_re, &mut tr_im);
        let n = level / stride;
        for m in 0..n_trace {
            for k in 0..nz {
                let idx = trace.index(n, m, k);
                trace.values[idx] = Complex64::new(tr_re[m * nz + k], tr_im[m * nz + k]);
            }
        }
    };
    let mut history = opts.history_stride.map(|s| History {
        stride: s.max(1),
        levels: Vec::new(),
    });
    let mut energy_series = Vec::new();

    store_trace(&mut solver, &mut trace, 0);
    if let Some(h) = history.as_mut() {
        let (re, im) = solver.current();
        h.levels.push(to_complex(re, im));
    }
    let n_steps = grid.n_steps;
    let mut before_last = Vec::new();
    for n in 0..=n_steps {
        if n == n_steps {
            // u^{N−1}, kept for the centered time derivative at T
            let (re, im) = solver.previous();
            before_last = to_complex(re, im);
        }
        solver.advance(f, source)?;
        if n == n_steps {
            break;
        }
        if opts.track_energy {
            energy_series.push((
                grid.time(n) + 0.5 * grid.dt,
                leapfrog_energy(grid, Some(q), &solver),
            ));
        }
        store_trace(&mut solver, &mut trace, n + 1);
        if let Some(h) = history.as_mut() {
            if (n + 1) % h.stride == 0 {
                let (re, im) = solver.current();
                h.levels.push(to_complex(re, im));
            }
        }
    }
    // the solver now holds u^N (previous) and u^{N+1} (current)
    let (re, im) = solver.previous();
    let u = to_complex(re, im);
    let (re, im) = solver.current();
    let next = to_complex(re, im);
    let inv = 0.5 / grid.dt;
    let u_t = next
        .iter()
        .zip(&before_last)
        .map(|(a, b)| (a - b) * inv)
        .collect();
    Ok(SolveResult {
        history,
        neumann_trace: trace,
        energy_series,
        final_state: FinalState { u, u_t },
    })
}

/// Terms of the multiplier identity, each integrated over the space-time
/// cylinder by trapezoid quadrature.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct RellichTerms {
    /// `∫_Σ |∂_ν v|²`.
    pub boundary: f64,
    /// `2∫_Q (H∇v)·∇v`.
    pub jacobian: f64,
    /// `−∫_Q div γ |∇v|²`.
    pub div_gradient: f64,
    /// `2∫_Ω ∂_t v(T) γ·∇v(T)`.
    pub final_time: f64,
    /// `∫_Q div γ (∂_t v)²`.
    pub div_velocity: f64,
    /// `−2∫_Q F γ·∇v`, present when the solution is driven by an interior source.
    pub source: f64,
}

impl RellichTerms {
    pub fn rhs(&self) -> f64 {
        self.jacobian + self.div_gradient + self.final_time + self.div_velocity + self.source
    }

    /// `|LHS − RHS| / (|LHS| + |RHS|)`, zero when both sides vanish.
    pub fn residual(&self) -> f64 {
        let (l, r) = (self.boundary, self.rhs());
        let den = l.abs() + r.abs();
        if den == 0.0 {
            0.0
        } else {
            (l - r).abs() / den
        }
    }
}

/// Runs a homogeneous-Dirichlet solve driven by `source` with `q = 0` and
/// evaluates both sides of the multiplier identity along the way.
pub fn rellich_solve(
    grid: &WaveguideGrid,
    mult: &MultiplierField,
    source: &dyn Forcing,
    parallel: bool,
) -> Result<RellichTerms> {
    let mut solver = WaveSolver::new(grid, None, &ZeroData, false, parallel)?;
    solver.record_source(true);
    let plan = GradientPlan::new(grid);
    let nxy = grid.nxy();
    let nz = grid.nz;
    let n_trace = grid.trace_points().len();
    let (mut tr, mut tr_im) = (vec![0.0; n_trace * nz], vec![0.0; n_trace * nz]);
    let mut older = vec![0.0; grid.n_nodes()];
    let mut terms = RellichTerms::default();
    let inv2dt = 0.5 / grid.dt;
    let n_steps = grid.n_steps;
    for n in 0..=n_steps {
        older.copy_from_slice(solver.previous().0);
        solver.advance(&ZeroData, Some(source))?;
        if n == 0 {
            continue;
        }
        // level n sits in `previous`, level n+1 in `current`, level n−1 in `older`
        let wt = grid.time_weight(n);
        let v = solver.previous().0;
        let vn = solver.current().0;
        let Some((a, b)) = solver.active_slabs() else {
            continue;
        };
        let mut vol = [0.0; 4];
        for k in a.saturating_sub(1).max(1)..=(b + 1).min(nz - 2) {
            let wz = grid.axial_weight(k);
            for node2 in 0..nxy {
                let w = grid.area_weights()[node2] * wz;
                if w == 0.0 {
                    continue;
                }
                let idx = k * nxy + node2;
                let g = gradient(grid, &plan, v, node2, k);
                let jac = &mult.jacobian[node2];
                let gam = mult.gamma[node2];
                let div = mult.divergence[node2];
                let mut hq = 0.0;
                for (i, row) in jac.iter().enumerate() {
                    for (j, &dji) in row.iter().enumerate() {
                        hq += g[i] * dji * g[j];
                    }
                }
                let grad2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let vt = if grid.kind(node2) == NodeKind::Interior {
                    (vn[idx] - older[idx]) * inv2dt
                } else {
                    0.0
                };
                vol[0] += w * 2.0 * hq;
                vol[1] -= w * div * grad2;
                vol[2] += w * div * vt * vt;
                if n == n_steps {
                    vol[3] += w * 2.0 * vt * (gam[0] * g[0] + gam[1] * g[1]);
                }
            }
        }
        terms.jacobian += wt * vol[0];
        terms.div_gradient += wt * vol[1];
        terms.div_velocity += wt * vol[2];
        terms.final_time += vol[3];

        // F^n applied in this step belongs to level n
        let mut src = 0.0;
        for &(idx, f) in &solver.last_source {
            let node2 = idx % nxy;
            let k = idx / nxy;
            let w = grid.area_weights()[node2] * grid.axial_weight(k);
            let g = gradient(grid, &plan, v, node2, k);
            let gam = mult.gamma[node2];
            src += w * f.re * (gam[0] * g[0] + gam[1] * g[1]);
        }
        terms.source -= 2.0 * wt * src;

        solver.traces(&ZeroData, grid.time(n), true, &mut tr, &mut tr_im);
        let mut bnd = 0.0;
        for (m, tp) in grid.trace_points().iter().enumerate() {
            for k in 0..nz {
                let d = tr[m * nz + k];
                bnd += tp.weight * grid.axial_weight(k) * d * d;
            }
        }
        terms.boundary += wt * bnd;
    }
    Ok(terms)
}

/// `L²(Q)` norms of `Ψ` and `∇_xΨ` for the solution of
/// `(∂_t² − Δ + q)Ψ = F` with homogeneous data.
pub fn remainder_norms(
    grid: &WaveguideGrid,
    q: &PotentialField,
    source: &dyn Forcing,
    parallel: bool,
) -> Result<(f64, f64)> {
    let mut solver = WaveSolver::new(grid, Some(q), &ZeroData, true, parallel)?;
    let plan = GradientPlan::new(grid);
    let nxy = grid.nxy();
    let nz = grid.nz;
    let (mut psi2, mut grad2) = (0.0, 0.0);
    for n in 0..grid.n_steps {
        solver.advance(&ZeroData, Some(source))?;
        let level = n + 1;
        let wt = grid.time_weight(level);
        let Some((a, b)) = solver.active_slabs() else {
            continue;
        };
        let (re, im) = solver.current();
        let im = im.expect("complex solve");
        let (mut s0, mut s1) = (0.0, 0.0);
        for k in a.saturating_sub(1).max(1)..=(b + 1).min(nz - 2) {
            let wz = grid.axial_weight(k);
            for node2 in 0..nxy {
                let w = grid.area_weights()[node2] * wz;
                if w == 0.0 {
                    continue;
                }
                let idx = k * nxy + node2;
                s0 += w * (re[idx] * re[idx] + im[idx] * im[idx]);
                let gr = gradient(grid, &plan, re, node2, k);
                let gi = gradient(grid, &plan, im, node2, k);
                s1 += w
                    * (gr.iter().map(|x| x * x).sum::<f64>()
                        + gi.iter().map(|x| x * x).sum::<f64>());
            }
        }
        psi2 += wt * s0;
        grad2 += wt * s1;
    }
    Ok((psi2.sqrt(), grad2.sqrt()))
}

/// Runs two solves with the same data and potentials `q1`, `q2` side by side
/// and hands `(level, t, trace₁, trace₂)` to `visit` at every level, with
/// traces laid out as `[m·nz + k]` in real/imaginary pairs.
pub fn lockstep_traces(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    data: &dyn BoundaryData,
    parallel: bool,
    mut visit: impl FnMut(usize, f64, (&[f64], &[f64]), (&[f64], &[f64])),
) -> Result<()> {
    let mut s1 = WaveSolver::new(grid, Some(q1), data, true, parallel)?;
    let mut s2 = WaveSolver::new(grid, Some(q2), data, true, parallel)?;
    let len = grid.trace_points().len() * grid.nz;
    let mut b = [
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    ];
    for n in 0..=grid.n_steps {
        if n > 0 {
            s1.advance(data, None)?;
            s2.advance(data, None)?;
        }
        let t = grid.time(n);
        let [r1, i1, r2, i2] = &mut b;
        s1.traces(data, t, false, r1, i1);
        s2.traces(data, t, false, r2, i2);
        visit(n, t, (r1, i1), (r2, i2));
    }
    Ok(())
}

/// Source `A(1−|x−c|²/a²)³₊ sin²(πt/τ)` for `t < τ`, smooth enough for the
/// second-order scheme and silent after `τ`.
pub struct SmoothPulse {
    pub amplitude: f64,
    pub center: [f64; 3],
    pub radius: f64,
    pub duration: f64,
}

impl Forcing for SmoothPulse {
    fn bounds(&self, t: f64) -> Option<Bounds> {
        if t >= self.duration {
            return None;
        }
        let r = self.radius;
        let c = self.center;
        Some(Bounds {
            lo: [c[0] - r, c[1] - r, c[2] - r],
            hi: [c[0] + r, c[1] + r, c[2] + r],
        })
    }

    fn value(&self, t: f64, _node: usize, x: [f64; 3]) -> Complex64 {
        let d2 = (0..3).map(|i| (x[i] - self.center[i]).powi(2)).sum::<f64>()
            / (self.radius * self.radius);
        if d2 >= 1.0 || t >= self.duration {
            return Complex64::new(0.0, 0.0);
        }
        let s = (std::f64::consts::PI * t / self.duration).sin().powi(2);
        Complex64::new(self.amplitude * (1.0 - d2).powi(3) * s, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, build_multiplier, CrossSection, Resolution};

    fn small() -> WaveguideGrid {
        build_grid(
            CrossSection::default(),
            Resolution::new(13, 13, 41),
            2.0,
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn zero_data_give_zero_solution() {
        let g = small();
        let q = PotentialField::zeros(&g);
        let res = solve_ibvp(&g, &q, &ZeroData, None, &SolveOptions::default()).unwrap();
        assert_eq!(res.neumann_trace.max_abs(), 0.0);
        assert!(res.final_state.u.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn energy_is_conserved_after_source_switch_off() {
        let g = small();
        let q = PotentialField::zeros(&g);
        let pulse = SmoothPulse {
            amplitude: 10.0,
            center: [0.05, -0.1, 0.0],
            radius: 0.3,
            duration: 0.4,
        };
        let opts = SolveOptions {
            track_energy: true,
            complex: false,
            ..SolveOptions::default()
        };
        let res = solve_ibvp(&g, &q, &ZeroData, Some(&pulse), &opts).unwrap();
        let after: Vec<f64> = res
            .energy_series
            .iter()
            .filter(|(t, _)| *t > pulse.duration + g.dt)
            .map(|e| e.1)
            .collect();
        let e0 = after[0];
        assert!(e0 > 0.0);
        for e in &after {
            assert!((e - e0).abs() <= 1e-10 * e0);
        }
    }

    #[test]
    fn parallel_sweep_matches_sequential_bitwise() {
        let g = small();
        let q = PotentialField::sample(
            &g,
            &|x: [f64; 3]| (-(x[2] * x[2]) * 4.0).exp(),
            1.0,
            2.0,
            0.3,
        );
        let pulse = SmoothPulse {
            amplitude: 10.0,
            center: [0.0, 0.0, 0.1],
            radius: 0.3,
            duration: 0.4,
        };
        let seq = solve_ibvp(&g, &q, &ZeroData, Some(&pulse), &SolveOptions::default()).unwrap();
        let par = solve_ibvp(
            &g,
            &q,
            &ZeroData,
            Some(&pulse),
            &SolveOptions {
                parallel: true,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        assert_eq!(seq.neumann_trace.values, par.neumann_trace.values);
    }

    #[test]
    fn rellich_identity_on_coarse_grid() {
        let g = build_grid(
            CrossSection::default(),
            Resolution::new(25, 25, 49),
            2.0,
            0.5,
        )
        .unwrap();
        let m = build_multiplier(&g);
        let pulse = SmoothPulse {
            amplitude: 10.0,
            center: [0.1, -0.05, 0.0],
            radius: 0.35,
            duration: 0.5,
        };
        let terms = rellich_solve(&g, &m, &pulse, false).unwrap();
        assert!(terms.boundary > 0.0);
        assert!(terms.residual() < 0.1, "{terms:?}");
    }

    #[test]
    fn rellich_identity_converges_on_a_disk() {
        let residual = |n: usize, nz: usize| {
            let g = build_grid(
                CrossSection::Disk { radius: 0.5 },
                Resolution::new(n, n, nz),
                2.0,
                0.5,
            )
            .unwrap();
            let pulse = SmoothPulse {
                amplitude: 10.0,
                center: [0.1, -0.05, 0.0],
                radius: 0.3,
                duration: 0.5,
            };
            rellich_solve(&g, &build_multiplier(&g), &pulse, true)
                .unwrap()
                .residual()
        };
        let coarse = residual(48, 96);
        let fine = residual(96, 192);
        assert!(coarse <= 0.05, "{coarse}");
        assert!(coarse / fine >= 1.5, "{coarse} -> {fine}");
    }

    #[test]
    fn rellich_of_zero_solution_is_zero() {
        let g = small();
        let m = build_multiplier(&g);
        let silent = SmoothPulse {
            amplitude: 10.0,
            center: [0.0, 0.0, 0.0],
            radius: 0.3,
            duration: 0.0,
        };
        let terms = rellich_solve(&g, &m, &silent, false).unwrap();
        assert_eq!(terms.residual(), 0.0);
    }

    #[test]
    fn cap_region_stays_silent() {
        // data supported in |x₃| ≤ r never reach |x₃| ≥ X_cap − 1
        let g = build_grid(
            CrossSection::default(),
            Resolution::new(13, 13, 81),
            2.0,
            0.3,
        )
        .unwrap();
        let q = PotentialField::zeros(&g);
        let pulse = SmoothPulse {
            amplitude: 10.0,
            center: [0.0, 0.0, 0.0],
            radius: 0.3,
            duration: 0.4,
        };
        let opts = SolveOptions {
            history_stride: Some(1),
            ..SolveOptions::default()
        };
        let res = solve_ibvp(&g, &q, &ZeroData, Some(&pulse), &opts).unwrap();
        let nxy = g.nxy();
        for level in &res.history.unwrap().levels {
            for k in 0..g.nz {
                if g.z(k).abs() >= g.x_cap - 1.0 {
                    for node in 0..nxy {
                        let v = level[k * nxy + node].norm();
                        assert!(v < 1e-10, "{v} at z = {}", g.z(k));
                    }
                }
            }
        }
    }
}
