//! From DN data to the mollified potential gap: the averaging operators
//! `R_δ` and `S_δ`, the boundary pairing that yields X-ray data of
//! `R_δ[q₁ − q₂]`, sinogram assembly and the per-slice inversion.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bump::bumps;
use crate::error::{Error, Result};
use crate::fields::{Plane, Potential, PotentialField};
use crate::geometry::{CrossSection, WaveguideGrid};
use crate::probes::{
    angle_set, delta_star, offset_set, place_probes, slice_set, GoProbe, Placement, ProbeBoundary,
};
use crate::solver::lockstep_traces;
use crate::xray::{fbp_invert, FbpOptions, SliceSinogram};

/// Trapezoid nodes on `[−1, 1]` carrying the squared 1D bump.
fn axial_nodes(n: usize) -> Vec<(f64, f64)> {
    let b = bumps();
    (1..n)
        .map(|m| {
            let v = -1.0 + 2.0 * m as f64 / n as f64;
            (v, b.h(v).powi(2))
        })
        .collect()
}

const AXIAL_QUAD: usize = 48;

/// `G(x′) = ∫ h_δ²(x₃ − y₃) q(x′, x₃) dx₃` at every node of `plane`, with
/// `q` extended by zero outside `ω̄`.
fn axial_average(
    q: &dyn Potential,
    cs: &CrossSection,
    delta: f64,
    plane: &Plane,
    y3: f64,
) -> Plane {
    let nodes = axial_nodes(AXIAL_QUAD);
    let norm: f64 = nodes.iter().map(|n| n.1).sum();
    let mut out = plane.clone();
    let nx = plane.nx;
    out.values
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, v) in row.iter_mut().enumerate() {
                let p = plane.position(i, j);
                *v = if cs.contains(p) {
                    nodes
                        .iter()
                        .map(|&(u, w)| w * q.value([p[0], p[1], y3 + delta * u]))
                        .sum::<f64>()
                        / norm
                } else {
                    0.0
                };
            }
        });
    out
}

/// Discrete `Φ_δ²` stencil on the lattice of `plane`, normalized to unit sum.
fn phi2_stencil(plane: &Plane, delta: f64) -> Vec<(isize, isize, f64)> {
    let b = bumps();
    let ra = (delta / plane.hx).ceil() as isize;
    let rb = (delta / plane.hy).ceil() as isize;
    let mut st = Vec::new();
    for bj in -rb..=rb {
        for ai in -ra..=ra {
            let u = [ai as f64 * plane.hx / delta, bj as f64 * plane.hy / delta];
            let w = b.phi(u).powi(2);
            if w > 0.0 {
                st.push((ai, bj, w));
            }
        }
    }
    if st.is_empty() {
        st.push((0, 0, 1.0));
    }
    let total: f64 = st.iter().map(|s| s.2).sum();
    st.iter_mut().for_each(|s| s.2 /= total);
    st
}

/// `∫ Φ_δ²(x′ − y′) g(x′) dx′` at every node `y′`, `g` zero off the lattice.
fn convolve_phi2(g: &Plane, delta: f64) -> Plane {
    let st = phi2_stencil(g, delta);
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    let mut out = g.clone();
    out.values
        .par_chunks_mut(g.nx)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &(a, b, w) in &st {
                    let (ii, jj) = (i as isize + a, j as isize + b);
                    if ii >= 0 && jj >= 0 && ii < nx && jj < ny {
                        acc += w * g.values[(jj * nx + ii) as usize];
                    }
                }
                *v = acc;
            }
        });
    out
}

/// `R_δ[q](·, y₃)` on the nodes of `plane`.
pub fn mollify_r(
    q: &dyn Potential,
    cs: &CrossSection,
    delta: f64,
    plane: &Plane,
    y3: f64,
) -> Plane {
    convolve_phi2(&axial_average(q, cs, delta, plane, y3), delta)
}

/// `S_δ(·, y₃) = ∫ Φ_δ²(x′, ·) q(x′, y₃) dx′`, the cross-section-only average.
pub fn mollify_s(
    q: &dyn Potential,
    cs: &CrossSection,
    delta: f64,
    plane: &Plane,
    y3: f64,
) -> Plane {
    let g = plane.clone().from_fn(|p| {
        if cs.contains(p) {
            q.value([p[0], p[1], y3])
        } else {
            0.0
        }
    });
    convolve_phi2(&g, delta)
}

/// `R_δ[q]` of a sampled potential on every slice, rejecting `δ ≥ δ*`.
pub fn mollify_slices(
    grid: &WaveguideGrid,
    q: &PotentialField,
    delta: f64,
    plane: &Plane,
    y3: &[f64],
) -> Result<Vec<Plane>> {
    let ds = delta_star(grid, None);
    if !(delta > 0.0 && delta < ds) {
        return Err(Error::InvalidArgument(format!(
            "scale δ = {delta} outside (0, δ* = {ds})"
        )));
    }
    Ok(y3
        .iter()
        .map(|&z| mollify_r(q, &grid.cross_section, delta, plane, z))
        .collect())
}

/// `R_δ[q](y′, y₃)` at a single point by tensor trapezoid quadrature over
/// the bump supports with `n` intervals per axis.
pub fn r_delta_point(
    q: &dyn Potential,
    cs: &CrossSection,
    delta: f64,
    y: [f64; 2],
    y3: f64,
    n: usize,
) -> f64 {
    let b = bumps();
    let ax = axial_nodes(n);
    let ax_norm: f64 = ax.iter().map(|a| a.1).sum();
    let (mut num, mut den) = (0.0, 0.0);
    for ju in 1..n {
        let uy = -1.0 + 2.0 * ju as f64 / n as f64;
        for iu in 1..n {
            let ux = -1.0 + 2.0 * iu as f64 / n as f64;
            let w = b.phi([ux, uy]).powi(2);
            if w == 0.0 {
                continue;
            }
            den += w;
            let x = [y[0] + delta * ux, y[1] + delta * uy];
            if !cs.contains(x) {
                continue;
            }
            let g: f64 = ax
                .iter()
                .map(|&(v, wv)| wv * q.value([x[0], x[1], y3 + delta * v]))
                .sum();
            num += w * g;
        }
    }
    num / (den * ax_norm)
}

/// `∫₀^T R_δ[q](y′ − tθ, y₃) dt`, the X-ray of `R_δ[q]` along the half line
/// swept by the probe bump.
pub fn half_line_oracle(
    q: &dyn Potential,
    cs: &CrossSection,
    probe: &GoProbe,
    final_time: f64,
    n: usize,
) -> f64 {
    let step = probe.delta / 16.0;
    let m = (final_time / step).ceil() as usize;
    let dt = final_time / m as f64;
    (0..=m)
        .map(|l| {
            let t = l as f64 * dt;
            let y = [
                probe.y_prime[0] - t * probe.theta[0],
                probe.y_prime[1] - t * probe.theta[1],
            ];
            if cs.distance(y) >= probe.delta {
                return 0.0;
            }
            let w = if l == 0 || l == m { 0.5 } else { 1.0 };
            w * r_delta_point(q, cs, probe.delta, y, probe.y3, n)
        })
        .sum::<f64>()
        * dt
}

/// One boundary pairing `∫_Σ ((Λ_{q₂} − Λ_{q₁})f)·u₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDatum {
    pub probe: usize,
    pub value_re: f64,
    pub value_im: f64,
    /// `−Re(value)`, an estimate of the half-line X-ray of `R_δ[q₁ − q₂]`.
    pub xray_estimate: f64,
    pub oracle: Option<f64>,
}

impl CorrelationDatum {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.value_re, self.value_im)
    }
}

/// Pairs the DN-map difference on the probe datum with the adjoint ansatz
/// trace: trapezoid in `t` and arclength, lattice sum in `x₃`. Probes whose
/// bump never meets `ω̄` pair to exactly zero without a solve.
pub fn correlate(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    probe: &GoProbe,
    id: usize,
) -> Result<CorrelationDatum> {
    probe.validate(grid)?;
    let mut value = Complex64::new(0.0, 0.0);
    if probe.meets_domain(grid) {
        let data = ProbeBoundary::new(grid, probe, probe.sign);
        let adjoint = ProbeBoundary::new(grid, probe, -probe.sign);
        let nz = grid.nz;
        let axial: Vec<f64> = (0..nz)
            .map(|k| match probe.window_r {
                Some(r) if !(grid.z(k).abs() < r) => 0.0,
                _ => grid.axial_weight(k),
            })
            .collect();
        let (mut ar, mut ai) = (vec![0.0; nz], vec![0.0; nz]);
        lockstep_traces(grid, q1, q2, &data, false, |n, t, (r1, i1), (r2, i2)| {
            let wt = grid.time_weight(n);
            let mut s = Complex64::new(0.0, 0.0);
            for (m, tp) in grid.trace_points().iter().enumerate() {
                if !adjoint.column_complex(t, tp.point, &mut ar, &mut ai) {
                    continue;
                }
                let row = m * nz;
                let mut col = Complex64::new(0.0, 0.0);
                for k in 0..nz {
                    let d = Complex64::new(r2[row + k] - r1[row + k], i2[row + k] - i1[row + k]);
                    col += axial[k] * d * Complex64::new(ar[k], ai[k]);
                }
                s += tp.weight * col;
            }
            value += wt * s;
        })?;
    }
    Ok(CorrelationDatum {
        probe: id,
        value_re: value.re,
        value_im: value.im,
        xray_estimate: -value.re,
        oracle: None,
    })
}

/// Correlations of a whole dictionary, concurrently when `parallel` is set.
pub fn correlate_all(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    probes: &[GoProbe],
    parallel: bool,
) -> Result<Vec<CorrelationDatum>> {
    let run = |(i, p): (usize, &GoProbe)| correlate(grid, q1, q2, p, i);
    if parallel {
        probes.par_iter().enumerate().map(run).collect()
    } else {
        probes.iter().enumerate().map(run).collect()
    }
}

/// Sinogram layout implied by the line tags of a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramLayout {
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
    pub slices: Vec<f64>,
    /// `(forward, reversed)` probe indices per `(slice, angle, offset)`.
    pub pairs: Vec<(usize, usize)>,
}

/// Matches every `+θ` probe with its `−θ` partner on the same line and slice.
pub fn sinogram_layout(grid: &WaveguideGrid, probes: &[GoProbe]) -> Result<SinogramLayout> {
    if probes.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mut dims = [0usize; 3];
    for (i, p) in probes.iter().enumerate() {
        let tag = p
            .line
            .ok_or_else(|| Error::InvalidArgument(format!("probe {i} carries no line tag")))?;
        dims[0] = dims[0].max(tag.angle + 1);
        dims[1] = dims[1].max(tag.offset + 1);
        dims[2] = dims[2].max(tag.slice + 1);
    }
    let [na, no, ns] = dims;
    let mut slots = vec![(None, None); na * no * ns];
    let mut y3 = vec![f64::NAN; ns];
    for (i, p) in probes.iter().enumerate() {
        let tag = p.line.expect("checked above");
        let slot = &mut slots[(tag.slice * na + tag.angle) * no + tag.offset];
        if tag.reversed {
            slot.1 = Some(i);
        } else {
            slot.0 = Some(i);
        }
        y3[tag.slice] = p.y3;
    }
    let mut pairs = Vec::with_capacity(slots.len());
    for (fwd, rev) in slots {
        match (fwd, rev) {
            (Some(a), Some(b)) => pairs.push((a, b)),
            (Some(a), None) | (None, Some(a)) => return Err(Error::MissingPartner(a)),
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "dictionary leaves a sinogram entry empty".into(),
                ))
            }
        }
    }
    Ok(SinogramLayout {
        angles: angle_set(na),
        offsets: offset_set(grid, no),
        slices: y3,
        pairs,
    })
}

/// Per slice, the sum of the `+θ` and `−θ` X-ray estimates on every line.
pub fn assemble_sinograms(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    probes: &[GoProbe],
    parallel: bool,
) -> Result<(Vec<SliceSinogram>, Vec<CorrelationDatum>)> {
    let layout = sinogram_layout(grid, probes)?;
    let data = correlate_all(grid, q1, q2, probes, parallel)?;
    Ok((fill_sinograms(&layout, probes, &data), data))
}

fn fill_sinograms(
    layout: &SinogramLayout,
    probes: &[GoProbe],
    data: &[CorrelationDatum],
) -> Vec<SliceSinogram> {
    let (na, no) = (layout.angles.len(), layout.offsets.len());
    layout
        .slices
        .iter()
        .enumerate()
        .map(|(l, &y3)| {
            let mut s = SliceSinogram::zeros(y3, layout.angles.clone(), layout.offsets.clone());
            for a in 0..na {
                for o in 0..no {
                    let (f, r) = layout.pairs[(l * na + a) * no + o];
                    let zero = probes[f].line.is_some_and(|t| t.zero_line);
                    let v = if zero {
                        0.0
                    } else {
                        data[f].xray_estimate + data[r].xray_estimate
                    };
                    s.set(a, o, v);
                }
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructParams {
    pub placement: Placement,
    /// Nodes per side of the reconstruction plane.
    pub plane_nodes: usize,
    #[serde(default)]
    pub fbp: FbpOptions,
    /// Wiener regularization of the diagnostic in-plane deconvolution; off
    /// when absent.
    #[serde(default)]
    pub deconvolve: Option<f64>,
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceError {
    pub y3: f64,
    /// `max |q̂ − R_δ[q]|` over `ω`, relative to `max |R_δ[q]|` on the same slice.
    pub linf_rel: f64,
    pub l2_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionErrors {
    /// Relative `L^∞` error against `R_δ[q]` on `ω × (−r, r)`.
    pub linf_on_window: f64,
    /// Relative `L²` error against `R_δ[q]` over all slices.
    pub l2: f64,
    /// Relative `L^∞` error against the unmollified gap on `ω × (−r, r)`.
    pub linf_vs_gap: f64,
    pub per_slice: Vec<SliceError>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub slices: Vec<f64>,
    /// Reconstructed `R_δ[q₁ − q₂]` per slice.
    pub q_hat: Vec<Plane>,
    /// Direct-quadrature `R_δ[q₁ − q₂]` per slice.
    pub r_delta_q: Vec<Plane>,
    pub sinograms: Vec<SliceSinogram>,
    pub correlations: Vec<CorrelationDatum>,
    pub errors: ReconstructionErrors,
    pub params: ReconstructParams,
}

/// Square plane over `[−R₂, R₂]²`, `R₂` the radius covered by the offsets.
pub fn reconstruction_plane(grid: &WaveguideGrid, n: usize) -> Plane {
    let r2 = grid.cross_section.circumradius() + 0.25 * grid.epsilon;
    Plane::centered(n, 2.0 * r2 / (n - 1) as f64)
}

/// The full pipeline: probes, correlations, sinograms, backprojection and
/// error report against `R_δ[q₁ − q₂]`. `gap` evaluates `q₁ − q₂` exactly
/// when available; otherwise the sampled difference is interpolated.
pub fn reconstruct_gap(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    gap: Option<&dyn Potential>,
    params: &ReconstructParams,
) -> Result<ReconstructionResult> {
    let probes =
        place_probes(grid, &params.placement).map_err(|e| e.in_stage("probe placement"))?;
    let (sinograms, correlations) = assemble_sinograms(grid, q1, q2, &probes, params.parallel)
        .map_err(|e| e.in_stage("correlation"))?;
    let plane = reconstruction_plane(grid, params.plane_nodes);
    let fbp = FbpOptions {
        support_radius: params.fbp.support_radius.or(Some(plane_half_width(&plane))),
        ..params.fbp
    };
    let delta = params.placement.delta;
    let q_hat: Vec<Plane> = sinograms
        .iter()
        .map(|s| {
            let img = fbp_invert(s, &plane, &fbp)?;
            Ok(match params.deconvolve {
                Some(lambda) => wiener_deconvolve(&img, delta, lambda),
                None => img,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("backprojection"))?;

    let diff = q1.difference(q2);
    let gap: &dyn Potential = gap.unwrap_or(&diff);
    let cs = &grid.cross_section;
    let slices: Vec<f64> = sinograms.iter().map(|s| s.y3).collect();
    let r_delta_q: Vec<Plane> = slices
        .iter()
        .map(|&z| mollify_r(gap, cs, delta, &plane, z))
        .collect();
    let errors = reconstruction_errors(cs, grid.r_support, gap, &slices, &q_hat, &r_delta_q);
    Ok(ReconstructionResult {
        slices,
        q_hat,
        r_delta_q,
        sinograms,
        correlations,
        errors,
        params: *params,
    })
}

fn plane_half_width(p: &Plane) -> f64 {
    0.5 * (p.nx - 1) as f64 * p.hx
}

fn reconstruction_errors(
    cs: &CrossSection,
    r: f64,
    gap: &dyn Potential,
    slices: &[f64],
    q_hat: &[Plane],
    oracle: &[Plane],
) -> ReconstructionErrors {
    let mut per_slice = Vec::new();
    let (mut win_err, mut win_ref, mut gap_err, mut gap_ref) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut l2_err, mut l2_ref) = (0.0, 0.0);
    for ((&y3, qh), or) in slices.iter().zip(q_hat).zip(oracle) {
        let (mut e_inf, mut r_inf, mut e2, mut r2) = (0.0f64, 0.0f64, 0.0, 0.0);
        for j in 0..qh.ny {
            for i in 0..qh.nx {
                let p = qh.position(i, j);
                if !cs.contains(p) {
                    continue;
                }
                let (a, b) = (qh.get(i, j), or.get(i, j));
                e_inf = e_inf.max((a - b).abs());
                r_inf = r_inf.max(b.abs());
                e2 += (a - b).powi(2);
                r2 += b * b;
                if y3.abs() < r {
                    let g = gap.value([p[0], p[1], y3]);
                    gap_err = gap_err.max((a - g).abs());
                    gap_ref = gap_ref.max(g.abs());
                }
            }
        }
        l2_err += e2;
        l2_ref += r2;
        if y3.abs() < r {
            win_err = win_err.max(e_inf);
            win_ref = win_ref.max(r_inf);
        }
        per_slice.push(SliceError {
            y3,
            linf_rel: ratio(e_inf, r_inf),
            l2_rel: ratio(e2.sqrt(), r2.sqrt()),
        });
    }
    ReconstructionErrors {
        linf_on_window: ratio(win_err, win_ref),
        l2: ratio(l2_err.sqrt(), l2_ref.sqrt()),
        linf_vs_gap: ratio(gap_err, gap_ref),
        per_slice,
    }
}

/// `a/b`, with `0/0 = 0`.
fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// In-place 2D DFT of a row-major array.
fn fft2(
    data: &mut [Complex64],
    nx: usize,
    ny: usize,
    inverse: bool,
    planner: &mut FftPlanner<f64>,
) {
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    data.chunks_mut(nx).for_each(|row| fx.process(row));
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// Wiener inverse of the in-plane `Φ_δ²` average, `K̄Ĝ/(|K|² + λ)`, on a
/// twice-padded periodic lattice. Diagnostic only: the axial average is kept.
pub fn wiener_deconvolve(img: &Plane, delta: f64, lambda: f64) -> Plane {
    let (nx, ny) = (
        (2 * img.nx).next_power_of_two(),
        (2 * img.ny).next_power_of_two(),
    );
    let mut g = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..img.ny {
        for i in 0..img.nx {
            g[j * nx + i] = Complex64::new(img.get(i, j), 0.0);
        }
    }
    let mut k = vec![Complex64::new(0.0, 0.0); nx * ny];
    for (a, b, w) in phi2_stencil(img, delta) {
        let i = a.rem_euclid(nx as isize) as usize;
        let j = b.rem_euclid(ny as isize) as usize;
        k[j * nx + i] = Complex64::new(w, 0.0);
    }
    let mut planner = FftPlanner::new();
    fft2(&mut g, nx, ny, false, &mut planner);
    fft2(&mut k, nx, ny, false, &mut planner);
    for (gv, kv) in g.iter_mut().zip(&k) {
        *gv = *gv * kv.conj() / (kv.norm_sqr() + lambda);
    }
    fft2(&mut g, nx, ny, true, &mut planner);
    let scale = 1.0 / (nx * ny) as f64;
    let mut out = img.clone();
    for j in 0..img.ny {
        for i in 0..img.nx {
            out.values[j * img.nx + i] = g[j * nx + i].re * scale;
        }
    }
    out
}

/// Slices used by a placement.
pub fn placement_slices(grid: &WaveguideGrid, p: &Placement) -> Vec<f64> {
    slice_set(grid, p)
}
