//! Geometric-optics probes: the moving-bump ansatz
//! `Φ_δ(x′+tθ, y′) h_δ(x₃, y₃) e^{±iρ(x′·θ+t)}`, its admissibility conditions,
//! the source of the remainder problem and the probe dictionary layout.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bump::bumps;
use crate::error::{Error, Result};
use crate::fields::{LateralField, PotentialField};
use crate::geometry::{CrossSection, WaveguideGrid};
use crate::solver::{BoundaryData, Bounds, Forcing};

/// Position of a probe in the sinogram layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineTag {
    pub angle: usize,
    pub offset: usize,
    pub slice: usize,
    /// The line misses the band `dist(·, ω) < ε/4`; its X-ray datum is zero.
    pub zero_line: bool,
    /// Emitted with direction `−θ_k`.
    pub reversed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoProbe {
    pub theta: [f64; 2],
    pub rho: f64,
    pub delta: f64,
    pub y_prime: [f64; 2],
    pub y3: f64,
    /// Phase sign of the boundary datum, `+1` or `−1`.
    pub sign: i8,
    pub window_r: Option<f64>,
    pub line: Option<LineTag>,
}

/// Largest admissible mollifier scale: `ε/4`, or `min(ε/4, R − r)` with a window.
pub fn delta_star(grid: &WaveguideGrid, window_r: Option<f64>) -> f64 {
    let base = 0.25 * grid.epsilon;
    match window_r {
        Some(r) => base.min(r - grid.r_support),
        None => base,
    }
}

#[inline]
fn perp(theta: [f64; 2]) -> [f64; 2] {
    [-theta[1], theta[0]]
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl GoProbe {
    /// `Φ_δ(x′+tθ, y′)`.
    #[inline]
    pub fn phi_scaled(&self, t: f64, xp: [f64; 2]) -> f64 {
        let u = self.moving_coord(t, xp);
        bumps().phi(u) / self.delta
    }

    /// `h_δ(x₃, y₃)`.
    #[inline]
    pub fn h_scaled(&self, x3: f64) -> f64 {
        bumps().h((x3 - self.y3) / self.delta) / self.delta.sqrt()
    }

    #[inline]
    fn moving_coord(&self, t: f64, xp: [f64; 2]) -> [f64; 2] {
        [
            (xp[0] + t * self.theta[0] - self.y_prime[0]) / self.delta,
            (xp[1] + t * self.theta[1] - self.y_prime[1]) / self.delta,
        ]
    }

    pub fn amplitude(&self, t: f64, x: [f64; 3]) -> f64 {
        self.phi_scaled(t, [x[0], x[1]]) * self.h_scaled(x[2])
    }

    #[inline]
    pub fn phase(&self, t: f64, xp: [f64; 2]) -> f64 {
        self.rho * (dot(xp, self.theta) + t)
    }

    /// Ansatz with phase sign `sign`.
    pub fn ansatz(&self, t: f64, x: [f64; 3], sign: i8) -> Complex64 {
        let a = self.amplitude(t, x);
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(a, sign as f64 * self.phase(t, [x[0], x[1]]))
    }

    /// `(∂_t² − Δ + q)` applied to the amplitude, with the potential value `q`
    /// at `x`. The first-order transport terms cancel along the characteristic.
    pub fn amplitude_residual(&self, t: f64, x: [f64; 3], q: f64) -> f64 {
        let b = bumps();
        let u = self.moving_coord(t, [x[0], x[1]]);
        let jet = b.phi_jet(u);
        let w = (x[2] - self.y3) / self.delta;
        let hj = b.h_jet(w);
        if jet.v == 0.0 && jet.hess == [[0.0; 2]; 2] || hj.v == 0.0 && hj.d2 == 0.0 {
            return 0.0;
        }
        let d = self.delta;
        let p = perp(self.theta);
        let dperp2 = p[0] * p[0] * jet.hess[0][0]
            + 2.0 * p[0] * p[1] * jet.hess[0][1]
            + p[1] * p[1] * jet.hess[1][1];
        let phi = jet.v / d;
        let phi_perp2 = dperp2 / (d * d * d);
        let h = hj.v / d.sqrt();
        let h2 = hj.d2 / (d * d * d.sqrt());
        -h * phi_perp2 - phi * h2 + q * phi * h
    }

    /// True when the moving bump meets `ω̄` at some `t ∈ [0, T]`.
    pub fn meets_domain(&self, grid: &WaveguideGrid) -> bool {
        let n = ((grid.final_time / (0.25 * self.delta)).ceil() as usize).max(4);
        (0..=n).any(|m| {
            let t = grid.final_time * m as f64 / n as f64;
            let c = [
                self.y_prime[0] - t * self.theta[0],
                self.y_prime[1] - t * self.theta[1],
            ];
            grid.cross_section.distance(c) < self.delta
        })
    }

    /// Checks every admissibility condition, naming the first one violated.
    pub fn validate(&self, grid: &WaveguideGrid) -> Result<()> {
        let fail = |msg: String| Err(Error::Probe(msg));
        let norm = self.theta[0].hypot(self.theta[1]);
        if (norm - 1.0).abs() > 1e-12 {
            return fail(format!("direction is not a unit vector (|θ| = {norm})"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return fail(format!("frequency must be positive, got {}", self.rho));
        }
        if self.sign != 1 && self.sign != -1 {
            return fail(format!("sign must be ±1, got {}", self.sign));
        }
        if let Some(r) = self.window_r {
            if !(r > grid.r_support) {
                return fail(format!(
                    "window radius {r} must exceed the support radius {}",
                    grid.r_support
                ));
            }
        }
        let ds = delta_star(grid, self.window_r);
        if !(self.delta > 0.0 && self.delta < ds) {
            return fail(format!("scale δ = {} outside (0, δ* = {ds})", self.delta));
        }
        let eps = grid.epsilon;
        let d = grid.cross_section.distance(self.y_prime);
        if !(d > 0.25 * eps && d < 0.75 * eps) {
            return fail(format!(
                "center distance {d} outside the band ({}, {})",
                0.25 * eps,
                0.75 * eps
            ));
        }
        let crossing = d + grid.cross_section.diameter() + 2.0 * self.delta;
        if !(crossing < grid.final_time) {
            return fail(format!(
                "bump needs time {crossing} to cross the cross-section, final time is {}",
                grid.final_time
            ));
        }
        if let Some(r) = self.window_r {
            if !(self.y3.abs() + self.delta < r) {
                return fail(format!(
                    "axial support |y₃| + δ = {} leaves the window radius {r}",
                    self.y3.abs() + self.delta
                ));
            }
        }
        Ok(())
    }

    /// Same probe with conjugated phase.
    pub fn conjugated(&self) -> GoProbe {
        GoProbe {
            sign: -self.sign,
            ..*self
        }
    }
}

/// Analytic boundary values of a probe ansatz on the lateral boundary.
pub struct ProbeBoundary {
    probe: GoProbe,
    phase_sign: f64,
    axial: Vec<f64>,
}

impl ProbeBoundary {
    pub fn new(grid: &WaveguideGrid, probe: &GoProbe, phase_sign: i8) -> Self {
        let axial = (0..grid.nz).map(|k| probe.h_scaled(grid.z(k))).collect();
        ProbeBoundary {
            probe: *probe,
            phase_sign: phase_sign as f64,
            axial,
        }
    }

    /// Values at every axial node of the boundary column through `point`.
    pub fn column_complex(&self, t: f64, point: [f64; 2], re: &mut [f64], im: &mut [f64]) -> bool {
        let phi = self.probe.phi_scaled(t, point);
        if phi == 0.0 {
            return false;
        }
        let (s, c) = (self.phase_sign * self.probe.phase(t, point)).sin_cos();
        for k in 0..self.axial.len() {
            let a = phi * self.axial[k];
            re[k] = a * c;
            im[k] = a * s;
        }
        true
    }
}

impl BoundaryData for ProbeBoundary {
    fn column(
        &self,
        t: f64,
        point: [f64; 2],
        _trace: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) -> bool {
        self.column_complex(t, point, re, im)
    }

    fn axial_support(&self) -> Option<(f64, f64)> {
        Some((
            self.probe.y3 - self.probe.delta,
            self.probe.y3 + self.probe.delta,
        ))
    }
}

/// Source `−e^{iσφ}(∂_t²−Δ+q)a` of the remainder problem.
pub struct RemainderSource<'a> {
    probe: GoProbe,
    q: &'a PotentialField,
    phase_sign: f64,
}

impl<'a> RemainderSource<'a> {
    pub fn new(probe: &GoProbe, q: &'a PotentialField, phase_sign: i8) -> Self {
        RemainderSource {
            probe: *probe,
            q,
            phase_sign: phase_sign as f64,
        }
    }
}

impl Forcing for RemainderSource<'_> {
    fn bounds(&self, t: f64) -> Option<Bounds> {
        let p = &self.probe;
        let c = [p.y_prime[0] - t * p.theta[0], p.y_prime[1] - t * p.theta[1]];
        Some(Bounds {
            lo: [c[0] - p.delta, c[1] - p.delta, p.y3 - p.delta],
            hi: [c[0] + p.delta, c[1] + p.delta, p.y3 + p.delta],
        })
    }

    fn value(&self, t: f64, node: usize, x: [f64; 3]) -> Complex64 {
        let h = self.probe.amplitude_residual(t, x, self.q.values[node]);
        if h == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        -Complex64::from_polar(h, self.phase_sign * self.probe.phase(t, [x[0], x[1]]))
    }
}

/// Boundary datum `f` (phase sign of the probe) and the trace of the adjoint
/// ansatz (opposite sign), sampled at every solver step.
pub fn make_probe_data(
    grid: &WaveguideGrid,
    probe: &GoProbe,
) -> Result<(LateralField, LateralField)> {
    probe.validate(grid)?;
    let mut f = LateralField::zeros(grid, 1);
    let mut u2 = LateralField::zeros(grid, 1);
    let fwd = ProbeBoundary::new(grid, probe, probe.sign);
    let adj = ProbeBoundary::new(grid, probe, -probe.sign);
    let nz = grid.nz;
    let (mut re, mut im) = (vec![0.0; nz], vec![0.0; nz]);
    for n in 0..f.n_times {
        let t = grid.time(n);
        for (m, tp) in grid.trace_points().iter().enumerate() {
            for (field, data) in [(&mut f, &fwd), (&mut u2, &adj)] {
                if data.column_complex(t, tp.point, &mut re, &mut im) {
                    for k in 1..nz - 1 {
                        let idx = field.index(n, m, k);
                        field.values[idx] = Complex64::new(re[k], im[k]);
                    }
                }
            }
        }
    }
    Ok((f, u2))
}

/// Axial placement of probe slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceRange {
    /// Endpoints included, spanning `[−r−1, r+1]` (clipped to the window).
    #[default]
    Extended,
    /// Cell centers of `(−r, r)`.
    Support,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub angles: usize,
    pub offsets: usize,
    pub slices: usize,
    pub delta: f64,
    pub rho: f64,
    #[serde(default)]
    pub window_r: Option<f64>,
    #[serde(default)]
    pub slice_range: SliceRange,
}

/// Angles `πk/N`, `k = 0..N`.
pub fn angle_set(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| std::f64::consts::PI * k as f64 / n as f64)
        .collect()
}

/// Cell-centered offsets over `[−R₂, R₂]`, `R₂` the circumradius of the
/// band `dist(·, ω) < ε/4`.
pub fn offset_set(grid: &WaveguideGrid, n: usize) -> Vec<f64> {
    let r2 = grid.cross_section.circumradius() + 0.25 * grid.epsilon;
    let step = 2.0 * r2 / n as f64;
    (0..n).map(|j| -r2 + (j as f64 + 0.5) * step).collect()
}

pub fn slice_set(grid: &WaveguideGrid, p: &Placement) -> Vec<f64> {
    let r = grid.r_support;
    match p.slice_range {
        SliceRange::Support => {
            let step = 2.0 * r / p.slices as f64;
            (0..p.slices)
                .map(|l| -r + (l as f64 + 0.5) * step)
                .collect()
        }
        SliceRange::Extended => {
            let mut half = r + 1.0;
            if let Some(w) = p.window_r {
                half = half.min((w - p.delta) * (1.0 - 1e-9));
            }
            if p.slices == 1 {
                return vec![0.0];
            }
            let step = 2.0 * half / (p.slices - 1) as f64;
            (0..p.slices).map(|l| -half + l as f64 * step).collect()
        }
    }
}

/// Point of the line `sθ⊥ + τθ` used as probe center, and whether the line
/// misses the band `dist(·, ω) < ε/4`. The center is the first point past the
/// closest approach, on the `+θ` side, at distance `ε/2` from `ω`; a line
/// that never reaches that distance gets its closest point instead.
pub fn line_center(cs: &CrossSection, theta: [f64; 2], s: f64, eps: f64) -> ([f64; 2], bool) {
    let p = perp(theta);
    let at = |tau: f64| [s * p[0] + tau * theta[0], s * p[1] + tau * theta[1]];
    let dist = |tau: f64| cs.distance(at(tau));
    let reach = cs.circumradius() + s.abs() + 2.0 * eps + 1.0;
    // distance to a convex set is convex along a line
    let (mut a, mut b) = (-reach, reach);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if dist(m1) <= dist(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let tau_min = 0.5 * (a + b);
    let d_min = dist(tau_min);
    let zero_line = d_min >= 0.25 * eps;
    let target = 0.5 * eps;
    if d_min >= target {
        return (at(tau_min), zero_line);
    }
    let (mut lo, mut hi) = (tau_min, reach);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (at(0.5 * (lo + hi)), zero_line)
}

/// Probe dictionary: for every angle, offset and slice, one probe along `θ_k`
/// and one along `−θ_k`, both centered at the same point of the `ω₁` band.
pub fn place_probes(grid: &WaveguideGrid, p: &Placement) -> Result<Vec<GoProbe>> {
    if p.angles == 0 || p.offsets == 0 || p.slices == 0 {
        return Err(Error::InvalidArgument(
            "probe counts must be positive".into(),
        ));
    }
    if let Some(w) = p.window_r {
        if !(w > grid.r_support) {
            return Err(Error::Probe(format!(
                "window radius {w} must exceed the support radius {}",
                grid.r_support
            )));
        }
    }
    let ds = delta_star(grid, p.window_r);
    if !(p.delta > 0.0 && p.delta < ds) {
        return Err(Error::Probe(format!(
            "scale δ = {} outside (0, δ* = {ds})",
            p.delta
        )));
    }
    let slices = slice_set(grid, p);
    let offsets = offset_set(grid, p.offsets);
    let mut out = Vec::with_capacity(2 * p.angles * p.offsets * p.slices);
    for (k, beta) in angle_set(p.angles).into_iter().enumerate() {
        let theta = [beta.cos(), beta.sin()];
        for (j, &s) in offsets.iter().enumerate() {
            let (center, zero_line) = line_center(&grid.cross_section, theta, s, grid.epsilon);
            for (l, &y3) in slices.iter().enumerate() {
                for reversed in [false, true] {
                    let th = if reversed {
                        [-theta[0], -theta[1]]
                    } else {
                        theta
                    };
                    out.push(GoProbe {
                        theta: th,
                        rho: p.rho,
                        delta: p.delta,
                        y_prime: center,
                        y3,
                        sign: 1,
                        window_r: p.window_r,
                        line: Some(LineTag {
                            angle: k,
                            offset: j,
                            slice: l,
                            zero_line,
                            reversed,
                        }),
                    });
                }
            }
        }
    }
    Ok(out)
}
