//! Cross-sections, the truncated waveguide lattice and the multiplier field
//! used by the boundary identity check.
//!
//! The waveguide `ω × ℝ` is truncated to `ω × [-X, X]` with homogeneous
//! Dirichlet caps. The cross-section is sampled on a Cartesian lattice; nodes
//! are classified as interior, Dirichlet (carry boundary data) or exterior
//! (unused). Neumann traces are read at a separate list of trace points, each
//! with its own outward normal, arclength weight and difference stencil.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CrossSection {
    /// `[-w/2, w/2] × [-h/2, h/2]`.
    Rectangle { width: f64, height: f64 },
    /// Disk of the given radius centered at the origin.
    Disk { radius: f64 },
}

impl Default for CrossSection {
    fn default() -> Self {
        CrossSection::Rectangle {
            width: 1.0,
            height: 1.0,
        }
    }
}

impl CrossSection {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CrossSection::Rectangle { width, height } => width > 0.0 && height > 0.0,
            CrossSection::Disk { radius } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "cross-section dimensions must be positive: {self:?}"
            )))
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            CrossSection::Rectangle { width, height } => width.hypot(height),
            CrossSection::Disk { radius } => 2.0 * radius,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            CrossSection::Rectangle { width, height } => width * height,
            CrossSection::Disk { radius } => std::f64::consts::PI * radius * radius,
        }
    }

    /// Radius of the smallest origin-centered disk containing the closure.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.diameter()
    }

    /// Closed membership `p ∈ ω̄`.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.distance(p) == 0.0
    }

    /// Euclidean distance from `p` to `ω` (zero on the closure).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            CrossSection::Rectangle { width, height } => {
                let dx = (p[0].abs() - 0.5 * width).max(0.0);
                let dy = (p[1].abs() - 0.5 * height).max(0.0);
                dx.hypot(dy)
            }
            CrossSection::Disk { radius } => (p[0].hypot(p[1]) - radius).max(0.0),
        }
    }

    /// Support function `max_{x ∈ ω̄} x·n` for a unit vector `n`.
    pub fn support(&self, n: [f64; 2]) -> f64 {
        match *self {
            CrossSection::Rectangle { width, height } => {
                0.5 * width * n[0].abs() + 0.5 * height * n[1].abs()
            }
            CrossSection::Disk { radius } => radius,
        }
    }
}

/// Lattice counts: `nx × ny` nodes across the cross-section bounding box and
/// `nz` axial nodes (caps included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Resolution {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Resolution { nx, ny, nz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Exterior,
}

/// A lattice node carrying boundary data.
#[derive(Debug, Clone)]
pub struct DirichletNode {
    /// Index into the cross-section lattice.
    pub node: usize,
    /// Point of `∂ω` whose boundary value is imposed at the node.
    pub boundary_point: [f64; 2],
    /// Nearest trace point, used when data come from a stored lateral field.
    pub trace: usize,
}

/// Nodes along one rectangle face, outward normal, inward lattice step, node spacing.
type Face = (Vec<(usize, usize)>, [f64; 2], (isize, isize), f64);

/// Quadrature point of `∂ω` where the Neumann trace is evaluated.
#[derive(Debug, Clone)]
pub struct TracePoint {
    pub point: [f64; 2],
    pub normal: [f64; 2],
    /// Arclength quadrature weight.
    pub weight: f64,
    /// Coefficient of the boundary value `f(p)` in the one-sided difference.
    pub boundary_coeff: f64,
    /// `(lattice node, coefficient)` pairs of the one-sided difference.
    pub stencil: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct WaveguideGrid {
    pub cross_section: CrossSection,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    /// Position of lattice node `(0, 0)`.
    pub origin: [f64; 2],
    /// Axial half-length; the caps sit at `x₃ = ±x_cap`.
    pub x_cap: f64,
    pub dt: f64,
    pub final_time: f64,
    pub n_steps: usize,
    pub epsilon: f64,
    pub r_support: f64,
    kinds: Vec<NodeKind>,
    dirichlet: Vec<DirichletNode>,
    trace_points: Vec<TracePoint>,
    interior_runs: Vec<(usize, usize, usize)>,
    area_weights: Vec<f64>,
}

/// `ε = ½·min(1, (T − diam)/3)`.
pub fn admissible_epsilon(diameter: f64, final_time: f64) -> f64 {
    0.5 * (1.0f64).min((final_time - diameter) / 3.0)
}

/// CFL bound for the 7-point leapfrog scheme at unit wave speed.
pub fn cfl_limit(h_min: f64) -> f64 {
    0.9 * h_min / 3f64.sqrt()
}

pub fn build_grid(
    cs: CrossSection,
    res: Resolution,
    final_time: f64,
    r_support: f64,
) -> Result<WaveguideGrid> {
    cs.validate()?;
    let diameter = cs.diameter();
    if !(final_time > diameter) {
        return Err(Error::FinalTimeTooShort {
            final_time,
            diameter,
        });
    }
    if res.nz < 5 {
        return Err(Error::Resolution(format!("need nz >= 5, got {}", res.nz)));
    }
    if !(r_support >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "support radius must be nonnegative, got {r_support}"
        )));
    }
    let x_cap = r_support + final_time + 2.0;
    let hz = 2.0 * x_cap / (res.nz - 1) as f64;

    let (nx, ny, hx, hy, origin) = match cs {
        CrossSection::Rectangle { width, height } => {
            if res.nx < 5 || res.ny < 5 {
                return Err(Error::Resolution(format!(
                    "rectangle needs at least 5x5 nodes, got {}x{}",
                    res.nx, res.ny
                )));
            }
            let hx = width / (res.nx - 1) as f64;
            let hy = height / (res.ny - 1) as f64;
            (res.nx, res.ny, hx, hy, [-0.5 * width, -0.5 * height])
        }
        CrossSection::Disk { radius } => {
            if res.nx != res.ny || res.nx < 9 {
                return Err(Error::Resolution(format!(
                    "disk needs a square lattice with at least 9 nodes per side, got {}x{}",
                    res.nx, res.ny
                )));
            }
            let h = 2.0 * radius / (res.nx - 3) as f64;
            (res.nx, res.nx, h, h, [-radius - h, -radius - h])
        }
    };

    let h_min = hx.min(hy).min(hz);
    let limit = cfl_limit(h_min);
    let n_steps = (final_time / limit).ceil() as usize;
    let dt = final_time / n_steps as f64;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }

    let mut grid = WaveguideGrid {
        cross_section: cs,
        nx,
        ny,
        nz: res.nz,
        hx,
        hy,
        hz,
        origin,
        x_cap,
        dt,
        final_time,
        n_steps,
        epsilon: admissible_epsilon(diameter, final_time),
        r_support,
        kinds: Vec::new(),
        dirichlet: Vec::new(),
        trace_points: Vec::new(),
        interior_runs: Vec::new(),
        area_weights: Vec::new(),
    };
    match cs {
        CrossSection::Rectangle { .. } => grid.classify_rectangle(),
        CrossSection::Disk { radius } => grid.classify_disk(radius)?,
    }
    grid.build_runs();
    Ok(grid)
}

impl WaveguideGrid {
    #[inline]
    pub fn nxy(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nxy() * self.nz
    }

    #[inline]
    pub fn node2(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node3(&self, i: usize, j: usize, k: usize) -> usize {
        k * self.nxy() + j * self.nx + i
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        let i = node % self.nx;
        let j = node / self.nx;
        [
            self.origin[0] + i as f64 * self.hx,
            self.origin[1] + j as f64 * self.hy,
        ]
    }

    #[inline]
    pub fn z(&self, k: usize) -> f64 {
        -self.x_cap + k as f64 * self.hz
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn h_min(&self) -> f64 {
        self.hx.min(self.hy).min(self.hz)
    }

    /// Representative cross-sectional spacing.
    pub fn h_xy(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn dirichlet_nodes(&self) -> &[DirichletNode] {
        &self.dirichlet
    }

    pub fn trace_points(&self) -> &[TracePoint] {
        &self.trace_points
    }

    /// Maximal runs `(j, i_start, i_end)` (end exclusive) of interior nodes.
    pub fn interior_runs(&self) -> &[(usize, usize, usize)] {
        &self.interior_runs
    }

    /// Cross-sectional quadrature weights for `∫_ω`, per lattice node.
    pub fn area_weights(&self) -> &[f64] {
        &self.area_weights
    }

    /// Trapezoid weight of axial node `k` (caps carry half weight).
    pub fn axial_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.nz {
            0.5 * self.hz
        } else {
            self.hz
        }
    }

    /// Trapezoid weight of time level `n` on `[0, T]`.
    pub fn time_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Total perimeter as seen by the trace quadrature.
    pub fn perimeter(&self) -> f64 {
        self.trace_points.iter().map(|tp| tp.weight).sum()
    }

    pub fn courant_number(&self) -> f64 {
        self.dt / self.h_min()
    }

    fn classify_rectangle(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        self.kinds = vec![NodeKind::Interior; nx * ny];
        self.area_weights = vec![self.hx * self.hy; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let edge_x = i == 0 || i + 1 == nx;
                let edge_y = j == 0 || j + 1 == ny;
                let node = self.node2(i, j);
                if edge_x || edge_y {
                    self.kinds[node] = NodeKind::Dirichlet;
                }
                if edge_x {
                    self.area_weights[node] *= 0.5;
                }
                if edge_y {
                    self.area_weights[node] *= 0.5;
                }
            }
        }

        // Faces walked counterclockwise; corners appear once per adjacent face.
        let faces: [Face; 4] = [
            (
                (0..nx).map(|i| (i, 0)).collect(),
                [0.0, -1.0],
                (0, 1),
                self.hx,
            ),
            (
                (0..ny).map(|j| (nx - 1, j)).collect(),
                [1.0, 0.0],
                (-1, 0),
                self.hy,
            ),
            (
                (0..nx).rev().map(|i| (i, ny - 1)).collect(),
                [0.0, 1.0],
                (0, -1),
                self.hx,
            ),
            (
                (0..ny).rev().map(|j| (0, j)).collect(),
                [-1.0, 0.0],
                (1, 0),
                self.hy,
            ),
        ];

        for (nodes, normal, inward, along) in faces {
            let h_normal = if inward.0 != 0 { self.hx } else { self.hy };
            let last = nodes.len() - 1;
            for (m, &(i, j)) in nodes.iter().enumerate() {
                let step = |s: isize| {
                    let ii = (i as isize + s * inward.0) as usize;
                    let jj = (j as isize + s * inward.1) as usize;
                    self.node2(ii, jj)
                };
                let c = 1.0 / (2.0 * h_normal);
                let weight = if m == 0 || m == last {
                    0.5 * along
                } else {
                    along
                };
                self.trace_points.push(TracePoint {
                    point: self.position(self.node2(i, j)),
                    normal,
                    weight,
                    boundary_coeff: 0.0,
                    stencil: vec![(step(0), 3.0 * c), (step(1), -4.0 * c), (step(2), c)],
                });
            }
        }

        for j in 0..ny {
            for i in 0..nx {
                let node = self.node2(i, j);
                if self.kinds[node] != NodeKind::Dirichlet {
                    continue;
                }
                let p = self.position(node);
                let trace = self.nearest_trace(p);
                self.dirichlet.push(DirichletNode {
                    node,
                    boundary_point: p,
                    trace,
                });
            }
        }
    }

    fn classify_disk(&mut self, radius: f64) -> Result<()> {
        let (nx, ny) = (self.nx, self.ny);
        let h = self.hx;
        let tol = 1e-12 * radius;
        self.kinds = vec![NodeKind::Exterior; nx * ny];
        self.area_weights = vec![0.0; nx * ny];
        for node in 0..nx * ny {
            let p = self.position(node);
            if p[0].hypot(p[1]) < radius - tol {
                self.kinds[node] = NodeKind::Interior;
                self.area_weights[node] = h * h;
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let node = self.node2(i, j);
                if self.kinds[node] == NodeKind::Interior {
                    continue;
                }
                let touches =
                    [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .any(|&(di, dj)| {
                            let ii = i as isize + di;
                            let jj = j as isize + dj;
                            ii >= 0
                                && jj >= 0
                                && (ii as usize) < nx
                                && (jj as usize) < ny
                                && self.kinds[self.node2(ii as usize, jj as usize)]
                                    == NodeKind::Interior
                        });
                if touches {
                    self.kinds[node] = NodeKind::Dirichlet;
                }
            }
        }

        let n_theta = ((2.0 * std::f64::consts::PI * radius / h).round() as usize).max(16);
        let eta = h;
        for m in 0..n_theta {
            let phi = 2.0 * std::f64::consts::PI * m as f64 / n_theta as f64;
            let normal = [phi.cos(), phi.sin()];
            let point = [radius * normal[0], radius * normal[1]];
            // The lattice solution vanishes on the staircase just outside the
            // circle, not on the circle itself, so the derivative is
            // extrapolated from three interior samples rather than anchored
            // at the boundary value.
            let c = 1.0 / (2.0 * eta);
            let mut stencil = Vec::with_capacity(12);
            for (dist, coeff) in [(eta, 5.0 * c), (2.0 * eta, -8.0 * c), (3.0 * eta, 3.0 * c)] {
                let q = [point[0] - dist * normal[0], point[1] - dist * normal[1]];
                for (node, w) in self.bilinear(q)? {
                    stencil.push((node, coeff * w));
                }
            }
            self.trace_points.push(TracePoint {
                point,
                normal,
                weight: 2.0 * std::f64::consts::PI * radius / n_theta as f64,
                boundary_coeff: 0.0,
                stencil,
            });
        }

        for node in 0..nx * ny {
            if self.kinds[node] != NodeKind::Dirichlet {
                continue;
            }
            let p = self.position(node);
            let r = p[0].hypot(p[1]);
            let boundary_point = [radius * p[0] / r, radius * p[1] / r];
            let trace = self.nearest_trace(boundary_point);
            self.dirichlet.push(DirichletNode {
                node,
                boundary_point,
                trace,
            });
        }
        Ok(())
    }

    /// Bilinear interpolation weights at `p`; every corner must hold a value.
    pub fn bilinear(&self, p: [f64; 2]) -> Result<Vec<(usize, f64)>> {
        let fx = (p[0] - self.origin[0]) / self.hx;
        let fy = (p[1] - self.origin[1]) / self.hy;
        let i0 = fx.floor();
        let j0 = fy.floor();
        if i0 < 0.0 || j0 < 0.0 || i0 as usize + 1 >= self.nx || j0 as usize + 1 >= self.ny {
            return Err(Error::Resolution(format!("point {p:?} outside lattice")));
        }
        let (i0, j0) = (i0 as usize, j0 as usize);
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let mut out = Vec::with_capacity(4);
        for (di, dj, w) in [
            (0, 0, (1.0 - tx) * (1.0 - ty)),
            (1, 0, tx * (1.0 - ty)),
            (0, 1, (1.0 - tx) * ty),
            (1, 1, tx * ty),
        ] {
            let node = self.node2(i0 + di, j0 + dj);
            if w == 0.0 {
                continue;
            }
            if self.kinds[node] == NodeKind::Exterior {
                return Err(Error::Resolution(format!(
                    "trace stencil at {p:?} reaches an exterior node"
                )));
            }
            out.push((node, w));
        }
        Ok(out)
    }

    fn nearest_trace(&self, p: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (m, tp) in self.trace_points.iter().enumerate() {
            let d = (tp.point[0] - p[0]).hypot(tp.point[1] - p[1]);
            if d < best.0 {
                best = (d, m);
            }
        }
        best.1
    }

    fn build_runs(&mut self) {
        self.interior_runs.clear();
        for j in 0..self.ny {
            let mut i = 0;
            while i < self.nx {
                if self.kinds[self.node2(i, j)] == NodeKind::Interior {
                    let start = i;
                    while i < self.nx && self.kinds[self.node2(i, j)] == NodeKind::Interior {
                        i += 1;
                    }
                    self.interior_runs.push((j, start, i));
                } else {
                    i += 1;
                }
            }
        }
    }
}

/// Vector field `γ = (γ₁(x′), 0)` with `γ₁ = ν₁` on `∂ω`, sampled on the
/// cross-section lattice. It does not depend on `x₃`, so only the 2×2 block of
/// the Jacobian is stored.
#[derive(Debug, Clone)]
pub struct MultiplierField {
    pub gamma: Vec<[f64; 2]>,
    /// `jacobian[node][i][j] = ∂_j γ_i`.
    pub jacobian: Vec<[[f64; 2]; 2]>,
    pub divergence: Vec<f64>,
}

impl MultiplierField {
    /// Axial component, identically zero.
    pub fn axial(&self, _node: usize) -> f64 {
        0.0
    }
}

pub fn build_multiplier(grid: &WaveguideGrid) -> MultiplierField {
    match grid.cross_section {
        CrossSection::Disk { radius } => {
            let n = grid.nxy();
            let gamma = (0..n)
                .map(|node| {
                    let p = grid.position(node);
                    [p[0] / radius, p[1] / radius]
                })
                .collect();
            let inv = 1.0 / radius;
            MultiplierField {
                gamma,
                jacobian: vec![[[inv, 0.0], [0.0, inv]]; n],
                divergence: vec![2.0 * inv; n],
            }
        }
        CrossSection::Rectangle { width, height } => {
            let gamma: Vec<[f64; 2]> = (0..grid.nxy())
                .map(|node| rectangle_blend(grid.position(node), width, height))
                .collect();
            let (jacobian, divergence) = differentiate_lattice(grid, &gamma);
            MultiplierField {
                gamma,
                jacobian,
                divergence,
            }
        }
    }
}

/// Inverse-square-distance blend of the four face normals of the rectangle.
pub fn rectangle_blend(p: [f64; 2], width: f64, height: f64) -> [f64; 2] {
    let faces = [
        (0.5 * width - p[0], [1.0, 0.0]),
        (p[0] + 0.5 * width, [-1.0, 0.0]),
        (0.5 * height - p[1], [0.0, 1.0]),
        (p[1] + 0.5 * height, [0.0, -1.0]),
    ];
    let tol = 1e-12 * width.max(height);
    let on_faces: Vec<[f64; 2]> = faces
        .iter()
        .filter(|(d, _)| d.abs() <= tol)
        .map(|&(_, n)| n)
        .collect();
    if !on_faces.is_empty() {
        let s = on_faces
            .iter()
            .fold([0.0, 0.0], |acc, n| [acc[0] + n[0], acc[1] + n[1]]);
        let norm = s[0].hypot(s[1]);
        return [s[0] / norm, s[1] / norm];
    }
    let mut num = [0.0, 0.0];
    let mut den = 0.0;
    for (d, n) in faces {
        let w = 1.0 / (d * d);
        num[0] += w * n[0];
        num[1] += w * n[1];
        den += w;
    }
    [num[0] / den, num[1] / den]
}

fn differentiate_lattice(
    grid: &WaveguideGrid,
    gamma: &[[f64; 2]],
) -> (Vec<[[f64; 2]; 2]>, Vec<f64>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let deriv = |comp: usize, i: usize, j: usize, axis: usize| -> f64 {
        let (n, h, idx) = if axis == 0 {
            (nx, grid.hx, i)
        } else {
            (ny, grid.hy, j)
        };
        let at = |m: usize| {
            let node = if axis == 0 {
                grid.node2(m, j)
            } else {
                grid.node2(i, m)
            };
            gamma[node][comp]
        };
        if idx == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if idx + 1 == n {
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
        } else {
            (at(idx + 1) - at(idx - 1)) / (2.0 * h)
        }
    };
    let mut jac = vec![[[0.0; 2]; 2]; nx * ny];
    let mut div = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let node = grid.node2(i, j);
            jac[node] = std::array::from_fn(|c| std::array::from_fn(|a| deriv(c, i, j, a)));
            div[node] = jac[node][0][0] + jac[node][1][1];
        }
    }
    (jac, div)
}
