//! Potentials, planar and lateral-boundary fields, and the norms used across
//! the pipeline: Hölder seminorm, DFT-based fractional Sobolev norms and the
//! two `L`-norm stand-ins.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::bump::bumps;
use crate::error::{Error, Result};
use crate::geometry::{NodeKind, WaveguideGrid};
use crate::probes::GoProbe;

/// A real potential `q(x′, x₃)` evaluated pointwise.
pub trait Potential: Sync {
    fn value(&self, x: [f64; 3]) -> f64;
}

impl<F: Fn([f64; 3]) -> f64 + Sync> Potential for F {
    fn value(&self, x: [f64; 3]) -> f64 {
        self(x)
    }
}

/// Sample positions and quadrature weights of the 3D lattice.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    pub origin: [f64; 2],
    pub z0: f64,
    /// Nodes of `ω̄` where samples are meaningful.
    pub valid: Vec<bool>,
    pub area_weights: Vec<f64>,
}

impl Lattice {
    pub fn from_grid(grid: &WaveguideGrid) -> Self {
        Lattice {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            hx: grid.hx,
            hy: grid.hy,
            hz: grid.hz,
            origin: grid.origin,
            z0: -grid.x_cap,
            valid: grid
                .kinds()
                .iter()
                .map(|&k| k != NodeKind::Exterior)
                .collect(),
            area_weights: grid.area_weights().to_vec(),
        }
    }

    pub fn nxy(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.nxy() * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        let k = node / self.nxy();
        let rem = node % self.nxy();
        [
            self.origin[0] + (rem % self.nx) as f64 * self.hx,
            self.origin[1] + (rem / self.nx) as f64 * self.hy,
            self.z0 + k as f64 * self.hz,
        ]
    }

    pub fn is_valid(&self, node: usize) -> bool {
        self.valid[node % self.nxy()]
    }

    pub fn weight(&self, node: usize) -> f64 {
        let k = node / self.nxy();
        let wz = if k == 0 || k + 1 == self.nz {
            0.5 * self.hz
        } else {
            self.hz
        };
        self.area_weights[node % self.nxy()] * wz
    }
}

/// Grid samples of a potential with its a priori Hölder data.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub alpha: f64,
    pub bound: f64,
    pub r_support: f64,
}

/// Outcome of a membership check against the ball `‖q‖_∞ + [q]_α ≤ 2M`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BallCheck {
    pub sup: f64,
    pub seminorm: f64,
    pub within: bool,
}

impl PotentialField {
    /// Samples `p` at every node of `ω̄`; exterior nodes hold zero.
    pub fn sample(
        grid: &WaveguideGrid,
        p: &dyn Potential,
        alpha: f64,
        bound: f64,
        r_support: f64,
    ) -> Self {
        let lattice = Lattice::from_grid(grid);
        let values = (0..lattice.len())
            .map(|node| {
                if lattice.is_valid(node) {
                    p.value(lattice.position(node))
                } else {
                    0.0
                }
            })
            .collect();
        PotentialField {
            lattice,
            values,
            alpha,
            bound,
            r_support,
        }
    }

    pub fn zeros(grid: &WaveguideGrid) -> Self {
        let lattice = Lattice::from_grid(grid);
        let n = lattice.len();
        PotentialField {
            lattice,
            values: vec![0.0; n],
            alpha: 1.0,
            bound: 0.0,
            r_support: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(n, v)| self.lattice.weight(n) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Sup norm restricted to `|x₃| < r`.
    pub fn sup_norm_window(&self, r: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(n, _)| self.lattice.position(*n)[2].abs() < r)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
    }

    /// `self − other` on the same lattice; metadata is taken from `self`
    /// with the support radius and bound widened to cover both.
    pub fn difference(&self, other: &PotentialField) -> PotentialField {
        PotentialField {
            lattice: self.lattice.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            alpha: self.alpha.min(other.alpha),
            bound: self.bound + other.bound,
            r_support: self.r_support.max(other.r_support),
        }
    }

    /// True when every sample with `|x₃| > r_support` is zero.
    pub fn vanishes_outside_support(&self) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(n, &v)| v == 0.0 || self.lattice.position(n)[2].abs() <= self.r_support)
    }

    pub fn check_ball(&self, n_pairs: usize) -> BallCheck {
        let sup = self.sup_norm();
        let seminorm = holder_seminorm(self, n_pairs);
        BallCheck {
            sup,
            seminorm,
            within: sup <= self.bound && seminorm <= self.bound,
        }
    }
}

/// Trilinear interpolation of the lattice samples, zero outside the lattice.
impl Potential for PotentialField {
    fn value(&self, x: [f64; 3]) -> f64 {
        let l = &self.lattice;
        let f = [
            (x[0] - l.origin[0]) / l.hx,
            (x[1] - l.origin[1]) / l.hy,
            (x[2] - l.z0) / l.hz,
        ];
        let n = [l.nx, l.ny, l.nz];
        if (0..3).any(|a| !(f[a] >= 0.0 && f[a] <= (n[a] - 1) as f64)) {
            return 0.0;
        }
        let i: [usize; 3] = std::array::from_fn(|a| (f[a] as usize).min(n[a] - 2));
        let t: [f64; 3] = std::array::from_fn(|a| f[a] - i[a] as f64);
        let mut acc = 0.0;
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w: f64 = (0..3)
                .map(|a| if o[a] == 1 { t[a] } else { 1.0 - t[a] })
                .product();
            if w != 0.0 {
                let node = ((i[2] + o[2]) * l.ny + i[1] + o[1]) * l.nx + i[0] + o[0];
                acc += w * self.values[node];
            }
        }
        acc
    }
}

const HOLDER_SEED: u64 = 0x486f_6c64_6572;

/// Sampled lower bound of `sup |q(x)−q(y)|/|x−y|^α` over pairs of nodes of
/// `ω̄`. Pairs come from a fixed pseudo-random stream, so a larger budget
/// extends the set of inspected pairs and the result never decreases. When
/// the budget covers every pair, the scan is exhaustive.
pub fn holder_seminorm(q: &PotentialField, n_pairs: usize) -> f64 {
    let lat = &q.lattice;
    let nodes: Vec<usize> = (0..lat.len()).filter(|&n| lat.is_valid(n)).collect();
    let n = nodes.len();
    if n < 2 || n_pairs == 0 {
        return 0.0;
    }
    let ratio = |a: usize, b: usize| {
        let pa = lat.position(a);
        let pb = lat.position(b);
        let d =
            ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
        (q.values[a] - q.values[b]).abs() / d.powf(q.alpha)
    };
    let total = n * (n - 1) / 2;
    if n_pairs >= total {
        let mut best = 0.0f64;
        for (ia, &a) in nodes.iter().enumerate() {
            for &b in &nodes[ia + 1..] {
                best = best.max(ratio(a, b));
            }
        }
        return best;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(HOLDER_SEED);
    let max_span = lat.nx.max(lat.ny).max(lat.nz) as f64;
    let (nx, ny, nz) = (lat.nx as i64, lat.ny as i64, lat.nz as i64);
    let mut best = 0.0f64;
    for _ in 0..n_pairs {
        let a = nodes[rng.gen_range(0..n)];
        let local: bool = rng.gen();
        let span: f64 = (rng.gen::<f64>() * max_span.ln()).exp();
        let dir: [f64; 3] = [
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        ];
        let global = nodes[rng.gen_range(0..n)];
        let b = if local {
            let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2])
                .sqrt()
                .max(1e-12);
            let k = (a / lat.nxy()) as i64;
            let j = ((a % lat.nxy()) / lat.nx) as i64;
            let i = (a % lat.nx) as i64;
            let ii = i + (span * dir[0] / norm).round() as i64;
            let jj = j + (span * dir[1] / norm).round() as i64;
            let kk = k + (span * dir[2] / norm).round() as i64;
            if ii < 0 || jj < 0 || kk < 0 || ii >= nx || jj >= ny || kk >= nz {
                continue;
            }
            (kk * ny * nx + jj * nx + ii) as usize
        } else {
            global
        };
        if b == a || !lat.is_valid(b) {
            continue;
        }
        best = best.max(ratio(a, b));
    }
    best
}

/// Fitted constant of `‖g‖_∞ ≤ C ‖g‖_{C^α}^{1−μ} ‖g‖_{L²}^{μ}`, `μ = 2α/(2α+2)`.
pub fn linf_interpolation_constant(q: &PotentialField, n_pairs: usize) -> f64 {
    let sup = q.sup_norm();
    if sup == 0.0 {
        return 0.0;
    }
    let mu = 2.0 * q.alpha / (2.0 * q.alpha + 2.0);
    let c_alpha = sup + holder_seminorm(q, n_pairs);
    sup / (c_alpha.powf(1.0 - mu) * q.l2_norm().powf(mu))
}

/// A real field on a uniform planar lattice, row-major (`j·nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
    pub values: Vec<f64>,
}

impl Plane {
    pub fn zeros(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Self {
        Plane {
            nx,
            ny,
            hx,
            hy,
            origin,
            values: vec![0.0; nx * ny],
        }
    }

    /// Square `n × n` lattice of spacing `h` centered at the origin.
    pub fn centered(n: usize, h: f64) -> Self {
        let o = -0.5 * (n - 1) as f64 * h;
        Plane::zeros(n, n, h, h, [o, o])
    }

    pub fn from_fn(mut self, f: impl Fn([f64; 2]) -> f64) -> Self {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let p = self.position(i, j);
                self.values[j * self.nx + i] = f(p);
            }
        }
        self
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.hx,
            self.origin[1] + j as f64 * self.hy,
        ]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Bilinear interpolation, zero outside the lattice.
    pub fn interpolate(&self, p: [f64; 2]) -> f64 {
        let fx = (p[0] - self.origin[0]) / self.hx;
        let fy = (p[1] - self.origin[1]) / self.hy;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (self.nx - 1) as f64 && fy <= (self.ny - 1) as f64) {
            return 0.0;
        }
        let i = (fx as usize).min(self.nx - 2);
        let j = (fy as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        (1.0 - ty) * ((1.0 - tx) * self.get(i, j) + tx * self.get(i + 1, j))
            + ty * ((1.0 - tx) * self.get(i, j + 1) + tx * self.get(i + 1, j + 1))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.hx * self.hy).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.hx * self.hy
    }

    pub fn scaled(&self, s: f64) -> Plane {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    fn border_is_zero(&self) -> bool {
        let (nx, ny) = (self.nx, self.ny);
        (0..nx).all(|i| self.get(i, 0) == 0.0 && self.get(i, ny - 1) == 0.0)
            && (0..ny).all(|j| self.get(0, j) == 0.0 && self.get(nx - 1, j) == 0.0)
    }
}

/// In-place DFT along one axis of a row-major array with the given shape.
fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, planner: &mut FftPlanner<f64>) {
    let n = shape[axis];
    if n <= 1 {
        return;
    }
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let fft = planner.plan_fft_forward(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (m, x) in line.iter_mut().enumerate() {
                *x = data[base + m * stride];
            }
            fft.process(&mut line);
            for (m, x) in line.iter().enumerate() {
                data[base + m * stride] = *x;
            }
        }
    }
}

/// `Σ_ξ (1+|ξ|²)^s |ĝ(ξ)|²` with continuous-transform scaling, for samples on
/// a periodic lattice of the given shape and spacings.
fn spectral_energy(mut data: Vec<Complex64>, shape: &[usize], spacing: &[f64], s: f64) -> f64 {
    let mut planner = FftPlanner::new();
    for axis in 0..shape.len() {
        fft_axis(&mut data, shape, axis, &mut planner);
    }
    let freq = |k: usize, n: usize, h: f64| {
        let kk = if k < n.div_ceil(2) {
            k as f64
        } else {
            k as f64 - n as f64
        };
        2.0 * std::f64::consts::PI * kk / (n as f64 * h)
    };
    let scale: f64 = spacing.iter().product::<f64>() / shape.iter().product::<usize>() as f64;
    let mut total = 0.0;
    let mut idx = vec![0usize; shape.len()];
    for g in &data {
        let xi2: f64 = idx
            .iter()
            .zip(shape)
            .zip(spacing)
            .map(|((&k, &n), &h)| freq(k, n, h).powi(2))
            .sum();
        let w = if s == 0.0 { 1.0 } else { (1.0 + xi2).powf(s) };
        total += w * g.norm_sqr();
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    total * scale
}

/// Zero-pads a row-major array by `factor` along the chosen axes.
fn pad(
    values: &[Complex64],
    shape: &[usize],
    pad_axes: &[bool],
    factor: usize,
) -> (Vec<Complex64>, Vec<usize>) {
    let new_shape: Vec<usize> = shape
        .iter()
        .zip(pad_axes)
        .map(|(&n, &p)| if p { n * factor } else { n })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); new_shape.iter().product()];
    let mut idx = vec![0usize; shape.len()];
    for v in values {
        let mut flat = 0;
        for a in 0..shape.len() {
            flat = flat * new_shape[a] + idx[a];
        }
        out[flat] = *v;
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    (out, new_shape)
}

/// `(Σ_ξ (1+|ξ|²)^s |ĝ(ξ)|²)^{1/2}` for a compactly supported planar field.
/// The field is zero-padded to twice its extent before the transform; a
/// field that does not vanish on its border ring is rejected.
pub fn frac_sobolev_norm(g: &Plane, s: f64) -> Result<f64> {
    if g.nx < 3 || g.ny < 3 || !g.border_is_zero() {
        return Err(Error::Unpadded);
    }
    let data: Vec<Complex64> = g.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (padded, shape) = pad(&data, &[g.ny, g.nx], &[true, true], 2);
    Ok(spectral_energy(padded, &shape, &[g.hy, g.hx], s).sqrt())
}

/// `ρ²·‖h_δ‖_{H²(ℝ)}·‖Φ_δ‖_{H³(ℝ²)}`, the bound on the `L`-norm of a probe datum.
pub fn l_norm_surrogate(probe: &GoProbe) -> f64 {
    let b = bumps();
    probe.rho * probe.rho * b.h_norm_h2(probe.delta) * b.phi_norm_h3(probe.delta)
}

/// Complex samples on the lattice (time sample, trace point, axial node).
#[derive(Debug, Clone)]
pub struct LateralField {
    pub n_times: usize,
    /// Spacing between time samples.
    pub dt: f64,
    pub nz: usize,
    pub hz: f64,
    pub z0: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Index of the probe that generated the field, if any.
    pub probe: Option<usize>,
}

impl LateralField {
    /// Zero field sampled every `stride` solver steps.
    pub fn zeros(grid: &WaveguideGrid, stride: usize) -> Self {
        let stride = stride.max(1);
        let n_times = grid.n_steps / stride + 1;
        let n_trace = grid.trace_points().len();
        LateralField {
            n_times,
            dt: grid.dt * stride as f64,
            nz: grid.nz,
            hz: grid.hz,
            z0: -grid.x_cap,
            points: grid.trace_points().iter().map(|t| t.point).collect(),
            weights: grid.trace_points().iter().map(|t| t.weight).collect(),
            values: vec![Complex64::new(0.0, 0.0); n_times * n_trace * grid.nz],
            probe: None,
        }
    }

    pub fn n_trace(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn index(&self, n: usize, m: usize, k: usize) -> usize {
        (n * self.n_trace() + m) * self.nz + k
    }

    #[inline]
    pub fn get(&self, n: usize, m: usize, k: usize) -> Complex64 {
        self.values[self.index(n, m, k)]
    }

    pub fn z(&self, k: usize) -> f64 {
        self.z0 + k as f64 * self.hz
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    fn time_weight(&self, n: usize) -> f64 {
        if n == 0 || n + 1 == self.n_times {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    fn axial_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.nz {
            0.5 * self.hz
        } else {
            self.hz
        }
    }

    /// `‖f‖_{L²(Σ)}` by trapezoid quadrature in `t` and `x₃` and the trace
    /// arclength weights.
    pub fn l2_norm(&self) -> f64 {
        let mut total = 0.0;
        for n in 0..self.n_times {
            let wt = self.time_weight(n);
            for m in 0..self.n_trace() {
                let wm = self.weights[m];
                for k in 0..self.nz {
                    total += wt * wm * self.axial_weight(k) * self.get(n, m, k).norm_sqr();
                }
            }
        }
        total.sqrt()
    }

    pub fn scaled(&self, s: Complex64) -> LateralField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn sub(&self, other: &LateralField) -> LateralField {
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a -= b);
        out.probe = None;
        out
    }

    pub fn add_scaled(&self, other: &LateralField, s: Complex64) -> LateralField {
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += s * b);
        out.probe = None;
        out
    }

    pub fn conj(&self) -> LateralField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest magnitude at time sample `n`.
    pub fn max_abs_at(&self, n: usize) -> f64 {
        let len = self.n_trace() * self.nz;
        self.values[n * len..(n + 1) * len]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Linear interpolation in time of the column `(m, ·)` into `out`.
    pub fn column_at(&self, t: f64, m: usize, out: &mut [f64], imag: &mut [f64]) -> bool {
        // held at the last sample for up to one spacing past the end
        let x = t / self.dt;
        if !(x >= 0.0) || x > self.n_times as f64 {
            return false;
        }
        let n0 = (x.floor() as usize).min(self.n_times - 1);
        let n1 = (n0 + 1).min(self.n_times - 1);
        let w = (x - n0 as f64).clamp(0.0, 1.0);
        let mut nonzero = false;
        for k in 0..self.nz {
            let v = self.get(n0, m, k) * (1.0 - w) + self.get(n1, m, k) * w;
            out[k] = v.re;
            imag[k] = v.im;
            nonzero |= v.re != 0.0 || v.im != 0.0;
        }
        nonzero
    }
}

/// Discrete `L`-norm stand-in with its two contributions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LNormDiscrete {
    pub value: f64,
    /// `H^{3/2}` part in `t` and in the boundary-surface variables.
    pub sobolev: f64,
    /// The `1/t`-weighted gradient integral (squared).
    pub weighted_sq: f64,
    /// Set when the first retained time sample carries over half of the
    /// weighted integral.
    pub resolution_warning: bool,
}

/// Discrete surrogate of `‖f‖_L`: per-direction `H^{3/2}` norms by the
/// padded DFT (time and axial directions padded, boundary arclength treated
/// as periodic) plus the `1/t`-weighted gradient integral from `t = dt` on.
pub fn l_norm_discrete(f: &LateralField) -> LNormDiscrete {
    let (nt, nm, nz) = (f.n_times, f.n_trace(), f.nz);
    let perimeter: f64 = f.weights.iter().sum();
    let h_tau = perimeter / nm as f64;
    let s = 1.5;

    let mut time_part = 0.0;
    for m in 0..nm {
        for k in 0..nz {
            let series: Vec<Complex64> = (0..nt).map(|n| f.get(n, m, k)).collect();
            if series.iter().all(|v| v.norm_sqr() == 0.0) {
                continue;
            }
            let (p, shape) = pad(&series, &[nt], &[true], 2);
            time_part += f.weights[m] * f.axial_weight(k) * spectral_energy(p, &shape, &[f.dt], s);
        }
    }
    let mut space_part = 0.0;
    for n in 0..nt {
        let len = nm * nz;
        let slab = &f.values[n * len..(n + 1) * len];
        if slab.iter().all(|v| v.norm_sqr() == 0.0) {
            continue;
        }
        let (p, shape) = pad(slab, &[nm, nz], &[false, true], 2);
        space_part += f.time_weight(n) * spectral_energy(p, &shape, &[h_tau, f.hz], s);
    }
    let sobolev = (time_part + space_part).sqrt();

    let mut weighted = 0.0;
    let mut first = 0.0;
    for n in 1..nt {
        let wt = f.time_weight(n) / f.time(n);
        let mut slab = 0.0;
        for m in 0..nm {
            let next = (m + 1) % nm;
            let ds = {
                let (a, b) = (f.points[m], f.points[next]);
                (a[0] - b[0]).hypot(a[1] - b[1])
            };
            for k in 0..nz {
                let v = f.get(n, m, k);
                let dt = if n + 1 < nt {
                    (f.get(n + 1, m, k) - f.get(n - 1, m, k)) / (2.0 * f.dt)
                } else {
                    (v - f.get(n - 1, m, k)) / f.dt
                };
                let dtau = if ds > 1e-12 {
                    (f.get(n, next, k) - v) / ds
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let dz = if k == 0 {
                    (f.get(n, m, 1) - v) / f.hz
                } else if k + 1 == nz {
                    (v - f.get(n, m, k - 1)) / f.hz
                } else {
                    (f.get(n, m, k + 1) - f.get(n, m, k - 1)) / (2.0 * f.hz)
                };
                slab += f.weights[m]
                    * f.axial_weight(k)
                    * (dt.norm_sqr() + dtau.norm_sqr() + dz.norm_sqr());
            }
        }
        if n == 1 {
            first = wt * slab;
        }
        weighted += wt * slab;
    }
    LNormDiscrete {
        value: (sobolev * sobolev + weighted).sqrt(),
        sobolev,
        weighted_sq: weighted,
        resolution_warning: weighted > 0.0 && first > 0.5 * weighted,
    }
}

/// A norm value tagged with the Sobolev order it was computed at.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrderedNorm {
    pub order: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub l2_sigma: f64,
    pub l_norm_surrogate: f64,
    pub l_norm_discrete: f64,
    pub h_fractional: Vec<OrderedNorm>,
}
