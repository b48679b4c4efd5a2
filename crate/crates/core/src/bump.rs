//! Smooth compactly supported bumps `c·exp(−1/(1−|u|²))` in one and two
//! dimensions, normalized in `L²`, with analytic derivatives.

use std::sync::OnceLock;

/// Derivatives of `E(s) = exp(−1/(1−s))` up to order three, for `s < 1`.
/// With `w = 1/(1−s)`: `E' = −w²E`, `E'' = (w⁴−2w³)E`, `E''' = (−w⁶+6w⁵−6w⁴)E`.
#[inline]
fn profile(s: f64) -> [f64; 4] {
    if s >= 1.0 {
        return [0.0; 4];
    }
    let w = 1.0 / (1.0 - s);
    let e = (-w).exp();
    let w2 = w * w;
    let w3 = w2 * w;
    let w4 = w2 * w2;
    [
        e,
        -w2 * e,
        (w4 - 2.0 * w3) * e,
        (-w4 * w2 + 6.0 * w4 * w - 6.0 * w4) * e,
    ]
}

/// Value, first and second derivative of a 1D function.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet1 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Value, gradient and Hessian of a 2D function.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// The pair `(φ, h)`: `φ` supported in the closed unit disk, `h` in `[−1, 1]`,
/// both with unit `L²` norm.
#[derive(Debug, Clone)]
pub struct BumpPair {
    c_phi: f64,
    c_h: f64,
    /// `‖h^{(k)}‖²` for `k = 0, 1, 2`.
    h_seminorms_sq: [f64; 3],
    /// `Σ_{|β|=k} ‖∂^β φ‖²` over multi-indices, `k = 0..=3`.
    phi_seminorms_sq: [f64; 4],
}

const QUAD_1D: usize = 4000;
const QUAD_2D: usize = 1000;

impl BumpPair {
    fn compute() -> Self {
        // The integrands are flat to all orders at the support boundary, so the
        // trapezoid rule converges faster than any power.
        let step = 2.0 / QUAD_1D as f64;
        let nodes = || (0..=QUAD_1D).map(move |m| -1.0 + m as f64 * step);
        let mass_h: f64 = nodes().map(|u| profile(u * u)[0].powi(2)).sum::<f64>() * step;
        let c_h = mass_h.sqrt().recip();
        let mut h_sq = [0.0; 3];
        for u in nodes() {
            let j = radial_1d(u, c_h);
            h_sq[0] += j.v * j.v;
            h_sq[1] += j.d1 * j.d1;
            h_sq[2] += j.d2 * j.d2;
        }
        h_sq.iter_mut().for_each(|x| *x *= step);

        let step2 = 2.0 / QUAD_2D as f64;
        let mut phi_sq = [0.0; 4];
        for a in 0..=QUAD_2D {
            let ux = -1.0 + a as f64 * step2;
            for b in 0..=QUAD_2D {
                let uy = -1.0 + b as f64 * step2;
                let u = [ux, uy];
                let s = ux * ux + uy * uy;
                if s >= 1.0 {
                    continue;
                }
                let e = profile(s);
                let d = radial_derivatives(u, e, 1.0);
                phi_sq[0] += d.0 * d.0;
                phi_sq[1] += d.1.iter().map(|x| x * x).sum::<f64>();
                // multi-indices xx, xy, yy
                phi_sq[2] += d.2[0][0].powi(2) + d.2[0][1].powi(2) + d.2[1][1].powi(2);
                // xxx, xxy, xyy, yyy
                phi_sq[3] += d.3.iter().map(|x| x * x).sum::<f64>();
            }
        }
        phi_sq.iter_mut().for_each(|x| *x *= step2 * step2);
        let c_phi = phi_sq[0].sqrt().recip();
        phi_sq.iter_mut().for_each(|x| *x *= c_phi * c_phi);

        BumpPair {
            c_phi,
            c_h,
            h_seminorms_sq: h_sq,
            phi_seminorms_sq: phi_sq,
        }
    }

    /// Normalization constant of `φ`.
    pub fn phi_constant(&self) -> f64 {
        self.c_phi
    }

    pub fn h_constant(&self) -> f64 {
        self.c_h
    }

    #[inline]
    pub fn h(&self, u: f64) -> f64 {
        self.c_h * profile(u * u)[0]
    }

    #[inline]
    pub fn h_jet(&self, u: f64) -> Jet1 {
        radial_1d(u, self.c_h)
    }

    #[inline]
    pub fn phi(&self, u: [f64; 2]) -> f64 {
        self.c_phi * profile(u[0] * u[0] + u[1] * u[1])[0]
    }

    #[inline]
    pub fn phi_jet(&self, u: [f64; 2]) -> Jet2 {
        let s = u[0] * u[0] + u[1] * u[1];
        if s >= 1.0 {
            return Jet2::default();
        }
        let e = profile(s);
        let c = self.c_phi;
        let d1 = 2.0 * e[1] * c;
        let mut hess = [[0.0; 2]; 2];
        for (i, row) in hess.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                *x = c * (2.0 * delta * e[1] + 4.0 * u[i] * u[j] * e[2]);
            }
        }
        Jet2 {
            v: c * e[0],
            grad: [d1 * u[0], d1 * u[1]],
            hess,
        }
    }

    pub fn h_seminorms_sq(&self) -> [f64; 3] {
        self.h_seminorms_sq
    }

    pub fn phi_seminorms_sq(&self) -> [f64; 4] {
        self.phi_seminorms_sq
    }

    /// `‖h_δ‖_{H²(ℝ)}` for `h_δ(x) = δ^{−1/2} h(x/δ)`.
    pub fn h_norm_h2(&self, delta: f64) -> f64 {
        scaled_norm(&self.h_seminorms_sq, delta)
    }

    /// `‖Φ_δ‖_{H³(ℝ²)}` for `Φ_δ(x) = δ^{−1} φ(x/δ)`.
    pub fn phi_norm_h3(&self, delta: f64) -> f64 {
        scaled_norm(&self.phi_seminorms_sq, delta)
    }
}

/// `Σ_k δ^{−2k} s_k`, square-rooted. The scaling keeps every `L²` seminorm
/// of order `k` proportional to `δ^{−k}`.
fn scaled_norm(seminorms_sq: &[f64], delta: f64) -> f64 {
    let inv = delta.recip().powi(2);
    let mut w = 1.0;
    let mut total = 0.0;
    for s in seminorms_sq {
        total += w * s;
        w *= inv;
    }
    total.sqrt()
}

fn radial_1d(u: f64, c: f64) -> Jet1 {
    let s = u * u;
    if s >= 1.0 {
        return Jet1::default();
    }
    let e = profile(s);
    Jet1 {
        v: c * e[0],
        d1: c * 2.0 * u * e[1],
        d2: c * (2.0 * e[1] + 4.0 * s * e[2]),
    }
}

/// Value, gradient, Hessian and the four distinct third derivatives
/// (xxx, xxy, xyy, yyy) of `c·E(|u|²)`.
fn radial_derivatives(
    u: [f64; 2],
    e: [f64; 4],
    c: f64,
) -> (f64, [f64; 2], [[f64; 2]; 2], [f64; 4]) {
    let grad = [2.0 * u[0] * e[1] * c, 2.0 * u[1] * e[1] * c];
    let mut hess = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let d = if i == j { 1.0 } else { 0.0 };
            hess[i][j] = c * (2.0 * d * e[1] + 4.0 * u[i] * u[j] * e[2]);
        }
    }
    let third = |i: usize, j: usize, k: usize| {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        c * (4.0 * (d(i, j) * u[k] + d(i, k) * u[j] + d(j, k) * u[i]) * e[2]
            + 8.0 * u[i] * u[j] * u[k] * e[3])
    };
    (
        c * e[0],
        grad,
        hess,
        [
            third(0, 0, 0),
            third(0, 0, 1),
            third(0, 1, 1),
            third(1, 1, 1),
        ],
    )
}

/// Shared instance; the normalization and seminorms are computed once.
pub fn bumps() -> &'static BumpPair {
    static CELL: OnceLock<BumpPair> = OnceLock::new();
    CELL.get_or_init(BumpPair::compute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn fd_check(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, x: f64) {
        let h = 1e-5;
        let num = (f(x + h) - f(x - h)) / (2.0 * h);
        let ana = df(x);
        assert!(
            (num - ana).abs() <= 1e-6 * (1.0 + ana.abs()),
            "{num} vs {ana} at {x}"
        );
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        for &s in &[-0.3, 0.0, 0.2, 0.5, 0.8] {
            for k in 0..3 {
                fd_check(|x| profile(x)[k], |x| profile(x)[k + 1], s);
            }
        }
    }

    #[test]
    fn unit_l2_norms() {
        let b = bumps();
        assert!((b.h_seminorms_sq()[0] - 1.0).abs() < 1e-8);
        assert!((b.phi_seminorms_sq()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn jets_match_finite_differences() {
        let b = bumps();
        for &u in &[-0.7, -0.2, 0.1, 0.55] {
            fd_check(|x| b.h(x), |x| b.h_jet(x).d1, u);
            fd_check(|x| b.h_jet(x).d1, |x| b.h_jet(x).d2, u);
        }
        let p = [0.3, -0.4];
        for a in 0..2 {
            let shift = |x: f64| {
                let mut q = p;
                q[a] = x;
                q
            };
            fd_check(|x| b.phi(shift(x)), |x| b.phi_jet(shift(x)).grad[a], p[a]);
            for c in 0..2 {
                fd_check(
                    |x| b.phi_jet(shift(x)).grad[c],
                    |x| b.phi_jet(shift(x)).hess[c][a],
                    p[a],
                );
            }
        }
    }

    #[test]
    fn third_derivatives_match_hessian_differences() {
        let b = bumps();
        let c = b.phi_constant();
        let p = [0.25, 0.35];
        let hess = |u: [f64; 2]| radial_derivatives(u, profile(u[0] * u[0] + u[1] * u[1]), c).2;
        let third = radial_derivatives(p, profile(p[0] * p[0] + p[1] * p[1]), c).3;
        let h = 1e-5;
        let dx = |i: usize, j: usize| {
            (hess([p[0] + h, p[1]])[i][j] - hess([p[0] - h, p[1]])[i][j]) / (2.0 * h)
        };
        let dy = |i: usize, j: usize| {
            (hess([p[0], p[1] + h])[i][j] - hess([p[0], p[1] - h])[i][j]) / (2.0 * h)
        };
        let num = [dx(0, 0), dy(0, 0), dy(0, 1), dy(1, 1)];
        for k in 0..4 {
            assert!((num[k] - third[k]).abs() < 1e-5 * (1.0 + third[k].abs()));
        }
    }

    #[test]
    fn phi_normalization_matches_radial_quadrature() {
        // ∫ φ² = 2π c² ∫₀¹ E(r²)² r dr, with a fine radial rule
        let n = 400_000;
        let step = 1.0 / n as f64;
        let radial: f64 = (1..n)
            .map(|m| {
                let r = m as f64 * step;
                profile(r * r)[0].powi(2) * r
            })
            .sum::<f64>()
            * step;
        let c = bumps().phi_constant();
        let mass = 2.0 * PI * c * c * radial;
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    }

    #[test]
    fn scaled_norms_at_unit_scale() {
        let b = bumps();
        let h2: f64 = b.h_seminorms_sq().iter().sum::<f64>().sqrt();
        assert_eq!(b.h_norm_h2(1.0), h2);
        let p3: f64 = b.phi_seminorms_sq().iter().sum::<f64>().sqrt();
        assert_eq!(b.phi_norm_h3(1.0), p3);
    }

    #[test]
    fn scaled_norm_matches_direct_quadrature() {
        // direct quadrature of h_δ and its derivatives on a fine grid
        let b = bumps();
        let delta = 0.13;
        let n = 20_000;
        let step = 2.0 * delta / n as f64;
        let mut sq = 0.0;
        for m in 0..=n {
            let x = -delta + m as f64 * step;
            let j = b.h_jet(x / delta);
            let s = delta.powf(-0.5);
            sq +=
                (s * j.v).powi(2) + (s * j.d1 / delta).powi(2) + (s * j.d2 / delta / delta).powi(2);
        }
        let direct = (sq * step).sqrt();
        assert!((direct / b.h_norm_h2(delta) - 1.0).abs() < 1e-8);
    }
}
