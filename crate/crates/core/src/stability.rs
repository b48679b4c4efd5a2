//! The Hölder stability exponent, the parameter schedule that realises it
//! and a harness that checks the stability inequality over a family of gaps.

use serde::{Deserialize, Serialize};

use crate::dn::{dn_gap, GapOptions};
use crate::error::{Error, Result};
use crate::fields::PotentialField;
use crate::geometry::WaveguideGrid;
use crate::probes::{delta_star, place_probes, Placement};

/// A Hölder exponent in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Alpha(alpha))
        } else {
            Err(Error::Alpha(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `min(α, 1/2)`, the rate of the mollifier approximation.
    pub fn tilde(self) -> f64 {
        self.0.min(0.5)
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `min(2α,1)·α / (3(2α+2)(min(4α,2)+21))`.
pub fn exponent_kappa(alpha: f64) -> Result<f64> {
    let a = Alpha::new(alpha)?.get();
    Ok((2.0 * a).min(1.0) * a / (3.0 * (2.0 * a + 2.0) * ((4.0 * a).min(2.0) + 21.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `γ < γ*`: the schedule picks `ρ(γ)`, `δ(γ)`.
    Scheduled,
    /// `γ ≥ γ*`: the a priori bound `2M` is rewritten as a power of `γ`.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySchedule {
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub mu: f64,
    pub kappa: f64,
    pub delta_star: f64,
    pub gamma_star: f64,
}

impl StabilitySchedule {
    /// Exponent `2/(3(21+4α̃))` of `δ(γ)`.
    pub fn delta_exponent(&self) -> f64 {
        2.0 / (3.0 * (21.0 + 4.0 * self.alpha_tilde))
    }

    pub fn rho_of_gamma(&self, gamma: f64) -> f64 {
        gamma.powf(-1.0 / 3.0)
    }

    /// `γ^{2/(3(21+4α̃))}`, written relative to `γ*` so that `δ(γ*) = δ*`
    /// holds without rounding.
    pub fn delta_of_gamma(&self, gamma: f64) -> f64 {
        self.delta_star * (gamma / self.gamma_star).powf(self.delta_exponent())
    }

    pub fn regime(&self, gamma: f64) -> Regime {
        if gamma < self.gamma_star {
            Regime::Scheduled
        } else {
            Regime::Fallback
        }
    }

    /// `2M/γ*^κ`: for `γ ≥ γ*`, `‖q₁ − q₂‖_∞ ≤ 2M ≤ (2M/γ*^κ)·γ^κ`.
    pub fn fallback_constant(&self, bound: f64) -> f64 {
        2.0 * bound / self.gamma_star.powf(self.kappa)
    }
}

pub fn schedule(alpha: f64, delta_star: f64) -> Result<StabilitySchedule> {
    let a = Alpha::new(alpha)?;
    if !(delta_star > 0.0 && delta_star.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "δ* must be positive, got {delta_star}"
        )));
    }
    let at = a.tilde();
    Ok(StabilitySchedule {
        alpha,
        alpha_tilde: at,
        mu: 2.0 * alpha / (2.0 * alpha + 2.0),
        kappa: exponent_kappa(alpha)?,
        delta_star,
        gamma_star: delta_star.powf(1.5 * (21.0 + 4.0 * at)),
    })
}

#[derive(Debug, Clone)]
pub struct StabilityParams {
    pub placement: Placement,
    /// Also run the windowed pipeline with this radius.
    pub window_r: Option<f64>,
    pub gap: GapOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityPair {
    pub s: f64,
    pub sup_gap: f64,
    pub gamma_hat: f64,
    pub gamma_hat_windowed: Option<f64>,
    pub kappa: f64,
    pub fitted_c: f64,
    /// `C·γ̂^κ − ‖q₁ − q₂‖_∞`.
    pub slack: f64,
    pub inequality_holds: bool,
    pub regime: Regime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schedule: StabilitySchedule,
    /// Empirical constant: the smallest `C` with `‖q₁ − q₂‖_∞ ≤ C·γ̂^κ` on
    /// the family. Not the constant of the theorem, which has no closed form.
    pub fitted_c: f64,
    pub pairs: Vec<StabilityPair>,
    /// `γ̂` strictly increasing in `‖q₁ − q₂‖_∞`.
    pub monotone: bool,
    pub inequality_holds: bool,
    /// Largest relative difference between windowed and full `γ̂`.
    pub window_agreement: Option<f64>,
}

/// Runs `dn_gap` for `q₁` against every `(s, q₂)` of the family and fits
/// the stability inequality.
pub fn stability_experiment(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    family: &[(f64, PotentialField)],
    params: &StabilityParams,
) -> Result<StabilityReport> {
    if family.len() < 2 {
        return Err(Error::FamilyTooSmall);
    }
    if let Some((_, q)) = family.iter().find(|(_, q)| q.alpha != q1.alpha) {
        return Err(Error::InvalidArgument(format!(
            "family mixes Hölder exponents {} and {}",
            q1.alpha, q.alpha
        )));
    }
    let sched = schedule(q1.alpha, delta_star(grid, params.window_r))?;
    let kappa = sched.kappa;
    let full = place_probes(
        grid,
        &Placement {
            window_r: None,
            ..params.placement
        },
    )?;
    let windowed = match params.window_r {
        Some(r) => Some(place_probes(
            grid,
            &Placement {
                window_r: Some(r),
                ..params.placement
            },
        )?),
        None => None,
    };

    let mut rows = Vec::with_capacity(family.len());
    for (s, q2) in family {
        let sup_gap = q1.difference(q2).sup_norm();
        let gamma_hat = dn_gap(grid, q1, q2, &full, None, &params.gap)?.gamma_hat;
        let gamma_hat_windowed = match &windowed {
            Some(w) => Some(dn_gap(grid, q1, q2, w, params.window_r, &params.gap)?.gamma_hat),
            None => None,
        };
        rows.push((*s, sup_gap, gamma_hat, gamma_hat_windowed));
    }

    let fitted_c = rows.iter().fold(0.0f64, |c, &(_, d, g, _)| {
        if d == 0.0 {
            c
        } else if g > 0.0 {
            c.max(d / g.powf(kappa))
        } else {
            f64::INFINITY
        }
    });
    let pairs: Vec<StabilityPair> = rows
        .iter()
        .map(|&(s, sup_gap, gamma_hat, gamma_hat_windowed)| {
            let bound = fitted_c * gamma_hat.powf(kappa);
            StabilityPair {
                s,
                sup_gap,
                gamma_hat,
                gamma_hat_windowed,
                kappa,
                fitted_c,
                slack: bound - sup_gap,
                inequality_holds: fitted_c.is_finite() && sup_gap <= bound,
                regime: sched.regime(gamma_hat),
            }
        })
        .collect();

    let mut order: Vec<&StabilityPair> = pairs.iter().collect();
    order.sort_by(|a, b| a.sup_gap.total_cmp(&b.sup_gap));
    let monotone = order
        .windows(2)
        .all(|w| w[0].sup_gap == w[1].sup_gap || w[0].gamma_hat < w[1].gamma_hat);
    let window_agreement = windowed.as_ref().map(|_| {
        pairs
            .iter()
            .filter_map(|p| {
                let w = p.gamma_hat_windowed?;
                let scale = p.gamma_hat.abs().max(w.abs());
                Some(if scale == 0.0 {
                    0.0
                } else {
                    (w - p.gamma_hat).abs() / scale
                })
            })
            .fold(0.0f64, f64::max)
    });
    Ok(StabilityReport {
        schedule: sched,
        fitted_c,
        inequality_holds: pairs.iter().all(|p| p.inequality_holds),
        pairs,
        monotone,
        window_agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, CrossSection, Resolution};
    use crate::probes::SliceRange;
    use proptest::prelude::*;

    #[test]
    fn kappa_at_reference_exponents() {
        assert!((exponent_kappa(0.5).unwrap() - 0.5 / 207.0).abs() < 1e-15);
        assert!((exponent_kappa(0.25).unwrap() - 0.125 / 165.0).abs() < 1e-15);
        let near_one = exponent_kappa(1.0 - 1e-13).unwrap();
        assert!((near_one - 1.0 / 276.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_rejects_exponents_outside_the_unit_interval() {
        for a in [0.0, 1.0, -0.3, 1.5, f64::NAN] {
            assert!(matches!(exponent_kappa(a), Err(Error::Alpha(_))));
        }
    }

    #[test]
    fn kappa_is_continuous_at_branch_points() {
        for b in [0.25, 0.5] {
            let l = exponent_kappa(b - 1e-13).unwrap();
            let r = exponent_kappa(b + 1e-13).unwrap();
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_factors_through_the_schedule() {
        // κ = α̃·μ / (3(21+4α̃)), built from the schedule's pieces
        for a in [0.1, 0.25, 0.4, 0.5, 0.7, 0.95] {
            let s = schedule(a, 0.1).unwrap();
            let composed = s.alpha_tilde * s.mu / (3.0 * (21.0 + 4.0 * s.alpha_tilde));
            assert!((composed - s.kappa).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_reference_values() {
        let s = schedule(0.5, 0.1).unwrap();
        assert!((s.delta_exponent() - 2.0 / 69.0).abs() < 1e-16);
        assert!((s.rho_of_gamma(1e-6) - 100.0).abs() < 1e-10);
        assert!((s.mu - 1.0 / 3.0).abs() < 1e-16);
        assert!((schedule(0.999_999_999_999, 0.1).unwrap().mu - 0.5).abs() < 1e-12);
        assert_eq!(s.delta_of_gamma(s.gamma_star), s.delta_star);
        assert_eq!(s.regime(s.gamma_star), Regime::Fallback);
        assert_eq!(s.regime(0.5 * s.gamma_star), Regime::Scheduled);
        // the fallback bound meets 2M at γ*
        let c = s.fallback_constant(1.5);
        assert!((c * s.gamma_star.powf(s.kappa) - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kappa_increases_up_to_one_half(a in 0.001f64..0.499, d in 1e-4f64..1e-3) {
            let b = (a + d).min(0.5);
            prop_assert!(exponent_kappa(b).unwrap() > exponent_kappa(a).unwrap());
        }

        #[test]
        fn kappa_stays_in_the_unit_interval(a in 1e-6f64..0.999_999) {
            let k = exponent_kappa(a).unwrap();
            prop_assert!(k > 0.0 && k < 1.0);
        }

        #[test]
        fn schedule_invariants(a in 0.01f64..0.99, ds in 0.01f64..0.2, f in 1e-6f64..0.999) {
            let s = schedule(a, ds).unwrap();
            let g = f * s.gamma_star;
            prop_assert!(s.delta_of_gamma(g) < s.delta_star);
            prop_assert!(s.rho_of_gamma(g) > 1.0);
            // relative form agrees with the plain power
            let plain = g.powf(s.delta_exponent());
            prop_assert!((s.delta_of_gamma(g) - plain).abs() <= 1e-12 * plain);
        }
    }

    fn grid() -> WaveguideGrid {
        build_grid(
            CrossSection::default(),
            Resolution::new(15, 15, 61),
            4.5,
            0.3,
        )
        .unwrap()
    }

    fn blob(grid: &WaveguideGrid, amp: f64, c: [f64; 3], r: f64) -> PotentialField {
        let f = move |x: [f64; 3]| {
            let d2 =
                ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)) / (r * r);
            if d2 < 1.0 {
                amp * (1.0 - d2).powi(3)
            } else {
                0.0
            }
        };
        PotentialField::sample(grid, &f, 0.5, 1.0, 0.3)
    }

    fn params(window_r: Option<f64>) -> StabilityParams {
        StabilityParams {
            placement: Placement {
                angles: 2,
                offsets: 3,
                slices: 1,
                delta: 0.1,
                rho: 4.0,
                window_r: None,
                slice_range: SliceRange::Support,
            },
            window_r,
            gap: GapOptions::default(),
        }
    }

    #[test]
    fn single_member_family_is_rejected() {
        let g = grid();
        let q1 = blob(&g, 0.5, [0.0; 3], 0.3);
        let family = vec![(0.0, q1.clone())];
        assert!(matches!(
            stability_experiment(&g, &q1, &family, &params(None)),
            Err(Error::FamilyTooSmall)
        ));
    }

    #[test]
    fn perturbation_family_is_monotone_and_fits() {
        let g = grid();
        let q1 = blob(&g, 0.5, [0.0; 3], 0.3);
        let p = blob(&g, 1.0, [0.1, -0.05, 0.0], 0.2);
        let family: Vec<(f64, PotentialField)> = [0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&s| {
                let mut q = q1.clone();
                q.values
                    .iter_mut()
                    .zip(&p.values)
                    .for_each(|(a, b)| *a += s * b);
                (s, q)
            })
            .collect();
        let r = g.r_support + g.final_time + 0.5;
        let rep = stability_experiment(&g, &q1, &family, &params(Some(r))).unwrap();
        assert!(rep.monotone);
        assert!(rep.fitted_c.is_finite());
        assert!(rep.inequality_holds);
        assert!(rep.window_agreement.unwrap() < 0.01);
        // the extremal pair is tight
        assert!(rep.pairs.iter().any(|p| p.slack.abs() < 1e-12 * p.sup_gap));
    }
}
