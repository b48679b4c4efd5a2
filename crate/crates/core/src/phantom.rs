//! Analytic potentials: compact bumps, products `g(x₃)·v(x′, x₃)` with an
//! even decreasing profile `g` and a `2r`-periodic `v`, and bumps with a
//! `|x′|^β` cusp of limited Hölder regularity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Potential, PotentialField};
use crate::geometry::WaveguideGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    /// `A(1 − |x − c|²/a²)³₊`.
    Bump {
        amplitude: f64,
        center: [f64; 3],
        radius: f64,
    },
    /// `A·g(x₃)·χ(x′)·(1 + ½cos(πx₃/r))` with `g` the triangle of half-width
    /// `w` and `χ = (1 − |x′|²/b²)²₊`.
    Product {
        amplitude: f64,
        half_width: f64,
        period_r: f64,
        lateral_radius: f64,
    },
    /// `A(1 − (|x′ − c′|/a)^β)₊·(1 − (x₃ − c₃)²/b²)²₊`, Hölder of order `β`
    /// at the cusp.
    Cusp {
        amplitude: f64,
        center: [f64; 3],
        radius: f64,
        axial_radius: f64,
        exponent: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PhantomSpec::Bump { radius, .. } => positive("radius", radius),
            PhantomSpec::Product {
                half_width,
                period_r,
                lateral_radius,
                ..
            } => {
                positive("half_width", half_width)?;
                positive("period_r", period_r)?;
                positive("lateral_radius", lateral_radius)
            }
            PhantomSpec::Cusp {
                radius,
                axial_radius,
                exponent,
                ..
            } => {
                positive("radius", radius)?;
                positive("axial_radius", axial_radius)?;
                if exponent > 0.0 && exponent <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "cusp exponent {exponent} outside (0, 1]"
                    )))
                }
            }
        }
    }

    /// Half-length of the axial support.
    pub fn axial_support(&self) -> f64 {
        match *self {
            PhantomSpec::Bump { center, radius, .. } => center[2].abs() + radius,
            PhantomSpec::Product { half_width, .. } => half_width,
            PhantomSpec::Cusp {
                center,
                axial_radius,
                ..
            } => center[2].abs() + axial_radius,
        }
    }

    /// The same phantom with its amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> PhantomSpec {
        let mut out = self.clone();
        match &mut out {
            PhantomSpec::Bump { amplitude, .. }
            | PhantomSpec::Product { amplitude, .. }
            | PhantomSpec::Cusp { amplitude, .. } => *amplitude *= s,
        }
        out
    }

    /// Hölder exponent the family guarantees.
    pub fn regularity(&self) -> f64 {
        match *self {
            PhantomSpec::Cusp { exponent, .. } => exponent,
            _ => 1.0,
        }
    }
}

impl Potential for PhantomSpec {
    fn value(&self, x: [f64; 3]) -> f64 {
        match *self {
            PhantomSpec::Bump {
                amplitude,
                center,
                radius,
            } => {
                let d2 =
                    (0..3).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>() / (radius * radius);
                if d2 < 1.0 {
                    amplitude * (1.0 - d2).powi(3)
                } else {
                    0.0
                }
            }
            PhantomSpec::Product {
                amplitude,
                half_width,
                period_r,
                lateral_radius,
            } => {
                let g = (1.0 - x[2].abs() / half_width).max(0.0);
                let l2 = (x[0] * x[0] + x[1] * x[1]) / (lateral_radius * lateral_radius);
                let chi = (1.0 - l2).max(0.0).powi(2);
                let v = 1.0 + 0.5 * (std::f64::consts::PI * x[2] / period_r).cos();
                amplitude * g * chi * v
            }
            PhantomSpec::Cusp {
                amplitude,
                center,
                radius,
                axial_radius,
                exponent,
            } => {
                let r = (x[0] - center[0]).hypot(x[1] - center[1]) / radius;
                let z2 = ((x[2] - center[2]) / axial_radius).powi(2);
                if r >= 1.0 || z2 >= 1.0 {
                    return 0.0;
                }
                amplitude * (1.0 - r.powf(exponent)) * (1.0 - z2).powi(2)
            }
        }
    }
}

/// A sum of phantoms with its declared Hölder data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    pub alpha: f64,
    /// A priori bound `M` of the Hölder ball.
    pub bound: f64,
    pub terms: Vec<PhantomSpec>,
}

impl Potential for Phantom {
    fn value(&self, x: [f64; 3]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Alpha(self.alpha));
        }
        positive("bound", self.bound)?;
        for t in &self.terms {
            t.validate()?;
            if t.regularity() < self.alpha {
                return Err(Error::InvalidArgument(format!(
                    "a term of regularity {} cannot sit in a Hölder class of order {}",
                    t.regularity(),
                    self.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn axial_support(&self) -> f64 {
        self.terms
            .iter()
            .map(PhantomSpec::axial_support)
            .fold(0.0, f64::max)
    }

    pub fn sample(&self, grid: &WaveguideGrid) -> Result<PotentialField> {
        self.validate()?;
        let r = self.axial_support();
        if r > grid.r_support {
            return Err(Error::InvalidArgument(format!(
                "phantom reaches |x₃| = {r}, beyond the grid's support radius {}",
                grid.r_support
            )));
        }
        Ok(PotentialField::sample(
            grid,
            self,
            self.alpha,
            self.bound,
            grid.r_support,
        ))
    }
}
