//! The Dirichlet-to-Neumann map, its axial window, and the estimate of the
//! operator-norm gap between two potentials over a probe dictionary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{l_norm_discrete, l_norm_surrogate, LateralField, PotentialField};
use crate::geometry::WaveguideGrid;
use crate::probes::{make_probe_data, GoProbe, ProbeBoundary};
use crate::solver::{lockstep_traces, solve_ibvp, BoundaryData, SolveOptions};

/// `Λ_q f`: the Neumann trace of the solution with Dirichlet data `f`.
pub fn dn_apply(
    grid: &WaveguideGrid,
    q: &PotentialField,
    f: &dyn BoundaryData,
    parallel: bool,
) -> Result<LateralField> {
    let opts = SolveOptions {
        parallel,
        ..SolveOptions::default()
    };
    Ok(solve_ibvp(grid, q, f, None, &opts)?.neumann_trace)
}

/// Zeroes the trace outside `|x₃| < r`.
pub fn dn_window(trace: &LateralField, r: f64) -> LateralField {
    let mut out = trace.clone();
    let nz = out.nz;
    let outside: Vec<bool> = (0..nz).map(|k| !(out.z(k).abs() < r)).collect();
    for column in out.values.chunks_mut(nz) {
        for (v, &off) in column.iter_mut().zip(&outside) {
            if off {
                *v = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// `ρ²‖h_δ‖_{H²}‖Φ_δ‖_{H³}`.
    #[default]
    Surrogate,
    /// The lattice `L`-norm of the sampled datum.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRatio {
    pub probe: usize,
    /// `‖(Λ_{q₁} − Λ_{q₂})f‖_{L²(Σ)}`, windowed if requested.
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnGapEstimate {
    /// Largest ratio over the dictionary; a lower bound of the operator norm.
    pub gamma_hat: f64,
    pub per_probe: Vec<ProbeRatio>,
    pub denominator_kind: Denominator,
    pub window_r: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GapOptions {
    pub denominator: Denominator,
    /// Evaluate probes concurrently; each solve stays sequential.
    pub parallel: bool,
}

/// `‖(Λ_{q₁} − Λ_{q₂})f‖_{L²(Σ)}` for one probe datum, restricted to
/// `|x₃| < R` when a window is given.
pub fn trace_gap(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    probe: &GoProbe,
    window_r: Option<f64>,
) -> Result<f64> {
    if !probe.meets_domain(grid) {
        return Ok(0.0);
    }
    let data = ProbeBoundary::new(grid, probe, probe.sign);
    let nz = grid.nz;
    let axial: Vec<f64> = (0..nz)
        .map(|k| match window_r {
            Some(r) if !(grid.z(k).abs() < r) => 0.0,
            _ => grid.axial_weight(k),
        })
        .collect();
    let weights: Vec<f64> = grid.trace_points().iter().map(|t| t.weight).collect();
    let mut total = 0.0;
    lockstep_traces(grid, q1, q2, &data, false, |n, _, (r1, i1), (r2, i2)| {
        let wt = grid.time_weight(n);
        let mut s = 0.0;
        for (m, &wm) in weights.iter().enumerate() {
            let row = m * nz;
            let mut col = 0.0;
            for k in 0..nz {
                let dr = r1[row + k] - r2[row + k];
                let di = i1[row + k] - i2[row + k];
                col += axial[k] * (dr * dr + di * di);
            }
            s += wm * col;
        }
        total += wt * s;
    })?;
    Ok(total.sqrt())
}

/// Ratio of the trace gap to the probe norm for every probe; `γ̂` is the largest.
pub fn dn_gap(
    grid: &WaveguideGrid,
    q1: &PotentialField,
    q2: &PotentialField,
    probes: &[GoProbe],
    window_r: Option<f64>,
    opts: &GapOptions,
) -> Result<DnGapEstimate> {
    if probes.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    for p in probes {
        p.validate(grid)?;
        if window_r.is_some() && p.window_r != window_r {
            return Err(Error::Probe(format!(
                "probe window {:?} differs from the requested window {:?}",
                p.window_r, window_r
            )));
        }
    }
    let eval = |(i, p): (usize, &GoProbe)| -> Result<ProbeRatio> {
        let numerator = trace_gap(grid, q1, q2, p, window_r)?;
        let denominator = match opts.denominator {
            Denominator::Surrogate => l_norm_surrogate(p),
            Denominator::Discrete => l_norm_discrete(&make_probe_data(grid, p)?.0).value,
        };
        let ratio = if denominator > 0.0 {
            numerator / denominator
        } else {
            0.0
        };
        Ok(ProbeRatio {
            probe: i,
            numerator,
            denominator,
            ratio,
        })
    };
    let per_probe: Vec<ProbeRatio> = if opts.parallel {
        probes
            .par_iter()
            .enumerate()
            .map(eval)
            .collect::<Result<_>>()?
    } else {
        probes.iter().enumerate().map(eval).collect::<Result<_>>()?
    };
    let gamma_hat = per_probe.iter().fold(0.0f64, |m, r| m.max(r.ratio));
    Ok(DnGapEstimate {
        gamma_hat,
        per_probe,
        denominator_kind: opts.denominator,
        window_r,
        status: "lower bound: maximum over a finite probe dictionary".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, CrossSection, Resolution};
    use crate::probes::{place_probes, Placement, SliceRange};
    use crate::solver::ZeroData;

    fn grid() -> WaveguideGrid {
        build_grid(
            CrossSection::default(),
            Resolution::new(15, 15, 61),
            4.5,
            0.3,
        )
        .unwrap()
    }

    fn bump(grid: &WaveguideGrid, amp: f64) -> PotentialField {
        let f = move |x: [f64; 3]| {
            let d2 = (x[0] * x[0] + x[1] * x[1]) / 0.09 + x[2] * x[2] / 0.09;
            if d2 < 1.0 {
                amp * (1.0 - d2).powi(3)
            } else {
                0.0
            }
        };
        PotentialField::sample(grid, &f, 0.5, 1.0, 0.3)
    }

    fn dictionary(grid: &WaveguideGrid, window_r: Option<f64>) -> Vec<GoProbe> {
        let p = Placement {
            angles: 2,
            offsets: 3,
            slices: 1,
            delta: 0.1,
            rho: 4.0,
            window_r,
            slice_range: SliceRange::Extended,
        };
        place_probes(grid, &p)
            .unwrap()
            .into_iter()
            .filter(|p| p.meets_domain(grid))
            .collect()
    }

    #[test]
    fn zero_data_gives_zero_trace() {
        let g = grid();
        let t = dn_apply(&g, &bump(&g, 1.0), &ZeroData, false).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn window_is_idempotent_and_bounded() {
        let g = grid();
        let probes = dictionary(&g, None);
        let (f, _) = make_probe_data(&g, &probes[0]).unwrap();
        assert_eq!(dn_window(&f, g.x_cap + 1.0).values, f.values);
        // as R → 0⁺ only the node column at x₃ = 0 survives
        let thin = dn_window(&f, 1e-9);
        for (i, v) in thin.values.iter().enumerate() {
            if thin.z(i % thin.nz).abs() >= 1e-9 {
                assert_eq!(*v, num_complex::Complex64::new(0.0, 0.0));
            }
        }
        let once = dn_window(&f, 0.5);
        assert_eq!(dn_window(&once, 0.5).values, once.values);
        // the datum already lives in |x₃| ≤ δ
        assert_eq!(dn_window(&f, 0.2).values, f.values);
    }

    #[test]
    fn linear_in_the_datum() {
        let g = grid();
        let q = bump(&g, 2.0);
        let probes = dictionary(&g, None);
        let (f1, _) = make_probe_data(&g, &probes[0]).unwrap();
        let (f2, _) = make_probe_data(&g, &probes[1]).unwrap();
        let two = num_complex::Complex64::new(2.0, 0.0);
        let a = dn_apply(&g, &q, &f1.add_scaled(&f2, two), false).unwrap();
        let b = dn_apply(&g, &q, &f1, false)
            .unwrap()
            .add_scaled(&dn_apply(&g, &q, &f2, false).unwrap(), two);
        let diff = a.sub(&b).l2_norm();
        assert!(diff <= 1e-12 * b.l2_norm(), "{diff}");
    }

    #[test]
    fn identical_potentials_have_zero_gap() {
        let g = grid();
        let q = bump(&g, 1.0);
        let est = dn_gap(
            &g,
            &q,
            &q,
            &dictionary(&g, None),
            None,
            &GapOptions::default(),
        )
        .unwrap();
        assert_eq!(est.gamma_hat, 0.0);
    }

    #[test]
    fn empty_dictionary_is_rejected() {
        let g = grid();
        let q = PotentialField::zeros(&g);
        assert!(matches!(
            dn_gap(&g, &q, &q, &[], None, &GapOptions::default()),
            Err(Error::EmptyDictionary)
        ));
    }

    #[test]
    fn gap_grows_with_the_perturbation() {
        let g = grid();
        let q1 = PotentialField::zeros(&g);
        let probes = dictionary(&g, None);
        let gammas: Vec<f64> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&s| {
                dn_gap(&g, &q1, &bump(&g, s), &probes, None, &GapOptions::default())
                    .unwrap()
                    .gamma_hat
            })
            .collect();
        assert!(
            gammas[0] > 0.0 && gammas[0] <= gammas[1] && gammas[1] <= gammas[2],
            "{gammas:?}"
        );
    }

    #[test]
    fn gap_ignores_relabeling_and_phase_conjugation() {
        let g = grid();
        let q1 = PotentialField::zeros(&g);
        let q2 = bump(&g, 0.5);
        let probes = dictionary(&g, None);
        let opts = GapOptions::default();
        let base = dn_gap(&g, &q1, &q2, &probes, None, &opts)
            .unwrap()
            .gamma_hat;
        let mut rev = probes.clone();
        rev.reverse();
        assert_eq!(
            dn_gap(&g, &q1, &q2, &rev, None, &opts).unwrap().gamma_hat,
            base
        );
        let conj: Vec<GoProbe> = probes.iter().map(GoProbe::conjugated).collect();
        let c = dn_gap(&g, &q1, &q2, &conj, None, &opts).unwrap().gamma_hat;
        assert!((c - base).abs() <= 1e-12 * base, "{c} vs {base}");
        // more probes never lower the estimate
        let fewer = dn_gap(&g, &q1, &q2, &probes[..1], None, &opts)
            .unwrap()
            .gamma_hat;
        assert!(fewer <= base);
    }

    #[test]
    fn wide_window_matches_the_full_gap() {
        // beyond r + T nothing scattered by the gap can reach the boundary
        let g = grid();
        let r = g.r_support + g.final_time + 0.5;
        let q1 = PotentialField::zeros(&g);
        let q2 = bump(&g, 0.5);
        let opts = GapOptions::default();
        let full = dn_gap(&g, &q1, &q2, &dictionary(&g, None), None, &opts).unwrap();
        let win = dn_gap(&g, &q1, &q2, &dictionary(&g, Some(r)), Some(r), &opts).unwrap();
        assert!((full.gamma_hat - win.gamma_hat).abs() <= 1e-8 * full.gamma_hat);
    }

    #[test]
    fn parallel_probe_evaluation_matches() {
        let g = grid();
        let q1 = PotentialField::zeros(&g);
        let q2 = bump(&g, 0.5);
        let probes = dictionary(&g, None);
        let a = dn_gap(&g, &q1, &q2, &probes, None, &GapOptions::default()).unwrap();
        let b = dn_gap(
            &g,
            &q1,
            &q2,
            &probes,
            None,
            &GapOptions {
                parallel: true,
                ..GapOptions::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
