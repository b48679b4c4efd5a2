use dnstab::dn::{dn_gap, DnGapEstimate, GapOptions};
use dnstab::fields::{l_norm_surrogate, Potential};
use dnstab::grid_io::{GridData, GridFile};
use dnstab::phantom::Phantom;
use dnstab::probes::{place_probes, GoProbe, ProbeBoundary};
use dnstab::reconstruct::{
    reconstruct_gap, reconstruction_plane, ReconstructParams, ReconstructionErrors,
};
use dnstab::solver::{solve_ibvp, SolveOptions};
use dnstab::stability::{stability_experiment, StabilityParams};
use dnstab::xray::{
    fbp_invert, plane_radius, relative_l2_error, tomo_stability_check, uniform_angles,
    uniform_offsets, xray_forward, SliceSinogram,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::Output;
use crate::config::Loaded;
use crate::error::CliError;

pub struct Ctx {
    pub loaded: Loaded,
    pub parallel: bool,
}

/// Artifacts of a finished run and the names of any checks it missed.
pub struct Finished {
    pub output: Output,
    pub missed: Vec<String>,
}

impl From<Output> for Finished {
    fn from(output: Output) -> Self {
        Finished {
            output,
            missed: Vec::new(),
        }
    }
}

/// `q₁ − q₂` evaluated from the analytic phantoms.
fn gap<'a>(q1: &'a Phantom, q2: &'a Phantom) -> impl Potential + 'a {
    move |x: [f64; 3]| q1.value(x) - q2.value(x)
}

#[derive(Serialize)]
struct SinogramRow {
    y3: f64,
    angle: f64,
    offset: f64,
    value: f64,
}

fn sinogram_rows(s: &SliceSinogram) -> impl Iterator<Item = SinogramRow> + '_ {
    s.angles.iter().enumerate().flat_map(move |(a, &angle)| {
        s.offsets
            .iter()
            .enumerate()
            .map(move |(o, &offset)| SinogramRow {
                y3: s.y3,
                angle,
                offset,
                value: s.get(a, o),
            })
    })
}

/// Sinogram stack on `(slice, angle, offset)`.
fn sinogram_grid(sinos: &[SliceSinogram]) -> GridFile {
    let s0 = &sinos[0];
    let dz = match sinos {
        [a, b, ..] => b.y3 - a.y3,
        _ => 0.0,
    };
    let ds = match s0.offsets.as_slice() {
        [a, b, ..] => b - a,
        _ => 0.0,
    };
    GridFile {
        dims: [
            sinos.len() as u64,
            s0.angles.len() as u64,
            s0.offsets.len() as u64,
            1,
        ],
        spacings: [dz, std::f64::consts::PI / s0.angles.len() as f64, ds, 0.0],
        origin: [s0.y3, 0.0, s0.offsets[0], 0.0],
        tag: [0; 32],
        data: GridData::Real(sinos.iter().flat_map(|s| s.data.iter().copied()).collect()),
    }
}

fn write_sinograms(out: &mut Output, sinos: &[SliceSinogram]) -> Result<(), CliError> {
    out.grid("sinograms.bin", sinogram_grid(sinos))?;
    for (l, s) in sinos.iter().enumerate() {
        out.csv(&format!("sinogram_{l:02}.csv"), sinogram_rows(s))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EnergyRow {
    t: f64,
    energy: f64,
}

#[derive(Serialize)]
struct TracePointRow {
    index: usize,
    x: f64,
    y: f64,
    weight: f64,
}

#[derive(Serialize)]
struct SolveReport {
    probe_index: usize,
    probe: GoProbe,
    n_steps: usize,
    dt: f64,
    courant_number: f64,
    trace_stride: usize,
    trace_times: usize,
    trace_l2: f64,
    trace_max_abs: f64,
    datum_norm_surrogate: f64,
    final_energy: Option<f64>,
}

pub fn solve(ctx: &Ctx) -> Result<Finished, CliError> {
    let cfg = &ctx.loaded.config;
    let grid = cfg.grid()?;
    let q1 = cfg.potentials.q1.sample(&grid)?;
    let probes = place_probes(&grid, &cfg.probes)?;
    let index = cfg.solver.probe;
    let probe = probes.get(index).ok_or_else(|| {
        CliError::Config(format!(
            "solver.probe: index {index} outside the dictionary of {} probes",
            probes.len()
        ))
    })?;
    let data = ProbeBoundary::new(&grid, probe, probe.sign);
    let opts = SolveOptions {
        trace_stride: cfg.solver.trace_stride,
        history_stride: None,
        track_energy: true,
        complex: true,
        parallel: ctx.parallel,
    };
    let res = solve_ibvp(&grid, &q1, &data, None, &opts).map_err(|e| e.in_stage("solve"))?;
    let trace = &res.neumann_trace;

    let mut out = Output::create(&ctx.loaded, "solve")?;
    out.set_probes(std::slice::from_ref(probe));
    out.grid("q1.bin", GridFile::from_potential(&q1, [0; 32]))?;
    out.grid("neumann_trace.bin", GridFile::from_lateral(trace, [0; 32]))?;
    out.csv(
        "trace_points.csv",
        grid.trace_points()
            .iter()
            .enumerate()
            .map(|(index, tp)| TracePointRow {
                index,
                x: tp.point[0],
                y: tp.point[1],
                weight: tp.weight,
            }),
    )?;
    out.csv(
        "energy.csv",
        res.energy_series
            .iter()
            .map(|&(t, energy)| EnergyRow { t, energy }),
    )?;
    out.json(
        "solve.json",
        &SolveReport {
            probe_index: index,
            probe: *probe,
            n_steps: grid.n_steps,
            dt: grid.dt,
            courant_number: grid.courant_number(),
            trace_stride: cfg.solver.trace_stride,
            trace_times: trace.n_times,
            trace_l2: trace.l2_norm(),
            trace_max_abs: trace.max_abs(),
            datum_norm_surrogate: l_norm_surrogate(probe),
            final_energy: res.energy_series.last().map(|e| e.1),
        },
    )?;
    Ok(out.into())
}

#[derive(Serialize)]
struct DnGapReport<'a> {
    /// `‖q₁ − q₂‖_∞` on the lattice, for comparison.
    sup_gap: f64,
    #[serde(flatten)]
    estimate: &'a DnGapEstimate,
}

pub fn dn_gap_cmd(ctx: &Ctx) -> Result<Finished, CliError> {
    let cfg = &ctx.loaded.config;
    let grid = cfg.grid()?;
    let q1 = cfg.potentials.q1.sample(&grid)?;
    let q2 = cfg.potentials.q2.sample(&grid)?;
    let probes = place_probes(&grid, &cfg.probes)?;
    let opts = GapOptions {
        denominator: cfg.solver.denominator,
        parallel: ctx.parallel,
    };
    let est = dn_gap(&grid, &q1, &q2, &probes, cfg.probes.window_r, &opts)?;

    let mut out = Output::create(&ctx.loaded, "dn-gap")?;
    out.set_probes(&probes);
    out.csv("per_probe.csv", &est.per_probe)?;
    out.json(
        "dn_gap.json",
        &DnGapReport {
            sup_gap: q1.difference(&q2).sup_norm(),
            estimate: &est,
        },
    )?;
    Ok(out.into())
}

#[derive(Serialize)]
struct XraySlice {
    y3: f64,
    /// Relative `L²` error of the filtered backprojection against the slice.
    round_trip: f64,
    h_minus_half_norm: f64,
    ts1_norm: f64,
}

#[derive(Serialize)]
struct XrayReport<'a> {
    angles: usize,
    offsets: usize,
    slices: &'a [XraySlice],
    /// Largest `‖f‖_{H^{−1/2}} / ‖Xf‖_{L²(TS¹)}` over the slices.
    stability_ratio: f64,
}

pub fn xray(ctx: &Ctx) -> Result<Finished, CliError> {
    let cfg = &ctx.loaded.config;
    let x = &cfg.xray;
    let grid = cfg.grid()?;
    let plane = reconstruction_plane(&grid, x.plane_nodes);
    let g = gap(&cfg.potentials.q1, &cfg.potentials.q2);
    let angles = uniform_angles(x.angles);
    let run = |&y3: &f64| -> Result<_, CliError> {
        let img = plane.clone().from_fn(|p| g.value([p[0], p[1], y3]));
        let offsets = uniform_offsets(plane_radius(&img), x.offsets);
        let mut sino = xray_forward(&img, &angles, &offsets);
        sino.y3 = y3;
        let fbp = fbp_invert(&sino, &plane, &x.fbp)?;
        let (lhs, rhs) = tomo_stability_check(&img, x.angles, x.offsets)?;
        let row = XraySlice {
            y3,
            round_trip: relative_l2_error(&fbp, &img),
            h_minus_half_norm: lhs,
            ts1_norm: rhs,
        };
        Ok((img, sino, fbp, row))
    };
    let results: Vec<_> = if ctx.parallel {
        x.slices.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        x.slices.iter().map(run).collect::<Result<_, _>>()?
    };

    let mut out = Output::create(&ctx.loaded, "xray")?;
    let images: Vec<_> = results.iter().map(|r| r.0.clone()).collect();
    let sinos: Vec<_> = results.iter().map(|r| r.1.clone()).collect();
    let fbps: Vec<_> = results.iter().map(|r| r.2.clone()).collect();
    let rows: Vec<XraySlice> = results.into_iter().map(|r| r.3).collect();
    out.grid(
        "slices.bin",
        GridFile::from_planes(&images, &x.slices, [0; 32]),
    )?;
    out.grid("fbp.bin", GridFile::from_planes(&fbps, &x.slices, [0; 32]))?;
    write_sinograms(&mut out, &sinos)?;
    let stability_ratio = rows
        .iter()
        .filter(|r| r.ts1_norm > 0.0)
        .map(|r| r.h_minus_half_norm / r.ts1_norm)
        .fold(0.0, f64::max);
    out.json(
        "xray.json",
        &XrayReport {
            angles: x.angles,
            offsets: x.offsets,
            slices: &rows,
            stability_ratio,
        },
    )?;
    Ok(out.into())
}

#[derive(Serialize)]
struct ReconstructReport<'a> {
    params: &'a ReconstructParams,
    slices: &'a [f64],
    errors: &'a ReconstructionErrors,
}

pub fn reconstruct(ctx: &Ctx) -> Result<Finished, CliError> {
    let cfg = &ctx.loaded.config;
    let grid = cfg.grid()?;
    let q1 = cfg.potentials.q1.sample(&grid)?;
    let q2 = cfg.potentials.q2.sample(&grid)?;
    let r = &cfg.reconstruct;
    let params = ReconstructParams {
        placement: cfg.probes,
        plane_nodes: r.plane_nodes,
        fbp: r.fbp,
        deconvolve: r.deconvolve,
        parallel: ctx.parallel,
    };
    let g = gap(&cfg.potentials.q1, &cfg.potentials.q2);
    let res = reconstruct_gap(&grid, &q1, &q2, Some(&g), &params)?;

    let mut out = Output::create(&ctx.loaded, "reconstruct")?;
    out.set_probes(&place_probes(&grid, &cfg.probes)?);
    out.grid(
        "q_hat.bin",
        GridFile::from_planes(&res.q_hat, &res.slices, [0; 32]),
    )?;
    out.grid(
        "r_delta_q.bin",
        GridFile::from_planes(&res.r_delta_q, &res.slices, [0; 32]),
    )?;
    write_sinograms(&mut out, &res.sinograms)?;
    out.csv("correlations.csv", &res.correlations)?;
    out.json(
        "reconstruct.json",
        &ReconstructReport {
            params: &res.params,
            slices: &res.slices,
            errors: &res.errors,
        },
    )?;
    Ok(out.into())
}

pub fn stability(ctx: &Ctx) -> Result<Finished, CliError> {
    let cfg = &ctx.loaded.config;
    let st = &cfg.stability;
    let grid = cfg.grid()?;
    let base = &cfg.potentials.q1;
    let q1 = base.sample(&grid)?;
    let family = st
        .scales
        .iter()
        .map(|&s| {
            let mut q2 = base.clone();
            q2.terms.extend(st.perturbation.iter().map(|t| t.scaled(s)));
            q2.sample(&grid)
                .map(|q| (s, q))
                .map_err(|e| CliError::Config(format!("stability.perturbation at scale {s}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let params = StabilityParams {
        placement: cfg.probes,
        window_r: st.window_r,
        gap: GapOptions {
            denominator: cfg.solver.denominator,
            parallel: ctx.parallel,
        },
    };
    let report = stability_experiment(&grid, &q1, &family, &params)?;

    let mut out = Output::create(&ctx.loaded, "stability")?;
    out.set_probes(&place_probes(&grid, &cfg.probes)?);
    out.csv("stability_pairs.csv", &report.pairs)?;
    out.json("stability.json", &report)?;
    Ok(out.into())
}
