//! One driver per experiment: compute, stage files, return a JSON summary.

use binormal_core::fit::median;
use binormal_core::flow::evolve_dense;
use binormal_core::hasimoto::{reconstruct_from_state, CurveFamily};
use binormal_core::measure::{
    density_limit, density_log_energy, holder_growth_experiment, mean_increment_fit, quasi_invariance_check,
    random_curve_experiment, sample_rho, MeasureParams,
};
use binormal_core::par;
use binormal_core::singularity::{curve_limit, polygon_corners, CurveLimit};
use binormal_core::spectral::{mass, CoefficientState};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::{fmt_f64, Csv, Staging};
use crate::svg;

/// Band used to summarize randomized-curve Hölder exponents.
pub const HOLDER_BAND: (f64, f64) = (0.35, 0.55);

fn mode_header(prefix: &[&str], n: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    let n = n as i64;
    for k in -n..=n {
        h.push(format!("re_{k}"));
        h.push(format!("im_{k}"));
    }
    h
}

fn mode_cells(state: &CoefficientState) -> Vec<String> {
    state.coeffs().iter().flat_map(|b| [fmt_f64(b.re), fmt_f64(b.im)]).collect()
}

fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 || b <= a {
        return vec![a];
    }
    let mut v: Vec<f64> = (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect();
    v[n - 1] = b;
    v.dedup_by(|x, y| x <= y);
    v
}

pub fn evolve(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let state = cfg.initial_state()?;
    let times = log_spaced(1.0, cfg.evolve.tau_end, cfg.evolve.samples);
    let rec = evolve_dense(&state, &times, &cfg.flow)?;
    let mut csv = Csv::new(&mode_header(&["t", "mass"], state.n()));
    for ((t, m), st) in rec.times.iter().zip(&rec.mass_series).zip(&rec.states) {
        let mut cells = vec![fmt_f64(*t), fmt_f64(*m)];
        cells.extend(mode_cells(st));
        csv.row(&cells);
    }
    out.write("trajectory.csv", &csv.into_bytes())?;
    Ok(json!({
        "N": state.n(),
        "samples": rec.len(),
        "initial_mass": rec.mass_series[0],
        "max_mass_drift": rec.max_mass_drift(),
        "steps": rec.diagnostics.get("steps").and_then(|s| s.last()).copied(),
    }))
}

fn family(cfg: &RunConfig) -> RunResult<CurveFamily> {
    let state = cfg.initial_state()?;
    let times = cfg.ladder_times()?;
    let grid = cfg.grid_nodes();
    Ok(reconstruct_from_state(&state, &cfg.flow, &times, &grid, &cfg.anchor, &cfg.reconstruct.options)?)
}

fn write_curves(fam: &CurveFamily, out: &mut Staging) -> RunResult<()> {
    let mut header = vec!["t", "x", "chi1", "chi2", "chi3"];
    let frame_cols = ["t1", "t2", "t3", "e1_1", "e1_2", "e1_3", "e2_1", "e2_2", "e2_3"];
    if fam.frames.is_some() {
        header.extend(frame_cols);
    }
    let mut csv = Csv::new(&header);
    for (i, &t) in fam.times.iter().enumerate() {
        for (m, &x) in fam.x_nodes.iter().enumerate() {
            let p = fam.points[i][m];
            let mut row = vec![t, x, p[0], p[1], p[2]];
            if let Some(frames) = &fam.frames {
                let f = frames[i].frames[m];
                row.extend((0..3).flat_map(|r| (0..3).map(move |c| f[(r, c)])));
            }
            csv.numbers(&row);
        }
    }
    out.write("curves.csv", &csv.into_bytes())
}

fn write_limit(lim: &CurveLimit, out: &mut Staging) -> RunResult<()> {
    let mut csv = Csv::new(&["x", "chi1", "chi2", "chi3"]);
    for (x, p) in lim.x_nodes.iter().zip(&lim.limit) {
        csv.numbers(&[*x, p[0], p[1], p[2]]);
    }
    out.write("limit.csv", &csv.into_bytes())?;
    let mut csv = Csv::new(&["t", "sup_distance"]);
    for d in &lim.distances {
        csv.numbers(&[d.0, d.1]);
    }
    out.write("distances.csv", &csv.into_bytes())?;
    if lim.distances.iter().any(|d| d.1 > 0.0) {
        let s = svg::loglog(
            &[svg::Series { label: "sup distance", points: &lim.distances, fit: lim.fit }],
            "distance to the limit curve",
            "t",
            "distance",
        )?;
        out.write("svg/distances.svg", s.as_bytes())?;
    }
    Ok(())
}

fn limit_if_possible(fam: &CurveFamily, cfg: &RunConfig) -> Option<CurveLimit> {
    curve_limit(fam, &cfg.reconstruct.window).ok()
}

pub fn reconstruct(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let fam = family(cfg)?;
    write_curves(&fam, out)?;
    for (i, t) in fam.times.iter().enumerate() {
        let s = svg::curve_projections(&[fam.slice(i)], &format!("t = {t}"))?;
        out.write(&format!("svg/curve_{i:03}.svg"), s.as_bytes())?;
    }
    let lim = limit_if_possible(&fam, cfg);
    if let Some(l) = &lim {
        write_limit(l, out)?;
    }
    Ok(json!({
        "times": fam.times,
        "max_orthonormality_defect": fam.max_orthonormality_defect,
        "tangent_norm_defect": fam.tangent_norm_defect(),
        "arclength_defect": fam.arclength_defect(),
        "limit_fit": lim.as_ref().and_then(|l| l.fit),
        "limit_unreliable": lim.as_ref().map(|l| l.unreliable),
    }))
}

pub fn corners(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let fam = family(cfg)?;
    let lim = curve_limit(&fam, &cfg.reconstruct.window)?;
    write_limit(&lim, out)?;
    let found = polygon_corners(&lim.x_nodes, &lim.limit, &cfg.corners)?;
    let mut csv = Csv::new(&["location", "turning_angle", "interior_angle"]);
    for c in &found {
        csv.numbers(&[c.location, c.turning_angle, c.interior_angle]);
    }
    out.write("corners.csv", &csv.into_bytes())?;
    let s = svg::curve_projections(&[&lim.limit], "extrapolated limit curve")?;
    out.write("svg/limit.svg", s.as_bytes())?;
    let spacing = cfg.corners.spacing;
    let offsets: Vec<f64> = found.iter().map(|c| c.location - spacing * (c.location / spacing).round()).collect();
    Ok(json!({
        "corners": found,
        "max_offset_from_lattice": offsets.iter().fold(0.0f64, |m, o| m.max(o.abs())),
        "t_min": fam.times.last(),
        "limit_fit": lim.fit,
    }))
}

pub fn sample(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let p = cfg.measure_params();
    let batch = sample_rho(&p, cfg.sample.count)?;
    let mut csv = Csv::new(&mode_header(&["index", "mass"], p.n));
    for (i, st) in batch.states.iter().enumerate() {
        let mut cells = vec![i.to_string(), fmt_f64(mass(st))];
        cells.extend(mode_cells(st));
        csv.row(&cells);
    }
    out.write("samples.csv", &csv.into_bytes())?;
    let masses: Vec<f64> = batch.states.iter().map(mass).collect();
    Ok(json!({
        "params": p,
        "count": batch.states.len(),
        "attempts": batch.attempts,
        "acceptance_rate": batch.acceptance_rate(),
        "mass": binormal_core::measure::Estimate::from_samples(&masses),
    }))
}

pub fn density(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let p = cfg.measure_params();
    let batch = sample_rho(&p, cfg.density.count)?;
    let ladder = cfg.density.ladder();
    let quad = cfg.density.quadrature;
    let results = par::try_map_indexed(batch.states.len(), |i| -> RunResult<_> {
        let v = &batch.states[i];
        let lim = density_limit(v, &ladder, p.s, &cfg.flow, &quad)?;
        let energy = density_log_energy(v, *ladder.last().unwrap_or(&1.0), p.s, &cfg.flow)?;
        Ok((lim, energy))
    })?;
    let mut series = Csv::new(&["sample", "tau", "log_f", "quadrature_error"]);
    let mut incs = Csv::new(&["sample", "tau", "increment"]);
    let mut per_sample = Vec::new();
    for (i, (lim, energy)) in results.iter().enumerate() {
        let e = &lim.estimate;
        for k in 0..e.tau_grid.len() {
            series.row(&[i.to_string(), fmt_f64(e.tau_grid[k]), fmt_f64(e.log_f[k]), fmt_f64(e.quadrature_error[k])]);
        }
        for d in &lim.increments {
            incs.row(&[i.to_string(), fmt_f64(d.0), fmt_f64(d.1)]);
        }
        let (log_f, err) = e.last();
        per_sample.push(json!({
            "sample": i,
            "log_f": log_f,
            "quadrature_error": err,
            "energy_route": energy,
            "route_gap": (log_f - energy).abs(),
            "increment_fit": lim.fit,
        }));
    }
    out.write("density.csv", &series.into_bytes())?;
    out.write("increments.csv", &incs.into_bytes())?;
    let labels: Vec<String> = (0..results.len()).map(|i| format!("sample {i}")).collect();
    let plotted: Vec<svg::Series> = results
        .iter()
        .zip(&labels)
        .take(6)
        .map(|((lim, _), l)| svg::Series { label: l, points: &lim.increments, fit: lim.fit })
        .collect();
    if let Ok(s) = svg::loglog(&plotted, "doubling increments of log f", "tau", "increment") {
        out.write("svg/increments.svg", s.as_bytes())?;
    }
    let slopes: Vec<f64> = results.iter().filter_map(|(l, _)| l.fit.map(|f| f.exponent)).collect();
    let limits: Vec<_> = results.into_iter().map(|(l, _)| l).collect();
    let mean_fit = mean_increment_fit(&limits)?;
    Ok(json!({
        "params": p,
        "ladder": ladder,
        "samples": per_sample,
        "median_increment_slope": median(&slopes),
        "mean_increment_fit": mean_fit,
    }))
}

pub fn quasi_invariance(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let p = cfg.measure_params();
    let report = quasi_invariance_check(&p, &cfg.quasi_invariance)?;
    let mut csv = Csv::new(&["kappa", "pushforward_ratio", "density_ratio"]);
    for r in &report.ratios {
        csv.numbers(&[r.kappa, r.pushforward, r.density]);
    }
    out.write("ratios.csv", &csv.into_bytes())?;
    Ok(json!({ "params": p, "report": report, "agree_within_two_sigma": report.discrepancy_sigma <= 2.0 }))
}

pub fn holder_growth(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let ns =
        if cfg.holder_growth.n_ladder.is_empty() { vec![cfg.measure.n] } else { cfg.holder_growth.n_ladder.clone() };
    let mut norms = Csv::new(&["N", "sample", "t", "norm"]);
    let mut exps = Csv::new(&["N", "sample", "exponent", "r_squared"]);
    let mut per_n = Vec::new();
    let mut last_report = None;
    for &n in &ns {
        let p = MeasureParams { n, ..cfg.measure_params() };
        let report = holder_growth_experiment(&p, &cfg.holder_growth.options)?;
        for (i, s) in report.samples.iter().enumerate() {
            for (t, v) in s.times.iter().zip(&s.norms) {
                norms.row(&[n.to_string(), i.to_string(), fmt_f64(*t), fmt_f64(*v)]);
            }
            exps.row(&[n.to_string(), i.to_string(), fmt_f64(s.fit.exponent), fmt_f64(s.fit.r_squared)]);
        }
        per_n.push(json!({ "N": n, "median_exponent": report.median_exponent, "samples": report.samples.len() }));
        last_report = Some(report);
    }
    out.write("norms.csv", &norms.into_bytes())?;
    out.write("exponents.csv", &exps.into_bytes())?;
    if let Some(report) = &last_report {
        let pts: Vec<Vec<(f64, f64)>> = report
            .samples
            .iter()
            .take(6)
            .map(|s| s.times.iter().copied().zip(s.norms.iter().copied()).collect())
            .collect();
        let labels: Vec<String> = (0..pts.len()).map(|i| format!("sample {i}")).collect();
        let series: Vec<svg::Series> = pts
            .iter()
            .zip(&labels)
            .zip(&report.samples)
            .map(|((p, l), s)| svg::Series { label: l, points: p, fit: Some(s.fit) })
            .collect();
        let s = svg::loglog(&series, "Hölder norms along the flow", "t", "norm")?;
        out.write("svg/norms.svg", s.as_bytes())?;
    }
    Ok(json!({ "s": cfg.measure.s, "s_prime": cfg.holder_growth.options.s_prime, "by_N": per_n }))
}

pub fn random_curves(cfg: &RunConfig, out: &mut Staging) -> RunResult<Value> {
    let p = cfg.measure_params();
    let samples = random_curve_experiment(&p, &cfg.random_curves)?;
    let mut csv = Csv::new(&["sample", "corner_x", "holder_exponent", "holder_se", "limit_exponent"]);
    let mut modulus = Csv::new(&["sample", "lag", "modulus"]);
    let mut exps = Vec::new();
    for s in &samples {
        let (e, se) = s.holder.fit.map_or((f64::NAN, f64::NAN), |f| (f.exponent, f.exponent_se));
        let le = s.limit.as_ref().and_then(|l| l.fit).map_or(f64::NAN, |f| f.exponent);
        csv.row(&[s.index.to_string(), fmt_f64(s.corner_x), fmt_f64(e), fmt_f64(se), fmt_f64(le)]);
        for m in &s.holder.modulus {
            modulus.row(&[s.index.to_string(), fmt_f64(m.0), fmt_f64(m.1)]);
        }
        if e.is_finite() {
            exps.push(e);
        }
    }
    out.write("exponents.csv", &csv.into_bytes())?;
    out.write("modulus.csv", &modulus.into_bytes())?;
    if let Some(first) = samples.first() {
        if let Ok(s) = svg::loglog(
            &[svg::Series { label: "sample 0", points: &first.holder.modulus, fit: first.holder.fit }],
            "trajectory modulus of continuity",
            "lag",
            "modulus",
        ) {
            out.write("svg/modulus.svg", s.as_bytes())?;
        }
    }
    let in_band = exps.iter().filter(|&&e| e >= HOLDER_BAND.0 && e <= HOLDER_BAND.1).count();
    Ok(json!({
        "params": p,
        "count": samples.len(),
        "exponents": exps,
        "median_exponent": median(&exps),
        "band": [HOLDER_BAND.0, HOLDER_BAND.1],
        "fraction_in_band": in_band as f64 / samples.len().max(1) as f64,
    }))
}
