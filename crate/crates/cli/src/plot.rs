//! gnuplot-ready data files: whitespace-separated columns, `#` comment header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hmcvol::barrier::MetricState;
use hmcvol::cooling::CoolingTrace;
use hmcvol::dynamics::integrate_from;
use hmcvol::polytope::Polytope;
use hmcvol::sampler::{read_samples_csv, refresh_momentum, step_size, ChainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::args::{PlotArgs, PlotKind};
use crate::commands::{prepare_out, resolve_threads, write_text, RunMeta};
use crate::{CliError, CliResult};

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| {
        CliError::Core(hmcvol::Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, flag: &str, kind: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("plot --kind {kind} needs {flag}")))
}

pub fn run(a: &PlotArgs) -> CliResult<()> {
    let threads = resolve_threads(&a.common)?;
    let (name, data) = match a.kind {
        PlotKind::Trace => ("trace.dat", trace(required(&a.input, "--input", "trace")?, a.column.as_deref())?),
        PlotKind::Schedule => ("schedule.dat", schedule(required(&a.input, "--input", "schedule")?)?),
        PlotKind::EnergyDrift => {
            let poly = Polytope::<f64>::load(required(&a.polytope, "--polytope", "energy-drift")?)?;
            ("energy_drift.dat", energy_drift(&poly, a.alpha, a.common.seed)?)
        }
    };
    let out = prepare_out(&a.common.out)?;
    RunMeta {
        extra: Some(serde_json::json!({
            "kind": format!("{:?}", a.kind),
            "input": a.input.as_ref().map(|p| p.display().to_string()),
            "column": a.column,
            "alpha": a.alpha,
        })),
        ..RunMeta::new("plot", a.common.seed, threads, a.polytope.as_deref())
    }
    .write(&out)?;
    write_text(&out.join(name), &data)?;
    println!("wrote {}", out.join(name).display());
    Ok(())
}

/// `index value…` for every sample, optionally one column only.
pub fn trace(input: &Path, column: Option<&str>) -> CliResult<String> {
    let text = read(input)?;
    let rows = read_samples_csv(&text)?;
    let width = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = match text.lines().next() {
        Some(line) if line.trim_start().starts_with('x') => line.split(',').map(|s| s.trim().to_string()).collect(),
        _ => (1..=width).map(|j| format!("x{j}")).collect(),
    };
    let cols: Vec<usize> = match column {
        None => (0..header.len()).collect(),
        Some(c) => vec![header.iter().position(|h| h == c).ok_or_else(|| {
            hmcvol::Error::Parse(format!("column {c:?} not found in {} (have {})", input.display(), header.join(", ")))
        })?],
    };
    let mut out = String::new();
    let names: Vec<&str> = cols.iter().map(|&j| header[j].as_str()).collect();
    let _ = writeln!(out, "# index {}", names.join(" "));
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "{i}");
        for &j in &cols {
            let _ = write!(out, " {:.16e}", row[j]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// One line per cooling phase.
pub fn schedule(input: &Path) -> CliResult<String> {
    let trace: CoolingTrace =
        serde_json::from_str(&read(input)?).map_err(|e| hmcvol::Error::Parse(format!("{}: {e}", input.display())))?;
    let mut out = String::from("# phase sigma_sq alpha alpha_next k log_ratio rel_se acceptance step_size\n");
    for p in &trace.phases {
        let _ = writeln!(
            out,
            "{} {:.10e} {:.10e} {:.10e} {} {:.10e} {:.6e} {:.4} {:.6e}",
            p.index, p.sigma_sq, p.alpha, p.alpha_next, p.k, p.log_ratio, p.rel_se, p.acceptance_rate, p.step_size
        );
    }
    Ok(out)
}

/// Median `|ΔH|` over five momenta for one trajectory of fixed length split into
/// `2^k` steps. A second-order integrator gives slope 2 on a log-log plot.
pub fn energy_drift(poly: &Polytope<f64>, alpha: f64, seed: u64) -> CliResult<String> {
    let cfg = ChainConfig {
        alpha,
        ..ChainConfig::default()
    };
    cfg.validate()?;
    let (m, n) = (poly.m(), poly.n());
    let params = cfg.barrier_params(m, n);
    let x = poly.find_interior_point(1e-9)?.into_x();
    let state = MetricState::new(&params, poly, x)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let momenta: Vec<_> = (0..5).map(|_| refresh_momentum(&state, &mut rng)).collect();
    let total = step_size(&cfg, m, n);
    let opts = cfg.integrator_options();

    let mut out = String::from("# h steps median_abs_dH\n");
    let mut points = Vec::new();
    for k in 0..6 {
        let steps = 1usize << k;
        let mut errs: Vec<f64> = momenta
            .iter()
            .map(|v| integrate_from(&params, poly, &state, v, total, steps, &opts).energy_error().abs())
            .collect();
        errs.sort_by(f64::total_cmp);
        let h = total / steps as f64;
        let _ = writeln!(out, "{h:.10e} {steps} {:.10e}", errs[2]);
        points.push((h.ln(), errs[2].ln()));
    }
    let fit: Vec<_> = points.iter().filter(|(_, e)| e.is_finite()).collect();
    if fit.len() >= 2 {
        let k = fit.len() as f64;
        let (sx, sy) = fit.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / k, sy / k);
        let (num, den) = fit
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
        let _ = writeln!(out, "# log-log slope {:.4}", num / den);
    }
    Ok(out)
}
