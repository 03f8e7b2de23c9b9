use std::fmt::Write as _;
use std::time::{Duration, Instant};

use hmcvol::barrier::MetricState;
use hmcvol::dynamics::integrate_from;
use hmcvol::lewis::{lewis_weights, LewisOptions};
use hmcvol::linalg::cholesky_jitter;
use hmcvol::polytope::Polytope;
use hmcvol::sampler::{refresh_momentum, step_size};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::args::BenchArgs;
use crate::commands::{prepare_out, resolve_threads, write_text, RunMeta};
use crate::{CliError, CliResult};

pub const HEADER: &str = "n,m,repeat,lewis_min_us,lewis_median_us,metric_min_us,metric_median_us,\
factor_min_us,factor_median_us,integrator_min_us,integrator_median_us,fp_iters";

fn min_median(times: &mut [Duration]) -> (f64, f64) {
    times.sort();
    let us = |d: Duration| d.as_secs_f64() * 1e6;
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        us(times[mid])
    } else {
        0.5 * (us(times[mid - 1]) + us(times[mid]))
    };
    (us(times[0]), median)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    if a.repeat == 0 || a.grid_n.is_empty() || a.grid_m.is_empty() {
        return Err(CliError::Usage("--repeat and both grids must be non-empty".into()));
    }
    if let Some((&n, &m)) = a.grid_n.iter().flat_map(|n| a.grid_m.iter().map(move |m| (n, m))).find(|(&n, &m)| n == 0 || m <= n) {
        return Err(CliError::Usage(format!("grid point n = {n}, m = {m} needs 1 ≤ n < m")));
    }
    let chain = a.chain.to_config(a.common.seed);
    chain.validate()?;
    let threads = resolve_threads(&a.common)?;
    let out = prepare_out(&a.common.out)?;
    RunMeta {
        chain: Some(&chain),
        extra: Some(serde_json::json!({ "grid_n": a.grid_n, "grid_m": a.grid_m, "repeat": a.repeat })),
        ..RunMeta::new("bench", a.common.seed, threads, None)
    }
    .write(&out)?;

    let mut csv = String::from(HEADER);
    csv.push('\n');
    let mut index = 0u64;
    for &n in &a.grid_n {
        for &m in &a.grid_m {
            let mut rng = ChaCha20Rng::seed_from_u64(a.common.seed);
            rng.set_stream(index);
            index += 1;
            let poly = Polytope::<f64>::random(n, m, &mut rng)?;
            let point = poly.find_interior_point(1e-9)?;
            let params = chain.barrier_params(m, n);
            let state = MetricState::new(&params, &poly, point.x().clone())?;
            let v = refresh_momentum(&state, &mut rng);
            let delta = step_size(&chain, m, n);
            let ax = poly.rescaled(&point)?;
            let lewis_opts = LewisOptions {
                tol: chain.lewis_tol,
                ..LewisOptions::default()
            };
            let opts = chain.integrator_options();

            let (mut lewis, mut metric, mut factor, mut integ) = (vec![], vec![], vec![], vec![]);
            let mut fp_iters = 0;
            for _ in 0..a.repeat {
                let (r, t) = timed(|| lewis_weights(&ax, params.p, &lewis_opts));
                r?;
                lewis.push(t);
                let (r, t) = timed(|| MetricState::new(&params, &poly, point.x().clone()));
                r?;
                metric.push(t);
                let (r, t) = timed(|| cholesky_jitter(&state.g, "metric"));
                r?;
                factor.push(t);
                let (traj, t) = timed(|| integrate_from(&params, &poly, &state, &v, delta, chain.n_ode_steps, &opts));
                fp_iters = traj.fixed_point_iters_total;
                integ.push(t);
            }
            let cols = [&mut lewis, &mut metric, &mut factor, &mut integ].map(|t| min_median(t));
            let _ = write!(csv, "{n},{m},{}", a.repeat);
            for (lo, med) in cols {
                let _ = write!(csv, ",{lo:.3},{med:.3}");
            }
            let _ = writeln!(csv, ",{fp_iters}");
        }
    }
    write_text(&out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
