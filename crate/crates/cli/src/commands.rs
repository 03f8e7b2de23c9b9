use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hmcvol::cooling::{estimate_volume, CoolingConfig};
use hmcvol::polytope::Polytope;
use hmcvol::sampler::{run_chains, write_samples_csv, ChainConfig, ChainStats};
use hmcvol::verify::{hard_failures, reports_to_json, run_suite, summary_table, Corpus, SuiteOptions};
use serde::Serialize;

use crate::args::{Common, SampleArgs, VerifyArgs, VolumeArgs};
use crate::{CliError, CliResult};

pub const THREADS_ENV: &str = "HMCVOL_THREADS";

/// `HMCVOL_THREADS`, then `--threads`, then the machine's parallelism.
pub fn resolve_threads(common: &Common) -> CliResult<usize> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={s:?} is not a thread count")))?,
        Err(_) => common
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    if threads == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    Ok(threads)
}

pub fn prepare_out(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| hmcvol::Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| hmcvol::Error::Parse(e.to_string()))?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| {
        CliError::Core(hmcvol::Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

/// Everything needed to rerun a command and get identical files.
#[derive(Debug, Serialize)]
pub struct RunMeta<'a> {
    pub subcommand: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub argv: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polytope: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<&'a ChainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cooling: Option<&'a CoolingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<&'a SuiteOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl<'a> RunMeta<'a> {
    pub fn new(subcommand: &'a str, seed: u64, threads: usize, polytope: Option<&Path>) -> Self {
        Self {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            threads,
            argv: std::env::args().collect(),
            polytope: polytope.map(|p| p.display().to_string()),
            chain: None,
            cooling: None,
            verify: None,
            extra: None,
        }
    }

    pub fn write(&self, out: &Path) -> CliResult<()> {
        write_json(&out.join("run-meta.json"), self)
    }
}

#[derive(Debug, Serialize)]
struct SampleStats<'a> {
    alpha: f64,
    chains: Vec<&'a ChainStats>,
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    let mut cfg = a.chain.to_config(a.common.seed);
    cfg.alpha = a.alpha;
    cfg.n_samples = a.n;
    cfg.validate()?;
    if a.n == 0 || a.chains == 0 {
        return Err(CliError::Usage("--n and --chains must be at least 1".into()));
    }
    let threads = resolve_threads(&a.common)?;
    let poly = Polytope::<f64>::load(&a.polytope)?;
    let out = prepare_out(&a.common.out)?;
    RunMeta {
        chain: Some(&cfg),
        ..RunMeta::new("sample", a.common.seed, threads, Some(&a.polytope))
    }
    .write(&out)?;

    let t = Instant::now();
    let runs = run_chains(&cfg, &poly, a.chains, threads)?;
    let elapsed = t.elapsed();
    let samples: Vec<_> = runs.iter().flat_map(|r| r.samples.iter().cloned()).collect();
    write_samples_csv(out.join("samples.csv"), &samples)?;
    let stats = SampleStats {
        alpha: cfg.alpha,
        chains: runs.iter().map(|r| &r.stats).collect(),
    };
    write_json(&out.join("stats.json"), &stats)?;

    for r in &runs {
        let s = &r.stats;
        let min_ess = s.summary.ess.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "chain {}: {} samples, acceptance {:.3}, step {:.4e}, min ESS {:.1}",
            s.chain_index, s.summary.count, s.acceptance_rate, s.step_size, min_ess
        );
    }
    println!("runtime {:.2}s, wrote {}", elapsed.as_secs_f64(), out.join("samples.csv").display());
    Ok(())
}

pub fn volume(a: &VolumeArgs) -> CliResult<()> {
    let cfg = a.cooling_config();
    cfg.validate()?;
    let chain = a.chain.to_config(a.common.seed);
    chain.validate()?;
    let threads = resolve_threads(&a.common)?;
    let poly = Polytope::<f64>::load(&a.polytope)?;
    let out = prepare_out(&a.common.out)?;
    RunMeta {
        chain: Some(&chain),
        cooling: Some(&cfg),
        ..RunMeta::new("volume", a.common.seed, threads, Some(&a.polytope))
    }
    .write(&out)?;

    let t = Instant::now();
    let trace = estimate_volume(&cfg, &poly, &chain)?;
    write_json(&out.join("trace.json"), &trace)?;
    println!(
        "volume {:.6e}  95% CI [{:.6e}, {:.6e}]  log-volume s.e. {:.4}",
        trace.volume, trace.ci_low, trace.ci_high, trace.log_volume_std_error
    );
    println!(
        "{} phases, {} steps, runtime {:.2}s",
        trace.phases.len(),
        trace.total_steps,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    let threads = resolve_threads(&a.common)?;
    let opts = SuiteOptions {
        only: a.only.clone(),
        trials: a.trials,
        seed: a.common.seed,
        lewis_tol: a.lewis_tol,
        p: a.p,
        c0: a.c0,
        threads,
    };
    opts.validate()?;
    let corpus = match &a.polytope {
        Some(path) => Corpus::single(Polytope::<f64>::load(path)?, a.common.seed)?,
        None => Corpus::generate(a.common.seed, a.random)?,
    };
    let out = prepare_out(&a.common.out)?;
    RunMeta {
        verify: Some(&opts),
        extra: Some(serde_json::json!({ "random_polytopes": a.random })),
        ..RunMeta::new("verify", a.common.seed, threads, a.polytope.as_deref())
    }
    .write(&out)?;

    let reports = run_suite(&corpus, &opts)?;
    write_text(&out.join("reports.json"), &reports_to_json(&reports))?;
    print!("{}", summary_table(&reports));
    let failed = hard_failures(&reports);
    match failed.first() {
        None => {
            println!("all hard checks passed ({} reports)", reports.len());
            Ok(())
        }
        Some(first) => Err(CliError::Failed(format!(
            "{} hard check(s) failed; first: {} on {}@{} (measured {:.6e}, bound {:.6e})",
            failed.len(),
            first.check,
            first.polytope,
            first.point,
            first.measured,
            first.bound
        ))),
    }
}
