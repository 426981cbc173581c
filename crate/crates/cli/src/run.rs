//! Command dispatch and output files.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use grating_core::harness::{
    fit_exponent, monte_carlo, solve_config, sweep, write_mc_csv, write_sweep_csv, McSettings,
};
use grating_core::random::{draw_sample, Gamma0Rule};
use grating_core::solver::field_filename;
use grating_core::trace::{efficiencies, incident_trace, rayleigh_amplitudes};
use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::config::{Command, Format, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub manifest: Value,
}

/// Output directory plus the list of files written so far.
struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    /// Write through a temporary file in the same directory, then rename.
    fn write<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let tmp = NamedTempFile::new_in(&self.dir)?;
        {
            let mut out = BufWriter::new(tmp.as_file());
            fill(&mut out)?;
            out.flush()?;
        }
        let path = self.dir.join(name);
        tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)
        })
    }
}

/// Execute `config`; flags in `opts` take precedence over the file.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.mc.seed = seed;
    }
    if let Some(dir) = &opts.out_dir {
        config.output.directory = dir.to_string_lossy().into_owned();
    }
    config.validate()?;
    let dir = Path::new(&config.output.directory).to_path_buf();
    fs::create_dir_all(&dir)?;
    let mut sink = Sink {
        dir,
        written: Vec::new(),
    };
    let details = match config.command {
        Command::Solve => run_solve(&config, &mut sink)?,
        Command::Efficiency => run_efficiency(&config, &mut sink)?,
        Command::Sweep => run_sweep(&config, opts.threads, &mut sink)?,
        Command::Mc => run_mc(&config, opts.threads, &mut sink)?,
    };
    let outputs: Vec<String> = sink
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = json!({
        "tool": "grating",
        "version": env!("CARGO_PKG_VERSION"),
        "command": config.command,
        "config": config,
        "seed": config.mc.seed,
        "threads": opts.threads,
        "outputs": outputs,
        "results": details,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    sink.json("manifest.json", &manifest)?;
    Ok(RunReport {
        outputs: sink.written,
        manifest,
    })
}

/// The configured surface; random profiles contribute sample 0 of the seed.
fn surface(config: &RunConfig) -> Result<grating_core::transform::GratingProfile, CliError> {
    match config.kl_model()? {
        Some(model) => Ok(draw_sample(&model, config.mc.seed, 0, 0)?.1),
        None => Ok(config.profile()?),
    }
}

fn run_solve(config: &RunConfig, sink: &mut Sink) -> Result<Value, CliError> {
    let k = config.k_values()[0];
    let wave = config.wave_at(k)?;
    let (record, field) = solve_config(&wave, &surface(config)?, &config.grid_rule())?;
    if config.wants(Format::Csv) {
        if config.output.field {
            sink.write(&field_filename(k, config.mc.seed), |out| field.write_csv(out))?;
        }
        let (d, n) = field.boundary_traces();
        sink.write("traces.csv", |out| {
            writeln!(out, "n,dirichlet_re,dirichlet_im,neumann_re,neumann_im")?;
            for ((idx, a), (_, b)) in d.iter().zip(n.iter()) {
                writeln!(out, "{idx},{},{},{},{}", a.re, a.im, b.re, b.im)?;
            }
            Ok(())
        })?;
        sink.write("record.csv", |out| write_sweep_csv(std::slice::from_ref(&record), out))?;
    }
    if config.wants(Format::Json) {
        sink.json("record.json", &record)?;
    }
    Ok(json!({ "quotient": record.quotient, "envelope": record.envelope, "eps": record.eps }))
}

fn run_efficiency(config: &RunConfig, sink: &mut Sink) -> Result<Value, CliError> {
    let k = config.k_values()[0];
    let wave = config.wave_at(k)?;
    let (_, field) = solve_config(&wave, &surface(config)?, &config.grid_rule())?;
    let (d, _) = field.boundary_traces();
    let amps = rayleigh_amplitudes(&d.sub(&incident_trace(d.modes()))?);
    let effs = efficiencies(&amps);
    let total: f64 = effs.values().sum();
    if config.wants(Format::Csv) {
        sink.write("efficiency.csv", |out| {
            writeln!(out, "n,amplitude_re,amplitude_im,efficiency")?;
            for (n, e) in &effs {
                let a = amps.amplitude(*n).expect("propagating amplitudes are kept");
                writeln!(out, "{n},{},{},{e}", a.re, a.im)?;
            }
            Ok(())
        })?;
    }
    if config.wants(Format::Json) {
        sink.json("efficiency.json", &json!({ "efficiencies": effs, "total": total }))?;
    }
    Ok(json!({ "total_efficiency": total }))
}

fn run_sweep(config: &RunConfig, threads: Option<usize>, sink: &mut Sink) -> Result<Value, CliError> {
    let template = config.wave_at(config.k_values()[0])?;
    let profile = config.profile()?;
    let ks = config.k_values();
    let out = sweep(
        &template,
        &profile,
        &ks,
        config.stability.eps_min,
        &config.grid_rule(),
        threads,
    )?;
    if out.records.is_empty() {
        log::warn!("no admissible wavenumbers: every k in the grid is within eps_min of a resonance");
    }
    let fit = match fit_exponent(&out.records) {
        Ok(f) => Some(f),
        Err(e) if config.stability.fit_exponent => return Err(e.into()),
        Err(e) => {
            log::info!("no exponent fit: {e}");
            None
        }
    };
    let failures: Vec<Value> = out
        .failures
        .iter()
        .map(|(k, e)| json!({ "k": k, "error": e.to_string() }))
        .collect();
    if config.wants(Format::Csv) {
        sink.write("sweep.csv", |w| write_sweep_csv(&out.records, w))?;
    }
    if config.wants(Format::Json) {
        sink.json(
            "sweep.json",
            &json!({
                "records": out.records,
                "skipped": out.skipped.iter().map(|(k, e)| json!({ "k": k, "eps": e })).collect::<Vec<_>>(),
                "failures": failures,
                "fit": fit,
            }),
        )?;
    }
    Ok(json!({
        "records": out.records.len(),
        "skipped": out.skipped.len(),
        "failures": out.failures.len(),
        "fit": fit,
    }))
}

fn run_mc(config: &RunConfig, threads: Option<usize>, sink: &mut Sink) -> Result<Value, CliError> {
    let model = config
        .kl_model()?
        .expect("validation requires a random profile for mc");
    let wave = config.wave_at(config.k_values()[0])?;
    let settings = McSettings {
        n_samples: config.mc.n_samples,
        master_seed: config.mc.seed,
        rule: config.grid_rule(),
        gamma0: Gamma0Rule::Default,
        eps_min: config.stability.eps_min,
        threads,
    };
    let out = monte_carlo(&model, &wave, &settings)?;
    if config.wants(Format::Csv) {
        sink.write("mc.csv", |w| write_mc_csv(&out.draws, w))?;
    }
    if config.wants(Format::Json) {
        sink.json("mc_summary.json", &out.summary)?;
    }
    Ok(serde_json::to_value(&out.summary).expect("summary serializes"))
}
