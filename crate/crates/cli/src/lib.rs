//! `bayssi` subcommands: simulate, identify, stabilise, spectrum.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use bayssi_core::io::{
    fmt_f64, ingest_csv, read_json, save_chain, save_vb, write_json, write_rows_csv, write_timeseries_csv,
};
use bayssi_core::posterior::{
    align_modes, chain_observability_samples, draw_observability_samples, propagate_all, stabilisation,
    ModalPosterior, PosteriorSummary, Source, StabilisationConfig,
};
use bayssi_core::subspace::{build_hankel, covariance_blocks, modal_from_state_matrix, ssi_cov_from_blocks, PoleKind};
use bayssi_core::{
    run_gibbs, run_vb, welch_psd, BenchmarkConfig, GibbsConfig, ModalSet, PriorSpec, Rng, StackedData, TimeSeries,
    VbConfig, WelchParams, WelchSpectrum,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "bayssi", version, about = "Bayesian covariance-driven stochastic subspace identification")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the shear-frame benchmark and write its response as CSV.
    Simulate(SimulateArgs),
    /// Identify modal parameters at one model order.
    Identify(IdentifyArgs),
    /// Run VB over several model orders for a stabilisation diagram.
    Stabilise(StabiliseArgs),
    /// Welch power spectral density of every channel and their sum.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Ssi,
    Gibbs,
    Vb,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config with any of the simulation fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Numeric CSV, one column per channel, optional header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sample rate in Hz; read from a `<input>.json` sidecar when omitted.
    #[arg(long)]
    pub fs: Option<f64>,
    /// JSON config with any of the resolved-config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub block_rows: Option<usize>,
    /// Model order; repeat for several orders.
    #[arg(long = "order")]
    pub orders: Vec<usize>,
    /// Prior overrides (JSON, scalar values expand to scaled identities).
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of posterior draws propagated to modal parameters (VB).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Keep the Hankel rows uncentred.
    #[arg(long)]
    pub no_center: bool,
    /// Drop the latent cross-covariance terms from the VB column update.
    #[arg(long)]
    pub strict_paper_vb: bool,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub engine: Option<Engine>,
    /// Gibbs sweeps including burn-in.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Fraction of initial sweeps discarded.
    #[arg(long)]
    pub burn_in: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StabiliseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub segment: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub input: PathBuf,
    pub fs: Option<f64>,
    pub block_rows: usize,
    pub order: usize,
    pub engine: Engine,
    pub center: bool,
    pub seed: u64,
    pub draws: usize,
    pub gibbs: GibbsConfig,
    pub vb: VbConfig,
    pub priors: PriorSpec,
    pub welch: WelchParams,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            fs: None,
            block_rows: 15,
            order: 8,
            engine: Engine::Vb,
            center: true,
            seed: 0,
            draws: 4000,
            gibbs: GibbsConfig::default(),
            vb: VbConfig::default(),
            priors: PriorSpec::default(),
            welch: WelchParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabiliseConfig {
    pub input: PathBuf,
    pub fs: Option<f64>,
    pub block_rows: usize,
    pub orders: Vec<usize>,
    pub center: bool,
    pub seed: u64,
    pub draws: usize,
    pub vb: VbConfig,
    pub priors: PriorSpec,
    pub welch: WelchParams,
}

impl Default for StabiliseConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            fs: None,
            block_rows: 15,
            orders: (2..=20).step_by(2).collect(),
            center: true,
            seed: 0,
            draws: 500,
            vb: VbConfig::default(),
            priors: PriorSpec::default(),
            welch: WelchParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub input: PathBuf,
    pub fs: Option<f64>,
    pub welch: WelchParams,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            fs: None,
            welch: WelchParams::default(),
        }
    }
}

/// Metadata written next to a simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub fs: f64,
    pub channels: Vec<String>,
    pub n_samples: usize,
    pub seed: u64,
    pub model: BenchmarkConfig,
    pub natural_frequencies: Vec<f64>,
    pub damping_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub what: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub complete: bool,
    pub failures: Vec<Failure>,
    pub started_unix_secs: u64,
    pub timings_secs: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

/// Output directory owned by one process through a lockfile. Files are
/// tracked so a failed run can remove what it wrote.
struct Artifacts {
    dir: PathBuf,
    created: bool,
    lock: PathBuf,
    files: Vec<String>,
    timings: BTreeMap<String, f64>,
    started: u64,
}

const LOCK_NAME: &str = ".bayssi.lock";

impl Artifacts {
    fn open(dir: &Path) -> anyhow::Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = dir.join(LOCK_NAME);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .with_context(|| format!("output directory {} is locked by another run", dir.display()))?;
        Ok(Self {
            dir: dir.to_owned(),
            created,
            lock,
            files: Vec::new(),
            timings: BTreeMap::new(),
            started: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_owned());
        }
        self.dir.join(name)
    }

    fn time(&mut self, what: &str, start: Instant) {
        self.timings.insert(what.to_owned(), start.elapsed().as_secs_f64());
    }

    fn finish(mut self, command: &str, seed: Option<u64>, failures: Vec<Failure>) -> anyhow::Result<Outcome> {
        let complete = failures.is_empty();
        let manifest = RunManifest {
            tool: "bayssi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            complete,
            failures,
            started_unix_secs: self.started,
            timings_secs: std::mem::take(&mut self.timings),
            files: self.files.clone(),
        };
        let path = self.path("run_manifest.json");
        write_json(&path, &manifest)?;
        fs::remove_file(&self.lock)?;
        Ok(if complete { Outcome::Complete } else { Outcome::Partial })
    }

    fn abort(self) {
        if self.created {
            let _ = fs::remove_dir_all(&self.dir);
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(f));
        }
        let _ = fs::remove_file(&self.lock);
    }
}

/// Runs a command body against an output directory, cleaning up on failure.
fn with_artifacts<F>(dir: &Path, command: &str, seed: Option<u64>, body: F) -> anyhow::Result<Outcome>
where
    F: FnOnce(&mut Artifacts) -> anyhow::Result<Vec<Failure>>,
{
    let mut art = Artifacts::open(dir)?;
    match body(&mut art) {
        Ok(failures) => art.finish(command, seed, failures),
        Err(e) => {
            art.abort();
            Err(e)
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Stabilise(a) => cmd_stabilise(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    }
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: &Option<PathBuf>) -> anyhow::Result<T> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn sidecar_path(input: &Path) -> PathBuf {
    input.with_extension("json")
}

fn resolve_fs(input: &Path, fs: Option<f64>) -> anyhow::Result<f64> {
    if let Some(fs) = fs {
        return Ok(fs);
    }
    let side = sidecar_path(input);
    if side.exists() {
        let s: Sidecar = read_json(&side).with_context(|| format!("reading sidecar {}", side.display()))?;
        return Ok(s.fs);
    }
    bail!("no sample rate: pass --fs or provide {}", side.display())
}

fn load_series(input: &Path, fs: f64) -> anyhow::Result<TimeSeries> {
    if input.as_os_str().is_empty() {
        bail!("no input file given (--input)");
    }
    ingest_csv(input, fs).with_context(|| format!("reading {}", input.display()))
}

fn load_priors(path: &Option<PathBuf>, current: PriorSpec) -> anyhow::Result<PriorSpec> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading priors {}", p.display())),
        None => Ok(current),
    }
}

pub fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    let mut cfg: SimulateConfig = load_config(&a.config)?;
    if let Some(n) = a.samples {
        cfg.benchmark.n_samples = n;
    }
    if let Some(fs) = a.fs {
        cfg.benchmark.fs = fs;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    with_artifacts(&a.out, "simulate", Some(seed), |art| {
        write_json(&art.path("resolved_config.json"), &cfg)?;
        let start = Instant::now();
        let ts = cfg.benchmark.simulate(&mut Rng::new(seed, 0))?;
        art.time("simulate", start);
        let modes = cfg.benchmark.continuous()?.modes();
        write_timeseries_csv(&art.path("timeseries.csv"), &ts)?;
        let side = Sidecar {
            fs: ts.fs(),
            channels: ts.names().to_vec(),
            n_samples: ts.n_samples(),
            seed,
            model: cfg.benchmark.clone(),
            natural_frequencies: modes.iter().map(|m| m.0).collect(),
            damping_ratios: modes.iter().map(|m| m.1).collect(),
        };
        write_json(&art.path("timeseries.json"), &side)?;
        Ok(Vec::new())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub frequency: f64,
    pub damping: f64,
    pub kind: PoleKind,
    pub shape_re: Vec<f64>,
    pub shape_im: Vec<f64>,
}

fn mode_records(set: &ModalSet) -> Vec<ModeRecord> {
    set.modes
        .iter()
        .map(|m| ModeRecord {
            frequency: m.frequency,
            damping: m.damping,
            kind: m.kind,
            shape_re: m.shape.iter().map(|z| z.re).collect(),
            shape_im: m.shape.iter().map(|z| z.im).collect(),
        })
        .collect()
}

fn write_welch(art: &mut Artifacts, name: &str, w: &WelchSpectrum, names: &[String]) -> anyhow::Result<()> {
    let mut header = vec!["frequency", "sum"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<f64>> = (0..w.frequencies.len())
        .map(|k| {
            let mut r = vec![w.frequencies[k], w.sum[k]];
            r.extend(w.psd.column(k).iter());
            r
        })
        .collect();
    write_rows_csv(&art.path(name), Some(&header), rows.iter().map(Vec::as_slice))?;
    Ok(())
}

fn write_modal_posterior(art: &mut Artifacts, post: &ModalPosterior) -> anyhow::Result<PosteriorSummary> {
    for (k, m) in post.modes.iter().enumerate() {
        let rows: Vec<[f64; 3]> = (0..m.frequency.len())
            .map(|i| [m.draw_index[i] as f64, m.frequency[i], m.damping[i]])
            .collect();
        write_rows_csv(
            &art.path(&format!("mode{}_draws.csv", k + 1)),
            Some(&["draw", "frequency", "damping"]),
            rows.iter().map(|r| r.as_slice()),
        )?;
        let l = m.reference_shape.len();
        let header: Vec<String> = std::iter::once("draw".to_owned())
            .chain((1..=l).flat_map(|c| [format!("re{c}"), format!("im{c}")]))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = m
            .shapes
            .iter()
            .zip(&m.draw_index)
            .map(|(s, &i)| std::iter::once(i as f64).chain(s.iter().flat_map(|z| [z.re, z.im])).collect())
            .collect();
        write_rows_csv(
            &art.path(&format!("mode{}_shapes.csv", k + 1)),
            Some(&header),
            rows.iter().map(Vec::as_slice),
        )?;
    }
    let rows: Vec<[f64; 2]> = post.unassigned.iter().map(|&(f, z)| [f, z]).collect();
    write_rows_csv(
        &art.path("unassigned_draws.csv"),
        Some(&["frequency", "damping"]),
        rows.iter().map(|r| r.as_slice()),
    )?;
    let summary = post.summary();
    write_json(&art.path("posterior_summary.json"), &summary)?;
    Ok(summary)
}

pub fn resolve_identify(a: &IdentifyArgs) -> anyhow::Result<IdentifyConfig> {
    let mut cfg: IdentifyConfig = load_config(&a.input.config)?;
    if let Some(p) = &a.input.input {
        cfg.input = p.clone();
    }
    if a.input.fs.is_some() {
        cfg.fs = a.input.fs;
    }
    cfg.fs = Some(resolve_fs(&cfg.input, cfg.fs)?);
    let m = &a.model;
    if let Some(j) = m.block_rows {
        cfg.block_rows = j;
    }
    match m.orders.as_slice() {
        [] => {}
        [d] => cfg.order = *d,
        _ => bail!("identify takes a single --order; use stabilise for several"),
    }
    if let Some(e) = a.engine {
        cfg.engine = e;
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
    cfg.gibbs.seed = cfg.seed;
    cfg.vb.seed = cfg.seed;
    if let Some(n) = a.samples {
        cfg.gibbs.n_samples = n;
    }
    if let Some(b) = a.burn_in {
        cfg.gibbs.burn_in_fraction = b;
    }
    if let Some(n) = m.draws {
        cfg.draws = n;
    }
    if m.no_center {
        cfg.center = false;
    }
    if m.strict_paper_vb {
        cfg.vb.strict_paper = true;
    }
    cfg.priors = load_priors(&m.priors, cfg.priors.clone())?;
    cfg.gibbs.validate()?;
    cfg.vb.validate()?;
    if cfg.draws == 0 {
        bail!("--draws must be positive");
    }
    Ok(cfg)
}

pub fn cmd_identify(a: IdentifyArgs) -> anyhow::Result<Outcome> {
    let cfg = resolve_identify(&a)?;
    let fs = cfg.fs.expect("resolved");
    let ts = load_series(&cfg.input, fs)?;
    with_artifacts(&a.input.out, "identify", Some(cfg.seed), |art| {
        write_json(&art.path("resolved_config.json"), &cfg)?;
        let start = Instant::now();
        let hp = build_hankel(&ts, cfg.block_rows, cfg.center)?;
        let real = ssi_cov_from_blocks(&covariance_blocks(&hp), ts.channels(), cfg.order)?;
        let reference = modal_from_state_matrix(&real.a, &real.c, ts.dt())?;
        art.time("ssi", start);
        write_json(&art.path("ssi_modes.json"), &mode_records(&reference))?;
        if cfg.engine == Engine::Ssi {
            return Ok(Vec::new());
        }

        let data = StackedData::from_hankel(&hp)?;
        let [d1, d2] = data.view_dims();
        let priors = cfg.priors.resolve(d1, d2, cfg.order)?;
        let (draws, source) = match cfg.engine {
            Engine::Gibbs => {
                let start = Instant::now();
                let chain = run_gibbs(&data, &priors, &cfg.gibbs)?;
                art.time("gibbs", start);
                for name in [
                    "chain_manifest.json",
                    "w_samples.csv",
                    "mu_samples.csv",
                    "sigma1_samples.csv",
                    "sigma2_samples.csv",
                ] {
                    art.path(name);
                }
                save_chain(&art.dir, &chain, &priors)?;
                (chain_observability_samples(&chain)?, Source::Gibbs)
            }
            Engine::Vb => {
                let start = Instant::now();
                let post = run_vb(&data, &priors, &cfg.vb)?;
                art.time("vb", start);
                let manifest = save_vb(&art.dir, &post, &priors, &cfg.vb)?;
                for f in &manifest.files {
                    art.path(f);
                }
                art.path("vb_manifest.json");
                let mut rng = Rng::new(cfg.seed, 1);
                (draw_observability_samples(&post, cfg.draws, &mut rng)?, Source::Vb)
            }
            Engine::Ssi => unreachable!(),
        };
        let start = Instant::now();
        let (samples, excluded) = propagate_all(&draws, ts.channels(), ts.dt(), source, cfg.order);
        let post = align_modes(&samples, &reference, excluded)?;
        art.time("propagate", start);
        write_modal_posterior(art, &post)?;
        if cfg.welch.segment_len <= ts.n_samples() {
            let w = welch_psd(&ts, &cfg.welch)?;
            write_welch(art, "welch.csv", &w, ts.names())?;
        }
        Ok(Vec::new())
    })
}

pub fn resolve_stabilise(a: &StabiliseArgs) -> anyhow::Result<StabiliseConfig> {
    let mut cfg: StabiliseConfig = load_config(&a.input.config)?;
    if let Some(p) = &a.input.input {
        cfg.input = p.clone();
    }
    if a.input.fs.is_some() {
        cfg.fs = a.input.fs;
    }
    cfg.fs = Some(resolve_fs(&cfg.input, cfg.fs)?);
    let m = &a.model;
    if let Some(j) = m.block_rows {
        cfg.block_rows = j;
    }
    if !m.orders.is_empty() {
        cfg.orders = m.orders.clone();
    }
    cfg.orders.sort_unstable();
    cfg.orders.dedup();
    if cfg.orders.is_empty() {
        bail!("no model orders given");
    }
    if let Some(s) = m.seed {
        cfg.seed = s;
    }
    cfg.vb.seed = cfg.seed;
    if let Some(n) = m.draws {
        cfg.draws = n;
    }
    if m.no_center {
        cfg.center = false;
    }
    if m.strict_paper_vb {
        cfg.vb.strict_paper = true;
    }
    cfg.priors = load_priors(&m.priors, cfg.priors.clone())?;
    cfg.vb.validate()?;
    if cfg.draws == 0 {
        bail!("--draws must be positive");
    }
    Ok(cfg)
}

pub fn cmd_stabilise(a: StabiliseArgs) -> anyhow::Result<Outcome> {
    let cfg = resolve_stabilise(&a)?;
    let ts = load_series(&cfg.input, cfg.fs.expect("resolved"))?;
    with_artifacts(&a.input.out, "stabilise", Some(cfg.seed), |art| {
        write_json(&art.path("resolved_config.json"), &cfg)?;
        let start = Instant::now();
        let sc = StabilisationConfig {
            block_rows: cfg.block_rows,
            center: cfg.center,
            orders: cfg.orders.clone(),
            n_draws: cfg.draws,
            priors: cfg.priors.clone(),
            vb: cfg.vb.clone(),
            seed: cfg.seed,
        };
        let stab = stabilisation(&ts, &sc)?;
        art.time("stabilisation", start);
        let rows: Vec<[f64; 3]> = stab
            .points
            .iter()
            .map(|p| [p.order as f64, p.frequency, p.damping])
            .collect();
        write_rows_csv(
            &art.path("stabilisation.csv"),
            Some(&["order", "frequency", "damping"]),
            rows.iter().map(|r| r.as_slice()),
        )?;
        let per_order: Vec<serde_json::Value> = stab
            .excluded
            .iter()
            .zip(&stab.elbo_traces)
            .map(|(&(order, excluded), (_, trace))| {
                serde_json::json!({
                    "order": order,
                    "excluded_draws": excluded,
                    "vb_iterations": trace.len().saturating_sub(1),
                    "final_elbo": trace.last(),
                })
            })
            .collect();
        write_json(
            &art.path("stabilisation_summary.json"),
            &serde_json::json!({
                "orders": stab.orders,
                "completed": per_order,
                "failures": stab.failures,
            }),
        )?;
        if cfg.welch.segment_len <= ts.n_samples() {
            let w = welch_psd(&ts, &cfg.welch)?;
            write_welch(art, "welch_sum.csv", &w, ts.names())?;
        }
        Ok(stab
            .failures
            .iter()
            .map(|f| Failure {
                what: format!("order {}", f.order),
                message: f.message.clone(),
            })
            .collect())
    })
}

pub fn cmd_spectrum(a: SpectrumArgs) -> anyhow::Result<Outcome> {
    let mut cfg: SpectrumConfig = load_config(&a.input.config)?;
    if let Some(p) = &a.input.input {
        cfg.input = p.clone();
    }
    if a.input.fs.is_some() {
        cfg.fs = a.input.fs;
    }
    cfg.fs = Some(resolve_fs(&cfg.input, cfg.fs)?);
    if let Some(s) = a.segment {
        cfg.welch.segment_len = s;
    }
    if let Some(o) = a.overlap {
        cfg.welch.overlap = o;
    }
    let ts = load_series(&cfg.input, cfg.fs.expect("resolved"))?;
    with_artifacts(&a.input.out, "spectrum", None, |art| {
        write_json(&art.path("resolved_config.json"), &cfg)?;
        let w = welch_psd(&ts, &cfg.welch)?;
        write_welch(art, "welch.csv", &w, ts.names())?;
        Ok(Vec::new())
    })
}

/// Decimal form used in every numeric CSV.
pub fn format_value(v: f64) -> String {
    fmt_f64(v)
}
