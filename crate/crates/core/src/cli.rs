//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 on success, 1 on domain errors (enumeration infeasible,
//! degenerate samples, bad inputs), 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dpf::{
    bound_report, check_gap_assumption, estimate_with_resample, exact_dpf, BoundReport, ExactPotential, StreamKey,
};
use crate::experiments::{
    run_concentration, run_convergence, write_concentration_csv, write_concentration_jsonl, write_convergence_csv,
    write_convergence_jsonl, PotentialSource, ToySource, DEFAULT_LAMBDAS,
};
use crate::output::RunMeta;
use crate::remote::{RemoteConfig, RemoteSource, DEFAULT_API_KEY_ENV};
use crate::seqmodel::{load_toy_model, Prompt, SamplerConfig, ToyModel, DEFAULT_ENUMERATION_CAP};
use crate::surface::{
    default_levels, extract_isohypses, interpolate_grid, io as surface_io, normalize_coords, render_svg, stratify,
    Method, SamplePoint, Stratum, SvgStyle,
};

#[derive(Debug, Parser)]
#[command(name = "kdps", version, about = "Decision potential surfaces via K-finite sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the potential of one prompt from K samples, with error bounds.
    Dpf(DpfArgs),
    /// Exact potential by enumerating every output sequence.
    Oracle(OracleArgs),
    /// Error against the reference potential as K grows.
    Converge(ConvergeArgs),
    /// Empirical tail probabilities against the concentration bound.
    Concentrate(ConcentrateArgs),
    /// Interpolated potential surface with isohypses and an SVG rendering.
    Surface(SurfaceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// `toy:<path>`, `analytic2d:alpha=<x>` or `remote:<model-name>`.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long = "top-p", default_value_t = 0.9)]
    top_p: f64,
    /// Redraws allowed when a sample set has fewer than two distinct outputs.
    #[arg(long = "max-resample", default_value_t = 0)]
    max_resample: u32,
    /// Largest output space the oracle will enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Debug, Args)]
struct RemoteArgs {
    #[arg(long = "base-url", default_value = "http://localhost:8000")]
    base_url: String,
    /// Environment variable holding the API key.
    #[arg(long = "api-key-env", default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    /// Generated tokens per sample.
    #[arg(long = "max-tokens", default_value_t = 16)]
    max_tokens: usize,
    #[arg(long = "max-in-flight", default_value_t = 4)]
    max_in_flight: usize,
    /// Completions per request.
    #[arg(long = "n-max", default_value_t = 8)]
    n_max: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long = "max-retries", default_value_t = 3)]
    max_retries: u32,
    /// Base backoff in seconds.
    #[arg(long, default_value_t = 0.5)]
    backoff: f64,
}

#[derive(Debug, Args)]
struct PromptArgs {
    /// Prompt key (repeatable). For remote models this is the prompt text.
    #[arg(long = "prompt")]
    prompts: Vec<String>,
    /// Prompt coordinates `u,v` (analytic2d), applied to every `--prompt`.
    #[arg(long)]
    coords: Option<String>,
    /// Points CSV supplying prompt ids and coordinates instead of `--prompt`.
    #[arg(long)]
    points: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DpfArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long)]
    coords: Option<String>,
    #[arg(long, default_value_t = 2500)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS.to_vec())]
    lambdas: Vec<f64>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long)]
    coords: Option<String>,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    prompts: PromptArgs,
    #[arg(long = "k-list", value_delimiter = ',', default_values_t = vec![10, 100, 1000, 10000])]
    k_list: Vec<usize>,
    /// Sample size of the reference estimate when enumeration is infeasible.
    #[arg(long = "k-ref", default_value_t = 20_000)]
    k_ref: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct ConcentrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    prompts: PromptArgs,
    #[arg(long = "k-list", value_delimiter = ',', default_values_t = vec![16, 64, 256, 1024])]
    k_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS.to_vec())]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Points CSV (`prompt_id,u,v`, or `prompt_id,e1,...,eD` for PCA).
    #[arg(long, conflicts_with = "lattice")]
    points: Option<PathBuf>,
    /// Sample an N x N lattice over [0,1]^2 (analytic2d models).
    #[arg(long)]
    lattice: Option<usize>,
    #[arg(long, default_value_t = 2500)]
    k: usize,
    /// Use the exact potential instead of the K-sample estimate.
    #[arg(long)]
    exact: bool,
    /// Mesh resolution per axis.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long, default_value = "linear")]
    method: Method,
    /// Contour levels; defaults to the zero threshold plus quartiles of phi.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Stratum threshold.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long = "band-tol", default_value_t = 0.0)]
    band_tol: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
enum ModelSpec {
    Toy(PathBuf),
    Analytic2d(f64),
    Remote(String),
}

fn parse_model_spec(spec: &str) -> Result<ModelSpec> {
    let (kind, rest) = spec.split_once(':').ok_or_else(|| anyhow!("model spec `{spec}` has no `<kind>:` prefix"))?;
    match kind {
        "toy" if !rest.is_empty() => Ok(ModelSpec::Toy(PathBuf::from(rest))),
        "analytic2d" => {
            let alpha = rest
                .strip_prefix("alpha=")
                .ok_or_else(|| anyhow!("expected `analytic2d:alpha=<x>`, got `{spec}`"))?
                .parse::<f64>()
                .with_context(|| format!("bad alpha in `{spec}`"))?;
            Ok(ModelSpec::Analytic2d(alpha))
        }
        "remote" if !rest.is_empty() => Ok(ModelSpec::Remote(rest.to_string())),
        _ => bail!("unknown model spec `{spec}` (expected toy:<path>, analytic2d:alpha=<x> or remote:<name>)"),
    }
}

enum Backend {
    Toy(ToySource),
    Remote(Box<RemoteSource>),
}

impl ModelArgs {
    fn sampler(&self) -> SamplerConfig {
        SamplerConfig { temperature: self.temperature, top_p: self.top_p, max_resample_attempts: self.max_resample }
    }

    fn meta(&self, command: &str) -> RunMeta {
        let mut meta = RunMeta::new(command, &self.model, self.seed, self.sampler());
        if self.top_p < 1.0 || self.temperature != 1.0 {
            meta.caveats.push(
                "sampler is not the model distribution (top_p < 1 or temperature != 1); bounds assume i.i.d. draws"
                    .into(),
            );
        }
        if self.model.starts_with("remote:") {
            meta.caveats.push(
                "remote logprobs are used as reported; some servers report them after temperature scaling".into(),
            );
        }
        meta
    }

    fn backend(&self) -> Result<Backend> {
        let sampler = self.sampler();
        sampler.validate()?;
        let toy = |model: ToyModel| Backend::Toy(ToySource { model, sampler, cap: self.cap });
        Ok(match parse_model_spec(&self.model)? {
            ModelSpec::Toy(path) => toy(load_toy_model(&path).with_context(|| format!("loading {}", path.display()))?),
            ModelSpec::Analytic2d(alpha) => toy(ToyModel::analytic2d(alpha)?),
            ModelSpec::Remote(name) => {
                let r = &self.remote;
                let cfg = RemoteConfig {
                    base_url: r.base_url.clone(),
                    model_name: name,
                    api_key_env: r.api_key_env.clone(),
                    request_timeout: r.timeout,
                    max_retries: r.max_retries,
                    backoff_base: r.backoff,
                    max_in_flight: r.max_in_flight,
                    max_tokens: r.max_tokens,
                    n_max: r.n_max,
                    sampler,
                };
                Backend::Remote(Box::new(RemoteSource::new(cfg)?))
            }
        })
    }
}

fn parse_coords(raw: &Option<String>) -> Result<Option<(f64, f64)>> {
    let Some(raw) = raw else { return Ok(None) };
    let (u, v) = raw.split_once(',').ok_or_else(|| anyhow!("coords must be `u,v`, got `{raw}`"))?;
    let (u, v): (f64, f64) = (u.trim().parse()?, v.trim().parse()?);
    if !(u.is_finite() && v.is_finite()) {
        bail!("coords must be finite");
    }
    Ok(Some((u, v)))
}

fn make_prompt(key: &str, coords: Option<(f64, f64)>) -> Prompt {
    Prompt { key: key.to_string(), coords }
}

impl PromptArgs {
    fn prompts(&self) -> Result<Vec<Prompt>> {
        if let Some(path) = &self.points {
            let file =
                surface_io::read_points(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
            let coords = file.coords()?;
            return Ok(file.prompt_ids.iter().zip(coords).map(|(id, c)| make_prompt(id, Some(c))).collect());
        }
        let coords = parse_coords(&self.coords)?;
        if self.prompts.is_empty() {
            return Ok(vec![make_prompt("", coords)]);
        }
        Ok(self.prompts.iter().map(|k| make_prompt(k, coords)).collect())
    }
}

#[derive(Serialize)]
struct DpfOutput<'a, S: Serialize> {
    meta: RunMeta,
    prompt: &'a Prompt,
    #[serde(flatten)]
    estimate: crate::dpf::PotentialEstimate<S>,
    bounds: BoundReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_inf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_assumption: Option<bool>,
}

#[derive(Serialize)]
struct OracleOutput<'a> {
    meta: RunMeta,
    prompt: &'a Prompt,
    #[serde(flatten)]
    exact: ExactPotential,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn cmd_dpf(args: &DpfArgs) -> Result<()> {
    let prompt = make_prompt(&args.prompt, parse_coords(&args.coords)?);
    let meta = args.model.meta("dpf");
    match args.model.backend()? {
        Backend::Toy(src) => {
            let (_, estimate) =
                estimate_with_resample(&src.model, &prompt, args.k, &src.sampler, StreamKey::new(args.model.seed))?;
            let bounds = bound_report(&estimate, args.delta, &args.lambdas)?;
            let exact = exact_dpf(&src.model, &prompt, src.cap).ok();
            let gap_assumption = exact.as_ref().map(|e| check_gap_assumption(e, &estimate));
            print_json(&DpfOutput {
                meta,
                prompt: &prompt,
                estimate,
                bounds,
                phi_inf: exact.map(|e| e.phi_inf),
                gap_assumption,
            })
        }
        Backend::Remote(src) => {
            let estimate = src.estimate(&prompt, StreamKey::new(args.model.seed), args.k)?;
            let bounds = bound_report(&estimate, args.delta, &args.lambdas)?;
            print_json(&DpfOutput { meta, prompt: &prompt, estimate, bounds, phi_inf: None, gap_assumption: None })
        }
    }
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let prompt = make_prompt(&args.prompt, parse_coords(&args.coords)?);
    if let ModelSpec::Remote(_) = parse_model_spec(&args.model.model)? {
        bail!("oracle requires an enumerable toy model");
    }
    let Backend::Toy(src) = args.model.backend()? else {
        bail!("oracle requires an enumerable toy model");
    };
    let exact = exact_dpf(&src.model, &prompt, src.cap)?;
    print_json(&OracleOutput { meta: args.model.meta("oracle"), prompt: &prompt, exact })
}

fn write_meta(path: &Path, meta: &RunMeta, extra: serde_json::Value) -> Result<()> {
    let mut value = serde_json::to_value(meta)?;
    if let (Some(obj), serde_json::Value::Object(more)) = (value.as_object_mut(), extra) {
        obj.extend(more);
    }
    fs::write(path, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let prompts = args.prompts.prompts()?;
    let seed = args.model.seed;
    let rows = match args.model.backend()? {
        Backend::Toy(src) => run_convergence(&src, &prompts, &args.k_list, args.k_ref, args.repeats, seed)?,
        Backend::Remote(src) => run_convergence(src.as_ref(), &prompts, &args.k_list, args.k_ref, args.repeats, seed)?,
    };
    create_out_dir(&args.out)?;
    let (name, file) = match args.format {
        Format::Csv => ("convergence.csv", args.out.join("convergence.csv")),
        Format::Json => ("convergence.jsonl", args.out.join("convergence.jsonl")),
    };
    let out = fs::File::create(&file)?;
    match args.format {
        Format::Csv => write_convergence_csv(&rows, out)?,
        Format::Json => write_convergence_jsonl(&rows, out)?,
    }
    let extra = serde_json::json!({
        "output": name,
        "k_list": args.k_list,
        "k_ref": args.k_ref,
        "repeats": args.repeats,
        "prompts": prompts.iter().map(|p| &p.key).collect::<Vec<_>>(),
        "degenerate_rows": rows.iter().filter(|r| r.is_degenerate()).count(),
    });
    write_meta(&args.out.join("convergence.meta.json"), &args.model.meta("converge"), extra)?;
    eprintln!("wrote {} rows to {}", rows.len(), file.display());
    Ok(())
}

fn cmd_concentrate(args: &ConcentrateArgs) -> Result<()> {
    let prompts = args.prompts.prompts()?;
    let Backend::Toy(src) = args.model.backend()? else {
        bail!("concentrate requires an enumerable toy model");
    };
    let rows = run_concentration(&src, &prompts, &args.k_list, &args.lambdas, args.trials, args.model.seed)?;
    create_out_dir(&args.out)?;
    let (name, file) = match args.format {
        Format::Csv => ("concentration.csv", args.out.join("concentration.csv")),
        Format::Json => ("concentration.jsonl", args.out.join("concentration.jsonl")),
    };
    let out = fs::File::create(&file)?;
    match args.format {
        Format::Csv => write_concentration_csv(&rows, out)?,
        Format::Json => write_concentration_jsonl(&rows, out)?,
    }
    let extra = serde_json::json!({
        "output": name,
        "k_list": args.k_list,
        "lambdas": args.lambdas,
        "trials": args.trials,
        "prompts": prompts.iter().map(|p| &p.key).collect::<Vec<_>>(),
    });
    write_meta(&args.out.join("concentration.meta.json"), &args.model.meta("concentrate"), extra)?;
    eprintln!("wrote {} rows to {}", rows.len(), file.display());
    Ok(())
}

fn surface_inputs(args: &SurfaceArgs) -> Result<(Vec<Prompt>, Option<Vec<f64>>)> {
    if let Some(n) = args.lattice {
        if n < 2 {
            bail!("lattice needs at least 2 points per axis");
        }
        let mut prompts = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let (u, v) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                prompts.push(make_prompt(&format!("p{i}_{j}"), Some((u, v))));
            }
        }
        return Ok((prompts, None));
    }
    let Some(path) = &args.points else {
        bail!("surface needs --points or --lattice");
    };
    let file = surface_io::read_points(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    let coords = file.coords()?;
    let prompts = file.prompt_ids.iter().zip(coords).map(|(id, c)| make_prompt(id, Some(c))).collect();
    Ok((prompts, file.phi))
}

fn cmd_surface(args: &SurfaceArgs) -> Result<()> {
    let (prompts, given_phi) = surface_inputs(args)?;
    let seed = args.model.seed;
    let phis: Vec<Option<f64>> = match given_phi {
        Some(phi) => phi.into_iter().map(Some).collect(),
        None => match args.model.backend()? {
            Backend::Toy(src) => prompts
                .par_iter()
                .enumerate()
                .map(|(pi, p)| {
                    if args.exact {
                        return exact_dpf(&src.model, p, src.cap).map(|e| Some(e.phi_inf));
                    }
                    let key = StreamKey { seed, prompt_index: pi as u64, trial: 0, attempt: 0 };
                    match estimate_with_resample(&src.model, p, args.k, &src.sampler, key) {
                        Ok((_, est)) => Ok(Some(est.phi_k)),
                        Err(crate::dpf::PotentialError::DegenerateSample { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_, _>>()?,
            Backend::Remote(src) => {
                if args.exact {
                    bail!("oracle requires an enumerable toy model");
                }
                prompts
                    .iter()
                    .enumerate()
                    .map(|(pi, p)| {
                        let key = StreamKey { seed, prompt_index: pi as u64, trial: 0, attempt: 0 };
                        match src.estimate(p, key, args.k) {
                            Ok(est) => Ok(Some(est.phi_k)),
                            Err(crate::dpf::PotentialError::DegenerateSample { .. }) => Ok(None),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
        },
    };

    let raw: Vec<(f64, f64)> = prompts.iter().map(|p| p.coords.expect("surface prompts carry coords")).collect();
    let norm = normalize_coords(&raw);
    let mut skipped = Vec::new();
    let points: Vec<SamplePoint> = prompts
        .iter()
        .zip(norm)
        .zip(&phis)
        .filter_map(|((p, (u, v)), phi)| match phi {
            Some(phi) => Some(SamplePoint::new(p.key.clone(), u, v, *phi)),
            None => {
                skipped.push(p.key.clone());
                None
            }
        })
        .collect();
    if !skipped.is_empty() {
        eprintln!("skipped {} degenerate prompt(s)", skipped.len());
    }

    let grid = interpolate_grid(&points, args.grid, args.grid, args.method)?;
    let levels = args.levels.clone().unwrap_or_else(|| default_levels(&points));
    let sets = extract_isohypses(&grid, &levels);
    let strata = stratify(&grid, args.epsilon, args.band_tol)?;

    create_out_dir(&args.out)?;
    let meta = args.model.meta("surface");
    surface_io::write_grid_csv(&grid, fs::File::create(args.out.join("grid.csv"))?)?;
    fs::write(
        args.out.join("isohypses.json"),
        serde_json::to_string_pretty(&surface_io::isohypses_json(&sets))? + "\n",
    )?;
    let style = SvgStyle {
        title: Some(format!("decision potential surface ({})", args.model.model)),
        metadata: Some(serde_json::to_string(&meta)?),
        ..SvgStyle::default()
    };
    fs::write(args.out.join("surface.svg"), render_svg(&grid, &sets, &style))?;
    let extra = serde_json::json!({
        "outputs": ["grid.csv", "isohypses.json", "surface.svg"],
        "k": args.k,
        "exact": args.exact,
        "grid": args.grid,
        "method": args.method,
        "levels": sets.iter().map(|s| s.level).collect::<Vec<_>>(),
        "points": points.len(),
        "skipped_prompts": skipped,
        "strata": {
            "epsilon": strata.epsilon,
            "band_tol": strata.band_tol,
            "margin_nats": strata.margin_nats(),
            "barrier": strata.count(Stratum::Barrier),
            "well": strata.count(Stratum::Well),
            "isohypse": strata.count(Stratum::Isohypse),
            "invalid": strata.count(Stratum::Invalid),
        },
    });
    write_meta(&args.out.join("surface.meta.json"), &meta, extra)?;
    eprintln!("wrote grid.csv, isohypses.json, surface.svg to {}", args.out.display());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Dpf(a) => cmd_dpf(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Concentrate(a) => cmd_concentrate(a),
        Command::Surface(a) => cmd_surface(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
