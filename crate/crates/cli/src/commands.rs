use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use rflab::algebra::{invariant_sym_basis, submersion_basis, validate as validate_spec, HomogeneousSpace, HomogeneousSpaceSpec};
use rflab::ancient::{self, ShootConfig};
use rflab::catalog::{self, CatalogEntry};
use rflab::einstein::{self, DiagonalBackend, EinsteinConfig, EngineBackend, ScalarBackend};
use rflab::flow::{self, Direction, FlowTrajectory, IntegratorConfig, ProjectedFlowContext};
use rflab::formats::{self, RunManifest};
use rflab::linalg::{self, Mat};

use crate::{BackendArg, FlowKindArg};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// A space given on the command line: a catalog id or a JSON definition file.
struct Loaded {
    id: String,
    entry: Option<CatalogEntry>,
    spec: Option<HomogeneousSpaceSpec>,
}

fn load(space: &str) -> Result<Loaded> {
    if space.ends_with(".json") || Path::new(space).is_file() {
        let text = fs::read_to_string(space).with_context(|| format!("reading {space}"))?;
        let spec = formats::parse_space_json(&text)?;
        return Ok(Loaded { id: space.to_string(), entry: None, spec: Some(spec) });
    }
    match catalog::lookup(space) {
        Ok(entry) => {
            let spec = entry.space_spec().cloned();
            Ok(Loaded { id: space.to_string(), entry: Some(entry), spec })
        }
        Err(_) => usage(format!("unknown space {space:?}; known ids: {}", catalog::catalog_ids().join(", "))),
    }
}

fn built(loaded: &Loaded) -> Result<HomogeneousSpace> {
    match &loaded.spec {
        Some(spec) => Ok(HomogeneousSpace::new(spec.clone())?),
        None => usage(format!("{} has no structure constants", loaded.id)),
    }
}

/// A known-metric label of `entry`, or a coefficient list.
fn coords_or_label(text: &str, entry: Option<&CatalogEntry>) -> Result<Vec<f64>> {
    if let Some(k) = entry.and_then(|e| e.einstein(text.trim())) {
        return Ok(k.coords.clone());
    }
    formats::parse_coefficients(text).with_context(|| format!("{text:?} is neither a known label nor a coefficient list"))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value)?;
    writeln!(lock)?;
    Ok(())
}

fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn write_csv(path: &Path, traj: &FlowTrajectory) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    formats::write_trajectory_csv(traj, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn validate(space: &str) -> Result<ExitCode> {
    let loaded = load(space)?;
    let Some(spec) = &loaded.spec else {
        return usage(format!("{} is a closed-form model without structure constants", loaded.id));
    };
    let report = validate_spec(spec);
    print_json(&json!({ "space": loaded.id, "passed": report.passed(), "checks": report.checks }))?;
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

enum Backend<'a> {
    Engine(EngineBackend<'a>),
    Model(DiagonalBackend<'a>),
}

impl Backend<'_> {
    fn as_dyn(&self) -> &dyn ScalarBackend {
        match self {
            Backend::Engine(b) => b,
            Backend::Model(b) => b,
        }
    }
}

fn choose_backend<'a>(loaded: &'a Loaded, space: Option<&'a HomogeneousSpace>, choice: Option<BackendArg>) -> Result<Backend<'a>> {
    let model = loaded.entry.as_ref().filter(|e| e.base_id.is_none()).and_then(|e| e.model.as_ref());
    match (choice, space, model) {
        (Some(BackendArg::Model), _, Some(m)) | (None, None, Some(m)) => Ok(Backend::Model(DiagonalBackend { model: m })),
        (Some(BackendArg::Model), _, None) => usage(format!("{} has no closed-form model", loaded.id)),
        (_, Some(sp), _) => Ok(Backend::Engine(EngineBackend::new(sp)?)),
        (_, None, _) => usage(format!("{} has no structure constants", loaded.id)),
    }
}

fn maybe_space(loaded: &Loaded) -> Result<Option<HomogeneousSpace>> {
    loaded.spec.as_ref().map(|s| HomogeneousSpace::new(s.clone())).transpose().map_err(Into::into)
}

pub fn einstein(space: &str, seeds: usize, rng_seed: u64, choice: Option<BackendArg>) -> Result<ExitCode> {
    if seeds == 0 {
        return usage("--seeds must be positive");
    }
    let loaded = load(space)?;
    let sp = maybe_space(&loaded)?;
    let backend = choose_backend(&loaded, sp.as_ref(), choice)?;
    let b = backend.as_dyn();
    let mut perms = loaded.entry.as_ref().map(|e| e.symmetry_permutations.clone()).unwrap_or_default();
    perms.retain(|p| p.len() == b.coords());
    let starts = einstein::random_seeds(b, seeds, rng_seed);
    let points = einstein::find_einstein_multi(b, &starts, &perms, &EinsteinConfig::default());
    print_json(&json!({ "space": loaded.id, "backend": b.name(), "seeds": seeds, "points": points }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn coindex(space: &str, at: &str, choice: Option<BackendArg>) -> Result<ExitCode> {
    let loaded = load(space)?;
    let sp = maybe_space(&loaded)?;
    let backend = choose_backend(&loaded, sp.as_ref(), choice)?;
    let x = coords_or_label(at, loaded.entry.as_ref())?;
    if x.len() != backend.as_dyn().coords() {
        return usage(format!("expected {} coefficients, got {}", backend.as_dyn().coords(), x.len()));
    }
    let point = einstein::analyze_point(backend.as_dyn(), &x, &EinsteinConfig::default())?;
    print_json(&json!({ "space": loaded.id, "point": point }))?;
    Ok(ExitCode::SUCCESS)
}

pub struct FlowArgs {
    pub space: String,
    pub kind: FlowKindArg,
    pub from: String,
    pub base: Option<String>,
    pub t0: f64,
    pub t1: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FlowConfigRecord<'a> {
    space: &'a str,
    kind: &'static str,
    from: &'a str,
    base: Option<&'a str>,
    t0: f64,
    t1: f64,
    integrator: &'a IntegratorConfig,
}

/// Base Einstein metric of a fibration from a label (of the base entry) or coordinates.
fn base_metric(loaded: &Loaded, space: &HomogeneousSpace, text: &str) -> Result<(HomogeneousSpace, Mat, einstein::EinsteinPoint)> {
    if !space.has_toral_split() {
        return usage(format!("{} is not a torus fibration", loaded.id));
    }
    let base = space.base()?;
    let base_entry = loaded.entry.as_ref().and_then(|e| e.base_id.as_deref()).map(catalog::lookup).transpose()?;
    let coords = coords_or_label(text, base_entry.as_ref())?;
    let (pbar, point) = ancient::base_einstein_metric(&base, &coords)?;
    Ok((base, pbar, point))
}

pub fn flow(args: &FlowArgs, argv: &[String]) -> Result<ExitCode> {
    let loaded = load(&args.space)?;
    let space = built(&loaded)?;
    let cfg = IntegratorConfig { rel_tol: args.rtol, abs_tol: args.atol, max_step: args.max_step, ..IntegratorConfig::default() };
    cfg.validate()?;
    if !(args.t0.is_finite() && args.t1.is_finite()) {
        return usage("--t0 and --t1 must be finite");
    }
    let direction = if args.t1 >= args.t0 { Direction::Forward } else { Direction::Backward };
    let horizon = (args.t1 - args.t0).abs();
    let mut context = json!({});
    let (tag, traj) = match args.kind {
        FlowKindArg::Rf | FlowKindArg::Nrf => {
            if args.base.is_some() {
                return usage("--base applies to the projected flow only");
            }
            let basis = invariant_sym_basis(&space)?;
            let backend = EngineBackend::new(&space)?;
            let x = coords_or_label(&args.from, loaded.entry.as_ref().filter(|e| e.base_id.is_none()))?;
            if x.len() != backend.coords() {
                return usage(format!("expected {} coefficients, got {}", backend.coords(), x.len()));
            }
            let mut p = backend.metric(&x);
            if linalg::min_eigenvalue(&p) <= 0.0 {
                return usage("initial metric is not positive definite");
            }
            if args.kind == FlowKindArg::Nrf {
                p /= p.determinant().powf(1.0 / space.dim_m() as f64);
                let traj = flow::normalized_flow(&space, &basis, &basis.coefficients(&p), &cfg, direction, args.t0, horizon)?;
                ("nrf", traj)
            } else {
                let traj = flow::ricci_flow(&space, &basis, &basis.coefficients(&p), &cfg, direction, args.t0, horizon)?;
                ("rf", traj)
            }
        }
        FlowKindArg::Prf => {
            let Some(base_text) = &args.base else {
                return usage("the projected flow needs --base");
            };
            let (base, pbar, point) = base_metric(&loaded, &space, base_text)?;
            let ctx = ProjectedFlowContext::new(&space, &base, &pbar)?;
            let basis = submersion_basis(&space)?;
            let from = formats::parse_coefficients(&args.from)?;
            let p = match from.len() {
                // A vertical scale s: s Id ⊕ P̄.
                1 if from[0] >= 0.0 => linalg::direct_sum(&(Mat::identity(space.dim_t(), space.dim_t()) * from[0]), &pbar),
                n if n == basis.len() => basis.matrix(&from),
                n => return usage(format!("--from takes one vertical scale or {} coefficients, got {n}", basis.len())),
            };
            let norm = ctx.inner(&p, &p);
            if !(norm > 0.0 && norm.is_finite()) {
                return usage("initial metric has zero norm");
            }
            let p = &p / norm.sqrt();
            let mut traj = flow::projected_flow(&space, &base, &basis, &ctx, &basis.coefficients(&p), &cfg, direction, horizon)?;
            for t in traj.times.iter_mut() {
                *t += args.t0;
            }
            context = json!({ "base_coefficients": point.coefficients, "lambda": ctx.lambda });
            ("prf", traj)
        }
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}_{tag}.csv", loaded.id.replace(['/', '\\'], "_"))));
    write_csv(&out, &traj)?;
    let record = FlowConfigRecord { space: &loaded.id, kind: tag, from: &args.from, base: args.base.as_deref(), t0: args.t0, t1: args.t1, integrator: &cfg };
    let manifest = RunManifest {
        command: argv.to_vec(),
        catalog_id: loaded.id.clone(),
        config_hash: config_hash(&record)?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: vec![out.display().to_string()],
        context,
        config: serde_json::to_value(&record)?,
    };
    let mpath = manifest_path(&out);
    write_manifest(&mpath, &manifest)?;
    print_json(&json!({
        "csv": out.display().to_string(),
        "manifest": mpath.display().to_string(),
        "stop": traj.stop,
        "final_time": traj.last_time(),
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub struct AncientArgs {
    pub fibration: String,
    pub base_einstein: String,
    pub scan: Option<usize>,
    pub dir: Option<String>,
    pub eps: f64,
    pub rng_seed: u64,
    pub out: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
}

#[derive(Serialize)]
struct AncientConfigRecord<'a> {
    fibration: &'a str,
    base_einstein: &'a str,
    scan: Option<usize>,
    dir: Option<&'a str>,
    eps: f64,
    rng_seed: u64,
    shoot: &'a ShootConfig,
}

pub fn ancient(args: &AncientArgs, argv: &[String]) -> Result<ExitCode> {
    let loaded = load(&args.fibration)?;
    let space = built(&loaded)?;
    let (base, pbar, point) = base_metric(&loaded, &space, &args.base_einstein)?;
    let ctx = ProjectedFlowContext::new(&space, &base, &pbar)?;
    let expected = ancient::expected_unstable_dim(&space, point.coindex)?;
    let fp = ancient::linearize_at_collapse(&space, &base, ctx, Some(expected))?;
    if !(args.eps == 0.0 || (1e-8..=1e-3).contains(&args.eps)) {
        return usage("--eps must be 0 or lie in [1e-8, 1e-3]");
    }
    let cfg = ShootConfig::default();
    let grid = match (&args.dir, args.scan) {
        (Some(text), _) => {
            let c = formats::parse_coefficients(text)?;
            if c.len() != fp.unstable_dim() {
                return usage(format!("--dir takes {} coefficients, got {}", fp.unstable_dim(), c.len()));
            }
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return usage("--dir must be nonzero");
            }
            vec![c.iter().map(|v| v / n).collect()]
        }
        (None, Some(0)) => return usage("--scan must be positive"),
        (None, n) => ancient::positive_grid(&fp, n.unwrap_or(8), args.rng_seed),
    };
    let scan = ancient::family_scan(&fp, &grid, args.eps, &cfg);

    let mut outputs = Vec::new();
    let mut lines = Vec::new();
    for (record, cand) in scan.records.iter().zip(&scan.candidates) {
        let mut value = serde_json::to_value(record)?;
        if let (Some(dir), Some(cand)) = (&args.trajectories, cand) {
            let path = dir.join(format!("shot_{:04}.csv", record.index));
            write_csv(&path, &cand.backward)?;
            value["trajectory"] = json!(path.display().to_string());
            outputs.push(path.display().to_string());
        }
        lines.push(value);
    }
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
        formats::write_jsonl(&lines, &mut w)?;
        w.flush()?;
        outputs.insert(0, out.display().to_string());
        let record = AncientConfigRecord {
            fibration: &loaded.id,
            base_einstein: &args.base_einstein,
            scan: args.scan,
            dir: args.dir.as_deref(),
            eps: args.eps,
            rng_seed: args.rng_seed,
            shoot: &cfg,
        };
        let manifest = RunManifest {
            command: argv.to_vec(),
            catalog_id: loaded.id.clone(),
            config_hash: config_hash(&record)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
            context: json!({ "base_coefficients": point.coefficients, "lambda": fp.ctx.lambda }),
            config: serde_json::to_value(&record)?,
        };
        write_manifest(&manifest_path(out), &manifest)?;
    }
    print_json(&json!({
        "fibration": loaded.id,
        "base": { "coefficients": point.coefficients, "lambda": fp.ctx.lambda, "coindex": point.coindex, "nullity": point.nullity },
        "nu": fp.nu,
        "expected_unstable_dim": expected,
        "unstable_dim": fp.unstable_dim(),
        "unstable_eigenvalues": fp.unstable_eigenvalues,
        "unstable_clusters": fp.unstable_clusters,
        "vertical_block_residual": fp.vertical_block_residual,
        "upper_block_residual": fp.upper_block_residual,
        "horizontal_block_residual": fp.horizontal_block_residual,
        "shots": scan.records.len(),
        "accepted": scan.accepted_count,
        "family_dimension": scan.family_dimension,
        "expected_family_dimension": scan.expected_family_dimension,
        "records": if args.out.is_none() { json!(lines) } else { json!(null) },
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn plotdata(csv: &Path, columns: &[String], max_points: usize) -> Result<ExitCode> {
    if max_points < 2 {
        return usage("--max-points must be at least 2");
    }
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let table = formats::parse_trajectory_csv(&text)?;
    let mut series = Vec::new();
    for name in columns {
        match table.column(name) {
            Some(c) => series.push(c),
            None => bail!(UsageError(format!("no column {name:?}; available: {}", table.columns.join(",")))),
        }
    }
    let n = table.rows.len();
    let stride = n.div_ceil(max_points).max(1);
    let mut keep: Vec<usize> = (0..n).step_by(stride).collect();
    if n > 0 && keep.last() != Some(&(n - 1)) {
        keep.push(n - 1);
    }
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "{}", columns.join(","))?;
    for i in keep {
        let row: Vec<String> = series.iter().map(|c| format!("{:.16e}", c[i])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
