use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use basisfm::eval::{
    compute_features, geodesic_error, make_synthetic_pair, match_shapes, BasisVariant, Deformation, PckPoint,
    PreparedShape, ReportMetadata, StageTiming, Timings,
};
use basisfm::learn::{inhibition_profile, train, write_profile_csv, ShapeData, TrainPair, TrainState};
use basisfm::mesh::{build_operators, load_mesh, shapes, write_off, MeshFormat};
use basisfm::pointwise::{g_zoomout, read_indices, write_indices, Schedule, ZoomOutStep};
use basisfm::spectral::cache::{cache_path, read_spectrum, write_spectrum};
use basisfm::spectral::eigendecompose;
use basisfm::{make_basis, FeatureTransform, InhibitionFilter, PointwiseMap, TriMesh};
use serde::{Deserialize, Serialize};

use crate::{CliError, Context, ProjectConfig};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_mesh_file(path: &Path) -> Result<TriMesh, CliError> {
    MeshFormat::from_path(path).and_then(|f| load_mesh(path, f)).context(|| format!("mesh {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into())
}

/// Name used for match and report files of a pair.
pub fn pair_name(x: &Path, y: &Path) -> String {
    format!("{}__{}", stem(x), stem(y))
}

#[derive(Debug, Default, PartialEq)]
pub struct PrecomputeSummary {
    pub computed: Vec<PathBuf>,
    pub reused: Vec<PathBuf>,
}

/// Writes one SPEC1 cache per mesh. Existing caches with a matching hash are left untouched.
pub fn precompute(config: &ProjectConfig) -> Result<PrecomputeSummary, CliError> {
    let mut summary = PrecomputeSummary::default();
    let mut failures = Vec::new();
    for mesh_path in &config.meshes {
        match precompute_one(config, mesh_path) {
            Ok((path, true)) => summary.computed.push(path),
            Ok((path, false)) => summary.reused.push(path),
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Many(failures))
    }
}

fn precompute_one(config: &ProjectConfig, mesh_path: &Path) -> Result<(PathBuf, bool), CliError> {
    let mesh = read_mesh_file(mesh_path)?;
    let hash = mesh.content_hash();
    let path = cache_path(config.cache_dir(), &hash, config.pipeline.k);
    if let Ok(existing) = read_spectrum(&path) {
        if existing.mesh_hash() == hash && existing.k() == config.pipeline.k {
            return Ok((path, false));
        }
    }
    let spectrum = build_operators(&mesh)
        .and_then(|ops| eigendecompose(&ops, config.pipeline.k))
        .context(|| format!("mesh {}", mesh_path.display()))?
        .with_mesh_hash(hash);
    create_dir(&config.cache_dir())?;
    // write then rename so an interrupted run never leaves a truncated cache behind
    let tmp = path.with_extension("partial");
    write_spectrum(&spectrum, &tmp).context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok((path, true))
}

/// Loads a mesh with its cached eigensystem.
pub fn load_prepared(config: &ProjectConfig, mesh_path: &Path) -> Result<PreparedShape, CliError> {
    let mesh = read_mesh_file(mesh_path)?;
    let path = cache_path(config.cache_dir(), &mesh.content_hash(), config.pipeline.k);
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "no cached spectrum for mesh {} (expected {}); run `precompute` first",
            mesh_path.display(),
            path.display()
        )));
    }
    let spectrum = read_spectrum(&path).context(|| format!("cache {}", path.display()))?;
    if spectrum.mesh_hash() != mesh.content_hash() {
        return Err(CliError::Config(format!("cache {} belongs to a different mesh", path.display())));
    }
    Ok(PreparedShape { mesh, spectrum: spectrum.into() })
}

/// Trains on every unordered pair of the configured meshes and writes
/// `train/filter.json`, `train/transform.json` and `train/loss.csv`.
pub fn train_cmd(config: &ProjectConfig) -> Result<TrainState, CliError> {
    config.validate()?;
    if config.meshes.len() < 2 {
        return Err(CliError::Config("training needs at least two meshes".into()));
    }
    let shapes = config.meshes.iter().map(|m| load_prepared(config, m)).collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for i in 0..shapes.len() {
        for j in i + 1..shapes.len() {
            let (fx, fy) = compute_features(&shapes[i], &shapes[j], &config.pipeline.features)
                .context(|| format!("descriptors for {}", pair_name(&config.meshes[i], &config.meshes[j])))?;
            pairs.push(TrainPair {
                x: ShapeData { spectrum: shapes[i].spectrum.clone(), features: fx }.into(),
                y: ShapeData { spectrum: shapes[j].spectrum.clone(), features: fy }.into(),
            });
        }
    }
    let mut train_config = config.pipeline.train.clone();
    train_config.learn_basis &= config.variant.basis == BasisVariant::Learned;
    let state = train(&pairs, &train_config).context(|| "training".into())?;
    write_train_artifacts(config, &state, &shapes)?;
    Ok(state)
}

fn write_train_artifacts(config: &ProjectConfig, state: &TrainState, shapes: &[PreparedShape]) -> Result<(), CliError> {
    let dir = config.train_dir();
    let hashes: Vec<&str> = shapes.iter().map(|s| s.spectrum.mesh_hash()).collect();
    let filter = state.filter.to_json(&hashes.join("+")).context(|| "filter".into())?;
    write_file(&dir.join("filter.json"), filter)?;
    write_file(&dir.join("transform.json"), state.transform.to_json().context(|| "transform".into())?)?;
    let mut csv = Vec::new();
    state.write_loss_csv(&mut csv).context(|| "loss history".into())?;
    write_file(&dir.join("loss.csv"), csv)
}

/// Trained filter and transform from the workspace, if `train` has run.
pub fn load_trained(config: &ProjectConfig) -> Result<Option<TrainState>, CliError> {
    let dir = config.train_dir();
    let (fp, tp) = (dir.join("filter.json"), dir.join("transform.json"));
    if !fp.is_file() || !tp.is_file() {
        return Ok(None);
    }
    let (filter, _) = InhibitionFilter::from_json(&read_text(&fp)?).context(|| fp.display().to_string())?;
    let transform = FeatureTransform::from_json(&read_text(&tp)?).context(|| tp.display().to_string())?;
    Ok(Some(TrainState::from_parts(filter, transform)))
}

#[derive(Debug, Clone, Default)]
pub struct MatchOptions {
    pub ground_truth: Option<PathBuf>,
    pub refine: bool,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub one_based: bool,
}

/// Written next to every correspondence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub metadata: ReportMetadata,
    pub timings: Timings,
    pub zoomout_trace: Option<Vec<ZoomOutStep>>,
    pub mean_error: Option<f64>,
    pub errors: Option<Vec<f64>>,
    pub pck: Option<Vec<PckPoint>>,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub map: PointwiseMap,
    pub report: MatchReport,
    pub map_path: PathBuf,
    pub report_path: PathBuf,
}

/// Matches `y` onto `x` with the trained parameters when present (untrained otherwise).
pub fn match_cmd(config: &ProjectConfig, x: &Path, y: &Path, opts: &MatchOptions) -> Result<MatchResult, CliError> {
    config.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let shape_x = load_prepared(config, x)?;
    let shape_y = load_prepared(config, y)?;
    timings.stages.push(StageTiming { stage: "load".into(), seconds: start.elapsed().as_secs_f64() });

    let mut pipeline = config.pipeline.clone();
    pipeline.zoomout = if opts.refine { Some(refine_schedule(config)) } else { None };
    let trained = load_trained(config)?;
    if trained.is_none() {
        pipeline.train.iterations = 0;
    }
    let out = match_shapes(&shape_x, &shape_y, config.variant, &pipeline, None, trained.as_ref())
        .context(|| format!("matching {}", pair_name(x, y)))?;
    timings.stages.extend(out.timings.stages);

    let mut report = MatchReport {
        metadata: out.metadata,
        timings: Timings::default(),
        zoomout_trace: out.zoomout_trace,
        mean_error: None,
        errors: None,
        pck: None,
    };
    if let Some(gt_path) = &opts.ground_truth {
        let t = Instant::now();
        let gt = read_indices(&read_text(gt_path)?, shape_x.mesh.vertex_count(), opts.one_based)
            .context(|| gt_path.display().to_string())?;
        let eval = geodesic_error(&out.map, &gt, &shape_x.mesh).context(|| "evaluate".into())?;
        report.mean_error = Some(eval.mean_error);
        report.errors = Some(eval.errors);
        report.pck = Some(eval.pck);
        timings.stages.push(StageTiming { stage: "evaluate".into(), seconds: t.elapsed().as_secs_f64() });
    }
    timings.total_seconds = start.elapsed().as_secs_f64();
    report.timings = timings;

    let name = pair_name(x, y);
    let map_path = opts.output.clone().unwrap_or_else(|| config.match_dir().join(format!("{name}.txt")));
    let report_path = opts.report.clone().unwrap_or_else(|| config.report_dir().join(format!("{name}.json")));
    write_map(&out.map, &map_path, opts.one_based)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&report_path, json)?;
    Ok(MatchResult { map: out.map, report, map_path, report_path })
}

fn refine_schedule(config: &ProjectConfig) -> Schedule {
    config.pipeline.zoomout.unwrap_or(Schedule::new(config.pipeline.train.schedule.k_init, config.pipeline.k, 1))
}

fn write_map(map: &PointwiseMap, path: &Path, one_based: bool) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_indices(map, &mut bytes, one_based).context(|| path.display().to_string())?;
    write_file(path, bytes)
}

/// G-ZoomOut on an existing correspondence file, written to `output`.
pub fn refine_cmd(
    config: &ProjectConfig,
    x: &Path,
    y: &Path,
    map_path: &Path,
    output: &Path,
    one_based: bool,
) -> Result<Vec<ZoomOutStep>, CliError> {
    config.validate()?;
    let shape_x = load_prepared(config, x)?;
    let shape_y = load_prepared(config, y)?;
    let map = read_indices(&read_text(map_path)?, shape_x.mesh.vertex_count(), one_based)
        .context(|| map_path.display().to_string())?;
    let filter = match (config.variant.basis, load_trained(config)?) {
        (BasisVariant::Learned, Some(state)) => state.filter,
        _ => InhibitionFilter::identity(config.pipeline.k),
    };
    let bx = make_basis(shape_x.spectrum.clone(), &filter).context(|| x.display().to_string())?;
    let by = make_basis(shape_y.spectrum.clone(), &filter).context(|| y.display().to_string())?;
    let out = g_zoomout(&map, &bx, &by, refine_schedule(config)).context(|| "zoomout".into())?;
    write_map(&out.map, output, one_based)?;
    Ok(out.trace)
}

/// Geodesic error of a correspondence file against ground truth on mesh `x`. Writes the JSON
/// report plus `<stem>.pck.csv` and `<stem>.hist.csv` beside it.
pub fn eval_cmd(
    x: &Path,
    pred: &Path,
    gt: &Path,
    report: &Path,
    one_based: bool,
) -> Result<basisfm::eval::EvalReport, CliError> {
    let mesh = read_mesh_file(x)?;
    let n = mesh.vertex_count();
    let p = read_indices(&read_text(pred)?, n, one_based).context(|| pred.display().to_string())?;
    let g = read_indices(&read_text(gt)?, n, one_based).context(|| gt.display().to_string())?;
    let start = Instant::now();
    let mut r = geodesic_error(&p, &g, &mesh).context(|| "evaluate".into())?;
    let seconds = start.elapsed().as_secs_f64();
    r.timings = Timings { stages: vec![StageTiming { stage: "evaluate".into(), seconds }], total_seconds: seconds };
    write_file(report, r.to_json().context(|| "report".into())?)?;
    let mut pck = Vec::new();
    r.write_pck_csv(&mut pck).context(|| "pck".into())?;
    write_file(&report.with_extension("pck.csv"), pck)?;
    let mut hist = Vec::new();
    r.write_error_histogram_csv(&mut hist, 25).context(|| "histogram".into())?;
    write_file(&report.with_extension("hist.csv"), hist)?;
    Ok(r)
}

/// Files written by [`export_plots`] and the artifacts that were not there to export.
#[derive(Debug, Default, PartialEq)]
pub struct PlotExport {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

/// `plots/inhibition_profile.csv` (all ones when untrained), `plots/loss_history.csv` and
/// `plots/pck.csv` (`report,threshold,fraction` over every report carrying a PCK curve).
pub fn export_plots(config: &ProjectConfig) -> Result<PlotExport, CliError> {
    if !config.workspace.is_dir() {
        return Err(CliError::Config(format!("workspace {} does not exist", config.workspace.display())));
    }
    let dir = config.plot_dir();
    let mut export = PlotExport::default();

    let state = match load_trained(config)? {
        Some(s) => s,
        None => {
            export.missing.push("train/filter.json".into());
            TrainState::new(config.pipeline.k, 0)
        }
    };
    let mut csv = Vec::new();
    write_profile_csv(&inhibition_profile(&state), BufWriter::new(&mut csv)).context(|| "profile".into())?;
    let path = dir.join("inhibition_profile.csv");
    write_file(&path, csv)?;
    export.written.push(path);

    let loss = config.train_dir().join("loss.csv");
    if loss.is_file() {
        let path = dir.join("loss_history.csv");
        write_file(&path, read_text(&loss)?)?;
        export.written.push(path);
    } else {
        export.missing.push("train/loss.csv".into());
    }

    let mut reports: Vec<PathBuf> = match fs::read_dir(config.report_dir()) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    reports.sort();
    let mut pck_csv = String::from("report,threshold,fraction\n");
    let mut any = false;
    for r in &reports {
        let value: serde_json::Value =
            serde_json::from_str(&read_text(r)?).map_err(|e| CliError::Config(format!("{}: {e}", r.display())))?;
        let Some(points) = value.get("pck").and_then(|p| serde_json::from_value::<Vec<PckPoint>>(p.clone()).ok())
        else {
            continue;
        };
        for p in points {
            pck_csv.push_str(&format!("{},{:.2},{:?}\n", stem(r), p.threshold, p.fraction));
        }
        any = true;
    }
    if any {
        let path = dir.join("pck.csv");
        write_file(&path, pck_csv)?;
        export.written.push(path);
    } else {
        export.missing.push("reports/*.json with ground truth".into());
    }
    Ok(export)
}

/// Base shape for `synth`: `icosphere:<subdivisions>`, `grid:<nx>x<ny>` or a mesh file.
pub fn parse_base(spec: &str) -> Result<TriMesh, CliError> {
    let bad = || CliError::Config(format!("cannot parse base shape {spec:?}"));
    if let Some(s) = spec.strip_prefix("icosphere:") {
        let n = s.parse().map_err(|_| bad())?;
        return shapes::icosphere(n).context(|| spec.into());
    }
    if let Some(s) = spec.strip_prefix("grid:") {
        let (a, b) = s.split_once('x').ok_or_else(bad)?;
        let (nx, ny): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        return shapes::grid(nx, ny, 1.0, ny as f64 / nx as f64).context(|| spec.into());
    }
    read_mesh_file(Path::new(spec))
}

/// Writes `x.off`, `y.off` and `gt.txt` (X index per Y vertex) into `out_dir`.
pub fn synth_cmd(
    base: &TriMesh,
    deformation: Deformation,
    seed: u64,
    out_dir: &Path,
    one_based: bool,
) -> Result<(), CliError> {
    let pair = make_synthetic_pair(base, deformation, seed).context(|| "synthetic pair".into())?;
    create_dir(out_dir)?;
    for (mesh, name) in [(&pair.x, "x.off"), (&pair.y, "y.off")] {
        let path = out_dir.join(name);
        write_off(mesh, &path).context(|| path.display().to_string())?;
    }
    write_map(&pair.ground_truth, &out_dir.join("gt.txt"), one_based)
}
