//! Evaluation: geodesic error, PCK curves, synthetic pairs with known ground truth and the
//! end-to-end matching pipeline in its fixed/learned basis and solver/projection variants.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, InhibitionFilter};
use crate::descriptors::{apply_transform, default_hks_times, default_wks_energies, hks, wks, xyz, FeatureSet};
use crate::error::{Error, Result, StageExt};
use crate::fmap::{fmap_project, fmap_solve};
use crate::learn::{train, ShapeData, TrainConfig, TrainPair, TrainState};
use crate::mesh::{build_operators, geodesic_matrix, TriMesh};
use crate::pointwise::{g_zoomout, nn_map, recover_map, PointwiseMap, Schedule, ZoomOutStep};
use crate::spectral::{eigendecompose, Spectrum};

/// Error thresholds of the PCK curve: 0.00, 0.01, ..., 0.25.
pub fn pck_thresholds() -> Vec<f64> {
    (0..=25).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Fraction of errors at or below each threshold.
pub fn pck(errors: &[f64], thresholds: &[f64]) -> Vec<PckPoint> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&threshold| {
            let hits = sorted.partition_point(|e| *e <= threshold);
            PckPoint { threshold, fraction: if sorted.is_empty() { 1.0 } else { hits as f64 / sorted.len() as f64 } }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

impl Timings {
    pub fn seconds(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.seconds)
    }

    fn push(&mut self, stage: &str, start: Instant) {
        self.stages.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
    }

    fn extend(&mut self, other: Timings) {
        self.stages.extend(other.stages);
    }
}

/// Runs `f` and records its wall-clock time under `stage`; errors are tagged with the stage.
fn timed<T>(timings: &mut Timings, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().stage(stage)?;
    timings.push(stage, start);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub variant: Variant,
    pub schedule: Schedule,
    pub zoomout: Option<Schedule>,
    pub alpha: f64,
    /// SHA-256 of the inhibition parameters used at inference.
    pub filter_hash: String,
    /// How per-vertex errors are normalized.
    pub normalization: String,
    pub seed: u64,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            variant: Variant::default(),
            schedule: Schedule::new(1, 1, 1),
            zoomout: None,
            alpha: 0.0,
            filter_hash: String::new(),
            normalization: NORMALIZATION.to_string(),
            seed: 0,
        }
    }
}

const NORMALIZATION: &str = "edge-graph geodesic distance on the source shape divided by sqrt(source area)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per Y-vertex error, normalized by the square root of the source area.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub pck: Vec<PckPoint>,
    pub metadata: ReportMetadata,
    pub timings: Timings,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `threshold,fraction` rows.
    pub fn write_pck_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "threshold,fraction")?;
        for p in &self.pck {
            writeln!(out, "{:.2},{:?}", p.threshold, p.fraction)?;
        }
        Ok(())
    }

    /// Histogram of per-vertex errors over `bins` equal-width bins on `[0, max]`:
    /// `bin_start,bin_end,count` rows.
    pub fn write_error_histogram_csv<W: Write>(&self, mut out: W, bins: usize) -> Result<()> {
        let bins = bins.max(1);
        let top = self.errors.iter().copied().fold(0.0, f64::max);
        let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for e in &self.errors {
            counts[((e / width) as usize).min(bins - 1)] += 1;
        }
        writeln!(out, "bin_start,bin_end,count")?;
        for (i, c) in counts.iter().enumerate() {
            writeln!(out, "{:?},{:?},{c}", i as f64 * width, (i + 1) as f64 * width)?;
        }
        Ok(())
    }
}

/// Geodesic distance on `source` (the shape the maps point into) between `pred(y)` and
/// `gt(y)` for every Y-vertex, divided by `sqrt(area(source))`.
pub fn geodesic_error(pred: &PointwiseMap, gt: &PointwiseMap, source: &TriMesh) -> Result<EvalReport> {
    let (p, g) = match (pred.indices(), gt.indices()) {
        (Some(p), Some(g)) => (p, g),
        _ => return Err(Error::InvalidArgument("geodesic error needs hard maps".into())),
    };
    if p.len() != g.len() || pred.n_x() != source.vertex_count() || gt.n_x() != source.vertex_count() {
        return Err(Error::DimensionMismatch("predicted and ground-truth maps must share both vertex sets".into()));
    }
    let mut sources: Vec<usize> = g.to_vec();
    sources.sort_unstable();
    sources.dedup();
    let row_of: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(r, &s)| (s, r)).collect();
    let dist = if sources.is_empty() { nalgebra::DMatrix::zeros(0, 0) } else { geodesic_matrix(source, &sources)? };
    let scale = source.total_area().sqrt();
    let errors: Vec<f64> = p.iter().zip(g).map(|(&pi, &gi)| dist[(row_of[&gi], pi)] / scale).collect();
    let mean_error = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    Ok(EvalReport {
        pck: pck(&errors, &pck_thresholds()),
        errors,
        mean_error,
        metadata: ReportMetadata::default(),
        timings: Timings::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    Permutation,
    /// Gaussian vertex noise with standard deviation `sigma` times the bounding-box diagonal.
    NoisyPermutation {
        sigma: f64,
    },
    /// Per-axis scale factors.
    NonIsometricScale {
        factors: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub x: TriMesh,
    pub y: TriMesh,
    /// Hard map from Y-vertices to their X originals.
    pub ground_truth: PointwiseMap,
    pub deformation: Deformation,
}

/// Copy of `base` whose vertex `i` is `base` vertex `sigma[i]`, with faces relabelled.
pub fn permuted_copy(base: &TriMesh, sigma: &[usize]) -> Result<TriMesh> {
    let n = base.vertex_count();
    let mut inv = vec![usize::MAX; n];
    for (i, &s) in sigma.iter().enumerate() {
        if s >= n || inv[s] != usize::MAX {
            return Err(Error::InvalidArgument("vertex order is not a permutation".into()));
        }
        inv[s] = i;
    }
    if sigma.len() != n {
        return Err(Error::InvalidArgument("vertex order is not a permutation".into()));
    }
    let vertices = sigma.iter().map(|&s| base.vertices()[s]).collect();
    let faces = base.faces().iter().map(|f| [inv[f[0]], inv[f[1]], inv[f[2]]]).collect();
    TriMesh::new(vertices, faces)
}

/// Y is `base` under a seeded random vertex permutation, then deformed.
pub fn make_synthetic_pair(base: &TriMesh, deformation: Deformation, seed: u64) -> Result<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma: Vec<usize> = (0..base.vertex_count()).collect();
    sigma.shuffle(&mut rng);
    synthetic_pair_with(base, deformation, &sigma, &mut rng)
}

/// As [`make_synthetic_pair`] with a given permutation; `rng` drives the noise only.
pub fn synthetic_pair_with(
    base: &TriMesh,
    deformation: Deformation,
    sigma: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticPair> {
    let copy = permuted_copy(base, sigma)?;
    let y = match deformation {
        Deformation::Permutation => copy,
        Deformation::NoisyPermutation { sigma: s } => {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {s}")));
            }
            if s == 0.0 {
                copy
            } else {
                let normal =
                    Normal::new(0.0, s * base.bbox_diagonal()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let v = copy
                    .vertices()
                    .iter()
                    .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng), p[2] + normal.sample(rng)])
                    .collect();
                copy.with_vertices(v)?
            }
        }
        Deformation::NonIsometricScale { factors } => {
            let v = copy.vertices().iter().map(|p| [p[0] * factors[0], p[1] * factors[1], p[2] * factors[2]]).collect();
            copy.with_vertices(v)?
        }
    };
    Ok(SyntheticPair {
        x: base.clone(),
        y,
        ground_truth: PointwiseMap::hard(sigma.to_vec(), base.vertex_count())?,
        deformation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisVariant {
    /// `T = 0`: the plain Laplacian eigenbasis.
    Fixed,
    #[default]
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Solver,
    #[default]
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Variant {
    pub basis: BasisVariant,
    pub route: Route,
}

/// Which descriptors feed the matcher; channels are concatenated in the order HKS, WKS, XYZ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub hks: usize,
    pub wks: usize,
    pub xyz: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { hks: 16, wks: 0, xyz: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Eigenpairs computed per shape.
    pub k: usize,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Commutativity weight of the solver route.
    pub lambda_reg: f64,
    /// G-ZoomOut refinement after recovery.
    pub zoomout: Option<Schedule>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 40,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            lambda_reg: 1e-3,
            zoomout: Some(Schedule::new(20, 40, 1)),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate(self.k)?;
        if let Some(z) = self.zoomout {
            z.validate(self.k)?;
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_reg must be >= 0, got {}", self.lambda_reg)));
        }
        if self.features.hks + self.features.wks == 0 && !self.features.xyz {
            return Err(Error::InvalidArgument("no descriptors selected".into()));
        }
        Ok(())
    }
}

/// A mesh with its eigensystem.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub mesh: TriMesh,
    pub spectrum: Arc<Spectrum>,
}

pub fn prepare(mesh: &TriMesh, k: usize) -> Result<PreparedShape> {
    let ops = build_operators(mesh)?;
    let spectrum = eigendecompose(&ops, k)?.with_mesh_hash(mesh.content_hash());
    Ok(PreparedShape { mesh: mesh.clone(), spectrum: Arc::new(spectrum) })
}

/// Descriptors for both shapes. Time and energy grids come from the X spectrum so both shapes
/// are sampled identically.
pub fn compute_features(x: &PreparedShape, y: &PreparedShape, cfg: &FeatureConfig) -> Result<(FeatureSet, FeatureSet)> {
    let mut parts: Vec<(FeatureSet, FeatureSet)> = Vec::new();
    if cfg.hks > 0 {
        let times = default_hks_times(&x.spectrum, cfg.hks)?;
        parts.push((hks(&x.spectrum, &times)?, hks(&y.spectrum, &times)?));
    }
    if cfg.wks > 0 {
        let (energies, sigma) = default_wks_energies(&x.spectrum, cfg.wks.max(2))?;
        parts.push((wks(&x.spectrum, &energies, sigma)?, wks(&y.spectrum, &energies, sigma)?));
    }
    if cfg.xyz {
        parts.push((xyz(&x.mesh)?, xyz(&y.mesh)?));
    }
    let mut iter = parts.into_iter();
    let (mut fx, mut fy) = iter.next().ok_or_else(|| Error::InvalidArgument("no descriptors selected".into()))?;
    for (a, b) in iter {
        fx = fx.concat(&a)?;
        fy = fy.concat(&b)?;
    }
    Ok((fx, fy))
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    /// Final map from Y-vertices to X-vertices.
    pub map: PointwiseMap,
    /// Nearest neighbours in feature space, before functional map recovery.
    pub initial: PointwiseMap,
    /// Parameters used at inference.
    pub state: TrainState,
    pub zoomout_trace: Option<Vec<ZoomOutStep>>,
    pub timings: Timings,
    pub metadata: ReportMetadata,
}

/// Features, optional training, feature-space NN, functional map by the chosen route at
/// `k_end`, recovery and optional G-ZoomOut.
///
/// With `trained = Some(state)` training is skipped and the state is used as is (the fixed
/// variant still zeroes `T`). `features` overrides descriptor computation.
pub fn match_shapes(
    x: &PreparedShape,
    y: &PreparedShape,
    variant: Variant,
    config: &PipelineConfig,
    features: Option<(FeatureSet, FeatureSet)>,
    trained: Option<&TrainState>,
) -> Result<MatchOutput> {
    config.validate()?;
    let mut timings = Timings::default();
    let (fx, fy) = match features {
        Some(f) => f,
        None => timed(&mut timings, "descriptors", || compute_features(x, y, &config.features))?,
    };
    let k = x.spectrum.k().min(y.spectrum.k());
    let train_config = TrainConfig { learn_basis: variant.basis == BasisVariant::Learned, ..config.train.clone() };
    let mut state = match trained {
        Some(s) => s.clone(),
        None => timed(&mut timings, "train", || {
            if train_config.iterations == 0 {
                return Ok(TrainState::new(k, fx.dim()));
            }
            let pair = TrainPair {
                x: Arc::new(ShapeData { spectrum: x.spectrum.clone(), features: fx.clone() }),
                y: Arc::new(ShapeData { spectrum: y.spectrum.clone(), features: fy.clone() }),
            };
            train(&[pair], &train_config)
        })?,
    };
    if variant.basis == BasisVariant::Fixed {
        state.filter = InhibitionFilter::identity(state.filter.k());
    }
    let schedule = config.train.schedule;

    let (bx, by, tx, ty, initial) = timed(&mut timings, "initial_map", || {
        let bx = make_basis(x.spectrum.clone(), &state.filter)?;
        let by = make_basis(y.spectrum.clone(), &state.filter)?;
        let tx = apply_transform(&fx, &state.transform)?;
        let ty = apply_transform(&fy, &state.transform)?;
        let initial = nn_map(ty.values(), tx.values())?;
        Ok((bx, by, tx, ty, initial))
    })?;
    let c = timed(&mut timings, "fmap", || match variant.route {
        Route::Projection => fmap_project(&initial, &bx, &by, schedule.k_end),
        Route::Solver => fmap_solve(&tx, &ty, &bx, &by, schedule.k_end, config.lambda_reg),
    })?;
    let mut map = timed(&mut timings, "recover", || recover_map(&c, &bx, &by))?;
    let mut zoomout_trace = None;
    if let Some(z) = config.zoomout {
        let out = timed(&mut timings, "zoomout", || g_zoomout(&map, &bx, &by, z))?;
        map = out.map;
        zoomout_trace = Some(out.trace);
    }
    timings.total_seconds = timings.stages.iter().map(|s| s.seconds).sum();
    let metadata = ReportMetadata {
        variant,
        schedule,
        zoomout: config.zoomout,
        alpha: config.train.alpha,
        filter_hash: state.filter.hash(),
        normalization: NORMALIZATION.to_string(),
        seed: config.train.seed,
    };
    Ok(MatchOutput { map, initial, state, zoomout_trace, timings, metadata })
}

/// Meshes, their ground truth and optionally fixed descriptors.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub x: TriMesh,
    pub y: TriMesh,
    pub ground_truth: PointwiseMap,
    pub features: Option<(FeatureSet, FeatureSet)>,
}

impl From<&SyntheticPair> for PipelineInput {
    fn from(p: &SyntheticPair) -> Self {
        PipelineInput { x: p.x.clone(), y: p.y.clone(), ground_truth: p.ground_truth.clone(), features: None }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: PointwiseMap,
    pub report: EvalReport,
    pub state: TrainState,
    pub zoomout_trace: Option<Vec<ZoomOutStep>>,
}

/// Eigensystems, [`match_shapes`] and geodesic evaluation against the ground truth.
pub fn run_pipeline(input: &PipelineInput, variant: Variant, config: &PipelineConfig) -> Result<PipelineOutput> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let (x, y) = timed(&mut timings, "spectra", || Ok((prepare(&input.x, config.k)?, prepare(&input.y, config.k)?)))?;
    let out = match_shapes(&x, &y, variant, config, input.features.clone(), None)?;
    timings.extend(out.timings);
    let mut report = timed(&mut timings, "evaluate", || geodesic_error(&out.map, &input.ground_truth, &input.x))?;
    timings.total_seconds = start.elapsed().as_secs_f64();
    report.metadata = out.metadata;
    report.timings = timings;
    Ok(PipelineOutput { map: out.map, report, state: out.state, zoomout_trace: out.zoomout_trace })
}

/// [`run_pipeline`] over many inputs in parallel; results keep the input order.
pub fn run_pipelines(
    inputs: &[PipelineInput],
    variant: Variant,
    config: &PipelineConfig,
) -> Vec<Result<PipelineOutput>> {
    inputs.par_iter().map(|input| run_pipeline(input, variant, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::FeatureKind;
    use crate::mesh::shapes;
    use rand::Rng;

    #[test]
    fn pck_is_monotone_and_counts_exact_hits() {
        let errors = [0.0, 0.0, 0.05, 0.3, 0.011];
        let curve = pck(&errors, &pck_thresholds());
        assert_eq!(curve.len(), 26);
        assert_eq!(curve[0].fraction, 0.4);
        assert!(curve.windows(2).all(|w| w[0].fraction <= w[1].fraction));
        assert_eq!(pck(&errors, &[f64::INFINITY])[0].fraction, 1.0);
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let mesh = shapes::icosphere(1).unwrap();
        let gt = PointwiseMap::identity(mesh.vertex_count());
        let r = geodesic_error(&gt, &gt, &mesh).unwrap();
        assert_eq!(r.mean_error, 0.0);
        assert_eq!(r.pck[0].fraction, 1.0);
    }

    #[test]
    fn one_edge_offset_on_a_uniform_strip() {
        // grid rows of unit squares: shifting along x is exactly one edge everywhere
        let mesh = shapes::grid(6, 1, 6.0, 1.0).unwrap();
        let n = mesh.vertex_count();
        let gt = PointwiseMap::identity(n);
        let shifted: Vec<usize> = (0..n).map(|v| if v % 7 == 6 { v - 1 } else { v + 1 }).collect();
        let r = geodesic_error(&PointwiseMap::hard(shifted, n).unwrap(), &gt, &mesh).unwrap();
        let expect = 1.0 / 6f64.sqrt();
        assert!((r.mean_error - expect).abs() < 1e-12);
    }

    #[test]
    fn random_map_matches_monte_carlo_expectation() {
        let mesh = shapes::icosphere(2).unwrap();
        let n = mesh.vertex_count();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let gt = PointwiseMap::identity(n);
        let r = geodesic_error(&PointwiseMap::hard(pred, n).unwrap(), &gt, &mesh).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let d = geodesic_matrix(&mesh, &all).unwrap();
        let mut mc = 0.0;
        for _ in 0..10_000 {
            mc += d[(rng.gen_range(0..n), rng.gen_range(0..n))];
        }
        mc /= 10_000.0 * mesh.total_area().sqrt();
        assert!((r.mean_error - mc).abs() <= 0.1 * mc, "{} vs {mc}", r.mean_error);
    }

    #[test]
    fn synthetic_pairs() {
        let base = shapes::icosphere(2).unwrap();
        let n = base.vertex_count();
        let ident: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = synthetic_pair_with(&base, Deformation::Permutation, &ident, &mut rng).unwrap();
        assert_eq!(p.y, base);
        assert_eq!(p.ground_truth, PointwiseMap::identity(n));

        let p = make_synthetic_pair(&base, Deformation::NoisyPermutation { sigma: 0.0 }, 3).unwrap();
        let gt = p.ground_truth.indices().unwrap();
        for (i, v) in p.y.vertices().iter().enumerate() {
            assert_eq!(*v, base.vertices()[gt[i]]);
        }
        assert!((p.y.total_area() - base.total_area()).abs() < 1e-12);
        assert_eq!(p, make_synthetic_pair(&base, Deformation::NoisyPermutation { sigma: 0.0 }, 3).unwrap());

        let noisy = make_synthetic_pair(&base, Deformation::NoisyPermutation { sigma: 0.01 }, 3).unwrap();
        assert_eq!(noisy.ground_truth, p.ground_truth);
        assert_ne!(noisy.y, p.y);
    }

    #[test]
    fn spheroid_area() {
        let base = shapes::icosphere(4).unwrap();
        let p = make_synthetic_pair(&base, Deformation::NonIsometricScale { factors: [1.0, 1.0, 2.0] }, 1).unwrap();
        // prolate spheroid a = 1, c = 2 against the unit sphere
        let e = (1.0f64 - 0.25).sqrt();
        let spheroid = 2.0 * std::f64::consts::PI * (1.0 + 2.0 / e * e.asin());
        let ratio = spheroid / (4.0 * std::f64::consts::PI);
        assert!((p.y.total_area() / base.total_area() / ratio - 1.0).abs() < 0.02);
    }

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            k: 12,
            features: FeatureConfig { hks: 6, wks: 0, xyz: true },
            train: TrainConfig {
                iterations: 5,
                schedule: Schedule::new(4, 8, 2),
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            lambda_reg: 1e-3,
            zoomout: Some(Schedule::new(6, 12, 2)),
        }
    }

    #[test]
    fn self_pair_is_matched_exactly_by_every_variant() {
        // radial jitter removes the symmetries that leave modes without any feature energy
        let sphere = shapes::icosphere(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = sphere.vertices().iter().map(|p| p.map(|c| c * rng.gen_range(0.9..1.1))).collect();
        let mesh = sphere.with_vertices(v).unwrap();
        let input = PipelineInput {
            x: mesh.clone(),
            y: mesh.clone(),
            ground_truth: PointwiseMap::identity(mesh.vertex_count()),
            features: None,
        };
        for basis in [BasisVariant::Fixed, BasisVariant::Learned] {
            for route in [Route::Projection, Route::Solver] {
                let out = run_pipeline(&input, Variant { basis, route }, &quick_config()).unwrap();
                assert_eq!(out.report.mean_error, 0.0, "{basis:?} {route:?}");
                assert_eq!(out.map, PointwiseMap::identity(mesh.vertex_count()));
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_timed() {
        let pair =
            make_synthetic_pair(&shapes::icosphere(2).unwrap(), Deformation::NoisyPermutation { sigma: 0.01 }, 5)
                .unwrap();
        let input = PipelineInput::from(&pair);
        let a = run_pipeline(&input, Variant::default(), &quick_config()).unwrap();
        let b = run_pipeline(&input, Variant::default(), &quick_config()).unwrap();
        assert_eq!(a.map, b.map);
        assert_eq!(a.report.errors, b.report.errors);
        assert_eq!(a.report.metadata, b.report.metadata);
        let t = &a.report.timings;
        for stage in ["spectra", "descriptors", "train", "initial_map", "fmap", "recover", "zoomout", "evaluate"] {
            assert!(t.seconds(stage).is_some(), "{stage}");
        }
        let sum: f64 = t.stages.iter().map(|s| s.seconds).sum();
        assert!((t.total_seconds - sum).abs() <= 0.05 * t.total_seconds);
    }

    #[test]
    fn stage_errors_are_tagged() {
        let mesh = shapes::icosphere(1).unwrap();
        let input = PipelineInput {
            x: mesh.clone(),
            y: mesh.clone(),
            ground_truth: PointwiseMap::identity(mesh.vertex_count()),
            features: Some((
                FeatureSet::new(nalgebra::DMatrix::from_element(42, 2, 1.0), FeatureKind::Provided).unwrap(),
                FeatureSet::new(nalgebra::DMatrix::from_element(42, 2, 1.0), FeatureKind::Provided).unwrap(),
            )),
        };
        let config = PipelineConfig { train: TrainConfig { iterations: 0, ..quick_config().train }, ..quick_config() };
        let err = run_pipeline(&input, Variant::default(), &config).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "initial_map", .. }), "{err}");
    }
}
