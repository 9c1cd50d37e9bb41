//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL line each and exits
//! non-zero if any failed.
//!
//! The reference value of criterion 7 comes from `--reference-run`, which repeats the
//! criterion-7 training with finite-difference gradients (about 45 minutes on one core):
//!
//! ```text
//! cargo test -p basisfm-cli --test acceptance -- --reference-run
//! ```

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use basisfm::eval::{
    make_synthetic_pair, permuted_copy, run_pipeline, BasisVariant, Deformation, FeatureConfig, PipelineConfig,
    PipelineInput, PipelineOutput, Route, Variant,
};
use basisfm::fmap::{fmap_project, fmap_solve};
use basisfm::learn::{loss_and_gradient, quartile_means, GradientMode, ShapeData, TrainConfig, TrainPair, TrainState};
use basisfm::mesh::{build_operators, shapes};
use basisfm::pointwise::{recover_map, Schedule};
use basisfm::spectral::{eigendecompose, spectral_convolve, PolynomialBasis};
use basisfm::{
    make_basis, FeatureKind, FeatureSet, FeatureTransform, InhibitionFilter, PointwiseMap, SpectralFilter, Spectrum,
    TriMesh,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean geodesic error of the learned-basis pipeline of criterion 7 when trained with central
/// finite differences (h = 1e-5) instead of analytic gradients.
const FD_REFERENCE_ERROR: f64 = 0.004488387058970282;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn jittered_sphere(subdivisions: usize, seed: u64) -> TriMesh {
    let s = shapes::icosphere(subdivisions).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = s.vertices().iter().map(|p| p.map(|c| c * rng.gen_range(0.9..1.1))).collect();
    s.with_vertices(v).unwrap()
}

fn bumpy_grid(nx: usize, ny: usize, seed: u64) -> TriMesh {
    let g = shapes::grid(nx, ny, 1.3, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    let v = g
        .vertices()
        .iter()
        .map(|p| [p[0], p[1], 0.2 * (a * p[0]).sin() * (b * p[1] + 0.3).cos() + rng.gen_range(-0.01..0.01)])
        .collect();
    g.with_vertices(v).unwrap()
}

/// Meshes without symmetries, so eigenvalues are simple.
fn generic_meshes() -> Vec<TriMesh> {
    vec![jittered_sphere(1, 1), jittered_sphere(2, 2), bumpy_grid(8, 6, 3), bumpy_grid(11, 9, 4), jittered_sphere(2, 5)]
}

fn spectrum(mesh: &TriMesh, k: usize) -> Arc<Spectrum> {
    Arc::new(eigendecompose(&build_operators(mesh).unwrap(), k).unwrap())
}

fn random_t(rng: &mut ChaCha8Rng, k: usize, max: f64) -> InhibitionFilter {
    InhibitionFilter::new((0..k).map(|_| rng.gen_range(0.0..max)).collect()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn basis_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spectra: Vec<_> = generic_meshes().iter().map(|m| spectrum(m, 30)).collect();
    let (mut worst_pinv, mut worst_off) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let spec = &spectra[rng.gen_range(0..spectra.len())];
        let k = rng.gen_range(1..=30);
        let truncated = Arc::new(spec.truncated(k).unwrap());
        let basis = make_basis(truncated, &random_t(&mut rng, k, 4.0)).unwrap();
        let id = basis.pinv() * basis.psi();
        worst_pinv = worst_pinv.max(max_abs(&(id - DMatrix::identity(k, k))));
        let mass = basis.spectrum().mass();
        let m_psi = DMatrix::from_fn(basis.vertex_count(), k, |v, j| mass[v] * basis.psi()[(v, j)]);
        let mut gram = basis.psi().tr_mul(&m_psi);
        gram.fill_diagonal(0.0);
        worst_off = worst_off.max(max_abs(&gram));
    }
    ensure(worst_pinv <= 1e-7 && worst_off <= 1e-7, || format!("pinv {worst_pinv:e}, off-diagonal {worst_off:e}"))?;
    Ok(format!("max |pinv psi - I| {worst_pinv:.1e}, max off-diagonal {worst_off:.1e}"))
}

fn convolution_identity() -> Check {
    let mut worst = 0.0f64;
    for mesh in generic_meshes() {
        let spec = spectrum(&mesh, 20);
        let lmax = spec.eigenvalues()[19];
        let filters = [
            SpectralFilter::Polynomial { coefficients: vec![0.5, -0.2, 0.03], basis: PolynomialBasis::Monomial },
            SpectralFilter::Polynomial {
                coefficients: vec![1.0, 0.4, -0.3, 0.1],
                basis: PolynomialBasis::Chebyshev { lambda_max: lmax },
            },
            SpectralFilter::HeatExponential(0.7 / spec.eigenvalues()[1]),
            SpectralFilter::DiagonalGain((0..20).map(|i| (-0.1 * i as f64).exp()).collect()),
        ];
        for f in &filters {
            let lhs = spectral_convolve(&spec, f, spec.phi()).unwrap();
            let gains = f.response(spec.eigenvalues()).unwrap();
            let mut rhs = spec.phi().clone();
            for (j, g) in gains.iter().enumerate() {
                rhs.column_mut(j).scale_mut(*g);
            }
            worst = worst.max(max_abs(&(lhs - &rhs)) / max_abs(&rhs));
        }
    }
    ensure(worst <= 1e-12, || format!("relative deviation {worst:e}"))?;
    Ok(format!("max relative deviation {worst:.1e}"))
}

/// Permuted copy of `mesh`: `(copy, ground truth)` with copy vertex `i` = mesh vertex `gt[i]`.
fn permuted(mesh: &TriMesh, rng: &mut ChaCha8Rng) -> (TriMesh, PointwiseMap) {
    let mut sigma: Vec<usize> = (0..mesh.vertex_count()).collect();
    sigma.shuffle(rng);
    let copy = permuted_copy(mesh, &sigma).unwrap();
    (copy, PointwiseMap::hard(sigma, mesh.vertex_count()).unwrap())
}

fn solver_projection_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let meshes = generic_meshes();
    let mut worst = 0.0f64;
    for instance in 0..20 {
        let mesh = &meshes[instance % meshes.len()];
        let (copy, pi) = permuted(mesh, &mut rng);
        let k = rng.gen_range(6..=16);
        let (sx, sy) = (spectrum(mesh, k), spectrum(&copy, k));
        // (b) band-limited in the X span, (a) F_Y = Pi F_X, (c) d > k with random coefficients
        let d = k + rng.gen_range(2..6);
        let fx_values = sx.phi() * random_matrix(&mut rng, k, d);
        let fy_values = pi.pull_back(&fx_values).unwrap();
        let fx = FeatureSet::new(fx_values, FeatureKind::Provided).unwrap();
        let fy = FeatureSet::new(fy_values, FeatureKind::Provided).unwrap();
        for filter in [InhibitionFilter::identity(k), random_t(&mut rng, k, 2.0)] {
            let bx = make_basis(sx.clone(), &filter).unwrap();
            let by = make_basis(sy.clone(), &filter).unwrap();
            let solved = fmap_solve(&fx, &fy, &bx, &by, k, 0.0).unwrap();
            let projected = fmap_project(&pi, &bx, &by, k).unwrap();
            worst = worst.max(max_abs(&(solved.matrix() - projected.matrix())));
        }
    }
    ensure(worst <= 1e-8, || format!("max entry deviation {worst:e}"))?;
    Ok(format!("max entry deviation {worst:.1e} over 20 instances x {{T = 0, random T}}"))
}

fn energy_decomposition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let meshes = generic_meshes();
    let spectra: Vec<_> = meshes.iter().map(|m| spectrum(m, 25)).collect();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let spec = &spectra[rng.gen_range(0..spectra.len())];
        let k = rng.gen_range(1..=25);
        let basis = make_basis(Arc::new(spec.truncated(k).unwrap()), &random_t(&mut rng, k, 3.0)).unwrap();
        let cols = rng.gen_range(1..5);
        let x = random_matrix(&mut rng, basis.vertex_count(), cols);
        let mass = spec.mass();
        let m_norm = |s: &DMatrix<f64>| -> f64 { (0..s.nrows()).map(|v| mass[v] * s.row(v).norm_squared()).sum() };
        let coeffs = basis.pinv() * &x;
        let mut weighted = coeffs.clone();
        for (i, g) in basis.gains().iter().enumerate() {
            weighted.row_mut(i).scale_mut(*g);
        }
        let residual = &x - basis.psi() * &coeffs;
        let (total, parts) = (m_norm(&x), weighted.norm_squared() + m_norm(&residual));
        worst = worst.max((total - parts).abs() / total);
    }
    ensure(worst <= 1e-8, || format!("relative gap {worst:e}"))?;
    Ok(format!("max relative gap {worst:.1e} over 50 instances"))
}

fn gradient_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for config_index in 0..20 {
        let (mx, my) = (bumpy_grid(7, 6, config_index), bumpy_grid(7, 6, 100 + config_index));
        let k = 12;
        let d = rng.gen_range(3..6);
        let side = |m: &TriMesh, rng: &mut ChaCha8Rng| {
            let spectrum = spectrum(m, k);
            let values = DMatrix::from_fn(m.vertex_count(), d, |v, _| m.vertices()[v][2] + rng.gen_range(-0.5..0.5));
            Arc::new(ShapeData { spectrum, features: FeatureSet::new(values, FeatureKind::Provided).unwrap() })
        };
        let pair = TrainPair { x: side(&mx, &mut rng), y: side(&my, &mut rng) };
        let a = DMatrix::identity(d, d) + random_matrix(&mut rng, d, d) * 0.3;
        let state = TrainState::from_parts(random_t(&mut rng, k, 1.5), FeatureTransform::new(a).unwrap());
        let k_init = rng.gen_range(2..6);
        let config = TrainConfig {
            alpha: rng.gen_range(0.2..1.0),
            schedule: Schedule::new(k_init, rng.gen_range(k_init..=k), rng.gen_range(1..4)),
            bidirectional: config_index % 3 == 0,
            ..TrainConfig::default()
        };
        let an = loss_and_gradient(&state, &pair, &config).unwrap();
        let fd_config = TrainConfig { gradient: GradientMode::FiniteDifference { h: 1e-5 }, ..config };
        let fd = loss_and_gradient(&state, &pair, &fd_config).unwrap();
        let pairs = an.grad_t.iter().zip(&fd.grad_t).chain(an.grad_a.iter().zip(fd.grad_a.iter()));
        for (g, f) in pairs {
            let scale = g.abs().max(f.abs());
            if scale > 0.0 {
                worst = worst.max((g - f).abs() / scale);
            }
            checked += 1;
        }
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!("{checked} partial derivatives, worst relative error {worst:.1e}"))
}

fn exact_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = bumpy_grid(4, 4, 6);
    let n = base.vertex_count();
    for trial in 0..5 {
        let (copy, gt) = permuted(&base, &mut rng);
        let filter = if trial == 0 { InhibitionFilter::identity(n) } else { random_t(&mut rng, n, 0.5) };
        let bx = make_basis(spectrum(&base, n), &filter).unwrap();
        let by = make_basis(spectrum(&copy, n), &filter).unwrap();
        let c = fmap_project(&gt, &bx, &by, n).unwrap();
        let recovered = recover_map(&c, &bx, &by).unwrap();
        ensure(recovered == gt, || format!("trial {trial} recovered a different map"))?;
    }
    Ok(format!("5 random permutations of a {n}-vertex mesh recovered exactly (k = |V|)"))
}

fn benchmark_config(gradient: GradientMode) -> PipelineConfig {
    PipelineConfig {
        k: 40,
        features: FeatureConfig { hks: 16, wks: 0, xyz: true },
        train: TrainConfig { iterations: 200, gradient, ..TrainConfig::default() },
        lambda_reg: 1e-3,
        zoomout: Some(Schedule::new(20, 40, 1)),
    }
}

fn benchmark_input() -> PipelineInput {
    let base = shapes::icosphere(3).unwrap();
    assert_eq!(base.vertex_count(), 642);
    PipelineInput::from(&make_synthetic_pair(&base, Deformation::NoisyPermutation { sigma: 0.01 }, 0).unwrap())
}

fn learned_run(gradient: GradientMode) -> PipelineOutput {
    let variant = Variant { basis: BasisVariant::Learned, route: Route::Projection };
    run_pipeline(&benchmark_input(), variant, &benchmark_config(gradient)).unwrap()
}

fn near_isometric_benchmark(learned: &PipelineOutput) -> Check {
    let fixed = run_pipeline(
        &benchmark_input(),
        Variant { basis: BasisVariant::Fixed, route: Route::Projection },
        &benchmark_config(GradientMode::Analytic),
    )
    .unwrap();
    let (l, f) = (learned.report.mean_error, fixed.report.mean_error);
    ensure(l <= FD_REFERENCE_ERROR, || format!("learned {l:.6} above reference {FD_REFERENCE_ERROR:.6}"))?;
    ensure(l <= f, || format!("learned {l:.6} above fixed {f:.6}"))?;
    Ok(format!("learned {l:.6} <= reference {FD_REFERENCE_ERROR:.6}; learned <= fixed {f:.6}"))
}

fn inhibition_profile_shape(learned: &PipelineOutput) -> Check {
    let (bottom, top) = quartile_means(&learned.state.filter.gains());
    ensure(top <= bottom, || format!("top quartile {top:.4} above bottom quartile {bottom:.4}"))?;
    Ok(format!("bottom-quartile gain {bottom:.4}, top-quartile gain {top:.4}"))
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_basisfm")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn determinism() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = bumpy_grid(10, 8, 9);
    basisfm::mesh::write_off(&base, root.path().join("base.off")).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        cli(
            &dir,
            &["synth", "--base", "../base.off", "--kind", "noisy", "--sigma", "0.01", "--seed", "4", "--out", "pair"],
        )?;
        fs::write(
            dir.join("project.toml"),
            "workspace = \"work\"\nmeshes = [\"pair/x.off\", \"pair/y.off\"]\n\n[pipeline]\nk = 20\n\n\
             [pipeline.features]\nhks = 8\nxyz = true\n\n\
             [pipeline.train]\niterations = 3\nlearning_rate = 0.01\nshuffle = true\nseed = 7\n\
             schedule = { k_init = 10, k_end = 20, step = 5 }\ngradient = { kind = \"finite_difference\", h = 1e-5 }\n\n\
             [pipeline.zoomout]\nk_init = 10\nk_end = 20\nstep = 2\n",
        )
        .map_err(|e| e.to_string())?;
        for cmd in [&["precompute"][..], &["train"], &["match", "pair/x.off", "pair/y.off", "--refine"]] {
            let mut args = vec!["--config", "project.toml"];
            args.extend_from_slice(cmd);
            cli(&dir, &args)?;
        }
        let read = |p: &str| fs::read(dir.join(p)).map_err(|e| format!("{p}: {e}"));
        outputs.push((read("work/train/loss.csv")?, read("work/train/filter.json")?, read("work/matches/x__y.txt")?));
    }
    ensure(outputs[0].0 == outputs[1].0, || "loss CSVs differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "filters differ".into())?;
    ensure(outputs[0].2 == outputs[1].2, || "correspondence files differ".into())?;
    Ok("train (finite differences) and match reruns are byte-identical".into())
}

/// Dense oracle: eigenpairs of `M^-1/2 K M^-1/2`, mapped back by `M^-1/2`.
fn dense_oracle(mesh: &TriMesh) -> (Vec<f64>, DMatrix<f64>) {
    let ops = build_operators(mesh).unwrap();
    let n = mesh.vertex_count();
    let s: Vec<f64> = ops.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let k = ops.stiffness.to_dense();
    let a = DMatrix::from_fn(n, n, |i, j| s[i] * k[(i, j)] * s[j]);
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |v, c| s[v] * eig.eigenvectors[(v, order[c])]);
    (values, vectors)
}

fn eigensolver_validation() -> Check {
    let meshes = [jittered_sphere(2, 10), bumpy_grid(12, 12, 11), bumpy_grid(9, 5, 12), jittered_sphere(1, 13)];
    let (mut worst_val, mut worst_vec) = (0.0f64, 0.0f64);
    for mesh in &meshes {
        ensure(mesh.vertex_count() <= 200, || "oracle mesh too large".into())?;
        let k = 30.min(mesh.vertex_count());
        let spec = spectrum(mesh, k);
        let (values, vectors) = dense_oracle(mesh);
        for j in 0..k {
            worst_val = worst_val.max((spec.eigenvalues()[j] - values[j]).abs());
            let ours = spec.phi().column(j);
            let theirs = vectors.column(j);
            let sign = if ours.dot(&theirs) < 0.0 { -1.0 } else { 1.0 };
            worst_vec = worst_vec.max((ours - theirs * sign).amax());
        }
    }
    ensure(worst_val <= 1e-6 && worst_vec <= 1e-6, || {
        format!("eigenvalue {worst_val:e}, eigenvector entry {worst_vec:e}")
    })?;
    Ok(format!("max eigenvalue deviation {worst_val:.1e}, max eigenvector entry deviation {worst_vec:.1e}"))
}

fn run(number: usize, name: &str, budget: Option<Duration>, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    let elapsed = start.elapsed();
    let outcome = match (outcome, budget) {
        (Ok(_), Some(b)) if elapsed > b => {
            Err(format!("took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()))
        }
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {number:>2} {tag} {name} ({:.1}s): {detail}", elapsed.as_secs_f64());
    outcome.is_ok()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--reference-run") {
        let out = learned_run(GradientMode::FiniteDifference { h: 1e-5 });
        println!("finite-difference reference mean error: {:?}", out.report.mean_error);
        return ExitCode::SUCCESS;
    }
    // test listings expect no output from a harness-less target
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    // bare numbers select criteria; 8 needs 7
    let only: Vec<usize> = args.iter().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n) || (n == 7 && only.contains(&8));
    let secs = |s| Some(Duration::from_secs(s));
    let mut ok = true;
    ok &= !wanted(1) || run(1, "basis algebra", secs(10), basis_algebra);
    ok &= !wanted(2) || run(2, "convolution identity", secs(5), convolution_identity);
    ok &= !wanted(3) || run(3, "solver/projection equivalence", secs(30), solver_projection_equivalence);
    ok &= !wanted(4) || run(4, "energy decomposition", secs(10), energy_decomposition);
    ok &= !wanted(5) || run(5, "gradient oracle", secs(60), gradient_oracle);
    ok &= !wanted(6) || run(6, "exact recovery", secs(5), exact_recovery);
    let mut learned = None;
    ok &= !wanted(7)
        || run(7, "near-isometric benchmark", secs(300), || {
            let out = learned_run(GradientMode::Analytic);
            let verdict = near_isometric_benchmark(&out);
            learned = Some(out);
            verdict
        });
    ok &= !wanted(8)
        || run(8, "inhibition profile shape", None, || match &learned {
            Some(out) => inhibition_profile_shape(out),
            None => Err("criterion 7 produced no trained state".into()),
        });
    ok &= !wanted(9) || run(9, "determinism", None, determinism);
    ok &= !wanted(10) || run(10, "eigensolver validation", None, eigensolver_validation);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
