//! Acceptance criteria, one printed `PASS`/`FAIL` line each.
//!
//! The desk-scale run (criteria 6, 7, 8) takes tens of minutes on one core
//! and is ignored by default:
//!
//!     cargo test -p ppca-cli --test acceptance -- --ignored --nocapture

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ppca_core::field_data::{
    apply_laplacian, generate_dataset, grid_spacing, sample_grf, solve_poisson, Dataset, Field, GrfParams,
    SolverConfig,
};
use ppca_core::metrics::{energy_spectrum, pdf_estimate, seam_discontinuity, ssim, MetricsConfig};
use ppca_core::neuralnet::{Cnn, Mlp, Network};
use ppca_core::patching::{assemble_patches, extract_patches, hanning_window, make_layout, AssemblyMode};
use ppca_core::pca::{fit_global, fit_pca, Selection};
use ppca_core::pipelines::{fit_pipeline, FitReport, PipelineModel, Split, StageTimings, VariantSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORDER_MIN: f64 = 1.9;
const RESIDUAL_MAX: f64 = 1e-8;
const BLEND_MAX_ERR: f64 = 1e-12;
const ORTHO_MAX: f64 = 1e-10;
const ROUND_TRIP_MAX: f64 = 1e-8;
const GRAD_REL_MAX: f64 = 1e-4;
const PARSEVAL_REL_MAX: f64 = 1e-8;
const PDF_MASS_MAX: f64 = 1e-10;
const OVERLAP_SSIM_MIN: f64 = 0.98;
const OVERLAP_MSE_MAX: f64 = 5e-7;
const GLOBAL_SSIM_MIN: f64 = 0.97;
const SEAM_FRACTION_MIN: f64 = 0.9;
const TOTAL_RATIO_MAX: f64 = 0.5;
const PCA_SPEEDUP_MIN: f64 = 3.0;
/// Output-side retained variance used for the desk-scale fits.
const DESK_OUTPUT_VARIANCE: f64 = 0.9999;

fn verdict(criterion: u32, pass: bool, detail: &str) -> bool {
    println!("criterion {criterion:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_field(d: usize, rng: &mut ChaCha8Rng) -> Field {
    Field::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_solver() {
    let start = Instant::now();
    let errors: Vec<(f64, f64)> = [16, 32, 64]
        .iter()
        .map(|&d| {
            let exact = Field::from_unit_square(d, |x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
            let f = Field::new(d, exact.values().iter().map(|v| -2.0 * std::f64::consts::PI.powi(2) * v).collect()).unwrap();
            let u = solve_poisson(&f, &SolverConfig::for_resolution(d)).unwrap();
            (grid_spacing(d), max_abs_diff(u.values(), exact.values()))
        })
        .collect();
    let order = errors
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .fold(f64::INFINITY, f64::min);

    let d = 128;
    let cfg = SolverConfig::for_resolution(d);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let f = sample_grf(&GrfParams::default(), d, i).unwrap();
        let u = solve_poisson(&f, &cfg).unwrap();
        let lap = apply_laplacian(&u);
        let (mut num, mut den) = (0.0, 0.0);
        for r in 1..d - 1 {
            for c in 1..d - 1 {
                num += (lap.get(r, c) - f.get(r, c)).powi(2);
                den += f.get(r, c).powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    let pass = order >= ORDER_MIN && worst <= RESIDUAL_MAX;
    let detail = format!(
        "observed order {order:.3} (>= {ORDER_MIN}), worst relative residual {worst:.2e} (<= {RESIDUAL_MAX:.0e}) over 100 fields at D=128, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    assert!(verdict(1, pass, &detail));
}

#[test]
fn criterion_02_patch_geometry() {
    let rows = [
        (8, 3, 1681),
        (8, 4, 961),
        (8, 5, 625),
        (16, 6, 361),
        (16, 8, 225),
        (16, 10, 144),
        (16, 12, 100),
        (32, 12, 81),
        (32, 16, 49),
        (32, 20, 25),
        (64, 24, 9),
        (64, 32, 9),
        (64, 40, 4),
    ];
    let wrong: Vec<String> = rows
        .iter()
        .filter_map(|&(p, s, n)| {
            let got = make_layout(128, p, s).unwrap().count();
            (got != n).then(|| format!("p{p} s{s}: {got} != {n}"))
        })
        .collect();
    let detail = format!("{}/13 rows exact {wrong:?}", 13 - wrong.len());
    assert!(verdict(2, wrong.is_empty(), &detail));
}

#[test]
fn criterion_03_blend_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fields = [sample_grf(&GrfParams::default(), 128, 7).unwrap(), random_field(128, &mut rng)];
    let mut worst = 0.0f64;
    for (p, s) in [(8, 4), (16, 8), (32, 16), (64, 32)] {
        let layout = make_layout(128, p, s).unwrap();
        let mode = AssemblyMode::Blend(hanning_window(p).unwrap());
        for f in &fields {
            let back = assemble_patches(&extract_patches(f, &layout).unwrap(), &mode).unwrap();
            worst = worst.max(max_abs_diff(back.values(), f.values()));
        }
    }
    let detail = format!("max error {worst:.2e} (<= {BLEND_MAX_ERR:.0e}) for p/s 8/4, 16/8, 32/16, 64/32");
    assert!(verdict(3, worst <= BLEND_MAX_ERR, &detail));
}

#[test]
fn criterion_04_pca_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (m, dim) = (120, 40);
    let x: Vec<f64> = (0..m * dim).map(|i| rng.random_range(-1.0..1.0) / (1.0 + (i % dim) as f64)).collect();

    let full = fit_pca(&x, m, dim, Selection::VarianceTarget(1.0)).unwrap();
    let mut ortho = 0.0f64;
    for i in 0..full.k() {
        for j in 0..full.k() {
            let dot: f64 = full.component(i).iter().zip(full.component(j)).map(|(a, b)| a * b).sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let round_trip = x
        .chunks(dim)
        .map(|row| max_abs_diff(&full.decode(&full.encode(row).unwrap()).unwrap(), row))
        .fold(0.0, f64::max);

    let energy: Vec<f64> = full.singular_values().iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    let k = fit_pca(&x, m, dim, Selection::VarianceTarget(0.99)).unwrap().k();
    let kept = energy[..k].iter().sum::<f64>() / total;
    let before = energy[..k - 1].iter().sum::<f64>() / total;
    let minimal = kept >= 0.99 && before < 0.99;

    let d = 64;
    let ds = generate_dataset(500, d, &GrfParams::default(), &SolverConfig::for_resolution(d)).unwrap();
    let us = ds.solutions();
    let basis = fit_global(&us, Selection::FixedK(8)).unwrap();
    let n = d * d;
    let centred: Vec<Vec<f64>> =
        us.iter().map(|u| u.values().iter().zip(basis.mean()).map(|(v, mu)| v - mu).collect()).collect();
    let residual = |vectors: &[Vec<f64>]| -> f64 {
        centred
            .iter()
            .map(|x| {
                let norm: f64 = x.iter().map(|v| v * v).sum();
                let kept: f64 = vectors.iter().map(|v| x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum();
                norm - kept
            })
            .sum()
    };
    let best = residual(&(0..basis.k()).map(|i| basis.component(i).to_vec()).collect::<Vec<_>>());
    let mut dominated = 0;
    for _ in 0..20 {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < basis.k() {
            let mut v = random_vec(&mut rng, n);
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
        if best <= residual(&q) {
            dominated += 1;
        }
    }

    let pass = ortho <= ORTHO_MAX && round_trip <= ROUND_TRIP_MAX && minimal && dominated == 20;
    let detail = format!(
        "orthonormality {ortho:.1e}, round trip {round_trip:.1e}, k={k} minimal at 0.99: {minimal}, \
         Eckart-Young dominance {dominated}/20 on 500 samples at D={d}, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    assert!(verdict(4, pass, &detail));
}

/// `||analytic - numeric|| / ||analytic + numeric||` with central differences.
fn gradient_error<N: Network>(net: &N, x: &[f64], t: &[f64], n: usize) -> f64 {
    let l2 = 1e-3;
    let (_, analytic) = net.loss_grad(x, t, n, l2);
    let eps = 1e-6;
    let mut probe = net.clone();
    let numeric: Vec<f64> = (0..analytic.len())
        .map(|i| {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + eps;
            let up = probe.loss_grad(x, t, n, l2).0;
            probe.params_mut()[i] = orig - eps;
            let down = probe.loss_grad(x, t, n, l2).0;
            probe.params_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect();
    let norm = |f: &dyn Fn(f64, f64) -> f64| analytic.iter().zip(&numeric).map(|(a, b)| f(*a, *b).powi(2)).sum::<f64>().sqrt();
    let sum = norm(&|a, b| a + b);
    if sum == 0.0 {
        0.0
    } else {
        norm(&|a, b| a - b) / sum
    }
}

#[test]
fn criterion_05_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dense_worst = 0.0f64;
    for case in 0..50 {
        let depth = rng.random_range(1..4);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..7)).collect();
        let count = Mlp::new(&widths, case).unwrap().params().len();
        let net = Mlp::from_params(&widths, random_vec(&mut rng, count)).unwrap();
        let n = rng.random_range(1..5);
        let x = random_vec(&mut rng, n * widths[0]);
        let t = random_vec(&mut rng, n * widths[depth]);
        dense_worst = dense_worst.max(gradient_error(&net, &x, &t, n));
    }
    let mut conv_worst = 0.0f64;
    for case in 0..50 {
        let kernel = [1, 3, 5][rng.random_range(0..3)];
        let side = rng.random_range(kernel.max(2)..8);
        let mut channels = vec![rng.random_range(1..3)];
        channels.extend((0..rng.random_range(0..3)).map(|_| rng.random_range(1..4)));
        channels.push(rng.random_range(1..3));
        let count = Cnn::new(&channels, kernel, side, case).unwrap().params().len();
        let net = Cnn::from_params(&channels, kernel, side, random_vec(&mut rng, count)).unwrap();
        let n = rng.random_range(1..3);
        let x = random_vec(&mut rng, n * net.input_len());
        let t = random_vec(&mut rng, n * net.output_len());
        conv_worst = conv_worst.max(gradient_error(&net, &x, &t, n));
    }
    let pass = dense_worst <= GRAD_REL_MAX && conv_worst <= GRAD_REL_MAX;
    let detail = format!("worst relative error dense {dense_worst:.1e}, conv {conv_worst:.1e} (<= {GRAD_REL_MAX:.0e}), 50 shapes each");
    assert!(verdict(5, pass, &detail));
}

#[test]
fn criterion_09_metric_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let identity = (0..10).all(|i| {
        let f = sample_grf(&GrfParams::default(), 32, i).unwrap();
        ssim(&f, &f).unwrap() == 1.0
    });
    let mut parseval = 0.0f64;
    let mut mass = 0.0f64;
    for i in 0..100 {
        let u = random_field([16, 31, 32, 64][i % 4], &mut rng);
        let energy: f64 = u.values().iter().map(|v| v * v).sum();
        let spectral: f64 = energy_spectrum(&u).iter().sum();
        parseval = parseval.max((spectral - energy).abs() / energy);
        let bins = pdf_estimate(&u, 64).unwrap();
        let width = bins[1].center - bins[0].center;
        mass = mass.max((bins.iter().map(|b| b.density * width).sum::<f64>() - 1.0).abs());
    }
    let pass = identity && parseval <= PARSEVAL_REL_MAX && mass <= PDF_MASS_MAX;
    let detail = format!("SSIM(a,a)=1: {identity}, Parseval {parseval:.1e} (<= {PARSEVAL_REL_MAX:.0e}), PDF mass {mass:.1e} (<= {PDF_MASS_MAX:.0e})");
    assert!(verdict(9, pass, &detail));
}

fn ppca(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ppca")).args(args).env_remove("PPCA_THREADS").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// generate + fit + evaluate in `dir` with one thread.
fn seeded_run(dir: &Path) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    ppca(&["--threads", "1", "generate", "--n", "80", "--grid", "32", "--seed", "11", "--out", &p("data.ppca")]);
    ppca(&[
        "--threads", "1", "fit", "--data", &p("data.ppca"), "--out", &p("fit"), "--variant", "l2l", "--patch", "8",
        "--stride", "4", "--blend", "hanning", "--epochs", "40", "--hidden", "64,64",
    ]);
    ppca(&["--threads", "1", "evaluate", "--model", &p("fit/model.ppcm"), "--data", &p("data.ppca"), "--out", &p("eval")]);
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    seeded_run(a.path());
    seeded_run(b.path());
    let payloads = [
        "data.ppca",
        "fit/model.ppcm",
        "eval/report.json",
        "eval/samples.csv",
        "eval/spectrum.csv",
        "eval/pdf.csv",
    ];
    let differing: Vec<&str> = payloads
        .iter()
        .copied()
        .filter(|f| fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap())
        .collect();
    let detail = format!(
        "{}/{} payloads byte-identical {differing:?}, {:.1}s",
        payloads.len() - differing.len(),
        payloads.len(),
        start.elapsed().as_secs_f64()
    );
    assert!(verdict(10, differing.is_empty(), &detail));
}

struct DeskRun {
    model: PipelineModel,
    report: FitReport,
    predictions: Vec<Field>,
    inference: f64,
}

fn desk_fit(data: &Dataset, mut spec: VariantSpec) -> (PipelineModel, FitReport) {
    spec.output_selection = Selection::VarianceTarget(DESK_OUTPUT_VARIANCE);
    let (model, report) = fit_pipeline(data, &spec).unwrap();
    println!("  {} fitted: {:?}", spec.label(), report.timings);
    (model, report)
}

fn predict_timed(model: &PipelineModel, data: &Dataset, test: &[usize]) -> (Vec<Field>, f64) {
    let fs: Vec<&Field> = test.iter().map(|&i| &data.samples()[i].coefficient).collect();
    let start = Instant::now();
    let out = model.predict_batch(&fs).unwrap();
    (out, start.elapsed().as_secs_f64())
}

#[test]
#[ignore = "desk-scale run, tens of minutes"]
fn criteria_06_07_08_desk_scale() {
    let d = 128;
    let start = Instant::now();
    let data = generate_dataset(2000, d, &GrfParams::default(), &SolverConfig::for_resolution(d)).unwrap();
    println!("  dataset m=2000 D={d} generated in {:.1}s", start.elapsed().as_secs_f64());

    let fits = [
        desk_fit(&data, VariantSpec::global(d)),
        desk_fit(&data, VariantSpec::local_to_local_blend(d, 16, 8)),
        desk_fit(&data, VariantSpec::local_to_local_refined(d, 16, 5)),
    ];
    let test = fits[0].0.split_indices(&data, Split::Test).unwrap();
    let [global, overlap, refined] = fits.map(|(model, report)| {
        let (predictions, inference) = predict_timed(&model, &data, &test);
        DeskRun { model, report, predictions, inference }
    });
    let mosaic_model = refined.model.without_refiner();
    let (mosaic_predictions, mosaic_inference) = predict_timed(&mosaic_model, &data, &test);

    let cfg = MetricsConfig::default();
    let eval = |m: &PipelineModel| m.evaluate(&data, Split::Test, &cfg).unwrap();
    let (g, o, r, mo) = (eval(&global.model), eval(&overlap.model), eval(&refined.model), eval(&mosaic_model));
    for rep in [&g, &o, &r, &mo] {
        println!("  {:<24} test mse {:.3e} ssim {:.5}", rep.label, rep.mse, rep.ssim);
    }
    let losses_fall = [&global, &overlap, &refined].iter().all(|run| {
        let h = &run.report.operator_history;
        let refiner_ok = run.report.refiner_history.as_ref().is_none_or(|r| r.final_train_loss <= r.initial_train_loss);
        h.final_train_loss <= h.initial_train_loss && refiner_ok
    });
    let c6 = o.ssim >= OVERLAP_SSIM_MIN && o.mse <= OVERLAP_MSE_MAX && g.ssim >= GLOBAL_SSIM_MIN && losses_fall;
    let c6 = verdict(
        6,
        c6,
        &format!(
            "overlap p16 s8 SSIM {:.5} (>= {OVERLAP_SSIM_MIN}) MSE {:.2e} (<= {OVERLAP_MSE_MAX:.0e}); global SSIM {:.5} (>= {GLOBAL_SSIM_MIN}); training losses fell: {losses_fall}",
            o.ssim, o.mse, g.ssim
        ),
    );

    let layout = make_layout(d, 16, 16).unwrap();
    let seam = |u: &Field| seam_discontinuity(u, &layout).unwrap();
    let (mut over_overlap, mut over_refined) = (0, 0);
    for ((m, o), r) in mosaic_predictions.iter().zip(&overlap.predictions).zip(&refined.predictions) {
        let sm = seam(m);
        over_overlap += usize::from(sm > seam(o));
        over_refined += usize::from(sm > seam(r));
    }
    let n = test.len() as f64;
    let (fo, fr) = (over_overlap as f64 / n, over_refined as f64 / n);
    let c7 = verdict(
        7,
        fo >= SEAM_FRACTION_MIN && fr >= SEAM_FRACTION_MIN,
        &format!("mosaic seam above overlap on {:.1}% and above refined on {:.1}% of {} test samples (>= 90%)", 100.0 * fo, 100.0 * fr, test.len()),
    );

    let pca = |t: &StageTimings| t.input_pca + t.output_pca;
    let total = |run: &DeskRun| run.report.timings.total() + run.inference;
    let global_total = total(&global);
    let mosaic_timings = StageTimings { refiner_training: 0.0, ..refined.report.timings.clone() };
    let ratios = [
        ("mosaic", (mosaic_timings.total() + mosaic_inference) / global_total),
        ("overlap", total(&overlap) / global_total),
        ("refined", total(&refined) / global_total),
    ];
    let pca_speedup = pca(&global.report.timings) / pca(&mosaic_timings);
    let c8 = verdict(
        8,
        ratios.iter().all(|(_, r)| *r <= TOTAL_RATIO_MAX) && pca_speedup >= PCA_SPEEDUP_MIN,
        &format!("total time vs global {ratios:.3?} (<= {TOTAL_RATIO_MAX}); PCA-stage speedup p16 {pca_speedup:.2}x (>= {PCA_SPEEDUP_MIN}x); global total {global_total:.1}s"),
    );
    assert!(c6 && c7 && c8, "desk-scale criteria failed: 6 {c6}, 7 {c7}, 8 {c8}");
}
