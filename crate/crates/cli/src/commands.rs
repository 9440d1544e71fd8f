use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use ppca_core::bench::{
    bench_patch_tradeoff, bench_pca_vs_grid, bench_pipeline, patch_tradeoff_csv, pca_grid_csv, timing_csv,
    PatchTradeoffOptions, PcaGridOptions,
};
use ppca_core::field_data::{
    decode_dataset_header, decode_field, generate_dataset, load_dataset, load_field, save_dataset, save_field,
    sidecar_path, Dataset, DatasetStatistics, Field, SolverConfig, DATASET_MAGIC, FIELD_MAGIC, FIELD_VERSION,
};
use ppca_core::pipelines::{decode_model_header, fit_pipeline, load_model, save_model, MODEL_MAGIC};
use serde::Serialize;
use serde_json::json;

use crate::args::{BenchArgs, BenchKind, EvaluateArgs, FitArgs, GenerateArgs, InspectArgs, PredictArgs};
use crate::config::{require_file, RunConfig, VariantChoice};
use crate::error::{CliError, CliResult};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(ppca_core::Error::from)?;
    write_file(path, text + "\n")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn required(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::usage(format!("{flag} is required")))
}

fn read_prefix(path: &Path, n: u64) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|f| f.take(n).read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    require_file(path, "dataset")?;
    Ok(load_dataset(path)?)
}

pub fn generate(mut cfg: RunConfig, args: GenerateArgs) -> CliResult<()> {
    let ds = &mut cfg.dataset;
    ds.n = args.n.or(ds.n);
    ds.grid = args.grid.unwrap_or(ds.grid);
    ds.alpha = args.alpha.unwrap_or(ds.alpha);
    ds.tau = args.tau.unwrap_or(ds.tau);
    ds.seed = args.seed.unwrap_or(ds.seed);
    if let Some(p) = args.precision {
        ds.precision = p.into();
    }
    ds.path = args.out.or(ds.path.take());

    let out = required(cfg.dataset.path.clone(), "--out")?;
    let n = cfg
        .dataset
        .n
        .ok_or_else(|| CliError::usage("--n is required"))?;
    let grid = cfg.dataset.grid;
    let grf = cfg.grf();
    grf.validate()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }

    let dataset = generate_dataset(n, grid, &grf, &SolverConfig::for_resolution(grid))?;
    save_dataset(&dataset, &out, cfg.dataset.precision)?;
    let mut echo = out.as_os_str().to_owned();
    echo.push(".config.toml");
    write_file(Path::new(&echo), cfg.to_toml()?)?;

    let stats = DatasetStatistics::of(&dataset);
    println!("wrote {} samples at D={} to {}", n, grid, out.display());
    println!(
        "f: mean {:.4e} std {:.4e} max|f| {:.4e}",
        stats.coefficient_mean, stats.coefficient_std, stats.coefficient_abs_max
    );
    println!(
        "u: mean {:.4e} std {:.4e} max|u| {:.4e}",
        stats.solution_mean, stats.solution_std, stats.solution_abs_max
    );
    Ok(())
}

pub fn fit(mut cfg: RunConfig, args: FitArgs) -> CliResult<()> {
    let v = &mut cfg.variant;
    if let Some(kind) = args.variant {
        v.kind = kind;
    }
    v.patch = args.patch.unwrap_or(v.patch);
    v.stride = args.stride.or(v.stride);
    v.blend = args.blend.unwrap_or(v.blend);
    v.refine |= args.refine;
    if let Some(h) = args.hidden {
        v.hidden = h;
    }
    v.variance_in = args.variance_in.unwrap_or(v.variance_in);
    v.variance_out = args.variance_out.unwrap_or(v.variance_out);
    v.components_in = args.components_in.or(v.components_in);
    v.components_out = args.components_out.or(v.components_out);
    v.test_fraction = args.test_fraction.unwrap_or(v.test_fraction);
    v.split_seed = args.split_seed.unwrap_or(v.split_seed);
    let t = &mut cfg.training;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.initial_lr = args.lr.unwrap_or(t.initial_lr);
    t.l2_penalty = args.l2.unwrap_or(t.l2_penalty);
    t.plateau_patience = args.patience.unwrap_or(t.plateau_patience);
    t.seed = args.train_seed.unwrap_or(t.seed);
    let r = &mut cfg.refiner;
    r.kernel_size = args.kernel.unwrap_or(r.kernel_size);
    r.train.epochs = args.refine_epochs.unwrap_or(r.train.epochs);
    r.crop = args.crop.unwrap_or(r.crop);
    if args.kernel.is_some() && !cfg.variant.refine {
        return Err(CliError::usage("--kernel needs --refine"));
    }
    cfg.dataset.path = args.data.or(cfg.dataset.path.take());
    cfg.output_dir = args.out.or(cfg.output_dir.take());

    let data = required(cfg.dataset.path.clone(), "--data")?;
    let out = required(cfg.output_dir.clone(), "--out")?;
    require_file(&data, "dataset")?;
    // The header fixes D, so the variant is validated before the payload is read.
    let header = decode_dataset_header(&read_prefix(&data, 64)?)?;
    let spec = cfg.variant_spec(header.resolution)?;

    let dataset = read_dataset(&data)?;
    let (model, report) = fit_pipeline(&dataset, &spec)?;
    create_dir(&out)?;
    let model_path = out.join("model.ppcm");
    save_model(&model, &model_path)?;
    write_json(&out.join("fit.json"), &report)?;
    cfg.echo(&out, "config.toml")?;

    let m = &model.metadata;
    println!(
        "{}: latent {} -> {}, {} parameters, fit {:.1} s",
        spec.label(),
        m.input_latent_dim,
        m.output_latent_dim,
        model.parameter_count(),
        report.timings.total()
    );
    println!("wrote {}", model_path.display());
    Ok(())
}

/// Where `predict` reads fields from.
enum PredictInput {
    Single(PathBuf),
    Files(Vec<PathBuf>),
    Dataset(PathBuf),
}

fn classify_input(path: &Path) -> CliResult<PredictInput> {
    require_file(path, "input")?;
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ppcf"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::usage(format!("no .ppcf files in {}", path.display())));
        }
        return Ok(PredictInput::Files(files));
    }
    let magic = read_prefix(path, 4)?;
    if magic == DATASET_MAGIC {
        Ok(PredictInput::Dataset(path.to_path_buf()))
    } else {
        Ok(PredictInput::Single(path.to_path_buf()))
    }
}

pub fn predict(mut cfg: RunConfig, args: PredictArgs) -> CliResult<()> {
    cfg.model = args.model.or(cfg.model.take());
    let model_path = required(cfg.model.clone(), "--model")?;
    let input = classify_input(&args.input)?;
    let out = required(args.out.or(cfg.output_dir.clone()), "--out")?;
    require_file(&model_path, "model")?;
    let model = load_model(&model_path)?;
    let d = model.resolution();

    let (names, fields): (Vec<String>, Vec<Field>) = match input {
        PredictInput::Single(path) => {
            let f = load_field(&path)?;
            f.check_resolution(d)?;
            let pred = model.predict(&f)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            save_field(&pred, &out)?;
            println!("wrote {}", out.display());
            return Ok(());
        }
        PredictInput::Files(paths) => {
            let mut names = Vec::new();
            let mut fields = Vec::new();
            for p in paths {
                let f = load_field(&p)?;
                f.check_resolution(d).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                names.push(p.file_name().unwrap().to_string_lossy().into_owned());
                fields.push(f);
            }
            (names, fields)
        }
        PredictInput::Dataset(path) => {
            let ds = read_dataset(&path)?;
            if ds.resolution() != d {
                return Err(ppca_core::Error::Geometry {
                    expected: d,
                    actual: ds.resolution(),
                }
                .into());
            }
            let names = (0..ds.len()).map(|i| format!("sample_{i:06}")).collect();
            let fields = ds.samples().iter().map(|s| s.coefficient.clone()).collect();
            (names, fields)
        }
    };

    let refs: Vec<&Field> = fields.iter().collect();
    let preds = model.predict_batch(&refs)?;
    create_dir(&out)?;
    let mut manifest = String::from("index,input,output\n");
    for (i, (name, pred)) in names.iter().zip(&preds).enumerate() {
        let stem = name.strip_suffix(".ppcf").unwrap_or(name);
        let file = format!("{stem}.pred.ppcf");
        save_field(pred, &out.join(&file))?;
        manifest.push_str(&format!("{i},{name},{file}\n"));
    }
    write_file(&out.join("manifest.csv"), manifest)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

pub fn evaluate(mut cfg: RunConfig, args: EvaluateArgs) -> CliResult<()> {
    cfg.model = args.model.or(cfg.model.take());
    cfg.dataset.path = args.data.or(cfg.dataset.path.take());
    cfg.output_dir = args.out.or(cfg.output_dir.take());
    cfg.metrics.pdf_bins = args.pdf_bins.unwrap_or(cfg.metrics.pdf_bins);
    cfg.metrics.ssim_window = args.ssim_window.unwrap_or(cfg.metrics.ssim_window);
    cfg.metrics.validate()?;

    let model_path = required(cfg.model.clone(), "--model")?;
    let data = required(cfg.dataset.path.clone(), "--data")?;
    let out = required(cfg.output_dir.clone(), "--out")?;
    require_file(&model_path, "model")?;
    let model = load_model(&model_path)?;
    let dataset = read_dataset(&data)?;
    let report = model.evaluate(&dataset, args.split.into(), &cfg.metrics)?;
    create_dir(&out)?;
    report.write_to(&out)?;
    cfg.echo(&out, "config.toml")?;

    let s = report.summary();
    println!(
        "{} on {} split ({} samples{}): mse {:.4e} mae {:.4e} ssim {:.5}",
        s.label,
        s.split,
        s.sample_count,
        if s.in_sample { ", in-sample" } else { "" },
        s.mse,
        s.mae,
        s.ssim
    );
    Ok(())
}

fn parse_pair(text: &str) -> CliResult<[usize; 2]> {
    let bad = || CliError::usage(format!("bad patch:stride pair {text:?}"));
    let (p, s) = text.split_once(':').ok_or_else(bad)?;
    Ok([p.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?])
}

pub fn bench(mut cfg: RunConfig, args: BenchArgs) -> CliResult<()> {
    let b = &mut cfg.bench;
    if let Some(g) = args.grids {
        b.grids = g;
    }
    b.samples = args.samples.unwrap_or(b.samples);
    if let Some(pairs) = &args.pairs {
        b.pairs = pairs.iter().map(|p| parse_pair(p)).collect::<CliResult<_>>()?;
    }
    if let Some(v) = args.variants {
        b.variants = v;
    }
    b.repetitions = args.reps.or(b.repetitions);
    b.memory_budget_mb = args.memory_budget_mb.unwrap_or(b.memory_budget_mb);
    b.downstream |= args.downstream;
    cfg.training.epochs = args.epochs.unwrap_or(cfg.training.epochs);
    cfg.dataset.path = args.data.or(cfg.dataset.path.take());
    cfg.output_dir = args.out.or(cfg.output_dir.take());
    if cfg.bench.repetitions == Some(0) {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let out = required(cfg.output_dir.clone(), "--out")?;

    match args.kind {
        BenchKind::PcaGrid => {
            let options = PcaGridOptions {
                samples: cfg.bench.samples,
                repetitions: cfg.bench.repetitions.unwrap_or(3),
                grf: cfg.grf(),
                memory_budget_bytes: cfg.bench.memory_budget_mb << 20,
                ..PcaGridOptions::default()
            };
            let records = bench_pca_vs_grid(&cfg.bench.grids, &options)?;
            create_dir(&out)?;
            write_file(&out.join("pca_grid.csv"), pca_grid_csv(&records))?;
            write_json(&out.join("pca_grid.json"), &records)?;
            for r in &records {
                match (&r.timing, &r.skipped) {
                    (Some(t), _) => println!(
                        "D={}: {} components, {:.3} s",
                        r.resolution,
                        r.components.unwrap_or(0),
                        t.wall_seconds
                    ),
                    (None, reason) => println!("D={}: skipped ({})", r.resolution, reason.as_deref().unwrap_or("")),
                }
            }
        }
        BenchKind::Patch => {
            let data = required(cfg.dataset.path.clone(), "--data")?;
            require_file(&data, "dataset")?;
            let d = decode_dataset_header(&read_prefix(&data, 64)?)?.resolution;
            let downstream = if cfg.bench.downstream {
                let mut template = cfg.clone();
                template.variant.kind = VariantChoice::L2l;
                template.variant.stride = None;
                Some(template.variant_spec(d)?)
            } else {
                None
            };
            let options = PatchTradeoffOptions {
                repetitions: cfg.bench.repetitions.unwrap_or(3),
                downstream,
                ..PatchTradeoffOptions::default()
            };
            let pairs: Vec<(usize, usize)> = cfg.bench.pairs.iter().map(|&[p, s]| (p, s)).collect();
            let dataset = read_dataset(&data)?;
            let records = bench_patch_tradeoff(&pairs, &dataset, &options)?;
            create_dir(&out)?;
            write_file(&out.join("patch_tradeoff.csv"), patch_tradeoff_csv(&records))?;
            write_json(&out.join("patch_tradeoff.json"), &records)?;
            for r in &records {
                println!(
                    "p={} s={}: {} patches, latent {}, bank {:.3} s (global {:.3} s)",
                    r.patch_size, r.stride, r.patch_count, r.latent_dim, r.bank_fit_seconds, r.global_fit_seconds
                );
            }
        }
        BenchKind::Pipeline => {
            let data = required(cfg.dataset.path.clone(), "--data")?;
            require_file(&data, "dataset")?;
            let d = decode_dataset_header(&read_prefix(&data, 64)?)?.resolution;
            let variants = cfg
                .bench
                .variants
                .iter()
                .map(|name| cfg.named_variant(name, d))
                .collect::<CliResult<Vec<_>>>()?;
            let dataset = read_dataset(&data)?;
            let result = bench_pipeline(&variants, &dataset, cfg.bench.repetitions.unwrap_or(1))?;
            create_dir(&out)?;
            write_file(&out.join("pipeline_timing.csv"), timing_csv(&result.records))?;
            write_json(&out.join("pipeline.json"), &result)?;
            for t in &result.totals {
                println!(
                    "{}: pca {:.2} s, training {:.2} s, inference {:.2} s, total {:.2} s, ssim {:.5}",
                    t.label, t.pca_seconds, t.training_seconds, t.inference_seconds, t.total_seconds, t.test_ssim
                );
            }
            for s in &result.speedups {
                println!("{} vs {}: total x{:.2}, pca x{:.2}", s.label, s.baseline, s.total, s.pca);
            }
        }
    }
    cfg.echo(&out, "config.toml")?;
    Ok(())
}

pub fn inspect(args: InspectArgs) -> CliResult<()> {
    let path = &args.path;
    require_file(path, "file")?;
    let magic = read_prefix(path, 4)?;
    let value = if magic == DATASET_MAGIC {
        let header = decode_dataset_header(&read_prefix(path, 64)?)?;
        let sidecar = fs::read(sidecar_path(path))
            .ok()
            .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok());
        json!({ "format": "dataset", "header": header, "sidecar": sidecar })
    } else if magic == MODEL_MAGIC {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let (version, spec, metadata) = decode_model_header(&bytes)?;
        json!({
            "format": "model",
            "version": version,
            "label": spec.label(),
            "spec": spec,
            "metadata": metadata,
        })
    } else if magic == FIELD_MAGIC {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let field = decode_field(&bytes)?;
        let (min, max) = field.min_max();
        json!({
            "format": "field",
            "version": FIELD_VERSION,
            "resolution": field.resolution(),
            "min": min,
            "max": max,
        })
    } else {
        return Err(ppca_core::Error::BadMagic {
            expected: "PPCA, PPCM or PPCF".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        }
        .into());
    };
    println!("{}", serde_json::to_string_pretty(&value).map_err(ppca_core::Error::from)?);
    Ok(())
}
