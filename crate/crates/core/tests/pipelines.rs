use std::sync::OnceLock;

use ppca_core::field_data::{generate_dataset, Dataset, GrfParams, SolverConfig};
use ppca_core::metrics::MetricsConfig;
use ppca_core::neuralnet::TrainConfig;
use ppca_core::pipelines::{
    decode_model, decode_model_header, encode_model, fit_pipeline, load_model, save_model, PatchGeometry,
    PipelineModel, Split, VariantSpec, MODEL_VERSION,
};
use ppca_core::Error;

fn dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| generate_dataset(60, 32, &GrfParams::default(), &SolverConfig::for_resolution(32)).unwrap())
}

fn quick(mut spec: VariantSpec) -> VariantSpec {
    spec.hidden_widths = vec![32, 32];
    spec.train = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    if let Some(r) = spec.refiner.as_mut() {
        r.hidden_channels = vec![4];
        r.crop = 16;
        r.train.epochs = 3;
    }
    spec
}

fn all_variants() -> Vec<VariantSpec> {
    vec![
        quick(VariantSpec::global(32)),
        quick(VariantSpec::local_to_global(32, PatchGeometry::non_overlapping(8))),
        quick(VariantSpec::local_to_local(32, 8)),
        quick(VariantSpec::local_to_local_blend(32, 8, 4)),
        quick(VariantSpec::local_to_local_refined(32, 8, 3)),
    ]
}

fn fitted(spec: &VariantSpec) -> PipelineModel {
    fit_pipeline(dataset(), spec).unwrap().0
}

/// `(tag, payload start, payload len)` of every section.
fn sections(bytes: &[u8]) -> Vec<([u8; 4], usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 6;
    while pos < bytes.len() {
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        out.push((tag, pos + 12, len));
        pos += 12 + len + 4;
    }
    out
}

#[test]
fn every_variant_fits_and_reports_its_dimensions() {
    for spec in all_variants() {
        let (model, report) = fit_pipeline(dataset(), &spec).unwrap();
        let m = &model.metadata;
        assert_eq!(m.dataset_size, 60);
        assert_eq!(m.train_count + m.test_count, 60);
        assert_eq!(m.test_count, 6);
        assert_eq!(m.input_latent_dim, model.input.latent_dim());
        assert_eq!(m.output_latent_dim, model.output.latent_dim());
        assert_eq!(report.label, spec.label());
        let hist = &report.operator_history;
        assert!(hist.final_train_loss <= hist.initial_train_loss, "{}", spec.label());
        assert_eq!(model.refiner.is_some(), spec.refiner.is_some());
        assert_eq!(report.refiner_history.is_some(), spec.refiner.is_some());
        let f = &dataset().samples()[0].coefficient;
        let u = model.predict(f).unwrap();
        assert_eq!(u.resolution(), 32);
        assert!(u.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn model_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for spec in all_variants() {
        let model = fitted(&spec);
        let bytes = encode_model(&model).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back).unwrap(), bytes, "{}", spec.label());
        let path = dir.path().join("m.ppcm");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let fs: Vec<_> = dataset().samples()[..4].iter().map(|s| &s.coefficient).collect();
        assert_eq!(loaded.predict_batch(&fs).unwrap(), model.predict_batch(&fs).unwrap());
        let (version, header_spec, meta) = decode_model_header(&bytes).unwrap();
        assert_eq!(version, MODEL_VERSION);
        assert_eq!(header_spec, spec);
        assert_eq!(meta, model.metadata);
    }
}

#[test]
fn damaged_model_files_name_the_failing_section() {
    let model = fitted(&quick(VariantSpec::local_to_local_refined(32, 8, 3)));
    let bytes = encode_model(&model).unwrap();
    let found: Vec<String> = sections(&bytes).iter().map(|(t, ..)| String::from_utf8_lossy(t).into_owned()).collect();
    assert_eq!(found, ["SPEC", "INPB", "OUTB", "NORM", "OPER", "REFN"]);
    for (tag, start, len) in sections(&bytes) {
        let mut bad = bytes.clone();
        bad[start + len / 2] ^= 0x10;
        match decode_model(&bad) {
            Err(Error::Checksum { section, .. }) => {
                assert!(section.starts_with(std::str::from_utf8(&tag).unwrap()), "{section}")
            }
            other => panic!("{}: expected checksum error, got {:?}", String::from_utf8_lossy(&tag), other.err()),
        }
    }

    let mut newer = bytes.clone();
    newer[4..6].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_model(&newer), Err(Error::Version { .. })));

    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"PPCA");
    assert!(matches!(decode_model(&wrong), Err(Error::BadMagic { .. })));

    for cut in [3, 10, bytes.len() / 3, bytes.len() - 1] {
        assert!(decode_model(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode_model(&trailing).is_err());
}

#[test]
fn fitting_is_deterministic() {
    let spec = quick(VariantSpec::local_to_local_blend(32, 8, 4));
    let a = encode_model(&fitted(&spec)).unwrap();
    let b = encode_model(&fitted(&spec)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn splits_refer_to_the_fitting_dataset() {
    let model = fitted(&quick(VariantSpec::global(32)));
    let cfg = MetricsConfig::default();
    let test = model.evaluate(dataset(), Split::Test, &cfg).unwrap();
    assert!(!test.in_sample);
    assert_eq!(test.sample_count, 6);
    let train = model.evaluate(dataset(), Split::Train, &cfg).unwrap();
    assert!(train.in_sample);
    assert_eq!(train.sample_count, 54);

    let other = generate_dataset(8, 32, &GrfParams { seed: 5, ..GrfParams::default() }, &SolverConfig::for_resolution(32))
        .unwrap();
    assert!(matches!(model.evaluate(&other, Split::Test, &cfg), Err(Error::Parameter(_))));
    let all = model.evaluate(&other, Split::All, &cfg).unwrap();
    assert!(!all.in_sample);
    assert_eq!(all.sample_count, 8);
}

#[test]
fn invalid_variants_fail_before_fitting() {
    let mut blend_without_overlap = VariantSpec::local_to_local(32, 8);
    blend_without_overlap.blend = true;
    let mut even_kernel = VariantSpec::local_to_local_refined(32, 8, 3);
    even_kernel.refiner.as_mut().unwrap().kernel_size = 4;
    let mut refined_global = VariantSpec::global(32);
    refined_global.refiner = VariantSpec::local_to_local_refined(32, 8, 3).refiner;
    let mut wrong_resolution = VariantSpec::global(64);
    wrong_resolution.train.epochs = 1;
    for spec in [blend_without_overlap, even_kernel, refined_global, wrong_resolution] {
        let err = fit_pipeline(dataset(), &spec).unwrap_err();
        assert_eq!(err.class(), ppca_core::ErrorClass::Validation, "{err}");
    }
}

#[test]
fn prediction_checks_resolution() {
    let model = fitted(&quick(VariantSpec::global(32)));
    let err = model.predict(&ppca_core::field_data::Field::zeros(16)).unwrap_err();
    assert!(matches!(err, Error::Geometry { expected: 32, actual: 16 }), "{err}");
}

#[test]
fn refiner_changes_the_mosaic_prediction() {
    let model = fitted(&quick(VariantSpec::local_to_local_refined(32, 8, 3)));
    let f = &dataset().samples()[1].coefficient;
    let refined = model.predict(f).unwrap();
    let raw = model.without_refiner().predict(f).unwrap();
    assert_ne!(refined, raw);
    assert!(model.without_refiner().parameter_count() < model.parameter_count());
}
