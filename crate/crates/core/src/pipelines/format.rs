//! Model container: `PPCM`, a `u16` version, then tagged sections each laid
//! out as `tag[4] | u64 length | payload | u32 crc32(payload)`.
//!
//! Sections, in order: `SPEC` (JSON spec and metadata), `INPB` and `OUTB`
//! (bases), `NORM` (latent standardisation), `OPER` (operator MLP) and, for
//! refined variants, `REFN` (CNN). Integers are little-endian `u32` unless
//! noted, floats are little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelMetadata, PipelineModel, Refiner, Standardizer};
use super::spec::VariantSpec;
use crate::error::{Error, Result};
use crate::io::{check_magic, get_f64s, put_f64s, put_u32, put_u64, ByteReader};
use crate::neuralnet::{Cnn, Mlp, Network};
use crate::patching::make_layout;
use crate::pca::{FieldBasis, PatchBasisBank, PcaBasis};

pub const MODEL_MAGIC: &[u8; 4] = b"PPCM";
pub const MODEL_VERSION: u16 = 1;

const SECTIONS: [(&[u8; 4], &str); 6] = [
    (b"SPEC", "spec"),
    (b"INPB", "input basis"),
    (b"OUTB", "output basis"),
    (b"NORM", "normalisation"),
    (b"OPER", "operator"),
    (b"REFN", "refiner"),
];

fn section_name(tag: &[u8]) -> String {
    let name = SECTIONS.iter().find(|(t, _)| t.as_slice() == tag).map(|(_, n)| *n).unwrap_or("unknown");
    format!("{} ({name})", String::from_utf8_lossy(tag))
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: VariantSpec,
    metadata: ModelMetadata,
}

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, payload.len());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

fn put_vec(out: &mut Vec<u8>, values: &[f64]) {
    put_u32(out, values.len());
    put_f64s(out, values);
}

fn put_basis(out: &mut Vec<u8>, b: &PcaBasis) {
    put_u32(out, b.dim());
    put_u32(out, b.k());
    put_f64s(out, &[b.total_variance(), b.variance_ratio()]);
    put_f64s(out, b.mean());
    put_f64s(out, b.singular_values());
    put_f64s(out, b.components());
}

fn encode_field_basis(fb: &FieldBasis) -> Vec<u8> {
    let mut out = Vec::new();
    match fb {
        FieldBasis::Global(b) => {
            out.push(0);
            put_basis(&mut out, b);
        }
        FieldBasis::Patch(bank) => {
            out.push(1);
            let l = bank.layout();
            put_u32(&mut out, l.resolution());
            put_u32(&mut out, l.patch_size());
            put_u32(&mut out, l.stride());
            put_u32(&mut out, l.axis_origins().len());
            for &o in l.axis_origins() {
                put_u32(&mut out, o);
            }
            put_u32(&mut out, bank.bases().len());
            for b in bank.bases() {
                put_basis(&mut out, b);
            }
        }
    }
    out
}

pub fn encode_model(model: &PipelineModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let header = Header {
        spec: model.spec.clone(),
        metadata: model.metadata.clone(),
    };
    put_section(&mut out, b"SPEC", &serde_json::to_vec(&header)?);
    put_section(&mut out, b"INPB", &encode_field_basis(&model.input));
    put_section(&mut out, b"OUTB", &encode_field_basis(&model.output));

    let mut norm = Vec::new();
    for s in [&model.input_norm, &model.output_norm] {
        put_vec(&mut norm, &s.mean);
        put_vec(&mut norm, &s.scale);
    }
    put_section(&mut out, b"NORM", &norm);

    let mut oper = Vec::new();
    let widths = model.operator.widths();
    put_u32(&mut oper, widths.len());
    for w in widths {
        put_u32(&mut oper, w);
    }
    put_u64(&mut oper, model.operator.params().len());
    put_f64s(&mut oper, model.operator.params());
    put_section(&mut out, b"OPER", &oper);

    if let Some(r) = &model.refiner {
        let mut refn = Vec::new();
        put_u32(&mut refn, r.cnn.kernel_size());
        put_u32(&mut refn, r.cnn.side());
        let channels = r.cnn.channels();
        put_u32(&mut refn, channels.len());
        for c in channels {
            put_u32(&mut refn, c);
        }
        put_f64s(&mut refn, &[r.scale]);
        refn.push(r.residual as u8);
        put_u64(&mut refn, r.cnn.params().len());
        put_f64s(&mut refn, r.cnn.params());
        put_section(&mut out, b"REFN", &refn);
    }
    Ok(out)
}

fn read_usize(r: &mut ByteReader) -> Result<usize> {
    Ok(r.u32()? as usize)
}

fn read_f64s(r: &mut ByteReader, n: usize) -> Result<Vec<f64>> {
    let bytes = n
        .checked_mul(8)
        .ok_or_else(|| Error::Format(format!("float count {n} overflows")))?;
    Ok(get_f64s(r.take(bytes)?))
}

fn read_vec(r: &mut ByteReader) -> Result<Vec<f64>> {
    let n = read_usize(r)?;
    read_f64s(r, n)
}

fn read_basis(r: &mut ByteReader) -> Result<PcaBasis> {
    let dim = read_usize(r)?;
    let k = read_usize(r)?;
    let tv = read_f64s(r, 2)?;
    let mean = read_f64s(r, dim)?;
    let sv = read_f64s(r, k)?;
    let comps = read_f64s(r, k * dim)?;
    PcaBasis::from_parts(mean, comps, sv, tv[0], tv[1])
}

fn finish(r: &ByteReader, what: &str) -> Result<()> {
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} unread bytes in {what} section", r.remaining())));
    }
    Ok(())
}

fn decode_field_basis(payload: &[u8]) -> Result<FieldBasis> {
    let mut r = ByteReader::new(payload, "basis section");
    let fb = match r.u8()? {
        0 => FieldBasis::Global(read_basis(&mut r)?),
        1 => {
            let d = read_usize(&mut r)?;
            let p = read_usize(&mut r)?;
            let s = read_usize(&mut r)?;
            let n = read_usize(&mut r)?;
            let origins = (0..n).map(|_| read_usize(&mut r)).collect::<Result<Vec<_>>>()?;
            let layout = make_layout(d, p, s).map_err(|e| Error::Format(format!("stored layout: {e}")))?;
            if layout.axis_origins() != origins.as_slice() {
                return Err(Error::Format(format!(
                    "stored patch origins {origins:?} differ from the layout for D={d}, p={p}, s={s}"
                )));
            }
            let count = read_usize(&mut r)?;
            let bases = (0..count).map(|_| read_basis(&mut r)).collect::<Result<Vec<_>>>()?;
            FieldBasis::Patch(PatchBasisBank::new(layout, bases)?)
        }
        t => return Err(Error::Format(format!("unknown basis kind {t}"))),
    };
    finish(&r, "basis")?;
    Ok(fb)
}

/// Reads the magic, version and JSON block only.
pub fn decode_model_header(bytes: &[u8]) -> Result<(u16, VariantSpec, ModelMetadata)> {
    let mut r = ByteReader::new(bytes, "model file");
    check_magic(r.take(4)?, MODEL_MAGIC)?;
    let version = r.u16()?;
    if version > MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let (tag, payload) = read_section(&mut r)?;
    if tag != b"SPEC" {
        return Err(Error::Format(format!("first section is {}, expected SPEC", section_name(tag))));
    }
    let h: Header = serde_json::from_slice(payload)?;
    Ok((version, h.spec, h.metadata))
}

fn read_section<'a>(r: &mut ByteReader<'a>) -> Result<(&'a [u8], &'a [u8])> {
    let tag = r.take(4)?;
    let len = r.u64()?;
    let len = usize::try_from(len).map_err(|_| Error::Format(format!("section length {len} too large")))?;
    let payload = r.take(len)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            section: section_name(tag),
            stored,
            computed,
        });
    }
    Ok((tag, payload))
}

pub fn decode_model(bytes: &[u8]) -> Result<PipelineModel> {
    let (_, spec, metadata) = decode_model_header(bytes)?;
    let mut r = ByteReader::new(bytes, "model file");
    r.take(6)?;
    read_section(&mut r)?;
    let mut next = |want: &[u8; 4]| -> Result<&[u8]> {
        let (tag, payload) = read_section(&mut r)?;
        if tag != want {
            return Err(Error::Format(format!(
                "found section {} where {} was expected",
                section_name(tag),
                section_name(want)
            )));
        }
        Ok(payload)
    };
    let input = decode_field_basis(next(b"INPB")?)?;
    let output = decode_field_basis(next(b"OUTB")?)?;

    let norm = next(b"NORM")?;
    let mut nr = ByteReader::new(norm, "normalisation section");
    let mut stds = Vec::new();
    for _ in 0..2 {
        let mean = read_vec(&mut nr)?;
        let scale = read_vec(&mut nr)?;
        if mean.len() != scale.len() {
            return Err(Error::Format("standardiser mean and scale lengths differ".into()));
        }
        stds.push(Standardizer { mean, scale });
    }
    finish(&nr, "normalisation")?;
    let output_norm = stds.pop().unwrap();
    let input_norm = stds.pop().unwrap();

    let oper = next(b"OPER")?;
    let mut or = ByteReader::new(oper, "operator section");
    let nw = read_usize(&mut or)?;
    let widths = (0..nw).map(|_| read_usize(&mut or)).collect::<Result<Vec<_>>>()?;
    let np = or.u64()? as usize;
    let operator = Mlp::from_params(&widths, read_f64s(&mut or, np)?)?;
    finish(&or, "operator")?;

    let refiner = if spec.refiner.is_some() {
        let refn = next(b"REFN")?;
        let mut rr = ByteReader::new(refn, "refiner section");
        let k = read_usize(&mut rr)?;
        let side = read_usize(&mut rr)?;
        let nc = read_usize(&mut rr)?;
        let channels = (0..nc).map(|_| read_usize(&mut rr)).collect::<Result<Vec<_>>>()?;
        let scale = read_f64s(&mut rr, 1)?[0];
        let residual = rr.u8()? != 0;
        let np = rr.u64()? as usize;
        let cnn = Cnn::from_params(&channels, k, side, read_f64s(&mut rr, np)?)?;
        finish(&rr, "refiner")?;
        Some(Refiner { cnn, scale, residual })
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after the last section", r.remaining())));
    }

    if operator.input_len() != input.latent_dim()
        || operator.output_len() != output.latent_dim()
        || input_norm.dim() != input.latent_dim()
        || output_norm.dim() != output.latent_dim()
    {
        return Err(Error::Format(format!(
            "operator {:?} does not match latent dimensions {} -> {}",
            operator.widths(),
            input.latent_dim(),
            output.latent_dim()
        )));
    }
    Ok(PipelineModel {
        spec,
        input,
        output,
        input_norm,
        output_norm,
        operator,
        refiner,
        metadata,
    })
}

pub fn save_model(model: &PipelineModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PipelineModel> {
    decode_model(&fs::read(path)?)
}
