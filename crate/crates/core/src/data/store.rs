//! On-disk dataset layout: a `manifest.toml` plus, per split, stacked
//! input and reference tensors and the per-sample boundary specs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use picnn_tensor::io::{read_tensor, write_tensor, Dtype, TensorData};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetSpec, GridSample, RawSplits, SplitCounts};
use crate::error::{Error, Result};
use crate::pde::{BoundarySpec, PdeKind};

pub const MANIFEST: &str = "manifest.toml";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: PdeKind,
    pub seed: u64,
    pub counts: SplitCounts,
    /// sha256 of the TOML-serialized spec.
    pub spec_sha256: String,
    /// File name to sha256.
    pub files: BTreeMap<String, String>,
    pub spec: DatasetSpec,
}

#[derive(Serialize, Deserialize)]
struct BcList {
    bc: Vec<BoundarySpec>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn spec_hash(spec: &DatasetSpec) -> Result<String> {
    let text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(text.as_bytes()))
}

fn stack_split(samples: &[GridSample]) -> Result<(TensorData, TensorData)> {
    let Some(first) = samples.first() else {
        return Ok((TensorData::new(vec![0, 0, 0, 0], vec![])?, TensorData::new(vec![0, 0, 0, 0], vec![])?));
    };
    let mut ishape = first.input.shape.clone();
    let mut rshape = first.reference.shape.clone();
    ishape[0] = samples.len();
    rshape[0] = samples.len();
    let mut ins = Vec::new();
    let mut refs = Vec::new();
    for s in samples {
        if s.input.shape[1..] != first.input.shape[1..] {
            return Err(Error::invalid("split_and_serialize", "samples differ in shape"));
        }
        ins.extend_from_slice(&s.input.data);
        refs.extend_from_slice(&s.reference.data);
    }
    Ok((TensorData::new(ishape, ins)?, TensorData::new(rshape, refs)?))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Writes all three splits and the manifest into `dir` (created if needed).
pub fn split_and_serialize(data: &RawSplits, spec: &DatasetSpec, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    for (name, split) in [("train", &data.train), ("validation", &data.validation), ("test", &data.test)] {
        let (ins, refs) = stack_split(split)?;
        for (role, t) in [("inputs", &ins), ("references", &refs)] {
            let mut buf = Vec::new();
            write_tensor(&mut buf, t, Dtype::F64)?;
            write_file(dir, &format!("{name}_{role}.ptns"), &buf, &mut files)?;
        }
        let bcs = BcList {
            bc: split.iter().map(|s| s.bc.clone()).collect(),
        };
        let text = toml::to_string(&bcs).map_err(|e| Error::Config(e.to_string()))?;
        write_file(dir, &format!("{name}_bcs.toml"), text.as_bytes(), &mut files)?;
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: data.kind,
        seed,
        counts: SplitCounts {
            train: data.train.len(),
            validation: data.validation.len(),
            test: data.test.len(),
        },
        spec_sha256: spec_hash(spec)?,
        files,
        spec: spec.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path,
        detail: e.to_string(),
    })
}

fn read_checked(dir: &Path, name: &str, manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match manifest.files.get(name) {
        Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
        Some(_) => Err(Error::Format {
            path,
            detail: "hash does not match manifest".into(),
        }),
        None => Err(Error::Format {
            path,
            detail: "file not listed in manifest".into(),
        }),
    }
}

fn unstack(ins: &TensorData, refs: &TensorData, bcs: Vec<BoundarySpec>) -> Result<Vec<GridSample>> {
    let n = bcs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if ins.shape[0] != n || refs.shape[0] != n {
        return Err(Error::invalid("load_dataset", "sample counts disagree between files"));
    }
    let (il, rl) = (ins.data.len() / n, refs.data.len() / n);
    let mut ishape = ins.shape.clone();
    let mut rshape = refs.shape.clone();
    ishape[0] = 1;
    rshape[0] = 1;
    bcs.into_iter()
        .enumerate()
        .map(|(k, bc)| {
            GridSample::new(
                TensorData::new(ishape.clone(), ins.data[k * il..(k + 1) * il].to_vec())?,
                TensorData::new(rshape.clone(), refs.data[k * rl..(k + 1) * rl].to_vec())?,
                bc,
            )
        })
        .collect()
}

/// Reads a dataset directory, verifying every file hash.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, RawSplits)> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: dir.join(MANIFEST),
            detail: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let mut splits = Vec::new();
    for name in ["train", "validation", "test"] {
        let mut tensors = Vec::new();
        for role in ["inputs", "references"] {
            let file = format!("{name}_{role}.ptns");
            let bytes = read_checked(dir, &file, &manifest)?;
            tensors.push(read_tensor(&mut bytes.as_slice())?.0);
        }
        let file = format!("{name}_bcs.toml");
        let text = String::from_utf8(read_checked(dir, &file, &manifest)?).map_err(|e| Error::Format {
            path: dir.join(&file),
            detail: e.to_string(),
        })?;
        let bcs: BcList = toml::from_str(&text).map_err(|e| Error::Format {
            path: dir.join(&file),
            detail: e.to_string(),
        })?;
        splits.push(unstack(&tensors[0], &tensors[1], bcs.bc)?);
    }
    let test = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((
        manifest.clone(),
        RawSplits {
            kind: manifest.kind,
            train,
            validation,
            test,
        },
    ))
}
