use std::collections::BTreeMap;
use std::path::Path;

use savp_tensor::Tensor;

use super::adam::Adam;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::{SpectralState, SpectralStore};
use crate::params::ParamStore;
use crate::records::{self, find, Reader, Record, Writer};

pub const MAGIC: &[u8; 4] = b"SVPC";
pub const VERSION: u32 = 1;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub iteration: u64,
    pub params: ParamStore<f32>,
    pub spectral: SpectralStore<f32>,
    pub optimizers: BTreeMap<String, Adam<f32>>,
    /// Serialised training-stream position.
    pub rng: Vec<u8>,
}

fn vector(data: &[f32]) -> Record {
    Record::F32(Tensor::new([data.len()], data.to_vec()).expect("1-d"))
}

fn scalar_i64(v: u64) -> Record {
    Record::i64([1], vec![v as i64]).expect("one value")
}

fn read_u64(rec: &Record) -> Result<u64> {
    match rec.as_i64()? {
        [v] if *v >= 0 => Ok(*v as u64),
        other => Err(Error::Format(format!("expected one non-negative counter, got {other:?}"))),
    }
}

fn f32_tensor(rec: &Record) -> Result<Tensor<f32>> {
    match rec {
        Record::F32(t) => Ok(t.clone()),
        _ => Err(Error::Format("expected an f32 record".into())),
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut recs: Vec<(String, Record)> = vec![("iteration".into(), scalar_i64(self.iteration))];
        for (name, t) in self.params.iter() {
            recs.push((format!("param/{name}"), Record::F32(t.clone())));
        }
        for (name, s) in &self.spectral {
            recs.push((format!("spectral/u/{name}"), vector(&s.u)));
            recs.push((format!("spectral/v/{name}"), vector(&s.v)));
        }
        for (group, adam) in &self.optimizers {
            recs.push((format!("adam/{group}/step"), scalar_i64(adam.step)));
            for (name, m) in &adam.m {
                recs.push((format!("adam/{group}/m/{name}"), Record::F32(m.clone())));
            }
            for (name, v) in &adam.v {
                recs.push((format!("adam/{group}/v/{name}"), Record::F32(v.clone())));
            }
        }
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&self.config.digest());
        w.str(&self.config.to_json());
        w.records(&recs);
        w.bytes(&self.rng);
        w.buf
    }

    /// Decodes a checkpoint, refusing it when `expected_digest` is given and
    /// differs from the stored one.
    pub fn decode(buf: &[u8], expected_digest: Option<&str>) -> Result<Self> {
        let mut r = Reader::open(buf, MAGIC, VERSION)?;
        let digest = r.str()?;
        if let Some(want) = expected_digest {
            if want != digest {
                return Err(Error::Mismatch(format!(
                    "checkpoint was written for config {digest}, not {want}"
                )));
            }
        }
        let config = RunConfig::from_json(&r.str()?).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        if config.digest() != digest {
            return Err(Error::Format("embedded config does not match its digest".into()));
        }
        let recs = r.records()?;
        let rng = r.bytes()?.to_vec();
        r.finish()?;

        let iteration = read_u64(find(&recs, "iteration")?)?;
        let adam_config = config.adam();
        let mut params = ParamStore::new();
        let mut spectral = SpectralStore::new();
        let mut optimizers: BTreeMap<String, Adam<f32>> = BTreeMap::new();
        for (key, rec) in &recs {
            if let Some(name) = key.strip_prefix("param/") {
                params.insert(name, f32_tensor(rec)?);
            } else if let Some(name) = key.strip_prefix("spectral/u/") {
                let v = f32_tensor(find(&recs, &format!("spectral/v/{name}"))?)?;
                spectral.insert(
                    name.to_string(),
                    SpectralState {
                        u: f32_tensor(rec)?.into_data(),
                        v: v.into_data(),
                    },
                );
            } else if let Some(rest) = key.strip_prefix("adam/") {
                let (group, field) = rest
                    .split_once('/')
                    .ok_or_else(|| Error::Format(format!("bad optimiser record {key}")))?;
                let adam = optimizers.entry(group.to_string()).or_insert_with(|| Adam::new(adam_config));
                if field == "step" {
                    adam.step = read_u64(rec)?;
                } else if let Some(name) = field.strip_prefix("m/") {
                    adam.m.insert(name.to_string(), f32_tensor(rec)?);
                } else if let Some(name) = field.strip_prefix("v/") {
                    adam.v.insert(name.to_string(), f32_tensor(rec)?);
                } else {
                    return Err(Error::Format(format!("bad optimiser record {key}")));
                }
            } else if !(key == "iteration" || key.starts_with("spectral/v/")) {
                return Err(Error::Format(format!("unexpected record {key}")));
            }
        }
        Ok(Self {
            config,
            iteration,
            params,
            spectral,
            optimizers,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        records::write_file(path, &self.encode())
    }

    pub fn load(path: &Path, expected_digest: Option<&str>) -> Result<Self> {
        Self::decode(&records::read_file(path)?, expected_digest)
    }
}
