use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodeOptions, LabelScheme, Vocab};
use crate::error::{Error, Result};
use crate::network::{Model, ModelParams, NetworkConfig};
use crate::numerics::Tensor;
use crate::optim::{Moments, OptimizerState};

pub const MAGIC: &[u8; 6] = b"FSNER1";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to rebuild it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub scheme: LabelScheme,
    pub vocab: Vocab,
    pub params: ModelParams<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    network: NetworkConfig,
    categories: Vec<String>,
    vocab: VocabMeta,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Serialize, Deserialize)]
struct VocabMeta {
    fingerprint: String,
    options: EncodeOptions,
    words: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    t: u64,
    /// IEEE-754 bits in hex, so the value survives text exactly.
    mu_product: String,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, optimizer: Option<&OptimizerState<f32>>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            scheme: model.scheme().clone(),
            vocab: model.vocab().clone(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_model(self) -> Result<Model<f32>> {
        Model::new(self.config, self.params, self.vocab, self.scheme)
    }

    pub fn to_model(&self) -> Result<Model<f32>> {
        self.clone().into_model()
    }

    fn payload_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (name, mo) in &opt.moments {
                out.push((format!("opt.m.{name}"), &mo.m));
                out.push((format!("opt.v.{name}"), &mo.v));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.payload_tensors();
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let meta = Meta {
            version: FORMAT_VERSION,
            network: self.config.clone(),
            categories: self.scheme.categories().to_vec(),
            vocab: VocabMeta {
                fingerprint: self.vocab.fingerprint(),
                options: self.vocab.options(),
                words: self.vocab.words().to_vec(),
            },
            tensors: entries,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                t: o.t,
                mu_product: format!("{:016x}", o.mu_product.to_bits()),
            }),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::NotACheckpoint("missing FSNER1 magic".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        let len_bytes: [u8; 8] = rest
            .get(..8)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| corrupt("truncated header".into()))?;
        let meta_len = u64::from_le_bytes(len_bytes) as usize;
        let meta_text = rest
            .get(8..8usize.saturating_add(meta_len))
            .ok_or_else(|| corrupt("truncated metadata".into()))?;
        let meta_text = std::str::from_utf8(meta_text).map_err(|e| corrupt(e.to_string()))?;
        let meta: Meta = toml::from_str(meta_text).map_err(|e| corrupt(e.to_string()))?;
        if meta.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", meta.version)));
        }
        let payload = &rest[8 + meta_len..];

        meta.network.validate()?;
        let scheme = LabelScheme::new(meta.categories)?;
        let vocab = Vocab::from_full_list(meta.vocab.words, meta.vocab.options);
        if vocab.fingerprint() != meta.vocab.fingerprint {
            return Err(corrupt("vocabulary does not match its fingerprint".into()));
        }

        let read = |name: &str| -> Result<Tensor<f32>> {
            let entry = meta
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let bytes = payload
                .get(start..start + 4 * n)
                .ok_or_else(|| corrupt(format!("payload of `{name}` is truncated")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(&entry.shape, data)
        };

        let vocab_len = vocab.len();
        let mut params = ModelParams::zeros(&meta.network, vocab_len);
        for (name, shape) in meta.network.manifest(vocab_len) {
            let t = read(name)?;
            if t.shape() != &shape[..] {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            *params.get_mut(name).expect("manifest name") = t;
        }
        let optimizer = match meta.optimizer {
            None => None,
            Some(o) => {
                let bits = u64::from_str_radix(&o.mu_product, 16)
                    .map_err(|_| corrupt("bad momentum product".into()))?;
                let mut state = OptimizerState {
                    moments: Default::default(),
                    t: o.t,
                    mu_product: f64::from_bits(bits),
                };
                for e in &meta.tensors {
                    let Some(name) = e.name.strip_prefix("opt.m.") else {
                        continue;
                    };
                    let m = read(&e.name)?;
                    let v = read(&format!("opt.v.{name}"))?;
                    match params.get(name) {
                        Some(p) if p.shape() == m.shape() && p.shape() == v.shape() => {}
                        _ => {
                            return Err(Error::shape(format!("optimizer moments for `{name}` do not fit")));
                        }
                    }
                    state.moments.insert(name.to_string(), Moments { m, v });
                }
                Some(state)
            }
        };
        let ckpt = Checkpoint {
            config: meta.network,
            scheme,
            vocab,
            params,
            optimizer,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }

    /// Writes to a temporary file next to `path`, then renames over it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::file(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::file(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::file(path, e))?;
        tmp.persist(path).map_err(|e| Error::file(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable manifest, one tensor per line.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (name, t) in self.payload_tensors() {
            let _ = writeln!(out, "{name} {:?}", t.shape());
        }
        out
    }
}

pub fn save_checkpoint(model: &Model<f32>, optimizer: Option<&OptimizerState<f32>>, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, optimizer).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::{tiny_config, toy_corpus, toy_model};
    use crate::network::NetworkConfig;
    use crate::optim::{fit, TrainConfig, Trainer};

    fn trained() -> (Model<f32>, OptimizerState<f32>) {
        let corpus = toy_corpus(6, 1);
        let config = NetworkConfig { batch_norm: true, ..tiny_config(corpus.scheme().n_tags()) };
        let mut model = toy_model(config, &corpus, 1);
        let mut trainer = Trainer::new(TrainConfig { epochs: 2, batch_size: 3, ..TrainConfig::default() }).unwrap();
        trainer.fit(&mut model, &corpus, None).unwrap();
        (model, trainer.state)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, state) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, Some(&state), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, Checkpoint::from_model(&model, Some(&state)));
        assert_eq!(&back.config, model.config());
        assert_eq!(std::fs::read(&path).unwrap()[..6], *b"FSNER1");
        // overwrite in place
        save_checkpoint(&model, None, &path).unwrap();
        assert!(load_checkpoint(&path).unwrap().optimizer.is_none());
    }

    #[test]
    fn bad_magic() {
        let (model, _) = trained();
        let mut bytes = Checkpoint::from_model(&model, None).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::NotACheckpoint(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let (model, _) = trained();
        let bytes = Checkpoint::from_model(&model, None).to_bytes().unwrap();
        for cut in [7, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "{cut}");
        }
    }

    #[test]
    fn missing_tensor_is_named() {
        let (model, _) = trained();
        let bytes = Checkpoint::from_model(&model, None).to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[14..14 + len]).unwrap();
        let edited = text.replace("name = \"char_conv.kernel\"", "name = \"char_conv.removed\"");
        assert_ne!(edited, text);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[14 + len..]);
        match Checkpoint::from_bytes(&out) {
            Err(Error::MissingTensor(name)) => assert_eq!(name, "char_conv.kernel"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let corpus = toy_corpus(6, 2);
        let base = toy_model(tiny_config(corpus.scheme().n_tags()), &corpus, 2);
        let cfg = TrainConfig { epochs: 4, batch_size: 3, ..TrainConfig::default() };
        let mut straight = base.clone();
        fit(&mut straight, &corpus, None, &cfg).unwrap();

        let mut first = base.clone();
        let mut trainer = Trainer::new(TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        trainer.fit(&mut first, &corpus, None).unwrap();
        let bytes = Checkpoint::from_model(&first, Some(&trainer.state)).to_bytes().unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = ckpt.to_model().unwrap();
        let mut trainer2 = Trainer::new(TrainConfig { epochs: 2, ..cfg }).unwrap().with_state(ckpt.optimizer.unwrap());
        trainer2.epoch = 2;
        trainer2.fit(&mut resumed, &corpus, None).unwrap();
        assert_eq!(resumed.params(), straight.params());
    }
}
