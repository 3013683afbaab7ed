use privi_core::classifier::{AttentiveClassifier, ClassifierConfig};
use privi_core::curation::RelevanceModel;
use privi_core::jepa::{JepaConfig, JepaModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"PVHD";
pub const JEPA_MAGIC: &[u8; 4] = b"PVJP";
pub const RELEVANCE_MAGIC: &[u8; 4] = b"PVRM";

/// Decoded checkpoint: the JSON config and one or more parameter sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 4],
    pub config: serde_json::Value,
    pub sections: Vec<Vec<f64>>,
}

/// `magic, version u32, config length u32, config JSON, section count u32`,
/// then per section `value count u64` and the values as little-endian `f32`.
pub fn encode_checkpoint<C: Serialize>(magic: &[u8; 4], config: &C, sections: &[Vec<f64>]) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("in-memory serialization");
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for &v in s {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(self.name, "checkpoint truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(data: &[u8], expected_magic: &[u8; 4], name: &str) -> Result<Checkpoint> {
    let mut r = Reader { data, pos: 0, name };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != expected_magic {
        return Err(Error::format(
            name,
            format!("magic {:?}, expected {:?}", String::from_utf8_lossy(&magic), String::from_utf8_lossy(expected_magic)),
        ));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(name, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let config = serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(name, format!("config: {e}")))?;
    let n_sections = r.u32()?;
    let mut sections = Vec::with_capacity((n_sections as usize).min((data.len() - r.pos) / 8));
    for _ in 0..n_sections {
        let n = r.u64()? as usize;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::format(name, "section too large"))?)?;
        sections.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect());
    }
    if r.pos != data.len() {
        return Err(Error::format(name, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { magic, config, sections })
}

fn config_of<C: for<'de> Deserialize<'de>>(ck: &Checkpoint, name: &str) -> Result<C> {
    serde_json::from_value(ck.config.clone()).map_err(|e| Error::format(name, format!("config: {e}")))
}

fn sections<const N: usize>(ck: Checkpoint, name: &str) -> Result<[Vec<f64>; N]> {
    let n = ck.sections.len();
    ck.sections.try_into().map_err(|_| Error::format(name, format!("{n} parameter sections, expected {N}")))
}

pub fn encode_classifier(model: &AttentiveClassifier) -> Vec<u8> {
    encode_checkpoint(CLASSIFIER_MAGIC, &model.config, &[model.params.flatten()])
}

pub fn decode_classifier(data: &[u8], name: &str) -> Result<AttentiveClassifier> {
    let ck = decode_checkpoint(data, CLASSIFIER_MAGIC, name)?;
    let config: ClassifierConfig = config_of(&ck, name)?;
    let [values] = sections::<1>(ck, name)?;
    Ok(AttentiveClassifier::from_flat(config, &values)?)
}

pub fn encode_jepa(model: &JepaModel) -> Vec<u8> {
    encode_checkpoint(
        JEPA_MAGIC,
        &model.config,
        &[model.context_params.flatten(), model.predictor_params.flatten(), model.target_params.flatten()],
    )
}

pub fn decode_jepa(data: &[u8], name: &str) -> Result<JepaModel> {
    let ck = decode_checkpoint(data, JEPA_MAGIC, name)?;
    let config: JepaConfig = config_of(&ck, name)?;
    let [ctx, pred, target] = sections::<3>(ck, name)?;
    let mut model = JepaModel::new(config)?;
    model.context_params.load_flat(&ctx)?;
    model.predictor_params.load_flat(&pred)?;
    model.target_params.load_flat(&target)?;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelevanceHeader {
    input_dim: usize,
    hidden_dim: usize,
    threshold: f64,
}

pub fn encode_relevance(model: &RelevanceModel) -> Vec<u8> {
    let header = RelevanceHeader { input_dim: model.input_dim, hidden_dim: model.hidden_dim, threshold: model.threshold };
    encode_checkpoint(RELEVANCE_MAGIC, &header, &[model.params.flatten()])
}

pub fn decode_relevance(data: &[u8], name: &str) -> Result<RelevanceModel> {
    let ck = decode_checkpoint(data, RELEVANCE_MAGIC, name)?;
    let h: RelevanceHeader = config_of(&ck, name)?;
    let [values] = sections::<1>(ck, name)?;
    Ok(RelevanceModel::from_flat(h.input_dim, h.hidden_dim, h.threshold, &values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use privi_core::classifier::Task;
    use privi_core::RngSeed;

    fn small_config() -> ClassifierConfig {
        ClassifierConfig { d_prime: 8, heads: 2, layers: 1, ..ClassifierConfig::new(12, 3, Task::SingleLabel) }
    }

    #[test]
    fn classifier_header_and_order() {
        let m = AttentiveClassifier::new(small_config()).unwrap();
        let bytes = encode_classifier(&m);
        assert_eq!(&bytes[..4], b"PVHD");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        let back = decode_classifier(&bytes, "ck").unwrap();
        assert_eq!(back.config, m.config);
        let want: Vec<f64> = m.params.flatten().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.params.flatten(), want);
        assert_eq!(encode_classifier(&back), bytes);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let m = AttentiveClassifier::new(small_config()).unwrap();
        let bytes = encode_classifier(&m);
        assert!(decode_jepa(&bytes, "ck").is_err());
        assert!(decode_classifier(&bytes[..bytes.len() - 2], "ck").is_err());
    }

    #[test]
    fn jepa_roundtrip() {
        let mut cfg = JepaConfig::toy();
        cfg.d = 8;
        cfg.heads = 2;
        let m = JepaModel::new(cfg).unwrap();
        let bytes = encode_jepa(&m);
        assert_eq!(&bytes[..4], b"PVJP");
        let back = decode_jepa(&bytes, "ck").unwrap();
        assert_eq!(encode_jepa(&back), bytes);
    }

    #[test]
    fn relevance_roundtrip() {
        let mut m = RelevanceModel::new(4, 3, RngSeed::new(1, 0)).unwrap();
        m.threshold = 0.7;
        let back = decode_relevance(&encode_relevance(&m), "r").unwrap();
        assert_eq!(back.threshold, 0.7);
        assert_eq!(encode_relevance(&back), encode_relevance(&m));
    }
}
