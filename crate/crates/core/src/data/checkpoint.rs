//! Checkpoint container.
//!
//! ```text
//! magic    8 bytes  "SEMIVAE\0"
//! version  u32 LE   CHECKPOINT_VERSION
//! count    u32 LE   number of sections
//! section  name_len u16 LE, name (UTF-8), payload_len u64 LE, payload
//! ...
//! crc      u32 LE   CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Sections:
//! - `meta`: UTF-8 `key=value` lines. `kind` (m1 | m2 | stack), per-network
//!   `<net>.sizes` (comma list) and `<net>.head`, `d_z`/`classes`/`obs`
//!   where applicable, and `config.*` echo entries.
//! - `params`: `u32` tensor count, then per tensor `u32` rank, `u64` dims,
//!   `f64` LE data. Order: networks as listed by the kind, each layer's
//!   weights then biases.
//! - `optim` (optional): kind tag (u16 length + bytes), `u64` step count,
//!   then first- and second-moment tensor lists in the `params` encoding,
//!   covering the trainable tensors (a stack's M2 only).
//! - `rng` (optional): 32-byte key, `u64` stream, `u128` word position,
//!   `u8` spare flag and `f64` spare.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dists::CategoricalPosterior;
use crate::error::{Error, Result};
use crate::models::{M1Model, M2Model, Observation, StackedModel};
use crate::nn::{Head, MlpParams, Parameters};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::train::{OptimizerKind, OptimizerState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMIVAE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    M1(M1Model),
    M2(M2Model),
    Stack(StackedModel),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::M1(_) => "m1",
            SavedModel::M2(_) => "m2",
            SavedModel::Stack(_) => "stack",
        }
    }

    fn networks(&self) -> Vec<(&'static str, &MlpParams)> {
        match self {
            SavedModel::M1(m) => vec![("m1.encoder", &m.encoder), ("m1.decoder", &m.decoder)],
            SavedModel::M2(m) => m2_nets(m),
            SavedModel::Stack(s) => {
                let mut v = vec![("m1.encoder", &s.m1.encoder), ("m1.decoder", &s.m1.decoder)];
                v.extend(m2_nets(&s.m2));
                v
            }
        }
    }

    fn networks_mut(&mut self) -> Vec<&mut MlpParams> {
        match self {
            SavedModel::M1(m) => vec![&mut m.encoder, &mut m.decoder],
            SavedModel::M2(m) => vec![&mut m.classifier, &mut m.encoder, &mut m.decoder],
            SavedModel::Stack(s) => vec![
                &mut s.m1.encoder,
                &mut s.m1.decoder,
                &mut s.m2.classifier,
                &mut s.m2.encoder,
                &mut s.m2.decoder,
            ],
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.networks()
            .into_iter()
            .flat_map(|(_, n)| n.tensors())
            .collect()
    }

    /// Tensors an optimizer state refers to. Stacked training keeps M1
    /// frozen, so a stack's optimizer covers only its M2.
    pub fn trainable_tensors(&self) -> Vec<&Tensor> {
        match self {
            SavedModel::Stack(s) => s.m2.tensors(),
            _ => self.tensors(),
        }
    }
}

fn m2_nets(m: &M2Model) -> Vec<(&'static str, &MlpParams)> {
    vec![
        ("m2.classifier", &m.classifier),
        ("m2.encoder", &m.encoder),
        ("m2.decoder", &m.decoder),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SavedModel,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<RngState>,
    /// Free-form configuration echo, stored as `config.<key>`.
    pub config: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: SavedModel) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            rng: None,
            config: BTreeMap::new(),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str16(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensors<'a>(&mut self, ts: impl ExactSizeIterator<Item = &'a Tensor>) {
        self.u32(ts.len() as u32);
        for t in ts {
            self.u32(t.shape().len() as u32);
            for &d in t.shape() {
                self.u64(d as u64);
            }
            for v in t.data() {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CheckpointCorrupt(format!(
                "{} section ends early",
                self.what
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointCorrupt(format!("{}: invalid UTF-8", self.what)))
    }
    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let n = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..n {
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l <= (self.buf.len() - self.pos) / 8)
                .ok_or_else(|| {
                    Error::CheckpointCorrupt(format!("{}: bad tensor shape", self.what))
                })?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(self.f64()?);
            }
            out.push(
                Tensor::new(shape, data)
                    .map_err(|e| Error::CheckpointCorrupt(format!("{}: {}", self.what, e)))?,
            );
        }
        Ok(out)
    }
}

fn meta_lines(ck: &Checkpoint) -> String {
    let mut lines = vec![format!("kind={}", ck.model.kind())];
    for (name, net) in ck.model.networks() {
        let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
        lines.push(format!("{}.sizes={}", name, sizes.join(",")));
        lines.push(format!("{}.head={}", name, net.head.tag()));
    }
    let m2 = match &ck.model {
        SavedModel::M1(m) => {
            lines.push(format!("m1.d_z={}", m.d_z));
            None
        }
        SavedModel::M2(m) => Some(m),
        SavedModel::Stack(s) => {
            lines.push(format!("m1.d_z={}", s.m1.d_z));
            Some(&s.m2)
        }
    };
    if let Some(m) = m2 {
        lines.push(format!("m2.d_z={}", m.d_z));
        lines.push(format!("m2.classes={}", m.n_classes));
        lines.push(format!("m2.obs={}", m.obs.tag()));
    }
    for (k, v) in &ck.config {
        lines.push(format!("config.{}={}", k, v));
    }
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

/// Serializes `ck` to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();
    sections.push(("meta", meta_lines(ck).into_bytes()));
    let mut p = Writer(Vec::new());
    p.tensors(ck.model.tensors().into_iter());
    sections.push(("params", p.0));
    if let Some(o) = &ck.optimizer {
        let mut w = Writer(Vec::new());
        w.str16(o.kind.tag());
        w.u64(o.step_count);
        w.tensors(o.first_moment.iter());
        w.tensors(o.second_moment.iter());
        sections.push(("optim", w.0));
    }
    if let Some(r) = &ck.rng {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&r.key);
        w.u64(r.stream);
        w.0.extend_from_slice(&r.word_pos.to_le_bytes());
        w.0.push(r.spare.is_some() as u8);
        w.0.extend_from_slice(&r.spare.unwrap_or(0.0).to_le_bytes());
        sections.push(("rng", w.0));
    }
    let mut out = Writer(CHECKPOINT_MAGIC.to_vec());
    out.u32(CHECKPOINT_VERSION);
    out.u32(sections.len() as u32);
    for (name, payload) in sections {
        out.str16(name);
        out.u64(payload.len() as u64);
        out.0.extend_from_slice(&payload);
    }
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Parses bytes produced by [`encode_checkpoint`]. Nothing is returned
/// unless the whole file checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointCorrupt("not a checkpoint file".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(Error::CheckpointCorrupt("checksum mismatch".into()));
    }
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut r = Reader::new(&body[12..], "header");
    let count = r.u32()?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let name = r.str16()?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        sections.insert(name, payload);
    }
    if r.pos != r.buf.len() {
        return Err(Error::CheckpointCorrupt(
            "trailing bytes after sections".into(),
        ));
    }
    let section = |name: &str| {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| Error::CheckpointMissing(name.to_string()))
    };

    let meta_text = std::str::from_utf8(section("meta")?)
        .map_err(|_| Error::CheckpointCorrupt("meta: invalid UTF-8".into()))?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CheckpointCorrupt(format!("meta line `{}`", line)))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let mut model = skeleton(&meta)?;
    let tensors = Reader::new(section("params")?, "params").tensors()?;
    {
        let mut slots: Vec<&mut Tensor> = model
            .networks_mut()
            .into_iter()
            .flat_map(|n| n.tensors_mut())
            .collect();
        if slots.len() != tensors.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} parameter tensors for an architecture with {}",
                tensors.len(),
                slots.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::CheckpointCorrupt(
                    "parameter shape disagrees with metadata".into(),
                ));
            }
            **slot = t;
        }
    }

    let optimizer = match sections.get("optim") {
        None => None,
        Some(bytes) => {
            let mut r = Reader::new(bytes, "optim");
            let tag = r.str16()?;
            let kind = OptimizerKind::from_tag(&tag)
                .ok_or_else(|| Error::CheckpointCorrupt(format!("unknown optimizer `{}`", tag)))?;
            let step_count = r.u64()?;
            let first_moment = r.tensors()?;
            let second_moment = r.tensors()?;
            let shapes: Vec<&[usize]> = model
                .trainable_tensors()
                .iter()
                .map(|t| t.shape())
                .collect();
            let congruent = |v: &[Tensor]| v.iter().map(|t| t.shape()).eq(shapes.iter().copied());
            if !congruent(&first_moment) || !congruent(&second_moment) {
                return Err(Error::CheckpointCorrupt(
                    "optimizer state does not match parameters".into(),
                ));
            }
            Some(OptimizerState {
                kind,
                first_moment,
                second_moment,
                step_count,
            })
        }
    };
    let rng = match sections.get("rng") {
        None => None,
        Some(bytes) => {
            let mut r = Reader::new(bytes, "rng");
            let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            let has_spare = r.u8()? != 0;
            let spare = r.f64()?;
            Some(RngState {
                key,
                stream,
                word_pos,
                spare: has_spare.then_some(spare),
            })
        }
    };
    let config = meta
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("config.")
                .map(|k| (k.to_string(), v.clone()))
        })
        .collect();
    Ok(Checkpoint {
        model,
        optimizer,
        rng,
        config,
    })
}

fn get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::CheckpointMissing(key.to_string()))
}

fn num(meta: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    get(meta, key)?
        .parse()
        .map_err(|_| Error::CheckpointCorrupt(format!("`{}` is not a count", key)))
}

fn net(meta: &BTreeMap<String, String>, name: &str) -> Result<MlpParams> {
    let sizes: Vec<usize> = get(meta, &format!("{}.sizes", name))?
        .split(',')
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CheckpointCorrupt(format!("{}.sizes", name)))?;
    let tag = get(meta, &format!("{}.head", name))?;
    let head = Head::from_tag(tag)
        .ok_or_else(|| Error::CheckpointCorrupt(format!("unknown head `{}`", tag)))?;
    MlpParams::zeros(&sizes, head).map_err(|e| Error::CheckpointCorrupt(e.to_string()))
}

fn m1_skeleton(meta: &BTreeMap<String, String>) -> Result<M1Model> {
    Ok(M1Model {
        encoder: net(meta, "m1.encoder")?,
        decoder: net(meta, "m1.decoder")?,
        d_z: num(meta, "m1.d_z")?,
    })
}

fn m2_skeleton(meta: &BTreeMap<String, String>) -> Result<M2Model> {
    let classes = num(meta, "m2.classes")?;
    let tag = get(meta, "m2.obs")?;
    Ok(M2Model {
        classifier: net(meta, "m2.classifier")?,
        encoder: net(meta, "m2.encoder")?,
        decoder: net(meta, "m2.decoder")?,
        class_prior: CategoricalPosterior::uniform(classes),
        n_classes: classes,
        d_z: num(meta, "m2.d_z")?,
        obs: Observation::from_tag(tag).ok_or_else(|| {
            Error::CheckpointCorrupt(format!("unknown observation model `{}`", tag))
        })?,
    })
}

fn skeleton(meta: &BTreeMap<String, String>) -> Result<SavedModel> {
    let model = match get(meta, "kind")? {
        "m1" => SavedModel::M1(m1_skeleton(meta)?),
        "m2" => SavedModel::M2(m2_skeleton(meta)?),
        "stack" => SavedModel::Stack(StackedModel {
            m1: m1_skeleton(meta)?,
            m2: m2_skeleton(meta)?,
        }),
        other => {
            return Err(Error::CheckpointCorrupt(format!(
                "unknown model kind `{}`",
                other
            )))
        }
    };
    let ok = match &model {
        SavedModel::M1(m) => m.validate(),
        SavedModel::M2(m) => m.validate(),
        SavedModel::Stack(s) => s.validate(),
    };
    ok.map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(1);
        let m1 = M1Model::new(&mut rng, 6, &[4], 2).unwrap();
        let m2 = M2Model::new(&mut rng, 2, 3, &[5], 2, Observation::Gaussian).unwrap();
        let mut ck = Checkpoint::new(SavedModel::Stack(StackedModel::new(m1, m2).unwrap()));
        ck.optimizer = Some(full_state(&ck.model, 17, &mut rng));
        let _ = rng.gaussian(); // leaves a cached spare
        ck.rng = Some(rng.state());
        ck.config.insert("seed".into(), "42".into());
        ck
    }

    fn full_state(model: &SavedModel, step: u64, rng: &mut Rng) -> OptimizerState {
        let first_moment: Vec<Tensor> = model
            .trainable_tensors()
            .iter()
            .map(|t| rng.gauss_draw(t.shape()))
            .collect();
        let second_moment = first_moment.iter().map(|t| t.map(|v| v * v)).collect();
        OptimizerState {
            kind: OptimizerKind::AdaGrad,
            first_moment,
            second_moment,
            step_count: step,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert_eq!(back, ck);
        let rng_state = ck.rng.unwrap();
        assert!(rng_state.spare.is_some());
        for (a, b) in back.model.tensors().iter().zip(ck.model.tensors()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn every_kind_round_trips() {
        let mut rng = Rng::new(2);
        let m1 = M1Model::new(&mut rng, 5, &[3, 3], 2).unwrap();
        let m2 = M2Model::new(&mut rng, 5, 4, &[3], 2, Observation::Bernoulli).unwrap();
        for model in [SavedModel::M1(m1), SavedModel::M2(m2)] {
            let ck = Checkpoint::new(model);
            assert_eq!(decode_checkpoint(&encode_checkpoint(&ck)).unwrap(), ck);
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::CheckpointVersion {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncation_and_bit_flips_are_corruption() {
        let bytes = encode_checkpoint(&sample());
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    decode_checkpoint(&bytes[..cut]),
                    Err(Error::CheckpointCorrupt(_))
                ),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 3] ^= 0x10;
        assert!(matches!(
            decode_checkpoint(&flipped),
            Err(Error::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn missing_section_is_reported() {
        // hand-built container with only a meta section
        let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
        w.u32(CHECKPOINT_VERSION);
        w.u32(1);
        w.str16("meta");
        let meta = b"kind=m1\n";
        w.u64(meta.len() as u64);
        w.0.extend_from_slice(meta);
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        assert!(matches!(
            decode_checkpoint(&w.0),
            Err(Error::CheckpointMissing(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert!(matches!(
            load_checkpoint(dir.path().join("absent")),
            Err(Error::Io { .. })
        ));
    }
}
