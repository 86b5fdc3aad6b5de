//! Versioned binary snapshot of a training run.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GRSPCKPT" | version u32 | header_len u32 | header (UTF-8 key = value)
//! | crc32(header) u32 | blocks...
//! block: name_len u32 | name | dims 4 × u32 | count u32 | count × f32
//! ```
//!
//! The header echoes the resolved run configuration plus the optimiser,
//! schedule and RNG state, so a file describes itself.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_kv, RunConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{Discriminator, Generator};
use crate::ops::{BN_EPS, BN_MOMENTUM};
use crate::tensor::Tensor;
use crate::train::adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

pub const MAGIC: &[u8; 8] = b"GRSPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub generator: Generator<f32>,
    /// Present only for runs that use one.
    pub discriminator: Option<Discriminator<f32>>,
    pub adam_g: AdamState<f32>,
    pub adam_d: Option<AdamState<f32>>,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimisation steps completed.
    pub step: u64,
    /// Mean total loss of each completed epoch.
    pub history: Vec<f64>,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Shuffle and crop generator, positioned for the next epoch.
    pub rng: ChaCha8Rng,
}

const GEN: &str = "generator/";
const DISC: &str = "discriminator/";
const ADAM_G_M: &str = "adam_g.m/";
const ADAM_G_V: &str = "adam_g.v/";
const ADAM_D_M: &str = "adam_d.m/";
const ADAM_D_V: &str = "adam_d.v/";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    /// Every block in file order.
    fn blocks(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        let g = &self.generator;
        for p in g.params().iter() {
            out.push((format!("{GEN}{}", p.id), &p.tensor));
        }
        for (id, t) in g.stats().named() {
            out.push((format!("{GEN}{id}"), t));
        }
        if let Some(d) = &self.discriminator {
            for p in d.params().iter() {
                out.push((format!("{DISC}{}", p.id), &p.tensor));
            }
            for (id, t) in d.stats().named() {
                out.push((format!("{DISC}{id}"), t));
            }
        }
        for (p, (m, v)) in g
            .params()
            .iter()
            .zip(self.adam_g.m.iter().zip(&self.adam_g.v))
        {
            out.push((format!("{ADAM_G_M}{}", p.id), m));
            out.push((format!("{ADAM_G_V}{}", p.id), v));
        }
        if let (Some(d), Some(a)) = (&self.discriminator, &self.adam_d) {
            for (p, (m, v)) in d.params().iter().zip(a.m.iter().zip(&a.v)) {
                out.push((format!("{ADAM_D_M}{}", p.id), m));
                out.push((format!("{ADAM_D_V}{}", p.id), v));
            }
        }
        out
    }

    fn header(&self, blocks: usize) -> String {
        let mut h = String::from("format = graspp-checkpoint\n");
        h.push_str(&self.run.to_text());
        let history: Vec<String> = self.history.iter().map(|v| format!("{v:?}")).collect();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(h, "{k} = {v}");
        };
        kv("state.epoch", self.epoch.to_string());
        kv("state.step", self.step.to_string());
        kv("state.lr_g", format!("{:?}", self.lr_g));
        kv("state.lr_d", format!("{:?}", self.lr_d));
        kv("state.history", history.join(", "));
        kv("state.rng_seed", hex(&self.rng.get_seed()));
        kv("state.rng_stream", self.rng.get_stream().to_string());
        kv("state.rng_word_pos", self.rng.get_word_pos().to_string());
        kv("state.adam_g_t", self.adam_g.t.to_string());
        kv(
            "state.discriminator",
            self.discriminator.is_some().to_string(),
        );
        if let Some(a) = &self.adam_d {
            kv("state.adam_d_t", a.t.to_string());
        }
        kv("echo.bn_eps", format!("{BN_EPS:?}"));
        kv("echo.bn_momentum", format!("{BN_MOMENTUM:?}"));
        kv("echo.adam_beta1", format!("{ADAM_BETA1:?}"));
        kv("echo.adam_beta2", format!("{ADAM_BETA2:?}"));
        kv("echo.adam_eps", format!("{ADAM_EPS:?}"));
        kv("blocks", blocks.to_string());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blocks = self.blocks();
        let header = self.header(blocks.len());
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&crc32fast::hash(header.as_bytes()).to_le_bytes());
        for (name, t) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes through a sibling temporary file, so an interrupted save never
    /// replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let header_len = r.u32("header length")? as usize;
        let header = r.take(header_len, "header")?;
        let stored = r.u32("header checksum")?;
        let computed = crc32fast::hash(header);
        if stored != computed {
            return Err(CheckpointError::HeaderChecksum { stored, computed }.into());
        }
        let header = std::str::from_utf8(header).map_err(|_| bad_header("header is not UTF-8"))?;
        let mut ck = Checkpoint::from_header(header)?;

        let expected: Vec<String> = ck.blocks().into_iter().map(|(n, _)| n).collect();
        let mut seen = HashSet::new();
        for _ in 0..ck.block_count_hint {
            let name_len = r.u32("block name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "block name")?)
                .map_err(|_| bad_header("block name is not UTF-8"))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32(&format!("dims of `{name}`"))? as usize;
            }
            let count = r.u32(&format!("length of `{name}`"))? as usize;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            if numel != Some(count) {
                return Err(bad_header(&format!(
                    "block `{name}` length {count} disagrees with {dims:?}"
                )));
            }
            let raw = r.take(count * 4, &format!("values of `{name}`"))?;
            if !seen.insert(name.clone()) {
                return Err(bad_header(&format!("block `{name}` appears twice")));
            }
            let slot = ck
                .slot_mut(&name)
                .ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
            let want = slot.shape().dims();
            if want != dims {
                return Err(CheckpointError::BlockShape {
                    id: name,
                    found: dims,
                    expected: want,
                }
                .into());
            }
            for (v, c) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        if r.pos != bytes.len() {
            return Err(bad_header("trailing bytes after the last block"));
        }
        if let Some(missing) = expected.into_iter().find(|n| !seen.contains(n)) {
            return Err(CheckpointError::MissingParameter(missing).into());
        }
        Ok(ck.inner)
    }

    fn from_header(header: &str) -> Result<Parsed> {
        let entries = parse_kv(header).map_err(|e| bad_header(&e.to_string()))?;
        let mut run = RunConfig::default();
        let mut state = std::collections::HashMap::new();
        for e in &entries {
            if e.key.starts_with("state.")
                || e.key.starts_with("echo.")
                || e.key == "blocks"
                || e.key == "format"
            {
                state.insert(e.key.as_str(), e.value.as_str());
            } else {
                run.set(&e.key, &e.value)
                    .map_err(|err| bad_header(&err.to_string()))?;
            }
        }
        let get = |k: &str| {
            state
                .get(k)
                .copied()
                .ok_or_else(|| bad_header(&format!("missing `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| bad_header(&format!("`{k}` has unreadable value `{v}`")))
        }
        if get("format")? != "graspp-checkpoint" {
            return Err(bad_header("unexpected format tag"));
        }
        let history = {
            let v = get("state.history")?;
            if v.is_empty() {
                Vec::new()
            } else {
                v.split(',')
                    .map(|x| num::<f64>("state.history", x.trim()))
                    .collect::<Result<_>>()?
            }
        };
        let seed = unhex32(get("state.rng_seed")?)
            .ok_or_else(|| bad_header("unreadable `state.rng_seed`"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(num("state.rng_stream", get("state.rng_stream")?)?);
        rng.set_word_pos(num("state.rng_word_pos", get("state.rng_word_pos")?)?);

        let generator =
            Generator::new(run.generator.clone()).map_err(|e| bad_header(&e.to_string()))?;
        let mut adam_g = AdamState::new(generator.params());
        adam_g.t = num("state.adam_g_t", get("state.adam_g_t")?)?;
        let has_disc: bool = num("state.discriminator", get("state.discriminator")?)?;
        let (discriminator, adam_d) = if has_disc {
            let d = Discriminator::new(run.discriminator.clone())
                .map_err(|e| bad_header(&e.to_string()))?;
            let mut a = AdamState::new(d.params());
            a.t = num("state.adam_d_t", get("state.adam_d_t")?)?;
            (Some(d), Some(a))
        } else {
            (None, None)
        };
        Ok(Parsed {
            block_count_hint: num("blocks", get("blocks")?)?,
            inner: Checkpoint {
                generator,
                discriminator,
                adam_g,
                adam_d,
                epoch: num("state.epoch", get("state.epoch")?)?,
                step: num("state.step", get("state.step")?)?,
                history,
                lr_g: num("state.lr_g", get("state.lr_g")?)?,
                lr_d: num("state.lr_d", get("state.lr_d")?)?,
                rng,
                run,
            },
        })
    }
}

/// A checkpoint being filled from its blocks.
struct Parsed {
    inner: Checkpoint,
    block_count_hint: usize,
}

impl Parsed {
    fn blocks(&self) -> Vec<(String, &Tensor<f32>)> {
        self.inner.blocks()
    }

    fn slot_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        let c = &mut self.inner;
        if let Some(id) = name.strip_prefix(GEN) {
            let g = &mut c.generator;
            return match g.params().find(id) {
                Some(pid) => Some(g.params_mut().tensor_mut(pid)),
                None => g.stats_mut().find_mut(id),
            };
        }
        if let Some(id) = name.strip_prefix(DISC) {
            let d = c.discriminator.as_mut()?;
            return match d.params().find(id) {
                Some(pid) => Some(d.params_mut().tensor_mut(pid)),
                None => d.stats_mut().find_mut(id),
            };
        }
        let adam = |prefix: &str| name.strip_prefix(prefix);
        if let Some(id) = adam(ADAM_G_M) {
            return c.generator.params().find(id).map(|p| &mut c.adam_g.m[p.0]);
        }
        if let Some(id) = adam(ADAM_G_V) {
            return c.generator.params().find(id).map(|p| &mut c.adam_g.v[p.0]);
        }
        if let Some(id) = adam(ADAM_D_M) {
            let p = c.discriminator.as_ref()?.params().find(id)?;
            return c.adam_d.as_mut().map(|a| &mut a.m[p.0]);
        }
        if let Some(id) = adam(ADAM_D_V) {
            let p = c.discriminator.as_ref()?.params().find(id)?;
            return c.adam_d.as_mut().map(|a| &mut a.v[p.0]);
        }
        None
    }
}

fn bad_header(msg: &str) -> Error {
    CheckpointError::Header(msg.to_string()).into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated {
                what: what.to_string(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
