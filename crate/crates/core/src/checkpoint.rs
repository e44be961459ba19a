//! NNCK checkpoint container and the `key=value` run manifest.
//!
//! Layout (little-endian): `"NNCK"`, version `u16`, manifest length `u32`,
//! manifest UTF-8 text, then every parameter and running statistic as `f64`
//! (per block: weights row-major, bias, gamma, beta, running_mean,
//! running_var; then head weights and bias). A `u16` section count (0 or 1)
//! comes next, so a file cut right after the parameters is still detected
//! as truncated. The only section is `optim`: name length `u16`, `"optim"`,
//! step count `u64`, learning rate, beta1, beta2, epsilon, weight decay
//! (`f64` each), then the first-moment and second-moment buffers in
//! parameter order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embedding_store::Cursor;
use crate::error::{Error, Result};
use crate::nn::{NetConfig, RegressionNet};
use crate::optim::AdamWState;

pub const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u16 = 1;
const OPTIM_SECTION: &str = "optim";

/// Ordered `key=value` pairs. Order is preserved so serialization is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parse `key=value` lines; blank lines and `#` comments are skipped.
    /// Errors carry the 1-based line number.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut m = Manifest::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| (idx + 1, format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err((idx + 1, "empty key".to_string()));
            }
            if m.get(k).is_some() {
                return Err((idx + 1, format!("duplicate key {k}")));
            }
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Validation(format!("checkpoint manifest lacks {key}")))
    }

    fn require_f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Validation(format!("manifest {key}={raw:?} is not a number")))
    }
}

pub fn format_widths(widths: &[usize]) -> String {
    widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_widths(raw: &str) -> std::result::Result<Vec<usize>, String> {
    raw.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid width {w:?} in {raw:?}"))
        })
        .collect()
}

/// Manifest entries describing the network topology.
pub fn net_manifest(config: &NetConfig) -> Manifest {
    let mut m = Manifest::new();
    m.set("widths", format_widths(&config.widths()));
    m.set("bn_epsilon", config.bn_epsilon);
    m.set("bn_momentum", config.bn_momentum);
    m.set("dropout_p", config.dropout_p);
    m
}

pub fn net_config_from_manifest(m: &Manifest) -> Result<NetConfig> {
    let widths = parse_widths(m.require("widths")?).map_err(Error::Validation)?;
    if widths.len() < 2 || *widths.last().unwrap() != 1 {
        return Err(Error::Validation(format!(
            "widths must list the input, hidden layers and a final 1, got {widths:?}"
        )));
    }
    let config = NetConfig {
        input_width: widths[0],
        hidden_widths: widths[1..widths.len() - 1].to_vec(),
        dropout_p: m.require_f64("dropout_p")?,
        bn_epsilon: m.require_f64("bn_epsilon")?,
        bn_momentum: m.require_f64("bn_momentum")?,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub net: RegressionNet,
    pub optim: Option<AdamWState>,
}

fn put(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(manifest: &Manifest, net: &RegressionNet, optim: Option<&AdamWState>) -> Result<Vec<u8>> {
    let described = net_config_from_manifest(manifest)?;
    if &described != net.config() {
        return Err(Error::Validation(format!(
            "manifest describes {described:?} but the network is {:?}",
            net.config()
        )));
    }
    let text = manifest.to_text();
    let mut buf = Vec::with_capacity(14 + text.len() + 8 * (net.parameter_count() * 3));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    for b in &net.blocks {
        put(&mut buf, b.dense.weights.iter().copied());
        put(&mut buf, b.dense.bias.iter().copied());
        put(&mut buf, b.norm.gamma.iter().copied());
        put(&mut buf, b.norm.beta.iter().copied());
        put(&mut buf, b.norm.running_mean.iter().copied());
        put(&mut buf, b.norm.running_var.iter().copied());
    }
    put(&mut buf, net.head.weights.iter().copied());
    put(&mut buf, net.head.bias.iter().copied());

    buf.extend_from_slice(&(optim.is_some() as u16).to_le_bytes());
    if let Some(state) = optim {
        let lens: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
        let state_lens: Vec<usize> = state.m.iter().map(Vec::len).collect();
        if lens != state_lens || state.v.iter().map(Vec::len).ne(lens.iter().copied()) {
            return Err(Error::Shape("optimizer buffers do not match network parameters".into()));
        }
        buf.extend_from_slice(&(OPTIM_SECTION.len() as u16).to_le_bytes());
        buf.extend_from_slice(OPTIM_SECTION.as_bytes());
        buf.extend_from_slice(&state.step_count.to_le_bytes());
        put(
            &mut buf,
            [
                state.learning_rate,
                state.beta1,
                state.beta2,
                state.epsilon,
                state.weight_decay,
            ],
        );
        for t in state.m.iter().chain(&state.v) {
            put(&mut buf, t.iter().copied());
        }
    }
    Ok(buf)
}

fn fill(cur: &mut Cursor<'_>, dst: &mut [f64], what: &str) -> Result<()> {
    for d in dst {
        let at = cur.offset();
        let v = cur.f64(what)?;
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite value in {what}")));
        }
        *d = v;
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"NNCK\"")));
    }
    let version_at = cur.offset();
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(version_at, format!("unsupported version {version}")));
    }
    let len = cur.u32("manifest length")? as usize;
    let text_at = cur.offset();
    let text =
        std::str::from_utf8(cur.take(len, "manifest")?).map_err(|_| Error::format(text_at, "manifest is not UTF-8"))?;
    let manifest =
        Manifest::parse(text).map_err(|(line, msg)| Error::format(text_at, format!("manifest line {line}: {msg}")))?;
    let config = net_config_from_manifest(&manifest).map_err(|e| Error::format(text_at, e.to_string()))?;

    let mut net = RegressionNet::new(config, 0)?;
    for (k, b) in net.blocks.iter_mut().enumerate() {
        let what = format!("block {k}");
        fill(&mut cur, b.dense.weights.as_slice_mut().unwrap(), &what)?;
        fill(&mut cur, b.dense.bias.as_slice_mut().unwrap(), &what)?;
        fill(&mut cur, b.norm.gamma.as_slice_mut().unwrap(), &what)?;
        fill(&mut cur, b.norm.beta.as_slice_mut().unwrap(), &what)?;
        fill(&mut cur, b.norm.running_mean.as_slice_mut().unwrap(), &what)?;
        let var_at = cur.offset();
        fill(&mut cur, b.norm.running_var.as_slice_mut().unwrap(), &what)?;
        if b.norm.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::format(var_at, format!("negative running variance in {what}")));
        }
    }
    fill(&mut cur, net.head.weights.as_slice_mut().unwrap(), "head")?;
    fill(&mut cur, net.head.bias.as_slice_mut().unwrap(), "head")?;

    let mut optim = None;
    let sections_at = cur.offset();
    let sections = cur.u16("section count")?;
    if sections > 1 {
        return Err(Error::format(
            sections_at,
            format!("expected at most 1 section, found {sections}"),
        ));
    }
    if sections == 1 {
        let section_at = cur.offset();
        let name_len = cur.u16("section name length")? as usize;
        let name = cur.take(name_len, "section name")?;
        if name != OPTIM_SECTION.as_bytes() {
            return Err(Error::format(
                section_at,
                format!("unknown section {:?}", String::from_utf8_lossy(name)),
            ));
        }
        let step_count = cur.u64("step count")?;
        let mut hyper = [0.0; 5];
        fill(&mut cur, &mut hyper, "optimizer hyperparameters")?;
        let lens: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
        let mut m: Vec<Vec<f64>> = lens.iter().map(|&n| vec![0.0; n]).collect();
        let mut v = m.clone();
        for t in m.iter_mut() {
            fill(&mut cur, t, "first moments")?;
        }
        for t in v.iter_mut() {
            fill(&mut cur, t, "second moments")?;
        }
        optim = Some(AdamWState {
            step_count,
            m,
            v,
            learning_rate: hyper[0],
            beta1: hyper[1],
            beta2: hyper[2],
            epsilon: hyper[3],
            weight_decay: hyper[4],
        });
    }
    if cur.remaining() != 0 {
        return Err(Error::format(
            cur.offset(),
            format!("{} trailing bytes", cur.remaining()),
        ));
    }
    Ok(Checkpoint { manifest, net, optim })
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    manifest: &Manifest,
    net: &RegressionNet,
    optim: Option<&AdamWState>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(manifest, net, optim)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
