//! Named parameter storage and the on-disk parameter directory.
//!
//! A parameter directory holds `params.json` (merger variant, widths and
//! label bindings) plus one TLT1 file per tensor, `<name>.tlt`, where the
//! names follow the scheme below (`<k>` is a label name, `<m>` a depth):
//!
//! | name                         | shape      |
//! |------------------------------|------------|
//! | `proj.<k>.A`, `proj.<k>.b`   | d×C_k, 1×d |
//! | `enc.<k>`                    | 1×d        |
//! | `block<m>.ln1.gamma` / `.beta`, `block<m>.ln2.*` | 1×d |
//! | `block<m>.attn.wq/wk/wv/wo`  | d×d        |
//! | `block<m>.attn.bo`           | 1×d        |
//! | `block<m>.mlp.w1/b1/w2/b2`   | d×4d, 1×4d, 4d×d, 1×d |
//! | `clam.<k>.<m>.A`, `.b`       | d×d, 1×d   |
//!
//! Every tensor is written as a rank-2 f64 tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Affine, LabelBinding, MergerConfig, MergerParams};
use crate::mat::Mat;
use crate::nn::{AttentionParams, BlockParams, LayerNormParams, MlpParams};
use crate::tlt;

/// Parameters by name, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Mat::all_finite)
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    fn take(&self, name: &str) -> Result<Mat> {
        self.get(name).cloned()
    }

    fn take_affine(&self, prefix: &str) -> Result<Affine> {
        Ok(Affine {
            a: self.take(&format!("{prefix}.A"))?,
            b: self.take(&format!("{prefix}.b"))?,
        })
    }
}

fn put_affine(store: &mut ParamStore, prefix: &str, a: &Affine) {
    store.insert(format!("{prefix}.A"), a.a.clone());
    store.insert(format!("{prefix}.b"), a.b.clone());
}

pub fn block_prefix(m: usize) -> String {
    format!("block{m}")
}

impl MergerParams {
    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, l) in self.labels.iter().enumerate() {
            if let Some(p) = self.projections.get(k) {
                put_affine(&mut s, &format!("proj.{}", l.name), p);
            }
            if let Some(e) = self.encodings.get(k) {
                s.insert(format!("enc.{}", l.name), e.clone());
            }
            if let Some(stack) = self.clam.get(k) {
                for (m, layer) in stack.iter().enumerate() {
                    put_affine(&mut s, &format!("clam.{}.{m}", l.name), layer);
                }
            }
        }
        for (m, b) in self.blocks.iter().enumerate() {
            let pre = block_prefix(m);
            s.insert(format!("{pre}.ln1.gamma"), b.ln1.gamma.clone());
            s.insert(format!("{pre}.ln1.beta"), b.ln1.beta.clone());
            s.insert(format!("{pre}.attn.wq"), b.attn.wq.clone());
            s.insert(format!("{pre}.attn.wk"), b.attn.wk.clone());
            s.insert(format!("{pre}.attn.wv"), b.attn.wv.clone());
            s.insert(format!("{pre}.attn.wo"), b.attn.wo.clone());
            s.insert(format!("{pre}.attn.bo"), b.attn.bo.clone());
            s.insert(format!("{pre}.ln2.gamma"), b.ln2.gamma.clone());
            s.insert(format!("{pre}.ln2.beta"), b.ln2.beta.clone());
            s.insert(format!("{pre}.mlp.w1"), b.mlp.w1.clone());
            s.insert(format!("{pre}.mlp.b1"), b.mlp.b1.clone());
            s.insert(format!("{pre}.mlp.w2"), b.mlp.w2.clone());
            s.insert(format!("{pre}.mlp.b2"), b.mlp.b2.clone());
        }
        s
    }

    /// Rebuilds structured parameters from a store holding (at least) the
    /// names [`MergerParams::to_store`] produces.
    pub fn from_store(config: MergerConfig, labels: Vec<LabelBinding>, s: &ParamStore) -> Result<Self> {
        use crate::fusion::Variant;
        let mut p = MergerParams {
            config,
            labels,
            projections: vec![],
            encodings: vec![],
            blocks: vec![],
            clam: vec![],
        };
        if config.variant == Variant::Naive {
            return Ok(p);
        }
        for l in &p.labels {
            let proj = s.take_affine(&format!("proj.{}", l.name))?;
            if (proj.a.rows, proj.a.cols) != (config.width, l.channels) || proj.b.len() != config.width {
                return Err(Error::Shape(format!("projection for `{}` does not match bindings", l.name)));
            }
            p.projections.push(proj);
        }
        match config.variant {
            Variant::Tlam => {
                for l in &p.labels {
                    p.encodings.push(s.take(&format!("enc.{}", l.name))?);
                }
                for m in 0..config.depth {
                    let pre = block_prefix(m);
                    let g = |n: &str| s.take(&format!("{pre}.{n}"));
                    p.blocks.push(BlockParams {
                        ln1: LayerNormParams {
                            gamma: g("ln1.gamma")?,
                            beta: g("ln1.beta")?,
                        },
                        attn: AttentionParams {
                            heads: config.heads,
                            wq: g("attn.wq")?,
                            wk: g("attn.wk")?,
                            wv: g("attn.wv")?,
                            wo: g("attn.wo")?,
                            bo: g("attn.bo")?,
                        },
                        ln2: LayerNormParams {
                            gamma: g("ln2.gamma")?,
                            beta: g("ln2.beta")?,
                        },
                        mlp: MlpParams {
                            w1: g("mlp.w1")?,
                            b1: g("mlp.b1")?,
                            w2: g("mlp.w2")?,
                            b2: g("mlp.b2")?,
                        },
                    });
                }
            }
            Variant::Clam => {
                for l in &p.labels {
                    let stack = (0..config.depth)
                        .map(|m| s.take_affine(&format!("clam.{}.{m}", l.name)))
                        .collect::<Result<Vec<_>>>()?;
                    p.clam.push(stack);
                }
            }
            Variant::Naive => unreachable!(),
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsHeader {
    #[serde(flatten)]
    config: MergerConfig,
    labels: Vec<LabelBinding>,
}

const HEADER_FILE: &str = "params.json";

/// Writes `params.json` and one TLT1 file per entry of `extra` merged with
/// the merger's own tensors.
pub fn save_params_dir(dir: impl AsRef<Path>, p: &MergerParams, extra: Option<&ParamStore>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Path {
        path: dir.display().to_string(),
        source,
    })?;
    let header = ParamsHeader {
        config: p.config,
        labels: p.labels.clone(),
    };
    let path = dir.join(HEADER_FILE);
    fs::write(&path, serde_json::to_string_pretty(&header)?).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    let mut store = p.to_store();
    if let Some(extra) = extra {
        store.extend(extra.clone());
    }
    for (name, m) in store.iter() {
        tlt::save(&m.to_tensor(), dir.join(format!("{name}.tlt")))?;
    }
    Ok(())
}

/// Loads merger parameters from a directory written by [`save_params_dir`].
pub fn load_params_dir(dir: impl AsRef<Path>) -> Result<MergerParams> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Path {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "parameter directory not found"),
        });
    }
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    let header: ParamsHeader = serde_json::from_str(&text)?;
    let mut store = ParamStore::new();
    let wanted = MergerParams::init(header.config, header.labels.clone(), 0)?.to_store();
    for name in wanted.names() {
        let t = tlt::load(dir.join(format!("{name}.tlt")))?;
        store.insert(name.clone(), Mat::from_tensor(&t)?);
    }
    MergerParams::from_store(header.config, header.labels, &store)
}

/// Loads every `*.tlt` in `dir` whose stem starts with `prefix`.
pub fn load_prefixed(dir: impl AsRef<Path>, prefix: &str) -> Result<ParamStore> {
    let dir = dir.as_ref();
    let mut store = ParamStore::new();
    let entries = fs::read_dir(dir).map_err(|source| Error::Path {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| Error::Path {
            path: dir.display().to_string(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".tlt") {
            if stem.starts_with(prefix) {
                store.insert(stem.to_string(), Mat::from_tensor(&tlt::load(entry.path())?)?);
            }
        }
    }
    Ok(store)
}
