//! Checkpoint container.
//!
//! ```text
//! HSTKIT-CHECKPOINT 1
//! dtype f32
//! [config]
//! channels = [144, 60, 168]
//! ...
//! [meta]
//! iteration = "1000"
//! [tensors]
//! param high.extract.weight 168,3,7,7 0
//! state adam.m.high.extract.weight 168,3,7,7 24696
//! end
//! <raw little-endian values, byte offsets relative to the end of the header>
//! ```
//!
//! `param` entries are the network weights in store order; `state` entries
//! carry optimizer buffers. `dtype` is `f32` for training runs and `f64` for
//! 64-bit verification runs.

use std::collections::BTreeMap;
use std::path::Path;

use hstkit_tensor::{Real, Tensor};

use crate::config::HSTConfig;
use crate::error::{ModelError, Result};
use crate::params::ParamStore;

pub const MAGIC: &str = "HSTKIT-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real = f32> {
    pub config: HSTConfig,
    pub params: ParamStore<T>,
    pub state: ParamStore<T>,
    pub meta: BTreeMap<String, String>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(config: HSTConfig, params: ParamStore<T>) -> Self {
        Checkpoint {
            config,
            params,
            state: ParamStore::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fail = |reason: String| ModelError::Checkpoint {
            path: "<memory>".into(),
            reason,
        };
        let mut header = format!("{MAGIC}\ndtype {}\n[config]\n", T::DTYPE);
        header += &toml::to_string(&self.config).map_err(|e| fail(e.to_string()))?;
        header += "[meta]\n";
        header += &toml::to_string(&self.meta).map_err(|e| fail(e.to_string()))?;
        header += "[tensors]\n";
        let mut data = Vec::new();
        for (kind, store) in [("param", &self.params), ("state", &self.state)] {
            for (name, t) in store.iter() {
                if name.chars().any(char::is_whitespace) {
                    return Err(fail(format!("tensor name {name:?} contains whitespace")));
                }
                let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                header += &format!("{kind} {name} {} {}\n", dims.join(","), data.len());
                for &v in t.data() {
                    v.write_le(&mut data);
                }
            }
        }
        header += "end\n";
        let mut out = header.into_bytes();
        out.extend(data);
        Ok(out)
    }

    /// Parses a checkpoint of either dtype, converting values to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        parse(bytes).map_err(|reason| ModelError::Checkpoint {
            path: "<memory>".into(),
            reason,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| ModelError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|source| ModelError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse(&bytes).map_err(|reason| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason,
        })
    }
}

fn parse<T: Real>(bytes: &[u8]) -> std::result::Result<Checkpoint<T>, String> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("header is not terminated by an `end` line")?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| "header is not UTF-8")?;
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let data = &bytes[pos..];
    if lines.first() != Some(&MAGIC) {
        return Err(format!("missing magic line {MAGIC:?}"));
    }
    let dtype = lines.get(1).and_then(|l| l.strip_prefix("dtype ")).ok_or("missing dtype line")?;
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(format!("unknown dtype {other:?}")),
    };
    let section = |name: &str| -> std::result::Result<usize, String> {
        lines.iter().position(|l| *l == name).ok_or(format!("missing {name} section"))
    };
    let (c, m, t) = (section("[config]")?, section("[meta]")?, section("[tensors]")?);
    if !(c < m && m < t) {
        return Err("sections out of order".into());
    }
    let config: HSTConfig = toml::from_str(&lines[c + 1..m].join("\n")).map_err(|e| format!("config: {e}"))?;
    let meta: BTreeMap<String, String> = toml::from_str(&lines[m + 1..t].join("\n")).map_err(|e| format!("meta: {e}"))?;
    let mut params = ParamStore::new();
    let mut state = ParamStore::new();
    for line in &lines[t + 1..] {
        let fields: Vec<&str> = line.split(' ').collect();
        let [kind, name, dims, offset] = fields[..] else {
            return Err(format!("bad tensor entry {line:?}"));
        };
        let shape: Vec<usize> = dims.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| format!("bad shape in {line:?}"))?;
        let offset: usize = offset.parse().map_err(|_| format!("bad offset in {line:?}"))?;
        let numel: usize = shape.iter().product();
        let raw = data
            .get(offset..offset + numel * width)
            .ok_or(format!("tensor {name} extends past the end of the file"))?;
        let values: Vec<T> = raw
            .chunks(width)
            .map(|b| if width == 4 { T::from_f64(f32::read_le(b) as f64) } else { T::from_f64(f64::read_le(b)) })
            .collect();
        let tensor = Tensor::new(shape, values).map_err(|e| e.to_string())?;
        let store = match kind {
            "param" => &mut params,
            "state" => &mut state,
            other => return Err(format!("unknown tensor kind {other:?}")),
        };
        store.insert(name, tensor).map_err(|e| e.to_string())?;
    }
    params.check_against(&config).map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        config,
        params,
        state,
        meta,
    })
}
