//! Checkpoint persistence.
//!
//! Layout: magic `DRU1`; a length-prefixed UTF-8 block of `key=value`
//! lines describing the spec; then, per parameter in canonical order, a
//! length-prefixed name, the rank, the extents, and the values. Lengths,
//! rank, and extents are 64-bit little-endian unsigned integers; values
//! are 64-bit little-endian IEEE-754. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{param_layout, Model, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

const MAGIC: &[u8; 4] = b"DRU1";

fn spec_block(spec: &NetworkSpec) -> String {
    format!(
        "depth={}\nbase_channels={}\nlatent_dim={}\npatch={}\nseed={}\n",
        spec.depth, spec.base_channels, spec.latent_dim, spec.patch, spec.seed
    )
}

fn parse_spec_block(text: &str) -> Result<NetworkSpec> {
    let corrupt = |reason: String| Error::Checkpoint(reason);
    let mut depth = None;
    let mut base = None;
    let mut latent = None;
    let mut patch = None;
    let mut seed = None;
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("spec line `{line}` is not key=value")))?;
        let slot = match key {
            "depth" => &mut depth,
            "base_channels" => &mut base,
            "latent_dim" => &mut latent,
            "patch" => &mut patch,
            "seed" => &mut seed,
            other => return Err(corrupt(format!("unknown spec key `{other}`"))),
        };
        *slot = Some(
            value
                .parse::<u64>()
                .map_err(|_| corrupt(format!("non-numeric value for `{key}`")))?,
        );
    }
    let get = |name: &str, v: Option<u64>| {
        v.ok_or_else(|| Error::Checkpoint(format!("spec key `{name}` missing")))
    };
    Ok(NetworkSpec {
        depth: get("depth", depth)? as usize,
        base_channels: get("base_channels", base)? as usize,
        latent_dim: get("latent_dim", latent)? as usize,
        patch: get("patch", patch)? as usize,
        seed: get("seed", seed)?,
    })
}

/// Serializes the spec and parameter values.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let block = spec_block(model.spec());
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(block.as_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u64).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("slice is 8 bytes")))
    }
}

/// Loads a checkpoint, validating the parameter table against the spec's
/// canonical layout. Any inconsistency or truncation fails without
/// producing a partial model.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic (expected DRU1)".into()));
    }
    let block_len = r.u64("spec length")? as usize;
    let block = std::str::from_utf8(r.take(block_len, "spec block")?)
        .map_err(|_| Error::Checkpoint("spec block is not UTF-8".into()))?;
    let spec = parse_spec_block(block)?;
    spec.validate()
        .map_err(|e| Error::Checkpoint(format!("invalid spec: {e}")))?;

    let mut params = Vec::new();
    for (name, shape) in param_layout(&spec) {
        let name_len = r.u64("name length")? as usize;
        let got_name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if got_name != name {
            return Err(Error::Checkpoint(format!(
                "parameter `{got_name}` where spec requires `{name}`"
            )));
        }
        let rank = r.u64("rank")? as usize;
        if rank != shape.len() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has rank {rank}, spec requires {}",
                shape.len()
            )));
        }
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(r.u64("extent")? as usize);
        }
        if extents != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {extents:?}, spec requires {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        params.push(Parameter::new(name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last parameter",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drunet::build;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            depth: 1,
            base_channels: 2,
            latent_dim: 3,
            patch: 8,
            seed: 17,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = build(&spec()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, f.path()).unwrap();
        let loaded = load_checkpoint(f.path()).unwrap();
        assert!(model.bitwise_eq(&loaded));
        assert_eq!(loaded.spec(), model.spec());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model = build(&spec()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let g = tempfile::NamedTempFile::new().unwrap();
            std::fs::write(g.path(), &bytes[..cut]).unwrap();
            assert!(load_checkpoint(g.path()).is_err(), "cut at {cut} accepted");
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let model = build(&spec()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, f.path()).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        bytes.push(0);
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(load_checkpoint(f.path()).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"XXX1rest").unwrap();
        let err = load_checkpoint(f.path()).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn header_spec_mismatching_parameter_table_is_rejected() {
        // Rewrite depth=1 to depth=2 in the header; the parameter table
        // no longer matches the spec-derived layout.
        let model = build(&spec()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("depth=1").unwrap();
        let mut tampered = bytes.clone();
        tampered[at + 6] = b'2';
        std::fs::write(f.path(), &tampered).unwrap();
        let err = load_checkpoint(f.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn unknown_spec_key_is_rejected() {
        assert!(parse_spec_block("depth=1\nwhat=3\n").is_err());
        assert!(parse_spec_block("depth=1\n").is_err()); // missing keys
    }
}
