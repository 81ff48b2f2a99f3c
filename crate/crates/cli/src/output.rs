use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use curlhom::field::PeriodicField;
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, Tolerances};
use crate::error::{CliError, CliResult};

/// Magic prefix of the binary field container.
pub const FIELD_MAGIC: &[u8; 8] = b"CURLHOM1";

/// Output directory for one command run. Every file carries the config hash
/// and the tolerance set; `finish` writes the manifest.
pub struct Output {
    dir: PathBuf,
    command: String,
    hash: String,
    tolerances: Tolerances,
    config: RunConfig,
    files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult<Output> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        Ok(Output {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            hash: cfg.hash(),
            tolerances: cfg.tolerances.clone(),
            config: cfg.clone(),
            files: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Write { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json(&mut self, name: &str, data: &impl Serialize) -> CliResult<()> {
        let doc = json!({
            "command": self.command,
            "config_hash": self.hash,
            "tolerances": self.tolerances,
            "data": data,
        });
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        self.put(name, s.as_bytes())
    }

    /// CSV body preceded by `#` comment lines with the hash and tolerances.
    pub fn csv(&mut self, name: &str, body: &str) -> CliResult<()> {
        let s = format!(
            "# config_hash={}\n# tolerances={}\n{body}",
            self.hash,
            serde_json::to_string(&self.tolerances)?
        );
        self.put(name, s.as_bytes())
    }

    pub fn svg(&mut self, name: &str, svg: &str) -> CliResult<()> {
        let s = format!(
            "<!-- config_hash={} tolerances={} -->\n{svg}",
            self.hash,
            serde_json::to_string(&self.tolerances)?
        );
        self.put(name, s.as_bytes())
    }

    /// Container: magic, 64 hex chars of hash, u64 LE length of the tolerance
    /// JSON, the JSON, then the field payload.
    pub fn field(&mut self, name: &str, f: &PeriodicField) -> CliResult<()> {
        let tol = serde_json::to_vec(&self.tolerances)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(FIELD_MAGIC);
        buf.extend_from_slice(self.hash.as_bytes());
        buf.extend_from_slice(&(tol.len() as u64).to_le_bytes());
        buf.extend_from_slice(&tol);
        f.write_binary(&mut buf)?;
        self.put(name, &buf)
    }

    pub fn finish(mut self) -> CliResult<Vec<String>> {
        let files = self.files.clone();
        let manifest = json!({
            "command": self.command,
            "config_hash": self.hash,
            "tolerances": self.tolerances,
            "config": self.config,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "files": files,
        });
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        self.put("manifest.json", s.as_bytes())?;
        let mut out = std::io::stderr();
        let _ = writeln!(out, "wrote {} files to {}", self.files.len(), self.dir.display());
        Ok(self.files)
    }
}

/// Read back a field container, returning (hash, field).
#[cfg(test)]
pub fn read_field(bytes: &[u8]) -> CliResult<(String, PeriodicField)> {
    let bad = || CliError::Config("not a field container".into());
    if bytes.len() < 80 || &bytes[..8] != FIELD_MAGIC {
        return Err(bad());
    }
    let hash = String::from_utf8(bytes[8..72].to_vec()).map_err(|_| bad())?;
    let n = u64::from_le_bytes(bytes[72..80].try_into().expect("8 bytes")) as usize;
    let rest = bytes.get(80 + n..).ok_or_else(bad)?;
    let f = PeriodicField::read_binary(&mut &rest[..])?;
    Ok((hash, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("curlhom-out-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn every_file_carries_the_hash() {
        let dir = tmp("hash");
        let cfg = RunConfig::default();
        let mut o = Output::create(&dir, "test", &cfg).unwrap();
        o.json("a.json", &[1.0, 2.0]).unwrap();
        o.csv("b.csv", "x,y\n1,2\n").unwrap();
        o.svg("c.svg", "<svg/>").unwrap();
        let f = PeriodicField::from_fn(1, 4, |i, y| i[0] as f64 + y[1]).unwrap();
        o.field("d.bin", &f).unwrap();
        let files = o.finish().unwrap();
        assert_eq!(files.len(), 5);
        let h = cfg.hash();
        for name in ["a.json", "b.csv", "c.svg", "manifest.json"] {
            let s = fs::read_to_string(dir.join(name)).unwrap();
            assert!(s.contains(&h), "{name}");
            assert!(s.contains("identity_defect"), "{name}");
        }
        let (h2, back) = read_field(&fs::read(dir.join("d.bin")).unwrap()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(back.sub(&f).unwrap().max_abs(), 0.0);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_foreign_containers() {
        assert!(read_field(b"short").is_err());
        assert!(read_field(&[0u8; 100]).is_err());
    }
}
