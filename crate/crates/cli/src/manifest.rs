//! Text manifests written next to every artifact. Each lists the hashes of
//! the files a command read and wrote, so later stages can detect stale or
//! edited inputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path).with_context(|| format!("hashing {}", path.display()))?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// Free-form parameters (seed, rho, attenuation map, ...).
    pub params: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest { command: command.into(), ..Default::default() }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("command = {}\n", self.command);
        for (prefix, map) in [("param", &self.params), ("input", &self.inputs), ("output", &self.outputs)] {
            for (k, v) in map {
                out.push_str(&format!("{prefix}.{k} = {v}\n"));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").with_context(|| format!("malformed manifest line {line:?}"))?;
            let v = v.to_string();
            if k == "command" {
                m.command = v;
            } else if let Some(name) = k.strip_prefix("param.") {
                m.params.insert(name.into(), v);
            } else if let Some(name) = k.strip_prefix("input.") {
                m.inputs.insert(name.into(), v);
            } else if let Some(name) = k.strip_prefix("output.") {
                m.outputs.insert(name.into(), v);
            } else {
                bail!("unknown manifest key {k:?}");
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Manifest::parse(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Finds the manifest in `dir` that produced `name` and checks the file
/// still hashes to the recorded value. Returns that hash.
pub fn verify_upstream(dir: &Path, name: &str) -> Result<String> {
    let actual = sha256_file(&dir.join(name))?;
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("manifest") {
            continue;
        }
        let m = Manifest::read(&path)?;
        if let Some(recorded) = m.outputs.get(name) {
            if *recorded != actual {
                bail!("{name} does not match the hash recorded in {} (recorded {recorded}, found {actual}); rerun the upstream command", path.display());
            }
            return Ok(actual);
        }
    }
    bail!("no manifest in {} records {name}; run the command that produces it first", dir.display())
}
