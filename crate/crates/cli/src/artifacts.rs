//! Output directories: advisory lock, provenance header on every text
//! artifact, and a `provenance.toml` listing the hash of every file written.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clens::fsutil::write_bytes_atomic;
use clens::TOOL_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".clens.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Held for the duration of a command; removed on drop.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "{} is in use by another invocation (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                )
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Resolved configuration of one invocation; its hash goes into every
/// artifact header.
pub struct Provenance {
    pub command: String,
    pub config: toml::Table,
    /// Input role → sha256 of the input file.
    pub inputs: BTreeMap<String, String>,
    pub hash: String,
}

impl Provenance {
    pub fn new(command: &str, config: &impl Serialize, inputs: BTreeMap<String, String>) -> Self {
        let config = toml::Table::try_from(config).expect("resolved config serializes as a table");
        let mut canonical = toml::Table::new();
        canonical.insert("command".into(), command.into());
        canonical.insert("config".into(), toml::Value::Table(config.clone()));
        canonical.insert(
            "inputs".into(),
            toml::Value::Table(
                inputs
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone().into()))
                    .collect(),
            ),
        );
        let text = toml::to_string(&canonical).expect("table serializes");
        Self {
            command: command.to_owned(),
            config,
            inputs,
            hash: sha256_hex(text.as_bytes()),
        }
    }

    pub fn header(&self) -> String {
        format!("{TOOL_VERSION} config={}", &self.hash[..16])
    }
}

#[derive(Serialize)]
struct ProvenanceFile<'a> {
    tool: &'a str,
    command: &'a str,
    config_hash: &'a str,
    inputs: &'a BTreeMap<String, String>,
    config: &'a toml::Table,
    artifacts: &'a BTreeMap<String, String>,
}

/// Collects the artifacts of one command under `dir`.
pub struct Output<'p> {
    dir: PathBuf,
    prov: &'p Provenance,
    provenance_file: String,
    files: BTreeMap<String, String>,
}

fn header_line(rel: &str, header: &str) -> String {
    if rel.ends_with(".md") {
        format!("<!-- {header} -->\n")
    } else {
        format!("# {header}\n")
    }
}

fn is_text(rel: &str) -> bool {
    [".csv", ".toml", ".md"]
        .iter()
        .any(|ext| rel.ends_with(ext))
}

impl<'p> Output<'p> {
    /// `provenance_file` names the listing written by [`Output::finish`].
    pub fn new(
        dir: impl Into<PathBuf>,
        prov: &'p Provenance,
        provenance_file: &str,
    ) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            prov,
            provenance_file: provenance_file.to_owned(),
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Write a text artifact, prefixed with the provenance header.
    pub fn text(
        &mut self,
        rel: &str,
        fill: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<()> {
        let mut buf = header_line(rel, &self.prov.header()).into_bytes();
        fill(&mut buf)?;
        self.put(rel, buf)
    }

    fn put(&mut self, rel: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        write_bytes_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(rel.to_owned(), sha256_hex(&bytes));
        Ok(())
    }

    /// Register a file already written under `dir`; text files gain the
    /// provenance header.
    pub fn adopt(&mut self, rel: &str) -> Result<()> {
        let path = self.path(rel);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if is_text(rel) {
            let mut buf = header_line(rel, &self.prov.header()).into_bytes();
            buf.extend(bytes);
            self.put(rel, buf)
        } else {
            self.files.insert(rel.to_owned(), sha256_hex(&bytes));
            Ok(())
        }
    }

    /// Register a file that already carries the header.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let path = self.path(rel);
        self.files.insert(rel.to_owned(), file_sha256(&path)?);
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<String>> {
        let file = ProvenanceFile {
            tool: TOOL_VERSION,
            command: &self.prov.command,
            config_hash: &self.prov.hash,
            inputs: &self.prov.inputs,
            config: &self.prov.config,
            artifacts: &self.files,
        };
        let text = format!(
            "# {}\n{}",
            self.prov.header(),
            toml::to_string(&file).expect("provenance serializes")
        );
        let path = self.path(&self.provenance_file);
        write_bytes_atomic(&path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.files.into_keys().collect())
    }
}

/// Lines of a text artifact without `#` comment lines.
pub fn read_data_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("<!--"))
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = Lock::acquire(dir.path()).unwrap();
        assert!(Lock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(Lock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn hash_depends_on_config_and_inputs() {
        #[derive(Serialize)]
        struct C {
            bins: usize,
        }
        let a = Provenance::new("predict", &C { bins: 40 }, BTreeMap::new());
        let b = Provenance::new("predict", &C { bins: 40 }, BTreeMap::new());
        let c = Provenance::new("predict", &C { bins: 7 }, BTreeMap::new());
        let d = Provenance::new(
            "predict",
            &C { bins: 40 },
            BTreeMap::from([("m".into(), "x".into())]),
        );
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_ne!(a.hash, d.hash);
        assert!(a.header().starts_with("clens "));
    }

    #[test]
    fn text_artifacts_carry_header() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new("x", &toml::Table::new(), BTreeMap::new());
        let mut out = Output::new(dir.path(), &prov, "provenance.toml").unwrap();
        out.text("a.csv", |w| writeln!(w, "k,v")).unwrap();
        fs::write(dir.path().join("b.bin"), [1u8, 2]).unwrap();
        out.adopt("b.bin").unwrap();
        let files = out.finish().unwrap();
        assert_eq!(files, vec!["a.csv", "b.bin"]);
        let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert!(a.starts_with(&format!("# {}\n", prov.header())));
        assert_eq!(
            read_data_lines(&dir.path().join("a.csv")).unwrap(),
            vec!["k,v"]
        );
        let p = fs::read_to_string(dir.path().join("provenance.toml")).unwrap();
        assert!(p.contains(&prov.hash));
    }
}
