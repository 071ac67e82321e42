//! Output-directory plumbing shared by the commands: locking, input
//! fingerprints and the run manifest.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use ssnmt::Error;

pub const LOCK_FILE: &str = ".ssnmt.lock";
pub const RUN_MANIFEST: &str = "run-manifest.json";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Exclusive ownership of an output directory for the life of the value.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(dir: &Path) -> Result<Lock, Error> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is in use by another invocation (remove {} if that is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn hash_into(h: &mut Sha256, path: &Path, rel: &str) -> Result<(), Error> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if name == LOCK_FILE || name == RUN_MANIFEST {
                continue;
            }
            hash_into(h, &p, &format!("{rel}/{name}"))?;
        }
    } else {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(())
}

/// SHA-256 of a file, or of every file under a directory.
pub fn fingerprint(path: &Path) -> Result<String, Error> {
    if !path.exists() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let mut h = Sha256::new();
    hash_into(&mut h, path, ".")?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct RunManifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a A,
    inputs: Vec<(String, String)>,
}

/// Writes the full configuration and input fingerprints to `path`.
pub fn write_manifest<A: Serialize>(path: &Path, command: &str, config: &A, inputs: &[&Path]) -> Result<(), Error> {
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), fingerprint(p)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let m = RunManifest {
        tool: "ssnmt",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        inputs,
    };
    let body = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(path, body + "\n").map_err(|e| io_err(path, e))
}
