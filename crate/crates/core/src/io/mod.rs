//! Files: depth/RGB/label images, dataset manifests, run configs and model
//! checkpoints. Every writer goes through [`atomic_write`], so a failed run
//! never leaves a truncated file under the final name.

pub mod image;
pub mod manifest;

pub use image::{
    decode_pfm, decode_png16, encode_pfm, encode_png16, read_depth, read_relative_depth, read_rgb, read_uncertainty, write_depth,
    write_rgb, write_rgb8, write_uncertainty, DepthFormat,
};
pub use manifest::{DatasetManifest, RunConfig, SampleEntry, MANIFEST_VERSION};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Writes `bytes` to a hidden sibling, syncs it, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = temp_name(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, to_toml(value)?.as_bytes())
}

/// `<path>.toml`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Parameter container at `path`, architecture config at [`sidecar_path`].
pub fn save_checkpoint<T: Serialize>(path: &Path, store: &ParamStore, config: &T) -> Result<()> {
    write_toml(&sidecar_path(path), config)?;
    atomic_write(path, &store.to_bytes())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<(ParamStore, T)> {
    let store = ParamStore::from_bytes(&read_bytes(path)?, path)?;
    let cfg = read_toml(&sidecar_path(path))?;
    Ok((store, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.bin");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        // target is an existing directory: rename fails
        let p = dir.path().join("d");
        fs::create_dir(p.join("inner").parent().unwrap()).unwrap();
        fs::create_dir(p.join("inner")).unwrap();
        let err = atomic_write(&p, b"x").unwrap_err();
        assert!(err.to_string().contains("d"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn sidecar_appends_extension() {
        assert_eq!(sidecar_path(Path::new("a/m.bin")), PathBuf::from("a/m.bin.toml"));
    }
}
