//! Point-cloud, mesh, checkpoint and report files.
//!
//! Every writer goes through [`write_atomic`], so readers never observe a
//! partially written file.

mod checkpoint;
mod ply;
mod xyz;

pub use checkpoint::{
    read_profile, read_report, write_profile, write_report, Checkpoint, MetricReport, ModelArch,
    CHECKPOINT_FORMAT_VERSION,
};
pub use ply::{read_ply, read_ply_mesh, write_ply};
pub use xyz::{read_xyz, write_xyz};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::TriangleMesh;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads `.ply` as PLY and anything else as XYZ.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if extension(path) == "ply" {
        read_ply(path)
    } else {
        read_xyz(path)
    }
}

/// Writes `.ply` as PLY and anything else as XYZ.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if extension(path) == "ply" {
        write_ply(path, cloud)
    } else {
        write_xyz(path, cloud)
    }
}

/// Reads a triangle mesh; only PLY carries faces.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    if extension(path) != "ply" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: meshes must be PLY files",
            path.display()
        )));
    }
    read_ply_mesh(path)
}
