//! Dataset directories: `manifest.json`, `shapes/<id>.json` and
//! `clouds/<id>.xyz`.

use std::fs;
use std::path::Path;

use lindeform_core::datagen::{Dataset, Manifest, Params, ProcShape};
use lindeform_core::handles::build_handle_space;

use crate::formats::{from_json, shape_file, ShapeFile};
use crate::xyz::{read_xyz, write_xyz};
use crate::{read_file, write_atomic, Error, Result};

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::format(format!("invalid shape id {id:?}")))
    }
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["shapes", "clouds"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (entry, shape) in data.manifest.shapes.iter().zip(&data.shapes) {
        check_id(&entry.id)?;
        let file = shape_file(&entry.id, entry.split, shape);
        write_atomic(&dir.join("shapes").join(format!("{}.json", entry.id)), &serde_json::to_vec_pretty(&file)?)?;
        write_xyz(&dir.join("clouds").join(format!("{}.xyz", entry.id)), &shape.cloud)?;
    }
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&data.manifest)?)
}

/// Loads a dataset and rebuilds every handle space from the stored part
/// boxes and points.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = from_json(&read_file(&dir.join("manifest.json"))?)
        .map_err(|e| Error::format(format!("{}: {e}", dir.join("manifest.json").display())))?;
    if manifest.count != manifest.shapes.len() {
        return Err(Error::format(format!(
            "manifest count {} does not match {} entries",
            manifest.count,
            manifest.shapes.len()
        )));
    }
    let mut shapes = Vec::with_capacity(manifest.shapes.len());
    for entry in &manifest.shapes {
        check_id(&entry.id)?;
        let path = dir.join("shapes").join(format!("{}.json", entry.id));
        let file: ShapeFile =
            from_json(&read_file(&path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let params = Params {
            family: file.family,
            values: file.params,
            with_arms: file.with_arms,
        };
        let bad = |what: &str| Error::format(format!("{}: {what} disagrees with the manifest", path.display()));
        if file.id != entry.id {
            return Err(bad("id"));
        }
        if file.split != entry.split {
            return Err(bad("split"));
        }
        if params != entry.params || params.family != manifest.family {
            return Err(bad("params"));
        }
        params.validate()?;
        let cloud = read_xyz(&dir.join("clouds").join(format!("{}.xyz", entry.id)))?;
        if cloud.len() != manifest.n {
            return Err(Error::format(format!("{}: expected {} points, found {}", entry.id, manifest.n, cloud.len())));
        }
        let handle_space = build_handle_space(&file.parts, &cloud)?;
        shapes.push(ProcShape {
            params,
            parts: file.parts,
            cloud,
            handle_space,
        });
    }
    Ok(Dataset { shapes, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lindeform_core::datagen::{gen_dataset, Family};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_dataset(Family::Chair, 6, 48, 2).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, data.manifest);
        assert_eq!(back.shapes, data.shapes);
    }

    #[test]
    fn detects_inconsistency() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_dataset(Family::Table, 3, 32, 1).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let id = &data.manifest.shapes[1].id;
        fs::write(dir.path().join("clouds").join(format!("{id}.xyz")), "0 0 0\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));
        fs::remove_file(dir.path().join("manifest.json")).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 2);
    }
}
