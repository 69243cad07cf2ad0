//! Directory-based dataset: `manifest.json` plus one raw array file per
//! image, k-space stack, mask and coil stack.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rawarray::{read_array, write_array, RawArray};
use crate::error::{Error, Result};
use crate::mri::{AcquisitionData, AcquisitionMeta, CoilSensitivities, ComplexImage, SamplingMask};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Ground truth, absent for externally acquired data.
    pub image: Option<String>,
    pub kspace: String,
    pub mask: String,
    pub coils: String,
    pub metadata: AcquisitionMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: Option<ComplexImage>,
    pub acquisition: AcquisitionData,
    pub meta: AcquisitionMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub entries: Vec<DatasetEntry>,
}

fn check_ids(entries: impl Iterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in entries {
        let id = id.as_ref();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(Error::invalid(format!("invalid entry id {id:?}")));
        }
        if !seen.insert(id.to_owned()) {
            return Err(Error::invalid(format!("duplicate entry id {id:?}")));
        }
    }
    Ok(())
}

/// Writes every entry and the manifest into `dir` (created if missing).
pub fn write_dataset(dir: &Path, entries: &[DatasetEntry]) -> Result<DatasetManifest> {
    check_ids(entries.iter().map(|e| &e.id))?;
    for e in entries {
        e.acquisition.validate()?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest {
        version: FORMAT_VERSION,
        entries: Vec::with_capacity(entries.len()),
    };
    for e in entries {
        let name = |what: &str| format!("{}_{what}.arr", e.id);
        let acq = &e.acquisition;
        let image = match &e.image {
            Some(img) => {
                write_array(&dir.join(name("image")), &RawArray::from_image(img))?;
                Some(name("image"))
            }
            None => None,
        };
        write_array(
            &dir.join(name("kspace")),
            &RawArray::from_images(&acq.kspace)?,
        )?;
        write_array(
            &dir.join(name("mask")),
            &RawArray::real(vec![acq.mask.height, acq.mask.width], acq.mask.as_values())?,
        )?;
        write_array(
            &dir.join(name("coils")),
            &RawArray::from_images(&acq.coils.maps)?,
        )?;
        manifest.entries.push(ManifestEntry {
            id: e.id.clone(),
            image,
            kspace: name("kspace"),
            mask: name("mask"),
            coils: name("coils"),
            metadata: e.meta,
        });
    }
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&path, "manifest not found"),
        _ => Error::io(&path, e),
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    check_ids(manifest.entries.iter().map(|e| &e.id))?;
    Ok(manifest)
}

fn read_entry(dir: &Path, entry: &ManifestEntry) -> Result<DatasetEntry> {
    let load = |file: &str| read_array(&dir.join(file));
    let kspace_arr = load(&entry.kspace)?;
    let mask_arr = load(&entry.mask)?;
    let coils_arr = load(&entry.coils)?;
    let image = entry.image.as_deref().map(load).transpose()?;

    let (h, w) = match mask_arr.dims.as_slice() {
        &[h, w] => (h, w),
        other => {
            return Err(Error::invalid(format!(
                "{}: mask dims {other:?} are not rank 2",
                entry.id
            )))
        }
    };
    let shape_err = |what: &str, dims: &[usize]| {
        Error::invalid(format!(
            "{}: {what} dims {dims:?} do not match mask {h}x{w}",
            entry.id
        ))
    };
    let coil_maps = coils_arr.to_images()?;
    if coils_arr.dims[1..] != [h, w] {
        return Err(shape_err("coils", &coils_arr.dims));
    }
    if kspace_arr.dims.len() != 3
        || kspace_arr.dims[1..] != [h, w]
        || kspace_arr.dims[0] != coil_maps.len()
    {
        return Err(shape_err("kspace", &kspace_arr.dims));
    }
    let mask = SamplingMask::from_values(
        h,
        w,
        &mask_arr.real_values()?,
        entry.metadata.acceleration,
        entry.metadata.acs_lines,
    )?;
    let mut kspace = kspace_arr.to_images()?;
    for k in kspace.iter_mut() {
        crate::mri::apply_mask(k, &mask);
    }
    let image = match image {
        Some(arr) => {
            if arr.dims != [h, w] {
                return Err(shape_err("image", &arr.dims));
            }
            Some(arr.to_image()?)
        }
        None => None,
    };
    let coils = CoilSensitivities::new(coil_maps)?;
    Ok(DatasetEntry {
        id: entry.id.clone(),
        image,
        acquisition: AcquisitionData::new(kspace, mask, coils, entry.metadata.noise_sigma)?,
        meta: entry.metadata,
    })
}

/// Reads and validates every entry. K-space values at unsampled locations
/// are zeroed on ingestion, so fully sampled external data can be paired
/// with any mask.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let entries = manifest
        .entries
        .iter()
        .map(|e| read_entry(dir, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, entries })
}
