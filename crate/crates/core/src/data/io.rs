//! Reading and writing image datasets on disk.
//!
//! Two layouts are supported: one sub-directory per class holding PNG/JPEG
//! files, or a two-column CSV manifest (`path,class_name`, with header) whose
//! paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::dataset::{Dataset, Layout, Sample};
use super::image::Image;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_rgb8(h as usize, w as usize, rgb.as_raw()))
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .ok_or_else(|| Error::shape("image buffer does not match its dimensions"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Loads a dataset. Class order is sorted by name; samples are ordered by
/// class, then by relative path.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Dataset> {
    load_dataset_with(root, layout, None)
}

/// Like [`load_dataset`], resizing every image to `size × size` when given.
pub fn load_dataset_with(root: &Path, layout: Layout, size: Option<usize>) -> Result<Dataset> {
    if !root.exists() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    let entries = match layout {
        Layout::FolderPerClass => scan_folders(root)?,
        Layout::ManifestCsv => scan_manifest(root)?,
    };
    let base_dir = match layout {
        Layout::FolderPerClass => root.to_path_buf(),
        Layout::ManifestCsv => root.parent().map(Path::to_path_buf).unwrap_or_default(),
    };

    let mut class_names: Vec<String> = entries.iter().map(|(_, c)| c.clone()).collect();
    class_names.sort();
    class_names.dedup();

    let mut keyed: Vec<(usize, String)> = entries
        .into_iter()
        .map(|(rel, class)| {
            let id = class_names.binary_search(&class).expect("class collected above");
            (id, rel)
        })
        .collect();
    keyed.sort();

    let mut samples = Vec::with_capacity(keyed.len());
    for (class_id, rel) in keyed {
        let path = base_dir.join(&rel);
        let mut img = read_image(&path)?;
        if let Some(s) = size {
            img = img.resize(s, s);
        }
        samples.push(Sample {
            image: Arc::new(img),
            class_id,
            source: rel,
        });
    }
    let id = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::new(id, class_names, samples)
}

fn scan_folders(root: &Path) -> Result<Vec<(String, String)>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let class = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<String> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        files.sort();
        out.extend(files.into_iter().map(|f| (format!("{class}/{f}"), class.clone())));
    }
    Ok(out)
}

fn scan_manifest(manifest: &Path) -> Result<Vec<(String, String)>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| Error::Manifest {
        path: manifest.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest {
            path: manifest.to_path_buf(),
            reason: e.to_string(),
        })?;
        if rec.len() != 2 {
            return Err(Error::Manifest {
                path: manifest.to_path_buf(),
                reason: format!("row {} has {} columns, expected 2", row + 1, rec.len()),
            });
        }
        let rel = rec[0].trim().to_string();
        let class = rec[1].trim().to_string();
        let full = base.join(&rel);
        if !full.is_file() {
            return Err(Error::ManifestMissingFile { row: row + 1, path: full });
        }
        out.push((rel, class));
    }
    Ok(out)
}

/// Writes a dataset in the folder-per-class layout as PNG files named
/// `{index:05}.png` within each class directory.
pub fn write_dataset_folder(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut per_class = vec![0usize; dataset.n_classes()];
    for s in &dataset.samples {
        let dir = root.join(&dataset.class_names[s.class_id]);
        fs::create_dir_all(&dir)?;
        let idx = per_class[s.class_id];
        per_class[s.class_id] += 1;
        write_png(&s.image, &dir.join(format!("{idx:05}.png")))?;
    }
    Ok(())
}
