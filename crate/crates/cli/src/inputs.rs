//! Reading landmark and mask files named on the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use facesynth_core::dataset::formats::{decode_landmarks, read_gray_png};
use facesynth_core::dataset::MANIFEST_FILE;
use facesynth_core::metrics::Point;
use facesynth_core::Landmark;

use crate::error::{CliError, CliResult};

/// Files under `root` (or `root` itself) with extension `ext`, keyed by
/// their path relative to `root` with `/` separators.
pub fn collect_files(root: &Path, ext: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    if root.is_file() {
        let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(BTreeMap::from([(name, root.to_path_buf())]));
    }
    if !root.is_dir() {
        return Err(CliError::validation(format!("{} does not exist", root.display())));
    }
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                let rel = path.strip_prefix(root).expect("walked below root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, path);
            }
        }
    }
    Ok(out)
}

/// Like [`collect_files`], but inside a generated dataset (a directory with
/// a manifest) only the files of `layer` are kept.
pub fn collect_layer_files(root: &Path, ext: &str, layer: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut files = collect_files(root, ext)?;
    if root.join(MANIFEST_FILE).is_file() {
        files.retain(|k, _| k == layer || k.ends_with(&format!("/{layer}")));
    }
    Ok(files)
}

/// Pairs files of `pred` and `gt` by relative path. Every ground-truth file
/// needs a prediction; extra predictions are an error too.
pub fn pair_files(pred: &Path, gt: &Path, ext: &str, layer: &str) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let (p, g) = (collect_layer_files(pred, ext, layer)?, collect_layer_files(gt, ext, layer)?);
    if g.is_empty() {
        return Err(CliError::validation(format!("no .{ext} files under {}", gt.display())));
    }
    // single files pair with each other whatever their names
    if pred.is_file() && gt.is_file() {
        return Ok(vec![(g.keys().next().unwrap().clone(), pred.to_path_buf(), gt.to_path_buf())]);
    }
    let missing: Vec<&String> = g.keys().filter(|k| !p.contains_key(*k)).collect();
    if let Some(first) = missing.first() {
        return Err(CliError::validation(format!("{} ground-truth files have no prediction, first: {first}", missing.len())));
    }
    if let Some(extra) = p.keys().find(|k| !g.contains_key(*k)) {
        return Err(CliError::validation(format!("prediction {extra} has no ground truth")));
    }
    Ok(g.into_iter().map(|(k, gp)| (k.clone(), p[&k].clone(), gp)).collect())
}

pub fn read_landmarks(path: &Path) -> CliResult<Vec<Landmark>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(decode_landmarks(&text, path)?)
}

pub fn read_points(path: &Path) -> CliResult<Vec<Point>> {
    Ok(read_landmarks(path)?.iter().map(|l| [l.x, l.y]).collect())
}

pub fn read_mask(path: &Path) -> CliResult<Vec<u8>> {
    Ok(read_gray_png(path)?.2)
}
