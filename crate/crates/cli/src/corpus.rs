//! Corpus loading: every PNG/PPM/PNM in a directory, sorted by file name,
//! or a seeded synthetic set.

use std::path::Path;

use recompress_core::pixel::{load_image, PlanarImage};
use recompress_core::synth;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct CorpusImage {
    pub id: String,
    pub image: PlanarImage,
}

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn load_dir(dir: &Path) -> Result<Vec<CorpusImage>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Input {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(CorpusImage {
                id,
                image: load_image(&p)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub gray: bool,
}

/// Image `i` uses seed `seed + i`, so a prefix of a larger corpus is the
/// same images.
pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<CorpusImage>, CliError> {
    (0..spec.count)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let image = if spec.gray {
                synth::gray_image(spec.width, spec.height, s)?
            } else {
                synth::color_image(spec.width, spec.height, s)?
            };
            Ok(CorpusImage {
                id: format!("synth_{i:03}"),
                image,
            })
        })
        .collect()
}

/// Parse `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("zero dimension in {s:?}"));
    }
    Ok((w, h))
}
