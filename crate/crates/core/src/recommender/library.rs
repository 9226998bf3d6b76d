//! Texture library: clusters of segment descriptors, each owning a
//! histogram of the normalized ab values seen under it.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gabor::{GaborBank, DESCRIPTOR_LEN};
use super::segment::{segment_gray, SegmentParams};
use super::GrayImage;
use crate::colorspace::{normalize, rgb_to_lab, RgbImage};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest, KMeansConfig};

pub const LIBRARY_VERSION: u32 = 1;
pub const LIBRARY_CLUSTERS: usize = 120;
/// Bins per ab axis.
pub const HIST_BINS: usize = 10;
pub const HIST_LEN: usize = HIST_BINS * HIST_BINS;

/// Bin of a normalized ab pair: `a_bin * HIST_BINS + b_bin`.
pub fn ab_bin(ab: [f64; 2]) -> usize {
    let axis = |v: f64| ((v * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1);
    axis(ab[0]) * HIST_BINS + axis(ab[1])
}

pub fn bin_center(bin: usize) -> [f64; 2] {
    let w = 1.0 / HIST_BINS as f64;
    [((bin / HIST_BINS) as f64 + 0.5) * w, ((bin % HIST_BINS) as f64 + 0.5) * w]
}

/// Bins ordered by descending count, ties by ascending index.
pub fn ranked_bins(hist: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..hist.len()).collect();
    order.sort_by(|&a, &b| hist[b].cmp(&hist[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub clusters: usize,
    pub segment: SegmentParams,
    pub bank: GaborBank,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig { clusters: LIBRARY_CLUSTERS, segment: SegmentParams::default(), bank: GaborBank::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub version: u32,
    pub hist_bins: usize,
    pub config: LibraryConfig,
    pub seed: u64,
    pub images: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureLibrary {
    pub manifest: LibraryManifest,
    pub centers: Vec<Vec<f64>>,
    pub histograms: Vec<Vec<u64>>,
}

impl TextureLibrary {
    pub fn total_mass(&self) -> u64 {
        self.histograms.iter().flatten().sum()
    }

    /// Closest center by Euclidean distance, ties to the lowest index.
    pub fn nearest_cluster(&self, descriptor: &[f64]) -> usize {
        let flat: Vec<f64> = self.centers.iter().flatten().copied().collect();
        nearest(descriptor, &flat, DESCRIPTOR_LEN).0
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let lib: TextureLibrary = serde_json::from_slice(bytes)?;
        lib.validate()?;
        Ok(lib)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.version != LIBRARY_VERSION || m.hist_bins != HIST_BINS {
            return Err(Error::Parse(format!("unsupported library version {} / {} bins", m.version, m.hist_bins)));
        }
        if self.centers.is_empty()
            || self.centers.len() != self.histograms.len()
            || self.centers.iter().any(|c| c.len() != DESCRIPTOR_LEN)
            || self.histograms.iter().any(|h| h.len() != HIST_LEN)
        {
            return Err(Error::Parse("library centers and histograms are inconsistent".into()));
        }
        m.config.bank.validate()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Builds a library from in-memory color images.
pub fn build_library_from_images(images: &[RgbImage], cfg: &LibraryConfig, seed: u64) -> Result<TextureLibrary> {
    if cfg.clusters == 0 {
        return Err(Error::InvalidArgument("library needs at least one cluster".into()));
    }
    let mut descriptors = Vec::new();
    let mut seg_hists: Vec<Vec<u64>> = Vec::new();
    for img in images {
        let lab = normalize(&rgb_to_lab(img));
        let gray = GrayImage::from_lab(&rgb_to_lab(img));
        let segments = segment_gray(&gray, &cfg.segment)?;
        for (seg, desc) in segments.iter().zip(cfg.bank.describe(&gray, &segments)?) {
            let mut hist = vec![0u64; HIST_LEN];
            for &p in &seg.pixels {
                hist[ab_bin(lab.ab()[p])] += 1;
            }
            descriptors.extend(desc.values);
            seg_hists.push(hist);
        }
    }
    if seg_hists.len() < cfg.clusters {
        return Err(Error::TooFewSegments { have: seg_hists.len(), need: cfg.clusters });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmeans(&descriptors, DESCRIPTOR_LEN, &KMeansConfig::new(cfg.clusters), &mut rng)?;
    let mut histograms = vec![vec![0u64; HIST_LEN]; km.num_centers()];
    for (hist, &c) in seg_hists.iter().zip(&km.assignments) {
        for (acc, &n) in histograms[c].iter_mut().zip(hist) {
            *acc += n;
        }
    }
    if km.num_centers() < cfg.clusters {
        log::warn!("only {} distinct texture descriptors; library has fewer than {} clusters", km.num_centers(), cfg.clusters);
    }
    Ok(TextureLibrary {
        manifest: LibraryManifest {
            version: LIBRARY_VERSION,
            hist_bins: HIST_BINS,
            config: cfg.clone(),
            seed,
            images: images.len(),
            segments: seg_hists.len(),
        },
        centers: (0..km.num_centers()).map(|i| km.center(i).to_vec()).collect(),
        histograms,
    })
}

/// Builds a library from every readable image in `corpus` (sorted by file
/// name; unreadable files are skipped with a warning).
pub fn build_library(corpus: impl AsRef<Path>, cfg: &LibraryConfig, seed: u64) -> Result<TextureLibrary> {
    let images: Vec<RgbImage> = crate::trainer::load_image_dir(corpus)?.into_iter().map(|(_, i)| i).collect();
    build_library_from_images(&images, cfg, seed)
}
