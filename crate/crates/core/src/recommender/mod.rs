//! Color theme suggestions for a grayscale image from a library that maps
//! segment texture to observed ab distributions.

pub mod gabor;
pub mod library;
pub mod segment;

use serde::{Deserialize, Serialize};

use crate::colorspace::{rgb_to_lab, LabImage, RgbImage, L_MAX};
use crate::error::{Error, Result};
use crate::hints::{Theme, THEME_MIN, THEME_SLOTS};

pub use gabor::{gabor_descriptor, GaborBank, TextureDescriptor};
pub use library::{ab_bin, bin_center, build_library, build_library_from_images, LibraryConfig, TextureLibrary};
pub use segment::{segment_gray, Segment, SegmentParams};

/// A luminance plane with values in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "gray plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=L_MAX).contains(*v)) {
            return Err(Error::InvalidArgument(format!("luminance {v} outside [0, 100]")));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn from_lab(image: &LabImage) -> Self {
        GrayImage { width: image.width(), height: image.height(), data: image.l().to_vec() }
    }

    pub fn from_rgb(image: &RgbImage) -> Self {
        Self::from_lab(&rgb_to_lab(image))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Where one theme color came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorSource {
    pub segment_area: usize,
    pub cluster: usize,
    pub bin: usize,
    /// Histogram count of the chosen bin.
    pub peak_mass: u64,
    /// True when the color is a lower-ranked peak of the largest segment,
    /// used because the image had too few segments.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub theme: Theme,
    pub sources: Vec<ColorSource>,
}

impl Recommendation {
    pub fn padded(&self) -> bool {
        self.sources.iter().any(|s| s.padded)
    }
}

fn check_k(k: usize) -> Result<()> {
    if (THEME_MIN..=THEME_SLOTS).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("k = {k} must be in {THEME_MIN}..={THEME_SLOTS}")))
    }
}

fn theme_for(
    image: &GrayImage,
    library: &TextureLibrary,
    segments: &[Segment],
    k: usize,
) -> Result<Recommendation> {
    let used = &segments[..k.min(segments.len())];
    let descriptors = library.manifest.config.bank.describe(image, used)?;
    let mut colors = Vec::with_capacity(k);
    let mut sources = Vec::with_capacity(k);
    for (seg, desc) in used.iter().zip(&descriptors) {
        let cluster = library.nearest_cluster(&desc.values);
        let hist = &library.histograms[cluster];
        let bin = library::ranked_bins(hist)[0];
        colors.push(bin_center(bin));
        sources.push(ColorSource { segment_area: seg.area(), cluster, bin, peak_mass: hist[bin], padded: false });
    }
    if colors.len() < k {
        let first = sources[0].clone();
        let hist = &library.histograms[first.cluster];
        for &bin in library::ranked_bins(hist).iter().skip(1).take(k - colors.len()) {
            colors.push(bin_center(bin));
            sources.push(ColorSource { bin, peak_mass: hist[bin], padded: true, ..first.clone() });
        }
    }
    Ok(Recommendation { theme: Theme::new(colors)?, sources })
}

/// Suggests a `k`-color theme: the peak histogram bin of each of the `k`
/// largest segments' nearest texture cluster, ordered by segment area.
pub fn recommend_theme(image: &GrayImage, library: &TextureLibrary, k: usize) -> Result<Recommendation> {
    check_k(k)?;
    let segments = segment_gray(image, &library.manifest.config.segment)?;
    theme_for(image, library, &segments, k)
}

/// The recommendation followed by up to `alternates` more, each built from
/// the segment list shifted one further down by area.
pub fn recommend_themes(
    image: &GrayImage,
    library: &TextureLibrary,
    k: usize,
    alternates: usize,
) -> Result<Vec<Recommendation>> {
    check_k(k)?;
    let segments = segment_gray(image, &library.manifest.config.segment)?;
    let mut out = vec![theme_for(image, library, &segments, k)?];
    for shift in 1..=alternates {
        if shift + k > segments.len() {
            break;
        }
        out.push(theme_for(image, library, &segments[shift..], k)?);
    }
    Ok(out)
}
