//! User-input encodings and training targets: color themes, K-color maps,
//! sparse local hints and the four conditioning combinations.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{self, LabImage};
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};

pub const THEME_MIN: usize = 3;
/// Number of theme slots fed to the network; shorter themes are zero padded.
pub const THEME_SLOTS: usize = 7;
pub const TRAIN_HINTS_MIN: usize = 1;
pub const TRAIN_HINTS_MAX: usize = 20;

/// An `H x W` plane of normalised ab pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaMap {
    width: usize,
    height: usize,
    data: Vec<[f64; 2]>,
}

impl ChromaMap {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != data.len() {
            return Err(Error::InvalidArgument(format!(
                "chroma map {width}x{height} with {} pixels",
                data.len()
            )));
        }
        if let Some(v) = data.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("chroma value {v} outside [0, 1]")));
        }
        Ok(ChromaMap { width, height, data })
    }

    pub fn filled(width: usize, height: usize, ab: [f64; 2]) -> Result<Self> {
        Self::new(width, height, vec![ab; width * height])
    }

    /// Normalised ab planes of a Lab image.
    pub fn from_lab(img: &LabImage) -> ChromaMap {
        let data = img.ab().iter().map(|ab| ab.map(colorspace::normalize_ab)).collect();
        ChromaMap { width: img.width(), height: img.height(), data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }

    /// Interleaved `(a, b)` values, row-major.
    pub fn flat(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }
}

/// 3 to 7 normalised ab colors, most representative first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Theme {
    colors: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for Theme {
    type Error = Error;

    fn try_from(colors: Vec<[f64; 2]>) -> Result<Self> {
        Theme::new(colors)
    }
}

impl From<Theme> for Vec<[f64; 2]> {
    fn from(theme: Theme) -> Self {
        theme.colors
    }
}

impl Theme {
    pub fn new(colors: Vec<[f64; 2]>) -> Result<Self> {
        if !(THEME_MIN..=THEME_SLOTS).contains(&colors.len()) {
            return Err(Error::InvalidArgument(format!(
                "a theme needs {THEME_MIN} to {THEME_SLOTS} colors, got {}",
                colors.len()
            )));
        }
        if let Some(v) = colors.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("theme component {v} outside [0, 1]")));
        }
        Ok(Theme { colors })
    }

    pub fn from_srgb(colors: &[[u8; 3]]) -> Result<Self> {
        Theme::new(colors.iter().map(|&c| colorspace::srgb_to_normalized_ab(c)).collect())
    }

    pub fn colors(&self) -> &[[f64; 2]] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// One line per color, `a b` in normalised units with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for [a, b] in &self.colors {
            writeln!(out, "{a:.2} {b:.2}").expect("write to string");
        }
        out
    }

    /// Parses [`Theme::to_text`] output. Lines may also hold a `#rrggbb`
    /// sRGB color; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                colors.push(colorspace::srgb_to_normalized_ab(colorspace::parse_hex_color(line)?));
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse(format!("theme line {}: `{s}` is not a number", no + 1)))
            };
            match fields[..] {
                [a, b] => colors.push([parse(a)?, parse(b)?]),
                _ => return Err(Error::Parse(format!("theme line {}: expected `a b`, got `{line}`", no + 1))),
            }
        }
        Theme::new(colors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThemeExtraction {
    pub theme: Theme,
    /// Pixel count of each theme color's cluster.
    pub populations: Vec<usize>,
    /// Set when the image had fewer distinct colors than requested and the
    /// theme was padded with copies of its most populous color.
    pub degenerate: bool,
}

/// K-means palette of an ab map, ordered by descending cluster population.
pub fn extract_theme(ab: &ChromaMap, k: usize, seed: u64) -> Result<ThemeExtraction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    extract_theme_with(ab, k, &mut rng)
}

pub fn extract_theme_with<R: Rng + ?Sized>(ab: &ChromaMap, k: usize, rng: &mut R) -> Result<ThemeExtraction> {
    if !(THEME_MIN..=THEME_SLOTS).contains(&k) {
        return Err(Error::InvalidArgument(format!("theme size {k} outside [{THEME_MIN}, {THEME_SLOTS}]")));
    }
    let km = kmeans::kmeans(&ab.flat(), 2, &KMeansConfig::new(k), rng)?;
    let mut order: Vec<usize> = (0..km.num_centers()).collect();
    order.sort_by(|&a, &b| km.counts[b].cmp(&km.counts[a]));

    let mut colors: Vec<[f64; 2]> = order
        .iter()
        .map(|&i| {
            let c = km.center(i);
            [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0)]
        })
        .collect();
    let mut populations: Vec<usize> = order.iter().map(|&i| km.counts[i]).collect();
    let degenerate = colors.len() < k;
    while colors.len() < k {
        colors.push(colors[0]);
        populations.push(0);
    }
    Ok(ThemeExtraction { theme: Theme::new(colors)?, populations, degenerate })
}

/// Repaints every pixel with its nearest theme color (Euclidean in
/// normalised ab, ties to the lowest theme index).
pub fn decode_kcolor_map(ab: &ChromaMap, theme: &Theme) -> ChromaMap {
    let centers: Vec<f64> = theme.colors.iter().flatten().copied().collect();
    let data = ab.data.iter().map(|p| theme.colors[kmeans::nearest(p, &centers, 2).0]).collect();
    ChromaMap { width: ab.width, height: ab.height, data }
}

/// Theme slots padded to [`THEME_SLOTS`] with a prefix mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalInput {
    pub colors: [[f64; 2]; THEME_SLOTS],
    pub mask: [f64; THEME_SLOTS],
}

impl GlobalInput {
    pub fn none() -> Self {
        GlobalInput { colors: [[0.0; 2]; THEME_SLOTS], mask: [0.0; THEME_SLOTS] }
    }

    pub fn is_empty(&self) -> bool {
        self.mask.iter().all(|&m| m == 0.0)
    }

    pub fn live_slots(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }

    /// `(a, b, mask)` per slot, the layout the global branch consumes.
    pub fn flatten(&self) -> Vec<f64> {
        self.colors.iter().zip(&self.mask).flat_map(|(&[a, b], &m)| [a, b, m]).collect()
    }
}

pub fn build_global_input(theme: Option<&Theme>) -> GlobalInput {
    let mut g = GlobalInput::none();
    if let Some(theme) = theme {
        for (i, &c) in theme.colors.iter().enumerate() {
            g.colors[i] = c;
            g.mask[i] = 1.0;
        }
    }
    g
}

/// Sparse hint planes: ab at hinted pixels, zeros elsewhere, plus a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInput {
    width: usize,
    height: usize,
    colors: Vec<[f64; 2]>,
    mask: Vec<f64>,
}

impl LocalInput {
    pub fn empty(width: usize, height: usize) -> Self {
        LocalInput { width, height, colors: vec![[0.0; 2]; width * height], mask: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colors(&self) -> &[[f64; 2]] {
        &self.colors
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn hint_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }

    /// Places (or replaces) a hint.
    pub fn set(&mut self, x: usize, y: usize, ab: [f64; 2]) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidArgument(format!(
                "hint ({x}, {y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        if !ab.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("hint color {ab:?} outside [0, 1]")));
        }
        let i = y * self.width + x;
        self.colors[i] = ab;
        self.mask[i] = 1.0;
        Ok(())
    }

    /// `(a, b, mask)` per pixel, row-major.
    pub fn stack(&self) -> Vec<f64> {
        self.colors.iter().zip(&self.mask).flat_map(|(&[a, b], &m)| [a, b, m]).collect()
    }

    /// Hinted pixel positions with their colors, row-major order.
    pub fn hints(&self) -> Vec<(usize, usize, [f64; 2])> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1.0)
            .map(|(i, _)| (i % self.width, i / self.width, self.colors[i]))
            .collect()
    }

    /// Reflect-pads (or crops) to a new size, carrying hints inside the
    /// original bounds only.
    pub(crate) fn resized(&self, width: usize, height: usize) -> LocalInput {
        let mut out = LocalInput::empty(width, height);
        for (x, y, ab) in self.hints() {
            if x < width && y < height {
                out.set(x, y, ab).expect("in bounds");
            }
        }
        out
    }
}

/// Samples `count` distinct pixels uniformly and copies their ab values.
pub fn sample_local_hints(ab: &ChromaMap, count: usize, seed: u64) -> Result<LocalInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_local_hints_with(ab, count, &mut rng)
}

pub fn sample_local_hints_with<R: Rng + ?Sized>(ab: &ChromaMap, count: usize, rng: &mut R) -> Result<LocalInput> {
    let n = ab.width * ab.height;
    if count > n {
        return Err(Error::InvalidArgument(format!("cannot sample {count} hints from {n} pixels")));
    }
    let mut local = LocalInput::empty(ab.width, ab.height);
    for i in index::sample(rng, n, count) {
        local.colors[i] = ab.data[i];
        local.mask[i] = 1.0;
    }
    Ok(local)
}

/// Which user inputs a training example simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    None,
    Global,
    Local,
    Both,
}

impl Combination {
    pub const ALL: [Combination; 4] = [Combination::None, Combination::Global, Combination::Local, Combination::Both];

    pub fn has_theme(self) -> bool {
        matches!(self, Combination::Global | Combination::Both)
    }

    pub fn has_hints(self) -> bool {
        matches!(self, Combination::Local | Combination::Both)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Network inputs and loss targets for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub combination: Combination,
    /// Normalised luminance, row-major.
    pub luminance: Vec<f64>,
    pub global: GlobalInput,
    pub local: LocalInput,
    /// Ground-truth chroma.
    pub target: ChromaMap,
    /// K-color map; equals `target` when no theme is given.
    pub kcolor: ChromaMap,
}

impl TrainingExample {
    pub fn width(&self) -> usize {
        self.target.width
    }

    pub fn height(&self) -> usize {
        self.target.height
    }
}

pub fn make_training_example(image: &LabImage, combination: Combination, seed: u64) -> Result<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_training_example_with(image, combination, &mut rng)
}

pub fn make_training_example_with<R: Rng + ?Sized>(
    image: &LabImage,
    combination: Combination,
    rng: &mut R,
) -> Result<TrainingExample> {
    let target = ChromaMap::from_lab(image);
    let luminance = image.l().iter().map(|&l| colorspace::normalize_l(l)).collect();
    let (global, kcolor) = if combination.has_theme() {
        let k = rng.random_range(THEME_MIN..=THEME_SLOTS);
        let theme = extract_theme_with(&target, k, rng)?.theme;
        (build_global_input(Some(&theme)), decode_kcolor_map(&target, &theme))
    } else {
        (GlobalInput::none(), target.clone())
    };
    let local = if combination.has_hints() {
        let max = TRAIN_HINTS_MAX.min(image.width() * image.height());
        let count = rng.random_range(TRAIN_HINTS_MIN..=max);
        sample_local_hints_with(&target, count, rng)?
    } else {
        LocalInput::empty(image.width(), image.height())
    };
    Ok(TrainingExample { combination, luminance, global, local, target, kcolor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::{rgb_to_lab, RgbImage};
    use proptest::prelude::*;

    /// Image whose rows are split into bands of the given colors, band
    /// heights proportional to `weights`.
    fn banded(colors: &[[f64; 2]], weights: &[usize], width: usize) -> ChromaMap {
        let mut data = Vec::new();
        for (c, &w) in colors.iter().zip(weights) {
            data.extend(std::iter::repeat_n(*c, w * width));
        }
        let h = weights.iter().sum();
        ChromaMap::new(width, h, data).unwrap()
    }

    #[test]
    fn extract_recovers_flat_regions_by_area() {
        let colors = [[0.2, 0.7], [0.8, 0.3], [0.5, 0.5]];
        let map = banded(&colors, &[3, 6, 5], 8);
        let ex = extract_theme(&map, 3, 11).unwrap();
        assert!(!ex.degenerate);
        let expect = [colors[1], colors[2], colors[0]];
        for (got, want) in ex.theme.colors().iter().zip(expect) {
            assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
        }
        assert_eq!(ex.populations, vec![48, 40, 24]);
    }

    #[test]
    fn extract_five_color_palette() {
        let colors = [[0.1, 0.1], [0.3, 0.9], [0.6, 0.2], [0.9, 0.9], [0.45, 0.55]];
        let map = banded(&colors, &[6, 5, 4, 3, 2], 5);
        let ex = extract_theme(&map, 5, 2).unwrap();
        assert_eq!(ex.theme.len(), 5);
        for (got, want) in ex.theme.colors().iter().zip(colors) {
            assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn extract_constant_image_is_degenerate() {
        let map = ChromaMap::filled(4, 4, [0.3, 0.6]).unwrap();
        let ex = extract_theme(&map, 3, 0).unwrap();
        assert!(ex.degenerate);
        assert!(ex.theme.colors().iter().all(|c| (c[0] - 0.3).abs() < 1e-12 && (c[1] - 0.6).abs() < 1e-12));
    }

    #[test]
    fn extract_rejects_bad_k() {
        let map = ChromaMap::filled(4, 4, [0.3, 0.6]).unwrap();
        assert!(extract_theme(&map, 2, 0).is_err());
        assert!(extract_theme(&map, 8, 0).is_err());
    }

    #[test]
    fn decode_hand_example() {
        let theme = Theme::new(vec![[0.25, 0.25], [0.75, 0.75], [0.875, 0.125]]).unwrap();
        let map = ChromaMap::new(3, 1, vec![[0.375, 0.375], [0.75, 0.625], [0.5, 0.5]]).unwrap();
        let out = decode_kcolor_map(&map, &theme);
        assert_eq!(out.data()[0], [0.25, 0.25]);
        assert_eq!(out.data()[1], [0.75, 0.75]);
        // equidistant from the first two: lowest index wins
        assert_eq!(out.data()[2], [0.25, 0.25]);
    }

    #[test]
    fn local_hint_sampling() {
        let data: Vec<[f64; 2]> = (0..48).map(|i| [0.1 + i as f64 / 100.0, 0.9 - i as f64 / 100.0]).collect();
        let map = ChromaMap::new(8, 6, data).unwrap();

        let none = sample_local_hints(&map, 0, 1).unwrap();
        assert_eq!(none, LocalInput::empty(8, 6));

        let all = sample_local_hints(&map, 48, 1).unwrap();
        assert!(all.mask().iter().all(|&m| m == 1.0));
        assert_eq!(all.colors(), map.data());

        let five = sample_local_hints(&map, 5, 7).unwrap();
        assert_eq!(five.hint_count(), 5);
        for (i, (&m, c)) in five.mask().iter().zip(five.colors()).enumerate() {
            if m == 1.0 {
                assert_eq!(*c, map.data()[i]);
            } else {
                assert_eq!(*c, [0.0, 0.0]);
            }
        }
        assert_eq!(five, sample_local_hints(&map, 5, 7).unwrap());
        assert!(sample_local_hints(&map, 49, 1).is_err());
    }

    #[test]
    fn global_input_masks() {
        let none = build_global_input(None);
        assert!(none.is_empty());
        assert!(none.flatten().iter().all(|&v| v == 0.0));

        let three = Theme::new(vec![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]).unwrap();
        let g = build_global_input(Some(&three));
        assert_eq!(g.mask, [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.flatten().len(), 21);

        let seven = Theme::new(vec![[0.5, 0.5]; 7]).unwrap();
        assert_eq!(build_global_input(Some(&seven)).mask, [1.0; 7]);
    }

    #[test]
    fn theme_text_roundtrip() {
        let theme = Theme::new(vec![[0.12, 0.34], [0.5, 0.5], [0.99, 0.01]]).unwrap();
        let text = theme.to_text();
        assert_eq!(text, "0.12 0.34\n0.50 0.50\n0.99 0.01\n");
        assert_eq!(Theme::parse(&text).unwrap(), theme);
        let mixed = Theme::parse("#3a6ea5\n0.5, 0.5\n\n0.2 0.8\n").unwrap();
        assert_eq!(mixed.len(), 3);
        assert!(Theme::parse("0.1 0.2\n0.3 0.4\n").is_err());
        assert!(Theme::parse("0.1 x\n0.3 0.4\n0.5 0.5\n").is_err());
    }

    fn test_image() -> LabImage {
        let px: Vec<[u8; 3]> = (0..16 * 16)
            .map(|i| {
                let (x, y) = (i % 16, i / 16);
                [(x * 15) as u8, (y * 15) as u8, ((x + y) * 7) as u8]
            })
            .collect();
        rgb_to_lab(&RgbImage::new(16, 16, px).unwrap())
    }

    #[test]
    fn training_example_combinations() {
        let img = test_image();
        let none = make_training_example(&img, Combination::None, 5).unwrap();
        assert!(none.global.is_empty());
        assert_eq!(none.local.hint_count(), 0);
        assert_eq!(none.kcolor, none.target);

        let both = make_training_example(&img, Combination::Both, 5).unwrap();
        assert!((3..=7).contains(&both.global.live_slots()));
        assert!(both.local.hint_count() >= 1);
        assert_eq!(both, make_training_example(&img, Combination::Both, 5).unwrap());

        let global = make_training_example(&img, Combination::Global, 9).unwrap();
        assert_eq!(global.local.hint_count(), 0);
        let theme_colors: Vec<[f64; 2]> = global.global.colors[..global.global.live_slots()].to_vec();
        assert!(global.kcolor.data().iter().all(|c| theme_colors.contains(c)));
    }

    fn arb_map() -> impl Strategy<Value = ChromaMap> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), w * h)
                .prop_map(move |v| ChromaMap::new(w, h, v.into_iter().map(|(a, b)| [a, b]).collect()).unwrap())
        })
    }

    fn arb_theme() -> impl Strategy<Value = Theme> {
        proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 3..=7)
            .prop_map(|v| Theme::new(v.into_iter().map(|(a, b)| [a, b]).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn decode_outputs_only_theme_colors_and_is_idempotent(map in arb_map(), theme in arb_theme()) {
            let once = decode_kcolor_map(&map, &theme);
            prop_assert!(once.data().iter().all(|c| theme.colors().contains(c)));
            prop_assert_eq!(decode_kcolor_map(&once, &theme), once);
        }

        #[test]
        fn masks_zero_colors_outside(map in arb_map(), frac in 0.0f64..=1.0, seed in any::<u64>(), theme in proptest::option::of(arb_theme())) {
            let count = (frac * (map.width() * map.height()) as f64) as usize;
            let local = sample_local_hints(&map, count, seed).unwrap();
            for (c, &m) in local.colors().iter().zip(local.mask()) {
                prop_assert!(m == 0.0 || m == 1.0);
                prop_assert_eq!(c[0] * (1.0 - m), 0.0);
                prop_assert_eq!(c[1] * (1.0 - m), 0.0);
            }
            let g = build_global_input(theme.as_ref());
            for (c, &m) in g.colors.iter().zip(&g.mask) {
                prop_assert_eq!(c[0] * (1.0 - m), 0.0);
                prop_assert_eq!(c[1] * (1.0 - m), 0.0);
            }
        }
    }
}
