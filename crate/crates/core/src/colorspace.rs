//! sRGB (D65) <-> CIE Lab conversion, the `[0, 1]` working normalisation and
//! PSNR.

use std::path::Path;

use crate::error::{Error, Result};

/// Upper bound of the luminance channel.
pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

// Linear sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// Reference white: the image of linear (1, 1, 1), so that neutral sRGB
/// colors land exactly on the a = b = 0 axis.
fn white() -> [f64; 3] {
    let row = |r: &[f64; 3]| r[0] + r[1] + r[2];
    [row(&RGB_TO_XYZ[0]), row(&RGB_TO_XYZ[1]), row(&RGB_TO_XYZ[2])]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RgbImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let data = (y0..y0 + h).flat_map(|y| self.data[y * self.width + x0..][..w].iter().copied()).collect();
        RgbImage::new(w, h, data)
    }

    /// Replaces every pixel by its gray rendering (the Lab luminance mapped
    /// back to a neutral sRGB value).
    pub fn to_gray(&self) -> RgbImage {
        let mut lab = rgb_to_lab(self);
        lab.ab.iter_mut().for_each(|ab| *ab = [0.0, 0.0]);
        lab_to_rgb(&lab)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<RgbImage> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        Self::from_image(img)
    }

    /// `(width, height)` from a PNG header, without decoding pixels.
    pub fn png_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
        let reader = image::ImageReader::with_format(std::io::Cursor::new(bytes), image::ImageFormat::Png);
        let (w, h) = reader.into_dimensions()?;
        Ok((w as usize, h as usize))
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_image().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png_bytes()?).map_err(|e| Error::io(path, e))
    }

    fn from_image(img: image::RgbImage) -> Result<RgbImage> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.pixels().map(|p| p.0).collect();
        RgbImage::new(w, h, data)
    }

    fn to_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.data.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer matches dims")
    }
}

/// CIE Lab planes: `l` in `[0, 100]`, `ab` in `[-128, 127]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    pub(crate) l: Vec<f64>,
    pub(crate) ab: Vec<[f64; 2]>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f64>, ab: Vec<[f64; 2]>) -> Result<Self> {
        check_dims(width, height, l.len())?;
        check_dims(width, height, ab.len())?;
        if let Some(v) = l.iter().find(|v| !(0.0..=L_MAX).contains(*v)) {
            return Err(Error::InvalidArgument(format!("L value {v} outside [0, 100]")));
        }
        if let Some(v) = ab.iter().flatten().find(|v| !(AB_MIN..=AB_MAX).contains(*v)) {
            return Err(Error::InvalidArgument(format!("ab value {v} outside [-128, 127]")));
        }
        Ok(LabImage { width, height, l, ab })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn ab(&self) -> &[[f64; 2]] {
        &self.ab
    }
}

/// Lab planes rescaled to `[0, 1]`: `L / 100` and `(ab + 128) / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLab {
    width: usize,
    height: usize,
    pub(crate) l: Vec<f64>,
    pub(crate) ab: Vec<[f64; 2]>,
}

impl NormalizedLab {
    pub fn new(width: usize, height: usize, l: Vec<f64>, ab: Vec<[f64; 2]>) -> Result<Self> {
        check_dims(width, height, l.len())?;
        check_dims(width, height, ab.len())?;
        if let Some(v) = l.iter().chain(ab.iter().flatten()).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("normalized value {v} outside [0, 1]")));
        }
        Ok(NormalizedLab { width, height, l, ab })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn ab(&self) -> &[[f64; 2]] {
        &self.ab
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {width}x{height}")));
    }
    if width * height != len {
        return Err(Error::InvalidArgument(format!("{width}x{height} image needs {} pixels, got {len}", width * height)));
    }
    Ok(())
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts one sRGB pixel to unclamped Lab.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let w = white();
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(xyz / w[i]);
    }
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Converts one Lab triple to sRGB, clamping out-of-gamut channels.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white();
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    XYZ_TO_RGB.map(|row| {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        (linear_to_srgb(lin.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let mut l = Vec::with_capacity(img.data.len());
    let mut ab = Vec::with_capacity(img.data.len());
    for &px in &img.data {
        let [lv, a, b] = srgb_to_lab(px);
        l.push(lv.clamp(0.0, L_MAX));
        ab.push([a.clamp(AB_MIN, AB_MAX), b.clamp(AB_MIN, AB_MAX)]);
    }
    LabImage { width: img.width, height: img.height, l, ab }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let data = img.l.iter().zip(&img.ab).map(|(&l, &[a, b])| lab_to_srgb([l, a, b])).collect();
    RgbImage { width: img.width, height: img.height, data }
}

pub fn normalize_l(l: f64) -> f64 {
    l / L_MAX
}

pub fn normalize_ab(v: f64) -> f64 {
    (v - AB_MIN) / (AB_MAX - AB_MIN)
}

pub fn denormalize_l(l: f64) -> f64 {
    l * L_MAX
}

pub fn denormalize_ab(v: f64) -> f64 {
    v * (AB_MAX - AB_MIN) + AB_MIN
}

pub fn normalize(img: &LabImage) -> NormalizedLab {
    NormalizedLab {
        width: img.width,
        height: img.height,
        l: img.l.iter().map(|&v| normalize_l(v)).collect(),
        ab: img.ab.iter().map(|ab| ab.map(normalize_ab)).collect(),
    }
}

pub fn denormalize(img: &NormalizedLab) -> LabImage {
    LabImage {
        width: img.width,
        height: img.height,
        l: img.l.iter().map(|&v| denormalize_l(v).clamp(0.0, L_MAX)).collect(),
        ab: img.ab.iter().map(|ab| ab.map(|v| denormalize_ab(v).clamp(AB_MIN, AB_MAX))).collect(),
    }
}

/// Normalised ab of an sRGB color, as used for user-picked theme and hint
/// colors.
pub fn srgb_to_normalized_ab(rgb: [u8; 3]) -> [f64; 2] {
    let [_, a, b] = srgb_to_lab(rgb);
    [normalize_ab(a.clamp(AB_MIN, AB_MAX)), normalize_ab(b.clamp(AB_MIN, AB_MAX))]
}

pub fn parse_hex_color(s: &str) -> Result<[u8; 3]> {
    let hex = s.strip_prefix('#').unwrap_or(s);
    if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::Parse(format!("expected #rrggbb color, got `{s}`")));
    }
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex");
    Ok([byte(0), byte(2), byte(4)])
}

pub fn format_hex_color(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Peak signal-to-noise ratio in dB over all three channels;
/// `f64::INFINITY` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::IncompatibleImages(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(&x, &y)| (x as f64 - y as f64).powi(2)))
        .sum();
    let mse = sq / (3 * a.data.len()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}
