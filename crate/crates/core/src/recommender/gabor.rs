//! Gabor filter bank texture descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::segment::Segment;
use super::GrayImage;
use crate::error::{Error, Result};

pub const SCALES: usize = 4;
pub const ORIENTATIONS: usize = 6;
pub const FILTERS: usize = SCALES * ORIENTATIONS;
pub const DESCRIPTOR_LEN: usize = 2 * FILTERS;

/// Bank parameters. Wavelengths are in pixels; the Gaussian envelope has
/// standard deviation `sigma_ratio * wavelength` along the carrier and
/// `aspect` times that across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborBank {
    pub wavelengths: [f64; SCALES],
    pub orientations_deg: [f64; ORIENTATIONS],
    pub sigma_ratio: f64,
    pub aspect: f64,
}

impl Default for GaborBank {
    fn default() -> Self {
        GaborBank {
            wavelengths: [3.0, 6.0, 12.0, 24.0],
            orientations_deg: [0.0, 30.0, 60.0, 90.0, 120.0, 150.0],
            sigma_ratio: 0.5,
            aspect: 1.0,
        }
    }
}

/// One complex kernel with its real part shifted to zero mean.
#[derive(Debug, Clone)]
struct Kernel {
    half: isize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Kernel {
    fn new(wavelength: f64, theta: f64, sigma_ratio: f64, aspect: f64) -> Kernel {
        let sigma = sigma_ratio * wavelength;
        let half = (2.0 * sigma).ceil().max(1.0) as isize;
        let (s, c) = theta.sin_cos();
        let mut env = Vec::new();
        let mut phase = Vec::new();
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (dx as f64, dy as f64);
                let u = x * c + y * s;
                let v = -x * s + y * c;
                env.push((-(u * u + aspect * aspect * v * v) / (2.0 * sigma * sigma)).exp());
                phase.push(2.0 * PI * u / wavelength);
            }
        }
        let norm: f64 = env.iter().sum();
        let carrier_mean = env.iter().zip(&phase).map(|(e, p)| e * p.cos()).sum::<f64>() / norm;
        let re = env.iter().zip(&phase).map(|(e, p)| e * (p.cos() - carrier_mean) / norm).collect();
        let im = env.iter().zip(&phase).map(|(e, p)| e * p.sin() / norm).collect();
        Kernel { half, re, im }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

impl GaborBank {
    pub fn validate(&self) -> Result<()> {
        let ok = self.wavelengths.iter().all(|&w| w.is_finite() && w >= 2.0)
            && self.sigma_ratio.is_finite()
            && self.sigma_ratio > 0.0
            && self.aspect.is_finite()
            && self.aspect > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Gabor bank {self:?}")))
        }
    }

    fn kernels(&self) -> Vec<Kernel> {
        let mut out = Vec::with_capacity(FILTERS);
        for &w in &self.wavelengths {
            for &deg in &self.orientations_deg {
                out.push(Kernel::new(w, deg.to_radians(), self.sigma_ratio, self.aspect));
            }
        }
        out
    }

    /// Per-filter (mean, std) of response magnitudes over each segment, in
    /// filter order scale-major. Borders are reflected.
    pub fn describe(&self, image: &GrayImage, segments: &[Segment]) -> Result<Vec<TextureDescriptor>> {
        self.validate()?;
        let len = image.width() * image.height();
        if segments.iter().any(|s| s.pixels.is_empty() || s.pixels.iter().any(|&p| p >= len)) {
            return Err(Error::InvalidArgument("segments must be nonempty and inside the image".into()));
        }
        let kernels = self.kernels();
        let (w, h) = (image.width(), image.height());
        let data = image.data();
        let mut out = vec![TextureDescriptor { values: vec![0.0; DESCRIPTOR_LEN] }; segments.len()];
        let mut mags = Vec::new();
        for (f, k) in kernels.iter().enumerate() {
            let side = 2 * k.half + 1;
            for (seg, desc) in segments.iter().zip(out.iter_mut()) {
                mags.clear();
                for &p in &seg.pixels {
                    let (px, py) = ((p % w) as isize, (p / w) as isize);
                    let (mut re, mut im) = (0.0, 0.0);
                    for dy in -k.half..=k.half {
                        let row = reflect(py + dy, h) * w;
                        let krow = ((dy + k.half) * side) as usize;
                        for dx in -k.half..=k.half {
                            let v = data[row + reflect(px + dx, w)];
                            let t = krow + (dx + k.half) as usize;
                            re += k.re[t] * v;
                            im += k.im[t] * v;
                        }
                    }
                    mags.push((re * re + im * im).sqrt());
                }
                let n = mags.len() as f64;
                let mean = mags.iter().sum::<f64>() / n;
                let var = mags.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
                desc.values[2 * f] = mean;
                desc.values[2 * f + 1] = var.sqrt();
            }
        }
        Ok(out)
    }
}

/// Mean and standard deviation of each filter's response magnitude,
/// interleaved: `[mean_0, std_0, mean_1, std_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureDescriptor {
    pub values: Vec<f64>,
}

pub fn gabor_descriptor(image: &GrayImage, segment: &Segment, bank: &GaborBank) -> Result<TextureDescriptor> {
    Ok(bank.describe(image, std::slice::from_ref(segment))?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
    }

    fn whole(w: usize, h: usize) -> Segment {
        Segment { pixels: (0..w * h).collect() }
    }

    #[test]
    fn kernels_are_dc_free() {
        for k in GaborBank::default().kernels() {
            assert!(k.re.iter().sum::<f64>().abs() < 1e-12);
            assert!(k.im.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn constant_segment_has_zero_descriptor() {
        let d = gabor_descriptor(&plane(24, 20, |_, _| 63.0), &whole(24, 20), &GaborBank::default()).unwrap();
        assert_eq!(d.values.len(), DESCRIPTOR_LEN);
        assert!(d.values.iter().all(|v| v.abs() < 1e-6), "{:?}", d.values);
    }

    #[test]
    fn orientation_selectivity() {
        // vertical stripes: carrier along x (0 degrees) responds most
        let img = plane(48, 48, |x, _| 50.0 + 10.0 * (2.0 * PI * x as f64 / 6.0).sin());
        let interior = Segment { pixels: (0..48 * 48).filter(|i| (12..36).contains(&(i % 48)) && (12..36).contains(&(i / 48))).collect() };
        let d = gabor_descriptor(&img, &interior, &GaborBank::default()).unwrap();
        let scale6: Vec<f64> = (0..ORIENTATIONS).map(|o| d.values[2 * (ORIENTATIONS + o)]).collect();
        let best = scale6.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 0, "{scale6:?}");
        // the envelope magnitude of a matched sinusoid is nearly flat
        assert!(d.values[2 * ORIENTATIONS + 1] < 0.1 * d.values[2 * ORIENTATIONS], "{:?}", &d.values[12..14]);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!((-3..8).map(|i| reflect(i, 4)).collect::<Vec<_>>(), vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn rejects_bad_segments() {
        let img = plane(4, 4, |_, _| 1.0);
        assert!(gabor_descriptor(&img, &Segment { pixels: vec![] }, &GaborBank::default()).is_err());
        assert!(gabor_descriptor(&img, &Segment { pixels: vec![16] }, &GaborBank::default()).is_err());
    }
}
