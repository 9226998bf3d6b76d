//! PSNR evaluation under the four conditioning protocols.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{psnr, rgb_to_lab, RgbImage};
use crate::error::{Error, Result};
use crate::hints::{extract_theme_with, sample_local_hints_with, ChromaMap, THEME_MIN, THEME_SLOTS};
use crate::network::Model;
use crate::scalar::Scalar;

pub const EVAL_HINTS_MIN: usize = 3;
pub const EVAL_HINTS_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Automatic,
    Global,
    Local,
    Both,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Automatic, Protocol::Global, Protocol::Local, Protocol::Both];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Automatic => "automatic",
            Protocol::Global => "global",
            Protocol::Local => "local",
            Protocol::Both => "both",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown protocol `{s}` (automatic, global, local, both)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub protocols: Vec<Protocol>,
    /// Fixed hint count; `None` draws uniformly from 3 to 20 per image.
    pub hint_count: Option<usize>,
    /// Fixed theme size; `None` draws uniformly from 3 to 7 per image.
    pub theme_size: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { protocols: Protocol::ALL.to_vec(), hint_count: None, theme_size: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image: String,
    pub protocol: Protocol,
    pub psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Mean PSNR of one protocol; `None` if it was not evaluated.
    pub fn mean(&self, protocol: Protocol) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.protocol == protocol).map(|r| r.psnr_db).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `image, protocol, psnr_db` rows followed by `mean, <protocol>, <psnr>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image, protocol, psnr_db\n");
        for r in &self.rows {
            out.push_str(&format!("{}, {}, {:.4}\n", r.image, r.protocol, r.psnr_db));
        }
        for p in Protocol::ALL {
            if let Some(m) = self.mean(p) {
                out.push_str(&format!("mean, {p}, {m:.4}\n"));
            }
        }
        out
    }
}

/// Colorizes the gray rendering of `image` under `protocol` and returns the
/// PSNR against the original.
pub fn evaluate_image<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    image: &RgbImage,
    protocol: Protocol,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<f64> {
    let lab = rgb_to_lab(image);
    let ab = ChromaMap::from_lab(&lab);
    let theme = match protocol {
        Protocol::Global | Protocol::Both => {
            let k = cfg.theme_size.unwrap_or_else(|| rng.random_range(THEME_MIN..=THEME_SLOTS));
            Some(extract_theme_with(&ab, k, rng)?.theme)
        }
        _ => None,
    };
    let hints = match protocol {
        Protocol::Local | Protocol::Both => {
            let n = cfg.hint_count.unwrap_or_else(|| rng.random_range(EVAL_HINTS_MIN..=EVAL_HINTS_MAX));
            Some(sample_local_hints_with(&ab, n, rng)?)
        }
        _ => None,
    };
    let out = model.colorize(&lab, theme.as_ref(), hints.as_ref())?;
    psnr(&out, image)
}

/// Evaluates every image under every configured protocol. Each
/// (image, protocol) pair draws from its own seeded stream.
pub fn eval_psnr<T: Scalar>(model: &Model<T>, images: &[(String, RgbImage)], cfg: &EvalConfig) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images to evaluate".into()));
    }
    let mut report = EvalReport::default();
    for (i, (name, image)) in images.iter().enumerate() {
        for &protocol in &cfg.protocols {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((i * Protocol::ALL.len() + protocol as usize) as u64);
            let psnr_db = evaluate_image(model, image, protocol, cfg, &mut rng)?;
            report.rows.push(EvalRow { image: name.clone(), protocol, psnr_db });
        }
    }
    Ok(report)
}
