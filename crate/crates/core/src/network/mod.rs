//! The colorization network: a feature-extraction encoder that merges the
//! luminance and local-hint branches, a fully connected global-theme branch,
//! a learned-blend fusion at 1/8 resolution and an upsampling decoder that
//! predicts normalised ab.

mod checkpoint;

pub use checkpoint::{checkpoint_id, CheckpointManifest, TensorEntry, CHECKPOINT_FORMAT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::colorspace::{self, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::hints::{build_global_input, ChromaMap, GlobalInput, LocalInput, Theme, THEME_SLOTS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel width of the first layer; the original model uses 32.
    pub base_channels: usize,
    pub theme_slots: usize,
    /// Training resolution; both must be multiples of 8. Inference accepts
    /// any size.
    pub input_height: usize,
    pub input_width: usize,
}

impl ModelConfig {
    pub fn new(base_channels: usize, input_height: usize, input_width: usize) -> Result<Self> {
        let cfg = ModelConfig { base_channels, theme_slots: THEME_SLOTS, input_height, input_width };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 {
            return Err(Error::InvalidArgument(format!("base_channels must be >= 2, got {}", self.base_channels)));
        }
        if self.theme_slots != THEME_SLOTS {
            return Err(Error::InvalidArgument(format!("theme_slots must be {THEME_SLOTS}")));
        }
        if self.input_height == 0 || self.input_width == 0 || !self.input_height.is_multiple_of(8) || !self.input_width.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "input size {}x{} must be a positive multiple of 8",
                self.input_width, self.input_height
            )));
        }
        Ok(())
    }

    fn global_width(&self) -> usize {
        3 * self.theme_slots
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    name: &'static str,
    in_mult: usize,
    out_mult: usize,
    stride: usize,
}

// Channel counts as multiples of base_channels; 0 marks a fixed count
// (1 luminance plane, 3 hint planes, 2 ab planes).
const fn conv(name: &'static str, in_mult: usize, out_mult: usize, stride: usize) -> ConvSpec {
    ConvSpec { name, in_mult, out_mult, stride }
}

const ENCODER: [ConvSpec; 8] = [
    conv("conv2", 1, 2, 1),
    conv("conv3", 2, 2, 2),
    conv("conv4", 2, 4, 1),
    conv("conv5", 4, 4, 2),
    conv("conv6", 4, 8, 1),
    conv("conv7", 8, 16, 2),
    conv("conv8", 16, 8, 1),
    conv("conv9", 8, 8, 1),
];

const GLOBAL_FC: [(&str, usize); 3] = [("fc1", 2), ("fc2", 4), ("fc3", 8)];

// Decoder stages; `true` means an upsampling layer follows the conv.
const DECODER: [(ConvSpec, bool); 3] =
    [(conv("conv10", 8, 4, 1), true), (conv("conv12", 4, 2, 1), true), (conv("conv14", 2, 1, 1), false)];

pub const INPUT_MERGE: &str = "merge_input.weight";
pub const FUSION_MERGE: &str = "merge_fusion.weight";

/// Parameters plus the layer layout they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Predicted ab, `H x W x 2`, values in (0, 1).
    pub output: Var,
    /// Named intermediate activations in execution order.
    pub stages: Vec<(&'static str, Var)>,
}

impl Forward {
    pub fn stage(&self, name: &str) -> Option<Var> {
        self.stages.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

impl<T: Scalar> Model<T> {
    /// He-normal weights, zero biases and zero blend logits (an even merge).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.base_channels;
        let mut params = ParamStore::new();
        let mut he = |dims: &[usize], fan_in: usize| -> Tensor<T> {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
            Tensor::from_vec(dims, data).expect("dims")
        };
        let add_conv = |params: &mut ParamStore<T>, he: &mut dyn FnMut(&[usize], usize) -> Tensor<T>, name: &str, cin: usize, cout: usize| -> Result<()> {
            params.insert(format!("{name}.weight"), he(&[3, 3, cin, cout], 9 * cin))?;
            params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
            Ok(())
        };
        add_conv(&mut params, &mut he, "conv1a", 1, c)?;
        add_conv(&mut params, &mut he, "conv1b", 3, c)?;
        for spec in ENCODER {
            add_conv(&mut params, &mut he, spec.name, spec.in_mult * c, spec.out_mult * c)?;
        }
        let mut fan_in = config.global_width();
        for (name, mult) in GLOBAL_FC {
            params.insert(format!("{name}.weight"), he(&[fan_in, mult * c], fan_in))?;
            params.insert(format!("{name}.bias"), Tensor::zeros(&[mult * c]))?;
            fan_in = mult * c;
        }
        for (spec, _) in DECODER {
            add_conv(&mut params, &mut he, spec.name, spec.in_mult * c, spec.out_mult * c)?;
        }
        add_conv(&mut params, &mut he, "conv17", c, 2)?;
        params.insert(INPUT_MERGE, Tensor::scalar(T::zero()))?;
        params.insert(FUSION_MERGE, Tensor::scalar(T::zero()))?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = Model::<T>::init(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for p in reference.params.iter() {
            match params.by_name(&p.name) {
                Some(q) if q.value.dims() == p.value.dims() => {}
                Some(q) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{}` has dims {:?}, expected {:?}",
                        p.name,
                        q.value.dims(),
                        p.value.dims()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{}`", p.name))),
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn pid(&self, name: &str) -> ParamId {
        self.params.id(name).unwrap_or_else(|| panic!("model parameter `{name}`"))
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, name: &str, stride: usize) -> Result<Var> {
        let k = g.param(&self.params, self.pid(&format!("{name}.weight")));
        let b = g.param(&self.params, self.pid(&format!("{name}.bias")));
        g.conv2d(x, k, b, stride)
    }

    fn dense(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let w = g.param(&self.params, self.pid(&format!("{name}.weight")));
        let b = g.param(&self.params, self.pid(&format!("{name}.bias")));
        g.dense(x, w, b)
    }

    /// Records the forward pass on `g`. `luminance` is the normalised L
    /// plane, row-major, of an image whose sides are multiples of 8.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        width: usize,
        height: usize,
        luminance: &[f64],
        global: &GlobalInput,
        local: &LocalInput,
    ) -> Result<Forward> {
        if !width.is_multiple_of(8) || !height.is_multiple_of(8) || width == 0 || height == 0 {
            return Err(Error::shape("forward", format!("image {width}x{height} is not a multiple of 8")));
        }
        if luminance.len() != width * height {
            return Err(Error::shape("forward", format!("luminance has {} values for {width}x{height}", luminance.len())));
        }
        if local.width() != width || local.height() != height {
            return Err(Error::shape(
                "forward",
                format!("local input {}x{} for {width}x{height} image", local.width(), local.height()),
            ));
        }
        let mut stages = Vec::new();
        let x = g.constant(Tensor::from_f64(&[height, width, 1], luminance)?);
        let hints = g.constant(Tensor::from_f64(&[height, width, 3], &local.stack())?);
        let theme = g.constant(Tensor::from_f64(&[1, 1, self.config.global_width()], &global.flatten())?);

        // feature extraction
        let lum = self.conv(g, x, "conv1a", 1)?;
        let lum = g.relu(lum);
        let hint = self.conv(g, hints, "conv1b", 1)?;
        let hint = g.relu(hint);
        let w_in = g.param(&self.params, self.pid(INPUT_MERGE));
        let mut h = g.lerp_merge(lum, hint, w_in)?;
        stages.push(("merge_input", h));
        for spec in ENCODER {
            let y = self.conv(g, h, spec.name, spec.stride)?;
            h = g.relu(y);
            stages.push((spec.name, h));
        }

        // global theme branch
        let mut v = theme;
        for (name, _) in GLOBAL_FC {
            let y = self.dense(g, v, name)?;
            v = g.relu(y);
            stages.push((name, v));
        }

        // fusion
        let (fh, fw, _) = g.value(h).hwc()?;
        let spread = g.broadcast_spatial(v, fh, fw)?;
        let w_fuse = g.param(&self.params, self.pid(FUSION_MERGE));
        h = g.lerp_merge(h, spread, w_fuse)?;
        stages.push(("fusion", h));

        // reconstruction
        for (spec, upsample) in DECODER {
            let y = self.conv(g, h, spec.name, spec.stride)?;
            h = g.relu(y);
            stages.push((spec.name, h));
            if upsample {
                h = g.upsample2x(h)?;
            }
        }
        let y = self.conv(g, h, "conv17", 1)?;
        let y = g.sigmoid(y);
        stages.push(("conv17", y));
        let output = g.upsample2x(y)?;
        stages.push(("output", output));
        Ok(Forward { output, stages })
    }

    /// Predicted normalised ab for an image whose sides are multiples of 8.
    pub fn predict(
        &self,
        width: usize,
        height: usize,
        luminance: &[f64],
        global: &GlobalInput,
        local: &LocalInput,
    ) -> Result<ChromaMap> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, width, height, luminance, global, local)?;
        let data = g.value(fwd.output).to_f64().chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        ChromaMap::new(width, height, data)
    }

    /// Predicts ab for `image` and recombines it with the input luminance.
    /// Sizes that are not multiples of 8 are reflect-padded, then cropped.
    pub fn colorize_lab(&self, image: &LabImage, theme: Option<&Theme>, hints: Option<&LocalInput>) -> Result<LabImage> {
        let (w, h) = (image.width(), image.height());
        if let Some(hints) = hints {
            if hints.width() != w || hints.height() != h {
                return Err(Error::InvalidArgument(format!(
                    "hint planes {}x{} for {w}x{h} image",
                    hints.width(),
                    hints.height()
                )));
            }
        }
        let (pw, ph) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
        let luminance: Vec<f64> = (0..ph)
            .flat_map(|y| (0..pw).map(move |x| (x, y)))
            .map(|(x, y)| colorspace::normalize_l(image.l()[reflect(y, h) * w + reflect(x, w)]))
            .collect();
        let local = match hints {
            Some(hints) => hints.resized(pw, ph),
            None => LocalInput::empty(pw, ph),
        };
        let global = build_global_input(theme);
        let ab = self.predict(pw, ph, &luminance, &global, &local)?;

        let mut out_ab = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out_ab.push(ab.get(x, y).map(|v| colorspace::denormalize_ab(v).clamp(colorspace::AB_MIN, colorspace::AB_MAX)));
            }
        }
        LabImage::new(w, h, image.l().to_vec(), out_ab)
    }

    pub fn colorize(&self, image: &LabImage, theme: Option<&Theme>, hints: Option<&LocalInput>) -> Result<RgbImage> {
        Ok(colorspace::lab_to_rgb(&self.colorize_lab(image, theme, hints)?))
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}
