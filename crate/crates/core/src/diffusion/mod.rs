//! Noise schedules, deterministic DDIM sampling and masked inpainting.
//!
//! Everything runs in pixel space. The inpainting loop walks the sampling
//! subsequence from the last step down: at each masked step the generated
//! content is kept inside the mask and a freshly noised copy of the known
//! image is pasted outside it. The final step to step 0 runs without a mask
//! so the two regions blend.

mod gmm;
mod sampler;
mod schedule;

pub use gmm::{GaussianMixture, GmmDenoiser};
pub use sampler::{
    ddim_step, final_step, inpaint, inpaint_observed, masked_blend_step, noise_known, predict_x0, StepRecord,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig, ScheduleKind};

use crate::error::{Error, Result};
use crate::meshproc::{BoxMask, GrayscaleMap};

/// Row-major `height × width × channels` image of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image values must be finite".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &LatentImage) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    pub(crate) fn map_with(&self, other: &LatentImage, f: impl Fn(f64, f64) -> f64) -> LatentImage {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        LatentImage { data, ..*self }
    }

    /// Whether flat element `i` lies on a mask-one pixel.
    pub(crate) fn masked_at(&self, mask: &BoxMask, i: usize) -> bool {
        let pixel = i / self.channels;
        mask.get(pixel % self.width, pixel / self.width)
    }

    /// Copy with every masked pixel zeroed: the background-only image.
    pub fn masked_out(&self, mask: &BoxMask) -> LatentImage {
        let data = (0..self.data.len()).map(|i| if self.masked_at(mask, i) { 0.0 } else { self.data[i] }).collect();
        LatentImage { data, ..*self }
    }

    fn check_mask(&self, mask: &BoxMask) -> Result<()> {
        if (mask.width(), mask.height()) != (self.width, self.height) {
            return Err(Error::ShapeMismatch(format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    fn check_guidance(&self, guidance: &GrayscaleMap) -> Result<()> {
        if (guidance.width(), guidance.height()) != (self.width, self.height) {
            return Err(Error::ShapeMismatch(format!(
                "guidance is {}x{}, image is {}x{}",
                guidance.width(),
                guidance.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Everything handed to the noise predictor at one step.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub noisy: &'a LatentImage,
    pub step: usize,
    /// Cumulative signal level at `step`.
    pub alpha_bar: f64,
    /// Background-only image; absent on the final, unmasked step.
    pub masked_image: Option<&'a LatentImage>,
    pub guidance: &'a GrayscaleMap,
    /// Opaque prompt conditioning, passed through untouched.
    pub extra: &'a [f64],
}

/// Noise predictor. Implementations must be deterministic.
pub trait Denoiser: Sync {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage> {
        (**self).predict_noise(input)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage> {
        (**self).predict_noise(input)
    }
}

/// Conditioning shared by every step of a sampling run.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub masked_image: Option<&'a LatentImage>,
    pub guidance: &'a GrayscaleMap,
    pub extra: &'a [f64],
}

impl<'a> Conditioning<'a> {
    pub fn new(guidance: &'a GrayscaleMap) -> Self {
        Self { masked_image: None, guidance, extra: &[] }
    }

    pub fn with_masked_image(self, masked_image: &'a LatentImage) -> Self {
        Self { masked_image: Some(masked_image), ..self }
    }

    pub fn with_extra(self, extra: &'a [f64]) -> Self {
        Self { extra, ..self }
    }

    pub fn without_masked_image(self) -> Self {
        Self { masked_image: None, ..self }
    }
}
