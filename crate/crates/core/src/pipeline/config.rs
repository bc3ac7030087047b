use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{GaussianMixture, GmmDenoiser, LatentImage, NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::meshproc::{BoxMask, Camera, GrayscaleMap, PadRule};

/// Everything a refinement run needs besides its inputs. Loaded from TOML;
/// every key is optional.
///
/// ```toml
/// seed = 7
/// drift_bound = 0.05
///
/// [schedule]
/// steps = 1000
/// tau_count = 50
/// schedule_kind = "linear-beta"
/// beta_start = 1e-4
/// beta_end = 2e-2
///
/// [mask]
/// pad_fraction = 0.1
///
/// [camera]
/// focal = 64.0
/// principal = [32.0, 32.0]
///
/// [denoiser]
/// kind = "guided-oracle"
/// sigma = 0.02
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub seed: u64,
    /// Maximum per-pixel change allowed outside the mask.
    pub drift_bound: f64,
    pub schedule: ScheduleConfig,
    pub mask: MaskConfig,
    pub camera: CameraConfig,
    pub denoiser: DenoiserConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            drift_bound: 0.05,
            schedule: ScheduleConfig::default(),
            mask: MaskConfig::default(),
            camera: CameraConfig::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RefineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DenoiserConfig::Gmm { path: p, .. } = &mut config.denoiser {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new("")).join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.mask.pad_rule()?;
        if !(self.drift_bound.is_finite() && self.drift_bound >= 0.0) {
            return Err(Error::Config(format!("drift_bound must be non-negative, got {}", self.drift_bound)));
        }
        if let DenoiserConfig::GuidedOracle { sigma, .. } = self.denoiser {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!("denoiser sigma must be non-negative, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Fixed pad in pixels; takes precedence over `pad_fraction`.
    pub pad_px: Option<usize>,
    /// Pad as a fraction of the guidance bounding-box diagonal (default 0.1).
    pub pad_fraction: Option<f64>,
}

impl MaskConfig {
    pub fn pad_rule(&self) -> Result<PadRule> {
        match (self.pad_px, self.pad_fraction) {
            (Some(px), _) => Ok(PadRule::Pixels(px)),
            (None, Some(f)) if f.is_finite() && f >= 0.0 => Ok(PadRule::DiagonalFraction(f)),
            (None, Some(f)) => Err(Error::Config(format!("pad_fraction must be non-negative, got {f}"))),
            (None, None) => Ok(PadRule::default()),
        }
    }
}

/// Pinhole intrinsics; unset values default to a focal length equal to the
/// larger image side and a principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub focal: Option<f64>,
    pub principal: Option<[f64; 2]>,
}

impl CameraConfig {
    pub fn for_image(&self, width: usize, height: usize) -> Result<Camera> {
        let focal = self.focal.unwrap_or(width.max(height) as f64);
        let principal =
            self.principal.map(Point2::from).unwrap_or(Point2::new(width as f64 / 2.0, height as f64 / 2.0));
        Camera::new(focal, principal, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DenoiserConfig {
    /// Analytic denoiser for a single isotropic Gaussian centred on the input
    /// image with guided pixels replaced by their guidance shade.
    GuidedOracle {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        extra: Vec<f64>,
    },
    /// Analytic denoiser for an explicit mixture stored as JSON
    /// `{"means": [[...]], "variances": [...], "weights": [...]}`.
    Gmm {
        path: PathBuf,
        #[serde(default)]
        extra: Vec<f64>,
    },
}

fn default_sigma() -> f64 {
    0.02
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::GuidedOracle { sigma: default_sigma(), extra: Vec::new() }
    }
}

#[derive(Deserialize)]
struct MixtureFile {
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

impl DenoiserConfig {
    pub fn extra(&self) -> &[f64] {
        match self {
            DenoiserConfig::GuidedOracle { extra, .. } | DenoiserConfig::Gmm { extra, .. } => extra,
        }
    }

    /// Builds the denoiser for one job.
    pub fn build(&self, image: &LatentImage, guidance: &GrayscaleMap, mask: &BoxMask) -> Result<GmmDenoiser> {
        let mixture = match self {
            DenoiserConfig::GuidedOracle { sigma, .. } => {
                GaussianMixture::new(vec![guided_target(image, guidance, mask)], vec![sigma * sigma], vec![1.0])?
            }
            DenoiserConfig::Gmm { path, .. } => {
                let file: MixtureFile = crate::io::read_json(path)?;
                GaussianMixture::new(file.means, file.variances, file.weights)?
            }
        };
        Ok(GmmDenoiser::new(mixture))
    }
}

/// The input image with every masked, guided pixel set to its guidance shade.
pub fn guided_target(image: &LatentImage, guidance: &GrayscaleMap, mask: &BoxMask) -> Vec<f64> {
    let c = image.channels();
    image
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y) = ((i / c) % image.width(), (i / c) / image.width());
            let g = guidance.get(x, y);
            if mask.get(x, y) && g > 0.0 {
                g
            } else {
                v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let c = RefineConfig::from_toml_str(
            r#"
            seed = 7
            drift_bound = 0.04
            [schedule]
            steps = 200
            tau_count = 20
            schedule_kind = "cosine"
            [mask]
            pad_px = 3
            [camera]
            focal = 10.0
            principal = [1.0, 2.0]
            [denoiser]
            kind = "guided-oracle"
            sigma = 0.01
            extra = [1.0, 2.0]
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.schedule.steps, 200);
        assert_eq!(c.mask.pad_rule().unwrap(), PadRule::Pixels(3));
        assert_eq!(c.denoiser.extra(), &[1.0, 2.0]);
        let cam = c.camera.for_image(8, 8).unwrap();
        assert_eq!(cam.principal(), Point2::new(1.0, 2.0));
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RefineConfig::from_toml_str("").unwrap(), RefineConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RefineConfig::from_toml_str("[schedule]\ntau_count = 0").is_err());
        assert!(RefineConfig::from_toml_str("bogus = 1").is_err());
        assert!(RefineConfig::from_toml_str("drift_bound = -1.0").is_err());
        assert!(RefineConfig::from_toml_str("[denoiser]\nkind = \"unknown\"").is_err());
    }

    #[test]
    fn default_camera_is_centered() {
        let cam = CameraConfig::default().for_image(40, 30).unwrap();
        assert_eq!(cam.focal(), 40.0);
        assert_eq!(cam.principal(), Point2::new(20.0, 15.0));
    }
}
