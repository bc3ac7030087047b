//! End-to-end flows: mesh-guided refinement and pose transfer, plus batch
//! execution over a manifest.

mod batch;
pub mod cli;
mod config;
mod report;

pub use batch::{run_manifest, BatchOptions, Manifest, ManifestEntry};
pub use config::{guided_target, CameraConfig, DenoiserConfig, MaskConfig, RefineConfig};
pub use report::{Artifacts, JobEntry, JobReport, JobStatus, Summary};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::detection::{self, BoxDetector, KeypointDetector, MeshPredictor};
use crate::diffusion::{inpaint_observed, Conditioning, LatentImage, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::{compute_alignment, AffineTransform, HandPose2D};
use crate::meshproc::{self, BoxMask, GrayscaleMap, HandMesh, PixelRect};

/// Where the hand mesh for a refinement comes from.
#[derive(Clone, Copy)]
pub enum MeshSource<'a> {
    Mesh(&'a HandMesh),
    /// Mesh predicted behind the double-check gate.
    Gated {
        boxes: &'a dyn BoxDetector,
        keypoints: &'a dyn KeypointDetector,
        predictor: &'a dyn MeshPredictor,
    },
}

impl MeshSource<'_> {
    pub fn resolve(&self, image: &LatentImage) -> Result<HandMesh> {
        match *self {
            MeshSource::Mesh(m) => Ok(m.clone()),
            MeshSource::Gated { boxes, keypoints, predictor } => {
                detection::double_check_predict(boxes, keypoints, predictor, image)
            }
        }
    }
}

/// Result of one refinement, with its intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub image: LatentImage,
    pub guidance: GrayscaleMap,
    pub mask: BoxMask,
}

/// Per-job seed: the first 8 bytes of `SHA-256(seed_le || key)`.
pub fn job_seed(global: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Inpaints `image` inside `mask` under `guidance` with the configured
/// denoiser and schedule. `observer` sees every sampling step.
pub fn refine_with_guidance(
    image: &LatentImage,
    guidance: &GrayscaleMap,
    mask: &BoxMask,
    config: &RefineConfig,
    seed: u64,
    observer: impl FnMut(&StepRecord<'_>),
) -> Result<LatentImage> {
    let schedule = config.noise_schedule()?;
    let denoiser = config.denoiser.build(image, guidance, mask)?;
    let cond = Conditioning::new(guidance).with_extra(config.denoiser.extra());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inpaint_observed(&denoiser, image, mask, &cond, &schedule, &mut rng, observer)
}

/// Mesh → guidance map → padded box mask → inpainting.
pub fn refine(image: &LatentImage, source: MeshSource<'_>, config: &RefineConfig, seed: u64) -> Result<Refined> {
    refine_observed(image, source, config, seed, |_| {})
}

pub fn refine_observed(
    image: &LatentImage,
    source: MeshSource<'_>,
    config: &RefineConfig,
    seed: u64,
    observer: impl FnMut(&StepRecord<'_>),
) -> Result<Refined> {
    let mesh = source.resolve(image)?;
    let cam = config.camera.for_image(image.width(), image.height())?;
    let guidance = meshproc::rasterize(&mesh, &cam)?;
    let mask = meshproc::mask_with_rule(&guidance, config.mask.pad_rule()?)?;
    let out = refine_with_guidance(image, &guidance, &mask, config, seed, observer)?;
    Ok(Refined { image: out, guidance, mask })
}

/// Result of a pose transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub refined: Refined,
    /// Reference-to-input alignment applied to the projected reference mesh.
    pub transform: AffineTransform,
    /// Guidance of the input's own hand, whose region the mask also covers.
    pub original_guidance: GrayscaleMap,
}

fn padded_support(map: &GrayscaleMap, config: &RefineConfig) -> Result<Option<PixelRect>> {
    let rule = config.mask.pad_rule()?;
    Ok(map.support().map(|r| r.padded(rule.pixels_for(&r), map.width(), map.height())))
}

/// Poses the reference hand like the input hand and refines with it.
///
/// The mask is the union of the padded boxes around the original guidance
/// and the aligned reference guidance, so both regions are regenerated. The
/// original guidance comes from `input` when given, otherwise from the
/// reference mesh before alignment.
pub fn transform_pose(
    image: &LatentImage,
    input: Option<MeshSource<'_>>,
    input_pose: &HandPose2D,
    reference_mesh: &HandMesh,
    reference_pose: &HandPose2D,
    config: &RefineConfig,
    seed: u64,
) -> Result<Transformed> {
    transform_pose_observed(image, input, input_pose, reference_mesh, reference_pose, config, seed, |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn transform_pose_observed(
    image: &LatentImage,
    input: Option<MeshSource<'_>>,
    input_pose: &HandPose2D,
    reference_mesh: &HandMesh,
    reference_pose: &HandPose2D,
    config: &RefineConfig,
    seed: u64,
    observer: impl FnMut(&StepRecord<'_>),
) -> Result<Transformed> {
    let cam = config.camera.for_image(image.width(), image.height())?;
    let transform = compute_alignment(reference_pose, input_pose)?;
    let guidance = meshproc::transform_mesh_2d(reference_mesh, &cam, &transform)?;
    let aligned = padded_support(&guidance, config)?.ok_or(Error::OffFrame)?;

    let original_mesh = match input {
        Some(source) => source.resolve(image)?,
        None => reference_mesh.clone(),
    };
    let original_guidance = meshproc::rasterize(&original_mesh, &cam)?;
    let rect = match padded_support(&original_guidance, config)? {
        Some(r) => r.union(&aligned),
        None => aligned,
    };
    let mask = BoxMask::from_rect(image.width(), image.height(), rect);
    let out = refine_with_guidance(image, &guidance, &mask, config, seed, observer)?;
    Ok(Transformed { refined: Refined { image: out, guidance, mask }, transform, original_guidance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn fixture_mesh() -> HandMesh {
        HandMesh::new(
            vec![[-0.2, -0.25, 2.0], [0.25, -0.2, 2.2], [0.2, 0.3, 2.5], [-0.25, 0.2, 2.1]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn fixture_image(w: usize, h: usize) -> LatentImage {
        let data = (0..w * h * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        LatentImage::from_vec(w, h, 3, data).unwrap()
    }

    fn fast_config() -> RefineConfig {
        let mut c = RefineConfig::default();
        c.schedule.steps = 200;
        c.schedule.tau_count = 10;
        c
    }

    #[test]
    fn job_seed_is_stable_and_key_dependent() {
        assert_eq!(job_seed(7, "a.png"), job_seed(7, "a.png"));
        assert_ne!(job_seed(7, "a.png"), job_seed(7, "b.png"));
        assert_ne!(job_seed(7, "a.png"), job_seed(8, "a.png"));
    }

    #[test]
    fn refine_preserves_background_and_is_deterministic() {
        let img = fixture_image(32, 32);
        let mesh = fixture_mesh();
        let c = fast_config();
        let a = refine(&img, MeshSource::Mesh(&mesh), &c, 11).unwrap();
        let b = refine(&img, MeshSource::Mesh(&mesh), &c, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..img.len() {
            let p = i / 3;
            if !a.mask.get(p % 32, p / 32) {
                assert!((a.image.as_slice()[i] - img.as_slice()[i]).abs() <= c.drift_bound);
            }
        }
    }

    #[test]
    fn empty_guidance_is_an_error() {
        let img = fixture_image(16, 16);
        // Entirely off-frame to the right.
        let mesh = HandMesh::new(vec![[5.0, 0.0, 1.0], [6.0, 0.0, 1.0], [5.0, 1.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let r = refine(&img, MeshSource::Mesh(&mesh), &fast_config(), 0);
        assert!(matches!(r, Err(Error::EmptyGuidance)));
    }

    #[test]
    fn identity_transfer_equals_refine() {
        let img = fixture_image(32, 32);
        let mesh = fixture_mesh();
        let c = fast_config();
        let pose = HandPose2D::new(Point2::new(12.0, 20.0), Point2::new(18.0, 9.0)).unwrap();
        let plain = refine(&img, MeshSource::Mesh(&mesh), &c, 5).unwrap();
        let t = transform_pose(&img, Some(MeshSource::Mesh(&mesh)), &pose, &mesh, &pose, &c, 5).unwrap();
        assert!(t.transform.is_identity());
        assert_eq!(t.refined, plain);
    }

    #[test]
    fn off_frame_alignment_is_reported() {
        let img = fixture_image(32, 32);
        let mesh = fixture_mesh();
        let src = HandPose2D::new(Point2::new(16.0, 16.0), Point2::new(20.0, 16.0)).unwrap();
        let dst = HandPose2D::new(Point2::new(500.0, 500.0), Point2::new(504.0, 500.0)).unwrap();
        let r = transform_pose(&img, None, &dst, &mesh, &src, &fast_config(), 0);
        assert!(matches!(r, Err(Error::OffFrame)));
    }
}
