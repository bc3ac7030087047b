use std::collections::HashSet;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{Artifacts, JobEntry, JobReport, JobStatus};
use super::{job_seed, refine_observed, transform_pose_observed, MeshSource, RefineConfig, Refined};
use crate::detection::SidecarDetectors;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::geometry::HandPose2D;
use crate::io;
use crate::meshproc::{GrayscaleMap, HandMesh};

/// One manifest row. Paths are relative to the manifest's directory.
///
/// Rows with `reference_mesh` and `reference_pose` are pose transfers and
/// also need `pose`, the input hand's pose. `mesh` or `detectors` supply the
/// input hand; a plain refinement needs one of them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub detectors: Option<PathBuf>,
    #[serde(default)]
    pub reference_mesh: Option<PathBuf>,
    #[serde(default)]
    pub reference_pose: Option<PathBuf>,
    #[serde(default)]
    pub pose: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let entries = io::read_json(path)?;
        Ok(Self { base_dir: path.parent().unwrap_or(Path::new("")).to_path_buf(), entries })
    }

    /// A one-row manifest rooted at the image's directory, so the job key and
    /// artifact names depend only on the file name.
    pub fn single(image: &Path, mut entry: ManifestEntry) -> Self {
        let base_dir = image.parent().unwrap_or(Path::new("")).to_path_buf();
        entry.image = image.file_name().map(PathBuf::from).unwrap_or_else(|| image.to_path_buf());
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = std::path::absolute(&*p).unwrap_or_else(|_| p.clone());
            }
        };
        rebase(&mut entry.mesh);
        rebase(&mut entry.detectors);
        rebase(&mut entry.reference_mesh);
        rebase(&mut entry.reference_pose);
        rebase(&mut entry.pose);
        Self { base_dir, entries: vec![entry] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchOptions {
    pub out_dir: PathBuf,
    /// Also write the float output and every sampling step as sidecars.
    pub emit_intermediates: bool,
    pub report_timing: bool,
}

/// Runs every manifest row as an independent job and collects the report.
/// Results do not depend on scheduling: each job draws from its own seed.
pub fn run_manifest(manifest: &Manifest, config: &RefineConfig, opts: &BatchOptions) -> JobReport {
    let mut seen = HashSet::new();
    let duplicate: Vec<bool> = manifest.entries.iter().map(|e| !seen.insert(job_key(&e.image))).collect();
    let entries = manifest
        .entries
        .par_iter()
        .zip(duplicate)
        .map(|(entry, dup)| {
            if dup {
                return failed(entry, job_seed(config.seed, &job_key(&entry.image)), "duplicate manifest entry".into());
            }
            run_job(entry, &manifest.base_dir, config, opts)
        })
        .collect();
    JobReport::from_entries(entries)
}

fn job_key(image: &Path) -> String {
    let parts: Vec<_> = image.components().map(|c| c.as_os_str().to_string_lossy()).collect();
    parts.join("/")
}

fn failed(entry: &ManifestEntry, seed: u64, message: String) -> JobEntry {
    JobEntry {
        image: entry.image.clone(),
        status: JobStatus::Error,
        seed,
        artifacts: Artifacts::default(),
        message: Some(message),
        elapsed_ms: None,
    }
}

fn run_job(entry: &ManifestEntry, base: &Path, config: &RefineConfig, opts: &BatchOptions) -> JobEntry {
    let seed = job_seed(config.seed, &job_key(&entry.image));
    let start = Instant::now();
    let result = execute(entry, base, config, seed, opts);
    let elapsed_ms = opts.report_timing.then(|| start.elapsed().as_millis() as u64);
    let (status, artifacts, message) = match result {
        Ok(artifacts) => (JobStatus::Refined, artifacts, None),
        Err(Error::NoHandDetected) => {
            (JobStatus::SkippedNoHand, Artifacts::default(), Some(Error::NoHandDetected.to_string()))
        }
        Err(e) => (JobStatus::Error, Artifacts::default(), Some(e.to_string())),
    };
    JobEntry { image: entry.image.clone(), status, seed, artifacts, message, elapsed_ms }
}

/// Artifact stem inside the output directory: the image path without its
/// extension, or just the file stem when the path would leave the directory.
fn artifact_stem(image: &Path) -> PathBuf {
    let contained = image.components().all(|c| matches!(c, Component::Normal(_)));
    let stem = image.file_stem().unwrap_or(image.as_os_str());
    match image.parent() {
        Some(parent) if contained => parent.join(stem),
        _ => PathBuf::from(stem),
    }
}

enum InputHand {
    Mesh(HandMesh),
    Detectors(SidecarDetectors),
}

impl InputHand {
    fn source(&self) -> MeshSource<'_> {
        match self {
            InputHand::Mesh(m) => MeshSource::Mesh(m),
            InputHand::Detectors(d) => MeshSource::Gated { boxes: d, keypoints: d, predictor: d },
        }
    }
}

fn load_hand(entry: &ManifestEntry, base: &Path) -> Result<Option<InputHand>> {
    match (&entry.mesh, &entry.detectors) {
        (Some(_), Some(_)) => Err(Error::InvalidParameter("give either mesh or detectors, not both".into())),
        (Some(m), None) => Ok(Some(InputHand::Mesh(HandMesh::load(base.join(m))?))),
        (None, Some(d)) => Ok(Some(InputHand::Detectors(SidecarDetectors::load(base.join(d))?))),
        (None, None) => Ok(None),
    }
}

fn execute(
    entry: &ManifestEntry,
    base: &Path,
    config: &RefineConfig,
    seed: u64,
    opts: &BatchOptions,
) -> Result<Artifacts> {
    let image = io::read_image(&base.join(&entry.image))?;
    let hand = load_hand(entry, base)?;
    let mut steps: Vec<(usize, LatentImage)> = Vec::new();
    let observer = |r: &crate::diffusion::StepRecord<'_>| {
        if opts.emit_intermediates {
            steps.push((r.to_step, r.state.clone()));
        }
    };

    let (refined, original): (Refined, Option<GrayscaleMap>) = match (&entry.reference_mesh, &entry.reference_pose) {
        (None, None) => {
            let hand = hand.ok_or_else(|| Error::InvalidParameter("refinement needs a mesh or detectors".into()))?;
            (refine_observed(&image, hand.source(), config, seed, observer)?, None)
        }
        (Some(rm), Some(rp)) => {
            let pose = entry
                .pose
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("pose transfer needs the input pose".into()))?;
            let input_pose: HandPose2D = io::read_json(&base.join(pose))?;
            let reference_pose: HandPose2D = io::read_json(&base.join(rp))?;
            let reference_mesh = HandMesh::load(base.join(rm))?;
            let t = transform_pose_observed(
                &image,
                hand.as_ref().map(InputHand::source),
                &input_pose,
                &reference_mesh,
                &reference_pose,
                config,
                seed,
                observer,
            )?;
            (t.refined, Some(t.original_guidance))
        }
        _ => return Err(Error::InvalidParameter("reference_mesh and reference_pose go together".into())),
    };

    let stem = artifact_stem(&entry.image);
    let name = |suffix: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    let target = |rel: &Path| -> Result<PathBuf> {
        let p = opts.out_dir.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    };

    let mut artifacts = Artifacts {
        output: Some(name(".refined.png")),
        guidance: Some(name(".guidance.pgm")),
        mask: Some(name(".mask.pgm")),
        intermediates: Vec::new(),
    };
    io::write_image(&target(artifacts.output.as_ref().unwrap())?, &refined.image)?;
    io::write_gray(&target(artifacts.guidance.as_ref().unwrap())?, &refined.guidance)?;
    io::write_mask(&target(artifacts.mask.as_ref().unwrap())?, &refined.mask)?;

    if opts.emit_intermediates {
        let rel = name(".refined.f32");
        io::write_f32_sidecar(&target(&rel)?, &refined.image)?;
        artifacts.intermediates.push(rel);
        if let Some(original) = &original {
            let rel = name(".original-guidance.pgm");
            io::write_gray(&target(&rel)?, original)?;
            artifacts.intermediates.push(rel);
        }
        for (step, state) in &steps {
            let rel = name(&format!(".step-{step:04}.f32"));
            io::write_f32_sidecar(&target(&rel)?, state)?;
            artifacts.intermediates.push(rel);
        }
    }
    Ok(artifacts)
}
