//! Double-check hand existence gate.
//!
//! A box detector marks where hands are but cannot tell left from right; a
//! keypoint detector labels left and right keypoints but cannot say whether
//! a hand is really there. A hand is taken to exist only when all four of its
//! labelled keypoints land on detected-box pixels, and the mesh predictor is
//! told which hands to produce.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::meshproc::HandMesh;

/// Keypoint indices `1..=4` belong to the left hand.
pub const LEFT_KEYPOINTS: [usize; 4] = [1, 2, 3, 4];
/// Keypoint indices `5..=8` belong to the right hand.
pub const RIGHT_KEYPOINTS: [usize; 4] = [5, 6, 7, 8];

/// Up to eight labelled keypoints, indexed `1..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabeledKeypoints {
    points: [Option<Point2>; 8],
}

impl LabeledKeypoints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, index: usize, p: Point2) -> Result<Self> {
        self.set(index, Some(p))?;
        Ok(self)
    }

    pub fn set(&mut self, index: usize, p: Option<Point2>) -> Result<()> {
        if !(1..=8).contains(&index) {
            return Err(Error::InvalidParameter(format!("keypoint index {index} outside 1..=8")));
        }
        if p.is_some_and(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("keypoint {index} is not finite")));
        }
        self.points[index - 1] = p;
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<Point2> {
        (1..=8).contains(&index).then(|| self.points[index - 1]).flatten()
    }

    pub fn present(&self) -> usize {
        self.points.iter().flatten().count()
    }
}

/// `{0, 1}` union of detected hand boxes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorBoxMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl DetectorBoxMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![1; width * height] }
    }

    pub fn from_values(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::ShapeMismatch(format!("{} values for a {width}x{height} mask", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("detector mask values must be 0 or 1".into()));
        }
        Ok(Self { width, height, data })
    }

    /// Marks every pixel index `(i, j)` with `x0 <= i <= x1`, `y0 <= j <= y1`
    /// for each box, clipped to the image.
    pub fn from_boxes(width: usize, height: usize, boxes: &[[f64; 4]]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("detector mask must be non-empty".into()));
        }
        let mut mask = Self::zeros(width, height);
        for b in boxes {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("box coordinates must be finite".into()));
            }
            let [x0, y0, x1, y1] = *b;
            let lo = |v: f64| v.ceil().max(0.0);
            let (xa, ya) = (lo(x0), lo(y0));
            let (xb, yb) = (x1.floor().min(width as f64 - 1.0), y1.floor().min(height as f64 - 1.0));
            if xa > xb || ya > yb {
                continue;
            }
            for y in ya as usize..=yb as usize {
                for x in xa as usize..=xb as usize {
                    mask.data[y * width + x] = 1;
                }
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    /// Rounds to the nearest pixel, clamps into the image, and reads the mask.
    pub fn lookup(&self, p: Point2) -> bool {
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, n as f64 - 1.0) as usize;
        self.get(clamp(p.x, self.width), clamp(p.y, self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandExistence {
    pub left: bool,
    pub right: bool,
}

impl HandExistence {
    pub fn any(&self) -> bool {
        self.left || self.right
    }
}

/// How many of a hand's four keypoints must land inside a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExistenceRule {
    pub min_inside: usize,
}

impl Default for ExistenceRule {
    fn default() -> Self {
        Self { min_inside: 4 }
    }
}

fn hand_exists(mask: &DetectorBoxMask, kps: &LabeledKeypoints, indices: &[usize; 4], rule: ExistenceRule) -> bool {
    let inside = indices.iter().filter(|&&i| kps.get(i).is_some_and(|p| mask.lookup(p))).count();
    inside >= rule.min_inside
}

/// Strict gate: a hand exists iff all four of its keypoints are present and
/// inside a detected box. Missing keypoints count as outside.
pub fn judge_existence(mask: &DetectorBoxMask, kps: &LabeledKeypoints) -> HandExistence {
    judge_existence_with(mask, kps, ExistenceRule::default())
}

pub fn judge_existence_with(mask: &DetectorBoxMask, kps: &LabeledKeypoints, rule: ExistenceRule) -> HandExistence {
    HandExistence {
        left: hand_exists(mask, kps, &LEFT_KEYPOINTS, rule),
        right: hand_exists(mask, kps, &RIGHT_KEYPOINTS, rule),
    }
}

pub trait BoxDetector: Sync {
    fn detect_boxes(&self, image: &LatentImage) -> Result<DetectorBoxMask>;
}

pub trait KeypointDetector: Sync {
    fn detect_keypoints(&self, image: &LatentImage) -> Result<LabeledKeypoints>;
}

/// Per-hand mesh predictions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandMeshes {
    pub left: Option<HandMesh>,
    pub right: Option<HandMesh>,
}

pub trait MeshPredictor: Sync {
    fn predict_meshes(&self, image: &LatentImage, existence: HandExistence) -> Result<HandMeshes>;
}

/// Runs both detectors, gates hand existence, and asks the predictor for the
/// surviving hands. Any hand the predictor returns despite a false flag is
/// dropped.
pub fn double_check_predict(
    box_det: &dyn BoxDetector,
    kp_det: &dyn KeypointDetector,
    mesh_pred: &dyn MeshPredictor,
    image: &LatentImage,
) -> Result<HandMesh> {
    double_check_with(box_det, kp_det, mesh_pred, image, ExistenceRule::default()).map(|(mesh, _)| mesh)
}

pub fn double_check_with(
    box_det: &dyn BoxDetector,
    kp_det: &dyn KeypointDetector,
    mesh_pred: &dyn MeshPredictor,
    image: &LatentImage,
    rule: ExistenceRule,
) -> Result<(HandMesh, HandExistence)> {
    let mask = box_det.detect_boxes(image)?;
    let kps = kp_det.detect_keypoints(image)?;
    let existence = judge_existence_with(&mask, &kps, rule);
    if !existence.any() {
        return Err(Error::NoHandDetected);
    }
    let predicted = mesh_pred.predict_meshes(image, existence)?;
    let kept = [predicted.left.filter(|_| existence.left), predicted.right.filter(|_| existence.right)];
    let mesh = kept.iter().flatten().fold(HandMesh::default(), |acc, m| acc.merge(m));
    if mesh.is_empty() {
        return Err(Error::NoHandDetected);
    }
    Ok((mesh, existence))
}

/// File-driven detector results for one image.
///
/// ```json
/// {"boxes": [[x0, y0, x1, y1]], "keypoints": {"1": [x, y]},
///  "meshes": {"left": "left.json", "right": null}}
/// ```
///
/// Mesh paths are relative to the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSidecar {
    #[serde(default)]
    pub boxes: Vec<[f64; 4]>,
    #[serde(default)]
    pub keypoints: BTreeMap<String, Point2>,
    #[serde(default)]
    pub meshes: SidecarMeshes,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SidecarMeshes {
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
}

impl DetectorSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path.as_ref())
    }

    pub fn labeled_keypoints(&self) -> Result<LabeledKeypoints> {
        let mut kps = LabeledKeypoints::new();
        for (key, p) in &self.keypoints {
            let index: usize =
                key.parse().map_err(|_| Error::InvalidParameter(format!("keypoint key {key:?} is not an index")))?;
            kps.set(index, Some(*p))?;
        }
        Ok(kps)
    }
}

/// Detector and predictor doubles that replay a [`DetectorSidecar`].
#[derive(Debug, Clone)]
pub struct SidecarDetectors {
    sidecar: DetectorSidecar,
    left: Option<HandMesh>,
    right: Option<HandMesh>,
}

impl SidecarDetectors {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = DetectorSidecar::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let load = |p: &Option<PathBuf>| p.as_ref().map(|p| HandMesh::load(dir.join(p))).transpose();
        let left = load(&sidecar.meshes.left)?;
        let right = load(&sidecar.meshes.right)?;
        Ok(Self { sidecar, left, right })
    }

    pub fn from_parts(sidecar: DetectorSidecar, left: Option<HandMesh>, right: Option<HandMesh>) -> Self {
        Self { sidecar, left, right }
    }
}

impl BoxDetector for SidecarDetectors {
    fn detect_boxes(&self, image: &LatentImage) -> Result<DetectorBoxMask> {
        DetectorBoxMask::from_boxes(image.width(), image.height(), &self.sidecar.boxes)
    }
}

impl KeypointDetector for SidecarDetectors {
    fn detect_keypoints(&self, _image: &LatentImage) -> Result<LabeledKeypoints> {
        self.sidecar.labeled_keypoints()
    }
}

impl MeshPredictor for SidecarDetectors {
    /// Replays both meshes regardless of the flags, like a predictor that
    /// hallucinates a second hand; the gate removes the unflagged one.
    fn predict_meshes(&self, _image: &LatentImage, _existence: HandExistence) -> Result<HandMeshes> {
        Ok(HandMeshes { left: self.left.clone(), right: self.right.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn all_keypoints(p: Point2) -> LabeledKeypoints {
        (1..=8).fold(LabeledKeypoints::new(), |k, i| k.with(i, p).unwrap())
    }

    #[test]
    fn vacuous_and_empty_masks() {
        let kps = all_keypoints(Point2::new(3.0, 9.0));
        assert_eq!(judge_existence(&DetectorBoxMask::ones(10, 10), &kps), HandExistence { left: true, right: true });
        assert_eq!(judge_existence(&DetectorBoxMask::zeros(10, 10), &kps), HandExistence { left: false, right: false });
    }

    #[test]
    fn right_hand_keypoint_outside() {
        let mask = DetectorBoxMask::from_boxes(32, 32, &[[2.0, 2.0, 12.0, 12.0]]).unwrap();
        let mut kps = all_keypoints(Point2::new(5.0, 5.0));
        kps.set(6, Some(Point2::new(20.0, 20.0))).unwrap();
        assert_eq!(judge_existence(&mask, &kps), HandExistence { left: true, right: false });
    }

    #[test]
    fn missing_keypoint_counts_as_outside() {
        let mut kps = all_keypoints(Point2::new(1.0, 1.0));
        kps.set(2, None).unwrap();
        let e = judge_existence(&DetectorBoxMask::ones(4, 4), &kps);
        assert_eq!(e, HandExistence { left: false, right: true });
        let loose = judge_existence_with(&DetectorBoxMask::ones(4, 4), &kps, ExistenceRule { min_inside: 3 });
        assert!(loose.left);
    }

    #[test]
    fn rounding_and_clamping() {
        let mut mask = DetectorBoxMask::zeros(5, 5);
        mask.set(4, 0, true);
        assert!(mask.lookup(Point2::new(3.6, -7.0)));
        assert!(mask.lookup(Point2::new(100.0, 0.4)));
        assert!(!mask.lookup(Point2::new(3.4, 0.0)));
    }

    #[test]
    fn boxes_cover_inclusive_pixels() {
        let m = DetectorBoxMask::from_boxes(6, 6, &[[1.0, 2.0, 3.0, 2.0], [4.5, 4.5, 9.0, 9.0]]).unwrap();
        let on: Vec<_> = (0..36).filter(|i| m.values()[*i] == 1).map(|i| (i % 6, i / 6)).collect();
        assert_eq!(on, vec![(1, 2), (2, 2), (3, 2), (5, 5)]);
    }

    #[derive(Default)]
    struct RecordingPredictor {
        seen: Mutex<Vec<HandExistence>>,
    }

    impl MeshPredictor for RecordingPredictor {
        fn predict_meshes(&self, _: &LatentImage, existence: HandExistence) -> Result<HandMeshes> {
            self.seen.lock().unwrap().push(existence);
            let tri =
                |z: f64| HandMesh::new(vec![[0.0, 0.0, z], [1.0, 0.0, z], [0.0, 1.0, z]], vec![[0, 1, 2]]).unwrap();
            Ok(HandMeshes { left: Some(tri(1.0)), right: Some(tri(2.0)) })
        }
    }

    #[test]
    fn flags_forwarded_and_spurious_hand_dropped() {
        let sidecar: DetectorSidecar = serde_json::from_str(
            r#"{"boxes": [[0, 0, 10, 10]],
                "keypoints": {"1": [1, 1], "2": [2, 2], "3": [3, 3], "4": [4, 4], "5": [20, 20]}}"#,
        )
        .unwrap();
        let det = SidecarDetectors::from_parts(sidecar, None, None);
        let pred = RecordingPredictor::default();
        let image = LatentImage::zeros(32, 32, 3);
        let (mesh, existence) = double_check_with(&det, &det, &pred, &image, ExistenceRule::default()).unwrap();
        assert_eq!(existence, HandExistence { left: true, right: false });
        assert_eq!(*pred.seen.lock().unwrap(), vec![existence]);
        assert_eq!(mesh.faces().len(), 1);
        assert!(mesh.vertices().iter().all(|v| v[2] == 1.0));
    }

    #[test]
    fn no_hand_is_an_error() {
        let det = SidecarDetectors::from_parts(
            DetectorSidecar { boxes: vec![], keypoints: BTreeMap::new(), meshes: SidecarMeshes::default() },
            None,
            None,
        );
        let pred = RecordingPredictor::default();
        let r = double_check_predict(&det, &det, &pred, &LatentImage::zeros(8, 8, 1));
        assert!(matches!(r, Err(Error::NoHandDetected)));
        assert!(pred.seen.lock().unwrap().is_empty());
    }

    #[test]
    fn bad_keypoint_keys() {
        let s: DetectorSidecar = serde_json::from_str(r#"{"keypoints": {"9": [1, 1]}}"#).unwrap();
        assert!(s.labeled_keypoints().is_err());
        let s: DetectorSidecar = serde_json::from_str(r#"{"keypoints": {"left": [1, 1]}}"#).unwrap();
        assert!(s.labeled_keypoints().is_err());
    }
}
