//! Map data model and the offline optimization pipeline: keyframes, map
//! points, 3D lines, the co-visibility graph, visual vocabularies, loop
//! closure, landmark merging, pose graph optimization and global bundle
//! adjustment, plus lossless binary serialization.

mod loops;
mod merge;
mod optimize;
mod serialize;
mod vocabulary;

pub use loops::{detect_loops, retrieve_grouped_candidates, LoopConfig, LoopPair};
pub use merge::{merge_landmarks, MergeReport};
pub use optimize::{
    global_bundle_adjustment, pose_graph_optimize, GbaConfig, GbaReport, PgoConfig, PgoReport,
};
pub use serialize::{read_map, write_map, PLM_MAGIC, PLM_VERSION};
pub use vocabulary::{
    build_junction_vocabulary, build_keypoint_vocabulary, junction_descriptor_indices,
    train_vocabulary, BowVector, VocabularyTree,
};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use pl_features::{Descriptor, FrontendOutput};
use pl_geometry::{CameraIntrinsics, PluckerLine, Pose};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("map file format error: {0}")]
    Format(String),
    #[error("map invariant violated: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feature(#[from] pl_features::FeatureError),
}

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(KeyframeId);
id_type!(PointId);
id_type!(LineId);

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub timestamp: f64,
    /// World→camera pose of the left camera.
    pub pose: Pose,
    /// Left-image features (keyframes are the only frames stored).
    pub features: FrontendOutput,
    /// Landmark link per keypoint index.
    pub point_links: Vec<Option<PointId>>,
    /// Landmark link per 2D line index.
    pub line_links: Vec<Option<LineId>>,
    pub bow: Option<vocabulary::BowVector>,
    pub junction_bow: Option<vocabulary::BowVector>,
}

#[derive(Clone, Debug)]
pub struct MapPoint {
    pub id: PointId,
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
    /// Left-image observations `(keyframe, keypoint index)`.
    pub observations: Vec<(KeyframeId, u32)>,
    /// Right-image observations kept as bare pixels (the right features are
    /// not stored): `(keyframe, pixel)`.
    pub stereo_observations: Vec<(KeyframeId, Vector2<f64>)>,
}

impl MapPoint {
    /// Stereo counts as a second observation.
    pub fn observation_count(&self) -> usize {
        self.observations.len() + self.stereo_observations.len()
    }
}

#[derive(Clone, Debug)]
pub struct MapLine {
    pub id: LineId,
    pub line: PluckerLine,
    pub observations: Vec<(KeyframeId, u32)>,
    pub associated_points: BTreeSet<PointId>,
}

#[derive(Clone, Debug, Default)]
pub struct MapMetadata {
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct SlamMap {
    /// Rectified stereo intrinsics the map was built with.
    pub camera: CameraIntrinsics,
    pub keyframes: BTreeMap<KeyframeId, Keyframe>,
    pub points: BTreeMap<PointId, MapPoint>,
    pub lines: BTreeMap<LineId, MapLine>,
    /// Edge weight (shared landmark count) keyed by `(i, j)` with `i < j`.
    covisibility: BTreeMap<(KeyframeId, KeyframeId), u32>,
    pub keypoint_vocabulary: Option<VocabularyTree>,
    pub junction_vocabulary: Option<VocabularyTree>,
    pub metadata: MapMetadata,
    next_point: u64,
    next_line: u64,
    next_keyframe: u64,
}

impl SlamMap {
    pub fn new(camera: CameraIntrinsics) -> Self {
        Self {
            camera,
            keyframes: BTreeMap::new(),
            points: BTreeMap::new(),
            lines: BTreeMap::new(),
            covisibility: BTreeMap::new(),
            keypoint_vocabulary: None,
            junction_vocabulary: None,
            metadata: MapMetadata::default(),
            next_point: 0,
            next_line: 0,
            next_keyframe: 0,
        }
    }

    pub fn insert_keyframe(
        &mut self,
        timestamp: f64,
        pose: Pose,
        features: FrontendOutput,
    ) -> KeyframeId {
        let id = KeyframeId(self.next_keyframe);
        self.next_keyframe += 1;
        let point_links = vec![None; features.keypoints.len()];
        let line_links = vec![None; features.lines.len()];
        self.keyframes.insert(
            id,
            Keyframe {
                id,
                timestamp,
                pose,
                features,
                point_links,
                line_links,
                bow: None,
                junction_bow: None,
            },
        );
        id
    }

    pub fn new_point(&mut self, position: Vector3<f64>, descriptor: Descriptor) -> PointId {
        let id = PointId(self.next_point);
        self.next_point += 1;
        self.points.insert(
            id,
            MapPoint {
                id,
                position,
                descriptor,
                observations: Vec::new(),
                stereo_observations: Vec::new(),
            },
        );
        id
    }

    pub fn new_line(&mut self, line: PluckerLine) -> LineId {
        let id = LineId(self.next_line);
        self.next_line += 1;
        self.lines.insert(
            id,
            MapLine {
                id,
                line,
                observations: Vec::new(),
                associated_points: BTreeSet::new(),
            },
        );
        id
    }

    /// Links a keypoint of a keyframe to a map point and updates the
    /// co-visibility graph.
    pub fn add_point_observation(&mut self, point: PointId, kf: KeyframeId, keypoint: u32) {
        let observers: Vec<KeyframeId> = {
            let p = self.points.get_mut(&point).expect("point exists");
            let observers = p
                .observations
                .iter()
                .map(|(k, _)| *k)
                .filter(|k| *k != kf)
                .collect();
            p.observations.push((kf, keypoint));
            observers
        };
        let frame = self.keyframes.get_mut(&kf).expect("keyframe exists");
        frame.point_links[keypoint as usize] = Some(point);
        for other in observers {
            *self.covisibility.entry(edge_key(kf, other)).or_insert(0) += 1;
        }
    }

    pub fn add_stereo_observation(&mut self, point: PointId, kf: KeyframeId, pixel: Vector2<f64>) {
        let p = self.points.get_mut(&point).expect("point exists");
        p.stereo_observations.push((kf, pixel));
    }

    pub fn add_line_observation(&mut self, line: LineId, kf: KeyframeId, index: u32) {
        let observers: Vec<KeyframeId> = {
            let l = self.lines.get_mut(&line).expect("line exists");
            let observers = l
                .observations
                .iter()
                .map(|(k, _)| *k)
                .filter(|k| *k != kf)
                .collect();
            l.observations.push((kf, index));
            observers
        };
        let frame = self.keyframes.get_mut(&kf).expect("keyframe exists");
        frame.line_links[index as usize] = Some(line);
        for other in observers {
            *self.covisibility.entry(edge_key(kf, other)).or_insert(0) += 1;
        }
    }

    pub fn covisibility_weight(&self, a: KeyframeId, b: KeyframeId) -> u32 {
        if a == b {
            return 0;
        }
        self.covisibility.get(&edge_key(a, b)).copied().unwrap_or(0)
    }

    pub fn covisibility_edges(&self) -> &BTreeMap<(KeyframeId, KeyframeId), u32> {
        &self.covisibility
    }

    /// Rebuilds the co-visibility graph from the observation lists.
    pub fn recompute_covisibility(&mut self) {
        let mut edges: BTreeMap<(KeyframeId, KeyframeId), u32> = BTreeMap::new();
        let mut count = |observers: Vec<KeyframeId>| {
            for i in 0..observers.len() {
                for j in (i + 1)..observers.len() {
                    if observers[i] != observers[j] {
                        *edges.entry(edge_key(observers[i], observers[j])).or_insert(0) += 1;
                    }
                }
            }
        };
        for p in self.points.values() {
            let mut obs: Vec<KeyframeId> = p.observations.iter().map(|(k, _)| *k).collect();
            obs.sort_unstable();
            obs.dedup();
            count(obs);
        }
        for l in self.lines.values() {
            let mut obs: Vec<KeyframeId> = l.observations.iter().map(|(k, _)| *k).collect();
            obs.sort_unstable();
            obs.dedup();
            count(obs);
        }
        self.covisibility = edges;
    }

    /// Recomputes every 3D line's associated map points from the 2D
    /// keypoint-line associations and the current links.
    pub fn refresh_line_point_associations(&mut self) {
        let mut assoc: BTreeMap<LineId, BTreeSet<PointId>> = BTreeMap::new();
        for kf in self.keyframes.values() {
            for (line_idx, link) in kf.line_links.iter().enumerate() {
                let Some(line_id) = link else { continue };
                let set = assoc.entry(*line_id).or_default();
                for &kp_idx in &kf.features.lines[line_idx].keypoint_ids {
                    if let Some(Some(pid)) = kf.point_links.get(kp_idx) {
                        set.insert(*pid);
                    }
                }
            }
        }
        for line in self.lines.values_mut() {
            line.associated_points = assoc.remove(&line.id).unwrap_or_default();
        }
    }

    /// Structural invariant checks used by tests and after merges.
    pub fn validate(&self) -> Result<(), MapError> {
        for (id, p) in &self.points {
            for (kf, idx) in &p.observations {
                let frame = self
                    .keyframes
                    .get(kf)
                    .ok_or_else(|| MapError::Validation(format!("point {id} observes missing keyframe {kf}")))?;
                if *idx as usize >= frame.features.keypoints.len() {
                    return Err(MapError::Validation(format!(
                        "point {id} references keypoint {idx} out of range in keyframe {kf}"
                    )));
                }
                if frame.point_links[*idx as usize] != Some(*id) {
                    return Err(MapError::Validation(format!(
                        "keyframe {kf} keypoint {idx} does not link back to point {id}"
                    )));
                }
            }
        }
        for (id, l) in &self.lines {
            for (kf, idx) in &l.observations {
                let frame = self
                    .keyframes
                    .get(kf)
                    .ok_or_else(|| MapError::Validation(format!("line {id} observes missing keyframe {kf}")))?;
                if *idx as usize >= frame.features.lines.len() {
                    return Err(MapError::Validation(format!(
                        "line {id} references 2D line {idx} out of range in keyframe {kf}"
                    )));
                }
                if frame.line_links[*idx as usize] != Some(*id) {
                    return Err(MapError::Validation(format!(
                        "keyframe {kf} line {idx} does not link back to line {id}"
                    )));
                }
            }
            for pid in &l.associated_points {
                if !self.points.contains_key(pid) {
                    return Err(MapError::Validation(format!(
                        "line {id} associates missing point {pid}"
                    )));
                }
            }
        }
        // Covisibility weights must equal recomputed shared counts.
        let mut copy = self.clone();
        copy.recompute_covisibility();
        if copy.covisibility != self.covisibility {
            return Err(MapError::Validation(
                "covisibility weights out of sync with observations".into(),
            ));
        }
        Ok(())
    }

}

pub(crate) fn edge_key(a: KeyframeId, b: KeyframeId) -> (KeyframeId, KeyframeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
