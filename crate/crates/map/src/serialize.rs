//! "PLM1" binary map format: little-endian header with a section table,
//! then keyframes, points, lines, covisibility, vocabularies and metadata.
//! See docs/FORMATS.md for the byte map. Geometry is stored as f64,
//! descriptors as f32; loading and re-saving a file is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector2, Vector3};
use pl_features::{read_frontend_output, write_frontend_output};
use pl_geometry::{CameraIntrinsics, PluckerLine, Pose};

use crate::vocabulary::{BowVector, VocabNode, VocabularyTree};
use crate::{Keyframe, KeyframeId, LineId, MapError, MapLine, MapMetadata, MapPoint, PointId, SlamMap};

pub const PLM_MAGIC: &[u8; 4] = b"PLM1";
pub const PLM_VERSION: u32 = 1;

const TAG_KEYFRAMES: &[u8; 4] = b"KFRM";
const TAG_POINTS: &[u8; 4] = b"PNTS";
const TAG_LINES: &[u8; 4] = b"LINS";
const TAG_COVISIBILITY: &[u8; 4] = b"COVI";
const TAG_VOCAB_KEYPOINT: &[u8; 4] = b"VOCK";
const TAG_VOCAB_JUNCTION: &[u8; 4] = b"VOCJ";
const TAG_METADATA: &[u8; 4] = b"META";

pub fn write_map<W: Write>(mut w: W, map: &SlamMap) -> Result<(), MapError> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();
    sections.push((*TAG_KEYFRAMES, encode_keyframes(map)?));
    sections.push((*TAG_POINTS, encode_points(map)?));
    sections.push((*TAG_LINES, encode_lines(map)?));
    sections.push((*TAG_COVISIBILITY, encode_covisibility(map)?));
    if let Some(vocab) = &map.keypoint_vocabulary {
        sections.push((*TAG_VOCAB_KEYPOINT, encode_vocabulary(vocab)?));
    }
    if let Some(vocab) = &map.junction_vocabulary {
        sections.push((*TAG_VOCAB_JUNCTION, encode_vocabulary(vocab)?));
    }
    sections.push((*TAG_METADATA, encode_metadata(map)?));

    w.write_all(PLM_MAGIC)?;
    w.write_u32::<LittleEndian>(PLM_VERSION)?;
    w.write_u32::<LittleEndian>(sections.len() as u32)?;
    // Section table: tag, offset from file start, length.
    let header_len = 4 + 4 + 4 + sections.len() * (4 + 8 + 8);
    let mut offset = header_len as u64;
    for (tag, payload) in &sections {
        w.write_all(tag)?;
        w.write_u64::<LittleEndian>(offset)?;
        w.write_u64::<LittleEndian>(payload.len() as u64)?;
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        w.write_all(payload)?;
    }
    Ok(())
}

pub fn read_map<R: Read>(mut r: R) -> Result<SlamMap, MapError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PLM_MAGIC {
        return Err(MapError::Format(format!(
            "bad magic {magic:?}, expected {PLM_MAGIC:?}"
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != PLM_VERSION {
        return Err(MapError::Format(format!("unsupported version {version}")));
    }
    let n_sections = r.read_u32::<LittleEndian>()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let offset = r.read_u64::<LittleEndian>()?;
        let length = r.read_u64::<LittleEndian>()?;
        table.push((tag, offset, length));
    }
    // Sections are stored in table order back to back; read sequentially.
    let mut payloads: BTreeMap<[u8; 4], Vec<u8>> = BTreeMap::new();
    for (tag, _, length) in &table {
        let mut buf = vec![0u8; *length as usize];
        r.read_exact(&mut buf)?;
        payloads.insert(*tag, buf);
    }

    let take = |tag: &[u8; 4]| -> Result<&Vec<u8>, MapError> {
        payloads
            .get(tag)
            .ok_or_else(|| MapError::Format(format!("missing section {tag:?}")))
    };

    let (keyframes, camera, next_keyframe) = decode_keyframes(take(TAG_KEYFRAMES)?.as_slice())?;
    let (points, next_point) = decode_points(take(TAG_POINTS)?.as_slice())?;
    let (lines, next_line) = decode_lines(take(TAG_LINES)?.as_slice())?;
    let covisibility = decode_covisibility(take(TAG_COVISIBILITY)?.as_slice())?;
    let keypoint_vocabulary = payloads
        .get(TAG_VOCAB_KEYPOINT)
        .map(|p| decode_vocabulary(p.as_slice()))
        .transpose()?;
    let junction_vocabulary = payloads
        .get(TAG_VOCAB_JUNCTION)
        .map(|p| decode_vocabulary(p.as_slice()))
        .transpose()?;
    let metadata = decode_metadata(take(TAG_METADATA)?.as_slice())?;

    Ok(SlamMap {
        camera,
        keyframes,
        points,
        lines,
        covisibility,
        keypoint_vocabulary,
        junction_vocabulary,
        metadata,
        next_point,
        next_line,
        next_keyframe,
    })
}

fn write_pose<W: Write>(w: &mut W, pose: &Pose) -> std::io::Result<()> {
    let q = pose.rotation();
    for v in [q.w, q.i, q.j, q.k] {
        w.write_f64::<LittleEndian>(v)?;
    }
    for v in pose.translation().iter() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_pose<R: Read>(r: &mut R) -> Result<Pose, MapError> {
    let w = r.read_f64::<LittleEndian>()?;
    let i = r.read_f64::<LittleEndian>()?;
    let j = r.read_f64::<LittleEndian>()?;
    let k = r.read_f64::<LittleEndian>()?;
    let t = read_vec3(r)?;
    let q = nalgebra::Quaternion::new(w, i, j, k);
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err(MapError::Format("pose quaternion is not unit".into()));
    }
    // Skip renormalization so loading and re-saving is bit-exact.
    Ok(Pose::new(nalgebra::UnitQuaternion::new_unchecked(q), t))
}

fn read_vec3<R: Read>(r: &mut R) -> Result<Vector3<f64>, MapError> {
    Ok(Vector3::new(
        r.read_f64::<LittleEndian>()?,
        r.read_f64::<LittleEndian>()?,
        r.read_f64::<LittleEndian>()?,
    ))
}

fn write_bow<W: Write>(w: &mut W, bow: &Option<BowVector>) -> std::io::Result<()> {
    match bow {
        None => w.write_u8(0)?,
        Some(b) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(b.weights.len() as u32)?;
            for (word, weight) in &b.weights {
                w.write_u32::<LittleEndian>(*word)?;
                w.write_f64::<LittleEndian>(*weight)?;
            }
        }
    }
    Ok(())
}

fn read_bow<R: Read>(r: &mut R) -> Result<Option<BowVector>, MapError> {
    if r.read_u8()? == 0 {
        return Ok(None);
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut weights = BTreeMap::new();
    for _ in 0..n {
        let word = r.read_u32::<LittleEndian>()?;
        let weight = r.read_f64::<LittleEndian>()?;
        weights.insert(word, weight);
    }
    Ok(Some(BowVector { weights }))
}

fn encode_keyframes(map: &SlamMap) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    // Camera intrinsics live with the keyframe section.
    let c = &map.camera;
    for v in [c.fx, c.fy, c.cx, c.cy, c.baseline] {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_u32::<LittleEndian>(c.width)?;
    w.write_u32::<LittleEndian>(c.height)?;
    w.write_u64::<LittleEndian>(map.next_keyframe)?;
    w.write_u32::<LittleEndian>(map.keyframes.len() as u32)?;
    for kf in map.keyframes.values() {
        w.write_u64::<LittleEndian>(kf.id.0)?;
        w.write_f64::<LittleEndian>(kf.timestamp)?;
        write_pose(&mut w, &kf.pose)?;
        let mut features = Vec::new();
        write_frontend_output(&mut features, &kf.features)?;
        w.write_u32::<LittleEndian>(features.len() as u32)?;
        w.write_all(&features)?;
        w.write_u32::<LittleEndian>(kf.point_links.len() as u32)?;
        for link in &kf.point_links {
            w.write_i64::<LittleEndian>(link.map_or(-1, |p| p.0 as i64))?;
        }
        w.write_u32::<LittleEndian>(kf.line_links.len() as u32)?;
        for link in &kf.line_links {
            w.write_i64::<LittleEndian>(link.map_or(-1, |l| l.0 as i64))?;
        }
        write_bow(&mut w, &kf.bow)?;
        write_bow(&mut w, &kf.junction_bow)?;
    }
    Ok(w)
}

type KeyframesDecoded = (BTreeMap<KeyframeId, Keyframe>, CameraIntrinsics, u64);

fn decode_keyframes(mut r: &[u8]) -> Result<KeyframesDecoded, MapError> {
    let fx = r.read_f64::<LittleEndian>()?;
    let fy = r.read_f64::<LittleEndian>()?;
    let cx = r.read_f64::<LittleEndian>()?;
    let cy = r.read_f64::<LittleEndian>()?;
    let baseline = r.read_f64::<LittleEndian>()?;
    let width = r.read_u32::<LittleEndian>()?;
    let height = r.read_u32::<LittleEndian>()?;
    let camera = CameraIntrinsics::new(fx, fy, cx, cy, width, height, baseline)
        .map_err(|e| MapError::Format(format!("bad intrinsics: {e}")))?;
    let next_keyframe = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut keyframes = BTreeMap::new();
    for _ in 0..count {
        let id = KeyframeId(r.read_u64::<LittleEndian>()?);
        let timestamp = r.read_f64::<LittleEndian>()?;
        let pose = read_pose(&mut r)?;
        let feat_len = r.read_u32::<LittleEndian>()? as usize;
        let (feat_buf, rest) = r.split_at(feat_len);
        let features = read_frontend_output(feat_buf)?;
        r = rest;
        let n_p = r.read_u32::<LittleEndian>()? as usize;
        let mut point_links = Vec::with_capacity(n_p);
        for _ in 0..n_p {
            let v = r.read_i64::<LittleEndian>()?;
            point_links.push((v >= 0).then_some(PointId(v as u64)));
        }
        let n_l = r.read_u32::<LittleEndian>()? as usize;
        let mut line_links = Vec::with_capacity(n_l);
        for _ in 0..n_l {
            let v = r.read_i64::<LittleEndian>()?;
            line_links.push((v >= 0).then_some(LineId(v as u64)));
        }
        let bow = read_bow(&mut r)?;
        let junction_bow = read_bow(&mut r)?;
        keyframes.insert(
            id,
            Keyframe {
                id,
                timestamp,
                pose,
                features,
                point_links,
                line_links,
                bow,
                junction_bow,
            },
        );
    }
    Ok((keyframes, camera, next_keyframe))
}

fn encode_points(map: &SlamMap) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    w.write_u64::<LittleEndian>(map.next_point)?;
    w.write_u32::<LittleEndian>(map.points.len() as u32)?;
    for p in map.points.values() {
        w.write_u64::<LittleEndian>(p.id.0)?;
        for v in p.position.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.write_u32::<LittleEndian>(p.descriptor.dim() as u32)?;
        for v in p.descriptor.values() {
            w.write_f32::<LittleEndian>(*v)?;
        }
        w.write_u32::<LittleEndian>(p.observations.len() as u32)?;
        for (kf, idx) in &p.observations {
            w.write_u64::<LittleEndian>(kf.0)?;
            w.write_u32::<LittleEndian>(*idx)?;
        }
        w.write_u32::<LittleEndian>(p.stereo_observations.len() as u32)?;
        for (kf, px) in &p.stereo_observations {
            w.write_u64::<LittleEndian>(kf.0)?;
            w.write_f64::<LittleEndian>(px.x)?;
            w.write_f64::<LittleEndian>(px.y)?;
        }
    }
    Ok(w)
}

fn decode_points(mut r: &[u8]) -> Result<(BTreeMap<PointId, MapPoint>, u64), MapError> {
    let next_point = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut points = BTreeMap::new();
    for _ in 0..count {
        let id = PointId(r.read_u64::<LittleEndian>()?);
        let position = read_vec3(&mut r)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let mut desc = Vec::with_capacity(dim);
        for _ in 0..dim {
            desc.push(r.read_f32::<LittleEndian>()?);
        }
        let n_obs = r.read_u32::<LittleEndian>()? as usize;
        let mut observations = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let kf = KeyframeId(r.read_u64::<LittleEndian>()?);
            let idx = r.read_u32::<LittleEndian>()?;
            observations.push((kf, idx));
        }
        let n_st = r.read_u32::<LittleEndian>()? as usize;
        let mut stereo_observations = Vec::with_capacity(n_st);
        for _ in 0..n_st {
            let kf = KeyframeId(r.read_u64::<LittleEndian>()?);
            let x = r.read_f64::<LittleEndian>()?;
            let y = r.read_f64::<LittleEndian>()?;
            stereo_observations.push((kf, Vector2::new(x, y)));
        }
        points.insert(
            id,
            MapPoint {
                id,
                position,
                descriptor: pl_features::Descriptor::from_normalized(desc),
                observations,
                stereo_observations,
            },
        );
    }
    Ok((points, next_point))
}

fn encode_lines(map: &SlamMap) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    w.write_u64::<LittleEndian>(map.next_line)?;
    w.write_u32::<LittleEndian>(map.lines.len() as u32)?;
    for l in map.lines.values() {
        w.write_u64::<LittleEndian>(l.id.0)?;
        for v in l.line.moment().iter().chain(l.line.direction().iter()) {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.write_u32::<LittleEndian>(l.observations.len() as u32)?;
        for (kf, idx) in &l.observations {
            w.write_u64::<LittleEndian>(kf.0)?;
            w.write_u32::<LittleEndian>(*idx)?;
        }
        w.write_u32::<LittleEndian>(l.associated_points.len() as u32)?;
        for p in &l.associated_points {
            w.write_u64::<LittleEndian>(p.0)?;
        }
    }
    Ok(w)
}

fn decode_lines(mut r: &[u8]) -> Result<(BTreeMap<LineId, MapLine>, u64), MapError> {
    let next_line = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut lines = BTreeMap::new();
    for _ in 0..count {
        let id = LineId(r.read_u64::<LittleEndian>()?);
        let n = read_vec3(&mut r)?;
        let v = read_vec3(&mut r)?;
        let line = PluckerLine::new(n, v)
            .map_err(|e| MapError::Format(format!("invalid Plücker line in file: {e}")))?;
        let n_obs = r.read_u32::<LittleEndian>()? as usize;
        let mut observations = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let kf = KeyframeId(r.read_u64::<LittleEndian>()?);
            let idx = r.read_u32::<LittleEndian>()?;
            observations.push((kf, idx));
        }
        let n_assoc = r.read_u32::<LittleEndian>()? as usize;
        let mut associated_points = BTreeSet::new();
        for _ in 0..n_assoc {
            associated_points.insert(PointId(r.read_u64::<LittleEndian>()?));
        }
        lines.insert(
            id,
            MapLine {
                id,
                line,
                observations,
                associated_points,
            },
        );
    }
    Ok((lines, next_line))
}

fn encode_covisibility(map: &SlamMap) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    let edges = map.covisibility_edges();
    w.write_u32::<LittleEndian>(edges.len() as u32)?;
    for ((a, b), weight) in edges {
        w.write_u64::<LittleEndian>(a.0)?;
        w.write_u64::<LittleEndian>(b.0)?;
        w.write_u32::<LittleEndian>(*weight)?;
    }
    Ok(w)
}

type CovisibilityDecoded = BTreeMap<(KeyframeId, KeyframeId), u32>;

fn decode_covisibility(mut r: &[u8]) -> Result<CovisibilityDecoded, MapError> {
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut edges = BTreeMap::new();
    for _ in 0..count {
        let a = KeyframeId(r.read_u64::<LittleEndian>()?);
        let b = KeyframeId(r.read_u64::<LittleEndian>()?);
        let weight = r.read_u32::<LittleEndian>()?;
        edges.insert((a, b), weight);
    }
    Ok(edges)
}

fn encode_vocabulary(vocab: &VocabularyTree) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    w.write_u32::<LittleEndian>(vocab.branching)?;
    w.write_u32::<LittleEndian>(vocab.depth)?;
    w.write_u32::<LittleEndian>(vocab.dim)?;
    w.write_u32::<LittleEndian>(vocab.nodes.len() as u32)?;
    for node in &vocab.nodes {
        w.write_u32::<LittleEndian>(node.children.len() as u32)?;
        for c in &node.children {
            w.write_u32::<LittleEndian>(*c)?;
        }
        w.write_i64::<LittleEndian>(node.word.map_or(-1, |x| x as i64))?;
        w.write_u32::<LittleEndian>(node.centroid.len() as u32)?;
        for v in &node.centroid {
            w.write_f32::<LittleEndian>(*v)?;
        }
    }
    w.write_u32::<LittleEndian>(vocab.idf.len() as u32)?;
    for v in &vocab.idf {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(w)
}

fn decode_vocabulary(mut r: &[u8]) -> Result<VocabularyTree, MapError> {
    let branching = r.read_u32::<LittleEndian>()?;
    let depth = r.read_u32::<LittleEndian>()?;
    let dim = r.read_u32::<LittleEndian>()?;
    let n_nodes = r.read_u32::<LittleEndian>()? as usize;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let n_children = r.read_u32::<LittleEndian>()? as usize;
        let mut children = Vec::with_capacity(n_children);
        for _ in 0..n_children {
            children.push(r.read_u32::<LittleEndian>()?);
        }
        let word_raw = r.read_i64::<LittleEndian>()?;
        let n_cent = r.read_u32::<LittleEndian>()? as usize;
        let mut centroid = Vec::with_capacity(n_cent);
        for _ in 0..n_cent {
            centroid.push(r.read_f32::<LittleEndian>()?);
        }
        nodes.push(VocabNode {
            centroid,
            children,
            word: (word_raw >= 0).then_some(word_raw as u32),
        });
    }
    let n_words = r.read_u32::<LittleEndian>()? as usize;
    let mut idf = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        idf.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(VocabularyTree {
        branching,
        depth,
        dim,
        nodes,
        idf,
    })
}

fn encode_metadata(map: &SlamMap) -> Result<Vec<u8>, MapError> {
    let mut w = Vec::new();
    let hash = map.metadata.config_hash.as_bytes();
    w.write_u32::<LittleEndian>(hash.len() as u32)?;
    w.write_all(hash)?;
    Ok(w)
}

fn decode_metadata(mut r: &[u8]) -> Result<MapMetadata, MapError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(MapMetadata {
        config_hash: String::from_utf8(buf)
            .map_err(|_| MapError::Format("metadata hash is not utf-8".into()))?,
    })
}
