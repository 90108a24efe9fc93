//! Ground-truth 3D structure: wireframe boxes, landmark points and their
//! stable descriptors.

use nalgebra::Vector3;
use pl_features::Descriptor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug)]
pub struct WorldSpec {
    pub box_count: usize,
    /// Side length of the cube region the structure lives in (meters).
    pub extent: f64,
    /// Number of free-floating landmark points.
    pub free_points: usize,
    /// Landmark points sampled on each wireframe edge.
    pub points_per_edge: usize,
    pub descriptor_dim: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            box_count: 6,
            extent: 7.0,
            free_points: 180,
            points_per_edge: 4,
            descriptor_dim: 64,
        }
    }
}

/// A wireframe edge with its two endpoint vertex ids.
#[derive(Clone, Copy, Debug)]
pub struct WorldLine {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub vertices: (usize, usize),
}

/// A structural corner: junction ground truth.
#[derive(Clone, Debug)]
pub struct WorldVertex {
    pub position: Vector3<f64>,
    pub lines: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct WorldPoint {
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
    /// Set when the point lies on a wireframe edge.
    pub on_line: Option<usize>,
    /// Set when the point sits exactly at a corner vertex.
    pub at_vertex: Option<usize>,
}

/// Axis-aligned box used for occlusion tests.
#[derive(Clone, Copy, Debug)]
pub struct SolidBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SimWorld {
    pub lines: Vec<WorldLine>,
    pub vertices: Vec<WorldVertex>,
    pub points: Vec<WorldPoint>,
    pub boxes: Vec<SolidBox>,
}

impl SimWorld {
    /// Adds one axis-aligned box: 8 corner vertices, 12 edges, corner
    /// points and on-edge points.
    pub fn add_box(
        &mut self,
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        points_per_edge: usize,
        descriptor_dim: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let base_vertex = self.vertices.len();
        let mut corners = Vec::with_capacity(8);
        for dx in [-1.0, 1.0] {
            for dy in [-1.0, 1.0] {
                for dz in [-1.0, 1.0] {
                    corners.push(
                        center
                            + Vector3::new(
                                dx * half_extents.x,
                                dy * half_extents.y,
                                dz * half_extents.z,
                            ),
                    );
                }
            }
        }
        for corner in &corners {
            self.vertices.push(WorldVertex {
                position: *corner,
                lines: Vec::new(),
            });
        }
        // Corner index bit layout: (dx<<2)|(dy<<1)|dz; edges connect
        // corners differing in exactly one bit.
        let edges: [(usize, usize); 12] = [
            (0, 1),
            (0, 2),
            (0, 4),
            (3, 1),
            (3, 2),
            (3, 7),
            (5, 1),
            (5, 4),
            (5, 7),
            (6, 2),
            (6, 4),
            (6, 7),
        ];
        for (ia, ib) in edges {
            let line_id = self.lines.len();
            self.lines.push(WorldLine {
                a: corners[ia],
                b: corners[ib],
                vertices: (base_vertex + ia, base_vertex + ib),
            });
            self.vertices[base_vertex + ia].lines.push(line_id);
            self.vertices[base_vertex + ib].lines.push(line_id);
            // Landmarks on the edge (never at the exact corners).
            for k in 0..points_per_edge {
                let t = (k as f64 + 1.0) / (points_per_edge as f64 + 1.0);
                let position = corners[ia] + t * (corners[ib] - corners[ia]);
                self.points.push(WorldPoint {
                    position,
                    descriptor: random_descriptor(descriptor_dim, rng),
                    on_line: Some(line_id),
                    at_vertex: None,
                });
            }
        }
        // One landmark per corner so junctions have a coincident keypoint.
        for (k, corner) in corners.iter().enumerate() {
            self.points.push(WorldPoint {
                position: *corner,
                descriptor: random_descriptor(descriptor_dim, rng),
                on_line: None,
                at_vertex: Some(base_vertex + k),
            });
        }
        self.boxes.push(SolidBox {
            min: center - half_extents,
            max: center + half_extents,
        });
    }

    /// True when the segment from `eye` to `target` passes through a box
    /// strictly before reaching the target.
    pub fn occluded(&self, eye: &Vector3<f64>, target: &Vector3<f64>) -> bool {
        let dir = target - eye;
        for b in &self.boxes {
            let mut t_min = 0.0f64;
            let mut t_max = 1.0f64;
            let mut hit = true;
            for axis in 0..3 {
                let d = dir[axis];
                let lo = b.min[axis] - eye[axis];
                let hi = b.max[axis] - eye[axis];
                if d.abs() < 1e-12 {
                    if lo > 0.0 || hi < 0.0 {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let (t0, t1) = if d > 0.0 { (lo / d, hi / d) } else { (hi / d, lo / d) };
                t_min = t_min.max(t0);
                t_max = t_max.min(t1);
                if t_min > t_max {
                    hit = false;
                    break;
                }
            }
            if hit && t_min < 1.0 - 1e-6 && t_max > 1e-6 {
                return true;
            }
        }
        false
    }
}

fn random_descriptor(dim: usize, rng: &mut ChaCha8Rng) -> Descriptor {
    let values: Vec<f32> = (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x as f32
        })
        .collect();
    Descriptor::new(values)
}

/// Generates a seeded world of wireframe boxes plus free landmark points.
pub fn generate_world(spec: &WorldSpec, seed: u64) -> SimWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = SimWorld::default();
    let half = spec.extent / 2.0;
    for k in 0..spec.box_count {
        let center = if k == 0 {
            Vector3::new(0.0, 0.0, 0.0)
        } else {
            Vector3::new(
                rng.random_range(-0.6 * half..0.6 * half),
                rng.random_range(-0.6 * half..0.6 * half),
                rng.random_range(-0.4 * half..0.4 * half),
            )
        };
        let half_extents = Vector3::new(
            rng.random_range(0.4..1.1),
            rng.random_range(0.4..1.1),
            rng.random_range(0.4..1.1),
        );
        world.add_box(
            center,
            half_extents,
            spec.points_per_edge,
            spec.descriptor_dim,
            &mut rng,
        );
    }
    for _ in 0..spec.free_points {
        let position = Vector3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        );
        world.points.push(WorldPoint {
            position,
            descriptor: random_descriptor(spec.descriptor_dim, &mut rng),
            on_line: None,
            at_vertex: None,
        });
    }
    world
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_topology() {
        let spec = WorldSpec {
            box_count: 1,
            extent: 2.0,
            free_points: 0,
            points_per_edge: 0,
            descriptor_dim: 16,
        };
        let world = generate_world(&spec, 1);
        assert_eq!(world.lines.len(), 12);
        assert_eq!(world.vertices.len(), 8);
        // Every cube corner terminates exactly three edges.
        for v in &world.vertices {
            assert_eq!(v.lines.len(), 3);
        }
        // Corner landmarks only.
        assert_eq!(world.points.len(), 8);
    }

    #[test]
    fn seeded_determinism() {
        let spec = WorldSpec::default();
        let a = generate_world(&spec, 9);
        let b = generate_world(&spec, 9);
        assert_eq!(a.points.len(), b.points.len());
        for (pa, pb) in a.points.iter().zip(b.points.iter()) {
            assert_eq!(pa.position, pb.position);
            assert_eq!(pa.descriptor.values(), pb.descriptor.values());
        }
    }

    #[test]
    fn point_count_tracks_spec() {
        let spec = WorldSpec {
            box_count: 3,
            free_points: 100,
            points_per_edge: 2,
            ..Default::default()
        };
        let world = generate_world(&spec, 4);
        let expected = 3 * (12 * 2 + 8) + 100;
        assert_eq!(world.points.len(), expected);
    }

    #[test]
    fn descriptors_are_pairwise_distinct() {
        let world = generate_world(&WorldSpec::default(), 11);
        // Spot check a subsample; in 64-d random unit vectors are far apart.
        let step = world.points.len() / 40 + 1;
        let sample: Vec<_> = world.points.iter().step_by(step).collect();
        for (i, a) in sample.iter().enumerate() {
            for b in sample.iter().skip(i + 1) {
                let dot: f32 = a
                    .descriptor
                    .values()
                    .iter()
                    .zip(b.descriptor.values())
                    .map(|(x, y)| x * y)
                    .sum();
                let angle = dot.clamp(-1.0, 1.0).acos().to_degrees();
                assert!(angle > 5.0, "descriptors too close: {angle} deg");
            }
        }
    }

    #[test]
    fn occlusion_blocks_points_behind_a_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut world = SimWorld::default();
        world.add_box(Vector3::new(0.0, 0.0, 5.0), Vector3::new(1.0, 1.0, 1.0), 0, 8, &mut rng);
        let eye = Vector3::zeros();
        // behind the box
        assert!(world.occluded(&eye, &Vector3::new(0.0, 0.0, 8.0)));
        // front face corner is visible
        assert!(!world.occluded(&eye, &Vector3::new(1.0, 1.0, 4.0)));
        // off to the side: visible
        assert!(!world.occluded(&eye, &Vector3::new(3.0, 0.0, 5.0)));
        // point inside the depth range on a side edge: occluded by the interior
        assert!(world.occluded(&eye, &Vector3::new(1.0, 1.0, 5.0)));
    }
}
