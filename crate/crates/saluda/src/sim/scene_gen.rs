//! Scene container and deterministic random scene generation.

use crate::error::{Error, Result};
use crate::sim::primitive::{PrimitiveKind, ScenePrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
    /// Union of object bounds (and the ground surface), for reporting only.
    pub bounds: [[f64; 3]; 2],
}

impl Scene {
    pub fn new(primitives: Vec<ScenePrimitive>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for prim in &primitives {
            match prim.aabb() {
                Some((a, b)) => {
                    for k in 0..3 {
                        lo[k] = lo[k].min(a[k]);
                        hi[k] = hi[k].max(b[k]);
                    }
                }
                None => {
                    lo[2] = lo[2].min(prim.translation[2]);
                    hi[2] = hi[2].max(prim.translation[2]);
                }
            }
        }
        for k in 0..3 {
            if lo[k] > hi[k] {
                lo[k] = 0.0;
                hi[k] = 0.0;
            }
        }
        Scene { primitives, bounds: [lo, hi] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .primitives
            .iter()
            .any(|p| p.kind == PrimitiveKind::GroundPlane)
        {
            return Err(Error::Data("scene has no ground plane".into()));
        }
        for p in &self.primitives {
            if p.kind != PrimitiveKind::GroundPlane && p.dimensions[0] <= 0.0 {
                return Err(Error::Data("primitive with non-positive dimensions".into()));
            }
        }
        Ok(())
    }
}

/// Componentwise size interval; equal endpoints pin the component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRange {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClassSpec {
    pub class_id: u16,
    pub kind: PrimitiveKind,
    pub count: u32,
    pub size: SizeRange,
}

fn default_clearance() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Objects are centered within |x|, |y| <= extent.
    pub extent: f64,
    pub ground_class: u16,
    /// Objects keep their bounds at least this far (in xy) from the sensor
    /// column so the sensor never ends up inside one.
    #[serde(default = "default_clearance")]
    pub sensor_clearance: f64,
    pub objects: Vec<ObjectClassSpec>,
}

fn sample(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn aabbs_overlap(a: ([f64; 3], [f64; 3]), b: ([f64; 3], [f64; 3])) -> bool {
    (0..3).all(|k| a.0[k] < b.1[k] && b.0[k] < a.1[k])
}

/// Rejection-sample a scene: ground plane at z = 0 plus the requested
/// objects, resting on the ground, with disjoint bounding boxes. Each object
/// gets at most 1000 placement attempts.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    if spec.extent <= 0.0 {
        return Err(Error::Config("scene extent must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut primitives = vec![ScenePrimitive {
        kind: PrimitiveKind::GroundPlane,
        translation: [0.0; 3],
        yaw: 0.0,
        dimensions: [0.0; 3],
        class_id: spec.ground_class,
        solid: true,
    }];
    let mut placed: Vec<([f64; 3], [f64; 3])> = Vec::new();
    for class in &spec.objects {
        if class.kind == PrimitiveKind::GroundPlane {
            return Err(Error::Config("object classes cannot be ground planes".into()));
        }
        for _ in 0..class.count {
            let mut accepted = false;
            for _attempt in 0..1000 {
                let dims = [
                    sample(&mut rng, class.size.min[0], class.size.max[0]),
                    sample(&mut rng, class.size.min[1], class.size.max[1]),
                    sample(&mut rng, class.size.min[2], class.size.max[2]),
                ];
                let x = sample(&mut rng, -spec.extent, spec.extent);
                let y = sample(&mut rng, -spec.extent, spec.extent);
                let yaw = if class.kind == PrimitiveKind::Box {
                    sample(&mut rng, 0.0, std::f64::consts::TAU)
                } else {
                    0.0
                };
                let translation = match class.kind {
                    PrimitiveKind::Box => [x, y, dims[2] / 2.0],
                    PrimitiveKind::Cylinder => [x, y, 0.0],
                    PrimitiveKind::Sphere => [x, y, dims[0]],
                    PrimitiveKind::GroundPlane => unreachable!(),
                };
                let candidate = ScenePrimitive {
                    kind: class.kind,
                    translation,
                    yaw,
                    dimensions: dims,
                    class_id: class.class_id,
                    solid: true,
                };
                let aabb = candidate.aabb().expect("objects always have bounds");
                let near_sensor = aabb.0[0] < spec.sensor_clearance
                    && aabb.1[0] > -spec.sensor_clearance
                    && aabb.0[1] < spec.sensor_clearance
                    && aabb.1[1] > -spec.sensor_clearance;
                if near_sensor || placed.iter().any(|&other| aabbs_overlap(aabb, other)) {
                    continue;
                }
                placed.push(aabb);
                primitives.push(candidate);
                accepted = true;
                break;
            }
            if !accepted {
                return Err(Error::Generation(format!(
                    "could not place class-{} object after 1000 attempts",
                    class.class_id
                )));
            }
        }
    }
    Ok(Scene::new(primitives))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_spec(count: u32) -> SceneSpec {
        SceneSpec {
            extent: 20.0,
            ground_class: 0,
            sensor_clearance: 2.0,
            objects: vec![ObjectClassSpec {
                class_id: 1,
                kind: PrimitiveKind::Box,
                count,
                size: SizeRange { min: [1.0, 1.0, 1.0], max: [3.0, 3.0, 4.0] },
            }],
        }
    }

    #[test]
    fn empty_spec_gives_ground_only() {
        let spec = SceneSpec {
            extent: 10.0,
            ground_class: 0,
            sensor_clearance: 2.0,
            objects: vec![],
        };
        let scene = generate_scene(1, &spec).unwrap();
        assert_eq!(scene.primitives.len(), 1);
        assert_eq!(scene.primitives[0].kind, PrimitiveKind::GroundPlane);
        scene.validate().unwrap();
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = box_spec(10);
        assert_eq!(generate_scene(9, &spec).unwrap(), generate_scene(9, &spec).unwrap());
        assert_ne!(generate_scene(9, &spec).unwrap(), generate_scene(10, &spec).unwrap());
    }

    #[test]
    fn twenty_boxes_do_not_overlap() {
        let scene = generate_scene(4, &box_spec(20)).unwrap();
        let aabbs: Vec<_> = scene
            .primitives
            .iter()
            .filter_map(|p| p.aabb())
            .collect();
        assert_eq!(aabbs.len(), 20);
        let mut overlaps = 0;
        for i in 0..aabbs.len() {
            for j in i + 1..aabbs.len() {
                if aabbs_overlap(aabbs[i], aabbs[j]) {
                    overlaps += 1;
                }
            }
        }
        assert_eq!(overlaps, 0);
    }

    #[test]
    fn objects_keep_sensor_clearance() {
        let scene = generate_scene(11, &box_spec(20)).unwrap();
        for prim in &scene.primitives {
            if let Some((lo, hi)) = prim.aabb() {
                let clear = lo[0] >= 2.0 || hi[0] <= -2.0 || lo[1] >= 2.0 || hi[1] <= -2.0;
                assert!(clear, "object bounds reach the sensor column");
            }
        }
    }

    #[test]
    fn impossible_packing_is_a_generation_error() {
        let mut spec = box_spec(50);
        spec.extent = 3.0;
        spec.objects[0].size = SizeRange { min: [4.0, 4.0, 2.0], max: [4.0, 4.0, 2.0] };
        let err = generate_scene(2, &spec).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = generate_scene(3, &box_spec(5)).unwrap();
        let text = serde_json::to_string_pretty(&scene).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn spec_json_rejects_unknown_fields() {
        let text = r#"{"extent": 5.0, "ground_class": 0, "objects": [], "bogus": 1}"#;
        assert!(serde_json::from_str::<SceneSpec>(text).is_err());
    }
}
