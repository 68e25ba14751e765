//! Deterministic synthetic hand-object scenes.
//!
//! Every action class is a fixed contact signature: a grip (which fingertips
//! of the active hand touch the object), the state of the other hand (near
//! the object or beyond the distant threshold), and a temporal phase (hold,
//! approach-then-touch, touch-then-retreat). Contact-maps therefore identify
//! the class exactly, while raw coordinates carry nuisance variation: random
//! object class, placement and orientation, per-frame object drift, hand
//! shape jitter and Gaussian joint noise.
//!
//! Scenes are built in the object's canonical frame and mapped to the world
//! by the per-frame object pose. Labels come from
//! [`crate::geometry::label_contact_map`] on the final noisy joints, and a
//! clip is redrawn until every frame matches its class signature.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    write_clips, write_contact_targets, write_meshes, ActionClip, ContactSample, DatasetConfig, FrameSample,
    HandPose, ObjectAnnotation,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::{
    box_corners, build_vertex_index, expand_bbox_21, label_contact_map, transform_points, ContactMap,
    ContactThresholds, ObjectMesh, Point3, RigidTransform,
};

pub const JOINTS_PER_HAND: usize = 21;
pub const OBJECT_CLASSES: usize = 8;
const GRIPS: usize = 4;
const PHASES: usize = 3;
pub const MAX_CLASSES: usize = PHASES * 2 * GRIPS * 2;
const MESH_SPACING: f64 = 0.01;
const MAX_ATTEMPTS: usize = 200;

/// Box dimensions (meters) of the synthetic object classes.
const OBJECT_SIZES: [[f64; 3]; OBJECT_CLASSES] = [
    [0.16, 0.10, 0.22],
    [0.12, 0.12, 0.12],
    [0.20, 0.14, 0.09],
    [0.10, 0.10, 0.18],
    [0.18, 0.12, 0.14],
    [0.14, 0.09, 0.20],
    [0.22, 0.16, 0.10],
    [0.11, 0.15, 0.13],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_count: usize,
    pub clips_per_class: usize,
    /// Inclusive range of raw clip lengths.
    pub frames_range: (usize, usize),
    /// Standard deviation of per-joint Gaussian noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 6,
            clips_per_class: 100,
            frames_range: (20, 60),
            noise_sigma: 0.002,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.class_count) {
            return Err(Error::Validation(format!(
                "class_count must be in 2..={MAX_CLASSES}, got {}",
                self.class_count
            )));
        }
        if self.clips_per_class == 0 {
            return Err(Error::Validation("clips_per_class must be at least 1".into()));
        }
        let (lo, hi) = self.frames_range;
        if lo == 0 || lo > hi {
            return Err(Error::Validation(format!("invalid frames_range ({lo}, {hi})")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma <= 0.005) {
            return Err(Error::Validation(format!(
                "noise_sigma must be in [0, 0.005] m, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Dataset dimensions of the generated data.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            hands: 2,
            joints_per_hand: JOINTS_PER_HAND,
            object_classes: OBJECT_CLASSES,
            action_classes: self.class_count,
            frames_per_clip: 32,
            thresholds: ContactThresholds::H2O,
            center_clips: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: DatasetConfig,
    pub clips: Vec<ActionClip>,
    pub meshes: BTreeMap<String, ObjectMesh>,
    pub contacts: Vec<ContactSample>,
}

impl SynthDataset {
    /// Writes `clips.jsonl`, `contacts.jsonl`, `meshes/` and `config.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_clips(&dir.join("clips.jsonl"), &self.clips)?;
        write_contact_targets(&dir.join("contacts.jsonl"), &self.contacts)?;
        write_meshes(&dir.join("meshes"), &self.meshes)?;
        let mut config = serde_json::to_string_pretty(&self.config).expect("config serializes");
        config.push('\n');
        write_atomic(&dir.join("config.json"), config.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Hold,
    Approach,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OtherHand {
    Distant,
    Near,
}

/// The contact signature that defines one synthetic action class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassTemplate {
    phase: Phase,
    other: OtherHand,
    /// Bit f set when finger f (0 = thumb … 4 = pinky) touches.
    touching: u8,
    right_active: bool,
}

impl ClassTemplate {
    pub fn for_class(class: usize) -> Self {
        let phase = [Phase::Hold, Phase::Approach, Phase::Retreat][class % PHASES];
        let other = [OtherHand::Distant, OtherHand::Near][(class / PHASES) % 2];
        // pinch, grasp, poke, tripod
        let touching = [0b00011, 0b11111, 0b00010, 0b00111][(class / (PHASES * 2)) % GRIPS];
        let right_active = (class / (PHASES * 2 * GRIPS)) % 2 == 0;
        Self {
            phase,
            other,
            touching,
            right_active,
        }
    }

    /// Expected contact-map for one frame.
    fn expected(&self, touch: bool) -> (Vec<u8>, Vec<u8>) {
        let mut contact = vec![0u8; 2 * JOINTS_PER_HAND];
        let mut distant = vec![0u8; 2 * JOINTS_PER_HAND];
        let (active, other) = if self.right_active { (JOINTS_PER_HAND, 0) } else { (0, JOINTS_PER_HAND) };
        for finger in 0..5 {
            if self.touching & (1 << finger) != 0 {
                contact[active + 4 + 4 * finger] = u8::from(touch);
            }
        }
        if self.other == OtherHand::Distant {
            distant[other..other + JOINTS_PER_HAND].fill(1);
        }
        (contact, distant)
    }

    fn matches(&self, map: &ContactMap, touch: bool) -> bool {
        let (contact, distant) = self.expected(touch);
        map.contact == contact && map.distant == distant
    }
}

/// Canonical-frame box mesh for object class `label`, vertices on a surface
/// grid with at most 1 cm spacing.
pub fn object_mesh(label: usize) -> ObjectMesh {
    let size = OBJECT_SIZES[label % OBJECT_CLASSES];
    let half = size.map(|s| s / 2.0);
    let steps = size.map(|s| (s / MESH_SPACING).ceil() as usize);
    let coord = |axis: usize, i: usize| -half[axis] + size[axis] * i as f64 / steps[axis] as f64;
    let mut vertices = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [-half[axis], half[axis]] {
            for i in 0..=steps[u] {
                for j in 0..=steps[v] {
                    let mut p = [0.0; 3];
                    p[axis] = side;
                    p[u] = coord(u, i);
                    p[v] = coord(v, j);
                    vertices.push(Point3::from(p));
                }
            }
        }
    }
    ObjectMesh {
        mesh_id: mesh_id(label),
        vertices,
    }
}

pub fn mesh_id(label: usize) -> String {
    format!("box_{label}")
}

/// One of the four side faces of a box, in canonical coordinates.
#[derive(Debug, Clone, Copy)]
struct Face {
    normal: Point3,
    tangent: Point3,
    bitangent: Point3,
    center: Point3,
    half_tangent: f64,
    half_bitangent: f64,
}

fn side_face(size: [f64; 3], index: usize) -> Face {
    // faces ±x and ±y; z is the box's long "up" axis for grip layout
    let (axis, sign) = (index / 2, if index % 2 == 0 { 1.0 } else { -1.0 });
    let mut n = [0.0; 3];
    n[axis] = sign;
    let other = 1 - axis;
    let mut t = [0.0; 3];
    t[other] = sign;
    let normal = Point3::from(n);
    Face {
        normal,
        tangent: Point3::from(t),
        bitangent: Point3::new(0.0, 0.0, 1.0),
        center: normal * (size[axis] / 2.0),
        half_tangent: size[other] / 2.0,
        half_bitangent: size[2] / 2.0,
    }
}

/// Hand shape parameters drawn once per clip.
#[derive(Debug, Clone)]
struct HandShape {
    /// In-face offsets (tangent, bitangent) of each finger base, 0 = thumb.
    lateral: [(f64, f64); 5],
    tip_gap: [f64; 5],
    curl: [f64; 5],
    scale: f64,
}

impl HandShape {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let base = [(-0.035, -0.03), (-0.016, 0.012), (0.0, 0.016), (0.016, 0.012), (0.031, 0.0)];
        let angle: f64 = rng.random_range(-0.4..0.4);
        let (s, c) = angle.sin_cos();
        let scale = rng.random_range(0.9..1.1);
        let lateral = base.map(|(u, v)| (scale * (c * u - s * v), scale * (s * u + c * v)));
        Self {
            lateral,
            tip_gap: std::array::from_fn(|_| rng.random_range(0.003..0.009)),
            curl: std::array::from_fn(|_| rng.random_range(0.045..0.06)),
            scale,
        }
    }
}

/// 21 canonical-frame joints (wrist, then 4 per finger base→tip) of a hand
/// whose palm faces `face` around `anchor`, lifted by `lift` along the normal.
fn hand_joints(face: &Face, anchor: (f64, f64), shape: &HandShape, touching: u8, lift: f64) -> Vec<Point3> {
    let margin = 0.005;
    let on_face = |u: f64, v: f64| {
        let u = u.clamp(-face.half_tangent + margin, face.half_tangent - margin);
        let v = v.clamp(-face.half_bitangent + margin, face.half_bitangent - margin);
        face.center + face.tangent * u + face.bitangent * v
    };
    let n = face.normal;
    let mut joints = Vec::with_capacity(JOINTS_PER_HAND);
    let wrist = on_face(anchor.0, anchor.1 - 0.045 * shape.scale) + n * (0.11 * shape.scale + lift);
    joints.push(wrist);
    for finger in 0..5 {
        let (du, dv) = shape.lateral[finger];
        let surface = on_face(anchor.0 + du, anchor.1 + dv);
        let height = if touching & (1 << finger) != 0 {
            shape.tip_gap[finger]
        } else {
            shape.curl[finger]
        };
        let tip = surface + n * (height + lift);
        let base_height = if finger == 0 { 0.07 } else { 0.08 } * shape.scale;
        let base = on_face(anchor.0 + 0.6 * du, anchor.1 + 0.6 * dv - 0.01) + n * (base_height + lift);
        for t in [0.0, 0.4, 0.7] {
            joints.push(base + (tip - base) * t);
        }
        joints.push(tip);
    }
    joints
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RigidTransform {
    // uniform unit quaternion
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= norm);
    let [w, x, y, z] = q;
    RigidTransform::from_rotation_translation(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ],
        Point3::ORIGIN,
    )
    .expect("unit quaternion gives a rotation")
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let p = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if p.norm() > 1e-6 {
            return p * (1.0 / p.norm());
        }
    }
}

/// Per-frame state: whether the active hand touches and how far it is lifted.
fn phase_schedule(phase: Phase, len: usize, rng: &mut ChaCha8Rng) -> Vec<(bool, f64)> {
    let far = rng.random_range(0.085..0.10);
    let near = rng.random_range(0.06..0.07);
    let free = ((len as f64) * rng.random_range(0.35..0.55)).round().max(1.0) as usize;
    let free = free.min(len.saturating_sub(1)).max(usize::from(len > 1));
    let lift = |k: usize| {
        if free <= 1 {
            far
        } else {
            far + (near - far) * k as f64 / (free - 1) as f64
        }
    };
    (0..len)
        .map(|i| match phase {
            Phase::Hold => (true, 0.0),
            Phase::Approach if i < free => (false, lift(i)),
            Phase::Retreat if i >= len - free => (false, lift(len - 1 - i)),
            _ => (true, 0.0),
        })
        .collect()
}

struct ClipDraw {
    frames: Vec<FrameSample>,
    targets: Vec<ContactMap>,
}

fn draw_clip(
    template: &ClassTemplate,
    label: usize,
    mesh: &ObjectMesh,
    len: usize,
    noise: &Normal<f64>,
    thresholds: &ContactThresholds,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ClipDraw>> {
    let size = OBJECT_SIZES[label];
    let active_face_index = rng.random_range(0..4);
    let active_face = side_face(size, active_face_index);
    let other_face = side_face(size, active_face_index ^ 1);
    let anchor = |face: &Face, rng: &mut ChaCha8Rng| {
        (
            rng.random_range(-0.3..0.3) * face.half_tangent,
            rng.random_range(-0.2..0.3) * face.half_bitangent,
        )
    };
    let active_anchor = anchor(&active_face, rng);
    let other_anchor = anchor(&other_face, rng);
    let active_shape = HandShape::sample(rng);
    let other_shape = HandShape::sample(rng);
    let other_lift = match template.other {
        OtherHand::Near => rng.random_range(0.0..0.03),
        OtherHand::Distant => rng.random_range(0.24..0.34),
    };

    let rotation = random_rotation(rng);
    let origin = Point3::new(
        rng.random_range(-0.25..0.25),
        rng.random_range(-0.1..0.25),
        rng.random_range(0.35..0.7),
    );
    let drift = Point3::new(
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
    );
    let spin_axis = random_unit(rng);
    let spin = rng.random_range(-0.15..0.15);

    let schedule = phase_schedule(template.phase, len, rng);
    let corners = box_corners(
        Point3::from(size.map(|s| -s / 2.0)),
        Point3::from(size.map(|s| s / 2.0)),
    );
    let other_joints = hand_joints(&other_face, other_anchor, &other_shape, 0, other_lift);

    let mut frames = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    for (i, &(touch, lift)) in schedule.iter().enumerate() {
        let s = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
        let pose = RigidTransform::translation(origin + drift * s)
            .compose(&rotation)
            .compose(&RigidTransform::rotation(spin_axis, spin * s)?);
        let pose = RigidTransform::new(*pose.matrix())?;
        // a lifted hand keeps its grip shape
        let active_joints = hand_joints(&active_face, active_anchor, &active_shape, template.touching, lift);
        let mut world = |pts: &[Point3]| -> Vec<Point3> {
            transform_points(&pose, pts)
                .into_iter()
                .map(|p| {
                    p + Point3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
                })
                .collect()
        };
        let active_world = world(&active_joints);
        let other_world = world(&other_joints);
        let (left, right) = if template.right_active {
            (other_world, active_world)
        } else {
            (active_world, other_world)
        };
        let frame = FrameSample {
            hand: HandPose { left: Some(left), right },
            object: ObjectAnnotation {
                label,
                pose_points: expand_bbox_21(&transform_points(&pose, &corners))?,
                world_from_canonical: pose,
                mesh_id: Some(mesh.mesh_id.clone()),
            },
        };
        let index = build_vertex_index(&transform_points(&pose, &mesh.vertices))?;
        let map = label_contact_map(&frame.hand.joints(), &index, thresholds, 2 * JOINTS_PER_HAND)?;
        if !template.matches(&map, touch) {
            return Ok(None);
        }
        frames.push(frame);
        targets.push(map);
    }
    Ok(Some(ClipDraw { frames, targets }))
}

/// Generates a class-balanced dataset; output depends only on `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let config = spec.dataset_config();
    let meshes: BTreeMap<String, ObjectMesh> =
        (0..OBJECT_CLASSES).map(|k| (mesh_id(k), object_mesh(k))).collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clips = Vec::with_capacity(spec.class_count * spec.clips_per_class);
    let mut contacts = Vec::new();
    for class in 0..spec.class_count {
        let template = ClassTemplate::for_class(class);
        for i in 0..spec.clips_per_class {
            let clip_id = format!("synth_c{class:02}_{i:04}");
            let label = rng.random_range(0..OBJECT_CLASSES);
            let len = rng.random_range(spec.frames_range.0..=spec.frames_range.1);
            let mesh = &meshes[&mesh_id(label)];
            let mut drawn = None;
            for _ in 0..MAX_ATTEMPTS {
                drawn = draw_clip(&template, label, mesh, len, &noise, &config.thresholds, &mut rng)?;
                if drawn.is_some() {
                    break;
                }
            }
            let ClipDraw { frames, targets } = drawn.ok_or_else(|| {
                Error::Numeric(format!("could not realize class {class} signature for {clip_id}"))
            })?;
            for (frame_index, (frame, target)) in frames.iter().zip(targets).enumerate() {
                contacts.push(ContactSample {
                    clip_id: clip_id.clone(),
                    frame_index,
                    frame: frame.clone(),
                    target,
                });
            }
            clips.push(ActionClip {
                clip_id,
                action_label: class,
                frames,
            });
        }
    }
    Ok(SynthDataset {
        config,
        clips,
        meshes,
        contacts,
    })
}

/// Splits clips per class: the first `train_per_class` clips of each class
/// (in input order) go to the first list, the rest to the second.
pub fn split_per_class(clips: &[ActionClip], train_per_class: usize) -> (Vec<ActionClip>, Vec<ActionClip>) {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for clip in clips {
        let count = seen.entry(clip.action_label).or_default();
        if *count < train_per_class {
            train.push(clip.clone());
        } else {
            test.push(clip.clone());
        }
        *count += 1;
    }
    (train, test)
}

/// Keeps the contact samples whose clip is in `clips`.
pub fn samples_for_clips(samples: &[ContactSample], clips: &[ActionClip]) -> Vec<ContactSample> {
    let ids: std::collections::HashSet<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
    samples.iter().filter(|s| ids.contains(s.clip_id.as_str())).cloned().collect()
}
