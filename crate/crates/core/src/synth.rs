//! Paired synthetic scenes with a known correspondence map.
//!
//! A target room holds groups of box-shaped objects: a central object with
//! identical satellites in quarter-turn slots around it. The reference room
//! applies a global similarity (quarter-turn rotation about +y, optional
//! x-flip, uniform scale, translation) plus a per-group translation jitter to
//! every group, and regenerates the floor.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::Serialize;

use crate::config::{parse_pairs, parse_value, Config};
use crate::error::{Error, Result};
use crate::maps::{reflection, y_rotation};
use crate::plan::{build_grid, plan_through};
use crate::rng::{rng_for, streams};
use crate::scene_io::{Scene, Trajectory, OPEN_SPACE};
use crate::spatial::{farthest_point_sample, KdTree};
use crate::{Point, Vec3};

const MAX_ATTEMPTS: usize = 1000;
const CENTER_CLASSES: usize = 3;
const SATELLITE_CLASSES: usize = 3;
const CORRIDOR: f64 = 1.0;
const WALL_MARGIN: f64 = 1.0;
/// Length scale (target metres) of the soft nearest-object blend in open space.
const OPEN_SPACE_BLEND: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Room extents along x and z.
    pub room: [f64; 2],
    /// Objects per group (central object plus satellites, 1..=5).
    pub groups: Vec<usize>,
    pub dim: usize,
    /// Quarter turns about +y.
    pub rotation: usize,
    pub flip: bool,
    pub scale: f64,
    pub translation: [f64; 2],
    pub jitter: f64,
    pub noise: f64,
    pub waypoints: usize,
    pub surface_spacing: f64,
    pub floor_spacing: f64,
}

impl SynthSpec {
    /// Spec with every free parameter drawn from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_for(seed, streams::SYNTH_SPEC, 0);
        let groups = loop {
            let n = rng.random_range(2..=4);
            let g: Vec<usize> = (0..n).map(|_| rng.random_range(3..=5)).collect();
            let total: usize = g.iter().sum();
            if (8..=16).contains(&total) {
                break g;
            }
        };
        let room = match groups.len() {
            2 => [8.0, 6.5],
            3 => [10.0, 8.0],
            _ => [11.0, 10.0],
        };
        SynthSpec {
            seed,
            room,
            groups,
            dim: 32,
            rotation: rng.random_range(0..4),
            flip: rng.random_bool(0.5),
            scale: rng.random_range(0.8..=1.25),
            translation: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
            jitter: rng.random_range(0.0..=0.3),
            noise: 0.005,
            waypoints: 6,
            surface_spacing: 0.07,
            floor_spacing: 0.1,
        }
    }

    /// `key = value` text applied on top of [`SynthSpec::random`] for the
    /// given `seed` (default 0). `identity = true` zeroes the perturbation.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let seed = match pairs.iter().find(|(_, k, _)| k == "seed") {
            Some((line, k, v)) => parse_value(*line, k, v)?,
            None => 0,
        };
        let mut spec = SynthSpec::random(seed);
        for (line, key, value) in &pairs {
            let (line, key, value) = (*line, key.as_str(), value.as_str());
            match key {
                "seed" => {}
                "room_x" => spec.room[0] = parse_value(line, key, value)?,
                "room_z" => spec.room[1] = parse_value(line, key, value)?,
                "groups" => {
                    spec.groups = value
                        .split(',')
                        .map(|s| parse_value(line, key, s.trim()))
                        .collect::<Result<_>>()?
                }
                "dim" => spec.dim = parse_value(line, key, value)?,
                "rotation" => spec.rotation = parse_value(line, key, value)?,
                "flip" => spec.flip = parse_value(line, key, value)?,
                "scale" => spec.scale = parse_value(line, key, value)?,
                "translation_x" => spec.translation[0] = parse_value(line, key, value)?,
                "translation_z" => spec.translation[1] = parse_value(line, key, value)?,
                "jitter" => spec.jitter = parse_value(line, key, value)?,
                "noise" => spec.noise = parse_value(line, key, value)?,
                "waypoints" => spec.waypoints = parse_value(line, key, value)?,
                "surface_spacing" => spec.surface_spacing = parse_value(line, key, value)?,
                "floor_spacing" => spec.floor_spacing = parse_value(line, key, value)?,
                "identity" => {
                    if parse_value::<bool>(line, key, value)? {
                        spec.rotation = 0;
                        spec.flip = false;
                        spec.scale = 1.0;
                        spec.translation = [0.0, 0.0];
                        spec.jitter = 0.0;
                    }
                }
                _ => {
                    return Err(Error::Config {
                        line,
                        reason: format!("unknown synth key `{key}`"),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.groups.is_empty() || self.groups.iter().any(|&g| !(1..=5).contains(&g)) {
            return bad(format!("groups must hold 1..=5 objects each: {:?}", self.groups));
        }
        if self.dim < 4 || self.dim > 4096 {
            return bad(format!("feature dim {}", self.dim));
        }
        if self.rotation >= 4 {
            return bad(format!("rotation {} (quarter turns, 0..4)", self.rotation));
        }
        let positive = [self.scale, self.room[0], self.room[1], self.surface_spacing, self.floor_spacing];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("scale, room extents and spacings must be positive".into());
        }
        if self.surface_spacing < 0.01 || self.floor_spacing < 0.02 {
            return bad("spacings too fine".into());
        }
        if self.room[0] * self.room[1] / (self.floor_spacing * self.floor_spacing) > 4e6 {
            return bad("room too large for the floor spacing".into());
        }
        let finite = [self.translation[0], self.translation[1], self.jitter, self.noise];
        if finite.iter().any(|v| !v.is_finite()) || self.jitter < 0.0 || self.noise < 0.0 {
            return bad("translation, jitter and noise must be finite, jitter and noise >= 0".into());
        }
        if self.waypoints < 2 || self.waypoints > 64 {
            return bad(format!("waypoints {}", self.waypoints));
        }
        Ok(())
    }

    /// Global linear part `s R F`.
    pub fn linear(&self) -> Matrix3<f64> {
        let f = if self.flip { reflection(1) } else { Matrix3::identity() };
        y_rotation(self.rotation, 4) * f * self.scale
    }

    fn room_center(&self) -> Vec3 {
        Vec3::new(self.room[0] / 2.0, 0.0, self.room[1] / 2.0)
    }
}

/// Similarity applied to one group: `x -> linear x + translation`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTransform {
    pub group: usize,
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl GroupTransform {
    fn new(group: usize, linear: &Matrix3<f64>, translation: &Vec3) -> Self {
        GroupTransform {
            group,
            linear: std::array::from_fn(|r| std::array::from_fn(|c| linear[(r, c)])),
            translation: [translation.x, translation.y, translation.z],
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.linear[r][c])
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.matrix() * p.coords + Vec3::from(self.translation))
    }
}

/// Ground-truth correspondence: each position follows the transform of the
/// group owning its nearest target object point.
#[derive(Debug, Clone)]
pub struct GroundTruthMap {
    pub transforms: Vec<GroupTransform>,
    object_group: Vec<usize>,
    tree: KdTree,
}

impl GroundTruthMap {
    pub fn group_of(&self, p: &Point) -> usize {
        self.tree.nearest(p).map_or(0, |(i, _)| self.object_group[i])
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.transforms[self.group_of(p)].apply(p)
    }
}

#[derive(Debug, Clone, Copy)]
struct BoxObject {
    group: usize,
    class: usize,
    center: [f64; 2],
    half: [f64; 2],
    height: f64,
}

impl BoxObject {
    fn footprint_distance(&self, x: f64, z: f64) -> f64 {
        let dx = ((x - self.center[0]).abs() - self.half[0]).max(0.0);
        let dz = ((z - self.center[1]).abs() - self.half[1]).max(0.0);
        (dx * dx + dz * dz).sqrt()
    }

    fn surface(&self, spacing: f64) -> Vec<Point> {
        let steps = |len: f64| ((len / spacing).ceil() as usize).max(1);
        let (hx, hz, h) = (self.half[0], self.half[1], self.height);
        let (cx, cz) = (self.center[0], self.center[1]);
        let (nx, nz, ny) = (steps(2.0 * hx), steps(2.0 * hz), steps(h));
        let lerp = |a: f64, b: f64, i: usize, n: usize| a + (b - a) * i as f64 / n as f64;
        let mut out = Vec::new();
        for i in 0..=nx {
            for k in 0..=nz {
                out.push(Point::new(lerp(cx - hx, cx + hx, i, nx), h, lerp(cz - hz, cz + hz, k, nz)));
            }
        }
        for j in 0..ny {
            let y = lerp(0.0, h, j, ny);
            for i in 0..=nx {
                let x = lerp(cx - hx, cx + hx, i, nx);
                out.push(Point::new(x, y, cz - hz));
                out.push(Point::new(x, y, cz + hz));
            }
            for k in 1..nz {
                let z = lerp(cz - hz, cz + hz, k, nz);
                out.push(Point::new(cx - hx, y, z));
                out.push(Point::new(cx + hx, y, z));
            }
        }
        out
    }
}

/// Group-local layout: offsets from the group centre.
fn layout_group(rng: &mut ChaCha8Rng, group: usize, count: usize) -> Vec<BoxObject> {
    let center_half = [rng.random_range(0.25..0.4), rng.random_range(0.25..0.4)];
    let mut objects = vec![BoxObject {
        group,
        class: rng.random_range(0..CENTER_CLASSES),
        center: [0.0, 0.0],
        half: center_half,
        height: rng.random_range(0.5..0.9),
    }];
    if count > 1 {
        let sat_half = rng.random_range(0.15..0.25);
        let sat_height = rng.random_range(0.6..1.1);
        let class = CENTER_CLASSES + rng.random_range(0..SATELLITE_CLASSES);
        let gap = rng.random_range(0.08..0.2);
        let mut dirs = [0usize, 1, 2, 3];
        dirs.shuffle(rng);
        for &d in dirs.iter().take(count - 1) {
            let (ux, uz) = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][d];
            let reach_x = center_half[0] + gap + sat_half;
            let reach_z = center_half[1] + gap + sat_half;
            objects.push(BoxObject {
                group,
                class,
                center: [ux * reach_x, uz * reach_z],
                half: [sat_half, sat_half],
                height: sat_height,
            });
        }
    }
    objects
}

fn aabb(objects: &[BoxObject]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for o in objects {
        b[0] = b[0].min(o.center[0] - o.half[0]);
        b[1] = b[1].min(o.center[1] - o.half[1]);
        b[2] = b[2].max(o.center[0] + o.half[0]);
        b[3] = b[3].max(o.center[1] + o.half[1]);
    }
    b
}

fn transform_aabb(b: &[f64; 4], t: &GroupTransform) -> [f64; 4] {
    let corners = [[b[0], b[1]], [b[0], b[3]], [b[2], b[1]], [b[2], b[3]]];
    let mut out = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in corners {
        let p = t.apply(&Point::new(c[0], 0.0, c[1]));
        out[0] = out[0].min(p.x);
        out[1] = out[1].min(p.z);
        out[2] = out[2].max(p.x);
        out[3] = out[3].max(p.z);
    }
    out
}

fn aabb_gap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let dx = (a[0] - b[2]).max(b[0] - a[2]).max(0.0);
    let dz = (a[1] - b[3]).max(b[1] - a[3]).max(0.0);
    dx.max(dz)
}

fn inside(b: &[f64; 4], room: &[f64; 4], margin: f64) -> bool {
    b[0] >= room[0] + margin && b[1] >= room[1] + margin && b[2] <= room[2] - margin && b[3] <= room[3] - margin
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    unit((0..dim).map(|_| normal.sample(rng)).collect())
}

/// Shared feature vocabulary for one pair.
struct FeatureModel {
    dim: usize,
    identity: Vec<Vec<f64>>,
    ctx_freq: Vec<[f64; 5]>,
    dist_freq: Vec<[f64; 2]>,
}

impl FeatureModel {
    fn new(rng: &mut ChaCha8Rng, dim: usize, classes: &[usize]) -> Self {
        let class_vecs: Vec<Vec<f64>> = (0..CENTER_CLASSES + SATELLITE_CLASSES)
            .map(|_| random_unit(rng, dim))
            .collect();
        let identity = classes
            .iter()
            .map(|&c| {
                let r = random_unit(rng, dim);
                unit(class_vecs[c].iter().zip(&r).map(|(a, b)| a + 0.15 * b).collect())
            })
            .collect();
        let ctx_freq = (0..dim)
            .map(|_| {
                [
                    rng.random_range(1.0..6.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                ]
            })
            .collect();
        let dist_freq = (0..dim)
            .map(|_| [rng.random_range(0.5..4.0), rng.random_range(0.0..std::f64::consts::TAU)])
            .collect();
        FeatureModel {
            dim,
            identity,
            ctx_freq,
            dist_freq,
        }
    }

    /// Context code of a group-local position: radius, height and the
    /// quarter-turn symmetric harmonics of the bearing.
    fn context(&self, local: &Point) -> Vec<f64> {
        let r2 = local.x * local.x + local.z * local.z;
        let radial = r2.sqrt();
        let theta = local.z.atan2(local.x);
        let fade = r2 / (r2 + 0.25);
        let (s4, c4) = (4.0 * theta).sin_cos();
        unit(
            self.ctx_freq
                .iter()
                .map(|f| (f[0] * radial + f[1] * local.y + f[2] + fade * (f[3] * c4 + f[4] * s4)).sin())
                .collect(),
        )
    }

    fn object(&self, instance: usize, local: &Point) -> Vec<f64> {
        let ctx = self.context(local);
        unit(
            self.identity[instance]
                .iter()
                .zip(&ctx)
                .map(|(a, b)| 0.7 * a + 0.3 * b)
                .collect(),
        )
    }

    fn open_space(&self, nearest_instance: usize, distance: f64, local: &Point) -> Vec<f64> {
        let prox = (-distance / 0.4).exp();
        let code = unit(self.dist_freq.iter().map(|f| (f[0] * distance + f[1]).sin()).collect());
        let ctx = self.context(&Point::new(local.x, 0.0, local.z));
        unit(
            (0..self.dim)
                .map(|k| 0.5 * prox * self.identity[nearest_instance][k] + 0.3 * code[k] + 0.3 * ctx[k])
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub spec: SynthSpec,
    pub target: Scene,
    pub reference: Scene,
    pub gt_map: GroundTruthMap,
    pub source: Trajectory,
    pub gt_reference: Trajectory,
    /// Target instance id -> reference instance id.
    pub instance_pairs: BTreeMap<i32, i32>,
    /// Semantic class per target instance id.
    pub instance_classes: Vec<usize>,
}

struct Room {
    objects: Vec<BoxObject>,
    rect: [f64; 4],
    /// Length of one target metre in this room.
    unit: f64,
    /// Per group, the map `p -> m p + b` to target group-local coordinates.
    to_local: Vec<(Matrix3<f64>, Vec3)>,
}

/// `object_points` holds `(object, position, group-local target position)`.
fn build_scene(
    room: &Room,
    object_points: &[(usize, Point, Point)],
    ids: &[i32],
    model: &FeatureModel,
    spacing: f64,
) -> Result<Scene> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    for &(o, p, local) in object_points {
        points.push(p);
        labels.push(ids[o]);
        feats.extend(model.object(o, &local));
    }
    let nx = ((room.rect[2] - room.rect[0]) / spacing).floor() as usize;
    let nz = ((room.rect[3] - room.rect[1]) / spacing).floor() as usize;
    for i in 0..=nx {
        for k in 0..=nz {
            let x = room.rect[0] + spacing * i as f64;
            let z = room.rect[1] + spacing * k as f64;
            let dist = room
                .objects
                .iter()
                .map(|o| o.footprint_distance(x, z))
                .fold(f64::INFINITY, f64::min);
            if dist <= 0.02 {
                continue;
            }
            let p = Point::new(x, 0.0, z);
            let mut blend = vec![0.0; model.dim];
            for o in 0..room.objects.len() {
                let d = room.objects[o].footprint_distance(x, z);
                let w = (-(d - dist) / (OPEN_SPACE_BLEND * room.unit)).exp();
                if w < 1e-6 {
                    continue;
                }
                let (m, b) = &room.to_local[room.objects[o].group];
                let local = Point::from(m * p.coords + b);
                for (acc, v) in blend.iter_mut().zip(model.open_space(o, d / room.unit, &local)) {
                    *acc += w * v;
                }
            }
            points.push(p);
            labels.push(OPEN_SPACE);
            feats.extend(unit(blend));
        }
    }
    Scene::new(points, labels, feats, model.dim)
}

/// Builds a paired scene set from `spec`.
pub fn generate_pair(spec: &SynthSpec, config: &Config) -> Result<SynthPair> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, streams::SYNTH_LAYOUT, 0);
    let local: Vec<Vec<BoxObject>> = spec
        .groups
        .iter()
        .enumerate()
        .map(|(g, &n)| layout_group(&mut rng, g, n))
        .collect();
    let boxes: Vec<[f64; 4]> = local.iter().map(|l| aabb(l)).collect();

    let linear = spec.linear();
    let rc = spec.room_center();
    let shift = Vec3::new(spec.translation[0], 0.0, spec.translation[1]);
    let global = GroupTransform::new(usize::MAX, &linear, &(rc + shift - linear * rc));
    let target_rect = [0.0, 0.0, spec.room[0], spec.room[1]];
    let reference_rect = transform_aabb(&target_rect, &global);

    let mut placed: Option<(Vec<Vec3>, Vec<GroupTransform>)> = None;
    for _ in 0..MAX_ATTEMPTS {
        let centers: Vec<Vec3> = boxes
            .iter()
            .map(|b| {
                Vec3::new(
                    rng.random_range(-b[0]..spec.room[0] - b[2]),
                    0.0,
                    rng.random_range(-b[1]..spec.room[1] - b[3]),
                )
            })
            .collect();
        let jitter = Normal::new(0.0, spec.jitter.max(1e-12)).unwrap();
        let transforms: Vec<GroupTransform> = (0..boxes.len())
            .map(|g| {
                let j = if spec.jitter > 0.0 {
                    Vec3::new(jitter.sample(&mut rng), 0.0, jitter.sample(&mut rng))
                } else {
                    Vec3::zeros()
                };
                GroupTransform::new(g, &linear, &(rc + shift - linear * rc + j))
            })
            .collect();
        let world: Vec<[f64; 4]> = boxes
            .iter()
            .zip(&centers)
            .map(|(b, c)| [b[0] + c.x, b[1] + c.z, b[2] + c.x, b[3] + c.z])
            .collect();
        let mapped: Vec<[f64; 4]> = world.iter().zip(&transforms).map(|(b, t)| transform_aabb(b, t)).collect();
        let ok = (0..world.len()).all(|a| {
            inside(&world[a], &target_rect, WALL_MARGIN)
                && inside(&mapped[a], &reference_rect, WALL_MARGIN)
                && (a + 1..world.len()).all(|b| {
                    aabb_gap(&world[a], &world[b]) >= CORRIDOR + 0.1 && aabb_gap(&mapped[a], &mapped[b]) >= CORRIDOR + 0.1
                })
        });
        if ok {
            placed = Some((centers, transforms));
            break;
        }
    }
    let (centers, transforms) = placed.ok_or(Error::Placement { attempts: MAX_ATTEMPTS })?;

    let objects: Vec<BoxObject> = local
        .iter()
        .zip(&centers)
        .flat_map(|(l, c)| {
            l.iter().map(move |o| BoxObject {
                center: [o.center[0] + c.x, o.center[1] + c.z],
                ..*o
            })
        })
        .collect();
    let n_obj = objects.len();
    let classes: Vec<usize> = objects.iter().map(|o| o.class).collect();
    let mut frng = rng_for(spec.seed, streams::SYNTH_FEATURES, 0);
    let model = FeatureModel::new(&mut frng, spec.dim, &classes);

    let target_ids: Vec<i32> = (0..n_obj as i32).collect();
    let mut reference_ids = target_ids.clone();
    reference_ids.shuffle(&mut frng);

    let target_room = Room {
        objects: objects.clone(),
        rect: target_rect,
        unit: 1.0,
        to_local: centers.iter().map(|c| (Matrix3::identity(), -c)).collect(),
    };
    let reference_objects: Vec<BoxObject> = objects
        .iter()
        .map(|o| {
            let t = &transforms[o.group];
            let c = t.apply(&Point::new(o.center[0], 0.0, o.center[1]));
            let h = t.matrix() * Vec3::new(o.half[0], 0.0, o.half[1]);
            BoxObject {
                center: [c.x, c.z],
                half: [h.x.abs(), h.z.abs()],
                height: o.height * spec.scale,
                ..*o
            }
        })
        .collect();
    let reference_room = Room {
        objects: reference_objects,
        rect: reference_rect,
        unit: spec.scale,
        to_local: transforms
            .iter()
            .zip(&centers)
            .map(|(t, c)| {
                let inv = t.matrix().try_inverse().expect("similarity is invertible");
                (inv, -(inv * Vec3::from(t.translation)) - c)
            })
            .collect(),
    };

    let mut nrng = rng_for(spec.seed, streams::SYNTH_NOISE, 0);
    let mut target_pts = Vec::new();
    let mut reference_pts = Vec::new();
    for (o, obj) in objects.iter().enumerate() {
        let group_center = centers[obj.group];
        for p in obj.surface(spec.surface_spacing) {
            let local = Point::new(p.x - group_center.x, p.y, p.z - group_center.z);
            target_pts.push((o, p, local));
            let noise: [f64; 3] = UnitSphere.sample(&mut nrng);
            let r = spec.noise * nrng.random::<f64>().cbrt();
            let q = transforms[obj.group].apply(&p) + Vec3::from(noise) * r;
            reference_pts.push((o, q, local));
        }
    }
    let target = build_scene(&target_room, &target_pts, &target_ids, &model, spec.floor_spacing)?;
    let reference = build_scene(&reference_room, &reference_pts, &reference_ids, &model, spec.floor_spacing)?;

    let object_pts: Vec<Point> = target_pts.iter().map(|x| x.1).collect();
    let gt_map = GroundTruthMap {
        transforms,
        object_group: target_pts.iter().map(|x| objects[x.0].group).collect(),
        tree: KdTree::new(&object_pts),
    };

    let source = generate_trajectory(&target, spec.waypoints, spec.seed, config)?;
    let mapped: Vec<Point> = source.waypoints().unwrap().iter().map(|w| gt_map.apply(w)).collect();
    let grid = build_grid(&reference, config.grid_resolution, config.grid_inflation)?;
    let gt_reference = plan_through(&grid, &mapped, config.snap_radius)?;

    Ok(SynthPair {
        spec: spec.clone(),
        target,
        reference,
        gt_map,
        source,
        gt_reference,
        instance_pairs: target_ids.iter().copied().zip(reference_ids.iter().copied()).collect(),
        instance_classes: classes,
    })
}

/// Waypoints by farthest-point sampling over navigable points at least 0.5 m
/// inside the navigable bounding box, joined by A*.
pub fn generate_trajectory(scene: &Scene, n_waypoints: usize, seed: u64, config: &Config) -> Result<Trajectory> {
    let nav: Vec<Point> = crate::scene_io::navigable_points(scene)?;
    let (lo, hi) = crate::scene_io::bounds_of(&nav);
    let grid = build_grid(scene, config.grid_resolution, config.grid_inflation)?;
    let inner: Vec<Point> = nav
        .iter()
        .copied()
        .filter(|p| p.x >= lo.x + 0.5 && p.x <= hi.x - 0.5 && p.z >= lo.z + 0.5 && p.z <= hi.z - 0.5)
        .filter(|p| grid.cell_of(p).is_some_and(|c| grid.is_free(c)))
        .collect();
    let pool = if inner.len() >= 2 { inner } else { nav };
    let mut rng = rng_for(seed, streams::SYNTH_TRAJECTORY, 0);
    let probe = pool[rng.random_range(0..pool.len())];
    let start = (0..pool.len())
        .max_by(|&a, &b| (pool[a] - probe).norm_squared().total_cmp(&(pool[b] - probe).norm_squared()).then(b.cmp(&a)))
        .unwrap();
    let picks = farthest_point_sample(&pool, n_waypoints, start);
    let waypoints: Vec<Point> = picks.iter().map(|&i| pool[i]).collect();
    plan_through(&grid, &waypoints, config.snap_radius)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruthSidecar {
    pub spec: SynthSpec,
    pub transforms: Vec<GroupTransform>,
    pub instance_pairs: Vec<(i32, i32)>,
    pub source_waypoints: Vec<[f64; 3]>,
    pub reference_waypoints: Vec<[f64; 3]>,
}

impl SynthPair {
    pub fn sidecar(&self) -> GroundTruthSidecar {
        let arr = |p: &Point| [p.x, p.y, p.z];
        GroundTruthSidecar {
            spec: self.spec.clone(),
            transforms: self.gt_map.transforms.clone(),
            instance_pairs: self.instance_pairs.iter().map(|(a, b)| (*a, *b)).collect(),
            source_waypoints: self.source.waypoints().unwrap_or_default().iter().map(arr).collect(),
            reference_waypoints: self.gt_reference.waypoints().unwrap_or_default().iter().map(arr).collect(),
        }
    }
}
