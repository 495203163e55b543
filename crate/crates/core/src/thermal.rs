//! Procedural scenes rendered as co-registered RGB and thermal frames.
//!
//! The camera sits at `(0, 0, altitude)` looking along `+y`, pitched 45°
//! down. Cars are oriented cuboids resting on the ground, people are
//! vertical capsules. Each pixel is ray cast once; RGB uses Lambertian
//! shading of the hit surface, IR maps the hit surface's profile
//! temperature through a fourth-power radiance curve.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, TAU};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Illumination, ImagePair, Source};
use crate::style::{MaskPart, ObjectMask};
use crate::{math, rng, BoundingBox, ClassId, Error, Image, Result};

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / math::sqrt(dot(a, a)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Forest,
    City,
}

impl Environment {
    pub const ALL: [Environment; 2] = [Environment::Forest, Environment::City];
}

/// Fixed camera pitch: 45° below the horizon.
pub const PITCH: f64 = -FRAC_PI_4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Camera {
    /// Meters above the ground plane.
    pub altitude: f64,
    /// Radians; must equal [`PITCH`].
    pub pitch: f64,
    /// Focal length in pixels.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            altitude: 30.0,
            pitch: PITCH,
            focal: 600.0,
            width: 640,
            height: 512,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.altitude > 0.0 && self.altitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("altitude must be positive, got {}", self.altitude)));
        }
        if (self.pitch - PITCH).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "camera pitch is fixed at -pi/4, got {}",
                self.pitch
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        // the top image row must still look below the horizon
        if !(self.focal > self.height as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "focal length {} too short for image height {}: top rows would see the sky",
                self.focal, self.height
            )));
        }
        Ok(())
    }

    fn position(&self) -> V3 {
        [0.0, 0.0, self.altitude]
    }

    /// Camera basis: right, down (image y), forward.
    fn basis(&self) -> (V3, V3, V3) {
        let (s, c) = (math::sin(-self.pitch), math::cos(-self.pitch));
        let forward = [0.0, c, -s];
        let right = [1.0, 0.0, 0.0];
        let down = [0.0, -s, -c];
        (right, down, forward)
    }

    /// Unnormalized world-space ray direction through image point `(u, v)`
    /// (pixel units, origin at the top-left corner).
    fn ray(&self, u: f64, v: f64) -> V3 {
        let (right, down, forward) = self.basis();
        let x = u - self.width as f64 / 2.0;
        let y = v - self.height as f64 / 2.0;
        add(add(scale(forward, self.focal), scale(right, x)), scale(down, y))
    }

    /// World point to camera coordinates `(x right, y down, z forward)`.
    fn to_camera(&self, p: V3) -> V3 {
        let (right, down, forward) = self.basis();
        let d = sub(p, self.position());
        [dot(d, right), dot(d, down), dot(d, forward)]
    }

    /// Projects a world point to pixel coordinates. `None` behind the camera.
    pub fn project(&self, p: V3) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c[2] <= 1e-9 {
            return None;
        }
        Some((
            self.focal * c[0] / c[2] + self.width as f64 / 2.0,
            self.focal * c[1] / c[2] + self.height as f64 / 2.0,
        ))
    }

    /// Ground point seen through image point `(u, v)`.
    pub fn ground_point(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let d = self.ray(u, v);
        if d[2] >= 0.0 {
            return None;
        }
        let t = -self.altitude / d[2];
        Some((d[0] * t, d[1] * t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ClassId,
    pub variant: u8,
    /// Ground position in meters.
    pub x: f64,
    pub y: f64,
    /// Heading in radians.
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct CarShape {
    length: f64,
    width: f64,
    height: f64,
}

const CAR_SHAPES: [CarShape; 3] = [
    CarShape {
        length: 4.5,
        width: 1.8,
        height: 1.5,
    },
    CarShape {
        length: 4.8,
        width: 1.9,
        height: 1.75,
    },
    CarShape {
        length: 4.0,
        width: 1.7,
        height: 1.45,
    },
];
/// Front fraction of the car's top face that reads as the engine hood.
const HOOD_FRACTION: f64 = 0.3;
const PERSON_RADIUS: f64 = 0.25;
const PERSON_HEIGHTS: [f64; 3] = [1.7, 1.6, 1.8];

fn car_shape(variant: u8) -> CarShape {
    CAR_SHAPES[variant as usize % CAR_SHAPES.len()]
}

fn person_height(variant: u8) -> f64 {
    PERSON_HEIGHTS[variant as usize % PERSON_HEIGHTS.len()]
}

impl SceneObject {
    /// Footprint radius used for overlap rejection.
    pub fn radius(&self) -> f64 {
        match self.class {
            ClassId::Car => {
                let s = car_shape(self.variant);
                0.5 * math::sqrt(s.length * s.length + s.width * s.width)
            }
            ClassId::Person => PERSON_RADIUS,
        }
    }

    fn corners(&self) -> [V3; 8] {
        let s = car_shape(self.variant);
        let (sn, cs) = (math::sin(self.yaw), math::cos(self.yaw));
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for lx in [-0.5, 0.5] {
            for ly in [-0.5, 0.5] {
                for z in [0.0, s.height] {
                    let (a, b) = (lx * s.length, ly * s.width);
                    out[i] = [self.x + a * cs - b * sn, self.y + a * sn + b * cs, z];
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub environment: Environment,
    pub objects: Vec<SceneObject>,
    pub time_of_day: Illumination,
    pub camera: Camera,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()
    }
}

const PLACEMENT_RETRIES: usize = 100;
/// Object centers stay this fraction of the image size away from the border.
const PLACEMENT_INSET: f64 = 0.04;

/// Random scene with uniformly placed, non-overlapping objects.
pub fn generate_scene(
    seed: u64,
    environment: Environment,
    n_cars: usize,
    n_people: usize,
    time_of_day: Illumination,
    camera: &Camera,
) -> Result<SceneSpec> {
    camera.validate()?;
    let mut r = rng::seeded(seed);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let (mx, my) = (PLACEMENT_INSET * w, PLACEMENT_INSET * h);
    let corners = [(mx, my), (w - mx, my), (mx, h - my), (w - mx, h - my)];
    let ground: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(u, v)| camera.ground_point(u, v).expect("validated camera sees ground at every pixel"))
        .collect();
    let (x0, x1) = ground.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = ground.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let classes = core::iter::repeat_n(ClassId::Car, n_cars).chain(core::iter::repeat_n(ClassId::Person, n_people));
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_cars + n_people);
    for (index, class) in classes.enumerate() {
        let variant = match class {
            ClassId::Car => r.random_range(0..6u8),
            ClassId::Person => r.random_range(0..6u8),
        };
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            // uniform over the trapezoidal footprint by rejection from its bounding box
            let x = r.random_range(x0..x1);
            let y = r.random_range(y0..y1);
            let yaw = r.random_range(0.0..TAU);
            let Some((u, v)) = camera.project([x, y, 0.0]) else { continue };
            if u < mx || u > w - mx || v < my || v > h - my {
                continue;
            }
            let candidate = SceneObject { class, variant, x, y, yaw };
            let clear = objects.iter().all(|o| {
                let d = math::sqrt((o.x - x) * (o.x - x) + (o.y - y) * (o.y - y));
                d >= o.radius() + candidate.radius()
            });
            if clear {
                objects.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailed {
                index,
                attempts: PLACEMENT_RETRIES,
            });
        }
    }
    Ok(SceneSpec {
        environment,
        objects,
        time_of_day,
        camera: camera.clone(),
        seed,
    })
}

/// Named thermal surface categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalPart {
    Person,
    CarBody,
    CarEngine,
    Ground,
    Vegetation,
}

impl ThermalPart {
    pub const ALL: [ThermalPart; 5] = [
        ThermalPart::Person,
        ThermalPart::CarBody,
        ThermalPart::CarEngine,
        ThermalPart::Ground,
        ThermalPart::Vegetation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThermalPart::Person => "person",
            ThermalPart::CarBody => "car_body",
            ThermalPart::CarEngine => "car_engine",
            ThermalPart::Ground => "ground",
            ThermalPart::Vegetation => "vegetation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayNight {
    pub day: f64,
    pub night: f64,
}

impl DayNight {
    pub fn both(t: f64) -> Self {
        DayNight { day: t, night: t }
    }

    pub fn get(&self, illumination: Illumination) -> f64 {
        match illumination {
            Illumination::Day => self.day,
            Illumination::Night => self.night,
        }
    }
}

/// Surface temperatures in Kelvin and the display range of the sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalProfile {
    pub temperatures: BTreeMap<ThermalPart, DayNight>,
    pub noise_sigma: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for ThermalProfile {
    fn default() -> Self {
        let temperatures = [
            (ThermalPart::Person, DayNight::both(307.7)),
            (ThermalPart::CarBody, DayNight { day: 290.0, night: 286.0 }),
            (ThermalPart::CarEngine, DayNight::both(340.0)),
            (ThermalPart::Ground, DayNight { day: 295.0, night: 280.0 }),
            (ThermalPart::Vegetation, DayNight { day: 293.0, night: 282.0 }),
        ]
        .into_iter()
        .collect();
        ThermalProfile {
            temperatures,
            noise_sigma: 2.0,
            t_min: 270.0,
            t_max: 350.0,
        }
    }
}

impl ThermalProfile {
    /// Every part at temperature `t` for both times of day.
    pub fn uniform(t: f64, t_min: f64, t_max: f64, noise_sigma: f64) -> Self {
        ThermalProfile {
            temperatures: ThermalPart::ALL.into_iter().map(|p| (p, DayNight::both(t))).collect(),
            noise_sigma,
            t_min,
            t_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::InvalidArgument(format!(
                "t_min {} must be below t_max {}",
                self.t_min, self.t_max
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative noise sigma {}", self.noise_sigma)));
        }
        for (part, t) in &self.temperatures {
            for v in [t.day, t.night] {
                if !(self.t_min..=self.t_max).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "{} temperature {v} K outside [{}, {}]",
                        part.name(),
                        self.t_min,
                        self.t_max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn temperature(&self, part: ThermalPart, illumination: Illumination) -> Result<f64> {
        self.temperatures
            .get(&part)
            .map(|t| t.get(illumination))
            .ok_or_else(|| Error::MissingProfileEntry(part.name().to_string()))
    }

    /// Display intensity of `part`.
    pub fn intensity(&self, part: ThermalPart, illumination: Illumination) -> Result<u8> {
        Ok(temperature_to_intensity(
            self.temperature(part, illumination)?,
            self.t_min,
            self.t_max,
        ))
    }
}

/// Grey-body radiance `T^4` normalized linearly onto `[0, 255]`, rounded and
/// clamped.
pub fn temperature_to_intensity(t: f64, t_min: f64, t_max: f64) -> u8 {
    let value = temperature_to_level(t, t_min, t_max);
    math::round(value).clamp(0.0, 255.0) as u8
}

/// Unrounded, unclamped display level of temperature `t`.
pub fn temperature_to_level(t: f64, t_min: f64, t_max: f64) -> f64 {
    let p = |v: f64| math::powi(v, 4);
    255.0 * (p(t) - p(t_min)) / (p(t_max) - p(t_min))
}

/// Visible-light rendering parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgbRenderConfig {
    /// Luminance multiplier applied to night renders.
    pub night_ambient: f64,
    pub night_noise_sigma: f64,
    pub day_noise_sigma: f64,
}

impl Default for RgbRenderConfig {
    fn default() -> Self {
        RgbRenderConfig {
            night_ambient: 0.15,
            night_noise_sigma: 4.0,
            day_noise_sigma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Sky,
    Ground { x: f64, y: f64 },
    Car { object: usize, part: CarPart, normal: V3 },
    Person { object: usize, head: bool, normal: V3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CarPart {
    Body,
    Cabin,
    Hood,
}

impl Surface {
    fn object(&self) -> Option<usize> {
        match self {
            Surface::Car { object, .. } | Surface::Person { object, .. } => Some(*object),
            _ => None,
        }
    }
}

/// Entry distance and local outward normal of a ray against a car cuboid.
fn hit_car(obj: &SceneObject, origin: V3, dir: V3) -> Option<(f64, V3, CarPart)> {
    let s = car_shape(obj.variant);
    let (sn, cs) = (math::sin(obj.yaw), math::cos(obj.yaw));
    let to_local = |v: V3| [v[0] * cs + v[1] * sn, -v[0] * sn + v[1] * cs, v[2]];
    let o = to_local([origin[0] - obj.x, origin[1] - obj.y, origin[2]]);
    let d = to_local(dir);
    let lo = [-s.length / 2.0, -s.width / 2.0, 0.0];
    let hi = [s.length / 2.0, s.width / 2.0, s.height];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    let mut sign = 0.0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
        let (near, far, sgn) = if a < b { (a, b, -1.0) } else { (b, a, 1.0) };
        if near > t0 {
            t0 = near;
            axis = k;
            sign = sgn;
        }
        t1 = t1.min(far);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut local_n = [0.0; 3];
    local_n[axis] = sign;
    let n = [local_n[0] * cs - local_n[1] * sn, local_n[0] * sn + local_n[1] * cs, local_n[2]];
    let part = if axis == 2 && sign > 0.0 {
        let px = o[0] + t0 * d[0];
        let py = o[1] + t0 * d[1];
        if px > s.length * (0.5 - HOOD_FRACTION) {
            CarPart::Hood
        } else if px.abs() < s.length * 0.2 && py.abs() < s.width * 0.4 {
            CarPart::Cabin
        } else {
            CarPart::Body
        }
    } else {
        CarPart::Body
    };
    Some((t0, n, part))
}

/// Entry distance and normal of a ray against a vertical capsule.
fn hit_person(obj: &SceneObject, origin: V3, dir: V3) -> Option<(f64, V3, bool)> {
    let r = PERSON_RADIUS;
    let h = person_height(obj.variant);
    let (za, zb) = (r, h - r);
    let o = [origin[0] - obj.x, origin[1] - obj.y, origin[2]];
    let mut best: Option<(f64, V3)> = None;
    let mut consider = |t: f64, n: V3| {
        if t > 1e-9 && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, n));
        }
    };
    // cylinder side
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a > 1e-15 {
        let b = 2.0 * (o[0] * dir[0] + o[1] * dir[1]);
        let c = o[0] * o[0] + o[1] * o[1] - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let t = (-b - math::sqrt(disc)) / (2.0 * a);
            let z = o[2] + t * dir[2];
            if (za..=zb).contains(&z) {
                let p = add(o, scale(dir, t));
                consider(t, normalize([p[0], p[1], 0.0]));
            }
        }
    }
    // end caps
    for zc in [za, zb] {
        let oc = sub(o, [0.0, 0.0, zc]);
        let b = dot(oc, dir);
        let c = dot(oc, oc) - r * r;
        let dd = dot(dir, dir);
        let disc = b * b - dd * c;
        if disc >= 0.0 {
            let t = (-b - math::sqrt(disc)) / dd;
            let p = add(oc, scale(dir, t));
            consider(t, normalize(p));
        }
    }
    best.map(|(t, n)| {
        let z = o[2] + t * dir[2];
        (t, n, z > h - 0.3)
    })
}

fn hit_object(obj: &SceneObject, index: usize, origin: V3, dir: V3) -> Option<(f64, Surface)> {
    match obj.class {
        ClassId::Car => hit_car(obj, origin, dir).map(|(t, normal, part)| {
            (
                t,
                Surface::Car {
                    object: index,
                    part,
                    normal,
                },
            )
        }),
        ClassId::Person => hit_person(obj, origin, dir).map(|(t, normal, head)| {
            (
                t,
                Surface::Person {
                    object: index,
                    head,
                    normal,
                },
            )
        }),
    }
}

/// Frontmost surface through image point `(u, v)`.
fn trace_point(scene: &SceneSpec, u: f64, v: f64) -> Surface {
    let origin = scene.camera.position();
    let dir = scene.camera.ray(u, v);
    let mut best: Option<(f64, Surface)> = None;
    for (i, obj) in scene.objects.iter().enumerate() {
        if let Some((t, s)) = hit_object(obj, i, origin, dir) {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, s));
            }
        }
    }
    if let Some((_, s)) = best {
        return s;
    }
    if dir[2] >= 0.0 {
        return Surface::Sky;
    }
    let t = -origin[2] / dir[2];
    Surface::Ground {
        x: origin[0] + t * dir[0],
        y: origin[1] + t * dir[1],
    }
}

fn trace(scene: &SceneSpec) -> Vec<Surface> {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(trace_point(scene, x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    out
}

/// Smooth value noise in `[0, 1)`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (math::floor(x), math::floor(y));
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(tx), smooth(ty));
    let l = |dx: i64, dy: i64| rng::lattice01(seed, ix + dx, iy + dy);
    let top = l(0, 0) * (1.0 - sx) + l(1, 0) * sx;
    let bot = l(0, 1) * (1.0 - sx) + l(1, 1) * sx;
    top * (1.0 - sy) + bot * sy
}

fn fbm(seed: u64, x: f64, y: f64, octaves: usize) -> f64 {
    let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0, 0.0);
    for o in 0..octaves {
        sum += amp * value_noise(seed.wrapping_add(o as u64 * 7919), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Whether ground point `(x, y)` is covered by vegetation (forest) or
/// buildings (city).
fn is_vegetation(scene: &SceneSpec, x: f64, y: f64) -> bool {
    fbm(scene.seed ^ 0x5eed, x / 9.0, y / 9.0, 3) > 0.62
}

const SUN: V3 = [0.3, -0.4, 0.866];
const AMBIENT: f64 = 0.35;
const CAR_COLORS: [V3; 6] = [
    [170.0, 30.0, 30.0],
    [40.0, 60.0, 150.0],
    [210.0, 210.0, 215.0],
    [35.0, 35.0, 40.0],
    [160.0, 160.0, 165.0],
    [200.0, 170.0, 40.0],
];
const CLOTHES: [V3; 6] = [
    [60.0, 80.0, 140.0],
    [140.0, 40.0, 40.0],
    [50.0, 50.0, 50.0],
    [180.0, 150.0, 110.0],
    [70.0, 120.0, 70.0],
    [220.0, 220.0, 220.0],
];
const SKIN: V3 = [200.0, 160.0, 130.0];

fn ground_color(scene: &SceneSpec, x: f64, y: f64) -> V3 {
    let veg = is_vegetation(scene, x, y);
    let detail = fbm(scene.seed ^ 0xd37a, x * 1.3, y * 1.3, 3) - 0.5;
    let base = match (scene.environment, veg) {
        (Environment::Forest, false) => [86.0, 110.0, 60.0],
        (Environment::Forest, true) => [38.0, 68.0, 34.0],
        (Environment::City, false) => [105.0, 105.0, 108.0],
        (Environment::City, true) => [150.0, 140.0, 128.0],
    };
    let k = 1.0 + 0.35 * detail;
    scale(base, k)
}

fn shade(color: V3, normal: V3) -> V3 {
    let lambert = dot(normal, normalize(SUN)).max(0.0);
    scale(color, AMBIENT + (1.0 - AMBIENT) * lambert)
}

fn surface_color(scene: &SceneSpec, s: &Surface) -> V3 {
    match *s {
        Surface::Sky => [180.0, 200.0, 230.0],
        Surface::Ground { x, y } => shade(ground_color(scene, x, y), [0.0, 0.0, 1.0]),
        Surface::Car { object, part, normal } => {
            let base = CAR_COLORS[scene.objects[object].variant as usize % CAR_COLORS.len()];
            let c = if part == CarPart::Cabin { scale(base, 0.35) } else { base };
            shade(c, normal)
        }
        Surface::Person { object, head, normal } => {
            let base = if head {
                SKIN
            } else {
                CLOTHES[scene.objects[object].variant as usize % CLOTHES.len()]
            };
            shade(base, normal)
        }
    }
}

fn thermal_part(scene: &SceneSpec, s: &Surface) -> ThermalPart {
    match *s {
        Surface::Sky => ThermalPart::Ground,
        Surface::Ground { x, y } => {
            if is_vegetation(scene, x, y) {
                ThermalPart::Vegetation
            } else {
                ThermalPart::Ground
            }
        }
        Surface::Car { part: CarPart::Hood, .. } => ThermalPart::CarEngine,
        Surface::Car { .. } => ThermalPart::CarBody,
        Surface::Person { .. } => ThermalPart::Person,
    }
}

fn rgb_from_surfaces(scene: &SceneSpec, surfaces: &[Surface], config: &RgbRenderConfig) -> Image {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let (factor, sigma) = match scene.time_of_day {
        Illumination::Day => (1.0, config.day_noise_sigma),
        Illumination::Night => (config.night_ambient, config.night_noise_sigma),
    };
    let mut r = rng::stream(scene.seed, 1);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut data = Vec::with_capacity(w * h * 3);
    for s in surfaces {
        let c = surface_color(scene, s);
        for v in c {
            let n = if sigma > 0.0 { noise.sample(&mut r) } else { 0.0 };
            data.push(math::round(v * factor + n).clamp(0.0, 255.0) as u8);
        }
    }
    Image::from_raw(w, h, 3, data).expect("buffer matches camera size")
}

fn ir_from_surfaces(scene: &SceneSpec, surfaces: &[Surface], profile: &ThermalProfile) -> Result<Image> {
    profile.validate()?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    let mut levels = BTreeMap::new();
    for part in ThermalPart::ALL {
        if let Some(t) = profile.temperatures.get(&part) {
            levels.insert(part, temperature_to_level(t.get(scene.time_of_day), profile.t_min, profile.t_max));
        }
    }
    let mut r = rng::stream(scene.seed, 2);
    let noise = Normal::new(0.0, profile.noise_sigma).expect("validated sigma");
    let mut data = Vec::with_capacity(w * h);
    for s in surfaces {
        let part = thermal_part(scene, s);
        let level = *levels
            .get(&part)
            .ok_or_else(|| Error::MissingProfileEntry(part.name().to_string()))?;
        let n = if profile.noise_sigma > 0.0 { noise.sample(&mut r) } else { 0.0 };
        data.push(math::round(level + n).clamp(0.0, 255.0) as u8);
    }
    Ok(Image::from_raw(w, h, 1, data).expect("buffer matches camera size"))
}

pub fn render_rgb(scene: &SceneSpec, config: &RgbRenderConfig) -> Result<Image> {
    scene.validate()?;
    Ok(rgb_from_surfaces(scene, &trace(scene), config))
}

pub fn render_ir(scene: &SceneSpec, profile: &ThermalProfile) -> Result<Image> {
    scene.validate()?;
    ir_from_surfaces(scene, &trace(scene), profile)
}

/// Both modalities from a single ray-casting pass.
pub fn render_pair(scene: &SceneSpec, profile: &ThermalProfile, config: &RgbRenderConfig) -> Result<(Image, Image)> {
    scene.validate()?;
    let surfaces = trace(scene);
    Ok((
        rgb_from_surfaces(scene, &surfaces, config),
        ir_from_surfaces(scene, &surfaces, profile)?,
    ))
}

/// Exact pixel-space bounds of a sphere under perspective projection.
fn sphere_bounds(cam: &Camera, center: V3, r: f64) -> Option<(f64, f64, f64, f64)> {
    let c = cam.to_camera(center);
    let denom = c[2] * c[2] - r * r;
    if c[2] <= r || denom <= 0.0 {
        return None;
    }
    let extent = |a: f64| {
        let root = math::sqrt((a * a + c[2] * c[2] - r * r).max(0.0));
        ((a * c[2] - r * root) / denom, (a * c[2] + r * root) / denom)
    };
    let (x0, x1) = extent(c[0]);
    let (y0, y1) = extent(c[1]);
    let (cx, cy) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
    Some((cam.focal * x0 + cx, cam.focal * y0 + cy, cam.focal * x1 + cx, cam.focal * y1 + cy))
}

/// Convex hull (counter-clockwise) of points by the monotone chain.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Sutherland-Hodgman clip of a convex polygon to `[0,w]×[0,h]`.
fn clip_to_rect(poly: &[(f64, f64)], w: f64, h: f64) -> Vec<(f64, f64)> {
    let mut out = poly.to_vec();
    let edges: [(usize, f64, bool); 4] = [(0, 0.0, true), (0, w, false), (1, 0.0, true), (1, h, false)];
    for (axis, bound, keep_above) in edges {
        let input = core::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        let coord = |p: (f64, f64)| if axis == 0 { p.0 } else { p.1 };
        let inside = |p: (f64, f64)| if keep_above { coord(p) >= bound } else { coord(p) <= bound };
        for i in 0..input.len() {
            let (a, b) = (input[i], input[(i + 1) % input.len()]);
            let (ia, ib) = (inside(a), inside(b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (bound - coord(a)) / (coord(b) - coord(a));
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
    }
    out
}

fn bounds(points: &[(f64, f64)]) -> Option<(f64, f64, f64, f64)> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |(a, b, c, d), p| {
        (a.min(p.0), b.min(p.1), c.max(p.0), d.max(p.1))
    }))
}

/// Unclipped pixel-space bounds of an object's projected silhouette.
fn silhouette_bounds(cam: &Camera, obj: &SceneObject) -> Option<(f64, f64, f64, f64)> {
    match obj.class {
        ClassId::Car => {
            let pts: Option<Vec<_>> = obj.corners().iter().map(|&c| cam.project(c)).collect();
            bounds(&pts?)
        }
        ClassId::Person => {
            let h = person_height(obj.variant);
            let a = sphere_bounds(cam, [obj.x, obj.y, PERSON_RADIUS], PERSON_RADIUS)?;
            let b = sphere_bounds(cam, [obj.x, obj.y, h - PERSON_RADIUS], PERSON_RADIUS)?;
            Some((a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)))
        }
    }
}

/// Tight bounds of the silhouette part that lies inside the image.
fn visible_bounds(cam: &Camera, obj: &SceneObject) -> Option<(f64, f64, f64, f64)> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    match obj.class {
        ClassId::Car => {
            let pts: Option<Vec<_>> = obj.corners().iter().map(|&c| cam.project(c)).collect();
            bounds(&clip_to_rect(&convex_hull(pts?), w, h))
        }
        ClassId::Person => {
            let (x0, y0, x1, y1) = silhouette_bounds(cam, obj)?;
            let (x0, y0, x1, y1) = (x0.max(0.0), y0.max(0.0), x1.min(w), y1.min(h));
            (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
        }
    }
}

const VISIBILITY_SUBSAMPLES: usize = 4;

/// Fraction of the object's silhouette (sampled on a sub-pixel grid over its
/// unclipped bounds) that falls inside the image.
pub fn visible_fraction(scene: &SceneSpec, index: usize) -> f64 {
    let cam = &scene.camera;
    let obj = &scene.objects[index];
    let Some((x0, y0, x1, y1)) = silhouette_bounds(cam, obj) else {
        return 0.0;
    };
    let n = VISIBILITY_SUBSAMPLES as f64;
    let (sx0, sy0) = (math::floor(x0 * n) as i64, math::floor(y0 * n) as i64);
    let (sx1, sy1) = (math::ceil(x1 * n) as i64, math::ceil(y1 * n) as i64);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let origin = cam.position();
    let (mut total, mut inside) = (0usize, 0usize);
    for sy in sy0..sy1 {
        for sx in sx0..sx1 {
            let (u, v) = ((sx as f64 + 0.5) / n, (sy as f64 + 0.5) / n);
            if hit_object(obj, index, origin, cam.ray(u, v)).is_some() {
                total += 1;
                if u >= 0.0 && u < w && v >= 0.0 && v < h {
                    inside += 1;
                }
            }
        }
    }
    if total == 0 {
        // sub-sample sized silhouette: fall back to the bounds' area
        let full = (x1 - x0) * (y1 - y0);
        let clipped = (x1.min(w) - x0.max(0.0)).max(0.0) * (y1.min(h) - y0.max(0.0)).max(0.0);
        return if full > 0.0 { clipped / full } else { 0.0 };
    }
    inside as f64 / total as f64
}

/// One box per object with at least half of its silhouette inside the image.
pub fn project_labels(scene: &SceneSpec) -> Vec<BoundingBox> {
    project_labels_indexed(scene).into_iter().map(|(_, b)| b).collect()
}

/// Like [`project_labels`] but keeps the originating object index.
pub fn project_labels_indexed(scene: &SceneSpec) -> Vec<(usize, BoundingBox)> {
    let cam = &scene.camera;
    let (w, h) = (cam.width as f64, cam.height as f64);
    scene
        .objects
        .iter()
        .enumerate()
        .filter(|(i, _)| visible_fraction(scene, *i) >= 0.5)
        .filter_map(|(i, obj)| {
            let (x0, y0, x1, y1) = visible_bounds(cam, obj)?;
            BoundingBox::from_corners(obj.class, x0 / w, y0 / h, x1 / w, y1 / h).map(|b| (i, b))
        })
        .collect()
}

/// Per-object visible silhouettes (after occlusion) for every labeled
/// object, cropped to the object's box.
pub fn render_masks(scene: &SceneSpec) -> Result<Vec<ObjectMask>> {
    scene.validate()?;
    let surfaces = trace(scene);
    Ok(masks_from_surfaces(scene, &surfaces))
}

fn masks_from_surfaces(scene: &SceneSpec, surfaces: &[Surface]) -> Vec<ObjectMask> {
    let (w, h) = (scene.camera.width, scene.camera.height);
    project_labels_indexed(scene)
        .into_iter()
        .map(|(index, bbox)| {
            let (px0, py0, px1, py1) = bbox.to_pixels(w, h);
            let x0 = (math::floor(px0) as usize).min(w - 1);
            let y0 = (math::floor(py0) as usize).min(h - 1);
            let x1 = (math::ceil(px1) as usize).clamp(x0 + 1, w);
            let y1 = (math::ceil(py1) as usize).clamp(y0 + 1, h);
            let mut values = vec![0u8; (x1 - x0) * (y1 - y0)];
            for y in y0..y1 {
                for x in x0..x1 {
                    let s = &surfaces[y * w + x];
                    if s.object() == Some(index) {
                        let part = match s {
                            Surface::Car { part: CarPart::Hood, .. } => MaskPart::Hot,
                            _ => MaskPart::Body,
                        };
                        values[(y - y0) * (x1 - x0) + (x - x0)] = part as u8;
                    }
                }
            }
            ObjectMask {
                class: bbox.class,
                bbox,
                x0,
                y0,
                width: x1 - x0,
                height: y1 - y0,
                values,
            }
        })
        .collect()
}

/// Scene population and rendering settings for dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub camera: Camera,
    pub rgb: RgbRenderConfig,
    pub environments: Vec<Environment>,
    pub min_cars: usize,
    pub max_cars: usize,
    pub min_people: usize,
    pub max_people: usize,
    pub day_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            camera: Camera::default(),
            rgb: RgbRenderConfig::default(),
            environments: Environment::ALL.to_vec(),
            min_cars: 1,
            max_cars: 4,
            min_people: 1,
            max_people: 5,
            day_fraction: 0.5,
        }
    }
}

/// A rendered scene with everything downstream stages may need.
#[derive(Clone, Debug)]
pub struct SimFrame {
    pub pair: ImagePair,
    pub scene: SceneSpec,
    pub masks: Vec<ObjectMask>,
}

/// Scene `index` of the dataset rooted at `seed`. The day/night assignment
/// is passed in so that it can be decided for the whole dataset at once.
pub fn simulate_frame(
    seed: u64,
    index: usize,
    time_of_day: Illumination,
    profile: &ThermalProfile,
    config: &SimConfig,
) -> Result<SimFrame> {
    if config.environments.is_empty() {
        return Err(Error::InvalidArgument("no environments configured".into()));
    }
    if config.min_cars > config.max_cars || config.min_people > config.max_people {
        return Err(Error::InvalidArgument("object count range is empty".into()));
    }
    let mut r = rng::stream(seed, index as u64 + 1);
    let environment = config.environments[r.random_range(0..config.environments.len())];
    let n_cars = r.random_range(config.min_cars..=config.max_cars);
    let n_people = r.random_range(config.min_people..=config.max_people);
    let scene_seed = rng::mix64(seed ^ rng::mix64(index as u64));
    let scene = generate_scene(scene_seed, environment, n_cars, n_people, time_of_day, &config.camera)?;
    let surfaces = trace(&scene);
    let rgb = rgb_from_surfaces(&scene, &surfaces, &config.rgb);
    let ir = ir_from_surfaces(&scene, &surfaces, profile)?;
    let masks = masks_from_surfaces(&scene, &surfaces);
    let labels = masks.iter().map(|m| m.bbox).collect();
    Ok(SimFrame {
        pair: ImagePair {
            id: sim_id(index),
            rgb,
            ir,
            illumination: time_of_day,
            source: Source::Simulated,
            labels,
        },
        scene,
        masks,
    })
}

pub fn sim_id(index: usize) -> String {
    format!("sim_{index:06}")
}

/// Day/night assignment with exactly `round(day_fraction * n)` day scenes.
pub fn illumination_schedule(n: usize, day_fraction: f64, seed: u64) -> Result<Vec<Illumination>> {
    if !(0.0..=1.0).contains(&day_fraction) {
        return Err(Error::InvalidArgument(format!(
            "day fraction must lie in [0, 1], got {day_fraction}"
        )));
    }
    let n_day = math::round(day_fraction * n as f64) as usize;
    let mut schedule: Vec<Illumination> = (0..n)
        .map(|i| if i < n_day { Illumination::Day } else { Illumination::Night })
        .collect();
    schedule.shuffle(&mut rng::stream(seed, 0));
    Ok(schedule)
}

/// Full frames (pair, scene and masks) for `n_scenes` scenes.
pub fn generate_frames(n_scenes: usize, seed: u64, profile: &ThermalProfile, config: &SimConfig) -> Result<Vec<SimFrame>> {
    if n_scenes == 0 {
        return Err(Error::InvalidArgument("need at least one scene".into()));
    }
    illumination_schedule(n_scenes, config.day_fraction, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, ill)| simulate_frame(seed, i, ill, profile, config))
        .collect()
}

pub fn generate_paired_dataset(n_scenes: usize, seed: u64, profile: &ThermalProfile, config: &SimConfig) -> Result<Vec<ImagePair>> {
    Ok(generate_frames(n_scenes, seed, profile, config)?
        .into_iter()
        .map(|f| f.pair)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::iou;
    use proptest::prelude::*;

    fn small_camera() -> Camera {
        Camera {
            altitude: 12.0,
            focal: 140.0,
            width: 160,
            height: 128,
            ..Camera::default()
        }
    }

    fn scene_with(objects: Vec<SceneObject>, tod: Illumination) -> SceneSpec {
        SceneSpec {
            environment: Environment::City,
            objects,
            time_of_day: tod,
            camera: small_camera(),
            seed: 3,
        }
    }

    #[test]
    fn intensity_endpoints_and_worked_value() {
        assert_eq!(temperature_to_intensity(270.0, 270.0, 320.0), 0);
        assert_eq!(temperature_to_intensity(320.0, 270.0, 320.0), 255);
        // 255 * (307.7^4 - 270^4) / (320^4 - 270^4) = 179.98...
        assert_eq!(temperature_to_intensity(307.7, 270.0, 320.0), 180);
        assert_eq!(temperature_to_intensity(200.0, 270.0, 320.0), 0);
        assert_eq!(temperature_to_intensity(400.0, 270.0, 320.0), 255);
    }

    proptest! {
        #[test]
        fn intensity_is_monotone(a in 260.0f64..360.0, b in 260.0f64..360.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(temperature_to_intensity(lo, 270.0, 350.0) <= temperature_to_intensity(hi, 270.0, 350.0));
        }
    }

    #[test]
    fn camera_center_ray_hits_forward_ground() {
        let cam = Camera::default();
        let (x, y) = cam.ground_point(320.0, 256.0).unwrap();
        assert!(x.abs() < 1e-9 && (y - 30.0).abs() < 1e-9);
        let (u, v) = cam.project([0.0, 30.0, 0.0]).unwrap();
        assert!((u - 320.0).abs() < 1e-9 && (v - 256.0).abs() < 1e-9);
        let bad = Camera {
            pitch: -0.5,
            ..Camera::default()
        };
        assert!(bad.validate().is_err());
        let short = Camera {
            focal: 200.0,
            ..Camera::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn empty_scene_generation() {
        let s = generate_scene(1, Environment::Forest, 0, 0, Illumination::Day, &small_camera()).unwrap();
        assert!(s.objects.is_empty());
        assert!(project_labels(&s).is_empty());
    }

    #[test]
    fn scene_generation_is_deterministic_and_separated() {
        let cam = small_camera();
        let a = generate_scene(9, Environment::City, 5, 3, Illumination::Day, &cam).unwrap();
        let b = generate_scene(9, Environment::City, 5, 3, Illumination::Day, &cam).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.iter().filter(|o| o.class == ClassId::Car).count(), 5);
        for (i, o) in a.objects.iter().enumerate() {
            assert!((0.0..TAU).contains(&o.yaw));
            for p in &a.objects[i + 1..] {
                let d = ((o.x - p.x).powi(2) + (o.y - p.y).powi(2)).sqrt();
                assert!(d >= o.radius() + p.radius());
            }
        }
    }

    #[test]
    fn crowded_footprint_fails() {
        let cam = Camera {
            altitude: 3.0,
            focal: 80.0,
            width: 32,
            height: 32,
            ..Camera::default()
        };
        assert!(matches!(
            generate_scene(0, Environment::City, 40, 0, Illumination::Day, &cam),
            Err(Error::PlacementFailed { .. })
        ));
    }

    fn luminance_mean(img: &Image) -> f64 {
        img.luminance().mean()
    }

    #[test]
    fn rgb_render_determinism_and_night_darkness() {
        let cam = small_camera();
        let day = generate_scene(4, Environment::Forest, 3, 3, Illumination::Day, &cam).unwrap();
        let night = SceneSpec {
            time_of_day: Illumination::Night,
            ..day.clone()
        };
        let cfg = RgbRenderConfig::default();
        let a = render_rgb(&day, &cfg).unwrap();
        assert_eq!(a, render_rgb(&day, &cfg).unwrap());
        let n = render_rgb(&night, &cfg).unwrap();
        assert!(luminance_mean(&n) < 0.3 * luminance_mean(&a));
    }

    #[test]
    fn ir_constant_for_uniform_profile() {
        let s = generate_scene(4, Environment::Forest, 3, 3, Illumination::Day, &small_camera()).unwrap();
        let p = ThermalProfile::uniform(300.0, 270.0, 350.0, 0.0);
        let img = render_ir(&s, &p).unwrap();
        let v = temperature_to_intensity(300.0, 270.0, 350.0);
        assert!(img.data().iter().all(|&x| x == v));
    }

    #[test]
    fn ir_missing_part_is_an_error() {
        let s = generate_scene(4, Environment::Forest, 1, 0, Illumination::Day, &small_camera()).unwrap();
        let mut p = ThermalProfile::default();
        p.temperatures.remove(&ThermalPart::CarEngine);
        assert!(matches!(render_ir(&s, &p), Err(Error::MissingProfileEntry(_))));
    }

    #[test]
    fn ir_is_illumination_independent() {
        let s = generate_scene(6, Environment::City, 2, 4, Illumination::Day, &small_camera()).unwrap();
        let flipped = SceneSpec {
            time_of_day: Illumination::Night,
            ..s.clone()
        };
        let mut p = ThermalProfile::default();
        for t in p.temperatures.values_mut() {
            t.night = t.day;
        }
        assert_eq!(render_ir(&s, &p).unwrap(), render_ir(&flipped, &p).unwrap());
    }

    #[test]
    fn person_is_brighter_than_ground() {
        let cam = small_camera();
        let person = SceneObject {
            class: ClassId::Person,
            variant: 0,
            x: 0.0,
            y: 12.0,
            yaw: 0.0,
        };
        let s = scene_with(vec![person], Illumination::Day);
        let mut p = ThermalProfile::uniform(285.0, 270.0, 350.0, 0.0);
        p.temperatures.insert(ThermalPart::Person, DayNight::both(307.7));
        let img = render_ir(&s, &p).unwrap();
        let (u, v) = cam.project([0.0, 12.0, 0.9]).unwrap();
        let ground = img.get(2, 2, 0);
        assert!(img.get(u as usize, v as usize, 0) > ground);
    }

    #[test]
    fn car_under_camera_axis_covers_center() {
        let car = SceneObject {
            class: ClassId::Car,
            variant: 0,
            x: 0.0,
            y: 12.0,
            yaw: 0.4,
        };
        let s = scene_with(vec![car], Illumination::Day);
        let labels = project_labels(&s);
        assert_eq!(labels.len(), 1);
        let (x0, y0, x1, y1) = labels[0].corners();
        assert!(x0 < 0.5 && 0.5 < x1 && y0 < 0.5 && 0.5 < y1);
    }

    #[test]
    fn half_visible_rule() {
        let cam = small_camera();
        // object far outside the left image edge
        let (gx, gy) = cam.ground_point(-200.0, 64.0).unwrap();
        let hidden = SceneObject {
            class: ClassId::Car,
            variant: 0,
            x: gx,
            y: gy,
            yaw: 0.0,
        };
        let s = scene_with(vec![hidden], Illumination::Day);
        assert!(visible_fraction(&s, 0) < 0.5);
        assert!(project_labels(&s).is_empty());
    }

    /// Tight box of a supersampled silhouette mask.
    fn raster_box(scene: &SceneSpec, index: usize, ss: usize) -> Option<(f64, f64, f64, f64)> {
        let cam = &scene.camera;
        let obj = &scene.objects[index];
        let origin = cam.position();
        let mut b: Option<(f64, f64, f64, f64)> = None;
        let n = ss as f64;
        for sy in 0..cam.height * ss {
            for sx in 0..cam.width * ss {
                let (u, v) = ((sx as f64 + 0.5) / n, (sy as f64 + 0.5) / n);
                if hit_object(obj, index, origin, cam.ray(u, v)).is_some() {
                    let (x0, y0, x1, y1) = (sx as f64 / n, sy as f64 / n, (sx + 1) as f64 / n, (sy + 1) as f64 / n);
                    b = Some(match b {
                        None => (x0, y0, x1, y1),
                        Some(p) => (p.0.min(x0), p.1.min(y0), p.2.max(x1), p.3.max(y1)),
                    });
                }
            }
        }
        b
    }

    #[test]
    fn labels_match_rasterized_silhouettes() {
        let cam = small_camera();
        let (w, h) = (cam.width as f64, cam.height as f64);
        for seed in 0..8 {
            let s = generate_scene(seed, Environment::City, 3, 4, Illumination::Day, &cam).unwrap();
            for (i, b) in project_labels_indexed(&s) {
                let (x0, y0, x1, y1) = raster_box(&s, i, 8).unwrap();
                let oracle = BoundingBox::from_corners(b.class, x0 / w, y0 / h, x1 / w, y1 / h).unwrap();
                let (l0, l1) = (b.corners(), oracle.corners());
                let edge = [(l0.0 - l1.0) * w, (l0.1 - l1.1) * h, (l0.2 - l1.2) * w, (l0.3 - l1.3) * h]
                    .iter()
                    .fold(0.0f64, |m, e| m.max(e.abs()));
                assert!(edge <= 0.25, "seed {seed} object {i}: edge error {edge} px {b:?} {oracle:?}");
                if b.w * w * b.h * h >= 100.0 {
                    let v = iou(&b, &oracle);
                    assert!(v >= 0.95, "seed {seed} object {i}: IoU {v} {b:?} {oracle:?}");
                }
            }
        }
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.5), (1.0, 1.0), (0.0, 1.0), (0.2, 0.7)];
        let hull = convex_hull(pts);
        assert_eq!(hull.len(), 4);
        let clipped = clip_to_rect(&hull, 0.5, 2.0);
        assert_eq!(bounds(&clipped), Some((0.0, 0.0, 0.5, 1.0)));
    }

    #[test]
    fn masks_mark_hood_as_hot() {
        let car = SceneObject {
            class: ClassId::Car,
            variant: 0,
            x: 0.0,
            y: 12.0,
            yaw: 1.0,
        };
        let s = scene_with(vec![car], Illumination::Day);
        let masks = render_masks(&s).unwrap();
        assert_eq!(masks.len(), 1);
        let m = &masks[0];
        assert!(m.values.contains(&(MaskPart::Hot as u8)));
        assert!(m.values.contains(&(MaskPart::Body as u8)));
    }

    #[test]
    fn paired_dataset_counts_and_structure() {
        let config = SimConfig {
            camera: small_camera(),
            ..SimConfig::default()
        };
        let pairs = generate_paired_dataset(10, 5, &ThermalProfile::default(), &config).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.illumination == Illumination::Day).count(), 5);
        for p in &pairs {
            p.validate().unwrap();
            assert_eq!(p.source, Source::Simulated);
        }
        let one = SimConfig {
            day_fraction: 1.0,
            ..config.clone()
        };
        let single = generate_paired_dataset(1, 5, &ThermalProfile::default(), &one).unwrap();
        assert_eq!(single[0].illumination, Illumination::Day);
        assert_eq!(generate_paired_dataset(10, 5, &ThermalProfile::default(), &config).unwrap(), pairs);
    }

    #[test]
    fn default_profile_is_valid() {
        ThermalProfile::default().validate().unwrap();
        let bad = ThermalProfile {
            noise_sigma: -1.0,
            ..ThermalProfile::default()
        };
        assert!(bad.validate().is_err());
    }
}
