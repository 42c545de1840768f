//! Randomized render setups and keyframe interpolation.
//!
//! A [`SceneInstance`] is fully determined by its seed, the [`SceneRanges`]
//! it was drawn from and the bounding box of the part. Angles in
//! configuration files are degrees; distances are millimeters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{lerp, Aabb, Point, Vector};
use crate::raster;
use crate::rng::SceneRng;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read scene config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scene config {path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("no camera framing the part found after {0} attempts")]
    NoFraming(u32),
    #[error("interpolation parameter {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error("keyframes out of order ({a} then {b})")]
    KeyframeOrder { a: usize, b: usize },
    #[error("keyframes have different light layouts")]
    LightMismatch,
    #[error("part bounds are empty")]
    EmptyBounds,
}

/// Closed interval of a sampled quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Span { min, max }
    }

    fn check(&self, name: &str) -> Result<(), SceneError> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(SceneError::Config(format!("{name}: bounds must be finite")));
        }
        if self.min > self.max {
            return Err(SceneError::Config(format!(
                "{name}: empty range (min {} > max {})",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn check_within(&self, name: &str, lo: f64, hi: f64) -> Result<(), SceneError> {
        self.check(name)?;
        if self.min < lo || self.max > hi {
            return Err(SceneError::Config(format!(
                "{name}: must lie within [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSpan {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Flat,
    Checker,
    Grid,
    Noise,
    Gradient,
    /// One of the user-supplied images.
    Image,
}

/// A resolved texture choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureId {
    Flat,
    Checker,
    Grid,
    Noise,
    Gradient,
    /// Index into the configured image list.
    Image(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRanges {
    /// Distance from the part centroid.
    pub radius: Span,
    /// Angle above the bed plane.
    pub elevation: Span,
    pub azimuth: Span,
    /// Vertical field of view.
    pub fov: Span,
    /// Look-at offset from the centroid as a fraction of the half extents.
    pub target_jitter: Span,
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges {
            radius: Span::new(90.0, 160.0),
            elevation: Span::new(25.0, 65.0),
            azimuth: Span::new(0.0, 360.0),
            fov: Span::new(30.0, 45.0),
            target_jitter: Span::new(0.0, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightRanges {
    /// Number of point lights.
    pub count: CountSpan,
    pub radius: Span,
    pub elevation: Span,
    pub azimuth: Span,
    /// Irradiance delivered at the part centroid; intensity = irradiance · r².
    pub irradiance: Span,
    /// Per-channel color multiplier.
    pub tint: Span,
}

impl Default for LightRanges {
    fn default() -> Self {
        LightRanges {
            count: CountSpan { min: 1, max: 4 },
            radius: Span::new(120.0, 300.0),
            elevation: Span::new(20.0, 80.0),
            azimuth: Span::new(0.0, 360.0),
            irradiance: Span::new(0.15, 0.45),
            tint: Span::new(0.85, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SunRanges {
    pub elevation: Span,
    pub azimuth: Span,
    pub intensity: Span,
}

impl Default for SunRanges {
    fn default() -> Self {
        SunRanges {
            elevation: Span::new(35.0, 85.0),
            azimuth: Span::new(0.0, 360.0),
            intensity: Span::new(0.35, 0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialRanges {
    pub palette: Vec<[f64; 3]>,
    pub roughness: Span,
    pub specular: Span,
}

impl Default for MaterialRanges {
    fn default() -> Self {
        MaterialRanges {
            palette: vec![
                [0.85, 0.12, 0.10],
                [0.95, 0.55, 0.08],
                [0.92, 0.88, 0.20],
                [0.12, 0.55, 0.22],
                [0.10, 0.30, 0.80],
                [0.90, 0.90, 0.88],
                [0.18, 0.18, 0.20],
            ],
            roughness: Span::new(0.2, 0.8),
            specular: Span::new(0.05, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceRanges {
    pub textures: Vec<TextureKind>,
    pub images: Vec<PathBuf>,
    pub colors: Vec<[f64; 3]>,
    /// Texture tile size (bed only).
    pub tile: Span,
    /// Texture rotation (bed only).
    pub rotation: Span,
    /// Texture offset along x and y (bed only).
    pub offset: Span,
    /// Half the bed side length (bed only).
    pub half_size: f64,
}

impl SurfaceRanges {
    fn bed() -> Self {
        SurfaceRanges {
            textures: vec![
                TextureKind::Checker,
                TextureKind::Grid,
                TextureKind::Noise,
                TextureKind::Flat,
            ],
            images: Vec::new(),
            colors: vec![
                [0.12, 0.12, 0.13],
                [0.35, 0.35, 0.37],
                [0.55, 0.42, 0.28],
                [0.80, 0.80, 0.78],
                [0.20, 0.25, 0.45],
            ],
            tile: Span::new(5.0, 40.0),
            rotation: Span::new(0.0, 90.0),
            offset: Span::new(-50.0, 50.0),
            half_size: 150.0,
        }
    }

    fn background() -> Self {
        SurfaceRanges {
            textures: vec![TextureKind::Gradient, TextureKind::Noise, TextureKind::Flat],
            colors: vec![
                [0.55, 0.60, 0.65],
                [0.30, 0.28, 0.25],
                [0.85, 0.85, 0.90],
                [0.15, 0.17, 0.22],
            ],
            ..SurfaceRanges::bed()
        }
    }
}

impl Default for SurfaceRanges {
    fn default() -> Self {
        SurfaceRanges::bed()
    }
}

/// Sampling ranges for every randomized scene quantity.
///
/// Loaded from TOML; every key is optional:
///
/// ```toml
/// resolution = [512, 512]
/// max_retries = 16
///
/// [camera]
/// radius = { min = 90.0, max = 160.0 }
/// elevation = { min = 25.0, max = 65.0 }
///
/// [lights]
/// count = { min = 1, max = 4 }
///
/// [material]
/// palette = [[0.85, 0.12, 0.10], [0.10, 0.30, 0.80]]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub resolution: [u32; 2],
    /// Resampling attempts when the camera fails to frame the part.
    pub max_retries: u32,
    pub camera: CameraRanges,
    pub lights: LightRanges,
    pub sun: SunRanges,
    pub material: MaterialRanges,
    #[serde(default = "SurfaceRanges::bed")]
    pub bed: SurfaceRanges,
    #[serde(default = "SurfaceRanges::background", deserialize_with = "background_overlay")]
    pub background: SurfaceRanges,
}

/// Missing background keys fall back to the background defaults, not the bed's.
fn background_overlay<'de, D: serde::Deserializer<'de>>(d: D) -> Result<SurfaceRanges, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(d)?;
    let serde_json::Value::Object(given) = given else {
        return Err(D::Error::custom("background must be a table"));
    };
    let mut merged = serde_json::to_value(SurfaceRanges::background()).map_err(D::Error::custom)?;
    if let serde_json::Value::Object(m) = &mut merged {
        m.extend(given);
    }
    SurfaceRanges::deserialize(merged).map_err(D::Error::custom)
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            resolution: [256, 256],
            max_retries: 16,
            camera: CameraRanges::default(),
            lights: LightRanges::default(),
            sun: SunRanges::default(),
            material: MaterialRanges::default(),
            bed: SurfaceRanges::bed(),
            background: SurfaceRanges::background(),
        }
    }
}

impl SceneRanges {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let ranges = Self::from_toml_str(&text).map_err(|source| SceneError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        ranges.validate()?;
        Ok(ranges)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let [w, h] = self.resolution;
        if w < 16 || h < 16 {
            return Err(SceneError::Config(format!(
                "resolution {w}x{h}: both sides must be at least 16 px"
            )));
        }
        let c = &self.camera;
        c.radius.check("camera.radius")?;
        if c.radius.min <= 0.0 {
            return Err(SceneError::Config("camera.radius: must be positive".into()));
        }
        c.elevation.check_within("camera.elevation", -89.0, 89.0)?;
        c.azimuth.check("camera.azimuth")?;
        c.fov.check("camera.fov")?;
        if c.fov.min <= 10.0 || c.fov.max >= 120.0 {
            return Err(SceneError::Config(
                "camera.fov: must lie strictly inside (10, 120) degrees".into(),
            ));
        }
        c.target_jitter.check_within("camera.target_jitter", 0.0, 1.0)?;

        let l = &self.lights;
        if l.count.min < 1 || l.count.max > 4 || l.count.min > l.count.max {
            return Err(SceneError::Config(format!(
                "lights.count: need 1 <= min <= max <= 4, got {}..{}",
                l.count.min, l.count.max
            )));
        }
        l.radius.check("lights.radius")?;
        l.elevation.check_within("lights.elevation", -90.0, 90.0)?;
        l.azimuth.check("lights.azimuth")?;
        l.irradiance.check_within("lights.irradiance", 0.0, f64::MAX)?;
        l.tint.check_within("lights.tint", 0.0, 1.0)?;

        self.sun.elevation.check_within("sun.elevation", -90.0, 90.0)?;
        self.sun.azimuth.check("sun.azimuth")?;
        self.sun.intensity.check_within("sun.intensity", 0.0, f64::MAX)?;

        let m = &self.material;
        if m.palette.is_empty() {
            return Err(SceneError::Config("material.palette: must not be empty".into()));
        }
        check_colors("material.palette", &m.palette)?;
        m.roughness.check_within("material.roughness", 0.0, 1.0)?;
        m.specular.check_within("material.specular", 0.0, 1.0)?;

        for (name, s) in [("bed", &self.bed), ("background", &self.background)] {
            if s.textures.is_empty() {
                return Err(SceneError::Config(format!("{name}.textures: must not be empty")));
            }
            if s.textures.contains(&TextureKind::Image) && s.images.is_empty() {
                return Err(SceneError::Config(format!(
                    "{name}.textures: \"image\" requires {name}.images"
                )));
            }
            if s.colors.is_empty() {
                return Err(SceneError::Config(format!("{name}.colors: must not be empty")));
            }
            check_colors(&format!("{name}.colors"), &s.colors)?;
            s.tile.check(&format!("{name}.tile"))?;
            if s.tile.min <= 0.0 {
                return Err(SceneError::Config(format!("{name}.tile: must be positive")));
            }
            s.rotation.check(&format!("{name}.rotation"))?;
            s.offset.check(&format!("{name}.offset"))?;
        }
        if !(self.bed.half_size > 0.0) {
            return Err(SceneError::Config("bed.half_size: must be positive".into()));
        }
        Ok(())
    }
}

fn check_colors(name: &str, colors: &[[f64; 3]]) -> Result<(), SceneError> {
    if colors
        .iter()
        .flatten()
        .any(|c| !(0.0..=1.0).contains(c))
    {
        return Err(SceneError::Config(format!(
            "{name}: color channels must lie in [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Point,
    pub look_at: Point,
    pub up: Vector,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.vertical_fov > 10.0 && self.vertical_fov < 120.0) {
            return Err(SceneError::Config(format!(
                "camera fov {} outside (10, 120)",
                self.vertical_fov
            )));
        }
        let view = self.look_at - self.position;
        if view.norm() == 0.0 {
            return Err(SceneError::Config("camera position equals look_at".into()));
        }
        if view.normalize().cross(&self.up).norm() < 1e-9 {
            return Err(SceneError::Config("camera up is parallel to the view direction".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(SceneError::Config("camera resolution below 16 px".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightKind {
    /// Directional light; `vector` points from the scene toward the sun.
    Sun,
    /// Omni light at position `vector`, inverse-square falloff.
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Light {
    pub kind: LightKind,
    pub vector: Vector,
    pub intensity: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub color: [f64; 3],
    pub roughness: f64,
    pub specular: f64,
}

/// Textured surface: the printing bed (a finite square on `z = 0`) or the
/// backdrop seen where rays escape.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub texture: TextureId,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    pub tile: f64,
    pub rotation_deg: f64,
    pub offset: [f64; 2],
    pub center: [f64; 2],
    pub half_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub camera: Camera,
    /// The sun first, then 1..=4 point lights.
    pub lights: Vec<Light>,
    pub bed: Surface,
    pub background: Surface,
    pub material: Material,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame_index: usize,
    pub scene: SceneInstance,
}

fn spherical(radius: f64, elevation_deg: f64, azimuth_deg: f64) -> Vector {
    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    Vector::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius
}

fn sample_color(rng: &mut SceneRng, set: &[[f64; 3]]) -> [f64; 3] {
    set[rng.index(set.len())]
}

fn sample_texture(rng: &mut SceneRng, s: &SurfaceRanges) -> TextureId {
    match s.textures[rng.index(s.textures.len())] {
        TextureKind::Flat => TextureId::Flat,
        TextureKind::Checker => TextureId::Checker,
        TextureKind::Grid => TextureId::Grid,
        TextureKind::Noise => TextureId::Noise,
        TextureKind::Gradient => TextureId::Gradient,
        TextureKind::Image => TextureId::Image(rng.index(s.images.len()) as u32),
    }
}

fn sample_surface(rng: &mut SceneRng, s: &SurfaceRanges, center: &Point) -> Surface {
    let texture = sample_texture(rng, s);
    let color_a = sample_color(rng, &s.colors);
    let mut color_b = sample_color(rng, &s.colors);
    if color_b == color_a && s.colors.len() > 1 {
        color_b = s.colors[(s.colors.iter().position(|c| *c == color_a).unwrap() + 1) % s.colors.len()];
    }
    Surface {
        texture,
        color_a,
        color_b,
        tile: rng.uniform(s.tile),
        rotation_deg: rng.uniform(s.rotation),
        offset: [rng.uniform(s.offset), rng.uniform(s.offset)],
        center: [center.x, center.y],
        half_size: s.half_size,
    }
}

/// Draws a scene framing the part with the given bounds.
pub fn sample_scene(
    seed: u64,
    ranges: &SceneRanges,
    bounds: &Aabb,
) -> Result<SceneInstance, SceneError> {
    sample_scene_with(seed, ranges, bounds, None)
}

/// Like [`sample_scene`], optionally pinning the number of point lights so
/// that keyframes of one animation can be interpolated.
pub fn sample_scene_with(
    seed: u64,
    ranges: &SceneRanges,
    bounds: &Aabb,
    point_lights: Option<u32>,
) -> Result<SceneInstance, SceneError> {
    ranges.validate()?;
    if bounds.is_empty() {
        return Err(SceneError::EmptyBounds);
    }
    let mut rng = SceneRng::new(seed);
    let centroid = bounds.center();
    let half = bounds.half_extents();
    let [width, height] = ranges.resolution;

    let c = &ranges.camera;
    let mut camera = None;
    for _ in 0..=ranges.max_retries {
        let radius = rng.uniform(c.radius);
        let elevation = rng.uniform(c.elevation);
        let azimuth = rng.uniform(c.azimuth);
        let fov = rng.uniform(c.fov);
        let mut look_at = centroid;
        for i in 0..3 {
            let j = rng.uniform(c.target_jitter) * (2.0 * rng.unit() - 1.0);
            look_at[i] += j * half[i];
        }
        let cam = Camera {
            position: centroid + spherical(radius, elevation, azimuth),
            look_at,
            up: Vector::z(),
            vertical_fov: fov,
            width,
            height,
        };
        if cam.validate().is_ok() && frames_part(&cam, bounds) {
            camera = Some(cam);
            break;
        }
    }
    let camera = camera.ok_or(SceneError::NoFraming(ranges.max_retries + 1))?;

    let s = &ranges.sun;
    let mut lights = vec![Light {
        kind: LightKind::Sun,
        vector: spherical(1.0, rng.uniform(s.elevation), rng.uniform(s.azimuth)),
        intensity: rng.uniform(s.intensity),
        color: [1.0; 3],
    }];
    let l = &ranges.lights;
    let count = point_lights.unwrap_or_else(|| rng.int_inclusive(l.count.min, l.count.max));
    for _ in 0..count {
        let r = rng.uniform(l.radius);
        let offset = spherical(r, rng.uniform(l.elevation), rng.uniform(l.azimuth));
        let irradiance = rng.uniform(l.irradiance);
        let color = [rng.uniform(l.tint), rng.uniform(l.tint), rng.uniform(l.tint)];
        lights.push(Light {
            kind: LightKind::Point,
            vector: (centroid + offset).coords,
            intensity: irradiance * r * r,
            color,
        });
    }

    let m = &ranges.material;
    let material = Material {
        color: sample_color(&mut rng, &m.palette),
        roughness: rng.uniform(m.roughness),
        specular: rng.uniform(m.specular),
    };
    let bed = sample_surface(&mut rng, &ranges.bed, &centroid);
    let background = sample_surface(&mut rng, &ranges.background, &centroid);

    Ok(SceneInstance {
        camera,
        lights,
        bed,
        background,
        material,
        rng_seed: seed,
    })
}

/// True when the camera sits outside the part and at least one point of its
/// bounding box projects inside the image.
pub fn frames_part(camera: &Camera, bounds: &Aabb) -> bool {
    if bounds.contains(&camera.position) {
        return false;
    }
    let frame = raster::CameraFrame::new(camera);
    let (w, h) = (camera.width as f64, camera.height as f64);
    bounds
        .corners()
        .iter()
        .chain(std::iter::once(&bounds.center()))
        .filter_map(|p| frame.project(p))
        .any(|p| p.u >= 0.0 && p.u < w && p.v >= 0.0 && p.v < h)
}

fn lerp3(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)]
}

fn lerp_point(a: &Point, b: &Point, t: f64) -> Point {
    Point::new(lerp(a.x, b.x, t), lerp(a.y, b.y, t), lerp(a.z, b.z, t))
}

fn lerp_vector(a: &Vector, b: &Vector, t: f64) -> Vector {
    lerp_point(&Point::from(*a), &Point::from(*b), t).coords
}

fn lerp_surface(a: &Surface, b: &Surface, t: f64) -> Surface {
    Surface {
        texture: a.texture,
        color_a: lerp3(&a.color_a, &b.color_a, t),
        color_b: lerp3(&a.color_b, &b.color_b, t),
        tile: lerp(a.tile, b.tile, t),
        rotation_deg: lerp(a.rotation_deg, b.rotation_deg, t),
        offset: [lerp(a.offset[0], b.offset[0], t), lerp(a.offset[1], b.offset[1], t)],
        center: [lerp(a.center[0], b.center[0], t), lerp(a.center[1], b.center[1], t)],
        half_size: lerp(a.half_size, b.half_size, t),
    }
}

/// Linear blend between two keyframes.
///
/// Continuous quantities (positions, colors, intensities, texture placement)
/// are interpolated; discrete ones (texture ids, resolution, seed) come from
/// `a`. The camera is interpolated through its position and look-at point.
pub fn interpolate(a: &Keyframe, b: &Keyframe, t: f64) -> Result<SceneInstance, SceneError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SceneError::BadFraction(t));
    }
    if a.frame_index >= b.frame_index {
        return Err(SceneError::KeyframeOrder {
            a: a.frame_index,
            b: b.frame_index,
        });
    }
    let (sa, sb) = (&a.scene, &b.scene);
    if sa.lights.len() != sb.lights.len()
        || sa.lights.iter().zip(&sb.lights).any(|(x, y)| x.kind != y.kind)
    {
        return Err(SceneError::LightMismatch);
    }
    let lights = sa
        .lights
        .iter()
        .zip(&sb.lights)
        .map(|(x, y)| {
            let mut v = lerp_vector(&x.vector, &y.vector, t);
            if x.kind == LightKind::Sun && t != 0.0 && t != 1.0 {
                v = v.try_normalize(0.0).unwrap_or(x.vector);
            }
            Light {
                kind: x.kind,
                vector: v,
                intensity: lerp(x.intensity, y.intensity, t),
                color: lerp3(&x.color, &y.color, t),
            }
        })
        .collect();
    let mut up = lerp_vector(&sa.camera.up, &sb.camera.up, t);
    if t != 0.0 && t != 1.0 {
        up = up.try_normalize(0.0).unwrap_or(sa.camera.up);
    }
    Ok(SceneInstance {
        camera: Camera {
            position: lerp_point(&sa.camera.position, &sb.camera.position, t),
            look_at: lerp_point(&sa.camera.look_at, &sb.camera.look_at, t),
            up,
            vertical_fov: lerp(sa.camera.vertical_fov, sb.camera.vertical_fov, t),
            width: sa.camera.width,
            height: sa.camera.height,
        },
        lights,
        bed: lerp_surface(&sa.bed, &sb.bed, t),
        background: lerp_surface(&sa.background, &sb.background, t),
        material: Material {
            color: lerp3(&sa.material.color, &sb.material.color, t),
            roughness: lerp(sa.material.roughness, sb.material.roughness, t),
            specular: lerp(sa.material.specular, sb.material.specular, t),
        },
        rng_seed: sa.rng_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part() -> Aabb {
        let mut b = Aabb::empty();
        b.include(&Point::new(90.0, 90.0, 0.0));
        b.include(&Point::new(110.0, 110.0, 3.0));
        b
    }

    #[test]
    fn same_seed_same_scene() {
        let r = SceneRanges::default();
        let a = sample_scene(11, &r, &part()).unwrap();
        let b = sample_scene(11, &r, &part()).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(12, &r, &part()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_elevation_is_exact() {
        let mut r = SceneRanges::default();
        r.camera.elevation = Span::new(30.0, 30.0);
        r.camera.target_jitter = Span::new(0.0, 0.0);
        for seed in 0..20 {
            let s = sample_scene(seed, &r, &part()).unwrap();
            let d = s.camera.position - part().center();
            let el = (d.z / d.norm()).asin().to_degrees();
            assert!((el - 30.0).abs() < 1e-9, "{el}");
        }
    }

    #[test]
    fn sampled_values_within_ranges() {
        let r = SceneRanges::default();
        for seed in 0..200 {
            let s = sample_scene(seed, &r, &part()).unwrap();
            let d = (s.camera.position - part().center()).norm();
            assert!(d >= r.camera.radius.min && d <= r.camera.radius.max);
            assert!(part().contains(&s.camera.look_at));
            assert!((2..=5).contains(&s.lights.len()));
            assert_eq!(s.lights[0].kind, LightKind::Sun);
            assert!((s.lights[0].vector.norm() - 1.0).abs() < 1e-12);
            assert!(r.material.palette.contains(&s.material.color));
            assert!(frames_part(&s.camera, &part()));
        }
    }

    #[test]
    fn empty_range_is_config_error() {
        let mut r = SceneRanges::default();
        r.camera.radius = Span::new(10.0, 5.0);
        assert!(matches!(sample_scene(1, &r, &part()), Err(SceneError::Config(_))));
        let mut r = SceneRanges::default();
        r.lights.count = CountSpan { min: 3, max: 2 };
        assert!(matches!(sample_scene(1, &r, &part()), Err(SceneError::Config(_))));
    }

    #[test]
    fn camera_inside_part_never_accepted() {
        let mut r = SceneRanges::default();
        r.camera.radius = Span::new(1.0, 1.0);
        r.camera.target_jitter = Span::new(0.0, 0.0);
        r.max_retries = 3;
        assert!(matches!(sample_scene(5, &r, &part()), Err(SceneError::NoFraming(4))));
    }

    #[test]
    fn toml_keys() {
        let r = SceneRanges::from_toml_str(
            "resolution = [64, 48]\n[camera]\nradius = { min = 50.0, max = 60.0 }\n[lights]\ncount = { min = 2, max = 2 }\n",
        )
        .unwrap();
        assert_eq!(r.resolution, [64, 48]);
        assert_eq!(r.camera.radius, Span::new(50.0, 60.0));
        assert_eq!(r.camera.fov, CameraRanges::default().fov);
        assert!(SceneRanges::from_toml_str("[camera]\nbogus = 1\n").is_err());
    }

    fn keyframes() -> (Keyframe, Keyframe) {
        let r = SceneRanges::default();
        let a = sample_scene_with(1, &r, &part(), Some(2)).unwrap();
        let b = sample_scene_with(2, &r, &part(), Some(2)).unwrap();
        (
            Keyframe { frame_index: 0, scene: a },
            Keyframe { frame_index: 10, scene: b },
        )
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let (a, b) = keyframes();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a.scene);
        let end = interpolate(&a, &b, 1.0).unwrap();
        assert_eq!(end.camera.position, b.scene.camera.position);
        assert_eq!(end.lights, b.scene.lights);
        assert_eq!(end.material, b.scene.material);
        assert_eq!(end.bed.texture, a.scene.bed.texture);

        let mut a2 = a.clone();
        let mut b2 = b.clone();
        a2.scene.camera.position.x = 0.0;
        b2.scene.camera.position.x = 10.0;
        assert_eq!(interpolate(&a2, &b2, 0.5).unwrap().camera.position.x, 5.0);
    }

    #[test]
    fn interpolation_errors() {
        let (a, b) = keyframes();
        assert!(matches!(interpolate(&a, &b, 1.5), Err(SceneError::BadFraction(_))));
        assert!(matches!(interpolate(&a, &b, f64::NAN), Err(SceneError::BadFraction(_))));
        assert!(matches!(interpolate(&b, &a, 0.5), Err(SceneError::KeyframeOrder { .. })));
        let mut c = b.clone();
        c.scene.lights.pop();
        assert!(matches!(interpolate(&a, &c, 0.5), Err(SceneError::LightMismatch)));
    }
}
