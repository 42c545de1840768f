//! Ray-cast renderer producing a color image and a pixel-aligned label mask.
//!
//! Every bead is a capsule (a sphere swept along the segment) squashed
//! vertically to the layer height. One primary ray per pixel center finds the
//! nearest surface through a uniform grid; the winner writes both the shaded
//! color and its label, so the two buffers cannot disagree. There is no
//! antialiasing on either buffer.

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

use crate::gcode::ExtrusionSegment;
use crate::geom::{Aabb, Point, Ray, Vector};
use crate::scene::{Camera, Light, LightKind, Material, SceneError, SceneInstance, SceneRanges, Surface, TextureId};
use crate::semantics::{relabel_for_dataset, ClassifiedToolpath, DatasetKind};

/// Grid cells are this many bead widths on a side.
const CELL_WIDTHS: f64 = 4.0;
/// Upper bound on grid cells; the cell grows past `CELL_WIDTHS` if needed.
const MAX_CELLS: usize = 1 << 22;
/// Offset along the normal for shadow rays.
const SHADOW_BIAS: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("resolution {0}x{1} has zero area")]
    ZeroArea(u32, u32),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("texture image {0} is not loaded")]
    MissingTexture(u32),
    #[error("cannot load texture {path}: {source}")]
    TextureLoad {
        path: std::path::PathBuf,
        source: image::ImageError,
    },
}

/// Pinhole projection of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Pixel column, `0` at the left image edge.
    pub u: f64,
    /// Pixel row, `0` at the top image edge.
    pub v: f64,
    /// Distance along the optical axis.
    pub depth: f64,
}

/// Orthonormal camera basis plus intrinsics.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: Point,
    pub right: Vector,
    pub up: Vector,
    pub forward: Vector,
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraFrame {
    pub fn new(camera: &Camera) -> Self {
        let forward = (camera.look_at - camera.position).normalize();
        let right = forward.cross(&camera.up).normalize();
        let up = right.cross(&forward);
        let h = camera.height as f64;
        let focal = (h / 2.0) / (camera.vertical_fov.to_radians() / 2.0).tan();
        CameraFrame {
            origin: camera.position,
            right,
            up,
            forward,
            focal,
            cx: camera.width as f64 / 2.0,
            cy: h / 2.0,
        }
    }

    /// `None` when the point is at or behind the camera plane.
    pub fn project(&self, p: &Point) -> Option<Projection> {
        let d = p - self.origin;
        let depth = d.dot(&self.forward);
        if depth <= 0.0 {
            return None;
        }
        Some(Projection {
            u: self.cx + self.focal * d.dot(&self.right) / depth,
            v: self.cy - self.focal * d.dot(&self.up) / depth,
            depth,
        })
    }

    /// Unit-direction ray through image position `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let dir = self.forward * self.focal + self.right * (u - self.cx) - self.up * (v - self.cy);
        Ray::new(self.origin, dir.normalize())
    }
}

/// Projects a world point; `None` signals a point behind the camera.
pub fn project(camera: &Camera, p: &Point) -> Option<Projection> {
    CameraFrame::new(camera).project(p)
}

/// Bead solid: a capsule from `a` to `b`, scaled by `vertical_scale` along z
/// about the midpoint height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapsulePrimitive {
    pub a: Point,
    pub b: Point,
    pub radius: f64,
    pub vertical_scale: f64,
    pub class_label: u8,
    pub color: [f64; 3],
}

impl CapsulePrimitive {
    /// The bead hangs below the nozzle path: its axis sits half a layer
    /// height under the segment, so it spans `[z - height, z]`.
    pub fn from_segment(seg: &ExtrusionSegment, class_label: u8, color: [f64; 3]) -> Self {
        let radius = seg.width / 2.0;
        let vertical_scale = (seg.height / seg.width).min(1.0);
        let drop = Vector::new(0.0, 0.0, radius * vertical_scale);
        CapsulePrimitive {
            a: seg.start - drop,
            b: seg.end - drop,
            radius,
            vertical_scale,
            class_label,
            color,
        }
    }

    pub fn bounds(&self) -> Aabb {
        let r = self.radius;
        let rz = r * self.vertical_scale;
        let mut b = Aabb::empty();
        for p in [self.a, self.b] {
            b.include(&Point::new(p.x - r, p.y - r, p.z - rz));
            b.include(&Point::new(p.x + r, p.y + r, p.z + rz));
        }
        b
    }

    fn mid_z(&self) -> f64 {
        (self.a.z + self.b.z) / 2.0
    }

    /// World to unit-scale space (z stretched by `1 / vertical_scale`).
    fn unscale(&self, p: &Point) -> Point {
        let zc = self.mid_z();
        Point::new(p.x, p.y, zc + (p.z - zc) / self.vertical_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals distance for unit directions.
    pub t: f64,
    /// Outward unit surface normal.
    pub normal: Vector,
}

/// Nearest positive intersection of a ray with a capsule.
///
/// The ray is mapped into the capsule's unscaled frame, where the solid is
/// an ordinary capsule; the ray parameter is unchanged by that map. Each
/// quadric root is kept only if it lands on the part of the surface it
/// belongs to (the cylinder wall between the end caps, or a cap beyond its
/// end of the axis).
pub fn raycast_capsule(ray: &Ray, cap: &CapsulePrimitive) -> Option<Hit> {
    let s = cap.vertical_scale;
    let o = cap.unscale(&ray.origin);
    let d = Vector::new(ray.direction.x, ray.direction.y, ray.direction.z / s);
    let a = cap.unscale(&cap.a);
    let b = cap.unscale(&cap.b);
    let r = cap.radius;

    let ba = b - a;
    let oa = o - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(&d);
    let baoa = ba.dot(&oa);
    let dd = d.dot(&d);

    let mut best: Option<(f64, Vector)> = None;
    let mut consider = |t: f64, n: Vector| {
        if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };

    if baba > 0.0 {
        let qa = dd * baba - bard * bard;
        let qb = baba * d.dot(&oa) - baoa * bard;
        let qc = baba * oa.dot(&oa) - baoa * baoa - r * r * baba;
        let disc = qb * qb - qa * qc;
        if qa > 0.0 && disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-qb - sq) / qa, (-qb + sq) / qa] {
                let y = baoa + t * bard;
                if y > 0.0 && y < baba {
                    let p = oa + d * t;
                    consider(t, (p - ba * (y / baba)) / r);
                }
            }
        }
    }

    for (center, is_a) in [(a, true), (b, false)] {
        let oc = o - center;
        let hb = oc.dot(&d);
        let c = oc.dot(&oc) - r * r;
        let disc = hb * hb - dd * c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-hb - sq) / dd, (-hb + sq) / dd] {
            let y = baoa + t * bard;
            let on_cap = if baba == 0.0 {
                is_a
            } else if is_a {
                y <= 0.0
            } else {
                y >= baba
            };
            if on_cap {
                consider(t, (oc + d * t) / r);
            }
        }
    }

    best.map(|(t, n)| Hit {
        t,
        normal: Vector::new(n.x, n.y, n.z / s).normalize(),
    })
}

/// Lambert diffuse plus Blinn-Phong specular, summed over lights, before
/// clamping. `view` points from the surface toward the eye.
pub fn radiance(
    normal: &Vector,
    point: &Point,
    view: &Vector,
    lights: &[Light],
    material: &Material,
) -> [f64; 3] {
    let mut out = [0.0; 3];
    let shininess = 2.0 / (material.roughness * material.roughness).max(1e-3);
    for light in lights {
        let (dir, irradiance) = match light.kind {
            LightKind::Sun => (light.vector.normalize(), light.intensity),
            LightKind::Point => {
                let d = Point::from(light.vector) - point;
                let dist2 = d.dot(&d);
                (d / dist2.sqrt(), light.intensity / dist2)
            }
        };
        let ndl = normal.dot(&dir);
        if ndl <= 0.0 {
            continue;
        }
        let half = (dir + view).try_normalize(0.0).unwrap_or(*normal);
        let spec = material.specular * normal.dot(&half).max(0.0).powf(shininess);
        for c in 0..3 {
            let diffuse = (1.0 - material.specular) * material.color[c] * ndl;
            out[c] += (diffuse + spec) * irradiance * light.color[c];
        }
    }
    out
}

/// [`radiance`] clamped to `[0, 1]`.
pub fn shade(
    normal: &Vector,
    point: &Point,
    view: &Vector,
    lights: &[Light],
    material: &Material,
) -> [f64; 3] {
    radiance(normal, point, view, lights, material).map(|c| c.clamp(0.0, 1.0))
}

/// Images for [`TextureId::Image`] surfaces, loaded from [`SceneRanges`].
#[derive(Debug, Default, Clone)]
pub struct TextureBank {
    pub bed: Vec<RgbImage>,
    pub background: Vec<RgbImage>,
}

impl TextureBank {
    pub fn load(ranges: &SceneRanges) -> Result<Self, RasterError> {
        let load = |paths: &[std::path::PathBuf]| {
            paths
                .iter()
                .map(|p| {
                    image::open(p)
                        .map(|i| i.to_rgb8())
                        .map_err(|source| RasterError::TextureLoad {
                            path: p.clone(),
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(TextureBank {
            bed: load(&ranges.bed.images)?,
            background: load(&ranges.background.images)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions<'a> {
    /// Replace shading by [`flat_id_color`] of each pixel's label.
    pub flat_id: bool,
    /// Cast hard shadow rays toward every light.
    pub shadows: bool,
    pub textures: Option<&'a TextureBank>,
}

/// Injective label-to-color code used by flat-ID renders.
pub fn flat_id_color(level: u8) -> [u8; 3] {
    [level, level ^ 0x5a, 255 - level]
}

pub fn decode_flat_id(rgb: [u8; 3]) -> Option<u8> {
    let level = rgb[0];
    (flat_id_color(level) == rgb).then_some(level)
}

fn hash2(ix: i64, iy: i64, salt: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ salt;
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = hash2(ix, iy, salt);
    let b = hash2(ix + 1, iy, salt);
    let c = hash2(ix, iy + 1, salt);
    let d = hash2(ix + 1, iy + 1, salt);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn mix(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Texture lookup at surface coordinates `(x, y)` in millimeters, with
/// `ramp` in `[0, 1]` driving the gradient texture.
fn texture_at(surface: &Surface, x: f64, y: f64, ramp: f64, images: &[RgbImage]) -> [f64; 3] {
    let (sin, cos) = surface.rotation_deg.to_radians().sin_cos();
    let px = x - surface.offset[0];
    let py = y - surface.offset[1];
    let u = (cos * px + sin * py) / surface.tile;
    let v = (-sin * px + cos * py) / surface.tile;
    match surface.texture {
        TextureId::Flat => surface.color_a,
        TextureId::Checker => {
            if (u.floor() as i64 + v.floor() as i64).rem_euclid(2) == 0 {
                surface.color_a
            } else {
                surface.color_b
            }
        }
        TextureId::Grid => {
            let line = 0.06;
            if u - u.floor() < line || v - v.floor() < line {
                surface.color_b
            } else {
                surface.color_a
            }
        }
        TextureId::Noise => {
            let n = 0.65 * value_noise(u, v, 1) + 0.35 * value_noise(u * 4.0, v * 4.0, 2);
            mix(&surface.color_a, &surface.color_b, n)
        }
        TextureId::Gradient => mix(&surface.color_a, &surface.color_b, ramp.clamp(0.0, 1.0)),
        TextureId::Image(i) => {
            let img = &images[i as usize];
            let (w, h) = (img.width(), img.height());
            let ix = ((u - u.floor()) * w as f64) as u32;
            let iy = ((v - v.floor()) * h as f64) as u32;
            let p = img.get_pixel(ix.min(w - 1), iy.min(h - 1)).0;
            [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
        }
    }
}

/// Uniform grid over capsule bounding boxes, stored as compressed rows.
#[derive(Debug, Clone)]
pub struct CapsuleGrid {
    bounds: Aabb,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl CapsuleGrid {
    pub fn build(caps: &[CapsulePrimitive]) -> Option<CapsuleGrid> {
        if caps.is_empty() {
            return None;
        }
        let mut bounds = Aabb::empty();
        let mut max_width: f64 = 0.0;
        for c in caps {
            bounds = bounds.union(&c.bounds());
            max_width = max_width.max(2.0 * c.radius);
        }
        let pad = Vector::repeat(1e-6);
        bounds.min -= pad;
        bounds.max += pad;
        let extent = bounds.max - bounds.min;
        let mut cell = CELL_WIDTHS * max_width;
        let dims = loop {
            let dims = [0, 1, 2].map(|i| ((extent[i] / cell).ceil() as usize).max(1));
            if dims.iter().product::<usize>() <= MAX_CELLS {
                break dims;
            }
            cell *= 1.25;
        };
        let n_cells = dims.iter().product::<usize>();
        let range = |b: &Aabb| {
            [0, 1, 2].map(|i| {
                let lo = ((b.min[i] - bounds.min[i]) / cell).floor() as usize;
                let hi = ((b.max[i] - bounds.min[i]) / cell).floor() as usize;
                (lo.min(dims[i] - 1), hi.min(dims[i] - 1))
            })
        };
        let mut counts = vec![0u32; n_cells + 1];
        let ranges: Vec<_> = caps.iter().map(|c| range(&c.bounds())).collect();
        let index = |x: usize, y: usize, z: usize| (z * dims[1] + y) * dims[0] + x;
        for r in &ranges {
            for z in r[2].0..=r[2].1 {
                for y in r[1].0..=r[1].1 {
                    for x in r[0].0..=r[0].1 {
                        counts[index(x, y, z) + 1] += 1;
                    }
                }
            }
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[n_cells] as usize];
        for (ci, r) in ranges.iter().enumerate() {
            for z in r[2].0..=r[2].1 {
                for y in r[1].0..=r[1].1 {
                    for x in r[0].0..=r[0].1 {
                        let slot = &mut fill[index(x, y, z)];
                        items[*slot as usize] = ci as u32;
                        *slot += 1;
                    }
                }
            }
        }
        Some(CapsuleGrid {
            bounds,
            cell,
            dims,
            starts: counts,
            items,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Walks the cells pierced by the ray in order, calling `visit` with each
    /// cell's capsule indices and the ray parameter where the cell ends.
    /// `visit` returns `true` to stop.
    fn walk(&self, ray: &Ray, t_limit: f64, mut visit: impl FnMut(&[u32], f64) -> bool) {
        let Some((t0, t1)) = self.bounds.ray_interval(ray) else {
            return;
        };
        let t1 = t1.min(t_limit);
        if t0 > t1 {
            return;
        }
        let p = ray.at(t0);
        let mut idx = [0usize; 3];
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            let rel = ((p[i] - self.bounds.min[i]) / self.cell).floor();
            idx[i] = (rel.max(0.0) as usize).min(self.dims[i] - 1);
            let d = ray.direction[i];
            if d > 0.0 {
                step[i] = 1;
                let edge = self.bounds.min[i] + (idx[i] + 1) as f64 * self.cell;
                t_next[i] = t0 + (edge - p[i]) / d;
                t_delta[i] = self.cell / d;
            } else if d < 0.0 {
                step[i] = -1;
                let edge = self.bounds.min[i] + idx[i] as f64 * self.cell;
                t_next[i] = t0 + (edge - p[i]) / d;
                t_delta[i] = -self.cell / d;
            }
        }
        loop {
            let c = (idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0];
            let items = &self.items[self.starts[c] as usize..self.starts[c + 1] as usize];
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let t_exit = t_next[axis];
            if visit(items, t_exit) || t_exit > t1 {
                return;
            }
            let next = idx[axis] as i64 + step[axis];
            if next < 0 || next >= self.dims[axis] as i64 {
                return;
            }
            idx[axis] = next as usize;
            t_next[axis] += t_delta[axis];
        }
    }

    /// Nearest capsule hit with `t <= t_limit`; ties go to the lower index.
    pub fn trace(
        &self,
        ray: &Ray,
        caps: &[CapsulePrimitive],
        t_limit: f64,
    ) -> Option<(usize, Hit)> {
        let mut best: Option<(usize, Hit)> = None;
        self.walk(ray, t_limit, |items, t_exit| {
            for &i in items {
                let i = i as usize;
                if let Some(hit) = raycast_capsule(ray, &caps[i]) {
                    if hit.t > t_limit {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((bi, bh)) => hit.t < bh.t || (hit.t == bh.t && i < *bi),
                    };
                    if better {
                        best = Some((i, hit));
                    }
                }
            }
            best.is_some_and(|(_, h)| h.t < t_exit)
        });
        best
    }

    pub fn occluded(&self, ray: &Ray, caps: &[CapsulePrimitive], t_limit: f64) -> bool {
        let mut hit = false;
        self.walk(ray, t_limit, |items, _| {
            hit = items
                .iter()
                .any(|&i| raycast_capsule(ray, &caps[i as usize]).is_some_and(|h| h.t < t_limit));
            hit
        });
        hit
    }
}

/// Color, label and depth planes of one frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[u8; 3]>,
    pub label: Vec<u8>,
    /// Camera-space depth of the visible surface; `+inf` on background.
    pub depth: Vec<f64>,
}

impl FrameBuffers {
    pub fn color_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.color.concat()).expect("buffer size")
    }

    pub fn label_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.label.clone()).expect("buffer size")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMeta {
    pub source_digest: String,
    pub kind: DatasetKind,
    pub completion_layer: usize,
    pub frame_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub meta: PairMeta,
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

struct FrameContext<'a> {
    scene: &'a SceneInstance,
    frame: CameraFrame,
    caps: &'a [CapsulePrimitive],
    grid: Option<CapsuleGrid>,
    opts: RenderOptions<'a>,
    bed_material: Material,
}

impl FrameContext<'_> {
    fn visible_lights(&self, p: &Point, n: &Vector) -> Vec<Light> {
        let lights = &self.scene.lights;
        let (true, Some(grid)) = (self.opts.shadows, &self.grid) else {
            return lights.clone();
        };
        let origin = p + n * SHADOW_BIAS;
        lights
            .iter()
            .filter(|l| {
                let (dir, limit) = match l.kind {
                    LightKind::Sun => (l.vector.normalize(), f64::INFINITY),
                    LightKind::Point => {
                        let d = Point::from(l.vector) - origin;
                        (d.normalize(), d.norm())
                    }
                };
                !grid.occluded(&Ray::new(origin, dir), self.caps, limit)
            })
            .cloned()
            .collect()
    }

    fn pixel(&self, x: u32, y: u32) -> ([u8; 3], u8, f64) {
        let ray = self.frame.ray_through(x as f64 + 0.5, y as f64 + 0.5);
        let axial = ray.direction.dot(&self.frame.forward);
        let images = self.opts.textures;

        let bed = &self.scene.bed;
        let t_bed = if ray.direction.z < 0.0 && ray.origin.z > 0.0 {
            let t = -ray.origin.z / ray.direction.z;
            let p = ray.at(t);
            let inside = (p.x - bed.center[0]).abs() <= bed.half_size
                && (p.y - bed.center[1]).abs() <= bed.half_size;
            inside.then_some(t)
        } else {
            None
        };

        let cap = self
            .grid
            .as_ref()
            .and_then(|g| g.trace(&ray, self.caps, t_bed.unwrap_or(f64::INFINITY)));
        let view = -ray.direction;

        if let Some((i, hit)) = cap {
            let c = &self.caps[i];
            let label = c.class_label;
            let color = if self.opts.flat_id {
                flat_id_color(label)
            } else {
                let p = ray.at(hit.t);
                let n = if hit.normal.dot(&ray.direction) > 0.0 {
                    -hit.normal
                } else {
                    hit.normal
                };
                let material = Material {
                    color: c.color,
                    ..self.scene.material.clone()
                };
                to_u8(shade(&n, &p, &view, &self.visible_lights(&p, &n), &material))
            };
            return (color, label, hit.t * axial);
        }

        if let Some(t) = t_bed {
            let color = if self.opts.flat_id {
                flat_id_color(0)
            } else {
                let p = ray.at(t);
                let ramp = (p.y - bed.center[1] + bed.half_size) / (2.0 * bed.half_size);
                let imgs = images.map_or(&[][..], |b| &b.bed[..]);
                let base = texture_at(bed, p.x - bed.center[0], p.y - bed.center[1], ramp, imgs);
                let material = Material {
                    color: base,
                    ..self.bed_material.clone()
                };
                let n = Vector::z();
                to_u8(shade(&n, &p, &view, &self.visible_lights(&p, &n), &material))
            };
            return (color, 0, t * axial);
        }

        let color = if self.opts.flat_id {
            flat_id_color(0)
        } else {
            let d = ray.direction;
            let az = d.y.atan2(d.x).to_degrees();
            let el = d.z.clamp(-1.0, 1.0).asin().to_degrees();
            let bg = &self.scene.background;
            let imgs = images.map_or(&[][..], |b| &b.background[..]);
            to_u8(texture_at(bg, az, el, (el + 30.0) / 90.0, imgs))
        };
        (color, 0, f64::INFINITY)
    }
}

fn check_textures(scene: &SceneInstance, bank: Option<&TextureBank>) -> Result<(), RasterError> {
    for (surface, list) in [
        (&scene.bed, bank.map(|b| b.bed.len())),
        (&scene.background, bank.map(|b| b.background.len())),
    ] {
        if let TextureId::Image(i) = surface.texture {
            if list.is_none_or(|n| i as usize >= n) {
                return Err(RasterError::MissingTexture(i));
            }
        }
    }
    Ok(())
}

/// Capsules for every bead of a classified toolpath, labeled for `kind`.
pub fn capsules_for(ct: &ClassifiedToolpath, kind: DatasetKind, color: [f64; 3]) -> Vec<CapsulePrimitive> {
    let labels = relabel_for_dataset(ct, kind);
    ct.toolpath
        .segments
        .iter()
        .zip(labels)
        .map(|(s, l)| CapsulePrimitive::from_segment(s, l, color))
        .collect()
}

/// Renders raw capsules; the building block of [`render_frame`].
pub fn render_capsules(
    scene: &SceneInstance,
    caps: &[CapsulePrimitive],
    opts: &RenderOptions<'_>,
) -> Result<FrameBuffers, RasterError> {
    let (w, h) = (scene.camera.width, scene.camera.height);
    if w == 0 || h == 0 {
        return Err(RasterError::ZeroArea(w, h));
    }
    scene.camera.validate()?;
    check_textures(scene, opts.textures)?;
    let ctx = FrameContext {
        scene,
        frame: CameraFrame::new(&scene.camera),
        caps,
        grid: CapsuleGrid::build(caps),
        opts: *opts,
        bed_material: Material {
            color: [0.0; 3],
            roughness: 0.9,
            specular: 0.02,
        },
    };
    let n = (w * h) as usize;
    let mut color = vec![[0u8; 3]; n];
    let mut label = vec![0u8; n];
    let mut depth = vec![f64::INFINITY; n];
    let row = w as usize;
    color
        .par_chunks_mut(row)
        .zip(label.par_chunks_mut(row))
        .zip(depth.par_chunks_mut(row))
        .enumerate()
        .for_each(|(y, ((crow, lrow), drow))| {
            for x in 0..row {
                let (c, l, d) = ctx.pixel(x as u32, y as u32);
                crow[x] = c;
                lrow[x] = l;
                drow[x] = d;
            }
        });
    Ok(FrameBuffers {
        width: w,
        height: h,
        color,
        label,
        depth,
    })
}

/// Renders the color/label buffers of a classified toolpath.
pub fn render_buffers(
    scene: &SceneInstance,
    ct: &ClassifiedToolpath,
    kind: DatasetKind,
    opts: &RenderOptions<'_>,
) -> Result<FrameBuffers, RasterError> {
    let caps = capsules_for(ct, kind, scene.material.color);
    render_capsules(scene, &caps, opts)
}

/// Renders one image/mask pair. `meta.frame_index` is left at 0 for the
/// caller to set.
pub fn render_frame(
    scene: &SceneInstance,
    ct: &ClassifiedToolpath,
    kind: DatasetKind,
    opts: &RenderOptions<'_>,
) -> Result<ImagePair, RasterError> {
    let buffers = render_buffers(scene, ct, kind, opts)?;
    Ok(ImagePair {
        image: buffers.color_image(),
        mask: buffers.label_image(),
        meta: PairMeta {
            source_digest: ct.toolpath.source_digest.clone(),
            kind,
            completion_layer: ct.completion_layer,
            frame_index: 0,
            seed: scene.rng_seed,
        },
    })
}
