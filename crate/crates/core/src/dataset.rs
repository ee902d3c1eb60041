//! Procedural 3D shape classes, dataset assembly and persistence.
//!
//! Eight parametric surfaces stand in for a CAD corpus: their
//! silhouettes differ enough across a 12-camera ring to be separable,
//! yet generation is fully deterministic per (seed, spec). Every object
//! gets an anisotropic per-axis scale jitter, Gaussian coordinate noise,
//! then unit-sphere normalization.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{normalize_cloud, PointCloud, Vec3};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Cube,
        ShapeClass::Sphere,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::Ellipsoid,
        ShapeClass::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Cube => "cube",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Ellipsoid => "ellipsoid",
            ShapeClass::Cross => "cross",
        }
    }

    pub fn id(self) -> u16 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u16
    }

    pub fn from_id(id: u16) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::domain(format!("unknown shape class id {id}")))
    }
}

/// Generation parameters shared by all classes.
#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub points_per_object: usize,
    /// Per-axis scale drawn uniformly from this range.
    pub scale_jitter: (f64, f64),
    /// Standard deviation of per-coordinate Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec {
            points_per_object: 1024,
            scale_jitter: (0.7, 1.3),
            noise_sigma: 0.01,
        }
    }
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_object < 64 {
            return Err(Error::domain(format!(
                "points_per_object {} below minimum 64",
                self.points_per_object
            )));
        }
        if self.scale_jitter.0 <= 0.0 || self.scale_jitter.1 < self.scale_jitter.0 {
            return Err(Error::domain("invalid scale_jitter range"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::domain("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    /// Jitter-free variant, used by shape-geometry tests.
    pub fn exact(points: usize) -> Self {
        ShapeSpec {
            points_per_object: points,
            scale_jitter: (1.0, 1.0),
            noise_sigma: 0.0,
        }
    }
}

fn unit_direction(rng: &mut SplitMix64) -> Vec3 {
    loop {
        let v = [rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()];
        let n = crate::geometry::norm(v);
        if n > 1e-12 {
            return crate::geometry::scale(v, 1.0 / n);
        }
    }
}

/// Uniform point inside the triangle (a, b, c).
fn triangle_point(a: Vec3, b: Vec3, c: Vec3, rng: &mut SplitMix64) -> Vec3 {
    let su = rng.next_f64().sqrt();
    let v = rng.next_f64();
    let mut p = [0.0; 3];
    for i in 0..3 {
        p[i] = (1.0 - su) * a[i] + su * (1.0 - v) * b[i] + su * v * c[i];
    }
    p
}

/// One point on the canonical surface of `class`, before jitter.
fn surface_point(class: ShapeClass, rng: &mut SplitMix64) -> Vec3 {
    match class {
        ShapeClass::Cube => {
            // half extent 1; faces have equal area
            let face = rng.next_below(6);
            let u = rng.uniform(-1.0, 1.0);
            let v = rng.uniform(-1.0, 1.0);
            match face {
                0 => [1.0, u, v],
                1 => [-1.0, u, v],
                2 => [u, 1.0, v],
                3 => [u, -1.0, v],
                4 => [u, v, 1.0],
                _ => [u, v, -1.0],
            }
        }
        ShapeClass::Sphere => unit_direction(rng),
        ShapeClass::Cylinder => {
            let r = 0.55;
            let h = 1.0; // half height
            let side = 2.0 * std::f64::consts::PI * r * 2.0 * h;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            let pick = rng.uniform(0.0, side + caps);
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            if pick < side {
                let z = rng.uniform(-h, h);
                [r * theta.cos(), r * theta.sin(), z]
            } else {
                let rho = r * rng.next_f64().sqrt();
                let z = if rng.next_f64() < 0.5 { h } else { -h };
                [rho * theta.cos(), rho * theta.sin(), z]
            }
        }
        ShapeClass::Cone => {
            let r = 0.8;
            let apex = [0.0, 0.0, 1.0];
            let h = 2.0;
            let lateral = std::f64::consts::PI * r * (r * r + h * h).sqrt();
            let base = std::f64::consts::PI * r * r;
            let pick = rng.uniform(0.0, lateral + base);
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            if pick < lateral {
                let s = rng.next_f64().sqrt(); // fraction from apex
                [
                    apex[0] + s * r * theta.cos(),
                    apex[1] + s * r * theta.sin(),
                    apex[2] - s * h,
                ]
            } else {
                let rho = r * rng.next_f64().sqrt();
                [rho * theta.cos(), rho * theta.sin(), -1.0]
            }
        }
        ShapeClass::Torus => {
            let big = 0.7;
            let small = 0.3;
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            let phi = rng.uniform(0.0, std::f64::consts::TAU);
            let ring = big + small * phi.cos();
            [ring * theta.cos(), ring * theta.sin(), small * phi.sin()]
        }
        ShapeClass::Pyramid => {
            let b = 0.8; // base half extent at z = -1
            let apex = [0.0, 0.0, 1.0];
            let corners = [
                [b, b, -1.0],
                [-b, b, -1.0],
                [-b, -b, -1.0],
                [b, -b, -1.0],
            ];
            let slant = 0.5 * (2.0 * b) * (b * b + 4.0f64).sqrt();
            let base_area = (2.0 * b) * (2.0 * b);
            let pick = rng.uniform(0.0, 4.0 * slant + base_area);
            if pick < 4.0 * slant {
                let face = rng.next_below(4) as usize;
                triangle_point(apex, corners[face], corners[(face + 1) % 4], rng)
            } else {
                [rng.uniform(-b, b), rng.uniform(-b, b), -1.0]
            }
        }
        ShapeClass::Ellipsoid => {
            let d = unit_direction(rng);
            [d[0], d[1] * 0.65, d[2] * 0.4]
        }
        ShapeClass::Cross => {
            // Union of three axis-aligned bars of half-length 1 and
            // half-thickness t; bars are symmetric, so pick uniformly.
            let t = 0.25;
            let bar = rng.next_below(3) as usize;
            // On a bar: 4 long faces (area 2*2t each) and 2 end caps
            // ((2t)^2 each).
            let long_area = 4.0 * 2.0 * 2.0 * t;
            let cap_area = 2.0 * (2.0 * t) * (2.0 * t);
            let pick = rng.uniform(0.0, long_area + cap_area);
            let len = rng.uniform(-1.0, 1.0);
            let a = rng.uniform(-t, t);
            let local = if pick < long_area {
                let side = rng.next_below(4);
                match side {
                    0 => [len, t, a],
                    1 => [len, -t, a],
                    2 => [len, a, t],
                    _ => [len, a, -t],
                }
            } else {
                let end = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
                let b = rng.uniform(-t, t);
                [end, a, b]
            };
            match bar {
                0 => local,
                1 => [local[1], local[0], local[2]],
                _ => [local[2], local[1], local[0]],
            }
        }
    }
}

/// Samples one jittered, noised, normalized object of the given class.
pub fn generate_shape(
    spec: &ShapeSpec,
    class: ShapeClass,
    rng: &mut SplitMix64,
) -> Result<PointCloud> {
    spec.validate()?;
    let (lo, hi) = spec.scale_jitter;
    let scales = [rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)];
    let mut points = Vec::with_capacity(spec.points_per_object);
    for _ in 0..spec.points_per_object {
        let p = surface_point(class, rng);
        let mut q = [0.0; 3];
        for i in 0..3 {
            q[i] = p[i] * scales[i] + spec.noise_sigma * rng.next_gaussian();
        }
        points.push(q);
    }
    normalize_cloud(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn to_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            other => Err(Error::format(format!("unknown split tag {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetObject {
    pub cloud: PointCloud,
    pub class_id: u16,
    pub split: Split,
    /// Whether the label participates in the classification loss.
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub objects: Vec<DatasetObject>,
    pub num_classes: u16,
    /// Generation seed; zero when loaded from a file.
    pub seed: u64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetObject> {
        self.objects.iter().filter(move |o| o.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 40,
            val: 5,
            test: 15,
        }
    }
}

/// Generates `counts` objects per class for each split. Every object's
/// coordinates are determined by (seed, spec) alone: each object draws
/// from its own stream derived from the running object index.
pub fn generate_dataset(counts: SplitCounts, spec: &ShapeSpec, seed: u64) -> Result<Dataset> {
    if counts.train < 1 || counts.val < 1 || counts.test < 1 {
        return Err(Error::domain("each split needs at least one object per class"));
    }
    spec.validate()?;
    let per_class = counts.train + counts.val + counts.test;
    let mut objects = Vec::with_capacity(ShapeClass::ALL.len() * per_class);
    let mut global_index = 0u64;
    for class in ShapeClass::ALL {
        for i in 0..per_class {
            let split = if i < counts.train {
                Split::Train
            } else if i < counts.train + counts.val {
                Split::Val
            } else {
                Split::Test
            };
            let mut rng = SplitMix64::derive(seed, global_index);
            let cloud = generate_shape(spec, class, &mut rng)?;
            objects.push(DatasetObject {
                cloud,
                class_id: class.id(),
                split,
                labeled: true,
            });
            global_index += 1;
        }
    }
    Ok(Dataset {
        objects,
        num_classes: ShapeClass::ALL.len() as u16,
        seed,
    })
}

pub const MAGIC: &[u8; 4] = b"MVDS";
pub const VERSION: u16 = 1;

pub fn dataset_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.num_classes.to_le_bytes());
    let count = u32::try_from(ds.objects.len())
        .map_err(|_| Error::domain("too many objects for dataset file"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for obj in &ds.objects {
        out.extend_from_slice(&obj.class_id.to_le_bytes());
        out.push(obj.split.to_u8());
        out.extend_from_slice(&(obj.cloud.len() as u32).to_le_bytes());
        for p in obj.cloud.points() {
            for &c in p {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = dataset_bytes(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut offset = 0usize;
    let take = |offset: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *offset + n > bytes.len() {
            return Err(Error::format(format!(
                "dataset truncated at byte offset {}: expected {n} more bytes for {what}",
                *offset
            )));
        }
        let s = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(s)
    };
    let magic = take(&mut offset, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad dataset magic {magic:?} at byte offset 0, expected \"MVDS\""
        )));
    }
    let version = u16::from_le_bytes(take(&mut offset, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported dataset version {version} at byte offset 4"
        )));
    }
    let num_classes = u16::from_le_bytes(take(&mut offset, 2, "class count")?.try_into().unwrap());
    if num_classes == 0 {
        return Err(Error::format("dataset declares zero classes".to_string()));
    }
    let count = u32::from_le_bytes(take(&mut offset, 4, "object count")?.try_into().unwrap());
    let mut objects = Vec::with_capacity(count as usize);
    for i in 0..count {
        let class_id = u16::from_le_bytes(take(&mut offset, 2, "class id")?.try_into().unwrap());
        if class_id >= num_classes {
            return Err(Error::format(format!(
                "object {i}: class id {class_id} out of range at byte offset {}",
                offset - 2
            )));
        }
        let split = Split::from_u8(take(&mut offset, 1, "split tag")?[0])?;
        let n = u32::from_le_bytes(take(&mut offset, 4, "point count")?.try_into().unwrap());
        if n == 0 {
            return Err(Error::format(format!(
                "object {i}: zero points at byte offset {}",
                offset - 4
            )));
        }
        let coord_offset = offset;
        let raw = take(&mut offset, n as usize * 12, "point coordinates")?;
        let mut points = Vec::with_capacity(n as usize);
        for (j, chunk) in raw.chunks_exact(12).enumerate() {
            let p = [
                f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64,
                f32::from_le_bytes(chunk[8..12].try_into().unwrap()) as f64,
            ];
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::format(format!(
                    "object {i} point {j}: non-finite coordinate at byte offset {}",
                    coord_offset + j * 12
                )));
            }
            points.push(p);
        }
        let cloud = PointCloud::new(points)
            .map_err(|e| Error::format(format!("object {i}: {e}")))?;
        objects.push(DatasetObject {
            cloud,
            class_id,
            split,
            labeled: true,
        });
    }
    if offset != bytes.len() {
        return Err(Error::format(format!(
            "trailing garbage at byte offset {offset} in dataset file"
        )));
    }
    Ok(Dataset {
        objects,
        num_classes,
        seed: 0,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_dataset(&bytes)
}
