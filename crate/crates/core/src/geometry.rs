//! Microphone arrays, pair enumeration, the DoA search grid and the TDoA
//! lookup table.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Minimum distance between two microphones, in meters.
const MIN_MIC_SEPARATION: f64 = 1e-6;

/// Hemisphere grids keep every vertex with `z >= -HEMISPHERE_TOLERANCE`.
const HEMISPHERE_TOLERANCE: f64 = 1e-6;

/// Highest supported icosahedron subdivision level.
pub const MAX_GRID_LEVEL: u32 = 6;

/// Interpolation factors accepted by the table builder and the correlator.
pub const INTERPOLATION_FACTORS: [u32; 4] = [1, 2, 4, 8];

/// Environment variable naming a directory searched for `<name>.json`
/// geometry files when `--array` is neither a preset nor a path.
pub const ARRAY_DIR_ENV: &str = "SMPPHAT_ARRAY_DIR";

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn normalize(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Angle between two unit vectors in degrees, clamped into `[0, 180]`.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Azimuth (from +x towards +y) and elevation (from the xy-plane) in degrees.
pub fn azimuth_elevation_deg(u: &Vec3) -> (f64, f64) {
    let az = u[1].atan2(u[0]).to_degrees();
    let el = u[2].clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

/// Geometry file layout: `{"name": "...", "mics": [[x, y, z], ...]}` in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub name: String,
    pub mics: Vec<Vec3>,
}

/// Built-in array presets, in the order they are usually reported.
pub const PRESET_NAMES: [&str; 4] = ["respeaker-usb", "respeaker-core", "minidsp-uma", "matrix-creator"];

const RESPEAKER_USB: [Vec3; 4] = [
    [-0.0320, 0.0000, 0.0],
    [0.0000, -0.0320, 0.0],
    [0.0320, 0.0000, 0.0],
    [0.0000, 0.0320, 0.0],
];

const RESPEAKER_CORE: [Vec3; 6] = [
    [-0.0232, 0.0401, 0.0],
    [-0.0463, 0.0000, 0.0],
    [-0.0232, -0.0401, 0.0],
    [0.0232, -0.0401, 0.0],
    [0.0463, 0.0000, 0.0],
    [0.0232, 0.0401, 0.0],
];

const MINIDSP_UMA: [Vec3; 7] = [
    [0.0000, 0.0000, 0.0],
    [0.0000, 0.0430, 0.0],
    [0.0370, 0.0210, 0.0],
    [0.0370, -0.0210, 0.0],
    [0.0000, -0.0430, 0.0],
    [-0.0370, -0.0210, 0.0],
    [-0.0370, 0.0210, 0.0],
];

const MATRIX_CREATOR: [Vec3; 8] = [
    [0.0201, -0.0485, 0.0],
    [-0.0201, -0.0485, 0.0],
    [-0.0485, -0.0201, 0.0],
    [-0.0485, 0.0201, 0.0],
    [-0.0201, 0.0485, 0.0],
    [0.0201, 0.0485, 0.0],
    [0.0485, 0.0201, 0.0],
    [0.0485, -0.0201, 0.0],
];

/// An ordered set of omnidirectional microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArray {
    name: String,
    mics: Vec<Vec3>,
}

impl MicArray {
    pub fn new(name: impl Into<String>, mics: Vec<Vec3>) -> Result<Self> {
        if mics.len() < 2 {
            return Err(Error::Geometry(format!(
                "at least 2 microphones required, got {}",
                mics.len()
            )));
        }
        if let Some(bad) = mics.iter().position(|m| m.iter().any(|c| !c.is_finite())) {
            return Err(Error::Geometry(format!("microphone {} has a non-finite coordinate", bad + 1)));
        }
        for (a, ma) in mics.iter().enumerate() {
            for (b, mb) in mics.iter().enumerate().skip(a + 1) {
                if norm(&sub(ma, mb)) <= MIN_MIC_SEPARATION {
                    return Err(Error::Geometry(format!(
                        "microphones {} and {} coincide",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(Self { name: name.into(), mics })
    }

    /// One of the built-in geometries listed in [`PRESET_NAMES`].
    pub fn preset(name: &str) -> Result<Self> {
        let mics: &[Vec3] = match name {
            "respeaker-usb" => &RESPEAKER_USB,
            "respeaker-core" => &RESPEAKER_CORE,
            "minidsp-uma" => &MINIDSP_UMA,
            "matrix-creator" => &MATRIX_CREATOR,
            _ => return Err(Error::UnknownArray(name.to_string())),
        };
        Self::new(name, mics.to_vec())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: GeometryConfig =
            serde_json::from_str(text).map_err(|e| Error::Geometry(format!("malformed config: {e}")))?;
        Self::new(config.name, config.mics)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Resolves a preset name, a path to a geometry file, or a file named
    /// `<spec>.json` inside the directory given by [`ARRAY_DIR_ENV`].
    pub fn load(spec: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&spec) {
            return Self::preset(spec);
        }
        let path = Path::new(spec);
        if path.is_file() {
            return Self::from_file(path);
        }
        if let Ok(dir) = std::env::var(ARRAY_DIR_ENV) {
            let candidate = Path::new(&dir).join(format!("{spec}.json"));
            if candidate.is_file() {
                return Self::from_file(candidate);
            }
        }
        Err(Error::UnknownArray(spec.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mics(&self) -> &[Vec3] {
        &self.mics
    }

    pub fn len(&self) -> usize {
        self.mics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mics.is_empty()
    }

    /// Mic positions shifted so that the array origin lands on `center`.
    pub fn positions_at(&self, center: &Vec3) -> Vec<Vec3> {
        self.mics.iter().map(|m| add(m, center)).collect()
    }

    /// The same array with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mics = self
            .mics
            .iter()
            .map(|m| [m[0] * factor, m[1] * factor, m[2] * factor])
            .collect();
        Self::new(self.name.clone(), mics)
    }

    pub fn to_config(&self) -> GeometryConfig {
        GeometryConfig { name: self.name.clone(), mics: self.mics.clone() }
    }
}

/// A microphone pair. `u < v` are zero-based mic indices and `d = x_u - x_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair {
    pub u: usize,
    pub v: usize,
    pub d: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pairs: Vec<Pair>,
}

impl PairSet {
    /// Enumerates all pairs in lexicographic `(u, v)` order with `u < v`.
    pub fn enumerate(array: &MicArray) -> Self {
        let mics = array.mics();
        let mut pairs = Vec::with_capacity(mics.len() * (mics.len() - 1) / 2);
        for u in 0..mics.len() {
            for v in u + 1..mics.len() {
                pairs.push(Pair { u, v, d: sub(&mics[u], &mics[v]) });
            }
        }
        Self { pairs }
    }

    /// Builds a set from explicit pairs; used for re-planning subsets.
    pub fn from_pairs(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, p: usize) -> &Pair {
        &self.pairs[p]
    }
}

/// Candidate directions of arrival, all unit vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoaGrid {
    dirs: Vec<Vec3>,
}

impl DoaGrid {
    /// Recursively subdivided icosahedron projected on the unit sphere.
    ///
    /// The base icosahedron has its poles on the z axis. Each level splits
    /// every triangle in four through its (projected) edge midpoints. With
    /// `hemisphere` set only the vertices with `z >= -1e-6` are kept, which
    /// retains the equator: level 4 gives 1321 directions.
    pub fn icosphere(level: u32, hemisphere: bool) -> Result<Self> {
        if level > MAX_GRID_LEVEL {
            return Err(Error::GridLevel(level));
        }
        let (mut vertices, mut faces) = icosahedron();
        for _ in 0..level {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
            let mut next = Vec::with_capacity(faces.len() * 4);
            for &[a, b, c] in &faces {
                let ab = midpoint(&mut vertices, &mut midpoints, a, b);
                let bc = midpoint(&mut vertices, &mut midpoints, b, c);
                let ca = midpoint(&mut vertices, &mut midpoints, c, a);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        if hemisphere {
            vertices.retain(|v| v[2] >= -HEMISPHERE_TOLERANCE);
        }
        Ok(Self { dirs: vertices })
    }

    /// Wraps explicit directions; every vector must have unit norm.
    pub fn from_directions(dirs: Vec<Vec3>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::InvalidParameter("empty direction grid".into()));
        }
        if let Some(i) = dirs.iter().position(|d| (norm(d) - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidParameter(format!("direction {} is not a unit vector", i + 1)));
        }
        Ok(Self { dirs })
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn get(&self, i: usize) -> &Vec3 {
        &self.dirs[i]
    }
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let h = 1.0 / 5f64.sqrt();
    let r = 2.0 / 5f64.sqrt();
    let mut vertices = Vec::with_capacity(12);
    vertices.push([0.0, 0.0, 1.0]);
    for j in 0..5 {
        let a = (72.0 * j as f64).to_radians();
        vertices.push([r * a.cos(), r * a.sin(), h]);
    }
    for j in 0..5 {
        let a = (36.0 + 72.0 * j as f64).to_radians();
        vertices.push([r * a.cos(), r * a.sin(), -h]);
    }
    vertices.push([0.0, 0.0, -1.0]);

    let mut faces = Vec::with_capacity(20);
    for j in 0..5 {
        let (u0, u1) = (1 + j, 1 + (j + 1) % 5);
        let (l0, l1) = (6 + j, 6 + (j + 1) % 5);
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([11, l1, l0]);
    }
    (vertices, faces)
}

fn midpoint(vertices: &mut Vec<Vec3>, cache: &mut HashMap<(usize, usize), usize>, a: usize, b: usize) -> usize {
    let key = if a < b { (a, b) } else { (b, a) };
    *cache.entry(key).or_insert_with(|| {
        let m = normalize(&add(&vertices[a], &vertices[b]));
        vertices.push(m);
        vertices.len() - 1
    })
}

/// Integer lookup delays `round(k * fs / c * d_p . u_i)` for every pair and
/// direction, stored pair-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdoaTable {
    pairs: usize,
    directions: usize,
    k: u32,
    fs: f64,
    c: f64,
    delays: Vec<i32>,
}

impl TdoaTable {
    pub fn build(pairs: &PairSet, grid: &DoaGrid, fs: f64, c: f64, k: u32) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidParameter(format!("sample rate must be positive, got {fs}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("speed of sound must be positive, got {c}")));
        }
        check_interpolation(k)?;
        let scale = k as f64 * fs / c;
        let mut delays = Vec::with_capacity(pairs.len() * grid.len());
        for pair in pairs.pairs() {
            // f64::round rounds half away from zero, so negating d negates the entry.
            delays.extend(grid.directions().iter().map(|u| (scale * dot(&pair.d, u)).round() as i32));
        }
        Ok(Self { pairs: pairs.len(), directions: grid.len(), k, fs, c, delays })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn get(&self, p: usize, i: usize) -> i32 {
        self.delays[p * self.directions + i]
    }

    /// All delays of pair `p`, one per direction.
    pub fn row(&self, p: usize) -> &[i32] {
        &self.delays[p * self.directions..(p + 1) * self.directions]
    }

    /// Raw little-endian dump: a header of `pairs`, `directions`, `k` as u32
    /// and `fs`, `c` as f64, followed by the pair-major i32 delays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 4 * self.delays.len());
        out.extend_from_slice(&(self.pairs as u32).to_le_bytes());
        out.extend_from_slice(&(self.directions as u32).to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.fs.to_le_bytes());
        out.extend_from_slice(&self.c.to_le_bytes());
        for d in &self.delays {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }
}

pub(crate) fn check_interpolation(k: u32) -> Result<()> {
    if INTERPOLATION_FACTORS.contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("interpolation factor must be 1, 2, 4 or 8, got {k}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_match_published_positions() {
        let usb = MicArray::preset("respeaker-usb").unwrap();
        assert_eq!(usb.len(), 4);
        assert_eq!(usb.mics()[0], [-0.0320, 0.0, 0.0]);
        let mc = MicArray::preset("matrix-creator").unwrap();
        assert_eq!(mc.len(), 8);
        assert_eq!(mc.mics()[7], [0.0485, -0.0201, 0.0]);
        assert_eq!(MicArray::preset("respeaker-core").unwrap().len(), 6);
        assert_eq!(MicArray::preset("minidsp-uma").unwrap().len(), 7);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(MicArray::new("one", vec![[0.0; 3]]), Err(Error::Geometry(_))));
        assert!(matches!(
            MicArray::new("dup", vec![[0.0; 3], [0.1, 0.0, 0.0], [0.0; 3]]),
            Err(Error::Geometry(_))
        ));
        assert!(MicArray::from_json("{\"name\": \"x\", \"mics\": [[0, 0]]}").is_err());
        assert!(MicArray::from_json("not json").is_err());
        assert!(matches!(MicArray::preset("nope"), Err(Error::UnknownArray(_))));
    }

    #[test]
    fn json_config_preserves_order() {
        let a = MicArray::from_json(r#"{"name": "line", "mics": [[0.1, 0, 0], [0, 0, 0], [-0.1, 0, 0]]}"#).unwrap();
        assert_eq!(a.name(), "line");
        assert_eq!(a.mics()[0], [0.1, 0.0, 0.0]);
        assert_eq!(a.mics()[2], [-0.1, 0.0, 0.0]);
    }

    #[test]
    fn pair_enumeration() {
        let usb = PairSet::enumerate(&MicArray::preset("respeaker-usb").unwrap());
        assert_eq!(usb.len(), 6);
        assert_eq!((usb.get(0).u, usb.get(0).v), (0, 1));
        let p2 = usb.get(1);
        assert_eq!((p2.u, p2.v), (0, 2));
        assert_abs_diff_eq!(p2.d[0], -0.064, epsilon = 1e-15);
        assert_eq!(p2.d[1], 0.0);

        let two = MicArray::new("two", vec![[0.0; 3], [0.0, 0.0, 0.1]]).unwrap();
        assert_eq!(PairSet::enumerate(&two).len(), 1);
        for m in 2..9 {
            let mics = (0..m).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
            let a = MicArray::new("line", mics).unwrap();
            assert_eq!(PairSet::enumerate(&a).len(), m * (m - 1) / 2);
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(DoaGrid::icosphere(0, false).unwrap().len(), 12);
        for level in 0..=5u32 {
            let full = DoaGrid::icosphere(level, false).unwrap();
            assert_eq!(full.len(), 10 * 4usize.pow(level) + 2);
        }
        assert_eq!(DoaGrid::icosphere(4, true).unwrap().len(), 1321);
        assert!(matches!(DoaGrid::icosphere(7, true), Err(Error::GridLevel(7))));
    }

    #[test]
    fn full_grid_is_antipodal_and_distinct() {
        let grid = DoaGrid::icosphere(3, false).unwrap();
        let dirs = grid.directions();
        for u in dirs {
            let neg = [-u[0], -u[1], -u[2]];
            assert!(dirs.iter().any(|w| norm(&sub(w, &neg)) < 1e-9));
        }
        for (a, u) in dirs.iter().enumerate() {
            for w in &dirs[a + 1..] {
                assert!(angle_deg(u, w).to_radians() > 1e-6);
            }
        }
    }

    #[test]
    fn level_four_neighbour_spacing() {
        // Level 4 has 2562 vertices on the sphere: neighbours sit 4-5 degrees apart.
        let grid = DoaGrid::icosphere(4, true).unwrap();
        let dirs = grid.directions();
        let worst = dirs
            .iter()
            .enumerate()
            .map(|(a, u)| {
                dirs.iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, w)| angle_deg(u, w))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        assert!(worst > 3.5 && worst < 5.0, "{worst}");
    }

    #[test]
    fn tdoa_arithmetic() {
        let pairs = PairSet::from_pairs(vec![Pair { u: 0, v: 2, d: [-0.064, 0.0, 0.0] }]);
        let grid = DoaGrid::from_directions(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let table = TdoaTable::build(&pairs, &grid, 16000.0, 343.0, 4).unwrap();
        assert_eq!(table.get(0, 0), -12);
        assert_eq!(table.get(0, 1), 0);
        assert_eq!(table.get(0, 2), 0);
    }

    #[test]
    fn tdoa_rejects_bad_parameters() {
        let array = MicArray::preset("respeaker-usb").unwrap();
        let pairs = PairSet::enumerate(&array);
        let grid = DoaGrid::icosphere(1, true).unwrap();
        assert!(TdoaTable::build(&pairs, &grid, 16000.0, 343.0, 3).is_err());
        assert!(TdoaTable::build(&pairs, &grid, 0.0, 343.0, 4).is_err());
        assert!(TdoaTable::build(&pairs, &grid, 16000.0, -1.0, 4).is_err());
    }

    #[test]
    fn tdoa_bytes_layout() {
        let array = MicArray::preset("respeaker-usb").unwrap();
        let table = TdoaTable::build(&PairSet::enumerate(&array), &DoaGrid::icosphere(1, true).unwrap(), 16000.0, 343.0, 4)
            .unwrap();
        let bytes = table.to_bytes();
        assert_eq!(bytes.len(), 28 + 4 * table.pairs() * table.directions());
        assert_eq!(u32::from_le_bytes(bytes[0..4].try_into().unwrap()), 6);
        let first = i32::from_le_bytes(bytes[28..32].try_into().unwrap());
        assert_eq!(first, table.get(0, 0));
    }
}
