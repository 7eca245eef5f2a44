//! File formats: OBJ/PLY meshes, 16-bit depth and 8-bit mask PNGs, pose and
//! intrinsics JSON, template bundles and observation directories.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshFrame, TriangleMesh};
use crate::raster::{DepthMap, Mask, Observation, TemplateView};
use crate::{CameraIntrinsics, RigidTransform, ScaledModelPose};

/// Depth PNG units per meter (0.1 mm steps).
pub const DEPTH_UNITS_PER_METER: f64 = 10_000.0;

// ---- meshes ----------------------------------------------------------------

pub fn load_mesh(path: &Path, frame: MeshFrame) -> Result<TriangleMesh> {
    match extension(path).as_str() {
        "obj" => read_obj(BufReader::new(fs::File::open(path)?), frame),
        "ply" => read_ply(BufReader::new(fs::File::open(path)?), frame),
        other => Err(Error::Format(format!("unsupported mesh extension {other:?}"))),
    }
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    match extension(path).as_str() {
        "obj" => write_obj(mesh, &mut out)?,
        "ply" => write_ply(mesh, &mut out)?,
        other => return Err(Error::Format(format!("unsupported mesh extension {other:?}"))),
    }
    out.flush()?;
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// `v` and `f` records; polygons are fan-triangulated, negative indices are
/// relative to the end of the vertex list.
pub fn read_obj(reader: impl BufRead, frame: MeshFrame) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::Format(format!("obj line {}: {what}", lineno + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|_| bad("bad coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let n = vertices.len() as i64;
                        let resolved = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || resolved < 0 || resolved >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces, frame)
}

pub fn write_obj(mesh: &TriangleMesh, out: &mut impl Write) -> Result<()> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Format(format!("unknown ply type {other}"))),
        })
    }

    fn read(self, r: &mut impl Read) -> Result<f64> {
        macro_rules! le {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)
                    .map_err(|_| Error::Format("truncated ply body".into()))?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Self::I8 => le!(i8),
            Self::U8 => le!(u8),
            Self::I16 => le!(i16),
            Self::U16 => le!(u16),
            Self::I32 => le!(i32),
            Self::U32 => le!(u32),
            Self::F32 => le!(f32),
            Self::F64 => le!(f64),
        })
    }
}

enum PlyProp {
    Scalar(String, PlyType),
    List(PlyType, PlyType),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

/// Binary little-endian PLY with `vertex` (x, y, z) and `face`
/// (vertex index list) elements; other elements and properties are skipped.
pub fn read_ply(mut reader: impl BufRead, frame: MeshFrame) -> Result<TriangleMesh> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut binary = false;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("ply header not terminated".into()));
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => binary = true,
            ["format", f, _] => return Err(Error::Format(format!("unsupported ply format {f}"))),
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Format("bad element count".into()))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(PlyProp::List(PlyType::parse(ct)?, PlyType::parse(it)?)),
            ["property", t, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(PlyProp::Scalar(name.to_string(), PlyType::parse(t)?)),
            ["end_header"] => break,
            _ => {}
        }
    }
    if !binary {
        return Err(Error::Format("ply format line missing".into()));
    }
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for p in &el.props {
                match p {
                    PlyProp::Scalar(name, t) => {
                        let v = t.read(&mut reader)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    PlyProp::List(ct, it) => {
                        let n = ct.read(&mut reader)? as usize;
                        let idx: Vec<u32> = (0..n).map(|_| it.read(&mut reader).map(|v| v as u32)).collect::<Result<_>>()?;
                        if el.name == "face" && n >= 3 {
                            for k in 1..n - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    TriangleMesh::new(vertices, faces, frame)
}

pub fn write_ply(mesh: &TriangleMesh, out: &mut impl Write) -> Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.faces().len()
    )?;
    for v in mesh.vertices() {
        for c in v.iter() {
            out.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    for f in mesh.faces() {
        out.write_all(&[3u8])?;
        for i in f {
            out.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

// ---- images ----------------------------------------------------------------

fn encode_png<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    img: &ImageBuffer<P, Vec<S>>,
    path: &Path,
) -> Result<()>
where
    [S]: image::EncodableLayout,
{
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Depth in `units_per_meter` steps; values that do not fit in 16 bits are
/// stored as 0 (invalid).
pub fn save_depth_png(depth: &DepthMap, path: &Path, units_per_meter: f64) -> Result<()> {
    let data: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            let q = (d * units_per_meter).round();
            if q >= 1.0 && q <= u16::MAX as f64 {
                q as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(depth.width(), depth.height(), data)
        .ok_or_else(|| Error::Format("depth buffer size".into()))?;
    encode_png(&img, path)
}

pub fn load_depth_png(path: &Path, units_per_meter: f64) -> Result<DepthMap> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    DepthMap::from_vec(w, h, img.into_raw().into_iter().map(|v| v as f64 / units_per_meter).collect())
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width(), mask.height(), data).ok_or_else(|| Error::Format("mask buffer size".into()))?;
    encode_png(&img, path)
}

pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_vec(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
}

// ---- JSON records ------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for IntrinsicsJson {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsJson {
    pub fn to_intrinsics(self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// Rigid pose: row-major rotation and translation (meters for metric poses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct PoseJson {
    pub r: [f64; 9],
    #[serde(rename = "t")]
    pub t: [f64; 3],
}

impl From<&RigidTransform> for PoseJson {
    fn from(p: &RigidTransform) -> Self {
        Self {
            r: p.rotation_row_major(),
            t: p.translation_array(),
        }
    }
}

impl PoseJson {
    pub fn to_pose(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.r, &self.t)
    }
}

/// Similarity pose of a model: `x = R·(scale·p) + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoseJson {
    pub scale: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&ScaledModelPose> for ScaledPoseJson {
    fn from(p: &ScaledModelPose) -> Self {
        Self {
            scale: p.scale(),
            r: p.pose.rotation_row_major(),
            t: p.pose.translation_array(),
        }
    }
}

impl ScaledPoseJson {
    pub fn to_pose(&self) -> Result<ScaledModelPose> {
        ScaledModelPose::new(self.scale, RigidTransform::from_row_major(&self.r, &self.t)?)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

// ---- observations --------------------------------------------------------------

/// Reads `depth.png` (0.1 mm units), `mask.png` and `intrinsics.json` from a
/// directory.
pub fn load_observation(dir: &Path) -> Result<Observation> {
    let k = read_json::<IntrinsicsJson>(&dir.join("intrinsics.json"))?.to_intrinsics()?;
    let depth = load_depth_png(&dir.join("depth.png"), DEPTH_UNITS_PER_METER)?;
    let mask = load_mask_png(&dir.join("mask.png"))?;
    Observation::new(depth, mask, k)
}

pub fn save_observation(obs: &Observation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&IntrinsicsJson::from(&obs.intrinsics), &dir.join("intrinsics.json"))?;
    save_depth_png(&obs.depth, &dir.join("depth.png"), DEPTH_UNITS_PER_METER)?;
    save_mask_png(&obs.mask, &dir.join("mask.png"))
}

// ---- template bundles -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub index: usize,
    pub depth: String,
    pub mask: String,
    pub model_scale: f64,
    pub camera_from_object: PoseJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateIndex {
    pub intrinsics: IntrinsicsJson,
    /// Bounding radius of the mesh the templates were rendered from.
    pub model_radius: f64,
    /// Depth PNG steps per model unit.
    pub depth_units: f64,
    pub templates: Vec<TemplateRecord>,
}

/// Writes `depth/NNNNNN.png`, `mask/NNNNNN.png` and `poses.json`.
pub fn save_templates(templates: &[TemplateView], model_radius: f64, dir: &Path) -> Result<()> {
    let first = templates.first().ok_or_else(|| Error::InvalidConfig("no templates to save".into()))?;
    fs::create_dir_all(dir.join("depth"))?;
    fs::create_dir_all(dir.join("mask"))?;
    let max_depth = templates
        .iter()
        .flat_map(|t| t.depth.data().iter().cloned())
        .fold(0.0, f64::max);
    // Finest step that still fits the deepest template pixel into 16 bits.
    let depth_units = (60_000.0 / max_depth.max(1e-9)).floor().max(1.0);
    let mut records = Vec::with_capacity(templates.len());
    for (i, t) in templates.iter().enumerate() {
        let depth = format!("depth/{i:06}.png");
        let mask = format!("mask/{i:06}.png");
        save_depth_png(&t.depth, &dir.join(&depth), depth_units)?;
        save_mask_png(&t.mask, &dir.join(&mask))?;
        records.push(TemplateRecord {
            index: i,
            depth,
            mask,
            model_scale: t.model_scale,
            camera_from_object: PoseJson::from(&t.camera_from_object),
        });
    }
    write_json(
        &TemplateIndex {
            intrinsics: IntrinsicsJson::from(&first.intrinsics),
            model_radius,
            depth_units,
            templates: records,
        },
        &dir.join("poses.json"),
    )
}

pub fn load_templates(dir: &Path) -> Result<(Vec<TemplateView>, TemplateIndex)> {
    let index: TemplateIndex = read_json(&dir.join("poses.json"))?;
    let k = index.intrinsics.to_intrinsics()?;
    let views = index
        .templates
        .iter()
        .map(|r| {
            Ok(TemplateView {
                camera_from_object: r.camera_from_object.to_pose()?,
                model_scale: r.model_scale,
                intrinsics: k,
                depth: load_depth_png(&dir.join(&r.depth), index.depth_units)?,
                mask: load_mask_png(&dir.join(&r.mask))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((views, index))
}
