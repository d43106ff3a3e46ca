//! File formats: raw volumes, 16-bit radiographs, orbit manifests, camera
//! and contour JSON, ASCII PLY and CSV tables.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cupplan_core::drr::{VoxelVolume, XrayImage};
use cupplan_core::implant::CupModel;
use cupplan_core::planner::Contour;
use cupplan_core::{ProjectiveCamera, Vector3};
use image::{ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Sidecar header of a raw little-endian `f32` volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    /// Raw file name, relative to the header.
    pub data: String,
}

pub fn create_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| AppError::io(path, e))?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> AppResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Validation(format!("{}: {e}", path.display())))
}

/// Writes rows as CSV with a header derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> AppResult<()> {
    let w = create(path)?;
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush().map_err(|e| AppError::io(path, e))
}

/// Writes `<stem>.json` and `<stem>.raw` into `dir`; returns the header path.
pub fn write_volume(dir: &Path, stem: &str, vol: &VoxelVolume) -> AppResult<PathBuf> {
    let raw_name = format!("{stem}.raw");
    let raw_path = dir.join(&raw_name);
    let mut w = create(&raw_path)?;
    for v in vol.data() {
        w.write_all(&v.to_le_bytes()).map_err(|e| AppError::io(&raw_path, e))?;
    }
    w.flush().map_err(|e| AppError::io(&raw_path, e))?;
    let header = VolumeHeader {
        dims: vol.dims(),
        spacing_mm: vol.spacing_mm(),
        origin_mm: vol.origin_mm(),
        dtype: String::from("f32le"),
        data: raw_name,
    };
    let header_path = dir.join(format!("{stem}.json"));
    write_json(&header_path, &header)?;
    Ok(header_path)
}

pub fn read_volume(header_path: &Path) -> AppResult<VoxelVolume> {
    let header: VolumeHeader = read_json(header_path)?;
    if header.dtype != "f32le" {
        return Err(AppError::Validation(format!("unsupported volume dtype {}", header.dtype)));
    }
    let raw_path = header_path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let bytes = fs::read(&raw_path).map_err(|e| AppError::io(&raw_path, e))?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(AppError::Validation(format!(
            "{}: {} bytes, header needs {expected}",
            raw_path.display(),
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(VoxelVolume::new(header.dims, header.spacing_mm, header.origin_mm, data)?)
}

/// 16-bit grey levels: `round(clamp(intensity, 0, 1) · 65535)`.
pub fn to_u16(image: &XrayImage) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let data = image
        .intensity
        .iter()
        .map(|&i| (f64::from(i).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    ImageBuffer::from_raw(image.width, image.height, data).expect("buffer matches image size")
}

/// Binary PGM (P5, maxval 65535, big-endian samples).
pub fn write_pgm(path: &Path, image: &XrayImage) -> AppResult<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    for v in to_u16(image).as_raw() {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&bytes).map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn png_bytes(image: &XrayImage) -> AppResult<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_u16(image).write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_png(path: &Path, image: &XrayImage) -> AppResult<()> {
    let bytes = png_bytes(image)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// Reads a 16-bit PGM or PNG back into intensities in `[0, 1]`.
pub fn read_u16_image(path: &Path) -> AppResult<(u32, u32, Vec<u16>)> {
    let img = image::open(path)?.into_luma16();
    Ok((img.width(), img.height(), img.into_raw()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub station_id: String,
    pub angle_deg: f64,
    pub camera_json: String,
    pub image: String,
}

pub fn write_camera(path: &Path, camera: &ProjectiveCamera) -> AppResult<()> {
    write_json(path, camera)
}

/// Contours as `[[[u, v], ...], ...]` per view.
pub fn contours_json(contours: &[Contour]) -> serde_json::Value {
    serde_json::Value::Array(
        contours
            .iter()
            .map(|view| {
                serde_json::Value::Array(
                    view.iter()
                        .map(|line| serde_json::json!(line.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// ASCII PLY of points, optionally with normals and triangles.
pub fn write_ply(
    path: &Path,
    vertices: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
    faces: &[[u32; 3]],
) -> AppResult<()> {
    let mut w = create(path)?;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\nproperty float x\nproperty float y\nproperty float z\n", vertices.len()));
    if normals.is_some() {
        s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if !faces.is_empty() {
        s.push_str(&format!("element face {}\nproperty list uchar int vertex_indices\n", faces.len()));
    }
    s.push_str("end_header\n");
    for (i, v) in vertices.iter().enumerate() {
        s.push_str(&format!("{} {} {}", v.x, v.y, v.z));
        if let Some(n) = normals {
            s.push_str(&format!(" {} {} {}", n[i].x, n[i].y, n[i].z));
        }
        s.push('\n');
    }
    for f in faces {
        s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    w.write_all(s.as_bytes()).map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_cup_ply(path: &Path, cup: &CupModel) -> AppResult<()> {
    write_ply(path, &cup.vertices, Some(&cup.normals), &cup.triangles)
}

/// Vertex count and coordinates of an ASCII PLY written by [`write_ply`].
pub fn read_ply_points(path: &Path) -> AppResult<Vec<Vector3<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut lines = text.lines();
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = n.trim().parse::<usize>().ok();
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| AppError::Validation(format!("{}: no vertex element", path.display())))?;
    lines
        .take(count)
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().take(3).filter_map(|x| x.parse().ok()).collect();
            if v.len() == 3 {
                Ok(Vector3::new(v[0], v[1], v[2]))
            } else {
                Err(AppError::Validation(format!("{}: bad vertex line", path.display())))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cupplan_core::geom::PinholeIntrinsics;
    use cupplan_core::RigidTransform;

    fn image() -> XrayImage {
        let k = PinholeIntrinsics::from_detector(1000.0, 4, 3, 1.0).unwrap();
        XrayImage {
            width: 4,
            height: 3,
            intensity: vec![0.0, 0.25, 0.5, 1.0, 1.5, -0.1, 0.123_456, 0.999_99, 0.0, 0.0, 0.0, 0.0],
            camera: ProjectiveCamera::new(k, RigidTransform::identity("W")),
        }
    }

    #[test]
    fn volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.37).collect();
        let vol = VoxelVolume::new([2, 3, 4], [1.0, 1.5, 2.0], [-1.0, 0.0, 3.0], data).unwrap();
        let header = write_volume(dir.path(), "vol", &vol).unwrap();
        assert_eq!(read_volume(&header).unwrap(), vol);
        let text = fs::read_to_string(&header).unwrap();
        assert!(text.contains("\"dtype\": \"f32le\"") && text.contains("\"data\": \"vol.raw\""));
        assert_eq!(fs::read(dir.path().join("vol.raw")).unwrap().len(), 24 * 4);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = VoxelVolume::zeros([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let header = write_volume(dir.path(), "v", &vol).unwrap();
        fs::write(dir.path().join("v.raw"), [0u8; 7]).unwrap();
        assert!(matches!(read_volume(&header), Err(AppError::Validation(_))));
    }

    #[test]
    fn grey_levels() {
        let g = to_u16(&image());
        assert_eq!(g.as_raw()[..6], [0, 16384, 32768, 65535, 65535, 0]);
        assert_eq!(g.as_raw()[6], (0.123_456f32 as f64 * 65535.0).round() as u16);
    }

    #[test]
    fn pgm_layout_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("a.pgm");
        let png = dir.path().join("a.png");
        write_pgm(&pgm, &image()).unwrap();
        write_png(&png, &image()).unwrap();
        let bytes = fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let header_end = bytes.len() - 4 * 3 * 2;
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.split_whitespace().collect::<Vec<_>>() == ["P5", "4", "3", "65535"], "{header}");
        // big-endian samples
        assert_eq!(&bytes[header_end + 2..header_end + 4], &16384u16.to_be_bytes());
        let expected = to_u16(&image()).into_raw();
        assert_eq!(read_u16_image(&pgm).unwrap().2, expected);
        assert_eq!(read_u16_image(&png).unwrap(), (4, 3, expected));
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (cup, _) = cupplan_core::implant::make_component(54.0, 8).unwrap();
        let path = dir.path().join("cup.ply");
        write_cup_ply(&path, &cup).unwrap();
        let pts = read_ply_points(&path).unwrap();
        assert_eq!(pts.len(), cup.vertices.len());
        assert!(pts.iter().zip(&cup.vertices).all(|(a, b)| (a - b).norm() < 1e-9));
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains(&format!("element face {}", cup.triangles.len())));
    }

    #[test]
    fn contour_json_shape() {
        let c: Contour = vec![vec![cupplan_core::Vector2::new(1.0, 2.0), cupplan_core::Vector2::new(3.0, 4.5)]];
        let v = contours_json(&[c.clone(), c]);
        assert_eq!(v, serde_json::json!([[[[1.0, 2.0], [3.0, 4.5]]], [[[1.0, 2.0], [3.0, 4.5]]]]));
    }
}
