//! Dataset and result files.
//!
//! A dataset directory holds `frame_000000.png`, `frame_000001.png`, ...
//! (8-bit grayscale), `truth_steps.csv` (`index,dx,dy`), `truth_coords.csv`
//! (`index,x,y`) and `manifest.json`. Floats are written in their shortest
//! exact decimal form, so CSV round trips are lossless.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{ScanRealization, SimConfig};
use crate::types::{luma601, CoordinateSet, FrameSequence, GrayImage, Point2, Translation2D};

pub const STEPS_FILE: &str = "truth_steps.csv";
pub const COORDS_FILE: &str = "truth_coords.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Everything needed to regenerate a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub realization: ScanRealization,
    pub config: SimConfig,
    pub patch: usize,
    pub source_id: String,
    pub source_width: usize,
    pub source_height: usize,
    pub n_frames: usize,
    pub rng: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::new();
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(&r);
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parsed numeric rows with their 1-based line numbers. A first line whose
/// first field is not a number is treated as a header.
fn read_numeric_rows(path: &Path, min_cols: usize, max_cols: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, 0, format!("{other:?}")),
        })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() < min_cols || rec.len() > max_cols {
            return Err(Error::parse(
                path,
                line,
                format!("expected {min_cols}..={max_cols} columns, found {}", rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, line, format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((line, vals));
    }
    Ok(out)
}

fn check_index(path: &Path, line: usize, value: f64, expected: usize) -> Result<()> {
    if value != expected as f64 {
        return Err(Error::parse(
            path,
            line,
            format!("index {value} out of sequence, expected {expected}"),
        ));
    }
    Ok(())
}

pub fn write_steps_csv(path: impl AsRef<Path>, steps: &[Translation2D]) -> Result<()> {
    write_rows(
        path.as_ref(),
        "index,dx,dy",
        steps.iter().enumerate().map(|(i, t)| format!("{i},{},{}", t.dx, t.dy)),
    )
}

pub fn read_steps_csv(path: impl AsRef<Path>) -> Result<Vec<Translation2D>> {
    Ok(read_flow_file(path.as_ref())?.into_iter().map(|(t, _)| t).collect())
}

/// Writes `index,x,y`. `indices` labels each row (the original frame index
/// when only a subset of frames was kept); `None` numbers rows from 0.
pub fn write_coords_csv(path: impl AsRef<Path>, coords: &CoordinateSet, indices: Option<&[usize]>) -> Result<()> {
    if let Some(ix) = indices {
        if ix.len() != coords.len() {
            return Err(Error::LengthMismatch {
                what: "coordinate row labels",
                expected: coords.len(),
                found: ix.len(),
            });
        }
    }
    write_rows(
        path.as_ref(),
        "index,x,y",
        coords.coords.iter().enumerate().map(|(i, p)| {
            let label = indices.map_or(i, |ix| ix[i]);
            format!("{label},{},{}", p.x, p.y)
        }),
    )
}

/// Reads `index,x,y`, returning the row labels alongside the coordinates.
pub fn read_coords_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, CoordinateSet)> {
    let path = path.as_ref();
    let rows = read_numeric_rows(path, 3, 3)?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut pts = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(Error::parse(path, line, format!("bad index {}", v[0])));
        }
        if labels.last().is_some_and(|&l| l >= v[0] as usize) {
            return Err(Error::parse(path, line, "indices must increase"));
        }
        labels.push(v[0] as usize);
        pts.push(Point2::new(v[1], v[2]));
    }
    Ok((labels, CoordinateSet::new(pts)?))
}

/// Reads `index,dx,dy[,confidence]` with indices `0, 1, 2, ...`. Missing
/// confidence means 1.
pub fn read_flow_file(path: &Path) -> Result<Vec<(Translation2D, f64)>> {
    let rows = read_numeric_rows(path, 3, 4)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, (line, v))| {
            check_index(path, line, v[0], i)?;
            let conf = v.get(3).copied().unwrap_or(1.0);
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::parse(path, line, format!("confidence {conf} outside [0, 1]")));
            }
            Ok((Translation2D::new(v[1], v[2]), conf))
        })
        .collect()
}

pub fn write_flow_file(path: impl AsRef<Path>, flows: &[(Translation2D, f64)]) -> Result<()> {
    write_rows(
        path.as_ref(),
        "index,dx,dy,confidence",
        flows
            .iter()
            .enumerate()
            .map(|(i, (t, c))| format!("{i},{},{},{c}", t.dx, t.dy)),
    )
}

/// One row of the edge dump.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub src: usize,
    pub dst: usize,
    pub translation: Translation2D,
    pub weight: f64,
    pub stage: &'static str,
}

pub fn write_edges_csv(path: impl AsRef<Path>, edges: &[EdgeRow]) -> Result<()> {
    write_rows(
        path.as_ref(),
        "src,dst,dx,dy,weight,stage",
        edges.iter().map(|e| {
            format!(
                "{},{},{},{},{},{}",
                e.src, e.dst, e.translation.dx, e.translation.dy, e.weight, e.stage
            )
        }),
    )
}

/// Loads any PNG as luminance; color is reduced with Rec.601 weights.
pub fn read_png_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => GrayImage::from_u8(w, h, g.as_raw()),
        other => {
            let rgb = other.to_rgb32f();
            let data = rgb
                .pixels()
                .map(|p| luma601(p[0], p[1], p[2]).clamp(0.0, 1.0))
                .collect();
            GrayImage::new(w, h, data)
        }
    }
}

pub fn write_png_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(
        path,
        &img.to_u8(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a complete dataset directory.
pub fn write_dataset(dir: impl AsRef<Path>, seq: &FrameSequence, manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_png_gray(dir.join(frame_file_name(i)), f)?;
    }
    write_steps_csv(dir.join(STEPS_FILE), &seq.truth_steps)?;
    write_coords_csv(dir.join(COORDS_FILE), &seq.truth_coords, None)?;
    write_manifest(dir.join(MANIFEST_FILE), manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, m)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Frame files in `dir`, sorted by index. Numbering must start at 0 and have
/// no gaps.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut indices: Vec<usize> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("frame_")?.strip_suffix(".png")?.parse().ok()
        })
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::MissingFrame {
            dir: dir.to_path_buf(),
            index: 0,
        });
    }
    for (expected, &found) in indices.iter().enumerate() {
        if found != expected {
            return Err(Error::MissingFrame {
                dir: dir.to_path_buf(),
                index: expected,
            });
        }
    }
    Ok(indices.into_iter().map(|i| dir.join(frame_file_name(i))).collect())
}

pub fn read_frames(dir: impl AsRef<Path>) -> Result<Vec<GrayImage>> {
    use rayon::prelude::*;
    let paths = list_frames(dir)?;
    let frames: Vec<GrayImage> = paths.par_iter().map(read_png_gray).collect::<Result<_>>()?;
    if let Some(f0) = frames.first() {
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.width() != f0.width() || f.height() != f0.height())
        {
            return Err(Error::validation(format!(
                "{}: size {}x{} differs from frame 0 ({}x{})",
                paths[i].display(),
                f.width(),
                f.height(),
                f0.width(),
                f0.height()
            )));
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let cs = CoordinateSet::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(17.123456789, -3.25),
            Point2::new(1e-7, 12345.678901234),
        ])
        .unwrap();
        write_coords_csv(&p, &cs, None).unwrap();
        let (labels, back) = read_coords_csv(&p).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(back, cs);
        write_coords_csv(&p, &cs, Some(&[0, 20, 40])).unwrap();
        assert_eq!(read_coords_csv(&p).unwrap().0, vec![0, 20, 40]);
    }

    #[test]
    fn steps_and_flows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let steps = vec![Translation2D::new(10.0, 0.5), Translation2D::new(-3.3333333333, 1e-9)];
        write_steps_csv(&p, &steps).unwrap();
        assert_eq!(read_steps_csv(&p).unwrap(), steps);
        let flows = vec![(steps[0], 0.25), (steps[1], 1.0)];
        write_flow_file(&p, &flows).unwrap();
        assert_eq!(read_flow_file(&p).unwrap(), flows);
    }

    #[test]
    fn headerless_flow_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "0,10.0,0.5\n1,9.5,-0.25,0.8\n").unwrap();
        let f = read_flow_file(&p).unwrap();
        assert_eq!(f[0], (Translation2D::new(10.0, 0.5), 1.0));
        assert_eq!(f[1], (Translation2D::new(9.5, -0.25), 0.8));
    }

    #[test]
    fn malformed_rows_name_path_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "index,dx,dy\n0,1,2\n1,abc,2\n").unwrap();
        let err = read_flow_file(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("bad.csv:3"));
        fs::write(&p, "0,1,2\n2,1,2\n").unwrap();
        assert!(matches!(read_flow_file(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "0,1\n").unwrap();
        assert!(read_flow_file(&p).is_err());
        fs::write(&p, "0,1,2,1.5\n").unwrap();
        assert!(read_flow_file(&p).is_err());
        assert!(matches!(
            read_flow_file(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn png_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let bytes: Vec<u8> = (0..40 * 30).map(|i| (i * 7 % 256) as u8).collect();
        let img = GrayImage::from_u8(40, 30, &bytes).unwrap();
        write_png_gray(&p, &img).unwrap();
        let back = read_png_gray(&p).unwrap();
        assert_eq!(back.to_u8(), bytes);
        assert_eq!(back, img);
    }

    #[test]
    fn frame_gap_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(8, 8, 0.5);
        for i in [0, 1, 3] {
            write_png_gray(dir.path().join(frame_file_name(i)), &img).unwrap();
        }
        match read_frames(dir.path()) {
            Err(Error::MissingFrame { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        write_png_gray(dir.path().join(frame_file_name(2)), &img).unwrap();
        assert_eq!(read_frames(dir.path()).unwrap().len(), 4);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let m = Manifest {
            seed: 9,
            realization: ScanRealization {
                mean_mag: 15.5,
                noise_factor: 12.0,
                angle_std_deg: 3.0,
                row_overlap: 0.3,
            },
            config: SimConfig::default(),
            patch: 512,
            source_id: "synthetic:2000x2000".into(),
            source_width: 2000,
            source_height: 2000,
            n_frames: 10,
            rng: crate::types::RNG_NAME.into(),
        };
        write_manifest(&p, &m).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }
}
