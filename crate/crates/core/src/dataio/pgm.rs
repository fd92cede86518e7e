//! Binary portable graymap (P5) images with `<stem>.txt` label files.
//!
//! Label lines are `class cx cy w h`, space separated, normalized to `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, GrayImage, GroundTruthObject, Sample};
use crate::bbox::BBox;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decode a P5 graymap, scaling pixels to `[0, 1]` by `maxval`.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let bad = |m: &str| DataError::InvalidImage(m.to_string());
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut num = |what: &str| -> Result<usize, DataError> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what} in header")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let scale = maxval as f64;
    let pixels = if bpp == 1 {
        raster.iter().map(|&v| (v as f64 / scale).min(1.0)).collect()
    } else {
        raster.chunks_exact(2).map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0)).collect()
    };
    GrayImage::new(height, width, pixels)
}

/// Encode as 8-bit P5.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn parse_labels(text: &str, file: &str, num_classes: usize) -> Result<Vec<GroundTruthObject>, DataError> {
    let mut objects = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Label { file: file.to_string(), line: i + 1, msg };
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: usize = fields[0].parse().map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
        }
        let obj = GroundTruthObject { class_id, bbox: BBox::new(v[0], v[1], v[2], v[3]) };
        obj.validate(num_classes).map_err(|e| err(e.to_string()))?;
        objects.push(obj);
    }
    Ok(objects)
}

/// Load every `*.pgm` in `dir` (sorted by file name) with its sibling label file.
/// A missing label file is a warning and yields a sample with no objects.
pub fn load_directory(dir: &Path, num_classes: usize) -> Result<Vec<Sample>, DataError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let mut samples = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let image = read_pgm(&bytes).map_err(|e| match e {
            DataError::InvalidImage(m) => DataError::InvalidImage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let label_path = path.with_extension("txt");
        let objects = match fs::read_to_string(&label_path) {
            Ok(text) => parse_labels(&text, &label_path.display().to_string(), num_classes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                log::warn!("no label file for {}; treating as empty", path.display());
                Vec::new()
            }
            Err(e) => return Err(io_err(&label_path)(e)),
        };
        samples.push(Sample { image, objects });
    }
    Ok(samples)
}

/// Write samples as `00000.pgm` / `00000.txt` pairs. Box coordinates use the
/// shortest round-trip decimal form, so reloading gives identical values.
pub fn write_directory(samples: &[Sample], dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, s) in samples.iter().enumerate() {
        let img_path = dir.join(format!("{i:05}.pgm"));
        fs::write(&img_path, write_pgm(&s.image)).map_err(io_err(&img_path))?;
        let label_path = dir.join(format!("{i:05}.txt"));
        let mut f = fs::File::create(&label_path).map_err(io_err(&label_path))?;
        for o in &s.objects {
            let b = o.bbox;
            writeln!(f, "{} {} {} {} {}", o.class_id, b.cx, b.cy, b.w, b.h).map_err(io_err(&label_path))?;
        }
    }
    Ok(())
}
