use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{DataError, Dataset, ImageRecord, NoiseExtractor, RoiTruth};
use crate::domain_chain::DomainId;
use crate::evaluate::Roi;

fn fmt_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Format { path: path.display().to_string(), msg: msg.into() }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|e| fmt_err(path, e.to_string()))
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| fmt_err(path, e.to_string()))
}

/// Writes a 16-bit grayscale PNG. Values are rounded and clamped to
/// `0..=65535`.
pub fn write_png16(path: &Path, pixels: &Array2<f32>) -> Result<(), DataError> {
    let (h, w) = pixels.dim();
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let data: Vec<u8> =
        pixels.iter().flat_map(|&v| (v.round().clamp(0.0, 65535.0) as u16).to_be_bytes()).collect();
    let mut writer = enc.write_header().map_err(|e| fmt_err(path, e.to_string()))?;
    writer.write_image_data(&data).map_err(|e| fmt_err(path, e.to_string()))?;
    writer.finish().map_err(|e| fmt_err(path, e.to_string()))
}

pub fn read_png16(path: &Path) -> Result<Array2<f32>, DataError> {
    let dec = png::Decoder::new(BufReader::new(open(path)?));
    let mut reader = dec.read_info().map_err(|e| fmt_err(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(fmt_err(path, format!("expected 16-bit grayscale, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| fmt_err(path, "image too large"))?];
    reader.next_frame(&mut buf).map_err(|e| fmt_err(path, e.to_string()))?;
    let vals: Vec<f32> = buf[..2 * w * h].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32).collect();
    Array2::from_shape_vec((h, w), vals).map_err(|e| fmt_err(path, e.to_string()))
}

/// Magic of the raw tensor format, followed by a little-endian u32 rank,
/// one u64 per dimension, a one-byte element type and the row-major
/// little-endian payload.
pub const RAW_MAGIC: &[u8; 8] = b"MCCANRAW";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RawDType {
    U16 = 1,
    F32 = 2,
    F64 = 3,
}

impl RawDType {
    fn size(self) -> usize {
        match self {
            RawDType::U16 => 2,
            RawDType::F32 => 4,
            RawDType::F64 => 8,
        }
    }
}

pub fn encode_raw(dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(RawDType::F32 as u8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes any element type to f32.
pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>), DataError> {
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| fmt_err(path, "truncated raw tensor"));
    if take(0, 8)? != RAW_MAGIC {
        return Err(fmt_err(path, "bad raw tensor magic"));
    }
    let rank = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(fmt_err(path, format!("implausible rank {rank}")));
    }
    let mut at = 12;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize);
        at += 8;
    }
    let dtype = match take(at, 1)?[0] {
        1 => RawDType::U16,
        2 => RawDType::F32,
        3 => RawDType::F64,
        t => return Err(fmt_err(path, format!("unknown element type {t}"))),
    };
    at += 1;
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fmt_err(path, "dims overflow"))?;
    let payload = take(at, count.checked_mul(dtype.size()).ok_or_else(|| fmt_err(path, "dims overflow"))?)?;
    if bytes.len() != at + payload.len() {
        return Err(fmt_err(path, "trailing bytes after raw tensor payload"));
    }
    let data = match dtype {
        RawDType::U16 => payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f32).collect(),
        RawDType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        RawDType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32).collect(),
    };
    Ok((dims, data))
}

pub fn write_raw(path: &Path, pixels: &Array2<f32>) -> Result<(), DataError> {
    let (h, w) = pixels.dim();
    let data: Vec<f32> = pixels.iter().copied().collect();
    fs::write(path, encode_raw(&[h, w], &data))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Array2<f32>, DataError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    let (dims, data) = decode_raw(&bytes, path)?;
    if dims.len() != 2 {
        return Err(fmt_err(path, format!("expected a 2-D image, got rank {}", dims.len())));
    }
    Array2::from_shape_vec((dims[0], dims[1]), data).map_err(|e| fmt_err(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png16,
    Raw,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png16 => "png",
            ImageFormat::Raw => "raw",
        }
    }
}

/// Dispatches on the file extension: `.png` or `.raw`.
pub fn read_image(path: &Path) -> Result<Array2<f32>, DataError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png16(path),
        Some("raw") => read_raw(path),
        _ => Err(fmt_err(path, "unknown image extension (expected .png or .raw)")),
    }
}

pub fn write_image(path: &Path, pixels: &Array2<f32>) -> Result<(), DataError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png16(path, pixels),
        Some("raw") => write_raw(path, pixels),
        _ => Err(fmt_err(path, "unknown image extension (expected .png or .raw)")),
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ROI_FILE: &str = "rois.csv";
pub const TRUTH_FILE: &str = "truth.csv";
const MANIFEST_HEADER: &str = "path\tdomain\tsource_id\textractor";
const ROI_HEADER: &str = "image_id,roi_id,x,y,width,height";
const TRUTH_HEADER: &str = "image_id,roi_id,mean,sd";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub domain: String,
    pub source_id: String,
    pub extractor: Option<NoiseExtractor>,
}

/// Tab-separated, one header line, optional `# domains: A,B,C` comment
/// fixing the chain order.
pub fn write_manifest(path: &Path, domains: &[String], entries: &[ManifestEntry]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# domains: {}", domains.join(","))?;
    writeln!(w, "{MANIFEST_HEADER}")?;
    for e in entries {
        let ex = e.extractor.map_or("none", |x| x.as_str());
        writeln!(w, "{}\t{}\t{}\t{ex}", e.path.display(), e.domain, e.source_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<(Vec<String>, Vec<ManifestEntry>), DataError> {
    let text = read_text(path)?;
    let mut domains: Vec<String> = Vec::new();
    let mut declared = false;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if let Some(rest) = line.strip_prefix("# domains:") {
            domains = rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            declared = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') || line == MANIFEST_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(fmt_err(path, format!("line {}: expected 4 tab-separated columns", n + 1)));
        }
        let extractor = match cols[3] {
            "none" | "" => None,
            "residual" => Some(NoiseExtractor::Residual),
            "highpass" => Some(NoiseExtractor::Highpass),
            other => return Err(fmt_err(path, format!("line {}: unknown extractor {other}", n + 1))),
        };
        if !domains.iter().any(|d| d == cols[1]) {
            if declared {
                return Err(fmt_err(path, format!("line {}: domain {} not declared", n + 1, cols[1])));
            }
            domains.push(cols[1].to_string());
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(cols[0]),
            domain: cols[1].to_string(),
            source_id: cols[2].to_string(),
            extractor,
        });
    }
    Ok((domains, entries))
}

fn parse_csv<T>(path: &Path, header: &str, ncols: usize, f: impl Fn(&[&str]) -> Option<T>) -> Result<Vec<T>, DataError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == header {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let rec = (cols.len() == ncols).then(|| f(&cols)).flatten();
        out.push(rec.ok_or_else(|| fmt_err(path, format!("line {}: malformed record {line:?}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_rois(path: &Path, rois: &[Roi]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{ROI_HEADER}")?;
    for r in rois {
        writeln!(w, "{},{},{},{},{},{}", r.image_id, r.roi_id, r.x, r.y, r.width, r.height)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rois(path: &Path) -> Result<Vec<Roi>, DataError> {
    parse_csv(path, ROI_HEADER, 6, |c| {
        Some(Roi::new(c[0], c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?, c[4].parse().ok()?, c[5].parse().ok()?))
    })
}

pub fn write_truths(path: &Path, truths: &[RoiTruth]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRUTH_HEADER}")?;
    for t in truths {
        writeln!(w, "{},{},{},{}", t.image_id, t.roi_id, t.mean, t.sd)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truths(path: &Path) -> Result<Vec<RoiTruth>, DataError> {
    parse_csv(path, TRUTH_HEADER, 4, |c| {
        Some(RoiTruth { image_id: c[0].to_string(), roi_id: c[1].parse().ok()?, mean: c[2].parse().ok()?, sd: c[3].parse().ok()? })
    })
}

/// Writes `images/<source_id>.<ext>`, the manifest, the ROI sidecar and the
/// ground-truth table into `dir`. Existing files are overwritten.
pub fn save_dataset(ds: &Dataset, dir: &Path, format: ImageFormat) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("images"))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (rec, ex) in ds.records.iter().zip(&ds.extractors) {
        let rel = PathBuf::from("images").join(format!("{}.{}", rec.source_id, format.extension()));
        write_image(&dir.join(&rel), &rec.pixels)?;
        entries.push(ManifestEntry {
            path: rel,
            domain: ds.domain_names[rec.domain.0].clone(),
            source_id: rec.source_id.clone(),
            extractor: *ex,
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &ds.domain_names, &entries)?;
    write_rois(&dir.join(ROI_FILE), &ds.rois)?;
    write_truths(&dir.join(TRUTH_FILE), &ds.truths)?;
    Ok(())
}

/// Accepts a dataset directory or a manifest path. ROI and truth files are
/// optional siblings of the manifest.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let (domain_names, entries) = read_manifest(&manifest)?;
    let mut ds = Dataset { domain_names, ..Default::default() };
    for e in entries {
        let d = ds.domain_names.iter().position(|n| *n == e.domain).expect("manifest domains are collected");
        let pixels = read_image(&dir.join(&e.path))?;
        ds.records.push(ImageRecord::new(pixels, DomainId(d), e.source_id)?);
        ds.extractors.push(e.extractor);
    }
    if dir.join(ROI_FILE).exists() {
        ds.rois = read_rois(&dir.join(ROI_FILE))?;
    }
    if dir.join(TRUTH_FILE).exists() {
        ds.truths = read_truths(&dir.join(TRUTH_FILE))?;
    }
    Ok(ds)
}
