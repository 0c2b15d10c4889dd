use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::ImageRecord;

/// Half-open rectangle `[x, x+width) × [y, y+height)`, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub image_id: String,
    pub roi_id: u32,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(image_id: &str, roi_id: u32, x: usize, y: usize, width: usize, height: usize) -> Self {
        Roi { image_id: image_id.to_string(), roi_id, x, y, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn translated(&self, dx: usize, dy: usize) -> Roi {
        Roi { x: self.x + dx, y: self.y + dy, ..self.clone() }
    }

    pub fn check(&self, side: usize) -> Result<(), EvalError> {
        if self.area() < 4 {
            return Err(EvalError::Roi(format!("roi {} of {} has area {} < 4", self.roi_id, self.image_id, self.area())));
        }
        if self.x + self.width > side || self.y + self.height > side {
            return Err(EvalError::Roi(format!(
                "roi {} of {} ({},{} {}x{}) leaves the {side}px image",
                self.roi_id, self.image_id, self.x, self.y, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiStat {
    pub mean: f64,
    /// Population standard deviation (divide by n).
    pub sd: f64,
}

pub fn roi_stats(image: &ImageRecord, rois: &[Roi]) -> Result<Vec<RoiStat>, EvalError> {
    rois.iter()
        .map(|roi| {
            roi.check(image.side())?;
            let win = image.pixels.slice(ndarray::s![roi.y..roi.y + roi.height, roi.x..roi.x + roi.width]);
            let n = win.len() as f64;
            let mean = win.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = win.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            Ok(RoiStat { mean, sd: var.sqrt() })
        })
        .collect()
}

pub const ORIGINAL: &str = "Original";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image_id: String,
    pub roi_id: u32,
    pub method: String,
    pub mean: f64,
    pub sd: f64,
}

/// ROI mean/SD cross table: one row per (roi, method), methods in
/// insertion order with the original first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub methods: Vec<String>,
    pub rows: Vec<ReportRow>,
}

pub fn sd_reduction(original_sd: f64, method_sd: f64) -> f64 {
    100.0 * (1.0 - method_sd / original_sd)
}

pub fn compare_report(
    original: &ImageRecord,
    variants: &[(String, ImageRecord)],
    rois: &[Roi],
) -> Result<RoiReport, EvalError> {
    let mut report = RoiReport { methods: vec![ORIGINAL.to_string()], rows: Vec::new() };
    for (name, img) in variants {
        if img.pixels.dim() != original.pixels.dim() {
            return Err(EvalError::Shape(format!(
                "variant {name} is {:?}, original is {:?}",
                img.pixels.dim(),
                original.pixels.dim()
            )));
        }
        if name == ORIGINAL || report.methods.contains(name) {
            return Err(EvalError::Shape(format!("duplicate method name {name}")));
        }
        report.methods.push(name.clone());
    }
    let images = std::iter::once(original).chain(variants.iter().map(|(_, i)| i));
    let stats: Vec<Vec<RoiStat>> = images.map(|i| roi_stats(i, rois)).collect::<Result<_, _>>()?;
    for (k, roi) in rois.iter().enumerate() {
        for (m, method) in report.methods.iter().enumerate() {
            report.rows.push(ReportRow {
                image_id: roi.image_id.clone(),
                roi_id: roi.roi_id,
                method: method.clone(),
                mean: stats[m][k].mean,
                sd: stats[m][k].sd,
            });
        }
    }
    Ok(report)
}

impl RoiReport {
    /// Appends the rows of another report with the same method list.
    pub fn extend(&mut self, other: RoiReport) -> Result<(), EvalError> {
        if self.methods.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.methods != other.methods {
            return Err(EvalError::Shape("reports list different methods".into()));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn row(&self, image_id: &str, roi_id: u32, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.image_id == image_id && r.roi_id == roi_id && r.method == method)
    }

    fn keys(&self) -> Vec<(String, u32)> {
        let mut keys: Vec<(String, u32)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(i, k)| *i == r.image_id && *k == r.roi_id) {
                keys.push((r.image_id.clone(), r.roi_id));
            }
        }
        keys
    }

    /// SD reduction of `method` against the original for one ROI. `None`
    /// when either row is missing or the original SD is zero.
    pub fn reduction(&self, image_id: &str, roi_id: u32, method: &str) -> Option<f64> {
        let o = self.row(image_id, roi_id, ORIGINAL)?;
        let m = self.row(image_id, roi_id, method)?;
        (o.sd > 0.0).then(|| sd_reduction(o.sd, m.sd))
    }

    pub fn mean_reduction(&self, method: &str) -> Option<f64> {
        let vals: Vec<f64> = self.keys().iter().filter_map(|(i, k)| self.reduction(i, *k, method)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# SD: population (divide by n); ROI rectangles half-open [x, x+w) x [y, y+h)\n");
        let _ = write!(s, "{:<16} {:>5}", "image", "roi");
        for m in &self.methods {
            let _ = write!(s, " | {:>22}", format!("{m} mean/sd"));
        }
        s.push('\n');
        for (image, roi) in self.keys() {
            let _ = write!(s, "{image:<16} {roi:>5}");
            for m in &self.methods {
                match self.row(&image, roi, m) {
                    Some(r) => {
                        let _ = write!(s, " | {:>11.1} {:>10.1}", r.mean, r.sd);
                    }
                    None => {
                        let _ = write!(s, " | {:>22}", "-");
                    }
                }
            }
            s.push('\n');
        }
        for m in self.methods.iter().skip(1) {
            let per: Vec<String> = self
                .keys()
                .iter()
                .map(|(i, k)| self.reduction(i, *k, m).map_or("-".into(), |r| format!("{r:.0}%")))
                .collect();
            let avg = self.mean_reduction(m).map_or("-".into(), |r| format!("{r:.1}%"));
            let _ = writeln!(s, "SD reduction {m}: {} (mean {avg})", per.join(", "));
        }
        s
    }

    /// Comma-separated records with a header line; the reduction column is
    /// empty for the original rows.
    pub fn to_records(&self) -> String {
        let mut s = String::from("image_id,roi_id,method,mean,sd,sd_reduction_pct\n");
        for r in &self.rows {
            let red = if r.method == ORIGINAL {
                String::new()
            } else {
                self.reduction(&r.image_id, r.roi_id, &r.method).map_or(String::new(), |v| format!("{v:.4}"))
            };
            let _ = writeln!(s, "{},{},{},{:.4},{:.4},{red}", r.image_id, r.roi_id, r.method, r.mean, r.sd);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_chain::DomainId;
    use ndarray::Array2;

    fn img(px: Array2<f32>) -> ImageRecord {
        ImageRecord::new(px, DomainId(0), "a").unwrap()
    }

    #[test]
    fn constant_and_two_by_two() {
        let c = img(Array2::from_elem((8, 8), 1321.2));
        let s = roi_stats(&c, &[Roi::new("a", 1, 2, 2, 4, 3)]).unwrap()[0];
        assert!((s.mean - 1321.2).abs() < 1e-4);
        assert!(s.sd < 1e-9);

        let mut px = Array2::zeros((4, 4));
        px[[1, 2]] = 2.0;
        px[[2, 2]] = 2.0;
        let s = roi_stats(&img(px), &[Roi::new("a", 1, 1, 1, 2, 2)]).unwrap()[0];
        assert_eq!((s.mean, s.sd), (1.0, 1.0));
    }

    #[test]
    fn out_of_bounds_and_tiny_rois() {
        let c = img(Array2::zeros((8, 8)));
        assert!(roi_stats(&c, &[Roi::new("a", 1, 6, 0, 3, 3)]).is_err());
        assert!(roi_stats(&c, &[Roi::new("a", 1, 0, 0, 1, 3)]).is_err());
        assert!(roi_stats(&c, &[Roi::new("a", 1, 6, 6, 2, 2)]).is_ok());
    }

    #[test]
    fn table_row_reduction() {
        let r = sd_reduction(118.0, 89.8);
        assert!((r - 23.898).abs() < 1e-3, "{r}");
        assert_eq!(format!("{r:.1}"), "23.9");
    }

    #[test]
    fn report_without_variants() {
        let c = img(Array2::from_elem((8, 8), 5.0));
        let rois = [Roi::new("a", 0, 0, 0, 2, 2), Roi::new("a", 1, 4, 4, 3, 3)];
        let rep = compare_report(&c, &[], &rois).unwrap();
        assert_eq!(rep.methods, vec![ORIGINAL]);
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.to_text().contains("population"));
        assert_eq!(rep.to_records().lines().count(), 3);
    }

    #[test]
    fn report_cross_table() {
        let noisy = img(Array2::from_shape_fn((6, 6), |(y, x)| if (x + y) % 2 == 0 { 10.0 } else { 0.0 }));
        let half = img(noisy.pixels.mapv(|v| 2.5 + v / 2.0));
        let rois = [Roi::new("a", 3, 0, 0, 4, 4)];
        let rep = compare_report(&noisy, &[("M".into(), half.clone())], &rois).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.row("a", 3, ORIGINAL).unwrap().sd, 5.0);
        assert_eq!(rep.row("a", 3, "M").unwrap().sd, 2.5);
        assert_eq!(rep.reduction("a", 3, "M"), Some(50.0));
        assert_eq!(rep.mean_reduction("M"), Some(50.0));
        assert!(rep.to_records().contains("a,3,M,5.0000,2.5000,50.0000"));
        let small = img(Array2::zeros((4, 4)));
        assert!(compare_report(&noisy, &[("M".into(), small)], &rois).is_err());
        assert!(compare_report(&noisy, &[("M".into(), half.clone()), ("M".into(), half)], &rois).is_err());
    }
}
