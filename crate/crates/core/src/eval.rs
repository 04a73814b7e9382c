//! Radial-error metrology: heatmap decoding, distances in centimetres,
//! per-split tables, inter-observer agreement and report serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::annotation::{LandmarkAnnotation, LandmarkSet, Pixel, Point};
use crate::data::resize::unscale_pixel;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Physical pixel size at original resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSpacing {
    pub cm_per_px_x: f64,
    pub cm_per_px_y: f64,
}

impl PixelSpacing {
    pub fn new(cm_per_px_x: f64, cm_per_px_y: f64) -> Result<Self> {
        let s = Self {
            cm_per_px_x,
            cm_per_px_y,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn isotropic(cm_per_px: f64) -> Result<Self> {
        Self::new(cm_per_px, cm_per_px)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.cm_per_px_x) && ok(self.cm_per_px_y) {
            Ok(())
        } else {
            Err(Error::InvalidSpacing(self.cm_per_px_x, self.cm_per_px_y))
        }
    }
}

/// Position of the maximum of an `[H, W]` channel. Ties go to the smallest
/// row-major index; NaNs never win.
pub fn decode_heatmap<T: Real>(channel: &Tensor<T>) -> Result<Pixel> {
    let &[_, w] = channel.shape() else {
        return Err(Error::shape(
            "decode_heatmap",
            format!("expected [H,W], got {:?}", channel.shape()),
        ));
    };
    if channel.is_empty() {
        return Err(Error::EmptyOutput {
            op: "decode_heatmap",
            detail: "empty channel".into(),
        });
    }
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, &v) in channel.data().iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    Ok(Pixel::new(best % w, best / w))
}

/// Decodes every channel of a `[C, H, W]` (or `[1, C, H, W]`) volume.
pub fn decode_stack<T: Real>(stack: &Tensor<T>) -> Result<Vec<Pixel>> {
    let (c, h, w) = match *stack.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => {
            return Err(Error::shape(
                "decode_stack",
                format!("expected [C,H,W], got {:?}", stack.shape()),
            ))
        }
    };
    (0..c)
        .map(|k| {
            let plane = Tensor::new([h, w], stack.data()[k * h * w..(k + 1) * h * w].to_vec())?;
            decode_heatmap(&plane)
        })
        .collect()
}

/// Euclidean distance in cm between two original-resolution points.
pub fn point_distance_cm(a: Point, b: Point, spacing: &PixelSpacing) -> f64 {
    let dx = (a.x - b.x) * spacing.cm_per_px_x;
    let dy = (a.y - b.y) * spacing.cm_per_px_y;
    (dx * dx + dy * dy).sqrt()
}

/// Distance between a prediction in resized pixels and a ground-truth point
/// in original pixels. The prediction is mapped back without rounding.
pub fn radial_error_cm(
    pred: Pixel,
    truth: Point,
    resized_hw: (usize, usize),
    original_hw: (usize, usize),
    spacing: &PixelSpacing,
) -> Result<f64> {
    spacing.validate()?;
    if pred.x >= resized_hw.1 || pred.y >= resized_hw.0 {
        return Err(Error::OutOfBounds(format!(
            "prediction ({}, {}) outside {}x{}",
            pred.x, pred.y, resized_hw.1, resized_hw.0
        )));
    }
    if !(truth.x >= 0.0 && truth.x < original_hw.1 as f64 && truth.y >= 0.0 && truth.y < original_hw.0 as f64) {
        return Err(Error::OutOfBounds(format!(
            "ground truth ({}, {}) outside {}x{}",
            truth.x, truth.y, original_hw.1, original_hw.0
        )));
    }
    let up = unscale_pixel(pred, resized_hw, original_hw);
    Ok(point_distance_cm(up, truth, spacing))
}

/// Per-landmark errors (cm) of one fold, one entry per test image.
pub type FoldErrors = BTreeMap<String, Vec<f64>>;

/// Errors of decoded predictions against annotations, per landmark.
pub fn prediction_errors<T: Real>(
    predictions: &[Tensor<T>],
    annotations: &[&LandmarkAnnotation],
    landmarks: &LandmarkSet,
    resized_hw: (usize, usize),
    spacing: &PixelSpacing,
) -> Result<FoldErrors> {
    let mut out: FoldErrors = landmarks.names().iter().map(|n| (n.clone(), Vec::new())).collect();
    for (pred, ann) in predictions.iter().zip(annotations) {
        let peaks = decode_stack(pred)?;
        if peaks.len() != landmarks.len() {
            return Err(Error::shape(
                "prediction_errors",
                format!("{} channels for {} landmarks", peaks.len(), landmarks.len()),
            ));
        }
        for (name, p) in landmarks.names().iter().zip(peaks) {
            let e = radial_error_cm(p, ann.point(name)?, resized_hw, ann.original_hw, spacing)?;
            out.get_mut(name).expect("initialized").push(e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    ModelVsAnnotator,
    AnnotatorPairwise,
    /// Columns gathered from several reports.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    /// CSV header key.
    pub key: String,
    /// Markdown heading.
    pub label: String,
}

impl Column {
    pub fn new(key: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            label: label.into(),
        }
    }

    pub fn split(i: usize) -> Self {
        Self::new(format!("split{i}"), format!("Split {i}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub landmark: String,
    pub values: Vec<f64>,
    /// Arithmetic mean of `values`.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ComparisonKind,
    pub columns: Vec<Column>,
    /// Landmarks in canonical order.
    pub rows: Vec<ReportRow>,
    /// Mean of the row means.
    pub overall_mean: f64,
    pub spacing_cm_per_px: Option<PixelSpacing>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl EvalReport {
    fn from_rows(
        kind: ComparisonKind,
        columns: Vec<Column>,
        rows: Vec<(String, Vec<f64>)>,
        spacing: Option<PixelSpacing>,
    ) -> Self {
        let rows: Vec<ReportRow> = rows
            .into_iter()
            .map(|(landmark, values)| ReportRow {
                mean: mean(&values),
                landmark,
                values,
            })
            .collect();
        let overall_mean = if rows.is_empty() {
            0.0
        } else {
            mean(&rows.iter().map(|r| r.mean).collect::<Vec<_>>())
        };
        Self {
            kind,
            columns,
            rows,
            overall_mean,
            spacing_cm_per_px: spacing,
        }
    }

    pub fn row(&self, landmark: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.landmark == landmark)
    }

    /// Per-column means over the rows.
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.columns.len())
            .map(|c| mean(&self.rows.iter().map(|r| r.values[c]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Split table: one column per fold holding the mean over that fold's test
/// images, plus the row mean over folds.
pub fn build_table(per_fold: &[FoldErrors], spacing: Option<PixelSpacing>) -> Result<EvalReport> {
    let Some(first) = per_fold.first() else {
        return Ok(EvalReport::from_rows(
            ComparisonKind::ModelVsAnnotator,
            Vec::new(),
            Vec::new(),
            spacing,
        ));
    };
    let names: Vec<&String> = first.keys().collect();
    for (i, f) in per_fold.iter().enumerate() {
        if f.keys().collect::<Vec<_>>() != names {
            return Err(Error::InconsistentLandmarks(format!(
                "fold {} covers {:?}, fold 1 covers {:?}",
                i + 1,
                f.keys().collect::<Vec<_>>(),
                names
            )));
        }
    }
    let set = LandmarkSet::from_names(&names)?;
    let mut rows = Vec::with_capacity(set.len());
    for name in set.names() {
        let mut values = Vec::with_capacity(per_fold.len());
        for (i, f) in per_fold.iter().enumerate() {
            let errs = &f[name];
            if errs.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "fold {} has no errors for landmark `{name}`",
                    i + 1
                )));
            }
            if errs.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "fold {} has a negative or non-finite distance for `{name}`",
                    i + 1
                )));
            }
            values.push(mean(errs));
        }
        rows.push((name.clone(), values));
    }
    let columns = (1..=per_fold.len()).map(Column::split).collect();
    Ok(EvalReport::from_rows(ComparisonKind::ModelVsAnnotator, columns, rows, spacing))
}

/// Pairwise agreement of exactly three annotators: per landmark, the mean
/// distance over all images and all three unordered annotator pairs.
pub fn interobserver_table(annotations: &[LandmarkAnnotation], spacing: &PixelSpacing) -> Result<EvalReport> {
    spacing.validate()?;
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &LandmarkAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_annotator
            .entry(a.annotator_id.as_str())
            .or_default()
            .insert(a.image_id.as_str(), a);
    }
    if by_annotator.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "inter-observer comparison needs exactly 3 annotators, got {:?}",
            by_annotator.keys().collect::<Vec<_>>()
        )));
    }
    let annotators: Vec<&str> = by_annotator.keys().copied().collect();
    let mut images: Vec<&str> = by_annotator.values().flat_map(|m| m.keys().copied()).collect();
    images.sort_unstable();
    images.dedup();
    let set = match annotations.first() {
        Some(a) => a.landmark_set()?,
        None => LandmarkSet::first(0),
    };
    for &ann in &annotators {
        for &img in &images {
            let Some(a) = by_annotator[ann].get(img) else {
                return Err(Error::CoverageMismatch {
                    image: img.to_string(),
                    annotator: ann.to_string(),
                    landmark: set.names().first().cloned().unwrap_or_default(),
                });
            };
            for name in set.names() {
                if !a.points.contains_key(name) {
                    return Err(Error::CoverageMismatch {
                        image: img.to_string(),
                        annotator: ann.to_string(),
                        landmark: name.clone(),
                    });
                }
            }
            if let Some(extra) = a.points.keys().find(|k| !set.names().contains(k)) {
                return Err(Error::CoverageMismatch {
                    image: img.to_string(),
                    annotator: ann.to_string(),
                    landmark: extra.clone(),
                });
            }
        }
    }
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut rows = Vec::with_capacity(set.len());
    for name in set.names() {
        let mut total = 0.0;
        for &img in &images {
            for (i, j) in pairs {
                let a = by_annotator[annotators[i]][img].points[name];
                let b = by_annotator[annotators[j]][img].points[name];
                total += point_distance_cm(a, b, spacing);
            }
        }
        let n = (images.len() * pairs.len()).max(1) as f64;
        rows.push((name.clone(), vec![total / n]));
    }
    Ok(EvalReport::from_rows(
        ComparisonKind::AnnotatorPairwise,
        vec![Column::new("three_doctors", "Three doctors")],
        rows,
        Some(*spacing),
    ))
}

/// Side-by-side table built from the `mean` of each source report, one
/// column per source. Sources must cover the same landmarks.
pub fn comparison_table(sources: &[(Column, &EvalReport)]) -> Result<EvalReport> {
    let Some((_, first)) = sources.first() else {
        return Ok(EvalReport::from_rows(ComparisonKind::Mixed, Vec::new(), Vec::new(), None));
    };
    let names: Vec<&str> = first.rows.iter().map(|r| r.landmark.as_str()).collect();
    for (col, rep) in sources {
        if rep.rows.iter().map(|r| r.landmark.as_str()).collect::<Vec<_>>() != names {
            return Err(Error::InconsistentLandmarks(format!(
                "column `{}` covers different landmarks",
                col.key
            )));
        }
    }
    let rows = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), sources.iter().map(|(_, r)| r.rows[i].mean).collect()))
        .collect();
    Ok(EvalReport::from_rows(
        ComparisonKind::Mixed,
        sources.iter().map(|(c, _)| c.clone()).collect(),
        rows,
        first.spacing_cm_per_px,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

/// Rounds to `decimals` places, half away from zero, working on the
/// shortest decimal representation of `v` so that values printed as e.g.
/// `2.265` round up as read.
pub fn format_fixed(v: f64, decimals: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let repr = format!("{}", v.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend((0..decimals).map(|i| frac.get(i).copied().unwrap_or(0)));
    if frac.get(decimals).is_some_and(|d| *d >= 5) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let int_len = digits.len() - decimals;
    let mut out = String::new();
    let is_zero = digits.iter().all(|d| *d == 0);
    if v < 0.0 && !is_zero {
        out.push('-');
    }
    for d in &digits[..int_len] {
        out.push((b'0' + d) as char);
    }
    if decimals > 0 {
        out.push('.');
        for d in &digits[int_len..] {
            out.push((b'0' + d) as char);
        }
    }
    out
}

/// Serializes a report with two-decimal numbers. CSV: `landmark`, one
/// column per entry of [`EvalReport::columns`], `mean`, and a trailing
/// `OVERALL` row of column means and the overall mean. Markdown renders the
/// same table. A report without rows yields the header only.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    let mut out = String::new();
    let col_means = report.column_means();
    match format {
        ReportFormat::Csv => {
            out.push_str("landmark");
            for c in &report.columns {
                out.push(',');
                out.push_str(&c.key);
            }
            out.push_str(",mean\n");
            for r in &report.rows {
                out.push_str(&r.landmark);
                for v in &r.values {
                    let _ = write!(out, ",{}", format_fixed(*v, 2));
                }
                let _ = writeln!(out, ",{}", format_fixed(r.mean, 2));
            }
            if !report.rows.is_empty() {
                out.push_str("OVERALL");
                for v in &col_means {
                    let _ = write!(out, ",{}", format_fixed(*v, 2));
                }
                let _ = writeln!(out, ",{}", format_fixed(report.overall_mean, 2));
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Landmark |");
            for c in &report.columns {
                let _ = write!(out, " {} |", c.label);
            }
            out.push_str(" Mean |\n|---|");
            for _ in &report.columns {
                out.push_str("---:|");
            }
            out.push_str("---:|\n");
            for r in &report.rows {
                let _ = write!(out, "| {} |", r.landmark);
                for v in &r.values {
                    let _ = write!(out, " {} |", format_fixed(*v, 2));
                }
                let _ = writeln!(out, " {} |", format_fixed(r.mean, 2));
            }
            if !report.rows.is_empty() {
                out.push_str("| **Mean** |");
                for v in &col_means {
                    let _ = write!(out, " {} |", format_fixed(*v, 2));
                }
                let _ = writeln!(out, " {} |", format_fixed(report.overall_mean, 2));
            }
        }
    }
    out.into_bytes()
}

/// A numeric table as printed: landmark rows, named columns, and the
/// optional printed summary row (`OVERALL` or `MEAN`). Lines starting with
/// `#` are comments.
#[derive(Debug, Clone, PartialEq)]
pub struct PrintedTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    pub summary: Option<Vec<f64>>,
}

impl PrintedTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("landmark") {
            return Err(Error::Annotation("table header must start with `landmark`".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut summary = None;
        for rec in rdr.records() {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Annotation(format!("not a number: `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != columns.len() {
                return Err(Error::Annotation(format!(
                    "row `{}` has {} values, header has {}",
                    &rec[0],
                    values.len(),
                    columns.len()
                )));
            }
            match &rec[0] {
                "OVERALL" | "MEAN" => summary = Some(values),
                name => rows.push((name.to_string(), values)),
            }
        }
        Ok(Self {
            columns,
            rows,
            summary,
        })
    }

    pub fn column(&self, key: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == key)
    }

    /// Per-fold values of a split table (all `split*` columns), shaped for
    /// [`build_table`].
    pub fn split_values(&self) -> Vec<FoldErrors> {
        let splits: Vec<usize> = (0..self.columns.len())
            .filter(|&i| self.columns[i].starts_with("split"))
            .collect();
        splits
            .iter()
            .map(|&c| self.rows.iter().map(|(n, v)| (n.clone(), vec![v[c]])).collect())
            .collect()
    }
}

/// Reads back a CSV produced by [`emit_report`] (values at print precision).
pub fn parse_report_csv(text: &str) -> Result<EvalReport> {
    let t = PrintedTable::parse(text)?;
    let Some(mean_col) = t.column("mean") else {
        return Err(Error::Annotation("report CSV has no `mean` column".into()));
    };
    let columns = t.columns[..mean_col]
        .iter()
        .map(|k| match k.strip_prefix("split").and_then(|i| i.parse::<usize>().ok()) {
            Some(i) => Column::split(i),
            None => Column::new(k.clone(), k.clone()),
        })
        .collect();
    let rows = t
        .rows
        .iter()
        .map(|(n, v)| ReportRow {
            landmark: n.clone(),
            values: v[..mean_col].to_vec(),
            mean: v[mean_col],
        })
        .collect();
    Ok(EvalReport {
        kind: ComparisonKind::ModelVsAnnotator,
        columns,
        rows,
        overall_mean: t.summary.as_ref().map_or(0.0, |s| s[mean_col]),
        spacing_cm_per_px: None,
    })
}

/// A printed cell that the recomputed value misses by more than the
/// tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub landmark: String,
    pub printed: f64,
    pub recomputed: f64,
}

impl Discrepancy {
    pub fn delta(&self) -> f64 {
        (self.recomputed - self.printed).abs()
    }
}

/// Compares the `mean` column of a printed split table against the row
/// means of `report`.
pub fn mean_discrepancies(printed: &PrintedTable, report: &EvalReport, tolerance: f64) -> Result<Vec<Discrepancy>> {
    let Some(col) = printed.column("mean") else {
        return Err(Error::Annotation("printed table has no `mean` column".into()));
    };
    let mut out = Vec::new();
    for (name, values) in &printed.rows {
        let row = report
            .row(name)
            .ok_or_else(|| Error::InconsistentLandmarks(format!("`{name}` missing from report")))?;
        if (row.mean - values[col]).abs() > tolerance {
            out.push(Discrepancy {
                landmark: name.clone(),
                printed: values[col],
                recomputed: row.mean,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PixelSpacing {
        PixelSpacing::isotropic(1.0).unwrap()
    }

    #[test]
    fn decode_ties_and_peaks() {
        let u = Tensor::full([4, 5], 0.5f64);
        assert_eq!(decode_heatmap(&u).unwrap(), Pixel::new(0, 0));
        let mut t = Tensor::zeros([10, 10]);
        t.data_mut()[7 * 10 + 3] = 2.0; // (x=3, y=7)
        t.data_mut()[2 * 10 + 5] = 2.0; // (x=5, y=2)
        assert_eq!(decode_heatmap::<f64>(&t).unwrap(), Pixel::new(5, 2));
        assert!(decode_heatmap(&Tensor::<f64>::zeros([0, 3])).is_err());
    }

    #[test]
    fn radial_error_examples() {
        let s = unit();
        let e = radial_error_cm(Pixel::new(3, 4), Point::new(0.0, 0.0), (10, 10), (10, 10), &s).unwrap();
        assert_eq!(e, 5.0);
        let s2 = PixelSpacing::isotropic(2.0).unwrap();
        let e2 = radial_error_cm(Pixel::new(3, 4), Point::new(0.0, 0.0), (10, 10), (10, 10), &s2).unwrap();
        assert_eq!(e2, 10.0);
        // upscaling is real valued: 1 px at 5x → 5 original px
        let e3 = radial_error_cm(Pixel::new(1, 0), Point::new(5.0, 0.0), (10, 10), (50, 50), &s).unwrap();
        assert_eq!(e3, 0.0);
        assert!(matches!(PixelSpacing::new(0.0, 1.0), Err(Error::InvalidSpacing(..))));
    }

    #[test]
    fn build_table_published_rows() {
        let folds: Vec<FoldErrors> = [2.14, 2.71, 1.98, 1.86, 2.63]
            .iter()
            .map(|v| [("A".to_string(), vec![*v])].into_iter().collect())
            .collect();
        let r = build_table(&folds, None).unwrap();
        assert!((r.rows[0].mean - 2.264).abs() < 1e-12);
        assert_eq!(format_fixed(r.rows[0].mean, 2), "2.26");
    }

    #[test]
    fn build_table_rejects_mismatched_folds() {
        let a: FoldErrors = [("A".to_string(), vec![1.0])].into_iter().collect();
        let b: FoldErrors = [("B".to_string(), vec![1.0])].into_iter().collect();
        assert!(matches!(build_table(&[a, b], None), Err(Error::InconsistentLandmarks(_))));
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(format_fixed(2.265, 2), "2.27");
        assert_eq!(format_fixed(-2.265, 2), "-2.27");
        assert_eq!(format_fixed(0.995, 2), "1.00");
        assert_eq!(format_fixed(9.999, 2), "10.00");
        assert_eq!(format_fixed(1.0 / 3.0, 2), "0.33");
        assert_eq!(format_fixed(2.0, 2), "2.00");
        assert_eq!(format_fixed(-0.001, 2), "0.00");
        assert_eq!(format_fixed(1e-20, 2), "0.00");
        assert_eq!(format_fixed(12.5, 0), "13");
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = build_table(&[], None).unwrap();
        assert_eq!(emit_report(&r, ReportFormat::Csv), b"landmark,mean\n");
        let folds: Vec<FoldErrors> = vec![FoldErrors::new(); 2];
        let r = build_table(&folds, None).unwrap();
        assert_eq!(emit_report(&r, ReportFormat::Csv), b"landmark,split1,split2,mean\n");
    }

    #[test]
    fn interobserver_offset_fixture() {
        let mk = |ann: &str, x: f64, y: f64| LandmarkAnnotation {
            image_id: "i".into(),
            annotator_id: ann.into(),
            points: [("S".to_string(), Point::new(x, y))].into_iter().collect(),
            original_hw: (20, 20),
        };
        let anns = vec![mk("a", 1.0, 1.0), mk("b", 1.0, 1.0), mk("c", 4.0, 5.0)];
        let r = interobserver_table(&anns, &unit()).unwrap();
        assert!((r.rows[0].values[0] - 10.0 / 3.0).abs() < 1e-12);
        let missing = vec![mk("a", 1.0, 1.0), mk("b", 1.0, 1.0)];
        assert!(interobserver_table(&missing, &unit()).is_err());
    }
}
