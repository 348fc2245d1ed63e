//! Ground-truth ingestion and regression metrics.
//!
//! MAPE is the per-sample mean `100 * mean(|pred - truth| / |truth|)`, and
//! R^2 uses the truth series as reference: `1 - RSS / TSS` with `TSS`
//! taken around the mean of the truth.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::Serialize;

use crate::ensemble::{ReadingRecord, Status};
use crate::error::{Error, Result};
use crate::records::{format_timestamp, parse_timestamp, timestamp_from_name};

fn check_pair(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "series lengths differ: {} predictions, {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::Input(format!("need at least {min} samples, got {}", pred.len())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    if let Some(i) = truth.iter().position(|&t| t == 0.0) {
        return Err(Error::Input(format!("truth value at index {i} is zero")));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs() / t.abs()).sum();
    Ok(100.0 * sum / pred.len() as f64)
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let tss: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::Input("truth series has zero variance".into()));
    }
    let rss: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - rss / tss)
}

/// Squared Pearson correlation of two aligned series.
pub fn cross_series_r2(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Input("series has zero variance".into()));
    }
    Ok((sab * sab) / (saa * sbb))
}

/// Default half-width of the nearest-neighbour join: half of a 15-minute cadence.
pub fn default_alignment_window() -> TimeDelta {
    TimeDelta::seconds(450)
}

/// Pairs every sample of `a` with the nearest sample of `b` in time, when one
/// lies within `window`. Both series must be sorted by time.
pub fn align_nearest(
    a: &[(NaiveDateTime, f64)],
    b: &[(NaiveDateTime, f64)],
    window: TimeDelta,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut j = 0;
    for &(t, va) in a {
        while j + 1 < b.len() && b[j + 1].0 <= t {
            j += 1;
        }
        let candidates = [b.get(j), b.get(j + 1)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by_key(|(tb, _)| (*tb - t).abs());
        if let Some(&(tb, vb)) = best {
            if (tb - t).abs() <= window {
                out.push((va, vb));
            }
        }
    }
    out
}

/// Annotated water-line rows keyed by a canonical identifier: the ISO
/// timestamp when one can be read from the raw identifier, otherwise the
/// identifier's file stem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub entries: BTreeMap<String, f64>,
}

pub fn canonical_id(raw: &str) -> String {
    match parse_timestamp(raw) {
        Some(t) => format_timestamp(&t),
        None => Path::new(raw)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(raw)
            .to_string(),
    }
}

impl GroundTruthSet {
    pub fn insert(&mut self, raw_id: &str, row: f64) -> Result<()> {
        let id = canonical_id(raw_id);
        if self.entries.insert(id.clone(), row).is_some() {
            return Err(Error::Input(format!("duplicate ground-truth identifier `{id}`")));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `identifier,row` or `identifier,row_a,row_b` (two annotations, averaged).
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let mut set = Self::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
            let id = rec.get(0).unwrap_or_default().trim();
            let rows: Vec<f64> = rec
                .iter()
                .skip(1)
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Input(format!("ground truth line {}: bad row value", line + 2)))?;
            if id.is_empty() || rows.is_empty() || rows.len() > 2 {
                return Err(Error::Input(format!(
                    "ground truth line {}: expected identifier and one or two rows",
                    line + 2
                )));
            }
            set.insert(id, rows.iter().sum::<f64>() / rows.len() as f64)?;
        }
        Ok(set)
    }

    /// Directory of Pascal-VOC XML files as written by LabelImg. Each file
    /// contributes the mean vertical centre of its boxes.
    pub fn from_labelimg_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut set = Self::default();
        let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let (id, row) = parse_labelimg(&text)
                .map_err(|reason| Error::Ingest { path: path.clone(), reason })?;
            let id = id.unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
            set.insert(&id, row)?;
        }
        Ok(set)
    }
}

/// Returns the annotated image name (if present) and the water row.
pub fn parse_labelimg(xml: &str) -> std::result::Result<(Option<String>, f64), String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    let filename = root
        .children()
        .find(|n| n.has_tag_name("filename"))
        .and_then(|n| n.text())
        .map(|s| s.trim().to_string());
    let number = |node: roxmltree::Node<'_, '_>, tag: &str| -> std::result::Result<f64, String> {
        node.children()
            .find(|n| n.has_tag_name(tag))
            .and_then(|n| n.text())
            .ok_or_else(|| format!("bndbox without <{tag}>"))?
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("<{tag}>: {e}"))
    };
    let mut centers = Vec::new();
    for bb in root.descendants().filter(|n| n.has_tag_name("bndbox")) {
        centers.push((number(bb, "ymin")? + number(bb, "ymax")?) / 2.0);
    }
    if centers.is_empty() {
        return Err("no bounding boxes".into());
    }
    Ok((filename, centers.iter().sum::<f64>() / centers.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    /// Over samples with non-zero truth; `None` if there are none.
    pub mape: Option<f64>,
    /// `None` with fewer than two samples or constant truth.
    pub r2: Option<f64>,
    pub response_rate: f64,
    /// Signed errors (prediction minus truth) grouped by calendar day.
    pub per_day_errors: Vec<(NaiveDate, Vec<(NaiveDateTime, f64)>)>,
}

/// Pairs `ok` records with ground truth through their timestamps and scores
/// the pixel rows.
pub fn evaluate(records: &[ReadingRecord], gt: &GroundTruthSet) -> Result<EvalReport> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut by_day: BTreeMap<NaiveDate, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    for r in records {
        let (Some(ts), Some(reading)) = (r.timestamp, r.reading) else { continue };
        if r.status != Status::Ok {
            continue;
        }
        let Some(t) = gt.get(&format_timestamp(&ts)) else { continue };
        pred.push(reading.pixel_row);
        truth.push(t);
        by_day.entry(ts.date()).or_default().push((ts, reading.pixel_row - t));
    }
    if pred.is_empty() {
        return Err(Error::Input("no ok records pair with the ground truth".into()));
    }
    let nonzero: (Vec<f64>, Vec<f64>) =
        pred.iter().zip(&truth).filter(|(_, t)| **t != 0.0).map(|(p, t)| (*p, *t)).unzip();
    let ok = records.iter().filter(|r| r.status == Status::Ok).count();
    Ok(EvalReport {
        n: pred.len(),
        mae: mae(&pred, &truth)?,
        mape: if nonzero.0.is_empty() { None } else { Some(mape(&nonzero.0, &nonzero.1)?) },
        r2: r_squared(&pred, &truth).ok(),
        response_rate: ok as f64 / records.len() as f64,
        per_day_errors: by_day.into_iter().collect(),
    })
}

/// One-row summary: `n, mae, mape, r2, response_rate` (absent values empty).
pub fn write_summary<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    w.write_record(["n", "mae", "mape", "r2", "response_rate"]).map_err(csv_err)?;
    w.write_record([
        report.n.to_string(),
        report.mae.to_string(),
        opt(report.mape),
        opt(report.r2),
        report.response_rate.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

/// Signed errors in long form: `date, timestamp, error_px`.
pub fn write_per_day_errors<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["date", "timestamp", "error_px"]).map_err(csv_err)?;
    for (day, errors) in &report.per_day_errors {
        for (ts, e) in errors {
            w.write_record([day.to_string(), format_timestamp(ts), e.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Identifier a record is paired under, if it has a timestamp.
pub fn record_id(r: &ReadingRecord) -> Option<String> {
    r.timestamp.as_ref().map(format_timestamp)
}

/// Reads `timestamp,value` rows (e.g. an external gauge) sorted by time.
pub fn read_series<R: Read>(input: R) -> Result<Vec<(NaiveDateTime, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
        let ts = rec.get(0).unwrap_or_default().trim();
        let ts = parse_timestamp(ts)
            .or_else(|| timestamp_from_name(ts))
            .ok_or_else(|| Error::Input(format!("series line {}: bad timestamp `{ts}`", line + 2)))?;
        let v: f64 = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("series line {}: bad value", line + 2)))?;
        out.push((ts, v));
    }
    out.sort_by_key(|p| p.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Reading;
    use proptest::prelude::*;

    fn t(d: u32, h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2019, 10, d).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 1.5);
        assert_eq!(mape(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert!((mape(&[110.0], &[100.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&[90.0, 210.0], &[100.0, 200.0]).unwrap() - 7.5).abs() < 1e-12);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let a = [1.0, 2.0, 3.0];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 5.0).collect();
        assert!((cross_series_r2(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((cross_series_r2(&a, &[1.0, 2.0, 2.0]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn metric_errors() {
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        match mape(&[1.0, 2.0], &[3.0, 0.0]) {
            Err(Error::Input(msg)) => assert!(msg.contains("index 1")),
            other => panic!("{other:?}"),
        }
        assert!(r_squared(&[1.0], &[1.0]).is_err());
        assert!(r_squared(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(cross_series_r2(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).is_err());
    }

    #[test]
    fn nearest_alignment() {
        let a = vec![(t(3, 0, 0), 1.0), (t(3, 0, 10), 2.0), (t(3, 1, 0), 3.0)];
        let b = vec![(t(3, 0, 2), 10.0), (t(3, 0, 15), 20.0), (t(3, 0, 30), 30.0)];
        let pairs = align_nearest(&a, &b, default_alignment_window());
        // 00:10 is 5 minutes from 00:15; 01:00 is 30 minutes from anything.
        assert_eq!(pairs, vec![(1.0, 10.0), (2.0, 20.0)]);
    }

    #[test]
    fn ground_truth_csv_and_xml() {
        let csv = "identifier,row\nframe_20191003T000000.png,120\n2019-10-03T00:10:00,121,123\n";
        let gt = GroundTruthSet::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(gt.get("2019-10-03T00:00:00"), Some(120.0));
        assert_eq!(gt.get("2019-10-03T00:10:00"), Some(122.0));
        assert!(GroundTruthSet::from_csv("identifier,row\na,1\na,2\n".as_bytes()).is_err());

        let xml = r#"<annotation><folder>x</folder><filename>cam_20191003T002000.jpg</filename>
            <object><name>water</name><bndbox><xmin>10</xmin><ymin>100</ymin><xmax>20</xmax><ymax>110</ymax></bndbox></object>
            <object><name>water</name><bndbox><xmin>30</xmin><ymin>104</ymin><xmax>40</xmax><ymax>112</ymax></bndbox></object>
            </annotation>"#;
        let (name, row) = parse_labelimg(xml).unwrap();
        assert_eq!(name.as_deref(), Some("cam_20191003T002000.jpg"));
        assert_eq!(row, 106.5);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.xml"), xml).unwrap();
        let set = GroundTruthSet::from_labelimg_dir(dir.path()).unwrap();
        assert_eq!(set.get("2019-10-03T00:20:00"), Some(106.5));
        assert!(parse_labelimg("<annotation/>").is_err());
    }

    fn ok(ts: NaiveDateTime, row: f64) -> ReadingRecord {
        ReadingRecord {
            timestamp: Some(ts),
            status: Status::Ok,
            reading: Some(Reading { pixel_row: row, delta_h_cm: 0.0, height_cm: 0.0 }),
            match_score: Some(1.0),
            detector_gap_px: Some(0.0),
        }
    }

    #[test]
    fn evaluate_perfect_and_failures() {
        let mut gt = GroundTruthSet::default();
        let mut recs = Vec::new();
        for i in 0..6u32 {
            let ts = t(3 + i / 3, i, 0);
            gt.insert(&format_timestamp(&ts), 100.0 + i as f64).unwrap();
            recs.push(ok(ts, 100.0 + i as f64));
        }
        recs.push(ReadingRecord::without_reading(Some(t(9, 0, 0)), Status::NoMatch));
        let rep = evaluate(&recs, &gt).unwrap();
        assert_eq!(rep.n, 6);
        assert_eq!(rep.mae, 0.0);
        assert_eq!(rep.mape, Some(0.0));
        assert_eq!(rep.r2, Some(1.0));
        assert!((rep.response_rate - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rep.per_day_errors.len(), 2);

        let bad: Vec<_> = recs.iter().map(|r| ReadingRecord::without_reading(r.timestamp, Status::NonConvergent)).collect();
        assert!(evaluate(&bad, &gt).is_err());
    }

    #[test]
    fn report_csvs() {
        let mut gt = GroundTruthSet::default();
        gt.insert("2019-10-03T00:00:00", 8.0).unwrap();
        gt.insert("2019-10-04T00:00:00", 16.0).unwrap();
        let recs = vec![ok(t(3, 0, 0), 9.0), ok(t(4, 0, 0), 15.0)];
        let rep = evaluate(&recs, &gt).unwrap();
        let mut summary = Vec::new();
        write_summary(&mut summary, &rep).unwrap();
        assert_eq!(String::from_utf8(summary).unwrap(), "n,mae,mape,r2,response_rate\n2,1,9.375,0.9375,1\n");
        let mut days = Vec::new();
        write_per_day_errors(&mut days, &rep).unwrap();
        assert_eq!(
            String::from_utf8(days).unwrap(),
            "date,timestamp,error_px\n2019-10-03,2019-10-03T00:00:00,1\n2019-10-04,2019-10-04T00:00:00,-1\n"
        );
    }

    #[test]
    fn monte_carlo_mae_matches_half_normal_mean() {
        let mut rng = crate::rng::Rng::new(2019);
        let mut gt = GroundTruthSet::default();
        let mut recs = Vec::new();
        let start = t(3, 0, 0);
        for i in 0..1000 {
            let ts = start + TimeDelta::minutes(10 * i);
            let truth = 150.0 + 20.0 * (i as f64 / 40.0).sin();
            gt.insert(&format_timestamp(&ts), truth).unwrap();
            recs.push(ok(ts, truth + rng.gaussian(2.0)));
        }
        let rep = evaluate(&recs, &gt).unwrap();
        let expected = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert_eq!(rep.n, 1000);
        assert!((rep.mae - expected).abs() <= 0.3, "mae {}", rep.mae);
        assert_eq!(rep.per_day_errors.len(), 7);
    }

    proptest! {
        #[test]
        fn metric_properties(
            truth in proptest::collection::vec(1.0f64..500.0, 2..40),
            noise in proptest::collection::vec(-20.0f64..20.0, 40), c in -100.0f64..100.0) {
            let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
            let m = mae(&pred, &truth).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!(mape(&pred, &truth).unwrap() >= 0.0);
            let shifted_p: Vec<f64> = pred.iter().map(|v| v + c).collect();
            let shifted_t: Vec<f64> = truth.iter().map(|v| v + c).collect();
            prop_assert!((mae(&shifted_p, &shifted_t).unwrap() - m).abs() < 1e-9);
            if let Ok(r2) = r_squared(&pred, &truth) {
                prop_assert!(r2 <= 1.0);
            }
            prop_assert_eq!(mae(&truth, &truth).unwrap(), 0.0);
        }

        #[test]
        fn cross_r2_affine_invariant(
            a in proptest::collection::vec(-50.0f64..50.0, 3..30),
            b0 in proptest::collection::vec(-50.0f64..50.0, 30),
            s in 0.1f64..10.0, o in -100.0f64..100.0) {
            let b = &b0[..a.len()];
            prop_assume!(cross_series_r2(&a, b).is_ok());
            let r = cross_series_r2(&a, b).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| s * v + o).collect();
            prop_assert!((cross_series_r2(&a2, b).unwrap() - r).abs() < 1e-9);
        }
    }
}
