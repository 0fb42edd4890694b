//! Dataset directories: `data.csv` holds the windows back to back (each
//! `T + H` rows, the last `H` being prediction targets), `labels.csv` the
//! class per window, `truth.csv` the original values of artificially masked
//! cells, and `meta.json` the shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::csvio::{fmt_float, load_csv, write_series};
use crate::data::masking::inject_mask;
use crate::data::{window, Dataset, MaskPlan, MtsWindow, Sample, Series};
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

pub const DATA_FILE: &str = "data.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub len: usize,
    pub horizon: usize,
    pub count: usize,
    pub classes: Option<usize>,
}

impl DatasetMeta {
    pub fn of(d: &Dataset) -> Self {
        DatasetMeta {
            n: d.num_attributes(),
            len: d.window_len(),
            horizon: d.horizon,
            count: d.len(),
            classes: d.num_classes,
        }
    }
}

pub fn save_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DmaeError::io(dir, e))?;
    let meta = DatasetMeta::of(d);
    let stride = meta.len + meta.horizon;
    let total = stride * meta.count;
    let mut values = Tensor::zeros(&[meta.n, total]);
    let mut mask = Tensor::zeros(&[meta.n, total]);
    let mut truth_rows = String::from("row,column,value\n");
    for (i, s) in d.samples.iter().enumerate() {
        let base = i * stride;
        for a in 0..meta.n {
            for t in 0..meta.len {
                values.set2(a, base + t, s.window.values().at2(a, t));
                mask.set2(a, base + t, s.window.mask().at2(a, t));
                if s.window.mask().at2(a, t) == 0.0 && s.known.at2(a, t) == 1.0 {
                    truth_rows.push_str(&format!("{},{},{}\n", base + t, a, fmt_float(s.truth.at2(a, t))));
                }
            }
            for h in 0..meta.horizon {
                let f = s.future.as_ref().ok_or_else(|| DmaeError::Data(format!("window {i} lacks future values")))?;
                values.set2(a, base + meta.len + h, f.at2(a, h));
                mask.set2(a, base + meta.len + h, 1.0);
            }
        }
    }
    write_series(&dir.join(DATA_FILE), &Series::new(d.names.clone(), values, mask)?)?;
    let write = |name: &str, body: String| fs::write(dir.join(name), body).map_err(|e| DmaeError::io(dir.join(name), e));
    if d.num_classes.is_some() {
        let mut labels = String::from("window,label\n");
        for (i, s) in d.samples.iter().enumerate() {
            let l = s.label.ok_or_else(|| DmaeError::Data(format!("window {i} is unlabeled")))?;
            labels.push_str(&format!("{i},{l}\n"));
        }
        write(LABELS_FILE, labels)?;
    }
    if truth_rows.lines().count() > 1 {
        write(TRUTH_FILE, truth_rows)?;
    }
    write(META_FILE, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
}

fn read_int_csv(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DmaeError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DmaeError::Data(format!("{}: {e}", path.display())))?;
        if rec.len() != columns {
            return Err(DmaeError::Data(format!("{}: row {} has {} fields", path.display(), r + 1, rec.len())));
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(cell: &str, row: usize, column: usize) -> Result<T> {
    cell.trim().parse().map_err(|_| DmaeError::Parse { row, column, message: format!("cannot parse {cell:?}") })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| DmaeError::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| DmaeError::Data(format!("{}: {e}", meta_path.display())))?;
    let series = load_csv(&dir.join(DATA_FILE))?;
    let stride = meta.len + meta.horizon;
    if series.num_attributes() != meta.n || series.len() != stride * meta.count {
        return Err(DmaeError::Data(format!(
            "data.csv is {}x{}, meta.json implies {}x{}",
            series.len(),
            series.num_attributes(),
            stride * meta.count,
            meta.n
        )));
    }
    let labels: Option<Vec<usize>> = match meta.classes {
        Some(c) => {
            let rows = read_int_csv(&dir.join(LABELS_FILE), 2)?;
            if rows.len() != meta.count {
                return Err(DmaeError::Data(format!("labels.csv has {} rows, expected {}", rows.len(), meta.count)));
            }
            let labels = rows.iter().enumerate().map(|(r, row)| parse::<usize>(&row[1], r + 1, 2)).collect::<Result<Vec<_>>>()?;
            if let Some(bad) = labels.iter().find(|&&l| l >= c) {
                return Err(DmaeError::Data(format!("label {bad} outside [0, {c})")));
            }
            Some(labels)
        }
        None => None,
    };
    let mut truth = series.values.clone();
    let mut known = series.mask.clone();
    let truth_path = dir.join(TRUTH_FILE);
    if truth_path.exists() {
        for (r, row) in read_int_csv(&truth_path, 3)?.iter().enumerate() {
            let t: usize = parse(&row[0], r + 1, 1)?;
            let a: usize = parse(&row[1], r + 1, 2)?;
            let v: f64 = parse(&row[2], r + 1, 3)?;
            if a >= meta.n || t >= series.len() {
                return Err(DmaeError::Data(format!("truth.csv row {} points outside the data", r + 1)));
            }
            truth.set2(a, t, v);
            known.set2(a, t, 1.0);
        }
    }
    let mut samples = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let base = i * stride;
        let (v, m) = series.slice(base, meta.len);
        let mut s = Sample::from_window(MtsWindow::new(v, m, base)?);
        s.truth = window::cols(&truth, base, meta.len);
        s.known = window::cols(&known, base, meta.len);
        s.label = labels.as_ref().map(|l| l[i]);
        s.future = (meta.horizon > 0).then(|| window::cols(&truth, base + meta.len, meta.horizon));
        samples.push(s);
    }
    Ok(Dataset { names: series.names, samples, num_classes: meta.classes, horizon: meta.horizon })
}

/// Plain CSV without metadata: sliding windows, no labels or targets.
pub fn dataset_from_csv(path: &Path, len: usize, stride: usize) -> Result<Dataset> {
    let series = load_csv(path)?;
    let samples = window::window(&series, len, stride)?.into_iter().map(Sample::from_window).collect();
    Ok(Dataset { names: series.names, samples, num_classes: None, horizon: 0 })
}

/// Injects missingness into every window while keeping the removed values
/// as ground truth.
pub fn mask_dataset(d: &Dataset, plan: &MaskPlan) -> Result<Dataset> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = d.clone();
    for s in &mut out.samples {
        let mask = inject_mask(s.window.mask(), plan.ratio, plan.pattern, plan.span, &mut rng)?;
        s.window = s.window.with_mask(mask)?;
    }
    Ok(out)
}
