//! Trajectory data model, CSV ingestion and writing, min-max scaling and
//! per-column smoothing.
//!
//! The canonical on-disk layout is long format with header `frame,id,x,y`.
//! Wide files (`frame,x_<id>,y_<id>,...`) are accepted on input and can be
//! written for matrix-shaped artifacts. Lines starting with `#` are comments.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::{sg_filter, Series, SgConfig};

/// Time-ordered particle positions: one row per frame, columns
/// `x_1, y_1, ..., x_k, y_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub features: Matrix,
    /// Frames per second. Metadata only; all time derivatives use one frame as the unit.
    pub frame_rate: f64,
    pub particle_ids: Vec<String>,
    /// Frame number of the first row.
    #[serde(default)]
    pub start_frame: i64,
}

impl TrajectorySet {
    pub fn new(features: Matrix, frame_rate: f64, particle_ids: Vec<String>) -> Result<Self> {
        let t = TrajectorySet {
            features,
            frame_rate,
            particle_ids,
            start_frame: 0,
        };
        t.validate()?;
        Ok(t)
    }

    /// Numbered ids `1..=k`.
    pub fn with_default_ids(features: Matrix, frame_rate: f64) -> Result<Self> {
        let k = features.cols() / 2;
        Self::new(features, frame_rate, (1..=k).map(|i| i.to_string()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.features.shape();
        if rows == 0 {
            return Err(Error::Input("trajectory set has no frames".into()));
        }
        if cols == 0 || cols % 2 != 0 {
            return Err(Error::shape(
                "TrajectorySet",
                format!("column count must be even and positive, got {cols}"),
            ));
        }
        if self.particle_ids.len() * 2 != cols {
            return Err(Error::shape(
                "TrajectorySet",
                format!("{} ids for {cols} columns", self.particle_ids.len()),
            ));
        }
        if !self.features.is_finite() {
            return Err(Error::Input("trajectory set contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn n_particles(&self) -> usize {
        self.features.cols() / 2
    }

    /// Positions of every particle at row `frame`.
    pub fn positions(&self, frame: usize) -> Vec<[f64; 2]> {
        self.features
            .row(frame)
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<TrajectorySet> {
        if n == 0 || n > self.n_frames() {
            return Err(Error::Input(format!(
                "cannot take {n} frames from a set of {}",
                self.n_frames()
            )));
        }
        Ok(TrajectorySet {
            features: self.features.slice_rows(0, n),
            frame_rate: self.frame_rate,
            particle_ids: self.particle_ids.clone(),
            start_frame: self.start_frame,
        })
    }

    fn with_features(&self, features: Matrix) -> TrajectorySet {
        TrajectorySet {
            features,
            frame_rate: self.frame_rate,
            particle_ids: self.particle_ids.clone(),
            start_frame: self.start_frame,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsvFormat {
    /// Decide from the header: `frame,id,x,y` is long, anything else wide.
    #[default]
    Auto,
    Long,
    Wide,
}

const DEFAULT_FRAME_RATE: f64 = 30.0;

pub fn load_trajectories(path: impl AsRef<Path>, format: CsvFormat) -> Result<TrajectorySet> {
    let file = std::fs::File::open(path.as_ref())?;
    read_trajectories(file, format)
}

pub fn read_trajectories<R: Read>(reader: R, format: CsvFormat) -> Result<TrajectorySet> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let is_long = header == ["frame", "id", "x", "y"];
    match format {
        CsvFormat::Long if !is_long => Err(Error::Ingest(format!(
            "long format requires header frame,id,x,y, found {}",
            header.join(",")
        ))),
        CsvFormat::Long => read_long(rdr),
        CsvFormat::Auto if is_long => read_long(rdr),
        CsvFormat::Auto | CsvFormat::Wide => read_wide(rdr, &header),
    }
}

fn parse_cell<T: std::str::FromStr>(value: &str, row: usize, column: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse {value:?}"),
    })
}

fn read_long<R: Read>(mut rdr: csv::Reader<R>) -> Result<TrajectorySet> {
    let mut ids: Vec<String> = Vec::new();
    let mut id_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, i64), (f64, f64)> = HashMap::new();
    let mut frames = BTreeSet::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != 4 {
            return Err(Error::Ingest(format!("row {row} has {} fields, expected 4", rec.len())));
        }
        let frame: i64 = parse_cell(&rec[0], row, "frame")?;
        let id = rec[1].to_string();
        let x: f64 = parse_cell(&rec[2], row, "x")?;
        let y: f64 = parse_cell(&rec[3], row, "y")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                row,
                column: "x/y".into(),
                message: "non-finite coordinate".into(),
            });
        }
        let idx = *id_index.entry(id.clone()).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        });
        if cells.insert((idx, frame), (x, y)).is_some() {
            return Err(Error::Ingest(format!(
                "duplicate entry for (id {}, frame {frame})",
                ids[idx]
            )));
        }
        frames.insert(frame);
    }

    let (first, last) = match (frames.first(), frames.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Ingest("no data rows".into())),
    };
    let mut gaps = Vec::new();
    for (idx, id) in ids.iter().enumerate() {
        for frame in first..=last {
            if !cells.contains_key(&(idx, frame)) {
                gaps.push(format!("(id {id}, frame {frame})"));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Ingest(format!("missing entries: {}", gaps.join(", "))));
    }

    let n_frames = (last - first + 1) as usize;
    let mut features = Matrix::zeros(n_frames, 2 * ids.len());
    for (&(idx, frame), &(x, y)) in &cells {
        let r = (frame - first) as usize;
        features.set(r, 2 * idx, x);
        features.set(r, 2 * idx + 1, y);
    }
    let mut t = TrajectorySet::new(features, DEFAULT_FRAME_RATE, ids)?;
    t.start_frame = first;
    Ok(t)
}

fn read_wide<R: Read>(mut rdr: csv::Reader<R>, header: &[String]) -> Result<TrajectorySet> {
    if header.first().map(String::as_str) != Some("frame") {
        return Err(Error::Ingest("wide format must start with a frame column".into()));
    }
    let coords = &header[1..];
    if coords.is_empty() || coords.len() % 2 != 0 {
        return Err(Error::Ingest(format!(
            "wide format needs x/y column pairs, found {} coordinate columns",
            coords.len()
        )));
    }
    let mut ids = Vec::new();
    for pair in coords.chunks_exact(2) {
        let (x, y) = (&pair[0], &pair[1]);
        match (x.strip_prefix("x_"), y.strip_prefix("y_")) {
            (Some(a), Some(b)) if a == b => ids.push(a.to_string()),
            _ => {
                return Err(Error::Ingest(format!(
                    "expected columns x_<id>,y_<id>, found {x},{y}"
                )))
            }
        }
    }

    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::Ingest(format!(
                "row {row} has {} fields, expected {}",
                rec.len(),
                header.len()
            )));
        }
        let frame: i64 = parse_cell(&rec[0], row, "frame")?;
        let mut values = Vec::with_capacity(coords.len());
        for (c, name) in coords.iter().enumerate() {
            let v: f64 = parse_cell(&rec[c + 1], row, name)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "non-finite coordinate".into(),
                });
            }
            values.push(v);
        }
        rows.push((frame, values));
    }
    if rows.is_empty() {
        return Err(Error::Ingest("no data rows".into()));
    }
    rows.sort_by_key(|(f, _)| *f);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Ingest(format!("duplicate frame {}", pair[0].0)));
        }
    }
    let first = rows[0].0;
    let last = rows[rows.len() - 1].0;
    let present: BTreeSet<i64> = rows.iter().map(|(f, _)| *f).collect();
    let missing: Vec<String> = (first..=last)
        .filter(|f| !present.contains(f))
        .map(|f| format!("frame {f}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest(format!("missing frames: {}", missing.join(", "))));
    }
    let values: Vec<Vec<f64>> = rows.into_iter().map(|(_, v)| v).collect();
    let mut t = TrajectorySet::new(Matrix::from_rows(&values)?, DEFAULT_FRAME_RATE, ids)?;
    t.start_frame = first;
    Ok(t)
}

fn comment_line<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

/// Canonical long-format writer. Values use the shortest round-trip
/// representation, so reading the file back gives identical numbers.
pub fn write_trajectories<W: Write>(mut w: W, t: &TrajectorySet, comment: Option<&str>) -> Result<()> {
    comment_line(&mut w, comment)?;
    writeln!(w, "frame,id,x,y")?;
    for r in 0..t.n_frames() {
        let frame = t.start_frame + r as i64;
        let row = t.features.row(r);
        for (k, id) in t.particle_ids.iter().enumerate() {
            writeln!(w, "{frame},{id},{},{}", row[2 * k], row[2 * k + 1])?;
        }
    }
    Ok(())
}

/// Wide-format writer: one row per frame.
pub fn write_wide<W: Write>(mut w: W, t: &TrajectorySet, comment: Option<&str>) -> Result<()> {
    comment_line(&mut w, comment)?;
    let mut header = vec!["frame".to_string()];
    for id in &t.particle_ids {
        header.push(format!("x_{id}"));
        header.push(format!("y_{id}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in 0..t.n_frames() {
        let vals: Vec<String> = t.features.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", t.start_frame + r as i64, vals.join(","))?;
    }
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, t: &TrajectorySet, comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectories(&mut buf, t, comment)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn save_wide(path: impl AsRef<Path>, t: &TrajectorySet, comment: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    write_wide(&mut buf, t, comment)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Per-column min/max recorded by [`minmax_scale`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: ScalerParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.min.len() != s.max.len() {
            return Err(Error::shape("ScalerParams", "min and max lengths differ"));
        }
        Ok(s)
    }
}

/// Maps every column to `[0, 1]` by `(x - min) / (max - min)`. Constant
/// columns map to 0.
pub fn minmax_scale(t: &TrajectorySet) -> Result<(TrajectorySet, ScalerParams)> {
    if t.n_frames() < 2 {
        return Err(Error::Input("min-max scaling needs at least 2 frames".into()));
    }
    let f = &t.features;
    let mut min = vec![f64::INFINITY; f.cols()];
    let mut max = vec![f64::NEG_INFINITY; f.cols()];
    for r in 0..f.rows() {
        for (c, &v) in f.row(r).iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    let mut out = f.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let range = max[c] - min[c];
            *v = if range > 0.0 { (*v - min[c]) / range } else { 0.0 };
        }
    }
    Ok((t.with_features(out), ScalerParams { min, max }))
}

/// `x (max - min) + min` per column.
pub fn inverse_scale(t: &TrajectorySet, s: &ScalerParams) -> Result<TrajectorySet> {
    let f = &t.features;
    if s.min.len() != f.cols() || s.max.len() != f.cols() {
        return Err(Error::shape(
            "inverse_scale",
            format!("{} scaler columns for {} feature columns", s.min.len(), f.cols()),
        ));
    }
    let mut out = f.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * (s.max[c] - s.min[c]) + s.min[c];
        }
    }
    Ok(t.with_features(out))
}

/// Savitzky–Golay filter applied to each column independently.
pub fn smooth_trajectories(t: &TrajectorySet, window: usize, order: usize) -> Result<TrajectorySet> {
    let cfg = SgConfig::new(window, order)?;
    if window > t.n_frames() {
        return Err(Error::Config(format!(
            "smoothing window {window} exceeds {} frames",
            t.n_frames()
        )));
    }
    let mut out = t.features.clone();
    for c in 0..out.cols() {
        let filtered = sg_filter(&Series::new(t.features.column_values(c)), &cfg)?;
        out.set_column(c, &filtered.values);
    }
    Ok(t.with_features(out))
}
