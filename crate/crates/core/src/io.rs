//! Site tables, trend removal, gridding, and result files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{BoundingBox, GridSpec};

/// One observation. For geographic data `u` is latitude and `v` longitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub u: f64,
    pub v: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteTable {
    pub sites: Vec<Site>,
    /// Data rows that were skipped (unparsable, non-finite, or out of range).
    pub malformed: usize,
}

impl SiteTable {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.value).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    #[default]
    Comma,
    Whitespace,
}

/// Header names of the three columns, matched case-insensitively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    pub u: String,
    pub v: String,
    pub value: String,
}

impl ColumnMap {
    pub fn new(u: &str, v: &str, value: &str) -> Self {
        Self {
            u: u.into(),
            v: v.into(),
            value: value.into(),
        }
    }

    /// `Latitude, Longitude, Temperature`.
    pub fn argo() -> Self {
        Self::new("Latitude", "Longitude", "Temperature")
    }

    /// `u, v, value`, as written by the simulator.
    pub fn generic() -> Self {
        Self::new("u", "v", "value")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvOptions {
    pub delimiter: Delimiter,
    pub columns: ColumnMap,
    /// Reject rows whose `u` is outside `[-90, 90]` or `v` outside `[-180, 360)`.
    pub geographic: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            columns: ColumnMap::argo(),
            geographic: true,
        }
    }
}

fn column_index(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim().trim_matches('"').eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("column {name:?} not found in header {header:?}"),
        })
}

/// Reads a delimited site table with a header row.
pub fn read_site_csv(path: &Path, options: &CsvOptions) -> Result<SiteTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<Vec<String>> = Vec::new();
    match options.delimiter {
        Delimiter::Comma => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(file);
            for rec in reader.records() {
                // a broken record still counts as a row to skip
                records.push(
                    rec.map(|r| r.iter().map(str::to_owned).collect())
                        .unwrap_or_default(),
                );
            }
        }
        Delimiter::Whitespace => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                records.push(line.split_whitespace().map(str::to_owned).collect());
            }
        }
    }
    let mut rows = records.into_iter();
    let header = rows.next().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "empty file".into(),
    })?;
    let iu = column_index(&header, &options.columns.u, path)?;
    let iv = column_index(&header, &options.columns.v, path)?;
    let iy = column_index(&header, &options.columns.value, path)?;

    let mut table = SiteTable::default();
    for row in rows {
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| {
            row.get(i)
                .and_then(|s| s.trim_matches('"').parse::<f64>().ok())
                .filter(|x| x.is_finite())
        };
        let site = match (field(iu), field(iv), field(iy)) {
            (Some(u), Some(v), Some(value)) => Site { u, v, value },
            _ => {
                table.malformed += 1;
                continue;
            }
        };
        if options.geographic
            && !((-90.0..=90.0).contains(&site.u) && (-180.0..360.0).contains(&site.v))
        {
            table.malformed += 1;
            continue;
        }
        table.sites.push(site);
    }
    if table.sites.is_empty() {
        return Err(Error::Input(format!(
            "{}: no valid rows ({} malformed)",
            path.display(),
            table.malformed
        )));
    }
    Ok(table)
}

/// Writes sites as `u,v,value`.
pub fn write_site_csv(path: &Path, sites: &[Site]) -> Result<()> {
    let mut out = create(path)?;
    let mut body = String::from("u,v,value\n");
    for s in sites {
        body.push_str(&format!("{:.10},{:.10},{:.10}\n", s.u, s.v, s.value));
    }
    out.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Ordinary least squares fit of `value ~ a0 + a1 l + a2 l²` with `l = u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTrend {
    pub coefficients: [f64; 3],
    /// Classical OLS standard errors.
    pub std_errors: [f64; 3],
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl QuadraticTrend {
    pub fn eval(&self, l: f64) -> f64 {
        let [a0, a1, a2] = self.coefficients;
        a0 + l * (a1 + l * a2)
    }
}

/// Solves the 3x3 SPD system `a x = b` by Cholesky.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<([f64; 3], [[f64; 3]; 3])> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 1e-12 * a[i][i].abs().max(1.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let solve = |rhs: [f64; 3]| {
        let mut y = [0.0; 3];
        for i in 0..3 {
            y[i] = (rhs[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        let mut x = [0.0; 3];
        for i in (0..3).rev() {
            x[i] = (y[i] - (i + 1..3).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
        }
        x
    };
    let mut inv = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut e = [0.0; 3];
        e[c] = 1.0;
        let col = solve(e);
        for r in 0..3 {
            inv[r][c] = col[r];
        }
    }
    Some((solve(b), inv))
}

pub fn fit_quadratic_trend(sites: &[Site]) -> Result<QuadraticTrend> {
    let mut lats: Vec<f64> = sites.iter().map(|s| s.u).collect();
    lats.sort_by(f64::total_cmp);
    lats.dedup();
    if lats.len() < 3 {
        return Err(Error::Input(format!(
            "quadratic trend needs at least 3 distinct latitudes, got {}",
            lats.len()
        )));
    }
    let n = sites.len() as f64;
    let center = sites.iter().map(|s| s.u).sum::<f64>() / n;
    let scale = (sites.iter().map(|s| (s.u - center).powi(2)).sum::<f64>() / n).sqrt();
    let basis = |l: f64| {
        let t = (l - center) / scale;
        [1.0, t, t * t]
    };
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for s in sites {
        let x = basis(s.u);
        for i in 0..3 {
            xty[i] += x[i] * s.value;
            for j in 0..3 {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let (b, inv) = solve3(xtx, xty)
        .ok_or_else(|| Error::Input("quadratic trend design is rank deficient".into()))?;
    let residuals: Vec<f64> = sites
        .iter()
        .map(|s| {
            let x = basis(s.u);
            s.value - (b[0] * x[0] + b[1] * x[1] + b[2] * x[2])
        })
        .collect();
    let dof = (sites.len() as f64 - 3.0).max(1.0);
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;

    // a = T b maps the scaled basis back to powers of l
    let (c, h) = (center, scale);
    let t = [
        [1.0, -c / h, c * c / (h * h)],
        [0.0, 1.0 / h, -2.0 * c / (h * h)],
        [0.0, 0.0, 1.0 / (h * h)],
    ];
    let mut coefficients = [0.0; 3];
    let mut std_errors = [0.0; 3];
    for i in 0..3 {
        coefficients[i] = (0..3).map(|k| t[i][k] * b[k]).sum();
        let var: f64 = (0..3)
            .flat_map(|k| (0..3).map(move |l| (k, l)))
            .map(|(k, l)| t[i][k] * inv[k][l] * t[i][l])
            .sum();
        std_errors[i] = (s2 * var).max(0.0).sqrt();
    }
    Ok(QuadraticTrend {
        coefficients,
        std_errors,
        residuals,
    })
}

/// What to do with an observation outside the bounding box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutsidePolicy {
    #[default]
    Drop,
    Error,
}

/// Pixel means and counts on a lattice; unobserved pixels hold 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriddedData {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub counts: Vec<u32>,
    /// Observations that fell outside the bounding box.
    pub dropped: usize,
}

impl GriddedData {
    /// Wraps an existing column-major array; pixels with count 0 are zeroed.
    pub fn new(grid: GridSpec, mut values: Vec<f64>, counts: Vec<u32>) -> Result<Self> {
        crate::error::check_len(grid.len(), values.len())?;
        crate::error::check_len(grid.len(), counts.len())?;
        for (v, &c) in values.iter_mut().zip(&counts) {
            if c == 0 {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Input("gridded values must be finite".into()));
            }
        }
        Ok(Self {
            grid,
            values,
            counts,
            dropped: 0,
        })
    }

    /// One observation per non-NaN pixel.
    pub fn from_surface(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let counts = values.iter().map(|v| u32::from(!v.is_nan())).collect();
        Self::new(grid, values, counts)
    }

    /// The values with unobserved pixels set to NaN.
    pub fn to_surface(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.counts)
            .map(|(&v, &c)| if c > 0 { v } else { f64::NAN })
            .collect()
    }

    pub fn observed(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed() as f64 / self.grid.len() as f64
    }
}

/// Averages observations into the pixels of an `rows x cols` lattice over `bbox`.
///
/// Row 0 is the northern edge and column 0 the western edge. Pixel intervals
/// include their north and west edges; the box's own south and east edges
/// belong to the last row and column.
pub fn bin_to_grid(
    sites: &[Site],
    bbox: BoundingBox,
    rows: usize,
    cols: usize,
    policy: OutsidePolicy,
) -> Result<GriddedData> {
    let grid = GridSpec::new(rows, cols)?.with_bbox(bbox);
    let (dlat, dlon) = grid.pixel_size().expect("bbox set");
    let mut sums = vec![0.0; grid.len()];
    let mut counts = vec![0u32; grid.len()];
    let mut dropped = 0;
    for s in sites {
        let inside = s.u <= bbox.north && s.u >= bbox.south && s.v >= bbox.west && s.v <= bbox.east;
        if !inside {
            match policy {
                OutsidePolicy::Drop => {
                    dropped += 1;
                    continue;
                }
                OutsidePolicy::Error => {
                    return Err(Error::Input(format!(
                        "observation at ({}, {}) lies outside the bounding box",
                        s.u, s.v
                    )));
                }
            }
        }
        let row = (((bbox.north - s.u) / dlat).floor() as usize).min(rows - 1);
        let col = (((s.v - bbox.west) / dlon).floor() as usize).min(cols - 1);
        let idx = grid.index(row, col);
        sums[idx] += s.value;
        counts[idx] += 1;
    }
    for (v, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            *v /= c as f64;
        }
    }
    Ok(GriddedData {
        grid,
        values: sums,
        counts,
        dropped,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes a column-major field as a row-major surface CSV. The first line is
/// a `#` comment with the grid metadata; NaN cells are written as `NA`.
pub fn write_surface_csv(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    crate::error::check_len(grid.len(), values.len())?;
    let mut out = create(path)?;
    let mut meta = format!("# rows={},cols={}", grid.rows(), grid.cols());
    if let Some(b) = grid.bbox() {
        meta.push_str(&format!(
            ",north={},south={},west={},east={}",
            b.north, b.south, b.west, b.east
        ));
    }
    meta.push('\n');
    let mut body = meta;
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            if c > 0 {
                body.push(',');
            }
            let v = values[grid.index(r, c)];
            if v.is_nan() {
                body.push_str("NA");
            } else {
                body.push_str(&format!("{v:.10}"));
            }
        }
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a surface CSV back into a grid and column-major values; `NA` cells
/// become NaN.
pub fn read_surface_csv(path: &Path) -> Result<(GridSpec, Vec<f64>)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| bad("missing metadata line".into()))?;
    let mut fields = std::collections::HashMap::new();
    for kv in meta.trim().split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| bad(format!("bad metadata entry {kv:?}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| bad(format!("bad metadata value {v:?}")))?;
        fields.insert(k.trim().to_owned(), v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| bad(format!("metadata lacks {k}")))
    };
    let (rows, cols) = (get("rows")? as usize, get("cols")? as usize);
    let mut grid = GridSpec::new(rows, cols)?;
    if fields.contains_key("north") {
        grid = grid.with_bbox(BoundingBox::new(
            get("north")?,
            get("south")?,
            get("west")?,
            get("east")?,
        )?);
    }
    let mut values = vec![0.0; rows * cols];
    let mut r = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        if r >= rows {
            return Err(bad("more rows than declared".into()));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(bad(format!(
                "row {r} has {} cells, expected {cols}",
                cells.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            values[grid.index(r, c)] = if cell == "NA" {
                f64::NAN
            } else {
                cell.parse()
                    .map_err(|_| bad(format!("bad number {cell:?}")))?
            };
        }
        r += 1;
    }
    if r != rows {
        return Err(bad(format!("found {r} rows, expected {rows}")));
    }
    Ok((grid, values))
}

/// One cell of a CSV table.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Real)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(x) => write!(f, "{x:.10}"),
            Cell::Text(s) => write!(f, "{s}"),
            Cell::Missing => write!(f, "NA"),
        }
    }
}

/// Writes a header and rows with reals at ten decimals and `NA` for missing.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut out = create(path)?;
    let mut body = header.join(",");
    body.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(Cell::to_string).collect();
        body.push_str(&line.join(","));
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        path
    }

    fn site(u: f64, v: f64, value: f64) -> Site {
        Site { u, v, value }
    }

    #[test]
    fn reads_comma_table_and_skips_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "a.csv",
            "Latitude,Longitude,Temperature\n10,150,20.5\n-5,160.25,22\n91,150,1\n0,nope,3\n1.5,359,4\n",
        );
        let t = read_site_csv(&path, &CsvOptions::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.malformed, 2);
        assert_eq!(t.sites[1], site(-5.0, 160.25, 22.0));
    }

    #[test]
    fn reads_whitespace_table_with_quoted_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "a.txt", "\"u\"  \"v\" \"value\"\n1 2 3\n\n4\t5   6\n");
        let opts = CsvOptions {
            delimiter: Delimiter::Whitespace,
            columns: ColumnMap::generic(),
            geographic: false,
        };
        let t = read_site_csv(&path, &opts).unwrap();
        assert_eq!(t.sites, vec![site(1.0, 2.0, 3.0), site(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn reader_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.csv");
        assert!(matches!(
            read_site_csv(&missing, &CsvOptions::default()),
            Err(Error::Io { .. })
        ));
        let path = write_file(&dir, "b.csv", "lat,lon,t\n1,2,3\n");
        assert!(matches!(
            read_site_csv(&path, &CsvOptions::default()),
            Err(Error::Format { .. })
        ));
        let path = write_file(&dir, "c.csv", "Latitude,Longitude,Temperature\n100,2,3\n");
        assert!(matches!(
            read_site_csv(&path, &CsvOptions::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn quadratic_trend_interpolates() {
        let t = fit_quadratic_trend(&[
            site(-1.0, 0.0, 1.0),
            site(0.0, 0.0, 0.0),
            site(1.0, 0.0, 1.0),
        ])
        .unwrap();
        for (a, b) in t.coefficients.iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(t.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn quadratic_trend_on_constant_data() {
        let sites: Vec<Site> = (0..10)
            .map(|i| site(i as f64 * 3.0 - 40.0, 0.0, 7.5))
            .collect();
        let t = fit_quadratic_trend(&sites).unwrap();
        assert!((t.coefficients[0] - 7.5).abs() < 1e-10);
        assert!(t.coefficients[1].abs() < 1e-10 && t.coefficients[2].abs() < 1e-10);
    }

    #[test]
    fn quadratic_trend_rejects_two_latitudes() {
        let sites = [
            site(0.0, 0.0, 1.0),
            site(1.0, 1.0, 2.0),
            site(1.0, 2.0, 3.0),
        ];
        assert!(matches!(fit_quadratic_trend(&sites), Err(Error::Input(_))));
    }

    #[test]
    fn binning_averages_and_counts() {
        let bbox = BoundingBox::new(2.0, 0.0, 0.0, 2.0).unwrap();
        let sites = [
            site(1.5, 0.5, 1.0),
            site(1.2, 0.9, 3.0),
            site(0.0, 2.0, 5.0),
            site(3.0, 1.0, 9.0),
        ];
        let g = bin_to_grid(&sites, bbox, 2, 2, OutsidePolicy::Drop).unwrap();
        assert_eq!(g.values[g.grid.index(0, 0)], 2.0);
        assert_eq!(g.counts[g.grid.index(0, 0)], 2);
        assert_eq!(g.counts[g.grid.index(1, 1)], 1);
        assert_eq!(g.dropped, 1);
        assert_eq!(g.observed(), 2);
        assert!(bin_to_grid(&sites, bbox, 2, 2, OutsidePolicy::Error).is_err());
    }

    #[test]
    fn north_and_west_edges_are_inclusive() {
        let bbox = BoundingBox::new(2.0, 0.0, 0.0, 2.0).unwrap();
        let g = bin_to_grid(&[site(1.0, 1.0, 4.0)], bbox, 2, 2, OutsidePolicy::Drop).unwrap();
        assert_eq!(g.counts[g.grid.index(1, 1)], 1);
    }

    #[test]
    fn argo_pixel_size() {
        let bbox = BoundingBox::new(21.0, -67.0, 20.0, 145.0).unwrap();
        let g = bin_to_grid(&[], bbox, 128, 180, OutsidePolicy::Drop).unwrap();
        let (dlat, dlon) = g.grid.pixel_size().unwrap();
        assert!((dlat - 0.6875).abs() < 1e-12);
        assert!((dlon - 125.0 / 180.0).abs() < 1e-12);
    }

    #[test]
    fn surface_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let bbox = BoundingBox::new(21.0, -67.0, 20.0, 145.0).unwrap();
        let grid = GridSpec::new(3, 4).unwrap().with_bbox(bbox);
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 100.0).collect();
        write_surface_csv(&path, &grid, &values).unwrap();
        let (g2, v2) = read_surface_csv(&path).unwrap();
        assert_eq!(g2, grid);
        for (a, b) in values.iter().zip(&v2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn partially_observed_surface_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let grid = GridSpec::new(2, 3).unwrap();
        let data = GriddedData::new(
            grid.clone(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![1, 0, 2, 1, 0, 1],
        )
        .unwrap();
        write_surface_csv(&path, &grid, &data.to_surface()).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("NA"));
        let (g2, v2) = read_surface_csv(&path).unwrap();
        let back = GriddedData::from_surface(g2, v2).unwrap();
        assert_eq!(back.observed(), 4);
        assert_eq!(back.values, vec![1.0, 0.0, 3.0, 4.0, 0.0, 6.0]);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no/such/dir/out.json");
        assert!(matches!(write_json(&path, &[1, 2]), Err(Error::Io { .. })));
    }

    #[test]
    fn table_cells_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table_csv(
            &path,
            &["h", "x", "s"],
            &[vec![3i64.into(), 0.5.into(), Cell::Missing]],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "h,x,s\n3,0.5000000000,NA\n"
        );
    }

    proptest! {
        #[test]
        fn binning_conserves_totals(points in prop::collection::vec((-10.0f64..10.0, -5.0f64..5.0, -3.0f64..3.0), 1..200)) {
            let bbox = BoundingBox::new(10.0, -10.0, -5.0, 5.0).unwrap();
            let sites: Vec<Site> = points.iter().map(|&(u, v, y)| site(u, v, y)).collect();
            let g = bin_to_grid(&sites, bbox, 7, 5, OutsidePolicy::Error).unwrap();
            let total: f64 = g.values.iter().zip(&g.counts).map(|(v, &c)| v * c as f64).sum();
            let want: f64 = sites.iter().map(|s| s.value).sum();
            prop_assert!((total - want).abs() <= 1e-9 * sites.iter().map(|s| s.value.abs()).sum::<f64>().max(1.0));
            prop_assert_eq!(g.counts.iter().map(|&c| c as usize).sum::<usize>(), sites.len());
        }

        #[test]
        fn trend_residuals_are_orthogonal(points in prop::collection::vec((-60.0f64..20.0, -3.0f64..30.0), 5..100), shift in -50.0f64..50.0) {
            let mut sites: Vec<Site> = points.iter().map(|&(u, y)| site(u, 0.0, y)).collect();
            prop_assume!({
                let mut l: Vec<f64> = sites.iter().map(|s| s.u).collect();
                l.sort_by(f64::total_cmp);
                l.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                l.len() >= 3
            });
            let t = fit_quadratic_trend(&sites).unwrap();
            let scale: f64 = sites.iter().map(|s| s.value.abs()).sum::<f64>().max(1.0);
            for p in 0..3 {
                let lmax = sites.iter().map(|s| s.u.abs().powi(p)).sum::<f64>().max(1.0);
                let dot: f64 = sites.iter().zip(&t.residuals).map(|(s, r)| s.u.powi(p) * r).sum();
                prop_assert!(dot.abs() <= 1e-8 * scale * lmax);
            }
            for s in &mut sites {
                s.value += shift;
            }
            let t2 = fit_quadratic_trend(&sites).unwrap();
            prop_assert!((t2.coefficients[0] - t.coefficients[0] - shift).abs() <= 1e-8 * (scale + shift.abs()));
            for (a, b) in t.residuals.iter().zip(&t2.residuals) {
                prop_assert!((a - b).abs() <= 1e-8 * (scale + shift.abs()));
            }
        }
    }
}
