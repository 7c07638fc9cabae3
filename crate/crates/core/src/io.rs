//! CSV and JSON file formats.
//!
//! * grid: `x,z,nx,nz,measure`, or `x,z,y_coord,nx,nz,ny,measure` in 3D
//! * field: `cell_index,value`, `NaN` marks a missing value
//! * operator: one column per QoI, one row per cell
//! * scenario bundle: a directory of the above plus `manifest.json`
//! * snapshot bank: a directory of field files plus `manifest.json`
//!
//! Floats are written in their shortest round-trip form, so reading a file
//! back gives the exact same values. Every write goes to a temporary file
//! first and is renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cpod::SnapshotSet;
use crate::error::{FuseError, Result};
use crate::geometry::{impute_missing, OutputOperator, Point, Reference, SurfaceGrid, Topology};
use crate::prior::{Fidelity, FlightCondition};
use crate::synth::{Provenance, ScenarioBundle, ScenarioSpec};

pub const MANIFEST: &str = "manifest.json";

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| FuseError::arg(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| FuseError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FuseError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FuseError::io(dir, e))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| FuseError::numerical(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| FuseError::numerical(format!("csv encoding failed: {e}")))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => FuseError::io(path, io),
            other => FuseError::parse(path, format!("{other:?}")),
        })?;
    let header = r
        .headers()
        .map_err(|e| FuseError::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| FuseError::parse(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| FuseError::parse(path, format!("row {}: `{s}` is not a number", row + 1)))
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn write_grid_csv(path: &Path, grid: &SurfaceGrid) -> Result<()> {
    let three_d = grid.is_three_d();
    let header: Vec<String> = if three_d {
        ["x", "z", "y_coord", "nx", "nz", "ny", "measure"]
    } else {
        ["x", "z", "nx", "nz", "measure", "", ""]
    }
    .iter()
    .filter(|s| !s.is_empty())
    .map(|s| s.to_string())
    .collect();
    let rows = (0..grid.len()).map(|i| {
        let c = grid.centers()[i];
        let n = grid.normals()[i];
        let m = grid.measures()[i];
        if three_d {
            vec![f(c.x), f(c.z), f(c.y), f(n.x), f(n.z), f(n.y), f(m)]
        } else {
            vec![f(c.x), f(c.z), f(n.x), f(n.z), f(m)]
        }
    });
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Reads a grid file. The file carries cell data only; topology and
/// reference quantities come from the caller.
pub fn read_grid_csv(path: &Path, topology: Topology, reference: Reference) -> Result<SurfaceGrid> {
    let (header, rows) = read_csv(path)?;
    let cols: Vec<&str> = header.iter().map(String::as_str).collect();
    let three_d = match cols.as_slice() {
        ["x", "z", "nx", "nz", "measure"] => false,
        ["x", "z", "y_coord", "nx", "nz", "ny", "measure"] => true,
        _ => {
            return Err(FuseError::parse(
                path,
                format!("unexpected grid header `{}`", header.join(",")),
            ))
        }
    };
    let mut centers = Vec::with_capacity(rows.len());
    let mut normals = Vec::with_capacity(rows.len());
    let mut measures = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let v: Vec<f64> = row.iter().map(|s| parse_f64(path, i, s)).collect::<Result<_>>()?;
        if v.len() != cols.len() {
            return Err(FuseError::parse(path, format!("row {} has {} fields", i + 1, v.len())));
        }
        if three_d {
            centers.push(Point::new(v[0], v[2], v[1]));
            normals.push(Point::new(v[3], v[5], v[4]));
            measures.push(v[6]);
        } else {
            centers.push(Point::new(v[0], 0.0, v[1]));
            normals.push(Point::new(v[2], 0.0, v[3]));
            measures.push(v[4]);
        }
    }
    SurfaceGrid::from_cells(centers, normals, measures, topology, reference)
}

pub fn write_field_csv(path: &Path, values: &[Option<f64>]) -> Result<()> {
    let header = vec!["cell_index".to_string(), "value".to_string()];
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), f(v.unwrap_or(f64::NAN))]);
    atomic_write(path, &csv_bytes(&header, rows)?)
}

pub fn write_dense_field_csv(path: &Path, values: &DVector<f64>) -> Result<()> {
    let v: Vec<Option<f64>> = values.iter().map(|&x| Some(x)).collect();
    write_field_csv(path, &v)
}

/// Reads a field file; `NaN` entries come back as `None`.
pub fn read_field_csv(path: &Path) -> Result<Vec<Option<f64>>> {
    let (header, rows) = read_csv(path)?;
    if header != ["cell_index", "value"] {
        return Err(FuseError::parse(
            path,
            format!("unexpected field header `{}`", header.join(",")),
        ));
    }
    let mut out = vec![None; rows.len()];
    let mut seen = vec![false; rows.len()];
    for (i, row) in rows.iter().enumerate() {
        let idx: usize = row[0]
            .parse()
            .map_err(|_| FuseError::parse(path, format!("row {}: bad cell index `{}`", i + 1, row[0])))?;
        if idx >= rows.len() || seen[idx] {
            return Err(FuseError::parse(
                path,
                format!("row {}: cell index {idx} out of range or repeated", i + 1),
            ));
        }
        seen[idx] = true;
        let v = parse_f64(path, i, &row[1])?;
        out[idx] = if v.is_nan() { None } else { Some(v) };
    }
    Ok(out)
}

/// Reads a field that must be complete.
pub fn read_dense_field_csv(path: &Path) -> Result<DVector<f64>> {
    let v = read_field_csv(path)?;
    if let Some(i) = v.iter().position(Option::is_none) {
        return Err(FuseError::Data(format!("{}: cell {i} is missing", path.display())));
    }
    Ok(DVector::from_iterator(v.len(), v.into_iter().flatten()))
}

pub fn write_operator_csv(path: &Path, op: &OutputOperator) -> Result<()> {
    let header: Vec<String> = op.names().to_vec();
    let h = op.matrix();
    let rows = (0..h.nrows()).map(|i| (0..h.ncols()).map(|j| f(h[(i, j)])).collect());
    atomic_write(path, &csv_bytes(&header, rows)?)
}

pub fn read_operator_csv(path: &Path, alpha: f64) -> Result<OutputOperator> {
    let (header, rows) = read_csv(path)?;
    let m = header.len();
    let mut data = Vec::with_capacity(rows.len() * m);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(FuseError::parse(
                path,
                format!("row {} has {} fields", i + 1, row.len()),
            ));
        }
        for s in row {
            data.push(parse_f64(path, i, s)?);
        }
    }
    let h = DMatrix::from_row_slice(rows.len(), m, &data);
    OutputOperator::from_matrix(h, header, alpha)
}

/// `cell_index` followed by one named column per vector.
pub fn write_columns_csv(path: &Path, names: &[&str], columns: &[&DVector<f64>]) -> Result<()> {
    let mut header = vec!["cell_index".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    let n = columns.first().map_or(0, |c| c.len());
    let rows = (0..n).map(|i| {
        let mut row = vec![i.to_string()];
        row.extend(columns.iter().map(|c| f(c[i])));
        row
    });
    atomic_write(path, &csv_bytes(&header, rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| FuseError::numerical(format!("json encoding failed: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FuseError::parse(path, e))
}

/// Reads a scenario spec, TOML or JSON by extension.
pub fn read_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
    let spec = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ScenarioSpec::from_json(&text),
        _ => ScenarioSpec::from_toml(&text),
    }
    .map_err(|e| FuseError::parse(path, e))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleFiles {
    pub grid: String,
    pub operator: String,
    pub mu_cfd: String,
    pub mu_wt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_true: Option<String>,
}

impl Default for BundleFiles {
    fn default() -> Self {
        BundleFiles {
            grid: "grid.csv".into(),
            operator: "operator.csv".into(),
            mu_cfd: "mu_cfd.csv".into(),
            mu_wt: "mu_wt.csv".into(),
            y_true: Some("y_true.csv".into()),
        }
    }
}

/// `manifest.json` of a scenario bundle. Only `files`, `condition`,
/// `topology`, `reference` and `z_measured` are needed to fuse; the rest
/// records how a synthetic bundle was made.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub files: BundleFiles,
    pub condition: FlightCondition,
    pub topology: Topology,
    pub reference: Reference,
    pub qoi_names: Vec<String>,
    pub z_measured: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_noiseless: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub fn write_bundle(dir: &Path, b: &ScenarioBundle) -> Result<()> {
    create_dir(dir)?;
    let files = BundleFiles::default();
    write_grid_csv(&dir.join(&files.grid), &b.grid)?;
    write_operator_csv(&dir.join(&files.operator), &b.operator)?;
    write_dense_field_csv(&dir.join(&files.mu_cfd), &b.mu_cfd)?;
    write_field_csv(&dir.join(&files.mu_wt), &b.mu_wt)?;
    if let Some(y) = &files.y_true {
        write_dense_field_csv(&dir.join(y), &b.y_true)?;
    }
    let manifest = BundleManifest {
        files,
        condition: b.spec.condition,
        topology: b.grid.topology(),
        reference: b.grid.reference(),
        qoi_names: b.operator.names().to_vec(),
        z_measured: b.z_measured.iter().copied().collect(),
        z_noiseless: Some(b.z_noiseless.iter().copied().collect()),
        offset: Some(b.operator.offset().iter().copied().collect()),
        spec: Some(b.spec.clone()),
        provenance: Some(b.provenance.clone()),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

/// A bundle read back from disk, ready to fuse.
#[derive(Clone, Debug)]
pub struct LoadedBundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub grid: SurfaceGrid,
    pub operator: OutputOperator,
    pub mu_cfd: DVector<f64>,
    pub mu_wt: Vec<Option<f64>>,
    /// `mu_wt` with gaps imputed.
    pub mu_wt_filled: DVector<f64>,
    pub y_true: Option<DVector<f64>>,
    pub z_measured: DVector<f64>,
}

pub fn read_bundle(dir: &Path) -> Result<LoadedBundle> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: BundleManifest = read_json(&manifest_path)?;
    let files = &manifest.files;
    let grid = read_grid_csv(&dir.join(&files.grid), manifest.topology, manifest.reference)?;
    let mut operator = read_operator_csv(&dir.join(&files.operator), manifest.condition.alpha_rad())?;
    if let Some(off) = &manifest.offset {
        operator = operator.with_offset(DVector::from_vec(off.clone()))?;
    }
    if operator.cells() != grid.len() {
        return Err(FuseError::parse(
            &manifest_path,
            format!(
                "operator has {} rows but the grid has {} cells",
                operator.cells(),
                grid.len()
            ),
        ));
    }
    let mu_cfd = read_dense_field_csv(&dir.join(&files.mu_cfd))?;
    let mu_wt = read_field_csv(&dir.join(&files.mu_wt))?;
    for (name, len) in [("mu_cfd", mu_cfd.len()), ("mu_wt", mu_wt.len())] {
        if len != grid.len() {
            return Err(FuseError::Data(format!(
                "{name} has {len} cells, grid has {}",
                grid.len()
            )));
        }
    }
    let mu_wt_filled = DVector::from_vec(impute_missing(&mu_wt, &grid)?);
    let y_true = match &files.y_true {
        Some(p) if dir.join(p).exists() => Some(read_dense_field_csv(&dir.join(p))?),
        _ => None,
    };
    let z_measured = DVector::from_vec(manifest.z_measured.clone());
    if z_measured.len() != operator.qois() {
        return Err(FuseError::parse(
            &manifest_path,
            format!(
                "{} measured QoIs for {} operator columns",
                z_measured.len(),
                operator.qois()
            ),
        ));
    }
    Ok(LoadedBundle {
        dir: dir.to_path_buf(),
        manifest,
        grid,
        operator,
        mu_cfd,
        mu_wt,
        mu_wt_filled,
        y_true,
        z_measured,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankEntry {
    pub file: String,
    pub condition: FlightCondition,
    pub fidelity: Fidelity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankManifest {
    pub snapshots: Vec<BankEntry>,
}

pub fn write_bank(dir: &Path, bank: &SnapshotSet) -> Result<()> {
    create_dir(dir)?;
    let mut snapshots = Vec::with_capacity(bank.len());
    for j in 0..bank.len() {
        let file = format!("snapshot_{j:03}.csv");
        write_dense_field_csv(&dir.join(&file), &bank.matrix().column(j).into_owned())?;
        snapshots.push(BankEntry {
            file,
            condition: bank.conditions()[j],
            fidelity: bank.fidelities()[j],
        });
    }
    write_json(&dir.join(MANIFEST), &BankManifest { snapshots })
}

/// Reads a snapshot bank; gaps in measurement snapshots are imputed on `grid`.
pub fn read_bank(dir: &Path, grid: &SurfaceGrid) -> Result<SnapshotSet> {
    let manifest: BankManifest = read_json(&dir.join(MANIFEST))?;
    let mut columns = Vec::with_capacity(manifest.snapshots.len());
    for e in &manifest.snapshots {
        let path = dir.join(&e.file);
        let v = read_field_csv(&path)?;
        if v.len() != grid.len() {
            return Err(FuseError::Data(format!(
                "{}: {} cells, grid has {}",
                path.display(),
                v.len(),
                grid.len()
            )));
        }
        columns.push(DVector::from_vec(impute_missing(&v, grid)?));
    }
    if columns.is_empty() {
        return Err(FuseError::Data(format!("{}: empty snapshot bank", dir.display())));
    }
    SnapshotSet::new(
        DMatrix::from_columns(&columns),
        manifest.snapshots.iter().map(|e| e.condition).collect(),
        manifest.snapshots.iter().map(|e| e.fidelity).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scenario, ScenarioSpec};

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_scenario(&ScenarioSpec::default()).unwrap();
        write_bundle(dir.path(), &b).unwrap();
        let l = read_bundle(dir.path()).unwrap();
        assert_eq!(l.mu_cfd, b.mu_cfd);
        assert_eq!(l.mu_wt, b.mu_wt);
        assert_eq!(l.mu_wt_filled, b.mu_wt_filled);
        assert_eq!(l.y_true.as_ref(), Some(&b.y_true));
        assert_eq!(l.operator.matrix(), b.operator.matrix());
        assert_eq!(l.grid.centers(), b.grid.centers());
        assert_eq!(l.z_measured, b.z_measured);
    }

    #[test]
    fn three_d_grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = crate::synth::GridSpec::wing();
        spec.cells = 16;
        spec.span_stations = 3;
        let g = spec.build().unwrap();
        let p = dir.path().join("g.csv");
        write_grid_csv(&p, &g).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,z,y_coord,nx,nz,ny,measure\n"));
        let back = read_grid_csv(&p, g.topology(), g.reference()).unwrap();
        assert_eq!(back.centers(), g.centers());
        assert!(back.is_three_d());
    }

    #[test]
    fn missing_values_are_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &[Some(1.5), None, Some(-0.1)]).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "cell_index,value\n0,1.5\n1,NaN\n2,-0.1\n"
        );
        assert_eq!(read_field_csv(&p).unwrap(), vec![Some(1.5), None, Some(-0.1)]);
        assert!(matches!(read_dense_field_csv(&p), Err(FuseError::Data(_))));
    }

    #[test]
    fn bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let missing = read_field_csv(&dir.path().join("nope.csv")).unwrap_err();
        assert!(matches!(missing, FuseError::Io { .. }), "{missing:?}");
        let p = dir.path().join("bad.csv");
        fs::write(&p, "cell_index,value\n0,abc\n").unwrap();
        assert!(matches!(read_field_csv(&p), Err(FuseError::Parse { .. })));
        fs::write(&p, "a,b\n0,1\n").unwrap();
        assert!(matches!(read_field_csv(&p), Err(FuseError::Parse { .. })));
    }
}
