use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cgp::{CgpParams, FittedCgp, NoiseSpec, NoisyCgp, VolatilityState};
use crate::error::{Error, Result};
use crate::kernels::JitterPolicy;
use crate::kriging::{Monomial, NuggetModel, OkModel, UkModel};
use crate::types::{Dataset, Prediction, StandardizationMap};

/// Archive layout version this build writes and reads.
pub const SCHEMA_VERSION: u64 = 1;

/// Any fitted model the library can archive and predict with.
pub enum AnyModel {
    Ok(OkModel),
    Uk(UkModel),
    Nugget(NuggetModel),
    Cgp(FittedCgp),
    CgpNoisy(NoisyCgp),
}

impl From<OkModel> for AnyModel {
    fn from(m: OkModel) -> Self {
        AnyModel::Ok(m)
    }
}

impl From<UkModel> for AnyModel {
    fn from(m: UkModel) -> Self {
        AnyModel::Uk(m)
    }
}

impl From<NuggetModel> for AnyModel {
    fn from(m: NuggetModel) -> Self {
        AnyModel::Nugget(m)
    }
}

impl From<FittedCgp> for AnyModel {
    fn from(m: FittedCgp) -> Self {
        AnyModel::Cgp(m)
    }
}

impl From<NoisyCgp> for AnyModel {
    fn from(m: NoisyCgp) -> Self {
        AnyModel::CgpNoisy(m)
    }
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Ok(_) => "ok",
            AnyModel::Uk(_) => "uk",
            AnyModel::Nugget(_) => "nugget",
            AnyModel::Cgp(_) => "cgp",
            AnyModel::CgpNoisy(_) => "cgp-noisy",
        }
    }

    pub fn data(&self) -> &Dataset {
        match self {
            AnyModel::Ok(m) => m.data(),
            AnyModel::Uk(m) => m.data(),
            AnyModel::Nugget(m) => m.data(),
            AnyModel::Cgp(m) => m.data(),
            AnyModel::CgpNoisy(m) => m.data(),
        }
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        match self {
            AnyModel::Ok(m) => m.predict_one(query),
            AnyModel::Uk(m) => m.predict_one(query),
            AnyModel::Nugget(m) => m.predict_one(query),
            AnyModel::Cgp(m) => m.predict_one(query),
            AnyModel::CgpNoisy(m) => m.predict_one(query),
        }
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        match self {
            AnyModel::Ok(m) => m.predict(queries),
            AnyModel::Uk(m) => m.predict(queries),
            AnyModel::Nugget(m) => m.predict(queries),
            AnyModel::Cgp(m) => m.predict(queries),
            AnyModel::CgpNoisy(m) => m.predict(queries),
        }
    }

    fn payload(&self) -> ModelPayload {
        match self {
            AnyModel::Ok(m) => ModelPayload::Ok {
                theta: m.theta().to_vec(),
                mu: m.mu_hat(),
                sigma2: m.sigma2_hat(),
            },
            AnyModel::Uk(m) => ModelPayload::Uk {
                theta: m.theta().to_vec(),
                basis: m.basis().to_vec(),
                beta: m.beta_hat().iter().copied().collect(),
                sigma2: m.sigma2_hat(),
            },
            AnyModel::Nugget(m) => ModelPayload::Nugget {
                theta: m.theta().to_vec(),
                nugget: m.nugget(),
                mu: m.mu_hat(),
                sigma2: m.sigma2_hat(),
            },
            AnyModel::Cgp(m) => ModelPayload::Cgp {
                params: m.params().clone(),
                volatility: m.volatility().clone(),
                degenerate_constant: m.is_degenerate_constant(),
            },
            AnyModel::CgpNoisy(m) => ModelPayload::CgpNoisy {
                params: m.params().clone(),
                volatility: m.volatility().clone(),
                noise: m.noise().clone(),
            },
        }
    }

    fn rebuild(payload: ModelPayload, data: Dataset) -> Result<AnyModel> {
        let model = match payload {
            ModelPayload::Ok { theta, .. } => AnyModel::Ok(OkModel::with_params(data, theta)?),
            ModelPayload::Uk {
                theta, basis, ..
            } => AnyModel::Uk(UkModel::with_params(data, basis, theta)?),
            ModelPayload::Nugget { theta, nugget, .. } => {
                AnyModel::Nugget(NuggetModel::with_params(data, theta, nugget)?)
            }
            ModelPayload::Cgp {
                params, volatility, ..
            } => AnyModel::Cgp(FittedCgp::with_volatility(
                data,
                params,
                volatility,
                JitterPolicy::Ladder,
            )?),
            ModelPayload::CgpNoisy {
                params,
                volatility,
                noise,
            } => {
                let base =
                    FittedCgp::with_volatility(data, params, volatility, JitterPolicy::Ladder)?;
                AnyModel::CgpNoisy(base.with_noise(noise.error_variances)?)
            }
        };
        Ok(model)
    }
}

/// Model-specific archive contents, tagged by model kind. Parameters are
/// the source of truth; factorized state is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ModelPayload {
    #[serde(rename = "ok")]
    Ok { theta: Vec<f64>, mu: f64, sigma2: f64 },
    #[serde(rename = "uk")]
    Uk {
        theta: Vec<f64>,
        basis: Vec<Monomial>,
        beta: Vec<f64>,
        sigma2: f64,
    },
    #[serde(rename = "nugget")]
    Nugget {
        theta: Vec<f64>,
        nugget: f64,
        mu: f64,
        sigma2: f64,
    },
    #[serde(rename = "cgp")]
    Cgp {
        params: CgpParams,
        volatility: VolatilityState,
        degenerate_constant: bool,
    },
    #[serde(rename = "cgp-noisy")]
    CgpNoisy {
        params: CgpParams,
        volatility: VolatilityState,
        noise: NoiseSpec,
    },
}

/// On-disk form of a fitted model: everything prediction needs, with no
/// reference back to the original input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelArchive {
    schema_version: u64,
    standardization: StandardizationMap,
    dataset: Dataset,
    #[serde(flatten)]
    model: ModelPayload,
}

/// A model restored from an archive, with the input-scaling map saved
/// alongside it.
pub struct LoadedModel {
    pub model: AnyModel,
    pub standardization: StandardizationMap,
}

/// Writes a model archive as a versioned JSON document. Numbers are printed
/// with the shortest representation that parses back to the identical
/// double, so a save/load cycle loses nothing.
pub fn save_model(
    model: &AnyModel,
    standardization: &StandardizationMap,
    path: impl AsRef<Path>,
) -> Result<()> {
    if standardization.p() != model.data().p() {
        return Err(Error::DimensionMismatch {
            what: "standardization map width vs design width",
            expected: model.data().p(),
            got: standardization.p(),
        });
    }
    let archive = ModelArchive {
        schema_version: SCHEMA_VERSION,
        standardization: standardization.clone(),
        dataset: model.data().clone(),
        model: model.payload(),
    };
    let mut text = serde_json::to_string_pretty(&archive)
        .map_err(|e| Error::parse(format!("model archive failed to serialize: {e}"), None))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn byte_offset_at(text: &str, line: usize, column: usize) -> Option<u64> {
    if line == 0 {
        return None;
    }
    let mut offset = 0usize;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return Some((offset + column.saturating_sub(1)) as u64);
        }
        offset += l.len() + 1;
    }
    None
}

/// Reads a model archive back and rebuilds the factorized state. The
/// restored model predicts bit-for-bit like the one that was saved.
pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let text = fs::read_to_string(&path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        detail: format!("model archive is not valid JSON: {e}"),
        byte_offset: byte_offset_at(&text, e.line(), e.column()),
    })?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| {
            Error::parse("model archive has no numeric `schema_version` field", None)
        })?;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    let archive: ModelArchive = serde_json::from_value(value)
        .map_err(|e| Error::parse(format!("model archive is malformed: {e}"), None))?;
    if archive.standardization.p() != archive.dataset.p() {
        return Err(Error::parse(
            format!(
                "standardization map covers {} columns but the dataset has {}",
                archive.standardization.p(),
                archive.dataset.p()
            ),
            None,
        ));
    }
    let model = AnyModel::rebuild(archive.model, archive.dataset)?;
    Ok(LoadedModel {
        model,
        standardization: archive.standardization,
    })
}

/// How to interpret a dataset CSV.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Whether the first row is a header to skip.
    pub has_header: bool,
    /// 1-based column holding the response; the last column when unset.
    pub response_column: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            response_column: None,
        }
    }
}

fn csv_position_offset(err: &csv::Error) -> Option<u64> {
    err.position().map(|p| p.byte())
}

fn read_numeric_rows(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
            }
            _ => Error::parse(e.to_string(), csv_position_offset(&e)),
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(e.to_string(), csv_position_offset(&e)))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let offset = record.position().map(|p| p.byte());
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    format!("line {line}, column {}: `{cell}` is not a number", j + 1),
                    offset,
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("line {line}, column {}: `{cell}` is not finite", j + 1),
                    offset,
                ));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a numeric CSV of inputs plus one response column, standardizing
/// the inputs to the unit cube and returning the map that did it.
pub fn read_dataset_csv(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<(Dataset, StandardizationMap)> {
    let rows = read_numeric_rows(path.as_ref(), opts.has_header)?;
    if rows.len() < 2 {
        return Err(Error::parse(
            format!("need at least two data rows, found {}", rows.len()),
            None,
        ));
    }
    let width = rows[0].len();
    if width < 2 {
        return Err(Error::parse(
            "need at least two columns: one input and the response",
            None,
        ));
    }
    let response = match opts.response_column {
        None => width,
        Some(c) if (1..=width).contains(&c) => c,
        Some(c) => {
            return Err(Error::parse(
                format!("response column {c} is out of range for {width} columns"),
                None,
            ))
        }
    };
    let input_cols: Vec<usize> = (0..width).filter(|j| *j != response - 1).collect();
    for &j in &input_cols {
        let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Err(Error::parse(
                format!("column {} has zero range; inputs cannot be standardized", j + 1),
                None,
            ));
        }
    }
    let x_raw: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| input_cols.iter().map(|&j| r[j]).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r[response - 1]).collect();
    let map = StandardizationMap::from_raw_rows(&x_raw)?;
    let unit: Vec<Vec<f64>> = x_raw
        .iter()
        .map(|r| map.to_unit(r))
        .collect::<Result<_>>()?;
    let data = Dataset::from_rows(&unit, &y)?;
    Ok((data, map))
}

/// Reads a numeric CSV of query points in raw coordinates.
pub fn read_points_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let rows = read_numeric_rows(path.as_ref(), has_header)?;
    if rows.is_empty() {
        return Err(Error::parse("query file has no data rows", None));
    }
    Ok(rows)
}

/// Writes a dataset as raw-coordinate CSV with an `x1..xp,y` header,
/// undoing the unit-cube standardization via the map.
pub fn write_dataset_csv(
    path: impl AsRef<Path>,
    data: &Dataset,
    map: &StandardizationMap,
) -> Result<()> {
    if map.p() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "standardization map width vs design width",
            expected: data.p(),
            got: map.p(),
        });
    }
    let mut text = String::new();
    for j in 0..data.p() {
        text.push_str(&format!("x{},", j + 1));
    }
    text.push_str("y\n");
    for i in 0..data.n() {
        let unit = data.point(i);
        let raw = map.to_raw(&unit)?;
        for v in &raw {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{}\n", data.y()[i]));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Formats points as CSV with an `x1..xp` header.
pub fn points_csv(points: &DMatrix<f64>) -> String {
    let mut text = String::new();
    let p = points.ncols();
    for j in 0..p {
        text.push_str(&format!("x{}", j + 1));
        text.push(if j + 1 == p { '\n' } else { ',' });
    }
    for i in 0..points.nrows() {
        for j in 0..p {
            text.push_str(&format!("{}", points[(i, j)]));
            text.push(if j + 1 == p { '\n' } else { ',' });
        }
    }
    text
}

/// Writes unit-cube design points as CSV with an `x1..xp` header.
pub fn write_points_csv(path: impl AsRef<Path>, points: &DMatrix<f64>) -> Result<()> {
    fs::write(path, points_csv(points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::design_stats;
    use crate::kriging::parse_basis;

    fn toy_data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![i as f64 / 6.0])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (6.0 * r[0]).sin() + 0.4 * r[0])
            .collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    fn grid() -> DMatrix<f64> {
        DMatrix::from_fn(33, 1, |i, _| i as f64 / 32.0)
    }

    fn assert_bitwise_equal_predictions(a: &[Prediction], b: &[Prediction]) {
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(b) {
            assert_eq!(p.mean.to_bits(), q.mean.to_bits());
            assert_eq!(p.global.to_bits(), q.global.to_bits());
            assert_eq!(p.local.to_bits(), q.local.to_bits());
            assert_eq!(p.sd.to_bits(), q.sd.to_bits());
            assert_eq!(p.v_at_query.to_bits(), q.v_at_query.to_bits());
        }
    }

    fn round_trip(model: AnyModel) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let map = StandardizationMap::identity(model.data().p());
        save_model(&model, &map, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.model.kind(), model.kind());
        let before = model.predict(&grid()).unwrap();
        let after = loaded.model.predict(&grid()).unwrap();
        assert_bitwise_equal_predictions(&before, &after);
    }

    #[test]
    fn ok_archives_round_trip_bitwise() {
        let m = OkModel::with_params(toy_data(), vec![8.0]).unwrap();
        round_trip(AnyModel::Ok(m));
    }

    #[test]
    fn uk_archives_round_trip_bitwise() {
        let basis = parse_basis("linear", 1).unwrap();
        let m = UkModel::with_params(toy_data(), basis, vec![8.0]).unwrap();
        round_trip(AnyModel::Uk(m));
    }

    #[test]
    fn nugget_archives_round_trip_bitwise() {
        let m = NuggetModel::with_params(toy_data(), vec![8.0], 1e-3).unwrap();
        round_trip(AnyModel::Nugget(m));
    }

    #[test]
    fn cgp_archives_round_trip_bitwise() {
        let data = toy_data();
        let alpha_lower = design_stats(data.x()).unwrap().alpha_lower;
        let params = CgpParams::new(0.35, vec![6.0], vec![2.0 * alpha_lower], 0.8);
        let m = FittedCgp::with_params(data, params, JitterPolicy::Ladder).unwrap();
        round_trip(AnyModel::Cgp(m));
    }

    #[test]
    fn noisy_cgp_archives_round_trip_bitwise() {
        let data = toy_data();
        let alpha_lower = design_stats(data.x()).unwrap().alpha_lower;
        let params = CgpParams::new(0.35, vec![6.0], vec![2.0 * alpha_lower], 0.8);
        let base = FittedCgp::with_params(data, params, JitterPolicy::Ladder).unwrap();
        let noisy = base.with_noise(vec![0.05; 7]).unwrap();
        round_trip(AnyModel::CgpNoisy(noisy));
    }

    #[test]
    fn degenerate_constant_fit_round_trips_its_flag() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let data = Dataset::from_rows(&rows, &[2.5; 5]).unwrap();
        let alpha_lower = design_stats(data.x()).unwrap().alpha_lower;
        let params = CgpParams::new(0.5, vec![4.0], vec![2.0 * alpha_lower], 0.5);
        let m = FittedCgp::with_params(data, params, JitterPolicy::Ladder).unwrap();
        assert!(m.is_degenerate_constant());
        assert_eq!(m.params().lambda, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&AnyModel::Cgp(m), &StandardizationMap::identity(1), &path).unwrap();
        let loaded = load_model(&path).unwrap();
        match &loaded.model {
            AnyModel::Cgp(c) => {
                assert!(c.is_degenerate_constant());
                let p = c.predict_one(&[0.3]).unwrap();
                assert_eq!(p.mean, 2.5);
            }
            other => panic!("expected a cgp archive, got {}", other.kind()),
        }
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = OkModel::with_params(toy_data(), vec![8.0]).unwrap();
        save_model(&AnyModel::Ok(m), &StandardizationMap::identity(1), &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&path, text).unwrap();
        match load_model(&path) {
            Err(Error::SchemaVersion { found, supported }) => {
                assert_eq!(found, 99);
                assert_eq!(supported, SCHEMA_VERSION);
            }
            Err(other) => panic!("expected a schema-version error, got {other}"),
            Ok(_) => panic!("expected a schema-version error, got a model"),
        }
    }

    #[test]
    fn corrupt_archive_reports_a_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, "{\n  \"schema_version\": 1,\n  oops\n}\n").unwrap();
        match load_model(&path) {
            Err(Error::Parse { byte_offset, .. }) => {
                assert!(byte_offset.is_some());
            }
            Err(other) => panic!("expected a parse error, got {other}"),
            Ok(_) => panic!("expected a parse error, got a model"),
        }
    }

    #[test]
    fn dataset_csv_standardizes_and_keeps_the_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::write(&path, "x,y\n10,1\n20,2\n30,3\n").unwrap();
        let (data, map) = read_dataset_csv(&path, &CsvOptions::default()).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.p(), 1);
        assert_eq!(data.x()[(0, 0)], 0.0);
        assert_eq!(data.x()[(1, 0)], 0.5);
        assert_eq!(data.x()[(2, 0)], 1.0);
        assert_eq!(data.y()[2], 3.0);
        let raw = map.to_raw(&[0.5]).unwrap();
        assert_eq!(raw[0], 20.0);
    }

    #[test]
    fn dataset_csv_respects_the_response_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::write(&path, "y,x\n1,10\n2,20\n3,30\n").unwrap();
        let opts = CsvOptions {
            response_column: Some(1),
            ..CsvOptions::default()
        };
        let (data, _) = read_dataset_csv(&path, &opts).unwrap();
        assert_eq!(data.y()[0], 1.0);
        assert_eq!(data.x()[(2, 0)], 1.0);
    }

    #[test]
    fn dataset_csv_rejects_zero_range_input_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::write(&path, "a,b,y\n5,1,1\n5,2,2\n5,3,3\n").unwrap();
        match read_dataset_csv(&path, &CsvOptions::default()) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("column 1")),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_csv_rejects_bad_cells_with_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        fs::write(&path, "x,y\n1,2\nfoo,3\n").unwrap();
        match read_dataset_csv(&path, &CsvOptions::default()) {
            Err(Error::Parse { detail, byte_offset }) => {
                assert!(detail.contains("foo"));
                assert_eq!(byte_offset, Some(8));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        fs::write(&path, "x,y\n1,2\n3,inf\n").unwrap();
        match read_dataset_csv(&path, &CsvOptions::default()) {
            Err(Error::Parse { detail, .. }) => assert!(detail.contains("not finite")),
            other => panic!("expected a parse error, got {other:?}"),
        }

        fs::write(&path, "x,y\n1,2\n3\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path, &CsvOptions::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn dataset_csv_write_read_is_exact() {
        let data = toy_data();
        let map = StandardizationMap::from_raw_rows(&[vec![-3.0], vec![11.5]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &data, &map).unwrap();
        let (back, back_map) = read_dataset_csv(&path, &CsvOptions::default()).unwrap();
        assert_eq!(back.n(), data.n());
        for i in 0..data.n() {
            assert_eq!(back.x()[(i, 0)].to_bits(), data.x()[(i, 0)].to_bits());
            assert_eq!(back.y()[i].to_bits(), data.y()[i].to_bits());
        }
        assert_eq!(
            back_map.to_raw(&[1.0]).unwrap()[0].to_bits(),
            map.to_raw(&[1.0]).unwrap()[0].to_bits()
        );
    }

    #[test]
    fn points_csv_round_trips_unit_designs() {
        let design = crate::design::random_lhd(9, 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        write_points_csv(&path, design.points()).unwrap();
        let rows = read_points_csv(&path, true).unwrap();
        assert_eq!(rows.len(), 9);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 2);
            for j in 0..2 {
                assert_eq!(row[j].to_bits(), design.points()[(i, j)].to_bits());
            }
        }
    }
}
