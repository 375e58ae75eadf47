//! Persistence: snapshot and covariance CSVs, versioned JSON documents for
//! fitted objects and analyses.
//!
//! Every file starts with a provenance comment (`# podvar <version>
//! config=<sha256> seed=<seed>`). Floats are written with 17 significant
//! digits in CSV and in shortest round-trip form in JSON, so loading returns
//! bit-identical values.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assimilate::{AnalysisResult, SolverKind, TraceEntry};
use crate::pce::{InputTransform, MultiIndex, PceModel};
use crate::pod::{PodBasis, SnapshotMatrix};
use crate::surrogate::{CovarianceKind, ErrorCovariance, PodEnSurrogate, PodPceSurrogate};
use crate::{Error, Result, VERSION};

pub const SCHEMA_VERSION: u32 = 1;

/// Run identification written at the top of every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            tool: "podvar".into(),
            version: VERSION.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn comment(&self) -> String {
        provenance_line(&self.config_hash, self.seed)
    }
}

pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# podvar {VERSION} config={config_hash} seed={seed}")
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn parse_num(s: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite { row, col });
    }
    Ok(v)
}

/// Labelled matrix: the first header cell names the label column, the other
/// header cells name the columns.
fn write_labelled<W: Write>(
    mut out: W,
    comment: &str,
    corner: &str,
    col_labels: &[String],
    row_labels: &[String],
    data: &DMatrix<f64>,
) -> Result<()> {
    writeln!(out, "{comment}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![corner.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(data.row(i).iter().map(|&v| num(v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

struct Labelled {
    comments: Vec<String>,
    col_labels: Vec<String>,
    row_labels: Vec<String>,
    data: DMatrix<f64>,
}

fn read_labelled<R: Read>(input: R) -> Result<Labelled> {
    let mut reader = BufReader::new(input);
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    while reader.read_line(&mut line)? > 0 {
        if body.is_empty() && line.starts_with('#') {
            comments.push(line.trim_end().to_string());
        } else {
            body.push_str(&line);
        }
        line.clear();
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("table needs a label column and at least one data column".into()));
    }
    let col_labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "row {i} has {} fields, expected {}",
                rec.len(),
                header.len()
            )));
        }
        row_labels.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            values.push(parse_num(field, i, j)?);
        }
    }
    if row_labels.is_empty() {
        return Err(Error::Parse("table has no data rows".into()));
    }
    let data = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &values);
    Ok(Labelled {
        comments,
        col_labels,
        row_labels,
        data,
    })
}

/// Snapshot CSV: header `row,<member ids>`, then one line per state component.
pub fn write_snapshots<W: Write>(out: W, snapshots: &SnapshotMatrix, provenance: &Provenance) -> Result<()> {
    write_labelled(
        out,
        &provenance.comment(),
        "row",
        snapshots.member_ids(),
        snapshots.row_labels(),
        snapshots.data(),
    )
}

pub fn read_snapshots<R: Read>(input: R) -> Result<SnapshotMatrix> {
    let t = read_labelled(input)?;
    SnapshotMatrix::with_labels(t.data, t.row_labels, t.col_labels)
}

/// A single state in snapshot layout (one member column), e.g. an
/// observation.
pub fn write_state<W: Write>(
    out: W,
    row_labels: &[String],
    y: &DVector<f64>,
    provenance: &Provenance,
) -> Result<()> {
    if row_labels.len() != y.len() {
        return Err(Error::dim(format!("{} labels for {} values", row_labels.len(), y.len())));
    }
    let m = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    write_labelled(out, &provenance.comment(), "row", &["value".to_string()], row_labels, &m)
}

/// Reads a table with exactly one data column.
pub fn read_state<R: Read>(input: R) -> Result<(Vec<String>, DVector<f64>)> {
    let t = read_labelled(input)?;
    if t.data.ncols() != 1 {
        return Err(Error::Parse(format!(
            "expected a single data column, found {}",
            t.data.ncols()
        )));
    }
    Ok((t.row_labels, t.data.column(0).into_owned()))
}

/// Parameter sample CSV: header `member,<parameter names>`, one line per
/// member.
pub fn write_parameters<W: Write>(
    out: W,
    names: &[String],
    samples: &DMatrix<f64>,
    provenance: &Provenance,
) -> Result<()> {
    if names.len() != samples.ncols() {
        return Err(Error::dim(format!("{} names for {} parameters", names.len(), samples.ncols())));
    }
    let ids = member_ids(samples.nrows());
    write_labelled(out, &provenance.comment(), "member", names, &ids, samples)
}

/// Returns parameter names and the `n × m` sample matrix.
pub fn read_parameters<R: Read>(input: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = read_labelled(input)?;
    Ok((t.col_labels, t.data))
}

pub fn member_ids(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("m{j:04}")).collect()
}

/// Covariance CSV; the provenance line carries `kind=<covariance kind>`.
pub fn write_covariance<W: Write>(
    out: W,
    cov: &ErrorCovariance,
    labels: &[String],
    provenance: &Provenance,
) -> Result<()> {
    if labels.len() != cov.matrix.nrows() {
        return Err(Error::dim(format!(
            "{} labels for a {}-dimensional covariance",
            labels.len(),
            cov.matrix.nrows()
        )));
    }
    let comment = format!("{} kind={}", provenance.comment(), cov.kind.name());
    write_labelled(out, &comment, "row", labels, labels, &cov.matrix)
}

pub fn read_covariance<R: Read>(input: R) -> Result<(CovarianceKind, DMatrix<f64>)> {
    let t = read_labelled(input)?;
    let kind = t
        .comments
        .iter()
        .flat_map(|c| c.split_whitespace())
        .find_map(|w| w.strip_prefix("kind="))
        .ok_or_else(|| Error::Parse("covariance file has no kind tag".into()))?
        .parse::<CovarianceKind>()?;
    if t.data.nrows() != t.data.ncols() {
        return Err(Error::Parse("covariance table is not square".into()));
    }
    Ok((kind, t.data))
}

/// Seed recorded in the provenance comment of a CSV, if any.
pub fn read_provenance_seed(text: &str) -> Option<u64> {
    text.lines()
        .next()?
        .split_whitespace()
        .find_map(|w| w.strip_prefix("seed="))?
        .parse()
        .ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDto {
    nrows: usize,
    ncols: usize,
    /// Column-major.
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDto {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixDto {
            nrows: m.nrows(),
            ncols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }
}

impl MatrixDto {
    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.nrows * self.ncols {
            return Err(Error::Parse(format!(
                "matrix of shape {}×{} has {} values",
                self.nrows,
                self.ncols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_vec(self.nrows, self.ncols, self.data))
    }
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// A value that can be stored as a versioned JSON document.
pub trait Persist: Sized {
    const KIND: &'static str;
    type Dto: Serialize + DeserializeOwned;
    fn to_dto(&self) -> Self::Dto;
    fn from_dto(dto: Self::Dto) -> Result<Self>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodBasisDto {
    mean: Vec<f64>,
    modes: MatrixDto,
    singular_values: Vec<f64>,
    coefficients: MatrixDto,
    retained: usize,
}

impl Persist for PodBasis {
    const KIND: &'static str = "pod_basis";
    type Dto = PodBasisDto;

    fn to_dto(&self) -> PodBasisDto {
        PodBasisDto {
            mean: vector(self.mean()),
            modes: self.modes().into(),
            singular_values: vector(self.singular_values()),
            coefficients: self.coefficients().into(),
            retained: self.retained(),
        }
    }

    fn from_dto(d: PodBasisDto) -> Result<Self> {
        PodBasis::from_parts(
            DVector::from_vec(d.mean),
            d.modes.into_matrix()?,
            DVector::from_vec(d.singular_values),
            d.coefficients.into_matrix()?,
            d.retained,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PceModelDto {
    transforms: Vec<InputTransform>,
    max_degree: usize,
    indices: Vec<MultiIndex>,
    coefficients: MatrixDto,
    empirical_errors: Vec<f64>,
    validation_bias: Vec<f64>,
    degrees: Vec<usize>,
    loo_errors: Vec<f64>,
}

impl Persist for PceModel {
    const KIND: &'static str = "pce_model";
    type Dto = PceModelDto;

    fn to_dto(&self) -> PceModelDto {
        PceModelDto {
            transforms: self.transforms().to_vec(),
            max_degree: self.max_degree(),
            indices: self.indices().to_vec(),
            coefficients: self.coefficients().into(),
            empirical_errors: vector(self.empirical_errors()),
            validation_bias: vector(self.validation_bias()),
            degrees: self.degrees().to_vec(),
            loo_errors: vector(self.loo_errors()),
        }
    }

    fn from_dto(d: PceModelDto) -> Result<Self> {
        PceModel::from_stored(
            d.transforms,
            d.max_degree,
            d.indices,
            d.coefficients.into_matrix()?,
            DVector::from_vec(d.empirical_errors),
            DVector::from_vec(d.validation_bias),
            d.degrees,
            DVector::from_vec(d.loo_errors),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodPceDto {
    basis: PodBasisDto,
    pce: PceModelDto,
}

impl Persist for PodPceSurrogate {
    const KIND: &'static str = "podpce_surrogate";
    type Dto = PodPceDto;

    fn to_dto(&self) -> PodPceDto {
        PodPceDto {
            basis: self.basis().to_dto(),
            pce: self.pce().to_dto(),
        }
    }

    fn from_dto(d: PodPceDto) -> Result<Self> {
        PodPceSurrogate::from_parts(PodBasis::from_dto(d.basis)?, PceModel::from_dto(d.pce)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodEnDto {
    basis: PodBasisDto,
    param_dim: usize,
}

impl Persist for PodEnSurrogate {
    const KIND: &'static str = "poden_surrogate";
    type Dto = PodEnDto;

    fn to_dto(&self) -> PodEnDto {
        PodEnDto {
            basis: self.basis().to_dto(),
            param_dim: self.param_dim(),
        }
    }

    fn from_dto(d: PodEnDto) -> Result<Self> {
        PodEnSurrogate::from_basis(PodBasis::from_dto(d.basis)?, d.param_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisDto {
    solver: SolverKind,
    x_a: Vec<f64>,
    y_a: Vec<f64>,
    nu_a: Option<Vec<f64>>,
    cost: f64,
    cost_trace: Vec<TraceEntry>,
    iterations: usize,
    model_evaluations: usize,
    surrogate_evaluations: usize,
    converged: bool,
    reason: String,
}

impl Persist for AnalysisResult {
    const KIND: &'static str = "analysis";
    type Dto = AnalysisDto;

    fn to_dto(&self) -> AnalysisDto {
        AnalysisDto {
            solver: self.solver,
            x_a: vector(&self.x_a),
            y_a: vector(&self.y_a),
            nu_a: self.nu_a.as_ref().map(vector),
            cost: self.cost,
            cost_trace: self.cost_trace.clone(),
            iterations: self.iterations,
            model_evaluations: self.model_evaluations,
            surrogate_evaluations: self.surrogate_evaluations,
            converged: self.converged,
            reason: self.reason.clone(),
        }
    }

    fn from_dto(d: AnalysisDto) -> Result<Self> {
        Ok(AnalysisResult {
            solver: d.solver,
            x_a: DVector::from_vec(d.x_a),
            y_a: DVector::from_vec(d.y_a),
            nu_a: d.nu_a.map(DVector::from_vec),
            cost: d.cost,
            cost_trace: d.cost_trace,
            iterations: d.iterations,
            model_evaluations: d.model_evaluations,
            surrogate_evaluations: d.surrogate_evaluations,
            converged: d.converged,
            reason: d.reason,
        })
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    #[serde(rename = "_provenance")]
    provenance: &'a Provenance,
    data: T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn<T> {
    #[allow(dead_code)]
    schema_version: u32,
    #[allow(dead_code)]
    kind: String,
    #[serde(rename = "_provenance")]
    provenance: Provenance,
    data: T,
}

/// Checks the `schema_version` and `kind` fields of a JSON document.
pub fn check_header(doc: &Value, kind: &str, expected: u32) -> Result<()> {
    let found_kind = doc.get("kind").and_then(Value::as_str).unwrap_or("");
    if found_kind != kind {
        return Err(Error::Parse(format!("document kind is '{found_kind}', expected '{kind}'")));
    }
    let found = doc
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse("document has no schema_version".into()))?;
    if found != expected as u64 {
        return Err(Error::SchemaVersion {
            kind: kind.to_string(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected,
        });
    }
    Ok(())
}

pub fn to_json<T: Persist>(value: &T, provenance: &Provenance) -> Result<String> {
    let doc = EnvelopeOut {
        schema_version: SCHEMA_VERSION,
        kind: T::KIND,
        provenance,
        data: value.to_dto(),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn from_json<T: Persist>(text: &str) -> Result<(T, Provenance)> {
    let doc: Value = serde_json::from_str(text)?;
    check_header(&doc, T::KIND, SCHEMA_VERSION)?;
    let env: EnvelopeIn<T::Dto> = serde_json::from_value(doc)?;
    Ok((T::from_dto(env.data)?, env.provenance))
}

pub fn save_json<T: Persist>(path: &Path, value: &T, provenance: &Provenance) -> Result<()> {
    fs::write(path, to_json(value, provenance)?)?;
    Ok(())
}

pub fn load_json<T: Persist>(path: &Path) -> Result<(T, Provenance)> {
    from_json(&fs::read_to_string(path)?)
}
