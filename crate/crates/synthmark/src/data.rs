//! Typed tabular data: schema, CSV loading, and the numeric encoding used
//! by the tree builder.
//!
//! Every column is representable as a real number. Continuous columns pass
//! through, datetimes map to seconds since the Unix epoch, and categorical
//! values get integer codes in first-appearance order (deterministic, so
//! repeated loads of the same file produce identical codes).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("column `{0}` missing from input")]
    MissingColumn(String),
    #[error("duplicate header column `{0}`")]
    DuplicateHeader(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as {kind}")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
        kind: &'static str,
    },
    #[error("matrix has {got} columns, schema expects {expected}")]
    ColumnCountMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Datetime,
    EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Domain {
    Range { min: f64, max: f64 },
    Values(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

impl ColumnSchema {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind,
            domain: None,
        }
    }
}

/// Validated list of column schemas: unique names, at most one entity-id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSchema>", into = "Vec<ColumnSchema>")]
pub struct Schema {
    columns: Vec<ColumnSchema>,
}

impl TryFrom<Vec<ColumnSchema>> for Schema {
    type Error = DataError;
    fn try_from(columns: Vec<ColumnSchema>) -> Result<Self, DataError> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSchema> {
    fn from(s: Schema) -> Vec<ColumnSchema> {
        s.columns
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        let mut entity_ids = 0;
        for c in &columns {
            if !seen.insert(c.name.clone()) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
            if c.kind == ColumnKind::EntityId {
                entity_ids += 1;
            }
            if let Some(Domain::Values(vs)) = &c.domain {
                if vs.is_empty() {
                    return Err(DataError::Schema(format!(
                        "empty categorical domain for `{}`",
                        c.name
                    )));
                }
                let uniq: HashSet<&String> = vs.iter().collect();
                if uniq.len() != vs.len() {
                    return Err(DataError::Schema(format!(
                        "duplicate domain value in `{}`",
                        c.name
                    )));
                }
            }
        }
        if entity_ids > 1 {
            return Err(DataError::Schema("more than one entity_id column".into()));
        }
        Ok(Schema { columns })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let cols: Vec<ColumnSchema> = serde_json::from_str(&text)
            .map_err(|e| DataError::Schema(format!("schema json: {e}")))?;
        Schema::new(cols)
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn entity_id_column(&self) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.kind == ColumnKind::EntityId)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Names of all non-entity columns, in schema order.
    pub fn data_column_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind != ColumnKind::EntityId)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn project(&self, names: &[String]) -> Result<Schema, DataError> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let c = self
                .column(n)
                .ok_or_else(|| DataError::MissingColumn(n.clone()))?;
            cols.push(c.clone());
        }
        Schema::new(cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            Cell::Real(_) => None,
        }
    }
}

/// Per-column bijection between categorical values and integer codes.
/// Codes are 0..k-1 in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatCoding {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl CatCoding {
    pub fn code_of(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    pub fn value_of(&self, code: usize) -> Option<&str> {
        self.values.get(code).map(|s| s.as_str())
    }

    pub fn intern(&mut self, value: &str) -> usize {
        if let Some(&c) = self.index.get(value) {
            return c;
        }
        let c = self.values.len();
        self.values.push(value.to_string());
        self.index.insert(value.to_string(), c);
        c
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnEncoding {
    categorical: BTreeMap<String, CatCoding>,
}

impl ColumnEncoding {
    pub fn coding(&self, column: &str) -> Option<&CatCoding> {
        self.categorical.get(column)
    }

    pub fn coding_mut(&mut self, column: &str) -> &mut CatCoding {
        self.categorical.entry(column.to_string()).or_default()
    }
}

/// An immutable table with typed columns and the encoding built at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Vec<Cell>>,
    encoding: ColumnEncoding,
}

fn parse_datetime(s: &str) -> Option<f64> {
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
    }
    None
}

pub fn format_datetime(epoch: f64) -> String {
    let secs = epoch.round() as i64;
    match chrono::DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.format("%Y-%m-%d %H:%M:%S").to_string(),
        None => format!("{epoch}"),
    }
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>) -> Result<Self, DataError> {
        let mut ds = Dataset {
            schema,
            rows: Vec::new(),
            encoding: ColumnEncoding::default(),
        };
        for (i, row) in rows.into_iter().enumerate() {
            ds.push_row(i, row)?;
        }
        Ok(ds)
    }

    fn push_row(&mut self, row_idx: usize, row: Vec<Cell>) -> Result<(), DataError> {
        if row.len() != self.schema.columns().len() {
            return Err(DataError::ColumnCountMismatch {
                got: row.len(),
                expected: self.schema.columns().len(),
            });
        }
        for (cell, col) in row.iter().zip(self.schema.columns()) {
            match (col.kind, cell) {
                (ColumnKind::Continuous | ColumnKind::Datetime, Cell::Real(v))
                    if v.is_finite() => {}
                (ColumnKind::Categorical | ColumnKind::EntityId, Cell::Text(s)) => {
                    if col.kind == ColumnKind::Categorical {
                        self.encoding.coding_mut(&col.name).intern(s);
                    }
                }
                _ => {
                    return Err(DataError::ParseCell {
                        row: row_idx,
                        column: col.name.clone(),
                        value: format!("{cell:?}"),
                        kind: kind_name(col.kind),
                    });
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Loads a CSV, reordering columns to schema order and building a fresh
    /// encoding for categorical columns.
    pub fn load_csv(path: &Path, schema: &Schema) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut seen = HashSet::new();
        for h in headers.iter() {
            if !seen.insert(h.to_string()) {
                return Err(DataError::DuplicateHeader(h.to_string()));
            }
        }
        let mut col_pos = Vec::with_capacity(schema.columns().len());
        for c in schema.columns() {
            let pos = headers
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| DataError::MissingColumn(c.name.clone()))?;
            col_pos.push(pos);
        }

        let mut ds = Dataset {
            schema: schema.clone(),
            rows: Vec::new(),
            encoding: ColumnEncoding::default(),
        };
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(schema.columns().len());
            for (c, &pos) in schema.columns().iter().zip(&col_pos) {
                let raw = record.get(pos).unwrap_or("");
                let cell = match c.kind {
                    ColumnKind::Continuous => {
                        let v: f64 = raw.trim().parse().map_err(|_| DataError::ParseCell {
                            row: row_idx,
                            column: c.name.clone(),
                            value: raw.to_string(),
                            kind: "continuous",
                        })?;
                        if !v.is_finite() {
                            return Err(DataError::ParseCell {
                                row: row_idx,
                                column: c.name.clone(),
                                value: raw.to_string(),
                                kind: "continuous",
                            });
                        }
                        Cell::Real(v)
                    }
                    ColumnKind::Datetime => {
                        let v = parse_datetime(raw.trim()).ok_or_else(|| DataError::ParseCell {
                            row: row_idx,
                            column: c.name.clone(),
                            value: raw.to_string(),
                            kind: "datetime",
                        })?;
                        Cell::Real(v)
                    }
                    ColumnKind::Categorical | ColumnKind::EntityId => Cell::Text(raw.to_string()),
                };
                row.push(cell);
            }
            ds.push_row(row_idx, row)?;
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.names())?;
        for row in &self.rows {
            let rec: Vec<String> = row
                .iter()
                .zip(self.schema.columns())
                .map(|(cell, col)| match (cell, col.kind) {
                    (Cell::Real(v), ColumnKind::Datetime) => format_datetime(*v),
                    (Cell::Real(v), _) => format!("{v}"),
                    (Cell::Text(s), _) => s.clone(),
                })
                .collect();
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn encoding(&self) -> &ColumnEncoding {
        &self.encoding
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Cell> {
        let idx = self.schema.index_of(column)?;
        self.rows.get(row).map(|r| &r[idx])
    }

    /// Restrict to a column subset, keeping row order.
    pub fn project(&self, names: &[String]) -> Result<Dataset, DataError> {
        let schema = self.schema.project(names)?;
        let idxs: Vec<usize> = names
            .iter()
            .map(|n| self.schema.index_of(n).unwrap())
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| idxs.iter().map(|&i| r[i].clone()).collect())
            .collect();
        Dataset::new(schema, rows)
    }

    /// Numeric view of all non-entity columns, plus a row-to-entity map.
    /// Without an entity-id column each row is its own entity.
    pub fn encode_numeric(&self) -> EncodedTable {
        let data_cols: Vec<(usize, &ColumnSchema)> = self
            .schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind != ColumnKind::EntityId)
            .collect();
        let columns: Vec<String> = data_cols.iter().map(|(_, c)| c.name.clone()).collect();
        let kinds: Vec<ColumnKind> = data_cols.iter().map(|(_, c)| c.kind).collect();

        let mut entity_coding = CatCoding::default();
        let entity_idx = self
            .schema
            .columns()
            .iter()
            .position(|c| c.kind == ColumnKind::EntityId);

        let mut rows = Vec::with_capacity(self.rows.len());
        let mut entities = Vec::with_capacity(self.rows.len());
        for (ri, row) in self.rows.iter().enumerate() {
            let mut out = Vec::with_capacity(data_cols.len());
            for (ci, col) in &data_cols {
                let v = match (&row[*ci], col.kind) {
                    (Cell::Real(v), _) => *v,
                    (Cell::Text(s), ColumnKind::Categorical) => {
                        self.encoding.coding(&col.name).and_then(|c| c.code_of(s)).unwrap_or(0)
                            as f64
                    }
                    (Cell::Text(_), _) => unreachable!("validated at construction"),
                };
                out.push(v);
            }
            rows.push(out);
            let entity = match entity_idx {
                Some(ei) => match &row[ei] {
                    Cell::Text(s) => entity_coding.intern(s),
                    Cell::Real(v) => entity_coding.intern(&format!("{v}")),
                },
                None => ri,
            };
            entities.push(entity);
        }
        EncodedTable {
            columns,
            kinds,
            rows,
            entities,
        }
    }

    /// Inverse of `encode_numeric` for non-entity columns. Categorical cells
    /// round to the nearest valid code; out-of-range codes clamp (counted in
    /// the returned warnings).
    pub fn decode_rows(
        matrix: &[Vec<f64>],
        enc: &ColumnEncoding,
        schema: &Schema,
    ) -> Result<(Dataset, usize), DataError> {
        let cols: Vec<&ColumnSchema> = schema
            .columns()
            .iter()
            .filter(|c| c.kind != ColumnKind::EntityId)
            .collect();
        let out_schema = Schema::new(cols.iter().map(|&c| c.clone()).collect())?;
        let mut warnings = 0usize;
        let mut rows = Vec::with_capacity(matrix.len());
        for r in matrix {
            if r.len() != cols.len() {
                return Err(DataError::ColumnCountMismatch {
                    got: r.len(),
                    expected: cols.len(),
                });
            }
            let mut row = Vec::with_capacity(cols.len());
            for (v, col) in r.iter().zip(&cols) {
                let cell = match col.kind {
                    ColumnKind::Categorical => {
                        let coding = enc.coding(&col.name).ok_or_else(|| {
                            DataError::MissingColumn(format!("encoding for {}", col.name))
                        })?;
                        let k = coding.len() as i64;
                        let mut code = v.round_ties_even() as i64;
                        if code < 0 || code >= k {
                            warnings += 1;
                            code = code.clamp(0, k - 1);
                        }
                        Cell::Text(coding.value_of(code as usize).unwrap_or("").to_string())
                    }
                    _ => Cell::Real(*v),
                };
                row.push(cell);
            }
            rows.push(row);
        }
        let ds = Dataset::new(out_schema, rows)?;
        Ok((ds, warnings))
    }
}

fn kind_name(k: ColumnKind) -> &'static str {
    match k {
        ColumnKind::Continuous => "continuous",
        ColumnKind::Categorical => "categorical",
        ColumnKind::Datetime => "datetime",
        ColumnKind::EntityId => "entity_id",
    }
}

/// Row-major real matrix over the non-entity columns of a dataset.
#[derive(Debug, Clone)]
pub struct EncodedTable {
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<f64>>,
    /// Row index -> entity index.
    pub entities: Vec<usize>,
}

impl EncodedTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column_values(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn ab_schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("b", ColumnKind::Categorical),
        ])
        .unwrap()
    }

    #[test]
    fn load_csv_basic() {
        let f = write_temp("a,b\n1.5,x\n2.5,y\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        assert_eq!(ds.row_count(), 2);
        let coding = ds.encoding().coding("b").unwrap();
        assert_eq!(coding.code_of("x"), Some(0));
        assert_eq!(coding.code_of("y"), Some(1));
    }

    #[test]
    fn load_csv_header_only() {
        let f = write_temp("a,b\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        assert_eq!(ds.row_count(), 0);
    }

    #[test]
    fn load_csv_reorders_columns() {
        let f = write_temp("b,a\nx,1.0\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        assert_eq!(ds.cell(0, "a"), Some(&Cell::Real(1.0)));
    }

    #[test]
    fn load_csv_bad_continuous_names_cell() {
        let f = write_temp("a,b\nabc,x\n");
        let err = Dataset::load_csv(f.path(), &ab_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 0") && msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn load_csv_missing_column() {
        let f = write_temp("a,c\n1.0,x\n");
        let err = Dataset::load_csv(f.path(), &ab_schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "b"));
    }

    #[test]
    fn load_csv_duplicate_header() {
        let f = write_temp("a,a\n1.0,2.0\n");
        let err = Dataset::load_csv(f.path(), &ab_schema()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateHeader(_)));
    }

    #[test]
    fn schema_rejects_two_entity_ids() {
        let err = Schema::new(vec![
            ColumnSchema::new("e1", ColumnKind::EntityId),
            ColumnSchema::new("e2", ColumnKind::EntityId),
        ])
        .unwrap_err();
        assert!(matches!(err, DataError::Schema(_)));
    }

    #[test]
    fn encode_first_appearance_codes() {
        let f = write_temp("a,b\n1.0,x\n2.0,y\n3.0,x\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        let enc = ds.encode_numeric();
        let b = enc.column_values("b").unwrap();
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
        let a = enc.column_values("a").unwrap();
        assert_eq!(a, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn encode_excludes_entity_id() {
        let schema = Schema::new(vec![
            ColumnSchema::new("id", ColumnKind::EntityId),
            ColumnSchema::new("a", ColumnKind::Continuous),
        ])
        .unwrap();
        let f = write_temp("id,a\nu1,1.0\nu1,2.0\nu2,3.0\n");
        let ds = Dataset::load_csv(f.path(), &schema).unwrap();
        let enc = ds.encode_numeric();
        assert_eq!(enc.columns, vec!["a"]);
        assert_eq!(enc.entities, vec![0, 0, 1]);
    }

    #[test]
    fn decode_rounds_and_clamps() {
        let f = write_temp("a,b\n1.0,p\n2.0,q\n3.0,r\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        let (dec, warnings) = Dataset::decode_rows(
            &[vec![1.0, 0.4], vec![2.0, 7.0]],
            ds.encoding(),
            ds.schema(),
        )
        .unwrap();
        assert_eq!(dec.cell(0, "b"), Some(&Cell::Text("p".into())));
        assert_eq!(dec.cell(1, "b"), Some(&Cell::Text("r".into())));
        assert_eq!(warnings, 1);
    }

    #[test]
    fn round_trip_encode_decode() {
        let f = write_temp("a,b\n1.5,x\n-2.0,y\n0.25,x\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        let enc = ds.encode_numeric();
        let (dec, warnings) = Dataset::decode_rows(&enc.rows, ds.encoding(), ds.schema()).unwrap();
        assert_eq!(warnings, 0);
        assert_eq!(dec.rows(), ds.rows());
    }

    #[test]
    fn datetime_maps_to_epoch() {
        let schema = Schema::new(vec![ColumnSchema::new("t", ColumnKind::Datetime)]).unwrap();
        let f = write_temp("t\n1970-01-01 00:01:00\n");
        let ds = Dataset::load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.cell(0, "t"), Some(&Cell::Real(60.0)));
        assert_eq!(format_datetime(60.0), "1970-01-01 00:01:00");
    }

    #[test]
    fn projection_commutes_with_encoding() {
        let f = write_temp("a,b\n1.0,x\n2.0,y\n3.0,x\n");
        let ds = Dataset::load_csv(f.path(), &ab_schema()).unwrap();
        let cols = vec!["b".to_string()];
        let projected = ds.project(&cols).unwrap().encode_numeric();
        let full = ds.encode_numeric();
        assert_eq!(projected.column_values("b"), full.column_values("b"));
    }
}
