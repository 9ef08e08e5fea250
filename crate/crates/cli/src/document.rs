use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use ppi_core::linalg::ComplexMatrix;
use ppi_core::operators::{ModelSpec, SlotKind, TwistedTuple};
use serde::de::DeserializeOwned;
use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

pub const SCHEMA_VERSION: &str = "1";

/// Fixed float formatting: 17 significant digits in scientific notation,
/// negative zero folded into zero. Non-finite values become `null`.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    let x = if x == 0.0 { 0.0 } else { x };
    let s = format!("{x:.16e}");
    match s.split_once('e') {
        Some((mantissa, exp)) if !exp.starts_with('-') => format!("{mantissa}e+{exp}"),
        _ => s,
    }
}

/// A float that serializes through [`format_float`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawValue::from_string(format_float(self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

/// Row-major matrix of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct Matrix(pub Vec<Vec<[f64; 2]>>);

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[Num; 2]>> = self
            .0
            .iter()
            .map(|r| r.iter().map(|&[re, im]| [Num(re), Num(im)]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl Matrix {
    pub fn encode(m: &ComplexMatrix) -> Matrix {
        Matrix(
            (0..m.nrows())
                .map(|r| {
                    (0..m.ncols())
                        .map(|c| [m[(r, c)].re, m[(r, c)].im])
                        .collect()
                })
                .collect(),
        )
    }

    /// Decodes a `dim × dim` matrix; `field` names it in diagnostics.
    pub fn decode(&self, dim: usize, field: &str) -> Result<ComplexMatrix, SchemaError> {
        if self.0.len() != dim {
            return Err(SchemaError::field(
                field,
                format!("expected {dim} rows, got {}", self.0.len()),
            ));
        }
        for (r, row) in self.0.iter().enumerate() {
            if row.len() != dim {
                return Err(SchemaError::field(
                    format!("{field}[{r}]"),
                    format!("expected {dim} entries, got {}", row.len()),
                ));
            }
        }
        Ok(ComplexMatrix::from_fn(dim, dim, |r, c| {
            let [re, im] = self.0[r][c];
            Complex64::new(re, im)
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMatrix {
    pub name: String,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistEntry {
    pub i: usize,
    pub j: usize,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleDocument {
    pub schema_version: String,
    pub dim: usize,
    pub operators: Vec<NamedMatrix>,
    #[serde(default)]
    pub twists: Vec<TwistEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Where a document went wrong: a field path, and a position when the JSON
/// itself could not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub field: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl SchemaError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError {
            field: field.into(),
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = if self.field.is_empty() {
            "."
        } else {
            &self.field
        };
        write!(f, "{field}: {}", self.message)?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " (line {l}, column {c})")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // serde_json appends the position to its message; keep it structured instead.
        let message = match message.rfind(" at line ") {
            Some(k) => message[..k].to_string(),
            None => message,
        };
        SchemaError {
            field: if field == "." { String::new() } else { field },
            message,
            line: Some(inner.line()),
            column: Some(inner.column()),
        }
    })
}

fn check_version(v: &str) -> Result<(), SchemaError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(SchemaError::field(
            "schema_version",
            format!("unsupported version {v:?}, expected {SCHEMA_VERSION:?}"),
        ))
    }
}

fn decode_twists(
    twists: &[TwistEntry],
    n: usize,
    dim: usize,
) -> Result<BTreeMap<(usize, usize), ComplexMatrix>, SchemaError> {
    let mut out = BTreeMap::new();
    for (k, t) in twists.iter().enumerate() {
        let field = format!("twists[{k}]");
        if !(1 <= t.i && t.i < t.j && t.j <= n) {
            return Err(SchemaError::field(
                field,
                format!("pair ({},{}) needs 1 <= i < j <= {n}", t.i, t.j),
            ));
        }
        let m = t.matrix.decode(dim, &format!("{field}.matrix"))?;
        if out.insert((t.i, t.j), m).is_some() {
            return Err(SchemaError::field(
                field,
                format!("pair ({},{}) appears more than once", t.i, t.j),
            ));
        }
    }
    Ok(out)
}

impl TupleDocument {
    pub fn parse(text: &str) -> Result<TupleDocument, SchemaError> {
        let doc: TupleDocument = parse_json(text)?;
        doc.to_tuple()?;
        Ok(doc)
    }

    pub fn to_tuple(&self) -> Result<TwistedTuple, SchemaError> {
        check_version(&self.schema_version)?;
        if self.dim == 0 {
            return Err(SchemaError::field("dim", "must be at least 1"));
        }
        if self.operators.is_empty() {
            return Err(SchemaError::field(
                "operators",
                "at least one operator is required",
            ));
        }
        let mut names = BTreeSet::new();
        let mut ops = Vec::with_capacity(self.operators.len());
        for (k, op) in self.operators.iter().enumerate() {
            if op.name.is_empty() {
                return Err(SchemaError::field(
                    format!("operators[{k}].name"),
                    "empty name",
                ));
            }
            if !names.insert(op.name.as_str()) {
                return Err(SchemaError::field(
                    format!("operators[{k}].name"),
                    format!("duplicate name {:?}", op.name),
                ));
            }
            ops.push(
                op.matrix
                    .decode(self.dim, &format!("operators[{k}].matrix"))?,
            );
        }
        let twists = decode_twists(&self.twists, ops.len(), self.dim)?;
        TwistedTuple::new(self.dim, ops, twists)
            .map_err(|e| SchemaError::field("operators", e.to_string()))
    }

    /// Operators named `V1, V2, …`; only stored twists are written.
    pub fn from_tuple(t: &TwistedTuple, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        TupleDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            dim: t.dim(),
            operators: t
                .ops()
                .iter()
                .enumerate()
                .map(|(k, m)| NamedMatrix {
                    name: format!("V{}", k + 1),
                    matrix: Matrix::encode(m),
                })
                .collect(),
            twists: t
                .stored_twists()
                .iter()
                .map(|(&(i, j), m)| TwistEntry {
                    i,
                    j,
                    matrix: Matrix::encode(m),
                })
                .collect(),
            metadata,
        }
    }

    /// 1-based index of the operator called `name`.
    pub fn operator_index(&self, name: &str) -> Option<usize> {
        self.operators
            .iter()
            .position(|o| o.name == name)
            .map(|k| k + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotUnitaryEntry {
    pub slot: usize,
    pub matrix: Matrix,
}

/// A model description for `generate --spec`: slot kinds (`"u"` or a shift
/// size), the auxiliary dimension, twist data and unitary-slot matrices on
/// the auxiliary space.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub schema_version: String,
    pub slots: Vec<String>,
    pub aux_dim: usize,
    #[serde(default)]
    pub twists: Vec<TwistEntry>,
    #[serde(default)]
    pub slot_unitaries: Vec<SlotUnitaryEntry>,
}

impl SpecDocument {
    pub fn parse(text: &str) -> Result<SpecDocument, SchemaError> {
        parse_json(text)
    }

    /// Shapes and slot names only; relations are checked by the model builder.
    pub fn to_spec(&self) -> Result<ModelSpec, SchemaError> {
        check_version(&self.schema_version)?;
        if self.slots.is_empty() {
            return Err(SchemaError::field("slots", "at least one slot is required"));
        }
        if self.aux_dim == 0 {
            return Err(SchemaError::field("aux_dim", "must be at least 1"));
        }
        let slots = self
            .slots
            .iter()
            .enumerate()
            .map(|(k, s)| {
                SlotKind::parse(s).ok_or_else(|| {
                    SchemaError::field(format!("slots[{k}]"), format!("unknown slot kind {s:?}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let twist_data = decode_twists(&self.twists, slots.len(), self.aux_dim)?;
        let mut slot_unitaries = BTreeMap::new();
        for (k, e) in self.slot_unitaries.iter().enumerate() {
            let field = format!("slot_unitaries[{k}]");
            if e.slot == 0 || e.slot > slots.len() {
                return Err(SchemaError::field(
                    field,
                    format!("slot {} out of range 1..={}", e.slot, slots.len()),
                ));
            }
            let m = e.matrix.decode(self.aux_dim, &format!("{field}.matrix"))?;
            if slot_unitaries.insert(e.slot, m).is_some() {
                return Err(SchemaError::field(
                    field,
                    format!("slot {} given twice", e.slot),
                ));
            }
        }
        Ok(ModelSpec {
            slots,
            aux_dim: self.aux_dim,
            twist_data,
            slot_unitaries,
        })
    }
}
