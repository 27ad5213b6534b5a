//! Record filter expressions and local record stores.
//!
//! A query is a conjunction of typed comparisons over declared record
//! fields: `clause (AND clause)*` with operators `=`, `!=`, `<`, `<=`, `>`,
//! `>=`, and `contains`. String literals are double-quoted; ordering
//! operators apply only to numbers and `contains` only to strings.
//!
//! Station records are line-delimited JSON objects with a sidecar schema
//! (`<file>.schema.json`) declaring each field as `string` or `number`.
//! Records that violate the schema are loading errors, never silent skips.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("query parse error at offset {at}: {message}")]
    Parse { at: usize, message: String },
    #[error("operator `{op}` cannot apply to a {literal} literal")]
    OperatorType { op: CmpOp, literal: &'static str },
    #[error("query references undeclared field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` is declared {declared} but compared to a {literal} literal")]
    TypeMismatch {
        field: String,
        declared: FieldType,
        literal: &'static str,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("schema sidecar `{0}` is missing")]
    SchemaMissing(String),
    #[error("malformed schema: {0}")]
    SchemaParse(String),
    #[error("record on line {line} is not a JSON object")]
    MalformedRecord { line: usize },
    #[error("record on line {line} is missing declared field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("record on line {line}: field `{field}` is not a {expected}")]
    FieldType {
        line: usize,
        field: String,
        expected: FieldType,
    },
    #[error("record store holds {count} records, exceeding the {max}-record limit")]
    TooManyRecords { count: usize, max: usize },
    #[error("record field `{0}` is absent")]
    FieldAbsent(String),
}

// ---------------------------------------------------------------------------
// Schema

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Number,
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldType::String => "string",
            FieldType::Number => "number",
        })
    }
}

/// Declares the fields every record in a store must carry.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RecordSchema {
    pub fields: BTreeMap<String, FieldType>,
}

impl RecordSchema {
    pub fn field(&self, name: &str) -> Option<FieldType> {
        self.fields.get(name).copied()
    }
}

pub type Record = serde_json::Map<String, serde_json::Value>;

/// Validated, schema-typed records loaded from one station's data store.
#[derive(Clone, Debug)]
pub struct RecordSet {
    records: Vec<Record>,
    schema: RecordSchema,
}

impl RecordSet {
    /// Validate `records` against `schema`: every declared field must be
    /// present with its declared type. Undeclared extra fields are allowed.
    pub fn new(records: Vec<Record>, schema: RecordSchema) -> Result<Self, DataError> {
        for (i, record) in records.iter().enumerate() {
            validate_record(record, &schema, i + 1)?;
        }
        Ok(RecordSet { records, schema })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn schema(&self) -> &RecordSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn validate_record(record: &Record, schema: &RecordSchema, line: usize) -> Result<(), DataError> {
    for (field, &ty) in &schema.fields {
        let value = record.get(field).ok_or_else(|| DataError::MissingField {
            line,
            field: field.clone(),
        })?;
        let ok = match ty {
            FieldType::String => value.is_string(),
            FieldType::Number => value.is_number(),
        };
        if !ok {
            return Err(DataError::FieldType {
                line,
                field: field.clone(),
                expected: ty,
            });
        }
    }
    Ok(())
}

/// The sidecar schema path for a record file: `<file>.schema.json`.
pub fn schema_path(data_path: &Path) -> std::path::PathBuf {
    let mut name = data_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".schema.json");
    data_path.with_file_name(name)
}

/// Load line-delimited JSON records plus their sidecar schema, enforcing
/// the record cap and full schema validation. The store is only ever read.
pub fn load_records(data_path: &Path, max_records: usize) -> Result<RecordSet, DataError> {
    let io_err = |path: &Path, e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };

    let sidecar = schema_path(data_path);
    if !sidecar.exists() {
        return Err(DataError::SchemaMissing(sidecar.display().to_string()));
    }
    let schema_bytes = std::fs::read(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let schema: RecordSchema =
        serde_json::from_slice(&schema_bytes).map_err(|e| DataError::SchemaParse(e.to_string()))?;

    let text = std::fs::read_to_string(data_path).map_err(|e| io_err(data_path, e))?;
    let mut records = Vec::new();
    let mut count = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        if count > max_records {
            return Err(DataError::TooManyRecords {
                count: text.lines().filter(|l| !l.trim().is_empty()).count(),
                max: max_records,
            });
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|_| DataError::MalformedRecord { line: i + 1 })?;
        let serde_json::Value::Object(record) = value else {
            return Err(DataError::MalformedRecord { line: i + 1 });
        };
        validate_record(&record, &schema, i + 1)?;
        records.push(record);
    }
    Ok(RecordSet { records, schema })
}

// ---------------------------------------------------------------------------
// Filter expressions

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Contains => "contains",
        })
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum Literal {
    Str(String),
    Num(f64),
}

impl Literal {
    fn type_name(&self) -> &'static str {
        match self {
            Literal::Str(_) => "string",
            Literal::Num(_) => "number",
        }
    }

    fn field_type(&self) -> FieldType {
        match self {
            Literal::Str(_) => FieldType::String,
            Literal::Num(_) => FieldType::Number,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Clause {
    pub field: String,
    pub op: CmpOp,
    pub literal: Literal,
}

/// A conjunction of comparison clauses.
#[derive(Clone, PartialEq, Debug)]
pub struct FilterExpr {
    clauses: Vec<Clause>,
}

impl FilterExpr {
    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// Parse query text. Operator/literal compatibility is enforced here;
    /// field existence and typing are checked against a schema separately.
    pub fn parse(text: &str) -> Result<Self, QueryError> {
        let tokens = tokenize(text)?;
        let mut clauses = Vec::new();
        let mut at = 0usize;

        loop {
            let clause = parse_clause(&tokens, &mut at)?;
            check_operator_literal(&clause)?;
            clauses.push(clause);
            match tokens.get(at) {
                None => break,
                Some(tok) if matches!(&tok.kind, TokenKind::Ident(w) if w == "AND") => {
                    at += 1;
                }
                Some(tok) => {
                    return Err(QueryError::Parse {
                        at: tok.at,
                        message: "expected `AND` between clauses".into(),
                    })
                }
            }
        }
        Ok(FilterExpr { clauses })
    }

    /// Render back to parseable query text.
    pub fn to_text(&self) -> String {
        self.clauses
            .iter()
            .map(|c| {
                let lit = match &c.literal {
                    Literal::Str(s) => format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
                    Literal::Num(n) => format_number(*n),
                };
                format!("{} {} {}", c.field, c.op, lit)
            })
            .collect::<Vec<_>>()
            .join(" AND ")
    }

    /// Check every clause against a schema: fields must be declared and
    /// literal types must match the declared field types.
    pub fn validate(&self, schema: &RecordSchema) -> Result<(), QueryError> {
        for clause in &self.clauses {
            let declared = schema
                .field(&clause.field)
                .ok_or_else(|| QueryError::UnknownField(clause.field.clone()))?;
            if declared != clause.literal.field_type() {
                return Err(QueryError::TypeMismatch {
                    field: clause.field.clone(),
                    declared,
                    literal: clause.literal.type_name(),
                });
            }
        }
        Ok(())
    }

    /// Evaluate the conjunction over one record.
    pub fn matches(&self, record: &Record) -> Result<bool, DataError> {
        for clause in &self.clauses {
            let value = record
                .get(&clause.field)
                .ok_or_else(|| DataError::FieldAbsent(clause.field.clone()))?;
            let hit = match &clause.literal {
                Literal::Str(lit) => {
                    let Some(actual) = value.as_str() else {
                        return Err(DataError::FieldAbsent(clause.field.clone()));
                    };
                    match clause.op {
                        CmpOp::Eq => actual == lit,
                        CmpOp::Ne => actual != lit,
                        CmpOp::Contains => actual.contains(lit.as_str()),
                        _ => unreachable!("ordering operators are rejected for strings at parse"),
                    }
                }
                Literal::Num(lit) => {
                    let Some(actual) = value.as_f64() else {
                        return Err(DataError::FieldAbsent(clause.field.clone()));
                    };
                    match clause.op {
                        CmpOp::Eq => actual == *lit,
                        CmpOp::Ne => actual != *lit,
                        CmpOp::Lt => actual < *lit,
                        CmpOp::Le => actual <= *lit,
                        CmpOp::Gt => actual > *lit,
                        CmpOp::Ge => actual >= *lit,
                        CmpOp::Contains => {
                            unreachable!("contains is rejected for numbers at parse")
                        }
                    }
                }
            };
            if !hit {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn check_operator_literal(clause: &Clause) -> Result<(), QueryError> {
    let bad = matches!(
        (clause.op, &clause.literal),
        (CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge, Literal::Str(_))
            | (CmpOp::Contains, Literal::Num(_))
    );
    if bad {
        return Err(QueryError::OperatorType {
            op: clause.op,
            literal: clause.literal.type_name(),
        });
    }
    Ok(())
}

fn format_number(n: f64) -> String {
    if n == n.trunc() && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

// ---------------------------------------------------------------------------
// Tokenizer

#[derive(Debug, PartialEq)]
enum TokenKind {
    Ident(String),
    Op(CmpOp),
    Str(String),
    Num(f64),
}

#[derive(Debug)]
struct Token {
    kind: TokenKind,
    at: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, QueryError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;

    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let at = i;
        match c {
            '=' => {
                tokens.push(Token {
                    kind: TokenKind::Op(CmpOp::Eq),
                    at,
                });
                i += 1;
            }
            '!' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(Token {
                    kind: TokenKind::Op(CmpOp::Ne),
                    at,
                });
                i += 2;
            }
            '<' => {
                let (op, width) = if bytes.get(i + 1) == Some(&b'=') {
                    (CmpOp::Le, 2)
                } else {
                    (CmpOp::Lt, 1)
                };
                tokens.push(Token {
                    kind: TokenKind::Op(op),
                    at,
                });
                i += width;
            }
            '>' => {
                let (op, width) = if bytes.get(i + 1) == Some(&b'=') {
                    (CmpOp::Ge, 2)
                } else {
                    (CmpOp::Gt, 1)
                };
                tokens.push(Token {
                    kind: TokenKind::Op(op),
                    at,
                });
                i += width;
            }
            '"' => {
                let mut value = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => {
                            return Err(QueryError::Parse {
                                at,
                                message: "unterminated string literal".into(),
                            })
                        }
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(b'\\') => match bytes.get(i + 1) {
                            Some(b'"') => {
                                value.push('"');
                                i += 2;
                            }
                            Some(b'\\') => {
                                value.push('\\');
                                i += 2;
                            }
                            _ => {
                                return Err(QueryError::Parse {
                                    at: i,
                                    message: "unsupported escape sequence".into(),
                                })
                            }
                        },
                        Some(_) => {
                            // Multi-byte UTF-8 is carried through verbatim.
                            let ch_len = text[i..].chars().next().unwrap().len_utf8();
                            value.push_str(&text[i..i + ch_len]);
                            i += ch_len;
                        }
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Str(value),
                    at,
                });
            }
            c if c.is_ascii_digit() || c == '-' => {
                let start = i;
                i += 1;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let slice = &text[start..i];
                let value = slice.parse::<f64>().map_err(|_| QueryError::Parse {
                    at,
                    message: format!("malformed number `{slice}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Num(value),
                    at,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '*' || c == ':' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    at,
                });
            }
            other => {
                return Err(QueryError::Parse {
                    at,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    if tokens.is_empty() {
        return Err(QueryError::Parse {
            at: 0,
            message: "query must hold at least one clause".into(),
        });
    }
    Ok(tokens)
}

fn parse_clause(tokens: &[Token], at: &mut usize) -> Result<Clause, QueryError> {
    let field = match tokens.get(*at) {
        Some(Token {
            kind: TokenKind::Ident(name),
            ..
        }) if name != "AND" && name != "contains" => name.clone(),
        Some(tok) => {
            return Err(QueryError::Parse {
                at: tok.at,
                message: "expected a field name".into(),
            })
        }
        None => {
            return Err(QueryError::Parse {
                at: usize::MAX,
                message: "expected a field name at end of input".into(),
            })
        }
    };
    *at += 1;

    let op = match tokens.get(*at) {
        Some(Token {
            kind: TokenKind::Op(op),
            ..
        }) => *op,
        Some(Token {
            kind: TokenKind::Ident(word),
            ..
        }) if word == "contains" => CmpOp::Contains,
        Some(tok) => {
            return Err(QueryError::Parse {
                at: tok.at,
                message: "expected a comparison operator".into(),
            })
        }
        None => {
            return Err(QueryError::Parse {
                at: usize::MAX,
                message: "expected a comparison operator at end of input".into(),
            })
        }
    };
    *at += 1;

    let literal = match tokens.get(*at) {
        Some(Token {
            kind: TokenKind::Str(s),
            ..
        }) => Literal::Str(s.clone()),
        Some(Token {
            kind: TokenKind::Num(n),
            ..
        }) => Literal::Num(*n),
        Some(tok) => {
            return Err(QueryError::Parse {
                at: tok.at,
                message: "expected a string or number literal".into(),
            })
        }
        None => {
            return Err(QueryError::Parse {
                at: usize::MAX,
                message: "expected a literal at end of input".into(),
            })
        }
    };
    *at += 1;

    Ok(Clause { field, op, literal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> RecordSchema {
        RecordSchema {
            fields: BTreeMap::from([
                ("hla_allele".to_string(), FieldType::String),
                ("age".to_string(), FieldType::Number),
                ("site".to_string(), FieldType::String),
            ]),
        }
    }

    fn record(allele: &str, age: f64) -> Record {
        let value = serde_json::json!({
            "hla_allele": allele,
            "age": age,
            "site": "site-1",
        });
        match value {
            serde_json::Value::Object(map) => map,
            _ => unreachable!(),
        }
    }

    #[test]
    fn parses_single_and_conjoined_clauses() {
        let single = FilterExpr::parse("hla_allele = \"B*35:01\"").unwrap();
        assert_eq!(single.clauses().len(), 1);
        assert_eq!(single.clauses()[0].field, "hla_allele");
        assert_eq!(single.clauses()[0].op, CmpOp::Eq);

        let multi = FilterExpr::parse("age >= 18 AND age < 65 AND site != \"site-9\"").unwrap();
        assert_eq!(multi.clauses().len(), 3);
    }

    #[test]
    fn evaluates_every_operator() {
        let schema = schema();
        let r = record("B*35:01", 30.0);
        let cases = [
            ("hla_allele = \"B*35:01\"", true),
            ("hla_allele = \"A*01:01\"", false),
            ("hla_allele != \"A*01:01\"", true),
            ("hla_allele contains \"35\"", true),
            ("hla_allele contains \"99\"", false),
            ("age < 31", true),
            ("age < 30", false),
            ("age <= 30", true),
            ("age > 29", true),
            ("age > 30", false),
            ("age >= 30", true),
            ("age = 30", true),
            ("age != 30", false),
            ("age >= 18 AND hla_allele = \"B*35:01\"", true),
            ("age >= 18 AND hla_allele = \"X\"", false),
        ];
        for (text, expected) in cases {
            let expr = FilterExpr::parse(text).unwrap();
            expr.validate(&schema).unwrap();
            assert_eq!(expr.matches(&r).unwrap(), expected, "query: {text}");
        }
    }

    #[test]
    fn rejects_operator_literal_mismatches_at_parse() {
        assert!(matches!(
            FilterExpr::parse("age < \"x\""),
            Err(QueryError::OperatorType { op: CmpOp::Lt, .. })
        ));
        assert!(matches!(
            FilterExpr::parse("site contains 3"),
            Err(QueryError::OperatorType {
                op: CmpOp::Contains,
                ..
            })
        ));
    }

    #[test]
    fn rejects_malformed_queries_with_positions() {
        for text in [
            "",
            "age",
            "age >=",
            "age >= 18 hla_allele = \"x\"",
            "= 18",
            "age >= 18 AND",
            "site = \"unterminated",
            "site = \"bad\\escape\"",
            "age ? 3",
        ] {
            assert!(FilterExpr::parse(text).is_err(), "should reject: {text}");
        }
    }

    #[test]
    fn validates_fields_against_schema() {
        let schema = schema();
        let unknown = FilterExpr::parse("weight > 50").unwrap();
        assert!(matches!(
            unknown.validate(&schema),
            Err(QueryError::UnknownField(f)) if f == "weight"
        ));

        let mismatch = FilterExpr::parse("age = \"thirty\"").unwrap();
        assert!(matches!(
            mismatch.validate(&schema),
            Err(QueryError::TypeMismatch { .. })
        ));
        let mismatch = FilterExpr::parse("site = 3").unwrap();
        assert!(matches!(
            mismatch.validate(&schema),
            Err(QueryError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn round_trips_through_text() {
        for text in [
            "hla_allele = \"B*35:01\"",
            "age >= 18 AND age < 65",
            "site contains \"quo\\\"te\" AND age != 4.5",
        ] {
            let expr = FilterExpr::parse(text).unwrap();
            let rendered = expr.to_text();
            assert_eq!(FilterExpr::parse(&rendered).unwrap(), expr);
        }
    }

    #[test]
    fn loads_records_with_sidecar_schema() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("records.ndjson");
        std::fs::write(
            &data,
            concat!(
                "{\"hla_allele\":\"B*35:01\",\"age\":30,\"site\":\"s\"}\n",
                "\n",
                "{\"hla_allele\":\"A*01:01\",\"age\":41,\"site\":\"s\"}\n",
            ),
        )
        .unwrap();
        std::fs::write(
            schema_path(&data),
            serde_json::to_vec(&schema()).unwrap(),
        )
        .unwrap();

        let set = load_records(&data, 100).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.schema(), &schema());
    }

    #[test]
    fn loading_enforces_schema_cap_and_wellformedness() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("records.ndjson");
        let schema_bytes = serde_json::to_vec(&schema()).unwrap();

        // Missing sidecar.
        std::fs::write(&data, "{}\n").unwrap();
        assert!(matches!(
            load_records(&data, 10),
            Err(DataError::SchemaMissing(_))
        ));
        std::fs::write(schema_path(&data), &schema_bytes).unwrap();

        // Missing declared field.
        std::fs::write(&data, "{\"hla_allele\":\"x\",\"age\":1}\n").unwrap();
        assert!(matches!(
            load_records(&data, 10),
            Err(DataError::MissingField { line: 1, field }) if field == "site"
        ));

        // Wrong type.
        std::fs::write(
            &data,
            "{\"hla_allele\":\"x\",\"age\":\"old\",\"site\":\"s\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_records(&data, 10),
            Err(DataError::FieldType { field, .. }) if field == "age"
        ));

        // Malformed JSON line, with its line number.
        std::fs::write(
            &data,
            "{\"hla_allele\":\"x\",\"age\":1,\"site\":\"s\"}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(
            load_records(&data, 10),
            Err(DataError::MalformedRecord { line: 2 })
        ));

        // Record cap.
        let line = "{\"hla_allele\":\"x\",\"age\":1,\"site\":\"s\"}\n";
        std::fs::write(&data, line.repeat(5)).unwrap();
        assert!(matches!(
            load_records(&data, 4),
            Err(DataError::TooManyRecords { count: 5, max: 4 })
        ));
        assert!(load_records(&data, 5).is_ok());
    }

    #[test]
    fn field_names_may_carry_dots_and_identifier_characters() {
        let expr = FilterExpr::parse("labs.hba1c >= 6.5").unwrap();
        assert_eq!(expr.clauses()[0].field, "labs.hba1c");
        assert_eq!(expr.clauses()[0].literal, Literal::Num(6.5));
    }
}
