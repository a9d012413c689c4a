//! SPARQL 1.1 query results JSON parsing and value canonicalization.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use super::{AnswerSet, QueryForm, Row};

const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

const NUMERIC_TYPES: &[&str] = &[
    "integer",
    "decimal",
    "double",
    "float",
    "int",
    "long",
    "short",
    "byte",
    "nonNegativeInteger",
    "positiveInteger",
    "negativeInteger",
    "nonPositiveInteger",
    "unsignedLong",
    "unsignedInt",
    "unsignedShort",
    "unsignedByte",
];

const DATE_TYPES: &[&str] = &["date", "dateTime", "dateTimeStamp"];

/// An RDF term as it appears in a results binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RdfTerm {
    #[serde(rename = "type")]
    pub kind: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datatype: Option<String>,
    #[serde(default, rename = "xml:lang", skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

impl RdfTerm {
    pub fn uri(value: impl Into<String>) -> Self {
        Self {
            kind: "uri".into(),
            value: value.into(),
            datatype: None,
            lang: None,
        }
    }

    pub fn typed(value: impl Into<String>, xsd_type: &str) -> Self {
        Self {
            kind: "literal".into(),
            value: value.into(),
            datatype: Some(format!("{XSD}{xsd_type}")),
            lang: None,
        }
    }

    fn xsd_local_name(&self) -> Option<&str> {
        self.datatype.as_deref()?.strip_prefix(XSD)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalValue {
    pub text: String,
    /// Set when a typed literal could not be parsed and was kept verbatim.
    pub note: Option<String>,
}

impl CanonicalValue {
    fn clean(text: String) -> Self {
        Self { text, note: None }
    }
}

static PLAIN_DECIMAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)(?:\.(\d*))?$").unwrap());
static EXP_DECIMAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)(?:\.(\d*))?[eE]([+-]?\d{1,4})$").unwrap());
static DATE_TIME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\+?(-?\d{4,})-(\d{2})-(\d{2})(?:T(\d{2}):(\d{2}):(\d{2})(\.\d+)?)?(Z|[+-]\d{2}:\d{2})?$").unwrap()
});

fn normalize_digits(negative: bool, int_part: &str, frac_part: &str) -> String {
    let int_part = int_part.trim_start_matches('0');
    let frac_part = frac_part.trim_end_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let mut out = String::new();
    if negative && !(int_part == "0" && frac_part.is_empty()) {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    out
}

/// Exact decimal canonical form: no exponent, no leading or trailing zeros,
/// no `+` sign, no negative zero.
fn canonical_number(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if let Some(c) = PLAIN_DECIMAL.captures(raw) {
        let int_part = c.get(2).map_or("", |m| m.as_str());
        let frac_part = c.get(3).map_or("", |m| m.as_str());
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        return Some(normalize_digits(&c[1] == "-", int_part, frac_part));
    }
    let c = EXP_DECIMAL.captures(raw)?;
    let int_part = c.get(2).map_or("", |m| m.as_str());
    let frac_part = c.get(3).map_or("", |m| m.as_str());
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let exp: i64 = c[4].parse().ok()?;
    let digits = format!("{int_part}{frac_part}");
    let point = int_part.len() as i64 + exp;
    let (int_digits, frac_digits) = if point <= 0 {
        (String::new(), format!("{}{}", "0".repeat((-point) as usize), digits))
    } else if point as usize >= digits.len() {
        (format!("{}{}", digits, "0".repeat(point as usize - digits.len())), String::new())
    } else {
        let (a, b) = digits.split_at(point as usize);
        (a.to_string(), b.to_string())
    };
    Some(normalize_digits(&c[1] == "-", &int_digits, &frac_digits))
}

fn canonical_date(raw: &str) -> Option<String> {
    let c = DATE_TIME.captures(raw.trim())?;
    let year: i32 = c[1].parse().ok()?;
    let month: u32 = c[2].parse().ok()?;
    let day: u32 = c[3].parse().ok()?;
    chrono::NaiveDate::from_ymd_opt(year, month, day)?;
    let date = format!("{}-{}-{}", &c[1], &c[2], &c[3]);
    let Some(hh) = c.get(4) else {
        return Some(date);
    };
    let (h, m, s): (u32, u32, u32) = (hh.as_str().parse().ok()?, c[5].parse().ok()?, c[6].parse().ok()?);
    chrono::NaiveTime::from_hms_opt(h, m, s)?;
    let frac = c.get(7).map_or("", |f| f.as_str()).trim_end_matches('0');
    let frac = if frac == "." { "" } else { frac };
    if h == 0 && m == 0 && s == 0 && frac.is_empty() {
        return Some(date);
    }
    let tz = match c.get(8).map(|t| t.as_str()) {
        None => "",
        Some("Z") | Some("+00:00") | Some("-00:00") => "Z",
        Some(other) => other,
    };
    Some(format!("{date}T{}:{}:{}{frac}{tz}", &c[4], &c[5], &c[6]))
}

/// Canonical comparison text for a term. URIs are kept verbatim, literals
/// are NFC-normalized with language tags dropped, xsd numerics and dates get
/// a canonical lexical form.
pub fn canonicalize_value(term: &RdfTerm) -> CanonicalValue {
    match term.kind.as_str() {
        "uri" => CanonicalValue::clean(term.value.clone()),
        "bnode" => CanonicalValue::clean(format!("_:{}", term.value)),
        _ => {
            let text: String = term.value.nfc().collect();
            match term.xsd_local_name() {
                Some(t) if NUMERIC_TYPES.contains(&t) => match canonical_number(&text) {
                    Some(n) => CanonicalValue::clean(n),
                    None => CanonicalValue {
                        note: Some(format!("unparseable xsd:{t} literal {text:?}")),
                        text,
                    },
                },
                Some(t) if DATE_TYPES.contains(&t) => match canonical_date(&text) {
                    Some(d) => CanonicalValue::clean(d),
                    None => CanonicalValue {
                        note: Some(format!("unparseable xsd:{t} literal {text:?}")),
                        text,
                    },
                },
                Some("boolean") => match text.trim() {
                    "true" | "1" => CanonicalValue::clean("true".into()),
                    "false" | "0" => CanonicalValue::clean("false".into()),
                    _ => CanonicalValue {
                        note: Some(format!("unparseable xsd:boolean literal {text:?}")),
                        text,
                    },
                },
                _ => CanonicalValue::clean(text),
            }
        }
    }
}

/// Parses an `application/sparql-results+json` payload into an answer set.
/// Never fails: schema problems become an error answer set.
pub fn parse_results(raw: &str, form: QueryForm) -> AnswerSet {
    let payload: Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => {
            if matches!(form, QueryForm::Construct | QueryForm::Describe) && !raw.trim().is_empty() {
                // graph results are compared as raw text
                return AnswerSet::single_column("graph", [raw.trim().to_string()]);
            }
            return AnswerSet::error(format!("response is not JSON: {e}"));
        }
    };
    if let Some(b) = payload.get("boolean") {
        return match b.as_bool() {
            Some(b) => AnswerSet::boolean(b),
            None => AnswerSet::error(format!("non-boolean 'boolean' field: {b}")),
        };
    }
    let Some(bindings) = payload.pointer("/results/bindings").and_then(Value::as_array) else {
        return AnswerSet::error("payload has neither 'boolean' nor 'results.bindings'");
    };
    let mut rows = Vec::with_capacity(bindings.len());
    for (i, binding) in bindings.iter().enumerate() {
        let Some(obj) = binding.as_object() else {
            return AnswerSet::error(format!("binding {i} is not an object"));
        };
        let mut row = Row::new();
        for (var, term) in obj {
            let term: RdfTerm = match serde_json::from_value(term.clone()) {
                Ok(t) => t,
                Err(e) => return AnswerSet::error(format!("binding {i}, variable {var}: {e}")),
            };
            let canonical = canonicalize_value(&term);
            if let Some(note) = canonical.note {
                tracing::debug!(%note, "kept literal verbatim");
            }
            row.insert(var.clone(), canonical.text);
        }
        if !row.is_empty() {
            rows.push(row);
        }
    }
    AnswerSet::from_rows(rows)
}
