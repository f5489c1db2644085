//! Canonical JSON form of a dope sheet.
//!
//! Keys are emitted in declaration order and the output is pretty-printed with
//! a trailing newline, so structurally equal sheets serialize to identical
//! bytes.

use std::fmt;

use super::{validate, DimensionKey, DopeSheet, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// JSON path of the offending node, e.g. `shots[1].linkage`.
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    /// Dimension the error sits in, judged from the path or, for a missing
    /// field, from the field name.
    pub fn dimension(&self) -> Option<DimensionKey> {
        let in_path = self
            .path
            .split('.')
            .skip_while(|seg| !seg.starts_with("shots["))
            .nth(1)
            .and_then(|seg| seg.split('[').next())
            .and_then(|key| DimensionKey::ALL.into_iter().find(|d| d.json_key() == key));
        in_path.or_else(|| {
            let field = self.message.strip_prefix("missing field `")?.split('`').next()?;
            DimensionKey::ALL.into_iter().find(|d| d.json_key() == field)
        })
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "at {} (line {}, column {}): {}",
            self.path, self.line, self.column, self.message
        )?;
        if let Some(d) = self.dimension() {
            write!(f, " [dimension {d}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoadError {
    #[error("{0}")]
    Parse(ParseError),
    #[error("{0}")]
    Invalid(ValidationReport),
}

/// [`parse`] followed by [`validate`].
pub fn load(text: &str) -> Result<DopeSheet, LoadError> {
    let ds = parse(text).map_err(LoadError::Parse)?;
    let report = validate(&ds);
    if report.is_valid() {
        Ok(ds)
    } else {
        Err(LoadError::Invalid(report))
    }
}

pub fn serialize(ds: &DopeSheet) -> String {
    let mut out = serde_json::to_string_pretty(ds).expect("dope sheets always serialize");
    out.push('\n');
    out
}

/// Parses a sheet, rejecting unknown fields and missing dimensions. Does not
/// run [`super::validate`]; structural validity is a separate question.
pub fn parse(text: &str) -> Result<DopeSheet, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let result: Result<DopeSheet, _> = serde_path_to_error::deserialize(de);
    result.map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ParseError {
            path: if path.is_empty() { ".".to_string() } else { path },
            line: inner.line(),
            column: inner.column(),
            message: strip_position(&inner.to_string()),
        }
    })
}

// serde_json appends " at line L column C" to its messages; we report those separately
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(idx) => message[..idx].to_string(),
        None => message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dopesheet::fixtures;

    #[test]
    fn round_trip_fixture() {
        let ds = fixtures::sheet(3);
        let text = serialize(&ds);
        assert_eq!(parse(&text).unwrap(), ds);
        assert_eq!(serialize(&parse(&text).unwrap()), text);
    }

    fn mutate(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v = serde_json::to_value(fixtures::sheet(2)).unwrap();
        f(&mut v);
        serde_json::to_string_pretty(&v).unwrap()
    }

    #[test]
    fn missing_scene_names_the_dimension() {
        let text = mutate(|v| {
            v["shots"][1].as_object_mut().unwrap().remove("scene");
        });
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("scene"), "{err}");
        assert_eq!(err.path, "shots[1]");
        assert_eq!(err.dimension(), Some(DimensionKey::Scene));
    }

    #[test]
    fn bad_linkage_token() {
        let text = mutate(|v| v["shots"][0]["linkage"] = "X".into());
        let err = parse(&text).unwrap_err();
        assert_eq!(err.message, "linkage must be T or F");
        assert_eq!(err.path, "shots[0].linkage");
        assert!(err.line > 1);
    }

    #[test]
    fn unknown_field_rejected_with_path() {
        let text = mutate(|v| v["shots"][0]["composition"]["zoom"] = 2.into());
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("zoom"), "{err}");
        assert!(err.path.starts_with("shots[0].composition"), "{err}");
    }

    #[test]
    fn bad_anchor_rejected() {
        let text = mutate(|v| v["shots"][0]["composition"]["layout"][0]["anchor"] = "behind".into());
        let err = parse(&text).unwrap_err();
        assert!(err.path.contains("anchor"), "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse("{\n  \"story_id\": ").unwrap_err();
        assert_eq!(err.line, 2);
    }
}
