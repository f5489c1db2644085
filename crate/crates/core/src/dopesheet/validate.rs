use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DimensionKey, DopeSheet, ShotEntry, ENVIRONMENT_PARTICIPANT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub shot: Option<usize>,
    pub dimension: Option<DimensionKey>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.shot, self.dimension) {
            (Some(s), Some(d)) => write!(f, "shot {s} / {d}: {}", self.message),
            (Some(s), None) => write!(f, "shot {s}: {}", self.message),
            (None, Some(d)) => write!(f, "{d}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

/// Violations found in a sheet; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, shot: Option<usize>, dimension: Option<DimensionKey>, message: impl Into<String>) {
        self.violations.push(Violation {
            shot,
            dimension,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate(ds: &DopeSheet) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ds.shots.is_empty() {
        report.push(None, None, "dope sheet has no shots");
    }
    for (position, shot) in ds.shots.iter().enumerate() {
        if shot.index != position {
            report.push(
                Some(position),
                None,
                format!("shot index {} does not match position {position}", shot.index),
            );
        }
        report.violations.extend(validate_shot(shot).violations);
    }
    report
}

/// Checks the invariants local to one shot entry, including the rule that the
/// first shot cannot link.
pub fn validate_shot(shot: &ShotEntry) -> ValidationReport {
    let mut report = ValidationReport::default();
    let at = Some(shot.index);

    if shot.index == 0 && shot.linkage.is_linked() {
        report.push(at, None, "first shot cannot link");
    }

    let mut names = BTreeSet::new();
    for c in &shot.characters {
        if c.name.trim().is_empty() {
            report.push(at, Some(DimensionKey::Characters), "character name is empty");
        } else if !names.insert(c.name.as_str()) {
            report.push(
                at,
                Some(DimensionKey::Characters),
                format!("duplicate character name {:?}", c.name),
            );
        }
    }

    if shot.shot.description.trim().is_empty() {
        report.push(at, Some(DimensionKey::Shots), "description is empty");
    }

    if shot.scene.environment.trim().is_empty() {
        report.push(at, Some(DimensionKey::Scene), "environment is empty");
    }

    for slot in &shot.composition.layout {
        if !names.contains(slot.character.as_str()) {
            report.push(
                at,
                Some(DimensionKey::Composition),
                format!("layout references undeclared character {:?}", slot.character),
            );
        }
        if !(slot.scale.is_finite() && slot.scale > 0.0 && slot.scale <= 1.0) {
            report.push(
                at,
                Some(DimensionKey::Composition),
                format!("layout scale {} for {:?} outside (0, 1]", slot.scale, slot.character),
            );
        }
    }

    for rel in &shot.relationships {
        if rel.participants.is_empty() {
            report.push(at, Some(DimensionKey::Relationships), "relationship has no participants");
        }
        for p in &rel.participants {
            if p != ENVIRONMENT_PARTICIPANT && !names.contains(p.as_str()) {
                report.push(
                    at,
                    Some(DimensionKey::Relationships),
                    format!("relationship references undeclared participant {p:?}"),
                );
            }
        }
    }

    report
}
