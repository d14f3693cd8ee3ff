//! `emp-scenario/1` files: one header line, then one JSON record per
//! scenario. Keys are written in a fixed order and floats use their shortest
//! round-trip representation, so save → load → save is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Profile, Scenario};
use crate::error::{EmpError, Result};

pub const SCENARIO_SCHEMA: &str = "emp-scenario/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub schema: String,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub profile: Profile,
    pub scenarios: Vec<Scenario>,
}

/// Parses and validates the contents of a scenario file.
pub fn parse_scenarios(text: &str) -> Result<ScenarioFile> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header_line)) = lines.next() else {
        return Ok(ScenarioFile {
            profile: Profile::Custom,
            scenarios: Vec::new(),
        });
    };
    let header = parse_header(header_line)?;
    let mut scenarios = Vec::new();
    for (i, line) in lines {
        let s: Scenario = serde_json::from_str(line).map_err(|e| EmpError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        s.validate()?;
        scenarios.push(s);
    }
    Ok(ScenarioFile {
        profile: header.profile,
        scenarios,
    })
}

/// Parses a header line and checks its schema tag.
pub fn parse_header(line: &str) -> Result<FileHeader> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| EmpError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let schema = value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or_default();
    if schema != SCENARIO_SCHEMA {
        return Err(EmpError::Schema {
            found: schema.to_string(),
            expected: SCENARIO_SCHEMA.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| EmpError::Parse {
        line: 1,
        msg: e.to_string(),
    })
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EmpError::io(path, e))?;
    parse_scenarios(&text)
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    Ok(load_scenario_file(path)?.scenarios)
}

pub fn write_scenarios<W: Write>(mut out: W, profile: Profile, scenarios: &[Scenario]) -> Result<()> {
    let header = FileHeader {
        schema: SCENARIO_SCHEMA.to_string(),
        profile,
    };
    let io = |e| EmpError::io("<scenario stream>", e);
    writeln!(out, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for s in scenarios {
        writeln!(out, "{}", serde_json::to_string(s)?).map_err(io)?;
    }
    Ok(())
}

pub fn save_scenarios(path: impl AsRef<Path>, profile: Profile, scenarios: &[Scenario]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_scenarios(&mut buf, profile, scenarios)?;
    fs::write(path, buf).map_err(|e| EmpError::io(path, e))
}
