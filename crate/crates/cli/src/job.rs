//! Line-oriented job descriptions: what to resolve and with which mobile.
//!
//! The format is deliberately flat so test fixtures stay diffable:
//!
//! ```text
//! vars: x y z
//! J: x^2 - y^2*z
//! mode: scheme
//! control: 1
//! D: 2 1:x 2
//! E: 1 1:x 1
//! ```
//!
//! `D` and `E` lines declare initial handicap entries as
//! `level label:variable multiplicity` triples; each label names an
//! exceptional component whose equation is the given coordinate.

use desing_core::chart::Chart;
use desing_core::mobile::{DEntry, HandicapState};
use desing_core::poly::{Polynomial, Vars};
use desing_core::resolve::{root_chart, Mode};
use desing_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DLine {
    pub level: usize,
    pub label: u32,
    pub var: String,
    pub mult: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ELine {
    pub level: usize,
    pub label: u32,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub variables: Vec<String>,
    pub generators: Vec<String>,
    pub mode: Mode,
    pub control: u64,
    pub initial_d: Vec<DLine>,
    pub initial_e: Vec<ELine>,
}

fn input_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Input(format!("line {line}: {}", msg.into()))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse `label:variable` with both halves validated.
fn parse_label_var(line: usize, tok: &str, vars: &[String]) -> Result<(u32, String)> {
    let (lab, var) = tok
        .split_once(':')
        .ok_or_else(|| input_err(line, format!("expected label:variable, got {tok}")))?;
    let label: u32 = lab
        .parse()
        .map_err(|_| input_err(line, format!("component label {lab} is not a number")))?;
    if !vars.iter().any(|v| v == var) {
        return Err(input_err(line, format!("unknown variable {var}")));
    }
    Ok((label, var.to_string()))
}

pub fn parse_job(text: &str) -> Result<JobSpec> {
    let mut variables: Option<(usize, Vec<String>)> = None;
    let mut generators: Option<Vec<String>> = None;
    let mut mode: Option<Mode> = None;
    let mut control: Option<u64> = None;
    let mut initial_d: Vec<DLine> = Vec::new();
    let mut initial_e: Vec<ELine> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| input_err(lineno, "expected key: value"))?;
        let rest = rest.trim();
        match key.trim() {
            "vars" => {
                if variables.is_some() {
                    return Err(input_err(lineno, "vars declared twice"));
                }
                let names: Vec<String> =
                    rest.split_whitespace().map(|s| s.to_string()).collect();
                if names.is_empty() {
                    return Err(input_err(lineno, "vars needs at least one name"));
                }
                for n in &names {
                    if !is_identifier(n) {
                        return Err(input_err(lineno, format!("bad variable name {n}")));
                    }
                }
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(input_err(lineno, format!("duplicate variable {n}")));
                    }
                }
                variables = Some((lineno, names));
            }
            "J" => {
                if generators.is_some() {
                    return Err(input_err(lineno, "J declared twice"));
                }
                let (_, vars) = variables
                    .as_ref()
                    .ok_or_else(|| input_err(lineno, "vars must come before J"))?;
                let ring = Vars::new(vars.clone())?;
                let gens: Vec<String> = rest
                    .split(';')
                    .map(|g| g.trim().to_string())
                    .filter(|g| !g.is_empty())
                    .collect();
                if gens.is_empty() {
                    return Err(input_err(lineno, "J needs at least one generator"));
                }
                for g in &gens {
                    Polynomial::parse(&ring, g)
                        .map_err(|e| input_err(lineno, format!("in generator {g}: {e}")))?;
                }
                generators = Some(gens);
            }
            "mode" => {
                if mode.is_some() {
                    return Err(input_err(lineno, "mode declared twice"));
                }
                mode = Some(match rest {
                    "mobile" => Mode::Mobile,
                    "scheme" => Mode::Scheme,
                    other => {
                        return Err(input_err(lineno, format!("unknown mode {other}")))
                    }
                });
            }
            "control" => {
                if control.is_some() {
                    return Err(input_err(lineno, "control declared twice"));
                }
                let c: u64 = rest
                    .parse()
                    .map_err(|_| input_err(lineno, format!("bad control {rest}")))?;
                if c == 0 {
                    return Err(input_err(lineno, "control must be positive"));
                }
                control = Some(c);
            }
            "D" | "E" => {
                let (_, vars) = variables
                    .as_ref()
                    .ok_or_else(|| input_err(lineno, "vars must come before handicaps"))?;
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(input_err(
                        lineno,
                        "expected: level label:variable multiplicity",
                    ));
                }
                let level: usize = fields[0]
                    .parse()
                    .map_err(|_| input_err(lineno, format!("bad level {}", fields[0])))?;
                if level == 0 || level > vars.len() {
                    return Err(input_err(
                        lineno,
                        format!("level {level} outside 1..={}", vars.len()),
                    ));
                }
                let (label, var) = parse_label_var(lineno, fields[1], vars)?;
                let mult: u64 = fields[2]
                    .parse()
                    .map_err(|_| input_err(lineno, format!("bad multiplicity {}", fields[2])))?;
                if mult == 0 {
                    return Err(input_err(lineno, "multiplicity must be positive"));
                }
                if key.trim() == "D" {
                    initial_d.push(DLine { level, label, var, mult });
                } else {
                    if mult != 1 {
                        return Err(input_err(
                            lineno,
                            "transversal entries are reduced: multiplicity must be 1",
                        ));
                    }
                    initial_e.push(ELine { level, label, var });
                }
            }
            other => {
                return Err(input_err(lineno, format!("unknown key {other}")));
            }
        }
    }

    let (_, variables) =
        variables.ok_or_else(|| Error::Input("missing vars line".into()))?;
    let generators = generators.ok_or_else(|| Error::Input("missing J line".into()))?;
    let mode = mode.unwrap_or(Mode::Mobile);
    let control = control.unwrap_or(1);

    let spec = JobSpec { variables, generators, mode, control, initial_d, initial_e };
    validate(&spec)?;
    Ok(spec)
}

/// Cross-line consistency; also rerun after command line overrides.
pub fn validate(spec: &JobSpec) -> Result<()> {
    if spec.control == 0 {
        return Err(Error::Input("control must be positive".into()));
    }
    if spec.mode == Mode::Scheme {
        if spec.control != 1 {
            return Err(Error::Input(
                "scheme mode fixes the control to 1".into(),
            ));
        }
        if !spec.initial_d.is_empty() || !spec.initial_e.is_empty() {
            return Err(Error::Input(
                "scheme mode starts with empty handicaps".into(),
            ));
        }
    }
    for (i, a) in spec.initial_d.iter().enumerate() {
        if spec.initial_d[..i]
            .iter()
            .any(|b| b.level == a.level && b.label == a.label)
        {
            return Err(Error::Input(format!(
                "component {} listed twice in D at level {}",
                a.label, a.level
            )));
        }
    }
    for (i, a) in spec.initial_e.iter().enumerate() {
        if spec.initial_e[..i]
            .iter()
            .any(|b| b.level == a.level && b.label == a.label)
        {
            return Err(Error::Input(format!(
                "component {} listed twice in E at level {}",
                a.label, a.level
            )));
        }
    }
    let mut seen: Vec<(u32, &str)> = Vec::new();
    let pairs = spec
        .initial_d
        .iter()
        .map(|d| (d.label, d.var.as_str()))
        .chain(spec.initial_e.iter().map(|e| (e.label, e.var.as_str())));
    for (label, var) in pairs {
        match seen.iter().find(|(l, _)| *l == label) {
            Some((_, v)) if *v != var => {
                return Err(Error::Input(format!(
                    "component {label} bound to both {v} and {var}"
                )));
            }
            Some(_) => {}
            None => {
                if let Some((l, _)) = seen.iter().find(|(_, v)| *v == var) {
                    return Err(Error::Input(format!(
                        "components {l} and {label} share the equation {var}"
                    )));
                }
                seen.push((label, var));
            }
        }
    }
    Ok(())
}

/// Canonical text form; `parse_job(print_job(s)) == s` for valid specs.
pub fn print_job(spec: &JobSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("vars: {}\n", spec.variables.join(" ")));
    out.push_str(&format!("J: {}\n", spec.generators.join("; ")));
    out.push_str(&format!("mode: {}\n", spec.mode.as_str()));
    out.push_str(&format!("control: {}\n", spec.control));
    for d in &spec.initial_d {
        out.push_str(&format!("D: {} {}:{} {}\n", d.level, d.label, d.var, d.mult));
    }
    for e in &spec.initial_e {
        out.push_str(&format!("E: {} {}:{} 1\n", e.level, e.label, e.var));
    }
    out
}

/// Turn a validated spec into the root chart the resolver starts from.
pub fn build_root(spec: &JobSpec) -> Result<Chart> {
    validate(spec)?;
    let ring = Vars::new(spec.variables.clone())?;
    let gens: Result<Vec<Polynomial>> = spec
        .generators
        .iter()
        .map(|g| Polynomial::parse(&ring, g))
        .collect();
    let gens = gens?;
    let n = spec.variables.len();

    let mut seeds: Vec<(u32, Polynomial)> = Vec::new();
    let mut d: Vec<Vec<DEntry>> = vec![Vec::new(); n];
    let mut e: Vec<Vec<u32>> = vec![Vec::new(); n];
    let seed_label = |label: u32, var: &str, seeds: &mut Vec<(u32, Polynomial)>| {
        if !seeds.iter().any(|(l, _)| *l == label) {
            let slot = ring.index_of(var).expect("validated variable");
            seeds.push((label, Polynomial::var(&ring, slot)));
        }
    };
    for line in &spec.initial_d {
        seed_label(line.label, &line.var, &mut seeds);
        // level n is the ambient one and sits at descent depth 0
        d[n - line.level].push(DEntry { label: line.label, mult: line.mult });
    }
    for line in &spec.initial_e {
        seed_label(line.label, &line.var, &mut seeds);
        e[n - line.level].push(line.label);
    }
    seeds.sort_by_key(|(l, _)| *l);

    let handicaps = if spec.mode == Mode::Scheme {
        HandicapState::empty(n)
    } else {
        HandicapState::Literal { d, e }
    };
    root_chart(
        ring,
        gens,
        spec.control,
        handicaps,
        seeds,
        spec.mode == Mode::Scheme,
    )
}
