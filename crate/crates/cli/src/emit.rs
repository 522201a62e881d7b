//! Serialization of finished runs: chart tree as JSON or DOT, plus the
//! verification report and the optional descent trace.  All output is
//! deterministic: nodes are ordered by chart id and every map is emitted
//! with sorted keys.

use desing_core::chart::Chart;
use desing_core::mobile::HandicapState;
use desing_core::resolve::{invariant_out, InvTagOut, Node, RunResult};
use desing_core::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ExceptionalOut {
    label: u32,
    equation: String,
    birth_step: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DEntryOut {
    label: u32,
    mult: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RefLevelOut {
    tag: InvTagOut,
    o: u64,
    c_next: u64,
    flag: Option<String>,
}

/// Either the literal per-level lists or the two transported branches a
/// child chart carries until its own invariant is known.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct HandicapsOut {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<Vec<Vec<DEntryOut>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e: Option<Vec<Vec<u32>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_inside: Option<Vec<Vec<DEntryOut>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_inside: Option<Vec<Vec<u32>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_full: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_levels: Option<Vec<RefLevelOut>>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MobileOut {
    j: Vec<String>,
    c: u64,
    handicaps: HandicapsOut,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct NodeOut {
    id: String,
    parent: Option<String>,
    /// parent variable -> image polynomial in this chart
    substitution: std::collections::BTreeMap<String, String>,
    exceptional: Vec<ExceptionalOut>,
    mobile: MobileOut,
    invariant: Option<Vec<InvTagOut>>,
    center: Option<Vec<String>>,
    resolved: bool,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TreeOut {
    nodes: Vec<NodeOut>,
}

fn d_entries_out(d: &[Vec<desing_core::mobile::DEntry>]) -> Vec<Vec<DEntryOut>> {
    d.iter()
        .map(|lvl| {
            lvl.iter()
                .map(|e| DEntryOut { label: e.label, mult: e.mult })
                .collect()
        })
        .collect()
}

fn handicaps_out(h: &HandicapState) -> HandicapsOut {
    match h {
        HandicapState::Literal { d, e } => HandicapsOut {
            kind: "literal",
            d: Some(d_entries_out(d)),
            e: Some(e.clone()),
            d_inside: None,
            e_inside: None,
            e_full: None,
            ref_levels: None,
        },
        HandicapState::Transported { d_inside, e_inside, e_full, ref_levels } => {
            HandicapsOut {
                kind: "transported",
                d: None,
                e: None,
                d_inside: Some(d_entries_out(d_inside)),
                e_inside: Some(e_inside.clone()),
                e_full: Some(e_full.clone()),
                ref_levels: Some(
                    ref_levels
                        .iter()
                        .map(|r| RefLevelOut {
                            tag: InvTagOut {
                                o: r.tag.o,
                                k: r.tag.k,
                                m_ord: r.tag.m_ord,
                                m_lab: r.tag.m_lab.to_string(),
                            },
                            o: r.o,
                            c_next: r.c_next,
                            flag: r.flag.as_ref().map(|f| f.to_string()),
                        })
                        .collect(),
                ),
            }
        }
    }
}

fn path_string(path: &[u32]) -> String {
    let mut s = String::from("r");
    for i in path {
        s.push('.');
        s.push_str(&i.to_string());
    }
    s
}

fn substitution_out(chart: &Chart) -> std::collections::BTreeMap<String, String> {
    let mut map = std::collections::BTreeMap::new();
    if let Some(sub) = &chart.edge_from_parent {
        for (i, img) in sub.images().iter().enumerate() {
            map.insert(sub.source().name(i).to_string(), img.to_string());
        }
    }
    map
}

fn node_out(node: &Node) -> NodeOut {
    let chart = &node.chart;
    NodeOut {
        id: chart.id_string(),
        parent: chart.parent.as_ref().map(|p| path_string(p)),
        substitution: substitution_out(chart),
        exceptional: chart
            .exceptional
            .iter()
            .map(|c| ExceptionalOut {
                label: c.label,
                equation: c.equation.to_string(),
                birth_step: c.birth_step,
            })
            .collect(),
        mobile: MobileOut {
            j: chart.mobile.j.iter().map(|f| f.to_string()).collect(),
            c: chart.mobile.c,
            handicaps: handicaps_out(&chart.mobile.handicaps),
        },
        invariant: node.invariant.as_ref().map(invariant_out),
        center: node
            .center
            .as_ref()
            .map(|eqs| eqs.iter().map(|f| f.to_string()).collect()),
        resolved: node.resolved,
    }
}

pub fn tree_json(run: &RunResult) -> Result<String> {
    let tree = TreeOut { nodes: run.nodes.values().map(node_out).collect() };
    serde_json::to_string_pretty(&tree)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(format!("tree serialization failed: {e}")))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn tree_dot(run: &RunResult) -> String {
    let mut out = String::from("digraph charts {\n");
    out.push_str("  node [shape=box fontname=\"monospace\"];\n");
    for node in run.nodes.values() {
        let id = node.chart.id_string();
        let inv = match &node.invariant {
            Some(inv) => inv
                .0
                .iter()
                .map(|t| {
                    if t.m_ord == 0 && t.m_lab == 0 {
                        format!("({},{})", t.o, t.k)
                    } else {
                        format!("({},{},{})", t.o, t.k, t.m_ord)
                    }
                })
                .collect::<Vec<_>>()
                .join(" "),
            None => String::from("-"),
        };
        let status = if node.resolved { "resolved" } else { "processed" };
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n{}\\n{}\"];\n",
            dot_escape(&id),
            dot_escape(&id),
            dot_escape(&inv),
            status
        ));
    }
    for node in run.nodes.values() {
        let id = node.chart.id_string();
        for child in &node.children {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\";\n",
                dot_escape(&id),
                dot_escape(&path_string(child))
            ));
        }
    }
    out.push_str("}\n");
    out
}

pub fn report_json(run: &RunResult) -> Result<String> {
    serde_json::to_string_pretty(&run.report)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))
}

pub fn trace_json(run: &RunResult) -> Result<Option<String>> {
    match &run.trace {
        None => Ok(None),
        Some(t) => serde_json::to_string_pretty(t)
            .map(|s| Some(s + "\n"))
            .map_err(|e| Error::Internal(format!("trace serialization failed: {e}"))),
    }
}
