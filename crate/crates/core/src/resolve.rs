//! The resolution driver.
//!
//! Each round analyzes every active chart: enumerate candidate points of the
//! singular locus, run the punctual descent at each, and keep the
//! lexicographically maximal invariant with its center.  The chosen centers
//! are then blown up, one global exceptional label per step, and the children
//! enter the next round.  Scheme mode additionally tracks the strict
//! transform and stops at the first round where every leaf passes the
//! smoothness and normal crossings checks.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{blowup_chart, coordinatize_center, Chart, ExceptionalComponent};
use crate::error::{Error, Result};
use crate::ideal::{smooth_complete_intersection, Ideal};
use crate::mobile::{
    build_setup_floor, coefficient_ideal, HandicapState, Invariant, Mobile, Setup, SetupInput,
};
use crate::poly::{rat_int, Polynomial, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mobile,
    Scheme,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Mobile => "mobile",
            Mode::Scheme => "scheme",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolveConfig {
    pub mode: Mode,
    pub max_steps: u64,
    pub verify: bool,
    pub alt_picks: bool,
    pub seed: u64,
    pub trace: bool,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        ResolveConfig {
            mode: Mode::Mobile,
            max_steps: 64,
            verify: false,
            alt_picks: false,
            seed: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Resolved,
    VerificationFailed,
    BudgetExhausted,
}

/// One chart of the finished tree with its processing record.
#[derive(Debug, Clone)]
pub struct Node {
    pub chart: Chart,
    pub resolved: bool,
    pub invariant: Option<Invariant>,
    pub center: Option<Vec<Polynomial>>,
    /// point realizing the maximal invariant, in chart coordinates
    pub point: Option<Vec<BigRational>>,
    pub children: Vec<Vec<u32>>,
    pub step: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InvTagOut {
    pub o: u64,
    pub k: u64,
    pub m_ord: u64,
    pub m_lab: String,
}

pub fn invariant_out(inv: &Invariant) -> Vec<InvTagOut> {
    inv.0
        .iter()
        .map(|t| InvTagOut {
            o: t.o,
            k: t.k,
            m_ord: t.m_ord,
            m_lab: t.m_lab.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub step: u64,
    pub chart: String,
    pub invariant: Vec<InvTagOut>,
    pub center: Vec<String>,
    pub charts_created: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LeafRecord {
    pub chart: String,
    pub resolved: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckRecord {
    pub name: String,
    pub chart: String,
    pub passed: bool,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolutionReport {
    pub mode: String,
    pub resolved: bool,
    pub verified: bool,
    pub rounds: u64,
    pub steps: u64,
    pub budget: u64,
    pub caveats: Vec<String>,
    pub per_step: Vec<StepRecord>,
    pub leaves: Vec<LeafRecord>,
    pub verification: Vec<CheckRecord>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceLevel {
    pub level: usize,
    pub o: u64,
    pub k: u64,
    pub m_ord: u64,
    pub m_lab: String,
    pub c_next: u64,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceCandidate {
    pub point: Vec<String>,
    pub invariant: Vec<InvTagOut>,
    pub center: Vec<String>,
    pub levels: Vec<TraceLevel>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceChart {
    pub round: u64,
    pub chart: String,
    pub candidates: Vec<TraceCandidate>,
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceLog {
    pub charts: Vec<TraceChart>,
}

#[derive(Debug)]
pub struct RunResult {
    pub nodes: BTreeMap<Vec<u32>, Node>,
    pub report: ResolutionReport,
    pub trace: Option<TraceLog>,
    pub outcome: Outcome,
}

fn trace_candidate(setup: &Setup) -> TraceCandidate {
    TraceCandidate {
        point: setup.point.iter().map(|q| q.to_string()).collect(),
        invariant: invariant_out(&setup.invariant),
        center: setup.center.iter().map(|f| f.to_string()).collect(),
        levels: setup
            .levels
            .iter()
            .map(|l| TraceLevel {
                level: l.level,
                o: l.o,
                k: l.k_ord,
                m_ord: l.tag.m_ord,
                m_lab: l.tag.m_lab.to_string(),
                c_next: l.c_next,
                flag: l.flag_expr.as_ref().map(|f| f.to_string()),
            })
            .collect(),
    }
}

fn sample_values(seed: u64) -> Vec<BigRational> {
    let base: Vec<(i64, i64)> = vec![
        (1, 1),
        (-1, 1),
        (2, 1),
        (-2, 1),
        (3, 1),
        (-3, 1),
        (1, 2),
        (-1, 2),
        (5, 1),
        (-5, 1),
    ];
    let off = (seed as usize) % base.len();
    (0..base.len())
        .map(|i| {
            let (n, d) = base[(i + off) % base.len()];
            BigRational::new(n.into(), d.into())
        })
        .collect()
}

#[derive(Debug, Default, Clone)]
struct CandidateFlags {
    sampled: bool,
    incomplete: bool,
}

/// Candidate points whose descent could realize the maximal invariant: the
/// origin, rational points of zero-dimensional pieces of the iterated
/// singular loci and of exceptional intersections, and sampled points on
/// positive-dimensional pieces cut down by hyperplane slices.
fn candidate_points(
    chart: &Chart,
    seed: u64,
) -> Result<(Vec<Vec<BigRational>>, CandidateFlags)> {
    let n = chart.vars.len();
    let j_ideal = Ideal::new(&chart.vars, chart.mobile.j.clone());
    let c = chart.mobile.c;
    let mut flags = CandidateFlags::default();
    let mut pts: BTreeSet<Vec<BigRational>> = BTreeSet::new();
    pts.insert(vec![rat_int(0); n]);

    let comp_eqs: Vec<Polynomial> =
        chart.exceptional.iter().map(|e| e.equation.clone()).collect();

    // the divisor part of the marked ideal only deepens multiplicities along
    // component intersections, which the subset family below already samples;
    // stripping it keeps the iterated singular loci low-degree
    let reduced: Vec<Polynomial> = chart
        .mobile
        .j
        .iter()
        .map(|g| {
            let mut g = g.clone();
            let mut rounds = 0u32;
            loop {
                let before = rounds;
                for e in &comp_eqs {
                    while let Some(q) = g.exact_divide(e) {
                        g = q;
                        rounds += 1;
                        if rounds > 10_000 {
                            return g;
                        }
                    }
                }
                if rounds == before {
                    return g;
                }
            }
        })
        .collect();

    let mut chain: Vec<Ideal> = Vec::new();
    let mut cur = Ideal::new(&chart.vars, reduced);
    while !cur.is_trivial()? {
        chain.push(cur.clone());
        cur = cur.delta();
        if chain.len() > 64 {
            return Err(Error::ResourceLimit(
                "singular locus chain did not terminate".into(),
            ));
        }
    }
    let mut family: Vec<Ideal> = chain.clone();
    if comp_eqs.len() <= 6 {
        for mask in 1u32..(1 << comp_eqs.len()) {
            let sel: Vec<Polynomial> = comp_eqs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, e)| e.clone())
                .collect();
            family.push(Ideal::new(&chart.vars, sel));
        }
    } else {
        for e in &comp_eqs {
            family.push(Ideal::new(&chart.vars, vec![e.clone()]));
        }
        flags.incomplete = true;
    }
    for t in &chain {
        for e in &comp_eqs {
            family.push(t.sum(&Ideal::new(&chart.vars, vec![e.clone()])));
        }
    }

    let values = sample_values(seed);
    for f in &family {
        if f.is_trivial()? {
            continue;
        }
        if f.is_zero_dimensional()? {
            let (points, complete) = f.rational_points()?;
            if !complete {
                flags.incomplete = true;
            }
            for p in points {
                pts.insert(p);
            }
            continue;
        }
        // positive-dimensional: slice with coordinate hyperplanes and keep a
        // couple of sample points per locus
        let mut found = 0usize;
        'slots: for slot in 0..n {
            for val in values.iter().take(4) {
                let hyper = &Polynomial::var(&chart.vars, slot)
                    - &Polynomial::constant(&chart.vars, val.clone());
                let sliced = f.sum(&Ideal::new(&chart.vars, vec![hyper]));
                if sliced.is_trivial()? {
                    continue;
                }
                if !sliced.is_zero_dimensional()? {
                    continue;
                }
                let (points, complete) = sliced.rational_points()?;
                if !complete {
                    flags.incomplete = true;
                }
                for p in points {
                    if pts.insert(p) {
                        found += 1;
                        flags.sampled = true;
                    }
                    if found >= 2 {
                        break 'slots;
                    }
                }
            }
        }
        if found >= 2 {
            continue;
        }
        // pieces of dimension two or more need several hyperplanes; cut
        // greedily one slot at a time, rotating the starting coordinate
        'starts: for start in 0..n {
            let mut cur = f.clone();
            for off in 0..n {
                if cur.is_zero_dimensional()? {
                    break;
                }
                let slot = (start + off) % n;
                for val in values.iter().take(4) {
                    let hyper = &Polynomial::var(&chart.vars, slot)
                        - &Polynomial::constant(&chart.vars, val.clone());
                    let sliced = cur.sum(&Ideal::new(&chart.vars, vec![hyper]));
                    if sliced.is_trivial()? {
                        continue;
                    }
                    cur = sliced;
                    break;
                }
            }
            if !cur.is_zero_dimensional()? {
                continue;
            }
            let (points, complete) = cur.rational_points()?;
            if !complete {
                flags.incomplete = true;
            }
            for p in points {
                if pts.insert(p) {
                    found += 1;
                    flags.sampled = true;
                }
                if found >= 2 {
                    break 'starts;
                }
            }
        }
    }

    let filtered: Vec<Vec<BigRational>> = pts
        .into_iter()
        .filter(|p| match j_ideal.order_at_point(p) {
            Some(o) => o >= c,
            None => false,
        })
        .collect();
    if filtered.len() > 128 {
        flags.incomplete = true;
    }
    Ok((filtered.into_iter().take(128).collect(), flags))
}

enum Analysis {
    Resolved,
    Process {
        setup: Setup,
        tied_centers: bool,
        flags: CandidateFlags,
        trace: Vec<TraceCandidate>,
        chosen: Option<usize>,
    },
}

fn chart_is_resolved(chart: &Chart) -> Result<bool> {
    let mut d = Ideal::new(&chart.vars, chart.mobile.j.clone());
    for _ in 0..chart.mobile.c.saturating_sub(1) {
        if d.is_trivial()? {
            return Ok(true);
        }
        d = d.delta();
    }
    d.is_trivial()
}

fn analyze_chart(chart: &Chart, cfg: &ResolveConfig) -> Result<Analysis> {
    let debug = std::env::var("RESOLVE_DEBUG").is_ok();
    let t0 = std::time::Instant::now();
    if chart_is_resolved(chart)? {
        return Ok(Analysis::Resolved);
    }
    // a scheme chart is done once its strict transform together with the
    // exceptional components passes every smoothness and crossing check;
    // the marked ideal may stay nontrivial
    if cfg.mode == Mode::Scheme && leaf_checks(chart, true)?.iter().all(|c| c.passed) {
        if debug {
            eprintln!("leaf {} ({:?})", chart.id_string(), t0.elapsed());
        }
        return Ok(Analysis::Resolved);
    }
    if debug {
        eprintln!(
            "processing {}: J = {:?}",
            chart.id_string(),
            chart.mobile.j.iter().map(|f| f.to_string()).collect::<Vec<_>>()
        );
    }
    let (points, flags) = candidate_points(chart, cfg.seed)?;
    if debug {
        eprintln!(
            "  {} candidate points ({:?})",
            points.len(),
            t0.elapsed()
        );
    }
    if points.is_empty() {
        // the maximal stratum has no rational witness we could find
        return Err(Error::ResourceLimit(format!(
            "no candidate point of order at least {} found in chart {}",
            chart.mobile.c,
            chart.id_string()
        )));
    }
    let comps = chart.comps_map();
    let inp = SetupInput {
        vars: &chart.vars,
        j: &chart.mobile.j,
        c: chart.mobile.c,
        handicaps: &chart.mobile.handicaps,
        comps: &comps,
        alt_picks: cfg.alt_picks,
    };
    // the origin goes first: it is the most likely maximum and a computed
    // maximum lets weaker candidates be abandoned mid-descent
    let mut points = points;
    if let Some(pos) = points.iter().position(|p| p.iter().all(|q| q.is_zero())) {
        let origin = points.remove(pos);
        points.insert(0, origin);
    }
    let mut winners: Vec<Setup> = Vec::new();
    let mut trace = Vec::new();
    for p in &points {
        let floor = winners.first().map(|s| &s.invariant);
        let outcome = build_setup_floor(&inp, p, floor).map_err(|e| {
            Error::Internal(format!(
                "descent failed in chart {} at ({}): {e}",
                chart.id_string(),
                p.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(", ")
            ))
        })?;
        let Some(setup) = outcome else { continue };
        if cfg.trace {
            trace.push(trace_candidate(&setup));
        }
        match winners.first() {
            None => winners.push(setup),
            Some(best) => match setup.invariant.cmp(&best.invariant) {
                std::cmp::Ordering::Greater => {
                    winners.clear();
                    winners.push(setup);
                }
                std::cmp::Ordering::Equal => winners.push(setup),
                std::cmp::Ordering::Less => {}
            },
        }
    }
    let center_keys: BTreeSet<Vec<String>> = winners
        .iter()
        .map(|s| s.center.iter().map(|f| f.to_string()).collect())
        .collect();
    let tied = center_keys.len() > 1;
    winners.sort_by_key(|s| {
        (
            s.center.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            s.point.iter().map(|q| q.to_string()).collect::<Vec<_>>(),
        )
    });
    let setup = winners
        .into_iter()
        .next()
        .ok_or_else(|| Error::Internal("no candidate setup survived".into()))?;
    let chosen = trace
        .iter()
        .position(|t| t.point == setup.point.iter().map(|q| q.to_string()).collect::<Vec<_>>());
    Ok(Analysis::Process {
        setup,
        tied_centers: tied,
        flags,
        trace,
        chosen,
    })
}

fn monic_key(f: &Polynomial) -> String {
    f.monic().to_string()
}

/// Smoothness and normal crossings checks for one leaf chart.
fn leaf_checks(chart: &Chart, include_strict: bool) -> Result<Vec<CheckRecord>> {
    let id = chart.id_string();
    let mut records = Vec::new();

    if include_strict {
        if let Some(strict) = &chart.strict {
            let ok = smooth_complete_intersection(&chart.vars, strict)?;
            records.push(CheckRecord {
                name: "strict-transform-smooth".into(),
                chart: id.clone(),
                passed: ok,
                witness: if ok {
                    None
                } else {
                    Some(format!(
                        "[{}]",
                        strict.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
                    ))
                },
            });
        }
    }

    let mut seen = BTreeSet::new();
    let mut comp_eqs: Vec<Polynomial> = Vec::new();
    for comp in &chart.exceptional {
        let ok = smooth_complete_intersection(&chart.vars, &[comp.equation.clone()])?;
        records.push(CheckRecord {
            name: "exceptional-smooth".into(),
            chart: id.clone(),
            passed: ok,
            witness: if ok { None } else { Some(comp.equation.to_string()) },
        });
        if seen.insert(monic_key(&comp.equation)) {
            comp_eqs.push(comp.equation.clone());
        }
    }

    // normal crossings: every subset of {strict transform} and the distinct
    // exceptional equations must be a smooth complete intersection
    let mut members: Vec<Vec<Polynomial>> = Vec::new();
    if include_strict {
        if let Some(strict) = &chart.strict {
            let nontrivial: Vec<Polynomial> =
                strict.iter().filter(|f| !f.is_unit()).cloned().collect();
            if !nontrivial.is_empty() {
                members.push(nontrivial);
            }
        }
    }
    for e in &comp_eqs {
        members.push(vec![e.clone()]);
    }
    if members.len() <= 12 {
        for mask in 1u32..(1 << members.len()) {
            if mask.count_ones() < 2 {
                continue;
            }
            let eqs: Vec<Polynomial> = members
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .flat_map(|(_, m)| m.iter().cloned())
                .collect();
            let ok = smooth_complete_intersection(&chart.vars, &eqs)?;
            records.push(CheckRecord {
                name: "normal-crossings".into(),
                chart: id.clone(),
                passed: ok,
                witness: if ok {
                    None
                } else {
                    Some(format!(
                        "[{}]",
                        eqs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
                    ))
                },
            });
        }
    } else {
        records.push(CheckRecord {
            name: "normal-crossings".into(),
            chart: id.clone(),
            passed: false,
            witness: Some("too many components to enumerate subsets".into()),
        });
    }
    Ok(records)
}

/// Center admissibility at blowup time: the center is smooth and each
/// exceptional component either contains it or meets it transversally.
fn center_checks(chart: &Chart, center: &[Polynomial]) -> Result<Vec<CheckRecord>> {
    let id = chart.id_string();
    let mut records = Vec::new();
    let ok = smooth_complete_intersection(&chart.vars, center)?;
    records.push(CheckRecord {
        name: "center-smooth".into(),
        chart: id.clone(),
        passed: ok,
        witness: if ok {
            None
        } else {
            Some(format!(
                "[{}]",
                center.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
            ))
        },
    });
    let center_ideal = Ideal::new(&chart.vars, center.to_vec());
    for comp in &chart.exceptional {
        let contained = center_ideal.radical_contains(&comp.equation)?;
        let ok = if contained {
            true
        } else {
            let mut eqs = center.to_vec();
            eqs.push(comp.equation.clone());
            smooth_complete_intersection(&chart.vars, &eqs)?
        };
        records.push(CheckRecord {
            name: "center-transversal".into(),
            chart: id.clone(),
            passed: ok,
            witness: if ok { None } else { Some(comp.equation.to_string()) },
        });
    }
    Ok(records)
}

/// Run the resolution loop on a root chart.
pub fn resolve(root: Chart, cfg: &ResolveConfig) -> Result<RunResult> {
    if cfg.mode == Mode::Scheme {
        if root.mobile.c != 1 {
            return Err(Error::Input("scheme mode requires control 1".into()));
        }
        if root.strict.is_none() {
            return Err(Error::Internal("scheme mode needs a strict transform".into()));
        }
    }
    let mut nodes: BTreeMap<Vec<u32>, Node> = BTreeMap::new();
    let root_id = root.id.clone();
    let mut label_counter = root
        .exceptional
        .iter()
        .map(|c| c.label + 1)
        .max()
        .unwrap_or(1);
    nodes.insert(
        root_id.clone(),
        Node {
            chart: root,
            resolved: false,
            invariant: None,
            center: None,
            point: None,
            children: Vec::new(),
            step: None,
        },
    );
    let mut active: Vec<Vec<u32>> = vec![root_id];
    let mut steps = 0u64;
    let mut rounds = 0u64;
    let mut caveats: BTreeSet<String> = BTreeSet::new();
    let mut recorded_checks: Vec<CheckRecord> = Vec::new();
    let mut trace_charts: Vec<TraceChart> = Vec::new();
    let mut outcome;
    let mut final_leaf_checks: Vec<CheckRecord> = Vec::new();

    'driver: loop {
        if cfg.mode == Mode::Scheme {
            let leaf_ids: Vec<Vec<u32>> = nodes
                .values()
                .filter(|n| n.children.is_empty())
                .map(|n| n.chart.id.clone())
                .collect();
            let mut checks = Vec::new();
            for id in &leaf_ids {
                checks.extend(leaf_checks(&nodes[id].chart, true)?);
            }
            let all_pass = checks.iter().all(|c| c.passed);
            final_leaf_checks = checks;
            if all_pass {
                for id in &leaf_ids {
                    nodes.get_mut(id).unwrap().resolved = true;
                }
                outcome = Outcome::Resolved;
                break 'driver;
            }
        }

        let analyses: Vec<(Vec<u32>, Analysis)> = active
            .par_iter()
            .map(|id| analyze_chart(&nodes[id].chart, cfg).map(|a| (id.clone(), a)))
            .collect::<Result<_>>()?;

        let mut to_process: Vec<(Vec<u32>, Setup)> = Vec::new();
        for (id, analysis) in analyses {
            match analysis {
                Analysis::Resolved => {
                    nodes.get_mut(&id).unwrap().resolved = true;
                }
                Analysis::Process { setup, tied_centers, flags, trace, chosen } => {
                    if tied_centers {
                        caveats.insert(format!(
                            "tied maximal strata with distinct centers in chart {}",
                            nodes[&id].chart.id_string()
                        ));
                    }
                    if flags.sampled {
                        caveats.insert(format!(
                            "sampled positive-dimensional stratum in chart {}",
                            nodes[&id].chart.id_string()
                        ));
                    }
                    if flags.incomplete {
                        caveats.insert(format!(
                            "candidate enumeration truncated in chart {}",
                            nodes[&id].chart.id_string()
                        ));
                    }
                    if cfg.trace {
                        trace_charts.push(TraceChart {
                            round: rounds,
                            chart: nodes[&id].chart.id_string(),
                            candidates: trace,
                            chosen,
                        });
                    }
                    to_process.push((id, setup));
                }
            }
        }

        if to_process.is_empty() {
            outcome = if cfg.mode == Mode::Scheme {
                // nothing left to blow up but the leaf checks keep failing
                Outcome::VerificationFailed
            } else {
                Outcome::Resolved
            };
            break 'driver;
        }

        if steps + to_process.len() as u64 > cfg.max_steps {
            outcome = Outcome::BudgetExhausted;
            break 'driver;
        }

        to_process.sort_by(|a, b| a.0.cmp(&b.0));
        for (id, setup) in to_process {
            // the invariant must drop strictly along every edge
            if let Some(parent_id) = nodes[&id].chart.parent.clone() {
                let parent_inv = nodes[&parent_id]
                    .invariant
                    .clone()
                    .ok_or_else(|| Error::Internal("processed child of an unprocessed chart".into()))?;
                let ok = setup.invariant < parent_inv;
                recorded_checks.push(CheckRecord {
                    name: "invariant-decrease".into(),
                    chart: nodes[&id].chart.id_string(),
                    passed: ok,
                    witness: if ok {
                        None
                    } else {
                        Some(format!(
                            "{:?} does not drop below {:?}",
                            setup.invariant.flatten(),
                            parent_inv.flatten()
                        ))
                    },
                });
                if !ok {
                    outcome = Outcome::VerificationFailed;
                    break 'driver;
                }
            }

            let chart = nodes[&id].chart.clone();
            let centers_ok = center_checks(&chart, &setup.center)?;
            let all_ok = centers_ok.iter().all(|c| c.passed);
            recorded_checks.extend(centers_ok);
            if !all_ok {
                outcome = Outcome::VerificationFailed;
                break 'driver;
            }

            steps += 1;
            let label = label_counter;
            label_counter += 1;
            let prepared = coordinatize_center(&chart, &setup.center)?;
            let children = blowup_chart(&chart, &prepared, &setup, label, steps)?;

            let node = nodes.get_mut(&id).unwrap();
            node.invariant = Some(setup.invariant.clone());
            node.center = Some(setup.center.clone());
            node.point = Some(setup.point.clone());
            node.step = Some(steps);
            node.children = children.iter().map(|c| c.chart.id.clone()).collect();

            let mut next_ids = Vec::new();
            for child in children {
                next_ids.push(child.chart.id.clone());
                nodes.insert(
                    child.chart.id.clone(),
                    Node {
                        chart: child.chart,
                        resolved: false,
                        invariant: None,
                        center: None,
                        point: None,
                        children: Vec::new(),
                        step: None,
                    },
                );
            }
            active.retain(|a| *a != id);
            active.extend(next_ids);
        }
        active = nodes
            .values()
            .filter(|n| n.children.is_empty() && !n.resolved)
            .map(|n| n.chart.id.clone())
            .collect();
        rounds += 1;
    }

    // final verification in mobile mode, or on failure paths
    if cfg.mode == Mode::Mobile && cfg.verify {
        let leaf_ids: Vec<Vec<u32>> = nodes
            .values()
            .filter(|n| n.children.is_empty())
            .map(|n| n.chart.id.clone())
            .collect();
        let mut checks = Vec::new();
        for id in &leaf_ids {
            checks.extend(leaf_checks(&nodes[id].chart, false)?);
        }
        final_leaf_checks = checks;
        if outcome == Outcome::Resolved && !final_leaf_checks.iter().all(|c| c.passed) {
            outcome = Outcome::VerificationFailed;
        }
    }

    let mut verification = recorded_checks;
    verification.extend(final_leaf_checks);

    let leaves: Vec<LeafRecord> = nodes
        .values()
        .filter(|n| n.children.is_empty())
        .map(|n| LeafRecord {
            chart: n.chart.id_string(),
            resolved: n.resolved,
        })
        .collect();

    let mut per_step: Vec<StepRecord> = nodes
        .values()
        .filter(|n| n.step.is_some())
        .map(|n| StepRecord {
            step: n.step.unwrap(),
            chart: n.chart.id_string(),
            invariant: invariant_out(n.invariant.as_ref().unwrap()),
            center: n
                .center
                .as_ref()
                .unwrap()
                .iter()
                .map(|f| f.to_string())
                .collect(),
            charts_created: n.children.len(),
        })
        .collect();
    per_step.sort_by_key(|s| s.step);

    let verified = match cfg.mode {
        Mode::Scheme => outcome == Outcome::Resolved,
        Mode::Mobile => {
            outcome == Outcome::Resolved
                && (!cfg.verify || verification.iter().all(|c| c.passed))
        }
    };

    let report = ResolutionReport {
        mode: cfg.mode.as_str().into(),
        resolved: outcome == Outcome::Resolved,
        verified,
        rounds,
        steps,
        budget: cfg.max_steps,
        caveats: caveats.into_iter().collect(),
        per_step,
        leaves,
        verification,
    };

    Ok(RunResult {
        nodes,
        report,
        trace: if cfg.trace {
            Some(TraceLog { charts: trace_charts })
        } else {
            None
        },
        outcome,
    })
}

/// Build the root chart for a mobile given by literal data.
pub fn root_chart(
    vars: Vars,
    j: Vec<Polynomial>,
    c: u64,
    handicaps: HandicapState,
    seeds: Vec<(u32, Polynomial)>,
    scheme: bool,
) -> Result<Chart> {
    if c == 0 {
        return Err(Error::Input("the control must be positive".into()));
    }
    if j.iter().all(|f| f.is_zero()) {
        return Err(Error::Input("the input ideal is zero".into()));
    }
    let mut labels = BTreeSet::new();
    let mut exceptional = Vec::new();
    for (label, eq) in seeds {
        if label >= 128 {
            return Err(Error::Input(format!(
                "component label {label} exceeds the supported range"
            )));
        }
        if !labels.insert(label) {
            return Err(Error::Input(format!("duplicate component label {label}")));
        }
        exceptional.push(ExceptionalComponent {
            label,
            equation: eq,
            birth_step: 0,
        });
    }
    for label in handicaps
        .transversal_universe()
        .iter()
        .chain(d_labels(&handicaps).iter())
    {
        if !labels.contains(label) {
            return Err(Error::Input(format!(
                "handicap references undeclared component {label}"
            )));
        }
    }
    let strict = if scheme { Some(j.clone()) } else { None };
    let mobile = Mobile { j, c, handicaps };
    Ok(Chart::root(vars, mobile, exceptional, strict))
}

fn d_labels(h: &HandicapState) -> BTreeSet<u32> {
    match h {
        HandicapState::Literal { d, .. } => {
            d.iter().flatten().map(|e| e.label).collect()
        }
        HandicapState::Transported { d_inside, .. } => {
            d_inside.iter().flatten().map(|e| e.label).collect()
        }
    }
}

/// The mobile whose resolution separates two hypersurface germs: move the
/// smooth one into a coordinate, take the coefficient ideal of the other
/// along it, and remember the current exceptional labels at the top level.
#[derive(Debug, Clone)]
pub struct Separation {
    pub vars: Vars,
    pub j: Vec<Polynomial>,
    pub c: u64,
    pub e_top: Vec<u32>,
    pub comps: BTreeMap<u32, Polynomial>,
}

pub fn separate_components(
    x1: &Polynomial,
    x2: &Ideal,
    comps: &BTreeMap<u32, Polynomial>,
) -> Result<Separation> {
    let vars = x2.vars().clone();
    if *x1.vars() != vars {
        return Err(Error::Input("hypersurface and ideal live in different rings".into()));
    }
    // bring the smooth hypersurface into a coordinate
    let (slot, sheared_k, sheared_comps) = match as_var_slot(x1) {
        Some(slot) => (slot, x2.gens().to_vec(), comps.clone()),
        None => {
            let (g, pivot) = pivot_linear(x1).ok_or_else(|| {
                Error::Input("separating hypersurface is not coordinable".into())
            })?;
            let name = fresh_u(&vars);
            let ring2 = vars.with_renamed(pivot, &name)?;
            let h = &g - &Polynomial::var(&vars, pivot);
            let mut images: Vec<Polynomial> =
                (0..vars.len()).map(|i| Polynomial::var(&ring2, i)).collect();
            images[pivot] = &images[pivot] - &h.with_ring(&ring2);
            let shear = crate::poly::SubstitutionMap::new(vars.clone(), ring2, images)?;
            (
                pivot,
                x2.gens().iter().map(|f| shear.apply(f)).collect(),
                comps
                    .iter()
                    .map(|(l, e)| (*l, shear.apply(e)))
                    .collect(),
            )
        }
    };
    let ring = sheared_k
        .first()
        .ok_or_else(|| Error::Input("empty ideal to separate".into()))?
        .vars()
        .clone();
    let z_poly = Polynomial::var(&ring, slot);
    // maximal order of the ideal along the hypersurface
    let mut c = 0u64;
    let mut cur = Ideal::new(&ring, sheared_k.clone());
    loop {
        let on_surface = cur.sum(&Ideal::new(&ring, vec![z_poly.clone()]));
        if on_surface.is_trivial()? {
            break;
        }
        c += 1;
        cur = cur.delta();
        if c > 64 {
            return Err(Error::Input("components not distinct".into()));
        }
    }
    if c == 0 {
        return Err(Error::Input(
            "the ideal does not meet the separating hypersurface".into(),
        ));
    }
    let coeff = coefficient_ideal(&sheared_k, c, slot)?;
    if coeff.is_zero_ideal() {
        return Err(Error::Input("components not distinct".into()));
    }
    let e_top: Vec<u32> = sheared_comps.keys().copied().collect();
    let sub_comps: BTreeMap<u32, Polynomial> = sheared_comps
        .iter()
        .map(|(l, e)| (*l, e.restrict_drop(slot)))
        .collect();
    Ok(Separation {
        vars: coeff.vars().clone(),
        j: coeff.gens().to_vec(),
        c,
        e_top,
        comps: sub_comps,
    })
}

fn as_var_slot(f: &Polynomial) -> Option<usize> {
    if f.num_terms() != 1 {
        return None;
    }
    let (m, _) = f.terms().next()?;
    if m.degree() != 1 {
        return None;
    }
    (0..f.vars().len()).find(|&i| m.exp(i) == 1)
}

fn pivot_linear(g: &Polynomial) -> Option<(Polynomial, usize)> {
    use num_traits::One;
    for v in 0..g.vars().len() {
        if g.deg_in_var(v) == 1 {
            if let Some(c1) = g.expand_in_var(v).get(&1) {
                if let Some(alpha) = c1.as_constant() {
                    if !alpha.is_zero() {
                        let inv = BigRational::one() / alpha.clone();
                        return Some((g.scale(&inv), v));
                    }
                }
            }
        }
    }
    None
}

fn fresh_u(vars: &Vars) -> String {
    let mut i = 1;
    loop {
        let name = format!("u{i}");
        if vars.index_of(&name).is_none() {
            return name;
        }
        i += 1;
    }
}
