//! Charts and blowups.
//!
//! A chart is one affine piece of the blowup tree: its ring, the exceptional
//! components alive in it, the transported mobile, and the substitution that
//! reaches it from the root.  Processing a chart means coordinatizing the
//! chosen center by shears, blowing up, and transporting ideal, divisors, and
//! handicaps into one child chart per center coordinate.  Centers cut out by
//! a single equation are blown up formally: the substitution is the identity
//! and the equation itself becomes the new exceptional component.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ideal::{smooth_complete_intersection, Ideal};
use crate::mobile::{DEntry, HandicapState, Mobile, Setup};
use crate::poly::{Polynomial, SubstitutionMap, Vars};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExceptionalComponent {
    pub label: u32,
    pub equation: Polynomial,
    pub birth_step: u64,
}

/// One node of the chart tree.  Nodes are immutable once created; center
/// coordinatization happens on a working copy so the recorded chart keeps
/// the coordinates it was born with.
#[derive(Debug, Clone)]
pub struct Chart {
    pub id: Vec<u32>,
    pub parent: Option<Vec<u32>>,
    pub vars: Vars,
    /// expressions of the root coordinates in this chart's coordinates
    pub path_from_root: SubstitutionMap,
    /// parent ring to this ring: center shears composed with the blowup map
    pub edge_from_parent: Option<SubstitutionMap>,
    pub exceptional: Vec<ExceptionalComponent>,
    pub mobile: Mobile,
    /// strict transform of the input ideal, tracked in scheme mode
    pub strict: Option<Vec<Polynomial>>,
    pub fresh_counter: u32,
    pub birth_step: u64,
}

impl Chart {
    pub fn root(
        vars: Vars,
        mobile: Mobile,
        exceptional: Vec<ExceptionalComponent>,
        strict: Option<Vec<Polynomial>>,
    ) -> Chart {
        Chart {
            id: Vec::new(),
            parent: None,
            path_from_root: SubstitutionMap::identity(&vars),
            edge_from_parent: None,
            exceptional,
            mobile,
            strict,
            fresh_counter: 1,
            birth_step: 0,
            vars,
        }
    }

    pub fn id_string(&self) -> String {
        let mut s = String::from("r");
        for i in &self.id {
            s.push('.');
            s.push_str(&i.to_string());
        }
        s
    }

    pub fn comps_map(&self) -> BTreeMap<u32, Polynomial> {
        self.exceptional
            .iter()
            .map(|c| (c.label, c.equation.clone()))
            .collect()
    }
}

/// A chart rewritten so the center is a set of coordinates (or a single
/// hypersurface equation for formal blowups).
#[derive(Debug, Clone)]
pub struct PreparedCenter {
    pub vars: Vars,
    /// chart ring to the rewritten ring
    pub change: SubstitutionMap,
    pub j: Vec<Polynomial>,
    pub comps: Vec<ExceptionalComponent>,
    pub strict: Option<Vec<Polynomial>>,
    /// variable slots of the center when it has at least two equations
    pub center_slots: Vec<usize>,
    /// the center equation when it has exactly one
    pub hypersurface: Option<Polynomial>,
    pub fresh_counter: u32,
}

/// Rewrite the chart so every center equation becomes a coordinate.  Each
/// equation must be a variable already or admit a pivot variable it is
/// linear in with constant coefficient; the shears are applied sequentially
/// and later equations are rewritten through earlier shears.
pub fn coordinatize_center(chart: &Chart, center: &[Polynomial]) -> Result<PreparedCenter> {
    if center.is_empty() {
        return Err(Error::Internal("empty center".into()));
    }
    {
        let mut seen: Vec<Polynomial> = Vec::new();
        for eq in center {
            let m = eq.monic();
            if seen.contains(&m) {
                return Err(Error::Internal(format!(
                    "duplicate center equation {eq}"
                )));
            }
            seen.push(m);
        }
    }
    if center.len() > chart.vars.len() {
        return Err(Error::Internal(
            "more center equations than chart variables".into(),
        ));
    }

    let mut fresh = chart.fresh_counter;
    if center.len() == 1 {
        return Ok(PreparedCenter {
            vars: chart.vars.clone(),
            change: SubstitutionMap::identity(&chart.vars),
            j: chart.mobile.j.clone(),
            comps: chart.exceptional.clone(),
            strict: chart.strict.clone(),
            center_slots: Vec::new(),
            hypersurface: Some(center[0].clone()),
            fresh_counter: fresh,
        });
    }

    let mut ring = chart.vars.clone();
    let mut change = SubstitutionMap::identity(&ring);
    let mut slots: Vec<usize> = Vec::new();
    for eq in center {
        let g = change.apply(eq);
        if let Some(slot) = as_variable(&g) {
            if slots.contains(&slot) {
                return Err(Error::Internal(
                    "center equations share a coordinate".into(),
                ));
            }
            slots.push(slot);
            continue;
        }
        let (g, pivot) = pivot_for(&g).ok_or_else(|| {
            Error::Internal(format!("center equation {eq} is not coordinable"))
        })?;
        if slots.contains(&pivot) {
            return Err(Error::Internal(
                "center equations share a coordinate".into(),
            ));
        }
        let name = loop {
            let cand = format!("u{fresh}");
            fresh += 1;
            if ring.index_of(&cand).is_none() {
                break cand;
            }
        };
        let ring2 = ring.with_renamed(pivot, &name)?;
        let h = &g - &Polynomial::var(&ring, pivot);
        let mut images: Vec<Polynomial> =
            (0..ring.len()).map(|i| Polynomial::var(&ring2, i)).collect();
        images[pivot] = &images[pivot] - &h.with_ring(&ring2);
        let shear = SubstitutionMap::new(ring.clone(), ring2.clone(), images)?;
        change = change.compose(&shear);
        ring = ring2;
        slots.push(pivot);
    }

    Ok(PreparedCenter {
        vars: ring.clone(),
        j: chart.mobile.j.iter().map(|f| change.apply(f)).collect(),
        comps: chart
            .exceptional
            .iter()
            .map(|c| ExceptionalComponent {
                label: c.label,
                equation: change.apply(&c.equation),
                birth_step: c.birth_step,
            })
            .collect(),
        strict: chart
            .strict
            .as_ref()
            .map(|s| s.iter().map(|f| change.apply(f)).collect()),
        center_slots: slots,
        hypersurface: None,
        change,
        fresh_counter: fresh,
    })
}

fn as_variable(g: &Polynomial) -> Option<usize> {
    if g.num_terms() != 1 {
        return None;
    }
    let (m, _) = g.terms().next()?;
    if m.degree() != 1 {
        return None;
    }
    (0..g.vars().len()).find(|&i| m.exp(i) == 1)
}

fn pivot_for(g: &Polynomial) -> Option<(Polynomial, usize)> {
    use num_rational::BigRational;
    use num_traits::{One, Zero};
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

/// How an ideal moves through a blowup substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Total,
    Weak,
    Controlled(u64),
}

fn divide_out(f: &Polynomial, pivot: &Polynomial) -> (Polynomial, u64) {
    let mut g = f.clone();
    let mut count = 0;
    while let Some(q) = g.exact_divide(pivot) {
        g = q;
        count += 1;
        if g.is_zero() {
            break;
        }
    }
    (g, count)
}

/// Substitute and divide by the exceptional equation: not at all (total), as
/// often as the whole ideal allows (weak), or a prescribed number of times
/// (controlled).  Controlled division must be exact on every generator.
pub fn transform_ideal(
    gens: &[Polynomial],
    subst: &SubstitutionMap,
    pivot: &Polynomial,
    kind: TransformKind,
) -> Result<Vec<Polynomial>> {
    let total: Vec<Polynomial> = gens.iter().map(|g| subst.apply(g)).collect();
    match kind {
        TransformKind::Total => Ok(total),
        TransformKind::Weak => {
            let counts: Vec<u64> = total
                .iter()
                .filter(|g| !g.is_zero())
                .map(|g| divide_out(g, pivot).1)
                .collect();
            let m = counts.iter().copied().min().unwrap_or(0);
            let pw = pivot.pow(m);
            total
                .iter()
                .map(|g| {
                    g.exact_divide(&pw).ok_or_else(|| {
                        Error::Internal("weak transform division not exact".into())
                    })
                })
                .collect()
        }
        TransformKind::Controlled(c) => {
            let pw = pivot.pow(c);
            total
                .iter()
                .map(|g| {
                    g.exact_divide(&pw).ok_or_else(|| {
                        Error::Internal(
                            "total transform not divisible by the exceptional power".into(),
                        )
                    })
                })
                .collect()
        }
    }
}

/// Everything a finished blowup hands back for one child chart.
#[derive(Debug, Clone)]
pub struct BlowupChild {
    pub chart: Chart,
    /// exceptional equations that died in this chart (strict transform a unit)
    pub retired_labels: Vec<u32>,
}

/// Blow up a prepared center and build all child charts: ideal by controlled
/// transform, exceptional equations by their strict transforms plus the new
/// component, strict transform by saturation, handicaps by the transport
/// rules keyed to the setup that chose the center.
pub fn blowup_chart(
    chart: &Chart,
    prepared: &PreparedCenter,
    setup: &Setup,
    y_label: u32,
    step: u64,
) -> Result<Vec<BlowupChild>> {
    if y_label >= 128 {
        return Err(Error::ResourceLimit(format!(
            "component label {y_label} exceeds the mask width"
        )));
    }
    let c = chart.mobile.c;
    let ref_levels = setup.ref_levels();
    let parent_universe = chart.mobile.handicaps.transversal_universe();

    let mut pieces: Vec<(u32, SubstitutionMap, Polynomial, Option<usize>)> = Vec::new();
    match &prepared.hypersurface {
        Some(eq) => {
            pieces.push((0, SubstitutionMap::identity(&prepared.vars), eq.clone(), None));
        }
        None => {
            for (index, &pivot) in prepared.center_slots.iter().enumerate() {
                let mut images: Vec<Polynomial> = (0..prepared.vars.len())
                    .map(|i| Polynomial::var(&prepared.vars, i))
                    .collect();
                let pv = Polynomial::var(&prepared.vars, pivot);
                for &q in &prepared.center_slots {
                    if q != pivot {
                        images[q] = &pv * &images[q];
                    }
                }
                let subst =
                    SubstitutionMap::new(prepared.vars.clone(), prepared.vars.clone(), images)?;
                pieces.push((index as u32, subst, pv, Some(pivot)));
            }
        }
    }

    let mut children = Vec::new();
    for (index, subst, y_eq, chart_slot) in pieces {
        let j_new = transform_ideal(&prepared.j, &subst, &y_eq, TransformKind::Controlled(c))?;

        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        let mut comps_new: Vec<ExceptionalComponent> = Vec::new();
        let mut retired = Vec::new();
        for comp in &prepared.comps {
            let (eq, count) = divide_out(&subst.apply(&comp.equation), &y_eq);
            counts.insert(comp.label, count);
            if eq.is_unit() {
                retired.push(comp.label);
            } else {
                comps_new.push(ExceptionalComponent {
                    label: comp.label,
                    equation: eq,
                    birth_step: comp.birth_step,
                });
            }
        }
        comps_new.push(ExceptionalComponent {
            label: y_label,
            equation: y_eq.clone(),
            birth_step: step,
        });
        for comp in &comps_new {
            if !smooth_complete_intersection(&prepared.vars, &[comp.equation.clone()])? {
                return Err(Error::Verification(format!(
                    "exceptional component {} is singular after substitution",
                    comp.label
                )));
            }
        }
        let alive: std::collections::BTreeSet<u32> =
            comps_new.iter().map(|c| c.label).collect();

        let strict_new = match &prepared.strict {
            None => None,
            Some(s) => {
                let tot: Vec<Polynomial> = s.iter().map(|f| subst.apply(f)).collect();
                let sat = Ideal::new(&prepared.vars, tot).saturate(&y_eq)?;
                Some(sat.gens().to_vec())
            }
        };

        let mut d_inside = Vec::new();
        let mut e_inside = Vec::new();
        for (depth, level) in setup.levels.iter().enumerate() {
            let mut entries: Vec<DEntry> = level
                .d_level
                .iter()
                .filter(|e| alive.contains(&e.label))
                .cloned()
                .collect();
            let ord_z: u64 = level
                .d_level
                .iter()
                .map(|e| e.mult * counts.get(&e.label).copied().unwrap_or(0))
                .sum();
            // the top level carries the input ideal, which transforms with
            // the stated control; every lower level carries a coefficient
            // ideal with factorial-integerized exponents, and those transform
            // with the factorial of their control
            let control = if depth == 0 {
                level.c_next
            } else {
                crate::mobile::factorial(level.c_next)?
            };
            let want = ord_z + level.o;
            if want < control {
                return Err(Error::Internal(format!(
                    "negative multiplicity for the new component at level {}",
                    level.level
                )));
            }
            let net = want - control;
            if net > 0 {
                entries.push(DEntry { label: y_label, mult: net });
            }
            d_inside.push(entries);
            e_inside.push(
                level
                    .e_level
                    .iter()
                    .filter(|l| alive.contains(l))
                    .copied()
                    .collect(),
            );
            debug_assert_eq!(ref_levels[depth].tag, level.tag);
        }
        let mut e_full: Vec<u32> = parent_universe
            .iter()
            .filter(|l| alive.contains(l))
            .copied()
            .collect();
        e_full.push(y_label);
        e_full.sort_unstable();
        e_full.dedup();

        // strict transforms of the flag hypersurfaces: the center was
        // coordinatized, so the flag of depth d became the coordinate in
        // center slot d and stays that coordinate in every chart except its
        // own, where the strict transform leaves the chart entirely
        let mut ref_levels = ref_levels.clone();
        for (depth, level) in setup.levels.iter().enumerate() {
            if level.flag_expr.is_none() {
                continue;
            }
            let slot = prepared.center_slots.get(depth).copied();
            ref_levels[depth].flag = match (slot, chart_slot) {
                (Some(s), Some(p)) if s != p => Some(Polynomial::var(&prepared.vars, s)),
                _ => None,
            };
        }

        let handicaps = HandicapState::Transported {
            d_inside,
            e_inside,
            e_full,
            ref_levels,
        };

        let mut id = chart.id.clone();
        id.push(index);
        let edge = prepared.change.compose(&subst);
        children.push(BlowupChild {
            chart: Chart {
                id,
                parent: Some(chart.id.clone()),
                vars: prepared.vars.clone(),
                path_from_root: chart.path_from_root.compose(&edge),
                edge_from_parent: Some(edge),
                exceptional: comps_new,
                mobile: Mobile { j: j_new, c, handicaps },
                strict: strict_new,
                fresh_counter: prepared.fresh_counter,
                birth_step: step,
            },
            retired_labels: retired,
        });
    }
    Ok(children)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobile::{build_setup, compute_tag, Invariant, SetupInput, StopKind, Tag};
    use crate::poly::rat_int;
    use num_rational::BigRational;

    fn vars(names: &[&str]) -> Vars {
        Vars::new(names.iter().copied()).unwrap()
    }

    fn p(v: &Vars, s: &str) -> Polynomial {
        Polynomial::parse(v, s).unwrap()
    }

    fn origin(n: usize) -> Vec<BigRational> {
        vec![rat_int(0); n]
    }

    fn cusp_root() -> Chart {
        let v = vars(&["x", "y"]);
        let mobile = Mobile {
            j: vec![p(&v, "y^2 - x^3")],
            c: 1,
            handicaps: HandicapState::empty(2),
        };
        Chart::root(v, mobile, Vec::new(), None)
    }

    fn setup_of(chart: &Chart, point: &[BigRational]) -> crate::mobile::Setup {
        let comps = chart.comps_map();
        let inp = SetupInput {
            vars: &chart.vars,
            j: &chart.mobile.j,
            c: chart.mobile.c,
            handicaps: &chart.mobile.handicaps,
            comps: &comps,
            alt_picks: false,
        };
        build_setup(&inp, point).unwrap()
    }

    #[test]
    fn transform_kinds_on_the_cusp_blowup() {
        let v = vars(&["x", "y"]);
        let f = vec![p(&v, "y^2 - x^3")];
        let x_chart = SubstitutionMap::new(
            v.clone(),
            v.clone(),
            vec![p(&v, "x"), p(&v, "x*y")],
        )
        .unwrap();
        let px = p(&v, "x");
        let weak = transform_ideal(&f, &x_chart, &px, TransformKind::Weak).unwrap();
        assert_eq!(weak, vec![p(&v, "y^2 - x")]);
        let ctrl = transform_ideal(&f, &x_chart, &px, TransformKind::Controlled(1)).unwrap();
        assert_eq!(ctrl, vec![p(&v, "x*y^2 - x^2")]);
        let total = transform_ideal(&f, &x_chart, &px, TransformKind::Total).unwrap();
        assert_eq!(total, vec![p(&v, "x^2*y^2 - x^3")]);

        let y_chart = SubstitutionMap::new(
            v.clone(),
            v.clone(),
            vec![p(&v, "x*y"), p(&v, "y")],
        )
        .unwrap();
        let py = p(&v, "y");
        let weak_y = transform_ideal(&f, &y_chart, &py, TransformKind::Weak).unwrap();
        assert_eq!(weak_y, vec![p(&v, "1 - x^3*y")]);

        // controlled division beyond the available power must fail
        assert!(transform_ideal(&f, &x_chart, &px, TransformKind::Controlled(4)).is_err());
    }

    #[test]
    fn coordinatize_accepts_variables_and_shears() {
        let chart = cusp_root();
        let v = &chart.vars;
        let prep = coordinatize_center(&chart, &[p(v, "y"), p(v, "x")]).unwrap();
        assert_eq!(prep.center_slots, vec![1, 0]);
        assert_eq!(prep.vars, *v);

        let sheared = coordinatize_center(&chart, &[p(v, "x - y^2"), p(v, "y")]).unwrap();
        assert_eq!(sheared.vars, vars(&["u1", "y"]));
        assert_eq!(sheared.center_slots, vec![0, 1]);
        // y^2 - x^3 with x = u1 + y^2
        let expect = p(&sheared.vars, "y^2 - (u1 + y^2)^3");
        assert_eq!(sheared.j, vec![expect]);

        assert!(coordinatize_center(&chart, &[p(v, "x"), p(v, "2*x")]).is_err());
        assert!(coordinatize_center(&chart, &[p(v, "x^2 + y^2"), p(v, "y")]).is_err());
    }

    #[test]
    fn single_equation_centers_blow_up_formally() {
        let chart = cusp_root();
        let v = &chart.vars;
        let prep = coordinatize_center(&chart, &[p(v, "x - y^2")]).unwrap();
        assert!(prep.hypersurface.is_some());
        assert_eq!(prep.vars, *v);
    }

    #[test]
    fn cusp_blowup_transports_ideal_and_handicaps() {
        let chart = cusp_root();
        let setup = setup_of(&chart, &origin(2));
        let prep = coordinatize_center(&chart, &setup.center).unwrap();
        let children = blowup_chart(&chart, &prep, &setup, 1, 1).unwrap();
        assert_eq!(children.len(), 2);

        // center was [y, x], so child 0 has pivot y and child 1 pivot x
        let cy = &children[0].chart;
        let cx = &children[1].chart;
        assert_eq!(cy.id, vec![0]);
        assert_eq!(cx.id, vec![1]);
        let v = &chart.vars;

        assert_eq!(cx.mobile.j, vec![p(v, "x*y^2 - x^2")]);
        assert_eq!(cy.mobile.j, vec![p(v, "y - x^3*y^2")]);
        assert_eq!(cx.exceptional.len(), 1);
        assert_eq!(cx.exceptional[0].equation, p(v, "x"));
        assert_eq!(cy.exceptional[0].equation, p(v, "y"));

        match &cx.mobile.handicaps {
            HandicapState::Transported { d_inside, e_inside, e_full, ref_levels } => {
                assert_eq!(
                    d_inside,
                    &vec![
                        vec![DEntry { label: 1, mult: 1 }],
                        vec![DEntry { label: 1, mult: 1 }],
                    ]
                );
                assert_eq!(e_inside, &vec![Vec::<u32>::new(), Vec::new()]);
                assert_eq!(e_full, &vec![1]);
                assert_eq!(ref_levels.len(), 2);
                assert_eq!(ref_levels[0].tag, compute_tag(2, 2, None));
                assert_eq!(ref_levels[1].tag, compute_tag(3, 3, None));
                assert_eq!(ref_levels[1].c_next, 2);
            }
            _ => panic!("expected transported handicaps"),
        }
    }

    #[test]
    fn transported_descent_matches_the_frozen_cusp_chain() {
        let chart = cusp_root();
        let setup = setup_of(&chart, &origin(2));
        let prep = coordinatize_center(&chart, &setup.center).unwrap();
        let children = blowup_chart(&chart, &prep, &setup, 1, 1).unwrap();
        let cx = &children[1].chart;
        let v = &chart.vars;

        let s = setup_of(cx, &origin(2));
        assert_eq!(
            s.invariant,
            Invariant(vec![compute_tag(1, 2, None), compute_tag(4, 4, None)])
        );
        assert_eq!(s.center, vec![p(v, "x - y^2"), p(v, "y")]);
        assert_eq!(s.stop, StopKind::BoldRegular { level: 1 });
        // residual part of the transported ideal splits off one copy of the
        // new exceptional equation
        assert_eq!(s.levels[0].i_gens, vec![p(v, "y^2 - x")]);
        assert_eq!(s.levels[0].m_poly, p(v, "x"));

        // at the y-chart origin the ideal is the exceptional equation times a
        // unit, so the stop is combinatorial on the new component
        let cy = &children[0].chart;
        let sy = setup_of(cy, &origin(2));
        assert_eq!(sy.invariant.0[0], compute_tag(0, 0, Some((1, 1 << 1))));
        assert_eq!(sy.stop, StopKind::Combinatorial { level: 2 });
    }

    #[test]
    fn second_cusp_blowup_reaches_the_monomial_stage() {
        let chart = cusp_root();
        let setup = setup_of(&chart, &origin(2));
        let prep = coordinatize_center(&chart, &setup.center).unwrap();
        let children = blowup_chart(&chart, &prep, &setup, 1, 1).unwrap();
        let cx = children[1].chart.clone();

        let s2 = setup_of(&cx, &origin(2));
        let prep2 = coordinatize_center(&cx, &s2.center).unwrap();
        let kids2 = blowup_chart(&cx, &prep2, &s2, 2, 2).unwrap();
        assert_eq!(kids2.len(), 2);
        for kid in &kids2 {
            // J' = M' * I' exactly: dividing by the transported monomial
            // part must succeed in the next descent
            let s3 = setup_of(&kid.chart, &origin(2));
            assert!(s3.invariant < s2.invariant);
        }
    }

    #[test]
    fn tag_zero_is_smallest() {
        assert!(Tag::zero() < compute_tag(0, 0, Some((1, 1))));
    }
}
