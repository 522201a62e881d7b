//! Mobiles and the local resolution invariant.
//!
//! A mobile bundles the ideal to resolve, its control, and two stratified
//! divisor systems: the combinatorial handicap D (monomial factors already
//! accounted for) and the transversal handicap E (exceptional components the
//! descending flag must stay transversal to).  At a chosen point, `build_setup`
//! descends dimension by dimension: split off the D-monomial, measure the
//! residual order, compose with the transversality divisor, pick an osculating
//! hypersurface, and pass to the coefficient ideal inside it.  The recorded
//! per-level tags form the invariant whose lexicographic maximum selects the
//! next blowup center.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::ideal::Ideal;
use crate::poly::{Monomial, Polynomial, SubstitutionMap, Vars};

/// One component entry of a combinatorial handicap level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DEntry {
    pub label: u32,
    pub mult: u64,
}

/// Reference data one level of a parent setup leaves for its child charts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefLevel {
    pub tag: Tag,
    pub o: u64,
    pub c_next: u64,
    /// strict transform of the flag hypersurface chosen at this level, in the
    /// child chart's coordinates; where the truncated invariant is unchanged
    /// this transform osculates again and the next descent must reuse it,
    /// otherwise the transported monomial factors would not divide
    pub flag: Option<Polynomial>,
}

/// Handicap bookkeeping.  The root chart carries literal per-level lists.
/// After a blowup the child carries only the branch that applies where the
/// truncated invariant is unchanged; everywhere else the selection rules
/// reconstruct the levels from `e_full` during the next descent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandicapState {
    Literal {
        /// index 0 = top dimension, one entry per level
        d: Vec<Vec<DEntry>>,
        e: Vec<Vec<u32>>,
    },
    Transported {
        d_inside: Vec<Vec<DEntry>>,
        e_inside: Vec<Vec<u32>>,
        /// every transversal label alive in the chart, newest component included
        e_full: Vec<u32>,
        ref_levels: Vec<RefLevel>,
    },
}

impl HandicapState {
    pub fn empty(n: usize) -> HandicapState {
        HandicapState::Literal {
            d: vec![Vec::new(); n],
            e: vec![Vec::new(); n],
        }
    }

    /// All labels that participate in the transversal system.
    pub fn transversal_universe(&self) -> BTreeSet<u32> {
        match self {
            HandicapState::Literal { e, .. } => e.iter().flatten().copied().collect(),
            HandicapState::Transported { e_full, .. } => e_full.iter().copied().collect(),
        }
    }
}

/// The ideal to resolve together with its control and handicaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mobile {
    pub j: Vec<Polynomial>,
    pub c: u64,
    pub handicaps: HandicapState,
}

/// Per-level tag: residual order, composed order, and the shortcut measure
/// (order, label mask) when the level is purely combinatorial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tag {
    pub o: u64,
    pub k: u64,
    pub m_ord: u64,
    pub m_lab: u128,
}

impl Tag {
    pub fn zero() -> Tag {
        Tag { o: 0, k: 0, m_ord: 0, m_lab: 0 }
    }

    pub fn is_zero(&self) -> bool {
        *self == Tag::zero()
    }
}

/// The full invariant: one tag per level, top dimension first, zero-padded
/// below the stop level.  Comparison is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Invariant(pub Vec<Tag>);

impl Invariant {
    pub fn flatten(&self) -> Vec<u128> {
        let mut out = Vec::with_capacity(4 * self.0.len());
        for t in &self.0 {
            out.push(t.o as u128);
            out.push(t.k as u128);
            out.push(t.m_ord as u128);
            out.push(t.m_lab);
        }
        out
    }
}

/// Everything computed at one level of the descent.
#[derive(Debug, Clone)]
pub struct LevelData {
    /// dimension of the flag level this data lives on
    pub level: usize,
    /// control governing the ideal of this level
    pub c_next: u64,
    pub j: Vec<Polynomial>,
    pub m_poly: Polynomial,
    pub i_gens: Vec<Polynomial>,
    pub p: Ideal,
    pub q: Polynomial,
    pub k_gens: Vec<Polynomial>,
    pub o: u64,
    pub k_ord: u64,
    pub tag: Tag,
    /// combinatorial entries actually present at the point
    pub d_selected: Vec<DEntry>,
    /// transversal labels actually present at the point
    pub e_selected: Vec<u32>,
    /// full combinatorial entries of this level, whether or not they pass
    /// through the point; transport into child charts starts from these
    pub d_level: Vec<DEntry>,
    /// full transversal labels of this level
    pub e_level: Vec<u32>,
    /// defining equation of the next flag level, in chart coordinates
    pub flag_expr: Option<Polynomial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopKind {
    /// the composed ideal became a power of the flag equation
    BoldRegular { level: usize },
    /// the residual order dropped to zero; a shortcut of D-components is due
    Combinatorial { level: usize },
}

/// Result of the punctual descent: per-level data, the stop, the padded
/// invariant, and the center description in chart coordinates.
#[derive(Debug, Clone)]
pub struct Setup {
    pub levels: Vec<LevelData>,
    pub stop: StopKind,
    pub invariant: Invariant,
    pub center: Vec<Polynomial>,
    pub point: Vec<BigRational>,
}

impl Setup {
    /// Reference data for transporting handicaps into child charts.  The
    /// flags are filled in per chart by the blowup, which knows how each
    /// hypersurface transforms.
    pub fn ref_levels(&self) -> Vec<RefLevel> {
        self.levels
            .iter()
            .map(|l| RefLevel { tag: l.tag, o: l.o, c_next: l.c_next, flag: None })
            .collect()
    }
}

/// Inputs `build_setup` needs besides the point itself.
pub struct SetupInput<'a> {
    pub vars: &'a Vars,
    pub j: &'a [Polynomial],
    pub c: u64,
    pub handicaps: &'a HandicapState,
    /// label -> defining equation, in chart coordinates
    pub comps: &'a BTreeMap<u32, Polynomial>,
    /// take the last admissible osculating pick instead of the first
    pub alt_picks: bool,
}

pub(crate) fn factorial(c: u64) -> Result<u64> {
    if c > 20 {
        return Err(Error::ResourceLimit(format!(
            "control {c} too large for factorial weights"
        )));
    }
    Ok((1..=c).product::<u64>().max(1))
}

fn ideal_order_at_origin(gens: &[Polynomial]) -> Option<u64> {
    gens.iter().filter_map(|g| g.order_at_origin()).min()
}

/// Companion ideal: pad the residual ideal with the monomial factor so the
/// top locus at control c is cut out correctly when 0 < o < c.
pub fn companion_ideal(i: &Ideal, m: &Polynomial, o: u64, c: u64) -> Ideal {
    if o > 0 && o < c {
        let m_part = Ideal::new(i.vars(), vec![m.pow(o)]);
        i.power(c - o).sum(&m_part)
    } else {
        i.clone()
    }
}

/// Product of the given restricted transversal equations.  Each factor must
/// vanish to order exactly one at the point: a vanishing restriction means
/// the flag ran into the component, any other order breaks transversality.
/// An empty list yields the unit.
pub fn transversality_ideal(vars: &Vars, restricted: &[(u32, Polynomial)]) -> Result<Polynomial> {
    let mut q = Polynomial::one(vars);
    for (label, r) in restricted {
        if r.is_zero() {
            return Err(Error::Internal(format!(
                "flag contained in transversal component {label}"
            )));
        }
        if r.order_at_origin() != Some(1) {
            return Err(Error::Internal(format!(
                "transversal component {label} not transversal to the flag"
            )));
        }
        q = &q * r;
    }
    Ok(q)
}

/// Compose companion and transversality parts.  A trivial residual ideal
/// short-circuits to the unit ideal.
pub fn composition_ideal(p: &Ideal, q: &Polynomial, i: &Ideal) -> Ideal {
    if i.gens().iter().any(|g| g.is_unit()) {
        return Ideal::unit(p.vars());
    }
    if q.is_one() {
        return p.clone();
    }
    p.product(&Ideal::new(p.vars(), vec![q.clone()]))
}

/// Coefficient ideal of the given generators with respect to the variable in
/// slot `z`, at control `c`, with factorial-integerized exponents.
pub fn coefficient_ideal(gens: &[Polynomial], c: u64, z: usize) -> Result<Ideal> {
    if c == 0 {
        return Err(Error::Internal("coefficient ideal needs a positive control".into()));
    }
    let vars = gens
        .first()
        .ok_or_else(|| Error::Internal("coefficient ideal of empty generator list".into()))?
        .vars()
        .clone();
    let sub = vars.without(z);
    let fact = factorial(c)?;
    let mut total = Ideal::zero(&sub);
    for j in 0..c {
        let mut coeffs = Vec::new();
        for g in gens {
            if let Some(a) = g.expand_in_var(z).get(&(j as u32)) {
                let a = a.restrict_drop(z);
                if !a.is_zero() {
                    coeffs.push(a);
                }
            }
        }
        if coeffs.is_empty() {
            continue;
        }
        let e = fact / (c - j);
        let layer = Ideal::new(&sub, coeffs);
        if e > 64 && !(layer.gens().len() == 1 && layer.gens()[0].num_terms() == 1) {
            return Err(Error::ResourceLimit(format!(
                "coefficient exponent {e} too large for a non-monomial layer"
            )));
        }
        total = total.sum(&layer.power(e));
    }
    Ok(total)
}

/// Junior ideal: the coefficient ideal, with the two degenerate outcomes made
/// explicit.  A unit composed ideal yields the unit junior ideal; a vanishing
/// coefficient ideal flags bold regularity (the composed ideal is a power of
/// the flag equation).
pub fn junior_ideal(gens: &[Polynomial], c: u64, z: usize) -> Result<(Ideal, bool)> {
    let vars = gens
        .first()
        .ok_or_else(|| Error::Internal("junior ideal of empty generator list".into()))?
        .vars()
        .clone();
    let sub = vars.without(z);
    if gens.iter().any(|g| g.is_unit()) {
        return Ok((Ideal::unit(&sub), false));
    }
    let coeff = coefficient_ideal(gens, c, z)?;
    if coeff.is_zero_ideal() {
        Ok((Ideal::unit(&sub), true))
    } else {
        Ok((coeff, false))
    }
}

/// A tight shortcut and its measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortcut {
    pub ord: u64,
    pub lab: u128,
    pub members: Vec<u32>,
}

/// Among subsets of the combinatorial entries whose total multiplicity
/// reaches the control while every proper subset stays below it, pick the
/// maximum under (order, label mask).
pub fn maximal_tight_shortcut(entries: &[DEntry], c: u64) -> Result<Shortcut> {
    if entries.len() > 32 {
        return Err(Error::ResourceLimit(format!(
            "{} combinatorial components at one level",
            entries.len()
        )));
    }
    for e in entries {
        if e.label >= 128 {
            return Err(Error::ResourceLimit(format!(
                "component label {} exceeds the mask width",
                e.label
            )));
        }
    }
    let mut best: Option<Shortcut> = None;
    for mask in 1u64..(1u64 << entries.len()) {
        let mut ord = 0u64;
        let mut lab = 0u128;
        let mut members = Vec::new();
        let mut min_mult = u64::MAX;
        for (idx, e) in entries.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                ord += e.mult;
                lab |= 1u128 << e.label;
                members.push(e.label);
                min_mult = min_mult.min(e.mult);
            }
        }
        // tight: reaches the control while dropping the cheapest member
        // falls below it (a singleton's only proper subset is empty)
        if ord < c || (members.len() > 1 && ord - min_mult >= c) {
            continue;
        }
        let cand = Shortcut { ord, lab, members };
        let better = match &best {
            None => true,
            Some(b) => (cand.ord, cand.lab) > (b.ord, b.lab),
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| {
        Error::Internal("no tight shortcut: total multiplicity below the control".into())
    })
}

/// Build the per-level tag from the residual data.
pub fn compute_tag(o: u64, k: u64, m: Option<(u64, u128)>) -> Tag {
    match m {
        Some((m_ord, m_lab)) => {
            debug_assert_eq!(o, 0, "shortcut tags only occur at residual order zero");
            Tag { o: 0, k: 0, m_ord, m_lab }
        }
        None => Tag { o, k, m_ord: 0, m_lab: 0 },
    }
}

/// An osculating choice: the order-one derivative, normalized when a pivot
/// variable makes it a coordinate after a shear.
#[derive(Debug, Clone)]
pub struct OsculatingPick {
    pub g: Polynomial,
    pub pivot: Option<usize>,
}

fn multi_indices(nvars: usize, total: u32) -> Vec<Vec<u32>> {
    if nvars == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in multi_indices(nvars - 1, total - first) {
            let mut v = Vec::with_capacity(nvars);
            v.push(first);
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn derive(f: &Polynomial, beta: &[u32]) -> Polynomial {
    let mut g = f.clone();
    for (i, &e) in beta.iter().enumerate() {
        for _ in 0..e {
            g = g.partial_derivative(i);
        }
    }
    g
}

fn try_coordinate(g: &Polynomial) -> Option<(Polynomial, usize)> {
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

/// The largest monomial dividing every term.
fn monomial_content(g: &Polynomial) -> Option<Monomial> {
    let mut terms = g.terms();
    let (first, _) = terms.next()?;
    let mut exps: Vec<u32> = first.exps().to_vec();
    for (m, _) in terms {
        for (e, me) in exps.iter_mut().zip(m.exps()) {
            *e = (*e).min(*me);
        }
    }
    Some(Monomial::from_exps(exps))
}

/// Divide away polynomial factors that are invertible at the point, as far
/// as exact division allows.  Equations of divisor components missing the
/// point are such factors; so is the cofactor of the monomial content when
/// it has a nonzero constant term.  Removing them keeps the germ and frees
/// the candidate from unrelated global branches.
fn strip_unit_factors(mut g: Polynomial, units: &[Polynomial]) -> Polynomial {
    loop {
        let mut changed = false;
        for r in units {
            if r.degree() == 0 {
                continue;
            }
            while let Some(q) = g.exact_divide(r) {
                g = q;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(m) = monomial_content(&g) {
        if !m.is_unit() {
            let content =
                Polynomial::from_terms(g.vars(), vec![(m, num_traits::One::one())]);
            if let Some(h) = g.exact_divide(&content) {
                if h.order_at_origin() == Some(0) {
                    return content;
                }
            }
        }
    }
    g
}

/// Pick an order-one partial derivative of a minimal-order generator.  The
/// `units` are component equations invertible at the point, stripped from
/// every candidate; the `rejected` predicate vetoes picks whose zero set
/// would swallow a divisor component; `alt` switches to the last admissible
/// coordinate pick, which must lead to the same invariant.
pub fn osculating_hypersurface<F>(
    p: &Ideal,
    units: &[Polynomial],
    rejected: F,
    alt: bool,
) -> Result<OsculatingPick>
where
    F: Fn(&Polynomial) -> bool,
{
    let o = ideal_order_at_origin(p.gens())
        .ok_or_else(|| Error::Internal("osculating pick on a zero ideal".into()))?;
    if o == 0 {
        return Err(Error::Internal("osculating pick needs positive order".into()));
    }
    let mut candidates = Vec::new();
    for f in p.gens() {
        if f.order_at_origin() != Some(o) {
            continue;
        }
        for beta in multi_indices(p.vars().len(), (o - 1) as u32) {
            let g = derive(f, &beta);
            if g.order_at_origin() == Some(1) {
                candidates.push(strip_unit_factors(g, units));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Internal(
            "no order-one derivative found at the stated order".into(),
        ));
    }
    let admissible: Vec<Polynomial> =
        candidates.into_iter().filter(|g| !rejected(g)).collect();
    if admissible.is_empty() {
        return Err(Error::Internal(
            "every osculating candidate divides a divisor component".into(),
        ));
    }
    let coordinate: Vec<(Polynomial, usize)> =
        admissible.iter().filter_map(try_coordinate).collect();
    if let Some((g, v)) = if alt { coordinate.last() } else { coordinate.first() } {
        return Ok(OsculatingPick { g: g.clone(), pivot: Some(*v) });
    }
    Ok(OsculatingPick { g: admissible[0].clone(), pivot: None })
}

struct Descent {
    ring: Vars,
    j: Vec<Polynomial>,
    /// restricted component equations, kept even when the restriction dies
    comps: BTreeMap<u32, Polynomial>,
    /// chart-coordinate expression of each current ring variable
    back: Vec<Polynomial>,
    chart_ring: Vars,
    fresh: u32,
}

impl Descent {
    fn back_map(&self) -> SubstitutionMap {
        SubstitutionMap::new(self.ring.clone(), self.chart_ring.clone(), self.back.clone())
            .expect("back map images match the ring")
    }

    fn to_chart(&self, f: &Polynomial) -> Polynomial {
        self.back_map().apply(f)
    }

    fn fresh_name(&mut self) -> String {
        loop {
            let name = format!("u{}", self.fresh);
            self.fresh += 1;
            if self.ring.index_of(&name).is_none() && self.chart_ring.index_of(&name).is_none() {
                return name;
            }
        }
    }
}

/// Run the punctual descent at the given point and produce the invariant,
/// the stop kind, and the center description.
pub fn build_setup(inp: &SetupInput, point: &[BigRational]) -> Result<Setup> {
    Ok(build_setup_floor(inp, point, None)?
        .expect("descent without a floor always completes"))
}

/// Tracks whether the tag prefix computed so far still ties the floor.
struct FloorCheck<'a> {
    floor: Option<&'a Invariant>,
    tied: bool,
}

impl FloorCheck<'_> {
    /// true when the candidate is strictly below the floor and can be dropped
    fn below(&mut self, depth: usize, tag: Tag) -> bool {
        if !self.tied {
            return false;
        }
        let Some(fl) = self.floor else { return false };
        let floor_tag = fl.0.get(depth).copied().unwrap_or_else(Tag::zero);
        match tag.cmp(&floor_tag) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => {
                self.tied = false;
                false
            }
            std::cmp::Ordering::Equal => false,
        }
    }
}

/// The descent with early abandonment: once the partial invariant falls
/// strictly below `floor` at some level, deeper levels cannot change the
/// lexicographic comparison and the candidate point is discarded.  This is
/// what keeps the driver away from degenerate coordinatizations at points
/// that lose anyway.
pub fn build_setup_floor(
    inp: &SetupInput,
    point: &[BigRational],
    floor: Option<&Invariant>,
) -> Result<Option<Setup>> {
    let mut floor_check = FloorCheck { floor, tied: true };
    let n = inp.vars.len();
    if point.len() != n {
        return Err(Error::Internal("point arity does not match the chart".into()));
    }
    if inp.c == 0 {
        return Err(Error::Input("the control must be positive".into()));
    }
    let j_t: Vec<Polynomial> = inp
        .j
        .iter()
        .map(|g| g.translate(point))
        .filter(|g| !g.is_zero())
        .collect();
    if j_t.is_empty() {
        return Err(Error::Internal("descent on a zero ideal".into()));
    }
    let comps_chart: BTreeMap<u32, Polynomial> = inp
        .comps
        .iter()
        .map(|(l, eq)| (*l, eq.translate(point)))
        .collect();

    let mut st = Descent {
        ring: inp.vars.clone(),
        j: j_t,
        comps: comps_chart.clone(),
        back: (0..n).map(|i| Polynomial::var(inp.vars, i)).collect(),
        chart_ring: inp.vars.clone(),
        fresh: 1,
    };

    let (is_transported, ref_len) = match inp.handicaps {
        HandicapState::Literal { .. } => (false, 0usize),
        HandicapState::Transported { ref_levels, .. } => (true, ref_levels.len()),
    };
    let mut inside = is_transported;
    let mut assigned: BTreeSet<u32> = BTreeSet::new();
    // transported flags ride along the same translations and restrictions as
    // the component equations; while the descent stays inside the reference
    // tags they are the only admissible picks
    let mut ref_flags: Vec<Option<Polynomial>> = match inp.handicaps {
        HandicapState::Literal { .. } => Vec::new(),
        HandicapState::Transported { ref_levels, .. } => ref_levels
            .iter()
            .map(|r| r.flag.as_ref().map(|f| f.translate(point)))
            .collect(),
    };

    let mut levels: Vec<LevelData> = Vec::new();
    let mut flag_exprs: Vec<Polynomial> = Vec::new();
    let mut center_t: Vec<Polynomial> = Vec::new();
    let mut stop: Option<StopKind> = None;

    for depth in 0..n {
        let level = n - depth;
        let c_next = if depth == 0 { inp.c } else { levels[depth - 1].k_ord };

        // combinatorial handicap branch for this level
        let d_branch: Vec<DEntry> = match inp.handicaps {
            HandicapState::Literal { d, .. } => d.get(depth).cloned().unwrap_or_default(),
            HandicapState::Transported { d_inside, .. } => {
                if inside {
                    if depth < ref_len {
                        d_inside[depth].clone()
                    } else {
                        return Err(Error::Internal(
                            "truncated invariant failed to drop below the previous stop level"
                                .into(),
                        ));
                    }
                } else {
                    Vec::new()
                }
            }
        };
        let mut d_selected = Vec::new();
        let mut m_poly = Polynomial::one(&st.ring);
        for entry in &d_branch {
            let r = st.comps.get(&entry.label).ok_or_else(|| {
                Error::Internal(format!(
                    "combinatorial handicap references unknown component {}",
                    entry.label
                ))
            })?;
            if r.is_zero() {
                return Err(Error::Internal(format!(
                    "flag contained in combinatorial component {}",
                    entry.label
                )));
            }
            if r.order_at_origin() == Some(0) {
                continue; // not through the point
            }
            m_poly = &m_poly * &r.pow(entry.mult);
            d_selected.push(entry.clone());
        }

        let ord_j = ideal_order_at_origin(&st.j)
            .ok_or_else(|| Error::Internal("level ideal vanished during descent".into()))?;
        if ord_j < c_next {
            return Err(Error::Internal(format!(
                "level ideal order {ord_j} fell below its control {c_next}"
            )));
        }

        let i_gens: Vec<Polynomial> = st
            .j
            .iter()
            .map(|g| {
                g.exact_divide(&m_poly).ok_or_else(|| {
                    Error::Internal("monomial factor does not divide the level ideal".into())
                })
            })
            .collect::<Result<_>>()?;
        let o = ideal_order_at_origin(&i_gens)
            .ok_or_else(|| Error::Internal("residual ideal vanished".into()))?;

        if o == 0 {
            let sc = maximal_tight_shortcut(&d_selected, c_next)?;
            let tag = compute_tag(0, 0, Some((sc.ord, sc.lab)));
            levels.push(LevelData {
                level,
                c_next,
                j: st.j.clone(),
                m_poly: m_poly.clone(),
                i_gens,
                p: Ideal::zero(&st.ring),
                q: Polynomial::one(&st.ring),
                k_gens: Vec::new(),
                o: 0,
                k_ord: 0,
                tag,
                d_selected,
                e_selected: Vec::new(),
                d_level: d_branch,
                e_level: Vec::new(),
                flag_expr: None,
            });
            center_t = flag_exprs.clone();
            for label in &sc.members {
                center_t.push(comps_chart[label].clone());
            }
            stop = Some(StopKind::Combinatorial { level });
            break;
        }

        // transversal handicap branch
        let e_branch: Vec<u32> = match inp.handicaps {
            HandicapState::Literal { e, .. } => e.get(depth).cloned().unwrap_or_default(),
            HandicapState::Transported { e_inside, e_full, ref_levels, .. } => {
                let inside_o =
                    inside && depth < ref_len && ref_levels[depth].o == o && o > 0;
                if inside_o {
                    for l in &e_inside[depth] {
                        assigned.insert(*l);
                    }
                    e_inside[depth].clone()
                } else {
                    let rem: Vec<u32> =
                        e_full.iter().filter(|l| !assigned.contains(l)).copied().collect();
                    for l in e_full {
                        assigned.insert(*l);
                    }
                    rem
                }
            }
        };
        let mut e_selected = Vec::new();
        let mut e_restricted = Vec::new();
        for label in &e_branch {
            let r = st.comps.get(label).ok_or_else(|| {
                Error::Internal(format!(
                    "transversal handicap references unknown component {label}"
                ))
            })?;
            if r.is_zero() {
                return Err(Error::Internal(format!(
                    "flag contained in transversal component {label}"
                )));
            }
            if r.order_at_origin() == Some(0) {
                continue;
            }
            e_selected.push(*label);
            e_restricted.push((*label, r.clone()));
        }
        let q_poly = transversality_ideal(&st.ring, &e_restricted)?;

        let i_ideal = Ideal::new(&st.ring, i_gens.clone());
        let p_ideal = companion_ideal(&i_ideal, &m_poly, o, c_next);
        let k_ideal = composition_ideal(&p_ideal, &q_poly, &i_ideal);
        let k_gens: Vec<Polynomial> = k_ideal.gens().to_vec();
        let k_ord = ideal_order_at_origin(&k_gens)
            .ok_or_else(|| Error::Internal("composed ideal vanished".into()))?;
        let tag = compute_tag(o, k_ord, None);
        if floor_check.below(depth, tag) {
            return Ok(None);
        }

        if is_transported {
            if let HandicapState::Transported { ref_levels, .. } = inp.handicaps {
                inside = inside && depth < ref_len && ref_levels[depth].tag == tag;
            }
        }

        if level == 1 {
            // one variable left: the composed ideal is a power of it
            let v_poly = Polynomial::var(&st.ring, 0);
            let pw = v_poly.pow(k_ord);
            for g in &k_gens {
                if g.exact_divide(&pw).is_none() {
                    return Err(Error::Internal(
                        "composed ideal not divisible by its flag power on the curve level"
                            .into(),
                    ));
                }
            }
            let z_expr = st.back[0].clone();
            levels.push(LevelData {
                level,
                c_next,
                j: st.j.clone(),
                m_poly,
                i_gens,
                p: p_ideal,
                q: q_poly,
                k_gens,
                o,
                k_ord,
                tag,
                d_selected,
                e_selected,
                d_level: d_branch,
                e_level: e_branch,
                flag_expr: Some(z_expr.clone()),
            });
            flag_exprs.push(z_expr);
            center_t = flag_exprs.clone();
            stop = Some(StopKind::BoldRegular { level: 1 });
            break;
        }

        let pick = if inside {
            // equiconstant so far: the strict transform of the parent's flag
            // osculates here and keeps the monomial split exact
            let f = ref_flags[depth].clone().ok_or_else(|| {
                Error::Internal(
                    "equiconstant point lies outside the transported flag".into(),
                )
            })?;
            if f.order_at_origin() != Some(1) {
                return Err(Error::Internal(
                    "transported flag misses the equiconstant point".into(),
                ));
            }
            let (g, v) = try_coordinate(&f).ok_or_else(|| {
                Error::Internal("transported flag is not coordinable".into())
            })?;
            OsculatingPick { g, pivot: Some(v) }
        } else {
            // a pick may swallow a component equation only when no deeper
            // level still references that component through the handicaps;
            // otherwise its restriction to the flag would vanish
            let mut needed: BTreeSet<u32> = BTreeSet::new();
            match inp.handicaps {
                HandicapState::Literal { d, e } => {
                    for lvl in depth + 1..n {
                        if let Some(entries) = d.get(lvl) {
                            needed.extend(entries.iter().map(|en| en.label));
                        }
                        if let Some(labels) = e.get(lvl) {
                            needed.extend(labels.iter().copied());
                        }
                    }
                }
                HandicapState::Transported { d_inside, e_inside, e_full, .. } => {
                    if inside {
                        for lvl in depth + 1..ref_len {
                            needed.extend(d_inside[lvl].iter().map(|en| en.label));
                            needed.extend(e_inside[lvl].iter().copied());
                        }
                    }
                    needed.extend(e_full.iter().filter(|l| !assigned.contains(l)));
                }
            }
            let comps_for_reject: Vec<Polynomial> = st
                .comps
                .iter()
                .filter(|(l, r)| needed.contains(l) && !r.is_zero())
                .map(|(_, r)| r.clone())
                .collect();
            let unit_comps: Vec<Polynomial> = st
                .comps
                .values()
                .filter(|r| r.order_at_origin() == Some(0))
                .cloned()
                .collect();
            let reject =
                |g: &Polynomial| comps_for_reject.iter().any(|r| r.exact_divide(g).is_some());
            osculating_hypersurface(&p_ideal, &unit_comps, reject, inp.alt_picks)?
        };

        match pick.pivot {
            Some(v) => {
                let g = pick.g;
                let name = st.fresh_name();
                let ring2 = st.ring.with_renamed(v, &name)?;
                let h = &g - &Polynomial::var(&st.ring, v);
                debug_assert!(!h.uses_var(v), "shear remainder must avoid the pivot");
                let mut images: Vec<Polynomial> = (0..st.ring.len())
                    .map(|i| Polynomial::var(&ring2, i))
                    .collect();
                images[v] = &images[v] - &h.with_ring(&ring2);
                let shear = SubstitutionMap::new(st.ring.clone(), ring2.clone(), images)?;
                let z_expr = st.to_chart(&g);

                let k_sheared: Vec<Polynomial> = k_gens.iter().map(|f| shear.apply(f)).collect();
                let (junior, bold) = junior_ideal(&k_sheared, k_ord, v)?;

                levels.push(LevelData {
                    level,
                    c_next,
                    j: st.j.clone(),
                    m_poly,
                    i_gens,
                    p: p_ideal,
                    q: q_poly,
                    k_gens,
                    o,
                    k_ord,
                    tag,
                    d_selected,
                    e_selected,
                    d_level: d_branch,
                    e_level: e_branch,
                    flag_expr: Some(z_expr.clone()),
                });
                flag_exprs.push(z_expr.clone());

                if bold {
                    center_t = flag_exprs.clone();
                    stop = Some(StopKind::BoldRegular { level });
                    break;
                }

                st.comps = st
                    .comps
                    .iter()
                    .map(|(l, r)| (*l, shear.apply(r).restrict_drop(v)))
                    .collect();
                for rf in ref_flags.iter_mut().flatten() {
                    *rf = shear.apply(rf).restrict_drop(v);
                }
                st.back.remove(v);
                st.ring = ring2.without(v);
                st.j = junior.gens().to_vec();
                debug_assert!(st.j.iter().all(|f| *f.vars() == st.ring));
            }
            None => {
                let g = pick.g;
                let pw = g.pow(k_ord);
                let divisible = k_gens.iter().all(|f| f.exact_divide(&pw).is_some());
                if divisible {
                    let z_expr = st.to_chart(&g);
                    levels.push(LevelData {
                        level,
                        c_next,
                        j: st.j.clone(),
                        m_poly,
                        i_gens,
                        p: p_ideal,
                        q: q_poly,
                        k_gens,
                        o,
                        k_ord,
                        tag,
                        d_selected,
                        e_selected,
                        d_level: d_branch,
                        e_level: e_branch,
                        flag_expr: Some(z_expr.clone()),
                    });
                    flag_exprs.push(z_expr);
                    center_t = flag_exprs.clone();
                    stop = Some(StopKind::BoldRegular { level });
                    break;
                }
                return Err(Error::Internal(format!(
                    "osculating hypersurface {g} is not coordinable at this stratum (level {level}, composed order {k_ord})"
                )));
            }
        }
    }

    let stop = stop.ok_or_else(|| Error::Internal("descent ended without a stop".into()))?;
    let mut tags: Vec<Tag> = levels.iter().map(|l| l.tag).collect();
    tags.resize(n, Tag::zero());

    let neg: Vec<BigRational> = point.iter().map(|p| -p.clone()).collect();
    let center: Vec<Polynomial> = center_t.iter().map(|f| f.translate(&neg)).collect();
    let mut levels = levels;
    for l in &mut levels {
        if let Some(f) = &l.flag_expr {
            l.flag_expr = Some(f.translate(&neg));
        }
    }

    Ok(Some(Setup {
        levels,
        stop,
        invariant: Invariant(tags),
        center,
        point: point.to_vec(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rat_int;

    fn vars(names: &[&str]) -> Vars {
        Vars::new(names.iter().copied()).unwrap()
    }

    fn p(v: &Vars, s: &str) -> Polynomial {
        Polynomial::parse(v, s).unwrap()
    }

    fn origin(n: usize) -> Vec<BigRational> {
        vec![rat_int(0); n]
    }

    fn no_comps() -> BTreeMap<u32, Polynomial> {
        BTreeMap::new()
    }

    #[test]
    fn companion_pads_with_the_monomial_factor() {
        let v = vars(&["x", "y"]);
        let i = Ideal::new(&v, vec![p(&v, "y^2 - x^3")]);
        let m = p(&v, "x^4");
        let c = companion_ideal(&i, &m, 2, 3);
        let want = Ideal::new(&v, vec![p(&v, "y^2 - x^3"), p(&v, "x^8")]);
        assert_eq!(c, want);
        // at or above the control the residual ideal stands alone
        assert_eq!(companion_ideal(&i, &m, 3, 3), i);
        assert_eq!(companion_ideal(&i, &m, 5, 3), i);
        assert_eq!(companion_ideal(&i, &m, 0, 3), i);
    }

    #[test]
    fn transversality_product_and_tangency_error() {
        let v = vars(&["x", "y"]);
        assert!(transversality_ideal(&v, &[]).unwrap().is_one());
        let q = transversality_ideal(&v, &[(1, p(&v, "x"))]).unwrap();
        assert_eq!(q, p(&v, "x"));
        let q2 = transversality_ideal(&v, &[(1, p(&v, "x")), (2, p(&v, "y"))]).unwrap();
        assert_eq!(q2, p(&v, "x*y"));
        // restriction of x to the flag u = x + y^2 is -y^2: order two, not one
        let bad = transversality_ideal(&v, &[(1, p(&v, "-y^2"))]);
        assert!(bad.is_err());
        let contained = transversality_ideal(&v, &[(1, Polynomial::zero(&v))]);
        assert!(contained.is_err());
    }

    #[test]
    fn composition_short_circuits_on_unit_residual() {
        let v = vars(&["x", "y"]);
        let pi = Ideal::new(&v, vec![p(&v, "y^2 - x")]);
        let q = p(&v, "x");
        let i = Ideal::new(&v, vec![p(&v, "y^2 - x")]);
        let k = composition_ideal(&pi, &q, &i);
        assert_eq!(k, Ideal::new(&v, vec![p(&v, "x*y^2 - x^2")]));
        let unit_i = Ideal::unit(&v);
        assert!(composition_ideal(&pi, &q, &unit_i).gens()[0].is_unit());
        let one = Polynomial::one(&v);
        assert_eq!(composition_ideal(&pi, &one, &i), pi);
    }

    #[test]
    fn osculating_picks_follow_the_examples() {
        let v = vars(&["x", "y"]);
        let i = Ideal::new(&v, vec![p(&v, "y^2 - x^3")]);
        let pick = osculating_hypersurface(&i, &[], |_| false, false).unwrap();
        assert_eq!(pick.g, p(&v, "y"));
        assert_eq!(pick.pivot, Some(1));

        let v3 = vars(&["x", "y", "z"]);
        let i3 = Ideal::new(&v3, vec![p(&v3, "x^2 - y^2*z")]);
        let pick3 = osculating_hypersurface(&i3, &[], |_| false, false).unwrap();
        assert_eq!(pick3.g, p(&v3, "x"));
        assert_eq!(pick3.pivot, Some(0));

        // the first order-one derivative in lex order is the y-partial
        let isq = Ideal::new(&v, vec![p(&v, "(x+y)^2 + y^5")]);
        let pick2 = osculating_hypersurface(&isq, &[], |_| false, false).unwrap();
        assert_eq!(pick2.g, p(&v, "x + y + 5/2*y^4"));
        assert_eq!(pick2.pivot, Some(0));
    }

    #[test]
    fn osculating_rejection_skips_divisor_aligned_picks() {
        let v = vars(&["x", "y"]);
        // both partials of y^2 - x^2 have order one; vetoing picks that
        // divide the component y must fall through to the x-direction
        let i = Ideal::new(&v, vec![p(&v, "y^2 - x^2")]);
        let comp = p(&v, "y");
        let reject = |g: &Polynomial| comp.exact_divide(g).is_some();
        let pick = osculating_hypersurface(&i, &[], reject, false).unwrap();
        assert!(comp.exact_divide(&pick.g).is_none());
        assert_eq!(pick.g, p(&v, "x"));
    }

    #[test]
    fn coefficient_ideal_examples() {
        let v = vars(&["x", "y"]);
        let f = p(&v, "y^2 - x^3");
        let c = coefficient_ideal(&[f], 2, 1).unwrap();
        let vx = vars(&["x"]);
        assert_eq!(c, Ideal::new(&vx, vec![p(&vx, "x^3")]));

        let v3 = vars(&["x", "y", "z"]);
        let g = p(&v3, "x^2 - y^2*z");
        let c3 = coefficient_ideal(&[g], 2, 0).unwrap();
        let vyz = vars(&["y", "z"]);
        assert_eq!(c3, Ideal::new(&vyz, vec![p(&vyz, "y^2*z")]));

        // after the shear u = x + y the square has no coefficients below c
        let vu = vars(&["u", "y"]);
        let sq = p(&vu, "u^2");
        let cz = coefficient_ideal(&[sq], 2, 0).unwrap();
        assert!(cz.is_zero_ideal());
    }

    #[test]
    fn junior_ideal_flags_bold_regularity() {
        let v = vars(&["x", "y"]);
        let (j, bold) = junior_ideal(&[p(&v, "y^2 - x^3")], 2, 1).unwrap();
        assert!(!bold);
        let vx = vars(&["x"]);
        assert_eq!(j, Ideal::new(&vx, vec![p(&vx, "x^3")]));

        let vu = vars(&["u", "y"]);
        let (ju, bold_u) = junior_ideal(&[p(&vu, "u^2")], 2, 0).unwrap();
        assert!(bold_u);
        assert!(ju.gens()[0].is_unit());

        let (jk, bold_k) = junior_ideal(&[Polynomial::one(&v)], 2, 1).unwrap();
        assert!(!bold_k);
        assert!(jk.gens()[0].is_unit());
    }

    #[test]
    fn shortcut_enumeration_matches_frozen_values() {
        let entries = vec![
            DEntry { label: 1, mult: 2 },
            DEntry { label: 2, mult: 3 },
        ];
        let s4 = maximal_tight_shortcut(&entries, 4).unwrap();
        assert_eq!(s4.ord, 5);
        assert_eq!(s4.members, vec![1, 2]);
        assert_eq!(s4.lab, (1u128 << 1) | (1u128 << 2));

        let s3 = maximal_tight_shortcut(&entries, 3).unwrap();
        assert_eq!(s3.ord, 3);
        assert_eq!(s3.members, vec![2]);
        assert_eq!(s3.lab, 1u128 << 2);

        let single = vec![DEntry { label: 7, mult: 5 }];
        let s1 = maximal_tight_shortcut(&single, 4).unwrap();
        assert_eq!(s1.ord, 5);
        assert_eq!(s1.members, vec![7]);
        assert_eq!(s1.lab, 1u128 << 7);

        assert!(maximal_tight_shortcut(&entries, 6).is_err());
    }

    #[test]
    fn tags_and_invariant_order() {
        assert_eq!(compute_tag(2, 3, None), Tag { o: 2, k: 3, m_ord: 0, m_lab: 0 });
        let m = compute_tag(0, 0, Some((5, 6)));
        assert_eq!(m, Tag { o: 0, k: 0, m_ord: 5, m_lab: 6 });
        let a = Invariant(vec![compute_tag(2, 2, None), compute_tag(3, 3, None)]);
        let b = Invariant(vec![compute_tag(2, 2, None), compute_tag(2, 4, None)]);
        assert!(b < a);
        let c = Invariant(vec![compute_tag(1, 2, None), compute_tag(9, 9, None)]);
        assert!(c < b);
    }

    #[test]
    fn descent_on_the_cusp() {
        let v = vars(&["x", "y"]);
        let j = vec![p(&v, "y^2 - x^3")];
        let h = HandicapState::empty(2);
        let inp = SetupInput {
            vars: &v,
            j: &j,
            c: 1,
            handicaps: &h,
            comps: &no_comps(),
            alt_picks: false,
        };
        let s = build_setup(&inp, &origin(2)).unwrap();
        assert_eq!(
            s.invariant,
            Invariant(vec![compute_tag(2, 2, None), compute_tag(3, 3, None)])
        );
        assert_eq!(s.stop, StopKind::BoldRegular { level: 1 });
        assert_eq!(s.center, vec![p(&v, "y"), p(&v, "x")]);
        assert_eq!(s.levels[0].c_next, 1);
        assert_eq!(s.levels[1].c_next, 2);
    }

    #[test]
    fn descent_on_a_smooth_hypersurface_stops_at_the_top() {
        let v = vars(&["x", "y"]);
        let j = vec![p(&v, "x")];
        let h = HandicapState::empty(2);
        let inp = SetupInput {
            vars: &v,
            j: &j,
            c: 1,
            handicaps: &h,
            comps: &no_comps(),
            alt_picks: false,
        };
        let s = build_setup(&inp, &origin(2)).unwrap();
        assert_eq!(s.invariant, Invariant(vec![compute_tag(1, 1, None), Tag::zero()]));
        assert_eq!(s.stop, StopKind::BoldRegular { level: 2 });
        assert_eq!(s.center, vec![p(&v, "x")]);
    }

    #[test]
    fn descent_with_a_pure_monomial_stops_combinatorially() {
        let v = vars(&["x", "y"]);
        let j = vec![p(&v, "x^2*y^3")];
        let mut comps = BTreeMap::new();
        comps.insert(1, p(&v, "x"));
        comps.insert(2, p(&v, "y"));
        let h = HandicapState::Literal {
            d: vec![
                vec![DEntry { label: 1, mult: 2 }, DEntry { label: 2, mult: 3 }],
                Vec::new(),
            ],
            e: vec![Vec::new(), Vec::new()],
        };
        let inp = SetupInput {
            vars: &v,
            j: &j,
            c: 4,
            handicaps: &h,
            comps: &comps,
            alt_picks: false,
        };
        let s = build_setup(&inp, &origin(2)).unwrap();
        assert_eq!(
            s.invariant,
            Invariant(vec![compute_tag(0, 0, Some((5, 6))), Tag::zero()])
        );
        assert_eq!(s.stop, StopKind::Combinatorial { level: 2 });
        assert_eq!(s.center, vec![p(&v, "x"), p(&v, "y")]);
    }

    #[test]
    fn descent_on_the_umbrella_and_flag_independence() {
        let v = vars(&["x", "y", "z"]);
        let j = vec![p(&v, "x^2 - y^2*z")];
        let h = HandicapState::empty(3);
        let want = Invariant(vec![
            compute_tag(2, 2, None),
            compute_tag(3, 3, None),
            compute_tag(6, 6, None),
        ]);
        for alt in [false, true] {
            let inp = SetupInput {
                vars: &v,
                j: &j,
                c: 1,
                handicaps: &h,
                comps: &no_comps(),
                alt_picks: alt,
            };
            let s = build_setup(&inp, &origin(3)).unwrap();
            assert_eq!(s.invariant, want, "alt_picks = {alt}");
            assert_eq!(s.stop, StopKind::BoldRegular { level: 1 });
            if alt {
                // the alternative flag swaps the lower coordinates but cuts
                // out the same point
                assert_eq!(s.center, vec![p(&v, "x"), p(&v, "z"), p(&v, "y")]);
            } else {
                assert_eq!(s.center, vec![p(&v, "x"), p(&v, "y"), p(&v, "z")]);
            }
        }
    }

    #[test]
    fn descent_translates_off_origin_points() {
        let v = vars(&["x", "y"]);
        // cusp shifted to (1, 2)
        let j = vec![p(&v, "(y - 2)^2 - (x - 1)^3")];
        let h = HandicapState::empty(2);
        let inp = SetupInput {
            vars: &v,
            j: &j,
            c: 1,
            handicaps: &h,
            comps: &no_comps(),
            alt_picks: false,
        };
        let pt = vec![rat_int(1), rat_int(2)];
        let s = build_setup(&inp, &pt).unwrap();
        assert_eq!(
            s.invariant,
            Invariant(vec![compute_tag(2, 2, None), compute_tag(3, 3, None)])
        );
        assert_eq!(s.center, vec![p(&v, "y - 2"), p(&v, "x - 1")]);
    }

    #[test]
    fn bold_regular_support_without_a_coordinate() {
        let v = vars(&["x", "y"]);
        // smooth at (1, 1) but the only order-one derivative has a
        // non-constant pivot coefficient; the support equation takes over
        let j = vec![p(&v, "1 - x^3*y")];
        let h = HandicapState::empty(2);
        let inp = SetupInput {
            vars: &v,
            j: &j,
            c: 1,
            handicaps: &h,
            comps: &no_comps(),
            alt_picks: false,
        };
        let pt = vec![rat_int(1), rat_int(1)];
        let s = build_setup(&inp, &pt).unwrap();
        assert_eq!(s.invariant, Invariant(vec![compute_tag(1, 1, None), Tag::zero()]));
        assert_eq!(s.stop, StopKind::BoldRegular { level: 2 });
        assert_eq!(s.center.len(), 1);
        // the support equation cuts out the same hypersurface
        let scaled = s.center[0].monic();
        let want = p(&v, "1 - x^3*y").monic();
        assert_eq!(scaled, want);
    }
}
