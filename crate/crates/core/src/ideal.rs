//! Ideals and Groebner basis computations.
//!
//! The engine is a plain Buchberger loop with the coprimality and chain
//! criteria, full normal-form reduction, and hard budgets on basis degree and
//! processed pairs so runaway computations surface as `ResourceLimit` instead
//! of hanging.  Every derived question (membership, triviality, saturation,
//! elimination, dimension, smoothness) goes through reduced bases, which are
//! deterministic: monic, minimal, tail-reduced, sorted by leading monomial.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::poly::{Monomial, MonomialOrder, Polynomial, Vars};

/// Budgets for a single basis computation.
#[derive(Debug, Clone)]
pub struct GbConfig {
    pub max_degree: u64,
    pub max_pairs: usize,
}

impl Default for GbConfig {
    fn default() -> Self {
        GbConfig {
            max_degree: 64,
            max_pairs: 1_000_000,
        }
    }
}

fn lead<'a>(f: &'a Polynomial, order: &MonomialOrder) -> (&'a Monomial, &'a BigRational) {
    match order {
        MonomialOrder::GrevLex => f.leading().expect("nonzero polynomial"),
        _ => f.leading_under(order).expect("nonzero polynomial"),
    }
}

/// Full normal form of `f` modulo `basis`: no term of the result is divisible
/// by any basis leading monomial.
pub fn normal_form(f: &Polynomial, basis: &[Polynomial], order: &MonomialOrder) -> Polynomial {
    let vars = f.vars().clone();
    let leads: Vec<(&Monomial, &BigRational)> = basis.iter().map(|g| lead(g, order)).collect();
    let mut work = f.clone();
    let mut rem = Polynomial::zero(&vars);
    'outer: while !work.is_zero() {
        let (lm, lc) = lead(&work, order);
        let (lm, lc) = (lm.clone(), lc.clone());
        for (g, (gm, gc)) in basis.iter().zip(&leads) {
            if let Some(q) = lm.try_div(gm) {
                let t = g.mul_term(&q, &(&lc / *gc));
                work = &work - &t;
                continue 'outer;
            }
        }
        rem.add_term(lm.clone(), lc.clone());
        work.add_term(lm, -lc);
    }
    rem
}

fn s_polynomial(f: &Polynomial, g: &Polynomial, order: &MonomialOrder) -> Polynomial {
    let (fm, fc) = lead(f, order);
    let (gm, gc) = lead(g, order);
    let l = fm.lcm(gm);
    let a = f.mul_term(&l.try_div(fm).unwrap(), &(BigRational::one() / fc.clone()));
    let b = g.mul_term(&l.try_div(gm).unwrap(), &(BigRational::one() / gc.clone()));
    &a - &b
}

/// Reduced Groebner basis of the given generators.
pub fn groebner_basis(
    gens: &[Polynomial],
    order: &MonomialOrder,
    cfg: &GbConfig,
) -> Result<Vec<Polynomial>> {
    let vars = match gens.first() {
        Some(g) => g.vars().clone(),
        None => return Ok(Vec::new()),
    };
    let mut basis: Vec<Polynomial> = Vec::new();
    for g in gens {
        assert_eq!(*g.vars(), vars, "mixed rings in basis input");
        if !g.is_zero() {
            basis.push(g.monic());
        }
    }
    if basis.is_empty() {
        return Ok(Vec::new());
    }

    let mut pairs: BTreeSet<(u64, usize, usize)> = BTreeSet::new();
    let mut treated: BTreeSet<(usize, usize)> = BTreeSet::new();
    let pair_key = |basis: &[Polynomial], i: usize, j: usize| {
        let l = lead(&basis[i], order).0.lcm(lead(&basis[j], order).0);
        (l.degree(), i, j)
    };
    for i in 0..basis.len() {
        for j in (i + 1)..basis.len() {
            pairs.insert(pair_key(&basis, i, j));
        }
    }

    let mut processed = 0usize;
    while let Some(&(_, i, j)) = pairs.iter().next() {
        pairs.remove(&(pair_key(&basis, i, j).0, i, j));
        treated.insert((i, j));
        processed += 1;
        if processed > cfg.max_pairs {
            return Err(Error::ResourceLimit(format!(
                "basis computation exceeded {} pairs",
                cfg.max_pairs
            )));
        }
        let (im, _) = lead(&basis[i], order);
        let (jm, _) = lead(&basis[j], order);
        let l = im.lcm(jm);
        // coprimality criterion
        if l.degree() == im.degree() + jm.degree() {
            continue;
        }
        // chain criterion
        let mut skip = false;
        for k in 0..basis.len() {
            if k == i || k == j {
                continue;
            }
            let (km, _) = lead(&basis[k], order);
            if km.divides(&l)
                && treated.contains(&(i.min(k), i.max(k)))
                && treated.contains(&(j.min(k), j.max(k)))
            {
                skip = true;
                break;
            }
        }
        if skip {
            continue;
        }
        let s = s_polynomial(&basis[i], &basis[j], order);
        let nf = normal_form(&s, &basis, order);
        if nf.is_zero() {
            continue;
        }
        if nf.degree() > cfg.max_degree {
            return Err(Error::ResourceLimit(format!(
                "basis element degree {} exceeds cap {}",
                nf.degree(),
                cfg.max_degree
            )));
        }
        let nf = nf.monic();
        let new = basis.len();
        basis.push(nf);
        for k in 0..new {
            pairs.insert(pair_key(&basis, k, new));
        }
    }

    Ok(reduce_basis(basis, order))
}

fn reduce_basis(mut basis: Vec<Polynomial>, order: &MonomialOrder) -> Vec<Polynomial> {
    // minimal: drop elements whose leading monomial another one divides
    let mut keep = vec![true; basis.len()];
    for i in 0..basis.len() {
        if !keep[i] {
            continue;
        }
        for j in 0..basis.len() {
            if i == j || !keep[j] {
                continue;
            }
            let (im, _) = lead(&basis[i], order);
            let (jm, _) = lead(&basis[j], order);
            if jm.divides(im) && !(im == jm && j > i) {
                keep[i] = false;
                break;
            }
        }
    }
    let mut minimal: Vec<Polynomial> = basis
        .drain(..)
        .zip(keep)
        .filter_map(|(g, k)| if k { Some(g) } else { None })
        .collect();
    // tail-reduce each element against the others
    loop {
        let mut changed = false;
        for i in 0..minimal.len() {
            let others: Vec<Polynomial> = minimal
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, g)| g.clone())
                .collect();
            let nf = normal_form(&minimal[i], &others, order).monic();
            if nf != minimal[i] {
                minimal[i] = nf;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    minimal.sort_by(|a, b| order.cmp(lead(a, order).0, lead(b, order).0));
    minimal
}

/// Finitely generated ideal in a fixed ring.  Generators are canonicalized
/// on construction: zeros dropped, leading coefficients scaled to one,
/// duplicates merged, deterministic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ideal {
    vars: Vars,
    gens: Vec<Polynomial>,
}

fn canonical_gen_cmp(a: &Polynomial, b: &Polynomial) -> std::cmp::Ordering {
    let la = a.leading().expect("nonzero").0;
    let lb = b.leading().expect("nonzero").0;
    la.cmp(lb).then_with(|| a.to_string().cmp(&b.to_string()))
}

impl Ideal {
    pub fn new(vars: &Vars, gens: Vec<Polynomial>) -> Ideal {
        let mut clean: Vec<Polynomial> = Vec::new();
        for g in gens {
            assert_eq!(*g.vars(), *vars, "generator ring mismatch");
            if g.is_zero() {
                continue;
            }
            let g = g.monic();
            if !clean.contains(&g) {
                clean.push(g);
            }
        }
        clean.sort_by(canonical_gen_cmp);
        Ideal {
            vars: vars.clone(),
            gens: clean,
        }
    }

    pub fn zero(vars: &Vars) -> Ideal {
        Ideal::new(vars, Vec::new())
    }

    pub fn unit(vars: &Vars) -> Ideal {
        Ideal::new(vars, vec![Polynomial::one(vars)])
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn gens(&self) -> &[Polynomial] {
        &self.gens
    }

    pub fn is_zero_ideal(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn sum(&self, other: &Ideal) -> Ideal {
        assert_eq!(self.vars, other.vars, "ring mismatch in ideal sum");
        let mut gens = self.gens.clone();
        gens.extend(other.gens.iter().cloned());
        Ideal::new(&self.vars, gens)
    }

    pub fn product(&self, other: &Ideal) -> Ideal {
        assert_eq!(self.vars, other.vars, "ring mismatch in ideal product");
        let mut gens = Vec::new();
        for a in &self.gens {
            for b in &other.gens {
                gens.push(a * b);
            }
        }
        Ideal::new(&self.vars, gens)
    }

    pub fn power(&self, e: u64) -> Ideal {
        if e == 0 {
            return Ideal::unit(&self.vars);
        }
        let mut acc = self.clone();
        for _ in 1..e {
            acc = acc.product(self);
        }
        acc
    }

    pub fn groebner(&self, order: &MonomialOrder) -> Result<Vec<Polynomial>> {
        groebner_basis(&self.gens, order, &GbConfig::default())
    }

    /// Whether the ideal is the whole ring.
    pub fn is_trivial(&self) -> Result<bool> {
        if self.gens.iter().any(Polynomial::is_unit) {
            return Ok(true);
        }
        let gb = self.groebner(&MonomialOrder::GrevLex)?;
        Ok(gb.len() == 1 && gb[0].is_one())
    }

    pub fn contains(&self, f: &Polynomial) -> Result<bool> {
        assert_eq!(*f.vars(), self.vars, "ring mismatch in membership");
        if f.is_zero() {
            return Ok(true);
        }
        let gb = self.groebner(&MonomialOrder::GrevLex)?;
        Ok(normal_form(f, &gb, &MonomialOrder::GrevLex).is_zero())
    }

    /// Membership in the radical, via the trick of inverting `f` with a
    /// fresh variable and testing triviality.
    pub fn radical_contains(&self, f: &Polynomial) -> Result<bool> {
        assert_eq!(*f.vars(), self.vars, "ring mismatch in radical membership");
        if f.is_zero() {
            return Ok(true);
        }
        let (ext, t_idx) = extend_ring(&self.vars);
        let mut gens: Vec<Polynomial> = self
            .gens
            .iter()
            .map(|g| g.reindex(&ext).expect("extension"))
            .collect();
        let tf = &Polynomial::var(&ext, t_idx) * &f.reindex(&ext).expect("extension");
        gens.push(&Polynomial::one(&ext) - &tf);
        Ideal::new(&ext, gens).is_trivial()
    }

    /// Saturation `I : g^infinity`.
    pub fn saturate(&self, g: &Polynomial) -> Result<Ideal> {
        assert_eq!(*g.vars(), self.vars, "ring mismatch in saturation");
        assert!(!g.is_zero(), "saturation by zero");
        if self.is_zero_ideal() {
            return Ok(self.clone());
        }
        let (ext, t_idx) = extend_ring(&self.vars);
        let mut gens: Vec<Polynomial> = self
            .gens
            .iter()
            .map(|p| p.reindex(&ext).expect("extension"))
            .collect();
        let tg = &Polynomial::var(&ext, t_idx) * &g.reindex(&ext).expect("extension");
        gens.push(&Polynomial::one(&ext) - &tg);
        let elim = Ideal::new(&ext, gens).eliminate(&[t_idx])?;
        let down: Vec<Polynomial> = elim
            .gens()
            .iter()
            .map(|p| p.restrict_drop(t_idx))
            .collect();
        Ok(Ideal::new(&self.vars, down))
    }

    /// Generators of the intersection with the subring omitting the listed
    /// variables; the result still lives in the full ring but its generators
    /// do not use the eliminated variables.
    pub fn eliminate(&self, drop: &[usize]) -> Result<Ideal> {
        let order = MonomialOrder::eliminating(self.vars.len(), drop);
        let gb = groebner_basis(&self.gens, &order, &GbConfig::default())?;
        let kept: Vec<Polynomial> = gb
            .into_iter()
            .filter(|g| drop.iter().all(|&i| !g.uses_var(i)))
            .collect();
        Ok(Ideal::new(&self.vars, kept))
    }

    /// The ideal together with all first partial derivatives of its
    /// generators.
    pub fn delta(&self) -> Ideal {
        let mut gens = self.gens.clone();
        for g in &self.gens {
            for i in 0..self.vars.len() {
                gens.push(g.partial_derivative(i));
            }
        }
        Ideal::new(&self.vars, gens)
    }

    /// Largest vanishing order attained on the zero set, computed as the
    /// number of derivative steps needed to reach the whole ring.
    pub fn max_order(&self) -> Result<u64> {
        if self.is_zero_ideal() {
            return Err(Error::Internal("max order of the zero ideal".into()));
        }
        let cap = self.gens.iter().map(Polynomial::degree).min().unwrap() + 1;
        let mut cur = self.clone();
        for t in 0..=cap {
            if cur.is_trivial()? {
                return Ok(t);
            }
            cur = cur.delta();
        }
        Err(Error::Internal(
            "derivative chain failed to terminate".into(),
        ))
    }

    /// Vanishing order at a rational point: the minimum over generators.
    pub fn order_at_point(&self, point: &[BigRational]) -> Option<u64> {
        self.gens
            .iter()
            .filter_map(|g| g.order_at_point(point))
            .min()
    }

    /// Order along the coordinate subspace cut out by the listed variables:
    /// minimal total degree in those variables over all generator terms.
    pub fn order_along_subspace(&self, idx: &[usize]) -> Option<u64> {
        self.gens
            .iter()
            .map(|g| {
                g.terms()
                    .map(|(m, _)| idx.iter().map(|&i| m.exp(i) as u64).sum::<u64>())
                    .min()
                    .expect("nonzero generator")
            })
            .min()
    }

    /// Whether the zero set is a finite set of points, read off a reduced
    /// basis: every variable must appear as a pure power among the leading
    /// monomials.
    pub fn is_zero_dimensional(&self) -> Result<bool> {
        let gb = self.groebner(&MonomialOrder::GrevLex)?;
        if gb.len() == 1 && gb[0].is_one() {
            return Ok(true);
        }
        'vars: for i in 0..self.vars.len() {
            for g in &gb {
                let lm = g.leading().expect("nonzero").0;
                if lm.exp(i) > 0 && lm.degree() == lm.exp(i) as u64 {
                    continue 'vars;
                }
            }
            return Ok(false);
        }
        Ok(true)
    }

    /// All rational points of a zero-dimensional zero set.  The flag reports
    /// whether the enumeration is certainly complete; it degrades when an
    /// integer was too hard to factor or the candidate grid got too large.
    pub fn rational_points(&self) -> Result<(Vec<Vec<BigRational>>, bool)> {
        if self.is_trivial()? {
            return Ok((Vec::new(), true));
        }
        if !self.is_zero_dimensional()? {
            return Err(Error::Internal(
                "rational point enumeration on a positive-dimensional set".into(),
            ));
        }
        let n = self.vars.len();
        let mut complete = true;
        let mut coords: Vec<Vec<BigRational>> = Vec::with_capacity(n);
        for i in 0..n {
            let drop: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let elim = self.eliminate(&drop)?;
            let uni = elim
                .gens()
                .iter()
                .min_by_key(|g| g.degree())
                .cloned()
                .ok_or_else(|| {
                    Error::Internal("no univariate eliminant for a finite set".into())
                })?;
            let (roots, ok) = univariate_rational_roots(&uni, i);
            if !ok {
                complete = false;
            }
            coords.push(roots);
        }
        let mut grid = 1usize;
        for c in &coords {
            grid = grid.saturating_mul(c.len().max(1));
        }
        if grid > 4096 {
            return Ok((Vec::new(), false));
        }
        let mut points = Vec::new();
        let mut idx = vec![0usize; n];
        'outer: loop {
            if coords.iter().all(|c| !c.is_empty()) {
                let pt: Vec<BigRational> = (0..n).map(|i| coords[i][idx[i]].clone()).collect();
                if self.gens.iter().all(|g| g.eval(&pt).is_zero()) {
                    points.push(pt);
                }
            } else {
                break;
            }
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < coords[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == n {
                    break 'outer;
                }
            }
        }
        points.sort();
        points.dedup();
        Ok((points, complete))
    }
}

fn extend_ring(vars: &Vars) -> (Vars, usize) {
    let mut name = "_t".to_string();
    let mut k = 0;
    while vars.index_of(&name).is_some() {
        name = format!("_t{k}");
        k += 1;
    }
    let mut names: Vec<String> = vars.names().to_vec();
    names.push(name);
    let ext = Vars::new(names).expect("extended ring");
    (ext, vars.len())
}

// --- univariate rational root finding ---

fn trial_factor(n: &BigInt, bound: u64) -> (Vec<BigInt>, bool) {
    let mut n = n.abs();
    let mut atoms = Vec::new();
    if n.is_zero() {
        return (atoms, true);
    }
    let mut d = BigInt::from(2);
    let limit = BigInt::from(bound);
    while &d * &d <= n && d <= limit {
        while (&n % &d).is_zero() {
            atoms.push(d.clone());
            n = n / &d;
        }
        d += 1;
    }
    if n > BigInt::one() {
        let complete = &n <= &(&limit * &limit);
        atoms.push(n);
        (atoms, complete)
    } else {
        (atoms, true)
    }
}

fn divisors_from_atoms(atoms: &[BigInt], cap: usize) -> (Vec<BigInt>, bool) {
    let mut divs = vec![BigInt::one()];
    for a in atoms {
        let mut next = divs.clone();
        for d in &divs {
            let m = d * a;
            if !next.contains(&m) {
                next.push(m);
            }
        }
        divs = next;
        if divs.len() > cap {
            divs.truncate(cap);
            return (divs, false);
        }
    }
    (divs, true)
}

/// Rational roots of a polynomial that uses only variable `i`.
fn univariate_rational_roots(f: &Polynomial, i: usize) -> (Vec<BigRational>, bool) {
    let coeffs = f.expand_in_var(i);
    let mut exps: Vec<u32> = coeffs.keys().copied().collect();
    exps.sort();
    // integer coefficients after clearing denominators
    let mut denlcm = BigInt::one();
    for c in coeffs.values() {
        let d = c
            .as_constant()
            .expect("univariate coefficient must be constant")
            .denom()
            .clone();
        denlcm = denlcm.lcm(&d);
    }
    let int_coeff = |e: u32| -> BigInt {
        coeffs
            .get(&e)
            .map(|c| {
                let r = c.as_constant().unwrap() * BigRational::from_integer(denlcm.clone());
                assert!(r.is_integer());
                r.to_integer()
            })
            .unwrap_or_else(BigInt::zero)
    };
    let deg = *exps.last().expect("nonzero polynomial");
    let val = exps[0];
    let mut roots = Vec::new();
    let mut complete = true;
    if val > 0 {
        roots.push(BigRational::zero());
    }
    if deg == val {
        return (roots, true);
    }
    if deg - val == 1 {
        // linear: exact single root
        let a = int_coeff(deg);
        let b = int_coeff(val);
        roots.push(BigRational::new(-b, a));
        roots.sort();
        roots.dedup();
        return (roots, true);
    }
    let a0 = int_coeff(val);
    let ak = int_coeff(deg);
    let (atoms0, ok0) = trial_factor(&a0, 100_000);
    let (atomsk, okk) = trial_factor(&ak, 100_000);
    if !ok0 || !okk {
        complete = false;
    }
    let (divs0, okd0) = divisors_from_atoms(&atoms0, 512);
    let (divsk, okdk) = divisors_from_atoms(&atomsk, 512);
    if !okd0 || !okdk {
        complete = false;
    }
    for p in &divs0 {
        for q in &divsk {
            for sign in [1i64, -1] {
                let cand = BigRational::new(p * BigInt::from(sign), q.clone());
                let v = f.eval(&{
                    let mut pt = vec![BigRational::zero(); f.vars().len()];
                    pt[i] = cand.clone();
                    pt
                });
                if v.is_zero() {
                    roots.push(cand);
                }
            }
        }
    }
    roots.sort();
    roots.dedup();
    (roots, complete)
}

// --- Jacobian and smoothness ---

pub fn jacobian(gens: &[Polynomial]) -> Vec<Vec<Polynomial>> {
    gens.iter()
        .map(|g| {
            (0..g.vars().len())
                .map(|i| g.partial_derivative(i))
                .collect()
        })
        .collect()
}

fn det(mat: &[Vec<&Polynomial>], vars: &Vars) -> Polynomial {
    let n = mat.len();
    if n == 0 {
        return Polynomial::one(vars);
    }
    if n == 1 {
        return mat[0][0].clone();
    }
    let mut acc = Polynomial::zero(vars);
    for (j, entry) in mat[0].iter().enumerate() {
        if entry.is_zero() {
            continue;
        }
        let minor: Vec<Vec<&Polynomial>> = mat[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, p)| *p)
                    .collect()
            })
            .collect();
        let cof = det(&minor, vars);
        let term = &cof * *entry;
        if j % 2 == 0 {
            acc = &acc + &term;
        } else {
            acc = &acc - &term;
        }
    }
    acc
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All `k` by `k` minors of a polynomial matrix.
pub fn minors(mat: &[Vec<Polynomial>], k: usize, vars: &Vars) -> Vec<Polynomial> {
    let rows = mat.len();
    let cols = if rows == 0 { 0 } else { mat[0].len() };
    let mut out = Vec::new();
    for ri in combinations(rows, k) {
        for ci in combinations(cols, k) {
            let sub: Vec<Vec<&Polynomial>> = ri
                .iter()
                .map(|&r| ci.iter().map(|&c| &mat[r][c]).collect())
                .collect();
            out.push(det(&sub, vars));
        }
    }
    out
}

/// Whether the common zero set of `gens` is smooth with the Jacobian of full
/// rank `gens.len()` everywhere on it.  An empty zero set passes vacuously.
pub fn smooth_complete_intersection(vars: &Vars, gens: &[Polynomial]) -> Result<bool> {
    let gens: Vec<Polynomial> = gens.iter().filter(|g| !g.is_zero()).cloned().collect();
    if gens.is_empty() {
        // the whole space
        return Ok(true);
    }
    if gens.iter().any(Polynomial::is_unit) {
        return Ok(true);
    }
    let r = gens.len();
    if r > vars.len() {
        // cannot have full rank unless the set is empty
        return Ideal::new(vars, gens).is_trivial();
    }
    let jac = jacobian(&gens);
    let mut sing = gens.clone();
    sing.extend(minors(&jac, r, vars));
    Ideal::new(vars, sing).is_trivial()
}
