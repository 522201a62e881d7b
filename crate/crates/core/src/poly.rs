//! Multivariate polynomials over the rationals with exact arithmetic.
//!
//! Terms are kept in a `BTreeMap` keyed by monomial, whose intrinsic order is
//! ascending graded reverse lexicographic.  The map never stores a zero
//! coefficient, so structural equality of polynomials is value equality.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
pub use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

/// Shared, immutable list of variable names defining a polynomial ring.
#[derive(Debug, Clone, Eq)]
pub struct Vars(Arc<Vec<String>>);

impl PartialEq for Vars {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

fn valid_var_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Vars {
    pub fn new<I, S>(names: I) -> Result<Vars>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if !valid_var_name(n) {
                return Err(Error::Input(format!("invalid variable name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Input(format!("duplicate variable name {n:?}")));
            }
        }
        Ok(Vars(Arc::new(names)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    /// Same ring with one variable removed; exponent slots shift down past `idx`.
    pub fn without(&self, idx: usize) -> Vars {
        let mut names = (*self.0).clone();
        names.remove(idx);
        Vars(Arc::new(names))
    }

    /// Same ring with the variable at `idx` renamed in place.
    pub fn with_renamed(&self, idx: usize, name: &str) -> Result<Vars> {
        let mut names = (*self.0).clone();
        names[idx] = name.to_string();
        Vars::new(names)
    }
}

impl fmt::Display for Vars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

/// Exponent vector.  `Ord` is ascending graded reverse lexicographic, so the
/// last key of a term map is the leading monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

fn grevlex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    let da: u64 = a.iter().map(|&e| e as u64).sum();
    let db: u64 = b.iter().map(|&e| e as u64).sum();
    match da.cmp(&db) {
        Ordering::Equal => {
            for i in (0..a.len()).rev() {
                if a[i] != b[i] {
                    // rightmost difference: the smaller exponent wins
                    return b[i].cmp(&a[i]);
                }
            }
            Ordering::Equal
        }
        ord => ord,
    }
}

impl Monomial {
    pub fn unit(nvars: usize) -> Monomial {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Monomial {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn from_exps(exps: Vec<u32>) -> Monomial {
        Monomial(exps)
    }

    pub fn exps(&self) -> &[u32] {
        &self.0
    }

    pub fn exp(&self, i: usize) -> u32 {
        self.0[i]
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u64 {
        self.0.iter().map(|&e| e as u64).sum()
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a.checked_add(b).expect("exponent overflow"))
                .collect(),
        )
    }

    pub fn divides(&self, other: &Monomial) -> bool {
        debug_assert_eq!(self.0.len(), other.0.len());
        self.0.iter().zip(&other.0).all(|(&a, &b)| a <= b)
    }

    pub fn try_div(&self, other: &Monomial) -> Option<Monomial> {
        if other.divides(self) {
            Some(Monomial(
                self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect(),
            ))
        } else {
            None
        }
    }

    pub fn lcm(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a.max(b))
                .collect(),
        )
    }

    fn without_slot(&self, idx: usize) -> Monomial {
        let mut e = self.0.clone();
        e.remove(idx);
        Monomial(e)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        debug_assert_eq!(self.0.len(), other.0.len());
        grevlex_cmp(&self.0, &other.0)
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Term orders used by basis computations.  `Elimination` puts the flagged
/// block first (graded reverse lexicographic within each block), so a basis
/// computed under it intersects down to the subring of unflagged variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonomialOrder {
    GrevLex,
    Lex,
    Elimination { block: Vec<bool> },
}

fn grevlex_cmp_masked(a: &[u32], b: &[u32], block: &[bool], flag: bool) -> Ordering {
    let da: u64 = a
        .iter()
        .zip(block)
        .filter(|(_, &m)| m == flag)
        .map(|(&e, _)| e as u64)
        .sum();
    let db: u64 = b
        .iter()
        .zip(block)
        .filter(|(_, &m)| m == flag)
        .map(|(&e, _)| e as u64)
        .sum();
    match da.cmp(&db) {
        Ordering::Equal => {
            for i in (0..a.len()).rev() {
                if block[i] == flag && a[i] != b[i] {
                    return b[i].cmp(&a[i]);
                }
            }
            Ordering::Equal
        }
        ord => ord,
    }
}

impl MonomialOrder {
    pub fn eliminating(nvars: usize, eliminate: &[usize]) -> MonomialOrder {
        let mut block = vec![false; nvars];
        for &i in eliminate {
            block[i] = true;
        }
        MonomialOrder::Elimination { block }
    }

    pub fn cmp(&self, a: &Monomial, b: &Monomial) -> Ordering {
        debug_assert_eq!(a.nvars(), b.nvars());
        match self {
            MonomialOrder::GrevLex => grevlex_cmp(a.exps(), b.exps()),
            MonomialOrder::Lex => {
                for i in 0..a.nvars() {
                    if a.exp(i) != b.exp(i) {
                        return a.exp(i).cmp(&b.exp(i));
                    }
                }
                Ordering::Equal
            }
            MonomialOrder::Elimination { block } => {
                match grevlex_cmp_masked(a.exps(), b.exps(), block, true) {
                    Ordering::Equal => grevlex_cmp_masked(a.exps(), b.exps(), block, false),
                    ord => ord,
                }
            }
        }
    }
}

/// Polynomial with arbitrary-precision rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    vars: Vars,
    terms: BTreeMap<Monomial, BigRational>,
}

pub fn rat_int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl Polynomial {
    pub fn zero(vars: &Vars) -> Polynomial {
        Polynomial {
            vars: vars.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn one(vars: &Vars) -> Polynomial {
        Polynomial::constant(vars, BigRational::one())
    }

    pub fn constant(vars: &Vars, c: BigRational) -> Polynomial {
        let mut p = Polynomial::zero(vars);
        if !c.is_zero() {
            p.terms.insert(Monomial::unit(vars.len()), c);
        }
        p
    }

    pub fn var(vars: &Vars, i: usize) -> Polynomial {
        let mut p = Polynomial::zero(vars);
        p.terms
            .insert(Monomial::var(vars.len(), i), BigRational::one());
        p
    }

    pub fn from_terms<I>(vars: &Vars, terms: I) -> Polynomial
    where
        I: IntoIterator<Item = (Monomial, BigRational)>,
    {
        let mut p = Polynomial::zero(vars);
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub(crate) fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        debug_assert_eq!(m.nvars(), self.vars.len());
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get() + &c;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.terms.keys().next().unwrap().is_unit())
    }

    /// Nonzero constant.
    pub fn is_unit(&self) -> bool {
        self.terms.len() == 1 && self.terms.keys().next().unwrap().is_unit()
    }

    pub fn as_constant(&self) -> Option<&BigRational> {
        if self.is_unit() {
            self.terms.values().next()
        } else {
            None
        }
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().map_or(false, |c| c.is_one())
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&BigRational> {
        self.terms.get(m)
    }

    /// Leading term in the intrinsic graded reverse lexicographic order.
    pub fn leading(&self) -> Option<(&Monomial, &BigRational)> {
        self.terms.iter().next_back()
    }

    /// Leading term under an arbitrary order, by linear scan.
    pub fn leading_under<'a>(&'a self, order: &MonomialOrder) -> Option<(&'a Monomial, &'a BigRational)> {
        self.terms
            .iter()
            .max_by(|(a, _), (b, _)| order.cmp(a, b))
    }

    pub fn degree(&self) -> u64 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Vanishing order at the origin; `None` for the zero polynomial.
    pub fn order_at_origin(&self) -> Option<u64> {
        self.terms.keys().map(Monomial::degree).min()
    }

    /// Vanishing order at a rational point.
    pub fn order_at_point(&self, point: &[BigRational]) -> Option<u64> {
        self.translate(point).order_at_origin()
    }

    /// Exact evaluation at a rational point.
    pub fn eval(&self, point: &[BigRational]) -> BigRational {
        assert_eq!(point.len(), self.vars.len(), "point dimension mismatch");
        let mut powers: Vec<Vec<BigRational>> = point
            .iter()
            .map(|c| vec![BigRational::one(), c.clone()])
            .collect();
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (i, &e) in m.exps().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let tbl = &mut powers[i];
                while tbl.len() <= e as usize {
                    let next = &tbl[tbl.len() - 1] * &point[i];
                    tbl.push(next);
                }
                t *= &tbl[e as usize];
            }
            acc += t;
        }
        acc
    }

    pub fn deg_in_var(&self, i: usize) -> u32 {
        self.terms.keys().map(|m| m.exp(i)).max().unwrap_or(0)
    }

    pub fn uses_var(&self, i: usize) -> bool {
        self.terms.keys().any(|m| m.exp(i) > 0)
    }

    pub fn map_coeffs<F: FnMut(&BigRational) -> BigRational>(&self, mut f: F) -> Polynomial {
        Polynomial::from_terms(&self.vars, self.terms.iter().map(|(m, c)| (m.clone(), f(c))))
    }

    pub fn scale(&self, c: &BigRational) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero(&self.vars);
        }
        self.map_coeffs(|x| x * c)
    }

    /// Divide through by the leading coefficient (grevlex).
    pub fn monic(&self) -> Polynomial {
        match self.leading() {
            None => self.clone(),
            Some((_, c)) => {
                let inv = BigRational::one() / c.clone();
                self.scale(&inv)
            }
        }
    }

    pub fn mul_term(&self, m: &Monomial, c: &BigRational) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero(&self.vars);
        }
        Polynomial::from_terms(
            &self.vars,
            self.terms.iter().map(|(mm, cc)| (mm.mul(m), cc * c)),
        )
    }

    pub fn pow(&self, e: u64) -> Polynomial {
        if e == 0 {
            return Polynomial::one(&self.vars);
        }
        let mut acc = self.clone();
        for _ in 1..e {
            acc = &acc * self;
        }
        acc
    }

    pub fn partial_derivative(&self, i: usize) -> Polynomial {
        Polynomial::from_terms(
            &self.vars,
            self.terms.iter().filter(|(m, _)| m.exp(i) > 0).map(|(m, c)| {
                let e = m.exp(i);
                let mut exps = m.exps().to_vec();
                exps[i] = e - 1;
                (
                    Monomial::from_exps(exps),
                    c * BigRational::from_integer(BigInt::from(e)),
                )
            }),
        )
    }

    /// Coefficients of powers of variable `i`; each value has slot `i` zeroed.
    pub fn expand_in_var(&self, i: usize) -> BTreeMap<u32, Polynomial> {
        let mut out: BTreeMap<u32, Polynomial> = BTreeMap::new();
        for (m, c) in &self.terms {
            let e = m.exp(i);
            let mut exps = m.exps().to_vec();
            exps[i] = 0;
            out.entry(e)
                .or_insert_with(|| Polynomial::zero(&self.vars))
                .add_term(Monomial::from_exps(exps), c.clone());
        }
        out.retain(|_, p| !p.is_zero());
        out
    }

    /// Set variable `i` to zero and remove its slot from the ring.
    pub fn restrict_drop(&self, i: usize) -> Polynomial {
        let vars = self.vars.without(i);
        Polynomial::from_terms(
            &vars,
            self.terms
                .iter()
                .filter(|(m, _)| m.exp(i) == 0)
                .map(|(m, c)| (m.without_slot(i), c.clone())),
        )
    }

    /// Move to a ring with the same shape but different names, slot by slot.
    pub fn with_ring(&self, target: &Vars) -> Polynomial {
        assert_eq!(target.len(), self.vars.len(), "ring arity mismatch");
        Polynomial::from_terms(target, self.terms.iter().map(|(m, c)| (m.clone(), c.clone())))
    }

    /// Re-express in a ring that contains every variable this polynomial uses.
    pub fn reindex(&self, target: &Vars) -> Result<Polynomial> {
        let mut slot = Vec::with_capacity(self.vars.len());
        for (i, name) in self.vars.names().iter().enumerate() {
            match target.index_of(name) {
                Some(j) => slot.push(j),
                None => {
                    if self.uses_var(i) {
                        return Err(Error::VariableMismatch {
                            expected: target.to_string(),
                            found: self.vars.to_string(),
                        });
                    }
                    slot.push(usize::MAX);
                }
            }
        }
        Ok(Polynomial::from_terms(
            target,
            self.terms.iter().map(|(m, c)| {
                let mut exps = vec![0u32; target.len()];
                for (i, &e) in m.exps().iter().enumerate() {
                    if e > 0 {
                        exps[slot[i]] = e;
                    }
                }
                (Monomial::from_exps(exps), c.clone())
            }),
        ))
    }

    /// Substitute `x_i -> x_i + p_i` for a rational point `p`.
    pub fn translate(&self, point: &[BigRational]) -> Polynomial {
        assert_eq!(point.len(), self.vars.len(), "point dimension mismatch");
        let images: Vec<Polynomial> = (0..self.vars.len())
            .map(|i| &Polynomial::var(&self.vars, i) + &Polynomial::constant(&self.vars, point[i].clone()))
            .collect();
        let map = SubstitutionMap::new(self.vars.clone(), self.vars.clone(), images)
            .expect("translation map");
        map.apply(self)
    }

    /// Substitute a single variable by an image in the same ring.
    pub fn substitute_var(&self, i: usize, image: &Polynomial) -> Polynomial {
        assert_eq!(*image.vars(), self.vars, "image ring mismatch");
        let images: Vec<Polynomial> = (0..self.vars.len())
            .map(|j| {
                if j == i {
                    image.clone()
                } else {
                    Polynomial::var(&self.vars, j)
                }
            })
            .collect();
        let map = SubstitutionMap::new(self.vars.clone(), self.vars.clone(), images)
            .expect("single substitution map");
        map.apply(self)
    }

    /// Exact quotient, or `None` when the divisor does not divide exactly.
    pub fn exact_divide(&self, divisor: &Polynomial) -> Option<Polynomial> {
        assert_eq!(self.vars, divisor.vars, "ring mismatch in division");
        assert!(!divisor.is_zero(), "division by zero polynomial");
        let (dm, dc) = divisor.leading().unwrap();
        let dm = dm.clone();
        let dc = dc.clone();
        let mut rem = self.clone();
        let mut quo = Polynomial::zero(&self.vars);
        while let Some((lm, lc)) = rem.leading() {
            let qm = lm.try_div(&dm)?;
            let qc = lc / &dc;
            let t = divisor.mul_term(&qm, &qc);
            quo.add_term(qm, qc);
            rem = &rem - &t;
        }
        Some(quo)
    }

    pub fn parse(vars: &Vars, input: &str) -> Result<Polynomial> {
        parse_polynomial(vars, input)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.vars, rhs.vars, "ring mismatch in addition");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.vars, rhs.vars, "ring mismatch in subtraction");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.map_coeffs(|c| -c.clone())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.vars, rhs.vars, "ring mismatch in multiplication");
        let mut out = Polynomial::zero(&self.vars);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }
}

/// Ring map `source -> target` given by one image polynomial per source
/// variable.  Composition applies left to right.
#[derive(Debug, Clone)]
pub struct SubstitutionMap {
    source: Vars,
    target: Vars,
    images: Vec<Polynomial>,
}

impl SubstitutionMap {
    pub fn new(source: Vars, target: Vars, images: Vec<Polynomial>) -> Result<SubstitutionMap> {
        if images.len() != source.len() {
            return Err(Error::Internal(format!(
                "substitution needs {} images, got {}",
                source.len(),
                images.len()
            )));
        }
        for img in &images {
            if *img.vars() != target {
                return Err(Error::VariableMismatch {
                    expected: target.to_string(),
                    found: img.vars().to_string(),
                });
            }
        }
        Ok(SubstitutionMap {
            source,
            target,
            images,
        })
    }

    pub fn identity(vars: &Vars) -> SubstitutionMap {
        SubstitutionMap {
            source: vars.clone(),
            target: vars.clone(),
            images: (0..vars.len()).map(|i| Polynomial::var(vars, i)).collect(),
        }
    }

    pub fn source(&self) -> &Vars {
        &self.source
    }

    pub fn target(&self) -> &Vars {
        &self.target
    }

    pub fn images(&self) -> &[Polynomial] {
        &self.images
    }

    pub fn apply(&self, f: &Polynomial) -> Polynomial {
        assert_eq!(*f.vars(), self.source, "substitution source mismatch");
        // power tables, one per source variable, built to the needed height
        let mut powers: Vec<Vec<Polynomial>> = self
            .images
            .iter()
            .map(|img| vec![Polynomial::one(&self.target), img.clone()])
            .collect();
        let mut out = Polynomial::zero(&self.target);
        for (m, c) in f.terms() {
            let mut term = Polynomial::constant(&self.target, c.clone());
            for (i, &e) in m.exps().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let tbl = &mut powers[i];
                while tbl.len() <= e as usize {
                    let next = &tbl[tbl.len() - 1] * &tbl[1];
                    tbl.push(next);
                }
                term = &term * &tbl[e as usize];
            }
            out = &out + &term;
        }
        out
    }

    /// `self` followed by `then`.
    pub fn compose(&self, then: &SubstitutionMap) -> SubstitutionMap {
        assert_eq!(self.target, then.source, "composition ring mismatch");
        SubstitutionMap {
            source: self.source.clone(),
            target: then.target.clone(),
            images: self.images.iter().map(|img| then.apply(img)).collect(),
        }
    }
}

// --- canonical printing ---

fn fmt_coeff_abs(c: &BigRational) -> String {
    let a = c.abs();
    a.to_string()
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        // descending grevlex
        for (m, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut parts: Vec<String> = Vec::new();
            let abs = c.abs();
            if m.is_unit() || !abs.is_one() {
                parts.push(fmt_coeff_abs(c));
            }
            for (i, &e) in m.exps().iter().enumerate() {
                if e == 1 {
                    parts.push(self.vars.name(i).to_string());
                } else if e > 1 {
                    parts.push(format!("{}^{}", self.vars.name(i), e));
                }
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

// --- parsing ---

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(BigRational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn lex(input: &str) -> Result<Vec<Token>> {
    let bytes = input.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let numer: BigInt = input[start..i].parse().expect("digit run");
                // fraction only when written as <int>/<int> with no spaces
                if i < bytes.len() && bytes[i] == b'/' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    let dstart = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    let denom: BigInt = input[dstart..i].parse().expect("digit run");
                    if denom.is_zero() {
                        return Err(Error::Input("zero denominator".into()));
                    }
                    out.push(Token::Num(BigRational::new(numer, denom)));
                } else {
                    out.push(Token::Num(BigRational::from_integer(numer)));
                }
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token::Ident(input[start..i].to_string()));
            }
            _ => {
                return Err(Error::Input(format!("unexpected character {c:?}")));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    vars: &'a Vars,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut negate = false;
        if let Some(Token::Minus) = self.peek() {
            self.bump();
            negate = true;
        } else if let Some(Token::Plus) = self.peek() {
            self.bump();
        }
        let mut acc = self.term()?;
        if negate {
            acc = -&acc;
        }
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    let t = self.term()?;
                    acc = &acc + &t;
                }
                Some(Token::Minus) => {
                    self.bump();
                    let t = self.term()?;
                    acc = &acc - &t;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    let f = self.factor()?;
                    acc = &acc * &f;
                }
                // adjacency means multiplication: 2x, x(x+y)
                Some(Token::Ident(_)) | Some(Token::Num(_)) | Some(Token::LParen) => {
                    let f = self.factor()?;
                    acc = &acc * &f;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial> {
        let base = self.primary()?;
        if let Some(Token::Caret) = self.peek() {
            self.bump();
            match self.bump() {
                Some(Token::Num(n)) => {
                    if !n.is_integer() || n.is_negative() {
                        return Err(Error::Input("exponent must be a nonnegative integer".into()));
                    }
                    let e: u64 = n
                        .to_integer()
                        .try_into()
                        .map_err(|_| Error::Input("exponent too large".into()))?;
                    if e > 4096 {
                        return Err(Error::Input("exponent too large".into()));
                    }
                    return Ok(base.pow(e));
                }
                _ => return Err(Error::Input("expected integer exponent after ^".into())),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Polynomial> {
        match self.bump() {
            Some(Token::Num(n)) => Ok(Polynomial::constant(self.vars, n)),
            Some(Token::Ident(name)) => match self.vars.index_of(&name) {
                Some(i) => Ok(Polynomial::var(self.vars, i)),
                None => Err(Error::Input(format!("unknown variable {name:?}"))),
            },
            Some(Token::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(e),
                    _ => Err(Error::Input("missing closing parenthesis".into())),
                }
            }
            Some(Token::Minus) => {
                let f = self.factor()?;
                Ok(-&f)
            }
            t => Err(Error::Input(format!("unexpected token {t:?}"))),
        }
    }
}

fn parse_polynomial(vars: &Vars, input: &str) -> Result<Polynomial> {
    let tokens = lex(input)?;
    if tokens.is_empty() {
        return Err(Error::Input("empty polynomial".into()));
    }
    let mut p = Parser {
        vars,
        tokens,
        pos: 0,
    };
    let poly = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(Error::Input(format!(
            "trailing input after polynomial: {:?}",
            &p.tokens[p.pos..]
        )));
    }
    Ok(poly)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> Vars {
        Vars::new(["x", "y"]).unwrap()
    }

    fn p(vars: &Vars, s: &str) -> Polynomial {
        Polynomial::parse(vars, s).unwrap()
    }

    #[test]
    fn grevlex_orders_by_degree_then_rightmost_difference() {
        let v = xy();
        let m = |s: &str| p(&v, s).leading().unwrap().0.clone();
        let seq = ["1", "y", "x", "y^2", "x*y", "x^2"];
        let ms: Vec<Monomial> = seq.iter().map(|s| m(s)).collect();
        for w in ms.windows(2) {
            assert!(w[0] < w[1], "{:?} < {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn leading_term_depends_on_order() {
        let v = xy();
        let f = p(&v, "x + y^2");
        assert_eq!(f.leading().unwrap().0, &Monomial::from_exps(vec![0, 2]));
        let lex = MonomialOrder::Lex;
        assert_eq!(
            f.leading_under(&lex).unwrap().0,
            &Monomial::from_exps(vec![1, 0])
        );
        let elim = MonomialOrder::eliminating(2, &[0]);
        assert_eq!(
            f.leading_under(&elim).unwrap().0,
            &Monomial::from_exps(vec![1, 0])
        );
    }

    #[test]
    fn parse_print_round_trip() {
        let v = xy();
        for s in [
            "x^2 - 3*x*y + 1/2",
            "-x + y",
            "2*x*y^3 + x - 7",
            "0",
            "-5/3",
            "x^2*y^2 - x^3",
        ] {
            let f = if s == "0" {
                Polynomial::zero(&v)
            } else {
                p(&v, s)
            };
            assert_eq!(f.to_string(), s);
            if s != "0" {
                assert_eq!(p(&v, &f.to_string()), f);
            }
        }
    }

    #[test]
    fn parse_accepts_adjacency_and_parens() {
        let v = xy();
        assert_eq!(p(&v, "2x(x+y)"), p(&v, "2*x^2 + 2*x*y"));
        assert_eq!(p(&v, "(x+y)^2"), p(&v, "x^2 + 2*x*y + y^2"));
        assert_eq!(p(&v, "x - (y - x)"), p(&v, "2*x - y"));
        assert_eq!(p(&v, "-x^2"), -&p(&v, "x^2"));
        assert_eq!(p(&v, "3/2 x"), p(&v, "3x") .scale(&rat(1, 2)));
    }

    #[test]
    fn parse_rejects_bad_input() {
        let v = xy();
        assert!(Polynomial::parse(&v, "x + z").is_err());
        assert!(Polynomial::parse(&v, "x ^ y").is_err());
        assert!(Polynomial::parse(&v, "x +").is_err());
        assert!(Polynomial::parse(&v, "(x").is_err());
        assert!(Polynomial::parse(&v, "x^(-2)").is_err());
        assert!(Polynomial::parse(&v, "").is_err());
    }

    #[test]
    fn arithmetic_identities() {
        let v = xy();
        let f = p(&v, "x + y");
        assert_eq!(&f * &f, p(&v, "x^2 + 2*x*y + y^2"));
        assert_eq!(f.pow(3), p(&v, "x^3 + 3*x^2*y + 3*x*y^2 + y^3"));
        assert_eq!(&f - &f, Polynomial::zero(&v));
        let g = p(&v, "x - y");
        assert_eq!(&f * &g, p(&v, "x^2 - y^2"));
    }

    #[test]
    fn orders_at_points() {
        let v = xy();
        assert_eq!(p(&v, "y^2 - x^3").order_at_origin(), Some(2));
        let f = p(&v, "(x - 1)^2 * y");
        let pt = vec![rat_int(1), rat_int(0)];
        assert_eq!(f.order_at_point(&pt), Some(3));
        assert_eq!(Polynomial::zero(&v).order_at_origin(), None);
        assert_eq!(p(&v, "7").order_at_origin(), Some(0));
    }

    #[test]
    fn substitution_translates_and_composes() {
        let v = xy();
        let u = Vars::new(["u", "y"]).unwrap();
        let f = p(&v, "(x+y)^2");
        let images = vec![
            Polynomial::parse(&u, "u - y").unwrap(),
            Polynomial::var(&u, 1),
        ];
        let m = SubstitutionMap::new(v.clone(), u.clone(), images).unwrap();
        assert_eq!(m.apply(&f), Polynomial::parse(&u, "u^2").unwrap());

        let id = SubstitutionMap::identity(&u);
        let comp = m.compose(&id);
        assert_eq!(comp.apply(&f), Polynomial::parse(&u, "u^2").unwrap());
    }

    #[test]
    fn exact_division() {
        let v = xy();
        let f = p(&v, "x^2*y^2 - x^3");
        assert_eq!(f.exact_divide(&p(&v, "x^2")), Some(p(&v, "y^2 - x")));
        assert_eq!(p(&v, "x^2 + x*y").exact_divide(&p(&v, "x + y")), Some(p(&v, "x")));
        assert_eq!(p(&v, "x^2 + y").exact_divide(&p(&v, "x")), None);
        assert_eq!(
            p(&v, "x^2 - y^2").exact_divide(&p(&v, "x - y")),
            Some(p(&v, "x + y"))
        );
    }

    #[test]
    fn calculus_and_expansion() {
        let v = xy();
        let f = p(&v, "x^2*y + 2*y^3");
        assert_eq!(f.partial_derivative(0), p(&v, "2*x*y"));
        assert_eq!(f.partial_derivative(1), p(&v, "x^2 + 6*y^2"));

        let e = f.expand_in_var(1);
        assert_eq!(e.len(), 2);
        assert_eq!(e[&1], p(&v, "x^2"));
        assert_eq!(e[&3], p(&v, "2"));

        let r = f.restrict_drop(1);
        assert!(r.is_zero());
        let g = p(&v, "x^2 + x*y + 1");
        let x_only = Vars::new(["x"]).unwrap();
        assert_eq!(g.restrict_drop(1), Polynomial::parse(&x_only, "x^2 + 1").unwrap());
    }

    #[test]
    fn reindex_moves_between_rings() {
        let v = xy();
        let big = Vars::new(["a", "x", "y"]).unwrap();
        let f = p(&v, "x*y - 2");
        let g = f.reindex(&big).unwrap();
        assert_eq!(g, Polynomial::parse(&big, "x*y - 2").unwrap());
        assert_eq!(g.restrict_drop(0), f);
        let small = Vars::new(["x"]).unwrap();
        assert!(f.reindex(&small).is_err());
    }

    #[test]
    fn vars_validation() {
        assert!(Vars::new(["x", "x"]).is_err());
        assert!(Vars::new(["2x"]).is_err());
        assert!(Vars::new(["x", "y_1"]).is_ok());
        let v = xy();
        assert!(v.with_renamed(0, "y").is_err());
        assert_eq!(v.without(0).names(), &["y".to_string()]);
    }
}
