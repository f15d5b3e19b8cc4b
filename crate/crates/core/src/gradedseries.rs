//! Truncated multivariate series in ε, λ and time variables, and matrices of Laurent series in z.
//!
//! Monomials are packed into a `u128` whose layout is fixed by a [`SeriesRing`]:
//! λ occupies the top bits, then the biased ε exponent, then one field per time
//! variable (each with a guard bit), then the t-weight `Σ j·e_j`.  Integer
//! comparison of keys is the canonical monomial order and integer addition of
//! keys (minus one ε bias) is monomial multiplication.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde_json::{json, Value};

use crate::exactnum::{
    factorial, parse_rational, rational_to_string, Coords, FieldMap, Mat, NumError, NumberField, Rational,
};
use malachite_base::num::arithmetic::traits::Reciprocal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("series belong to different rings")]
    RingMismatch,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("exponential of a series with λ-degree-0 content")]
    NonNilpotent,
    #[error("admissibility violated at z^{k}: λ-degree {lambda} < {required}")]
    Admissibility { k: i32, lambda: u32, required: u32 },
    #[error("monomial layout: {0}")]
    Layout(String),
    #[error("unknown time variable {0}")]
    UnknownVar(String),
    #[error("malformed series data: {0}")]
    Parse(String),
}

/// An exponent `j` of the principal Heisenberg subalgebra; negative `j` labels `Λ_{-j}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExponentLabel {
    pub j: i32,
    pub primed: bool,
}

impl ExponentLabel {
    pub fn new(j: i32, primed: bool) -> Self {
        ExponentLabel { j, primed }
    }

    pub fn plain(j: i32) -> Self {
        ExponentLabel { j, primed: false }
    }

    pub fn neg(self) -> Self {
        ExponentLabel { j: -self.j, primed: self.primed }
    }
}

impl fmt::Display for ExponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.j, if self.primed { "'" } else { "" })
    }
}

impl FromStr for ExponentLabel {
    type Err = SeriesError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, primed) = match s.strip_suffix('\'') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let j = body.parse::<i32>().map_err(|_| SeriesError::Parse(format!("exponent label {s:?}")))?;
        Ok(ExponentLabel { j, primed })
    }
}

/// A time variable: `t_j` addressed by exponent, or the rescaled `q_{α,k}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimeVar {
    T(ExponentLabel),
    Q { alpha: u32, k: u32 },
}

impl TimeVar {
    pub fn is_q(&self) -> bool {
        matches!(self, TimeVar::Q { .. })
    }
}

impl fmt::Display for TimeVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeVar::T(l) => write!(f, "t_{l}"),
            TimeVar::Q { alpha, k } => write!(f, "q_{alpha}_{k}"),
        }
    }
}

impl FromStr for TimeVar {
    type Err = SeriesError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("t_") {
            return Ok(TimeVar::T(rest.parse()?));
        }
        if let Some(rest) = s.strip_prefix("q_") {
            let mut it = rest.split('_');
            let a = it.next().and_then(|x| x.parse().ok());
            let k = it.next().and_then(|x| x.parse().ok());
            if let (Some(alpha), Some(k), None) = (a, k, it.next()) {
                return Ok(TimeVar::Q { alpha, k });
            }
        }
        Err(SeriesError::Parse(format!("time variable {s:?}")))
    }
}

/// Decoded monomial `ε^eps λ^lambda Π v^e`, variables sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial {
    pub lambda: u32,
    pub eps: i32,
    pub vars: Vec<(TimeVar, u32)>,
}

impl Monomial {
    pub fn new(lambda: u32, eps: i32, mut vars: Vec<(TimeVar, u32)>) -> Self {
        vars.retain(|(_, e)| *e > 0);
        vars.sort();
        Monomial { lambda, eps, vars }
    }

    pub fn one() -> Self {
        Monomial { lambda: 0, eps: 0, vars: Vec::new() }
    }

    pub fn pow_of(&self, v: &TimeVar) -> u32 {
        self.vars.iter().find(|(w, _)| w == v).map_or(0, |(_, e)| *e)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.eps != 0 {
            parts.push(format!("eps^{}", self.eps));
        }
        if self.lambda != 0 {
            parts.push(format!("lambda^{}", self.lambda));
        }
        for (v, e) in &self.vars {
            parts.push(if *e == 1 { v.to_string() } else { format!("{v}^{e}") });
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

const WEIGHT_BITS: u32 = 11;
const WEIGHT_MAX: u32 = (1 << WEIGHT_BITS) - 1;
const EPS_BITS: u32 = 11;
const EPS_BIAS: i32 = 1 << (EPS_BITS - 1);
const LAMBDA_BITS: u32 = 11;
pub const LAMBDA_MAX: u32 = (1 << LAMBDA_BITS) - 1;
/// Weight cap meaning "no weight pruning".
pub const NO_WEIGHT_CAP: u32 = WEIGHT_MAX;

#[derive(Clone, Debug, PartialEq)]
struct VarSlot {
    var: TimeVar,
    weight: u32,
    shift: u32,
    width: u32,
}

/// Variable set, coefficient field and monomial layout shared by a family of series.
#[derive(Debug)]
pub struct SeriesRing {
    field: Arc<NumberField>,
    slots: Vec<VarSlot>,
    index: FxHashMap<TimeVar, usize>,
    guard: u128,
    eps_shift: u32,
    lambda_shift: u32,
}

impl PartialEq for SeriesRing {
    fn eq(&self, other: &Self) -> bool {
        self.field == other.field && self.slots == other.slots
    }
}

fn bit_len(x: u32) -> u32 {
    32 - x.leading_zeros()
}

impl SeriesRing {
    /// `vars` lists `(variable, weight, maximal exponent)`; all variables must be of one kind.
    pub fn new(field: Arc<NumberField>, vars: &[(TimeVar, u32, u32)]) -> Result<Arc<SeriesRing>, SeriesError> {
        let mut vars = vars.to_vec();
        vars.sort_by_key(|v| v.0);
        vars.dedup_by_key(|v| v.0);
        if vars.iter().any(|v| v.0.is_q()) && vars.iter().any(|v| !v.0.is_q()) {
            return Err(SeriesError::Layout("t- and q-variables cannot share a ring".into()));
        }
        let mut shift = WEIGHT_BITS + 1;
        let mut guard: u128 = 1 << WEIGHT_BITS;
        // lowest bits hold the last variable so that key order is lexicographic in sorted variables
        let mut slots: Vec<VarSlot> = Vec::with_capacity(vars.len());
        for (var, weight, max_exp) in vars.iter().rev() {
            let width = bit_len((*max_exp).max(1));
            slots.push(VarSlot { var: *var, weight: *weight, shift, width });
            guard |= 1u128 << (shift + width);
            shift += width + 1;
        }
        slots.reverse();
        let eps_shift = shift;
        let lambda_shift = eps_shift + EPS_BITS;
        if lambda_shift + LAMBDA_BITS > 128 {
            return Err(SeriesError::Layout(format!(
                "{} variables need {} bits, more than a 128-bit monomial holds",
                vars.len(),
                lambda_shift + LAMBDA_BITS
            )));
        }
        let index = slots.iter().enumerate().map(|(i, s)| (s.var, i)).collect();
        Ok(Arc::new(SeriesRing { field, slots, index, guard, eps_shift, lambda_shift }))
    }

    /// One `t_j` per label with `j ≤ weight_cap`, each carrying weight `j`.
    pub fn t_ring(
        field: Arc<NumberField>,
        labels: &[ExponentLabel],
        weight_cap: u32,
    ) -> Result<Arc<SeriesRing>, SeriesError> {
        let vars: Vec<(TimeVar, u32, u32)> = labels
            .iter()
            .filter(|l| l.j > 0 && (l.j as u32) <= weight_cap)
            .map(|l| (TimeVar::T(*l), l.j as u32, weight_cap / l.j as u32))
            .collect();
        SeriesRing::new(field, &vars)
    }

    pub fn field(&self) -> &Arc<NumberField> {
        &self.field
    }

    pub fn vars(&self) -> impl Iterator<Item = TimeVar> + '_ {
        self.slots.iter().map(|s| s.var)
    }

    pub fn has_var(&self, v: &TimeVar) -> bool {
        self.index.contains_key(v)
    }

    pub fn var_weight(&self, v: &TimeVar) -> Option<u32> {
        self.index.get(v).map(|&i| self.slots[i].weight)
    }

    #[inline]
    pub fn lambda_of(&self, key: u128) -> u32 {
        (key >> self.lambda_shift) as u32
    }

    #[inline]
    pub fn eps_of(&self, key: u128) -> i32 {
        ((key >> self.eps_shift) as u32 & ((1 << EPS_BITS) - 1)) as i32 - EPS_BIAS
    }

    #[inline]
    pub fn weight_of(&self, key: u128) -> u32 {
        key as u32 & WEIGHT_MAX
    }

    #[inline]
    fn eps_bias_key(&self) -> u128 {
        (EPS_BIAS as u128) << self.eps_shift
    }

    pub fn unit_key(&self) -> u128 {
        self.eps_bias_key()
    }

    pub fn encode(&self, m: &Monomial) -> Result<u128, SeriesError> {
        if m.lambda > LAMBDA_MAX {
            return Err(SeriesError::Layout(format!("λ exponent {} too large", m.lambda)));
        }
        if m.eps <= -EPS_BIAS || m.eps >= EPS_BIAS {
            return Err(SeriesError::Layout(format!("ε exponent {} out of range", m.eps)));
        }
        let mut key = ((m.lambda as u128) << self.lambda_shift) | (((m.eps + EPS_BIAS) as u128) << self.eps_shift);
        let mut weight = 0u32;
        for (v, e) in &m.vars {
            if *e == 0 {
                continue;
            }
            let i = *self.index.get(v).ok_or_else(|| SeriesError::UnknownVar(v.to_string()))?;
            let s = &self.slots[i];
            if bit_len(*e) > s.width {
                return Err(SeriesError::Layout(format!("exponent {e} of {v} exceeds the ring bound")));
            }
            key |= (*e as u128) << s.shift;
            weight += s.weight * e;
        }
        if weight > WEIGHT_MAX {
            return Err(SeriesError::Layout(format!("weight {weight} too large")));
        }
        Ok(key | weight as u128)
    }

    pub fn decode(&self, key: u128) -> Monomial {
        let vars = self
            .slots
            .iter()
            .filter_map(|s| {
                let e = ((key >> s.shift) as u32) & ((1 << s.width) - 1);
                (e > 0).then_some((s.var, e))
            })
            .collect();
        Monomial { lambda: self.lambda_of(key), eps: self.eps_of(key), vars }
    }

    /// Product key, or `None` when the product exceeds `cap`, `wcap` or a variable's exponent range
    /// (rings built for a weight cap hold every monomial below it).
    #[inline]
    fn mul_key(&self, a: u128, b: u128, cap: u32, wcap: u32) -> Option<u128> {
        if self.lambda_of(a) + self.lambda_of(b) > cap {
            return None;
        }
        if self.weight_of(a) + self.weight_of(b) > wcap {
            return None;
        }
        let e = self.eps_of(a) + self.eps_of(b);
        assert!(e > -EPS_BIAS && e < EPS_BIAS, "ε exponent {e} out of range");
        let key = a + b - self.eps_bias_key();
        (key & self.guard == 0).then_some(key)
    }
}

/// Sparse accumulator for sums of products.
pub struct Accum {
    field: Arc<NumberField>,
    map: FxHashMap<u128, Coords>,
}

impl Accum {
    pub fn new(field: &Arc<NumberField>) -> Self {
        Accum { field: field.clone(), map: FxHashMap::default() }
    }

    pub fn add_term(&mut self, key: u128, c: &[Rational]) {
        let f = &self.field;
        match self.map.get_mut(&key) {
            Some(e) => f.add_assign(e, c),
            None => {
                self.map.insert(key, c.iter().cloned().collect());
            }
        }
    }

    pub fn add_series(&mut self, s: &GradedSeries) {
        for (k, c) in &s.terms {
            self.add_term(*k, c);
        }
    }

    pub fn sub_series(&mut self, s: &GradedSeries) {
        for (k, c) in &s.terms {
            let n = self.field.neg(c);
            self.add_term(*k, &n);
        }
    }

    /// Adds `a·b` truncated at λ-degree `cap` and t-weight `wcap`.
    pub fn add_product(&mut self, a: &GradedSeries, b: &GradedSeries, cap: u32, wcap: u32) {
        let ring = &a.ring;
        let f = &self.field;
        for (ka, ca) in &a.terms {
            let la = ring.lambda_of(*ka);
            if la > cap {
                break;
            }
            for (kb, cb) in &b.terms {
                if ring.lambda_of(*kb) + la > cap {
                    break;
                }
                let Some(key) = ring.mul_key(*ka, *kb, cap, wcap) else { continue };
                let e = self.map.entry(key).or_insert_with(|| f.zero());
                f.mul_acc(e, ca, cb);
            }
        }
    }

    pub fn finish(self, ring: &Arc<SeriesRing>, cap: u32) -> GradedSeries {
        let mut terms: Vec<(u128, Coords)> = self
            .map
            .into_iter()
            .filter(|(k, c)| !NumberField::is_zero(c) && ring.lambda_of(*k) <= cap)
            .collect();
        terms.sort_unstable_by_key(|t| t.0);
        GradedSeries { ring: ring.clone(), cap, terms }
    }
}

/// Sparse truncated series with coefficients in the ring's field.
#[derive(Clone, Debug)]
pub struct GradedSeries {
    ring: Arc<SeriesRing>,
    cap: u32,
    terms: Vec<(u128, Coords)>,
}

impl PartialEq for GradedSeries {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.ring, &other.ring) || self.ring == other.ring) && self.terms == other.terms
    }
}

impl GradedSeries {
    pub fn zero(ring: &Arc<SeriesRing>, cap: u32) -> Self {
        GradedSeries { ring: ring.clone(), cap: cap.min(LAMBDA_MAX), terms: Vec::new() }
    }

    pub fn constant(ring: &Arc<SeriesRing>, cap: u32, c: Coords) -> Self {
        Self::term(ring, cap, ring.unit_key(), c)
    }

    pub fn one(ring: &Arc<SeriesRing>, cap: u32) -> Self {
        Self::constant(ring, cap, ring.field.one())
    }

    fn term(ring: &Arc<SeriesRing>, cap: u32, key: u128, c: Coords) -> Self {
        let mut s = GradedSeries::zero(ring, cap);
        if !NumberField::is_zero(&c) && ring.lambda_of(key) <= s.cap {
            s.terms.push((key, c));
        }
        s
    }

    pub fn monomial(ring: &Arc<SeriesRing>, cap: u32, m: &Monomial, c: Coords) -> Result<Self, SeriesError> {
        let key = ring.encode(m)?;
        Ok(Self::term(ring, cap, key, c))
    }

    pub fn from_terms(
        ring: &Arc<SeriesRing>,
        cap: u32,
        terms: impl IntoIterator<Item = (Monomial, Coords)>,
    ) -> Result<Self, SeriesError> {
        let mut acc = Accum::new(&ring.field);
        for (m, c) in terms {
            acc.add_term(ring.encode(&m)?, &c);
        }
        Ok(acc.finish(ring, cap.min(LAMBDA_MAX)))
    }

    pub fn ring(&self) -> &Arc<SeriesRing> {
        &self.ring
    }

    pub fn field(&self) -> &Arc<NumberField> {
        &self.ring.field
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn raw_terms(&self) -> &[(u128, Coords)] {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = (Monomial, &Coords)> + '_ {
        self.terms.iter().map(|(k, c)| (self.ring.decode(*k), c))
    }

    pub fn min_lambda(&self) -> Option<u32> {
        self.terms.first().map(|(k, _)| self.ring.lambda_of(*k))
    }

    /// Coefficient of `m`, zero if absent.
    pub fn coeff(&self, m: &Monomial) -> Coords {
        match self.ring.encode(m) {
            Ok(key) => match self.terms.binary_search_by_key(&key, |t| t.0) {
                Ok(i) => self.terms[i].1.clone(),
                Err(_) => self.ring.field.zero(),
            },
            Err(_) => self.ring.field.zero(),
        }
    }

    fn check(&self, other: &GradedSeries) -> Result<(), SeriesError> {
        if Arc::ptr_eq(&self.ring, &other.ring) || *self.ring == *other.ring {
            Ok(())
        } else if self.ring.field != other.ring.field {
            Err(NumError::FieldMismatch(self.ring.field.label().into(), other.ring.field.label().into()).into())
        } else {
            Err(SeriesError::RingMismatch)
        }
    }

    pub fn add(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.check(other)?;
        let cap = self.cap.min(other.cap);
        let mut acc = Accum::new(&self.ring.field);
        acc.add_series(self);
        acc.add_series(other);
        Ok(acc.finish(&self.ring, cap))
    }

    pub fn sub(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> GradedSeries {
        let f = &self.ring.field;
        GradedSeries {
            ring: self.ring.clone(),
            cap: self.cap,
            terms: self.terms.iter().map(|(k, c)| (*k, f.neg(c))).collect(),
        }
    }

    pub fn mul(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.mul_capped(other, self.cap.min(other.cap), NO_WEIGHT_CAP)
    }

    pub fn mul_capped(&self, other: &GradedSeries, cap: u32, wcap: u32) -> Result<GradedSeries, SeriesError> {
        self.check(other)?;
        let cap = cap.min(self.cap).min(other.cap);
        let mut acc = Accum::new(&self.ring.field);
        acc.add_product(self, other, cap, wcap);
        Ok(acc.finish(&self.ring, cap))
    }

    pub fn scale(&self, c: &[Rational]) -> GradedSeries {
        let f = &self.ring.field;
        let terms = self
            .terms
            .iter()
            .map(|(k, x)| (*k, f.mul(x, c)))
            .filter(|(_, x)| !NumberField::is_zero(x))
            .collect();
        GradedSeries { ring: self.ring.clone(), cap: self.cap, terms }
    }

    pub fn scale_rational(&self, r: &Rational) -> GradedSeries {
        if *r == 0u32 {
            return GradedSeries::zero(&self.ring, self.cap);
        }
        let f = &self.ring.field;
        GradedSeries {
            ring: self.ring.clone(),
            cap: self.cap,
            terms: self.terms.iter().map(|(k, x)| (*k, f.scale(x, r))).collect(),
        }
    }

    /// Multiplies every term by the monomial `m` (which must have no variables outside the ring).
    pub fn shift(&self, m: &Monomial) -> Result<GradedSeries, SeriesError> {
        let key = self.ring.encode(m)?;
        let mut acc = Accum::new(&self.ring.field);
        for (k, c) in &self.terms {
            if let Some(nk) = self.ring.mul_key(*k, key, self.cap, NO_WEIGHT_CAP) {
                acc.add_term(nk, c);
            }
        }
        Ok(acc.finish(&self.ring, self.cap))
    }

    pub fn truncate(&self, cap: u32) -> GradedSeries {
        let cap = cap.min(self.cap);
        let terms = self.terms.iter().filter(|(k, _)| self.ring.lambda_of(*k) <= cap).cloned().collect();
        GradedSeries { ring: self.ring.clone(), cap, terms }
    }

    pub fn truncate_weight(&self, wcap: u32) -> GradedSeries {
        let terms = self.terms.iter().filter(|(k, _)| self.ring.weight_of(*k) <= wcap).cloned().collect();
        GradedSeries { ring: self.ring.clone(), cap: self.cap, terms }
    }

    /// The sub-series of monomials satisfying `pred`.
    pub fn extract(&self, pred: impl Fn(&Monomial) -> bool) -> GradedSeries {
        let terms = self.terms.iter().filter(|(k, _)| pred(&self.ring.decode(*k))).cloned().collect();
        GradedSeries { ring: self.ring.clone(), cap: self.cap, terms }
    }

    /// Rebuilds the series in `ring`, transforming each term; `None` drops the term.
    pub fn map_terms(
        &self,
        ring: &Arc<SeriesRing>,
        cap: u32,
        f: impl Fn(&Monomial, &Coords) -> Result<Option<(Monomial, Coords)>, SeriesError>,
    ) -> Result<GradedSeries, SeriesError> {
        let mut acc = Accum::new(&ring.field);
        for (k, c) in &self.terms {
            if let Some((m, nc)) = f(&self.ring.decode(*k), c)? {
                acc.add_term(ring.encode(&m)?, &nc);
            }
        }
        Ok(acc.finish(ring, cap))
    }

    /// Moves coefficients into another field.
    pub fn map_field(&self, ring: &Arc<SeriesRing>, map: &FieldMap) -> Result<GradedSeries, SeriesError> {
        self.map_terms(ring, self.cap, |m, c| Ok(Some((m.clone(), map.apply(c)))))
    }

    /// Rational coefficients of all terms, failing on any irrational one.
    pub fn rational_terms(&self) -> Result<Vec<(Monomial, Rational)>, SeriesError> {
        self.terms
            .iter()
            .map(|(k, c)| Ok((self.ring.decode(*k), self.ring.field.project_rational(c)?)))
            .collect()
    }

    /// Canonical JSON: terms in monomial order; coefficients `"p/q"` when rational.
    pub fn to_json(&self) -> Value {
        let f = &self.ring.field;
        let arr: Vec<Value> = self
            .terms
            .iter()
            .map(|(k, c)| {
                let m = self.ring.decode(*k);
                let vars: serde_json::Map<String, Value> =
                    m.vars.iter().map(|(v, e)| (v.to_string(), json!(e))).collect();
                let coeff = match f.project_rational(c) {
                    Ok(r) => json!(rational_to_string(&r)),
                    Err(_) => json!({
                        "field": f.label(),
                        "coords": c.iter().map(rational_to_string).collect::<Vec<_>>()
                    }),
                };
                json!({"eps": m.eps, "lambda": m.lambda, "vars": vars, "coeff": coeff})
            })
            .collect();
        Value::Array(arr)
    }

    pub fn from_json(ring: &Arc<SeriesRing>, cap: u32, v: &Value) -> Result<GradedSeries, SeriesError> {
        let arr = v.as_array().ok_or_else(|| SeriesError::Parse("expected an array of terms".into()))?;
        let terms = arr.iter().map(|t| parse_term(ring, t)).collect::<Result<Vec<_>, _>>()?;
        GradedSeries::from_terms(ring, cap, terms)
    }
}

/// Parses one `{eps, lambda, vars, coeff}` object.
pub fn parse_term(ring: &Arc<SeriesRing>, t: &Value) -> Result<(Monomial, Coords), SeriesError> {
    let bad = |what: &str| SeriesError::Parse(format!("term {t}: {what}"));
    let eps = t.get("eps").and_then(Value::as_i64).ok_or_else(|| bad("eps"))? as i32;
    let lambda = t.get("lambda").and_then(Value::as_u64).ok_or_else(|| bad("lambda"))? as u32;
    let mut vars = Vec::new();
    if let Some(obj) = t.get("vars").and_then(Value::as_object) {
        for (name, e) in obj {
            let v: TimeVar = name.parse()?;
            vars.push((v, e.as_u64().ok_or_else(|| bad("exponent"))? as u32));
        }
    }
    let f = &ring.field;
    let coeff = match t.get("coeff") {
        Some(Value::String(s)) => f.from_rational(parse_rational(s)?),
        Some(Value::Object(o)) => {
            let coords = o.get("coords").and_then(Value::as_array).ok_or_else(|| bad("coords"))?;
            if coords.len() != f.degree() {
                return Err(bad("coordinate count"));
            }
            coords
                .iter()
                .map(|c| c.as_str().ok_or_else(|| bad("coordinate")).and_then(|s| Ok(parse_rational(s)?)))
                .collect::<Result<Coords, _>>()?
        }
        _ => return Err(bad("coeff")),
    };
    Ok((Monomial::new(lambda, eps, vars), coeff))
}

impl fmt::Display for GradedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let field = &self.ring.field;
        for (i, (k, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            let coeff = match field.project_rational(c) {
                Ok(r) => r.to_string(),
                Err(_) => format!("[{}]", c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")),
            };
            write!(f, "({coeff})*{}", self.ring.decode(*k))?;
        }
        Ok(())
    }
}

/// A matrix-valued Laurent polynomial in z with constant coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentMatrix {
    field: Arc<NumberField>,
    n: usize,
    coeffs: BTreeMap<i32, Mat>,
}

impl LaurentMatrix {
    pub fn zero(field: &Arc<NumberField>, n: usize) -> Self {
        LaurentMatrix { field: field.clone(), n, coeffs: BTreeMap::new() }
    }

    pub fn identity(field: &Arc<NumberField>, n: usize) -> Self {
        Self::monomial(Mat::identity(field, n), 0)
    }

    /// `m · z^k`.
    pub fn monomial(m: Mat, k: i32) -> Self {
        let mut out = LaurentMatrix::zero(m.field(), m.rows());
        out.insert(k, m);
        out
    }

    pub fn field(&self) -> &Arc<NumberField> {
        &self.field
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn insert(&mut self, k: i32, m: Mat) {
        if m.is_zero() {
            self.coeffs.remove(&k);
        } else {
            self.coeffs.insert(k, m);
        }
    }

    pub fn coeff(&self, k: i32) -> Mat {
        self.coeffs.get(&k).cloned().unwrap_or_else(|| Mat::zero(&self.field, self.n, self.n))
    }

    pub fn coeffs(&self) -> &BTreeMap<i32, Mat> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Nonzero entries as `(z-exponent, row, col, value)`.
    pub fn entries(&self) -> Vec<(i32, usize, usize, Coords)> {
        let mut out = Vec::new();
        for (k, m) in &self.coeffs {
            for (r, c, v) in m.nonzero_entries() {
                out.push((*k, r, c, v.clone()));
            }
        }
        out
    }

    pub fn add(&self, other: &LaurentMatrix) -> LaurentMatrix {
        let mut out = self.clone();
        for (k, m) in &other.coeffs {
            let cur = out.coeff(*k);
            out.insert(*k, cur.add(m));
        }
        out
    }

    pub fn sub(&self, other: &LaurentMatrix) -> LaurentMatrix {
        self.add(&other.scale_rational(&Rational::from(-1)))
    }

    pub fn scale(&self, c: &[Rational]) -> LaurentMatrix {
        let mut out = LaurentMatrix::zero(&self.field, self.n);
        for (k, m) in &self.coeffs {
            out.insert(*k, m.scale(c));
        }
        out
    }

    pub fn scale_rational(&self, r: &Rational) -> LaurentMatrix {
        let mut out = LaurentMatrix::zero(&self.field, self.n);
        for (k, m) in &self.coeffs {
            out.insert(*k, m.scale_rational(r));
        }
        out
    }

    pub fn mul(&self, other: &LaurentMatrix) -> LaurentMatrix {
        let mut sums: BTreeMap<i32, Mat> = BTreeMap::new();
        for (i, a) in &self.coeffs {
            for (j, b) in &other.coeffs {
                let p = a.mul(b);
                let e = sums.entry(i + j).or_insert_with(|| Mat::zero(&self.field, self.n, self.n));
                *e = e.add(&p);
            }
        }
        let mut out = LaurentMatrix::zero(&self.field, self.n);
        for (k, m) in sums {
            out.insert(k, m);
        }
        out
    }

    pub fn pow(&self, e: u32) -> LaurentMatrix {
        let mut acc = LaurentMatrix::identity(&self.field, self.n);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn commutator(&self, other: &LaurentMatrix) -> LaurentMatrix {
        self.mul(other).sub(&other.mul(self))
    }

    /// Multiplies by `z^s`.
    pub fn shift(&self, s: i32) -> LaurentMatrix {
        LaurentMatrix {
            field: self.field.clone(),
            n: self.n,
            coeffs: self.coeffs.iter().map(|(k, m)| (k + s, m.clone())).collect(),
        }
    }

    pub fn d_dz(&self) -> LaurentMatrix {
        let mut out = LaurentMatrix::zero(&self.field, self.n);
        for (k, m) in &self.coeffs {
            out.insert(k - 1, m.scale_rational(&Rational::from(*k)));
        }
        out
    }

    pub fn map_field(&self, map: &FieldMap) -> LaurentMatrix {
        let mut out = LaurentMatrix::zero(&map.target, self.n);
        for (k, m) in &self.coeffs {
            out.insert(*k, m.map_field(map));
        }
        out
    }

    /// Flattens to a coordinate vector over the given z-exponent window (for linear algebra).
    pub fn flatten(&self, zmin: i32, zmax: i32) -> Vec<Coords> {
        let mut v = Vec::with_capacity(((zmax - zmin + 1) as usize) * self.n * self.n);
        for k in zmin..=zmax {
            let m = self.coeff(k);
            v.extend(m.entries().iter().cloned());
        }
        v
    }

    pub fn z_range(&self) -> Option<(i32, i32)> {
        Some((*self.coeffs.keys().next()?, *self.coeffs.keys().next_back()?))
    }
}

/// An n×n matrix of [`GradedSeries`], row-major.
pub type SeriesMatrix = Vec<GradedSeries>;

/// Matrix-valued Laurent series in z with graded-series entries.
#[derive(Clone, Debug)]
pub struct LoopMatrix {
    ring: Arc<SeriesRing>,
    cap: u32,
    n: usize,
    h: Option<u32>,
    coeffs: BTreeMap<i32, SeriesMatrix>,
}

impl PartialEq for LoopMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.coeffs == other.coeffs
    }
}

fn zero_matrix(ring: &Arc<SeriesRing>, cap: u32, n: usize) -> SeriesMatrix {
    vec![GradedSeries::zero(ring, cap); n * n]
}

impl LoopMatrix {
    pub fn zero(ring: &Arc<SeriesRing>, cap: u32, n: usize, h: Option<u32>) -> Self {
        LoopMatrix { ring: ring.clone(), cap: cap.min(LAMBDA_MAX), n, h, coeffs: BTreeMap::new() }
    }

    pub fn identity(ring: &Arc<SeriesRing>, cap: u32, n: usize, h: Option<u32>) -> Self {
        let mut out = Self::zero(ring, cap, n, h);
        let mut m = zero_matrix(ring, cap, n);
        for i in 0..n {
            m[i * n + i] = GradedSeries::one(ring, cap);
        }
        out.coeffs.insert(0, m);
        out
    }

    /// `scalar · lm`, validated against the admissibility constant `h`.
    pub fn from_laurent(
        lm: &LaurentMatrix,
        scalar: &GradedSeries,
        cap: u32,
        h: Option<u32>,
    ) -> Result<Self, SeriesError> {
        let ring = scalar.ring();
        if lm.field() != ring.field() {
            return Err(NumError::FieldMismatch(lm.field().label().into(), ring.field().label().into()).into());
        }
        let n = lm.n();
        let mut coeffs = BTreeMap::new();
        for (k, m) in lm.coeffs() {
            let mut sm = zero_matrix(ring, cap, n);
            for (r, c, v) in m.nonzero_entries() {
                sm[r * n + c] = scalar.scale(v).truncate(cap);
            }
            coeffs.insert(*k, sm);
        }
        Self::from_coeffs(ring, cap, n, h, coeffs)
    }

    pub fn from_coeffs(
        ring: &Arc<SeriesRing>,
        cap: u32,
        n: usize,
        h: Option<u32>,
        coeffs: BTreeMap<i32, SeriesMatrix>,
    ) -> Result<Self, SeriesError> {
        for m in coeffs.values() {
            if m.len() != n * n {
                return Err(SeriesError::DimensionMismatch(m.len(), n * n));
            }
        }
        let mut out = LoopMatrix { ring: ring.clone(), cap: cap.min(LAMBDA_MAX), n, h, coeffs };
        out.prune();
        out.validate()?;
        Ok(out)
    }

    fn prune(&mut self) {
        self.coeffs.retain(|_, m| m.iter().any(|s| !s.is_zero()));
    }

    pub fn ring(&self) -> &Arc<SeriesRing> {
        &self.ring
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> Option<u32> {
        self.h
    }

    pub fn z_exponents(&self) -> impl Iterator<Item = i32> + '_ {
        self.coeffs.keys().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Checks λ-degree ≥ (|k|−1)·h for every z^k coefficient.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let Some(h) = self.h else { return Ok(()) };
        for (k, m) in &self.coeffs {
            let required = (k.unsigned_abs().saturating_sub(1)) * h;
            for s in m {
                if let Some(l) = s.min_lambda() {
                    if l < required {
                        return Err(SeriesError::Admissibility { k: *k, lambda: l, required });
                    }
                }
            }
        }
        Ok(())
    }

    /// The z^k coefficient matrix.
    pub fn fourier(&self, k: i32) -> SeriesMatrix {
        self.coeffs.get(&k).cloned().unwrap_or_else(|| zero_matrix(&self.ring, self.cap, self.n))
    }

    pub fn fourier_ref(&self, k: i32) -> Option<&SeriesMatrix> {
        self.coeffs.get(&k)
    }

    pub fn entry(&self, k: i32, r: usize, c: usize) -> GradedSeries {
        self.coeffs
            .get(&k)
            .map(|m| m[r * self.n + c].clone())
            .unwrap_or_else(|| GradedSeries::zero(&self.ring, self.cap))
    }

    fn compatible(&self, other: &LoopMatrix) -> Result<(), SeriesError> {
        if self.n != other.n {
            return Err(SeriesError::DimensionMismatch(self.n, other.n));
        }
        if !(Arc::ptr_eq(&self.ring, &other.ring) || *self.ring == *other.ring) {
            return Err(SeriesError::RingMismatch);
        }
        Ok(())
    }

    fn combine_h(&self, other: &LoopMatrix) -> Option<u32> {
        match (self.h, other.h) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn add(&self, other: &LoopMatrix) -> Result<LoopMatrix, SeriesError> {
        self.compatible(other)?;
        let cap = self.cap.min(other.cap);
        let mut coeffs = BTreeMap::new();
        let keys: std::collections::BTreeSet<i32> = self.coeffs.keys().chain(other.coeffs.keys()).copied().collect();
        for k in keys {
            let a = self.fourier(k);
            let b = other.fourier(k);
            let m: SeriesMatrix = a.iter().zip(&b).map(|(x, y)| x.add(y)).collect::<Result<_, _>>()?;
            coeffs.insert(k, m);
        }
        let mut out = LoopMatrix { ring: self.ring.clone(), cap, n: self.n, h: self.combine_h(other), coeffs };
        out.prune();
        Ok(out)
    }

    pub fn neg(&self) -> LoopMatrix {
        let mut out = self.clone();
        for m in out.coeffs.values_mut() {
            for s in m.iter_mut() {
                *s = s.neg();
            }
        }
        out
    }

    pub fn sub(&self, other: &LoopMatrix) -> Result<LoopMatrix, SeriesError> {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &GradedSeries) -> Result<LoopMatrix, SeriesError> {
        let mut out = self.clone();
        for m in out.coeffs.values_mut() {
            for e in m.iter_mut() {
                *e = e.mul(s)?;
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn scale_rational(&self, r: &Rational) -> LoopMatrix {
        let mut out = self.clone();
        for m in out.coeffs.values_mut() {
            for e in m.iter_mut() {
                *e = e.scale_rational(r);
            }
        }
        out.prune();
        out
    }

    pub fn truncate(&self, cap: u32) -> LoopMatrix {
        let mut out = self.clone();
        out.cap = cap.min(self.cap);
        for m in out.coeffs.values_mut() {
            for e in m.iter_mut() {
                *e = e.truncate(cap);
            }
        }
        out.prune();
        out
    }

    /// Keeps only z-exponents satisfying `pred`.
    pub fn filter_z(&self, pred: impl Fn(i32) -> bool) -> LoopMatrix {
        let mut out = self.clone();
        out.coeffs.retain(|k, _| pred(*k));
        out
    }

    /// Multiplies by `z^s`.
    pub fn shift_z(&self, s: i32) -> LoopMatrix {
        let mut out = self.clone();
        out.coeffs = self.coeffs.iter().map(|(k, m)| (k + s, m.clone())).collect();
        out
    }

    /// Loop-matrix product; `wcap` prunes by t-weight.
    pub fn mul_capped(&self, other: &LoopMatrix, cap: u32, wcap: u32) -> Result<LoopMatrix, SeriesError> {
        self.compatible(other)?;
        let cap = cap.min(self.cap).min(other.cap);
        let n = self.n;
        let mut targets: BTreeMap<i32, Vec<(i32, i32)>> = BTreeMap::new();
        for i in self.coeffs.keys() {
            for j in other.coeffs.keys() {
                targets.entry(i + j).or_default().push((*i, *j));
            }
        }
        let jobs: Vec<(i32, usize)> = targets.keys().flat_map(|k| (0..n * n).map(move |e| (*k, e))).collect();
        let ring = &self.ring;
        let results: Vec<(i32, usize, GradedSeries)> = jobs
            .par_iter()
            .map(|&(k, e)| {
                let (r, c) = (e / n, e % n);
                let mut acc = Accum::new(ring.field());
                for (i, j) in &targets[&k] {
                    let a = &self.coeffs[i];
                    let b = &other.coeffs[j];
                    for m in 0..n {
                        let x = &a[r * n + m];
                        let y = &b[m * n + c];
                        if x.is_zero() || y.is_zero() {
                            continue;
                        }
                        acc.add_product(x, y, cap, wcap);
                    }
                }
                (k, e, acc.finish(ring, cap))
            })
            .collect();
        let mut coeffs: BTreeMap<i32, SeriesMatrix> = BTreeMap::new();
        for (k, e, s) in results {
            coeffs.entry(k).or_insert_with(|| zero_matrix(ring, cap, n))[e] = s;
        }
        let mut out = LoopMatrix { ring: ring.clone(), cap, n, h: self.combine_h(other), coeffs };
        out.prune();
        Ok(out)
    }

    pub fn mul(&self, other: &LoopMatrix) -> Result<LoopMatrix, SeriesError> {
        self.mul_capped(other, LAMBDA_MAX, NO_WEIGHT_CAP)
    }

    /// `Σ S^m/m!`; every monomial of `S` must have positive λ-degree.
    pub fn exp(&self) -> Result<LoopMatrix, SeriesError> {
        self.exp_capped(NO_WEIGHT_CAP)
    }

    pub fn exp_capped(&self, wcap: u32) -> Result<LoopMatrix, SeriesError> {
        for m in self.coeffs.values() {
            for s in m {
                if s.min_lambda() == Some(0) {
                    return Err(SeriesError::NonNilpotent);
                }
            }
        }
        let mut result = LoopMatrix::identity(&self.ring, self.cap, self.n, self.h);
        let mut term = result.clone();
        let mut m = 1u64;
        loop {
            term = term.mul_capped(self, self.cap, wcap)?.scale_rational(&Rational::from(m).reciprocal());
            if term.is_zero() {
                break;
            }
            result = result.add(&term)?;
            m += 1;
        }
        Ok(result)
    }

    /// Exact `Σ_m x^m M^m / m!` for a constant loop matrix `M` and a monomial scalar `x` with λ > 0.
    pub fn exp_monomial(
        lm: &LaurentMatrix,
        x: &Monomial,
        ring: &Arc<SeriesRing>,
        cap: u32,
        wcap: u32,
        h: Option<u32>,
    ) -> Result<LoopMatrix, SeriesError> {
        if x.lambda == 0 {
            return Err(SeriesError::NonNilpotent);
        }
        let n = lm.n();
        let mut out = LoopMatrix::identity(ring, cap, n, h);
        let mut power = LaurentMatrix::identity(lm.field(), n);
        let mut m = 1u32;
        loop {
            let mono = Monomial::new(
                x.lambda * m,
                x.eps * m as i32,
                x.vars.iter().map(|(v, e)| (*v, e * m)).collect(),
            );
            let w: u32 = mono.vars.iter().map(|(v, e)| ring.var_weight(v).unwrap_or(0) * e).sum();
            if mono.lambda > cap || w > wcap {
                break;
            }
            power = power.mul(lm);
            let inv = factorial(m as u64).reciprocal();
            let scalar = GradedSeries::monomial(ring, cap, &mono, ring.field().from_rational(inv))?;
            out = out.add(&LoopMatrix::from_laurent(&power, &scalar, cap, h)?)?;
            m += 1;
        }
        Ok(out)
    }

    pub fn coeffs(&self) -> &BTreeMap<i32, SeriesMatrix> {
        &self.coeffs
    }
}
