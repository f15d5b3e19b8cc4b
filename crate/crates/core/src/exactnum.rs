//! Exact arithmetic over ℚ and small number fields ℚ[x]/(m(x)).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use malachite_base::num::arithmetic::traits::{Pow, Reciprocal};
use malachite_base::num::basic::traits::{One, Zero};
use malachite_nz::integer::Integer;
use malachite_nz::natural::Natural;
pub use malachite_q::Rational;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

/// Power-basis coordinates of a field element.
pub type Coords = SmallVec<[Rational; 2]>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NumError {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("field mismatch: {0} vs {1}")]
    FieldMismatch(String, String),
    #[error("element is not rational: coords {0:?}")]
    NonRational(Vec<String>),
    #[error("compositum degree {0} exceeds the limit of {MAX_FIELD_DEGREE}")]
    DegreeTooLarge(usize),
    #[error("malformed rational {0:?}")]
    Parse(String),
}

pub const MAX_FIELD_DEGREE: usize = 64;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::from_signeds(n, d)
}

pub fn int(n: i64) -> Rational {
    Rational::from(n)
}

/// Formats as `p/q` with an explicit denominator.
pub fn rational_to_string(r: &Rational) -> String {
    let sign = if *r < 0u32 { "-" } else { "" };
    format!("{sign}{}/{}", r.numerator_ref(), r.denominator_ref())
}

pub fn parse_rational(s: &str) -> Result<Rational, NumError> {
    Rational::from_str(s.trim()).map_err(|_| NumError::Parse(s.to_string()))
}

/// Serde adapter that writes rationals as `"p/q"` strings.
pub mod serde_rational {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(D::Error::custom)
    }
}

/// `n!` as a rational.
pub fn factorial(n: u64) -> Rational {
    let mut acc = Natural::ONE;
    for k in 2..=n {
        acc *= Natural::from(k);
    }
    Rational::from(acc)
}

/// A monic defining polynomial with precomputed reduction of `x^d .. x^{2d-2}`.
#[derive(Debug)]
pub struct NumberField {
    min_poly: Vec<Rational>,
    label: String,
    reduce: Vec<Vec<Rational>>,
}

impl PartialEq for NumberField {
    fn eq(&self, other: &Self) -> bool {
        self.min_poly == other.min_poly
    }
}

impl NumberField {
    /// `min_poly` lists coefficients from the constant term up; it must be monic.
    pub fn new(min_poly: Vec<Rational>, label: &str) -> Result<Self, NumError> {
        if min_poly.len() < 2 {
            return Err(NumError::InvalidField(format!("{label}: degree 0")));
        }
        if *min_poly.last().unwrap() != Rational::ONE {
            return Err(NumError::InvalidField(format!("{label}: not monic")));
        }
        let d = min_poly.len() - 1;
        if d > MAX_FIELD_DEGREE {
            return Err(NumError::DegreeTooLarge(d));
        }
        // x^d = -(m_0 + ... + m_{d-1} x^{d-1})
        let mut reduce = Vec::with_capacity(d.saturating_sub(1));
        let mut cur: Vec<Rational> = min_poly[..d].iter().map(|c| -c).collect();
        for _ in 0..d.saturating_sub(1).max(1) {
            reduce.push(cur.clone());
            // multiply by x
            let top = cur[d - 1].clone();
            let mut next = vec![Rational::ZERO; d];
            for i in (1..d).rev() {
                next[i] = cur[i - 1].clone();
            }
            if top != 0u32 {
                for (i, n) in next.iter_mut().enumerate() {
                    *n -= &top * &min_poly[i];
                }
            }
            cur = next;
        }
        Ok(NumberField { min_poly, label: label.to_string(), reduce })
    }

    pub fn rationals() -> Self {
        NumberField::new(vec![Rational::ZERO, Rational::ONE], "Q").unwrap()
    }

    pub fn quadratic(r: i64) -> Result<Self, NumError> {
        NumberField::new(vec![int(-r), Rational::ZERO, Rational::ONE], &format!("Q(sqrt{r})"))
    }

    pub fn cyclotomic(h: u32) -> Result<Self, NumError> {
        let poly = cyclotomic_poly(h);
        NumberField::new(poly.into_iter().map(Rational::from).collect(), &format!("Q(omega_{h})"))
    }

    pub fn degree(&self) -> usize {
        self.min_poly.len() - 1
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn min_poly(&self) -> &[Rational] {
        &self.min_poly
    }

    pub fn zero(&self) -> Coords {
        SmallVec::from_elem(Rational::ZERO, self.degree())
    }

    pub fn one(&self) -> Coords {
        self.from_rational(Rational::ONE)
    }

    pub fn from_rational(&self, r: Rational) -> Coords {
        let mut c = self.zero();
        c[0] = r;
        c
    }

    /// The class of `x`.
    pub fn generator(&self) -> Coords {
        let d = self.degree();
        if d == 1 {
            return self.from_rational(-&self.min_poly[0]);
        }
        let mut c = self.zero();
        c[1] = Rational::ONE;
        c
    }

    pub fn is_zero(c: &[Rational]) -> bool {
        c.iter().all(|x| *x == 0u32)
    }

    pub fn add(&self, a: &[Rational], b: &[Rational]) -> Coords {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sub(&self, a: &[Rational], b: &[Rational]) -> Coords {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn neg(&self, a: &[Rational]) -> Coords {
        a.iter().map(|x| -x).collect()
    }

    pub fn add_assign(&self, a: &mut Coords, b: &[Rational]) {
        for (x, y) in a.iter_mut().zip(b) {
            if *y != 0u32 {
                *x += y;
            }
        }
    }

    pub fn scale(&self, a: &[Rational], r: &Rational) -> Coords {
        a.iter().map(|x| if *x == 0u32 { Rational::ZERO } else { x * r }).collect()
    }

    pub fn mul(&self, a: &[Rational], b: &[Rational]) -> Coords {
        let mut out = self.zero();
        self.mul_acc(&mut out, a, b);
        out
    }

    /// `acc += a*b`, skipping zero coordinates.
    pub fn mul_acc(&self, acc: &mut Coords, a: &[Rational], b: &[Rational]) {
        let d = self.degree();
        if d == 1 {
            if a[0] != 0u32 && b[0] != 0u32 {
                acc[0] += &a[0] * &b[0];
            }
            return;
        }
        let mut high: SmallVec<[Rational; 4]> = SmallVec::new();
        for (i, x) in a.iter().enumerate() {
            if *x == 0u32 {
                continue;
            }
            for (j, y) in b.iter().enumerate() {
                if *y == 0u32 {
                    continue;
                }
                let p = x * y;
                let k = i + j;
                if k < d {
                    acc[k] += p;
                } else {
                    let idx = k - d;
                    while high.len() <= idx {
                        high.push(Rational::ZERO);
                    }
                    high[idx] += p;
                }
            }
        }
        for (idx, c) in high.iter().enumerate() {
            if *c == 0u32 {
                continue;
            }
            for (t, r) in self.reduce[idx].iter().enumerate() {
                if *r != 0u32 {
                    acc[t] += c * r;
                }
            }
        }
    }

    pub fn pow(&self, a: &[Rational], mut e: u64) -> Coords {
        let mut base: Coords = a.iter().cloned().collect();
        let mut acc = self.one();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            e >>= 1;
        }
        acc
    }

    pub fn inv(&self, a: &[Rational]) -> Result<Coords, NumError> {
        if Self::is_zero(a) {
            return Err(NumError::DivisionByZero);
        }
        let d = self.degree();
        if d == 1 {
            return Ok(self.from_rational((&a[0]).reciprocal()));
        }
        // columns: a * x^k
        let mut cols: Vec<Coords> = Vec::with_capacity(d);
        let mut cur: Coords = a.iter().cloned().collect();
        let x = self.generator();
        for _ in 0..d {
            cols.push(cur.clone());
            cur = self.mul(&cur, &x);
        }
        let m: Vec<Vec<Rational>> = (0..d).map(|r| (0..d).map(|c| cols[c][r].clone()).collect()).collect();
        let mut rhs = vec![Rational::ZERO; d];
        rhs[0] = Rational::ONE;
        let sol = solve_rational(m, rhs).ok_or(NumError::DivisionByZero)?;
        Ok(sol.into_iter().collect())
    }

    pub fn div(&self, a: &[Rational], b: &[Rational]) -> Result<Coords, NumError> {
        let bi = self.inv(b)?;
        Ok(self.mul(a, &bi))
    }

    pub fn project_rational(&self, a: &[Rational]) -> Result<Rational, NumError> {
        if a[1..].iter().all(|x| *x == 0u32) {
            Ok(a[0].clone())
        } else {
            Err(NumError::NonRational(a.iter().map(rational_to_string).collect()))
        }
    }
}

/// Integer coefficients of the h-th cyclotomic polynomial, constant term first.
pub fn cyclotomic_poly(h: u32) -> Vec<i64> {
    assert!(h >= 1);
    // x^h - 1 divided by Φ_d for proper divisors d
    let mut p = vec![0i64; h as usize + 1];
    p[0] = -1;
    p[h as usize] = 1;
    for d in 1..h {
        if h % d == 0 {
            p = poly_div_exact(&p, &cyclotomic_poly(d));
        }
    }
    p
}

fn poly_div_exact(num: &[i64], den: &[i64]) -> Vec<i64> {
    let mut r = num.to_vec();
    let dd = den.len() - 1;
    let lead = *den.last().unwrap();
    let mut q = vec![0i64; r.len() - dd];
    for k in (0..q.len()).rev() {
        let c = r[k + dd] / lead;
        q[k] = c;
        for (i, dc) in den.iter().enumerate() {
            r[k + i] -= c * dc;
        }
    }
    debug_assert!(r.iter().all(|&x| x == 0));
    q
}

/// Solves a square system exactly; `None` if singular.
pub fn solve_rational(mut m: Vec<Vec<Rational>>, mut rhs: Vec<Rational>) -> Option<Vec<Rational>> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| m[r][col] != 0u32)?;
        m.swap(col, piv);
        rhs.swap(col, piv);
        let inv = (&m[col][col]).reciprocal();
        for c in col..n {
            m[col][c] *= &inv;
        }
        rhs[col] *= &inv;
        for r in 0..n {
            if r != col && m[r][col] != 0u32 {
                let f = m[r][col].clone();
                for c in col..n {
                    let t = &f * &m[col][c];
                    m[r][c] -= t;
                }
                let t = &f * &rhs[col];
                rhs[r] -= t;
            }
        }
    }
    Some(rhs)
}

/// An element of a [`NumberField`].
#[derive(Clone, Debug)]
pub struct FieldElement {
    field: Arc<NumberField>,
    coords: Coords,
}

impl PartialEq for FieldElement {
    fn eq(&self, other: &Self) -> bool {
        self.field == other.field && self.coords == other.coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl FieldElement {
    pub fn new(field: Arc<NumberField>, coords: Coords) -> Result<Self, NumError> {
        if coords.len() != field.degree() {
            return Err(NumError::InvalidField(format!(
                "{} coordinates for a degree-{} field",
                coords.len(),
                field.degree()
            )));
        }
        Ok(FieldElement { field, coords })
    }

    pub fn from_rational(field: &Arc<NumberField>, r: Rational) -> Self {
        FieldElement { coords: field.from_rational(r), field: field.clone() }
    }

    pub fn generator(field: &Arc<NumberField>) -> Self {
        FieldElement { coords: field.generator(), field: field.clone() }
    }

    pub fn field(&self) -> &Arc<NumberField> {
        &self.field
    }

    pub fn coords(&self) -> &[Rational] {
        &self.coords
    }

    pub fn is_zero(&self) -> bool {
        NumberField::is_zero(&self.coords)
    }

    pub fn arith(&self, other: &FieldElement, op: FieldOp) -> Result<FieldElement, NumError> {
        if self.field != other.field {
            return Err(NumError::FieldMismatch(
                self.field.label().to_string(),
                other.field.label().to_string(),
            ));
        }
        let f = &self.field;
        let coords = match op {
            FieldOp::Add => f.add(&self.coords, &other.coords),
            FieldOp::Sub => f.sub(&self.coords, &other.coords),
            FieldOp::Mul => f.mul(&self.coords, &other.coords),
            FieldOp::Div => f.div(&self.coords, &other.coords)?,
        };
        Ok(FieldElement { field: f.clone(), coords })
    }

    pub fn pow(&self, e: u64) -> FieldElement {
        FieldElement { coords: self.field.pow(&self.coords, e), field: self.field.clone() }
    }

    pub fn inv(&self) -> Result<FieldElement, NumError> {
        Ok(FieldElement { coords: self.field.inv(&self.coords)?, field: self.field.clone() })
    }

    pub fn project_rational(&self) -> Result<Rational, NumError> {
        self.field.project_rational(&self.coords)
    }
}

macro_rules! fe_binop {
    ($tr:ident, $m:ident, $op:expr) => {
        impl std::ops::$tr for &FieldElement {
            type Output = FieldElement;
            fn $m(self, rhs: &FieldElement) -> FieldElement {
                self.arith(rhs, $op).expect("field arithmetic")
            }
        }
    };
}
fe_binop!(Add, add, FieldOp::Add);
fe_binop!(Sub, sub, FieldOp::Sub);
fe_binop!(Mul, mul, FieldOp::Mul);
fe_binop!(Div, div, FieldOp::Div);

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, c) in self.coords.iter().enumerate() {
            if *c == 0u32 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "({c})*x")?,
                _ => write!(f, "({c})*x^{k}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FieldElementRepr {
    field: String,
    coords: Vec<String>,
}

impl Serialize for FieldElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FieldElementRepr {
            field: self.field.label().to_string(),
            coords: self.coords.iter().map(rational_to_string).collect(),
        }
        .serialize(s)
    }
}

/// Linear map between power bases, given by the images of `1, x, .., x^{d-1}`.
#[derive(Clone, Debug)]
pub struct FieldMap {
    pub target: Arc<NumberField>,
    images: Vec<Coords>,
}

impl FieldMap {
    pub fn apply(&self, a: &[Rational]) -> Coords {
        let mut out = self.target.zero();
        for (c, img) in a.iter().zip(&self.images) {
            if *c == 0u32 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(img) {
                if *v != 0u32 {
                    *o += c * v;
                }
            }
        }
        out
    }
}

/// A field ℚ(ω_h, √r₁, …, √r_k) with known square roots and root of unity.
///
/// Radicands are adjoined only when their square root is not already present,
/// so every intermediate tensor product is a field.
#[derive(Clone, Debug)]
pub struct RootedField {
    pub field: Arc<NumberField>,
    omega: Option<(u32, Coords)>,
    // squarefree radicand -> its square root
    roots: Vec<(i64, Coords)>,
    // generator = [ω] + Σ c_i √r_i
    gen_omega: bool,
    gen_roots: Vec<(i64, Rational)>,
}

impl RootedField {
    /// `h = None` omits the root of unity.
    pub fn build(h: Option<u32>, radicands: &[i64]) -> Result<RootedField, NumError> {
        let (field, omega, gen_omega) = match h {
            Some(h) if h > 2 => {
                let f = Arc::new(NumberField::cyclotomic(h)?);
                let w = f.generator();
                (f, Some((h, w)), true)
            }
            Some(h) => {
                let f = Arc::new(NumberField::rationals());
                let w = f.from_rational(if h == 2 { int(-1) } else { int(1) });
                (f, Some((h, w)), false)
            }
            None => (Arc::new(NumberField::rationals()), None, false),
        };
        let mut rf = RootedField { field, omega, roots: Vec::new(), gen_omega, gen_roots: Vec::new() };
        if let Some((h, _)) = rf.omega.clone() {
            for g in cyclotomic_radicands(h) {
                let s = rf.cyclotomic_sqrt(g);
                rf.roots.push((g, s));
            }
        }
        for &r in radicands {
            rf.adjoin_sqrt(r)?;
        }
        rf.relabel();
        Ok(rf)
    }

    fn relabel(&mut self) {
        let mut parts = Vec::new();
        if let Some((h, _)) = &self.omega {
            if *h > 2 {
                parts.push(format!("omega_{h}"));
            }
        }
        for (r, _) in &self.roots {
            if self.omega.is_none() || !cyclotomic_span_contains(self.omega.as_ref().unwrap().0, *r) {
                parts.push(format!("sqrt{r}"));
            }
        }
        let label = if parts.is_empty() { "Q".to_string() } else { format!("Q({})", parts.join(",")) };
        let f = NumberField::new(self.field.min_poly().to_vec(), &label).unwrap();
        self.field = Arc::new(f);
    }

    pub fn omega(&self) -> Option<Coords> {
        self.omega.as_ref().map(|(_, w)| w.clone())
    }

    fn cyclotomic_sqrt(&self, g: i64) -> Coords {
        let (h, w) = self.omega.clone().unwrap();
        let f = &self.field;
        let wp = |k: u32| f.pow(&w, k as u64);
        match g {
            -1 => wp(h / 4),
            2 => {
                let z8 = h / 8;
                f.add(&wp(z8), &wp(7 * z8))
            }
            p => {
                let pa = p.unsigned_abs() as u32;
                let step = h / pa;
                let mut acc = f.zero();
                for a in 1..pa {
                    let leg = legendre(a as i64, pa as i64);
                    let t = wp(step * a);
                    acc = if leg == 1 { f.add(&acc, &t) } else { f.sub(&acc, &t) };
                }
                acc
            }
        }
    }

    /// Expresses `r` modulo squares over the known radicands; returns (rational factor, indices).
    fn decompose(&self, r: i64) -> Option<(Rational, Vec<usize>)> {
        let target = sqfree_vector(r);
        let basis: Vec<Vec<i64>> = self.roots.iter().map(|(g, _)| sqfree_vector(*g)).collect();
        // brute force over subsets (few radicands)
        let k = basis.len();
        for mask in 0u64..(1u64 << k) {
            let mut acc: Vec<i64> = Vec::new();
            for (i, b) in basis.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    acc = xor_sets(&acc, b);
                }
            }
            if acc == target {
                let idx: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
                let mut prod = Rational::ONE;
                for &i in &idx {
                    prod *= int(self.roots[i].0);
                }
                let q2 = int(r) / prod;
                let q = rational_sqrt(&q2)?;
                return Some((q, idx));
            }
        }
        None
    }

    /// √r in this field, or an error if absent.
    pub fn sqrt(&self, r: i64) -> Result<Coords, NumError> {
        let (q, idx) = self
            .decompose(r)
            .ok_or_else(|| NumError::InvalidField(format!("sqrt({r}) not in {}", self.field.label())))?;
        let mut acc = self.field.from_rational(q);
        for i in idx {
            acc = self.field.mul(&acc, &self.roots[i].1);
        }
        Ok(acc)
    }

    fn adjoin_sqrt(&mut self, r: i64) -> Result<(), NumError> {
        if r == 0 || self.decompose(r).is_some() {
            return Ok(());
        }
        let g = sqfree_part(r);
        let old = self.field.clone();
        let d = old.degree();
        let nd = 2 * d;
        if nd > MAX_FIELD_DEGREE {
            return Err(NumError::DegreeTooLarge(nd));
        }
        let gr = int(g);
        // tensor element (a0, a1) = a0 + a1*y, y^2 = g
        let tmul = |a: &(Coords, Coords), b: &(Coords, Coords)| -> (Coords, Coords) {
            let mut c0 = old.mul(&a.0, &b.0);
            let t = old.mul(&a.1, &b.1);
            old.add_assign(&mut c0, &old.scale(&t, &gr));
            let mut c1 = old.mul(&a.0, &b.1);
            old.add_assign(&mut c1, &old.mul(&a.1, &b.0));
            (c0, c1)
        };
        let flat = |a: &(Coords, Coords)| -> Vec<Rational> { a.0.iter().chain(a.1.iter()).cloned().collect() };
        let xg = old.generator();
        for c in 1i64..50 {
            let theta = (xg.clone(), old.from_rational(int(c)));
            let mut pows = vec![(old.one(), old.zero())];
            for _ in 0..nd {
                let next = tmul(pows.last().unwrap(), &theta);
                pows.push(next);
            }
            // matrix with columns θ^0..θ^{nd-1}
            let cols: Vec<Vec<Rational>> = pows[..nd].iter().map(&flat).collect();
            let m: Vec<Vec<Rational>> = (0..nd).map(|r| (0..nd).map(|k| cols[k][r].clone()).collect()).collect();
            let top = flat(&pows[nd]);
            let Some(a) = solve_rational(m.clone(), top) else { continue };
            let mut min_poly: Vec<Rational> = a.iter().map(|x| -x).collect();
            min_poly.push(Rational::ONE);
            let newf = Arc::new(NumberField::new(min_poly, "tmp")?);
            let to_new = |v: Vec<Rational>| -> Coords {
                solve_rational(m.clone(), v).expect("primitive element basis").into_iter().collect()
            };
            // images of old power basis
            let mut images = Vec::with_capacity(d);
            for i in 0..d {
                let mut v = vec![Rational::ZERO; nd];
                v[i] = Rational::ONE;
                images.push(to_new(v));
            }
            let map = FieldMap { target: newf.clone(), images };
            let mut yv = vec![Rational::ZERO; nd];
            yv[d] = Rational::ONE;
            let y = to_new(yv);
            self.roots = self.roots.iter().map(|(r0, s)| (*r0, map.apply(s))).collect();
            self.omega = self.omega.as_ref().map(|(h, w)| (*h, map.apply(w)));
            self.roots.push((g, y));
            self.gen_roots.push((g, int(c)));
            self.field = newf;
            return Ok(());
        }
        Err(NumError::InvalidField(format!("no primitive element found adjoining sqrt{r}")))
    }

    /// Image of this field's generator inside `target`.
    pub fn embed_into(&self, target: &RootedField) -> Result<FieldMap, NumError> {
        let tf = &target.field;
        let mut g = tf.zero();
        if self.gen_omega {
            let (h, _) = self.omega.as_ref().unwrap();
            let (th, tw) = target
                .omega
                .as_ref()
                .ok_or_else(|| NumError::InvalidField("target lacks a root of unity".into()))?;
            if th % h != 0 {
                return Err(NumError::InvalidField(format!("omega_{h} not in {}", tf.label())));
            }
            g = tf.pow(tw, (th / h) as u64);
        } else if self.field.degree() == 1 {
            g = tf.from_rational(self.field.generator()[0].clone());
        }
        for (r, c) in &self.gen_roots {
            let s = target.sqrt(*r)?;
            tf.add_assign(&mut g, &tf.scale(&s, c));
        }
        let d = self.field.degree();
        let mut images = Vec::with_capacity(d);
        let mut cur = tf.one();
        for _ in 0..d {
            images.push(cur.clone());
            cur = tf.mul(&cur, &g);
        }
        Ok(FieldMap { target: tf.clone(), images })
    }
}

fn legendre(a: i64, p: i64) -> i64 {
    let mut r = 1i64;
    let e = (p - 1) / 2;
    let mut base = a.rem_euclid(p);
    let mut k = e;
    while k > 0 {
        if k & 1 == 1 {
            r = r * base % p;
        }
        base = base * base % p;
        k >>= 1;
    }
    if r == 1 { 1 } else { -1 }
}

fn cyclotomic_radicands(h: u32) -> Vec<i64> {
    let mut out = Vec::new();
    if h % 4 == 0 {
        out.push(-1);
    }
    if h % 8 == 0 {
        out.push(2);
    }
    let mut m = h;
    while m % 2 == 0 {
        m /= 2;
    }
    let mut p = 3;
    while m > 1 {
        if m % p == 0 {
            while m % p == 0 {
                m /= p;
            }
            let pi = p as i64;
            out.push(if pi % 4 == 1 { pi } else { -pi });
        }
        p += 2;
    }
    out
}

fn cyclotomic_span_contains(h: u32, r: i64) -> bool {
    let gens: Vec<Vec<i64>> = cyclotomic_radicands(h).iter().map(|g| sqfree_vector(*g)).collect();
    let t = sqfree_vector(r);
    (0u64..(1 << gens.len())).any(|mask| {
        let mut acc = Vec::new();
        for (i, g) in gens.iter().enumerate() {
            if mask >> i & 1 == 1 {
                acc = xor_sets(&acc, g);
            }
        }
        acc == t
    })
}

/// Sorted primes (and -1) dividing `r` to an odd power.
fn sqfree_vector(r: i64) -> Vec<i64> {
    let mut out = Vec::new();
    if r < 0 {
        out.push(-1);
    }
    let mut m = r.unsigned_abs() as i64;
    let mut p = 2;
    while p * p <= m {
        let mut e = 0;
        while m % p == 0 {
            m /= p;
            e += 1;
        }
        if e % 2 == 1 {
            out.push(p);
        }
        p += 1;
    }
    if m > 1 {
        out.push(m);
    }
    out
}

fn sqfree_part(r: i64) -> i64 {
    sqfree_vector(r).iter().product()
}

fn xor_sets(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out: Vec<i64> = a.iter().filter(|x| !b.contains(x)).chain(b.iter().filter(|x| !a.contains(x))).cloned().collect();
    out.sort();
    out
}

fn rational_sqrt(q: &Rational) -> Option<Rational> {
    if *q < 0u32 {
        return None;
    }
    let n = Integer::from(q.numerator_ref().clone());
    let d = Integer::from(q.denominator_ref().clone());
    let sn = isqrt(&n)?;
    let sd = isqrt(&d)?;
    Some(Rational::from_integers(sn, sd))
}

fn isqrt(n: &Integer) -> Option<Integer> {
    use malachite_base::num::arithmetic::traits::CheckedSqrt;
    n.clone().checked_sqrt()
}

/// `x(x+1)..(x+k)` for rational `x`.
pub fn rising_product(x: &Rational, k: u64) -> Rational {
    let mut acc = Rational::ONE;
    for s in 0..=k {
        acc *= x + Rational::from(s);
    }
    acc
}

pub fn rational_pow(r: &Rational, e: u64) -> Rational {
    r.pow(e)
}

/// Dense matrix over a [`NumberField`], row-major.
#[derive(Clone, Debug)]
pub struct Mat {
    field: Arc<NumberField>,
    rows: usize,
    cols: usize,
    data: Vec<Coords>,
}

impl PartialEq for Mat {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl Mat {
    pub fn zero(field: &Arc<NumberField>, rows: usize, cols: usize) -> Mat {
        Mat { field: field.clone(), rows, cols, data: vec![field.zero(); rows * cols] }
    }

    pub fn identity(field: &Arc<NumberField>, n: usize) -> Mat {
        let mut m = Mat::zero(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = field.one();
        }
        m
    }

    /// Matrix with rational entries `(r, c, value)`.
    pub fn from_entries(field: &Arc<NumberField>, n: usize, entries: &[(usize, usize, Rational)]) -> Mat {
        let mut m = Mat::zero(field, n, n);
        for (r, c, v) in entries {
            let cur = m.get(*r, *c).clone();
            m.set(*r, *c, field.add(&cur, &field.from_rational(v.clone())));
        }
        m
    }

    pub fn diagonal(field: &Arc<NumberField>, diag: &[Coords]) -> Mat {
        let n = diag.len();
        let mut m = Mat::zero(field, n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = d.clone();
        }
        m
    }

    pub fn field(&self) -> &Arc<NumberField> {
        &self.field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Coords {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Coords) {
        self.data[r * self.cols + c] = v;
    }

    pub fn entries(&self) -> &[Coords] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| NumberField::is_zero(c))
    }

    pub fn nonzero_entries(&self) -> impl Iterator<Item = (usize, usize, &Coords)> {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, c)| !NumberField::is_zero(c))
            .map(move |(k, c)| (k / cols, k % cols, c))
    }

    pub fn add(&self, other: &Mat) -> Mat {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| self.field.add(a, b)).collect();
        Mat { field: self.field.clone(), rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| self.field.sub(a, b)).collect();
        Mat { field: self.field.clone(), rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: &[Rational]) -> Mat {
        let data = self
            .data
            .iter()
            .map(|a| if NumberField::is_zero(a) { a.clone() } else { self.field.mul(a, s) })
            .collect();
        Mat { field: self.field.clone(), rows: self.rows, cols: self.cols, data }
    }

    pub fn scale_rational(&self, r: &Rational) -> Mat {
        let data = self.data.iter().map(|a| self.field.scale(a, r)).collect();
        Mat { field: self.field.clone(), rows: self.rows, cols: self.cols, data }
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matrix shape mismatch");
        let f = &self.field;
        let mut out = Mat::zero(f, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if NumberField::is_zero(a) {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if NumberField::is_zero(b) {
                        continue;
                    }
                    let idx = i * other.cols + j;
                    f.mul_acc(&mut out.data[idx], a, b);
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &Mat) -> Mat {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn trace(&self) -> Coords {
        let mut acc = self.field.zero();
        for i in 0..self.rows.min(self.cols) {
            self.field.add_assign(&mut acc, self.get(i, i));
        }
        acc
    }

    pub fn is_diagonal(&self) -> bool {
        self.nonzero_entries().all(|(r, c, _)| r == c)
    }

    /// Re-expresses entries in another field through `map`.
    pub fn map_field(&self, map: &FieldMap) -> Mat {
        let data = self.data.iter().map(|c| map.apply(c)).collect();
        Mat { field: map.target.clone(), rows: self.rows, cols: self.cols, data }
    }

    pub fn inverse(&self) -> Result<Mat, NumError> {
        let n = self.rows;
        let cols: Vec<Vec<Coords>> = (0..n).map(|c| (0..n).map(|r| self.get(r, c).clone()).collect()).collect();
        let mut out = Mat::zero(&self.field, n, n);
        for c in 0..n {
            let mut rhs = vec![self.field.zero(); n];
            rhs[c] = self.field.one();
            let sol = solve_linear(&self.field, &cols, &rhs)?.ok_or(NumError::DivisionByZero)?;
            for (r, v) in sol.into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        Ok(out)
    }
}

/// Finds `x` with `Σ_k x_k cols[k] = rhs`, choosing zero for free variables.
///
/// `Ok(None)` means the system is inconsistent.
pub fn solve_linear(
    field: &Arc<NumberField>,
    cols: &[Vec<Coords>],
    rhs: &[Coords],
) -> Result<Option<Vec<Coords>>, NumError> {
    let m = rhs.len();
    let k = cols.len();
    let mut a: Vec<Vec<Coords>> = (0..m)
        .map(|r| {
            let mut row: Vec<Coords> = cols.iter().map(|c| c[r].clone()).collect();
            row.push(rhs[r].clone());
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..k {
        let Some(p) = (row..m).find(|&r| !NumberField::is_zero(&a[r][col])) else { continue };
        a.swap(row, p);
        let inv = field.inv(&a[row][col])?;
        for c in col..=k {
            if !NumberField::is_zero(&a[row][c]) {
                a[row][c] = field.mul(&a[row][c], &inv);
            }
        }
        for r in 0..m {
            if r != row && !NumberField::is_zero(&a[r][col]) {
                let f = a[r][col].clone();
                for c in col..=k {
                    if !NumberField::is_zero(&a[row][c]) {
                        let t = field.mul(&f, &a[row][c]);
                        a[r][c] = field.sub(&a[r][c], &t);
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
        if row == m {
            break;
        }
    }
    if a[row..].iter().any(|r| !NumberField::is_zero(&r[k])) {
        return Ok(None);
    }
    let mut x = vec![field.zero(); k];
    for (r, &c) in pivots.iter().enumerate() {
        x[c] = a[r][k].clone();
    }
    Ok(Some(x))
}

/// Indices of a maximal linearly independent subset of `vecs`, greedily in order.
pub fn independent_subset(field: &Arc<NumberField>, vecs: &[Vec<Coords>]) -> Vec<usize> {
    let mut basis: Vec<(usize, Vec<Coords>)> = Vec::new();
    let mut keep = Vec::new();
    for (i, v) in vecs.iter().enumerate() {
        let mut w = v.clone();
        for (p, b) in &basis {
            if !NumberField::is_zero(&w[*p]) {
                let f = w[*p].clone();
                for (x, y) in w.iter_mut().zip(b) {
                    if !NumberField::is_zero(y) {
                        *x = field.sub(x, &field.mul(&f, y));
                    }
                }
            }
        }
        if let Some(p) = w.iter().position(|c| !NumberField::is_zero(c)) {
            let inv = field.inv(&w[p]).expect("nonzero pivot");
            let w: Vec<Coords> = w.iter().map(|c| field.mul(c, &inv)).collect();
            for (_, b) in basis.iter_mut() {
                if !NumberField::is_zero(&b[p]) {
                    let f = b[p].clone();
                    for (x, y) in b.iter_mut().zip(&w) {
                        if !NumberField::is_zero(y) {
                            *x = field.sub(x, &field.mul(&f, y));
                        }
                    }
                }
            }
            basis.push((p, w));
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_relation() {
        let f = Arc::new(NumberField::quadratic(2).unwrap());
        let x = FieldElement::generator(&f);
        assert_eq!((&x * &x).project_rational().unwrap(), int(2));
        let one = FieldElement::from_rational(&f, int(1));
        let a = &one + &x;
        let b = &x - &one;
        assert_eq!((&a * &b).project_rational().unwrap(), int(1));
        assert!(x.project_rational().is_err());
    }

    #[test]
    fn cyclotomic_three() {
        let f = Arc::new(NumberField::cyclotomic(3).unwrap());
        let w = FieldElement::generator(&f);
        assert_eq!(w.pow(3).project_rational().unwrap(), int(1));
        let one = FieldElement::from_rational(&f, int(1));
        let s = &(&one + &w) + &w.pow(2);
        assert!(s.is_zero());
        assert_eq!(s.project_rational().unwrap(), int(0));
        assert_eq!((&w * &w.pow(2)).project_rational().unwrap(), int(1));
    }

    #[test]
    fn degree_one_field() {
        let f = Arc::new(NumberField::rationals());
        assert_eq!(f.degree(), 1);
        let a = FieldElement::from_rational(&f, rat(3, 4));
        let b = FieldElement::from_rational(&f, rat(-1, 2));
        assert_eq!((&a / &b).project_rational().unwrap(), rat(-3, 2));
    }

    #[test]
    fn invalid_fields() {
        assert!(NumberField::new(vec![int(1)], "c").is_err());
        assert!(NumberField::new(vec![int(1), int(2)], "c").is_err());
    }

    #[test]
    fn mixed_fields_and_zero_division() {
        let f = Arc::new(NumberField::quadratic(2).unwrap());
        let g = Arc::new(NumberField::cyclotomic(3).unwrap());
        let a = FieldElement::generator(&f);
        let b = FieldElement::generator(&g);
        assert!(matches!(a.arith(&b, FieldOp::Add), Err(NumError::FieldMismatch(..))));
        let z = FieldElement::from_rational(&f, int(0));
        assert_eq!(a.arith(&z, FieldOp::Div), Err(NumError::DivisionByZero));
    }

    #[test]
    fn cyclotomic_polys() {
        assert_eq!(cyclotomic_poly(1), vec![-1, 1]);
        assert_eq!(cyclotomic_poly(4), vec![1, 0, 1]);
        assert_eq!(cyclotomic_poly(6), vec![1, -1, 1]);
        assert_eq!(cyclotomic_poly(12), vec![1, 0, -1, 0, 1]);
    }

    #[test]
    fn omega_order() {
        for h in [3u32, 4, 5, 6, 8, 12] {
            let f = Arc::new(NumberField::cyclotomic(h).unwrap());
            let w = FieldElement::generator(&f);
            for k in 1..h {
                assert!(w.pow(k as u64).project_rational().ok() != Some(int(1)));
            }
            assert_eq!(w.pow(h as u64).project_rational().unwrap(), int(1));
        }
    }

    #[test]
    fn rooted_fields() {
        let rf = RootedField::build(Some(6), &[2, 6]).unwrap();
        assert_eq!(rf.field.degree(), 8);
        let f = &rf.field;
        for r in [2i64, 3, 6, -1, -3, 8, 12] {
            let s = rf.sqrt(r).unwrap();
            assert_eq!(f.project_rational(&f.mul(&s, &s)).unwrap(), int(r));
        }
        let w = rf.omega().unwrap();
        assert_eq!(f.project_rational(&f.pow(&w, 6)).unwrap(), int(1));
        assert!(f.project_rational(&f.pow(&w, 3)).unwrap() == int(-1));
        // √2 ∈ ℚ(ω_8) is found without growing the field
        let rf8 = RootedField::build(Some(8), &[2]).unwrap();
        assert_eq!(rf8.field.degree(), 4);
        let small = RootedField::build(None, &[2, 3]).unwrap();
        assert_eq!(small.field.degree(), 4);
        let map = small.embed_into(&rf).unwrap();
        let s6 = small.sqrt(6).unwrap();
        assert_eq!(map.apply(&s6), rf.sqrt(6).unwrap());
    }

    #[test]
    fn linear_algebra() {
        let f = Arc::new(NumberField::quadratic(2).unwrap());
        let s2 = f.generator();
        let one = f.one();
        let m = Mat::diagonal(&f, &[s2.clone(), one.clone()]);
        let inv = m.inverse().unwrap();
        assert_eq!(m.mul(&inv), Mat::identity(&f, 2));
        let cols = vec![vec![one.clone(), f.zero()], vec![one.clone(), f.zero()]];
        let sol = solve_linear(&f, &cols, &[s2.clone(), f.zero()]).unwrap().unwrap();
        assert_eq!(sol[0], s2);
        assert!(solve_linear(&f, &cols, &[f.zero(), one.clone()]).unwrap().is_none());
        assert_eq!(independent_subset(&f, &cols), vec![0]);
    }

    #[test]
    fn rational_strings() {
        assert_eq!(rational_to_string(&rat(-3, 2)), "-3/2");
        assert_eq!(rational_to_string(&int(5)), "5/1");
        assert_eq!(parse_rational("-3/2").unwrap(), rat(-3, 2));
        assert_eq!(parse_rational("7").unwrap(), int(7));
        assert!(parse_rational("x").is_err());
    }
}
