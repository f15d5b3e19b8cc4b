//! Correlator generating functions at `t = 0` from the string-equation solution γ.
//!
//! With `z = ζ^h`, the Heisenberg generators are diagonalized by `P(ζ) = Z(ζ)⁻¹C`, where
//! `Z = diag(ζ^{d_r})` and `C` is constant, so `D_j = C⁻¹(ZΛ_jZ⁻¹ζ^{−j})C`.
//! Since `P D P⁻¹ = Σ_{0<j<h} ζ^{−j}Λ_j`, the conjugated matrix `K̄ = Ψ̄⁻¹DΨ̄` equals
//! `γ⁻¹(Σ ζ^{−j}Λ_j)γ` and never needs the cyclotomic field.
//!
//! All series here are ungraded (`ε = λ = 1`). A t-monomial of weight `w` in `m` variables
//! carries `λ^{2w} ε^{w/(h+1) − m}` in the graded expansion, so nothing is lost.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use malachite_base::num::arithmetic::traits::Reciprocal;
use serde_json::{json, Value};

use crate::botau::TauExpansion;
use crate::exactnum::{factorial, int, rational_to_string, Coords, FieldMap, Mat, NumError, Rational, RootedField};
use crate::gradedseries::{ExponentLabel, LaurentMatrix, Monomial, TimeVar};
use crate::kacmoody::{AlgebraData, AlgebraError, Family};
use crate::stringeq::GammaSolution;

#[derive(Debug, thiserror::Error)]
pub enum CorrelatorError {
    #[error("P(ζ)⁻¹Λ_{label}P(ζ)ζ^(−j) is not constant diagonal")]
    NotDiagonal { label: ExponentLabel },
    #[error("γ solved to level {have}, level {required} is needed")]
    UnderResolved { have: usize, required: usize },
    #[error("coefficient at {0} is irrational")]
    Irrational(String),
    #[error("non-negative power survives at ζ-exponents {0:?}: expansion region is inconsistent")]
    ExpansionRegion(Vec<i32>),
    #[error("coefficient at {0} violates the (ε, λ) grading")]
    Grading(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// One family of Heisenberg directions with its own spectral variable.
///
/// Type D with even rank has two (`ζ` for odd exponents, `ζ̂` for the primed ones); all other types one.
#[derive(Clone, Debug)]
pub struct Channel {
    /// Period representatives `0 < j < h`.
    pub labels: Vec<ExponentLabel>,
    pub primed: bool,
    /// `Σ D_j` over `labels`.
    pub d: Mat,
}

#[derive(Clone, Debug)]
pub struct Diagonalization {
    pub alg: Arc<AlgebraData>,
    /// ℚ(ω_h) composited with the field of the normalized generators.
    pub field: RootedField,
    pub from_full: FieldMap,
    /// `d_r`: row r of `P` is `ζ^{−d_r}` times row r of `C`.
    pub row_degrees: Vec<i32>,
    pub c: Mat,
    pub c_inv: Mat,
    /// `P(ζ)` and `P(ζ)⁻¹` as Laurent polynomials in ζ.
    pub p: LaurentMatrix,
    pub p_inv: LaurentMatrix,
    /// `D_j` for the period representatives.
    pub d_j: BTreeMap<ExponentLabel, Mat>,
    /// `D = Σ_{0<j<h} D_j`.
    pub d: Mat,
    pub channels: Vec<Channel>,
}

fn full_radicands(alg: &AlgebraData) -> Vec<i64> {
    let l = alg.rank() as i64;
    match alg.spec.family {
        Family::A | Family::C => vec![],
        Family::B | Family::G => vec![2],
        Family::D if l % 2 == 1 => vec![2, 2 * l - 2, -1],
        Family::D => vec![2, 2 * l - 2],
    }
}

/// True for type D with even rank, where the exponent `ℓ−1` is doubled.
pub fn has_double_exponent(alg: &AlgebraData) -> bool {
    alg.spec.family == Family::D && alg.rank() % 2 == 0
}

pub fn build_diagonalization(alg: &Arc<AlgebraData>) -> Result<Diagonalization, CorrelatorError> {
    let h = alg.h;
    let field = RootedField::build(Some(h), &full_radicands(alg))?;
    let from_full = alg.full.embed_into(&field)?;
    let f = field.field.clone();
    let omega = field.omega().expect("built with a root of unity");
    let w = |k: i64| f.pow(&omega, k.rem_euclid(h as i64) as u64);
    let n = alg.n;
    let l = alg.rank();
    let norm = int(h as i64).reciprocal();
    let mut c = Mat::zero(&f, n, n);
    let q = |r: Rational| f.from_rational(r);
    let row_degrees: Vec<i32> = match alg.spec.family {
        Family::A | Family::C => {
            for r in 0..n {
                for col in 0..n {
                    c.set(r, col, w(-((r * col) as i64)));
                }
            }
            (0..n as i32).collect()
        }
        Family::B | Family::G => {
            let ll = (n - 1) / 2;
            for col in 0..2 * ll {
                c.set(0, col, q(Rational::from_signeds(1, 2)));
                for r in 1..=2 * ll {
                    c.set(r, col, w(-((r * col) as i64)));
                }
            }
            c.set(0, 2 * ll, q(int(ll as i64)));
            c.set(2 * ll, 2 * ll, q(int(-2 * ll as i64)));
            (0..n as i32).collect()
        }
        Family::D => {
            let degrees: Vec<i32> = (0..n).map(|r| if r < l { r as i32 } else { r as i32 - 1 }).collect();
            for col in 0..2 * l - 2 {
                c.set(0, col, q(Rational::from_signeds(1, 2)));
                for r in 1..n {
                    let v = w(-(col as i64) * degrees[r] as i64);
                    c.set(r, col, if r == l { f.scale(&v, &Rational::from_signeds(1, 2)) } else { v });
                }
            }
            let mu = if l % 2 == 0 { f.one() } else { field.sqrt(-1)? };
            let mu_inv = f.inv(&mu)?;
            let lm1 = int(l as i64 - 1);
            for (col, sign) in [(2 * l - 2, int(1)), (2 * l - 1, int(-1))] {
                c.set(0, col, q(&lm1 * Rational::from_signeds(1, 2)));
                c.set(l - 1, col, f.scale(&mu_inv, &(-&lm1 * &sign)));
                c.set(l, col, f.scale(&mu_inv, &(&lm1 * &sign * Rational::from_signeds(1, 2))));
                c.set(n - 1, col, q(-lm1.clone()));
            }
            degrees
        }
    };
    let c = c.scale_rational(&norm);
    let c_inv = c.inverse()?;
    let mut p = LaurentMatrix::zero(&f, n);
    let mut p_inv = LaurentMatrix::zero(&f, n);
    for d in row_degrees.iter().copied().collect::<std::collections::BTreeSet<_>>() {
        let mut rows = Mat::zero(&f, n, n);
        let mut cols = Mat::zero(&f, n, n);
        for r in (0..n).filter(|&r| row_degrees[r] == d) {
            for k in 0..n {
                rows.set(r, k, c.get(r, k).clone());
                cols.set(k, r, c_inv.get(k, r).clone());
            }
        }
        p = p.add(&LaurentMatrix::monomial(rows, -d));
        p_inv = p_inv.add(&LaurentMatrix::monomial(cols, d));
    }
    let mut diag = Diagonalization {
        alg: alg.clone(),
        field,
        from_full,
        row_degrees,
        c,
        c_inv,
        p,
        p_inv,
        d_j: BTreeMap::new(),
        d: Mat::zero(&f, n, n),
        channels: Vec::new(),
    };
    for label in alg.exponents_in_period.clone() {
        let dj = diag.conjugate(label)?;
        diag.d = diag.d.add(&dj);
        diag.d_j.insert(label, dj);
    }
    let groups: Vec<bool> = if has_double_exponent(alg) { vec![false, true] } else { vec![false] };
    for primed in groups {
        let labels: Vec<ExponentLabel> = alg
            .exponents_in_period
            .iter()
            .copied()
            .filter(|e| !has_double_exponent(alg) || e.primed == primed)
            .collect();
        let mut d = Mat::zero(&f, n, n);
        for lb in &labels {
            d = d.add(&diag.d_j[lb]);
        }
        diag.channels.push(Channel { labels, primed, d });
    }
    Ok(diag)
}

impl Diagonalization {
    /// `P(ζ)⁻¹Λ_j P(ζ) ζ^{−j}` for any exponent label; errors unless it is constant diagonal.
    pub fn conjugate(&self, label: ExponentLabel) -> Result<Mat, CorrelatorError> {
        let alg = &self.alg;
        let gen = alg.heisenberg_generator(label)?.map_field(&self.from_full);
        let f = self.field.field.clone();
        let h = alg.h as i32;
        let mut nj = Mat::zero(&f, alg.n, alg.n);
        for (k, a, b, v) in gen.entries() {
            if self.row_degrees[a] - self.row_degrees[b] + h * k - label.j != 0 {
                return Err(CorrelatorError::NotDiagonal { label });
            }
            nj.set(a, b, v);
        }
        let dj = self.c_inv.mul(&nj).mul(&self.c);
        if !dj.is_diagonal() {
            return Err(CorrelatorError::NotDiagonal { label });
        }
        Ok(dj)
    }

    pub fn p_inverse_holds(&self) -> bool {
        self.p.mul(&self.p_inv) == LaurentMatrix::identity(&self.field.field, self.alg.n)
    }

    /// `κ Tr(D_j D_{j'})` for all ordered pairs of period representatives.
    pub fn pairings(&self) -> Vec<(ExponentLabel, ExponentLabel, Coords)> {
        let f = &self.field.field;
        let mut out = Vec::new();
        for (a, da) in &self.d_j {
            for (b, db) in &self.d_j {
                out.push((*a, *b, f.scale(&da.mul(db).trace(), &self.alg.kappa)));
            }
        }
        out
    }

    /// `κTr(D_jD_{j'}) = h·δ_{j+j',h}`, pairing labels of the same family.
    pub fn pairing_identity_holds(&self) -> bool {
        let f = &self.field.field;
        let h = self.alg.h as i32;
        self.pairings().into_iter().all(|(a, b, v)| {
            let expect = if a.j + b.j == h && a.primed == b.primed { int(h as i64) } else { int(0) };
            v == f.from_rational(expect)
        })
    }

    /// `D_{j+hs} = D_j` for `s ∈ {−2, …, 2}`.
    pub fn periodicity_holds(&self) -> Result<bool, CorrelatorError> {
        let h = self.alg.h as i32;
        for (label, dj) in &self.d_j {
            for s in [-2, -1, 1, 2] {
                let shifted = ExponentLabel::new(label.j + s * h, label.primed);
                if self.conjugate(shifted)? != *dj {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// `P D P⁻¹ = Σ_{0<j<h} ζ^{−j}Λ_j(ζ^h)`.
    pub fn spectral_identity_holds(&self) -> Result<bool, CorrelatorError> {
        let lhs = self.p.mul(&LaurentMatrix::monomial(self.d.clone(), 0)).mul(&self.p_inv);
        let mut rhs = LaurentMatrix::zero(&self.field.field, self.alg.n);
        for label in &self.alg.exponents_in_period {
            rhs = rhs.add(&stretched_generator(&self.alg, *label)?.map_field(&self.from_full));
        }
        Ok(lhs == rhs)
    }
}

/// `ζ^{−j} Λ_j(ζ^h)` over the full field, as a Laurent matrix in ζ.
fn stretched_generator(alg: &AlgebraData, label: ExponentLabel) -> Result<LaurentMatrix, CorrelatorError> {
    let h = alg.h as i32;
    let gen = alg.heisenberg_generator(label)?;
    let mut out = LaurentMatrix::zero(&alg.full.field, alg.n);
    for (k, m) in gen.coeffs() {
        out = out.add(&LaurentMatrix::monomial(m.clone(), h * k - label.j));
    }
    Ok(out)
}

type ZetaMatrix = BTreeMap<i32, Mat>;

fn mul_trunc(a: &ZetaMatrix, b: &ZetaMatrix, floor: i32) -> ZetaMatrix {
    let mut out: ZetaMatrix = BTreeMap::new();
    for (i, x) in a {
        for (j, y) in b.range(floor - i..) {
            let p = x.mul(y);
            match out.get_mut(&(i + j)) {
                Some(acc) => *acc = acc.add(&p),
                None => {
                    out.insert(i + j, p);
                }
            }
        }
    }
    out.retain(|_, m| !m.is_zero());
    out
}

fn to_zeta(m: &LaurentMatrix) -> ZetaMatrix {
    m.coeffs().iter().map(|(k, v)| (*k, v.clone())).collect()
}

/// Ungraded `γ(ζ^h)` and `γ(ζ^h)⁻¹` over the full field, exact for ζ-exponents `≥ floor`.
fn gamma_in_zeta(gsol: &GammaSolution, floor: i32) -> Result<(ZetaMatrix, ZetaMatrix), CorrelatorError> {
    let alg = &gsol.alg;
    let h = alg.h as i32;
    let zfloor = floor.div_euclid(h);
    let required = levels_for_floor(h, floor);
    if gsol.order < required {
        return Err(CorrelatorError::UnderResolved { have: gsol.order, required });
    }
    let f = &alg.field;
    let mut s = LaurentMatrix::zero(f, alg.n);
    for y in &gsol.components {
        s = s.add(y);
    }
    let s = to_zeta(&s.map_field(&alg.base_to_full));
    let s: ZetaMatrix = s.into_iter().filter(|(k, _)| *k >= zfloor).collect();
    let ff = alg.full.field.clone();
    let id: ZetaMatrix = BTreeMap::from([(0, Mat::identity(&ff, alg.n))]);
    let neg: ZetaMatrix = s.iter().map(|(k, m)| (*k, m.scale_rational(&int(-1)))).collect();
    // exp(∓S): S has z-exponents ≤ −1, so powers beyond |zfloor| vanish
    let exp = |x: &ZetaMatrix| {
        let mut acc = id.clone();
        let mut term = id.clone();
        for k in 1..=(-zfloor).max(0) {
            term = mul_trunc(&term, x, zfloor);
            term = term.into_iter().map(|(e, m)| (e, m.scale_rational(&int(k as i64).reciprocal()))).collect();
            for (e, m) in &term {
                let cur = acc.remove(e).unwrap_or_else(|| Mat::zero(&ff, alg.n, alg.n));
                acc.insert(*e, cur.add(m));
            }
        }
        acc.retain(|_, m| !m.is_zero());
        acc
    };
    let stretch = |m: ZetaMatrix| -> ZetaMatrix { m.into_iter().map(|(k, v)| (k * h, v)).collect() };
    Ok((stretch(exp(&neg)), stretch(exp(&s))))
}

/// `F̄_m` coefficients keyed by exponent labels `(j₁, …, j_m)`; label `j` stands for `ζ_i^{−j}`
/// (or `ζ̂_i^{−j}` when primed).
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaSeries {
    pub algebra: String,
    pub h: u32,
    pub m: usize,
    /// Largest total weight `Σ j_i` included.
    pub weight_cap: u32,
    pub terms: BTreeMap<Vec<ExponentLabel>, Rational>,
}

impl ZetaSeries {
    pub fn coeff(&self, labels: &[ExponentLabel]) -> Rational {
        self.terms.get(labels).cloned().unwrap_or_else(|| int(0))
    }

    /// `(ε, λ)` exponents the coefficient carries in the graded expansion.
    pub fn grading(&self, labels: &[ExponentLabel]) -> Option<(i32, u32)> {
        let w: u32 = labels.iter().map(|l| l.j as u32).sum();
        (w % (self.h + 1) == 0).then(|| ((w / (self.h + 1)) as i32 - self.m as i32, 2 * w))
    }

    pub fn is_symmetric(&self) -> bool {
        self.terms.iter().all(|(k, v)| {
            let mut sorted = k.clone();
            sorted.sort();
            self.coeff(&sorted) == *v
        })
    }

    pub fn to_json(&self) -> Value {
        let terms: Vec<Value> = self
            .terms
            .iter()
            .filter(|(_, c)| **c != 0u32)
            .map(|(k, c)| {
                let (eps, lambda) = self.grading(k).expect("nonzero coefficients respect the grading");
                json!({
                    "zeta_exponents": k.iter().map(|l| -l.j).collect::<Vec<_>>(),
                    "labels": k.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                    "eps": eps,
                    "lambda": lambda,
                    "coeff": rational_to_string(c),
                })
            })
            .collect();
        Value::Array(terms)
    }
}

/// `K̄_c(ζ) = γ⁻¹ M_c γ` per channel, exact for ζ-exponents `≥ floor`.
struct KBar {
    per_channel: Vec<ZetaMatrix>,
    emax: i32,
}

fn kbar(gsol: &GammaSolution, diag: &Diagonalization, floor: i32) -> Result<KBar, CorrelatorError> {
    let alg = &gsol.alg;
    let h = alg.h as i32;
    let (g, g_inv) = gamma_in_zeta(gsol, floor - h)?;
    let mut per_channel = Vec::new();
    let mut emax = i32::MIN;
    for ch in &diag.channels {
        let mut m = LaurentMatrix::zero(&alg.full.field, alg.n);
        for lb in &ch.labels {
            m = m.add(&stretched_generator(alg, *lb)?);
        }
        let m = to_zeta(&m);
        let k = mul_trunc(&mul_trunc(&g_inv, &m, floor - h), &g, floor);
        emax = emax.max(k.keys().next_back().copied().unwrap_or(i32::MIN));
        per_channel.push(k);
    }
    Ok(KBar { per_channel, emax })
}

fn channel_of(diag: &Diagonalization, label: ExponentLabel) -> usize {
    if diag.channels.len() == 1 {
        0
    } else {
        usize::from(label.primed)
    }
}

/// Positive labels of one channel with `j ≤ wcap`.
fn channel_labels(diag: &Diagonalization, ch: usize, wcap: u32) -> Vec<ExponentLabel> {
    diag.alg.exponents_up_to(wcap).into_iter().filter(|l| channel_of(diag, *l) == ch).collect()
}

fn project(diag: &Diagonalization, c: &Coords, at: &str) -> Result<Rational, CorrelatorError> {
    diag.alg.full.field.project_rational(c).map_err(|_| CorrelatorError::Irrational(at.to_string()))
}

/// `F̄₁`, truncated at total weight `cap/2`.
pub fn bar_f1(gsol: &GammaSolution, diag: &Diagonalization, cap: u32) -> Result<ZetaSeries, CorrelatorError> {
    let alg = &gsol.alg;
    let wcap = cap / 2;
    let h = alg.h as i32;
    let floor = -(wcap as i32) - h;
    let (g, g_inv) = gamma_in_zeta(gsol, floor)?;
    let dg: ZetaMatrix = g.iter().map(|(e, m)| (*e, m.scale_rational(&int(*e as i64)))).collect();
    let dg_ginv = mul_trunc(&dg, &g_inv, floor);
    let ff = &alg.full.field;
    let scale = &alg.kappa / Rational::from(alg.h);
    let mut terms = BTreeMap::new();
    for (ci, ch) in diag.channels.iter().enumerate() {
        let mut m = LaurentMatrix::zero(ff, alg.n);
        for lb in &ch.labels {
            m = m.add(&stretched_generator(alg, *lb)?);
        }
        let tr = mul_trunc(&dg_ginv, &to_zeta(&m), -(wcap as i32));
        for (e, mat) in &tr {
            if *e > 0 && !mat.trace().iter().all(|x| *x == 0u32) {
                return Err(CorrelatorError::ExpansionRegion(vec![*e]));
            }
        }
        for lb in channel_labels(diag, ci, wcap) {
            let v = tr.get(&-lb.j).map(|x| ff.scale(&x.trace(), &scale)).unwrap_or_else(|| ff.zero());
            terms.insert(vec![lb], project(diag, &v, &lb.to_string())?);
        }
    }
    let series = ZetaSeries { algebra: alg.spec.to_string(), h: alg.h, m: 1, weight_cap: wcap, terms };
    check_grading(&series)?;
    Ok(series)
}

/// `[ζ^0]` of `(κ/h)Tr(ζ∂_ζΨ̄·Ψ̄⁻¹ D_c)` per channel, pure-P part included. Vanishes when the
/// chosen `P` and γ are consistent.
pub fn bar_f1_constant_terms(gsol: &GammaSolution, diag: &Diagonalization) -> Result<Vec<Coords>, CorrelatorError> {
    let alg = &gsol.alg;
    let h = alg.h as i32;
    let (g, g_inv) = gamma_in_zeta(gsol, -2 * h)?;
    let dg: ZetaMatrix = g.iter().map(|(e, m)| (*e, m.scale_rational(&int(*e as i64)))).collect();
    let dg_ginv = mul_trunc(&dg, &g_inv, -2 * h);
    let f = &diag.field.field;
    let n = alg.n;
    let degrees: Vec<Coords> = diag.row_degrees.iter().map(|d| f.from_rational(int(*d as i64))).collect();
    let pure_p = diag.c_inv.mul(&Mat::diagonal(f, &degrees)).mul(&diag.c);
    let mut out = Vec::new();
    for ch in &diag.channels {
        let mut m = LaurentMatrix::zero(&alg.full.field, n);
        for lb in &ch.labels {
            m = m.add(&stretched_generator(alg, *lb)?);
        }
        let tr = mul_trunc(&dg_ginv, &to_zeta(&m), 0);
        let gamma_part = tr.get(&0).map(|x| diag.from_full.apply(&x.trace())).unwrap_or_else(|| f.zero());
        let total = f.add(&pure_p.mul(&ch.d).trace(), &gamma_part);
        out.push(f.scale(&total, &(&alg.kappa / Rational::from(alg.h))));
    }
    Ok(out)
}

fn check_grading(s: &ZetaSeries) -> Result<(), CorrelatorError> {
    for (k, c) in &s.terms {
        if *c != 0u32 && s.grading(k).is_none() {
            return Err(CorrelatorError::Grading(format!("{k:?}")));
        }
    }
    Ok(())
}

/// Evaluates `−(1/m)Σ_ρ κTr(K̄⋆⋯⋆K̄) − δ_{m,2}·(Gaussian term)` at one exponent vector,
/// expanded in `|ζ₁| > ⋯ > |ζ_m|`.
struct StarEvaluator<'a> {
    alg: &'a AlgebraData,
    k: &'a KBar,
    floor: i32,
    perms: Vec<Vec<usize>>,
    memo: HashMap<Vec<(usize, i32)>, Coords>,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

impl<'a> StarEvaluator<'a> {
    fn trace(&mut self, key: Vec<(usize, i32)>) -> Coords {
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let ff = &self.alg.full.field;
        let mut acc: Option<Mat> = None;
        let mut zero = false;
        for (ch, e) in &key {
            match self.k.per_channel[*ch].get(e) {
                None => {
                    zero = true;
                    break;
                }
                Some(m) => acc = Some(acc.map_or_else(|| m.clone(), |a| a.mul(m))),
            }
        }
        let v = if zero { ff.zero() } else { acc.map(|a| a.trace()).unwrap_or_else(|| ff.zero()) };
        self.memo.insert(key, v.clone());
        v
    }

    /// Raw field value of the symmetrized star-product sum at `target` for channel assignment `chans`.
    fn star_sum(&mut self, target: &[i32], chans: &[usize]) -> Coords {
        let m = target.len();
        let h = self.alg.h as i32;
        let ff = self.alg.full.field.clone();
        let nmax = ((self.k.emax - self.floor) / h + 2).max(1);
        let mut acc = ff.zero();
        for perm in self.perms.clone() {
            // factor i: 1/(ζ_b^h − ζ_a^h) with a = perm[i], b = perm[i+1 mod m]
            let mut ns = vec![0i32; m];
            loop {
                let mut sigma = vec![h; m];
                let mut sign = 1i32;
                for i in 0..m {
                    let (a, b) = (perm[i], perm[(i + 1) % m]);
                    let nn = ns[i];
                    if b > a {
                        sigma[a] -= h * (1 + nn);
                        sigma[b] += h * nn;
                        sign = -sign;
                    } else {
                        sigma[b] -= h * (1 + nn);
                        sigma[a] += h * nn;
                    }
                }
                let e: Vec<i32> = (0..m).map(|v| target[v] - sigma[v]).collect();
                if e.iter().all(|x| *x >= self.floor && *x <= self.k.emax) {
                    let key: Vec<(usize, i32)> = perm.iter().map(|&v| (chans[v], e[v])).collect();
                    let t = self.trace(key);
                    if sign > 0 {
                        ff.add_assign(&mut acc, &t);
                    } else {
                        acc = ff.sub(&acc, &t);
                    }
                }
                // odometer over ns ∈ [0, nmax)^m
                let mut i = 0;
                while i < m {
                    ns[i] += 1;
                    if ns[i] < nmax {
                        break;
                    }
                    ns[i] = 0;
                    i += 1;
                }
                if i == m {
                    break;
                }
            }
        }
        acc
    }

    fn value(&mut self, target: &[i32], chans: &[usize]) -> Coords {
        let m = target.len();
        let ff = self.alg.full.field.clone();
        let s = self.star_sum(target, chans);
        let mut v = ff.scale(&s, &(-&self.alg.kappa / Rational::from(m as u64)));
        // Gaussian term −Σ_{j∈E_c>0} j ζ₁^{−j} ζ₂^{j}
        if m == 2 && chans[0] == chans[1] && target[1] > 0 && target[0] == -target[1] {
            let j = target[1];
            let lb = ExponentLabel::new(j, self.primed(chans[0]));
            if self.alg.is_exponent(lb) {
                v = ff.sub(&v, &ff.from_rational(int(j as i64)));
            }
        }
        v
    }

    fn primed(&self, ch: usize) -> bool {
        ch == 1
    }
}

/// Options for [`bar_fm_with`].
#[derive(Clone, Copy, Debug)]
pub struct FmOptions {
    /// Also evaluate vectors with a non-negative entry in `[0, window]` and require them to vanish.
    pub region_window: Option<i32>,
}

impl Default for FmOptions {
    fn default() -> Self {
        FmOptions { region_window: Some(0) }
    }
}

/// `F̄_m` for `m ≥ 2`, truncated at total weight `cap/2`.
pub fn bar_fm(gsol: &GammaSolution, diag: &Diagonalization, m: usize, cap: u32) -> Result<ZetaSeries, CorrelatorError> {
    bar_fm_with(gsol, diag, m, cap, FmOptions::default())
}

pub fn bar_fm_with(
    gsol: &GammaSolution,
    diag: &Diagonalization,
    m: usize,
    cap: u32,
    opts: FmOptions,
) -> Result<ZetaSeries, CorrelatorError> {
    if m < 2 {
        return Err(CorrelatorError::Invalid(format!("m = {m}; use bar_f1 for m = 1")));
    }
    let alg = &gsol.alg;
    let wcap = (cap / 2) as i32;
    let h = alg.h as i32;
    // every factor exponent satisfies e_i ≥ Σt − (m−1)·emax; emax < h
    let floor = -wcap - (m as i32 - 1) * h;
    let k = kbar(gsol, diag, floor)?;
    let mut ev = StarEvaluator { alg, k: &k, floor, perms: permutations(m), memo: HashMap::new() };
    let nch = diag.channels.len();
    let mut terms = BTreeMap::new();
    for chans in assignments(nch, m) {
        let pools: Vec<Vec<ExponentLabel>> = chans.iter().map(|&c| channel_labels(diag, c, wcap as u32)).collect();
        for labels in tuples(&pools, wcap) {
            let target: Vec<i32> = labels.iter().map(|l| -l.j).collect();
            let v = ev.value(&target, &chans);
            let at = labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
            terms.insert(labels, project(diag, &v, &at)?);
        }
        if let Some(win) = opts.region_window {
            for target in region_vectors(m, wcap, win) {
                let v = ev.value(&target, &chans);
                if !v.iter().all(|x| *x == 0u32) {
                    return Err(CorrelatorError::ExpansionRegion(target));
                }
            }
        }
    }
    let series = ZetaSeries { algebra: alg.spec.to_string(), h: alg.h, m, weight_cap: wcap as u32, terms };
    check_grading(&series)?;
    Ok(series)
}

fn assignments(nch: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out.into_iter().flat_map(|p: Vec<usize>| (0..nch).map(move |c| [p.clone(), vec![c]].concat())).collect();
    }
    out
}

fn tuples(pools: &[Vec<ExponentLabel>], wcap: i32) -> Vec<Vec<ExponentLabel>> {
    let mut out: Vec<(Vec<ExponentLabel>, i32)> = vec![(vec![], 0)];
    for pool in pools {
        let mut next = Vec::new();
        for (p, w) in &out {
            for l in pool {
                if w + l.j <= wcap {
                    let mut q = p.clone();
                    q.push(*l);
                    next.push((q, w + l.j));
                }
            }
        }
        out = next;
    }
    out.into_iter().map(|(p, _)| p).collect()
}

/// Exponent vectors with some entry in `[0, win]`, all entries `≥ −wcap`, total `≥ −wcap`.
fn region_vectors(m: usize, wcap: i32, win: i32) -> Vec<Vec<i32>> {
    let mut out: Vec<Vec<i32>> = vec![vec![]];
    for _ in 0..m {
        out = out.into_iter().flat_map(|p| (-wcap..=win).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    out.into_iter().filter(|v| v.iter().any(|x| *x >= 0) && v.iter().sum::<i32>() >= -wcap).collect()
}

/// Dispatches on `m`.
pub fn correlators(gsol: &GammaSolution, m: usize, cap: u32) -> Result<ZetaSeries, CorrelatorError> {
    let diag = build_diagonalization(&gsol.alg)?;
    match m {
        0 => Err(CorrelatorError::Invalid("m must be positive".into())),
        1 => bar_f1(gsol, &diag, cap),
        _ => bar_fm(gsol, &diag, m, cap),
    }
}

// level i of γ(ζ^h) has ζ-exponents ≤ h−1 − i(h+1)
fn levels_for_floor(h: i32, floor: i32) -> usize {
    ((h - 1 - floor) / (h + 1)).max(0) as usize
}

/// Levels of γ that [`correlators`] needs at this cap.
pub fn required_levels(alg: &AlgebraData, m: usize, cap: u32) -> usize {
    let h = alg.h as i32;
    let floor = -((cap / 2) as i32) - (m.max(1) as i32) * h;
    levels_for_floor(h, floor.min(-2 * h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelatorMismatch {
    pub labels: Vec<ExponentLabel>,
    pub generating_function: Rational,
    pub derivative: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrosscheckReport {
    pub checked: usize,
    pub nonzero: usize,
    pub mismatches: Vec<CorrelatorMismatch>,
}

impl CrosscheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// `∂^m log τ/∂t_{j₁}⋯∂t_{j_m}` at `t = 0`, read off the t-form expansion.
pub fn derivative_at_zero(tau: &TauExpansion, labels: &[ExponentLabel]) -> Rational {
    let h = tau.alg.h;
    let w: u32 = labels.iter().map(|l| l.j as u32).sum();
    if w % (h + 1) != 0 {
        return int(0);
    }
    let mut counts: BTreeMap<ExponentLabel, u32> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let mult: Rational = counts.values().map(|&c| factorial(c as u64)).product();
    let vars = counts.into_iter().map(|(l, c)| (TimeVar::T(l), c)).collect();
    let eps = (w / (h + 1)) as i32 - labels.len() as i32;
    tau.t_coeff(&Monomial::new(2 * w, eps, vars)) * mult
}

/// Compares every coefficient of `F̄_m` reachable by the expansion's cap.
pub fn crosscheck(series: &ZetaSeries, tau: &TauExpansion) -> Result<CrosscheckReport, CorrelatorError> {
    if series.algebra != tau.alg.spec.to_string() {
        return Err(CorrelatorError::Invalid(format!("{} vs {}", series.algebra, tau.alg.spec)));
    }
    let mut report = CrosscheckReport { checked: 0, nonzero: 0, mismatches: Vec::new() };
    for (labels, c) in &series.terms {
        let w: u32 = labels.iter().map(|l| l.j as u32).sum();
        if 2 * w > tau.cap {
            continue;
        }
        report.checked += 1;
        let d = derivative_at_zero(tau, labels);
        if d != 0u32 {
            report.nonzero += 1;
        }
        if d != *c {
            report.mismatches.push(CorrelatorMismatch { labels: labels.clone(), generating_function: c.clone(), derivative: d });
        }
    }
    Ok(report)
}
