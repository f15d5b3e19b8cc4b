//! Topological tau functions from the truncated Borodin–Okounkov trace expansion.
//!
//! `J = g(−t)γ`, `J⁻¹ = γ⁻¹g(t)`; `log τ = −κ Σ_{i≥1} Tr R_N^i / i` with `R_N` the product of
//! the N-block Hankel arrays of `J` and `J⁻¹`.

use std::collections::BTreeMap;
use std::sync::Arc;

use malachite_base::num::arithmetic::traits::{Pow, Reciprocal};
use rayon::prelude::*;

use crate::exactnum::{int, rational_to_string, Coords, NumberField, Rational};
use crate::gradedseries::{
    Accum, GradedSeries, LoopMatrix, Monomial, SeriesError, SeriesMatrix, SeriesRing, TimeVar, NO_WEIGHT_CAP,
};
use crate::kacmoody::{AlgebraData, AlgebraError, ExponentLabel};
use crate::stringeq::{GammaSolution, StringEqError};

#[derive(Debug, thiserror::Error)]
pub enum TauError {
    #[error("γ solved to level {have}, level {required} is needed at this cap")]
    UnderResolved { have: usize, required: usize },
    #[error("coefficient of {0} is irrational")]
    Irrational(String),
    #[error("term {0} does not fit the rescaling")]
    Rescaling(String),
    #[error("reduction orders differ: {0} vs {1}")]
    IncompatibleOrders(u32, u32),
    #[error(transparent)]
    StringEq(#[from] StringEqError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Square matrix of series.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pub dim: usize,
    pub entries: Vec<GradedSeries>,
}

impl BlockMatrix {
    pub fn zero(ring: &Arc<SeriesRing>, cap: u32, dim: usize) -> Self {
        BlockMatrix { dim, entries: vec![GradedSeries::zero(ring, cap); dim * dim] }
    }

    pub fn get(&self, r: usize, c: usize) -> &GradedSeries {
        &self.entries[r * self.dim + c]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|s| s.is_zero())
    }

    pub fn min_lambda(&self) -> Option<u32> {
        self.entries.iter().filter_map(|s| s.min_lambda()).min()
    }

    /// Product truncated at λ-degree `cap` and t-weight `wcap`.
    pub fn mul_capped(&self, other: &BlockMatrix, cap: u32, wcap: u32) -> BlockMatrix {
        let d = self.dim;
        let ring = self.entries[0].ring().clone();
        let field = ring.field().clone();
        let entries: Vec<GradedSeries> = (0..d * d)
            .into_par_iter()
            .map(|idx| {
                let (r, c) = (idx / d, idx % d);
                let mut acc = Accum::new(&field);
                for k in 0..d {
                    let a = &self.entries[r * d + k];
                    let b = &other.entries[k * d + c];
                    if !a.is_zero() && !b.is_zero() {
                        acc.add_product(a, b, cap, wcap);
                    }
                }
                acc.finish(&ring, cap)
            })
            .collect();
        BlockMatrix { dim: d, entries }
    }

    pub fn trace(&self) -> GradedSeries {
        let ring = self.entries[0].ring().clone();
        let mut acc = Accum::new(ring.field());
        for i in 0..self.dim {
            acc.add_series(self.get(i, i));
        }
        acc.finish(&ring, self.entries[0].cap())
    }
}

/// `Tr(A·B)` truncated at `cap`.
pub fn trace_of_product(a: &BlockMatrix, b: &BlockMatrix, cap: u32, wcap: u32) -> GradedSeries {
    let d = a.dim;
    let ring = a.entries[0].ring().clone();
    let field = ring.field().clone();
    let parts: Vec<GradedSeries> = (0..d)
        .into_par_iter()
        .map(|x| {
            let mut acc = Accum::new(&field);
            for y in 0..d {
                let (p, q) = (a.get(x, y), b.get(y, x));
                if !p.is_zero() && !q.is_zero() {
                    acc.add_product(p, q, cap, wcap);
                }
            }
            acc.finish(&ring, cap)
        })
        .collect();
    let mut acc = Accum::new(&field);
    for p in &parts {
        acc.add_series(p);
    }
    acc.finish(&ring, cap)
}

/// Positive time labels carried by a computation at weight cap `wcap`.
pub fn time_labels(alg: &AlgebraData, wcap: u32) -> Vec<ExponentLabel> {
    alg.exponents_up_to(wcap)
}

/// The t-ring over the algebra's base field for λ-cap `cap`: weights up to `cap/2`.
pub fn tau_ring(alg: &AlgebraData, cap: u32) -> Result<Arc<SeriesRing>, TauError> {
    let wcap = (cap / 2).max(1);
    Ok(SeriesRing::t_ring(alg.field.clone(), &time_labels(alg, wcap), wcap)?)
}

/// `g(±t) = Π_j exp(±λ^j t_j Λ_j / ε)` with base-field generators.
pub fn build_g(
    alg: &AlgebraData,
    ring: &Arc<SeriesRing>,
    cap: u32,
    wcap: u32,
) -> Result<(LoopMatrix, LoopMatrix), TauError> {
    let h = Some(alg.h);
    let mut plus = LoopMatrix::identity(ring, cap, alg.n, h);
    let mut minus = plus.clone();
    for label in time_labels(alg, cap.min(wcap)) {
        let var = TimeVar::T(label);
        if !ring.has_var(&var) {
            continue;
        }
        let gen = alg.heisenberg_generator_base(label)?.0;
        let x = Monomial::new(label.j as u32, -1, vec![(var, 1)]);
        let ep = LoopMatrix::exp_monomial(&gen, &x, ring, cap, wcap, h)?;
        let em = LoopMatrix::exp_monomial(&gen.scale_rational(&int(-1)), &x, ring, cap, wcap, h)?;
        plus = plus.mul_capped(&ep, cap, wcap)?;
        minus = minus.mul_capped(&em, cap, wcap)?;
    }
    Ok((plus, minus))
}

#[derive(Clone, Debug)]
pub struct Symbol {
    pub alg: Arc<AlgebraData>,
    pub j: LoopMatrix,
    pub j_inv: LoopMatrix,
    pub cap: u32,
    pub wcap: u32,
}

impl Symbol {
    pub fn fourier(&self, k: i32) -> SeriesMatrix {
        self.j.fourier(k)
    }

    pub fn fourier_inv(&self, k: i32) -> SeriesMatrix {
        self.j_inv.fourier(k)
    }
}

pub fn required_levels(alg: &AlgebraData, cap: u32) -> usize {
    (cap / (alg.h + 1)) as usize
}

pub fn build_symbol(
    gsol: &GammaSolution,
    ring: &Arc<SeriesRing>,
    cap: u32,
    wcap: u32,
) -> Result<Symbol, TauError> {
    let alg = &gsol.alg;
    let required = required_levels(alg, cap);
    if gsol.order < required {
        return Err(TauError::UnderResolved { have: gsol.order, required });
    }
    let (gamma, gamma_inv) = gsol.graded(ring, cap)?;
    let (g_plus, g_minus) = build_g(alg, ring, cap, wcap)?;
    let j = g_minus.mul_capped(&gamma, cap, wcap)?;
    let j_inv = gamma_inv.mul_capped(&g_plus, cap, wcap)?;
    Ok(Symbol { alg: alg.clone(), j, j_inv, cap, wcap })
}

/// `R_N = H_N(J) H̃_N(J⁻¹)`: block `(s,t)` is `Σ_{u<N} J_{s+u+1} J̃_{−(u+t+1)}`.
pub fn hankel_product(sym: &Symbol, n_blocks: usize) -> BlockMatrix {
    let n = sym.alg.n;
    let dim = n * n_blocks;
    let ring = sym.j.ring().clone();
    let field = ring.field().clone();
    let (cap, wcap) = (sym.cap, sym.wcap);
    let jp: Vec<SeriesMatrix> = (1..2 * n_blocks as i32).map(|k| sym.fourier(k)).collect();
    let jm: Vec<SeriesMatrix> = (1..2 * n_blocks as i32).map(|k| sym.fourier_inv(-k)).collect();
    let entries: Vec<GradedSeries> = (0..dim * dim)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / dim, idx % dim);
            let (s, a) = (row / n, row % n);
            let (t, b) = (col / n, col % n);
            let mut acc = Accum::new(&field);
            for u in 0..n_blocks {
                let left = &jp[s + u];
                let right = &jm[u + t];
                for c in 0..n {
                    let (x, y) = (&left[a * n + c], &right[c * n + b]);
                    if !x.is_zero() && !y.is_zero() {
                        acc.add_product(x, y, cap, wcap);
                    }
                }
            }
            acc.finish(&ring, cap)
        })
        .collect();
    BlockMatrix { dim, entries }
}

/// Smallest N ≥ 1 with `(N+1)h + 1 > cap`.
pub fn blocks_for_cap(h: u32, cap: u32) -> usize {
    let mut n = 1;
    while (n as u32 + 1) * h < cap {
        n += 1;
    }
    n
}

/// `i_N = ⌊((N+1)h+1)/(h+2)⌋`.
pub fn trace_terms(h: u32, n_blocks: usize) -> usize {
    ((n_blocks as u32 + 1) * h + 1) as usize / (h + 2) as usize
}

/// `−Σ_{i=1}^{imax} Tr R^i / i`, truncated at `cap`.
pub fn log_det_traces(r: &BlockMatrix, imax: usize, step: u32, cap: u32, wcap: u32) -> GradedSeries {
    let ring = r.entries[0].ring().clone();
    let mut acc = Accum::new(ring.field());
    if imax == 0 {
        return acc.finish(&ring, cap);
    }
    acc.sub_series(&r.trace());
    // powers P_a = R^a for a ≤ ⌈imax/2⌉; P_a only meets partners of degree ≥ (a−1)·step
    let half = imax.div_ceil(2);
    let mut powers: Vec<BlockMatrix> = vec![r.clone()];
    for a in 2..=half {
        let pcap = cap.saturating_sub((a as u32 - 1) * step);
        let next = powers[a - 2].mul_capped(r, pcap, wcap);
        powers.push(next);
    }
    for i in 2..=imax {
        let (a, b) = (i.div_ceil(2), i / 2);
        let tr = trace_of_product(&powers[a - 1], &powers[b - 1], cap, wcap);
        acc.sub_series(&tr.scale_rational(&int(i as i64).reciprocal()));
    }
    acc.finish(&ring, cap)
}

/// `T_N/(−κ)`-free form: `log det(Id − R_N)` through the trace sum with explicit N and trace count.
pub fn trace_expansion(sym: &Symbol, n_blocks: usize, imax: usize) -> GradedSeries {
    let r = hankel_product(sym, n_blocks);
    let step = sym.alg.h + 2;
    log_det_traces(&r, imax, step, sym.cap, sym.wcap)
}

#[derive(Clone, Debug)]
pub struct TauExpansion {
    pub alg: Arc<AlgebraData>,
    pub cap: u32,
    pub n_blocks: usize,
    pub trace_terms: usize,
    /// `log τ` in the t-variables over ℚ.
    pub log_tau_t: GradedSeries,
    /// `log τ` after the q-rescaling, λ-order `q_order`.
    pub log_tau_q: GradedSeries,
    pub q_order: u32,
    /// `F_g` with the ε-power removed.
    pub genus_parts: BTreeMap<u32, GradedSeries>,
}

/// Options for [`log_tau_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct TauOptions {
    pub n_blocks: Option<usize>,
}

pub fn log_tau(gsol: &GammaSolution, cap: u32) -> Result<TauExpansion, TauError> {
    log_tau_with(gsol, cap, TauOptions::default())
}

pub fn log_tau_with(gsol: &GammaSolution, cap: u32, opts: TauOptions) -> Result<TauExpansion, TauError> {
    let alg = gsol.alg.clone();
    let ring = tau_ring(&alg, cap)?;
    let wcap = (cap / 2).max(1);
    let sym = build_symbol(gsol, &ring, cap, wcap)?;
    let n_blocks = opts.n_blocks.unwrap_or_else(|| blocks_for_cap(alg.h, cap));
    let imax = trace_terms(alg.h, n_blocks).min((cap / (alg.h + 2)) as usize);
    let raw = trace_expansion(&sym, n_blocks, imax);
    let log_tau_t = to_rational_t(&alg, &raw.scale_rational(&alg.kappa), cap)?;
    let (log_tau_q, q_order) = rescale_to_q(&alg, &log_tau_t, cap)?;
    let genus_parts = split_genus(&log_tau_q)?;
    Ok(TauExpansion { alg, cap, n_blocks, trace_terms: imax, log_tau_t, log_tau_q, q_order, genus_parts })
}

/// Rational t-ring with the same variables.
pub fn rational_t_ring(alg: &AlgebraData, cap: u32) -> Result<Arc<SeriesRing>, TauError> {
    let wcap = (cap / 2).max(1);
    Ok(SeriesRing::t_ring(Arc::new(NumberField::rationals()), &time_labels(alg, wcap), wcap)?)
}

/// Restores the primed normalization and projects every coefficient to ℚ.
fn to_rational_t(alg: &AlgebraData, s: &GradedSeries, cap: u32) -> Result<GradedSeries, TauError> {
    let qring = rational_t_ring(alg, cap)?;
    let primed_scale = alg
        .exponents_in_period
        .iter()
        .find(|e| e.primed || (alg.spec.family == crate::kacmoody::Family::D && e.j % 2 == 0))
        .map(|e| alg.heisenberg_generator_base(*e).map(|x| x.1))
        .transpose()?
        .unwrap_or_else(|| int(1));
    let field = s.field().clone();
    let is_gamma = |l: &ExponentLabel| l.primed || (alg.spec.family == crate::kacmoody::Family::D && l.j % 2 == 0);
    Ok(s.map_terms(&qring, cap, |m, c| {
        let p: u32 = m.vars.iter().filter(|(v, _)| matches!(v, TimeVar::T(l) if is_gamma(l))).map(|(_, e)| e).sum();
        let mut r = field.project_rational(c).map_err(|_| SeriesError::Parse(format!("irrational coefficient at {m}")))?;
        if p > 0 {
            if p % 2 == 1 {
                return Err(SeriesError::Parse(format!("odd Γ-degree at {m}")));
            }
            r *= primed_scale.clone().pow(p as u64 / 2);
        }
        Ok(Some((m.clone(), vec![r].into())))
    })?)
}

/// `(α, k)` of a time label: α indexes the first-period exponents (unprimed by j, primed last).
pub fn q_index(alg: &AlgebraData, label: ExponentLabel) -> (u32, u32) {
    let h = alg.h as i32;
    let mut period: Vec<ExponentLabel> = alg.exponents_in_period.clone();
    period.sort_by_key(|e| (e.primed, e.j));
    let r = label.j.rem_euclid(h);
    let alpha = period.iter().position(|e| e.j == r && e.primed == label.primed).expect("exponent") as u32 + 1;
    (alpha, ((label.j - r) / h) as u32)
}

/// First-period exponent of `q_{α,·}`.
pub fn q_exponent(alg: &AlgebraData, alpha: u32) -> ExponentLabel {
    let mut period: Vec<ExponentLabel> = alg.exponents_in_period.clone();
    period.sort_by_key(|e| (e.primed, e.j));
    period[alpha as usize - 1]
}

/// `t_{hk+j} = q_{α,k} / (h·Π_{s=0}^{k}(j/h + s))`.
pub fn t_to_q_factor(h: u32, j: i32, k: u32) -> Rational {
    let x = Rational::from_signeds(j as i64, h as i64);
    let mut prod = int(h as i64);
    for s in 0..=k {
        prod *= &x + Rational::from(s);
    }
    prod.reciprocal()
}

pub fn q_ring(alg: &AlgebraData, cap: u32) -> Result<Arc<SeriesRing>, TauError> {
    let wcap = (cap / 2).max(1);
    let vars: Vec<(TimeVar, u32, u32)> = time_labels(alg, wcap)
        .into_iter()
        .map(|l| {
            let (alpha, k) = q_index(alg, l);
            (TimeVar::Q { alpha, k }, l.j as u32, wcap / l.j as u32)
        })
        .collect();
    Ok(SeriesRing::new(Arc::new(NumberField::rationals()), &vars)?)
}

/// `ε ↦ ε/√h`, `λ^{2(h+1)} ↦ λ`, `t ↦ q`.
pub fn rescale_to_q(alg: &AlgebraData, t: &GradedSeries, cap: u32) -> Result<(GradedSeries, u32), TauError> {
    let period = 2 * (alg.h + 1);
    let q_order = cap / period;
    let ring = q_ring(alg, cap)?;
    let h = alg.h;
    let s = t.map_terms(&ring, q_order, |m, c| {
        if m.lambda % period != 0 || m.eps % 2 != 0 {
            return Err(SeriesError::Parse(format!("term {m} does not fit the rescaling")));
        }
        let lam = m.lambda / period;
        if lam > q_order {
            return Ok(None);
        }
        let mut r = c[0].clone() / Rational::from(h).pow((m.eps / 2) as i64);
        let mut vars = Vec::new();
        for (v, e) in &m.vars {
            let TimeVar::T(l) = v else { unreachable!("t-ring") };
            let (alpha, k) = q_index(alg, *l);
            let r0 = q_exponent(alg, alpha).j;
            r *= t_to_q_factor(h, r0, k).pow(*e as u64);
            vars.push((TimeVar::Q { alpha, k }, *e));
        }
        Ok(Some((Monomial::new(lam, m.eps, vars), vec![r].into())))
    })?;
    Ok((s, q_order))
}

/// `F_g` = coefficient of `ε^{2g−2}`.
pub fn split_genus(q: &GradedSeries) -> Result<BTreeMap<u32, GradedSeries>, TauError> {
    let mut by_g: BTreeMap<u32, Vec<(Monomial, Coords)>> = BTreeMap::new();
    for (m, c) in q.iter() {
        if m.eps < -2 || m.eps % 2 != 0 {
            return Err(TauError::Rescaling(m.to_string()));
        }
        let g = ((m.eps + 2) / 2) as u32;
        by_g.entry(g).or_default().push((Monomial::new(m.lambda, 0, m.vars.clone()), c.clone()));
    }
    let ring = q.ring();
    by_g.into_iter()
        .map(|(g, terms)| {
            let mut acc = Accum::new(ring.field());
            for (m, c) in terms {
                acc.add_term(ring.encode(&m)?, &c);
            }
            Ok((g, acc.finish(ring, q.cap())))
        })
        .collect()
}

impl TauExpansion {
    /// Genus parts as JSON, each in the canonical series schema.
    pub fn genus_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (g, s) in &self.genus_parts {
            map.insert(format!("F{g}"), s.to_json());
        }
        serde_json::Value::Object(map)
    }

    /// Coefficient of a t-monomial in `log τ`.
    pub fn t_coeff(&self, m: &Monomial) -> Rational {
        self.log_tau_t.coeff(m)[0].clone()
    }
}

/// Exact `det` of the `(N+1)×(N+1)` block Toeplitz minor `(J_{s−t})`.
pub fn toeplitz_minor_det(sym: &Symbol, n: usize) -> Result<GradedSeries, TauError> {
    let blocks = n + 1;
    let nn = sym.alg.n;
    let dim = blocks * nn;
    let ring = sym.j.ring().clone();
    let mut m = BlockMatrix::zero(&ring, sym.cap, dim);
    for s in 0..blocks {
        for t in 0..blocks {
            let f = sym.fourier(s as i32 - t as i32);
            for a in 0..nn {
                for b in 0..nn {
                    m.entries[(s * nn + a) * dim + t * nn + b] = f[a * nn + b].clone();
                }
            }
        }
    }
    determinant(m, sym.cap, sym.wcap)
}

/// `Σ x^m` inverse of the unit `1 − x`-type series `s` with constant term 1.
pub fn series_inverse(s: &GradedSeries, cap: u32, wcap: u32) -> Result<GradedSeries, TauError> {
    let ring = s.ring().clone();
    let one = GradedSeries::one(&ring, cap);
    let x = one.sub(s)?;
    if x.min_lambda() == Some(0) {
        return Err(TauError::Series(SeriesError::NonNilpotent));
    }
    let mut out = one.clone();
    let mut term = one;
    loop {
        term = term.mul_capped(&x, cap, wcap)?;
        if term.is_zero() {
            break;
        }
        out = out.add(&term)?;
    }
    Ok(out)
}

/// `log s` for a series with constant term 1.
pub fn series_log(s: &GradedSeries, cap: u32, wcap: u32) -> Result<GradedSeries, TauError> {
    let ring = s.ring().clone();
    let x = s.sub(&GradedSeries::one(&ring, cap))?;
    if x.min_lambda() == Some(0) {
        return Err(TauError::Series(SeriesError::NonNilpotent));
    }
    let mut out = GradedSeries::zero(&ring, cap);
    let mut term = GradedSeries::one(&ring, cap);
    let mut m = 1i64;
    loop {
        term = term.mul_capped(&x, cap, wcap)?;
        if term.is_zero() {
            break;
        }
        let sign = if m % 2 == 1 { int(1) } else { int(-1) };
        out = out.add(&term.scale_rational(&(sign / int(m))))?;
        m += 1;
    }
    Ok(out)
}

/// Determinant by elimination; every pivot must be a unit with constant term 1.
pub fn determinant(mut m: BlockMatrix, cap: u32, wcap: u32) -> Result<GradedSeries, TauError> {
    let d = m.dim;
    let ring = m.entries[0].ring().clone();
    let mut det = GradedSeries::one(&ring, cap);
    for p in 0..d {
        let pivot = m.entries[p * d + p].clone();
        det = det.mul_capped(&pivot, cap, wcap)?;
        let inv = series_inverse(&pivot, cap, wcap)?;
        let pivot_row: Vec<GradedSeries> = (p + 1..d).map(|c| m.entries[p * d + c].clone()).collect();
        let updates: Vec<(usize, Vec<GradedSeries>)> = (p + 1..d)
            .into_par_iter()
            .filter_map(|r| {
                let lead = &m.entries[r * d + p];
                if lead.is_zero() {
                    return None;
                }
                let factor = lead.mul_capped(&inv, cap, wcap).ok()?;
                let row: Vec<GradedSeries> = (p + 1..d)
                    .map(|c| {
                        let prod = factor.mul_capped(&pivot_row[c - p - 1], cap, wcap).expect("same ring");
                        m.entries[r * d + c].sub(&prod).expect("same ring")
                    })
                    .collect();
                Some((r, row))
            })
            .collect();
        for (r, row) in updates {
            for (i, s) in row.into_iter().enumerate() {
                m.entries[r * d + p + 1 + i] = s;
            }
            m.entries[r * d + p] = GradedSeries::zero(&ring, cap);
        }
    }
    Ok(det)
}

/// Blocks `(s,t)`, `s,t < N`, of `T(φ)`, `H(φ)`, `H̃(φ)` as dense matrices.
fn toeplitz_like(phi: &LoopMatrix, n_blocks: usize, index: impl Fn(usize, usize) -> i32) -> BlockMatrix {
    let n = phi.n();
    let dim = n * n_blocks;
    let ring = phi.ring().clone();
    let mut out = BlockMatrix::zero(&ring, phi.cap(), dim);
    for s in 0..n_blocks {
        for t in 0..n_blocks {
            if let Some(f) = phi.fourier_ref(index(s, t)) {
                for a in 0..n {
                    for b in 0..n {
                        out.entries[(s * n + a) * dim + t * n + b] = f[a * n + b].clone();
                    }
                }
            }
        }
    }
    out
}

/// `(T(φ₁)T(φ₂))` restricted to `s,t < N`, summing over every `u ≥ 0` in the Fourier support.
fn toeplitz_product_minor(p1: &LoopMatrix, p2: &LoopMatrix, n_blocks: usize, cap: u32) -> BlockMatrix {
    let n = p1.n();
    let ring = p1.ring().clone();
    let dim = n * n_blocks;
    let lo1 = p1.z_exponents().min().unwrap_or(0);
    let hi2 = p2.z_exponents().max().unwrap_or(0);
    let mut out = BlockMatrix::zero(&ring, cap, dim);
    for s in 0..n_blocks as i32 {
        for t in 0..n_blocks as i32 {
            // a_{s−u} needs s−u ≥ lo1; b_{u−t} needs u−t ≤ hi2
            let umax = (s - lo1).min(t + hi2);
            for a in 0..n {
                for b in 0..n {
                    let mut acc = Accum::new(ring.field());
                    for u in 0..=umax.max(-1) {
                        let (Some(x), Some(y)) = (p1.fourier_ref(s - u), p2.fourier_ref(u - t)) else { continue };
                        for c in 0..n {
                            acc.add_product(&x[a * n + c], &y[c * n + b], cap, NO_WEIGHT_CAP);
                        }
                    }
                    out.entries[(s as usize * n + a) * dim + t as usize * n + b] = acc.finish(&ring, cap);
                }
            }
        }
    }
    out
}

/// `T(φ₁)T(φ₂) = T(φ₁φ₂) − H(φ₁)H̃(φ₂)` on the leading `N×N` blocks.
pub fn toeplitz_identity_check(phi1: &LoopMatrix, phi2: &LoopMatrix, n_blocks: usize) -> Result<bool, TauError> {
    let cap = phi1.cap().min(phi2.cap());
    let lhs = toeplitz_product_minor(phi1, phi2, n_blocks, cap);
    let prod = phi1.mul_capped(phi2, cap, NO_WEIGHT_CAP)?;
    let t = toeplitz_like(&prod, n_blocks, |s, t| s as i32 - t as i32);
    // H(φ₁)H̃(φ₂) with the inner sum over all v ≥ 0 in the support
    let n = phi1.n();
    let hi1 = phi1.z_exponents().max().unwrap_or(0);
    let vmax = hi1.max(0) as usize;
    let big = n_blocks.max(1) + vmax;
    let h1 = toeplitz_like(phi1, big, |s, t| (s + t + 1) as i32);
    let h2 = toeplitz_like(phi2, big, |s, t| -((s + t + 1) as i32));
    let hh = h1.mul_capped(&h2, cap, NO_WEIGHT_CAP);
    let dim = n * n_blocks;
    for r in 0..dim {
        for c in 0..dim {
            let rhs = t.get(r, c).sub(hh.get(r, c))?;
            if lhs.get(r, c).truncate(cap) != rhs.truncate(cap) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Outcome of comparing a reduced parent expansion with a child expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionReport {
    pub order: u32,
    pub first_difference: Option<(String, String, String)>,
}

impl ReductionReport {
    pub fn agrees(&self) -> bool {
        self.first_difference.is_none()
    }
}

/// Sets `zero_set` to 0 in `parent`, renames via `var_map` (parent → child), compares with `child`.
pub fn reduction_check(
    parent: &TauExpansion,
    child: &TauExpansion,
    var_map: &BTreeMap<TimeVar, TimeVar>,
    zero_set: &dyn Fn(&TimeVar) -> bool,
) -> Result<ReductionReport, TauError> {
    let order = parent.q_order.min(child.q_order);
    if parent.q_order == 0 || child.q_order == 0 {
        return Err(TauError::IncompatibleOrders(parent.q_order, child.q_order));
    }
    let mut mapped: BTreeMap<String, Rational> = BTreeMap::new();
    for (m, c) in parent.log_tau_q.rational_terms()? {
        if m.lambda > order || m.vars.iter().any(|(v, _)| zero_set(v)) {
            continue;
        }
        let vars: Vec<(TimeVar, u32)> =
            m.vars.iter().map(|(v, e)| (*var_map.get(v).unwrap_or(v), *e)).collect();
        mapped.insert(Monomial::new(m.lambda, m.eps, vars).to_string(), c);
    }
    let mut child_terms: BTreeMap<String, Rational> = BTreeMap::new();
    for (m, c) in child.log_tau_q.rational_terms()? {
        if m.lambda <= order {
            child_terms.insert(m.to_string(), c);
        }
    }
    let keys: std::collections::BTreeSet<&String> = mapped.keys().chain(child_terms.keys()).collect();
    for k in keys {
        let a = mapped.get(k).cloned().unwrap_or_else(|| int(0));
        let b = child_terms.get(k).cloned().unwrap_or_else(|| int(0));
        if a != b {
            return Ok(ReductionReport {
                order,
                first_difference: Some((k.clone(), rational_to_string(&a), rational_to_string(&b))),
            });
        }
    }
    Ok(ReductionReport { order, first_difference: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactnum::rat;
    use crate::kacmoody::{build_algebra, weight_basis};
    use crate::stringeq::solve_reduced_string_equation;

    fn solve(name: &str, cap: u32) -> GammaSolution {
        let alg = Arc::new(build_algebra(name.parse().unwrap()).unwrap());
        let wb = weight_basis(&alg).unwrap();
        solve_reduced_string_equation(&alg, &wb, required_levels(&alg, cap).max(1)).unwrap()
    }

    fn t(j: i32) -> TimeVar {
        TimeVar::T(ExponentLabel::plain(j))
    }

    #[test]
    fn g_for_a1() {
        let gsol = solve("A1", 2);
        let alg = gsol.alg.clone();
        let ring = SeriesRing::t_ring(alg.field.clone(), &[ExponentLabel::plain(1)], 2).unwrap();
        let (gp, gm) = build_g(&alg, &ring, 2, 2).unwrap();
        let half = gp.fourier(1);
        // z-coefficient: λ t₁/ε e₁₂ + λ² t₁²/(2ε²) Id
        assert_eq!(half[1].coeff(&Monomial::new(1, -1, vec![(t(1), 1)]))[0], int(1));
        assert_eq!(half[0].coeff(&Monomial::new(2, -2, vec![(t(1), 2)]))[0], rat(1, 2));
        assert_eq!(gp.fourier(0)[2].coeff(&Monomial::new(1, -1, vec![(t(1), 1)]))[0], int(1));
        let id = LoopMatrix::identity(&ring, 2, 2, None);
        assert_eq!(gp.mul(&gm).unwrap(), id);
    }

    #[test]
    fn symbol_at_small_caps() {
        let gsol = solve("A1", 6);
        let ring = tau_ring(&gsol.alg, 6).unwrap();
        let sym = build_symbol(&gsol, &ring, 6, 3).unwrap();
        let j = sym.fourier(-1);
        assert_eq!(j[1].coeff(&Monomial::new(3, 1, vec![]))[0], rat(7, 48));
        let id = LoopMatrix::identity(&ring, 6, 2, None);
        assert_eq!(sym.j.mul_capped(&sym.j_inv, 6, 3).unwrap(), id);
        // below h+1 the symbol at t = 0 is the identity
        let gsol2 = solve("A2", 3);
        let ring2 = SeriesRing::new(gsol2.alg.field.clone(), &[]).unwrap();
        let sym2 = build_symbol(&gsol2, &ring2, 3, NO_WEIGHT_CAP).unwrap();
        assert_eq!(sym2.j, LoopMatrix::identity(&ring2, 3, 3, None));
        assert!(hankel_product(&sym2, 2).is_zero());
        assert!(matches!(build_symbol(&gsol, &ring, 12, 6), Err(TauError::UnderResolved { required: 4, .. })));
    }

    #[test]
    fn a1_first_terms() {
        let gsol = solve("A1", 6);
        let tau = log_tau(&gsol, 6).unwrap();
        assert_eq!(tau.t_coeff(&Monomial::new(6, -2, vec![(t(1), 3)])), rat(1, 12));
        assert_eq!(tau.t_coeff(&Monomial::new(6, 0, vec![(t(3), 1)])), rat(1, 16));
        let f0 = &tau.genus_parts[&0];
        let q0 = TimeVar::Q { alpha: 1, k: 0 };
        let q1 = TimeVar::Q { alpha: 1, k: 1 };
        assert_eq!(f0.coeff(&Monomial::new(1, 0, vec![(q0, 3)]))[0], rat(1, 6));
        assert_eq!(tau.genus_parts[&1].coeff(&Monomial::new(1, 0, vec![(q1, 1)]))[0], rat(1, 24));
    }

    #[test]
    fn rescaling_factors() {
        assert_eq!(t_to_q_factor(2, 1, 0), int(1));
        assert_eq!(t_to_q_factor(2, 1, 1), rat(2, 3));
        let alg = build_algebra("D4".parse().unwrap()).unwrap();
        assert_eq!(q_index(&alg, ExponentLabel::new(9, true)), (4, 1));
        assert_eq!(q_index(&alg, ExponentLabel::plain(11)), (3, 1));
        assert_eq!(q_index(&alg, ExponentLabel::plain(3)), (2, 0));
    }

    #[test]
    fn determinant_of_unit_triangular_is_one() {
        let ring = SeriesRing::new(Arc::new(NumberField::rationals()), &[]).unwrap();
        let mut m = BlockMatrix::zero(&ring, 6, 3);
        for i in 0..3 {
            m.entries[i * 3 + i] = GradedSeries::one(&ring, 6);
        }
        m.entries[1] = GradedSeries::monomial(&ring, 6, &Monomial::new(1, 0, vec![]), vec![int(5)].into()).unwrap();
        m.entries[5] = GradedSeries::monomial(&ring, 6, &Monomial::new(2, 0, vec![]), vec![int(-3)].into()).unwrap();
        assert_eq!(determinant(m, 6, NO_WEIGHT_CAP).unwrap(), GradedSeries::one(&ring, 6));
    }

    #[test]
    fn trace_powers_agree_with_direct_products() {
        let gsol = solve("A2", 16);
        let ring = tau_ring(&gsol.alg, 16).unwrap();
        let sym = build_symbol(&gsol, &ring, 16, 8).unwrap();
        let r = hankel_product(&sym, 4);
        let direct = {
            let mut acc = Accum::new(ring.field());
            let mut p = r.clone();
            acc.sub_series(&p.trace());
            for i in 2..=3 {
                p = p.mul_capped(&r, 16, 8);
                acc.sub_series(&p.trace().scale_rational(&rat(1, i)));
            }
            acc.finish(&ring, 16)
        };
        assert_eq!(log_det_traces(&r, 3, 5, 16, 8), direct);
    }
}
