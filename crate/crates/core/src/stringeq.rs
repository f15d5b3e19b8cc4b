//! Graded solution of the reduced string equation `γ⁻¹(Λ₁ − d'₋₁)γ = Λ₁ − d₋₁`.
//!
//! The plain components `Y₋ᵢ₍ₕ₊₁₎` are solved level by level; the graded γ attaches
//! `u^i` with `u = ελ^{h+1}` to level i. In the graded residual the derivative terms
//! `∂_z` and `ρ/(hz)` carry one factor of `u`, which makes it vanish identically.

use std::collections::BTreeMap;
use std::sync::Arc;

use malachite_base::num::arithmetic::traits::Reciprocal;
use serde_json::{json, Value};

use crate::exactnum::{
    factorial, int, parse_rational, rational_pow, rational_to_string, solve_linear, Coords, Mat, NumError, Rational,
};
use crate::gradedseries::{
    GradedSeries, LaurentMatrix, LoopMatrix, Monomial, SeriesError, SeriesMatrix, SeriesRing, NO_WEIGHT_CAP,
};
use crate::kacmoody::{homogeneous_subspace, AlgebraData, AlgebraError, Degree, ExponentLabel, WeightBasis};

#[derive(Debug, thiserror::Error)]
pub enum StringEqError {
    #[error("right-hand side at degree {degree} is not in the image of ad Λ₁; Heisenberg projection {projection:?}")]
    Obstruction { degree: i32, projection: Vec<String> },
    #[error("degree {0} is not a homogeneous component")]
    NotHomogeneous(i32),
    #[error("singular Heisenberg-fixing system at level {0}")]
    SingularFixing(usize),
    #[error("cache mismatch: {0}")]
    Cache(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Keeps the entries of `x` whose principal degree satisfies `pred`.
pub fn filter_degree(alg: &AlgebraData, x: &LaurentMatrix, pred: impl Fn(i32) -> bool) -> LaurentMatrix {
    let h = alg.h as i64;
    let mut out = LaurentMatrix::zero(x.field(), x.n());
    for (k, m) in x.coeffs() {
        let mut keep = Mat::zero(x.field(), x.n(), x.n());
        let mut any = false;
        for (a, b, v) in m.nonzero_entries() {
            let d = &alg.rho_diag[a] - &alg.rho_diag[b] + int(*k as i64 * h);
            let d = i32::try_from(&d).expect("integral principal degree");
            if pred(d) {
                keep.set(a, b, v.clone());
                any = true;
            }
        }
        if any {
            out = out.add(&LaurentMatrix::monomial(keep, *k));
        }
    }
    out
}

fn flatten_common(mats: &[&LaurentMatrix]) -> Vec<Vec<Coords>> {
    let (mut lo, mut hi) = (0, 0);
    for m in mats {
        if let Some((a, b)) = m.z_range() {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    mats.iter().map(|m| m.flatten(lo, hi)).collect()
}

/// Heisenberg directions at principal degree `k`: base-field generators `Λ_k` (empty if `|k| ∉ E`).
pub fn heisenberg_directions(alg: &AlgebraData, k: i32) -> Result<Vec<LaurentMatrix>, StringEqError> {
    let mut out = Vec::new();
    for primed in [false, true] {
        let label = ExponentLabel::new(k, primed);
        if k != 0 && alg.is_exponent(label) {
            out.push(alg.heisenberg_generator_base(label)?.0);
        }
    }
    Ok(out)
}

/// Coefficients of `x ∈ g_k` on the Heisenberg directions, from `g_k = H_k ⊕ [Λ₁, g_{k−1}]`.
pub fn heisenberg_projection(
    alg: &AlgebraData,
    wb: &WeightBasis,
    x: &LaurentMatrix,
    k: i32,
) -> Result<Vec<Coords>, StringEqError> {
    let dirs = heisenberg_directions(alg, k)?;
    if dirs.is_empty() {
        return Ok(Vec::new());
    }
    let l1 = alg.lambda1();
    let images: Vec<LaurentMatrix> = homogeneous_subspace(alg, wb, k - 1).iter().map(|b| l1.commutator(b)).collect();
    let mut all: Vec<&LaurentMatrix> = dirs.iter().chain(images.iter()).collect();
    all.push(x);
    let mut flat = flatten_common(&all);
    let rhs = flat.pop().expect("x");
    let sol = solve_linear(&alg.field, &flat, &rhs)?.ok_or(StringEqError::NotHomogeneous(k))?;
    Ok(sol[..dirs.len()].to_vec())
}

/// Result of solving `[Y, Λ₁] = rhs` at degree k.
#[derive(Clone, Debug)]
pub struct AdSolution {
    /// The solution with zero Heisenberg component.
    pub y: LaurentMatrix,
    pub heis_dim: usize,
    pub heis_directions: Vec<LaurentMatrix>,
}

pub fn ad_lambda1_solve(
    alg: &AlgebraData,
    wb: &WeightBasis,
    rhs: &LaurentMatrix,
    k: i32,
) -> Result<AdSolution, StringEqError> {
    ad_lambda1_solve_ordered(alg, wb, rhs, k, false)
}

fn ad_lambda1_solve_ordered(
    alg: &AlgebraData,
    wb: &WeightBasis,
    rhs: &LaurentMatrix,
    k: i32,
    reverse: bool,
) -> Result<AdSolution, StringEqError> {
    let mut basis = homogeneous_subspace(alg, wb, k);
    if reverse {
        basis.reverse();
    }
    let l1 = alg.lambda1();
    let images: Vec<LaurentMatrix> = basis.iter().map(|b| b.commutator(&l1)).collect();
    let mut all: Vec<&LaurentMatrix> = images.iter().collect();
    all.push(rhs);
    let mut flat = flatten_common(&all);
    let r = flat.pop().expect("rhs");
    let f = &alg.field;
    let Some(sol) = solve_linear(f, &flat, &r)? else {
        let proj = heisenberg_projection(alg, wb, rhs, k + 1)?;
        return Err(StringEqError::Obstruction {
            degree: k + 1,
            projection: proj.iter().map(|c| format!("{c:?}")).collect(),
        });
    };
    let mut y = LaurentMatrix::zero(f, alg.n);
    for (b, c) in basis.iter().zip(&sol) {
        if !crate::exactnum::NumberField::is_zero(c) {
            y = y.add(&b.scale(c));
        }
    }
    let dirs = heisenberg_directions(alg, k)?;
    if !dirs.is_empty() {
        let proj = heisenberg_projection(alg, wb, &y, k)?;
        for (d, c) in dirs.iter().zip(&proj) {
            y = y.sub(&d.scale(c));
        }
    }
    Ok(AdSolution { y, heis_dim: dirs.len(), heis_directions: dirs })
}

/// `e^{ad_S}Λ₁ − Λ₁ − ρ/(hz) + Σ_{k≥1} ad_S^{k−1}(D S)/k!` restricted to principal degrees `≥ min_degree`.
fn equation_residual(alg: &AlgebraData, s: &LaurentMatrix, min_degree: i32) -> LaurentMatrix {
    let keep = |x: &LaurentMatrix| filter_degree(alg, x, |d| d >= min_degree);
    let l1 = alg.lambda1();
    let mut total = alg.rho_over_hz().scale_rational(&int(-1));
    let mut term = l1;
    let mut k = 1i64;
    loop {
        term = keep(&s.commutator(&term).scale_rational(&int(k).reciprocal()));
        if term.is_zero() {
            break;
        }
        total = total.add(&term);
        k += 1;
    }
    let mut term = keep(&alg.dprime(s));
    let mut k = 1i64;
    while !term.is_zero() {
        total = total.add(&term);
        k += 1;
        term = keep(&s.commutator(&term).scale_rational(&int(k).reciprocal()));
    }
    keep(&total)
}

/// Component of the equation residual at exactly degree `m`.
fn residual_at(alg: &AlgebraData, s: &LaurentMatrix, m: i32) -> LaurentMatrix {
    filter_degree(alg, &equation_residual(alg, s, m), |d| d == m)
}

#[derive(Clone, Debug)]
pub struct GammaSolution {
    pub alg: Arc<AlgebraData>,
    pub order: usize,
    /// Plain `Y₋ᵢ₍ₕ₊₁₎`, i = 1..order.
    pub components: Vec<LaurentMatrix>,
    /// Graded γ and γ⁻¹ over the ring in `ε, λ` with cap `order·(h+1)`.
    pub gamma: LoopMatrix,
    pub gamma_inv: LoopMatrix,
}

pub fn solve_reduced_string_equation(
    alg: &Arc<AlgebraData>,
    wb: &WeightBasis,
    levels: usize,
) -> Result<GammaSolution, StringEqError> {
    solve_with_order(alg, wb, levels, false)
}

fn solve_with_order(
    alg: &Arc<AlgebraData>,
    wb: &WeightBasis,
    levels: usize,
    reverse: bool,
) -> Result<GammaSolution, StringEqError> {
    let h = alg.h as i32;
    let f = &alg.field;
    let mut s = LaurentMatrix::zero(f, alg.n);
    let mut components = Vec::with_capacity(levels);
    for i in 1..=levels as i32 {
        let k = -i * (h + 1);
        let r = residual_at(alg, &s, k + 1);
        let sol = ad_lambda1_solve_ordered(alg, wb, &r.scale_rational(&int(-1)), k, reverse)?;
        let mut y = sol.y;
        if sol.heis_dim > 0 {
            // the next residual is affine in the free coefficients
            let next = k + 1 - (h + 1);
            let base_proj = heisenberg_projection(alg, wb, &residual_at(alg, &s.add(&y), next), next)?;
            let mut cols = Vec::with_capacity(sol.heis_dim);
            for d in &sol.heis_directions {
                let p = heisenberg_projection(alg, wb, &residual_at(alg, &s.add(&y).add(d), next), next)?;
                cols.push(p.iter().zip(&base_proj).map(|(a, b)| f.sub(a, b)).collect::<Vec<_>>());
            }
            let rhs: Vec<Coords> = base_proj.iter().map(|c| f.neg(c)).collect();
            let c = solve_linear(f, &cols, &rhs)?.ok_or(StringEqError::SingularFixing(i as usize))?;
            if crate::exactnum::independent_subset(f, &cols).len() != cols.len() {
                return Err(StringEqError::SingularFixing(i as usize));
            }
            for (d, ci) in sol.heis_directions.iter().zip(&c) {
                y = y.add(&d.scale(ci));
            }
        }
        s = s.add(&y);
        components.push(y);
    }
    let (gamma, gamma_inv) = assemble(alg, &components, &bare_ring(alg)?, levels as u32 * (alg.h + 1), NO_WEIGHT_CAP)?;
    Ok(GammaSolution { alg: alg.clone(), order: levels, components, gamma, gamma_inv })
}

/// The ring with no time variables over the algebra's field.
pub fn bare_ring(alg: &AlgebraData) -> Result<Arc<SeriesRing>, SeriesError> {
    SeriesRing::new(alg.field.clone(), &[])
}

fn grading_monomial(alg: &AlgebraData, i: u32) -> Monomial {
    Monomial::new(i * (alg.h + 1), i as i32, vec![])
}

/// `exp(∓Σ u^i Y_i)` over `ring`.
fn assemble(
    alg: &AlgebraData,
    components: &[LaurentMatrix],
    ring: &Arc<SeriesRing>,
    cap: u32,
    wcap: u32,
) -> Result<(LoopMatrix, LoopMatrix), StringEqError> {
    let h = Some(alg.h);
    let mut s = LoopMatrix::zero(ring, cap, alg.n, h);
    for (i, y) in components.iter().enumerate() {
        let mono = grading_monomial(alg, i as u32 + 1);
        if mono.lambda > cap {
            break;
        }
        let scalar = GradedSeries::monomial(ring, cap, &mono, ring.field().one())?;
        s = s.add(&LoopMatrix::from_laurent(y, &scalar, cap, h)?)?;
    }
    let gamma = s.neg().exp_capped(wcap)?;
    let gamma_inv = s.exp_capped(wcap)?;
    Ok((gamma, gamma_inv))
}

impl GammaSolution {
    /// Graded γ and γ⁻¹ over another ring with the same field.
    pub fn graded(&self, ring: &Arc<SeriesRing>, cap: u32) -> Result<(LoopMatrix, LoopMatrix), StringEqError> {
        assemble(&self.alg, &self.components, ring, cap, NO_WEIGHT_CAP)
    }

    /// Largest λ-degree for which γ is complete.
    pub fn cap(&self) -> u32 {
        self.order as u32 * (self.alg.h + 1)
    }

    pub fn to_json(&self) -> Value {
        let comps: Vec<Value> = self
            .components
            .iter()
            .map(|y| {
                Value::Array(
                    y.entries()
                        .into_iter()
                        .map(|(k, r, c, v)| {
                            let coords: Vec<String> = v.iter().map(rational_to_string).collect();
                            json!([k, r, c, coords])
                        })
                        .collect(),
                )
            })
            .collect();
        json!({
            "algebra": self.alg.spec.to_string(),
            "levels": self.order,
            "table_hash": self.alg.table_hash(),
            "components": comps,
        })
    }

    pub fn from_json(alg: &Arc<AlgebraData>, v: &Value) -> Result<GammaSolution, StringEqError> {
        let bad = |m: &str| StringEqError::Cache(m.to_string());
        if v["algebra"].as_str() != Some(alg.spec.to_string().as_str()) {
            return Err(bad("algebra"));
        }
        if v["table_hash"].as_str() != Some(alg.table_hash().as_str()) {
            return Err(bad("table hash"));
        }
        let order = v["levels"].as_u64().ok_or_else(|| bad("levels"))? as usize;
        let f = &alg.field;
        let mut components = Vec::new();
        for comp in v["components"].as_array().ok_or_else(|| bad("components"))? {
            let mut by_k: BTreeMap<i32, Mat> = BTreeMap::new();
            for e in comp.as_array().ok_or_else(|| bad("entry list"))? {
                let k = e[0].as_i64().ok_or_else(|| bad("z exponent"))? as i32;
                let r = e[1].as_u64().ok_or_else(|| bad("row"))? as usize;
                let c = e[2].as_u64().ok_or_else(|| bad("col"))? as usize;
                let coords: Coords = e[3]
                    .as_array()
                    .ok_or_else(|| bad("coords"))?
                    .iter()
                    .map(|x| parse_rational(x.as_str().unwrap_or("")))
                    .collect::<Result<_, _>>()?;
                if r >= alg.n || c >= alg.n || coords.len() != f.degree() {
                    return Err(bad("entry shape"));
                }
                by_k.entry(k).or_insert_with(|| Mat::zero(f, alg.n, alg.n)).set(r, c, coords);
            }
            let mut y = LaurentMatrix::zero(f, alg.n);
            for (k, m) in by_k {
                y = y.add(&LaurentMatrix::monomial(m, k));
            }
            components.push(y);
        }
        if components.len() != order {
            return Err(bad("level count"));
        }
        let (gamma, gamma_inv) = assemble(alg, &components, &bare_ring(alg)?, order as u32 * (alg.h + 1), NO_WEIGHT_CAP)?;
        Ok(GammaSolution { alg: alg.clone(), order, components, gamma, gamma_inv })
    }
}

/// `∂_z` of a loop matrix.
pub fn loop_d_dz(m: &LoopMatrix) -> Result<LoopMatrix, SeriesError> {
    let mut coeffs: BTreeMap<i32, SeriesMatrix> = BTreeMap::new();
    for (k, mat) in m.coeffs() {
        if *k != 0 {
            coeffs.insert(k - 1, mat.iter().map(|s| s.scale_rational(&int(*k as i64))).collect());
        }
    }
    LoopMatrix::from_coeffs(m.ring(), m.cap(), m.n(), None, coeffs)
}

/// `(Λ₁γ − u∂_zγ − u(ρ/(hz))γ) − γ(γ⁻¹Λ₁γ)₊` with `u = ελ^{h+1}`, truncated at `cap`.
pub fn string_residual(gsol: &GammaSolution, cap: u32) -> Result<LoopMatrix, StringEqError> {
    let alg = &gsol.alg;
    let ring = gsol.gamma.ring().clone();
    let cap = if gsol.order == 0 { cap } else { cap.min(gsol.cap()) };
    let (gamma, gamma_inv) = if gsol.order == 0 {
        let id = LoopMatrix::identity(&ring, cap, alg.n, None);
        (id.clone(), id)
    } else {
        (gsol.gamma.truncate(cap), gsol.gamma_inv.truncate(cap))
    };
    let one = GradedSeries::one(&ring, cap);
    let l1 = LoopMatrix::from_laurent(&alg.lambda1(), &one, cap, None)?;
    let rho = LoopMatrix::from_laurent(&alg.rho_over_hz(), &one, cap, None)?;
    let u = GradedSeries::monomial(&ring, cap, &grading_monomial(alg, 1), ring.field().one())?;
    let deriv = loop_d_dz(&gamma)?.add(&rho.mul_capped(&gamma, cap, NO_WEIGHT_CAP)?)?.scale(&u)?;
    let lhs = l1.mul_capped(&gamma, cap, NO_WEIGHT_CAP)?.sub(&deriv)?;
    let conj = gamma_inv.mul_capped(&l1, cap, NO_WEIGHT_CAP)?.mul_capped(&gamma, cap, NO_WEIGHT_CAP)?;
    let plus = conj.filter_z(|k| k >= 0);
    let rhs = gamma.mul_capped(&plus, cap, NO_WEIGHT_CAP)?;
    Ok(lhs.sub(&rhs)?.truncate(cap))
}

/// `(γ⁻¹Λ₁γ)₊` truncated at the solution's cap.
pub fn conjugated_plus_part(gsol: &GammaSolution) -> Result<LoopMatrix, StringEqError> {
    let ring = gsol.gamma.ring().clone();
    let cap = gsol.cap();
    let l1 = LoopMatrix::from_laurent(&gsol.alg.lambda1(), &GradedSeries::one(&ring, cap), cap, None)?;
    let conj = gsol.gamma_inv.mul_capped(&l1, cap, NO_WEIGHT_CAP)?.mul_capped(&gsol.gamma, cap, NO_WEIGHT_CAP)?;
    Ok(conj.filter_z(|k| k >= 0))
}

/// The constant solution γ = Id, used as the level-0 probe.
pub fn trivial_solution(alg: &Arc<AlgebraData>) -> Result<GammaSolution, StringEqError> {
    let ring = bare_ring(alg)?;
    let cap = alg.h + 1;
    let id = LoopMatrix::identity(&ring, cap, alg.n, Some(alg.h));
    Ok(GammaSolution { alg: alg.clone(), order: 0, components: vec![], gamma: id.clone(), gamma_inv: id })
}

/// Principal degrees of the solved components.
pub fn component_degrees(gsol: &GammaSolution) -> Vec<Degree> {
    gsol.components.iter().map(|y| gsol.alg.principal_degree(y)).collect()
}

/// `Γ(k+a)/Γ(a)` as a rising product.
pub fn gamma_ratio(a: &Rational, k: u64) -> Rational {
    (0..k).fold(int(1), |acc, s| acc * (a + Rational::from(s)))
}

/// A₁ closed form: `a_n = (−3/4)^k (5/6)_k (1/6)_k / k!` for `n = 3k`, zero otherwise.
pub fn a1_closed_form_coefficient(n: i64) -> Rational {
    if n < 0 || n % 3 != 0 {
        return int(0);
    }
    let k = (n / 3) as u64;
    rational_pow(&Rational::from_signeds(-3, 4), k)
        * gamma_ratio(&Rational::from_signeds(5, 6), k)
        * gamma_ratio(&Rational::from_signeds(1, 6), k)
        / factorial(k)
}

/// Compares the A₁ modes `γ_{−i}` that the solved levels determine with the closed form.
///
/// Returns the number of modes checked, or the first disagreeing `(i, entry)`.
pub fn check_a1_closed_form(gsol: &GammaSolution) -> Result<usize, (i32, usize)> {
    let levels = gsol.order as i64;
    let mut checked = 0;
    for i in (1i64..).take_while(|i| (2 * i + 1) <= 3 * levels) {
        let g = gsol.gamma.fourier(-(i as i32));
        let want = [
            (2 * i, int(1)),
            (2 * i + 1, -Rational::from_signeds(4 * i + 3, 4 * i + 1)),
            (2 * i - 1, int(1)),
            (2 * i, -Rational::from_signeds(4 * i + 1, 4 * i - 1)),
        ];
        for (idx, (n, factor)) in want.into_iter().enumerate() {
            let expected = a1_closed_form_coefficient(n) * factor;
            let k = if n % 3 == 0 { n / 3 } else { 0 };
            let got = &g[idx].coeff(&Monomial::new(3 * k as u32, k as i32, vec![]))[0];
            if *got != expected || g[idx].len() != usize::from(expected != 0u32) {
                return Err((i as i32, idx));
            }
        }
        checked += 1;
    }
    Ok(checked)
}
