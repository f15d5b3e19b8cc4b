//! Matrix realizations of untwisted affine Kac–Moody algebras of types A, B, C, D, G
//! and their principal Heisenberg generators.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use malachite_base::num::arithmetic::traits::Reciprocal;
use malachite_base::num::basic::traits::One;
use sha2::{Digest, Sha256};

use crate::exactnum::{
    independent_subset, int, rat, solve_linear, Coords, FieldMap, Mat, NumError, NumberField, Rational, RootedField,
};
pub use crate::gradedseries::{ExponentLabel, LaurentMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlgebraError {
    #[error("rank {rank} out of range for type {family}")]
    RankOutOfRange { family: Family, rank: u32 },
    #[error("cannot parse algebra spec {0:?}")]
    Parse(String),
    #[error("{0} is not an exponent of {1}")]
    InvalidExponent(ExponentLabel, String),
    #[error("inconsistent realization table: {0}")]
    Realization(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    A,
    B,
    C,
    D,
    G,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlgebraSpec {
    pub family: Family,
    pub rank: u32,
}

impl AlgebraSpec {
    pub fn new(family: Family, rank: u32) -> Result<Self, AlgebraError> {
        let ok = match family {
            Family::A => rank >= 1,
            Family::B => rank >= 3,
            Family::C => rank >= 2,
            Family::D => rank >= 4,
            Family::G => rank == 2,
        };
        if ok {
            Ok(AlgebraSpec { family, rank })
        } else {
            Err(AlgebraError::RankOutOfRange { family, rank })
        }
    }
}

impl fmt::Display for AlgebraSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.family, self.rank)
    }
}

impl FromStr for AlgebraSpec {
    type Err = AlgebraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut chars = s.chars();
        let family = match chars.next().map(|c| c.to_ascii_uppercase()) {
            Some('A') => Family::A,
            Some('B') => Family::B,
            Some('C') => Family::C,
            Some('D') => Family::D,
            Some('G') => Family::G,
            _ => return Err(AlgebraError::Parse(s.to_string())),
        };
        let rank: u32 = chars.as_str().parse().map_err(|_| AlgebraError::Parse(s.to_string()))?;
        AlgebraSpec::new(family, rank)
    }
}

/// Common principal degree of a loop matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degree {
    Zero,
    Homogeneous(i32),
    Inhomogeneous,
}

/// Realization data of one affine algebra.
#[derive(Clone, Debug)]
pub struct AlgebraData {
    pub spec: AlgebraSpec,
    pub n: usize,
    pub h: u32,
    pub kappa: Rational,
    pub cartan: Vec<Vec<i64>>,
    pub kac_labels: Vec<i64>,
    pub exponents_in_period: Vec<ExponentLabel>,
    pub rho_diag: Vec<Rational>,
    /// `E_i, F_i` for `0 ≤ i ≤ ℓ`; `E_0` is the z-coefficient of `e_0`.
    pub e: Vec<Mat>,
    pub f: Vec<Mat>,
    /// `H_i = [E_i, F_i]`.
    pub hs: Vec<Mat>,
    /// Coroots: traceless diagonal `H` with `[H, E_j] = a_ij E_j` for all j.
    pub coroots: Vec<Mat>,
    /// Field of `E_i`, `Λ_1`, ρ and the string-equation solution: ℚ or ℚ(√2).
    pub field: Arc<NumberField>,
    pub base: RootedField,
    /// Field holding every normalized generator (adds √(2ℓ−2), and √−1 for odd-rank D).
    pub full: RootedField,
    pub base_to_full: FieldMap,
    /// `Λ = Σ e_i`, unnormalized.
    pub lambda: LaurentMatrix,
    /// `Γ/μ` for type D.
    gamma1: Option<LaurentMatrix>,
}

pub fn build_algebra(spec: AlgebraSpec) -> Result<AlgebraData, AlgebraError> {
    let spec = AlgebraSpec::new(spec.family, spec.rank)?;
    let l = spec.rank as usize;
    let (n, kappa, radicands, full_radicands): (usize, Rational, Vec<i64>, Vec<i64>) = match spec.family {
        Family::A => (l + 1, int(1), vec![], vec![]),
        Family::B => (2 * l + 1, rat(1, 2), vec![2], vec![2]),
        Family::C => (2 * l, int(1), vec![], vec![]),
        Family::D => {
            let mut fr = vec![2, 2 * l as i64 - 2];
            if l % 2 == 1 {
                fr.push(-1);
            }
            (2 * l, rat(1, 2), vec![2], fr)
        }
        Family::G => (7, rat(1, 2), vec![2], vec![2]),
    };
    let base = RootedField::build(None, &radicands)?;
    let full = RootedField::build(None, &full_radicands)?;
    let base_to_full = base.embed_into(&full)?;
    let field = base.field.clone();
    let (e, f) = weyl_generators(spec, n, &field);
    let cartan = cartan_matrix(spec);
    let hs: Vec<Mat> = e.iter().zip(&f).map(|(a, b)| a.commutator(b)).collect();
    let coroots = (0..=l).map(|i| coroot(&field, &e, &cartan[i], n)).collect::<Result<Vec<_>, _>>()?;
    let kac_labels = kac_labels(&cartan)?;
    let h = kac_labels.iter().sum::<i64>() as u32;
    let rho_diag = rho_from_cartan(&cartan, &coroots, &field)?;

    // Λ = z E_0 + Σ_{i≥1} E_i
    let mut lambda = LaurentMatrix::monomial(e[0].clone(), 1);
    for ei in &e[1..] {
        lambda = lambda.add(&LaurentMatrix::monomial(ei.clone(), 0));
    }
    let gamma1 = (spec.family == Family::D).then(|| gamma_matrix(l, &field));
    let exponents_in_period = period_exponents(spec, h);
    Ok(AlgebraData {
        spec,
        n,
        h,
        kappa,
        cartan,
        kac_labels,
        exponents_in_period,
        rho_diag,
        e,
        f,
        hs,
        coroots,
        field,
        base,
        full,
        base_to_full,
        lambda,
        gamma1,
    })
}

fn unit(field: &Arc<NumberField>, n: usize, entries: &[(usize, usize, Rational)]) -> Mat {
    // 1-based (row, col) as in the realization tables
    let zero_based: Vec<(usize, usize, Rational)> = entries.iter().map(|(r, c, v)| (r - 1, c - 1, v.clone())).collect();
    Mat::from_entries(field, n, &zero_based)
}

fn weyl_generators(spec: AlgebraSpec, n: usize, field: &Arc<NumberField>) -> (Vec<Mat>, Vec<Mat>) {
    let l = spec.rank as usize;
    let one = || int(1);
    let half = || rat(1, 2);
    let two = || int(2);
    let mut e = Vec::new();
    let mut f = Vec::new();
    match spec.family {
        Family::A => {
            e.push(unit(field, n, &[(1, n, one())]));
            f.push(unit(field, n, &[(n, 1, one())]));
            for i in 1..=l {
                e.push(unit(field, n, &[(i + 1, i, one())]));
                f.push(unit(field, n, &[(i, i + 1, one())]));
            }
        }
        Family::B => {
            e.push(unit(field, n, &[(1, 2 * l, half()), (2, 2 * l + 1, half())]));
            f.push(unit(field, n, &[(2 * l, 1, two()), (2 * l + 1, 2, two())]));
            for i in 1..l {
                e.push(unit(field, n, &[(i + 1, i, one()), (2 * l + 2 - i, 2 * l + 1 - i, one())]));
                f.push(unit(field, n, &[(i, i + 1, one()), (2 * l + 1 - i, 2 * l + 2 - i, one())]));
            }
            e.push(unit(field, n, &[(l + 1, l, one()), (l + 2, l + 1, one())]));
            f.push(unit(field, n, &[(l, l + 1, one()), (l + 1, l + 2, one())]));
        }
        Family::C => {
            e.push(unit(field, n, &[(1, n, one())]));
            f.push(unit(field, n, &[(n, 1, one())]));
            for i in 1..l {
                e.push(unit(field, n, &[(i + 1, i, one()), (2 * l + 1 - i, 2 * l - i, one())]));
                f.push(unit(field, n, &[(i, i + 1, one()), (2 * l - i, 2 * l + 1 - i, one())]));
            }
            e.push(unit(field, n, &[(l + 1, l, one())]));
            f.push(unit(field, n, &[(l, l + 1, one())]));
        }
        Family::D => {
            e.push(unit(field, n, &[(1, 2 * l - 1, half()), (2, 2 * l, half())]));
            f.push(unit(field, n, &[(2 * l - 1, 1, two()), (2 * l, 2, two())]));
            for i in 1..l {
                e.push(unit(field, n, &[(i + 1, i, one()), (2 * l + 1 - i, 2 * l - i, one())]));
                f.push(unit(field, n, &[(i, i + 1, one()), (2 * l - i, 2 * l + 1 - i, one())]));
            }
            e.push(unit(field, n, &[(l + 1, l - 1, half()), (l + 2, l, half())]));
            f.push(unit(field, n, &[(l - 1, l + 1, two()), (l, l + 2, two())]));
        }
        Family::G => {
            e.push(unit(field, n, &[(1, 6, half()), (2, 7, half())]));
            f.push(unit(field, n, &[(6, 1, two()), (7, 2, two())]));
            e.push(unit(field, n, &[(2, 1, one()), (4, 3, one()), (5, 4, one()), (7, 6, one())]));
            // the weights 2 on e_34, e_45 make [E_1, F_1] diagonal
            f.push(unit(field, n, &[(1, 2, one()), (3, 4, two()), (4, 5, two()), (6, 7, one())]));
            e.push(unit(field, n, &[(3, 2, one()), (6, 5, one())]));
            f.push(unit(field, n, &[(2, 3, one()), (5, 6, one())]));
        }
    }
    (e, f)
}

pub fn cartan_matrix(spec: AlgebraSpec) -> Vec<Vec<i64>> {
    let l = spec.rank as usize;
    let mut a = vec![vec![0i64; l + 1]; l + 1];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 2;
    }
    let mut link = |i: usize, j: usize, aij: i64, aji: i64| {
        a[i][j] = aij;
        a[j][i] = aji;
    };
    match spec.family {
        Family::A if l == 1 => link(0, 1, -2, -2),
        Family::A => {
            for i in 0..=l {
                link(i, (i + 1) % (l + 1), -1, -1);
            }
        }
        Family::B => {
            link(0, 2, -1, -1);
            link(1, 2, -1, -1);
            for i in 2..l - 1 {
                link(i, i + 1, -1, -1);
            }
            link(l - 1, l, -1, -2);
        }
        Family::C => {
            link(0, 1, -1, -2);
            for i in 1..l - 1 {
                link(i, i + 1, -1, -1);
            }
            link(l - 1, l, -2, -1);
        }
        Family::D => {
            link(0, 2, -1, -1);
            link(1, 2, -1, -1);
            for i in 2..l - 2 {
                link(i, i + 1, -1, -1);
            }
            link(l - 2, l - 1, -1, -1);
            link(l - 2, l, -1, -1);
        }
        Family::G => {
            link(0, 2, -1, -1);
            link(1, 2, -3, -1);
        }
    }
    a
}

/// The traceless diagonal `H` with `[H, E_j] = row[j] E_j` for every j.
fn coroot(field: &Arc<NumberField>, e: &[Mat], row: &[i64], n: usize) -> Result<Mat, AlgebraError> {
    // unknowns h_1..h_n; one equation h_a − h_b = row[j] per entry (a,b) of E_j, plus Σ h = 0
    let mut cols: Vec<Vec<Coords>> = vec![Vec::new(); n];
    let mut rhs: Vec<Coords> = Vec::new();
    for (j, ej) in e.iter().enumerate() {
        for (a, b, _) in ej.nonzero_entries() {
            for (k, col) in cols.iter_mut().enumerate() {
                let v = if k == a { int(1) } else if k == b { int(-1) } else { int(0) };
                col.push(field.from_rational(v));
            }
            rhs.push(field.from_rational(int(row[j])));
        }
    }
    for col in cols.iter_mut() {
        col.push(field.one());
    }
    rhs.push(field.zero());
    let sol = solve_linear(field, &cols, &rhs)?
        .ok_or_else(|| AlgebraError::Realization("no diagonal coroot matches the Cartan matrix".into()))?;
    Ok(Mat::diagonal(field, &sol))
}

fn kac_labels(cartan: &[Vec<i64>]) -> Result<Vec<i64>, AlgebraError> {
    // fix k_0 = 1 and solve the remaining rows
    let m = cartan.len();
    let cols: Vec<Vec<Rational>> = (1..m).map(|j| (0..m).map(|i| int(cartan[i][j])).collect()).collect();
    let rhs: Vec<Rational> = (0..m).map(|i| int(-cartan[i][0])).collect();
    let f = Arc::new(NumberField::rationals());
    let cc: Vec<Vec<Coords>> = cols.iter().map(|c| c.iter().map(|x| f.from_rational(x.clone())).collect()).collect();
    let rr: Vec<Coords> = rhs.iter().map(|x| f.from_rational(x.clone())).collect();
    let sol = solve_linear(&f, &cc, &rr)?.ok_or_else(|| AlgebraError::Realization("Cartan matrix is regular".into()))?;
    let mut k = vec![int(1)];
    k.extend(sol.into_iter().map(|c| c[0].clone()));
    let mut denom = malachite_nz::natural::Natural::ONE;
    for x in &k {
        let d = x.denominator_ref();
        denom = &denom * d / malachite_base::num::arithmetic::traits::Gcd::gcd(denom.clone(), d.clone());
    }
    let scaled: Vec<i64> = k
        .iter()
        .map(|x| {
            let v = x * Rational::from(denom.clone());
            i64::try_from(&v).map_err(|_| AlgebraError::Realization("non-integral Kac label".into()))
        })
        .collect::<Result<_, _>>()?;
    if scaled.iter().any(|&x| x <= 0) {
        return Err(AlgebraError::Realization("non-positive Kac label".into()));
    }
    Ok(scaled)
}

/// ρ = Σ c_i H_i^∨ with (c_1..c_ℓ) = (1..1)·Å⁻¹.
fn rho_from_cartan(cartan: &[Vec<i64>], coroots: &[Mat], field: &Arc<NumberField>) -> Result<Vec<Rational>, AlgebraError> {
    let l = cartan.len() - 1;
    // c Å = (1..1)  ⇔  Åᵀ cᵀ = 1
    let q = Arc::new(NumberField::rationals());
    let cols: Vec<Vec<Coords>> =
        (1..=l).map(|i| (1..=l).map(|j| q.from_rational(int(cartan[i][j]))).collect()).collect();
    let rhs: Vec<Coords> = (0..l).map(|_| q.one()).collect();
    let c = solve_linear(&q, &cols, &rhs)?.ok_or_else(|| AlgebraError::Realization("singular finite Cartan".into()))?;
    let n = coroots[0].rows();
    let mut rho = Mat::zero(field, n, n);
    for (i, ci) in c.iter().enumerate() {
        rho = rho.add(&coroots[i + 1].scale_rational(&ci[0]));
    }
    (0..n).map(|a| Ok(field.project_rational(rho.get(a, a))?)).collect()
}

fn period_exponents(spec: AlgebraSpec, h: u32) -> Vec<ExponentLabel> {
    let h = h as i32;
    let l = spec.rank as i32;
    let mut out: Vec<ExponentLabel> = match spec.family {
        Family::A => (1..h).map(ExponentLabel::plain).collect(),
        Family::B | Family::C => (1..h).filter(|j| j % 2 == 1).map(ExponentLabel::plain).collect(),
        Family::G => vec![ExponentLabel::plain(1), ExponentLabel::plain(5)],
        Family::D => {
            let mut v: Vec<ExponentLabel> = (1..=2 * l - 3).filter(|j| j % 2 == 1).map(ExponentLabel::plain).collect();
            if l % 2 == 0 {
                v.push(ExponentLabel::new(l - 1, true));
            } else {
                v.push(ExponentLabel::plain(l - 1));
            }
            v
        }
    };
    out.sort_by_key(|e| (e.j, e.primed));
    out
}

/// `Γ/μ`, a rational loop matrix.
fn gamma_matrix(l: usize, field: &Arc<NumberField>) -> LaurentMatrix {
    let n = 2 * l;
    let sign = if l % 2 == 0 { int(1) } else { int(-1) };
    let m = |r: usize, c: usize, v: Rational| unit(field, n, &[(r, c, v)]);
    let c0 = m(l, 1, int(-1)).add(&m(l + 1, 1, rat(1, 2))).add(&m(2 * l, l + 1, -&sign)).add(&m(2 * l, l, &sign * rat(1, 2)));
    let c1 = m(l, 2 * l, rat(1, 2))
        .add(&m(l + 1, 2 * l, rat(-1, 4)))
        .add(&m(1, l + 1, &sign * rat(1, 2)))
        .add(&m(1, l, &sign * rat(-1, 4)));
    LaurentMatrix::monomial(c0, 0).add(&LaurentMatrix::monomial(c1, 1))
}

impl AlgebraData {
    pub fn rank(&self) -> usize {
        self.spec.rank as usize
    }

    pub fn rho(&self) -> Mat {
        let diag: Vec<Coords> = self.rho_diag.iter().map(|r| self.field.from_rational(r.clone())).collect();
        Mat::diagonal(&self.field, &diag)
    }

    pub fn is_exponent(&self, label: ExponentLabel) -> bool {
        if label.j == 0 {
            return false;
        }
        let h = self.h as i32;
        let r = label.j.rem_euclid(h);
        self.exponents_in_period.iter().any(|e| e.j == r && e.primed == label.primed)
    }

    /// Positive exponent labels with `j ≤ max`, sorted by j with the primed copy last.
    pub fn exponents_up_to(&self, max: u32) -> Vec<ExponentLabel> {
        let h = self.h as i32;
        let mut out = Vec::new();
        let mut s = 0;
        while s * h < max as i32 + h {
            for e in &self.exponents_in_period {
                let j = e.j + s * h;
                if j >= 1 && j <= max as i32 {
                    out.push(ExponentLabel::new(j, e.primed));
                }
            }
            s += 1;
        }
        out.sort_by_key(|e| (e.j, e.primed));
        out
    }

    /// Whether the label belongs to the Γ family of type D.
    fn is_gamma_label(&self, label: ExponentLabel) -> bool {
        self.spec.family == Family::D && (label.primed || label.j % 2 == 0)
    }

    /// `Λ^j`; negative powers use `Λ^{-1} = z^{-1}Λ^{h-1}` (`z^{-1}Λ^{2ℓ-3}` for type D).
    fn lambda_power(&self, j: i32) -> LaurentMatrix {
        if j >= 0 {
            return self.lambda.pow(j as u32);
        }
        let inv_exp = match self.spec.family {
            Family::A | Family::C | Family::B | Family::G => self.h - 1,
            Family::D => 2 * self.spec.rank - 3,
        };
        self.lambda.pow(inv_exp).shift(-1).pow((-j) as u32)
    }

    fn gamma_power(&self, k: i32) -> LaurentMatrix {
        let g = self.gamma1.as_ref().expect("type D");
        if k >= 0 {
            g.pow(k as u32)
        } else {
            // Γ^{-1} = z^{-1}Γ, so Γ^{-k} = μ^k (z^{-1}Γ₁)^k
            g.shift(-1).pow((-k) as u32)
        }
    }

    /// The generator over the base field and the square of the scalar relating it
    /// to the normalized generator (`Λ_label = √s · returned`).
    pub fn heisenberg_generator_base(&self, label: ExponentLabel) -> Result<(LaurentMatrix, Rational), AlgebraError> {
        if !self.is_exponent(label) {
            return Err(AlgebraError::InvalidExponent(label, self.spec.to_string()));
        }
        let sqrt2 = || self.base.sqrt(2).expect("√2 in the base field");
        match self.spec.family {
            Family::A | Family::C => Ok((self.lambda_power(label.j), int(1))),
            Family::B | Family::G => Ok((self.lambda_power(label.j).scale(&sqrt2()), int(1))),
            Family::D => {
                if self.is_gamma_label(label) {
                    let l = self.spec.rank as i64;
                    let k = label.j / (l as i32 - 1);
                    // Γ^{±k} carries μ^{|k|} with k odd, so the scalar squares to (ℓ−1)μ²
                    let mu_sq = if l % 2 == 0 { 1 } else { -1 };
                    Ok((self.gamma_power(k).scale(&sqrt2()), int((l - 1) * mu_sq)))
                } else {
                    Ok((self.lambda_power(label.j).scale(&sqrt2()), int(1)))
                }
            }
        }
    }

    /// The normalized generator `Λ_label` over the full field.
    pub fn heisenberg_generator(&self, label: ExponentLabel) -> Result<LaurentMatrix, AlgebraError> {
        let (m, s) = self.heisenberg_generator_base(label)?;
        let m = m.map_field(&self.base_to_full);
        if s == 1u32 {
            return Ok(m);
        }
        let ff = &self.full.field;
        let l = self.spec.rank as i64;
        let k = label.j / (l as i32 - 1);
        let mut scalar = self.full.sqrt(l - 1)?;
        if l % 2 == 1 {
            let mu = self.full.sqrt(-1)?;
            scalar = ff.mul(&scalar, &ff.pow(&mu, k.unsigned_abs() as u64));
        }
        Ok(m.scale(&scalar))
    }

    /// Normalized `Λ_1` over the base field.
    pub fn lambda1(&self) -> LaurentMatrix {
        self.heisenberg_generator_base(ExponentLabel::plain(1)).expect("1 is an exponent").0
    }

    /// Common value of `ρ_a − ρ_b + m·h` over nonzero entries `e_ab z^m`.
    pub fn principal_degree(&self, m: &LaurentMatrix) -> Degree {
        let mut deg: Option<Rational> = None;
        for (k, mat) in m.coeffs() {
            for (a, b, _) in mat.nonzero_entries() {
                let d = &self.rho_diag[a] - &self.rho_diag[b] + int(*k as i64 * self.h as i64);
                match &deg {
                    None => deg = Some(d),
                    Some(x) if *x == d => {}
                    Some(_) => return Degree::Inhomogeneous,
                }
            }
        }
        match deg {
            None => Degree::Zero,
            Some(d) => match i32::try_from(&d) {
                Ok(v) => Degree::Homogeneous(v),
                Err(_) => Degree::Inhomogeneous,
            },
        }
    }

    /// `[d'_{-1}, X] = ∂_z X + (1/(hz))[ρ, X]`.
    pub fn dprime(&self, x: &LaurentMatrix) -> LaurentMatrix {
        let rho = LaurentMatrix::monomial(self.rho(), 0);
        let br = rho.commutator(x).shift(-1).scale_rational(&int(self.h as i64).reciprocal());
        x.d_dz().add(&br)
    }

    /// `ρ/(hz)` as a loop matrix.
    pub fn rho_over_hz(&self) -> LaurentMatrix {
        LaurentMatrix::monomial(self.rho().scale_rational(&int(self.h as i64).reciprocal()), -1)
    }

    /// Canonical digest of the realization tables, used to version caches.
    pub fn table_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{}|n={}|h={}|kappa={}|", self.spec, self.n, self.h, self.kappa));
        for row in &self.cartan {
            hasher.update(format!("{row:?}"));
        }
        for m in self.e.iter().chain(&self.f) {
            for (r, c, v) in m.nonzero_entries() {
                hasher.update(format!("({r},{c},{v:?})"));
            }
            hasher.update("|");
        }
        hasher.update(format!("{:?}", self.rho_diag));
        hasher.update(self.field.label());
        format!("{:x}", hasher.finalize())
    }
}

/// ρ-weight-homogeneous basis of the finite simple algebra.
#[derive(Clone, Debug)]
pub struct WeightBasis {
    pub elements: Vec<(Mat, i32)>,
    pub dimension: usize,
}

/// Expected dimension of the finite simple algebra.
pub fn simple_dimension(spec: AlgebraSpec) -> usize {
    let l = spec.rank as usize;
    match spec.family {
        Family::A => l * l + 2 * l,
        Family::B | Family::C => l * (2 * l + 1),
        Family::D => l * (2 * l - 1),
        Family::G => 14,
    }
}

fn weight_of_entry(alg: &AlgebraData, a: usize, b: usize) -> Rational {
    &alg.rho_diag[a] - &alg.rho_diag[b]
}

/// Splits a matrix into ρ-weight components.
fn split_by_weight(alg: &AlgebraData, m: &Mat) -> Vec<(Mat, i32)> {
    let mut parts: std::collections::BTreeMap<i32, Mat> = std::collections::BTreeMap::new();
    for (a, b, v) in m.nonzero_entries() {
        let w = i32::try_from(&weight_of_entry(alg, a, b)).expect("integral ρ-weight");
        let part = parts.entry(w).or_insert_with(|| Mat::zero(&alg.field, alg.n, alg.n));
        part.set(a, b, v.clone());
    }
    parts.into_iter().map(|(w, m)| (m, w)).collect()
}

pub fn weight_basis(alg: &AlgebraData) -> Result<WeightBasis, AlgebraError> {
    let target = simple_dimension(alg.spec);
    let l = alg.rank();
    let gens: Vec<Mat> = alg.e[1..=l].iter().chain(&alg.f[1..=l]).cloned().collect();
    let mut basis: Vec<(Mat, i32)> = Vec::new();
    let mut flat: Vec<Vec<Coords>> = Vec::new();
    let push = |cand: Mat, w: i32, basis: &mut Vec<(Mat, i32)>, flat: &mut Vec<Vec<Coords>>| -> bool {
        if cand.is_zero() {
            return false;
        }
        let v: Vec<Coords> = cand.entries().to_vec();
        let mut trial = flat.clone();
        trial.push(v.clone());
        if independent_subset(&alg.field, &trial).len() == trial.len() {
            flat.push(v);
            basis.push((cand, w));
            true
        } else {
            false
        }
    };
    for g in gens.iter().chain(&alg.coroots[1..=l]) {
        for (m, w) in split_by_weight(alg, g) {
            push(m, w, &mut basis, &mut flat);
        }
    }
    let mut frontier = 0;
    while frontier < basis.len() {
        let x = basis[frontier].0.clone();
        frontier += 1;
        for g in &gens {
            for (m, w) in split_by_weight(alg, &x.commutator(g)) {
                push(m, w, &mut basis, &mut flat);
            }
        }
        if basis.len() > alg.n * alg.n {
            return Err(AlgebraError::Realization("bracket closure exceeds the matrix algebra".into()));
        }
    }
    if basis.len() != target {
        return Err(AlgebraError::Realization(format!("closure has dimension {} instead of {target}", basis.len())));
    }
    basis.sort_by_key(|(_, w)| *w);
    Ok(WeightBasis { dimension: basis.len(), elements: basis })
}

/// Basis `X z^m` of the principal-degree-k subspace, `weight(X) + m·h = k`.
pub fn homogeneous_subspace(alg: &AlgebraData, wb: &WeightBasis, k: i32) -> Vec<LaurentMatrix> {
    let h = alg.h as i32;
    wb.elements
        .iter()
        .filter(|(_, w)| (k - w).rem_euclid(h) == 0)
        .map(|(x, w)| LaurentMatrix::monomial(x.clone(), (k - w) / h))
        .collect()
}

/// `κ · Res_z Tr(∂_z A · B)` over the full field.
pub fn residue_pairing(alg: &AlgebraData, a: &LaurentMatrix, b: &LaurentMatrix) -> Coords {
    let p = a.d_dz().mul(b);
    let tr = p.coeff(-1).trace();
    alg.full.field.scale(&tr, &alg.kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs() -> Vec<AlgebraSpec> {
        ["A1", "A2", "A3", "B3", "C2", "D4", "G2", "D5", "B4", "C3"].iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn parse_and_ranges() {
        assert_eq!("d4".parse::<AlgebraSpec>().unwrap(), AlgebraSpec { family: Family::D, rank: 4 });
        assert!("B2".parse::<AlgebraSpec>().is_err());
        assert!("G3".parse::<AlgebraSpec>().is_err());
        assert!("X1".parse::<AlgebraSpec>().is_err());
        assert!(build_algebra(AlgebraSpec { family: Family::D, rank: 3 }).is_err());
    }

    #[test]
    fn tabulated_data() {
        let a1 = build_algebra("A1".parse().unwrap()).unwrap();
        assert_eq!((a1.n, a1.h, a1.kappa.clone()), (2, 2, int(1)));
        assert_eq!(a1.rho_diag, vec![rat(-1, 2), rat(1, 2)]);
        let d4 = build_algebra("D4".parse().unwrap()).unwrap();
        assert_eq!((d4.n, d4.h, d4.kappa.clone()), (8, 6, rat(1, 2)));
        assert_eq!(d4.rho_diag, [-3, -2, -1, 0, 0, 1, 2, 3].iter().map(|&x| int(x)).collect::<Vec<_>>());
        let labels: Vec<String> = d4.exponents_in_period.iter().map(|e| e.to_string()).collect();
        assert_eq!(labels, ["1", "3", "3'", "5"]);
        let g2 = build_algebra("G2".parse().unwrap()).unwrap();
        assert_eq!((g2.n, g2.h, g2.kappa.clone()), (7, 6, rat(1, 2)));
        assert_eq!(g2.exponents_in_period, vec![ExponentLabel::plain(1), ExponentLabel::plain(5)]);
        let b3 = build_algebra("B3".parse().unwrap()).unwrap();
        assert_eq!(b3.rho_diag, (-3..=3).map(int).collect::<Vec<_>>());
        assert_eq!(g2.rho_diag, (-3..=3).map(int).collect::<Vec<_>>());
        let c2 = build_algebra("C2".parse().unwrap()).unwrap();
        assert_eq!(c2.rho_diag, vec![rat(-3, 2), rat(-1, 2), rat(1, 2), rat(3, 2)]);
        let a3 = build_algebra("A3".parse().unwrap()).unwrap();
        assert_eq!(a3.rho_diag, c2.rho_diag);
        let a2 = build_algebra("A2".parse().unwrap()).unwrap();
        assert_eq!(a2.rho_diag, vec![int(-1), int(0), int(1)]);
    }

    #[test]
    fn kac_labels_and_coxeter() {
        for spec in all_specs() {
            let alg = build_algebra(spec).unwrap();
            for row in &alg.cartan {
                assert_eq!(row.iter().zip(&alg.kac_labels).map(|(a, k)| a * k).sum::<i64>(), 0, "{spec}");
            }
            assert_eq!(alg.kac_labels.iter().sum::<i64>() as u32, alg.h);
        }
        let g2 = build_algebra("G2".parse().unwrap()).unwrap();
        assert_eq!(g2.kac_labels, vec![1, 3, 2]);
    }

    #[test]
    fn cartan_pairing_and_weyl_relations() {
        for spec in all_specs() {
            let alg = build_algebra(spec).unwrap();
            let l = alg.rank();
            for i in 0..=l {
                for j in 0..=l {
                    let lhs = alg.coroots[i].commutator(&alg.e[j]);
                    assert_eq!(lhs, alg.e[j].scale_rational(&int(alg.cartan[i][j])), "{spec} {i} {j}");
                }
                let h = &alg.hs[i];
                assert!(h.is_diagonal(), "{spec} H_{i}");
                // H_i is proportional to the coroot
                let (a, b, _) = alg.e[i].nonzero_entries().next().unwrap();
                let ratio = alg.field.project_rational(&alg.field.sub(h.get(a, a), h.get(b, b))).unwrap() / int(2);
                assert_eq!(*h, alg.coroots[i].scale_rational(&ratio), "{spec} H_{i}");
            }
            // ρ: [ρ, E_j] = E_j
            for j in 1..=l {
                assert_eq!(alg.rho().commutator(&alg.e[j]), alg.e[j]);
            }
        }
    }

    #[test]
    fn generator_properties() {
        for spec in all_specs() {
            let alg = build_algebra(spec).unwrap();
            let h = alg.h as i32;
            let labels: Vec<ExponentLabel> = alg
                .exponents_up_to(2 * alg.h)
                .into_iter()
                .flat_map(|e| [e, e.neg()])
                .collect();
            let gens: Vec<LaurentMatrix> = labels.iter().map(|l| alg.heisenberg_generator(*l).unwrap()).collect();
            for (i, a) in gens.iter().enumerate() {
                for b in &gens[i..] {
                    assert!(a.commutator(b).is_zero(), "{spec}");
                }
            }
            for e in alg.exponents_in_period.clone() {
                let p = residue_pairing(&alg, &alg.heisenberg_generator(e).unwrap(), &alg.heisenberg_generator(e.neg()).unwrap());
                assert_eq!(alg.full.field.project_rational(&p).unwrap(), int(e.j as i64), "{spec} {e}");
                let base = alg.heisenberg_generator_base(e).unwrap().0;
                assert_eq!(alg.principal_degree(&base), Degree::Homogeneous(e.j), "{spec} {e}");
                let neg = alg.heisenberg_generator_base(e.neg()).unwrap().0;
                assert_eq!(alg.principal_degree(&neg), Degree::Homogeneous(-e.j), "{spec} -{e}");
            }
            for e in alg.exponents_up_to(2 * alg.h) {
                let base = alg.heisenberg_generator_base(e).unwrap().0;
                assert_eq!(alg.principal_degree(&base), Degree::Homogeneous(e.j));
            }
            assert!(alg.heisenberg_generator(ExponentLabel::plain(h)).is_err());
            assert_eq!(alg.principal_degree(&LaurentMatrix::monomial(alg.rho(), 0)), Degree::Homogeneous(0));
        }
    }

    #[test]
    fn explicit_generators() {
        let a1 = build_algebra("A1".parse().unwrap()).unwrap();
        let f = a1.field.clone();
        let l1 = a1.heisenberg_generator(ExponentLabel::plain(1)).unwrap();
        let want = LaurentMatrix::monomial(Mat::from_entries(&f, 2, &[(0, 1, int(1))]), 1)
            .add(&LaurentMatrix::monomial(Mat::from_entries(&f, 2, &[(1, 0, int(1))]), 0));
        assert_eq!(l1, want);
        let zid = LaurentMatrix::identity(&f, 2).shift(1);
        assert_eq!(a1.principal_degree(&zid), Degree::Homogeneous(2));
        let a2 = build_algebra("A2".parse().unwrap()).unwrap();
        let sq = a2.heisenberg_generator(ExponentLabel::plain(2)).unwrap();
        assert_eq!(sq, a2.lambda.mul(&a2.lambda));
        assert_eq!(a2.principal_degree(&sq), Degree::Homogeneous(2));
        let b3 = build_algebra("B3".parse().unwrap()).unwrap();
        let m1 = b3.heisenberg_generator_base(ExponentLabel::plain(-1)).unwrap().0;
        let s2 = b3.base.sqrt(2).unwrap();
        assert_eq!(m1, b3.lambda.pow(5).shift(-1).scale(&s2));
        // D4: Λ_1 as displayed
        let d4 = build_algebra("D4".parse().unwrap()).unwrap();
        let mut entries = vec![];
        for (r, c) in [(2, 1), (3, 2), (4, 3), (6, 5), (7, 6), (8, 7)] {
            entries.push((r - 1, c - 1, int(1)));
        }
        entries.push((4, 2, rat(1, 2)));
        entries.push((5, 3, rat(1, 2)));
        let c0 = Mat::from_entries(&d4.field, 8, &entries);
        let c1 = Mat::from_entries(&d4.field, 8, &[(0, 6, rat(1, 2)), (1, 7, rat(1, 2))]);
        let disp = LaurentMatrix::monomial(c0, 0).add(&LaurentMatrix::monomial(c1, 1)).scale(&d4.base.sqrt(2).unwrap());
        assert_eq!(d4.lambda1(), disp);
    }

    #[test]
    fn weight_bases() {
        let a1 = build_algebra("A1".parse().unwrap()).unwrap();
        let wb = weight_basis(&a1).unwrap();
        assert_eq!(wb.elements.iter().map(|x| x.1).collect::<Vec<_>>(), vec![-1, 0, 1]);
        let a2 = build_algebra("A2".parse().unwrap()).unwrap();
        let wb2 = weight_basis(&a2).unwrap();
        assert_eq!(wb2.elements.iter().map(|x| x.1).collect::<Vec<_>>(), vec![-2, -1, -1, 0, 0, 1, 1, 2]);
        for spec in all_specs() {
            let alg = build_algebra(spec).unwrap();
            let wb = weight_basis(&alg).unwrap();
            assert_eq!(wb.dimension, simple_dimension(spec), "{spec}");
            let rho = alg.rho();
            for (x, w) in &wb.elements {
                assert_eq!(rho.commutator(x), x.scale_rational(&int(*w as i64)));
            }
            let zero_part = homogeneous_subspace(&alg, &wb, 0).into_iter().filter(|m| m.coeffs().contains_key(&0)).count();
            assert_eq!(zero_part, alg.rank());
            let h = alg.h as i32;
            for k in -2 * (h + 1)..=2 * (h + 1) {
                for x in homogeneous_subspace(&alg, &wb, k) {
                    assert_eq!(alg.principal_degree(&x), Degree::Homogeneous(k));
                    let want = x.shift(-1).scale_rational(&Rational::from_signeds(k as i64, h as i64));
                    assert_eq!(alg.dprime(&x), want);
                }
            }
        }
        let sub = homogeneous_subspace(&a1, &wb, -3);
        assert_eq!(sub.len(), 2);
        assert_eq!(homogeneous_subspace(&a2, &wb2, -4).len(), 3);
    }
}
