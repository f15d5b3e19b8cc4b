//! Bundled expansion tables: reference coefficients of `log τ` used as oracles.
//!
//! A table is complete up to `max_lambda`: every nonzero coefficient at or below that order is listed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::botau::TauExpansion;
use crate::exactnum::{parse_rational, rational_to_string, Rational};
use crate::gradedseries::{Monomial, SeriesError, TimeVar};
use crate::kacmoody::AlgebraSpec;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("table parse error: {0}")]
    Parse(String),
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("no bundled {form} table for {algebra}")]
    Missing { algebra: String, form: TableForm },
    #[error("table needs λ-order {need} in {form}-form, the expansion reaches {have}")]
    Order { need: u32, have: u32, form: TableForm },
    #[error("table is for {table}, expansion is for {expansion}")]
    AlgebraMismatch { table: String, expansion: String },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableForm {
    /// Unrescaled `(ε, λ, t_j)` variables.
    T,
    /// Rescaled `(ε, λ, q_{α,k})` variables, `eps = 2g − 2`.
    Q,
}

impl fmt::Display for TableForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableForm::T => "t",
            TableForm::Q => "q",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub eps: i32,
    pub lambda: u32,
    pub vars: BTreeMap<String, u32>,
    pub coeff: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct TableFile {
    algebra: String,
    form: TableForm,
    max_lambda: u32,
    checksum: String,
    entries: Vec<TableEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTable {
    pub algebra: AlgebraSpec,
    pub form: TableForm,
    pub max_lambda: u32,
    pub checksum: String,
    pub raw: Vec<TableEntry>,
    pub entries: Vec<(Monomial, Rational)>,
}

const BUNDLED: &[(&str, TableForm, &str)] = &[
    ("A1", TableForm::T, include_str!("../data/tables/a1_t.json")),
    ("A1", TableForm::Q, include_str!("../data/tables/a1_q.json")),
    ("A2", TableForm::Q, include_str!("../data/tables/a2_q.json")),
    ("A3", TableForm::Q, include_str!("../data/tables/a3_q.json")),
    ("B3", TableForm::Q, include_str!("../data/tables/b3_q.json")),
    ("C2", TableForm::Q, include_str!("../data/tables/c2_q.json")),
    ("D4", TableForm::Q, include_str!("../data/tables/d4_q.json")),
];

/// sha256 of the compact, key-sorted JSON of the entry list.
pub fn entries_checksum(entries: &[TableEntry]) -> String {
    // Value maps are key-sorted, matching the canonical form used when the files were written
    let canon = serde_json::to_value(entries).and_then(|v| serde_json::to_string(&v)).expect("entries serialize");
    Sha256::digest(canon.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_entry(e: &TableEntry) -> Result<(Monomial, Rational), TableError> {
    let mut vars = Vec::with_capacity(e.vars.len());
    for (name, &exp) in &e.vars {
        let v: TimeVar = name.parse()?;
        if exp == 0 {
            return Err(TableError::Parse(format!("zero exponent on {name}")));
        }
        vars.push((v, exp));
    }
    let c = parse_rational(&e.coeff).map_err(|err| TableError::Parse(format!("{}: {err}", e.coeff)))?;
    Ok((Monomial::new(e.lambda, e.eps, vars), c))
}

impl ReferenceTable {
    /// Parses a table and checks its stored checksum.
    pub fn from_json_str(s: &str) -> Result<ReferenceTable, TableError> {
        let t = ReferenceTable::from_json_str_unverified(s)?;
        let computed = entries_checksum(&t.raw);
        if computed != t.checksum {
            return Err(TableError::Checksum { stored: t.checksum, computed });
        }
        Ok(t)
    }

    /// Parses a table without checking the checksum, for diffing edited tables.
    pub fn from_json_str_unverified(s: &str) -> Result<ReferenceTable, TableError> {
        let file: TableFile = serde_json::from_str(s).map_err(|e| TableError::Parse(e.to_string()))?;
        let algebra: AlgebraSpec = file.algebra.parse().map_err(|e| TableError::Parse(format!("{e}")))?;
        let entries = file.entries.iter().map(parse_entry).collect::<Result<Vec<_>, _>>()?;
        Ok(ReferenceTable {
            algebra,
            form: file.form,
            max_lambda: file.max_lambda,
            checksum: file.checksum,
            raw: file.entries,
            entries,
        })
    }

    pub fn checksum_matches(&self) -> bool {
        entries_checksum(&self.raw) == self.checksum
    }

    pub fn to_json_string(&self) -> String {
        let file = TableFile {
            algebra: self.algebra.to_string(),
            form: self.form,
            max_lambda: self.max_lambda,
            checksum: self.checksum.clone(),
            entries: self.raw.clone(),
        };
        serde_json::to_string_pretty(&file).expect("table serializes")
    }

    pub fn bundled(algebra: &AlgebraSpec, form: TableForm) -> Result<ReferenceTable, TableError> {
        let name = algebra.to_string();
        BUNDLED
            .iter()
            .find(|(a, f, _)| *a == name && *f == form)
            .map(|(_, _, s)| ReferenceTable::from_json_str(s))
            .unwrap_or(Err(TableError::Missing { algebra: name, form }))
    }

    pub fn all_bundled() -> Result<Vec<ReferenceTable>, TableError> {
        BUNDLED.iter().map(|(_, _, s)| ReferenceTable::from_json_str(s)).collect()
    }

    /// λ-cap of the unrescaled computation that reaches `max_lambda`.
    pub fn required_cap(&self, h: u32) -> u32 {
        match self.form {
            TableForm::T => self.max_lambda,
            TableForm::Q => self.max_lambda * 2 * (h + 1),
        }
    }

    /// Exact two-sided comparison up to `max_lambda`.
    pub fn compare(&self, tau: &TauExpansion) -> Result<TableReport, TableError> {
        if tau.alg.spec != self.algebra {
            return Err(TableError::AlgebraMismatch { table: self.algebra.to_string(), expansion: tau.alg.spec.to_string() });
        }
        let (series, have) = match self.form {
            TableForm::T => (&tau.log_tau_t, tau.cap),
            TableForm::Q => (&tau.log_tau_q, tau.q_order),
        };
        if have < self.max_lambda {
            return Err(TableError::Order { need: self.max_lambda, have, form: self.form });
        }
        let expected: BTreeMap<String, (Monomial, Rational)> =
            self.entries.iter().map(|(m, c)| (m.to_string(), (m.clone(), c.clone()))).collect();
        let computed: BTreeMap<String, (Monomial, Rational)> = series
            .rational_terms()?
            .into_iter()
            .filter(|(m, _)| m.lambda <= self.max_lambda)
            .map(|(m, c)| (m.to_string(), (m, c)))
            .collect();
        let mut report = TableReport { algebra: self.algebra, form: self.form, checked: 0, mismatches: Vec::new() };
        let keys: std::collections::BTreeSet<&String> = expected.keys().chain(computed.keys()).collect();
        for k in keys {
            report.checked += 1;
            let e = expected.get(k);
            let c = computed.get(k);
            if e.map(|x| &x.1) != c.map(|x| &x.1) {
                let monomial = e.or(c).map(|x| x.0.clone()).expect("key from one side");
                report.mismatches.push(TableMismatch {
                    monomial,
                    expected: e.map(|x| x.1.clone()),
                    computed: c.map(|x| x.1.clone()),
                });
            }
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableMismatch {
    pub monomial: Monomial,
    pub expected: Option<Rational>,
    pub computed: Option<Rational>,
}

impl fmt::Display for TableMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |r: &Option<Rational>| r.as_ref().map(rational_to_string).unwrap_or_else(|| "absent".into());
        write!(f, "{}: table {}, computed {}", self.monomial, show(&self.expected), show(&self.computed))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableReport {
    pub algebra: AlgebraSpec,
    pub form: TableForm,
    /// Distinct monomials examined on either side.
    pub checked: usize,
    pub mismatches: Vec<TableMismatch>,
}

impl TableReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_load_with_valid_checksums() {
        let all = ReferenceTable::all_bundled().unwrap();
        assert_eq!(all.len(), BUNDLED.len());
        let a1 = ReferenceTable::bundled(&"A1".parse().unwrap(), TableForm::Q).unwrap();
        let f3 = Monomial::new(5, 4, vec![(TimeVar::Q { alpha: 1, k: 7 }, 1)]);
        assert!(a1.entries.iter().any(|(m, c)| *m == f3 && *c == Rational::from_signeds(1, 82944)));
        assert!(matches!(
            ReferenceTable::bundled(&"G2".parse().unwrap(), TableForm::Q),
            Err(TableError::Missing { .. })
        ));
    }

    #[test]
    fn tampering_breaks_the_checksum() {
        let s = BUNDLED[0].2.replacen("1/12", "1/13", 1);
        assert!(matches!(ReferenceTable::from_json_str(&s), Err(TableError::Checksum { .. })));
        assert!(!ReferenceTable::from_json_str_unverified(&s).unwrap().checksum_matches());
    }

    #[test]
    fn round_trip() {
        let t = ReferenceTable::bundled(&"C2".parse().unwrap(), TableForm::Q).unwrap();
        assert_eq!(ReferenceTable::from_json_str(&t.to_json_string()).unwrap(), t);
    }
}
