//! `dstau`: one-shot command-line front end for the tau-function pipeline.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dstau::botau::{self, log_tau, q_exponent, q_index, reduction_check, TauExpansion};
use dstau::correlators::{self, ZetaSeries};
use dstau::exactnum::{rational_to_string, Coords, NumberField, Rational};
use dstau::gradedseries::{GradedSeries, Monomial, TimeVar};
use dstau::kacmoody::{build_algebra, weight_basis, AlgebraData, AlgebraSpec, Family};
use dstau::stringeq::{check_a1_closed_form, solve_reduced_string_equation, GammaSolution};
use dstau::tables::{ReferenceTable, TableForm};

#[derive(Parser, Debug)]
#[command(name = "dstau", version, about = "Topological tau functions of Drinfeld-Sokolov hierarchies")]
struct Cli {
    /// Output format; JSON is the machine-readable contract.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Directory for cached string-equation solutions.
    #[arg(long, global = true, env = "DSTAU_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Worker threads for the series kernels.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Expand log τ up to a λ-order.
    Expand {
        #[arg(long, value_parser = parse_algebra)]
        algebra: AlgebraSpec,
        /// λ-order of the unrescaled expansion.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        order: u32,
        #[arg(long, value_enum, default_value_t = OutputForm::GenusSplit)]
        form: OutputForm,
    },
    /// Solve the reduced string equation.
    Gamma {
        #[arg(long, value_parser = parse_algebra)]
        algebra: AlgebraSpec,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        levels: u64,
    },
    /// Correlator generating function F̄_m at t = 0.
    Correlators {
        #[arg(long, value_parser = parse_algebra)]
        algebra: AlgebraSpec,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        m: u64,
        /// λ-order of the unrescaled expansion; exponent sums reach order/2.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        order: u32,
    },
    /// Diff a computed expansion against a bundled or user-supplied table.
    Verify {
        #[arg(long, value_parser = parse_algebra)]
        algebra: Option<AlgebraSpec>,
        /// Table file; defaults to the bundled table for the algebra.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Which bundled table to use.
        #[arg(long, value_enum, default_value_t = TableKind::Q)]
        form: TableKind,
    },
    /// Check a reduction between two algebras in the rescaled variables.
    Reduce {
        #[arg(long, value_parser = parse_algebra)]
        parent: AlgebraSpec,
        #[arg(long, value_parser = parse_algebra)]
        child: AlgebraSpec,
        /// λ-order in the rescaled q-variables.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        order: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Latex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputForm {
    T,
    Q,
    GenusSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TableKind {
    T,
    Q,
}

fn parse_algebra(s: &str) -> Result<AlgebraSpec, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// A failure with the pipeline stage it came from.
#[derive(Debug)]
struct Failure {
    stage: &'static str,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

fn fail<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure { stage, message: e.to_string() }
}

type Res<T> = Result<T, Failure>;

struct Ctx {
    format: Option<Format>,
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = Ctx { format: cli.format, cache_dir: cli.cache_dir };
    let outcome = match cli.cmd {
        Cmd::Expand { algebra, order, form } => cmd_expand(&ctx, algebra, order, form),
        Cmd::Gamma { algebra, levels } => cmd_gamma(&ctx, algebra, levels as usize),
        Cmd::Correlators { algebra, m, order } => cmd_correlators(&ctx, algebra, m as usize, order),
        Cmd::Verify { algebra, table, form } => cmd_verify(&ctx, algebra, table.as_deref(), form),
        Cmd::Reduce { parent, child, order } => cmd_reduce(&ctx, parent, child, order),
    };
    match outcome {
        Ok((text, ok)) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            if ctx.format == Some(Format::Json) {
                eprintln!("{}", json!({"error": {"stage": e.stage, "message": e.message}}));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}

fn algebra(spec: AlgebraSpec) -> Res<Arc<AlgebraData>> {
    build_algebra(spec).map(Arc::new).map_err(fail("algebra"))
}

fn cache_path(dir: &Path, alg: &AlgebraData, levels: usize) -> PathBuf {
    let hash = alg.table_hash();
    dir.join(format!("gamma-{}{}-L{levels}-{}.json", alg.spec.family, alg.spec.rank, &hash[..16]))
}

/// Loads γ from the cache when the key matches, otherwise solves and stores it atomically.
fn gamma_solution(ctx: &Ctx, alg: &Arc<AlgebraData>, levels: usize) -> Res<GammaSolution> {
    let levels = levels.max(1);
    let path = ctx.cache_dir.as_ref().map(|d| cache_path(d, alg, levels));
    if let Some(p) = &path {
        if let Ok(s) = std::fs::read_to_string(p) {
            match serde_json::from_str::<Value>(&s).map_err(|e| e.to_string()).and_then(|v| {
                GammaSolution::from_json(alg, &v).map_err(|e| e.to_string())
            }) {
                Ok(g) if g.order == levels => return Ok(g),
                Ok(_) => eprintln!("warning: cache entry {} has the wrong depth, recomputing", p.display()),
                Err(e) => eprintln!("warning: ignoring unreadable cache entry {}: {e}", p.display()),
            }
        }
    }
    let wb = weight_basis(alg).map_err(fail("string equation"))?;
    let g = solve_reduced_string_equation(alg, &wb, levels).map_err(fail("string equation"))?;
    if let (Some(dir), Some(p)) = (&ctx.cache_dir, &path) {
        store_atomically(dir, p, &serde_json::to_string(&g.to_json()).expect("γ serializes")).map_err(fail("cache"))?;
    }
    Ok(g)
}

fn store_atomically(dir: &Path, path: &Path, body: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn expansion(ctx: &Ctx, alg: &Arc<AlgebraData>, cap: u32) -> Res<TauExpansion> {
    let gsol = gamma_solution(ctx, alg, botau::required_levels(alg, cap))?;
    log_tau(&gsol, cap).map_err(fail("tau expansion"))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn coords_to_string(field: &NumberField, c: &Coords) -> String {
    if field.degree() == 1 {
        return rational_to_string(&c[0]);
    }
    let parts: Vec<String> = c.iter().map(rational_to_string).collect();
    format!("[{}] in {}", parts.join(", "), field.label())
}

fn series_text(s: &GradedSeries) -> Res<String> {
    let mut out = String::new();
    for (m, c) in s.rational_terms().map_err(fail("projection"))? {
        out.push_str(&format!("{}  {m}\n", rational_to_string(&c)));
    }
    Ok(out)
}

fn latex_rational(r: &Rational, leading: bool) -> (String, bool) {
    let s = rational_to_string(r);
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b.to_string()),
        None => (false, s),
    };
    let sign = match (neg, leading) {
        (true, _) => "-",
        (false, true) => "",
        (false, false) => "+",
    };
    let body = match body.split_once('/') {
        Some((a, b)) => format!("\\frac{{{a}}}{{{b}}}"),
        None => body,
    };
    (format!("{sign}{body}"), body == "1")
}

fn latex_var(v: &TimeVar) -> String {
    match v {
        TimeVar::T(l) if l.primed => format!("t_{{{}'}}", l.j),
        TimeVar::T(l) => format!("t_{{{}}}", l.j),
        TimeVar::Q { alpha, k } => format!("q_{{{alpha},{k}}}"),
    }
}

fn latex_monomial(m: &Monomial) -> String {
    let mut parts = Vec::new();
    if m.eps != 0 {
        parts.push(format!("\\epsilon^{{{}}}", m.eps));
    }
    if m.lambda != 0 {
        parts.push(format!("\\lambda^{{{}}}", m.lambda));
    }
    for (v, e) in &m.vars {
        parts.push(if *e == 1 { latex_var(v) } else { format!("{}^{{{e}}}", latex_var(v)) });
    }
    parts.join(" ")
}

fn series_latex(s: &GradedSeries) -> Res<String> {
    let mut terms = Vec::new();
    for (i, (m, c)) in s.rational_terms().map_err(fail("projection"))?.into_iter().enumerate() {
        let (coeff, unit) = latex_rational(&c, i == 0);
        let mono = latex_monomial(&m);
        let coeff = if unit && !mono.is_empty() { coeff.trim_end_matches('1').to_string() } else { coeff };
        terms.push(format!("{coeff} {mono}").trim().to_string());
    }
    if terms.is_empty() {
        terms.push("0".into());
    }
    Ok(format!("{}\n", terms.join(" ")))
}

fn render_series(format: Format, s: &GradedSeries) -> Res<String> {
    match format {
        Format::Json => Ok(pretty(&s.to_json())),
        Format::Text => series_text(s),
        Format::Latex => series_latex(s),
    }
}

fn cmd_expand(ctx: &Ctx, spec: AlgebraSpec, order: u32, form: OutputForm) -> Res<(String, bool)> {
    let alg = algebra(spec)?;
    let tau = expansion(ctx, &alg, order)?;
    let format = ctx.format.unwrap_or(Format::Json);
    let form_name = match form {
        OutputForm::T => "t",
        OutputForm::Q => "q",
        OutputForm::GenusSplit => "genus-split",
    };
    if format == Format::Json {
        let series = match form {
            OutputForm::T => tau.log_tau_t.to_json(),
            OutputForm::Q => tau.log_tau_q.to_json(),
            OutputForm::GenusSplit => tau.genus_json(),
        };
        let v = json!({
            "algebra": spec.to_string(),
            "order": order,
            "form": form_name,
            "q_order": tau.q_order,
            "blocks": tau.n_blocks,
            "trace_terms": tau.trace_terms,
            "series": series,
        });
        return Ok((pretty(&v), true));
    }
    let out = match form {
        OutputForm::T => render_series(format, &tau.log_tau_t)?,
        OutputForm::Q => render_series(format, &tau.log_tau_q)?,
        OutputForm::GenusSplit => {
            let mut out = String::new();
            for (g, s) in &tau.genus_parts {
                let body = render_series(format, s)?;
                out.push_str(&match format {
                    Format::Latex => format!("F_{{{g}}} = {body}"),
                    _ => format!("F{g}:\n{body}"),
                });
            }
            out
        }
    };
    Ok((out, true))
}

fn cmd_gamma(ctx: &Ctx, spec: AlgebraSpec, levels: usize) -> Res<(String, bool)> {
    let alg = algebra(spec)?;
    let gsol = gamma_solution(ctx, &alg, levels)?;
    let closed = (spec.family == Family::A && spec.rank == 1).then(|| check_a1_closed_form(&gsol));
    let format = ctx.format.unwrap_or(Format::Json);
    let ok = !matches!(closed, Some(Err(_)));
    if format == Format::Json {
        let mut v = gsol.to_json();
        if let Some(c) = &closed {
            v["closed_form"] = match c {
                Ok(n) => json!({"passed": true, "modes": n}),
                Err((i, idx)) => json!({"passed": false, "mode": -i, "entry": idx}),
            };
        }
        return Ok((pretty(&v), ok));
    }
    let field = gsol.gamma.ring().field().clone();
    let n = alg.n;
    let mut out = format!("γ for {spec}, {levels} levels, complete through λ^{}\n", gsol.cap());
    let mut modes: Vec<i32> = gsol.gamma.z_exponents().collect();
    modes.sort_by(|a, b| b.cmp(a));
    for k in modes {
        let m = gsol.gamma.fourier(k);
        for (idx, s) in m.iter().enumerate() {
            for (mono, c) in s.iter() {
                out.push_str(&format!("z^{k} [{},{}]  {}  {mono}\n", idx / n, idx % n, coords_to_string(&field, c)));
            }
        }
    }
    match closed {
        Some(Ok(modes)) => out.push_str(&format!("closed form: {modes} modes agree\n")),
        Some(Err((i, idx))) => out.push_str(&format!("closed form: mode z^-{i} entry {idx} disagrees\n")),
        None => {}
    }
    Ok((out, ok))
}

fn zeta_text(s: &ZetaSeries, latex: bool) -> String {
    let mut out = String::new();
    for (labels, c) in s.terms.iter().filter(|(_, c)| **c != 0u32) {
        let (eps, lambda) = s.grading(labels).expect("nonzero coefficients are graded");
        if latex {
            let (coeff, _) = latex_rational(c, true);
            let zs: Vec<String> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let var = if l.primed { "\\hat\\zeta" } else { "\\zeta" };
                    format!("{var}_{{{}}}^{{-{}}}", i + 1, l.j)
                })
                .collect();
            out.push_str(&format!("{coeff} \\epsilon^{{{eps}}} \\lambda^{{{lambda}}} {}\n", zs.join(" ")));
        } else {
            let ls: Vec<String> = labels.iter().map(|l| format!("-{l}")).collect();
            out.push_str(&format!("zeta^({})  eps^{eps} lambda^{lambda}  {}\n", ls.join(","), rational_to_string(c)));
        }
    }
    out
}

fn cmd_correlators(ctx: &Ctx, spec: AlgebraSpec, m: usize, order: u32) -> Res<(String, bool)> {
    let alg = algebra(spec)?;
    let gsol = gamma_solution(ctx, &alg, correlators::required_levels(&alg, m, order))?;
    let series = correlators::correlators(&gsol, m, order).map_err(fail("correlators"))?;
    let out = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => pretty(&json!({
            "algebra": spec.to_string(),
            "m": m,
            "order": order,
            "terms": series.to_json(),
        })),
        Format::Text => zeta_text(&series, false),
        Format::Latex => zeta_text(&series, true),
    };
    Ok((out, true))
}

fn cmd_verify(ctx: &Ctx, spec: Option<AlgebraSpec>, path: Option<&Path>, kind: TableKind) -> Res<(String, bool)> {
    let mut notes = Vec::new();
    let table = match (path, spec) {
        (Some(p), _) => {
            let s = std::fs::read_to_string(p).map_err(fail("table"))?;
            let t = ReferenceTable::from_json_str_unverified(&s).map_err(fail("table"))?;
            if !t.checksum_matches() {
                notes.push("checksum does not match the entries: the table was edited".to_string());
            }
            if let Some(a) = spec {
                if a != t.algebra {
                    return Err(Failure { stage: "table", message: format!("table is for {}, not {a}", t.algebra) });
                }
            }
            t
        }
        (None, Some(a)) => {
            let form = match kind {
                TableKind::T => TableForm::T,
                TableKind::Q => TableForm::Q,
            };
            ReferenceTable::bundled(&a, form).map_err(fail("table"))?
        }
        (None, None) => {
            return Err(Failure { stage: "usage", message: "verify needs --algebra or --table".into() });
        }
    };
    let alg = algebra(table.algebra)?;
    let tau = expansion(ctx, &alg, table.required_cap(alg.h))?;
    let report = table.compare(&tau).map_err(fail("verify"))?;
    let bad: std::collections::BTreeMap<String, _> =
        report.mismatches.iter().map(|m| (m.monomial.to_string(), m)).collect();
    let ok = report.passed();
    if ctx.format == Some(Format::Json) {
        let mism: Vec<Value> = report
            .mismatches
            .iter()
            .map(|m| {
                json!({
                    "monomial": m.monomial.to_string(),
                    "table": m.expected.as_ref().map(rational_to_string),
                    "computed": m.computed.as_ref().map(rational_to_string),
                })
            })
            .collect();
        let v = json!({
            "algebra": table.algebra.to_string(),
            "form": table.form.to_string(),
            "max_lambda": table.max_lambda,
            "checked": report.checked,
            "passed": ok,
            "notes": notes,
            "mismatches": mism,
        });
        return Ok((pretty(&v), ok));
    }
    let mut out = String::new();
    for n in &notes {
        out.push_str(&format!("note: {n}\n"));
    }
    for (m, c) in &table.entries {
        match bad.get(&m.to_string()) {
            Some(x) => out.push_str(&format!("FAIL {x}\n")),
            None => out.push_str(&format!("ok   {m}  {}\n", rational_to_string(c))),
        }
    }
    for x in report.mismatches.iter().filter(|x| x.expected.is_none()) {
        out.push_str(&format!("FAIL {x}\n"));
    }
    out.push_str(&format!(
        "{} {}-table through λ^{}: {} of {} monomials match\n",
        table.algebra,
        table.form,
        table.max_lambda,
        report.checked - report.mismatches.len(),
        report.checked
    ));
    Ok((out, ok))
}

/// Parent and child must share h and be one of the folding pairs.
fn reduction_supported(parent: AlgebraSpec, child: AlgebraSpec) -> bool {
    use Family::*;
    match (parent.family, child.family) {
        (D, B) => parent.rank == child.rank + 1,
        (A, C) => parent.rank + 1 == 2 * child.rank,
        (B, G) => parent.rank == 3 && child.rank == 2,
        _ => false,
    }
}

fn cmd_reduce(ctx: &Ctx, parent: AlgebraSpec, child: AlgebraSpec, order: u32) -> Res<(String, bool)> {
    if !reduction_supported(parent, child) {
        return Err(Failure { stage: "reduce", message: format!("no reduction from {parent} to {child}") });
    }
    let pa = algebra(parent)?;
    let ch = algebra(child)?;
    let cap = order * 2 * (pa.h + 1);
    let tp = expansion(ctx, &pa, cap)?;
    let tc = expansion(ctx, &ch, cap)?;
    // parent q_{α,k} ↦ child q_{α',k} through the shared exponent; other families are set to zero
    let mut map = std::collections::BTreeMap::new();
    let mut zeroed = std::collections::BTreeSet::new();
    for alpha in 1..=pa.exponents_in_period.len() as u32 {
        let label = q_exponent(&pa, alpha);
        if !label.primed && ch.exponents_in_period.contains(&label) {
            let (beta, _) = q_index(&ch, label);
            for k in 0..=cap {
                map.insert(TimeVar::Q { alpha, k }, TimeVar::Q { alpha: beta, k });
            }
        } else {
            zeroed.insert(alpha);
        }
    }
    let zero = |v: &TimeVar| matches!(v, TimeVar::Q { alpha, .. } if zeroed.contains(alpha));
    let report = reduction_check(&tp, &tc, &map, &zero).map_err(fail("reduce"))?;
    let ok = report.agrees();
    if ctx.format == Some(Format::Json) {
        let v = json!({
            "parent": parent.to_string(),
            "child": child.to_string(),
            "order": report.order,
            "zeroed_families": zeroed,
            "agrees": ok,
            "first_difference": report.first_difference.as_ref().map(|(m, a, b)| json!({"monomial": m, "reduced": a, "direct": b})),
        });
        return Ok((pretty(&v), ok));
    }
    let families: Vec<String> = zeroed.iter().map(|a| format!("q_{a}")).collect();
    let out = match &report.first_difference {
        None => format!(
            "{parent} → {child}: agree through λ^{} (zeroed {})\n",
            report.order,
            if families.is_empty() { "none".to_string() } else { families.join(", ") }
        ),
        Some((m, a, b)) => format!("{parent} → {child}: differ at {m}: reduced {a}, direct {b}\n"),
    };
    Ok((out, ok))
}
