//! Closed-form solving of cost equation systems, with an exact recurrence
//! evaluator as reference and fallback.
//!
//! All arithmetic is exact: equation constants arrive quantized to 1/1000 pJ
//! and everything downstream is `BigRational`. Pattern dispatch:
//!
//! * P1 — `f(n) = f(n-1) + p(n)` with a polynomial increment `p` (possibly
//!   assembled from already-solved callees): discrete summation, one degree
//!   up.
//! * P2 — `f(n) = f(n-1) + f(n-2) + c`: a `fib`/`lucas` combination with
//!   coefficients fixed by the two base values.
//! * P3 — `f(n) = a*f(n-1) + c`, `a > 1`: geometric closed form.
//!
//! Anything else (including mutual recursion across predicates) falls back
//! to a numeric table computed by the recurrence evaluator.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::hcir::{CaseEq, CostEquationSystem, PredEquations, SizeMetric};

/// Exact closed-form bound function of the input size.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedForm {
    /// `coeffs[k] * n^k` summed over k.
    Poly(Vec<BigRational>),
    /// `fib * fib(n) + lucas * lucas(n) + konst`.
    FibLucas {
        fib: BigRational,
        lucas: BigRational,
        konst: BigRational,
    },
    /// `coeff * ratio^n + konst`.
    Geometric {
        coeff: BigRational,
        ratio: BigRational,
        konst: BigRational,
    },
}

impl ClosedForm {
    pub fn constant(c: BigRational) -> ClosedForm {
        ClosedForm::Poly(vec![c])
    }

    /// Polynomial degree, if polynomial.
    pub fn degree(&self) -> Option<usize> {
        match self {
            ClosedForm::Poly(cs) => Some(cs.iter().rposition(|c| !c.is_zero()).unwrap_or(0)),
            _ => None,
        }
    }

    pub fn is_fib_lucas(&self) -> bool {
        matches!(self, ClosedForm::FibLucas { .. })
    }

    /// Exact rational evaluation at a natural size.
    pub fn eval(&self, n: u64) -> BigRational {
        match self {
            ClosedForm::Poly(cs) => {
                let x = BigRational::from_integer(BigInt::from(n));
                let mut acc = BigRational::zero();
                for c in cs.iter().rev() {
                    acc = acc * &x + c;
                }
                acc
            }
            ClosedForm::FibLucas { fib, lucas, konst } => {
                let (f, l) = fib_lucas(n);
                fib * BigRational::from_integer(f) + lucas * BigRational::from_integer(l) + konst
            }
            ClosedForm::Geometric {
                coeff,
                ratio,
                konst,
            } => coeff * pow_rational(ratio, n) + konst,
        }
    }

    /// Composes with the affine argument `alpha * n + beta`.
    fn compose_affine(&self, alpha: i64, beta: i64) -> Option<ClosedForm> {
        match self {
            ClosedForm::Poly(cs) => {
                let d = cs.iter().rposition(|c| !c.is_zero()).unwrap_or(0);
                // exact substitution by evaluation and re-interpolation
                let a = BigRational::from_integer(BigInt::from(alpha));
                let b = BigRational::from_integer(BigInt::from(beta));
                let eval_raw = |x: &BigRational| -> BigRational {
                    let mut acc = BigRational::zero();
                    for c in cs.iter().rev() {
                        acc = acc * x + c;
                    }
                    acc
                };
                let points: Vec<(u64, BigRational)> = (0..=d as u64)
                    .map(|x| {
                        let arg = &a * BigRational::from_integer(BigInt::from(x)) + &b;
                        (x, eval_raw(&arg))
                    })
                    .collect();
                Some(ClosedForm::Poly(lagrange(&points)))
            }
            ClosedForm::FibLucas { .. } => {
                if alpha == 1 && beta == 0 {
                    Some(self.clone())
                } else {
                    None
                }
            }
            ClosedForm::Geometric {
                coeff,
                ratio,
                konst,
            } => {
                if alpha != 1 || beta < 0 {
                    return None;
                }
                Some(ClosedForm::Geometric {
                    coeff: coeff * pow_rational(ratio, beta as u64),
                    ratio: ratio.clone(),
                    konst: konst.clone(),
                })
            }
        }
    }

    fn try_add(&self, other: &ClosedForm) -> Option<ClosedForm> {
        let constant_of = |cf: &ClosedForm| -> Option<BigRational> {
            match cf {
                ClosedForm::Poly(cs) if cf.degree() == Some(0) => {
                    Some(cs.first().cloned().unwrap_or_else(BigRational::zero))
                }
                _ => None,
            }
        };
        match (self, other) {
            (ClosedForm::Poly(a), ClosedForm::Poly(b)) => {
                let mut out = vec![BigRational::zero(); a.len().max(b.len()).max(1)];
                for (i, c) in a.iter().enumerate() {
                    out[i] += c;
                }
                for (i, c) in b.iter().enumerate() {
                    out[i] += c;
                }
                Some(ClosedForm::Poly(out))
            }
            (ClosedForm::FibLucas { fib, lucas, konst }, p)
            | (p, ClosedForm::FibLucas { fib, lucas, konst }) => {
                let c = constant_of(p)?;
                Some(ClosedForm::FibLucas {
                    fib: fib.clone(),
                    lucas: lucas.clone(),
                    konst: konst + c,
                })
            }
            (
                ClosedForm::Geometric {
                    coeff,
                    ratio,
                    konst,
                },
                p,
            )
            | (
                p,
                ClosedForm::Geometric {
                    coeff,
                    ratio,
                    konst,
                },
            ) => {
                let c = constant_of(p)?;
                Some(ClosedForm::Geometric {
                    coeff: coeff.clone(),
                    ratio: ratio.clone(),
                    konst: konst + c,
                })
            }
        }
    }
}

/// `(fib(n), lucas(n))` by the linear recurrence: fib(0)=0, fib(1)=1;
/// lucas(0)=2, lucas(1)=1 (so lucas(2)=3).
pub fn fib_lucas(n: u64) -> (BigInt, BigInt) {
    let (mut f0, mut f1) = (BigInt::from(0), BigInt::from(1));
    let (mut l0, mut l1) = (BigInt::from(2), BigInt::from(1));
    for _ in 0..n {
        let f2 = &f0 + &f1;
        f0 = std::mem::replace(&mut f1, f2);
        let l2 = &l0 + &l1;
        l0 = std::mem::replace(&mut l1, l2);
    }
    (f0, l0)
}

fn pow_rational(r: &BigRational, n: u64) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..n {
        acc = acc * r;
    }
    acc
}

/// A solved bound: closed form when a pattern matched, numeric table
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub form: SolvedForm,
    /// The closed form agrees with the recurrence for every `n >= valid_from`.
    pub valid_from: u64,
    pub warnings: Vec<String>,
    pub metric: SizeMetric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolvedForm {
    Closed(ClosedForm),
    /// `values[n]` for n up to the requested horizon.
    Table(Vec<BigRational>),
}

impl SolveResult {
    pub fn eval(&self, n: u64) -> Option<BigRational> {
        match &self.form {
            SolvedForm::Closed(cf) if n >= self.valid_from => Some(cf.eval(n)),
            SolvedForm::Closed(_) => None,
            SolvedForm::Table(values) => values.get(n as usize).cloned(),
        }
    }

    pub fn closed_form(&self) -> Option<&ClosedForm> {
        match &self.form {
            SolvedForm::Closed(cf) => Some(cf),
            SolvedForm::Table(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match &self.form {
            SolvedForm::Closed(cf) => cf.to_string(),
            SolvedForm::Table(values) => format!("table[0..={}]", values.len().saturating_sub(1)),
        }
    }
}

/// Renders a rational in decimal when its denominator divides a power of
/// ten, and as `p/q` otherwise.
pub fn render_rational(r: &BigRational) -> String {
    let r = r.reduced();
    let mut den = r.denom().clone();
    if den.is_one() {
        return r.numer().to_string();
    }
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0u32;
    let mut fives = 0u32;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let digits = twos.max(fives);
    let scale = BigInt::from(10).pow(digits);
    let scaled = r.numer() * &scale / r.denom();
    let negative = scaled.is_negative();
    let text = format!("{:0>width$}", scaled.abs().to_string(), width = digits as usize + 1);
    let (int_part, frac_part) = text.split_at(text.len() - digits as usize);
    let frac_part = frac_part.trim_end_matches('0');
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    out
}

impl fmt::Display for ClosedForm {
    /// `5.1*N + 4.2`, `5.2*lucas(N) + 6*fib(N) - 6.6`, `4*2^N - 3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<(bool, String)> = Vec::new();
        let mut push = |c: &BigRational, sym: Option<String>| {
            if c.is_zero() {
                return;
            }
            let mag = c.abs();
            let text = match sym {
                None => render_rational(&mag),
                Some(s) if mag.is_one() => s,
                Some(s) => format!("{}*{}", render_rational(&mag), s),
            };
            terms.push((c.is_negative(), text));
        };
        match self {
            ClosedForm::Poly(cs) => {
                for (k, c) in cs.iter().enumerate().rev() {
                    let sym = match k {
                        0 => None,
                        1 => Some("N".to_string()),
                        _ => Some(format!("N^{k}")),
                    };
                    push(c, sym);
                }
            }
            ClosedForm::FibLucas { fib, lucas, konst } => {
                push(lucas, Some("lucas(N)".into()));
                push(fib, Some("fib(N)".into()));
                push(konst, None);
            }
            ClosedForm::Geometric {
                coeff,
                ratio,
                konst,
            } => {
                push(coeff, Some(format!("{}^N", render_rational(ratio))));
                push(konst, None);
            }
        }
        if terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (neg, text)) in terms.iter().enumerate() {
            if i == 0 {
                if *neg {
                    f.write_str("-")?;
                }
            } else if *neg {
                f.write_str(" - ")?;
            } else {
                f.write_str(" + ")?;
            }
            f.write_str(text)?;
        }
        Ok(())
    }
}

/// Memoized exact evaluation of the entry predicate's recurrence at `n`.
pub fn eval_recurrence(sys: &CostEquationSystem, n: u64) -> BigRational {
    let mut memo: BTreeMap<(String, u64), BigRational> = BTreeMap::new();
    eval_pred(sys, &sys.entry, n, &mut memo)
}

fn eval_pred(
    sys: &CostEquationSystem,
    pred: &str,
    n: u64,
    memo: &mut BTreeMap<(String, u64), BigRational>,
) -> BigRational {
    if let Some(v) = memo.get(&(pred.to_string(), n)) {
        return v.clone();
    }
    let eqs = sys
        .preds
        .get(pred)
        .unwrap_or_else(|| panic!("unknown predicate '{pred}'"));
    let case = match eqs {
        PredEquations::Simple(case) => case,
        PredEquations::Guarded { theta, rec, base } => {
            if n >= *theta {
                rec
            } else {
                base
            }
        }
    };
    let mut total = case.constant.to_rational();
    for call in &case.calls {
        let arg = (call.alpha * n as i64 + call.beta).max(0) as u64;
        total += eval_pred(sys, &call.callee, arg, memo);
    }
    memo.insert((pred.to_string(), n), total.clone());
    total
}

/// Solves the system, falling back to a numeric table (computed by
/// [`eval_recurrence`] up to `horizon`) when no pattern fits.
pub fn solve_with_horizon(sys: &CostEquationSystem, horizon: u64) -> SolveResult {
    let mut warnings: Vec<String> = Vec::new();
    match try_solve(sys, &mut warnings) {
        Some((cf, valid_from)) => SolveResult {
            form: SolvedForm::Closed(cf),
            valid_from,
            warnings,
            metric: sys.metric.metric,
        },
        None => {
            let values = (0..=horizon).map(|n| eval_recurrence(sys, n)).collect();
            SolveResult {
                form: SolvedForm::Table(values),
                valid_from: 0,
                warnings,
                metric: sys.metric.metric,
            }
        }
    }
}

/// [`solve_with_horizon`] at the default horizon of 30.
pub fn solve(sys: &CostEquationSystem) -> SolveResult {
    solve_with_horizon(sys, 30)
}

fn try_solve(sys: &CostEquationSystem, warnings: &mut Vec<String>) -> Option<(ClosedForm, u64)> {
    // topological order over the call graph, self-loops ignored
    let mut order: Vec<String> = Vec::new();
    let mut marks: BTreeMap<String, u8> = BTreeMap::new();
    let mut stack: Vec<(String, bool)> = vec![(sys.entry.clone(), false)];
    while let Some((p, expanded)) = stack.pop() {
        if expanded {
            marks.insert(p.clone(), 2);
            order.push(p);
            continue;
        }
        match marks.get(&p) {
            Some(2) => continue,
            Some(1) => {
                warnings.push(
                    "mutual recursion across predicates; falling back to a numeric table".into(),
                );
                return None;
            }
            _ => {}
        }
        marks.insert(p.clone(), 1);
        stack.push((p.clone(), true));
        let cases: Vec<&CaseEq> = match &sys.preds[&p] {
            PredEquations::Simple(c) => vec![c],
            PredEquations::Guarded { rec, base, .. } => vec![rec, base],
        };
        for c in cases {
            for call in &c.calls {
                if call.callee != p {
                    match marks.get(&call.callee) {
                        Some(1) => {
                            warnings.push(
                                "mutual recursion across predicates; falling back to a numeric table"
                                    .into(),
                            );
                            return None;
                        }
                        Some(_) => {}
                        None => stack.push((call.callee.clone(), false)),
                    }
                }
            }
        }
    }

    let mut solved: BTreeMap<String, (ClosedForm, u64)> = BTreeMap::new();
    for name in &order {
        let result = solve_pred(sys, name, &solved, warnings)?;
        solved.insert(name.clone(), result);
    }
    solved.get(&sys.entry).cloned()
}

/// `constant + sum of callee closed forms at their affine arguments`, when
/// the pieces combine into one form. Also returns the smallest n at which
/// every composed argument stays inside its callee's validity range.
fn case_increment(
    case: &CaseEq,
    exclude_self: &str,
    solved: &BTreeMap<String, (ClosedForm, u64)>,
    warnings: &mut Vec<String>,
) -> Option<(ClosedForm, u64)> {
    let mut acc = ClosedForm::constant(case.constant.to_rational());
    let mut required_from: u64 = 0;
    for call in &case.calls {
        if call.callee == exclude_self {
            continue;
        }
        let (cf, callee_valid) = solved.get(&call.callee)?;
        // alpha*n + beta >= callee_valid must hold where the form is used
        if call.alpha > 0 {
            let need = (*callee_valid as i64 - call.beta).max(0);
            required_from = required_from.max(((need + call.alpha - 1) / call.alpha) as u64);
        } else if call.beta < *callee_valid as i64 {
            warnings.push(format!(
                "constant argument {} to '{}' is below its validity range",
                call.beta, call.callee
            ));
            return None;
        }
        let applied = match cf.compose_affine(call.alpha, call.beta) {
            Some(a) => a,
            None => {
                warnings.push(format!(
                    "cannot compose '{}' with argument {}*n{:+}",
                    call.callee, call.alpha, call.beta
                ));
                return None;
            }
        };
        acc = match acc.try_add(&applied) {
            Some(a) => a,
            None => {
                warnings.push(format!(
                    "cannot combine closed forms around a call to '{}'",
                    call.callee
                ));
                return None;
            }
        };
    }
    Some((acc, required_from))
}

fn solve_pred(
    sys: &CostEquationSystem,
    name: &str,
    solved: &BTreeMap<String, (ClosedForm, u64)>,
    warnings: &mut Vec<String>,
) -> Option<(ClosedForm, u64)> {
    match &sys.preds[name] {
        PredEquations::Simple(case) => {
            let (cf, required_from) = case_increment(case, "", solved, warnings)?;
            Some((cf, required_from))
        }
        PredEquations::Guarded { theta, rec, base } => {
            let theta = *theta;
            if base.calls.iter().any(|c| c.callee == name) {
                warnings.push(format!("'{name}' recurses in its base case"));
                return None;
            }
            let mut deltas: Vec<i64> = Vec::new();
            for c in rec.calls.iter().filter(|c| c.callee == name) {
                if c.alpha == 1 && c.beta < 0 {
                    deltas.push(-c.beta);
                } else {
                    warnings.push(format!("'{name}' recurses with a non-decreasing argument"));
                    return None;
                }
            }
            let (increment, increment_from) = case_increment(rec, name, solved, warnings)?;
            // base values come from the recurrence itself, which stays exact
            // even when the base case calls other predicates
            let base_at = |n: u64| -> BigRational {
                let mut memo = BTreeMap::new();
                eval_pred(sys, name, n, &mut memo)
            };
            deltas.sort_unstable();
            match deltas.as_slice() {
                [1] => {
                    // P1: discrete summation of the increment polynomial
                    let degree = match increment.degree() {
                        Some(d) => d,
                        None => {
                            warnings.push(format!("'{name}': non-polynomial increment"));
                            return None;
                        }
                    };
                    let valid_from = theta.saturating_sub(1).max(increment_from);
                    let f_base = base_at(valid_from);
                    let mut points: Vec<(u64, BigRational)> = vec![(valid_from, f_base.clone())];
                    let mut running = f_base;
                    for k in 1..=(degree as u64 + 1) {
                        running += increment.eval(valid_from + k);
                        points.push((valid_from + k, running.clone()));
                    }
                    Some((ClosedForm::Poly(lagrange(&points)), valid_from))
                }
                [1, 2] => {
                    // P2: fib/lucas basis
                    if theta != 2 {
                        warnings.push(format!(
                            "'{name}': double recursion with base threshold {theta}"
                        ));
                        return None;
                    }
                    if increment.degree() != Some(0) || increment_from > 0 {
                        warnings.push(format!(
                            "'{name}': double recursion with a non-constant increment"
                        ));
                        return None;
                    }
                    let c = increment.eval(0);
                    let gamma = -c;
                    let f0 = base_at(0);
                    let f1 = base_at(1);
                    // f(0) = 2*lucas + gamma ; f(1) = fib + lucas + gamma
                    let lucas = (f0 - &gamma) / BigRational::from_integer(BigInt::from(2));
                    let fib = f1 - &gamma - &lucas;
                    Some((
                        ClosedForm::FibLucas {
                            fib,
                            lucas,
                            konst: gamma,
                        },
                        0,
                    ))
                }
                ds if ds.len() >= 2 && ds.iter().all(|d| *d == 1) => {
                    // P3: geometric
                    if increment.degree() != Some(0) || increment_from > 0 {
                        warnings.push(format!(
                            "'{name}': multiple recursion with a non-constant increment"
                        ));
                        return None;
                    }
                    let a = BigRational::from_integer(BigInt::from(ds.len() as i64));
                    let c = increment.eval(0);
                    let k = c / (&a - BigRational::one());
                    let valid_from = theta.saturating_sub(1);
                    let f_base = base_at(valid_from);
                    // f(n) = (f(b) + K) * a^(n-b) - K
                    let coeff = (f_base + &k) / pow_rational(&a, valid_from);
                    Some((
                        ClosedForm::Geometric {
                            coeff,
                            ratio: a,
                            konst: -k,
                        },
                        valid_from,
                    ))
                }
                other => {
                    warnings.push(format!("'{name}': unsupported recursion deltas {other:?}"));
                    None
                }
            }
        }
    }
}

/// Exact Lagrange interpolation through the given points.
fn lagrange(points: &[(u64, BigRational)]) -> Vec<BigRational> {
    let n = points.len();
    let mut coeffs = vec![BigRational::zero(); n];
    for (i, (xi, yi)) in points.iter().enumerate() {
        let mut basis = vec![BigRational::one()];
        let mut denom = BigRational::one();
        for (j, (xj, _)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj_r = BigRational::from_integer(BigInt::from(*xj));
            let mut next = vec![BigRational::zero(); basis.len() + 1];
            for (k, b) in basis.iter().enumerate() {
                next[k + 1] += b;
                next[k] -= b * &xj_r;
            }
            basis = next;
            denom *= BigRational::from_integer(BigInt::from(*xi)) - xj_r;
        }
        let scale = yi / denom;
        for (k, b) in basis.iter().enumerate() {
            coeffs[k] += b * &scale;
        }
    }
    while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.is_zero()) {
        coeffs.pop();
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{extract_blocks, harness_program};
    use crate::energy::Energy;
    use crate::evo::Direction;
    use crate::hcir::{setup_cost_equations, to_hcir, BlockCosts, CallTerm, MetricSpec};
    use crate::isa::{parse_program, FACT};

    fn rat(n: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(n))
    }

    fn guarded(theta: u64, rec: CaseEq, base: CaseEq) -> CostEquationSystem {
        CostEquationSystem {
            direction: Direction::Upper,
            entry: "f".into(),
            metric: MetricSpec::default(),
            preds: [("f".to_string(), PredEquations::Guarded { theta, rec, base })].into(),
        }
    }

    fn call(callee: &str, alpha: i64, beta: i64) -> CallTerm {
        CallTerm {
            callee: callee.into(),
            alpha,
            beta,
        }
    }

    #[test]
    fn unit_cost_fact_solves_to_2n_plus_2() {
        let cfg = extract_blocks(&parse_program(FACT).unwrap());
        let harness = harness_program(&cfg);
        let system = to_hcir(&cfg, &harness, &BTreeMap::new()).unwrap();
        let eqs =
            setup_cost_equations(&system, &BlockCosts::unit(&harness), Direction::Upper).unwrap();
        // recurrence oracle first: n = 0..5 gives 2, 4, 6, 8, 10, 12
        for (n, expected) in [(0, 2), (1, 4), (2, 6), (3, 8), (4, 10), (5, 12)] {
            assert_eq!(eval_recurrence(&eqs, n), rat(expected), "n={n}");
        }
        let solved = solve(&eqs);
        let cf = solved.closed_form().expect("closed form");
        assert_eq!(cf, &ClosedForm::Poly(vec![rat(2), rat(2)]), "2n + 2");
        assert_eq!(cf.to_string(), "2*N + 2");
        for n in 0..=30 {
            assert_eq!(cf.eval(n), eval_recurrence(&eqs, n), "exactness at {n}");
        }
    }

    #[test]
    fn eval_recurrence_unit_fact_at_3_is_8() {
        let cfg = extract_blocks(&parse_program(FACT).unwrap());
        let harness = harness_program(&cfg);
        let system = to_hcir(&cfg, &harness, &BTreeMap::new()).unwrap();
        let eqs =
            setup_cost_equations(&system, &BlockCosts::unit(&harness), Direction::Upper).unwrap();
        assert_eq!(eval_recurrence(&eqs, 3), rat(8));
        assert_eq!(eval_recurrence(&eqs, 0), rat(2), "base clause constant");
    }

    #[test]
    fn fib_shaped_system_solves_in_fib_lucas_basis() {
        // f(n) = f(n-1) + f(n-2) + 2, f(0) = f(1) = 1
        let sys = guarded(
            2,
            CaseEq {
                constant: Energy(2000),
                calls: vec![call("f", 1, -1), call("f", 1, -2)],
            },
            CaseEq {
                constant: Energy(1000),
                calls: vec![],
            },
        );
        let solved = solve(&sys);
        let cf = solved.closed_form().expect("closed form");
        assert_eq!(
            cf,
            &ClosedForm::FibLucas {
                fib: BigRational::new(BigInt::from(3), BigInt::from(2)),
                lucas: BigRational::new(BigInt::from(3), BigInt::from(2)),
                konst: rat(-2),
            }
        );
        for n in 0..=25 {
            assert_eq!(cf.eval(n), eval_recurrence(&sys, n), "exactness at {n}");
        }
    }

    #[test]
    fn constant_system_solves_to_a_constant() {
        let sys = CostEquationSystem {
            direction: Direction::Upper,
            entry: "f".into(),
            metric: MetricSpec::default(),
            preds: [(
                "f".to_string(),
                PredEquations::Simple(CaseEq {
                    constant: Energy(5500),
                    calls: vec![],
                }),
            )]
            .into(),
        };
        let solved = solve(&sys);
        let cf = solved.closed_form().unwrap();
        assert_eq!(cf.degree(), Some(0));
        assert_eq!(cf.eval(17), BigRational::new(BigInt::from(11), BigInt::from(2)));
        assert_eq!(cf.to_string(), "5.5");
    }

    #[test]
    fn selection_sort_shape_solves_to_degree_two() {
        // outer(n) = outer(n-1) + inner(n) + 1 for n >= 1; inner(m) = inner(m-1) + 2
        let sys = CostEquationSystem {
            direction: Direction::Upper,
            entry: "outer".into(),
            metric: MetricSpec::default(),
            preds: [
                (
                    "outer".to_string(),
                    PredEquations::Guarded {
                        theta: 1,
                        rec: CaseEq {
                            constant: Energy(1000),
                            calls: vec![call("outer", 1, -1), call("inner", 1, 0)],
                        },
                        base: CaseEq {
                            constant: Energy(1000),
                            calls: vec![],
                        },
                    },
                ),
                (
                    "inner".to_string(),
                    PredEquations::Guarded {
                        theta: 1,
                        rec: CaseEq {
                            constant: Energy(2000),
                            calls: vec![call("inner", 1, -1)],
                        },
                        base: CaseEq {
                            constant: Energy(0),
                            calls: vec![],
                        },
                    },
                ),
            ]
            .into(),
        };
        let solved = solve(&sys);
        let cf = solved.closed_form().expect("closed form");
        assert_eq!(cf.degree(), Some(2), "quadratic: {cf}");
        for n in 0..=30 {
            assert_eq!(cf.eval(n), eval_recurrence(&sys, n), "exactness at {n}");
        }
    }

    /// P1 on a degree-d increment yields degree d+1 exactly.
    #[test]
    fn degree_preservation() {
        // h linear, g quadratic (sums h), f cubic (sums g)
        let mk_sum = |name: &str, inner: Option<&str>, c: u64| {
            (
                name.to_string(),
                PredEquations::Guarded {
                    theta: 1,
                    rec: CaseEq {
                        constant: Energy(c),
                        calls: match inner {
                            Some(i) => vec![call(name, 1, -1), call(i, 1, 0)],
                            None => vec![call(name, 1, -1)],
                        },
                    },
                    base: CaseEq {
                        constant: Energy(0),
                        calls: vec![],
                    },
                },
            )
        };
        let sys = CostEquationSystem {
            direction: Direction::Upper,
            entry: "f".into(),
            metric: MetricSpec::default(),
            preds: [
                mk_sum("f", Some("g"), 0),
                mk_sum("g", Some("h"), 0),
                mk_sum("h", None, 1000),
            ]
            .into(),
        };
        let solved = solve(&sys);
        let cf = solved.closed_form().expect("closed form");
        assert_eq!(cf.degree(), Some(3));
        for n in 0..=30 {
            assert_eq!(cf.eval(n), eval_recurrence(&sys, n));
        }
    }

    #[test]
    fn geometric_recurrence_solves_to_exponential() {
        // f(n) = 2*f(n-1) + 3, f(0) = 1 → f(n) = 4*2^n - 3
        let sys = guarded(
            1,
            CaseEq {
                constant: Energy(3000),
                calls: vec![call("f", 1, -1), call("f", 1, -1)],
            },
            CaseEq {
                constant: Energy(1000),
                calls: vec![],
            },
        );
        let solved = solve(&sys);
        let cf = solved.closed_form().expect("closed form");
        assert_eq!(
            cf,
            &ClosedForm::Geometric {
                coeff: rat(4),
                ratio: rat(2),
                konst: rat(-3),
            }
        );
        assert_eq!(cf.to_string(), "4*2^N - 3");
        for n in 0..=20 {
            assert_eq!(cf.eval(n), eval_recurrence(&sys, n));
        }
    }

    #[test]
    fn mutual_recursion_falls_back_to_a_table_with_warning() {
        let pair = |name: &str, other: &str| {
            (
                name.to_string(),
                PredEquations::Guarded {
                    theta: 1,
                    rec: CaseEq {
                        constant: Energy(1000),
                        calls: vec![call(other, 1, -1)],
                    },
                    base: CaseEq {
                        constant: Energy(0),
                        calls: vec![],
                    },
                },
            )
        };
        let sys = CostEquationSystem {
            direction: Direction::Upper,
            entry: "a".into(),
            metric: MetricSpec::default(),
            preds: [pair("a", "b"), pair("b", "a")].into(),
        };
        let solved = solve(&sys);
        assert!(matches!(solved.form, SolvedForm::Table(_)));
        assert!(!solved.warnings.is_empty());
        for n in 0..=10 {
            assert_eq!(solved.eval(n).unwrap(), eval_recurrence(&sys, n));
        }
    }

    #[test]
    fn stride_two_recursion_falls_back() {
        // f(n) = f(n-2) + 1 has no closed form in this grammar
        let sys = guarded(
            1,
            CaseEq {
                constant: Energy(1000),
                calls: vec![call("f", 1, -2)],
            },
            CaseEq {
                constant: Energy(0),
                calls: vec![],
            },
        );
        let solved = solve(&sys);
        assert!(matches!(solved.form, SolvedForm::Table(_)));
        assert_eq!(solved.eval(7).unwrap(), eval_recurrence(&sys, 7));
    }

    #[test]
    fn rendering_matches_reporting_style() {
        let cf = ClosedForm::Poly(vec![
            BigRational::new(BigInt::from(42), BigInt::from(10)),
            BigRational::new(BigInt::from(51), BigInt::from(10)),
        ]);
        assert_eq!(cf.to_string(), "5.1*N + 4.2");
        let cf = ClosedForm::FibLucas {
            fib: rat(6),
            lucas: BigRational::new(BigInt::from(52), BigInt::from(10)),
            konst: BigRational::new(BigInt::from(-66), BigInt::from(10)),
        };
        assert_eq!(cf.to_string(), "5.2*lucas(N) + 6*fib(N) - 6.6");
        assert_eq!(ClosedForm::Poly(vec![]).to_string(), "0");
    }

    #[test]
    fn fib_lucas_sequences_match_their_recurrences() {
        // lucas(1) = 1, lucas(2) = 3, lucas(n) = lucas(n-1) + lucas(n-2)
        let lucas: Vec<i64> = (0..10).map(|n| fib_lucas(n).1.try_into().unwrap()).collect();
        assert_eq!(lucas, [2, 1, 3, 4, 7, 11, 18, 29, 47, 76]);
        let fibs: Vec<i64> = (0..10).map(|n| fib_lucas(n).0.try_into().unwrap()).collect();
        assert_eq!(fibs, [0, 1, 1, 2, 3, 5, 8, 13, 21, 34]);
    }

    #[test]
    fn affine_composition_is_exact() {
        // p(n) = n^2 + 1 composed with (2n - 1)
        let p = ClosedForm::Poly(vec![rat(1), rat(0), rat(1)]);
        let q = p.compose_affine(2, -1).unwrap();
        for n in 0..10i64 {
            let expected = (2 * n - 1) * (2 * n - 1) + 1;
            assert_eq!(q.eval(n as u64), rat(expected));
        }
    }
}
