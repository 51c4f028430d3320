//! Semilinear sets, α-density, linear-function classification and
//! finite-window checks for eventual affineness / constancy.

use std::collections::HashSet;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cannot parse coefficient `{0}`")]
    Parse(String),
}

/// { base + n1·p1 + … + nl·pl : ni ∈ ℕ }
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicCoset {
    pub base: Vec<u64>,
    pub periods: Vec<Vec<u64>>,
}

impl PeriodicCoset {
    pub fn new(base: Vec<u64>, periods: Vec<Vec<u64>>) -> Result<Self, LinearError> {
        for p in &periods {
            if p.len() != base.len() {
                return Err(LinearError::DimensionMismatch(base.len(), p.len()));
            }
        }
        Ok(PeriodicCoset { base, periods })
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }
}

fn dfs(periods: &[Vec<u64>], i: usize, rem: &mut Vec<u64>, dead: &mut HashSet<(usize, Vec<u64>)>) -> bool {
    if rem.iter().all(|x| *x == 0) {
        return true;
    }
    if i == periods.len() || dead.contains(&(i, rem.clone())) {
        return false;
    }
    let p = &periods[i];
    let bound = p
        .iter()
        .zip(rem.iter())
        .filter(|(pj, _)| **pj > 0)
        .map(|(pj, rj)| rj / pj)
        .min()
        .expect("zero periods are filtered out");
    for k in (0..=bound).rev() {
        let mut next: Vec<u64> = rem.iter().zip(p).map(|(r, pj)| r - k * pj).collect();
        if dfs(periods, i + 1, &mut next, dead) {
            return true;
        }
    }
    dead.insert((i, rem.clone()));
    false
}

/// Exact membership by depth-first search over the period multipliers.
pub fn coset_member(c: &PeriodicCoset, v: &[u64]) -> Result<bool, LinearError> {
    if v.len() != c.dim() {
        return Err(LinearError::DimensionMismatch(c.dim(), v.len()));
    }
    if v.iter().zip(&c.base).any(|(a, b)| a < b) {
        return Ok(false);
    }
    let mut rem: Vec<u64> = v.iter().zip(&c.base).map(|(a, b)| a - b).collect();
    let mut periods: Vec<Vec<u64>> = c.periods.iter().filter(|p| p.iter().any(|x| *x > 0)).cloned().collect();
    periods.sort_by_key(|p| std::cmp::Reverse(p.iter().sum::<u64>()));
    Ok(dfs(&periods, 0, &mut rem, &mut HashSet::new()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemilinearSet {
    pub cosets: Vec<PeriodicCoset>,
}

pub fn semilinear_member(s: &SemilinearSet, v: &[u64]) -> Result<bool, LinearError> {
    for c in &s.cosets {
        if coset_member(c, v)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Every positive coordinate is at least α·‖v‖.
pub fn is_alpha_dense(v: &[u64], alpha: Ratio<i64>) -> Result<bool, LinearError> {
    if alpha <= Ratio::zero() || alpha > Ratio::from_integer(1) {
        return Err(LinearError::Domain(format!("α must lie in (0, 1], got {alpha}")));
    }
    let n: u128 = v.iter().map(|x| *x as u128).sum();
    let (num, den) = (*alpha.numer() as u128, *alpha.denom() as u128);
    Ok(v.iter().all(|x| *x == 0 || *x as u128 * den >= num * n))
}

/// f(m) = Σ ⌊ci·m(i)⌋ with floors taken toward zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub coeffs: Vec<Ratio<i64>>,
}

impl LinearSpec {
    pub fn new(coeffs: Vec<Ratio<i64>>) -> Self {
        LinearSpec { coeffs }
    }

    pub fn from_pairs(pairs: &[(i64, i64)]) -> Result<Self, LinearError> {
        let coeffs = pairs
            .iter()
            .map(|(p, r)| {
                if *r < 1 {
                    Err(LinearError::Domain(format!("denominator must be ≥ 1, got {r}")))
                } else {
                    Ok(Ratio::new(*p, *r))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(LinearSpec { coeffs })
    }

    /// Parses `1/2,3,2/3`.
    pub fn parse(s: &str) -> Result<Self, LinearError> {
        let mut pairs = Vec::new();
        for tok in s.split(',') {
            let tok = tok.trim();
            let bad = || LinearError::Parse(tok.to_string());
            let (p, r) = match tok.split_once('/') {
                Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
                None => (tok.parse().map_err(|_| bad())?, 1),
            };
            pairs.push((p, r));
        }
        Self::from_pairs(&pairs)
    }

    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, m: &[u64]) -> Result<i64, LinearError> {
        if m.len() != self.k() {
            return Err(LinearError::DimensionMismatch(self.k(), m.len()));
        }
        let mut total: i128 = 0;
        for (c, x) in self.coeffs.iter().zip(m) {
            // i128 division truncates toward zero
            total += *c.numer() as i128 * *x as i128 / *c.denom() as i128;
        }
        i64::try_from(total).map_err(|_| LinearError::Domain("value out of range".into()))
    }
}

impl std::fmt::Display for LinearSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.coeffs.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearClass {
    NLinear,
    QNonnegLinear,
    HasNegative,
    /// Reserved; nonnegative non-integer specs are reported as `QNonnegLinear`.
    NonIntegerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: LinearClass,
    pub integer: bool,
    pub nonnegative: bool,
}

pub fn classify_linear(spec: &LinearSpec) -> Classification {
    let integer = spec.coeffs.iter().all(|c| c.is_integer());
    let nonnegative = spec.coeffs.iter().all(|c| !c.is_negative());
    let class = if !nonnegative {
        LinearClass::HasNegative
    } else if integer {
        LinearClass::NLinear
    } else {
        LinearClass::QNonnegLinear
    };
    Classification { class, integer, nonnegative }
}

/// Points of [lo, lo+w]^k, last coordinate varying fastest.
fn window(k: usize, lo: u64, w: u64) -> impl Iterator<Item = Vec<u64>> {
    let side = w + 1;
    let total = side.pow(k as u32);
    (0..total).map(move |mut idx| {
        let mut m = vec![lo; k];
        for j in (0..k).rev() {
            m[j] += idx % side;
            idx /= side;
        }
        m
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffineOutcome {
    /// f(m) = b + Σ ci·m(i) on the whole window; `natural` iff every ci ≥ 0.
    AffineFit { b: i64, c: Vec<i64>, natural: bool },
    /// f(m+v)−f(m) ≠ f(m+2v)−f(m+v).
    Counterexample { m: Vec<u64>, v: Vec<u64> },
    /// Second differences vanish but the fitted affine map misses this point.
    FitMismatch { m: Vec<u64> },
}

/// Window evidence only: the outcome says nothing beyond [n0, n0+w]^k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineWindow {
    pub n0: u64,
    pub w: u64,
    pub outcome: AffineOutcome,
}

pub fn check_eventually_affine_window<E>(
    k: usize,
    n0: u64,
    w: u64,
    mut f: impl FnMut(&[u64]) -> Result<i64, E>,
) -> Result<Result<AffineWindow, LinearError>, E> {
    if w < 1 || k == 0 || k > 4 {
        return Ok(Err(LinearError::Domain(format!("need w ≥ 1 and 1 ≤ k ≤ 4, got w={w}, k={k}"))));
    }
    let wrap = |outcome| Ok(Ok(AffineWindow { n0, w, outcome }));
    for m in window(k, n0, w) {
        for bits in 1u32..(1 << k) {
            let v: Vec<u64> = (0..k).map(|j| ((bits >> (k - 1 - j)) & 1) as u64).collect();
            let m1: Vec<u64> = m.iter().zip(&v).map(|(a, b)| a + b).collect();
            let m2: Vec<u64> = m.iter().zip(&v).map(|(a, b)| a + 2 * b).collect();
            let (f0, f1, f2) = (f(&m)?, f(&m1)?, f(&m2)?);
            if f1 - f0 != f2 - f1 {
                return wrap(AffineOutcome::Counterexample { m, v });
            }
        }
    }
    let corner = vec![n0; k];
    let f0 = f(&corner)?;
    let mut c = Vec::with_capacity(k);
    for i in 0..k {
        let mut u = corner.clone();
        u[i] += 1;
        c.push(f(&u)? - f0);
    }
    let b = f0 - c.iter().map(|ci| ci * n0 as i64).sum::<i64>();
    for m in window(k, n0, w) {
        let fit = b + c.iter().zip(&m).map(|(ci, x)| ci * *x as i64).sum::<i64>();
        if fit != f(&m)? {
            return wrap(AffineOutcome::FitMismatch { m });
        }
    }
    let natural = c.iter().all(|ci| *ci >= 0);
    wrap(AffineOutcome::AffineFit { b, c, natural })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstantOutcome {
    Constant(bool),
    CounterexamplePair(Vec<u64>, Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantWindow {
    pub m0: u64,
    pub w: u64,
    pub outcome: ConstantOutcome,
}

/// Evaluates φ on [m0, m0+w]^k and reports the first point that disagrees
/// with the window's first point.
pub fn check_eventually_constant_window(
    k: usize,
    m0: u64,
    w: u64,
    mut phi: impl FnMut(&[u64]) -> bool,
) -> Result<ConstantWindow, LinearError> {
    if w < 1 || k == 0 {
        return Err(LinearError::Domain(format!("need w ≥ 1 and k ≥ 1, got w={w}, k={k}")));
    }
    let mut pts = window(k, m0, w);
    let first = pts.next().expect("window is nonempty");
    let v0 = phi(&first);
    for m in pts {
        if phi(&m) != v0 {
            return Ok(ConstantWindow { m0, w, outcome: ConstantOutcome::CounterexamplePair(first, m) });
        }
    }
    Ok(ConstantWindow { m0, w, outcome: ConstantOutcome::Constant(v0) })
}

/// gcd-reduced form check used by callers constructing specs by hand.
pub fn in_lowest_terms(c: &Ratio<i64>) -> bool {
    c.numer().gcd(c.denom()) == 1 && *c.denom() >= 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok<T>(r: Result<T, Infallible>) -> T {
        match r {
            Ok(v) => v,
            Err(e) => match e {},
        }
    }

    #[test]
    fn coset_examples() {
        let c = PeriodicCoset::new(vec![1, 0], vec![vec![2, 1]]).unwrap();
        assert!(coset_member(&c, &[5, 2]).unwrap());
        assert!(!coset_member(&c, &[2, 0]).unwrap());
        assert!(coset_member(&c, &[1, 0]).unwrap());
        assert!(matches!(coset_member(&c, &[1]), Err(LinearError::DimensionMismatch(2, 1))));
        let single = PeriodicCoset::new(vec![3], vec![]).unwrap();
        assert!(coset_member(&single, &[3]).unwrap());
        assert!(!coset_member(&single, &[4]).unwrap());
    }

    #[test]
    fn semilinear_examples() {
        let evens = PeriodicCoset::new(vec![0], vec![vec![2]]).unwrap();
        let odds = PeriodicCoset::new(vec![1], vec![vec![2]]).unwrap();
        let all = SemilinearSet { cosets: vec![evens, odds] };
        for v in 0..=10 {
            assert!(semilinear_member(&all, &[v]).unwrap());
        }
        assert!(!semilinear_member(&SemilinearSet::default(), &[0]).unwrap());

        let half = SemilinearSet {
            cosets: vec![
                PeriodicCoset::new(vec![0, 0], vec![vec![2, 1]]).unwrap(),
                PeriodicCoset::new(vec![1, 0], vec![vec![2, 1]]).unwrap(),
            ],
        };
        assert!(semilinear_member(&half, &[5, 2]).unwrap());
        assert!(!semilinear_member(&half, &[5, 3]).unwrap());
        let json = serde_json::to_string(&half).unwrap();
        assert!(json.starts_with("[{\"base\""));
    }

    #[test]
    fn density() {
        let a = Ratio::new(1, 10);
        assert!(is_alpha_dense(&[10, 90], a).unwrap());
        assert!(!is_alpha_dense(&[5, 95], a).unwrap());
        assert!(is_alpha_dense(&[0, 100], Ratio::new(1, 2)).unwrap());
        assert!(is_alpha_dense(&[1], Ratio::new(0, 1)).is_err());
        assert!(is_alpha_dense(&[1], Ratio::new(3, 2)).is_err());
    }

    #[test]
    fn classification() {
        let c = |s: &str| classify_linear(&LinearSpec::parse(s).unwrap()).class;
        assert_eq!(c("2"), LinearClass::NLinear);
        assert_eq!(c("1/2"), LinearClass::QNonnegLinear);
        assert_eq!(c("1,-1"), LinearClass::HasNegative);
        assert_eq!(c("4/2"), LinearClass::NLinear);
        assert!(LinearSpec::parse("1/0").is_err());
        assert!(LinearSpec::parse("x").is_err());
    }

    #[test]
    fn floor_toward_zero() {
        let s = LinearSpec::parse("-1/2,2/3").unwrap();
        assert_eq!(s.eval(&[3, 0]).unwrap(), -1);
        assert_eq!(s.eval(&[0, 5]).unwrap(), 3);
        for c in &s.coeffs {
            assert!(in_lowest_terms(c));
        }
    }

    #[test]
    fn affine_examples() {
        let r = ok(check_eventually_affine_window(2, 1, 4, |m| Ok((m[0] * m[1]) as i64))).unwrap();
        assert!(matches!(r.outcome, AffineOutcome::Counterexample { ref v, .. } if v == &vec![1, 1]));
        let r = ok(check_eventually_affine_window(1, 1, 4, |m| Ok(2 * m[0] as i64))).unwrap();
        assert_eq!(r.outcome, AffineOutcome::AffineFit { b: 0, c: vec![2], natural: true });
        let r = ok(check_eventually_affine_window(1, 1, 4, |m| Ok(m[0] as i64 - 1))).unwrap();
        assert_eq!(r.outcome, AffineOutcome::AffineFit { b: -1, c: vec![1], natural: true });
        let r = ok(check_eventually_affine_window(1, 0, 4, |m| Ok(3 - m[0] as i64))).unwrap();
        assert_eq!(r.outcome, AffineOutcome::AffineFit { b: 3, c: vec![-1], natural: false });
        assert!(ok(check_eventually_affine_window(5, 1, 1, |_| Ok(0))).is_err());
    }

    #[test]
    fn oracle_errors_propagate() {
        let r = check_eventually_affine_window(1, 1, 2, |_| Err::<i64, _>("boom"));
        assert_eq!(r.unwrap_err(), "boom");
    }

    #[test]
    fn constant_examples() {
        let r = check_eventually_constant_window(2, 1, 3, |m| m[0] >= m[1]).unwrap();
        assert_eq!(r.outcome, ConstantOutcome::CounterexamplePair(vec![1, 1], vec![1, 2]));
        let r = check_eventually_constant_window(2, 1, 7, |m| m[0] >= 1).unwrap();
        assert_eq!(r.outcome, ConstantOutcome::Constant(true));
        let r = check_eventually_constant_window(1, 1, 1, |m| m[0] % 2 == 1).unwrap();
        assert_eq!(r.outcome, ConstantOutcome::CounterexamplePair(vec![1], vec![2]));
    }
}
