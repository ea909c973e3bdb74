//! Separable convex minimisation over a budget with per-variable floors:
//!
//! ```text
//! minimise  sum_i cost_i(x_i)
//! s.t.      sum_i x_i <= budget,  x_i >= floor_i
//! ```
//!
//! Every cost is strictly convex and decreasing, so the budget is always
//! exhausted and the optimum is characterised by a single multiplier `nu`:
//! each share either sits on its floor with `|cost_i'(floor_i)| <= nu`, or
//! satisfies `|cost_i'(x_i)| = nu`.

use crate::channel::pow2_m1;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_OUTER: usize = 200;
/// Stop the inner search once `-slope` matches `nu` to this relative accuracy.
const INNER_TOL: f64 = 1e-13;
pub const MAX_INNER: usize = 100;

/// One strictly convex, strictly decreasing cost term.
pub trait ConvexTerm {
    fn value(&self, x: f64) -> f64;
    /// First derivative (negative on the domain).
    fn slope(&self, x: f64) -> f64;
    /// Second derivative (positive on the domain).
    fn curvature(&self, x: f64) -> f64;
}

/// Shannon-inversion costs that cover every TDMA/FDMA objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShannonTerm {
    /// `scale * (2^(a/x) - 1)`: TDMA power of a device given airtime `x`.
    Inverse { scale: f64, a: f64 },
    /// `scale * x * (2^(a/x) - 1)`: TDMA energy given airtime `x`, or FDMA
    /// power given bandwidth `x`.
    Perspective { scale: f64, a: f64 },
}

/// `e^y (1 - y) - 1`, accurate for small `y`.
fn perspective_kernel(y: f64) -> f64 {
    if y.abs() < 0.5 {
        // -sum_{n>=2} (n-1) y^n / n!
        let mut term = y; // y^n / n! at n = 1
        let mut sum = 0.0;
        for n in 2..40 {
            term *= y / n as f64;
            let add = (n - 1) as f64 * term;
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        -sum
    } else {
        y.exp_m1() - y * y.exp()
    }
}

impl ConvexTerm for ShannonTerm {
    fn value(&self, x: f64) -> f64 {
        match *self {
            ShannonTerm::Inverse { scale, a } => scale * pow2_m1(a / x),
            ShannonTerm::Perspective { scale, a } => scale * x * pow2_m1(a / x),
        }
    }

    fn slope(&self, x: f64) -> f64 {
        match *self {
            ShannonTerm::Inverse { scale, a } => {
                let y = a * std::f64::consts::LN_2 / x;
                -scale * y.exp() * y / x
            }
            ShannonTerm::Perspective { scale, a } => {
                let y = a * std::f64::consts::LN_2 / x;
                scale * perspective_kernel(y)
            }
        }
    }

    fn curvature(&self, x: f64) -> f64 {
        let (scale, a) = match *self {
            ShannonTerm::Inverse { scale, a } | ShannonTerm::Perspective { scale, a } => (scale, a),
        };
        let y = a * std::f64::consts::LN_2 / x;
        match self {
            ShannonTerm::Inverse { .. } => scale * y.exp() * y * (y + 2.0) / (x * x),
            ShannonTerm::Perspective { .. } => scale * y * y * y.exp() / x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparableProblem<T> {
    pub terms: Vec<T>,
    pub floors: Vec<f64>,
    pub budget: f64,
}

impl<T: ConvexTerm> SeparableProblem<T> {
    pub fn new(terms: Vec<T>, floors: Vec<f64>, budget: f64) -> Result<Self> {
        if terms.len() != floors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} cost terms but {} floors",
                terms.len(),
                floors.len()
            )));
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidArgument(format!("budget must be > 0, got {budget}")));
        }
        if let Some(i) = floors.iter().position(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "floor {i} must be finite and > 0, got {}",
                floors[i]
            )));
        }
        Ok(Self { terms, floors, budget })
    }

    pub fn k(&self) -> usize {
        self.terms.len()
    }

    pub fn cost(&self, shares: &[f64]) -> f64 {
        self.terms.iter().zip(shares).map(|(t, &x)| t.value(x)).sum()
    }

    fn floor_sum(&self) -> f64 {
        self.floors.iter().sum()
    }

    fn check_feasible(&self) -> Result<()> {
        let total = self.floor_sum();
        if total > self.budget * (1.0 + 1e-12) {
            return Err(Error::Infeasible(format!(
                "sum of floors {total:.9e} exceeds budget {:.9e}",
                self.budget
            )));
        }
        Ok(())
    }

    fn all_floored(&self) -> bool {
        self.floor_sum() >= self.budget * (1.0 - 1e-12)
    }
}

/// Shares plus the budget multiplier that certifies them.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub shares: Vec<f64>,
    pub nu: f64,
    pub outer_iterations: usize,
}

/// Largest relative KKT violation of `shares` under multiplier `nu`:
/// stationarity for interior shares, dual feasibility for floored ones, and
/// budget exactness.
pub fn kkt_residual<T: ConvexTerm>(p: &SeparableProblem<T>, shares: &[f64], nu: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for ((term, &x), &floor) in p.terms.iter().zip(shares).zip(&p.floors) {
        if x < floor * (1.0 - 1e-12) {
            return f64::INFINITY;
        }
        let pull = -term.slope(x);
        let r = if x <= floor * (1.0 + 1e-12) {
            ((pull - nu) / nu).max(0.0)
        } else {
            ((pull - nu) / nu).abs()
        };
        worst = worst.max(r);
    }
    if nu > 0.0 {
        let total: f64 = shares.iter().sum();
        worst = worst.max((total - p.budget).abs() / p.budget);
    }
    worst
}

/// Share of one term at multiplier `nu`, searched on `[floor, cap]`.
///
/// Newton runs on `ln(-slope)` against `ln x`, where the Shannon terms are
/// close to linear; bisection on `ln x` takes over when a step leaves the
/// bracket.
fn invert_slope<T: ConvexTerm>(term: &T, nu: f64, floor: f64, cap: f64, start: f64) -> (f64, usize) {
    if -term.slope(floor) <= nu {
        return (floor, 0);
    }
    if -term.slope(cap) >= nu {
        return (cap, 0);
    }
    let target = nu.ln();
    let (mut lo, mut hi) = (floor.ln(), cap.ln());
    let mut u = start.clamp(floor, cap).ln();
    for it in 0..MAX_INNER {
        let x = u.exp();
        let slope = term.slope(x);
        let h = (-slope).ln() - target;
        if h.abs() <= INNER_TOL {
            return (x, it);
        }
        if h > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        // d ln(-slope) / d ln x = x curvature / slope
        let mut next = u - h * slope / (x * term.curvature(x));
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * u.abs().max(1.0) || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            return (next.exp().clamp(floor, cap), it);
        }
        u = next;
    }
    (u.exp().clamp(floor, cap), MAX_INNER)
}

/// Solve by searching the budget multiplier.
///
/// The outer loop runs safeguarded Newton on `ln nu` against the
/// monotone map `nu -> sum_i x_i(nu)`; the inner loop inverts each slope by
/// safeguarded Newton. Both fall back to bisection when a step leaves its
/// bracket.
pub fn solve_dual_bisection<T: ConvexTerm>(p: &SeparableProblem<T>, tol: f64) -> Result<DualSolution> {
    p.check_feasible()?;
    let k = p.k();
    if k == 0 {
        return Ok(DualSolution {
            shares: vec![],
            nu: 0.0,
            outer_iterations: 0,
        });
    }
    if p.all_floored() {
        let nu = p
            .terms
            .iter()
            .zip(&p.floors)
            .map(|(t, &f)| -t.slope(f))
            .fold(f64::INFINITY, f64::min);
        return Ok(DualSolution {
            shares: p.floors.clone(),
            nu,
            outer_iterations: 0,
        });
    }

    let cap = p.budget;
    // At nu_hi every share sits on its floor, at nu_lo every share hits the cap.
    let mut t_hi = p
        .terms
        .iter()
        .zip(&p.floors)
        .map(|(t, &f)| -t.slope(f))
        .fold(0.0f64, f64::max)
        .ln();
    let mut t_lo = p.terms.iter().map(|t| -t.slope(cap)).fold(f64::INFINITY, f64::min).ln();
    if !(t_lo.is_finite() && t_hi.is_finite()) || t_lo >= t_hi {
        // Degenerate bracket: widen around whatever is finite.
        let centre = if t_hi.is_finite() { t_hi } else { 0.0 };
        t_lo = t_lo.min(centre - 50.0);
        t_hi = t_hi.max(t_lo + 100.0);
        if !t_hi.is_finite() {
            t_hi = t_lo + 100.0;
        }
    }

    let mut shares = p.floors.clone();
    // start from the multiplier that would roughly sustain an equal split
    let even = p.budget / k as f64;
    let mut t = p
        .terms
        .iter()
        .zip(&p.floors)
        .map(|(term, &f)| (-term.slope(even.max(f))).ln())
        .sum::<f64>()
        / k as f64;
    if !(t > t_lo && t < t_hi) {
        t = 0.5 * (t_lo + t_hi);
    }
    let budget_tol = (0.01 * tol).max(1e-15) * p.budget;
    for outer in 1..=MAX_OUTER {
        let nu = t.exp();
        let mut total = 0.0;
        let mut d_total = 0.0;
        for i in 0..k {
            let (x, _) = invert_slope(&p.terms[i], nu, p.floors[i], cap, shares[i]);
            shares[i] = x;
            total += x;
            if x > p.floors[i] && x < cap {
                d_total -= nu / p.terms[i].curvature(x);
            }
        }
        let gap = total - p.budget;
        if gap.abs() <= budget_tol {
            return Ok(DualSolution {
                shares,
                nu,
                outer_iterations: outer,
            });
        }
        if gap > 0.0 {
            t_lo = t;
        } else {
            t_hi = t;
        }
        if t_hi - t_lo <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            let residual = kkt_residual(p, &shares, nu);
            if residual <= tol {
                return Ok(DualSolution {
                    shares,
                    nu,
                    outer_iterations: outer,
                });
            }
            return Err(Error::NonConvergence(outer));
        }
        let mut next = if d_total < 0.0 { t - gap / d_total } else { f64::NAN };
        if !(next > t_lo && next < t_hi) {
            next = 0.5 * (t_lo + t_hi);
        }
        t = next;
    }
    Err(Error::NonConvergence(MAX_OUTER))
}

/// Exhaustive simplex grid search followed by pairwise exchange refinement.
///
/// Uses cost values only, so it shares nothing with the multiplier search
/// beyond the problem definition. Limited to four variables.
pub fn brute_force_oracle<T: ConvexTerm>(p: &SeparableProblem<T>, grid: usize) -> Result<Vec<f64>> {
    let k = p.k();
    if k > 4 {
        return Err(Error::Unsupported(format!("brute force oracle handles k <= 4, got {k}")));
    }
    p.check_feasible()?;
    if k == 0 {
        return Ok(vec![]);
    }
    if p.all_floored() {
        return Ok(p.floors.clone());
    }
    let grid = grid.max(1);
    let slack = p.budget - p.floor_sum();

    let mut best = p.floors.clone();
    best[k - 1] += slack;
    let mut best_cost = p.cost(&best);
    let mut counts = vec![0usize; k];
    let mut candidate = vec![0.0; k];
    visit_compositions(grid, &mut counts, 0, &mut |counts| {
        for i in 0..k {
            candidate[i] = p.floors[i] + slack * counts[i] as f64 / grid as f64;
        }
        let c = p.cost(&candidate);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&candidate);
        }
    });

    for _round in 0..200 {
        let before = best_cost;
        for i in 0..k {
            for j in (i + 1)..k {
                let lo = p.floors[i] - best[i];
                let hi = best[j] - p.floors[j];
                let (xi, xj) = (best[i], best[j]);
                let pair = |t: f64| p.terms[i].value(xi + t) + p.terms[j].value(xj - t);
                let t = golden_section(pair, lo, hi);
                let mut trial = best.clone();
                trial[i] = xi + t;
                trial[j] = xj - t;
                let c = p.cost(&trial);
                if c < best_cost {
                    best_cost = c;
                    best = trial;
                }
            }
        }
        if before - best_cost <= 1e-15 * best_cost.abs() {
            break;
        }
    }
    Ok(best)
}

fn visit_compositions(remaining: usize, counts: &mut [usize], pos: usize, f: &mut impl FnMut(&[usize])) {
    if pos == counts.len() - 1 {
        counts[pos] = remaining;
        f(counts);
        return;
    }
    for n in 0..=remaining {
        counts[pos] = n;
        visit_compositions(remaining - n, counts, pos + 1, f);
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // Endpoints matter when the optimum sits on a floor.
    [a, b, mid]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap_or(mid)
}
