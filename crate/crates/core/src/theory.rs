//! Exact checks of the information-distance bounds on finite-support models.
//!
//! Outcomes are abstract indices `0..len` standing for `(phi(x), psi(G^y))`
//! values; expectations are plain sums so every quantity is exact up to
//! rounding.

use rand::Rng as _;
use rand_distr::Exp1;
use serde::Serialize;

use crate::rng::rng_indexed;
use crate::{Error, Result};

const SUM_TOL: f64 = 1e-12;
/// Interior clamp applied to the optimal table where it hits 0 or 1.
pub const TABLE_CLAMP: f64 = 1e-12;
/// Tolerance for the bound checks.
pub const BOUND_TOL: f64 = 1e-9;

pub const DEFAULT_EPS_GRID: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument(format!("{name}: empty distribution")));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!("{name}: bad mass {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{name}: sums to {total}")));
    }
    Ok(())
}

fn check_aligned(p: &[f64], q: &[f64]) -> Result<()> {
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Graph-conditioned distributions and corruption rates.
#[derive(Debug, Clone, Serialize)]
pub struct Corruption {
    /// P(G^x <-> G^y | x <-> y)
    pub m_match: f64,
    /// P(G^x <-> G^y | x <!> y)
    pub m_unmatch: f64,
    pub match_graph_match: Vec<f64>,
    pub match_graph_unmatch: Vec<f64>,
    pub unmatch_graph_match: Vec<f64>,
    pub unmatch_graph_unmatch: Vec<f64>,
}

impl Corruption {
    fn validate(&self) -> Result<()> {
        check_rate("m_match", self.m_match)?;
        check_rate("m_unmatch", self.m_unmatch)?;
        let n = self.match_graph_match.len();
        for (name, p) in [
            ("match_graph_match", &self.match_graph_match),
            ("match_graph_unmatch", &self.match_graph_unmatch),
            ("unmatch_graph_match", &self.unmatch_graph_match),
            ("unmatch_graph_unmatch", &self.unmatch_graph_unmatch),
        ] {
            check_distribution(name, p)?;
            if p.len() != n {
                return Err(Error::InvalidArgument(format!("{name}: support size {}", p.len())));
            }
        }
        Ok(())
    }

    fn mixtures(&self) -> (Vec<f64>, Vec<f64>) {
        let mix = |m: f64, a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| m * x + (1.0 - m) * y).collect()
        };
        (
            mix(self.m_match, &self.match_graph_match, &self.match_graph_unmatch),
            mix(self.m_unmatch, &self.unmatch_graph_match, &self.unmatch_graph_unmatch),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteJointModel {
    /// p(a | x <-> y)
    pub p_match: Vec<f64>,
    /// p(a | x <!> y)
    pub p_unmatch: Vec<f64>,
    /// P(x <-> y)
    pub prior: f64,
    pub corruption: Option<Corruption>,
}

impl DiscreteJointModel {
    pub fn new(p_match: Vec<f64>, p_unmatch: Vec<f64>, prior: f64) -> Result<Self> {
        check_aligned(&p_match, &p_unmatch)?;
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::InvalidArgument(format!("prior {prior} not in (0, 1)")));
        }
        Ok(DiscreteJointModel {
            p_match,
            p_unmatch,
            prior,
            corruption: None,
        })
    }

    /// Builds the conditionals as corruption mixtures of the four
    /// graph-conditioned distributions.
    pub fn with_corruption(corruption: Corruption, prior: f64) -> Result<Self> {
        corruption.validate()?;
        let (p_match, p_unmatch) = corruption.mixtures();
        let mut model = DiscreteJointModel::new(p_match, p_unmatch, prior)?;
        model.corruption = Some(corruption);
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.p_match.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_match.is_empty()
    }

    /// p(a) = P p_m(a) + (1 - P) p_u(a)
    pub fn marginal(&self) -> Vec<f64> {
        let p = self.prior;
        self.p_match
            .iter()
            .zip(&self.p_unmatch)
            .map(|(m, u)| p * m + (1.0 - p) * u)
            .collect()
    }
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("binary entropy of {p}")));
    }
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    Ok(h(p) + h(1.0 - p))
}

/// KL(p || q). Returns `f64::INFINITY` when p puts mass where q has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_aligned(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += a * (a / b).ln();
    }
    Ok(total.max(0.0))
}

fn check_table(model: &DiscreteJointModel, d: &[f64]) -> Result<()> {
    if d.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "table has {} entries, support has {}",
            d.len(),
            model.len()
        )));
    }
    if let Some(v) = d.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidArgument(format!("table value {v} not in (0, 1)")));
    }
    Ok(())
}

/// L_ID(d) = P sum p_m ln d + (1 - P) sum p_u ln(1 - d).
pub fn l_id_exact(model: &DiscreteJointModel, d: &[f64]) -> Result<f64> {
    check_table(model, d)?;
    let p = model.prior;
    let mut total = 0.0;
    for ((&m, &u), &v) in model.p_match.iter().zip(&model.p_unmatch).zip(d) {
        if m > 0.0 {
            total += p * m * v.ln();
        }
        if u > 0.0 {
            total += (1.0 - p) * u * (-v).ln_1p();
        }
    }
    Ok(total)
}

/// L_ID(d + eps) - L_ID(d), summed term by term with `ln_1p`.
/// `None` when some shifted entry with positive weight leaves (0, 1).
fn l_id_shift(model: &DiscreteJointModel, d: &[f64], eps: f64) -> Option<f64> {
    let p = model.prior;
    let mut total = 0.0;
    for ((&m, &u), &v) in model.p_match.iter().zip(&model.p_unmatch).zip(d) {
        if m == 0.0 && u == 0.0 {
            continue;
        }
        let s = v + eps;
        if !(s > 0.0 && s < 1.0) {
            return None;
        }
        if m > 0.0 {
            total += p * m * (eps / v).ln_1p();
        }
        if u > 0.0 {
            total += (1.0 - p) * u * (-eps / (1.0 - v)).ln_1p();
        }
    }
    Some(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalDiscriminator {
    pub table: Vec<f64>,
    /// Outcomes with zero marginal mass; their entries are 0.5 placeholders.
    pub excluded: Vec<usize>,
}

/// d*(a) = P p_m(a) / p(a), clamped to the open interval.
pub fn optimal_discriminator(model: &DiscreteJointModel) -> OptimalDiscriminator {
    let mut excluded = Vec::new();
    let table = model
        .marginal()
        .iter()
        .zip(&model.p_match)
        .enumerate()
        .map(|(i, (&pa, &m))| {
            if pa > 0.0 {
                (model.prior * m / pa).clamp(TABLE_CLAMP, 1.0 - TABLE_CLAMP)
            } else {
                excluded.push(i);
                0.5
            }
        })
        .collect();
    if !excluded.is_empty() {
        log::warn!("optimal discriminator: {} outcome(s) with zero mass excluded", excluded.len());
    }
    OptimalDiscriminator { table, excluded }
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop1Report {
    /// KL(p_m || p_u); `None` when infinite.
    pub kl: Option<f64>,
    pub kl_infinite: bool,
    pub l_id_optimal: f64,
    pub entropy: f64,
    pub rhs: f64,
    /// lhs - rhs; `None` when the KL is infinite.
    pub margin: Option<f64>,
    /// sum_a p(a) ln(p_u(a) / p(a)), the term dropped by Jensen's inequality.
    pub jensen_slack: f64,
    pub pass: bool,
}

pub fn check_prop1(model: &DiscreteJointModel) -> Result<Prop1Report> {
    let kl = kl_divergence(&model.p_match, &model.p_unmatch)?;
    let d = optimal_discriminator(model);
    let l_id_optimal = l_id_exact(model, &d.table)?;
    let entropy = binary_entropy(model.prior)?;
    let rhs = (l_id_optimal + entropy) / model.prior;
    let mut jensen_slack = 0.0;
    for (&pa, &u) in model.marginal().iter().zip(&model.p_unmatch) {
        if pa > 0.0 {
            jensen_slack += if u > 0.0 { pa * (u / pa).ln() } else { f64::NEG_INFINITY };
        }
    }
    let infinite = kl.is_infinite();
    let margin = (!infinite).then_some(kl - rhs);
    Ok(Prop1Report {
        kl: (!infinite).then_some(kl),
        kl_infinite: infinite,
        l_id_optimal,
        entropy,
        rhs,
        margin,
        jensen_slack,
        pass: margin.is_none_or(|m| m >= -BOUND_TOL),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub slope_generic: f64,
    pub slope_optimal: f64,
    /// (eps, L(d + eps) - L(d)) at the generic table.
    pub generic: Vec<(f64, f64)>,
    /// (eps, L(d* + eps) - L(d*)).
    pub optimal: Vec<(f64, f64)>,
    /// Grid points dropped because a shifted entry left (0, 1).
    pub skipped: Vec<f64>,
    /// Every shift away from d* lowered L_ID.
    pub optimal_is_maximum: bool,
}

/// A constant table with a clear first-order response: 0.5 unless the prior
/// is near 0.5, where the linear term of a constant shift cancels.
pub fn generic_table(model: &DiscreteJointModel) -> Vec<f64> {
    let c = if (model.prior - 0.5).abs() >= 0.1 { 0.5 } else { 0.25 };
    vec![c; model.len()]
}

/// Shrinks `grid` by the distance of d* to the ends of (0, 1), so the
/// cubic term stays small next to the quadratic one for lopsided models.
pub fn scaled_grid(model: &DiscreteJointModel, grid: &[f64]) -> Vec<f64> {
    let d = optimal_discriminator(model);
    let dist = model
        .marginal()
        .iter()
        .zip(&d.table)
        .filter(|(pa, _)| **pa > 0.0)
        .map(|(_, v)| v.min(1.0 - v))
        .fold(1.0f64, f64::min);
    grid.iter().map(|e| e * dist.min(1.0)).collect()
}

/// Least-squares slope of ln|y| against ln x.
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| *y != 0.0)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn perturbation_scaling(
    model: &DiscreteJointModel,
    generic: &[f64],
    eps_grid: &[f64],
) -> Result<PerturbationReport> {
    check_table(model, generic)?;
    if let Some(e) = eps_grid.iter().find(|e| !(e.is_finite() && **e != 0.0)) {
        return Err(Error::InvalidArgument(format!("bad perturbation {e}")));
    }
    let d_opt = optimal_discriminator(model).table;
    let mut report = PerturbationReport {
        slope_generic: f64::NAN,
        slope_optimal: f64::NAN,
        generic: Vec::new(),
        optimal: Vec::new(),
        skipped: Vec::new(),
        optimal_is_maximum: true,
    };
    for &eps in eps_grid {
        match (l_id_shift(model, generic, eps), l_id_shift(model, &d_opt, eps)) {
            (Some(g), Some(o)) => {
                report.generic.push((eps.abs(), g));
                report.optimal.push((eps.abs(), o));
                report.optimal_is_maximum &= o < 0.0;
            }
            _ => report.skipped.push(eps),
        }
    }
    if !report.skipped.is_empty() {
        log::warn!("perturbation grid: skipped {:?}", report.skipped);
    }
    report.slope_generic = log_log_slope(&report.generic);
    report.slope_optimal = log_log_slope(&report.optimal);
    Ok(report)
}

/// Half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_aligned(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// sum over B = {a : p(a) >= q(a)} of p - q.
pub fn tv_distance_over_b(p: &[f64], q: &[f64]) -> Result<f64> {
    check_aligned(p, q)?;
    Ok(p.iter().zip(q).filter(|(a, b)| a >= b).map(|(a, b)| a - b).sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop3Report {
    pub tv: f64,
    pub tv_over_b: f64,
    pub rhs: f64,
    pub margin: f64,
    pub b_set: Vec<usize>,
    /// TV between the clean distributions, i.e. with m_match = 1, m_unmatch = 0.
    pub ideal_tv: f64,
    /// The bound in that ideal case.
    pub ideal_rhs: f64,
    pub pass: bool,
}

pub fn check_prop3(model: &DiscreteJointModel) -> Result<Prop3Report> {
    let c = model
        .corruption
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no corruption rates".into()))?;
    c.validate()?;
    let tv = tv_distance(&model.p_match, &model.p_unmatch)?;
    let tv_over_b = tv_distance_over_b(&model.p_match, &model.p_unmatch)?;
    let b_set: Vec<usize> = (0..model.len())
        .filter(|&i| model.p_match[i] >= model.p_unmatch[i])
        .collect();
    let clean_gap: f64 = b_set
        .iter()
        .map(|&i| c.match_graph_match[i] - c.unmatch_graph_unmatch[i])
        .sum();
    let rhs = c.m_match * clean_gap + c.m_match - c.m_unmatch - 1.0;
    let ideal_tv = tv_distance(&c.match_graph_match, &c.unmatch_graph_unmatch)?;
    let ideal_rhs = tv_distance_over_b(&c.match_graph_match, &c.unmatch_graph_unmatch)?;
    Ok(Prop3Report {
        tv,
        tv_over_b,
        rhs,
        margin: tv - rhs,
        b_set,
        ideal_tv,
        ideal_rhs,
        pass: tv >= rhs - BOUND_TOL,
    })
}

/// Symmetric Dirichlet(1) draw via normalized exponentials.
pub fn random_simplex(rng: &mut crate::rng::Rng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|v| v / total).collect()
}

pub const DEFAULT_SUPPORT: (usize, usize) = (2, 10);

/// Random model for trial `index`: support size uniform in `support`,
/// conditionals from Dirichlet(1), prior uniform in [0.05, 0.95].
pub fn random_model(seed: u64, index: u64, support: (usize, usize)) -> Result<DiscreteJointModel> {
    let mut rng = rng_indexed(seed, "theory.model", index);
    let len = rng.random_range(support.0.max(1)..=support.1.max(support.0));
    let p_match = random_simplex(&mut rng, len);
    let p_unmatch = random_simplex(&mut rng, len);
    let prior = rng.random_range(0.05..0.95);
    DiscreteJointModel::new(p_match, p_unmatch, prior)
}

/// Random corrupted model: four Dirichlet(1) graph-conditioned distributions
/// and uniform rates.
pub fn random_corrupted_model(seed: u64, index: u64, support: (usize, usize)) -> Result<DiscreteJointModel> {
    let mut rng = rng_indexed(seed, "theory.corrupted", index);
    let len = rng.random_range(support.0.max(1)..=support.1.max(support.0));
    let corruption = Corruption {
        m_match: rng.random_range(0.0..=1.0),
        m_unmatch: rng.random_range(0.0..=1.0),
        match_graph_match: random_simplex(&mut rng, len),
        match_graph_unmatch: random_simplex(&mut rng, len),
        unmatch_graph_match: random_simplex(&mut rng, len),
        unmatch_graph_unmatch: random_simplex(&mut rng, len),
    };
    let prior = rng.random_range(0.05..0.95);
    DiscreteJointModel::with_corruption(corruption, prior)
}

/// Random masses in multiples of 1/64, so sums are exact in binary.
fn dyadic_simplex(rng: &mut crate::rng::Rng, len: usize) -> Vec<f64> {
    let mut counts = vec![1u32; len];
    for _ in len..64 {
        counts[rng.random_range(0..len)] += 1;
    }
    counts.iter().map(|&c| f64::from(c) / 64.0).collect()
}

/// Noiseless graphs with disjoint clean supports: the first half of the
/// outcomes carry the matched mass, the second half the unmatched mass.
pub fn ideal_model(seed: u64, len: usize, prior: f64) -> Result<DiscreteJointModel> {
    if len < 2 {
        return Err(Error::InvalidArgument("ideal model needs at least 2 outcomes".into()));
    }
    let mut rng = rng_indexed(seed, "theory.ideal", len as u64);
    let half = len / 2;
    let mut clean_m = dyadic_simplex(&mut rng, half);
    clean_m.resize(len, 0.0);
    let mut clean_u = vec![0.0; half];
    clean_u.extend(dyadic_simplex(&mut rng, len - half));
    let corruption = Corruption {
        m_match: 1.0,
        m_unmatch: 0.0,
        match_graph_unmatch: random_simplex(&mut rng, len),
        unmatch_graph_match: random_simplex(&mut rng, len),
        match_graph_match: clean_m,
        unmatch_graph_unmatch: clean_u,
    };
    DiscreteJointModel::with_corruption(corruption, prior)
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub trials: usize,
    pub prop1: Vec<Prop1Report>,
    pub prop2: Vec<PerturbationReport>,
    pub prop3: Vec<Prop3Report>,
    pub prop1_pass: bool,
    pub prop2_pass: bool,
    pub prop3_pass: bool,
    pub ideal_tv: f64,
}

/// Slope windows accepted by [`verify_all`].
pub const GENERIC_SLOPE: (f64, f64) = (0.9, 1.1);
pub const OPTIMAL_SLOPE: (f64, f64) = (1.8, 2.2);

/// Runs every check on `trials` random models.
pub fn verify_all(seed: u64, trials: usize) -> Result<TheoryReport> {
    let mut prop1 = Vec::with_capacity(trials);
    let mut prop2 = Vec::with_capacity(trials);
    let mut prop3 = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        let model = random_model(seed, t, DEFAULT_SUPPORT)?;
        prop1.push(check_prop1(&model)?);
        let grid = scaled_grid(&model, &DEFAULT_EPS_GRID);
        prop2.push(perturbation_scaling(&model, &generic_table(&model), &grid)?);
        prop3.push(check_prop3(&random_corrupted_model(seed, t, DEFAULT_SUPPORT)?)?);
    }
    let ideal = check_prop3(&ideal_model(seed, 6, 0.3)?)?;
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    Ok(TheoryReport {
        seed,
        trials,
        prop1_pass: prop1.iter().all(|r| r.pass),
        prop2_pass: prop2.iter().all(|r| {
            within(r.slope_generic, GENERIC_SLOPE) && within(r.slope_optimal, OPTIMAL_SLOPE) && r.optimal_is_maximum
        }),
        prop3_pass: prop3.iter().all(|r| r.pass) && ideal.tv == 1.0,
        ideal_tv: ideal.tv,
        prop1,
        prop2,
        prop3,
    })
}
