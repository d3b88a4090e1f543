//! Nonlinear conductivity laws: conductivity, current density, energy density,
//! and sampled checks of the admissibility hypotheses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

/// Constitutive law `E -> sigma(E)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Linear { sigma0: f64 },
    Monomial { theta: f64, p: f64 },
    /// `sigma(E) = sum_k coefficients[k] E^k`.
    Polynomial { coefficients: Vec<f64> },
    Tabulated(TabulatedCurve),
}

/// Growth constants of the two-sided power-law bound on `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A conductivity model: a law plus its reference field strength and growth bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityModel {
    law: Law,
    e0: f64,
    p: f64,
    bounds: Option<(f64, f64)>,
}

fn check_e(e: f64) -> Result<()> {
    if e >= 0.0 && e.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("field magnitude must be a finite nonnegative number, got {e}")))
    }
}

impl ConductivityModel {
    pub fn linear(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::Config(format!("linear conductivity must be positive, got {sigma0}")));
        }
        Ok(Self { law: Law::Linear { sigma0 }, e0: 1.0, p: 2.0, bounds: None })
    }

    /// `sigma(E) = theta E^(p-2)`. Exponents below 2 are accepted so that the
    /// hypothesis check can report them.
    pub fn monomial(theta: f64, p: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) || !(p > 1.0 && p.is_finite()) {
            return Err(Error::Config(format!("monomial law needs theta > 0 and p > 1, got theta={theta}, p={p}")));
        }
        Ok(Self { law: Law::Monomial { theta, p }, e0: 1.0, p, bounds: None })
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty()
            || coefficients.iter().any(|c| !(*c >= 0.0 && c.is_finite()))
            || !(*coefficients.last().unwrap() > 0.0)
        {
            return Err(Error::Config(format!(
                "polynomial law needs nonnegative coefficients with a positive leading term, got {coefficients:?}"
            )));
        }
        let p = coefficients.len() as f64 + 1.0;
        Ok(Self { law: Law::Polynomial { coefficients }, e0: 1.0, p, bounds: None })
    }

    /// Tabulated current density `J(E)` with growth exponent `p` for the hypothesis check.
    pub fn tabulated(fields: Vec<f64>, currents: Vec<f64>, p: f64) -> Result<Self> {
        let curve = TabulatedCurve::new(fields, currents)?;
        Ok(Self { law: Law::Tabulated(curve), e0: 1.0, p, bounds: None })
    }

    pub fn with_e0(mut self, e0: f64) -> Result<Self> {
        if !(e0 > 0.0 && e0.is_finite()) {
            return Err(Error::Config(format!("E0 must be positive, got {e0}")));
        }
        self.e0 = e0;
        Ok(self)
    }

    /// Overrides the growth constants used in the bound check.
    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper >= lower) {
            return Err(Error::Config(format!("growth bounds need 0 < lower <= upper, got {lower}, {upper}")));
        }
        self.bounds = Some((lower, upper));
        Ok(self)
    }

    pub fn law(&self) -> &Law {
        &self.law
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    /// Growth exponent `p`.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn is_monomial(&self) -> bool {
        matches!(self.law, Law::Linear { .. } | Law::Monomial { .. })
    }

    /// Growth constants: user-supplied, analytic for closed-form laws, or
    /// sampled on `grid` for tabulated laws.
    pub fn growth_bounds(&self, grid: &[f64]) -> GrowthBounds {
        let (lower, upper) = match (self.bounds, &self.law) {
            (Some(b), _) => b,
            (None, Law::Linear { sigma0 }) => (*sigma0, *sigma0),
            (None, Law::Monomial { theta, p }) => {
                let s = theta * self.e0.powf(p - 2.0);
                (s, s)
            }
            (None, Law::Polynomial { coefficients }) => {
                let n = coefficients.len() - 1;
                let lower = coefficients[n] * self.e0.powi(n as i32);
                let upper = coefficients.iter().enumerate().map(|(k, c)| c * self.e0.powi(k as i32)).sum();
                (lower, upper)
            }
            (None, Law::Tabulated(_)) => {
                let mut lower = f64::INFINITY;
                let mut upper: f64 = 0.0;
                for &e in grid.iter().filter(|&&e| e > 0.0) {
                    let s = self.sigma_at(e);
                    let r = (e / self.e0).powf(self.p - 2.0);
                    lower = lower.min(s / r);
                    upper = upper.max(s / r.max(1.0));
                }
                (lower, upper)
            }
        };
        GrowthBounds { p: self.p, lower, upper }
    }

    /// Conductivity `sigma(E)`.
    pub fn sigma(&self, e: f64) -> Result<f64> {
        check_e(e)?;
        Ok(self.sigma_at(e))
    }

    /// Current density magnitude `J(E) = sigma(E) E`.
    pub fn current_density(&self, e: f64) -> Result<f64> {
        check_e(e)?;
        Ok(self.current_at(e))
    }

    /// Energy density `Q(E)`, the integral of `J` from 0 to `E`.
    pub fn energy_density(&self, e: f64) -> Result<f64> {
        check_e(e)?;
        Ok(self.energy_at(e))
    }

    #[inline]
    pub(crate) fn sigma_at(&self, e: f64) -> f64 {
        match &self.law {
            Law::Linear { sigma0 } => *sigma0,
            Law::Monomial { theta, p } => {
                if *p == 2.0 {
                    *theta
                } else if e == 0.0 {
                    if *p > 2.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    theta * pow(e, p - 2.0)
                }
            }
            Law::Polynomial { coefficients } => horner(coefficients, e),
            Law::Tabulated(curve) => {
                if e == 0.0 {
                    curve.derivative(0.0)
                } else {
                    curve.value(e) / e
                }
            }
        }
    }

    #[inline]
    pub(crate) fn current_at(&self, e: f64) -> f64 {
        match &self.law {
            Law::Linear { sigma0 } => sigma0 * e,
            Law::Monomial { theta, p } => {
                if e == 0.0 {
                    0.0
                } else {
                    theta * pow(e, p - 1.0)
                }
            }
            Law::Polynomial { coefficients } => e * horner(coefficients, e),
            Law::Tabulated(curve) => curve.value(e),
        }
    }

    #[inline]
    pub(crate) fn energy_at(&self, e: f64) -> f64 {
        match &self.law {
            Law::Linear { sigma0 } => 0.5 * sigma0 * e * e,
            Law::Monomial { theta, p } => {
                if e == 0.0 {
                    0.0
                } else {
                    theta * pow(e, *p) / p
                }
            }
            Law::Polynomial { coefficients } => {
                let mut acc = 0.0;
                for (k, c) in coefficients.iter().enumerate().rev() {
                    acc = acc * e + c / (k as f64 + 2.0);
                }
                acc * e * e
            }
            Law::Tabulated(curve) => curve.integral(e),
        }
    }

    /// `(sigma(E), dJ/dE(E))`, the isotropic and radial parts of the tangent.
    #[inline]
    pub(crate) fn tangent_at(&self, e: f64) -> (f64, f64) {
        match &self.law {
            Law::Linear { sigma0 } => (*sigma0, *sigma0),
            Law::Monomial { p, .. } => {
                let s = self.sigma_at(e);
                (s, (p - 1.0) * s)
            }
            Law::Polynomial { coefficients } => {
                let mut d = 0.0;
                for (k, c) in coefficients.iter().enumerate().rev() {
                    d = d * e + (k as f64 + 1.0) * c;
                }
                (horner(coefficients, e), d)
            }
            Law::Tabulated(curve) => (self.sigma_at(e), curve.derivative(e)),
        }
    }

    /// Strong-monotonicity constant `c` for closed-form laws.
    pub fn strong_monotonicity_constant(&self) -> Option<f64> {
        match &self.law {
            Law::Linear { sigma0 } => Some(sigma0 / 2.0),
            Law::Monomial { theta, p } if *p >= 2.0 => Some(theta / 2f64.powf(p - 1.0)),
            Law::Polynomial { coefficients } => {
                let n = coefficients.len() - 1;
                Some(coefficients[n] / 2f64.powi(n as i32 + 1))
            }
            _ => None,
        }
    }

    /// Vector current density `sigma(|E|) E`.
    pub fn current_vector(&self, field: [f64; 2]) -> [f64; 2] {
        let s = self.sigma_at(field[0].hypot(field[1]));
        if s.is_finite() {
            [s * field[0], s * field[1]]
        } else {
            [0.0, 0.0]
        }
    }
}

#[inline]
fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() < 64.0 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

#[inline]
fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

/// Shape-preserving piecewise-cubic Hermite interpolant of sampled `J(E)`.
///
/// The curve passes through the origin; beyond the last sample it continues
/// linearly with the end slope.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCurve {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    /// Integral of the interpolant from 0 to each knot.
    cumulative: Vec<f64>,
}

impl TabulatedCurve {
    pub fn new(mut x: Vec<f64>, mut y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Config("tabulated law needs equally many field and current samples".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) || x[0] < 0.0 {
            return Err(Error::Config("tabulated samples must be finite with nonnegative fields".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("tabulated field samples must be strictly increasing".into()));
        }
        if x[0] == 0.0 {
            if y[0] != 0.0 {
                return Err(Error::Config("tabulated current must vanish at zero field".into()));
            }
        } else {
            x.insert(0, 0.0);
            y.insert(0, 0.0);
        }
        let d = pchip_slopes(&x, &y);
        let mut curve = Self { x, y, d, cumulative: Vec::new() };
        let mut cumulative = vec![0.0];
        for k in 0..curve.x.len() - 1 {
            let (a, b) = (curve.x[k], curve.x[k + 1]);
            let scale = curve.y[k].abs().max(curve.y[k + 1].abs()) * (b - a);
            let piece = integrate_adaptive(|t| curve.value(t), a, b, 1e-14 * scale.max(f64::MIN_POSITIVE));
            cumulative.push(cumulative[k] + piece);
        }
        curve.cumulative = cumulative;
        Ok(curve)
    }

    fn segment(&self, e: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&e).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn value(&self, e: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return 0.0;
        }
        if e >= self.x[n - 1] {
            return self.y[n - 1] + self.d[n - 1] * (e - self.x[n - 1]);
        }
        let k = self.segment(e);
        let h = self.x[k + 1] - self.x[k];
        let t = (e - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[k]
            + (t3 - 2.0 * t2 + t) * h * self.d[k]
            + (-2.0 * t3 + 3.0 * t2) * self.y[k + 1]
            + (t3 - t2) * h * self.d[k + 1]
    }

    pub fn derivative(&self, e: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return 0.0;
        }
        if e >= self.x[n - 1] {
            return self.d[n - 1];
        }
        let k = self.segment(e);
        let h = self.x[k + 1] - self.x[k];
        let t = (e - self.x[k]) / h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.y[k]
            + (3.0 * t2 - 4.0 * t + 1.0) * h * self.d[k]
            + (-6.0 * t2 + 6.0 * t) * self.y[k + 1])
            / h
            + (3.0 * t2 - 2.0 * t) * self.d[k + 1]
    }

    /// Integral of the interpolant over `[0, e]`, by adaptive quadrature on the partial segment.
    pub fn integral(&self, e: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || e == 0.0 {
            return 0.0;
        }
        if e >= self.x[n - 1] {
            let dx = e - self.x[n - 1];
            return self.cumulative[n - 1] + self.y[n - 1] * dx + 0.5 * self.d[n - 1] * dx * dx;
        }
        let k = self.segment(e);
        let tol = 1e-12 * (self.value(e) * e).abs().max(f64::MIN_POSITIVE);
        self.cumulative[k] + integrate_adaptive(|t| self.value(t), self.x[k], e, tol)
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![0.0];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let edge = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Outcome of one hypothesis check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub status: CheckStatus,
    pub witness: String,
}

impl HypothesisCheck {
    fn pass(witness: impl Into<String>) -> Self {
        Self { status: CheckStatus::Pass, witness: witness.into() }
    }
    fn fail(witness: impl Into<String>) -> Self {
        Self { status: CheckStatus::Fail, witness: witness.into() }
    }
}

/// Report of the five admissibility hypotheses (measurability, strict
/// monotonicity of `J`, continuity, growth bounds, strong monotonicity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub measurable: HypothesisCheck,
    pub strictly_increasing: HypothesisCheck,
    pub continuous: HypothesisCheck,
    pub growth: HypothesisCheck,
    pub strongly_monotone: HypothesisCheck,
    pub bounds: GrowthBounds,
    /// Strong-monotonicity constant: analytic for closed-form laws, a sampled
    /// lower-bound witness for tabulated laws.
    pub constant: Option<f64>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        [
            &self.measurable,
            &self.strictly_increasing,
            &self.continuous,
            &self.growth,
            &self.strongly_monotone,
        ]
        .iter()
        .all(|c| c.status == CheckStatus::Pass)
    }
}

/// 256 log-spaced fields over `[1e-6 E0, 1e3 E0]`.
pub fn default_grid(e0: f64) -> Vec<f64> {
    let (a, b) = ((1e-6f64).ln(), (1e3f64).ln());
    (0..256).map(|i| e0 * (a + (b - a) * i as f64 / 255.0).exp()).collect()
}

const REL_SLACK: f64 = 1e-12;

/// Checks the admissibility hypotheses on a field grid. Failures are reported, not raised.
pub fn validate_hypotheses(model: &ConductivityModel, grid: &[f64]) -> Result<HypothesisReport> {
    if grid.is_empty() {
        return Err(Error::Config("hypothesis grid is empty".into()));
    }
    if grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("hypothesis grid must be increasing positive reals".into()));
    }
    let measurable = HypothesisCheck::pass("piecewise constant in space");

    let strictly_increasing = match grid
        .windows(2)
        .find(|w| model.current_at(w[1]) <= model.current_at(w[0]))
    {
        None => HypothesisCheck::pass(format!("J strictly increasing on {} grid points", grid.len())),
        Some(w) => HypothesisCheck::fail(format!(
            "J({}) = {} >= J({}) = {}",
            w[0],
            model.current_at(w[0]),
            w[1],
            model.current_at(w[1])
        )),
    };

    let continuous = match &model.law {
        Law::Monomial { p, .. } if *p < 2.0 => HypothesisCheck::fail("sigma unbounded as E -> 0 for p < 2"),
        Law::Tabulated(_) => HypothesisCheck::pass("C1 monotone-cubic interpolant"),
        _ => HypothesisCheck::pass("closed-form continuous law"),
    };

    let bounds = model.growth_bounds(grid);
    let p = model.p;
    let growth = if p < 2.0 {
        HypothesisCheck::fail(format!("growth exponent p = {p} < 2"))
    } else if !(bounds.lower > 0.0 && bounds.upper >= bounds.lower) {
        HypothesisCheck::fail(format!("invalid constants lower={}, upper={}", bounds.lower, bounds.upper))
    } else {
        let violation = grid.iter().find(|&&e| {
            let s = model.sigma_at(e);
            let r = (e / model.e0).powf(p - 2.0);
            let lo = bounds.lower * r;
            let hi = bounds.upper * r.max(1.0);
            s < lo * (1.0 - REL_SLACK) || s > hi * (1.0 + REL_SLACK)
        });
        match violation {
            None => HypothesisCheck::pass(format!("bounds hold with lower={}, upper={}", bounds.lower, bounds.upper)),
            Some(e) => HypothesisCheck::fail(format!("bound violated at E = {e}")),
        }
    };

    let (strongly_monotone, constant) = match model.strong_monotonicity_constant() {
        Some(c) => (HypothesisCheck::pass(format!("c = {c}")), Some(c)),
        None if p < 2.0 => (HypothesisCheck::fail(format!("growth exponent p = {p} < 2")), None),
        None => {
            let c = sample_strong_monotonicity(model, 4096, 0x5eed);
            if c > 0.0 {
                (HypothesisCheck::pass(format!("sampled lower-bound witness c = {c}")), Some(c))
            } else {
                (HypothesisCheck::fail(format!("sampled ratio {c} <= 0")), Some(c))
            }
        }
    };

    Ok(HypothesisReport { measurable, strictly_increasing, continuous, growth, strongly_monotone, bounds, constant })
}

/// Smallest observed `(J(E2) - J(E1)) . (E2 - E1) / |E2 - E1|^p` over random
/// vector pairs with components in `[-10 E0, 10 E0]`.
pub fn sample_strong_monotonicity(model: &ConductivityModel, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 10.0 * model.e0;
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let a = [rng.gen_range(-span..=span), rng.gen_range(-span..=span)];
        let b = [rng.gen_range(-span..=span), rng.gen_range(-span..=span)];
        let diff = [b[0] - a[0], b[1] - a[1]];
        let norm = diff[0].hypot(diff[1]);
        if norm == 0.0 {
            continue;
        }
        let ja = model.current_vector(a);
        let jb = model.current_vector(b);
        let lhs = (jb[0] - ja[0]) * diff[0] + (jb[1] - ja[1]) * diff[1];
        worst = worst.min(lhs / norm.powf(model.p));
    }
    worst
}

/// Checks `lower(E) <= upper(E)` on the grid (and at `E = 0`). Returns the first violating field, if any.
pub fn ordering_violation(lower: &ConductivityModel, upper: &ConductivityModel, grid: &[f64]) -> Option<f64> {
    std::iter::once(0.0).chain(grid.iter().copied()).find(|&e| {
        let a = lower.sigma_at(e);
        let b = upper.sigma_at(e);
        a > b * (1.0 + REL_SLACK) + f64::MIN_POSITIVE
    })
}

/// One row of an exported constitutive curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub e: f64,
    pub sigma: f64,
    pub j: f64,
    pub q: f64,
    /// Lower growth envelope `lower (E/E0)^(p-2)`.
    pub sigma_lower: f64,
    /// Upper growth envelope `upper max(1, (E/E0)^(p-2))`.
    pub sigma_upper: f64,
}

/// Tabulates `(E, sigma, J, Q)` and the growth envelopes on an increasing nonnegative grid.
pub fn export_constitutive_curves(model: &ConductivityModel, grid: &[f64]) -> Result<Vec<CurveRow>> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("curve grid must be increasing".into()));
    }
    let positive: Vec<f64> = grid.iter().copied().filter(|&e| e > 0.0).collect();
    let bounds = model.growth_bounds(if positive.is_empty() { &[1.0] } else { &positive });
    grid.iter()
        .map(|&e| {
            let r = (e / model.e0).powf(bounds.p - 2.0);
            Ok(CurveRow {
                e,
                sigma: model.sigma(e)?,
                j: model.current_density(e)?,
                q: model.energy_density(e)?,
                sigma_lower: bounds.lower * r,
                sigma_upper: bounds.upper * r.max(1.0),
            })
        })
        .collect()
}
