//! Preferred-curvature forcing `κ₀(s, t) = F₁(s) cos ωt + F₂(s) sin ωt`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{default_quad_nodes, BasisError, EigenBasis, EigenPair};
use crate::quadrature::GaussLegendre;

/// Forcing frequency used throughout the swimming experiments.
pub const DEFAULT_OMEGA: f64 = 32.0 * PI;

const PARITY_TOL: f64 = 1e-10;
const NORM_NODES: usize = 256;

#[derive(Debug, Error)]
pub enum ForcingError {
    #[error("tabulated profile needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("tabulated abscissae must be strictly increasing inside [0, 1] (row {0})")]
    BadAbscissa(usize),
    #[error("tabulated columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("mode profile has no coefficients")]
    EmptyModes,
    #[error("forcing frequency must be positive and finite, got {0}")]
    BadOmega(f64),
    #[error("amplitude must be finite, got {0}")]
    BadAmplitude(f64),
    #[error("cannot read profile table: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: cannot parse {field:?} as a number")]
    Parse { row: usize, field: String },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Spatial shape of one forcing component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    /// `(s − 1)²`
    Quadratic,
    /// `sin(q s)`
    Sine { q: f64 },
    /// `cos(q s)`
    Cosine { q: f64 },
    /// `Σ c_k ψ_k(s)`, `k = 1..=len`
    Modes { coeffs: Vec<f64> },
    /// Natural cubic spline through `(s_i, v_i)`.
    Tabulated { s: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    /// Loads a two-column `(s, value)` table. A non-numeric first row is
    /// treated as a header; lines starting with `#` are skipped.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self, ForcingError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let (mut s, mut values) = (Vec::new(), Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").to_string();
            let parsed = (field(0).parse::<f64>(), field(1).parse::<f64>());
            match parsed {
                (Ok(x), Ok(v)) => {
                    s.push(x);
                    values.push(v);
                }
                _ if row == 0 => continue,
                (Err(_), _) => return Err(ForcingError::Parse { row, field: field(0) }),
                (_, Err(_)) => return Err(ForcingError::Parse { row, field: field(1) }),
            }
        }
        let profile = Profile::Tabulated { s, values };
        Prepared::new(&profile)?;
        Ok(profile)
    }
}

/// Natural cubic spline with precomputed second derivatives.
#[derive(Debug, Clone)]
struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(x: &[f64], y: &[f64]) -> Result<Self, ForcingError> {
        if x.len() != y.len() {
            return Err(ForcingError::LengthMismatch(x.len(), y.len()));
        }
        let n = x.len();
        if n < 3 {
            return Err(ForcingError::TooFewSamples(n));
        }
        for (i, &xi) in x.iter().enumerate() {
            let ok = (0.0..=1.0).contains(&xi) && (i == 0 || xi > x[i - 1]);
            if !ok {
                return Err(ForcingError::BadAbscissa(i));
            }
        }
        // Thomas solve for interior second derivatives, natural ends
        let mut m = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let lower = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            upper[i] = h1 / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
            if i > 1 {
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
        }
        for i in (1..n - 1).rev() {
            let next = if i + 1 < n - 1 { m[i + 1] } else { 0.0 };
            m[i] = (rhs[i] - upper[i] * next) / diag[i];
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    fn interval(&self, s: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&xi| xi <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let i = self.interval(s);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - s) / h, (s - x0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (v, d)
    }

    fn l2_norm_sq(&self) -> f64 {
        // four Gauss points per knot interval integrate the squared cubic exactly
        let rule = GaussLegendre::new(4);
        let mut total = 0.0;
        for w in self.x.windows(2) {
            let h = w[1] - w[0];
            total += h * rule.integrate(|u| self.eval(w[0] + h * u).0.powi(2));
        }
        // linear extrapolation outside the table
        let (x0, xn) = (self.x[0], *self.x.last().unwrap());
        if x0 > 0.0 {
            let (v, d) = self.eval(x0);
            total += x0 * rule.integrate(|u| (v - d * x0 * (1.0 - u)).powi(2));
        }
        if xn < 1.0 {
            let (v, d) = self.eval(xn);
            let len = 1.0 - xn;
            total += len * rule.integrate(|u| (v + d * len * u).powi(2));
        }
        total
    }

    fn eval_extrapolated(&self, s: f64) -> (f64, f64) {
        let (x0, xn) = (self.x[0], *self.x.last().unwrap());
        if s < x0 {
            let (v, d) = self.eval(x0);
            (v + d * (s - x0), d)
        } else if s > xn {
            let (v, d) = self.eval(xn);
            (v + d * (s - xn), d)
        } else {
            self.eval(s)
        }
    }
}

/// Profile with any setup work done once.
#[derive(Debug, Clone)]
enum Prepared {
    Zero,
    Quadratic,
    Sine(f64),
    Cosine(f64),
    Modes(Vec<(f64, EigenPair)>),
    Spline(Spline),
}

impl Prepared {
    fn new(profile: &Profile) -> Result<Self, ForcingError> {
        Ok(match profile {
            Profile::Zero => Prepared::Zero,
            Profile::Quadratic => Prepared::Quadratic,
            Profile::Sine { q } => Prepared::Sine(*q),
            Profile::Cosine { q } => Prepared::Cosine(*q),
            Profile::Modes { coeffs } => {
                if coeffs.is_empty() {
                    return Err(ForcingError::EmptyModes);
                }
                let rule = GaussLegendre::new(default_quad_nodes(coeffs.len()));
                let pairs = coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| Ok((c, EigenPair::new(i + 1, &rule)?)))
                    .collect::<Result<Vec<_>, BasisError>>()?;
                Prepared::Modes(pairs)
            }
            Profile::Tabulated { s, values } => Prepared::Spline(Spline::new(s, values)?),
        })
    }

    /// Value and first derivative.
    fn eval(&self, s: f64) -> (f64, f64) {
        match self {
            Prepared::Zero => (0.0, 0.0),
            Prepared::Quadratic => ((s - 1.0).powi(2), 2.0 * (s - 1.0)),
            Prepared::Sine(q) => ((q * s).sin(), q * (q * s).cos()),
            Prepared::Cosine(q) => ((q * s).cos(), -q * (q * s).sin()),
            Prepared::Modes(pairs) => pairs.iter().fold((0.0, 0.0), |(v, d), (c, p)| {
                (v + c * p.psi(s), d + c * p.psi_s(s))
            }),
            Prepared::Spline(sp) => sp.eval_extrapolated(s),
        }
    }

    fn l2_norm(&self) -> f64 {
        match self {
            Prepared::Zero => 0.0,
            Prepared::Quadratic => (0.2f64).sqrt(),
            Prepared::Spline(sp) => sp.l2_norm_sq().sqrt(),
            other => GaussLegendre::new(NORM_NODES)
                .integrate(|s| other.eval(s).0.powi(2))
                .sqrt(),
        }
    }
}

/// Serializable description of a single-frequency forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub f1: Profile,
    pub f2: Profile,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_normalize() -> bool {
    true
}

impl ForcingSpec {
    pub fn new(f1: Profile, f2: Profile) -> Self {
        Self {
            f1,
            f2,
            omega: DEFAULT_OMEGA,
            amplitude: 1.0,
            normalize: true,
        }
    }

    /// No forcing at all.
    pub fn none() -> Self {
        Self::new(Profile::Zero, Profile::Zero)
    }

    /// `F₁ = F₂ = (s − 1)²`, normalised.
    pub fn bad_swimmer() -> Self {
        Self::new(Profile::Quadratic, Profile::Quadratic)
    }

    /// `F₁ = sin(q s)`, `F₂ = cos(q s)`, normalised.
    pub fn traveling_wave(q: f64) -> Self {
        Self::new(Profile::Sine { q }, Profile::Cosine { q })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn build(&self) -> Result<Forcing, ForcingError> {
        Forcing::new(self.clone())
    }
}

/// Parity of a forcing about `s = 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

/// Eigenmode coefficients of the two profiles, `a_k = ∫ F₁ ψ_k`,
/// `b_k = ∫ F₂ ψ_k` (with amplitude and normalisation applied), so that
/// `κ₀ = Σ (a_k cos ωt + b_k sin ωt) ψ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoeffs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ModeCoeffs {
    pub fn zeros(k: usize) -> Self {
        Self {
            a: vec![0.0; k],
            b: vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            a: self.a.iter().map(|x| c * x).collect(),
            b: self.b.iter().map(|x| c * x).collect(),
        }
    }

    /// Euclidean norm of the stacked vector `(a, b)`.
    pub fn norm(&self) -> f64 {
        self.a.iter().chain(&self.b).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Midpoint samples of the profiles, used to evaluate `κ₀` on a grid
/// with one `sin`/`cos` pair per time.
#[derive(Debug, Clone)]
pub struct GridSamples {
    pub f1: Vec<f64>,
    pub f1_s: Vec<f64>,
    pub f2: Vec<f64>,
    pub f2_s: Vec<f64>,
}

/// Ready-to-evaluate forcing.
#[derive(Debug, Clone)]
pub struct Forcing {
    spec: ForcingSpec,
    f1: Prepared,
    f2: Prepared,
    // amplitude times normalisation
    c1: f64,
    c2: f64,
}

impl Forcing {
    pub fn new(spec: ForcingSpec) -> Result<Self, ForcingError> {
        if !(spec.omega.is_finite() && spec.omega > 0.0) {
            return Err(ForcingError::BadOmega(spec.omega));
        }
        if !spec.amplitude.is_finite() {
            return Err(ForcingError::BadAmplitude(spec.amplitude));
        }
        let f1 = Prepared::new(&spec.f1)?;
        let f2 = Prepared::new(&spec.f2)?;
        let scale = |p: &Prepared| {
            let n = p.l2_norm();
            if spec.normalize && n > 0.0 {
                spec.amplitude / n
            } else {
                spec.amplitude
            }
        };
        let (c1, c2) = (scale(&f1), scale(&f2));
        Ok(Self {
            spec,
            f1,
            f2,
            c1,
            c2,
        })
    }

    pub fn spec(&self) -> &ForcingSpec {
        &self.spec
    }

    pub fn omega(&self) -> f64 {
        self.spec.omega
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.spec.omega
    }

    /// True when `κ₀ ≡ 0`.
    pub fn is_zero(&self) -> bool {
        let dead = |p: &Prepared, c: f64| c == 0.0 || matches!(p, Prepared::Zero);
        dead(&self.f1, self.c1) && dead(&self.f2, self.c2)
    }

    /// Scaled `F₁(s)` and its derivative.
    pub fn f1(&self, s: f64) -> (f64, f64) {
        let (v, d) = self.f1.eval(s);
        (self.c1 * v, self.c1 * d)
    }

    /// Scaled `F₂(s)` and its derivative.
    pub fn f2(&self, s: f64) -> (f64, f64) {
        let (v, d) = self.f2.eval(s);
        (self.c2 * v, self.c2 * d)
    }

    pub fn kappa0(&self, s: f64, t: f64) -> f64 {
        let (c, sn) = self.phase(t);
        self.f1(s).0 * c + self.f2(s).0 * sn
    }

    pub fn kappa0_s(&self, s: f64, t: f64) -> f64 {
        let (c, sn) = self.phase(t);
        self.f1(s).1 * c + self.f2(s).1 * sn
    }

    pub fn kappa0_dot(&self, s: f64, t: f64) -> f64 {
        let (c, sn) = self.phase(t);
        self.spec.omega * (self.f2(s).0 * c - self.f1(s).0 * sn)
    }

    /// `∂_t ∂_s κ₀`.
    pub fn kappa0_s_dot(&self, s: f64, t: f64) -> f64 {
        let (c, sn) = self.phase(t);
        self.spec.omega * (self.f2(s).1 * c - self.f1(s).1 * sn)
    }

    /// `(cos ωt, sin ωt)` with the phase reduced to one period, so that
    /// shifting `t` by a period reproduces the same values.
    pub fn phase(&self, t: f64) -> (f64, f64) {
        let period = self.period();
        let tau = t.rem_euclid(period);
        let x = self.spec.omega * tau;
        (x.cos(), x.sin())
    }

    pub fn sample(&self, points: &[f64]) -> GridSamples {
        let (f1, f1_s): (Vec<f64>, Vec<f64>) = points.iter().map(|&s| self.f1(s)).unzip();
        let (f2, f2_s): (Vec<f64>, Vec<f64>) = points.iter().map(|&s| self.f2(s)).unzip();
        GridSamples { f1, f1_s, f2, f2_s }
    }

    pub fn mode_coeffs(&self, basis: &EigenBasis) -> ModeCoeffs {
        let nodes = basis.quadrature().nodes();
        let f1: Vec<f64> = nodes.iter().map(|&s| self.f1(s).0).collect();
        let f2: Vec<f64> = nodes.iter().map(|&s| self.f2(s).0).collect();
        ModeCoeffs {
            a: basis.expand_samples(&f1),
            b: basis.expand_samples(&f2),
        }
    }

    pub fn parity_class(&self) -> Parity {
        let rule = GaussLegendre::new(64);
        let classify = |f: &dyn Fn(f64) -> f64| {
            let (mut even_defect, mut odd_defect) = (0.0f64, 0.0f64);
            for &s in rule.nodes() {
                let (u, v) = (f(s), f(1.0 - s));
                even_defect = even_defect.max((u - v).abs());
                odd_defect = odd_defect.max((u + v).abs());
            }
            (even_defect < PARITY_TOL, odd_defect < PARITY_TOL)
        };
        let (e1, o1) = classify(&|s| self.f1(s).0);
        let (e2, o2) = classify(&|s| self.f2(s).0);
        if e1 && e2 {
            Parity::Even
        } else if o1 && o2 {
            Parity::Odd
        } else {
            Parity::Mixed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psi_table(k: usize, n: usize) -> Profile {
        let rule = GaussLegendre::new(128);
        let p = EigenPair::new(k, &rule).unwrap();
        let s: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let values = s.iter().map(|&x| p.psi(x)).collect();
        Profile::Tabulated { s, values }
    }

    #[test]
    fn zero_amplitude_vanishes() {
        let f = ForcingSpec::bad_swimmer().with_amplitude(0.0).build().unwrap();
        for &(s, t) in &[(0.0, 0.0), (0.3, 0.17), (1.0, 5.0)] {
            assert_eq!(f.kappa0(s, t), 0.0);
            assert_eq!(f.kappa0_s(s, t), 0.0);
        }
        assert!(f.is_zero());
    }

    #[test]
    fn bad_swimmer_vanishes_at_tail() {
        let f = ForcingSpec::bad_swimmer().build().unwrap();
        for &t in &[0.0, 0.01, 0.3, 1.7] {
            assert!(f.kappa0(1.0, t).abs() < 1e-15);
        }
        // normalised (s-1)^2 at s = 0 is sqrt(5)
        assert!((f.f1(0.0).0 - 5f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn time_derivative_at_origin() {
        let f = ForcingSpec::traveling_wave(2.0 * PI)
            .with_amplitude(0.3)
            .build()
            .unwrap();
        for &s in &[0.0, 0.25, 0.6] {
            let want = f.omega() * f.f2(s).0;
            assert!((f.kappa0_dot(s, 0.0) - want).abs() < 1e-12);
            // finite-difference check in time
            let h = 1e-6;
            let fd = (f.kappa0(s, 0.3 + h) - f.kappa0(s, 0.3 - h)) / (2.0 * h);
            assert!((fd - f.kappa0_dot(s, 0.3)).abs() < 1e-5 * f.omega());
        }
    }

    #[test]
    fn normalisation_is_unit() {
        let rule = GaussLegendre::new(256);
        for spec in [
            ForcingSpec::bad_swimmer(),
            ForcingSpec::traveling_wave(2.0 * PI),
            ForcingSpec::new(Profile::Modes { coeffs: vec![1.0, 2.0, 0.5] }, Profile::Cosine { q: 3.0 }),
        ] {
            let f = spec.build().unwrap();
            let n1 = rule.integrate(|s| f.f1(s).0.powi(2)).sqrt();
            let n2 = rule.integrate(|s| f.f2(s).0.powi(2)).sqrt();
            assert!((n1 - 1.0).abs() < 1e-10 && (n2 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn coefficients_of_eigenfunction() {
        let basis = EigenBasis::new(8).unwrap();
        let spec = ForcingSpec::new(Profile::Modes { coeffs: vec![0.0, 1.0] }, Profile::Zero);
        let c = spec.build().unwrap().mode_coeffs(&basis);
        for k in 0..8 {
            let want = if k == 1 { 1.0 } else { 0.0 };
            assert!((c.a[k] - want).abs() < 1e-10);
            assert_eq!(c.b[k], 0.0);
        }
    }

    #[test]
    fn equal_profiles_share_coefficients() {
        let basis = EigenBasis::new(10).unwrap();
        let c = ForcingSpec::bad_swimmer().build().unwrap().mode_coeffs(&basis);
        assert_eq!(c.a, c.b);
    }

    #[test]
    fn quadratic_coefficients_at_two_node_counts() {
        let f = ForcingSpec::bad_swimmer().build().unwrap();
        let coarse = f.mode_coeffs(&EigenBasis::with_nodes(10, 64).unwrap());
        let fine = f.mode_coeffs(&EigenBasis::with_nodes(10, 160).unwrap());
        for k in 0..10 {
            assert!((coarse.a[k] - fine.a[k]).abs() < 1e-10);
        }
        assert!(coarse.a[0].abs() > 0.1);
        assert!(coarse.a.iter().map(|x| x * x).sum::<f64>() <= 1.0);
    }

    #[test]
    fn parity_classes() {
        let modes = |c: Vec<f64>| Profile::Modes { coeffs: c };
        let even = ForcingSpec::new(modes(vec![1.0]), modes(vec![1.0])).build().unwrap();
        assert_eq!(even.parity_class(), Parity::Even);
        let odd = ForcingSpec::new(modes(vec![0.0, 1.0]), modes(vec![0.0, 0.0, 0.0, 1.0]))
            .build()
            .unwrap();
        assert_eq!(odd.parity_class(), Parity::Odd);
        assert_eq!(ForcingSpec::bad_swimmer().build().unwrap().parity_class(), Parity::Mixed);
        let split = ForcingSpec::new(modes(vec![1.0]), modes(vec![0.0, 1.0])).build().unwrap();
        assert_eq!(split.parity_class(), Parity::Mixed);
    }

    #[test]
    fn spline_reproduces_smooth_profile() {
        let rule = GaussLegendre::new(128);
        let p = EigenPair::new(2, &rule).unwrap();
        let spec = ForcingSpec {
            normalize: false,
            ..ForcingSpec::new(psi_table(2, 200), Profile::Zero)
        };
        let f = spec.build().unwrap();
        for &s in &[0.013, 0.31, 0.5, 0.77] {
            let (v, d) = f.f1(s);
            assert!((v - p.psi(s)).abs() < 1e-5);
            assert!((d - p.psi_s(s)).abs() < 1e-2);
        }
    }

    #[test]
    fn spline_reproduces_cubic_inside_and_is_natural() {
        // natural spline through a straight line is that line
        let s: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let values: Vec<f64> = s.iter().map(|x| 2.0 * x - 0.5).collect();
        let sp = Spline::new(&s, &values).unwrap();
        for &x in &[0.05, 0.5, 0.93] {
            let (v, d) = sp.eval(x);
            assert!((v - (2.0 * x - 0.5)).abs() < 1e-14);
            assert!((d - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        let bad = Profile::Tabulated {
            s: vec![0.0, 0.5, 0.5, 1.0],
            values: vec![0.0; 4],
        };
        assert!(matches!(
            ForcingSpec::new(bad, Profile::Zero).build(),
            Err(ForcingError::BadAbscissa(2))
        ));
        let short = Profile::Tabulated {
            s: vec![0.0, 1.0],
            values: vec![0.0; 2],
        };
        assert!(matches!(
            ForcingSpec::new(short, Profile::Zero).build(),
            Err(ForcingError::TooFewSamples(2))
        ));
        assert!(matches!(
            ForcingSpec::bad_swimmer().with_omega(0.0).build(),
            Err(ForcingError::BadOmega(_))
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ForcingSpec::traveling_wave(2.0 * PI).with_amplitude(0.1);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ForcingSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let minimal: ForcingSpec =
            serde_json::from_str(r#"{"f1":{"kind":"quadratic"},"f2":{"kind":"zero"}}"#).unwrap();
        assert_eq!(minimal.omega, DEFAULT_OMEGA);
        assert!(minimal.normalize);
    }
}
