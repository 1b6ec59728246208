//! Quadrature on the unit sphere and on intervals.
//!
//! Integrands in this crate carry the factor `max(Qp.p - eta, 0)` (or the
//! indicator of `E_Q = {Qp.p > eta}`), which has a kink (or jump) on the curve
//! `Qp.p = eta`. In the eigenframe of `Q`, with the polar axis along an
//! eigenvector and `u = cos(theta)`,
//!
//! ```text
//! Qp.p = a(phi) + (q_axis - a(phi)) u^2,   a(phi) = q_i cos^2 phi + q_j sin^2 phi
//! ```
//!
//! so for each azimuthal node the kink sits at a known `u`. [`SupportRule`]
//! rebuilds the Gauss-Legendre rule per azimuth on the smooth pieces of the
//! support only, which keeps spectral accuracy in both directions.

use std::f64::consts::PI;

use crate::tensor3::{EigenFrame, TracelessSym3, Vec3};

/// Split points closer than this to a panel end are snapped onto it.
pub const TANGENCY_TOL: f64 = 1e-8;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        // Tricomi initial guess for the i-th largest root.
        let k = i as f64 + 1.0;
        let mut x = (PI * (k - 0.25) / (nf + 0.5)).cos() * (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
#[derive(Clone, Debug)]
pub struct IntervalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IntervalRule {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Self {
            nodes: x.iter().map(|t| mid + half * t).collect(),
            weights: w.iter().map(|wi| wi * half).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Quadrature resolution: Gauss-Legendre nodes per smooth polar panel and
/// uniform azimuthal nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub n_u: usize,
    pub n_phi: usize,
}

impl Resolution {
    pub const MIN_N_U: usize = 16;
    pub const MIN_N_PHI: usize = 32;

    pub fn new(n_u: usize, n_phi: usize) -> Self {
        Self { n_u, n_phi }
    }

    pub fn is_valid(&self) -> bool {
        self.n_u >= Self::MIN_N_U && self.n_phi >= Self::MIN_N_PHI
    }

    pub fn halved(&self) -> Self {
        Self {
            n_u: (self.n_u / 2).max(1),
            n_phi: (self.n_phi / 2).max(2),
        }
    }

    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            n_u: self.n_u * factor,
            n_phi: self.n_phi * factor,
        }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self { n_u: 64, n_phi: 128 }
    }
}

/// Product rule on the whole sphere: Gauss-Legendre in `u = cos(theta)` times
/// the trapezoid rule in `phi`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub resolution: Resolution,
}

impl SphereRule {
    pub fn new(res: Resolution) -> Self {
        let (u, wu) = gauss_legendre(res.n_u);
        let dphi = 2.0 * PI / res.n_phi as f64;
        let mut nodes = Vec::with_capacity(res.n_u * res.n_phi);
        let mut weights = Vec::with_capacity(res.n_u * res.n_phi);
        for k in 0..res.n_phi {
            let (s, c) = (k as f64 * dphi).sin_cos();
            for (&ui, &wi) in u.iter().zip(&wu) {
                let r = (1.0 - ui * ui).sqrt();
                nodes.push([r * c, r * s, ui]);
                weights.push(wi * dphi);
            }
        }
        Self {
            nodes,
            weights,
            resolution: res,
        }
    }

    pub fn integrate<T: Quantity>(&self, g: impl Fn(Vec3) -> T) -> T {
        let mut acc = T::zero();
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            acc.add_scaled(&g(*p), *w);
        }
        acc
    }
}

/// Values that can be accumulated by a quadrature rule.
pub trait Quantity: Clone {
    fn zero() -> Self;
    fn add_scaled(&mut self, other: &Self, w: f64);
    /// Size of `self - other`, used for discrepancy estimates.
    fn distance(&self, other: &Self) -> f64;
    fn magnitude(&self) -> f64;
}

impl Quantity for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        *self += w * other;
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Quantity for TracelessSym3 {
    fn zero() -> Self {
        TracelessSym3::ZERO
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        *self += *other * w;
    }
    fn distance(&self, other: &Self) -> f64 {
        (*self - *other).norm()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Quadrature over `E_Q = {p : Qp.p > eta}` with the kink of
/// `max(Qp.p - eta, 0)` resolved exactly.
///
/// `excess[i] = Q p_i . p_i - eta > 0` is stored per node so both the
/// indicator-weighted and kink-weighted integrals come from one rule.
#[derive(Clone, Debug)]
pub struct SupportRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub excess: Vec<f64>,
}

impl SupportRule {
    /// Rule in the eigenframe of `Q` given its eigenvalues (descending); node
    /// coordinates are frame coordinates.
    pub fn in_frame(values: Vec3, eta: f64, res: Resolution) -> Self {
        let [v1, v2, v3] = values;
        let dphi = 2.0 * PI / res.n_phi as f64;
        let (x, wx) = gauss_legendre(res.n_u);
        let mut rule = Self {
            nodes: Vec::new(),
            weights: Vec::new(),
            excess: Vec::new(),
        };
        if eta >= v1 {
            return rule;
        }
        // Polar axis: the smallest eigenvector when E_Q misses two polar caps
        // around it, the largest when E_Q is two caps around it. Either way the
        // kink location is a smooth function of phi.
        let (axis, others) = if eta >= v2 { (0usize, [1usize, 2]) } else { (2, [0, 1]) };
        let q_axis = values[axis];
        let (qi, qj) = (values[others[0]], values[others[1]]);
        let mut panels: Vec<(f64, f64)> = Vec::with_capacity(2);
        for k in 0..res.n_phi {
            let (s, c) = (k as f64 * dphi).sin_cos();
            let a = qi * c * c + qj * s * s;
            panels.clear();
            if eta < v3 {
                panels.push((-1.0, 1.0));
            } else if axis == 2 {
                // a > eta > q_axis: support is |u| < u*.
                let t = ((a - eta) / (a - q_axis)).clamp(0.0, 1.0);
                let u = t.sqrt();
                if u >= 1.0 - TANGENCY_TOL {
                    panels.push((-1.0, 1.0));
                } else if u > TANGENCY_TOL {
                    panels.push((-u, u));
                }
            } else {
                // a <= eta < q_axis: support is |u| > u*.
                let t = ((eta - a) / (q_axis - a)).clamp(0.0, 1.0);
                let u = t.sqrt();
                if u <= TANGENCY_TOL {
                    panels.push((-1.0, 0.0));
                    panels.push((0.0, 1.0));
                } else if u < 1.0 - TANGENCY_TOL {
                    panels.push((-1.0, -u));
                    panels.push((u, 1.0));
                }
            }
            for &(lo, hi) in &panels {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (&xi, &wi) in x.iter().zip(&wx) {
                    let u = mid + half * xi;
                    let r = (1.0 - u * u).max(0.0).sqrt();
                    let mut p = [0.0; 3];
                    p[axis] = u;
                    p[others[0]] = r * c;
                    p[others[1]] = r * s;
                    let e = v1 * p[0] * p[0] + v2 * p[1] * p[1] + v3 * p[2] * p[2] - eta;
                    if e <= 0.0 {
                        continue;
                    }
                    rule.nodes.push(p);
                    rule.weights.push(wi * half * dphi);
                    rule.excess.push(e);
                }
            }
        }
        rule
    }

    /// Rule for `E_Q` with nodes expressed in the original coordinates.
    pub fn for_tensor(q: &TracelessSym3, eta: f64, res: Resolution) -> (Self, EigenFrame) {
        let frame = q.eig();
        let mut rule = Self::in_frame(frame.values, eta, res);
        for p in rule.nodes.iter_mut() {
            *p = frame.to_lab(*p);
        }
        (rule, frame)
    }

    /// Whole sphere with unit kernel (`excess == 1`).
    pub fn unit_sphere(res: Resolution) -> Self {
        let s = SphereRule::new(res);
        let n = s.nodes.len();
        Self {
            nodes: s.nodes,
            weights: s.weights,
            excess: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int g(p) max(Qp.p - eta, 0) dp`.
    pub fn integrate_plus<T: Quantity>(&self, g: impl Fn(Vec3) -> T) -> T {
        let mut acc = T::zero();
        for ((p, w), e) in self.nodes.iter().zip(&self.weights).zip(&self.excess) {
            acc.add_scaled(&g(*p), w * e);
        }
        acc
    }

    /// `int_{E_Q} g(p) dp`.
    pub fn integrate_indicator<T: Quantity>(&self, g: impl Fn(Vec3) -> T) -> T {
        let mut acc = T::zero();
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            acc.add_scaled(&g(*p), *w);
        }
        acc
    }
}

/// An integral value with a two-grid discrepancy: the difference between the
/// requested resolution and half of it in both directions.
#[derive(Clone, Debug)]
pub struct Estimate<T> {
    pub value: T,
    pub discrepancy: f64,
}

/// `int g(p) max(Qp.p - eta, 0) dp` over the unit sphere.
pub fn integrate_plus<T: Quantity>(q: &TracelessSym3, eta: f64, res: Resolution, g: impl Fn(Vec3) -> T) -> Estimate<T> {
    let fine = SupportRule::for_tensor(q, eta, res).0.integrate_plus(&g);
    let coarse = SupportRule::for_tensor(q, eta, res.halved()).0.integrate_plus(&g);
    Estimate {
        discrepancy: fine.distance(&coarse),
        value: fine,
    }
}

/// `int_{E_Q} g(p) dp`.
pub fn integrate_indicator<T: Quantity>(
    q: &TracelessSym3,
    eta: f64,
    res: Resolution,
    g: impl Fn(Vec3) -> T,
) -> Estimate<T> {
    let fine = SupportRule::for_tensor(q, eta, res).0.integrate_indicator(&g);
    let coarse = SupportRule::for_tensor(q, eta, res.halved()).0.integrate_indicator(&g);
    Estimate {
        discrepancy: fine.distance(&coarse),
        value: fine,
    }
}

/// `(1/4pi) int (p.Ap) (p (x) p - I/3) dp`, which is `(2/15) A`.
pub fn fourth_moment_map(a: &TracelessSym3) -> TracelessSym3 {
    // Degree-4 polynomial integrand: 3 x 8 nodes are already exact.
    let rule = SphereRule::new(Resolution::new(8, 16));
    let m = a.to_matrix();
    rule.integrate(|p| {
        let mut apq = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                apq += m[i][j] * p[i] * p[j];
            }
        }
        TracelessSym3::dyad(p) * apq
    }) * (1.0 / (4.0 * PI))
}

/// Panels of `[-1, 1]` on which `S (x^2 - 1/3) > eta`, i.e. the support of an
/// axially symmetric density with order parameter `S` written in `x = p.n`.
pub fn uniaxial_support(s: f64, eta: f64) -> Vec<(f64, f64)> {
    // S (x^2 - 1/3) = eta  <=>  x^2 = eta / S + 1/3.
    let at = |x: f64| s * (x * x - 1.0 / 3.0) - eta;
    if s == 0.0 {
        return if eta < 0.0 { vec![(-1.0, 1.0)] } else { Vec::new() };
    }
    let t = eta / s + 1.0 / 3.0;
    if !(0.0..1.0).contains(&t) {
        // No interior crossing: all or nothing.
        return if at(0.5) > 0.0 { vec![(-1.0, 1.0)] } else { Vec::new() };
    }
    let root = t.sqrt();
    if s > 0.0 {
        // Support near the poles.
        if root <= TANGENCY_TOL {
            vec![(-1.0, 0.0), (0.0, 1.0)]
        } else if root >= 1.0 - TANGENCY_TOL {
            Vec::new()
        } else {
            vec![(-1.0, -root), (root, 1.0)]
        }
    } else if root <= TANGENCY_TOL {
        Vec::new()
    } else if root >= 1.0 - TANGENCY_TOL {
        vec![(-1.0, 1.0)]
    } else {
        vec![(-root, root)]
    }
}

/// Rule in `x = p.n` for axially symmetric integrands on the support of
/// `max(S(x^2 - 1/3) - eta, 0)`. Weights include the azimuthal `2 pi`.
#[derive(Clone, Debug)]
pub struct AxialRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub excess: Vec<f64>,
}

impl AxialRule {
    pub fn new(s: f64, eta: f64, n_per_panel: usize) -> Self {
        let mut rule = Self {
            nodes: Vec::new(),
            weights: Vec::new(),
            excess: Vec::new(),
        };
        for (lo, hi) in uniaxial_support(s, eta) {
            let panel = IntervalRule::new(n_per_panel, lo, hi);
            for (x, w) in panel.nodes.into_iter().zip(panel.weights) {
                let e = s * (x * x - 1.0 / 3.0) - eta;
                if e <= 0.0 {
                    continue;
                }
                rule.nodes.push(x);
                rule.weights.push(2.0 * PI * w);
                rule.excess.push(e);
            }
        }
        rule
    }
}
