//! Traceless symmetric 3x3 tensors.
//!
//! A [`TracelessSym3`] is stored as five coordinates in an orthonormal basis of
//! the traceless symmetric matrices under the Frobenius inner product, so the
//! Euclidean dot product of coordinates equals `A : B = sum_ij A_ij B_ij`.
//! The basis is
//!
//! ```text
//! E1 = diag(1, -1, 0) / sqrt(2)      E3 = (e1 e2 + e2 e1) / sqrt(2)
//! E2 = diag(1, 1, -2) / sqrt(6)      E4 = (e1 e3 + e3 e1) / sqrt(2)
//!                                    E5 = (e2 e3 + e3 e2) / sqrt(2)
//! ```

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub type Vec3 = [f64; 3];
/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

const SQRT2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1/sqrt(6)
const INV_SQRT6: f64 = 0.408_248_290_463_863_f64;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TracelessSym3 {
    coords: [f64; 5],
}

impl TracelessSym3 {
    pub const ZERO: Self = Self { coords: [0.0; 5] };

    pub fn zero() -> Self {
        Self::ZERO
    }

    pub fn from_coords(coords: [f64; 5]) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> [f64; 5] {
        self.coords
    }

    /// The `i`-th orthonormal basis element.
    pub fn basis(i: usize) -> Self {
        let mut coords = [0.0; 5];
        coords[i] = 1.0;
        Self { coords }
    }

    /// Projects an arbitrary 3x3 matrix onto the traceless symmetric part.
    pub fn from_matrix(m: &Mat3) -> Self {
        let s01 = 0.5 * (m[0][1] + m[1][0]);
        let s02 = 0.5 * (m[0][2] + m[2][0]);
        let s12 = 0.5 * (m[1][2] + m[2][1]);
        Self {
            coords: [
                (m[0][0] - m[1][1]) * INV_SQRT2,
                (m[0][0] + m[1][1] - 2.0 * m[2][2]) * INV_SQRT6,
                SQRT2 * s01,
                SQRT2 * s02,
                SQRT2 * s12,
            ],
        }
    }

    /// `diag(d)` with the mean removed.
    pub fn from_diagonal(d: Vec3) -> Self {
        Self {
            coords: [
                (d[0] - d[1]) * INV_SQRT2,
                (d[0] + d[1] - 2.0 * d[2]) * INV_SQRT6,
                0.0,
                0.0,
                0.0,
            ],
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [c1, c2, c3, c4, c5] = self.coords;
        let a = c1 * INV_SQRT2;
        let b = c2 * INV_SQRT6;
        let o01 = c3 * INV_SQRT2;
        let o02 = c4 * INV_SQRT2;
        let o12 = c5 * INV_SQRT2;
        [[a + b, o01, o02], [o01, -a + b, o12], [o02, o12, -2.0 * b]]
    }

    /// Diagonal entries `(Q11, Q22, Q33)`.
    pub fn diagonal(&self) -> Vec3 {
        let a = self.coords[0] * INV_SQRT2;
        let b = self.coords[1] * INV_SQRT6;
        [a + b, -a + b, -2.0 * b]
    }

    /// `p (x) p - I/3` for any vector `p` (not necessarily unit).
    pub fn dyad(p: Vec3) -> Self {
        let [x, y, z] = p;
        Self {
            coords: [
                (x * x - y * y) * INV_SQRT2,
                (x * x + y * y - 2.0 * z * z) * INV_SQRT6,
                SQRT2 * x * y,
                SQRT2 * x * z,
                SQRT2 * y * z,
            ],
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coords.iter().zip(other.coords.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `p . Q p`.
    pub fn quad_form(&self, p: Vec3) -> f64 {
        // Q traceless, so Q : (p p) = Q : (p p - I/3) for unit p; the general
        // form below holds for any p.
        let m = self.to_matrix();
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m[i][j] * p[i] * p[j];
            }
        }
        s
    }

    /// `R Q R^T`.
    pub fn rotate(&self, r: &Mat3) -> Self {
        let m = self.to_matrix();
        Self::from_matrix(&mat_mul(&mat_mul(r, &m), &transpose(r)))
    }

    /// `R^T Q R`.
    pub fn rotate_inv(&self, r: &Mat3) -> Self {
        let m = self.to_matrix();
        Self::from_matrix(&mat_mul(&mat_mul(&transpose(r), &m), r))
    }

    pub fn trace(&self) -> f64 {
        let m = self.to_matrix();
        m[0][0] + m[1][1] + m[2][2]
    }

    /// Frobenius norm of `[self, other]`.
    pub fn commutator_norm(&self, other: &Self) -> f64 {
        let a = self.to_matrix();
        let b = other.to_matrix();
        let ab = mat_mul(&a, &b);
        let ba = mat_mul(&b, &a);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = ab[i][j] - ba[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    pub fn eig(&self) -> EigenFrame {
        eig(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eig(self).values[2]
    }
}

impl Add for TracelessSym3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(rhs.coords) {
            *a += b;
        }
        Self { coords: c }
    }
}

impl AddAssign for TracelessSym3 {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.coords.iter_mut().zip(rhs.coords) {
            *a += b;
        }
    }
}

impl Sub for TracelessSym3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for TracelessSym3 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl Mul<f64> for TracelessSym3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self {
            coords: self.coords.map(|c| c * s),
        }
    }
}

impl Mul<TracelessSym3> for f64 {
    type Output = TracelessSym3;
    fn mul(self, q: TracelessSym3) -> TracelessSym3 {
        q * self
    }
}

/// `S (n (x) n - I/3)`.
pub fn uniaxial(s: f64, n: Vec3) -> TracelessSym3 {
    TracelessSym3::dyad(n) * s
}

/// Whether `Q` lies in the open set where the macroscopic energy is finite:
/// `v_min(Q) > -1/3` and `|Q|^2 > eta`.
pub fn in_domain_of_j(q: &TracelessSym3, eta: f64) -> bool {
    q.min_eigenvalue() > -1.0 / 3.0 && q.norm_sq() > eta
}

/// Eigenvalues sorted descending, with a proper rotation whose columns are the
/// matching eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenFrame {
    pub values: Vec3,
    pub rotation: Mat3,
}

impl EigenFrame {
    pub fn vector(&self, i: usize) -> Vec3 {
        [self.rotation[0][i], self.rotation[1][i], self.rotation[2][i]]
    }

    /// `R diag(values) R^T`.
    pub fn reconstruct(&self) -> TracelessSym3 {
        TracelessSym3::from_diagonal(self.values).rotate(&self.rotation)
    }

    /// Maps frame coordinates to the original basis.
    pub fn to_lab(&self, p: Vec3) -> Vec3 {
        mat_vec(&self.rotation, p)
    }
}

/// Relative eigenvalue gap below which the Jacobi sweep replaces the
/// cross-product eigenvector construction.
const NEAR_DEGENERATE: f64 = 1e-5;

pub fn eig(q: &TracelessSym3) -> EigenFrame {
    let m = q.to_matrix();
    let scale = q.norm();
    if scale == 0.0 {
        return EigenFrame {
            values: [0.0; 3],
            rotation: IDENTITY,
        };
    }
    let values = trig_eigenvalues(&m);
    let gap = (values[0] - values[1]).min(values[1] - values[2]);
    if gap <= NEAR_DEGENERATE * scale {
        return jacobi_eig(&m);
    }
    let v0 = null_vector(&m, values[0]);
    let v2 = null_vector(&m, values[2]);
    // Complete to a right-handed frame, then re-orthogonalise v2.
    let v1 = normalize(cross(v2, v0));
    let v2 = normalize(cross(v0, v1));
    let rotation = from_columns(v0, v1, v2);
    EigenFrame { values, rotation }
}

/// Closed-form roots of the characteristic cubic of a symmetric traceless
/// matrix, descending.
fn trig_eigenvalues(m: &Mat3) -> Vec3 {
    // For traceless A: lambda^3 - (|A|^2/2) lambda - det A = 0.
    let mut fro = 0.0;
    for row in m {
        for x in row {
            fro += x * x;
        }
    }
    let p = (fro / 6.0).sqrt();
    if p == 0.0 {
        return [0.0; 3];
    }
    let det = det3(m);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
    let l0 = 2.0 * p * phi.cos();
    let l2 = 2.0 * p * (phi + two_pi_3).cos();
    let l1 = -l0 - l2;
    [l0, l1, l2]
}

fn null_vector(m: &Mat3, lambda: f64) -> Vec3 {
    let rows = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let candidates = [
        cross(rows[0], rows[1]),
        cross(rows[0], rows[2]),
        cross(rows[1], rows[2]),
    ];
    let best = candidates
        .iter()
        .copied()
        .max_by(|a, b| dot(*a, *a).total_cmp(&dot(*b, *b)))
        .expect("three candidates");
    normalize(best)
}

fn jacobi_eig(m: &Mat3) -> EigenFrame {
    let mut a = *m;
    let mut v = IDENTITY;
    for _sweep in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-30 {
            break;
        }
        for (p, r) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][r].abs() < 1e-300 {
                continue;
            }
            let theta = (a[r][r] - a[p][p]) / (2.0 * a[p][r]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut g = IDENTITY;
            g[p][p] = c;
            g[r][r] = c;
            g[p][r] = s;
            g[r][p] = -s;
            a = mat_mul(&mat_mul(&transpose(&g), &a), &g);
            v = mat_mul(&v, &g);
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.map(|i| a[i][i]);
    let col = |i: usize| [v[0][i], v[1][i], v[2][i]];
    let v0 = col(order[0]);
    let v1 = col(order[1]);
    let mut v2 = col(order[2]);
    if det3(&from_columns(v0, v1, v2)) < 0.0 {
        v2 = v2.map(|x| -x);
    }
    EigenFrame {
        values,
        rotation: from_columns(v0, v1, v2),
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    a.map(|x| x / n)
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn det3(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
    [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let [x, y, z] = normalize(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation from a (not necessarily unit) quaternion `(w, x, y, z)`.
pub fn quaternion_rotation(q: [f64; 4]) -> Mat3 {
    let n = (q.iter().map(|c| c * c).sum::<f64>()).sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}
