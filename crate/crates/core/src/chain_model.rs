//! Closed-form dynamics terms of an unconstrained planar serial revolute chain.
//!
//! Coordinates are relative joint angles, measured from the downward vertical
//! and positive counterclockwise, so `q = 0` is the hanging equilibrium and the
//! potential energy is anchored at zero there. With the absolute link angles
//! `phi_i = q_1 + ... + q_i`, every dynamics term reduces to trigonometric
//! combinations of constant mass moments, which are cached per model:
//!
//! * `coupling[j][k]`: the mass moment coupling links j and k, so that the
//!   mass matrix in absolute angles is `coupling[j][k] * cos(phi_j - phi_k)`
//!   plus the COM inertias on the diagonal;
//! * `grav_moment[j]`: the first mass moment carried by link j, which gives
//!   the potential `V = g * sum_j grav_moment[j] * (1 - cos phi_j)`.
//!
//! Relative-angle quantities follow by congruence with the lower-triangular
//! ones matrix (cumulative sums), implemented as suffix sums.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Geometry and inertia of a single link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Link length in meters.
    pub length: f64,
    /// Link mass in kilograms.
    pub mass: f64,
    /// Distance from the inboard joint to the center of mass, in meters.
    pub com_offset: f64,
    /// Moment of inertia about the joint-parallel axis through the COM, kg m^2.
    pub inertia_com: f64,
}

impl LinkParams {
    fn validate(&self, index: usize) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::InvalidModel(format!(
                "link {}: length must be positive",
                index + 1
            )));
        }
        if !(self.mass > 0.0) {
            return Err(Error::InvalidModel(format!(
                "link {}: mass must be positive",
                index + 1
            )));
        }
        if !(0.0..=self.length).contains(&self.com_offset) {
            return Err(Error::InvalidModel(format!(
                "link {}: com_offset must lie within [0, length]",
                index + 1
            )));
        }
        if !(self.inertia_com > 0.0) {
            return Err(Error::InvalidModel(format!(
                "link {}: inertia_com must be positive",
                index + 1
            )));
        }
        Ok(())
    }
}

/// Instantaneous state of the chain: time, joint angles and joint rates.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl State {
    pub fn new(t: f64, q: DVector<f64>, qd: DVector<f64>) -> Result<Self> {
        if q.len() != qd.len() {
            return Err(Error::DimensionMismatch(format!(
                "q has {} entries, qd has {}",
                q.len(),
                qd.len()
            )));
        }
        Ok(Self { t, q, qd })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().all(|v| v.is_finite()) && self.qd.iter().all(|v| v.is_finite())
    }
}

type ForceFn = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync;

/// Generalized forces acting on the chain: the applied control force `u` and
/// the remaining system forces `Q`. Both default to zero.
#[derive(Default)]
pub struct ForceLaw {
    applied: Option<Box<ForceFn>>,
    other: Option<Box<ForceFn>>,
}

impl ForceLaw {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_applied<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.applied = Some(Box::new(f));
        self
    }

    pub fn with_other<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.other = Some(Box::new(f));
        self
    }

    /// Control force u(q, qd, t).
    pub fn applied(&self, q: &DVector<f64>, qd: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.applied {
            Some(f) => f(q, qd, t),
            None => DVector::zeros(q.len()),
        }
    }

    /// Remaining generalized force Q(q, qd, t).
    pub fn other(&self, q: &DVector<f64>, qd: &DVector<f64>, t: f64) -> DVector<f64> {
        match &self.other {
            Some(f) => f(q, qd, t),
            None => DVector::zeros(q.len()),
        }
    }
}

impl std::fmt::Debug for ForceLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForceLaw")
            .field("applied", &self.applied.as_ref().map(|_| "fn"))
            .field("other", &self.other.as_ref().map(|_| "fn"))
            .finish()
    }
}

/// Kinetic, potential and total energy of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// A planar serial chain of revolute joints under gravity.
#[derive(Debug, Clone)]
pub struct ChainModel {
    links: Vec<LinkParams>,
    gravity: f64,
    // Constant mass moments; see module docs.
    coupling: DMatrix<f64>,
    grav_moment: DVector<f64>,
}

impl ChainModel {
    pub fn new(links: Vec<LinkParams>, gravity: f64) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidModel("chain needs at least one link".into()));
        }
        if !(gravity >= 0.0) {
            return Err(Error::InvalidModel("gravity must be non-negative".into()));
        }
        for (i, link) in links.iter().enumerate() {
            link.validate(i)?;
        }

        let n = links.len();
        // Mass carried outboard of each link (links i > j).
        let mut outboard = vec![0.0; n];
        for j in (0..n.saturating_sub(1)).rev() {
            outboard[j] = outboard[j + 1] + links[j + 1].mass;
        }

        let mut coupling = DMatrix::zeros(n, n);
        for j in 0..n {
            let lj = &links[j];
            coupling[(j, j)] = lj.mass * lj.com_offset * lj.com_offset + lj.length * lj.length * outboard[j];
            for k in (j + 1)..n {
                let lk = &links[k];
                let b = lj.length * (lk.mass * lk.com_offset + lk.length * outboard[k]);
                coupling[(j, k)] = b;
                coupling[(k, j)] = b;
            }
        }
        let grav_moment = DVector::from_iterator(
            n,
            links
                .iter()
                .zip(&outboard)
                .map(|(l, &mo)| l.mass * l.com_offset + l.length * mo),
        );

        Ok(Self {
            links,
            gravity,
            coupling,
            grav_moment,
        })
    }

    pub fn n(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkParams] {
        &self.links
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} entries, model has {} joints",
                what,
                len,
                self.n()
            )));
        }
        Ok(())
    }

    fn abs_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        let mut phi = Vec::with_capacity(q.len());
        let mut acc = 0.0;
        for &qi in q.iter() {
            acc += qi;
            phi.push(acc);
        }
        phi
    }

    /// Generalized mass matrix M(q). Symmetric positive definite.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q.len(), "q")?;
        let n = self.n();
        let phi = self.abs_angles(q);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                m[(j, k)] = self.coupling[(j, k)] * (phi[j] - phi[k]).cos();
            }
            m[(j, j)] += self.links[j].inertia_com;
        }
        suffix_sum(&mut m);
        Ok(m)
    }

    /// Partial derivatives dM/dq_r for r = 0..n.
    pub fn mass_matrix_partials(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(q.len(), "q")?;
        let n = self.n();
        let phi = self.abs_angles(q);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let mut d = DMatrix::zeros(n, n);
            // d/dq_r of cos(phi_j - phi_k) is -sin(phi_j - phi_k) * ([j>=r] - [k>=r]),
            // nonzero only when exactly one of j, k is >= r.
            for j in 0..n {
                for k in 0..n {
                    let sign = (j >= r) as i32 - (k >= r) as i32;
                    if sign != 0 {
                        d[(j, k)] = -self.coupling[(j, k)] * (phi[j] - phi[k]).sin() * sign as f64;
                    }
                }
            }
            suffix_sum(&mut d);
            out.push(d);
        }
        Ok(out)
    }

    /// Coriolis/centrifugal matrix C(q, qd) built from the Christoffel symbols
    /// of M, so that Mdot - 2C is skew-symmetric.
    pub fn coriolis_matrix(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q.len(), "q")?;
        self.check_dim(qd.len(), "qd")?;
        let n = self.n();
        let dm = self.mass_matrix_partials(q)?;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut sum = 0.0;
                for k in 0..n {
                    let gamma = 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]);
                    sum += gamma * qd[k];
                }
                c[(i, j)] = sum;
            }
        }
        Ok(c)
    }

    /// Quadratic velocity force C(q, qd) qd.
    pub fn coriolis_vector(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.coriolis_matrix(q, qd)? * qd)
    }

    /// Generalized potential force P(q) = dV/dq.
    pub fn gravity_vector(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(q.len(), "q")?;
        let n = self.n();
        let phi = self.abs_angles(q);
        let mut p = DVector::zeros(n);
        let mut acc = 0.0;
        for j in (0..n).rev() {
            acc += self.grav_moment[j] * phi[j].sin();
            p[j] = self.gravity * acc;
        }
        Ok(p)
    }

    /// Potential energy, zero in the hanging configuration q = 0.
    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64> {
        self.check_dim(q.len(), "q")?;
        let phi = self.abs_angles(q);
        let v = phi
            .iter()
            .zip(self.grav_moment.iter())
            .map(|(&p, &k)| k * (1.0 - p.cos()))
            .sum::<f64>();
        Ok(self.gravity * v)
    }

    /// Kinetic, potential and total energy at a state.
    pub fn energies(&self, s: &State) -> Result<Energies> {
        let m = self.mass_matrix(&s.q)?;
        self.check_dim(s.qd.len(), "qd")?;
        let kinetic = 0.5 * s.qd.dot(&(&m * &s.qd));
        let potential = self.potential_energy(&s.q)?;
        Ok(Energies {
            kinetic,
            potential,
            total: kinetic + potential,
        })
    }

    /// Acceleration of the unconstrained chain: solves
    /// M qdd = u - C qd - P - Q.
    pub fn unconstrained_accel(&self, forces: &ForceLaw, s: &State) -> Result<DVector<f64>> {
        let m = self.mass_matrix(&s.q)?;
        let rhs = self.bias_force(forces, s)?;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("mass matrix is not positive definite".into()))?;
        Ok(chol.solve(&rhs))
    }

    /// Right-hand side u - C qd - P - Q of the unconstrained equations.
    pub fn bias_force(&self, forces: &ForceLaw, s: &State) -> Result<DVector<f64>> {
        self.check_dim(s.q.len(), "q")?;
        self.check_dim(s.qd.len(), "qd")?;
        let u = forces.applied(&s.q, &s.qd, s.t);
        let q_force = forces.other(&s.q, &s.qd, s.t);
        self.check_dim(u.len(), "u")?;
        self.check_dim(q_force.len(), "Q")?;
        Ok(u - self.coriolis_vector(&s.q, &s.qd)? - self.gravity_vector(&s.q)? - q_force)
    }
}

/// In-place suffix sum over rows then columns: out[(r,s)] = sum_{j>=r, k>=s} m[(j,k)].
/// This is congruence with the lower-triangular ones matrix, i.e. the change of
/// variables from absolute to relative joint angles.
fn suffix_sum(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for s in 0..n {
        for j in (0..n - 1).rev() {
            m[(j, s)] += m[(j + 1, s)];
        }
    }
    for r in 0..n {
        for s in (0..n - 1).rev() {
            m[(r, s)] += m[(r, s + 1)];
        }
    }
}
