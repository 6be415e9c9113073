//! Sub-Riemannian structures: frames, Hamiltonians and reference measures.
//!
//! Every structure is stored as a polynomial frame `X_i = sum_j F_ij(q) d/dq_j`,
//! so the Hessian blocks needed by the variational flow are exact.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Points and covectors are plain coordinate vectors; the model fixes their
/// length.
pub type Point = DVector<f64>;
pub type Covector = DVector<f64>;

const SKEW_TOL: f64 = 1e-12;
const STRUCTURE_TOL: f64 = 1e-12;
const MAX_GENERIC_DEGREE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Heisenberg3,
    Grushin2,
    HType,
    GenericFrame,
}

/// Parameters of a generalized H-type group with first layer `R^k` and
/// second layer `R^(n-k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HTypeParams {
    pub n: usize,
    pub k: usize,
    /// One skew `k x k` operator per second-layer direction.
    pub j: Vec<DMatrix<f64>>,
    pub s: DMatrix<f64>,
}

/// Outcome of [`htype_structure_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub holds: bool,
    /// `(alpha, beta, max-abs defect)` for every failing pair.
    pub violations: Vec<(usize, usize, f64)>,
}

/// Frame coefficients and their exact first and second partial derivatives.
#[derive(Debug, Clone)]
pub struct PolyFrame {
    n: usize,
    m: usize,
    coef: Vec<Polynomial>,
    // d1[k]: nonzero entries of dF/dq_k as (flat index, polynomial)
    d1: Vec<Vec<(usize, Polynomial)>>,
    // d2[k * n + l]
    d2: Vec<Vec<(usize, Polynomial)>>,
}

impl PolyFrame {
    /// `fields[i][j]` is component `j` of vector field `i`.
    pub fn new(n: usize, fields: Vec<Vec<Polynomial>>) -> Result<Self> {
        let m = fields.len();
        if m == 0 {
            return Err(Error::input("frame needs at least one vector field"));
        }
        let mut coef = Vec::with_capacity(m * n);
        for (i, f) in fields.into_iter().enumerate() {
            if f.len() != n {
                return Err(Error::input(format!(
                    "vector field {i} has {} components, expected {n}",
                    f.len()
                )));
            }
            for p in f {
                if p.nvars() != n {
                    return Err(Error::input(format!(
                        "frame coefficient in {} variables, expected {n}",
                        p.nvars()
                    )));
                }
                coef.push(p);
            }
        }
        let nonzero = |v: Vec<Polynomial>| -> Vec<(usize, Polynomial)> {
            v.into_iter()
                .enumerate()
                .filter(|(_, p)| !p.is_zero())
                .collect()
        };
        let d1: Vec<Vec<(usize, Polynomial)>> = (0..n)
            .map(|k| nonzero(coef.iter().map(|p| p.derivative(k)).collect()))
            .collect();
        let mut d2 = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                d2.push(nonzero(
                    coef.iter()
                        .map(|p| p.derivative(k).derivative(l))
                        .collect(),
                ));
            }
        }
        Ok(PolyFrame { n, m, coef, d1, d2 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// True when every coefficient is affine, so second derivatives vanish.
    pub fn is_affine(&self) -> bool {
        self.d2.iter().all(|e| e.is_empty())
    }

    pub fn max_degree(&self) -> u32 {
        self.coef.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    /// The `m x n` coefficient matrix `F(q)`.
    pub fn eval(&self, q: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.m, self.n);
        for (idx, p) in self.coef.iter().enumerate() {
            if !p.is_zero() {
                f[(idx / self.n, idx % self.n)] = p.eval(q);
            }
        }
        f
    }

    /// `dF/dq_k` for every `k`.
    pub fn eval_d1(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        self.d1.iter().map(|entries| self.fill(entries, q)).collect()
    }

    /// `d2F/dq_k dq_l` stored at index `k * n + l`.
    pub fn eval_d2(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        self.d2.iter().map(|entries| self.fill(entries, q)).collect()
    }

    fn fill(&self, entries: &[(usize, Polynomial)], q: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.m, self.n);
        for (idx, p) in entries {
            f[(idx / self.n, idx % self.n)] = p.eval(q);
        }
        f
    }
}

/// A supported sub-Riemannian structure together with its reference measure.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    kind: ModelKind,
    dim: usize,
    rank: usize,
    htype: Option<HTypeParams>,
    frame: PolyFrame,
    density: Option<Polynomial>,
}

impl ModelSpec {
    /// Heisenberg group with `X1 = d_x - (y/2) d_z`, `X2 = d_y + (x/2) d_z`.
    pub fn heisenberg() -> Self {
        let c = |v: f64| Polynomial::constant(3, v);
        let z = || Polynomial::zero(3);
        let fields = vec![
            vec![c(1.0), z(), Polynomial::linear(3, 1, -0.5)],
            vec![z(), c(1.0), Polynomial::linear(3, 0, 0.5)],
        ];
        ModelSpec {
            kind: ModelKind::Heisenberg3,
            dim: 3,
            rank: 2,
            htype: None,
            frame: PolyFrame::new(3, fields).expect("static frame"),
            density: None,
        }
    }

    /// Grushin plane with `X1 = d_x`, `X2 = x d_y`.
    pub fn grushin() -> Self {
        let fields = vec![
            vec![Polynomial::constant(2, 1.0), Polynomial::zero(2)],
            vec![Polynomial::zero(2), Polynomial::linear(2, 0, 1.0)],
        ];
        ModelSpec {
            kind: ModelKind::Grushin2,
            dim: 2,
            rank: 2,
            htype: None,
            frame: PolyFrame::new(2, fields).expect("static frame"),
            density: None,
        }
    }

    /// Generalized H-type group in exponential coordinates `(x, z)`, with
    /// `X_i = d_{x_i} + 1/2 sum_a (J_a x)_i d_{z_a}`.
    pub fn htype(params: HTypeParams) -> Result<Self> {
        let report = htype_structure_check(&params)?;
        if !report.holds {
            return Err(Error::input(format!(
                "H-type structure identity fails for pairs {:?}",
                report
                    .violations
                    .iter()
                    .map(|v| (v.0, v.1))
                    .collect::<Vec<_>>()
            )));
        }
        let HTypeParams { n, k, .. } = params;
        let mut fields = Vec::with_capacity(k);
        for i in 0..k {
            let mut row: Vec<Polynomial> = (0..n).map(|_| Polynomial::zero(n)).collect();
            row[i] = Polynomial::constant(n, 1.0);
            for (a, ja) in params.j.iter().enumerate() {
                // (J_a x)_i = sum_l J_a[i,l] x_l
                let mut p = Polynomial::zero(n);
                for l in 0..k {
                    if ja[(i, l)] != 0.0 {
                        p = p.add(&Polynomial::linear(n, l, 0.5 * ja[(i, l)]));
                    }
                }
                row[k + a] = p;
            }
            fields.push(row);
        }
        Ok(ModelSpec {
            kind: ModelKind::HType,
            dim: n,
            rank: k,
            htype: Some(params),
            frame: PolyFrame::new(n, fields)?,
            density: None,
        })
    }

    /// User-supplied frame of polynomial coefficients of degree at most 3,
    /// with an optional polynomial density for the reference measure.
    pub fn generic(
        dim: usize,
        fields: Vec<Vec<Polynomial>>,
        density: Option<Polynomial>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        let frame = PolyFrame::new(dim, fields)?;
        if frame.max_degree() > MAX_GENERIC_DEGREE {
            return Err(Error::input(format!(
                "frame coefficients have degree {}, at most {MAX_GENERIC_DEGREE} supported",
                frame.max_degree()
            )));
        }
        if let Some(d) = &density {
            if d.nvars() != dim {
                return Err(Error::input("density polynomial has wrong arity"));
            }
        }
        Ok(ModelSpec {
            kind: ModelKind::GenericFrame,
            dim,
            rank: frame.size(),
            htype: None,
            frame,
            density,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn htype_params(&self) -> Option<&HTypeParams> {
        self.htype.as_ref()
    }

    pub fn frame(&self) -> &PolyFrame {
        &self.frame
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Heisenberg3 => "heisenberg",
            ModelKind::Grushin2 => "grushin",
            ModelKind::HType => "htype",
            ModelKind::GenericFrame => "generic",
        }
    }

    pub(crate) fn check_len(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::input(format!(
                "{what} has {} coordinates, model {} has dimension {}",
                v.len(),
                self.name(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// `H(x, lambda)` evaluated from the model's own formula.
pub fn hamiltonian(model: &ModelSpec, x: &[f64], lambda: &[f64]) -> Result<f64> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    Ok(match model.kind {
        ModelKind::Heisenberg3 => {
            let (u, v, w) = (lambda[0], lambda[1], lambda[2]);
            let h1 = u - 0.5 * x[1] * w;
            let h2 = v + 0.5 * x[0] * w;
            0.5 * (h1 * h1 + h2 * h2)
        }
        ModelKind::Grushin2 => 0.5 * (lambda[0] * lambda[0] + x[0] * x[0] * lambda[1] * lambda[1]),
        ModelKind::HType => {
            let p = model.htype.as_ref().expect("htype params");
            let k = p.k;
            let xs = DVector::from_column_slice(&x[..k]);
            let mut h = DVector::from_column_slice(&lambda[..k]);
            for (a, ja) in p.j.iter().enumerate() {
                h += (ja * &xs) * (0.5 * lambda[k + a]);
            }
            0.5 * h.norm_squared()
        }
        ModelKind::GenericFrame => frame_hamiltonian(model, x, lambda)?,
    })
}

/// `1/2 sum_i <lambda, X_i(x)>^2` computed from the generating frame.
pub fn frame_hamiltonian(model: &ModelSpec, x: &[f64], lambda: &[f64]) -> Result<f64> {
    model.check_len(x, "point")?;
    model.check_len(lambda, "covector")?;
    let f = model.frame.eval(x);
    let h = f * DVector::from_column_slice(lambda);
    Ok(0.5 * h.norm_squared())
}

/// The frame vectors at `x`, one coordinate vector per field.
pub fn generating_frame(model: &ModelSpec, x: &[f64]) -> Result<Vec<DVector<f64>>> {
    model.check_len(x, "point")?;
    let f = model.frame.eval(x);
    Ok((0..f.nrows()).map(|i| f.row(i).transpose()).collect())
}

/// Checks `J_a J_b + J_b J_a = -2 delta_ab S^2` over all basis pairs.
pub fn htype_structure_check(params: &HTypeParams) -> Result<StructureReport> {
    let HTypeParams { n, k, j, s } = params;
    if *k == 0 || *n <= *k {
        return Err(Error::input(format!(
            "need 1 <= k < n, got n={n}, k={k}"
        )));
    }
    if j.len() != n - k {
        return Err(Error::input(format!(
            "expected {} operators J, got {}",
            n - k,
            j.len()
        )));
    }
    if s.shape() != (*k, *k) {
        return Err(Error::input("S must be k x k"));
    }
    for (a, ja) in j.iter().enumerate() {
        if ja.shape() != (*k, *k) {
            return Err(Error::input(format!("J_{a} must be k x k")));
        }
        let skew = (ja + ja.transpose()).amax();
        if skew > SKEW_TOL {
            return Err(Error::input(format!(
                "J_{a} is not skew-symmetric (defect {skew:e})"
            )));
        }
    }
    if (s - s.transpose()).amax() > SKEW_TOL {
        return Err(Error::input("S is not symmetric"));
    }
    let eig = s.clone().symmetric_eigen().eigenvalues;
    if eig.min() < -SKEW_TOL {
        return Err(Error::input("S is not non-negative"));
    }
    if s.amax() == 0.0 {
        return Err(Error::input("S is zero"));
    }
    let s2 = s * s;
    let mut violations = Vec::new();
    for a in 0..j.len() {
        for b in a..j.len() {
            let mut d = &j[a] * &j[b] + &j[b] * &j[a];
            if a == b {
                d += &s2 * 2.0;
            }
            let defect = d.amax();
            if defect > STRUCTURE_TOL {
                violations.push((a, b, defect));
            }
        }
    }
    Ok(StructureReport {
        holds: violations.is_empty(),
        violations,
    })
}

/// Density of the reference measure with respect to coordinate Lebesgue
/// measure.
pub fn measure_density(model: &ModelSpec, x: &[f64]) -> f64 {
    match &model.density {
        Some(d) => d.eval(x),
        None => 1.0,
    }
}

/// Heisenberg group law matching the frame: left translations map the frame
/// at the origin onto the frame at `a`.
pub fn heisenberg_mul(a: &[f64], b: &[f64]) -> Point {
    DVector::from_vec(vec![
        a[0] + b[0],
        a[1] + b[1],
        a[2] + b[2] + 0.5 * (a[0] * b[1] - a[1] * b[0]),
    ])
}

pub fn heisenberg_inv(a: &[f64]) -> Point {
    DVector::from_vec(vec![-a[0], -a[1], -a[2]])
}

/// The standard complex structure on `R^k` (k even) paired with `S = I`.
pub fn complex_structure(k: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(k, k);
    for i in (0..k).step_by(2) {
        j[(i, i + 1)] = 1.0;
        j[(i + 1, i)] = -1.0;
    }
    j
}
