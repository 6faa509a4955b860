//! Halfspace-represented polytopes `{x : C x ≤ d}` and the LP-backed
//! operations the invariant-set and sampling code rely on.

pub mod lp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
pub use lp::{LpOutcome, LpStatus, Sense};

/// Rows whose norm falls below this are treated as constant constraints.
const ZERO_ROW: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Slack allowed when deciding redundancy, inclusion and set equality.
    pub geometric: f64,
    /// Phase-one infeasibility threshold of the LP kernel.
    pub lp_feasibility: f64,
    /// Maximum number of rows a single Fourier-Motzkin step may create.
    pub fm_row_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            geometric: 1e-7,
            lp_feasibility: 1e-8,
            fm_row_cap: 10_000,
        }
    }
}

/// The polytope `{x ∈ Rⁿ : C x ≤ d}` with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct HPolytope {
    c: DMatrix<f64>,
    d: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevBall {
    pub center: DVector<f64>,
    pub radius: f64,
    /// The polytope has empty interior (radius is zero within tolerance).
    pub flat: bool,
}

impl HPolytope {
    /// Builds a polytope, normalizing every row to unit norm. Zero rows are rejected.
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if c.nrows() != d.len() {
            return Err(Error::dim("polytope offsets", c.nrows(), d.len()));
        }
        if c.ncols() == 0 {
            return Err(Error::InvalidArgument("polytope must have dimension ≥ 1".into()));
        }
        let mut p = HPolytope { c, d };
        for i in 0..p.c.nrows() {
            let norm = p.c.row(i).norm();
            if !(norm > ZERO_ROW) || !p.d[i].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "constraint row {i} has zero norm or non-finite entries"
                )));
            }
            // Already-unit rows stay bit-identical so serialization round-trips.
            if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
                p.c.row_mut(i).scale_mut(1.0 / norm);
                p.d[i] /= norm;
            }
        }
        Ok(p)
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], d: &[f64]) -> Result<Self> {
        let mut c = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::dim(format!("polytope row {i}"), dim, r.len()));
            }
            for (j, &v) in r.iter().enumerate() {
                c[(i, j)] = v;
            }
        }
        Self::new(c, DVector::from_column_slice(d))
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn bounding_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("box bounds", lo.len(), hi.len()));
        }
        let n = lo.len();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut d = DVector::zeros(2 * n);
        for i in 0..n {
            c[(2 * i, i)] = 1.0;
            d[2 * i] = hi[i];
            c[(2 * i + 1, i)] = -1.0;
            d[2 * i + 1] = -lo[i];
        }
        Self::new(c, d)
    }

    /// All of `Rⁿ`.
    pub fn universe(dim: usize) -> Self {
        HPolytope {
            c: DMatrix::zeros(0, dim),
            d: DVector::zeros(0),
        }
    }

    /// A canonical empty set: `x₁ ≤ -1` and `-x₁ ≤ -1`.
    pub fn empty(dim: usize) -> Self {
        let mut c = DMatrix::zeros(2, dim);
        c[(0, 0)] = 1.0;
        c[(1, 0)] = -1.0;
        HPolytope {
            c,
            d: DVector::from_vec(vec![-1.0, -1.0]),
        }
    }

    /// Like [`HPolytope::new`] but resolves zero rows instead of rejecting them:
    /// `0 ≤ δ` rows are dropped, `0 ≤ δ < 0` rows make the result empty.
    pub(crate) fn from_raw_lenient(c: DMatrix<f64>, d: DVector<f64>, tol: f64) -> Self {
        let dim = c.ncols();
        let mut rows = Vec::new();
        let mut offs = Vec::new();
        for i in 0..c.nrows() {
            let norm = c.row(i).norm();
            if norm <= ZERO_ROW {
                if d[i] < -tol {
                    return Self::empty(dim);
                }
                continue;
            }
            rows.push(c.row(i) / norm);
            offs.push(d[i] / norm);
        }
        if rows.is_empty() {
            return Self::universe(dim);
        }
        HPolytope {
            c: DMatrix::from_rows(&rows),
            d: DVector::from_vec(offs),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    fn check_dim(&self, what: &str, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::dim(what, self.dim(), n));
        }
        Ok(())
    }

    /// True iff `C x ≤ d + tol` componentwise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        self.max_violation(x) <= tol
    }

    /// `max_i (c_i·x − d_i)`, or `-∞` for a polytope without rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.n_rows())
            .map(|i| self.c.row(i).dot(&x.transpose()) - self.d[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lp_solve(&self, objective: &DVector<f64>, sense: Sense) -> Result<LpOutcome> {
        self.lp_solve_with(objective, sense, &Tolerances::default())
    }

    pub fn lp_solve_with(
        &self,
        objective: &DVector<f64>,
        sense: Sense,
        tol: &Tolerances,
    ) -> Result<LpOutcome> {
        self.check_dim("LP objective", objective.len())?;
        Ok(match sense {
            Sense::Max => lp::maximize(objective, &self.c, &self.d, tol.lp_feasibility),
            Sense::Min => {
                let mut out = lp::maximize(&-objective, &self.c, &self.d, tol.lp_feasibility);
                out.value = -out.value;
                out
            }
        })
    }

    pub fn is_feasible(&self) -> bool {
        self.is_feasible_with(&Tolerances::default())
    }

    pub fn is_feasible_with(&self, tol: &Tolerances) -> bool {
        let zero = DVector::zeros(self.dim());
        lp::maximize(&zero, &self.c, &self.d, tol.lp_feasibility).is_optimal()
    }

    /// `self ⊆ other`: every row of `other` is satisfied by all of `self` within `tol`.
    /// An empty `self` is a subset of anything.
    pub fn is_subset(&self, other: &HPolytope, tol: f64) -> Result<bool> {
        self.check_dim("subset test", other.dim())?;
        let lp_tol = Tolerances::default().lp_feasibility;
        for i in 0..other.n_rows() {
            let row = other.c.row(i).transpose();
            let out = lp::maximize(&row, &self.c, &self.d, lp_tol);
            match out.status {
                LpStatus::Infeasible => return Ok(true),
                LpStatus::Unbounded => {
                    return Err(Error::Geometry(format!(
                        "subset test inconclusive: row {i} is unbounded over the candidate subset"
                    )))
                }
                LpStatus::Optimal => {
                    if out.value > other.d[i] + tol {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    pub fn remove_redundant(&self) -> Result<HPolytope> {
        self.remove_redundant_with(&Tolerances::default())
    }

    /// Drops every row implied by the remaining ones. Fails on an empty polytope.
    pub fn remove_redundant_with(&self, tol: &Tolerances) -> Result<HPolytope> {
        if !self.is_feasible_with(tol) {
            return Err(Error::EmptyPolytope);
        }
        // Parallel duplicates: keep the tightest offset.
        let k = self.n_rows();
        let mut keep = vec![true; k];
        for i in 0..k {
            if !keep[i] {
                continue;
            }
            for j in (i + 1)..k {
                if keep[j] && (self.c.row(i) - self.c.row(j)).amax() < 1e-12 {
                    if self.d[j] < self.d[i] {
                        keep[i] = false;
                        break;
                    }
                    keep[j] = false;
                }
            }
        }
        for i in 0..k {
            if !keep[i] {
                continue;
            }
            let others: Vec<usize> = (0..k).filter(|&j| j != i && keep[j]).collect();
            let sub = self.select_rows(&others);
            let obj = self.c.row(i).transpose();
            let out = lp::maximize(&obj, &sub.c, &sub.d, tol.lp_feasibility);
            if out.is_optimal() && out.value <= self.d[i] + tol.geometric {
                keep[i] = false;
            }
        }
        let idx: Vec<usize> = (0..k).filter(|&i| keep[i]).collect();
        Ok(self.select_rows(&idx))
    }

    fn select_rows(&self, idx: &[usize]) -> HPolytope {
        HPolytope {
            c: self.c.select_rows(idx.iter()),
            d: self.d.select_rows(idx.iter()),
        }
    }

    /// Row-stacks both constraint sets; redundant rows are pruned when the
    /// result is nonempty.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope> {
        self.intersect_with(other, &Tolerances::default())
    }

    pub fn intersect_with(&self, other: &HPolytope, tol: &Tolerances) -> Result<HPolytope> {
        self.check_dim("intersection", other.dim())?;
        let stacked = self.stack(other);
        if stacked.is_feasible_with(tol) {
            stacked.remove_redundant_with(tol)
        } else {
            Ok(stacked)
        }
    }

    fn stack(&self, other: &HPolytope) -> HPolytope {
        let n = self.dim();
        let (k1, k2) = (self.n_rows(), other.n_rows());
        let mut c = DMatrix::zeros(k1 + k2, n);
        c.rows_mut(0, k1).copy_from(&self.c);
        c.rows_mut(k1, k2).copy_from(&other.c);
        let mut d = DVector::zeros(k1 + k2);
        d.rows_mut(0, k1).copy_from(&self.d);
        d.rows_mut(k1, k2).copy_from(&other.d);
        HPolytope { c, d }
    }

    pub fn project(&self, keep: &[usize]) -> Result<HPolytope> {
        self.project_with(keep, &Tolerances::default())
    }

    /// Shadow of the polytope on the coordinates in `keep` (in that order),
    /// by Fourier-Motzkin elimination of the others one at a time.
    pub fn project_with(&self, keep: &[usize], tol: &Tolerances) -> Result<HPolytope> {
        let n = self.dim();
        if keep.is_empty() || keep.len() >= n {
            return Err(Error::InvalidArgument(format!(
                "projection must keep a strict nonempty subset of {n} coordinates"
            )));
        }
        let mut seen = vec![false; n];
        for &k in keep {
            if k >= n || seen[k] {
                return Err(Error::InvalidArgument(format!(
                    "invalid or repeated coordinate {k} in projection"
                )));
            }
            seen[k] = true;
        }

        // Reorder columns to [keep | drop] and eliminate from the back.
        let order: Vec<usize> = keep
            .iter()
            .copied()
            .chain((0..n).filter(|j| !seen[*j]))
            .collect();
        let mut cur = HPolytope {
            c: self.c.select_columns(order.iter()),
            d: self.d.clone(),
        };
        if !cur.is_feasible_with(tol) {
            return Ok(HPolytope::empty(keep.len()));
        }
        while cur.dim() > keep.len() {
            cur = eliminate_last(&cur, tol)?;
            if !cur.is_feasible_with(tol) {
                return Ok(HPolytope::empty(keep.len()));
            }
            cur = cur.remove_redundant_with(tol)?;
        }
        Ok(cur)
    }

    pub fn chebyshev_center(&self) -> Result<ChebyshevBall> {
        self.chebyshev_center_with(&Tolerances::default())
    }

    /// Center of the largest inscribed ball: `max r s.t. c_i·x + r ≤ d_i, r ≥ 0`
    /// (rows are unit-norm).
    pub fn chebyshev_center_with(&self, tol: &Tolerances) -> Result<ChebyshevBall> {
        let n = self.dim();
        let k = self.n_rows();
        let mut c = DMatrix::zeros(k + 1, n + 1);
        c.view_mut((0, 0), (k, n)).copy_from(&self.c);
        for i in 0..k {
            c[(i, n)] = 1.0;
        }
        c[(k, n)] = -1.0;
        let mut d = DVector::zeros(k + 1);
        d.rows_mut(0, k).copy_from(&self.d);
        let mut obj = DVector::zeros(n + 1);
        obj[n] = 1.0;
        let out = lp::maximize(&obj, &c, &d, tol.lp_feasibility);
        match out.status {
            LpStatus::Infeasible => Err(Error::EmptyPolytope),
            LpStatus::Unbounded => Err(Error::Geometry(
                "polytope is unbounded; no Chebyshev center".into(),
            )),
            LpStatus::Optimal => {
                let radius = out.point[n].max(0.0);
                Ok(ChebyshevBall {
                    center: out.point.rows(0, n).into_owned(),
                    radius,
                    flat: radius <= tol.geometric,
                })
            }
        }
    }
}

/// One Fourier-Motzkin step removing the last coordinate.
fn eliminate_last(p: &HPolytope, tol: &Tolerances) -> Result<HPolytope> {
    let n = p.dim();
    let j = n - 1;
    let (mut pos, mut neg, mut zero) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..p.n_rows() {
        let a = p.c[(i, j)];
        if a > ZERO_ROW {
            pos.push(i);
        } else if a < -ZERO_ROW {
            neg.push(i);
        } else {
            zero.push(i);
        }
    }
    let rows = zero.len() + pos.len() * neg.len();
    if rows > tol.fm_row_cap {
        return Err(Error::RowCap {
            cap: tol.fm_row_cap,
            rows,
        });
    }
    let mut c = DMatrix::zeros(rows, j);
    let mut d = DVector::zeros(rows);
    let mut r = 0;
    for &i in &zero {
        c.row_mut(r).copy_from(&p.c.view((i, 0), (1, j)));
        d[r] = p.d[i];
        r += 1;
    }
    for &ip in &pos {
        let sp = 1.0 / p.c[(ip, j)];
        for &iq in &neg {
            let sq = -1.0 / p.c[(iq, j)];
            for col in 0..j {
                c[(r, col)] = sp * p.c[(ip, col)] + sq * p.c[(iq, col)];
            }
            d[r] = sp * p.d[ip] + sq * p.d[iq];
            r += 1;
        }
    }
    Ok(HPolytope::from_raw_lenient(c, d, tol.geometric))
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    d: Vec<f64>,
    /// Needed to round-trip polytopes without rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl Serialize for HPolytope {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeJson {
            c: (0..self.n_rows())
                .map(|i| self.c.row(i).iter().copied().collect())
                .collect(),
            d: self.d.iter().copied().collect(),
            dim: (self.n_rows() == 0).then_some(self.dim()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPolytope {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = PolytopeJson::deserialize(de)?;
        let dim = match (raw.c.first(), raw.dim) {
            (Some(r), _) => r.len(),
            (None, Some(n)) => n,
            (None, None) => return Err(D::Error::custom("polytope without rows needs \"dim\"")),
        };
        if raw.c.is_empty() {
            return Ok(HPolytope::universe(dim));
        }
        HPolytope::from_rows(dim, &raw.c, &raw.d).map_err(D::Error::custom)
    }
}
