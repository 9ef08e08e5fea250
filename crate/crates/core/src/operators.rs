//! Concrete operators: truncated shifts, diagonal twists, the block example
//! pair, finite-dimensional tensor models, random generators and the
//! partial-isometry predicates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{
    c64, commutator_norm, diag, direct_sum, identity, kron, kron_all, mat_pow, op_norm,
    unitarity_defect, zeros, ComplexMatrix, Tolerance,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("empty model family")]
    EmptyFamily,
    #[error("truncated shift size must be at least 1")]
    ZeroShift,
    #[error("slot index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{what} is not unitary (defect {defect:.3e})")]
    NotUnitary { what: String, defect: f64 },
    #[error("twist scalar {re} + {im}i is not unimodular")]
    NotUnimodular { re: f64, im: f64 },
    #[error(
        "slot {slot} is a {kind} slot; only truncated-shift and unitary slots have finite models"
    )]
    InfiniteSlot { slot: usize, kind: SlotKind },
    #[error("{what}: expected {expected}x{expected}, got {rows}x{cols}")]
    BadShape {
        what: String,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("relation {relation} violated (residual {residual:.3e})")]
    RelationViolated { relation: String, residual: f64 },
    #[error("twist key ({i},{j}) invalid for {n} operators (need 1 <= i < j <= n)")]
    BadTwistKey { i: usize, j: usize, n: usize },
}

/// One coordinate of a multiindex: the kind of a slot in a tensor model, or
/// the Halmos–Wallen component an operator falls into on a leaf.
///
/// Ordering puts truncated shifts first by size, then the unitary kind; the
/// infinite kinds exist only so that specs naming them can be rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Truncated(usize),
    Unitary,
    Shift,
    BackwardShift,
}

impl SlotKind {
    fn rank(&self) -> (u8, usize) {
        match *self {
            SlotKind::Truncated(p) => (0, p),
            SlotKind::Unitary => (1, 0),
            SlotKind::Shift => (2, 0),
            SlotKind::BackwardShift => (3, 0),
        }
    }

    pub fn truncated(&self) -> Option<usize> {
        match *self {
            SlotKind::Truncated(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_unitary(&self) -> bool {
        matches!(self, SlotKind::Unitary)
    }

    /// Parses `"u"`, `"s"`, `"b"` or a positive integer.
    pub fn parse(s: &str) -> Option<SlotKind> {
        match s.trim() {
            "u" => Some(SlotKind::Unitary),
            "s" => Some(SlotKind::Shift),
            "b" => Some(SlotKind::BackwardShift),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&p| p >= 1)
                .map(SlotKind::Truncated),
        }
    }
}

impl PartialOrd for SlotKind {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SlotKind {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotKind::Truncated(p) => write!(f, "{p}"),
            SlotKind::Unitary => write!(f, "u"),
            SlotKind::Shift => write!(f, "s"),
            SlotKind::BackwardShift => write!(f, "b"),
        }
    }
}

/// N operators on C^d with the twist family `U_ij` (i < j, 1-based keys).
/// `U_ji` is `U_ij*`; a missing pair means the identity twist.
///
/// Construction only checks shapes. Whether the relations hold is a question
/// for [`crate::twisted::verify_twisted`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwistedTuple {
    dim: usize,
    ops: Vec<ComplexMatrix>,
    twists: BTreeMap<(usize, usize), ComplexMatrix>,
}

impl TwistedTuple {
    pub fn new(
        dim: usize,
        ops: Vec<ComplexMatrix>,
        twists: BTreeMap<(usize, usize), ComplexMatrix>,
    ) -> Result<Self, OperatorError> {
        for (k, v) in ops.iter().enumerate() {
            check_shape(&format!("operator {}", k + 1), v, dim)?;
        }
        let n = ops.len();
        for (&(i, j), u) in &twists {
            if !(1 <= i && i < j && j <= n) {
                return Err(OperatorError::BadTwistKey { i, j, n });
            }
            check_shape(&format!("twist ({i},{j})"), u, dim)?;
        }
        Ok(TwistedTuple { dim, ops, twists })
    }

    /// A single operator, no twists.
    pub fn single(v: ComplexMatrix) -> Self {
        let dim = v.nrows();
        TwistedTuple {
            dim,
            ops: vec![v],
            twists: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    /// Operator `V_i`, 1-based.
    pub fn op(&self, i: usize) -> &ComplexMatrix {
        &self.ops[i - 1]
    }

    /// Explicitly stored twists, keyed `(i, j)` with `i < j`.
    pub fn stored_twists(&self) -> &BTreeMap<(usize, usize), ComplexMatrix> {
        &self.twists
    }

    /// `U_ij` for any ordered pair `i != j` (1-based).
    pub fn twist(&self, i: usize, j: usize) -> ComplexMatrix {
        twist_lookup(&self.twists, i, j, self.dim)
    }

    /// Direct sum with another tuple of the same length; twists sum blockwise.
    pub fn direct_sum(&self, other: &TwistedTuple) -> Result<TwistedTuple, OperatorError> {
        if self.len() != other.len() {
            return Err(OperatorError::IndexOutOfRange {
                index: other.len(),
                len: self.len(),
            });
        }
        let ops = self
            .ops
            .iter()
            .zip(&other.ops)
            .map(|(a, b)| direct_sum(&[a.clone(), b.clone()]))
            .collect();
        let n = self.len();
        let mut twists = BTreeMap::new();
        for i in 1..=n {
            for j in i + 1..=n {
                if self.twists.contains_key(&(i, j)) || other.twists.contains_key(&(i, j)) {
                    twists.insert((i, j), direct_sum(&[self.twist(i, j), other.twist(i, j)]));
                }
            }
        }
        TwistedTuple::new(self.dim + other.dim, ops, twists)
    }

    /// Reorders the operators: position `a` of the result holds `V_{perm[a]}`
    /// (`perm` is a 0-based permutation). Twists are relabelled accordingly.
    pub fn permuted(&self, perm: &[usize]) -> TwistedTuple {
        let ops = perm.iter().map(|&k| self.ops[k].clone()).collect();
        let n = perm.len();
        let mut twists = BTreeMap::new();
        for a in 0..n {
            for b in a + 1..n {
                let (i, j) = (perm[a] + 1, perm[b] + 1);
                if self.twists.contains_key(&(i.min(j), i.max(j))) {
                    twists.insert((a + 1, b + 1), self.twist(i, j));
                }
            }
        }
        TwistedTuple {
            dim: self.dim,
            ops,
            twists,
        }
    }

    /// Replaces one stored twist.
    pub fn with_twist(
        mut self,
        i: usize,
        j: usize,
        u: ComplexMatrix,
    ) -> Result<Self, OperatorError> {
        let n = self.len();
        if !(1 <= i && i < j && j <= n) {
            return Err(OperatorError::BadTwistKey { i, j, n });
        }
        check_shape(&format!("twist ({i},{j})"), &u, self.dim)?;
        self.twists.insert((i, j), u);
        Ok(self)
    }

    /// Replaces one operator (1-based).
    pub fn with_op(mut self, i: usize, v: ComplexMatrix) -> Result<Self, OperatorError> {
        if i == 0 || i > self.len() {
            return Err(OperatorError::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        check_shape(&format!("operator {i}"), &v, self.dim)?;
        self.ops[i - 1] = v;
        Ok(self)
    }
}

pub(crate) fn twist_lookup(
    twists: &BTreeMap<(usize, usize), ComplexMatrix>,
    i: usize,
    j: usize,
    dim: usize,
) -> ComplexMatrix {
    debug_assert_ne!(i, j);
    if i < j {
        twists
            .get(&(i, j))
            .cloned()
            .unwrap_or_else(|| identity(dim))
    } else {
        twists
            .get(&(j, i))
            .map(|u| u.adjoint())
            .unwrap_or_else(|| identity(dim))
    }
}

fn check_shape(what: &str, m: &ComplexMatrix, dim: usize) -> Result<(), OperatorError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(OperatorError::BadShape {
            what: what.to_string(),
            expected: dim,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_unitary(what: &str, u: &ComplexMatrix, tol: &Tolerance) -> Result<(), OperatorError> {
    let defect = unitarity_defect(u);
    if defect > tol.eps {
        return Err(OperatorError::NotUnitary {
            what: what.to_string(),
            defect,
        });
    }
    Ok(())
}

/// The truncated shift `J_p`: `e_n ↦ e_{n+1}` for `n < p`, `e_p ↦ 0`.
pub fn truncated_shift(p: usize) -> Result<ComplexMatrix, OperatorError> {
    if p == 0 {
        return Err(OperatorError::ZeroShift);
    }
    Ok(shift_matrix(p))
}

fn shift_matrix(p: usize) -> ComplexMatrix {
    let mut j = zeros(p, p);
    for n in 0..p.saturating_sub(1) {
        j[(n + 1, n)] = c64(1.0, 0.0);
    }
    j
}

/// `J_{p_i}` acting on tensor factor `factor` (0-based) of
/// `C^{p_1} ⊗ ... ⊗ C^{p_m} ⊗ C^{aux_dim}`.
pub fn shift_on_factor(p_list: &[usize], factor: usize, aux_dim: usize) -> ComplexMatrix {
    let before: usize = p_list[..factor].iter().product();
    let after: usize = p_list[factor + 1..].iter().product::<usize>() * aux_dim;
    kron_all([
        &identity(before),
        &shift_matrix(p_list[factor]),
        &identity(after),
    ])
}

/// Unchecked diagonal twist with 0-based factor index.
pub(crate) fn diag_twist_raw(
    p_list: &[usize],
    factor: usize,
    u: &ComplexMatrix,
    aux_dim: usize,
) -> ComplexMatrix {
    let k_dim: usize = p_list.iter().product();
    let stride: usize = p_list[factor + 1..].iter().product();
    let p = p_list[factor];
    let mut powers = Vec::with_capacity(p);
    let mut acc = identity(aux_dim);
    for _ in 0..p {
        powers.push(acc.clone());
        acc = &acc * u;
    }
    let mut out = zeros(k_dim * aux_dim, k_dim * aux_dim);
    for idx in 0..k_dim {
        let k = (idx / stride) % p;
        out.view_mut((idx * aux_dim, idx * aux_dim), (aux_dim, aux_dim))
            .copy_from(&powers[k]);
    }
    out
}

/// The j-th diagonal operator `d_j[U]` on `(⊗_i C^{p_i}) ⊗ E`:
/// `e_k ⊗ η ↦ e_k ⊗ U^{k_j − 1} η`. `j` is 1-based.
pub fn diag_twist(
    p_list: &[usize],
    j: usize,
    u: &ComplexMatrix,
    aux_dim: usize,
    tol: &Tolerance,
) -> Result<ComplexMatrix, OperatorError> {
    if j == 0 || j > p_list.len() {
        return Err(OperatorError::IndexOutOfRange {
            index: j,
            len: p_list.len(),
        });
    }
    if let Some(&p) = p_list.iter().find(|&&p| p == 0) {
        debug_assert_eq!(p, 0);
        return Err(OperatorError::ZeroShift);
    }
    check_shape("twist symbol", u, aux_dim)?;
    check_unitary("twist symbol", u, tol)?;
    Ok(diag_twist_raw(p_list, j - 1, u, aux_dim))
}

/// Outcome of a partial-isometry test: `‖VV*V − V‖ ≤ eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialIsometryCheck {
    pub pass: bool,
    pub residual: f64,
}

pub fn is_partial_isometry(v: &ComplexMatrix, tol: &Tolerance) -> PartialIsometryCheck {
    let residual = partial_isometry_residual(v);
    PartialIsometryCheck {
        pass: residual <= tol.eps,
        residual,
    }
}

pub(crate) fn partial_isometry_residual(v: &ComplexMatrix) -> f64 {
    op_norm(&(v * v.adjoint() * v - v))
}

/// Outcome of testing `V^n` for `n = 1..=d+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCheck {
    pub pass: bool,
    pub first_failing_power: Option<usize>,
    /// `‖V^n V^{n*} V^n − V^n‖` for each tested power, starting at n = 1.
    pub residuals: Vec<f64>,
}

impl PowerCheck {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Heuristic power-partial-isometry test over powers `1..=d+1`. The
/// authoritative verdict is a successful Halmos–Wallen round trip.
pub fn is_power_partial_isometry(v: &ComplexMatrix, tol: &Tolerance) -> PowerCheck {
    let d = v.nrows();
    let mut residuals = Vec::with_capacity(d + 1);
    let mut first = None;
    let mut power = identity(d);
    for n in 1..=d + 1 {
        power = &power * v;
        let r = partial_isometry_residual(&power);
        if r > tol.eps && first.is_none() {
            first = Some(n);
        }
        residuals.push(r);
    }
    PowerCheck {
        pass: first.is_none(),
        first_failing_power: first,
        residuals,
    }
}

/// The block example pair on `(C^p⊗C^p) ⊕ (C^p⊗C^p)`:
/// `S_1 = J_p⊗I`, `S_2 = d[λ]⊗J_p`, `M_1 = S_1 ⊕ S_2`, `M_2 = S_2 ⊕ S_1`,
/// twist `U_12 = λI ⊕ λ̄I`.
pub fn build_example_pair(
    p: usize,
    lambda: Complex64,
    tol: &Tolerance,
) -> Result<TwistedTuple, OperatorError> {
    if (lambda.norm() - 1.0).abs() > tol.eps {
        return Err(OperatorError::NotUnimodular {
            re: lambda.re,
            im: lambda.im,
        });
    }
    let j = truncated_shift(p)?;
    let d_lambda = diag(&(0..p).map(|k| lambda.powu(k as u32)).collect::<Vec<_>>());
    let s1 = kron(&j, &identity(p));
    let s2 = kron(&d_lambda, &j);
    let m1 = direct_sum(&[s1.clone(), s2.clone()]);
    let m2 = direct_sum(&[s2, s1]);
    let half = p * p;
    let u = direct_sum(&[identity(half) * lambda, identity(half) * lambda.conj()]);
    let mut twists = BTreeMap::new();
    twists.insert((1, 2), u);
    TwistedTuple::new(2 * half, vec![m1, m2], twists)
}

/// Data of a finite tensor model: slot kinds, the auxiliary space `E`, the
/// twist family on `E` and one unitary on `E` per unitary slot.
///
/// Twist keys are `(i, j)` with `i < j` (1-based); missing keys mean the
/// identity. Slot unitaries are keyed by their 1-based slot index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub slots: Vec<SlotKind>,
    pub aux_dim: usize,
    pub twist_data: BTreeMap<(usize, usize), ComplexMatrix>,
    pub slot_unitaries: BTreeMap<usize, ComplexMatrix>,
}

impl ModelSpec {
    pub fn twist(&self, i: usize, j: usize) -> ComplexMatrix {
        twist_lookup(&self.twist_data, i, j, self.aux_dim)
    }

    /// Dimension of the tensor model space.
    pub fn model_dim(&self) -> usize {
        self.slots
            .iter()
            .filter_map(SlotKind::truncated)
            .product::<usize>()
            * self.aux_dim
    }

    /// Checks every stated relation of the twist and unitary data.
    pub fn validate(&self, tol: &Tolerance) -> Result<(), OperatorError> {
        let n = self.slots.len();
        let m = self.aux_dim;
        for (k, slot) in self.slots.iter().enumerate() {
            match slot {
                SlotKind::Shift | SlotKind::BackwardShift => {
                    return Err(OperatorError::InfiniteSlot {
                        slot: k + 1,
                        kind: *slot,
                    })
                }
                SlotKind::Truncated(0) => return Err(OperatorError::ZeroShift),
                _ => {}
            }
        }
        for (&(i, j), u) in &self.twist_data {
            if !(1 <= i && i < j && j <= n) {
                return Err(OperatorError::BadTwistKey { i, j, n });
            }
            check_shape(&format!("twist ({i},{j})"), u, m)?;
            check_unitary(&format!("twist ({i},{j})"), u, tol)?;
        }
        for (&k, u) in &self.slot_unitaries {
            if k == 0 || k > n || !self.slots[k - 1].is_unitary() {
                return Err(OperatorError::IndexOutOfRange { index: k, len: n });
            }
            check_shape(&format!("slot unitary {k}"), u, m)?;
            check_unitary(&format!("slot unitary {k}"), u, tol)?;
        }
        let keys: Vec<_> = self.twist_data.keys().copied().collect();
        for (a, ka) in keys.iter().enumerate() {
            for kb in &keys[a + 1..] {
                let r = commutator_norm(&self.twist_data[ka], &self.twist_data[kb]);
                if r > tol.eps {
                    return Err(OperatorError::RelationViolated {
                        relation: format!("U{:?} U{:?} = U{:?} U{:?}", ka, kb, kb, ka),
                        residual: r,
                    });
                }
            }
        }
        for (&k, t) in &self.slot_unitaries {
            for (key, u) in &self.twist_data {
                let r = commutator_norm(t, u);
                if r > tol.eps {
                    return Err(OperatorError::RelationViolated {
                        relation: format!("U_{k} commutes with U{key:?}"),
                        residual: r,
                    });
                }
            }
        }
        for i in 1..=n {
            for j in i + 1..=n {
                if !(self.slots[i - 1].is_unitary() && self.slots[j - 1].is_unitary()) {
                    continue;
                }
                let ti = self.slot_unitary(i);
                let tj = self.slot_unitary(j);
                let r = op_norm(&(&ti * &tj - self.twist(j, i) * &tj * &ti));
                if r > tol.eps {
                    return Err(OperatorError::RelationViolated {
                        relation: format!("U_{i} U_{j} = U_({j},{i}) U_{j} U_{i}"),
                        residual: r,
                    });
                }
            }
        }
        Ok(())
    }

    fn slot_unitary(&self, k: usize) -> ComplexMatrix {
        self.slot_unitaries
            .get(&k)
            .cloned()
            .unwrap_or_else(|| identity(self.aux_dim))
    }
}

/// Assembles the model operators on `(⊗ C^{p}) ⊗ E`, one tensor factor per
/// truncated slot in slot order.
///
/// Operator `n` is `(∏ d_m[U_{mn}]) · base_n`, the product running over
/// truncated slots `m ≠ n` that precede `n`, or over all truncated slots when
/// `n` is a unitary slot. `base_n` is `J_{p_n}` on its own factor or
/// `I_K ⊗ T_n`. `twist(m, n)` must return `U_{mn}` with the convention
/// `U_{mn} = U_{nm}*`; `unitary(n)` returns `T_n`. Indices are 1-based.
pub fn assemble_model(
    slots: &[SlotKind],
    aux_dim: usize,
    twist: &dyn Fn(usize, usize) -> ComplexMatrix,
    unitary: &dyn Fn(usize) -> ComplexMatrix,
) -> Vec<ComplexMatrix> {
    let p_list: Vec<usize> = slots.iter().filter_map(SlotKind::truncated).collect();
    let k_dim: usize = p_list.iter().product();
    // factor index of each truncated slot
    let mut factor_of = vec![None; slots.len()];
    let mut f = 0;
    for (k, s) in slots.iter().enumerate() {
        if s.truncated().is_some() {
            factor_of[k] = Some(f);
            f += 1;
        }
    }
    (0..slots.len())
        .map(|n| {
            let mut op = match factor_of[n] {
                Some(fac) => shift_on_factor(&p_list, fac, aux_dim),
                None => kron(&identity(k_dim), &unitary(n + 1)),
            };
            for m in 0..slots.len() {
                let Some(fac) = factor_of[m] else { continue };
                if m == n || (factor_of[n].is_some() && m > n) {
                    continue;
                }
                op = diag_twist_raw(&p_list, fac, &twist(m + 1, n + 1), aux_dim) * op;
            }
            op
        })
        .collect()
}

/// The tensor model tuple of a spec, with ambient twists `I_K ⊗ U_ij`.
pub fn build_model_tuple(spec: &ModelSpec, tol: &Tolerance) -> Result<TwistedTuple, OperatorError> {
    spec.validate(tol)?;
    let ops = assemble_model(&spec.slots, spec.aux_dim, &|m, n| spec.twist(m, n), &|n| {
        spec.slot_unitary(n)
    });
    let k_dim = spec.model_dim() / spec.aux_dim.max(1);
    let twists = spec
        .twist_data
        .iter()
        .map(|(&key, u)| (key, kron(&identity(k_dim), u)))
        .collect();
    TwistedTuple::new(spec.model_dim(), ops, twists)
}

/// Seeded RNG used by every generator in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn complex_gaussian<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im)
}

pub fn random_phase<R: Rng>(rng: &mut R) -> Complex64 {
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    Complex64::from_polar(1.0, theta)
}

/// Haar-distributed unitary (QR of a complex Gaussian matrix with the
/// diagonal phases of R absorbed).
pub fn random_unitary<R: Rng>(dim: usize, rng: &mut R) -> ComplexMatrix {
    if dim == 0 {
        return zeros(0, 0);
    }
    let z = ComplexMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..dim {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c64(1.0, 0.0)
        };
        q.column_mut(k).iter_mut().for_each(|x| *x *= phase);
    }
    q
}

/// Complex Gaussian matrix with unit-variance entries.
pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng) * (0.5f64).sqrt())
}

/// `how_many` pairwise commuting unitaries sharing a random eigenbasis.
pub fn random_commuting_unitaries(dim: usize, how_many: usize, seed: u64) -> Vec<ComplexMatrix> {
    let mut rng = seeded_rng(seed);
    let q = random_unitary(dim, &mut rng);
    (0..how_many)
        .map(|_| {
            let phases: Vec<_> = (0..dim).map(|_| random_phase(&mut rng)).collect();
            &q * diag(&phases) * q.adjoint()
        })
        .collect()
}

/// Conjugates every operator and twist by `w`: `V ↦ W V W*`.
pub fn conjugate_tuple(
    t: &TwistedTuple,
    w: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<TwistedTuple, OperatorError> {
    check_shape("conjugating unitary", w, t.dim())?;
    check_unitary("conjugating unitary", w, tol)?;
    let wa = w.adjoint();
    let ops = t.ops().iter().map(|v| w * v * &wa).collect();
    let twists = t
        .stored_twists()
        .iter()
        .map(|(&k, u)| (k, w * u * &wa))
        .collect();
    TwistedTuple::new(t.dim(), ops, twists)
}

/// Clock matrix `diag(1, ω, ..., ω^{q-1})` and cyclic shift on C^q.
fn clock_and_shift(q: usize) -> (ComplexMatrix, ComplexMatrix) {
    let omega = Complex64::from_polar(1.0, std::f64::consts::TAU / q as f64);
    let clock = diag(&(0..q).map(|k| omega.powu(k as u32)).collect::<Vec<_>>());
    let mut shift = zeros(q, q);
    for k in 0..q {
        shift[((k + 1) % q, k)] = c64(1.0, 0.0);
    }
    (clock, shift)
}

/// Limits for [`random_model_spec`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpecLimits {
    pub max_slots: usize,
    pub max_p: usize,
    pub max_aux: usize,
    pub max_model_dim: usize,
}

impl Default for RandomSpecLimits {
    fn default() -> Self {
        RandomSpecLimits {
            max_slots: 4,
            max_p: 3,
            max_aux: 3,
            max_model_dim: 32,
        }
    }
}

/// A seeded valid model spec.
///
/// With at most one unitary slot the twists are random commuting unitaries
/// and the slot unitary is diagonal in their eigenbasis. With several
/// unitary slots the twists are scalars and the slot unitaries are products
/// of powers of clock and shift matrices on `E = C^q`, so that pairs of
/// unitary slots are genuinely twisted (noncommutative torus relations).
pub fn random_model_spec(seed: u64, limits: RandomSpecLimits) -> ModelSpec {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(1..=limits.max_slots.max(1));
    random_spec_of_len(&mut rng, n, limits)
}

fn random_spec_of_len<R: Rng>(rng: &mut R, n: usize, limits: RandomSpecLimits) -> ModelSpec {
    loop {
        let slots: Vec<SlotKind> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.65 {
                    SlotKind::Truncated(rng.random_range(1..=limits.max_p.max(1)))
                } else {
                    SlotKind::Unitary
                }
            })
            .collect();
        let unitary_slots: Vec<usize> = (1..=n).filter(|&k| slots[k - 1].is_unitary()).collect();
        let k_dim: usize = slots.iter().filter_map(SlotKind::truncated).product();
        let spec = if unitary_slots.len() >= 2 {
            let q = rng.random_range(2..=limits.max_aux.max(2));
            if k_dim * q > limits.max_model_dim {
                continue;
            }
            torus_spec(slots, q, &unitary_slots, rng)
        } else {
            let m = rng.random_range(1..=limits.max_aux.max(1));
            if k_dim * m > limits.max_model_dim {
                continue;
            }
            commuting_spec(slots, m, &unitary_slots, rng)
        };
        return spec;
    }
}

/// One spec, or two specs of the same length meant to be direct-summed.
pub fn random_model_family(seed: u64, limits: RandomSpecLimits) -> Vec<ModelSpec> {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(1..=limits.max_slots.max(1));
    let parts = rng.random_range(1..=2);
    (0..parts)
        .map(|_| random_spec_of_len(&mut rng, n, limits))
        .collect()
}

/// Direct sum of the model tuples of specs sharing one length.
pub fn build_model_sum(
    specs: &[ModelSpec],
    tol: &Tolerance,
) -> Result<TwistedTuple, OperatorError> {
    let mut parts = specs.iter().map(|s| build_model_tuple(s, tol));
    let first = parts.next().ok_or(OperatorError::EmptyFamily)??;
    parts.try_fold(first, |acc, t| acc.direct_sum(&t?))
}

/// `(slots, aux_dim)` per distinct slot structure, summed over equal slots
/// and sorted. This is what a decomposition of the direct sum must report.
pub fn model_signature(specs: &[ModelSpec]) -> Vec<(Vec<SlotKind>, usize)> {
    let mut merged: BTreeMap<Vec<SlotKind>, usize> = BTreeMap::new();
    for s in specs {
        *merged.entry(s.slots.clone()).or_default() += s.aux_dim;
    }
    merged.into_iter().collect()
}

/// Known Halmos–Wallen structure of a generated operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpiInstance {
    pub unitary_dim: usize,
    /// `(p, mult)` ascending in `p`, equal `p` merged.
    pub blocks: Vec<(usize, usize)>,
}

impl PpiInstance {
    pub fn dim(&self) -> usize {
        self.unitary_dim + self.blocks.iter().map(|(p, m)| p * m).sum::<usize>()
    }
}

/// `W (U ⊕ ⊕_k J_{p_k} ⊗ I_{m_k}) W*` with `U` a random unitary of dimension
/// at most 6, up to three truncated blocks with `p ≤ 5`, `m ≤ 3`, and `W`
/// Haar random. Never empty.
pub fn random_ppi_instance(seed: u64) -> (ComplexMatrix, PpiInstance) {
    let mut rng = seeded_rng(seed);
    loop {
        let unitary_dim = rng.random_range(0..=6);
        let count = rng.random_range(0..=3);
        let raw: Vec<(usize, usize)> = (0..count)
            .map(|_| (rng.random_range(1..=5), rng.random_range(1..=3)))
            .collect();
        let mut merged: BTreeMap<usize, usize> = BTreeMap::new();
        for &(p, m) in &raw {
            *merged.entry(p).or_default() += m;
        }
        let inst = PpiInstance {
            unitary_dim,
            blocks: merged.into_iter().collect(),
        };
        if inst.dim() == 0 {
            continue;
        }
        let mut blocks = vec![random_unitary(unitary_dim, &mut rng)];
        for &(p, m) in &raw {
            blocks.push(kron(&shift_matrix(p), &identity(m)));
        }
        let model = direct_sum(&blocks);
        let w = random_unitary(inst.dim(), &mut rng);
        return (&w * model * w.adjoint(), inst);
    }
}

fn commuting_spec<R: Rng>(
    slots: Vec<SlotKind>,
    m: usize,
    unitary_slots: &[usize],
    rng: &mut R,
) -> ModelSpec {
    let n = slots.len();
    let q = random_unitary(m, rng);
    let phased = |rng: &mut R| {
        let phases: Vec<_> = (0..m).map(|_| random_phase(rng)).collect();
        &q * diag(&phases) * q.adjoint()
    };
    let mut twist_data = BTreeMap::new();
    for i in 1..=n {
        for j in i + 1..=n {
            twist_data.insert((i, j), phased(rng));
        }
    }
    let slot_unitaries = unitary_slots.iter().map(|&k| (k, phased(rng))).collect();
    ModelSpec {
        slots,
        aux_dim: m,
        twist_data,
        slot_unitaries,
    }
}

fn torus_spec<R: Rng>(
    slots: Vec<SlotKind>,
    q: usize,
    unitary_slots: &[usize],
    rng: &mut R,
) -> ModelSpec {
    let n = slots.len();
    let (clock, shift) = clock_and_shift(q);
    let omega = Complex64::from_polar(1.0, std::f64::consts::TAU / q as f64);
    // T_k = phase · C^{α_k} S^{β_k}; then T_a T_b = ω^{α_a β_b − β_a α_b} T_b T_a.
    let exps: BTreeMap<usize, (usize, usize)> = unitary_slots
        .iter()
        .map(|&k| (k, (rng.random_range(0..q), rng.random_range(0..q))))
        .collect();
    let slot_unitaries = exps
        .iter()
        .map(|(&k, &(a, b))| {
            let t = mat_pow(&clock, a) * mat_pow(&shift, b) * random_phase(rng);
            (k, t)
        })
        .collect();
    let mut twist_data = BTreeMap::new();
    for i in 1..=n {
        for j in i + 1..=n {
            let lambda = match (exps.get(&i), exps.get(&j)) {
                // U_ji = λ̄_ij must equal ω^{α_i β_j − β_i α_j}.
                (Some(&(ai, bi)), Some(&(aj, bj))) => {
                    let e = (ai * bj) as i64 - (bi * aj) as i64;
                    omega.powi(-e as i32)
                }
                _ => random_phase(rng),
            };
            twist_data.insert((i, j), identity(q) * lambda);
        }
    }
    ModelSpec {
        slots,
        aux_dim: q,
        twist_data,
        slot_unitaries,
    }
}
