use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use super::tree::{decompose_tuple, DecomposeError, DecompositionLeaf};
use crate::linalg::{
    direct_sum, eigenvalues, identity, kron, nullspace_abs, op_norm, svd, unitarity_defect, zeros,
    ComplexMatrix, Tolerance,
};
use crate::operators::{seeded_rng, SlotKind, TwistedTuple};

/// Spectra further apart than this certify inequivalence.
pub const SPECTRAL_TOL: f64 = 1e-6;

/// Largest multiplicity space on which the intertwiner nullspace is solved.
pub const NULLSPACE_LIMIT: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    DimensionMismatch {
        left: usize,
        right: usize,
    },
    LengthMismatch {
        left: usize,
        right: usize,
    },
    LeafStructure {
        left: Vec<(Vec<SlotKind>, usize)>,
        right: Vec<(Vec<SlotKind>, usize)>,
    },
    /// A leaf generator whose spectra differ by `distance`.
    Spectral {
        leaf: String,
        generator: String,
        distance: f64,
    },
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sig = |s: &[(Vec<SlotKind>, usize)]| {
            s.iter()
                .map(|(m, k)| {
                    let idx: Vec<String> = m.iter().map(|x| x.to_string()).collect();
                    format!("({})x{k}", idx.join(","))
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        match self {
            Certificate::DimensionMismatch { left, right } => {
                write!(f, "dimensions differ: {left} vs {right}")
            }
            Certificate::LengthMismatch { left, right } => {
                write!(f, "tuple lengths differ: {left} vs {right}")
            }
            Certificate::LeafStructure { left, right } => {
                write!(
                    f,
                    "leaf structure differs: [{}] vs [{}]",
                    sig(left),
                    sig(right)
                )
            }
            Certificate::Spectral {
                leaf,
                generator,
                distance,
            } => write!(
                f,
                "spectrum of {generator} on leaf {leaf} differs by {distance:.3e}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquivalenceVerdict {
    /// `Ω V_n Ω* = W_n` for every `n`.
    Equivalent {
        intertwiner: ComplexMatrix,
        residual: f64,
    },
    NotEquivalent(Certificate),
    Inconclusive {
        reason: String,
    },
}

/// The leaf generators that the operators determine: `T_n` for unitary slots
/// and each twist that multiplies a nonzero shift or unitary base.
fn visible_family(leaf: &DecompositionLeaf) -> Vec<(String, ComplexMatrix)> {
    let slots = &leaf.multiindex;
    let mut out = Vec::new();
    for (n, s) in slots.iter().enumerate() {
        if s.is_unitary() {
            let t = leaf
                .slot_unitaries
                .get(&(n + 1))
                .cloned()
                .unwrap_or_else(|| identity(leaf.mult_dim));
            out.push((format!("T_{}", n + 1), t));
        }
    }
    for (m, sm) in slots.iter().enumerate() {
        if sm.truncated().is_none_or(|p| p < 2) {
            continue;
        }
        for (n, sn) in slots.iter().enumerate() {
            let applies = match sn {
                SlotKind::Unitary => true,
                SlotKind::Truncated(p) => m < n && *p >= 2,
                _ => false,
            };
            if n != m && applies {
                out.push((format!("U_({},{})", m + 1, n + 1), leaf.twist(m + 1, n + 1)));
            }
        }
    }
    out
}

/// Greedy nearest matching of two spectra; returns the permutation taking
/// indices of `a` to indices of `b` and the largest matched distance.
fn match_spectra(a: &[Complex64], b: &[Complex64]) -> (Vec<usize>, f64) {
    let mut used = vec![false; b.len()];
    let mut perm = Vec::with_capacity(a.len());
    let mut worst: f64 = 0.0;
    for &x in a {
        let (k, dist) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, &y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("spectra of equal size");
        used[k] = true;
        perm.push(k);
        worst = worst.max(dist);
    }
    (perm, worst)
}

enum LeafMatch {
    Found(ComplexMatrix),
    Certificate(Certificate),
    Inconclusive(String),
}

/// Groups eigenvalues closer than [`SPECTRAL_TOL`]: `(representative, count)`.
fn clusters(eigs: &[Complex64]) -> Vec<(Complex64, usize)> {
    let mut out: Vec<(Complex64, usize)> = Vec::new();
    for &z in eigs {
        match out.iter_mut().find(|(c, _)| (c - z).norm() <= SPECTRAL_TOL) {
            Some(entry) => entry.1 += 1,
            None => out.push((z, 1)),
        }
    }
    out
}

/// Orthonormal basis of the `k` directions `a − λ` shrinks most.
fn eigenspace(a: &ComplexMatrix, lambda: Complex64, k: usize) -> ComplexMatrix {
    let n = a.nrows();
    let shifted = a - identity(n) * lambda;
    let s = svd(&shifted);
    s.v_t.rows(n - k, k).adjoint()
}

/// Unitary `X` with `X a X* = b` for unitary `a`, `b` with matching spectra,
/// built eigenspace by eigenspace.
fn spectral_intertwiner(a: &ComplexMatrix, b: &ComplexMatrix) -> Option<ComplexMatrix> {
    let r = a.nrows();
    let ca = clusters(&eigenvalues(a));
    let cb = clusters(&eigenvalues(b));
    let mut x = zeros(r, r);
    for &(lambda, k) in &ca {
        let &(mu, kb) = cb
            .iter()
            .min_by(|p, q| (p.0 - lambda).norm().total_cmp(&(q.0 - lambda).norm()))?;
        if kb != k {
            return None;
        }
        x += eigenspace(b, mu, k) * eigenspace(a, lambda, k).adjoint();
    }
    Some(x)
}

fn nullspace_intertwiner(
    fam_a: &[(String, ComplexMatrix)],
    fam_b: &[(String, ComplexMatrix)],
    r: usize,
    leaf: &str,
    tol: &Tolerance,
) -> LeafMatch {
    let id = identity(r);
    let r2 = r * r;
    let mut sys = zeros(2 * fam_a.len() * r2, r2);
    for (k, ((_, a), (_, b))) in fam_a.iter().zip(fam_b).enumerate() {
        // vec(XA − BX) = (Aᵀ ⊗ I − I ⊗ B) vec(X)
        let fwd = kron(&a.transpose(), &id) - kron(&id, b);
        let adj = kron(&a.adjoint().transpose(), &id) - kron(&id, &b.adjoint());
        sys.view_mut((2 * k * r2, 0), (r2, r2)).copy_from(&fwd);
        sys.view_mut(((2 * k + 1) * r2, 0), (r2, r2))
            .copy_from(&adj);
    }
    // Leaf generators are unitaries accurate to about eps, and the system
    // vanishes up to rounding when they are all scalar. An absolute cutoff of
    // sqrt(eps) covers both; the final residual check decides.
    let null = nullspace_abs(&sys, 2.0 * tol.eps.sqrt().max(tol.rank_eps));
    // A failed solve is never a certificate of inequivalence.
    if null.is_zero() {
        return LeafMatch::Inconclusive(format!(
            "no intertwiner of the leaf generators found on {leaf}"
        ));
    }
    let mut rng = seeded_rng(0x5eed);
    let mut x = zeros(r, r);
    for c in null.basis().column_iter() {
        let coef = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let xm = ComplexMatrix::from_column_slice(r, r, c.as_slice());
        x += xm * coef;
    }
    let s = svd(&x);
    let smallest = s.sigma.last().copied().unwrap_or(0.0);
    if smallest <= SPECTRAL_TOL * s.sigma[0] {
        return LeafMatch::Inconclusive(format!(
            "intertwiner on leaf {leaf} is singular (smallest singular value {smallest:.3e})"
        ));
    }
    LeafMatch::Found(s.u * s.v_t)
}

fn match_leaf(la: &DecompositionLeaf, lb: &DecompositionLeaf, tol: &Tolerance) -> LeafMatch {
    let label = la.label();
    let fam_a = visible_family(la);
    let fam_b = visible_family(lb);
    for ((name, a), (_, b)) in fam_a.iter().zip(&fam_b) {
        let (_, distance) = match_spectra(&eigenvalues(a), &eigenvalues(b));
        if distance > SPECTRAL_TOL {
            return LeafMatch::Certificate(Certificate::Spectral {
                leaf: label,
                generator: name.clone(),
                distance,
            });
        }
    }
    let r = la.mult_dim;
    match fam_a.len() {
        0 => LeafMatch::Found(identity(r)),
        1 => match spectral_intertwiner(&fam_a[0].1, &fam_b[0].1) {
            Some(x) => LeafMatch::Found(x),
            None => LeafMatch::Inconclusive(format!(
                "eigenvalue clusters of {} on leaf {label} do not pair up",
                fam_a[0].0
            )),
        },
        _ if r > NULLSPACE_LIMIT => LeafMatch::Inconclusive(format!(
            "leaf {label} has multiplicity {r} above the solver limit {NULLSPACE_LIMIT}"
        )),
        _ => nullspace_intertwiner(&fam_a, &fam_b, r, &label, tol),
    }
}

/// Decides unitary equivalence of two twisted tuples through their leaf
/// decompositions: `Ω V_n Ω* = W_n` for every `n`.
///
/// Inequivalence comes with a certificate. An intertwiner candidate that
/// fails the final residual check yields `Inconclusive`, never a guess.
pub fn equivalence_check(
    a: &TwistedTuple,
    b: &TwistedTuple,
    tol: &Tolerance,
) -> Result<EquivalenceVerdict, DecomposeError> {
    if a.dim() != b.dim() {
        return Ok(EquivalenceVerdict::NotEquivalent(
            Certificate::DimensionMismatch {
                left: a.dim(),
                right: b.dim(),
            },
        ));
    }
    if a.len() != b.len() {
        return Ok(EquivalenceVerdict::NotEquivalent(
            Certificate::LengthMismatch {
                left: a.len(),
                right: b.len(),
            },
        ));
    }
    let ta = decompose_tuple(a, tol)?;
    let tb = decompose_tuple(b, tol)?;
    if ta.signature() != tb.signature() {
        return Ok(EquivalenceVerdict::NotEquivalent(
            Certificate::LeafStructure {
                left: ta.signature(),
                right: tb.signature(),
            },
        ));
    }
    let mut blocks = Vec::with_capacity(ta.leaves.len());
    for (la, lb) in ta.leaves.iter().zip(&tb.leaves) {
        let x = match match_leaf(la, lb, tol) {
            LeafMatch::Found(x) => x,
            LeafMatch::Certificate(c) => return Ok(EquivalenceVerdict::NotEquivalent(c)),
            LeafMatch::Inconclusive(reason) => {
                return Ok(EquivalenceVerdict::Inconclusive { reason })
            }
        };
        let k_dim = la.leaf_dim / la.mult_dim.max(1);
        blocks.push(kron(&identity(k_dim), &x));
    }
    let omega = &tb.intertwiner * direct_sum(&blocks) * ta.intertwiner.adjoint();
    let residual = a
        .ops()
        .iter()
        .zip(b.ops())
        .map(|(va, vb)| op_norm(&(&omega * va * omega.adjoint() - vb)))
        .fold(unitarity_defect(&omega), f64::max);
    if residual > tol.eps {
        return Ok(EquivalenceVerdict::Inconclusive {
            reason: format!(
                "candidate intertwiner residual {residual:.3e} exceeds {:.3e}",
                tol.eps
            ),
        });
    }
    Ok(EquivalenceVerdict::Equivalent {
        intertwiner: omega,
        residual,
    })
}
