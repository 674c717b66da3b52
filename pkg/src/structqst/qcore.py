"""Dense complex linear algebra for density matrices.

States, density matrices and unitaries are plain ``numpy`` arrays of
``complex128``.  Functions here check their inputs and never mutate them.
"""

import numpy as np

__all__ = [
    "DensityError",
    "HERM_TOL",
    "PSD_TOL",
    "density_from_pure",
    "density_from_mixture",
    "validate_density",
    "is_density",
    "fidelity",
    "trace_distance",
    "frobenius_distance",
    "haar_random_unitary",
    "haar_unitaries",
    "maximally_mixed",
    "make_rng",
]

HERM_TOL = 1e-9
PSD_TOL = 1e-8


class DensityError(ValueError):
    """Raised when a matrix is not a valid density matrix.

    ``violations`` lists every failed constraint, drawn from
    ``{"shape", "finite", "normalization", "hermiticity", "positivity", "trace"}``.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


def make_rng(seed):
    """Return a ``numpy.random.Generator`` for an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.default_rng(seed)


def _as_square(m, name="matrix"):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DensityError(f"{name} must be square, got shape {m.shape}", ["shape"])
    if not np.all(np.isfinite(m)):
        raise DensityError(f"{name} has non-finite entries", ["finite"])
    return m


def maximally_mixed(dim):
    return np.eye(dim, dtype=complex) / dim


def density_from_pure(psi, tol=HERM_TOL):
    """Rank-one density ``psi psi^dagger`` of a normalized state vector."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > tol:
        raise DensityError(f"state vector has norm {norm:.3g}, expected 1", ["normalization"])
    return np.outer(psi, psi.conj())


def density_from_mixture(weights, states, tol=HERM_TOL):
    """Statistical mixture ``sum_i w_i psi_i psi_i^dagger``."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(states) or len(states) == 0:
        raise DensityError("need one weight per state and at least one state", ["shape"])
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > tol:
        raise DensityError("mixture weights must be nonnegative and sum to 1", ["trace"])
    dims = {np.asarray(s).size for s in states}
    if len(dims) != 1:
        raise DensityError(f"states have mismatched dimensions {sorted(dims)}", ["shape"])
    rho = sum(w * density_from_pure(s, tol) for w, s in zip(weights, states))
    return np.asarray(rho)


def validate_density(rho, tol=HERM_TOL, psd_tol=PSD_TOL):
    """Certify ``rho`` as a density matrix and return its Hermitian part.

    Parameters
    ----------
    rho : array_like
        Square complex matrix.
    tol : float
        Bound on ``||rho - rho^dagger||_F`` and on ``|trace(rho) - 1|``.
    psd_tol : float
        Smallest eigenvalue allowed is ``-psd_tol``.

    Raises
    ------
    DensityError
        Lists every violated constraint in ``violations``.
    """
    rho = _as_square(rho)
    problems = []
    msgs = []
    asym = np.linalg.norm(rho - rho.conj().T)
    if asym > tol:
        problems.append("hermiticity")
        msgs.append(f"||rho - rho^H||_F = {asym:.3g}")
    herm = (rho + rho.conj().T) / 2
    lam_min = np.linalg.eigvalsh(herm)[0]
    if lam_min < -psd_tol:
        problems.append("positivity")
        msgs.append(f"minimum eigenvalue {lam_min:.3g}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        problems.append("trace")
        msgs.append(f"trace {tr.real:.6g}")
    if problems:
        raise DensityError("invalid density matrix: " + "; ".join(msgs), problems)
    return herm


def is_density(rho, tol=HERM_TOL, psd_tol=PSD_TOL):
    try:
        validate_density(rho, tol, psd_tol)
    except DensityError:
        return False
    return True


def _check_pair(rho1, rho2):
    rho1 = _as_square(rho1, "rho1")
    rho2 = _as_square(rho2, "rho2")
    if rho1.shape != rho2.shape:
        raise DensityError(f"dimension mismatch {rho1.shape} vs {rho2.shape}", ["shape"])
    return rho1, rho2


def _psd_sqrt(h):
    lam, vec = np.linalg.eigh(h)
    # roundoff-level eigenvalues would contribute O(sqrt(eps)) after the root
    lam = np.where(lam > 1e-14 * max(lam[-1], 1.0), lam, 0.0)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def fidelity(rho1, rho2):
    """Uhlmann fidelity ``(trace sqrt(sqrt(rho1) rho2 sqrt(rho1)))**2`` in [0, 1]."""
    rho1, rho2 = _check_pair(rho1, rho2)
    rho1 = validate_density(rho1)
    rho2 = validate_density(rho2)
    # trace sqrt(sqrt(a) b sqrt(a)) is the nuclear norm of sqrt(a) sqrt(b)
    sv = np.linalg.svd(_psd_sqrt(rho1) @ _psd_sqrt(rho2), compute_uv=False)
    return float(np.clip(np.sum(sv) ** 2, 0.0, 1.0))


def trace_distance(rho1, rho2):
    """Schatten-1 norm ``||rho1 - rho2||_1`` (no factor 1/2)."""
    rho1, rho2 = _check_pair(rho1, rho2)
    return float(np.sum(np.linalg.svd(rho1 - rho2, compute_uv=False)))


def frobenius_distance(rho1, rho2):
    rho1, rho2 = _check_pair(rho1, rho2)
    return float(np.linalg.norm(rho1 - rho2))


def haar_unitaries(dim, count, rng):
    """Draw ``count`` Haar-distributed ``dim x dim`` unitaries, shape (count, dim, dim).

    Complex Ginibre matrices are QR-factorized and the columns of Q are
    rephased by the phases of diag(R), which makes the factorization unique
    and the law of Q exactly Haar.
    """
    if dim < 1 or count < 0:
        raise ValueError(f"invalid dim={dim}, count={count}")
    rng = make_rng(rng)
    z = (rng.standard_normal((count, dim, dim)) + 1j * rng.standard_normal((count, dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    return q * ph[:, None, :]


def haar_random_unitary(dim, seed):
    """A single Haar-random unitary; identical seeds give identical matrices."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    return haar_unitaries(dim, 1, make_rng(seed))[0]
