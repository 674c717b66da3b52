"""Measurement settings: POVMs, ensembles of POVMs and Pauli machinery.

Outcome ordering for tensor-product POVMs is lexicographic in the local
outcome indices with the first site varying slowest, i.e. the order of
``np.kron``.
"""

from dataclasses import dataclass
from functools import reduce
import itertools
from pathlib import Path

import numpy as np

from .qcore import haar_unitaries, make_rng

__all__ = [
    "PovmError",
    "Povm",
    "PovmEnsemble",
    "SignedPovm",
    "validate_povm",
    "sic_povm_qubit",
    "design3_povm_qubit",
    "computational_povm",
    "projective_povm_from_unitary",
    "local_tensor_povm",
    "pauli_matrix",
    "pauli_basis_povm",
    "design_povm_from_vectors",
    "haar_ensemble",
    "local_haar_ensemble",
    "pauli_basis_ensemble",
    "all_pauli_indices",
    "read_design_vectors",
    "write_design_vectors",
    "SIGMA",
]

POVM_TOL = 1e-9


class PovmError(ValueError):
    """Raised for invalid measurement settings; ``violations`` names the failed checks."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


@dataclass(frozen=True, eq=False)
class Povm:
    """Ordered POVM effects stored as an array of shape (K, dim, dim)."""

    effects: np.ndarray

    @property
    def dim(self):
        return self.effects.shape[1]

    @property
    def num_outcomes(self):
        return self.effects.shape[0]

    def __len__(self):
        return self.num_outcomes


@dataclass(frozen=True, eq=False)
class PovmEnsemble:
    settings: tuple
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(self.settings))
        if not self.settings:
            raise PovmError("an ensemble needs at least one setting")
        dims = {p.dim for p in self.settings}
        if len(dims) != 1:
            raise PovmError(f"ensemble settings have mixed dimensions {sorted(dims)}")

    @property
    def dim(self):
        return self.settings[0].dim

    def __len__(self):
        return len(self.settings)

    def __iter__(self):
        return iter(self.settings)

    def __getitem__(self, q):
        return self.settings[q]

    def stacked_effects(self):
        """All effects of all settings concatenated, shape (sum K_q, dim, dim)."""
        return np.concatenate([p.effects for p in self.settings], axis=0)


@dataclass(frozen=True, eq=False)
class SignedPovm:
    """A POVM whose outcomes carry +-1 weights reconstructing an observable."""

    povm: Povm
    signs: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=float)
        if signs.shape != (self.povm.num_outcomes,) or not np.all(np.abs(signs) == 1):
            raise PovmError("need one +1/-1 sign per outcome")
        object.__setattr__(self, "signs", signs)

    def observable(self):
        return np.tensordot(self.signs, self.povm.effects, axes=1)


def validate_povm(effects, tol=POVM_TOL):
    """Check positivity and completeness and return a :class:`Povm`.

    Raises
    ------
    PovmError
        ``violations`` contains ``"positivity"`` and/or ``"completeness"``.
    """
    effects = np.asarray(effects, dtype=complex)
    if effects.ndim != 3 or effects.shape[1] != effects.shape[2] or effects.shape[0] == 0:
        raise PovmError(f"effects must be a nonempty stack of square matrices, got {effects.shape}", ["shape"])
    dim = effects.shape[1]
    problems, msgs = [], []
    herm_err = np.max(np.abs(effects - effects.conj().transpose(0, 2, 1)))
    lam_min = np.min(np.linalg.eigvalsh((effects + effects.conj().transpose(0, 2, 1)) / 2))
    if herm_err > tol or lam_min < -tol:
        problems.append("positivity")
        msgs.append(f"effect not PSD (min eigenvalue {lam_min:.3g}, asymmetry {herm_err:.3g})")
    total_err = np.linalg.norm(effects.sum(axis=0) - np.eye(dim))
    if total_err > tol:
        problems.append("completeness")
        msgs.append(f"effects sum to identity only up to {total_err:.3g}")
    if problems:
        raise PovmError("invalid POVM: " + "; ".join(msgs), problems)
    return Povm(effects)


def sic_povm_qubit():
    """Four-outcome qubit SIC-POVM ``|psi_k><psi_k| / 2`` on a regular tetrahedron.

    The three non-axis effects have diagonal ``(1/6, 1/3)``: with ``1/6`` in
    both diagonal slots the set would neither sum to the identity nor be PSD.
    """
    a = np.sqrt(2) / 6
    effects = [np.array([[0.5, 0], [0, 0]], dtype=complex)]
    for phase in (0.0, 2 * np.pi / 3, 4 * np.pi / 3):
        effects.append(
            np.array([[1 / 6, a * np.exp(-1j * phase)], [a * np.exp(1j * phase), 1 / 3]])
        )
    return validate_povm(effects)


def design3_povm_qubit():
    """Six-outcome qubit POVM from the octahedron (Pauli eigenstates), a 3-design."""
    s = 1 / 6
    effects = [
        [[0, 0], [0, 1 / 3]],
        [[1 / 3, 0], [0, 0]],
        [[s, s], [s, s]],
        [[s, -s], [-s, s]],
        [[s, 1j * s], [-1j * s, s]],
        [[s, -1j * s], [1j * s, s]],
    ]
    return validate_povm(np.array(effects, dtype=complex))


def computational_povm(dim):
    return Povm(np.array([np.diag(e) for e in np.eye(dim)], dtype=complex))


def projective_povm_from_unitary(u, tol=1e-9):
    """Rank-one projectors onto the columns of a unitary."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise PovmError(f"unitary must be square, got {u.shape}", ["shape"])
    if np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])) > tol:
        raise PovmError("matrix is not unitary", ["unitarity"])
    return Povm(np.einsum("ik,jk->kij", u, u.conj()))


def local_tensor_povm(locals_):
    """Kronecker-product POVM of per-site POVMs (first site slowest)."""
    locals_ = list(locals_)
    if not locals_:
        raise PovmError("need at least one local POVM")

    def kron_stack(a, b):
        k = np.einsum("aij,bkl->abikjl", a, b)
        ka, kb = a.shape[0], b.shape[0]
        da, db = a.shape[1], b.shape[1]
        return k.reshape(ka * kb, da * db, da * db)

    return Povm(reduce(kron_stack, [p.effects for p in locals_]))


# sigma_2 carries +i in the upper-right entry, i.e. the transpose of the usual Y
SIGMA = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, 1j], [-1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

# (E_i^+, E_i^-) eigenprojectors with sigma_i = E_i^+ - E_i^-; E_0 reuses E_3
_E = {
    1: (np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex), np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex)),
    2: (np.array([[0.5, 0.5j], [-0.5j, 0.5]], dtype=complex), np.array([[0.5, -0.5j], [0.5j, 0.5]], dtype=complex)),
    3: (np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)),
}
_E[0] = _E[3]
_ALPHA_MINUS = {0: 1.0, 1: -1.0, 2: -1.0, 3: -1.0}


def _check_index(p):
    p = tuple(int(x) for x in np.atleast_1d(p))
    if not p or any(x not in (0, 1, 2, 3) for x in p):
        raise ValueError(f"invalid Pauli index {p}")
    return p


def pauli_matrix(p):
    """``sigma_{p_1} (x) ... (x) sigma_{p_n}`` for an index vector over {0,1,2,3}."""
    p = _check_index(p)
    return reduce(np.kron, [SIGMA[i] for i in p])


def pauli_basis_povm(p):
    """``2^n``-outcome local basis POVM with signs reconstructing ``pauli_matrix(p)``."""
    p = _check_index(p)
    locals_ = [Povm(np.array(_E[i])) for i in p]
    local_signs = [np.array([1.0, _ALPHA_MINUS[i]]) for i in p]
    signs = reduce(np.kron, local_signs)
    return SignedPovm(local_tensor_povm(locals_), signs)


def design_povm_from_vectors(vectors, tol=1e-9):
    """Rank-one POVM ``(d/K) w_k w_k^dagger`` from a set of unit vectors.

    The set must be at least a 1-design (its scaled frame operator equals the
    identity); higher design order is not checked here.
    """
    w = np.asarray(vectors, dtype=complex)
    if w.ndim != 2 or w.shape[0] == 0:
        raise PovmError("vectors must be a nonempty (K, d) array", ["shape"])
    k, d = w.shape
    norms = np.linalg.norm(w, axis=1)
    if np.any(np.abs(norms - 1) > tol):
        raise PovmError("all design vectors must have unit norm", ["normalization"])
    effects = (d / k) * np.einsum("ki,kj->kij", w, w.conj())
    if np.linalg.norm(effects.sum(axis=0) - np.eye(d)) > tol:
        raise PovmError("vector set is not a 1-design: frame operator differs from identity", ["completeness"])
    return Povm(effects)


def haar_ensemble(dim, q, seed):
    """``q`` projective measurements in global Haar-random bases."""
    if dim < 1 or q < 1:
        raise PovmError(f"invalid ensemble size dim={dim}, Q={q}")
    us = haar_unitaries(dim, q, make_rng(seed))
    return PovmEnsemble([projective_povm_from_unitary(u) for u in us], "haar")


def local_haar_ensemble(n, q, seed):
    """``q`` settings, each a tensor product of ``n`` independent qubit Haar bases."""
    if n < 1 or q < 1:
        raise PovmError(f"invalid ensemble size n={n}, Q={q}")
    us = haar_unitaries(2, n * q, make_rng(seed)).reshape(q, n, 2, 2)
    settings = [local_tensor_povm([projective_povm_from_unitary(u) for u in row]) for row in us]
    return PovmEnsemble(settings, "local_haar")


def all_pauli_indices(n, include_identity=True):
    letters = (0, 1, 2, 3) if include_identity else (1, 2, 3)
    return [tuple(p) for p in itertools.product(letters, repeat=n)]


def pauli_basis_ensemble(indices):
    """Ensemble of Pauli-basis POVMs, one per index vector."""
    indices = list(indices)
    if not indices:
        raise PovmError("need at least one Pauli index")
    return PovmEnsemble([pauli_basis_povm(p).povm for p in indices], "pauli_basis")


def _parse_complex(token, lineno):
    try:
        re_s, im_s = token.split(",")
        return complex(float(re_s), float(im_s))
    except ValueError:
        raise PovmError(f"line {lineno}: malformed complex entry {token!r}", ["format"]) from None


def read_design_vectors(path):
    """Read a design-vector file.

    Format::

        dim=<d> count=<K>
        re,im;re,im;...      (one vector per line, K lines of d entries)
    """
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise PovmError(f"{path}: empty design-vector file", ["format"])
    header = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
    try:
        dim, count = int(header["dim"]), int(header["count"])
    except (KeyError, ValueError):
        raise PovmError(f"{path}: header must read 'dim=<d> count=<K>'", ["format"]) from None
    rows = lines[1:]
    if len(rows) != count:
        raise PovmError(f"{path}: header declares {count} vectors, found {len(rows)}", ["format"])
    vectors = []
    for lineno, row in enumerate(rows, start=2):
        vec = [_parse_complex(tok.strip(), lineno) for tok in row.split(";")]
        if len(vec) != dim:
            raise PovmError(f"line {lineno}: expected {dim} entries, found {len(vec)}", ["format"])
        vectors.append(vec)
    return np.array(vectors, dtype=complex)


def write_design_vectors(path, vectors):
    w = np.asarray(vectors, dtype=complex)
    lines = [f"dim={w.shape[1]} count={w.shape[0]}"]
    for v in w:
        lines.append(";".join(f"{z.real!r},{z.imag!r}" for z in v.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")
