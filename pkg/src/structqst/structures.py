"""Structured state classes and the projections onto them.

Three classes are supported: all density matrices (``full``), rank-``r``
densities written as ``U U^dagger`` with ``||U||_F = 1`` (``low_rank``), and
matrix product operators (``mpo``).

MPO index convention: a row multi-index ``(i_1, ..., i_n)`` maps to the flat
row ``i_1 + d*i_2 + ... + d**(n-1)*i_n`` (site 1 varies fastest), and
likewise for columns.  Cores are stored as arrays of shape
``(r_{l-1}, d, d, r_l)`` so that ``core[:, i, j, :]`` is the matrix
``X_l^{i,j}``.
"""

from dataclasses import dataclass, field

import numpy as np

from .qcore import DensityError, make_rng
from .serialization import decode_complex, encode_complex

__all__ = [
    "StructureModel",
    "MpoState",
    "project_simplex",
    "project_density",
    "project_rank_r_density",
    "lowrank_to_density",
    "mpo_to_density",
    "project_mpo",
    "project_structure",
    "random_structured_state",
    "num_sites",
]

KINDS = ("full", "low_rank", "mpo")


@dataclass(frozen=True)
class StructureModel:
    """Tagged description of a structured state class.

    ``rank`` is used by ``low_rank``; ``bond_dims`` (the ``n - 1`` internal
    bonds) and ``phys_dim`` by ``mpo``.
    """

    kind: str = "full"
    rank: int | None = None
    bond_dims: tuple = ()
    phys_dim: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown structure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "low_rank" and (self.rank is None or self.rank < 1):
            raise ValueError("low_rank structure needs rank >= 1")
        if self.kind == "mpo":
            object.__setattr__(self, "bond_dims", tuple(int(b) for b in self.bond_dims))
            if any(b < 1 for b in self.bond_dims):
                raise ValueError("bond dimensions must be >= 1")
            if self.phys_dim < 2:
                raise ValueError("phys_dim must be >= 2")

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def low_rank(cls, rank):
        return cls("low_rank", rank=int(rank))

    @classmethod
    def mpo(cls, bond_dims, phys_dim=2):
        return cls("mpo", bond_dims=tuple(bond_dims), phys_dim=int(phys_dim))

    @property
    def sites(self):
        return len(self.bond_dims) + 1 if self.kind == "mpo" else None

    def check_dim(self, dim):
        """Raise ``ValueError`` if the model cannot describe ``dim x dim`` states."""
        if self.kind == "low_rank" and self.rank > dim:
            raise ValueError(f"rank {self.rank} exceeds dimension {dim}")
        if self.kind == "mpo" and self.phys_dim ** self.sites != dim:
            raise ValueError(
                f"mpo with {self.sites} sites of dimension {self.phys_dim} does not match dim {dim}"
            )

    def to_dict(self):
        if self.kind == "full":
            return {"kind": "full"}
        if self.kind == "low_rank":
            return {"kind": "low_rank", "rank": self.rank}
        return {"kind": "mpo", "bond_dims": list(self.bond_dims), "phys_dim": self.phys_dim}

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "rank", "bond_dims", "phys_dim"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown structure keys {sorted(extra)}")
        kind = d.get("kind", "full")
        if kind == "low_rank":
            return cls.low_rank(d["rank"])
        if kind == "mpo":
            return cls.mpo(d["bond_dims"], d.get("phys_dim", 2))
        return cls(kind)


@dataclass
class MpoState:
    """Matrix product operator given by its site cores."""

    cores: list = field(default_factory=list)

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=complex) for c in self.cores]
        if not self.cores:
            raise ValueError("an MPO needs at least one core")
        d = self.cores[0].shape[1]
        prev = 1
        for ell, c in enumerate(self.cores):
            if c.ndim != 4 or c.shape[1] != d or c.shape[2] != d or c.shape[0] != prev:
                raise ValueError(f"core {ell} has inconsistent shape {c.shape}")
            prev = c.shape[3]
        if prev != 1:
            raise ValueError("last bond dimension must be 1")

    @property
    def sites(self):
        return len(self.cores)

    @property
    def phys_dim(self):
        return self.cores[0].shape[1]

    @property
    def bond_dims(self):
        return tuple(c.shape[3] for c in self.cores[:-1])

    def to_dict(self):
        return {
            "phys_dim": self.phys_dim,
            "bond_dims": list(self.bond_dims),
            "cores": [encode_complex(c) for c in self.cores],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([decode_complex(c) for c in d["cores"]])


def project_simplex(v):
    """Euclidean projection of a real vector onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    support = u - css / k > 0
    last = np.nonzero(support)[0][-1]
    theta = css[last] / (last + 1)
    return np.maximum(v - theta, 0.0)


def _hermitian(h):
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    return (h + h.conj().T) / 2


def project_density(h):
    """Frobenius-nearest density matrix to the Hermitian part of ``h``."""
    lam, vec = np.linalg.eigh(_hermitian(h))
    lam = project_simplex(lam)
    return (vec * lam) @ vec.conj().T


def project_rank_r_density(h, r):
    """Keep the ``r`` largest eigenvalues, project them onto the simplex, drop the rest."""
    h = _hermitian(h)
    dim = h.shape[0]
    if not 1 <= r <= dim:
        raise ValueError(f"rank {r} out of range [1, {dim}]")
    lam, vec = np.linalg.eigh(h)
    lam_top = project_simplex(lam[-r:])
    vec_top = vec[:, -r:]
    return (vec_top * lam_top) @ vec_top.conj().T


def lowrank_to_density(factor, tol=1e-9):
    """``U U^dagger`` for a factor with unit Frobenius norm."""
    u = np.asarray(factor, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    norm = np.linalg.norm(u)
    if abs(norm - 1.0) > tol:
        raise DensityError(f"factor has Frobenius norm {norm:.6g}, expected 1", ["normalization"])
    return u @ u.conj().T


def num_sites(dim, phys_dim):
    n = int(round(np.log(dim) / np.log(phys_dim)))
    if phys_dim ** n != dim:
        raise ValueError(f"dimension {dim} is not a power of {phys_dim}")
    return n


def _site_major_perm(n):
    # flat (i_n..i_1, j_n..j_1) axes -> (i_1, j_1, ..., i_n, j_n)
    perm = []
    for ell in range(n):
        perm += [n - 1 - ell, 2 * n - 1 - ell]
    return perm


def mpo_to_density(m):
    """Contract an MPO into its dense ``d^n x d^n`` matrix."""
    if not isinstance(m, MpoState):
        m = MpoState(m)
    n, d = m.sites, m.phys_dim
    t = np.ones((1, 1), dtype=complex)
    for core in m.cores:
        r_in, _, _, r_out = core.shape
        t = (t @ core.reshape(r_in, d * d * r_out)).reshape(-1, r_out)
    t = t.reshape([d] * (2 * n))
    inv = np.argsort(_site_major_perm(n))
    dim = d ** n
    return t.transpose(inv).reshape(dim, dim)


def project_mpo(rho, bond_dims, phys_dim=2):
    """TT-SVD of a dense matrix into an MPO with bonds at most ``bond_dims``.

    The sweep runs left to right over sites, grouping ``(i_l, j_l)`` at each
    site and truncating every SVD to the requested bond.  Inputs that already
    admit the requested bonds are reproduced exactly.
    """
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    d = phys_dim
    n = num_sites(dim, d)
    bond_dims = tuple(int(b) for b in bond_dims)
    if len(bond_dims) != n - 1:
        raise ValueError(f"need {n - 1} bond dimensions for {n} sites, got {len(bond_dims)}")
    t = rho.reshape([d] * (2 * n)).transpose(_site_major_perm(n))
    cores = []
    r_prev = 1
    c = t.reshape(1, -1)
    for ell in range(n - 1):
        c = c.reshape(r_prev * d * d, -1)
        u, s, vh = np.linalg.svd(c, full_matrices=False)
        r = min(bond_dims[ell], s.size)
        cores.append(u[:, :r].reshape(r_prev, d, d, r))
        c = s[:r, None] * vh[:r]
        r_prev = r
    cores.append(c.reshape(r_prev, d, d, 1))
    return MpoState(cores)


def project_structure(h, model):
    """Project a Hermitian matrix onto the density set of ``model``.

    For ``mpo`` this is TT-SVD truncation followed by the density projection
    of the contraction, so the result is always a valid density.
    """
    if model.kind == "full":
        return project_density(h)
    if model.kind == "low_rank":
        return project_rank_r_density(h, model.rank)
    h = _hermitian(h)
    model.check_dim(h.shape[0])
    return project_density(mpo_to_density(project_mpo(h, model.bond_dims, model.phys_dim)))


def _random_psd_mpo_cores(bond_dims, phys_dim, n, rng):
    # every core slice X[a, :, :, b] is PSD in (i, j), so the contraction is a
    # positive combination of Kronecker products of PSD matrices
    bonds = (1,) + tuple(bond_dims) + (1,)
    cores = []
    for ell in range(n):
        r_in, r_out = bonds[ell], bonds[ell + 1]
        g = rng.standard_normal((r_in, r_out, phys_dim, phys_dim)) + 1j * rng.standard_normal(
            (r_in, r_out, phys_dim, phys_dim)
        )
        psd = g @ np.conj(np.swapaxes(g, -1, -2))
        cores.append(psd.transpose(0, 2, 3, 1))
    return cores


def random_structured_state(model, dim, seed):
    """Random density matrix from the class described by ``model``.

    ``full`` draws a normalized Wishart matrix, ``low_rank`` a normalized
    Gaussian ``dim x r`` factor, and ``mpo`` random PSD-sliced cores whose
    contraction is projected onto the density set.
    """
    model.check_dim(dim)
    rng = make_rng(seed)
    if model.kind == "full":
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        rho = g @ g.conj().T
        return rho / np.trace(rho).real
    if model.kind == "low_rank":
        u = rng.standard_normal((dim, model.rank)) + 1j * rng.standard_normal((dim, model.rank))
        u /= np.linalg.norm(u)
        return lowrank_to_density(u)
    n = model.sites
    cores = _random_psd_mpo_cores(model.bond_dims, model.phys_dim, n, rng)
    rho = mpo_to_density(MpoState(cores))
    rho = rho / np.trace(rho).real
    return project_density(rho)
