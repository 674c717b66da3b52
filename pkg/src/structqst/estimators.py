"""State reconstruction from measurement data.

Least squares and projected least squares, iterative hard thresholding
(projected gradient on the density), factored gradient descent on a
Burer-Monteiro factor, and global-Haar classical shadows.

The measurement map sends a Hermitian ``rho`` to the stacked vector of
``<A_k, rho>`` over all effects of all settings; its adjoint sends a real
vector ``y`` to ``sum_k y_k A_k``.
"""

from dataclasses import dataclass, field
import time

import numpy as np

from .qcore import make_rng, haar_unitaries
from .structures import StructureModel, project_density, project_structure

__all__ = [
    "StepSizeError",
    "EstimatorConfig",
    "EstimateResult",
    "MeasurementMap",
    "least_squares",
    "projected_least_squares",
    "iht",
    "factored_pgd",
    "factored_loss_and_gradient",
    "shadow_snapshot",
    "shadow_channel",
    "inverse_shadow_channel",
    "sample_haar_snapshots",
    "shadows_from_frequencies",
    "shadows_from_records",
    "reconstruct",
    "shadow_state",
    "projected_shadow",
    "predict_observables_mom",
]

METHODS = ("pls", "iht", "pgd", "shadow")
INITS = ("pls", "mixed")
LOSS_FLOOR = 1e-28


class StepSizeError(RuntimeError):
    """The iteration diverged; the step size is too large."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for the reconstruction methods.

    ``step_size=None`` selects ``1/L`` (IHT) or ``1/(4L)`` (factored PGD),
    where ``L`` is the top eigenvalue of the normal operator.
    """

    method: str = "pls"
    structure: StructureModel = field(default_factory=StructureModel.full)
    step_size: float | None = None
    max_iters: int = 2000
    stop_tol: float = 1e-9
    mom_batches: int = 1
    init: str = "pls"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.step_size is not None and self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mom_batches < 1:
            raise ValueError("mom_batches must be >= 1")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INITS}")

    def to_dict(self):
        return {
            "method": self.method,
            "structure": self.structure.to_dict(),
            "step_size": self.step_size,
            "max_iters": self.max_iters,
            "stop_tol": self.stop_tol,
            "mom_batches": self.mom_batches,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"method", "structure", "step_size", "max_iters", "stop_tol", "mom_batches", "init"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown estimator keys {sorted(extra)}")
        kwargs = dict(d)
        if "structure" in kwargs:
            kwargs["structure"] = StructureModel.from_dict(kwargs["structure"])
        for key in ("max_iters", "mom_batches"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        return cls(**kwargs)


@dataclass
class EstimateResult:
    state: np.ndarray
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    wall_time: float = 0.0
    factor: np.ndarray | None = None

    def to_dict(self, truth=None):
        from .serialization import encode_complex

        out = {"method": self.method, "iterations": int(self.iterations)}
        if truth is not None:
            out["final_error"] = float(np.linalg.norm(self.state - truth))
        out["residuals"] = [float(r) for r in self.residuals]
        out["state"] = encode_complex(self.state)
        return out


class MeasurementMap:
    """Stacked linear measurement map of a POVM ensemble."""

    def __init__(self, ensemble):
        effects = ensemble.stacked_effects()
        self.dim = effects.shape[1]
        self.effects = effects
        # <A, rho> = sum_ij conj(A_ij) rho_ij
        self.matrix = effects.conj().reshape(effects.shape[0], -1)
        self._lipschitz = None

    def __call__(self, rho):
        return (self.matrix @ np.asarray(rho).reshape(-1)).real

    def adjoint(self, y):
        return np.tensordot(np.asarray(y, dtype=float), self.effects, axes=1)

    def normal(self, rho):
        return self.adjoint(self(rho))

    def lipschitz(self, iters=500, tol=1e-12):
        """Largest eigenvalue of the normal operator by power iteration."""
        if self._lipschitz is None:
            rng = np.random.default_rng(0)
            x = rng.standard_normal((self.dim, self.dim)) + 1j * rng.standard_normal((self.dim, self.dim))
            x = x + x.conj().T + np.eye(self.dim)
            x /= np.linalg.norm(x)
            lam = 0.0
            for _ in range(iters):
                y = self.normal(x)
                lam_new = float(np.real(np.vdot(x, y)))
                norm = np.linalg.norm(y)
                if norm == 0:
                    break
                x = y / norm
                if abs(lam_new - lam) <= tol * abs(lam_new):
                    lam = lam_new
                    break
                lam = lam_new
            self._lipschitz = lam
        return self._lipschitz


def _stack_freqs(ensemble, freqs):
    freqs = [np.asarray(f, dtype=float) for f in freqs]
    if len(freqs) != len(ensemble):
        raise ValueError(f"got {len(freqs)} frequency vectors for {len(ensemble)} settings")
    for q, (f, povm) in enumerate(zip(freqs, ensemble)):
        if f.shape != (povm.num_outcomes,):
            raise ValueError(f"setting {q}: expected {povm.num_outcomes} frequencies, got {f.shape}")
    return np.concatenate(freqs)


def least_squares(ensemble, freqs):
    """Minimum-norm Hermitian minimizer of ``||A(rho) - p||_2^2`` (not necessarily PSD)."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    amap = MeasurementMap(ensemble)
    p = _stack_freqs(ensemble, freqs)
    x, *_ = np.linalg.lstsq(amap.matrix, p.astype(complex), rcond=None)
    h = x.reshape(amap.dim, amap.dim)
    return (h + h.conj().T) / 2


def projected_least_squares(ensemble, freqs, structure=None):
    start = time.perf_counter()
    h = least_squares(ensemble, freqs)
    state = project_density(h) if structure is None else project_structure(h, structure)
    amap = MeasurementMap(ensemble)
    r = amap(state) - _stack_freqs(ensemble, freqs)
    return EstimateResult(state, "pls", 0, [float(r @ r)], time.perf_counter() - start)


def _initial_state(ensemble, freqs, structure, cfg, init):
    if init is not None:
        return project_structure(np.asarray(init, dtype=complex), structure)
    if cfg.init == "pls":
        return project_structure(least_squares(ensemble, freqs), structure)
    dim = ensemble.dim
    return project_structure(np.eye(dim, dtype=complex) / dim, structure)


def _converged(prev, cur, tol):
    if cur <= LOSS_FLOOR:
        return True
    return abs(prev - cur) <= tol * max(prev, LOSS_FLOOR)


def iht(ensemble, freqs, structure, cfg=None, init=None):
    """Iterative hard thresholding: gradient step on the squared loss, then projection.

    Iterates ``rho <- P(rho - mu * A^dagger(A(rho) - p))`` where ``P`` is the
    structure projection.  Starts from ``init`` if given, else from the
    configured initializer.
    """
    cfg = cfg or EstimatorConfig(method="iht", structure=structure)
    start = time.perf_counter()
    amap = MeasurementMap(ensemble)
    p = _stack_freqs(ensemble, freqs)
    mu = cfg.step_size if cfg.step_size is not None else 1.0 / amap.lipschitz()
    rho = _initial_state(ensemble, freqs, structure, cfg, init)
    r = amap(rho) - p
    loss0 = loss = float(r @ r)
    history = [loss]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        rho = project_structure(rho - mu * amap.adjoint(r), structure)
        r = amap(rho) - p
        new = float(r @ r)
        history.append(new)
        if new > 10 * max(loss0, 1e-12):
            raise StepSizeError(f"IHT diverged at iteration {it} (loss {new:.3g}, initial {loss0:.3g})")
        done = _converged(loss, new, cfg.stop_tol)
        loss = new
        if done:
            break
    return EstimateResult(rho, "iht", it, history, time.perf_counter() - start)


def factored_loss_and_gradient(amap, p, u):
    """Loss ``||A(U U^dagger) - p||^2`` and its gradient in ``conj(U)``.

    The gradient ``2 A^dagger(A(UU^dagger) - p) U`` is the Wirtinger
    derivative with respect to ``conj(U)``; in terms of the real and imaginary
    parts it equals ``(df/dRe(U) + 1j * df/dIm(U)) / 2``.
    """
    rho = u @ u.conj().T
    r = amap(rho) - p
    grad = 2.0 * amap.adjoint(r) @ u
    return float(r @ r), grad


def _factor_from_state(rho, rank):
    lam, vec = np.linalg.eigh((rho + rho.conj().T) / 2)
    lam = np.clip(lam[-rank:], 0.0, None)
    u = vec[:, -rank:] * np.sqrt(lam)
    norm = np.linalg.norm(u)
    if norm == 0:
        u = vec[:, -rank:]
        norm = np.linalg.norm(u)
    return u / norm


def factored_pgd(ensemble, freqs, rank, cfg=None, init=None, init_factor=None):
    """Projected gradient descent on a unit-norm factor ``U`` with ``rho = U U^dagger``.

    Each step moves ``U`` against the gradient of the squared loss and then
    renormalizes to ``||U||_F = 1``.
    """
    cfg = cfg or EstimatorConfig(method="pgd", structure=StructureModel.low_rank(rank))
    if rank < 1:
        raise ValueError("rank must be >= 1")
    start = time.perf_counter()
    amap = MeasurementMap(ensemble)
    p = _stack_freqs(ensemble, freqs)
    mu = cfg.step_size if cfg.step_size is not None else 1.0 / (4.0 * amap.lipschitz())
    if init_factor is not None:
        u = np.asarray(init_factor, dtype=complex).reshape(amap.dim, rank)
        u = u / np.linalg.norm(u)
    else:
        structure = StructureModel.low_rank(rank)
        u = _factor_from_state(_initial_state(ensemble, freqs, structure, cfg, init), rank)
    loss, grad = factored_loss_and_gradient(amap, p, u)
    loss0 = loss
    history = [loss]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        u = u - mu * grad
        u = u / np.linalg.norm(u)
        new, grad = factored_loss_and_gradient(amap, p, u)
        history.append(new)
        if new > 10 * max(loss0, 1e-12):
            raise StepSizeError(f"factored PGD diverged at iteration {it} (loss {new:.3g})")
        done = _converged(loss, new, cfg.stop_tol)
        loss = new
        if done:
            break
    rho = u @ u.conj().T
    return EstimateResult(rho, "pgd", it, history, time.perf_counter() - start, factor=u)


def shadow_channel(rho):
    """Expected measure-and-prepare channel of global Haar basis measurements."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    return (rho + np.trace(rho) * np.eye(dim)) / (dim + 1)


def inverse_shadow_channel(rho):
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    return (dim + 1) * rho - np.trace(rho) * np.eye(dim)


def shadow_snapshot(u, k):
    """Single-shot shadow ``(D+1) u_k u_k^dagger - I`` for outcome ``k`` in basis ``u``."""
    u = np.asarray(u, dtype=complex)
    dim = u.shape[0]
    if not 0 <= k < dim:
        raise IndexError(f"outcome {k} out of range for dimension {dim}")
    if np.linalg.norm(u.conj().T @ u - np.eye(dim)) > 1e-9:
        raise ValueError("basis matrix is not unitary")
    col = u[:, k]
    return (dim + 1) * np.outer(col, col.conj()) - np.eye(dim)


def sample_haar_snapshots(rho, count, seed):
    """Single-shot global-Haar shadows of ``rho``, shape (count, D, D)."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    rng = make_rng(seed)
    us = haar_unitaries(dim, count, rng)
    # p_k = u_k^dagger rho u_k for every column k of every unitary
    probs = np.einsum("qik,ij,qjk->qk", us.conj(), rho, us).real
    probs = np.clip(probs, 0.0, None)
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(count)[:, None] * cdf[:, -1:]
    outcomes = np.minimum((cdf <= draws).sum(axis=1), dim - 1)
    cols = us[np.arange(count), :, outcomes]
    proj = np.einsum("qi,qj->qij", cols, cols.conj())
    return (dim + 1) * proj - np.eye(dim)


def shadows_from_frequencies(ensemble, freqs):
    """Per-setting shadows ``M^{-1}(A_q^dagger(f_q))`` for a global Haar ensemble.

    With a single shot per setting this is exactly the single-shot snapshot;
    with ``M`` shots it is the average of the ``M`` single-shot snapshots.
    """
    if ensemble.provenance != "haar":
        raise ValueError("the built-in inverse channel is only valid for global Haar ensembles")
    freqs = [np.asarray(f, dtype=float) for f in freqs]
    if len(freqs) != len(ensemble):
        raise ValueError(f"got {len(freqs)} frequency vectors for {len(ensemble)} settings")
    return np.array([
        inverse_shadow_channel(np.tensordot(f, povm.effects, axes=1))
        for f, povm in zip(freqs, ensemble)
    ])


def shadows_from_records(ensemble, records):
    ordered = sorted(records, key=lambda rec: rec.setting)
    if [rec.setting for rec in ordered] != list(range(len(ensemble))):
        raise ValueError("need exactly one record per ensemble setting")
    return shadows_from_frequencies(ensemble, [rec.counts / rec.shots for rec in ordered])


def shadow_state(snapshots):
    """Average of shadow snapshots (unit trace, generally not PSD)."""
    snaps = np.asarray(snapshots, dtype=complex)
    if snaps.ndim != 3 or snaps.shape[0] == 0:
        raise ValueError("need a nonempty stack of snapshots")
    return snaps.mean(axis=0)


def projected_shadow(snapshots, structure=None):
    start = time.perf_counter()
    structure = structure or StructureModel.full()
    state = project_structure(shadow_state(snapshots), structure)
    return EstimateResult(state, "shadow", 0, [], time.perf_counter() - start)


def predict_observables_mom(snapshots, observables, batches=1):
    """Median-of-means prediction of ``trace(B rho)`` for each observable ``B``.

    Snapshots are split into ``batches`` contiguous groups of (near) equal
    size; each group mean gives one estimate and the median is returned.
    """
    snaps = np.asarray(snapshots, dtype=complex)
    obs = [np.asarray(b, dtype=complex) for b in observables]
    if not obs:
        raise ValueError("no observables given")
    if not 1 <= batches <= snaps.shape[0]:
        raise ValueError(f"batches must be in [1, {snaps.shape[0]}]")
    means = np.array([g.mean(axis=0) for g in np.array_split(snaps, batches)])
    out = []
    for b in obs:
        vals = np.einsum("ij,qji->q", b, means).real
        out.append(float(np.median(vals)))
    return np.array(out)


def reconstruct(cfg, ensemble, freqs, init=None):
    """Run the method named by ``cfg.method`` on stacked frequencies."""
    structure = cfg.structure
    if cfg.method == "pls":
        return projected_least_squares(ensemble, freqs, None if structure.kind == "full" else structure)
    if cfg.method == "iht":
        return iht(ensemble, freqs, structure, cfg, init=init)
    if cfg.method == "pgd":
        rank = structure.rank if structure.kind == "low_rank" else ensemble.dim
        return factored_pgd(ensemble, freqs, rank, cfg, init=init)
    return projected_shadow(shadows_from_frequencies(ensemble, freqs), structure)
