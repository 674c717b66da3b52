"""Numerical checks of measurement geometry and recovery scaling.

Every check returns a small report object with ``to_dict`` for JSON output;
trial-based reports also expose ``csv_rows`` (one row per trial).
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from .estimators import StepSizeError, reconstruct
from .povm import pauli_matrix
from .qcore import DensityError, fidelity, frobenius_distance, haar_unitaries, make_rng, trace_distance
from .sampler import child_seed, measure_ensemble, outcome_probabilities, population_frequencies
from .structures import StructureModel

__all__ = [
    "IsometryReport",
    "RipReport",
    "KLReport",
    "ScalingReport",
    "BudgetReport",
    "check_design_isometry",
    "check_haar_expectation",
    "check_pauli_rip",
    "random_low_rank_hermitian",
    "rip_delta_curve",
    "kl_check",
    "error_scaling_sweep",
    "log_covering_number",
    "design_gamma",
    "sample_budget",
    "nonincreasing_with_tolerance",
    "write_csv",
]

CSV_COLUMNS = ("trial", "param_value", "frob_error", "trace_error", "fidelity", "wall_ms")
FLOOR = 1e-10


@dataclass
class IsometryReport:
    lhs: float
    rhs: float
    abs_deviation: float

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "abs_deviation": self.abs_deviation}


@dataclass
class RipReport:
    ratios: np.ndarray
    empirical_delta: float

    def to_dict(self):
        return {"ratios": [float(r) for r in self.ratios], "empirical_delta": self.empirical_delta}

    def csv_rows(self):
        return [{"trial": t, "ratio": float(r)} for t, r in enumerate(self.ratios)]


@dataclass
class KLReport:
    """KL divergence of two multinomials and its quadratic surrogates.

    ``l2_approx`` is the identity-covariance surrogate ``(M/2)||p1 - p2||^2``
    and ``gap = |kl - l2_approx|``.  ``chi2_approx`` is the Fisher-weighted
    surrogate ``(M/2) sum (p1 - p2)^2 / p2``, the actual second-order term.
    """

    kl: float
    l2_approx: float
    gap: float
    chi2_approx: float

    @property
    def chi2_gap(self):
        return abs(self.kl - self.chi2_approx)

    def to_dict(self):
        return {
            "kl": self.kl,
            "l2_approx": self.l2_approx,
            "gap": self.gap,
            "chi2_approx": self.chi2_approx,
        }


@dataclass
class ScalingReport:
    m_grid: list
    median_errors: list
    slope: float | None
    floor: bool
    failures: int
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "m_grid": list(self.m_grid),
            "median_errors": list(self.median_errors),
            "slope": self.slope,
            "floor": self.floor,
            "failures": self.failures,
        }

    def csv_rows(self):
        return list(self.rows)


@dataclass
class BudgetReport:
    """Order-of-magnitude shot budget; all universal constants are set to 1."""

    kind: str
    log_covering: float
    gamma: float
    epsilon: float
    recommended_shots: float
    advisory: str = "order-of-magnitude planner; unspecified constants set to 1"

    def to_dict(self):
        return {
            "kind": self.kind,
            "log_covering": self.log_covering,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "recommended_shots": self.recommended_shots,
            "advisory": self.advisory,
        }


def _effect_overlaps(effects, delta):
    return np.einsum("kij,ji->k", effects, delta).real


def check_design_isometry(povm, rho1, rho2):
    """Both sides of the exact 2-design isometry for a rank-one design POVM."""
    rho1 = np.asarray(rho1, dtype=complex)
    rho2 = np.asarray(rho2, dtype=complex)
    if rho1.shape != rho2.shape or rho1.shape != (povm.dim, povm.dim):
        raise ValueError("state and POVM dimensions do not match")
    delta = rho1 - rho2
    dim, k = povm.dim, povm.num_outcomes
    lhs = float(np.sum(_effect_overlaps(povm.effects, delta) ** 2))
    rhs = float(dim * np.linalg.norm(delta) ** 2 / (k * (dim + 1)))
    return IsometryReport(lhs, rhs, abs(lhs - rhs))


def check_haar_expectation(n, trials, delta, seed, chunk=20000):
    """Monte Carlo of ``sum_k <A_k, delta>^2`` per Haar basis setting.

    Returns ``(mc_estimate, predicted)`` where ``predicted`` is
    ``||delta||_F^2 / (2^n + 1)``.
    """
    delta = np.asarray(delta, dtype=complex)
    dim = 2 ** n
    if delta.shape != (dim, dim):
        raise ValueError(f"delta must be {dim}x{dim}")
    if abs(np.trace(delta)) > 1e-9:
        raise ValueError("delta must be traceless")
    if trials < 1:
        raise ValueError("need at least one trial")
    predicted = float(np.linalg.norm(delta) ** 2 / (dim + 1))
    rng = make_rng(seed)
    total = 0.0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        us = haar_unitaries(dim, m, rng)
        overlaps = np.einsum("qik,ij,qjk->qk", us.conj(), delta, us).real
        total += float(np.sum(overlaps ** 2))
        done += m
    return total / trials, predicted


def random_low_rank_hermitian(dim, rank, rng):
    """Random rank-``rank`` Hermitian matrix with unit Frobenius norm."""
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    q, _ = np.linalg.qr(g)
    lam = rng.standard_normal(rank)
    h = (q * lam) @ q.conj().T
    return h / np.linalg.norm(h)


def check_pauli_rip(n, r, q, trials, seed):
    """Normalized Pauli energy ``(2^n/Q) ||A(rho)||^2 / ||rho||_F^2`` on random rank-r inputs.

    ``q="full"`` uses every Pauli operator once; an integer draws that many
    indices uniformly with replacement.
    """
    dim = 2 ** n
    if not 1 <= r <= dim or trials < 1:
        raise ValueError("invalid rank or trial count")
    rng = make_rng(seed)
    if q == "full":
        indices = np.array(np.meshgrid(*[range(4)] * n, indexing="ij")).reshape(n, -1).T
    else:
        q = int(q)
        if not 1 <= q <= 4 ** n:
            raise ValueError(f"Q must be in [1, 4^n], got {q}")
        indices = rng.integers(0, 4, size=(q, n))
    paulis = np.array([pauli_matrix(p) for p in indices])
    scale = dim / len(indices)
    ratios = np.empty(trials)
    for t in range(trials):
        h = random_low_rank_hermitian(dim, r, rng)
        ratios[t] = scale * np.sum(_effect_overlaps(paulis, h) ** 2) / np.linalg.norm(h) ** 2
    return RipReport(ratios, float(np.max(np.abs(ratios - 1))))


def rip_delta_curve(n, r, q_grid, reps, trials, seed):
    """Median ``empirical_delta`` over ``reps`` independent index draws, per Q."""
    medians = []
    for i, q in enumerate(q_grid):
        deltas = [
            check_pauli_rip(n, r, q, trials, child_seed(seed, i, rep)).empirical_delta
            for rep in range(reps)
        ]
        medians.append(float(np.median(deltas)))
    return medians


def nonincreasing_with_tolerance(values, rel_tol=0.05, max_inversions=1):
    """True if at most ``max_inversions`` increases occur, each within ``rel_tol``."""
    inversions = 0
    for a, b in zip(values, values[1:]):
        if b > a:
            if b > a * (1 + rel_tol):
                return False
            inversions += 1
    return inversions <= max_inversions


def kl_check(rho1, rho2, povm, shots):
    """KL divergence between the M-shot outcome distributions of two states.

    Uses natural logarithms.  If ``p2`` vanishes where ``p1`` does not, the
    divergence is reported as ``inf``.
    """
    p1 = outcome_probabilities(rho1, povm)
    p2 = outcome_probabilities(rho2, povm)
    mask = p1 > 0
    if np.any(p2[mask] <= 0):
        kl = math.inf
    else:
        kl = float(shots * np.sum(p1[mask] * np.log(p1[mask] / p2[mask])))
        kl = max(kl, 0.0)
    diff = p1 - p2
    l2 = float(shots / 2 * np.sum(diff ** 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = np.where(p2 > 0, diff ** 2 / np.where(p2 > 0, p2, 1.0), np.where(diff == 0, 0.0, np.inf))
    chi2 = float(shots / 2 * np.sum(chi))
    return KLReport(kl, l2, abs(kl - l2), chi2)


def _metrics(estimate, truth):
    try:
        fid = fidelity(truth, estimate)
    except DensityError:
        fid = float("nan")
    return frobenius_distance(estimate, truth), trace_distance(estimate, truth), fid


def error_scaling_sweep(cfg, ensemble, rho_star, m_grid, trials, seed, noiseless=False):
    """Median Frobenius error versus shots and its log-log slope.

    ``ensemble`` is a fixed :class:`~structqst.povm.PovmEnsemble` or a
    callable ``seed -> PovmEnsemble`` redrawn for every trial.  Trial ``t`` at
    grid point ``i`` uses seeds derived from ``(seed, i, t)``.  With
    ``noiseless=True`` exact probabilities replace sampled frequencies; if the
    errors sit at the numerical floor the slope fit is rejected
    (``slope=None``, ``floor=True``).
    """
    m_grid = [int(m) for m in m_grid]
    if len(m_grid) < 3 or any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise ValueError("M grid must be strictly increasing with at least 3 points")
    rows, medians, failures = [], [], 0
    for i, m in enumerate(m_grid):
        errors = []
        for t in range(trials):
            ens = ensemble(child_seed(seed, i, t, 0)) if callable(ensemble) else ensemble
            if noiseless:
                freqs = population_frequencies(rho_star, ens)
            else:
                records = measure_ensemble(rho_star, ens, m, child_seed(seed, i, t, 1))
                freqs = [rec.counts / rec.shots for rec in records]
            try:
                result = reconstruct(cfg, ens, freqs)
            except (StepSizeError, np.linalg.LinAlgError):
                failures += 1
                continue
            frob, tr, fid = _metrics(result.state, rho_star)
            errors.append(frob)
            rows.append({
                "trial": t,
                "param_value": m,
                "frob_error": frob,
                "trace_error": tr,
                "fidelity": fid,
                "wall_ms": result.wall_time * 1e3,
            })
        medians.append(float(np.median(errors)) if errors else float("nan"))
    floor = bool(np.nanmax(medians) < FLOOR)
    slope = None
    if not floor and all(np.isfinite(medians)):
        slope = float(np.polyfit(np.log(m_grid), np.log(medians), 1)[0])
    return ScalingReport(m_grid, medians, slope, floor, failures, rows)


def log_covering_number(model, n, d):
    """Log covering number of a state class with unit constants (natural log for MPO)."""
    if model.kind == "full":
        return float(d ** (2 * n))
    if model.kind == "low_rank":
        return float(d ** n * model.rank)
    if n < 2:
        raise ValueError("MPO budget needs n >= 2 sites")
    rbar = max(model.bond_dims) if model.bond_dims else 1
    return float(n * d ** 2 * rbar ** 2 * math.log(n))


def design_gamma(rho, povm, t):
    """``K max_k p_k`` for a 2-design POVM, 1 for designs of order above 2."""
    if t is None:
        raise ValueError("design order t must be given explicitly")
    if t < 2:
        raise ValueError("the budget applies to t-designs with t >= 2")
    if t > 2:
        return 1.0
    p = outcome_probabilities(rho, povm)
    return float(povm.num_outcomes * np.max(p))


def sample_budget(model, n, d, epsilon, gamma=None, rho=None, povm=None, t=None):
    """Recommended shots ``log N * gamma / epsilon^2`` for target Frobenius error ``epsilon``."""
    if not isinstance(model, StructureModel):
        raise ValueError(f"unknown state class {model!r}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if gamma is None:
        if rho is None or povm is None:
            raise ValueError("give gamma or both rho and povm")
        gamma = design_gamma(rho, povm, t)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    log_n = log_covering_number(model, n, d)
    return BudgetReport(model.kind, log_n, float(gamma), float(epsilon), log_n * gamma / epsilon ** 2)


def write_csv(path, rows, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
