"""Forward simulation of finite-shot POVM measurements."""

from dataclasses import dataclass

import numpy as np

from .qcore import make_rng

__all__ = [
    "ProbabilityError",
    "MeasurementRecord",
    "PauliEstimate",
    "child_seed",
    "outcome_probabilities",
    "population_frequencies",
    "sample_counts",
    "empirical_frequencies",
    "measure_ensemble",
    "estimate_pauli_observable",
]

CLIP_TOL = 1e-12
IMAG_TOL = 1e-10
SUM_TOL = 1e-9


class ProbabilityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Outcome counts of ``shots`` repetitions of setting ``setting``."""

    setting: int
    shots: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0) or counts.sum() != self.shots:
            raise ValueError("counts must be nonnegative and sum to shots")
        object.__setattr__(self, "counts", counts)

    def to_dict(self):
        return {"setting": int(self.setting), "shots": int(self.shots), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["setting"]), int(d["shots"]), np.asarray(d["counts"], dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, MeasurementRecord):
            return NotImplemented
        return (
            self.setting == other.setting
            and self.shots == other.shots
            and np.array_equal(self.counts, other.counts)
        )


@dataclass(frozen=True)
class PauliEstimate:
    index: tuple
    value: float
    shots: int


def child_seed(seed, *path):
    """Deterministic seed for a sub-task identified by integer ``path``.

    Derived seeds depend only on ``(seed, path)``, never on execution order.
    """
    path = tuple(int(p) for p in path)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + path)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=path)


def outcome_probabilities(rho, povm):
    """``p_k = Re trace(A_k rho)`` with validity checks."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (povm.dim, povm.dim):
        raise ValueError(f"state shape {rho.shape} does not match POVM dimension {povm.dim}")
    # trace(A_k rho) = sum_ij A_k[i, j] rho[j, i]
    p = np.einsum("kij,ji->k", povm.effects, rho)
    if np.max(np.abs(p.imag)) > IMAG_TOL:
        raise ProbabilityError(f"complex outcome probability (imaginary part {np.max(np.abs(p.imag)):.3g})")
    return _clean_distribution(p.real)


def _clean_distribution(p):
    p = np.asarray(p, dtype=float)
    if np.min(p) < -CLIP_TOL:
        raise ProbabilityError(f"negative outcome probability {np.min(p):.3g}")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise ProbabilityError(f"probabilities sum to {p.sum():.12g}")
    if np.min(p) < 0:
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
    return p


def population_frequencies(rho, ensemble):
    """Exact outcome probabilities for every setting of an ensemble."""
    return [outcome_probabilities(rho, povm) for povm in ensemble]


def sample_counts(dist, shots, seed, setting=0):
    """Multinomial outcome counts for ``shots`` independent repetitions."""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    p = _clean_distribution(dist)
    counts = make_rng(seed).multinomial(int(shots), p)
    return MeasurementRecord(setting, int(shots), counts)


def empirical_frequencies(rec):
    if rec.shots < 1:
        raise ValueError("record has no shots")
    return rec.counts / rec.shots


def measure_ensemble(rho, ensemble, shots, seed):
    """Simulate every setting of ``ensemble`` on ``rho``.

    ``shots`` is an int or a per-setting sequence.  Setting ``q`` draws its
    counts from ``child_seed(seed, q)``.
    """
    q_count = len(ensemble)
    shots_list = [int(shots)] * q_count if np.ndim(shots) == 0 else [int(m) for m in shots]
    if len(shots_list) != q_count:
        raise ValueError("need one shot count per setting")
    records = []
    for q, (povm, m) in enumerate(zip(ensemble, shots_list)):
        p = outcome_probabilities(rho, povm)
        records.append(sample_counts(p, m, child_seed(seed, q), setting=q))
    return records


def estimate_pauli_observable(rec, signed, index=None):
    """Empirical Pauli expectation ``sum_j alpha_j * f_j / M``."""
    if rec.counts.size != signed.signs.size:
        raise ValueError(
            f"record has {rec.counts.size} outcomes but the signed POVM has {signed.signs.size}"
        )
    value = float(signed.signs @ empirical_frequencies(rec))
    return PauliEstimate(tuple(index) if index is not None else (), value, rec.shots)
