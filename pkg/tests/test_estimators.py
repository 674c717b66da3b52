import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from structqst.estimators import (
    EstimateResult,
    EstimatorConfig,
    MeasurementMap,
    StepSizeError,
    factored_loss_and_gradient,
    factored_pgd,
    iht,
    inverse_shadow_channel,
    least_squares,
    predict_observables_mom,
    projected_least_squares,
    projected_shadow,
    reconstruct,
    sample_haar_snapshots,
    shadow_channel,
    shadow_snapshot,
    shadow_state,
    shadows_from_frequencies,
    shadows_from_records,
)
from structqst.povm import (
    PovmEnsemble,
    all_pauli_indices,
    computational_povm,
    design3_povm_qubit,
    haar_ensemble,
    pauli_basis_ensemble,
    pauli_matrix,
)
from structqst.qcore import fidelity, haar_random_unitary, is_density
from structqst.sampler import measure_ensemble, population_frequencies
from structqst.structures import StructureModel, random_structured_state

PAULI2 = pauli_basis_ensemble(all_pauli_indices(2, include_identity=False))
PAULI1 = pauli_basis_ensemble(all_pauli_indices(1, include_identity=False))


def pure_state(dim, seed):
    return random_structured_state(StructureModel.low_rank(1), dim, seed)


def test_measurement_map_adjoint_identity():
    rng = np.random.default_rng(0)
    amap = MeasurementMap(PAULI2)
    h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = h + h.conj().T
    y = rng.standard_normal(amap.matrix.shape[0])
    assert abs(amap(h) @ y - np.vdot(h, amap.adjoint(y)).real) < 1e-10


def test_lipschitz_matches_top_singular_value():
    amap = MeasurementMap(PAULI2)
    smax = np.linalg.svd(amap.matrix, compute_uv=False)[0]
    assert abs(amap.lipschitz() - smax ** 2) < 1e-8 * smax ** 2


def test_least_squares_examples():
    rho = random_structured_state(StructureModel.full(), 2, 3)
    assert np.linalg.norm(least_squares(PAULI1, population_frequencies(rho, PAULI1)) - rho) < 1e-8
    h = least_squares(PovmEnsemble([computational_povm(2)]), [np.array([1.0, 0.0])])
    assert np.allclose(h, np.diag([1.0, 0.0]), atol=1e-12)
    # consistency: any Hermitian input reproduces its own data
    amap = MeasurementMap(PAULI2)
    x = random_structured_state(StructureModel.full(), 4, 1)
    p = amap(x)
    freqs = np.split(p, 9)
    assert np.linalg.norm(amap(least_squares(PAULI2, freqs)) - p) < 1e-10


def test_pls_examples():
    rho = random_structured_state(StructureModel.full(), 4, 2)
    res = projected_least_squares(PAULI2, population_frequencies(rho, PAULI2))
    assert np.linalg.norm(res.state - rho) < 1e-8
    ens = PovmEnsemble([design3_povm_qubit()])
    mixed = projected_least_squares(ens, population_frequencies(np.eye(2) / 2, ens)).state
    assert np.allclose(mixed, np.eye(2) / 2, atol=1e-12)


def test_pls_two_qubit_monte_carlo():
    rho = pure_state(4, 5)
    ok = 0
    for t in range(100):
        recs = measure_ensemble(rho, PAULI2, 10000, t)
        est = projected_least_squares(PAULI2, [r.counts / r.shots for r in recs]).state
        ok += np.linalg.norm(est - rho) < 0.1
    assert ok >= 95


def test_iht_noiseless_from_mixed_start():
    rho = pure_state(4, 7)
    cfg = EstimatorConfig("iht", StructureModel.low_rank(1), init="mixed")
    res = iht(PAULI2, population_frequencies(rho, PAULI2), StructureModel.low_rank(1), cfg)
    assert np.linalg.norm(res.state - rho) < 1e-6
    assert res.iterations <= 500


def test_iht_zero_step_is_fixed_point():
    rho = pure_state(4, 8)
    init = random_structured_state(StructureModel.low_rank(1), 4, 9)
    cfg = EstimatorConfig("iht", StructureModel.low_rank(1), step_size=0.0, max_iters=5)
    res = iht(PAULI2, population_frequencies(rho, PAULI2), StructureModel.low_rank(1), cfg, init=init)
    assert np.linalg.norm(res.state - init) < 1e-12


def test_iht_stays_at_truth():
    rho = pure_state(4, 10)
    freqs = population_frequencies(rho, PAULI2)
    res = iht(PAULI2, freqs, StructureModel.low_rank(1), init=rho)
    assert np.linalg.norm(res.state - rho) < 1e-12
    assert all(r < 1e-12 for r in res.residuals)


def test_iht_divergence_detected():
    rho = pure_state(4, 11)
    # L = 9 here, so a unit step is far beyond the stable range 2/L
    init = 0.95 * rho + 0.05 * np.eye(4) / 4
    cfg = EstimatorConfig("iht", StructureModel.full(), step_size=1.0)
    with pytest.raises(StepSizeError):
        iht(PAULI2, population_frequencies(rho, PAULI2), StructureModel.full(), cfg, init=init)


def test_pgd_noiseless_and_norm_contract():
    rho = pure_state(4, 12)
    cfg = EstimatorConfig("pgd", StructureModel.low_rank(1), init="mixed")
    res = factored_pgd(PAULI2, population_frequencies(rho, PAULI2), 1, cfg)
    assert fidelity(res.state, rho) > 1 - 1e-6
    assert np.linalg.norm(res.state - rho) < 1e-6
    assert abs(np.linalg.norm(res.factor) - 1) < 1e-12


def test_pgd_iterates_keep_unit_norm():
    rho = pure_state(4, 13)
    rng = np.random.default_rng(0)
    u0 = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    for iters in (1, 3, 10):
        cfg = EstimatorConfig("pgd", StructureModel.low_rank(2), max_iters=iters, stop_tol=0.0)
        res = factored_pgd(PAULI2, population_frequencies(rho, PAULI2), 2, cfg, init_factor=u0)
        assert abs(np.linalg.norm(res.factor) - 1) < 1e-12


def test_pgd_stationary_at_truth():
    rho = pure_state(4, 14)
    lam, vec = np.linalg.eigh(rho)
    u = vec[:, -1:] * np.sqrt(lam[-1])
    res = factored_pgd(PAULI2, population_frequencies(rho, PAULI2), 1, init_factor=u)
    assert np.linalg.norm(res.state - rho) < 1e-12
    assert all(r < 1e-12 for r in res.residuals)


def central_difference_gradient(amap, p, u, h=1e-6):
    g = np.zeros_like(u)
    for idx in np.ndindex(u.shape):
        for unit, part in ((1.0, "re"), (1j, "im")):
            e = np.zeros_like(u)
            e[idx] = unit * h
            up = factored_loss_and_gradient(amap, p, u + e)[0]
            dn = factored_loss_and_gradient(amap, p, u - e)[0]
            d = (up - dn) / (2 * h)
            g[idx] += d / 2 if part == "re" else 1j * d / 2
    return g


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_gradient_matches_finite_differences(seed, rank):
    rng = np.random.default_rng(seed + 1)
    amap = MeasurementMap(PAULI2)
    p = np.concatenate(population_frequencies(pure_state(4, seed), PAULI2))
    u = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
    u /= np.linalg.norm(u)
    _, g = factored_loss_and_gradient(amap, p, u)
    fd = central_difference_gradient(amap, p, u)
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5


def test_shadow_channel_inverse():
    rng = np.random.default_rng(1)
    for dim in (2, 4, 8):
        x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        assert np.allclose(inverse_shadow_channel(shadow_channel(x)), x, atol=1e-12)
        assert np.allclose(shadow_channel(inverse_shadow_channel(x)), x, atol=1e-12)


def test_shadow_snapshot_examples():
    assert np.allclose(shadow_snapshot(np.eye(2), 0), np.diag([2.0, -1.0]))
    for dim in (2, 4, 8):
        snap = shadow_snapshot(haar_random_unitary(dim, dim), dim - 1)
        lam = np.linalg.eigvalsh(snap)
        assert np.allclose(lam, [-1] * (dim - 1) + [dim], atol=1e-9)
        assert abs(np.trace(snap) - 1) < 1e-12
    with pytest.raises(IndexError):
        shadow_snapshot(np.eye(2), 2)
    with pytest.raises(ValueError):
        shadow_snapshot(np.ones((2, 2)), 0)


def test_shadow_state_examples():
    s = shadow_snapshot(np.eye(2), 1)
    assert np.allclose(shadow_state([s]), s)
    snaps = sample_haar_snapshots(np.eye(2) / 2, 500, 3)
    assert abs(np.trace(shadow_state(snaps)) - 1) < 1e-12
    with pytest.raises(ValueError):
        shadow_state(np.zeros((0, 2, 2)))


def test_shadow_mean_converges():
    rho = np.diag([1.0, 0.0]).astype(complex)
    snaps = sample_haar_snapshots(rho, 100000, 4)
    assert np.linalg.norm(shadow_state(snaps) - rho) < 0.05


def test_projected_shadow_examples():
    res = projected_shadow([np.diag([2.0, -1.0])])
    assert np.allclose(res.state, np.diag([1.0, 0.0]))
    rho = pure_state(2, 3)
    res = projected_shadow(sample_haar_snapshots(rho, 10000, 5), StructureModel.low_rank(1))
    assert fidelity(res.state, rho) > 0.95
    assert np.allclose(projected_shadow([rho]).state, rho, atol=1e-12)


def test_shadows_from_frequencies_match_snapshots():
    rho = pure_state(2, 6)
    ens = haar_ensemble(2, 30, 6)
    recs = measure_ensemble(rho, ens, 1, 6)
    snaps = shadows_from_records(ens, recs)
    for rec, povm, snap in zip(recs, ens, snaps):
        k = int(np.argmax(rec.counts))
        # the basis column is recovered from the rank-one effect
        lam, vec = np.linalg.eigh(povm.effects[k])
        col = vec[:, -1:]
        assert np.allclose(snap, 3 * col @ col.conj().T - np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        shadows_from_frequencies(PAULI1, population_frequencies(rho, PAULI1))


def test_mom_examples():
    rho = np.diag([1.0, 0.0]).astype(complex)
    snaps = sample_haar_snapshots(rho, 10000, 7)
    est = predict_observables_mom(snaps, [np.eye(2), pauli_matrix((3,))], batches=10)
    assert abs(est[0] - 1) < 1e-12
    assert abs(est[1] - 1) < 0.1
    with pytest.raises(ValueError):
        predict_observables_mom(snaps, [], batches=1)
    with pytest.raises(ValueError):
        predict_observables_mom(snaps[:3], [np.eye(2)], batches=4)


def test_config_roundtrip_and_validation():
    cfg = EstimatorConfig("pgd", StructureModel.low_rank(2), step_size=0.1, mom_batches=3)
    assert EstimatorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        EstimatorConfig("gd")
    with pytest.raises(ValueError):
        EstimatorConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        EstimatorConfig.from_dict({"method": "pls", "stepsize": 1})


def test_reconstruct_dispatch():
    rho = pure_state(4, 15)
    freqs = population_frequencies(rho, PAULI2)
    for method in ("pls", "iht", "pgd"):
        res = reconstruct(EstimatorConfig(method, StructureModel.low_rank(1)), PAULI2, freqs)
        assert isinstance(res, EstimateResult) and res.method == method
        assert np.linalg.norm(res.state - rho) < 1e-6
    ens = haar_ensemble(4, 200, 1)
    res = reconstruct(EstimatorConfig("shadow"), ens, population_frequencies(rho, ens))
    assert is_density(res.state)
    d = res.to_dict(rho)
    assert set(d) == {"method", "iterations", "final_error", "residuals", "state"}
