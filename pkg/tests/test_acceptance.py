"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import json
import time

import numpy as np

from structqst.cli import main
from structqst.estimators import (
    EstimatorConfig,
    MeasurementMap,
    factored_loss_and_gradient,
    factored_pgd,
    inverse_shadow_channel,
    iht,
    projected_least_squares,
    sample_haar_snapshots,
    shadow_channel,
    shadow_snapshot,
)
from structqst.povm import (
    PovmEnsemble,
    all_pauli_indices,
    design3_povm_qubit,
    pauli_basis_ensemble,
    pauli_basis_povm,
    pauli_matrix,
)
from structqst.qcore import haar_random_unitary
from structqst.sampler import population_frequencies
from structqst.structures import StructureModel, mpo_to_density, project_mpo, random_structured_state
from structqst.verify import (
    check_design_isometry,
    check_haar_expectation,
    check_pauli_rip,
    error_scaling_sweep,
    nonincreasing_with_tolerance,
    rip_delta_curve,
)


def random_hermitian(dim, rng):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return g + g.conj().T


def test_01_design_isometry(verdict):
    start = time.perf_counter()
    povm = design3_povm_qubit()
    hand = check_design_isometry(povm, np.diag([1.0, 0]), np.diag([0, 1.0]))
    worst = 0.0
    for i in range(1000):
        a = random_structured_state(StructureModel.full(), 2, 2 * i)
        b = random_structured_state(StructureModel.full(), 2, 2 * i + 1)
        worst = max(worst, check_design_isometry(povm, a, b).abs_deviation)
    elapsed = time.perf_counter() - start
    hand_ok = abs(hand.lhs - 2 / 9) < 1e-12 and abs(hand.rhs - 2 / 9) < 1e-12
    ok = worst < 1e-10 and hand_ok and elapsed < 1.0
    verdict(1, "design isometry", ok,
            f"max deviation {worst:.2e} (< 1e-10), hand case {hand.lhs:.12f} = {hand.rhs:.12f} (2/9), {elapsed:.2f}s (< 1s)")


def test_02_pauli_reconstruction_identity(verdict):
    start = time.perf_counter()
    worst, count = 0.0, 0
    for n in (1, 2, 3):
        for p in all_pauli_indices(n):
            worst = max(worst, np.max(np.abs(pauli_basis_povm(p).observable() - pauli_matrix(p))))
            count += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and count == 4 + 16 + 64 and elapsed < 5.0
    verdict(2, "Pauli reconstruction identity", ok,
            f"{count} indices, max entry error {worst:.1e} (< 1e-12), {elapsed:.2f}s (< 5s)")


def test_03_shadow_channel_inversion(verdict):
    rng = np.random.default_rng(3)
    worst_inv, worst_spec = 0.0, 0.0
    for dim in (2, 4, 8):
        for i in range(100):
            rho = random_structured_state(StructureModel.full(), dim, int(rng.integers(2**31)))
            worst_inv = max(worst_inv, np.max(np.abs(inverse_shadow_channel(shadow_channel(rho)) - rho)))
            snap = shadow_snapshot(haar_random_unitary(dim, 1000 * dim + i), i % dim)
            lam = np.linalg.eigvalsh(snap)
            expected = np.array([-1.0] * (dim - 1) + [float(dim)])
            worst_spec = max(worst_spec, np.max(np.abs(lam - expected)))
    ok = worst_inv < 1e-12 and worst_spec < 1e-9
    verdict(3, "shadow channel inversion", ok,
            f"max |M^-1(M(rho)) - rho| {worst_inv:.1e} (< 1e-12), snapshot spectrum error {worst_spec:.1e} (< 1e-9)")


def test_04_snapshot_unbiasedness(verdict):
    start = time.perf_counter()
    rho = random_structured_state(StructureModel.low_rank(1), 2, 4)
    snaps = sample_haar_snapshots(rho, 100000, 4)
    z = []
    for part in (np.real, np.imag):
        vals = part(snaps)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0])
        target = part(rho)
        mask = se > 0
        z.extend(np.abs(mean - target)[mask] / se[mask])
        # entries with zero spread (imaginary diagonal) must match exactly
        assert np.all(np.abs(mean - target)[~mask] < 1e-12)
    elapsed = time.perf_counter() - start
    ok = max(z) < 4 and elapsed < 60
    verdict(4, "snapshot unbiasedness", ok,
            f"max entry deviation {max(z):.2f} standard errors (< 4) over 1e5 snapshots, {elapsed:.2f}s (< 60s)")


def test_05_haar_expectation(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    errs = []
    for n in (1, 2):
        dim = 2 ** n
        delta = random_hermitian(dim, rng)
        delta -= np.trace(delta) / dim * np.eye(dim)
        mc, pred = check_haar_expectation(n, 100000, delta, 50 + n)
        errs.append(abs(mc - pred) / pred)
    elapsed = time.perf_counter() - start
    ok = max(errs) < 0.03 and elapsed < 60
    verdict(5, "Haar expectation identity", ok,
            f"relative errors n=1: {errs[0]:.2%}, n=2: {errs[1]:.2%} (< 3%), {elapsed:.2f}s (< 60s)")


def test_06_pauli_rip(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in (1, 2, 3):
        dim = 2 ** n
        paulis = np.array([pauli_matrix(p) for p in all_pauli_indices(n)])
        for _ in range(20):
            h = random_hermitian(dim, rng)
            energy = np.sum(np.einsum("qij,ji->q", paulis, h).real ** 2)
            worst = max(worst, abs(energy / (dim * np.linalg.norm(h) ** 2) - 1))
        worst = max(worst, check_pauli_rip(n, 1, "full", 20, n).empirical_delta)
    q_grid = [4, 8, 16, 32, 64]
    medians = rip_delta_curve(3, 1, q_grid, reps=20, trials=50, seed=6)
    trend = nonincreasing_with_tolerance(medians)
    ok = worst < 1e-10 and trend
    curve = ", ".join(f"Q={q}: {m:.3f}" for q, m in zip(q_grid, medians))
    verdict(6, "Pauli RIP", ok,
            f"full-set ratio error {worst:.1e} (< 1e-10); n=3 median delta {curve} (non-increasing)")


def _noiseless_setup():
    rho = random_structured_state(StructureModel.low_rank(1), 4, 7)
    ens = pauli_basis_ensemble(all_pauli_indices(2, include_identity=False))
    return rho, ens, population_frequencies(rho, ens)


def test_07_noiseless_exact_recovery(verdict):
    rho, ens, freqs = _noiseless_setup()
    rank1 = StructureModel.low_rank(1)
    runs = {
        "PLS": lambda: projected_least_squares(ens, freqs),
        "IHT": lambda: iht(ens, freqs, rank1, EstimatorConfig("iht", rank1, init="mixed")),
        "PGD": lambda: factored_pgd(ens, freqs, 1, EstimatorConfig("pgd", rank1, init="mixed")),
    }
    parts, ok = [], True
    for name, run in runs.items():
        start = time.perf_counter()
        err = np.linalg.norm(run().state - rho)
        elapsed = time.perf_counter() - start
        ok &= err < 1e-6 and elapsed < 30
        parts.append(f"{name} {err:.1e} in {elapsed:.2f}s")
    verdict(7, "noiseless exact recovery", ok, "; ".join(parts) + " (< 1e-6, < 30s each)")


def test_08_inverse_sqrt_scaling(verdict):
    start = time.perf_counter()
    rho = random_structured_state(StructureModel.low_rank(1), 2, 8)
    rep = error_scaling_sweep(EstimatorConfig("pls"), PovmEnsemble([design3_povm_qubit()]), rho,
                              [100, 1000, 10000], 50, 8)
    elapsed = time.perf_counter() - start
    ok = rep.slope is not None and -0.65 <= rep.slope <= -0.35 and elapsed < 120
    verdict(8, "1/sqrt(M) scaling", ok,
            f"log-log slope {rep.slope:.3f} (in [-0.65, -0.35]), medians "
            + ", ".join(f"{m:.4f}" for m in rep.median_errors) + f", {elapsed:.2f}s (< 120s)")


def test_09_gradient_correctness(verdict):
    rng = np.random.default_rng(9)
    ens = pauli_basis_ensemble(all_pauli_indices(2, include_identity=False))
    amap = MeasurementMap(ens)
    p = np.concatenate(population_frequencies(random_structured_state(StructureModel.low_rank(2), 4, 9), ens))
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        rank = int(rng.integers(1, 3))
        u = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
        u /= np.linalg.norm(u)
        _, grad = factored_loss_and_gradient(amap, p, u)
        fd = np.zeros_like(u)
        for idx in np.ndindex(u.shape):
            for step, weight in ((1.0, 0.5), (1j, 0.5j)):
                e = np.zeros_like(u)
                e[idx] = step * h
                diff = factored_loss_and_gradient(amap, p, u + e)[0] - factored_loss_and_gradient(amap, p, u - e)[0]
                fd[idx] += weight * diff / (2 * h)
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(grad))
    verdict(9, "gradient correctness", worst < 1e-5,
            f"max relative error vs central differences {worst:.1e} over 20 points (< 1e-5)")


def test_10_mpo_roundtrip(verdict):
    worst = 0.0
    cases = 0
    for bonds in ((1, 1), (2, 2), (2, 3), (4, 4)):
        for seed in range(5):
            rho = random_structured_state(StructureModel.mpo(bonds), 8, seed)
            worst = max(worst, np.linalg.norm(mpo_to_density(project_mpo(rho, bonds)) - rho))
            cases += 1
    verdict(10, "MPO round trip", worst < 1e-10,
            f"max Frobenius error {worst:.1e} over {cases} states at n=3, d=2 (< 1e-10)")


def test_11_cli_determinism(tmp_path, verdict):
    spec = {
        "version": 1,
        "name": "determinism",
        "seed": 11,
        "state": {"qubits": 2, "structure": {"kind": "low_rank", "rank": 1}},
        "ensemble": {"scheme": "local_haar", "settings": 8},
        "shots": 300,
        "estimator": {"method": "iht", "structure": {"kind": "low_rank", "rank": 1}},
        "outputs": "out",
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    for d in ("a", "b"):
        assert main(["run", str(path), "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = []
    for name in names:
        a, b = (tmp_path / "a" / name), (tmp_path / "b" / name)
        if name == "result.json":
            strip = lambda p: {k: v for k, v in json.loads(p.read_text()).items() if k != "timings"}
            same.append(strip(a) == strip(b))
        else:
            same.append(a.read_bytes() == b.read_bytes())
    ok = all(same) and names == sorted(p.name for p in (tmp_path / "b").iterdir())
    verdict(11, "CLI determinism", ok,
            f"{sum(same)}/{len(names)} artifacts identical ({', '.join(names)}; result.json compared without timings)")
