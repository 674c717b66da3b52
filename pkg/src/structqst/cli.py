"""Command-line driver: ``structqst run | sweep | verify``.

Experiments are described by a versioned JSON spec::

    {
      "version": 1,
      "name": "qubit-pls",
      "seed": 7,
      "state": {"qubits": 1, "structure": {"kind": "low_rank", "rank": 1}},
      "ensemble": {"scheme": "design3"},
      "shots": 1000,
      "estimator": {"method": "pls"},
      "outputs": "out"
    }

``state`` may give ``matrix_file`` (JSON nested ``[re, im]`` pairs) instead
of ``structure``.  ``ensemble.scheme`` is one of ``pauli_basis``, ``haar``,
``local_haar`` (both need ``settings``), ``sic``, ``design3``,
``computational`` or ``design_file`` (needs ``vector_file``).  Relative
paths are resolved against the directory holding the experiment file.

Exit codes: 0 success, 1 verification FAIL, 2 parse/usage error,
3 numerical failure, 4 file I/O error.
"""

import argparse
from dataclasses import dataclass, field, replace
import json
from pathlib import Path
import sys
import time

import numpy as np

from . import povm as pv
from .estimators import EstimatorConfig, StepSizeError, reconstruct
from .qcore import DensityError, fidelity, frobenius_distance, trace_distance, validate_density
from .sampler import ProbabilityError, child_seed, measure_ensemble
from .serialization import decode_complex, encode_complex
from .structures import StructureModel, random_structured_state
from . import verify as vf

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
SCHEMES = ("pauli_basis", "haar", "local_haar", "sic", "design3", "computational", "design_file")
GRID_PARAMS = ("shots", "Q", "rank")


class SpecError(ValueError):
    pass


def _strict_keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise SpecError(f"{where} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise SpecError(f"unknown keys in {where}: {sorted(extra)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise SpecError(f"missing keys in {where}: {missing}")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    seed: int
    state: dict
    ensemble: dict
    shots: int
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    outputs: str = "out"
    base_dir: Path = field(default=Path("."), compare=False)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        _strict_keys(
            d,
            {"version", "name", "seed", "state", "ensemble", "shots", "estimator", "outputs"},
            "spec",
            required=("version", "seed", "state", "ensemble", "shots"),
        )
        if d["version"] != 1:
            raise SpecError(f"unsupported spec version {d['version']!r}")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            raise SpecError("seed must be a nonnegative integer")
        state = dict(d["state"])
        _strict_keys(state, {"qubits", "structure", "matrix_file"}, "state", required=("qubits",))
        if ("structure" in state) == ("matrix_file" in state):
            raise SpecError("state needs exactly one of 'structure' or 'matrix_file'")
        if "structure" in state:
            try:
                state["structure"] = StructureModel.from_dict(state["structure"]).to_dict()
            except (ValueError, KeyError, TypeError) as exc:
                raise SpecError(f"state.structure: {exc}") from None
        ens = dict(d["ensemble"])
        _strict_keys(ens, {"scheme", "settings", "vector_file"}, "ensemble", required=("scheme",))
        if ens["scheme"] not in SCHEMES:
            raise SpecError(f"unknown ensemble scheme {ens['scheme']!r}; expected one of {SCHEMES}")
        if ens["scheme"] in ("haar", "local_haar") and int(ens.get("settings", 0)) < 1:
            raise SpecError(f"scheme {ens['scheme']} needs settings >= 1")
        if ens["scheme"] == "design_file" and "vector_file" not in ens:
            raise SpecError("scheme design_file needs vector_file")
        if int(d["shots"]) < 1:
            raise SpecError("shots must be >= 1")
        try:
            est = EstimatorConfig.from_dict(d.get("estimator", {}))
        except (ValueError, TypeError) as exc:
            raise SpecError(f"estimator: {exc}") from None
        return cls(
            name=str(d.get("name", "experiment")),
            seed=int(d["seed"]),
            state=state,
            ensemble=ens,
            shots=int(d["shots"]),
            estimator=est,
            outputs=str(d.get("outputs", "out")),
            base_dir=Path(base_dir),
        )

    def to_dict(self, include_outputs=True):
        out = {
            "version": 1,
            "name": self.name,
            "seed": self.seed,
            "state": dict(self.state),
            "ensemble": dict(self.ensemble),
            "shots": self.shots,
            "estimator": self.estimator.to_dict(),
        }
        if include_outputs:
            out["outputs"] = self.outputs
        return out

    @property
    def qubits(self):
        return int(self.state["qubits"])

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def load_spec(path):
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentSpec.from_dict(data, base_dir=path.parent)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def build_state(spec):
    dim = 2 ** spec.qubits
    if "matrix_file" in spec.state:
        path = spec.resolve(spec.state["matrix_file"])
        if not path.exists():
            raise FileNotFoundError(f"state matrix file not found: {path}")
        rho = decode_complex(json.loads(path.read_text()))
        if rho.shape != (dim, dim):
            raise SpecError(f"{path}: expected a {dim}x{dim} matrix, got {rho.shape}")
        return validate_density(rho)
    model = StructureModel.from_dict(spec.state["structure"])
    return random_structured_state(model, dim, child_seed(spec.seed, 0))


def build_ensemble(spec, seed=None, settings=None):
    ens = spec.ensemble
    n = spec.qubits
    scheme = ens["scheme"]
    seed = child_seed(spec.seed, 1) if seed is None else seed
    q = int(settings if settings is not None else ens.get("settings", 1))
    if scheme == "pauli_basis":
        return pv.pauli_basis_ensemble(pv.all_pauli_indices(n, include_identity=False))
    if scheme == "haar":
        return pv.haar_ensemble(2 ** n, q, seed)
    if scheme == "local_haar":
        return pv.local_haar_ensemble(n, q, seed)
    if scheme == "sic":
        return pv.PovmEnsemble([pv.local_tensor_povm([pv.sic_povm_qubit()] * n)], "sic")
    if scheme == "design3":
        return pv.PovmEnsemble([pv.local_tensor_povm([pv.design3_povm_qubit()] * n)], "design3")
    if scheme == "computational":
        return pv.PovmEnsemble([pv.computational_povm(2 ** n)], "computational")
    path = spec.resolve(ens["vector_file"])
    if not path.exists():
        raise FileNotFoundError(f"design vector file not found: {path}")
    povm = pv.design_povm_from_vectors(pv.read_design_vectors(path))
    if povm.dim != 2 ** n:
        raise SpecError(f"{path}: vectors have dimension {povm.dim}, expected {2 ** n}")
    return pv.PovmEnsemble([povm], "design_file")


def _metrics(estimate, truth):
    return {
        "trace_distance": trace_distance(estimate, truth),
        "frobenius_distance": frobenius_distance(estimate, truth),
        "fidelity": fidelity(truth, estimate),
    }


def run_experiment(spec, out_dir):
    """Generate, measure, estimate and score; write artifacts into ``out_dir``."""
    out_dir = Path(out_dir)
    timings = {}
    t0 = time.perf_counter()
    truth = build_state(spec)
    ensemble = build_ensemble(spec)
    timings["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    records = measure_ensemble(truth, ensemble, spec.shots, child_seed(spec.seed, 2))
    timings["measure"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    freqs = [rec.counts / rec.shots for rec in records]
    result = reconstruct(spec.estimator, ensemble, freqs)
    timings["estimate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    metrics = _metrics(result.state, truth)
    timings["score"] = time.perf_counter() - t0

    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "truth": "truth.json",
        "records": "records.json",
        "estimate": "estimate.json",
        "result": "result.json",
    }
    (out_dir / artifacts["truth"]).write_text(dump_json(encode_complex(truth)))
    (out_dir / artifacts["records"]).write_text(dump_json({
        "provenance": ensemble.provenance,
        "records": [rec.to_dict() for rec in records],
    }))
    (out_dir / artifacts["estimate"]).write_text(dump_json(result.to_dict(truth)))
    summary = {
        "spec": spec.to_dict(include_outputs=False),
        "metrics": metrics,
        "iterations": int(result.iterations),
        "artifacts": artifacts,
        "timings": timings,
    }
    (out_dir / artifacts["result"]).write_text(dump_json(summary))
    return summary


def sweep_experiment(spec, param, values, trials, out_dir):
    """One CSV row per (grid value, trial); a slope summary row for shot grids."""
    if param not in GRID_PARAMS:
        raise SpecError(f"unknown grid parameter {param!r}; expected one of {GRID_PARAMS}")
    if not values:
        raise SpecError("empty grid")
    truth = build_state(spec)
    randomized = spec.ensemble["scheme"] in ("haar", "local_haar")
    summary = {"param": param, "values": list(values), "trials": trials}
    if param == "shots":
        ensemble = (lambda s: build_ensemble(spec, seed=s)) if randomized else build_ensemble(spec)
        try:
            report = vf.error_scaling_sweep(spec.estimator, ensemble, truth, values, trials, spec.seed)
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        rows = report.csv_rows()
        rows.append({"trial": "summary", "param_value": "slope", "frob_error": report.slope})
        summary.update(report.to_dict())
    else:
        if param == "Q" and not randomized:
            raise SpecError("a Q grid needs a haar or local_haar ensemble")
        rows = []
        for i, value in enumerate(values):
            value = int(value)
            cfg = spec.estimator
            if param == "rank":
                cfg = replace(cfg, structure=StructureModel.low_rank(value))
            for t in range(trials):
                if param == "Q":
                    ens = build_ensemble(spec, seed=child_seed(spec.seed, 3, i, t), settings=value)
                elif randomized:
                    ens = build_ensemble(spec, seed=child_seed(spec.seed, 3, i, t))
                else:
                    ens = build_ensemble(spec)
                records = measure_ensemble(truth, ens, spec.shots, child_seed(spec.seed, 4, i, t))
                result = reconstruct(cfg, ens, [rec.counts / rec.shots for rec in records])
                m = _metrics(result.state, truth)
                rows.append({
                    "trial": t,
                    "param_value": value,
                    "frob_error": m["frobenius_distance"],
                    "trace_error": m["trace_distance"],
                    "fidelity": m["fidelity"],
                    "wall_ms": result.wall_time * 1e3,
                })
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vf.write_csv(out_dir / "sweep.csv", rows)
    (out_dir / "sweep.json").write_text(dump_json(summary))
    return rows, summary


def _random_states(n_pairs, dim, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        pair = []
        for _ in range(2):
            g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            rho = g @ g.conj().T
            pair.append(rho / np.trace(rho).real)
        out.append(pair)
    return out


def verify_isometry(args):
    povm = pv.design3_povm_qubit()
    e0, e1 = np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)
    hand = vf.check_design_isometry(povm, e0, e1)
    devs = [vf.check_design_isometry(povm, a, b).abs_deviation for a, b in _random_states(args.trials, 2, args.seed)]
    tol = 1e-10
    report = {
        "check": "isometry",
        "trials": args.trials,
        "seed": args.seed,
        "hand_case": hand.to_dict(),
        "max_deviation": max(devs + [hand.abs_deviation]),
        "tolerance": tol,
    }
    report["pass"] = report["max_deviation"] < tol
    return report, f"max_deviation={report['max_deviation']:.3g} (tol {tol:g})"


def verify_haar(args):
    dim = 2 ** args.n
    if args.n == 1:
        delta = np.diag([1.0, -1.0]).astype(complex)
    else:
        rng = np.random.default_rng(args.seed)
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        delta = g + g.conj().T
        delta -= np.trace(delta) / dim * np.eye(dim)
    mc, predicted = vf.check_haar_expectation(args.n, args.trials, delta, args.seed)
    rel = abs(mc - predicted) / predicted
    tol = 0.03
    report = {
        "check": "haar",
        "n": args.n,
        "trials": args.trials,
        "seed": args.seed,
        "mc_estimate": mc,
        "predicted": predicted,
        "relative_error": rel,
        "tolerance": tol,
        "pass": rel < tol,
    }
    return report, f"relative_error={rel:.3g} (tol {tol:g})"


def verify_rip(args):
    q = "full" if args.q == "full" else int(args.q)
    rep = vf.check_pauli_rip(args.n, args.r, q, args.trials, args.seed)
    tol = 1e-10 if q == "full" else args.delta_max
    report = {"check": "rip", "n": args.n, "r": args.r, "q": args.q, "seed": args.seed, "tolerance": tol}
    report.update(rep.to_dict())
    report["pass"] = rep.empirical_delta < tol
    return report, f"empirical_delta={rep.empirical_delta:.3g} (tol {tol:g})"


def verify_kl(args):
    povm = pv.design3_povm_qubit()
    (rho1, _), = _random_states(1, 2, args.seed)
    rho2 = rho1.copy()
    if args.distance > 0:
        rng = np.random.default_rng(args.seed + 1)
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        g = g + g.conj().T
        g -= np.trace(g) / 2 * np.eye(2)
        rho2 = rho1 + args.distance * g / np.linalg.norm(g)
    rep = vf.kl_check(rho1, rho2, povm, args.shots)
    report = {"check": "kl", "distance": args.distance, "shots": args.shots, "seed": args.seed}
    report.update(rep.to_dict())
    if args.distance == 0:
        tol = 1e-12
        report["pass"] = rep.kl < tol and rep.l2_approx < tol
        msg = f"kl={rep.kl:.3g} (tol {tol:g})"
    else:
        tol = 0.1
        ratio = rep.chi2_gap / rep.kl if rep.kl > 0 else float("inf")
        report["chi2_relative_gap"] = ratio
        report["pass"] = ratio < tol
        msg = f"chi2_relative_gap={ratio:.3g} (tol {tol:g}); l2 relative gap={rep.gap / rep.kl:.3g}"
    report["tolerance"] = tol
    return report, msg


VERIFIERS = {"isometry": verify_isometry, "haar": verify_haar, "rip": verify_rip, "kl": verify_kl}
VERIFY_DEFAULT_TRIALS = {"isometry": 1000, "haar": 100000, "rip": 100, "kl": 1}


def build_parser():
    parser = argparse.ArgumentParser(prog="structqst", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate, reconstruct and score one experiment")
    p_run.add_argument("spec")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")

    p_sweep = sub.add_parser("sweep", help="repeat an experiment over a parameter grid")
    p_sweep.add_argument("spec")
    p_sweep.add_argument("--param", required=True, choices=GRID_PARAMS)
    p_sweep.add_argument("--values", type=int, nargs="*", default=[])
    p_sweep.add_argument("--trials", type=int, default=20)
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--out")

    p_ver = sub.add_parser("verify", help="run a measurement-geometry check")
    p_ver.add_argument("check", choices=sorted(VERIFIERS))
    p_ver.add_argument("--n", type=int, default=1)
    p_ver.add_argument("--r", type=int, default=1)
    p_ver.add_argument("--q", default="full")
    p_ver.add_argument("--delta-max", type=float, default=0.5)
    p_ver.add_argument("--distance", type=float, default=0.0)
    p_ver.add_argument("--shots", type=int, default=1)
    p_ver.add_argument("--trials", type=int)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", default=".")
    return parser


def _with_overrides(spec, args):
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


def _out_dir(spec, args):
    return Path(args.out) if args.out else spec.resolve(spec.outputs)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = _with_overrides(load_spec(args.spec), args)
            summary = run_experiment(spec, _out_dir(spec, args))
            m = summary["metrics"]
            print(f"{spec.name}: fidelity={m['fidelity']:.6f} frobenius={m['frobenius_distance']:.3g}")
        elif args.command == "sweep":
            spec = _with_overrides(load_spec(args.spec), args)
            _, summary = sweep_experiment(spec, args.param, args.values, args.trials, _out_dir(spec, args))
            if "slope" in summary:
                print(f"{spec.name}: slope={summary['slope']}")
        else:
            if args.trials is None:
                args.trials = VERIFY_DEFAULT_TRIALS[args.check]
            report, msg = VERIFIERS[args.check](args)
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"verify_{args.check}.json").write_text(dump_json(report))
            print(f"{'PASS' if report['pass'] else 'FAIL'} {args.check}: {msg}")
            return EXIT_OK if report["pass"] else EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SpecError, KeyError, TypeError, pv.PovmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (StepSizeError, DensityError, ProbabilityError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
