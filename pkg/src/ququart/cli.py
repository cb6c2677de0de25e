"""Command-line front end.

Every JSON artifact carries a ``manifest`` block (command, inputs, seed,
scheme, outputs, tool version, arguments). Nothing time- or host-dependent
is written, so re-running the same manifest reproduces the bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (REFERENCE_BASIS_MEANS, REFERENCE_UNCERTAINTY, build_asset, dumps_asset,
                          load_asset, load_preparation_config)
from .errors import (CalibrationError, ConfigurationError, DomainError, InputError,
                     InsufficientDataError)
from .hilbert import (BASIS_LABELS, QUQUART_LABELS, DensityMatrix, StateVector,
                      density_from_state, mub_state, mub_table, parse_state_label,
                      ququart_product)
from .optics import deterministic_variant, run_pipeline
from .tomography import (MUB_20, SCHEMES, SEPARABLE_36, CountsRecord, NoiseModel, apply_noise,
                         f_exp, f_exp_stderr, fidelity, fit_global_noise, linear_entropy,
                         linear_inversion, counts_to_expectations, mub_linear_estimate,
                         negativity, project_physical, purity, simulate_counts,
                         count_budget_for_stderr)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_DATA = 4

REPORT_SCHEMA = "ququart.reconstruction/1"
TABLE_SCHEMA = "ququart.table_one/1"
MUB_LIST_SCHEMA = "ququart.mub_list/1"
PREPARE_SCHEMA = "ququart.prepared/1"


def _c(z) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def manifest(command: str, args, inputs=(), scheme=None, outputs=(), **arguments) -> dict:
    return {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "seed": args.seed,
        "scheme": scheme,
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "arguments": arguments,
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def resolve_state(spec: str) -> tuple[StateVector | DensityMatrix, str]:
    """'II.3', a product label such as 'H,-2' or 'A,h', or a state/density JSON file."""
    if Path(spec).suffix == ".json":
        data = read_json(spec)
        schema = data.get("schema", "")
        if "state" in data:
            data = data["state"]
            schema = data.get("schema", "")
        if schema.startswith("ququart.density"):
            return DensityMatrix.from_json(data), spec
        return StateVector.from_json(data), spec
    if "," in spec:
        pol, oam = spec.split(",", 1)
        return ququart_product(pol.strip(), oam.strip()), spec
    basis, index = parse_state_label(spec)
    return mub_state(basis, index), spec


def as_density(x) -> DensityMatrix:
    return x if isinstance(x, DensityMatrix) else density_from_state(x)


# -- commands ---------------------------------------------------------------

def cmd_mub_list(args) -> int:
    entries = mub_table().entries()
    if args.format == "json":
        rows = [{
            "basis": e.basis, "index": e.index, "label": e.label,
            "logical": e.logical, "name": e.name,
            "amplitudes": [_c(z) for z in e.state.ququart_coefficients()],
        } for e in entries]
        emit(dumps({"schema": MUB_LIST_SCHEMA, "entries": rows,
                    "manifest": manifest("mub list", args, outputs=[args.out] if args.out else [])}),
             args.out)
        return EXIT_OK
    lines = [f"{'state':6} {'logical expansion':34} {'OAM-pi name':24} amplitudes (|1>..|4>)"]
    for e in entries:
        amps = " ".join(_fmt_amp(z) for z in e.state.ququart_coefficients())
        lines.append(f"{e.label:6} {e.logical:34} {e.name:24} {amps}")
    emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _fmt_amp(z: complex) -> str:
    return f"{z.real:+.4f}{z.imag:+.4f}j"


def cmd_prepare(args) -> int:
    basis, index = parse_state_label(args.state)
    direct = mub_state(basis, index)
    report = {"schema": PREPARE_SCHEMA, "label": f"{basis}.{index}", "method": args.method}
    if args.method == "direct":
        report["state"] = direct.to_json()
        report["success_probability"] = 1.0
    else:
        config, entry = load_preparation_config(basis, index, args.asset)
        if args.deterministic:
            config = deterministic_variant(config)
        outcome = run_pipeline(config, StateVector.basis_ket("H", 0))
        if outcome.state is None:
            raise CalibrationError(f"pipeline for {basis}.{index} has zero success probability",
                                   [f"{basis}.{index}"])
        state = outcome.state
        report["state"] = state.to_json()
        report["success_probability"] = outcome.success_probability
        report["overlap_with_direct"] = float(abs(np.vdot(direct.amplitudes, state.amplitudes)) ** 2)
        report["pipeline"] = config.to_json()
        report["calibration_scope"] = entry["scope"]
    inputs = [args.asset] if args.asset else []
    report["manifest"] = manifest("prepare", args, inputs=inputs,
                                  outputs=[args.out] if args.out else [],
                                  state=f"{basis}.{index}", method=args.method,
                                  deterministic=bool(args.deterministic))
    emit(dumps(report), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.seed is None:
        raise InputError("experiment requires --seed")
    target, source = resolve_state(args.state)
    rho = apply_noise(as_density(target), NoiseModel(args.p, args.gamma))
    record = simulate_counts(rho, args.scheme, args.mean, args.seed, workers=args.workers)
    out = record.to_json()
    out["state"] = source
    out["noise"] = {"depolarizing_p": args.p, "dephasing_gamma": args.gamma}
    inputs = [source] if Path(source).suffix == ".json" else []
    out["manifest"] = manifest("experiment", args, inputs=inputs, scheme=args.scheme,
                               outputs=[args.out] if args.out else [], state=source,
                               p=args.p, gamma=args.gamma, mean_total_counts=args.mean)
    emit(dumps(out), args.out)
    return EXIT_OK


def density_csv(rho: DensityMatrix) -> str:
    """Long-format bar heights: one row per (part, row, col), axes labeled 1..4."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["part", "row", "col", "row_state", "col_state", "value"])
    for part, fn in (("real", np.real), ("imag", np.imag)):
        for i in range(4):
            for j in range(4):
                w.writerow([part, i + 1, j + 1, QUQUART_LABELS[i], QUQUART_LABELS[j],
                            repr(float(fn(rho.entries[i, j])))])
    return buf.getvalue()


def reconstruct_report(record: CountsRecord, method: str, target=None) -> tuple[dict, DensityMatrix]:
    expected = {"linear": SEPARABLE_36, "mub": MUB_20}[method]
    if record.scheme != expected:
        raise InputError(f"method {method!r} needs {expected} counts, got {record.scheme}")
    raw = linear_inversion(counts_to_expectations(record)) if method == "linear" \
        else mub_linear_estimate(record)
    rho = project_physical(raw)
    report = {
        "schema": REPORT_SCHEMA,
        "method": method,
        "rho": [[_c(z) for z in row] for row in rho.entries],
        "axes": list(QUQUART_LABELS),
        "fidelity": None,
        "linear_entropy": linear_entropy(rho),
        "linear_entropy_unnormalized": linear_entropy(rho, normalized=False),
        "purity": purity(rho),
        "negativity_before_projection": negativity(raw),
    }
    if target is not None:
        if isinstance(target, DensityMatrix):
            raise InputError("fidelity target must be a pure state")
        report["fidelity"] = fidelity(rho, target)
    return report, rho


def cmd_reconstruct(args) -> int:
    data = read_json(args.counts)
    record = CountsRecord.from_json(data)
    target = resolve_state(args.target)[0] if args.target else None
    report, rho = reconstruct_report(record, args.method, target)
    csv_path = args.csv or (str(Path(args.out).with_suffix(".csv")) if args.out else None)
    outputs = [p for p in (args.out, csv_path) if p]
    report["manifest"] = manifest("reconstruct", args, inputs=[args.counts], scheme=record.scheme,
                                  outputs=outputs, method=args.method, target=args.target)
    if csv_path:
        Path(csv_path).write_text(density_csv(rho))
    emit(dumps(report), args.out)
    return EXIT_OK


def _table_row(job):
    basis, index, model, mean, seed, asset = job
    config, _ = load_preparation_config(basis, index, asset)
    outcome = run_pipeline(config, StateVector.basis_ket("H", 0))
    rho = apply_noise(density_from_state(outcome.state), model)
    record = simulate_counts(rho, MUB_20, mean, seed)
    f = f_exp(record, basis, index)
    total = sum(record.counts[f"{basis}.{k}"] for k in range(1, 5))
    return {
        "label": f"{basis}.{index}",
        "f_exp": f,
        "stderr": f_exp_stderr(f, total),
        "basis_total_counts": total,
        "preparation_success_probability": outcome.success_probability,
    }


def cmd_table_one(args) -> int:
    if args.seed is None:
        raise InputError("table-one requires --seed")
    load_asset(args.asset)
    fit = None
    if args.fit_noise:
        fit = fit_global_noise(ququart_product("H", "-2"), 0.985, 0.058,
                               {b: v / 100 for b, v in REFERENCE_BASIS_MEANS.items()})
        model = fit.model
    else:
        model = NoiseModel(args.p, args.gamma)
    jobs = [(b, k, model, args.mean, args.seed, args.asset) for b in BASIS_LABELS for k in range(1, 5)]
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_table_row, jobs))
    else:
        rows = [_table_row(j) for j in jobs]
    means = {}
    for b in BASIS_LABELS:
        fs = [r["f_exp"] for r in rows if r["label"].startswith(b + ".")]
        means[b] = {"simulated_percent": 100 * float(np.mean(fs)),
                    "reference_percent": REFERENCE_BASIS_MEANS[b],
                    "reference_uncertainty_percent": REFERENCE_UNCERTAINTY}
    ideal_f = float(np.mean([r["f_exp"] for r in rows]))
    report = {
        "schema": TABLE_SCHEMA,
        "noise": {"depolarizing_p": model.depolarizing_p, "dephasing_gamma": model.dephasing_gamma,
                  "fitted": bool(args.fit_noise)},
        "mean_total_counts": args.mean,
        "rows": rows,
        "basis_means": means,
        "count_budget_for_0.4pct_stderr": count_budget_for_stderr(min(ideal_f, 1 - 1e-12),
                                                                  REFERENCE_UNCERTAINTY / 100),
    }
    if fit is not None:
        report["noise"]["fit_fidelity_H_-2"] = fit.fidelity
        report["noise"]["fit_linear_entropy_H_-2"] = fit.linear_entropy
    report["manifest"] = manifest("table-one", args, inputs=[args.asset] if args.asset else [],
                                  scheme=MUB_20, outputs=[args.out] if args.out else [],
                                  p=args.p, gamma=args.gamma, fit_noise=bool(args.fit_noise),
                                  mean_total_counts=args.mean)
    if args.format == "json":
        emit(dumps(report), args.out)
        return EXIT_OK
    lines = [f"noise p={model.depolarizing_p:.4f} gamma={model.dephasing_gamma:.4f}, "
             f"mean counts/projector {args.mean:g}, seed {args.seed}",
             f"{'state':6} {'F_exp %':>9} {'+/-':>6}"]
    for r in rows:
        lines.append(f"{r['label']:6} {100 * r['f_exp']:9.2f} {100 * r['stderr']:6.2f}")
    lines.append(f"{'basis':6} {'sim %':>9} {'ref %':>9}")
    for b, m in means.items():
        lines.append(f"{b:6} {m['simulated_percent']:9.2f} {m['reference_percent']:9.1f}"
                     f" +/- {m['reference_uncertainty_percent']}")
    emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    asset = build_asset()
    text = dumps_asset(asset)
    emit(text, args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _probability(s: str) -> float:
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{s} is not in [0, 1]")
    return v


def _nonneg(s: str) -> float:
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"{s} is negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="write output here instead of stdout")
    common.add_argument("--format", choices=("table", "json"), default=argparse.SUPPRESS)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="threads for simulation (output does not depend on it)")

    p = argparse.ArgumentParser(prog="ququart", parents=[common],
                                description="Polarization-OAM ququart simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    mub = sub.add_parser("mub", help="MUB table utilities")
    mub_sub = mub.add_subparsers(dest="mub_command", required=True)
    ls = mub_sub.add_parser("list", parents=[common], help="list the 20 MUB states")
    ls.set_defaults(func=cmd_mub_list)

    pr = sub.add_parser("prepare", parents=[common], help="prepare a MUB state")
    pr.add_argument("state", help="state label, e.g. II.3")
    pr.add_argument("--method", choices=("direct", "pipeline"), default="direct")
    pr.add_argument("--deterministic", action="store_true",
                    help="replace the probabilistic transferrer with the ideal deterministic one")
    pr.add_argument("--asset", default=None, help="calibration asset (default: bundled)")
    pr.set_defaults(func=cmd_prepare)

    ex = sub.add_parser("experiment", parents=[common], help="simulate photon counts")
    ex.add_argument("state", help="label (II.3), product (H,-2 or A,h) or state/density JSON")
    ex.add_argument("--scheme", choices=SCHEMES, default=MUB_20)
    ex.add_argument("--p", type=_probability, default=0.0, help="depolarizing probability")
    ex.add_argument("--gamma", type=_probability, default=0.0, help="inter-block dephasing")
    ex.add_argument("--mean", type=_nonneg, default=1e4, help="mean counts per projector")
    ex.set_defaults(func=cmd_experiment)

    rc = sub.add_parser("reconstruct", parents=[common], help="reconstruct rho from counts")
    rc.add_argument("counts", help="counts JSON written by 'experiment'")
    rc.add_argument("--method", choices=("linear", "mub"), required=True)
    rc.add_argument("--target", default=None, help="pure target state for the fidelity")
    rc.add_argument("--csv", default=None, help="bar-chart CSV (default: --out with .csv)")
    rc.set_defaults(func=cmd_reconstruct)

    t1 = sub.add_parser("table-one", parents=[common], help="simulated fidelity table for all 20 states")
    t1.add_argument("--mean", type=_nonneg, default=1e4)
    t1.add_argument("--p", type=_probability, default=0.0)
    t1.add_argument("--gamma", type=_probability, default=0.0)
    t1.add_argument("--fit-noise", action="store_true",
                    help="use the (p, gamma) fitted to the reference fidelities")
    t1.add_argument("--asset", default=None)
    t1.set_defaults(func=cmd_table_one)

    cal = sub.add_parser("calibrate", parents=[common], help="regenerate the calibration asset")
    cal.set_defaults(func=cmd_calibrate)
    return p


_DEFAULTS = {"seed": None, "out": None, "format": "json", "workers": 1}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in _DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (InputError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigurationError, CalibrationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
