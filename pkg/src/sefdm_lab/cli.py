"""Command-line front end: capacity sweeps, detector training, BER runs and a
fast self-check suite, all emitting CSV or model files.

Flag resolution order is explicit flag > --config file (key=value lines, `#`
comments) > SEFDM_SEED environment fallback (seed only) > built-in default,
and every run logs its fully resolved spec to stderr. Exit codes: 0 success,
1 failed self-check, 2 parameter error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import cnn, harness, rates
from .core import SefdmConfig, build_subcarrier_matrix, ebn0_to_n0
from .detectors import HardDecisionDetector, MldDetector
from .errors import NumericalError, ParameterError
from .factorizations import mgs_qr, svd_complex
from .rates import waterfill

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARAMETER = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

CAPACITY_CSV_HEADER = "alpha,n,ebn0_db,snr_db,c_sefdm,r_sefdm,c_ofdm"


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


# Per-command option schema: name -> (parser, default). None defaults mean
# "resolved later" (seed falls back to SEFDM_SEED, train trace to <out>.loss.csv).
_SCHEMAS = {
    "capacity": {
        "alphas": (_float_list, [0.8, 0.85, 0.9, 1.0]),
        "ns": (_int_list, [12, 48]),
        "ebn0_min": (float, 0.0),
        "ebn0_max": (float, 20.0),
        "ebn0_step": (float, 1.0),
        "out": (str, "capacity.csv"),
    },
    "train": {
        "n": (int, 12),
        "alpha": (float, 0.85),
        "steps": (int, 100_000),
        "batch": (int, 256),
        "lr": (float, 1e-3),
        "train_ebn0": (float, 0.0),
        "seed": (int, 0),
        "out": (str, "model.sfdm"),
        "trace": (str, None),
        "log_every": (int, 0),
    },
    "ber": {
        "detector": (str, None),
        "model": (str, None),
        "n": (int, None),
        "alpha": (float, None),
        "ebn0_min": (float, 0.0),
        "ebn0_max": (float, 10.0),
        "ebn0_step": (float, 1.0),
        "min_bits": (int, harness.DEFAULT_MIN_BITS),
        "min_errors": (int, harness.DEFAULT_MIN_ERRORS),
        "seed": (int, 0),
        "threads": (int, 1),
        "out": (str, "ber.csv"),
    },
    "check": {
        "inject_gradient_fault": (bool, False),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sefdm",
        description="SEFDM faster-than-Nyquist lab: rates, detectors, BER experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cap = sub.add_parser("capacity", help="sweep capacity/rate curves to CSV")
    cap.add_argument("--alphas", type=_float_list, help="comma-separated compression factors")
    cap.add_argument("--ns", type=_int_list, help="comma-separated subcarrier counts")

    tr = sub.add_parser("train", help="train the CNN detector, write model + loss trace")
    tr.add_argument("--n", type=int)
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--steps", type=int)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--train-ebn0", type=float, dest="train_ebn0")
    tr.add_argument("--trace", type=str, help="loss trace CSV path (default <out>.loss.csv)")
    tr.add_argument("--log-every", type=int, dest="log_every")

    ber = sub.add_parser("ber", help="Monte Carlo BER curve for a detector")
    ber.add_argument("--detector", choices=["hard", "mld", "cnn"])
    ber.add_argument("--model", type=str, help="model file (required for cnn)")
    ber.add_argument("--n", type=int)
    ber.add_argument("--alpha", type=float)
    ber.add_argument("--min-bits", type=int, dest="min_bits")
    ber.add_argument("--min-errors", type=int, dest="min_errors")
    ber.add_argument("--threads", type=int)

    chk = sub.add_parser("check", help="fast invariant self-check suite")
    chk.add_argument(
        "--inject-gradient-fault",
        action="store_true",
        default=None,
        dest="inject_gradient_fault",
        help=argparse.SUPPRESS,
    )

    for p, names in ((cap, True), (ber, True)):
        p.add_argument("--ebn0-min", type=float, dest="ebn0_min")
        p.add_argument("--ebn0-max", type=float, dest="ebn0_max")
        p.add_argument("--ebn0-step", type=float, dest="ebn0_step")
    for p in (cap, tr, ber):
        p.add_argument("--out", type=str)
    for p in (tr, ber):
        p.add_argument("--seed", type=int)
    for p in (cap, tr, ber, chk):
        p.add_argument("--config", type=str, help="key=value config file; flags override")
    return parser


def _read_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


def resolve_spec(args: argparse.Namespace) -> dict:
    """Merge flags, config file, environment and defaults into one dict."""
    schema = _SCHEMAS[args.command]
    config = _read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(config) - set(schema)
    if unknown:
        raise ParameterError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    spec = {"command": args.command}
    for key, (parse, default) in schema.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            spec[key] = flag_value
        elif key in config:
            raw = config[key]
            try:
                spec[key] = parse(raw) if parse is not bool else raw.lower() in ("1", "true", "yes")
            except ValueError as exc:
                raise ParameterError(f"config key {key}={raw!r}: {exc}") from exc
        elif key == "seed" and os.environ.get("SEFDM_SEED"):
            spec[key] = int(os.environ["SEFDM_SEED"])
        else:
            spec[key] = default
    return spec


def _log_spec(spec: dict) -> None:
    rendered = " ".join(f"{k}={spec[k]}" for k in spec if k != "command")
    print(f"[sefdm] {spec['command']}: {rendered}", file=sys.stderr)


def _ebn0_grid(spec: dict) -> list[float]:
    lo, hi, step = spec["ebn0_min"], spec["ebn0_max"], spec["ebn0_step"]
    if step <= 0 or hi < lo:
        raise ParameterError(f"bad Eb/N0 grid: min={lo} max={hi} step={step}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]


def cmd_capacity(spec: dict) -> int:
    points = rates.sweep(spec["alphas"], spec["ns"], _ebn0_grid(spec))
    with open(spec["out"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CAPACITY_CSV_HEADER + "\n")
        for p in points:
            fh.write(
                f"{p.alpha:.10g},{p.n},{p.ebn0_db:.10g},{10*math.log10(p.snr):.10g},"
                f"{p.c_sefdm:.10g},{p.r_sefdm:.10g},{p.c_ofdm:.10g}\n"
            )
    print(f"wrote {len(points)} rate points to {spec['out']}")
    return EXIT_OK


def cmd_train(spec: dict) -> int:
    cfg = SefdmConfig(n_subcarriers=spec["n"], alpha=spec["alpha"], n0=1.0)
    tcfg = cnn.TrainConfig(
        steps=spec["steps"],
        batch=spec["batch"],
        learning_rate=spec["lr"],
        train_ebn0_db=spec["train_ebn0"],
        seed=spec["seed"],
    )
    model, losses = cnn.train(cfg, tcfg, log_every=spec["log_every"])
    cnn.save_model(model, spec["out"])
    trace_path = spec["trace"] or spec["out"] + ".loss.csv"
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(losses, 1):
            fh.write(f"{i},{value:.10g}\n")
    final = f"{losses[-1]:.6f}" if len(losses) else "n/a (0 steps)"
    print(f"wrote model to {spec['out']}, trace to {trace_path}; final loss {final}")
    return EXIT_OK


def _build_detector(spec: dict):
    kind = spec["detector"]
    if kind is None:
        raise ParameterError("--detector is required (hard, mld or cnn)")
    if kind == "cnn":
        if not spec["model"]:
            raise ParameterError("--model is required for the cnn detector")
        model = cnn.load_model(spec["model"])
        n = spec["n"] if spec["n"] is not None else model.n
        alpha = spec["alpha"] if spec["alpha"] is not None else model.alpha
        if n != model.n:
            raise ParameterError(f"model was built for N={model.n}, run requests N={n}")
        return cnn.CnnDetector(model), n, alpha
    n = spec["n"] if spec["n"] is not None else 12
    alpha = spec["alpha"] if spec["alpha"] is not None else 0.85
    if kind == "hard":
        return HardDecisionDetector(), n, alpha
    if kind == "mld":
        r = mgs_qr(build_subcarrier_matrix(n, alpha)).r
        return MldDetector(r), n, alpha
    raise ParameterError(f"unknown detector {kind!r}")


def cmd_ber(spec: dict) -> int:
    detector, n, alpha = _build_detector(spec)
    grid = _ebn0_grid(spec)
    cfg = SefdmConfig(n_subcarriers=n, alpha=alpha, n0=1.0)
    curve = harness.run_ber(
        detector,
        cfg,
        grid,
        min_bits=spec["min_bits"],
        min_errors=spec["min_errors"],
        seed=spec["seed"],
        threads=spec["threads"],
    )
    with open(spec["out"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(harness.BER_CSV_HEADER + "\n")
        for row in harness.ber_curve_rows(curve):
            fh.write(row + "\n")
        for row in harness.theory_rows(alpha, n, grid, spec["seed"]):
            fh.write(row + "\n")
    print(f"wrote {len(curve.points)} BER points to {spec['out']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# self-check suite
# ---------------------------------------------------------------------------

def _check_factorizations():
    worst = 0.0
    for alpha, n in ((0.8, 12), (0.8, 32), (1.0, 16)):
        f = build_subcarrier_matrix(n, alpha)
        qr = mgs_qr(f)
        svd = svd_complex(qr.r)
        eye = np.eye(n)
        worst = max(
            worst,
            np.linalg.norm(qr.q @ qr.r - f) / np.linalg.norm(f),
            np.linalg.norm(qr.q.conj().T @ qr.q - eye),
            np.linalg.norm((svd.u * svd.sigma) @ svd.v.conj().T - qr.r) / np.linalg.norm(qr.r),
            np.linalg.norm(svd.u.conj().T @ svd.u - eye),
            np.linalg.norm(svd.v.conj().T @ svd.v - eye),
        )
    return worst < 1e-10, f"worst residual {worst:.3e} (tol 1e-10)"


def _check_alpha_one():
    n = 12
    f = build_subcarrier_matrix(n, 1.0)
    qr = mgs_qr(f)
    r_err = np.linalg.norm(qr.r - np.eye(n))
    snr = 3.0
    cap = rates.capacity_sefdm(SefdmConfig(n_subcarriers=n, alpha=1.0, n0=1.0), snr)
    cap_err = abs(cap - math.log2(1.0 + snr))
    cfg = SefdmConfig(n_subcarriers=n, alpha=1.0, n0=ebn0_to_n0(0.0, 2))
    curve = harness.run_ber(
        HardDecisionDetector(), cfg, [0.0], min_bits=200_000, min_errors=50, seed=11
    )
    point = curve.points[0]
    expected = harness.theoretical_qpsk_ber(0.0)
    sigma = math.sqrt(expected * (1 - expected) / point.bits)
    ber_dev = abs(point.ber - expected) / sigma
    ok = r_err < 1e-10 and cap_err < 1e-10 and ber_dev < 3.0
    return ok, f"|R-I|={r_err:.2e} |C-log2(1+snr)|={cap_err:.2e} BER dev={ber_dev:.2f} sigma"


def cmd_check(spec: dict) -> int:
    checks = []

    def waterfill_check():
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(200):
            size = int(rng.integers(2, 24))
            sigma = 10.0 ** rng.uniform(-3, 0.5, size=size)
            n0 = float(10.0 ** rng.uniform(-2, 1))
            total = float(10.0 ** rng.uniform(-1, 2))
            alloc = waterfill(sigma, n0, total)
            worst = max(worst, abs(alloc.p.sum() - total) / total)
            active = alloc.p > 0
            worst = max(worst, float(np.abs(alloc.p[active] - (alloc.mu - n0 / sigma[active] ** 2)).max()))
            if np.any(~active):
                worst = max(worst, float((alloc.mu - n0 / sigma[~active] ** 2).max()), 0.0)
        two = waterfill(np.array([2.0, 1.0]), 1.0, 1.0)
        exact = two.mu == 9.0 / 8.0 and two.p[0] == 7.0 / 8.0 and two.p[1] == 1.0 / 8.0
        return worst < 1e-9 and exact, f"worst KKT residual {worst:.3e}, closed form exact={exact}"

    def gradient():
        model = cnn.build_model(
            n=4, widths=(4, 8), blocks_per_scale=1, kernel=3, classes=4, seed=5, dtype=np.float64
        )
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 2, 4))
        labels = rng.integers(0, 4, size=(2, 4))
        fault = 0.05 if spec["inject_gradient_fault"] else 0.0
        err = cnn.gradient_check(model, x, labels, fault=fault)
        return err < 1e-5, f"max relative gradient error {err:.3e} (tol 1e-5)"

    checks.append(("factorization residuals", _check_factorizations))
    checks.append(("waterfilling KKT", waterfill_check))
    checks.append(("gradient check", gradient))
    checks.append(("alpha=1 degeneracies", _check_alpha_one))

    failures = 0
    for name, fn in checks:
        ok, detail = fn()
        status = "PASS" if ok else "FAIL"
        failures += 0 if ok else 1
        print(f"check {name}: {status} ({detail})")
    if failures:
        print(f"{failures} check(s) failed")
        return EXIT_CHECK_FAILED
    print("all checks passed")
    return EXIT_OK


_COMMANDS = {
    "capacity": cmd_capacity,
    "train": cmd_train,
    "ber": cmd_ber,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = resolve_spec(args)
        _log_spec(spec)
        return _COMMANDS[spec["command"]](spec)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
