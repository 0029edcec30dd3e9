"""Command-line entry point: ``qfibounds <subcommand> [flags]``.

Every run writes its data (CSV or one JSON object per line) to ``--out`` or
stdout, plus a manifest with the resolved config, seed and package version to
``<out>.manifest.json`` (stderr when writing to stdout).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import fields

from . import __version__
from . import bench
from . import budget as bd
from . import estimators as est
from . import numkernel as nk
from . import protocol as pr
from .errors import CapacityError, NumericalIntegrityError, QFIError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_CAPACITY = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def int_list(text: str) -> tuple[int, ...]:
    """``"0..8"``, ``"2,4,6"`` or a mix like ``"2..4,8"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return tuple(out)


def float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def order_list(text: str) -> tuple:
    items = []
    for part in text.split(","):
        part = part.strip()
        if part.lower() == "qfi":
            items.append("qfi")
        else:
            items.extend(int_list(part))
    return tuple(items)


# --- parser ---------------------------------------------------------------------


def _globals(p: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--out", default=default, help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=default)
    p.add_argument("--config", default=default, help="JSON file mirroring ExperimentConfig")


def _family(p):
    p.add_argument("--family", choices=("ghz", "noon", "custom"))
    p.add_argument("--custom-state", dest="custom_state", help=".npy density matrix (family custom)")
    p.add_argument("--custom-observable", dest="custom_observable", help=".npy generator (family custom)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qfibounds", description="Polynomial QFI bounds from randomized measurements.")
    parser.add_argument("--version", action="version", version=__version__)
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        _family(p)
        return p

    p = add("bounds", "exact F_n and F_Q for one state")
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--orders", type=int_list)

    p = add("convergence", "exact F_n table over N and p")
    p.add_argument("--N", dest="N_list", type=int_list)
    p.add_argument("--p", dest="p_list", type=float_list)
    p.add_argument("--n-max", dest="n_max", type=int)

    p = add("pstar", "noise thresholds p* per depth and order")
    p.add_argument("--N", dest="N_list", type=int_list)
    p.add_argument("--k", dest="k_list", type=int_list)
    p.add_argument("--orders", dest="pstar_orders", type=order_list)

    p = add("simulate", "simulate one acquisition and write its measurement records")
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--order", type=int, help="also estimate F_n and store it in the manifest")
    p.add_argument("--scheme", choices=("auto", "local", "global-cue", "global-quench"))

    p = add("estimate", "estimate F_n from a measurement-record CSV")
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=float, help="noise strength of the family state (scheme labels only)")
    p.add_argument("--records", required=True)
    p.add_argument("--orders", type=int_list)
    p.add_argument("--scheme", choices=("auto", "local", "global-cue", "global-quench"))

    p = add("budget", "measurement budget M(eps, delta)")
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--order", type=int, default=0)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)

    p = add("sweep", "Monte-Carlo error scaling with interpolation and exponent fits")
    p.add_argument("--N", dest="N_list", type=int_list)
    p.add_argument("--p", type=float)
    p.add_argument("--orders", type=int_list)
    p.add_argument("--M-grid", dest="M_grid", type=int_list)
    p.add_argument("--R", type=int)
    p.add_argument("--target", dest="target_error", type=float)
    p.add_argument("--scheme", choices=("auto", "local", "global-cue", "global-quench"))
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--workers", type=int, help="worker processes (output does not depend on it)")
    return parser


# --- config resolution ---------------------------------------------------------------

_CONFIG_KEYS = {f.name for f in fields(bench.ExperimentConfig)}


def resolve_config(args) -> tuple[bench.ExperimentConfig, dict]:
    """File values first, then explicit flags. Returns the config and the extra flags."""
    data: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValidationError("config file must hold a JSON object")
    extra = {}
    for key, val in vars(args).items():
        if key in ("config", "out", "format", "command") or val is None:
            continue
        if key == "N":
            data["N_list"] = (val,)
        elif key == "p" and args.command in ("bounds",):
            data["p_list"] = (val,)
        elif key == "orders" and args.command in ("bounds", "sweep", "estimate"):
            data["orders"] = val
        elif key in _CONFIG_KEYS:
            data[key] = val
        else:
            extra[key] = val
    if args.seed is not None:
        data["seed"] = args.seed
    if args.command == "budget" and "p" not in data:
        data["p"] = 0.0  # budgets default to the pure family state
    if "family" not in data:
        data["family"] = "ghz"
    if data["family"] == "noon" and "M_grid" not in data:
        data["M_grid"] = bench.DEFAULT_NOON_GRID
    return bench.ExperimentConfig.from_dict(data), extra


# --- commands -----------------------------------------------------------------------


def _single_N(config) -> int:
    if len(config.N_list) != 1:
        raise ValidationError("this subcommand takes a single --N")
    return config.N_list[0]


def cmd_bounds(config, extra):
    _single_N(config)
    n_max = max(config.orders)
    config.n_max = n_max
    rows = bench.run_convergence(config)
    keep = set(config.orders)
    return [r for r in rows if r["n"] in keep], {}


def cmd_convergence(config, extra):
    return bench.run_convergence(config), {}


def cmd_pstar(config, extra):
    return bench.run_pstar_curves(config), {}


def _root_stream(config, N: int, M: int) -> nk.SeededStream:
    # same substream as repetition 0 of (N, M) in a sweep
    return nk.SeededStream(config.seed, (bench.FAMILY_CODES[config.family],)).child(N, M, 0)


def cmd_simulate(config, extra):
    N = _single_N(config)
    M = extra["M"]
    rho, A, scheme = bench.family_problem(config, N, config.p)
    shadows = pr.acquire(rho, scheme, M, _root_stream(config, N, M))
    records = shadows.records()
    info = {"scheme": scheme.label, "M": M}
    if extra.get("order") is not None:
        res = est.estimate_Fn(shadows, A, extra["order"])
        info["estimate"] = {"order": extra["order"], "value": res.value, "method": res.method}
    return ("records", records, rho.space), info


def cmd_estimate(config, extra):
    N = _single_N(config)
    rho, A, scheme = bench.family_problem(config, N, config.p)
    with open(extra["records"], encoding="utf-8", newline="") as fh:
        records = pr.read_records(fh, rho.space)
    shadows = pr.shadows_from_records(records, scheme)
    rows = []
    for n in config.orders:
        res = est.estimate_Fn(shadows, A, n)
        rows.append({"order": n, "value": res.value, "M": res.M, "method": res.method})
    return rows, {"scheme": scheme.label}


def cmd_budget(config, extra):
    N = _single_N(config)
    n = extra.get("order", 0)
    eps, delta = extra["eps"], extra["delta"]
    rho, A, _ = bench.family_problem(config, N, config.p)
    d = rho.dim
    if n == 0:
        rep = bd.budget_F0(bd.trace_terms_F0(rho, A), eps, delta, d)
    elif n == 1:
        rep = bd.budget_F1(bd.trace_terms_F0(rho, A), bd.trace_terms_F1(rho, A), eps, delta, d)
    elif n >= 2:
        rep = bd.budget_Fn(bd.trace_terms_Fn(rho, A, n), n, eps, delta, d)
    else:
        raise ValidationError("order must be >= 0")
    row = rep.to_dict()
    row.update({"family": config.family, "N": N, "p": config.p, "order": n, "rounds": rep.rounds()})
    return [row], {}


def cmd_sweep(config, extra):
    need = bench.estimate_rounds(config)
    log = lambda N, M: print(f"sweep: N={N} M={M} done", file=sys.stderr)  # noqa: E731
    res = bench.run_error_scaling(config, progress=log)
    info = {
        "estimated_rounds": need,
        "M_at_target": res.summary_dicts(),
        "collapse_exponent": {str(k): v for k, v in res.collapse_exponent.items()},
    }
    return res.row_dicts(), info


COMMANDS = {
    "bounds": (cmd_bounds, "csv"),
    "convergence": (cmd_convergence, "csv"),
    "pstar": (cmd_pstar, "csv"),
    "simulate": (cmd_simulate, "csv"),
    "estimate": (cmd_estimate, "csv"),
    "budget": (cmd_budget, "json"),
    "sweep": (cmd_sweep, "csv"),
}


# --- output -------------------------------------------------------------------------


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def render(data, fmt: str) -> str:
    buf = io.StringIO()
    if isinstance(data, tuple) and data[0] == "records":
        _, records, space = data
        if fmt == "csv":
            pr.write_records(buf, records, space)
        else:
            for rec in records:
                out = rec.bits(space.N) if space.kind == "qubits" else rec.outcome
                row = {"round": rec.round, "scheme": rec.scheme, "seed_path": rec.seed_path, "outcome": out}
                buf.write(json.dumps(row) + "\n")
        return buf.getvalue()
    rows = data
    if fmt == "json":
        for row in rows:
            buf.write(json.dumps(_clean(row)) + "\n")
        return buf.getvalue()
    if not rows:
        return ""
    flat = [{k: (json.dumps(_clean(v)) if isinstance(v, (dict, list)) else v) for k, v in r.items()} for r in rows]
    writer = csv.DictWriter(buf, fieldnames=list(flat[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(flat)
    return buf.getvalue()


def manifest(command: str, config, extra: dict, fmt: str, info: dict) -> dict:
    return _clean(
        {
            "command": command,
            "version": __version__,
            "seed": config.seed,
            "format": fmt,
            "config": config.to_dict() | {"quench": vars(config.quench)},
            "flags": extra,
            "info": info,
        }
    )


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    for key in ("seed", "out", "format", "config"):
        if not hasattr(args, key):
            setattr(args, key, None)
    func, default_fmt = COMMANDS[args.command]
    try:
        config, extra = resolve_config(args)
        fmt = args.format or default_fmt
        data, info = func(config, extra)
        text = render(data, fmt)
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericalIntegrityError as exc:
        print(f"numerical integrity: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ValidationError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QFIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    man = json.dumps(manifest(args.command, config, extra, fmt, info), indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
            fh.write(man + "\n")
    else:
        sys.stdout.write(text)
        print(man, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
