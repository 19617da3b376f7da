"""Command line front-end: ``hurwitz-lab <subcommand> [flags]``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Every output file is written atomically (temporary file, then rename).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

from .errors import HurwitzLabError, MissingInput
from .ring import SUPPORTED_D, field_config

SUBCOMMANDS = ("expand", "scan-digits", "partition", "verify-markov", "spectrum", "pressure", "enumerate", "stats", "modq", "dirichlet", "report")
FORMATS = ("json", "csv", "svg")

# allowed formats per subcommand (first entry is the default)
_FORMATS = {
    "expand": ("json",),
    "scan-digits": ("json",),
    "partition": ("json", "svg"),
    "verify-markov": ("json",),
    "spectrum": ("json", "csv"),
    "pressure": ("json",),
    "enumerate": ("json",),
    "stats": ("csv", "json"),
    "modq": ("csv", "json"),
    "dirichlet": ("csv", "json"),
    "report": ("json",),
}


class _Usage(Exception):
    pass


def _int_list(text: str) -> list:
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if "^" in tok:
            base, exp = tok.split("^")
            out.append(int(base) ** int(exp))
        else:
            out.append(int(tok))
    return out


def _w_list(text: str) -> list:
    """Comma list of real numbers or imaginary values written ``1.5i`` / ``pi/2i``."""
    out = []
    for tok in str(text).split(","):
        tok = tok.strip().replace(" ", "")
        if tok.endswith("i"):
            out.append(1j * _real(tok[:-1]))
        else:
            out.append(complex(_real(tok)))
    return out


def _real(tok: str) -> float:
    tok = tok.replace("pi", repr(math.pi))
    if "/" in tok:
        a, b = tok.split("/")
        return float(a) / float(b)
    return float(tok)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hurwitz-lab", description="Hurwitz complex continued fractions over the Euclidean imaginary quadratic fields.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--d", type=int, default=1, help="field discriminant parameter, one of 1,2,3,7,11")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="thread pool size (env HURWITZ_LAB_THREADS)")
    common.add_argument("--out", default=None, help="output file (stdout when omitted)")
    common.add_argument("--format", default=None, choices=FORMATS)
    common.add_argument("--config", default=None, help="JSON file whose keys mirror the flags; flags win")
    helps = {
        "expand": "expand a field rational",
        "scan-digits": "list digits with empty cylinder",
        "partition": "build the Markov cell complex",
        "verify-markov": "sample-check compatibility of the partition",
        "spectrum": "dominant eigenpair of the Ulam operator",
        "pressure": "pressure curve s0(w) and CLT constants",
        "enumerate": "list Omega_N with expansions",
        "stats": "moments and KS distance over Omega_N",
        "modq": "residues of the cost mod q",
        "dirichlet": "partial sums of the Dirichlet series",
        "report": "consolidated JSON report",
    }
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "expand":
            s.add_argument("--z", action="append", default=None, help="literal such as 2/5-1/5i or 1/3+1/3w (repeatable)")
        if name in ("scan-digits", "verify-markov"):
            s.add_argument("--digit-norm-bound", type=int, default=16 if name == "scan-digits" else 100)
        if name in ("partition", "verify-markov", "report"):
            s.add_argument("--resolution", type=int, default=512)
        if name == "verify-markov":
            s.add_argument("--samples", type=int, default=100_000)
            s.add_argument("--corrupt", action="store_true", help="drop one generated curve first (negative control)")
        if name in ("spectrum", "pressure", "report"):
            s.add_argument("--grid", type=int, default=200 if name == "spectrum" else 64, help="Ulam grid size m")
            s.add_argument("--A-max", dest="A_max", type=int, default=400)
        if name == "spectrum":
            s.add_argument("--sigma", type=float, default=1.0)
            s.add_argument("--u", type=float, default=0.0)
        if name in ("pressure", "dirichlet", "report"):
            s.add_argument("--w", default="-0.02,-0.01,0,0.01,0.02" if name != "dirichlet" else "0")
        if name in ("enumerate", "stats", "modq", "dirichlet", "report"):
            s.add_argument("--N", type=int, default=None, help="height-squared bound")
        if name in ("stats", "modq", "dirichlet", "report"):
            s.add_argument("--N-grid", dest="N_grid", default=None, help="comma list, e.g. 2^8,2^10")
        if name in ("modq", "report"):
            s.add_argument("--q", type=int, default=2)
        if name in ("spectrum", "pressure", "stats", "modq", "dirichlet", "report"):
            s.add_argument("--cost", default="len", help="len, logabs or table:<path>")
        if name in ("stats", "modq", "dirichlet", "enumerate", "report"):
            s.add_argument("--domain", default="closed", choices=("closed", "strict"))
        if name == "report":
            s.add_argument("--inputs", default=None, help="directory of earlier artifacts to reuse")
            s.add_argument("--svg", default=None, help="also write the partition figure here")
    return p


def _apply_config(parser, argv):
    """Re-parse with the config file's values as defaults, so that flags win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                conf = json.load(fh)
        except (OSError, ValueError) as exc:
            raise _Usage(f"--config: cannot read {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for k, v in conf.items():
            dest = k.lstrip("-").replace("-", "_")
            dest = {"n_grid": "N_grid", "a_max": "A_max", "n": "N"}.get(dest, dest)
            if dest not in known:
                raise _Usage(f"--config: unknown key {k!r} for {args.command}")
            if isinstance(v, list) and dest != "z":
                v = ",".join(str(x) for x in v)
            defaults[dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _validate(args):
    if args.d not in SUPPORTED_D:
        raise _Usage(f"--d: {args.d} is not supported; valid set {{1,2,3,7,11}}")
    fmt = args.format or _FORMATS[args.command][0]
    if fmt not in _FORMATS[args.command]:
        raise _Usage(f"--format: {fmt} is not available for {args.command}; choose from {{{','.join(_FORMATS[args.command])}}}")
    args.format = fmt
    if args.threads is None:
        env = os.environ.get("HURWITZ_LAB_THREADS")
        args.threads = int(env) if env and env.isdigit() else 1
    if args.threads < 1:
        raise _Usage("--threads: must be at least 1")
    if args.seed < 0:
        raise _Usage("--seed: must be non-negative")
    checks = {
        "digit_norm_bound": (4, None),
        "resolution": (64, 4096),
        "samples": (100, None),
        "grid": (8, 1000),
        "A_max": (100, 10**5),
        "N": (1, 2**20),
        "q": (1, 1000),
    }
    for name, (lo, hi) in checks.items():
        val = getattr(args, name, None)
        if val is None:
            continue
        flag = "--" + name.replace("_", "-")
        if val < lo or (hi is not None and val > hi):
            rng = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
            raise _Usage(f"{flag}: {val} is outside the valid range {rng}")
    if getattr(args, "N_grid", None) is not None:
        try:
            args.N_grid = _int_list(args.N_grid)
        except ValueError:
            raise _Usage("--N-grid: expected a comma list of positive integers")
        if not args.N_grid or any(n < 1 for n in args.N_grid) or any(b <= a for a, b in zip(args.N_grid, args.N_grid[1:])):
            raise _Usage("--N-grid: values must be positive and strictly increasing")
    if getattr(args, "w", None) is not None:
        try:
            args.w = _w_list(args.w)
        except ValueError:
            raise _Usage("--w: expected a comma list of reals or imaginary values like 1.5708i")
        for w in args.w:
            if w.imag == 0 and abs(w.real) > 0.05:
                raise _Usage(f"--w: real values must lie in [-0.05, 0.05], got {w.real}")
            if w.imag != 0 and (w.real != 0 or not 0 < abs(w.imag) < math.pi):
                raise _Usage(f"--w: imaginary values i*tau need 0 < |tau| < pi, got {w}")
        if args.command in ("pressure", "report") and any(w.imag for w in args.w):
            raise _Usage("--w: the pressure curve takes real values only")
    if getattr(args, "cost", None) is not None:
        args.cost = _cost(args.cost)
    if args.command == "expand" and not args.z:
        raise _Usage("--z: required for expand")


def _cost(text: str):
    from .cf import CostFunction

    if text == "len":
        return CostFunction.length()
    if text == "logabs":
        return CostFunction.log_abs()
    if text.startswith("table:"):
        path = text[len("table:") :]
        try:
            return CostFunction.from_json_file(path)
        except (OSError, ValueError, KeyError) as exc:
            raise _Usage(f"--cost: cannot load table {path}: {exc}")
    raise _Usage(f"--cost: {text} is not one of {{len,logabs,table:<path>}}")


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _cx(args):
    from .geometry import build_cells, generate_W

    cfg = field_config(args.d)
    curves, n0 = generate_W(cfg)
    return build_cells(curves, cfg, args.resolution, n0)


def _digit_str(alpha) -> str:
    return str(alpha)


def _default_grid(args, top: int | None = None):
    top = top or args.N or 2**12
    grid = args.N_grid or [n for n in (2**6, 2**8, 2**10, 2**12, 2**14, 2**16) if n <= top]
    if max(grid) > (args.N or max(grid)):
        raise _Usage("--N-grid: values exceed --N")
    return grid


def _ensemble(args, grid):
    from .stats import OmegaSpec, run_ensemble

    N = args.N or max(grid)
    table = args.cost if args.cost.kind == "custom_integer" else None
    wvals = [w for w in (getattr(args, "w", None) or []) if args.cost.kind == "log_abs"]
    return OmegaSpec(args.d, N, args.domain), run_ensemble(OmegaSpec(args.d, N, args.domain), grid, table_cost=table, wvals=wvals, seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_expand(args) -> str:
    from .cf import expand
    from .ring import parse_element

    out = []
    cfg = field_config(args.d)
    for lit in args.z:
        try:
            z = parse_element(lit, args.d)
        except ValueError as exc:
            raise _Usage(f"--z: {exc}")
        e = expand(z, cfg)
        e.cost(_cost("logabs"))
        out.append(e.to_record())
        out[-1]["digits_text"] = [str(a) for a in e.digits]
    return _dumps(out if len(out) > 1 else out[0])


def cmd_scan_digits(args) -> str:
    from .cf import empty_digit_scan

    cfg = field_config(args.d)
    empty = sorted(empty_digit_scan(cfg, args.digit_norm_bound), key=lambda a: (a.norm(), a.a, a.b))
    return _dumps({"field": args.d, "norm_bound": args.digit_norm_bound, "empty_digits": [[str(a.a), str(a.b)] for a in empty], "empty_digits_text": [str(a) for a in empty]})


def cmd_partition(args) -> str:
    from .geometry import partition_json, render_svg

    cx = _cx(args)
    return render_svg(cx) + "\n" if args.format == "svg" else partition_json(cx) + "\n"


def cmd_verify_markov(args) -> str:
    from .geometry import corrupted, verify_markov

    cx = _cx(args)
    if args.corrupt:
        cx = corrupted(cx)
    rep = verify_markov(cx, cx.cfg, args.digit_norm_bound, args.samples, args.seed)
    doc = rep.to_json()
    doc["total_violations"] = rep.total
    doc["corrupted"] = bool(args.corrupt)
    return _dumps(doc)


def cmd_spectrum(args) -> str:
    from .transfer import assemble, density_csv, dominant_eigen, lyapunov_integral, spectral_report

    cfg = field_config(args.d)
    op = assemble(cfg, args.grid, args.A_max, args.sigma, args.u, args.cost)
    res = dominant_eigen(op)
    if args.format == "csv":
        return density_csv(res)
    return _dumps(spectral_report(op, res, lyapunov_integral(res), None))


def cmd_pressure(args) -> str:
    from .transfer import PressureSolver, solve_s0, spectral_report

    cfg = field_config(args.d)
    ws = [w.real for w in args.w]
    if 0.0 not in ws:
        raise _Usage("--w: the list must contain 0")
    solver = PressureSolver(cfg, args.grid, args.A_max, args.cost)
    curve = solve_s0(cfg, tuple(ws), m=args.grid, A_max=args.A_max, cost=args.cost, solver=solver)
    base = solver.eigen(1.0, 0.0)
    doc = spectral_report(base.op, base, curve.Lambda, curve)
    doc["lambda_10"] = curve.lambda_10
    doc["fit_residual"] = curve.fit_residual
    return _dumps(doc)


def cmd_enumerate(args) -> str:
    from .stats import OmegaSpec, enumerate_omega

    N = args.N or 16
    if N > 2**10:
        raise _Usage(f"--N: {N} is outside the valid range [1, 1024] for a full listing")
    recs = []
    for z, e in enumerate_omega(OmegaSpec(args.d, N, args.domain)):
        r = e.to_record()
        r["ht_sq"] = z.height_sq()
        r["text"] = str(z)
        recs.append(r)
    return _dumps({"field": args.d, "N": N, "count": len(recs), "items": recs})


def cmd_stats(args) -> str:
    from .stats import moment_table

    grid = _default_grid(args)
    spec, data = _ensemble(args, grid)
    table = moment_table(spec, [args.cost], grid, data=data, seed=args.seed)
    if args.format == "csv":
        return table.to_csv()
    return _dumps({"field": args.d, "rows": [r.__dict__ for r in table.rows], "law_violations": data.law_violations})


def cmd_modq(args) -> str:
    from .stats import modq_csv, modq_table

    if not args.cost.integer_valued:
        raise _Usage("--cost: mod q statistics need an integer cost (len or table:<path>)")
    grid = _default_grid(args)
    spec, data = _ensemble(args, grid)
    rows = modq_table(spec, args.cost, args.q, grid, data=data)
    if args.format == "csv":
        return modq_csv(rows)
    return _dumps({"field": args.d, "q": args.q, "rows": [r.__dict__ for r in rows]})


def cmd_dirichlet(args) -> str:
    from .stats import dirichlet_csv, dirichlet_partial

    grid = _default_grid(args)
    spec, data = _ensemble(args, grid)
    rows = []
    for w in args.w:
        rows.extend(dirichlet_partial(spec, w, grid, args.cost, data=data))
    if args.format == "csv":
        return dirichlet_csv(rows)
    recs = [{"N": r.N, "w_re": r.w.real, "w_im": r.w.imag, "partial_re": r.partial.real, "partial_im": r.partial.imag, "ratio": r.ratio, "fit_slope": r.fit_slope} for r in rows]
    return _dumps({"field": args.d, "rows": recs})


def report_schema() -> dict:
    return json.loads(resources.files("hurwitz_lab").joinpath("report_schema.json").read_text())


def _load_inputs(directory: Path) -> dict:
    """Artifacts written by earlier runs: partition.json, spectrum.json, moments.csv."""
    import csv

    got = {}
    for name in ("partition.json", "spectrum.json", "moments.csv"):
        path = directory / name
        if not path.exists():
            raise MissingInput(f"missing input artifact {name} in {directory}", artifact=name)
        if name.endswith(".json"):
            got[name] = json.loads(path.read_text())
        else:
            with open(path, newline="") as fh:
                got[name] = list(csv.DictReader(fh))
    return got


def cmd_report(args) -> str:
    from .cf import empty_digit_scan
    from .geometry import build_cells, generate_W, render_svg
    from .stats import modq_table, moment_table
    from .transfer import PressureSolver, solve_s0

    cfg = field_config(args.d)
    empty = sorted(empty_digit_scan(cfg, 16), key=lambda a: (a.norm(), a.a, a.b))
    grid = _default_grid(args, top=args.N or 2**10)
    cx = None
    if args.inputs:
        art = _load_inputs(Path(args.inputs))
        part = art["partition.json"]
        partition = {"curves": len(part["curves"]), "n0": part["n0"], "cells": _count_dims(part["cells"])}
        spec_doc = art["spectrum.json"]
        spectral = {k: spec_doc.get(k) for k in ("lambda", "Lambda", "mu_hat", "delta_hat")}
        spectral["lambda_10"] = spec_doc.get("lambda_10", spec_doc.get("lambda"))
        moments = [{"N": int(r["N"]), "count": int(r["count"]), "mean": float(r["mean"]), "var": float(r["var"]), "ks": float(r["ks"])} for r in art["moments.csv"]]
        modq = []
    else:
        curves, n0 = generate_W(cfg)
        cx = build_cells(curves, cfg, args.resolution, n0)
        partition = {"curves": len(curves), "n0": n0, "cells": cx.counts()}
        ws = tuple(w.real for w in args.w)
        curve = solve_s0(cfg, ws, m=args.grid, A_max=args.A_max, cost=args.cost, solver=PressureSolver(cfg, args.grid, args.A_max, args.cost))
        spectral = {"lambda": curve.lambda_10, "lambda_10": curve.lambda_10, "Lambda": curve.Lambda, "mu_hat": curve.mu_hat, "delta_hat": curve.delta_hat}
        spec, data = _ensemble(args, grid)
        table = moment_table(spec, [args.cost], grid, data=data, seed=args.seed)
        moments = [{"N": r.N, "count": r.count, "mean": r.mean, "var": r.var, "ks": r.ks} for r in table.rows]
        modq = []
        if args.cost.integer_valued:
            modq = [{"N": r.N, "q": r.q, "a": r.a, "count": r.count, "deviation": r.deviation} for r in modq_table(spec, args.cost, args.q, grid, data=data)]
    doc = {
        "field": args.d,
        "empty_digits": [str(a) for a in empty],
        "partition": partition,
        "spectral": spectral,
        "moments": moments,
        "modq": modq,
        "config": {"N_grid": grid, "grid": args.grid, "A_max": args.A_max, "resolution": args.resolution, "seed": args.seed, "cost": args.cost.id},
    }
    _check_schema(doc)
    if args.svg:
        if cx is None:
            curves, n0 = generate_W(cfg)
            cx = build_cells(curves, cfg, args.resolution, n0)
        write_atomic(args.svg, render_svg(cx) + "\n")
    return _dumps(doc)


def _count_dims(cells) -> dict:
    out = {"0": 0, "1": 0, "2": 0}
    for c in cells:
        out[str(c["dim"])] += 1
    return {int(k): v for k, v in out.items()}


def _check_schema(doc) -> None:
    import jsonschema

    jsonschema.validate(json.loads(json.dumps(doc)), report_schema())


COMMANDS = {
    "expand": cmd_expand,
    "scan-digits": cmd_scan_digits,
    "partition": cmd_partition,
    "verify-markov": cmd_verify_markov,
    "spectrum": cmd_spectrum,
    "pressure": cmd_pressure,
    "enumerate": cmd_enumerate,
    "stats": cmd_stats,
    "modq": cmd_modq,
    "dirichlet": cmd_dirichlet,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("hurwitz-lab: error: a subcommand is required", file=sys.stderr)
            return 2
        _validate(args)
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    except _Usage as exc:
        print(f"hurwitz-lab: error: {exc}", file=sys.stderr)
        return 2
    try:
        text = COMMANDS[args.command](args)
    except _Usage as exc:
        print(f"hurwitz-lab: error: {exc}", file=sys.stderr)
        return 2
    except HurwitzLabError as exc:
        print(f"hurwitz-lab: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"hurwitz-lab: ERROR: {exc}", file=sys.stderr)
        return 1
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
