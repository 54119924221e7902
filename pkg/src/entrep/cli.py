"""Command-line front end: ``entrep <command> [options]``.

Reports go to stdout (or ``--output``) as sorted-key JSON, or as CSV with
one row per entry of the report's first table.  Exit codes: 0 success,
1 failed suite, 2 bad input, 3 resource limit.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import suites
from .blocks import classify_block
from .errors import FormatError, InvalidInputError, ResourceLimitError
from .game import classical_value_bruteforce, classify_game, load_game
from .orthogonalize import orthogonalization_lemma
from .repeated import build_product_strategy, build_scrambling_strategy
from .repetition import estimate_repeated_value, make_spec
from .rng import stream
from .strategy import (
    bob_density,
    evaluate_value,
    load_strategy,
    matrix_from_pairs,
    matrix_to_pairs,
    seesaw_restarts,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_RESOURCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


def _nonneg_float(text: str) -> float:
    x = float(text)
    if not math.isfinite(x) or x < 0:
        raise argparse.ArgumentTypeError(f"expected a finite non-negative number, got {text}")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--output", default=None, help="write the report here instead of stdout")

    p = _Parser(prog="entrep", description="Entangled-game repetition toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", parents=[common], help="check game and strategy files")
    s.add_argument("--game", required=True)
    s.add_argument("--strategy")

    s = sub.add_parser("value", parents=[common], help="classical, exact or seesaw value")
    s.add_argument("--method", choices=("classical", "evaluate", "seesaw"), required=True)
    s.add_argument("--game", required=True)
    s.add_argument("--strategy")
    s.add_argument("--dim", type=_positive, default=2)
    s.add_argument("--restarts", type=_positive, default=50)
    s.add_argument("--iters", type=_positive, default=100)

    s = sub.add_parser("repeat", parents=[common], help="FK or DR value of a product strategy")
    s.add_argument("--game", required=True)
    s.add_argument("--strategy", required=True)
    s.add_argument("--kind", choices=("FK", "DR"), default="FK")
    s.add_argument("--ell", type=_positive, required=True)
    s.add_argument("--samples", type=_positive, default=10_000)
    s.add_argument("--mode", choices=("exact", "mc"), default="exact",
                   help="exact acceptance probability per sample, or sampled outcomes")

    s = sub.add_parser("classify", parents=[common], help="dead/alive/serial reports on sampled blocks")
    s.add_argument("--game")
    s.add_argument("--strategy", help="per-round strategy; Bob plays its product")
    s.add_argument("--scrambling", action="store_true", help="use the parity-scrambling Bob instead")
    s.add_argument("--dim", type=_positive, default=8, help="dimension of the scrambling strategy")
    s.add_argument("--ell", type=_positive, required=True)
    s.add_argument("--trials", type=_positive, default=10, help="number of sampled blocks")
    s.add_argument("--size", type=_positive, default=2, help="largest block size")
    s.add_argument("--eps", type=_nonneg_float, default=0.5)
    s.add_argument("--eta", type=_nonneg_float, default=0.1)
    s.add_argument("--samples", type=_positive, default=2000)
    s.add_argument("--mode", choices=("exact", "mc"), default="exact")

    s = sub.add_parser("orthogonalize", parents=[common], help="orthogonal projectors for a family file")
    s.add_argument("--family", required=True)

    s = sub.add_parser("verify", parents=[common], help="run a named verification suite")
    s.add_argument("suite", choices=sorted(suites.SUITES))
    s.add_argument("--trials", type=_positive)
    s.add_argument("--samples", type=_positive, help="MC samples per trial (appendix, deadbound)")
    return p


# -- commands -------------------------------------------------------------


def _cmd_validate(args) -> dict:
    g = load_game(args.game)
    cls = classify_game(g)
    out = {
        "game": {
            "questions": g.nq,
            "answers": g.na,
            "is_projection": cls.is_projection,
            "is_free": cls.is_free,
            "is_symmetric": cls.is_symmetric,
        },
        "valid": True,
    }
    if args.strategy:
        s = load_strategy(args.strategy, g)
        out["strategy"] = {"d": s.d, "value": evaluate_value(g, s)}
    return out


def _cmd_value(args) -> dict:
    g = load_game(args.game)
    if args.method == "classical":
        return {"method": "classical", "value": classical_value_bruteforce(g)}
    if args.method == "evaluate":
        if not args.strategy:
            raise InvalidInputError("--method evaluate needs --strategy")
        return {"method": "evaluate", "value": evaluate_value(g, load_strategy(args.strategy, g))}
    vals = seesaw_restarts(g, args.dim, restarts=args.restarts, seed=args.seed, iters=args.iters)
    return {
        "method": "seesaw",
        "value": max(vals),
        "restart_values": vals,
        "dim": args.dim,
        "iters": args.iters,
        "seed": args.seed,
    }


def _cmd_repeat(args) -> dict:
    g = load_game(args.game)
    s = load_strategy(args.strategy, g)
    spec = make_spec(args.kind, args.ell)
    pg = build_product_strategy(s, args.ell)
    outcome = "exact" if args.mode == "exact" else "sample"
    est = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=args.samples,
                                  seed=args.seed, outcome=outcome)
    return {"repetition": spec.to_dict(), "mode": args.mode, "value": est.to_dict(), "seed": args.seed}


def _classify_target(args):
    if args.scrambling == bool(args.strategy):
        raise InvalidInputError("give exactly one of --strategy or --scrambling")
    if args.scrambling:
        X = build_scrambling_strategy(args.ell, 2, 2, args.dim)
        return X, np.eye(args.dim) / args.dim, "scrambling"
    g = load_game(args.game) if args.game else None
    pg = build_product_strategy(load_strategy(args.strategy, g), args.ell)
    return pg.bob, bob_density(pg.state.vector()), "product"


def _cmd_classify(args) -> dict:
    X, rho, kind = _classify_target(args)
    size = min(args.size, X.ell)
    blocks = []
    for n in range(args.trials):
        rng = stream(args.seed, "classify", n)
        r = int(rng.integers(1, size + 1))
        R = tuple(sorted(int(i) for i in rng.choice(X.ell, size=r, replace=False)))
        q_R = tuple(int(x) for x in rng.integers(X.nq, size=r))
        rep = classify_block(X, rho, R, q_R, args.eps, args.eta, mode=args.mode,
                             samples=args.samples, seed=int(rng.integers(2**31)))
        blocks.append(rep.to_dict())
    return {"strategy": kind, "ell": X.ell, "mode": args.mode, "seed": args.seed, "blocks": blocks}


def _read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, e.lineno) from None


def _cmd_orthogonalize(args) -> dict:
    obj = _read_json(args.family)
    if not isinstance(obj, dict):
        raise FormatError("top-level value must be an object", 1)
    for key in ("k", "operators", "weights"):
        if key not in obj:
            raise FormatError(f"missing key {key!r}", 1)
    k = obj["k"]
    if not isinstance(k, int) or k < 1:
        raise FormatError("'k' must be a positive integer")
    if len(obj["operators"]) != k or len(obj["weights"]) != k:
        raise FormatError("'operators' and 'weights' must each hold k matrices")
    Y = np.array([matrix_from_pairs(m, f"operators[{i}]") for i, m in enumerate(obj["operators"])])
    rhos = np.array([matrix_from_pairs(m, f"weights[{i}]") for i, m in enumerate(obj["weights"])])
    rho = obj.get("rho")
    rho = None if rho is None else matrix_from_pairs(rho, "rho")
    res = orthogonalization_lemma(Y, rhos, rho)
    out = res.to_dict()
    out["projectors"] = [matrix_to_pairs(P) for P in res.Pi]
    out["ranks"] = [int(round(np.real(np.trace(P)))) for P in res.Pi]
    return out


def _cmd_verify(args) -> dict:
    kw = {"seed": args.seed}
    if args.trials is not None:
        kw["trials"] = args.trials
    if args.samples is not None:
        if args.suite == "appendix":
            kw["mc_samples"] = args.samples
        elif args.suite == "deadbound":
            kw["samples"] = args.samples
        else:
            raise InvalidInputError(f"suite {args.suite!r} takes no --samples")
    return suites.SUITES[args.suite](**kw)


COMMANDS = {
    "validate": _cmd_validate,
    "value": _cmd_value,
    "repeat": _cmd_repeat,
    "classify": _cmd_classify,
    "orthogonalize": _cmd_orthogonalize,
    "verify": _cmd_verify,
}


# -- serialization --------------------------------------------------------


def to_plain(x):
    """Numpy-free copy of a report; non-finite floats become ``None``."""
    if isinstance(x, dict):
        return {str(k): to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [to_plain(x.real), to_plain(x.imag)]
    return x


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v, sort_keys=True)
        else:
            out[key] = v
    return out


def to_csv(report: dict) -> str:
    """First list-of-records field as rows, else the flattened report as one row."""
    table = next(
        (v for _, v in sorted(report.items()) if isinstance(v, list) and v and all(isinstance(r, dict) for r in v)),
        None,
    )
    rows = [_flatten(r) for r in table] if table is not None else [_flatten(report)]
    cols = sorted({c for r in rows for c in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def render(report: dict, fmt: str) -> str:
    plain = to_plain(report)
    if fmt == "csv":
        return to_csv(plain)
    return json.dumps(plain, sort_keys=True, indent=2, allow_nan=False) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = COMMANDS[args.command](args)
    except ResourceLimitError as e:
        sys.stderr.write(f"entrep: resource limit: {e}\n")
        return EXIT_RESOURCE
    except (InvalidInputError, OSError) as e:
        sys.stderr.write(f"entrep: {e}\n")
        return EXIT_INPUT
    text = render(report, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_FAIL if report.get("pass") is False else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
