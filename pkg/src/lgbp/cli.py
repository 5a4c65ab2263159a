"""Command-line front end.

Subcommands: infer, exactz, marginals, gen-random, sweep, validate.
Exit codes: 0 success, 1 usage error, 2 model error, 3 exact oracle
intractable.
"""
from __future__ import annotations

import argparse
import sys

from .engine import run
from .evaluator import RegionModel
from .experiments import (RandomKBSpec, SweepConfig, exact_marginals,
                          gen_random_kb, instantiate, run_sweep)
from .ground import BRUTE_FORCE_CAP, PropagationConfig, brute_force_z, \
    ground_markov_network
from .lifted import evaluate_z, separable, separable_log_z
from .mln import MLN, MLNError, OracleLimitError, ParseError, mln_to_text, \
    parse_mln
from .regions import construct_structure, prepare_model, validate_lifted
from .rng import derive_seed

USAGE_ERROR, MODEL_ERROR, ORACLE_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _load_model(path: str) -> MLN:
    try:
        with open(path) as fh:
            return parse_mln(fh.read())
    except OSError as ex:
        print(f"error: {ex}", file=sys.stderr)
        raise SystemExit(MODEL_ERROR) from ex
    except ParseError as ex:
        print(f"parse error: {ex}", file=sys.stderr)
        raise SystemExit(MODEL_ERROR) from ex


def _engine_config(args) -> PropagationConfig:
    return PropagationConfig(max_iterations=args.max_iters,
                             tolerance=args.tol, damping=args.damping)


def cmd_infer(args) -> int:
    mln = prepare_model(_load_model(args.model))
    try:
        lrg = construct_structure(mln, args.structure.upper())
        result = run(lrg, _engine_config(args))
    except MLNError as ex:
        print(f"model error: {ex}", file=sys.stderr)
        return MODEL_ERROR
    status = "converged" if result.converged else "not converged"
    print(f"# structure={args.structure} iterations={result.iterations_used} "
          f"{status}")
    for gid, p in sorted(result.marginals.items()):
        print(f"{gid}  {p:.10f}")
    return 0


def cmd_exactz(args) -> int:
    mln = _load_model(args.model)
    try:
        model = RegionModel(mln)
        if separable(model):
            z = separable_log_z(model)
        else:
            fg = ground_markov_network(mln)
            if len(fg.variables) <= BRUTE_FORCE_CAP:
                z = brute_force_z(fg)
            else:
                z = evaluate_z(prepare_model(mln))
    except OracleLimitError as ex:
        print(f"intractable: {ex}", file=sys.stderr)
        return ORACLE_ERROR
    except MLNError as ex:
        print(f"model error: {ex}", file=sys.stderr)
        return MODEL_ERROR
    print(f"{z:.12g}")
    return 0


def cmd_marginals(args) -> int:
    mln = _load_model(args.model)
    try:
        marg = exact_marginals(prepare_model(mln))
    except OracleLimitError as ex:
        print(f"intractable: {ex}", file=sys.stderr)
        return ORACLE_ERROR
    except MLNError as ex:
        print(f"model error: {ex}", file=sys.stderr)
        return MODEL_ERROR
    for gid, p in sorted(marg.items()):
        print(f"{gid}  {p:.10f}")
    return 0


def cmd_gen_random(args) -> int:
    kb = gen_random_kb(derive_seed(args.seed, 0), RandomKBSpec(args.seed))
    mln = instantiate(kb, args.domain, args.sigma,
                      derive_seed(args.seed, 0, args.domain, 0))
    text = mln_to_text(mln)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    return 0


def _parse_sweep_config(path: str) -> SweepConfig:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, _, val = line.partition("=")
            values[key.strip().lower()] = val.strip()

    def parse_list(text, conv):
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(conv(t) for t in text.split(",") if t.strip())

    cfg = SweepConfig()
    if "family" in values:
        cfg.family = values["family"]
    if "models" in values:
        cfg.n_models = int(values["models"])
    if "sigmas" in values:
        cfg.sigmas = parse_list(values["sigmas"], float)
    if "domains" in values:
        cfg.domain_sizes = parse_list(values["domains"], int)
    if "structures" in values:
        cfg.structures = tuple(s.strip().lower()
                               for s in values["structures"].split(","))
    if "seed" in values:
        cfg.master_seed = int(values["seed"])
    if "damping" in values:
        cfg.damping = float(values["damping"])
    if "tol" in values:
        cfg.tolerance = float(values["tol"])
    if "max-iters" in values:
        cfg.max_iterations = int(values["max-iters"])
    if "witness-domain" in values:
        cfg.witness_domain = int(values["witness-domain"])
    return cfg


def cmd_sweep(args) -> int:
    try:
        cfg = _parse_sweep_config(args.config)
    except (OSError, ValueError) as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return USAGE_ERROR

    def progress(model_id, d, sigma):
        if args.verbose:
            print(f"model {model_id} d={d} sigma={sigma}", file=sys.stderr)

    run_sweep(cfg, args.output, progress=progress)
    return 0


def cmd_validate(args) -> int:
    mln = prepare_model(_load_model(args.model))
    try:
        lrg = construct_structure(mln, args.structure.upper())
        ok = validate_lifted(lrg, witness_domain=args.witness_domain)
    except MLNError as ex:
        print(f"model error: {ex}", file=sys.stderr)
        return MODEL_ERROR
    domain_size = max((len(d.objects) for d in mln.domains), default=0)
    checked = min(domain_size, args.witness_domain)
    print(f"valid={str(ok).lower()} witness_domain_size={checked}")
    return 0 if ok else MODEL_ERROR


def build_parser() -> _Parser:
    parser = _Parser(prog="lgbp",
                     description="Lifted generalized belief propagation")
    sub = parser.add_subparsers(dest="command", required=True)

    def engine_flags(p):
        p.add_argument("--damping", type=float, default=0.5)
        p.add_argument("--tol", type=float, default=1e-7)
        p.add_argument("--max-iters", type=int, default=1000)

    p = sub.add_parser("infer", help="approximate marginals via LGBP")
    p.add_argument("model")
    p.add_argument("--structure", choices=["gg", "lg", "ll"], required=True)
    engine_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("exactz", help="exact log partition function")
    p.add_argument("model")
    p.set_defaults(func=cmd_exactz)

    p = sub.add_parser("marginals", help="exact per-cell marginals")
    p.add_argument("model")
    p.set_defaults(func=cmd_marginals)

    p = sub.add_parser("gen-random", help="generate a random tractable model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--domain", type=int, required=True)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_gen_random)

    p = sub.add_parser("sweep", help="KL sweep over models/sigmas/domains")
    p.add_argument("--config", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="running-intersection validity")
    p.add_argument("model")
    p.add_argument("--structure", choices=["gg", "lg", "ll"], required=True)
    p.add_argument("--witness-domain", type=int, default=4)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as ex:
        return int(ex.code or 0)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
