"""Command-line front end: generate, run, sweep, estimate.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then flags. Exit status is 0 on success, 1 on a
configuration error and 2 when a solver stalls or runs out of budget (the
outputs written so far are kept).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import experiments as ex
from .objective import estimate_lipschitz, estimate_sharpness
from .sensing import estimate_rip

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

VERBS = ("generate", "run", "sweep", "estimate")
_FAILED = ("stalled", "budget_exhausted", "contradiction")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # unknown or malformed flags count as configuration errors
        raise ex.ConfigError(_offending_flag(message), message)


def _offending_flag(message: str) -> str:
    for token in message.replace(",", " ").split():
        if token.startswith("--"):
            return token.lstrip("-").replace("-", "_")
    return "argv"


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sharprmd", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"sharprmd {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True
    helps = {
        "generate": "draw instances and write them to the output directory",
        "run": "solve one instance and write its trace and summary",
        "sweep": "run a grid of cells (convergence, dimension or RIP sweep)",
        "estimate": "print sampled sharpness / Lipschitz / RIP estimates",
    }
    for verb in VERBS:
        p = sub.add_parser(verb, help=helps[verb], description=helps[verb], allow_abbrev=False)
        p.add_argument("--config", default=None, help="key = value file; flags override it (default: none)")
        for key, (_, default, text) in ex.CONFIG_SCHEMA.items():
            shown = ex.format_config_value(default)
            p.add_argument(_flag(key), dest=key, default=None, metavar="VALUE",
                           help=f"{text} (default: {shown})")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    config = ex.default_config()
    if args.config is not None:
        try:
            config.update(ex.load_config(args.config))
        except OSError as exc:
            raise ex.ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
    for key in ex.CONFIG_SCHEMA:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = ex.parse_value(key, value)
    return config


def _single(config: dict, key: str):
    values = config[key]
    if len(values) != 1:
        raise ex.ConfigError(key, f"the run verb takes a single value, got {ex.format_config_value(values)}")
    return values[0]


def cmd_generate(config: dict) -> int:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    noise = ex.NoiseSpec.parse(config["noise"])
    for spec in ex.cell_specs(config):
        inst = ex.cell_instance(spec)
        tag = f"m{inst.m}"
        path = out / f"instance_{spec.task}_n{spec.n}_{tag}_seed{spec.seed}.npz"
        ex.save_instance(path, inst, config)
        rows.append({"file": path.name, "task": inst.task.value, "n": spec.n, "k": inst.k, "m": inst.m,
                     "T": inst.T, "seed": spec.seed, "noise": noise.describe(), "noise_norm": inst.noise_norm,
                     "threshold_extrapolated": inst.task in ex.EXTRAPOLATED_TASKS})
        print(f"wrote {path}")
    (out / "instances.json").write_text(ex.summary_json(config, {"instances": rows}))
    return EXIT_OK


def cmd_run(config: dict) -> int:
    run_config = dict(config)
    for key in ("n", "seed") + (() if config.get("m") is not None else ("m_multiple",)):
        run_config[key] = [_single(config, key)]
    spec = ex.cell_specs(run_config)[0]
    result = ex.run_cell(spec)
    paths = ex.write_run_outputs(config["out"], run_config, result)
    s = result.summary
    print(f"{s['task']} n={s['n']} m={s['m']} solver={s['solver']} status={s['status']} "
          f"iterations={s['total_iterations']} dist={s['output_dist_to_truth']:.3e}")
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_SOLVER if s["status"] in _FAILED else EXIT_OK


def cmd_sweep(config: dict) -> int:
    kind, sweep = ex.run_config_sweep(config)
    paths = ex.write_sweep_outputs(config["out"], config, sweep, kind)
    for row in sweep["table"]:
        print(json.dumps(ex._jsonable(row)))
    for p in paths.values():
        print(f"wrote {p}")
    failed = [c for c in sweep["cells"] if c.get("status") in _FAILED]
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_estimate(config: dict) -> int:
    rows = []
    what = config["what"]
    for spec in ex.cell_specs(config):
        inst = ex.cell_instance(spec)
        obj = inst.clean_objective()
        row = {"task": inst.task.value, "n": spec.n, "k": inst.k, "m": inst.m, "seed": spec.seed,
               "r": obj.r, "ell": obj.ell}
        if what == "rip":
            est = estimate_rip(inst.op, config["k_prime"], trials=config["trials"], seed=spec.seed)
            row.update(k_prime=est.k_prime, rip_lower=est.lower, rip_upper=est.upper, ratio=est.ratio)
            line = f"rip-={est.lower:.4g} rip+={est.upper:.4g} ratio={est.ratio:.4g}"
        else:
            mu = L = None
            if what in ("sharpness", "conditioning"):
                mu = estimate_sharpness(obj, inst.x_true, trials=config["trials"], seed=spec.seed)
            if what in ("lipschitz", "conditioning", "sharpness"):
                L = estimate_lipschitz(obj, inst.x_true, trials=config["trials"], seed=spec.seed)
            kappa = L / mu if (mu and L) else None
            row.update(mu_hat=mu, L_hat=L, kappa_hat=kappa)
            line = " ".join(f"{name}={v:.4g}" for name, v in (("mu_hat", mu), ("L_hat", L), ("kappa_hat", kappa))
                            if v is not None)
        rows.append(row)
        print(f"{inst.task.value} n={spec.n} m={inst.m} seed={spec.seed}: {line}")
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.json").write_text(ex.summary_json(config, {"estimates": rows}))
    return EXIT_OK


_COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "estimate": cmd_estimate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = resolve_config(args)
        return _COMMANDS[args.verb](config)
    except ex.ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid combinations detected while building instances or objectives
        print(f"config error [value]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
