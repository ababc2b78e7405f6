"""Command-line entry point.

Exit codes: 0 on success, 1 for invalid input (bad flags, malformed or
inconsistent configuration and data files), 2 when a run fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, fileio, inference, toy_models
from .errors import SSCalibError, ValidationError
from .observation import ParameterLayout

logger = logging.getLogger("sscalib")

SHIPPED = ("toy3", "celtic17")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; here they are validation errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="run configuration (YAML), or the name of a shipped "
                                    "configuration: " + ", ".join(SHIPPED))
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (defaults to run.seed from the config)")
    p.add_argument("--output", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on concurrent model evaluations (SSCALIB_THREADS overrides)")
    p.add_argument("--backend", choices=("compiled", "python"), default=None,
                   help="kernel backend (default: compiled when available)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="sscalib", description="Size-spectrum model calibration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="forward run and predicted catches")
    _common(p)
    p.add_argument("--params", help="sample-format CSV; the last row is used "
                                    "(default: truth.csv next to the config)")

    p = sub.add_parser("generate", help="synthetic observations at a parameter vector")
    _common(p)
    p.add_argument("--params", help="sample-format CSV (default: truth.csv next to the config)")
    p.add_argument("--noise-free", action="store_true")

    p = sub.add_parser("history-match", help="plausibility screening by simulation")
    _common(p)

    p = sub.add_parser("fit", help="run the calibration chain")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from checkpoint.json")
    p.add_argument("--iterations", type=int, help="override run.iterations")
    p.add_argument("--burn-in", type=int, help="override run.burn_in")

    p = sub.add_parser("summarize", help="posterior quantiles, ESS and trajectories")
    _common(p)
    p.add_argument("--samples", help="samples.csv (default: <output>/samples.csv)")
    p.add_argument("--max-trajectories", type=int, default=200)

    p = sub.add_parser("residuals", help="standardised residuals and whiteness checks")
    _common(p)
    p.add_argument("--samples", help="samples.csv (default: <output>/samples.csv)")

    p = sub.add_parser("validate-kernels", help="run the toy-target kernel checks")
    _common(p)
    p.add_argument("--quick", action="store_true", help="skip the composed-sweep enumeration")
    return parser


# -- helpers -----------------------------------------------------------------

def _config_path(arg):
    if arg is None:
        raise ValidationError("--config is required for this command")
    if arg in SHIPPED and not Path(arg).exists():
        return toy_models.data_dir(arg) / "config.yaml"
    return Path(arg)


def _load(args, need_observations=True):
    cfg = fileio.load_config(_config_path(args.config))
    fileio.check_inputs(cfg, need_observations)
    if args.seed is not None:
        cfg.run.seed = args.seed
    return cfg


def _output(args, cfg):
    out = Path(args.output) if args.output else cfg.path("output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _layout(cfg, model):
    fixed = np.array([sp.fixed_sigma2_c is not None for sp in model.species])
    return ParameterLayout(model.names, cfg.years.years, fixed)


def _problem(cfg, backend):
    model, obs = fileio.load_problem_inputs(cfg, backend)
    return inference.CalibrationProblem(model, obs, cfg.prior_spec())


def _params(args, cfg, layout):
    path = Path(args.params) if args.params else cfg.path("observations").parent / "truth.csv"
    if not path.exists():
        raise ValidationError(f"parameter file not found: {path} (use --params)")
    names, rows = inference.read_samples(path)
    if list(names[: layout.size]) != layout.names():
        raise ValidationError(f"{path}: header does not match the configuration's parameters")
    return rows[-1][: layout.size]


def _samples(args, out, layout):
    path = Path(args.samples) if args.samples else out / "samples.csv"
    if not path.exists():
        raise ValidationError(f"samples file not found: {path}")
    names, rows = inference.read_samples(path)
    if list(names[: layout.size]) != layout.names():
        raise ValidationError(f"{path}: header does not match the configuration's parameters")
    if rows.shape[0] < 2:
        raise ValidationError(f"{path}: need at least 2 samples")
    return path, rows


# -- commands ----------------------------------------------------------------

def cmd_simulate(args, cfg):
    model = fileio.build_model(cfg, args.backend)
    layout = _layout(cfg, model)
    x = _params(args, cfg, layout)
    states, (c, s) = inference.simulate(model, layout, x)
    out = _output(args, cfg)
    rows = []
    for t, year in enumerate(layout.years):
        ssb = model.ssb(states[t + 1])
        for i, sp in enumerate(layout.species):
            rows.append([year, sp, float(c[t, i]), float(s[t, i]), float(ssb[i])])
    path = out / "simulation.csv"
    fileio.write_table(path, ["year", "species", "commercial", "survey", "ssb"], rows)
    fileio.write_manifest(out, {"simulation": path}, cfg, cfg.run.seed,
                          {"command": "simulate"})
    print(f"wrote {path}")


def cmd_generate(args, cfg):
    model = fileio.build_model(cfg, args.backend)
    layout = _layout(cfg, model)
    x = _params(args, cfg, layout)
    first = cfg.years.first_survey - cfg.years.first
    mask = np.broadcast_to(~layout.fixed_c, (layout.n_years, layout.n_species))
    obs = toy_models.generate_synthetic(model, layout, x, cfg.run.seed, first,
                                       noise_free=args.noise_free, commercial_mask=mask)
    out = _output(args, cfg)
    p_obs, p_truth = out / "observations.csv", out / "truth.csv"
    fileio.write_observations(p_obs, obs)
    inference.write_samples(p_truth, layout.names(), [x], log_post=None)
    fileio.write_manifest(out, {"observations": p_obs, "truth": p_truth}, cfg, cfg.run.seed,
                          {"command": "generate", "noise_free": bool(args.noise_free)})
    print(f"wrote {p_obs}")


def cmd_history_match(args, cfg):
    problem = _problem(cfg, args.backend)
    rng = np.random.default_rng(cfg.run.seed)
    hm = inference.history_match(problem, cfg.history_match, rng)
    out = _output(args, cfg)
    names = problem.layout.names()
    rows = [[True, float(i)] + list(map(float, x)) for x, i in zip(hm.points, hm.implausibility)]
    rows += [[False, float(i)] + list(map(float, x))
             for x, i in zip(hm.rejected, hm.rejected_implausibility)]
    path = out / "history_match.csv"
    fileio.write_table(path, ["plausible", "implausibility"] + names, rows)
    fileio.write_manifest(out, {"history_match": path}, cfg, cfg.run.seed,
                          {"command": "history-match", "threshold": hm.threshold,
                           "evaluated": hm.evaluated, "survivors": len(hm.points)})
    print(f"{len(hm.points)}/{hm.evaluated} plausible at threshold {hm.threshold:.3g}; "
          f"wrote {path}")


def cmd_fit(args, cfg):
    if args.iterations is not None:
        cfg.run.iterations = args.iterations
    if args.burn_in is not None:
        cfg.run.burn_in = args.burn_in
    problem = _problem(cfg, args.backend)
    out = _output(args, cfg)
    threads = fileio.thread_cap(args.threads)
    t0 = time.perf_counter()
    res = inference.run_fit(problem, cfg, cfg.run.seed, out, resume=args.resume,
                            threads=threads)
    logger.info("fit finished in %.1f s", time.perf_counter() - t0)
    print(f"{res.n_samples} samples written to {out / 'samples.csv'}")


def cmd_summarize(args, cfg):
    problem = _problem(cfg, args.backend)
    out = _output(args, cfg)
    path, rows = _samples(args, out, problem.layout)
    names = problem.layout.names()
    summary = diagnostics.summarize(rows[:, : len(names)], names, problem,
                                    args.max_trajectories)
    paths = summary.write(out)
    fileio.write_manifest(out, dict(paths), cfg, cfg.run.seed,
                          {"command": "summarize", "samples": str(path)})
    print(f"summarised {summary.n_samples} samples into {out}")


def cmd_residuals(args, cfg):
    problem = _problem(cfg, args.backend)
    out = _output(args, cfg)
    path, rows = _samples(args, out, problem.layout)
    report = diagnostics.residual_check(problem, rows)
    paths = report.write(out)
    fileio.write_manifest(out, dict(paths), cfg, cfg.run.seed,
                          {"command": "residuals", "samples": str(path)})
    flagged = report.flagged()
    print(f"{len(report.rows)} residuals; {len(flagged)} series flagged as non-white")


def cmd_validate_kernels(args, cfg):
    from . import validation

    seed = args.seed if args.seed is not None else 1
    results = validation.run_suite(seed=seed, quick=args.quick)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  result  detail")
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "validation.csv"
        fileio.write_table(path, ["check", "passed", "detail"],
                           [[r.name, r.passed, r.detail] for r in results])
        fileio.write_manifest(out, {"validation": path}, None, seed,
                              {"command": "validate-kernels"})
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "simulate": (cmd_simulate, False),
    "generate": (cmd_generate, False),
    "history-match": (cmd_history_match, True),
    "fit": (cmd_fit, True),
    "summarize": (cmd_summarize, True),
    "residuals": (cmd_residuals, True),
    "validate-kernels": (cmd_validate_kernels, None),
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func, need_obs = COMMANDS[args.command]
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = None if need_obs is None else _load(args, need_obs)
        code = func(args, cfg)
    except ValidationError as exc:
        print(f"sscalib {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except (SSCalibError, OSError, FloatingPointError, ArithmeticError) as exc:
        print(f"sscalib {args.command}: run failed: {exc}", file=sys.stderr)
        return 2
    return 0 if code is None else code


if __name__ == "__main__":
    sys.exit(main())
