"""Command-line interface: ``scoreratio {generate,reduce,evaluate}``.

Configuration is a TOML file with the tables ``problem``, ``net``, ``train``,
``algo`` and ``output`` plus a top-level ``seed``. Command-line flags override
file values; ``SCORERATIO_OUTPUT_DIR`` overrides the output directory.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np
import tomli

from . import io
from .diagnostics import (
    CDR,
    CMI,
    NetConfig,
    algorithm1,
    algorithm2,
    error_curve,
    tail_bounds,
)
from .exceptions import (
    InvalidConfig,
    MalformedCheckpoint,
    MissingOracle,
    NoConvergence,
    NonFiniteGradient,
    NonFiniteLoss,
    RankExhausted,
    SolveFailure,
)
from .linalg import make_rng, sym_eigendecompose
from .network import save_checkpoint
from .problems import (
    BananaProblem,
    DarcyProblem,
    LinGaussProblem,
    banana_exact_hx,
    darcy_true_diagnostics,
    lingauss_true_hx,
    lingauss_true_hy,
    sample_banana,
    sample_darcy,
    sample_lingauss,
)
from .training import TrainConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_ENV = "SCORERATIO_OUTPUT_DIR"

DEFAULTS = {
    "seed": 0,
    "problem.kind": "banana",
    "problem.N": 1000,
    "problem.d": 10,
    "problem.n": 2,
    "problem.m": 2,
    "problem.noise_var": None,
    "problem.grid": 17,
    "problem.n_kl": 16,
    "problem.delta": 0.5,
    "problem.gamma": 0.1,
    "problem.n_mc": 2000,
    "problem.path": None,
    "net.r_prime": 10,
    "net.s_prime": 10,
    "net.hidden_layers": 1,
    "net.width": 32,
    "train.learning_rate": 5e-3,
    "train.batch_size": 1000,
    "train.epochs": 100,
    "train.lambda_x": None,
    "train.lambda_y": None,
    "train.trace_mode": "exact",
    "train.n_projections": 100,
    "train.validation_fraction": 0.1,
    "train.clip_norm": 100.0,
    "algo.mode": "single",
    "algo.rounds": 1,
    "algo.ell": 1,
    "algo.eps_x": 1e-2,
    "algo.eps_y": 1e-2,
    "output.dir": "out",
}

_INT_KEYS = {
    "seed", "problem.N", "problem.d", "problem.n", "problem.m", "problem.grid", "problem.n_kl",
    "problem.n_mc", "net.r_prime", "net.s_prime", "net.hidden_layers", "net.width",
    "train.batch_size", "train.epochs", "train.n_projections", "algo.rounds", "algo.ell",
}
_STR_KEYS = {"problem.kind", "problem.path", "train.trace_mode", "algo.mode", "output.dir"}
_KINDS = ("banana", "lingauss", "darcy", "csv")

log = logging.getLogger("scoreratio")


# -- configuration ------------------------------------------------------------


def _flatten(doc, prefix=""):
    out = {}
    for key, val in doc.items():
        full = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(_flatten(val, full + "."))
        else:
            out[full] = val
    return out


def _coerce(key, val):
    if key not in DEFAULTS:
        raise InvalidConfig(f"unknown configuration key {key!r}")
    if val is None:
        return None
    if key in _STR_KEYS:
        if not isinstance(val, str):
            raise InvalidConfig(f"{key} must be a string")
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise InvalidConfig(f"{key} must be a number, got {val!r}")
    if key in _INT_KEYS:
        if float(val) != int(val):
            raise InvalidConfig(f"{key} must be an integer")
        return int(val)
    return float(val)


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def load_config(path=None, overrides=None) -> dict:
    """Merged configuration as a flat ``{dotted.key: value}`` dict."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
        for key, val in _flatten(doc).items():
            cfg[key] = _coerce(key, val)
    for key, val in (overrides or {}).items():
        cfg[key] = _coerce(key, val)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg["output.dir"] = env
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["problem.kind"] not in _KINDS:
        raise InvalidConfig(f"problem.kind must be one of {_KINDS}")
    if cfg["problem.kind"] == "csv":
        if not cfg["problem.path"]:
            raise InvalidConfig("problem.path is required for csv problems")
        if not os.path.exists(cfg["problem.path"]):
            raise InvalidConfig(f"problem.path {cfg['problem.path']!r} does not exist")
    for key in ("problem.N", "problem.d", "problem.n", "problem.grid", "problem.n_kl", "problem.n_mc",
                "net.r_prime", "net.width", "train.batch_size", "train.n_projections", "algo.rounds", "algo.ell"):
        if cfg[key] < 1:
            raise InvalidConfig(f"{key} must be positive")
    for key in ("problem.m", "net.s_prime", "net.hidden_layers", "train.epochs"):
        if cfg[key] < 0:
            raise InvalidConfig(f"{key} must be nonnegative")
    for key in ("algo.eps_x", "algo.eps_y"):
        if not cfg[key] > 0:
            raise InvalidConfig(f"{key} must be positive")
    if cfg["algo.mode"] not in ("single", "deflate"):
        raise InvalidConfig("algo.mode must be 'single' or 'deflate'")
    try:
        train_config(cfg)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc


def train_config(cfg) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["train.learning_rate"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        lambda_x=cfg["train.lambda_x"],
        lambda_y=cfg["train.lambda_y"],
        trace_mode=cfg["train.trace_mode"],
        n_projections=cfg["train.n_projections"],
        seed=cfg["seed"],
        validation_fraction=cfg["train.validation_fraction"],
        clip_norm=cfg["train.clip_norm"],
    )


def net_config(cfg) -> NetConfig:
    return NetConfig(cfg["net.r_prime"], cfg["net.s_prime"], cfg["net.hidden_layers"], cfg["net.width"])


# -- problems -----------------------------------------------------------------


def build_problem(cfg):
    kind, seed = cfg["problem.kind"], cfg["seed"]
    if kind == "banana":
        return BananaProblem.create(cfg["problem.d"], seed)
    if kind == "lingauss":
        return LinGaussProblem.random(cfg["problem.n"], cfg["problem.m"], make_rng([seed, 102]), cfg["problem.noise_var"])
    if kind == "darcy":
        kw = {} if cfg["problem.noise_var"] is None else {"noise_var": cfg["problem.noise_var"]}
        return DarcyProblem(cfg["problem.grid"], cfg["problem.n_kl"], cfg["problem.delta"], cfg["problem.gamma"], **kw)
    return None


def draw_samples(cfg, problem):
    kind, seed, N = cfg["problem.kind"], cfg["seed"], cfg["problem.N"]
    if kind == "banana":
        return sample_banana(problem, N, [seed, 201])
    if kind == "lingauss":
        return sample_lingauss(problem, N, [seed, 201])
    if kind == "darcy":
        return sample_darcy(problem, N, seed)
    return io.read_samples(cfg["problem.path"])


def manifest(cfg, problem, samples) -> dict:
    doc = {
        "seed": cfg["seed"],
        "problem": {k.split(".", 1)[1]: v for k, v in sorted(cfg.items()) if k.startswith("problem.")},
        "N": samples.N,
        "n": samples.n,
        "m": samples.m,
    }
    if isinstance(problem, BananaProblem):
        doc["oracle"] = {"R": problem.R.tolist()}
    elif isinstance(problem, LinGaussProblem):
        doc["oracle"] = {"A": problem.A.tolist(), "noise_cov": problem.noise_cov.tolist()}
    elif isinstance(problem, DarcyProblem):
        doc["oracle"] = {"noise_var": problem.noise_var, "obs_points": list(problem.obs_points)}
    return doc


def true_diagnostics(cfg, problem):
    if isinstance(problem, BananaProblem):
        return banana_exact_hx(problem), np.zeros((0, 0))
    if isinstance(problem, LinGaussProblem):
        return lingauss_true_hx(problem), lingauss_true_hy(problem)
    if isinstance(problem, DarcyProblem):
        return darcy_true_diagnostics(problem, cfg["problem.n_mc"], cfg["seed"] + 1)
    raise MissingOracle("evaluate needs an analytic problem (banana, lingauss or darcy)")


# -- commands -----------------------------------------------------------------


def _out_dir(cfg):
    path = cfg["output.dir"]
    os.makedirs(path, exist_ok=True)
    return path


def cmd_generate(cfg) -> None:
    problem = build_problem(cfg)
    samples = draw_samples(cfg, problem)
    out = _out_dir(cfg)
    io.write_samples(os.path.join(out, "samples.csv"), samples)
    io.write_json(os.path.join(out, "manifest.json"), manifest(cfg, problem, samples))
    log.info("generated N=%d n=%d m=%d", samples.N, samples.n, samples.m)


def _write_spectrum(path, values, kind):
    tails = tail_bounds(values, kind)[1:]
    rows = np.column_stack([np.arange(1, len(values) + 1), values, tails]) if len(values) else np.zeros((0, 3))
    io.write_table(path, ["index", "eigenvalue", "tail_bound"], rows)


def cmd_reduce(cfg) -> None:
    out = _out_dir(cfg)
    handler = logging.FileHandler(os.path.join(out, "run.log"), mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("scoreratio")
    root.addHandler(handler)
    try:
        problem = build_problem(cfg)
        samples = draw_samples(cfg, problem)
        ncfg, tcfg = net_config(cfg), train_config(cfg)
        log.info("reduce mode=%s N=%d n=%d m=%d seed=%d", cfg["algo.mode"], samples.N, samples.n, samples.m, cfg["seed"])
        if cfg["algo.mode"] == "single":
            res = algorithm1(samples, ncfg, tcfg, cfg["algo.eps_x"], cfg["algo.eps_y"])
            save_checkpoint(res.network, os.path.join(out, "checkpoint.json"))
            bx, by = res.basis_x, res.basis_y
            _write_spectrum(os.path.join(out, "spectra_x.csv"), bx.spectrum, CDR)
            _write_spectrum(os.path.join(out, "spectra_y.csv"), by.spectrum, CMI)
            io.write_matrix(os.path.join(out, "basis_x.csv"), bx.vectors, "u")
            io.write_matrix(os.path.join(out, "basis_y.csv"), by.vectors if by.vectors.size else np.zeros((samples.m, 0)), "v")
            ranks = {"mode": "single", "rank_x": bx.rank, "rank_y": by.rank,
                     "bound_x": bx.bound, "bound_y": by.bound,
                     "full_rank_warning_x": bx.warning, "full_rank_warning_y": by.warning}
        else:
            T, ell = cfg["algo.rounds"], cfg["algo.ell"]
            res = algorithm2(samples, T, ell, ncfg, tcfg)
            lead_x, lead_y = [], []
            for t, rnd in enumerate(res.rounds):
                save_checkpoint(rnd.network, os.path.join(out, f"checkpoint_round{t}.json"))
                lead_x.extend(sym_eigendecompose(rnd.hx.matrix).values[:ell])
                if samples.m:
                    lead_y.extend(sym_eigendecompose(rnd.hy.matrix).values[:ell])
            _write_spectrum(os.path.join(out, "spectra_x.csv"), np.array(lead_x), CDR)
            _write_spectrum(os.path.join(out, "spectra_y.csv"), np.array(lead_y), CMI)
            io.write_matrix(os.path.join(out, "basis_x.csv"), res.U, "u")
            io.write_matrix(os.path.join(out, "basis_y.csv"), res.V, "v")
            ranks = {"mode": "deflate", "rounds": T, "ell": ell, "rank_x": res.U.shape[1], "rank_y": res.V.shape[1]}
        io.write_json(os.path.join(out, "ranks.json"), ranks)
        log.info("ranks rank_x=%d rank_y=%d", ranks["rank_x"], ranks["rank_y"])
    finally:
        root.removeHandler(handler)
        handler.close()


def _bounds_rows(basis, H, kind):
    dim = H.shape[0]
    if dim == 0:
        return np.zeros((1, 3))
    _, vecs = sym_eigendecompose(H)
    optimal = error_curve(vecs, H, kind)
    learned = np.full(dim + 1, np.nan)
    k = min(basis.shape[1], dim)
    learned[: k + 1] = error_curve(basis[:, :k], H, kind)
    return np.column_stack([np.arange(dim + 1), learned, optimal])


def cmd_evaluate(cfg) -> None:
    problem = build_problem(cfg)
    Hx, Hy = true_diagnostics(cfg, problem)
    out = cfg["output.dir"]
    Ux = io.read_matrix(os.path.join(out, "basis_x.csv"))
    Vy = io.read_matrix(os.path.join(out, "basis_y.csv"))
    Ux = Ux.reshape(Hx.shape[0], -1)
    Vy = Vy.reshape(Hy.shape[0], -1) if Vy.size else np.zeros((Hy.shape[0], 0))
    for name, basis, H, kind in (("bounds_x.csv", Ux, Hx, CDR), ("bounds_y.csv", Vy, Hy, CMI)):
        io.write_table(os.path.join(out, name), ["r", "learned", "optimal"], _bounds_rows(basis, H, kind))
    log.info("evaluated bounds against the analytic diagnostics")


COMMANDS = {"generate": cmd_generate, "reduce": cmd_reduce, "evaluate": cmd_evaluate}


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoreratio", description="Score-ratio dimension reduction")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trace-mode", choices=("exact", "sliced"))
    parser.add_argument("--deflate", metavar="T,L", help="iterative deflation with T rounds of L directions")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        if "=" not in item:
            raise InvalidConfig(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        over[key.strip()] = _parse_value(val.strip())
    if args.seed is not None:
        over["seed"] = args.seed
    if args.trace_mode is not None:
        over["train.trace_mode"] = args.trace_mode
    if args.deflate is not None:
        try:
            T, ell = (int(v) for v in args.deflate.split(","))
        except ValueError:
            raise InvalidConfig(f"--deflate expects T,L, got {args.deflate!r}") from None
        over.update({"algo.mode": "deflate", "algo.rounds": T, "algo.ell": ell})
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logger = logging.getLogger("scoreratio")
    logger.setLevel(logging.INFO)
    stream = logging.StreamHandler(sys.stdout)
    stream.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(stream)
    start = time.perf_counter()
    try:
        cfg = load_config(args.config, _overrides(args))
        COMMANDS[args.command](cfg)
    except (InvalidConfig, MissingOracle, RankExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLoss, NonFiniteGradient, SolveFailure, NoConvergence) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, MalformedCheckpoint) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        logger.removeHandler(stream)
    print(f"wall time {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
