"""Command-line driver: ``run <config>``, ``verify`` and ``report <csv>``.

A run config is an INI file with the sections ``[problem]``, ``[architecture]``,
``[training]``, ``[evaluation]`` and ``[output]``; see ``experiments/`` for
one file per reference experiment. Relative output directories are resolved
against ``$NNLINSYS_OUTPUT_ROOT`` when it is set, else against the working
directory.

Exit codes: 0 success, 1 verification failure, 2 config or input error,
3 I/O error, 4 numeric failure (divergence).
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, fnn, problems
from .solver import DivergenceError, TrainConfig, TrainHistory, train

log = logging.getLogger("nnlinsys")

OUTPUT_ROOT_ENV = "NNLINSYS_OUTPUT_ROOT"
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
FORMATS = ("csv", "json", "checkpoint", "slice")

# family -> {key: (kind, default)}; kind is int, float, "floats", "ints"
_REQUIRED = object()
_FAMILIES = {
    "poisson": {"d": (int, _REQUIRED), "N": (int, _REQUIRED)},
    "riesz": {"d": (int, _REQUIRED), "N": (int, _REQUIRED), "c": ("floats", [1.0]), "alpha": ("floats", [1.5])},
    "queueing": {"d": (int, _REQUIRED), "N": (int, 100), "alpha": (float, 1.0), "lam": ("floats", [0.01]),
                 "s": ("ints", None), "eps": (float, 1.0)},
    "pbn": {"d": (int, _REQUIRED), "shifts": ("ints", list(problems.PBN_SHIFTS)),
            "values": ("floats", list(problems.PBN_VALUES)), "eps": (float, 1.0)},
}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: dict
    L: int
    M: int
    training: TrainConfig
    n_test: int = 10_000
    test_seed: int = 2023
    directory: str = "runs/default"
    formats: tuple[str, ...] = ("csv", "json", "checkpoint")
    slice_dims: tuple[int, int] = (0, 1)

    def to_ini(self) -> str:
        cp = _new_parser()
        cp["problem"] = {k: _fmt(v) for k, v in self.problem.items() if v is not None}
        cp["architecture"] = {"L": str(self.L), "M": str(self.M)}
        cp["training"] = {k: _fmt(v) for k, v in dataclasses.asdict(self.training).items()}
        cp["evaluation"] = {"n_test": str(self.n_test), "test_seed": str(self.test_seed)}
        cp["output"] = {"directory": self.directory, "formats": ", ".join(self.formats),
                        "slice_dims": _fmt(list(self.slice_dims))}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self) -> dict:
        """Plain-dict view stored in the report."""
        return {
            "problem": dict(self.problem),
            "training": dataclasses.asdict(self.training),
            "evaluation": {"n_test": self.n_test, "test_seed": self.test_seed},
        }


def _new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (N, L, M)
    return cp


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(kind, raw: str, where: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is str:
            return raw.strip()
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return [int(p) for p in parts] if kind == "ints" else [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section(cp, name, allowed, required=()):
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    items = dict(cp.items(name))
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise ConfigError(f"[{name}]: unknown key(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in items]
    if missing:
        raise ConfigError(f"[{name}]: missing key(s) {', '.join(missing)}")
    return items


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run config; raises :class:`ConfigError`."""
    cp = _new_parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    extra = sorted(set(cp.sections()) - {"problem", "architecture", "training", "evaluation", "output"})
    if extra:
        raise ConfigError(f"unknown section(s) {', '.join(extra)}")

    fam = cp.get("problem", "family", fallback=None)
    if fam not in _FAMILIES:
        raise ConfigError(f"[problem] family must be one of {', '.join(_FAMILIES)}, got {fam!r}")
    spec = _FAMILIES[fam]
    req = [k for k, (_, dflt) in spec.items() if dflt is _REQUIRED]
    raw = _section(cp, "problem", ["family", *spec], ["family", *req])
    problem = {"family": fam}
    for key, (kind, dflt) in spec.items():
        if key in raw:
            problem[key] = _convert(kind, raw[key], f"[problem] {key}")
        elif dflt is not _REQUIRED:
            problem[key] = list(dflt) if isinstance(dflt, list) else dflt

    arch = _section(cp, "architecture", ["L", "M"], ["L", "M"])
    L = _convert(int, arch["L"], "[architecture] L")
    M = _convert(int, arch["M"], "[architecture] M")

    train_raw = _section(cp, "training", list(_TRAIN_KEYS))
    kw = {}
    for key, value in train_raw.items():
        kind = type(_TRAIN_KEYS[key].default)
        kw[key] = _convert(kind, value, f"[training] {key}")
    inst = _build_instance(problem)
    kw.setdefault("batch_size", inst.defaults.get("batch_size", TrainConfig.batch_size))
    kw.setdefault("max_iters", inst.defaults.get("max_iters", TrainConfig.max_iters))
    try:
        training = TrainConfig(**kw)
        fnn.Architecture(L, M, inst.grid.d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    ev = _section(cp, "evaluation", ["n_test", "test_seed"])
    n_test = _convert(int, ev.get("n_test", "10000"), "[evaluation] n_test")
    test_seed = _convert(int, ev.get("test_seed", "2023"), "[evaluation] test_seed")
    if n_test < 1:
        raise ConfigError("[evaluation] n_test must be >= 1")

    out = _section(cp, "output", ["directory", "formats", "slice_dims"])
    formats = tuple(f.strip() for f in out.get("formats", "csv, json, checkpoint").split(",") if f.strip())
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"[output] unknown format(s) {', '.join(bad)}")
    slice_dims = tuple(_convert("ints", out.get("slice_dims", "0, 1"), "[output] slice_dims"))
    if "slice" in formats and (len(slice_dims) != 2 or len(set(slice_dims)) != 2
                               or not all(0 <= p < inst.grid.d for p in slice_dims)):
        raise ConfigError(f"[output] slice_dims must be two distinct axes below d={inst.grid.d}")
    return RunConfig(problem, L, M, training, n_test, test_seed,
                     out.get("directory", "runs/default").strip(), formats, slice_dims)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _build_instance(problem: dict):
    p = dict(problem)
    fam = p.pop("family")
    try:
        if fam == "poisson":
            return problems.build_poisson(p["d"], p["N"])
        if fam == "riesz":
            c = p["c"][0] if len(p["c"]) == 1 else p["c"]
            alpha = p["alpha"][0] if len(p["alpha"]) == 1 else p["alpha"]
            return problems.build_riesz(p["d"], p["N"], c, alpha)
        if fam == "queueing":
            lam = p["lam"][0] if len(p["lam"]) == 1 else p["lam"]
            return problems.build_queueing(p["d"], p["N"], p["alpha"], lam, p["s"], p["eps"])
        return problems.build_pbn(p["d"], p["shifts"], p["values"], p["eps"])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"[problem] {exc}") from None


def build_instance(cfg: RunConfig):
    return _build_instance(cfg.problem)


def output_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.directory)
    if d.is_absolute():
        return d
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return (Path(root) if root else Path.cwd()) / d


def write_slice_csv(path, values: np.ndarray) -> None:
    np.savetxt(path, values, delimiter=",", fmt="%.17g")


# -- subcommands ---------------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg.training = dataclasses.replace(cfg.training, threads=args.threads, reproducible=not args.fast)
        elif args.fast:
            cfg.training = dataclasses.replace(cfg.training, reproducible=False)
        inst = build_instance(cfg)
        arch = fnn.Architecture(cfg.L, cfg.M, inst.grid.d)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = output_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    T = evaluation.make_test_set(inst, cfg.n_test, cfg.test_seed)
    ckpt = out / "theta.ckpt" if "checkpoint" in cfg.formats else None
    log.info("%s: L=%d M=%d |theta|=%d, %d iterations", inst.label, cfg.L, cfg.M,
             fnn.param_count(arch), cfg.training.max_iters)
    try:
        theta, hist = train(inst, arch, cfg.training, test_set=T, checkpoint_path=ckpt)
    except DivergenceError as exc:
        if "csv" in cfg.formats and exc.history is not None:
            exc.history.to_csv(out / "history.csv")
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO

    report = evaluation.evaluate(theta, inst, T, cfg.echo())
    try:
        if "csv" in cfg.formats:
            hist.to_csv(out / "history.csv")
        if "json" in cfg.formats:
            (out / "report.json").write_text(report.to_json() + "\n")
        if ckpt is not None:
            fnn.save_checkpoint(ckpt, theta, cfg.training.seed)
        if "slice" in cfg.formats:
            x_max, _ = evaluation.argmax_scan(theta, inst.grid, seed=cfg.test_seed)
            write_slice_csv(out / "slice.csv", evaluation.slice_2d(theta, inst.grid, x_max, cfg.slice_dims))
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(report.to_json())
    log.info("done in %.1f s, outputs in %s", hist.seconds, out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    t0 = time.perf_counter()
    checks = run_checks()
    passed = all(c["passed"] for c in checks)
    summary = {"passed": passed, "seconds": round(time.perf_counter() - t0, 2), "checks": checks}
    text = json.dumps(summary, indent=2)
    print(text)
    if args.output:
        try:
            Path(args.output).write_text(text + "\n")
        except OSError as exc:
            print(f"io error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK if passed else EXIT_VERIFY


def summarize_history(hist: TrainHistory) -> str:
    if len(hist) == 0:
        return "no iterations"
    recs = hist.records
    best = min(recs, key=lambda r: r.loss)
    lines = [
        f"records: {len(recs)} (iterations {recs[0].iter}..{recs[-1].iter})",
        f"first loss: {recs[0].loss:.6e} at iter {recs[0].iter}",
        f"last loss:  {recs[-1].loss:.6e} at iter {recs[-1].iter}",
        f"min loss:   {best.loss:.6e} at iter {best.iter}",
    ]
    last = recs[-1]
    for name in ("e_inf", "e_l2", "res_l2"):
        v = getattr(last, name)
        lines.append(f"final {name}: {'n/a' if v is None else f'{v:.6e}'}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        hist = TrainHistory.from_csv(args.csv)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(summarize_history(hist))
    if args.inv_norm is not None and len(hist):
        if args.system_size is None:
            print("parse error: --inv-norm needs --system-size", file=sys.stderr)
            return EXIT_CONFIG
        bound = evaluation.residual_error_bound(args.inv_norm, args.system_size, hist.records[-1].loss)
        print(f"error bound from last batch loss: {bound:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnlinsys", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one experiment")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None, help="worker threads for the batch gradient")
    r.add_argument("--fast", action="store_true", help="unordered (non-reproducible) gradient reduction")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the dense small-instance checks")
    v.add_argument("--output", help="also write the JSON summary here")
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="summarize a history CSV")
    p.add_argument("csv")
    p.add_argument("--inv-norm", type=float, help="||A^-1||_2, to print the residual error bound")
    p.add_argument("--system-size", type=float, help="number of unknowns for the bound")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
