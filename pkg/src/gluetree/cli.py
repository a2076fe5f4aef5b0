"""Experiment orchestration CLI.

Subcommands: gen, build, height, twopoint, dimension, martingale, lp,
probe, verify.  Every run is reproducible from (config, seed): replicate
r draws from the stream SeedSequence(entropy=seed, spawn_key=(r,)), rows
are sorted by replicate before writing, and output files are written
atomically.  Exit codes: 0 ok, 2 usage, 3 bad input file, 4 numeric
parameter error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acceptance, diagnostics, records, sequences, tracked, twopoint, tree
from .errors import FileFormatError, ParameterError
from .records import ResultRecord
from .streams import substream

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_FILE = 3
EXIT_BAD_PARAM = 4

_CONFIG_KEYS = {
    "command", "seq", "n", "ngrid", "seed", "reps", "out", "format",
    "lambda", "K", "rgrid", "epsgrid", "parts", "n0", "m", "i0", "m0",
    "checkpoints", "suite", "import", "sample_size", "eps", "alpha",
}


@dataclass
class ExperimentConfig:
    command: str
    seq: str | None = None
    n: int | None = None
    ngrid: str | None = None
    seed: int | None = None
    reps: int | None = None
    out: str | None = None
    format: str | None = None
    lam: float | None = None
    K: int | None = None
    rgrid: str | None = None
    epsgrid: str | None = None
    parts: int | None = None
    n0: int | None = None
    m: int | None = None
    i0: int | None = None
    m0: float | None = None
    checkpoints: str | None = None
    suite: str | None = None
    import_path: str | None = None
    sample_size: int | None = None
    eps: float | None = None
    alpha: float | None = None

    def canonical(self) -> dict:
        """Identity of the experiment: everything except output disposition."""
        skip = {"out", "format"}
        return {k: v for k, v in self.__dict__.items()
                if v is not None and k not in skip}


def _parse_grid(spec: str, integer: bool = False) -> np.ndarray:
    """Geometric grid ``lo:hi:steps`` (inclusive endpoints)."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ParameterError(f"grid must be lo:hi:steps, got {spec!r}")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ParameterError(f"bad grid {spec!r}") from None
    if lo <= 0 or hi <= 0 or steps < 1:
        raise ParameterError(f"grid endpoints must be positive, got {spec!r}")
    g = np.geomspace(lo, hi, steps)
    if integer:
        return np.unique(np.rint(g).astype(np.int64))
    return g


def _parse_int_list(spec: str) -> list[int]:
    try:
        return [int(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"bad integer list {spec!r}") from None


def worker_count(n_items: int) -> int:
    env = os.environ.get("RTREE_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ParameterError(f"RTREE_THREADS must be an integer, got {env!r}") from None
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_items))


def _pmap(fn, items):
    w = worker_count(len(items))
    if w == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items))


def _emit(cfg: ExperimentConfig, rows: list[ResultRecord]) -> None:
    if cfg.out:
        records.write_records(rows, cfg.out, cfg.format)
    else:
        text = (records.records_to_csv(rows) if cfg.format == "csv"
                else records.records_to_json(rows))
        sys.stdout.write(text)


def _rec(cfg: ExperimentConfig, exp_id: str, statistic: str, value: float,
         replicate: int | None = None, n: int | None = None,
         stderr: float | None = None, trunc: float | None = None) -> ResultRecord:
    return ResultRecord(experiment=exp_id, command=cfg.command,
                        sequence=cfg.seq or "", seed=cfg.seed,
                        replicate=replicate, n=n if n is not None else cfg.n,
                        statistic=statistic, value=value, stderr=stderr,
                        truncation_error=trunc)


def _need(cfg: ExperimentConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise ParameterError(f"{cfg.command} requires --{name}")


def _sequence(cfg: ExperimentConfig) -> sequences.BranchLengthSequence:
    _need(cfg, "seq")
    seq = sequences.parse_sequence_spec(cfg.seq)
    if seq.is_random:
        seq.bind_seed(cfg.seed)
    return seq


# -- subcommands ------------------------------------------------------------------


def cmd_gen(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "n")
    seq = _sequence(cfg)
    a = sequences.generate(seq, cfg.n)
    A = seq.partial_sums(cfg.n)
    exp_id = records.experiment_id(cfg.canonical())
    rows = [_rec(cfg, exp_id, "a", float(a[i]), replicate=None, n=i + 1)
            for i in range(cfg.n)]
    rows += [_rec(cfg, exp_id, "A", float(A[i]), replicate=None, n=i + 1)
             for i in range(cfg.n)]
    rows.append(_rec(cfg, exp_id, "sup_a", seq.sup_a(cfg.n)))
    rows.append(_rec(cfg, exp_id, "h_of_a", sequences.h_of_a(seq, cfg.n)))
    return rows


def cmd_build(cfg: ExperimentConfig) -> list[ResultRecord]:
    """Build or re-import a tree; --out receives the edge-list CSV, query
    statistics always go to stdout."""
    if cfg.import_path:
        t = tree.import_tree(cfg.import_path)
    else:
        _need(cfg, "n")
        seq = _sequence(cfg)
        t = tree.build_tree(seq, cfg.n, substream(cfg.seed, 0))
        if cfg.out:
            tree.export_tree(t, cfg.out)
    exp_id = records.experiment_id(cfg.canonical())
    stats = [
        ("total_length", t.total_length),
        ("max_height", tree.max_height(t)),
        ("longest_stem", tree.longest_stem(t)),
        ("n", float(t.n)),
    ]
    rows = [_rec(cfg, exp_id, name, val, n=t.n) for name, val in stats]
    text = (records.records_to_csv(rows) if cfg.format == "csv"
            else records.records_to_json(rows))
    sys.stdout.write(text)
    return []


def cmd_height(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "n")
    seq = _sequence(cfg)
    exp_id = records.experiment_id(cfg.canonical())
    batch = tracked.sample_height_law_batch(seq, cfg.n, cfg.reps,
                                            substream(cfg.seed, 0))
    rows = [_rec(cfg, exp_id, "height", float(v), replicate=r,
                 trunc=batch.truncation_error or None)
            for r, v in enumerate(batch.values)]
    mean = float(batch.values.mean())
    se = float(batch.values.std(ddof=1) / math.sqrt(cfg.reps)) if cfg.reps > 1 else None
    rows.append(_rec(cfg, exp_id, "mean", mean, stderr=se))
    rows.append(_rec(cfg, exp_id, "half_h_of_a",
                     0.5 * sequences.h_of_a(seq, batch.n_used), n=batch.n_used))
    if cfg.lam is not None:
        check = tracked.exp_bound_check(seq, cfg.n, cfg.lam)
        rows.append(_rec(cfg, exp_id, "mgf", check.mgf))
        rows.append(_rec(cfg, exp_id, "mgf_bound", check.bound))
        rows.append(_rec(cfg, exp_id, "mgf_ok", float(check.ok)))
    return rows


def cmd_twopoint(cfg: ExperimentConfig) -> list[ResultRecord]:
    seq = _sequence(cfg)
    K = cfg.K if cfg.K is not None else (cfg.n or 10_000)
    law = twopoint.mixture_weights(seq, K)
    exp_id = records.experiment_id(cfg.canonical())
    rows = []
    if cfg.rgrid:
        _need(cfg, "m")
        grid = np.sort(_parse_grid(cfg.rgrid))[::-1]
        fit = twopoint.tail_exponent(law, grid, cfg.m, substream(cfg.seed, 0))
        for r, c, p in zip(fit.r_grid, fit.counts, fit.phat):
            rows.append(_rec(cfg, exp_id, f"p_le_r@{r:.8g}", float(p), n=K,
                             stderr=float(np.sqrt(max(p * (1 - p), 0) / cfg.m))))
        rows.append(_rec(cfg, exp_id, "tail_slope", fit.slope, n=K,
                         stderr=fit.stderr))
        rows.append(_rec(cfg, exp_id, "flagged", float(fit.flagged), n=K))
        return rows
    d = twopoint.sample_D_batch(law, cfg.reps, substream(cfg.seed, 0))
    rows += [_rec(cfg, exp_id, "D", float(v), replicate=r, n=K,
                  trunc=law.tail_mean_budget)
             for r, v in enumerate(d)]
    se = float(d.std(ddof=1) / math.sqrt(cfg.reps)) if cfg.reps > 1 else None
    rows.append(_rec(cfg, exp_id, "mean", float(d.mean()), n=K, stderr=se))
    rows.append(_rec(cfg, exp_id, "exact_mean", twopoint.exact_mean_D(law), n=K,
                     trunc=law.tail_mean_budget))
    return rows


def _dimension_one_seed(args) -> list[dict]:
    spec, n, seed, eps_list, sample_size = args
    seq = sequences.parse_sequence_spec(spec)
    if seq.is_random:
        seq.bind_seed(seed)
    res = diagnostics.box_dimension(seq, [n], eps_list, [seed],
                                    sample_size=sample_size)
    return list(res.table)


def cmd_dimension(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "n", "epsgrid")
    eps = sorted(set(float(e) for e in _parse_grid(cfg.epsgrid)), reverse=True)
    seeds = [cfg.seed + r for r in range(cfg.reps)]
    tables = _pmap(_dimension_one_seed,
                   [(cfg.seq, cfg.n, s, eps, cfg.sample_size) for s in seeds])
    exp_id = records.experiment_id(cfg.canonical())
    rows = []
    pairs = []
    for rep, table in enumerate(tables):
        for entry in table:
            rows.append(_rec(cfg, exp_id, f"net_count@{entry['eps']:.8g}",
                             float(entry["count"]), replicate=rep, n=entry["n"]))
            if entry["count"] > 0:
                pairs.append((1.0 / entry["eps"], entry["count"]))
    fit = sequences.fit_exponent(pairs)
    rows.append(_rec(cfg, exp_id, "box_dimension_slope", fit.slope,
                     stderr=fit.stderr))
    return rows


def cmd_martingale(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "n", "i0", "m0")
    seq = _sequence(cfg)
    cps = (_parse_int_list(cfg.checkpoints) if cfg.checkpoints else [cfg.n])
    ens = diagnostics.urn_ensemble(seq, cfg.i0, cfg.m0, cfg.n, cfg.reps,
                                   substream(cfg.seed, 0), checkpoints=cps)
    exp_id = records.experiment_id(cfg.canonical())
    rows = [_rec(cfg, exp_id, "mass_mean", float(mu), n=int(cp), stderr=float(se))
            for cp, mu, se in zip(ens.checkpoints, ens.means, ens.stderrs)]
    rows.append(_rec(cfg, exp_id, "m0", cfg.m0))
    return rows


def _lp_one(args) -> float:
    spec, n, m, n0, parts, seed, rep = args
    seq = sequences.parse_sequence_spec(spec)
    if seq.is_random:
        seq.bind_seed(seed)
    return diagnostics.lp_projected_distance(seq, n, m, n0, parts,
                                             substream(seed, rep))


def cmd_lp(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "n", "m", "n0", "parts")
    vals = _pmap(_lp_one, [(cfg.seq, cfg.n, cfg.m, cfg.n0, cfg.parts,
                            cfg.seed, r) for r in range(cfg.reps)])
    exp_id = records.experiment_id(cfg.canonical())
    rows = [_rec(cfg, exp_id, "lp_tv", float(v), replicate=r)
            for r, v in enumerate(vals)]
    rows.append(_rec(cfg, exp_id, "median", float(np.median(vals))))
    return rows


def _probe_one(args) -> list[dict]:
    spec, ns, seed = args
    seq = sequences.parse_sequence_spec(spec)
    if seq.is_random:
        seq.bind_seed(seed)
    res = diagnostics.boundedness_probe(seq, ns, [seed])
    return list(res.rows)


def cmd_probe(cfg: ExperimentConfig) -> list[ResultRecord]:
    _need(cfg, "ngrid")
    ns = [int(n) for n in _parse_grid(cfg.ngrid, integer=True)]
    if len(ns) < 2:
        raise ParameterError("probe needs an n grid with at least 2 sizes")
    seeds = [cfg.seed + r for r in range(cfg.reps)]
    tables = _pmap(_probe_one, [(cfg.seq, ns, s) for s in seeds])
    exp_id = records.experiment_id(cfg.canonical())
    rows = []
    pairs = []
    for rep, table in enumerate(tables):
        for entry in table:
            rows.append(_rec(cfg, exp_id, "max_height", entry["max_height"],
                             replicate=rep, n=entry["n"]))
            pairs.append((entry["n"], entry["max_height"]))
    fit = sequences.fit_exponent(pairs)
    rows.append(_rec(cfg, exp_id, "growth_slope", fit.slope, stderr=fit.stderr))
    return rows


def cmd_verify(cfg: ExperimentConfig) -> list[ResultRecord]:
    results = acceptance.run_suite(cfg.suite)
    exp_id = records.experiment_id(cfg.canonical())
    rows = []
    for res in results:
        line = "PASS" if res.ok else "FAIL"
        detail = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in res.measured.items())
        print(f"{line} {res.cid} {res.description} | {detail}")
        rows.append(ResultRecord(experiment=exp_id, command="verify",
                                 sequence=res.cid, seed=cfg.seed, replicate=None,
                                 n=None, statistic="ok", value=float(res.ok)))
    print(f"{sum(r.ok for r in results)}/{len(results)} criteria passed")
    if cfg.out:
        records.write_records(rows, cfg.out, cfg.format)
    return []


_DISPATCH = {
    "gen": cmd_gen,
    "build": cmd_build,
    "height": cmd_height,
    "twopoint": cmd_twopoint,
    "dimension": cmd_dimension,
    "martingale": cmd_martingale,
    "lp": cmd_lp,
    "probe": cmd_probe,
    "verify": cmd_verify,
}


# -- argument parsing ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gluetree",
        description="Random real trees by recursive uniform gluing: "
                    "experiments and verification suites.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value or JSON config file; flags override")
        p.add_argument("--seq", help="power:A | poisson:B | logpow:L | spiked | file:PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"))

    p = sub.add_parser("gen", help="emit a_i and A_i rows")
    common(p)
    p.add_argument("--n", type=int)

    p = sub.add_parser("build", help="build a tree, export or re-import edge lists")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--import", dest="import_path",
                   help="load a tree CSV and print its query statistics")

    p = sub.add_parser("height", help="typical-height samples and exact mean")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--lambda", dest="lam", type=float,
                   help="also check the exponential height-MGF bound at this lambda")

    p = sub.add_parser("twopoint", help="two-point distance law experiments")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--rgrid", help="radius grid lo:hi:steps for tail exponent")

    p = sub.add_parser("dimension", help="box-dimension slope via covering nets")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--epsgrid", help="epsilon grid lo:hi:steps")
    p.add_argument("--sample-size", dest="sample_size", type=int)

    p = sub.add_parser("martingale", help="subtree-mass martingale ensembles")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--i0", type=int)
    p.add_argument("--m0", type=float)
    p.add_argument("--checkpoints", help="comma-separated checkpoint steps")

    p = sub.add_parser("lp", help="projected total-variation convergence diagnostic")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--parts", type=int)

    p = sub.add_parser("probe", help="max-height growth curves")
    common(p)
    p.add_argument("--ngrid", help="n grid lo:hi:steps")

    p = sub.add_parser("verify", help="run an acceptance suite")
    common(p)
    p.add_argument("suite", choices=sorted(acceptance.SUITES))
    return ap


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileFormatError(f"cannot read config {path}: {e}") from None
    text_stripped = text.strip()
    if text_stripped.startswith("{"):
        try:
            data = json.loads(text_stripped)
        except json.JSONDecodeError as e:
            raise FileFormatError(f"bad JSON config: {e}") from None
        if not isinstance(data, dict):
            raise FileFormatError("JSON config must be an object")
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise FileFormatError(f"expected key=value: {s!r}", row=lineno)
            k, _, v = s.partition("=")
            data[k.strip()] = v.strip()
    for k in data:
        if k not in _CONFIG_KEYS:
            raise FileFormatError(f"unknown config key {k!r}")
    return data


_CFG_FIELD_BY_KEY = {
    "lambda": "lam", "import": "import_path",
}
_INT_KEYS = {"n", "seed", "reps", "K", "parts", "n0", "m", "i0", "sample_size"}
_FLOAT_KEYS = {"lambda", "m0", "eps", "alpha"}
_DEFAULTS = {"seed": 0, "reps": 1, "format": "csv", "sample_size": 100_000}


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, explicit flags override, defaults fill the rest."""
    cfg = ExperimentConfig(command=args.command)
    file_data = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_data.items():
        if key == "command":
            continue
        if key in _INT_KEYS:
            try:
                raw = int(raw)
            except (TypeError, ValueError):
                raise FileFormatError(f"config key {key} must be an integer") from None
        elif key in _FLOAT_KEYS:
            try:
                raw = float(raw)
            except (TypeError, ValueError):
                raise FileFormatError(f"config key {key} must be a number") from None
        setattr(cfg, _CFG_FIELD_BY_KEY.get(key, key), raw)
    for attr in vars(cfg):
        val = getattr(args, attr, None)
        if attr != "command" and val is not None:
            setattr(cfg, attr, val)
    for attr, default in _DEFAULTS.items():
        if getattr(cfg, attr) is None:
            setattr(cfg, attr, default)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: ExperimentConfig) -> None:
    for attr in ("n", "reps", "K", "parts", "n0", "m", "i0", "sample_size"):
        v = getattr(cfg, attr)
        if v is not None and v < 1:
            raise ParameterError(f"--{attr} must be >= 1, got {v}")
    if cfg.m0 is not None and not (0.0 < cfg.m0 <= 1.0):
        raise ParameterError(f"--m0 must be in (0, 1], got {cfg.m0}")
    if cfg.lam is not None and cfg.lam < 0:
        raise ParameterError(f"--lambda must be >= 0, got {cfg.lam}")


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _merge_config(args)
        rows = _DISPATCH[cfg.command](cfg)
        if rows:
            _emit(cfg, rows)
        return EXIT_OK
    except ParameterError as e:
        print(f"gluetree-error code={EXIT_BAD_PARAM} msg={e}", file=sys.stderr)
        return EXIT_BAD_PARAM
    except (FileFormatError, OSError) as e:
        print(f"gluetree-error code={EXIT_BAD_FILE} msg={e}", file=sys.stderr)
        return EXIT_BAD_FILE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
