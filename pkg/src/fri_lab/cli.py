"""Command-line front end.

Configs are INI files with an ``[experiment]`` section and, optionally, a
section named after the experiment kind; keys are ExperimentConfig field
names, lists are comma separated and ``none`` unsets an optional value.
Each run directory holds ``config.ini`` (the effective config),
``manifest.json``, ``rows.jsonl`` and ``aggregates.json``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import sys
import traceback
from pathlib import Path
from typing import Optional

from . import __version__
from . import _kernels as K
from .experiments import KINDS, ExperimentConfig, ExperimentRecord, default_threads, run

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2

_INT = {"d", "N", "replicas", "seed", "walks_per_env", "max_attempts", "K_radius", "sub_replicas", "thin_N"}
_FLOAT = {"u", "T", "epsilon", "alpha", "ci_confidence"}
_OPT_INT = {"margin"}
_OPT_FLOAT = {"lucky_T"}
_INT_LIST = {"targets", "n_grid", "R_grid", "N_grid", "horizons", "A_radii"}
_FLOAT_LIST = {"T_grid"}
_STR = {"kind", "site_set"}
_BOOL = {"strict"}
COMMON = ("kind", "d", "u", "T", "N", "replicas", "seed", "margin", "epsilon", "alpha", "ci_confidence", "strict")
FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig)]

SUBCOMMANDS = {"validate": "validate", "chemdist": "chemdist", "shape": "shape",
               "uniqueness": "uniqueness", "crossing": "crossing", "qip": "qip", "tsweep": "t_sweep"}


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> Optional[int]:
    for n, line in enumerate(text.splitlines(), 1):
        if line.split("=")[0].strip() == key:
            return n
    return None


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR:
        return raw
    if key in _BOOL:
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return raw.lower() == "true"
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return float(raw)
    if key in _OPT_INT | _OPT_FLOAT:
        if raw.lower() == "none":
            return None
        return int(raw) if key in _OPT_INT else float(raw)
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if key in _INT_LIST:
        return tuple(int(x) for x in items)
    return tuple(float(x) for x in items)


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    values = {}
    for sec in cp.sections():
        if sec != "experiment" and sec not in KINDS:
            raise ConfigError(f"unknown section [{sec}] (line {_line_of(text, '[' + sec + ']')})")
        for key, raw in cp[sec].items():
            if key not in FIELDS:
                raise ConfigError(f"unknown key {key!r} in [{sec}] (line {_line_of(text, key)})")
            if key in values:
                raise ConfigError(f"duplicate key {key!r} (line {_line_of(text, key)})")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r} (line {_line_of(text, key)}): {e}") from None
    if "kind" not in values:
        raise ConfigError("missing key 'kind'")
    kind_secs = [s for s in cp.sections() if s in KINDS]
    if kind_secs and kind_secs != [values["kind"]]:
        raise ConfigError(f"section [{kind_secs[0]}] does not match kind {values['kind']!r}")
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file; unknown keys are errors."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(cfg: ExperimentConfig, path=None) -> str:
    """Serialize ``cfg``; ``parse_config_text(write_config(cfg)) == cfg``."""
    lines = ["[experiment]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in COMMON]
    lines += ["", f"[{cfg.kind}]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in FIELDS if k not in COMMON]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def row_line(row: dict) -> str:
    return json.dumps(strict_json(row), sort_keys=True, separators=(",", ":"), allow_nan=False)


def strict_json(obj):
    """Replace nan by None and infinities by strings, recursively."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: strict_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [strict_json(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(strict_json(obj), sort_keys=True, indent=1, allow_nan=False) + "\n")


def dispatch(cfg: ExperimentConfig, out_dir, threads: Optional[int] = None) -> int:
    """Run ``cfg`` and persist it under ``out_dir``.

    Returns 0 on success, 2 if a gating check failed and 1 on an
    operational error (the manifest is then marked partial).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        text = write_config(cfg, out / "config.ini")
    except OSError as e:
        print(f"error: cannot write to {out}: {e}", file=sys.stderr)
        return EXIT_ERROR
    manifest = {
        "tool": "fri-lab", "version": __version__, "backend": K.BACKEND,
        "config": "config.ini", "config_digest": digest(text), "master_seed": cfg.seed,
        "kind": cfg.kind, "start": _now(), "end": None,
        "outputs": {"rows": "rows.jsonl", "aggregates": "aggregates.json"},
        "partial": True, "threads": threads or default_threads(),
    }
    _write_json(out / "manifest.json", manifest)
    try:
        rec = run(cfg, threads)
        with open(out / "rows.jsonl", "w", newline="\n") as f:
            for row in sorted(rec.rows, key=lambda r: (r.get("T", 0), r["replica"])):
                f.write(row_line(row) + "\n")
        _write_json(out / "aggregates.json", rec.aggregates)
    except Exception as e:
        manifest.update(end=_now(), error=f"{type(e).__name__}: {e}", exit_code=EXIT_ERROR)
        _write_json(out / "manifest.json", manifest)
        if isinstance(e, ValueError):
            print(f"error: {e}", file=sys.stderr)
        else:
            traceback.print_exc()
        return EXIT_ERROR
    failed = rec.failed_checks()
    code = EXIT_FAILED if failed else EXIT_OK
    manifest.update(end=_now(), partial=False, provenance=rec.provenance,
                    failed_checks=failed, exit_code=code)
    _write_json(out / "manifest.json", manifest)
    for name in failed:
        print(f"FAILED check: {name}", file=sys.stderr)
    return code


def load_record(run_dir) -> ExperimentRecord:
    d = Path(run_dir)
    cfg = parse_config(d / "config.ini")
    rows = [json.loads(l) for l in (d / "rows.jsonl").read_text().splitlines() if l]
    aggs = json.loads((d / "aggregates.json").read_text())
    man = json.loads((d / "manifest.json").read_text())
    return ExperimentRecord(cfg, rows, aggs, man.get("provenance", {}))


def config_from_manifest(path) -> ExperimentConfig:
    """The config a manifest points to, after checking its digest."""
    man_path = Path(path)
    man = json.loads(man_path.read_text())
    text = (man_path.parent / man["config"]).read_text()
    if digest(text) != man["config_digest"]:
        raise ConfigError("config digest does not match the manifest")
    return parse_config_text(text)


# -- plot data ---------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(v))
    return v


def _csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def emit_plot_data(record: ExperimentRecord, kind: str, out_dir) -> list[Path]:
    """Write CSV series for ``record``; ``kind`` must match the record's."""
    if record.config.kind != kind:
        raise ValueError(f"record is {record.config.kind!r}, not {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a = record.aggregates if record.rows else {}
    files = []
    if kind == "crossing":
        files.append(_csv(out / "crossing.csv", ["N", "freq", "lo", "hi"],
                          [(t["N"], t["freq"], t["lo"], t["hi"]) for t in a.get("per_N", [])]))
    elif kind == "uniqueness":
        files.append(_csv(out / "uniqueness.csv", ["R", "freq", "lo", "hi"],
                          [(t["R"], t["freq"], t["lo"], t["hi"]) for t in a.get("per_R", [])]))
    elif kind == "chemdist":
        z = 1.959963984540054
        rows = []
        for k, s in a.get("per_target", {}).items():
            ok = s["n"] > 0 and s["stderr"] is not None and not math.isnan(s["stderr"])
            rows.append((int(k), s["mean"], s["mean"] - z * s["stderr"] if ok else None,
                         s["mean"] + z * s["stderr"] if ok else None))
        files.append(_csv(out / "chemdist.csv", ["y", "mean_ratio", "lo", "hi"], rows))
        for k in record.config.targets:
            series = [(r["replica"], t["rho"], t["ratio"]) for r in record.rows
                      for t in r["targets"] if t["y"] == k and t["rho"] is not None]
            files.append(_csv(out / f"chemdist_y{k}.csv", ["replica", "rho", "ratio"], series))
    elif kind == "shape":
        ns = record.config.n_grid
        rows = [(ns[j], s["mean"], s["stderr"]) for j, s in enumerate(a.get("hausdorff_steps", []))]
        files.append(_csv(out / "shape.csv", ["n", "hausdorff_step", "stderr"], rows))
    elif kind == "t_sweep":
        files.append(_csv(out / "t_sweep.csv", ["T", "slope", "lo", "hi"],
                          [(t["T"], t["slope"], t["lo"], t["hi"]) for t in a.get("per_T", [])]))
    elif kind == "qip":
        rows = [(int(n), m["diffusivity"], m["walks"]) for n, m in a.get("moments", {}).items() if m]
        files.append(_csv(out / "qip.csv", ["horizon", "diffusivity", "walks"], rows))
    elif kind == "validate":
        files.append(_csv(out / "validate_hits.csv", ["replica", "hits"],
                          [(r["replica"], r["hits"]) for r in record.rows]))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return files


# -- argument handling --------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="fri-run", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: $FRI_LAB_THREADS or 1)")
    common.add_argument("--dim", type=int, help="dimension d")
    common.add_argument("--u", type=float, help="intensity u")
    common.add_argument("--T", type=float, help="lifetime parameter T")
    common.add_argument("--box", type=int, help="window radius N")
    common.add_argument("--margin", type=int, help="explicit margin")
    common.add_argument("--replicas", type=int, help="number of replicas")
    p = argparse.ArgumentParser(prog="fri-lab", description="Finitary random interlacement experiments.")
    p.add_argument("--version", action="version", version=f"fri-lab {__version__} ({K.BACKEND})")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="sample one window and save it")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    pd = sub.add_parser("plotdata", parents=[common], help="emit CSV plot data from a run directory")
    pd.add_argument("run_dir")
    rr = sub.add_parser("rerun", parents=[common], help="rerun the experiment of a manifest")
    rr.add_argument("manifest")
    return p


def _config_for(args, kind: str) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig(kind)
    if cfg.kind != kind:
        raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand")
    over = {"seed": args.seed, "d": args.dim, "u": args.u, "T": args.T, "N": args.box,
            "margin": args.margin, "replicas": args.replicas}
    over = {k: v for k, v in over.items() if v is not None}
    return dataclasses.replace(cfg, **over) if over else cfg


def _cmd_sample(args) -> int:
    from .cluster import build_bonds
    from .lattice import Box
    from .sampler import FriParams, recommended_margin, sample_window
    d = args.dim or 3
    p = FriParams(args.u or 1.0, args.T or 100.0, d)
    N = args.box or 16
    margin = args.margin if args.margin is not None else recommended_margin(p.T, 1e-3, u=p.u, d=d,
                                                                           window_radius=N)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    s = sample_window(p, Box.origin(d, N), margin, args.seed or 0)
    s.save(out / "sample.fri")
    b = build_bonds(s)
    b.write_edge_list(out / "edges.txt")
    _write_json(out / "sample.json", {"u": p.u, "T": p.T, "d": d, "N": N, "margin": margin,
                                      "seed": args.seed or 0, "trajectories": len(s),
                                      "bonds": b.n_bonds, "bond_density": b.bond_density})
    print(f"{len(s)} trajectories, {b.n_bonds} bonds -> {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "plotdata":
            rec = load_record(args.run_dir)
            for f in emit_plot_data(rec, rec.config.kind, args.out):
                print(f)
            return EXIT_OK
        if args.command == "rerun":
            cfg = config_from_manifest(args.manifest)
            return dispatch(cfg, args.out, threads)
        cfg = _config_for(args, SUBCOMMANDS[args.command])
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return dispatch(cfg, args.out, threads)


if __name__ == "__main__":
    sys.exit(main())
