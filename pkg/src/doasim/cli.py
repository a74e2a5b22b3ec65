"""Command-line entry point: ``doasim {tune,evaluate,compare,replay}``.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import (ExperimentConfig, ControllerFile, atomic_write, default_experiment, dump_controller,
                     dump_experiment, dump_yaml, load_controller, load_experiment, parse_experiment, variant_bounds)
from .control import VARIANTS, ControllerConfig
from .errors import ConfigError, DoaSimError, NumericBlowupError
from .simloop import Metrics, SimConfig, SimReport, compute_metrics, run_sim
from .woa import tune_controller, woa_config_dict

log = logging.getLogger("doasim")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TRAJ_HEADER = ("t_min", "bis", "u_mg_per_min", "ce_mg_per_l")
SUMMARY_HEADER = ("patient_id", "settling_time_min", "sse", "iae", "itae", "cost",
                  "bis_min", "bis_max", "in_band_after_settling")
TRACE_HEADER = ("iteration", "best_fitness")
COMPARE_TRAJ_HEADER = ("controller",) + TRAJ_HEADER
COMPARE_METRICS = ("settling_time_min", "sse", "iae", "itae", "cost", "bis_min", "bis_max")
COMPARE_HEADER = ("patient_id",) + tuple(f"{m}_{s}" for m in COMPARE_METRICS for s in ("a", "b", "delta"))
REPLAY_HEADER = ("source", "patient_id", "metric", "reported", "recomputed", "abs_diff", "match")
REPLAY_TOL = 1e-9

_METRIC_FIELD = {"settling_time_min": "settling_time", "sse": "steady_state_error", "iae": "iae",
                 "itae": "itae", "cost": "cost", "bis_min": "overshoot_bis_min", "bis_max": "bis_max"}


# --------------------------------------------------------------------------
# number formatting

def fmt9(x: float) -> str:
    """Trajectory samples: 9 significant digits."""
    if math.isnan(x):
        return "nan"
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def fmt_exact(x: float) -> str:
    """Summary metrics: shortest text that round-trips to the same double."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path: Path, header: Sequence[str]) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(header):
        raise ConfigError(f"unexpected CSV header, expected {','.join(header)}", path=str(path), line=1)
    return rows[1:]


# --------------------------------------------------------------------------
# reports

def _rounded_series(rep: SimReport) -> np.ndarray:
    """The trajectory exactly as it will be read back from its CSV."""
    return np.array([[float(fmt9(v)) for v in row] for row in rep.series])


def _traj_rows(series: np.ndarray, prefix: Sequence[str] = ()) -> list[list[str]]:
    return [list(prefix) + [fmt9(v) for v in row] for row in series]


def _summary_row(pid: str, m: Metrics) -> list[str]:
    return [pid, fmt_exact(m.settling_time), fmt_exact(m.steady_state_error), fmt_exact(m.iae),
            fmt_exact(m.itae), fmt_exact(m.cost), fmt_exact(m.overshoot_bis_min), fmt_exact(m.bis_max),
            "1" if m.in_band_after_settling else "0"]


def _mean_row(metrics: Sequence[Metrics]) -> list[str]:
    n = len(metrics)

    def mean(name):
        return sum(getattr(m, name) for m in metrics) / n

    iae, itae = mean("iae"), mean("itae")
    # mean cost is written as mean(iae) + mean(itae) so the identity holds on this row too
    return ["mean", fmt_exact(mean("settling_time")), fmt_exact(mean("steady_state_error")), fmt_exact(iae),
            fmt_exact(itae), fmt_exact(iae + itae), fmt_exact(min(m.overshoot_bis_min for m in metrics)),
            fmt_exact(max(m.bis_max for m in metrics)),
            "1" if all(m.in_band_after_settling for m in metrics) else "0"]


def _simulate_cohort(exp: ExperimentConfig, ctrl: ControllerConfig) -> list[tuple[int, np.ndarray, Metrics]]:
    """Run every patient; metrics come from the CSV-rounded trajectory."""
    if abs(ctrl.dt - exp.sim.dt) > 1e-15:
        raise ConfigError(f"controller dt {ctrl.dt} differs from sim.dt {exp.sim.dt}")
    out = []
    for p in exp.patients:
        rep = run_sim(p, ctrl, exp.sim)
        series = _rounded_series(rep)
        out.append((p.id, series, compute_metrics(series, exp.sim)))
        log.info("patient %d: cost %.6g, settling %.4g min", p.id, out[-1][2].cost, out[-1][2].settling_time)
    return out


def _manifest_text(command: str, exp: ExperimentConfig, args: argparse.Namespace, extra: dict | None = None) -> str:
    doc = {"command": command, "config_path": args.config or "<packaged default>",
           "seed": exp.woa.seed}
    if getattr(args, "variant", None):
        doc["variant"] = args.variant
    if getattr(args, "controller", None):
        doc["controllers"] = list(args.controller)
    if extra:
        doc.update(extra)
    head = dump_yaml(doc)
    return head + dump_experiment(exp)


def _write_all(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        atomic_write(out / name, text)
        log.info("wrote %s", out / name)


# --------------------------------------------------------------------------
# commands

def _load_exp(args) -> ExperimentConfig:
    exp = load_experiment(args.config) if args.config else default_experiment()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must be a non-negative 64-bit integer, got {args.seed}")
        exp = replace(exp, woa=replace(exp.woa, seed=args.seed))
    return exp


def _load_ctrls(args, n: int) -> list[ControllerFile]:
    files = args.controller or []
    if len(files) != n:
        raise ConfigError(f"{args.command} needs exactly {n} --controller file(s), got {len(files)}")
    return [load_controller(f) for f in files]


def cmd_tune(args) -> int:
    exp = _load_exp(args)
    variant = args.variant
    bounds = variant_bounds(exp, variant)
    log.info("tuning %s: pop %d, iter %d, seed %d", variant, exp.woa.pop_size, exp.woa.max_iter, exp.woa.seed)
    res = tune_controller(variant, exp.patients, exp.sim, exp.woa, bounds, exp.base_controller())
    if not math.isfinite(res.woa.best_fitness):
        raise NumericBlowupError("every evaluated controller blew up; no finite optimum")
    audit = dict(res.audit)
    audit["woa"] = woa_config_dict(exp.woa)
    audit.pop("trace")
    files = {
        f"optimum_{variant}.cfg": dump_controller(res.config, audit),
        f"trace_{variant}.csv": _csv_text(TRACE_HEADER, [[str(k), fmt_exact(v)] for k, v in enumerate(res.woa.trace)]),
        f"manifest_tune_{variant}.yaml": _manifest_text("tune", exp, args),
    }
    _write_all(Path(args.out), files)
    print(f"{variant}: best mean cost {res.woa.best_fitness:.6g} ({res.audit['status']})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    exp = _load_exp(args)
    (cf,) = _load_ctrls(args, 1)
    results = _simulate_cohort(exp, cf.controller)
    files = {f"traj_patient{pid}.csv": _csv_text(TRAJ_HEADER, _traj_rows(series)) for pid, series, _ in results}
    rows = [_summary_row(str(pid), m) for pid, _, m in results]
    rows.append(_mean_row([m for _, _, m in results]))
    files["summary.csv"] = _csv_text(SUMMARY_HEADER, rows)
    files["manifest_evaluate.yaml"] = _manifest_text("evaluate", exp, args,
                                                     {"controller_variant": cf.controller.variant})
    _write_all(Path(args.out), files)
    print(f"{cf.controller.variant}: mean cost {rows[-1][5]}")
    return EXIT_OK


def _compare_row(pid: str, ma: dict, mb: dict) -> list[str]:
    row = [pid]
    for name in COMPARE_METRICS:
        a, b = ma[name], mb[name]
        row += [fmt_exact(a), fmt_exact(b), fmt_exact(b - a)]
    return row


def _metric_values(m: Metrics) -> dict:
    return {k: getattr(m, f) for k, f in _METRIC_FIELD.items()}


def _mean_values(ms: Sequence[Metrics]) -> dict:
    vals = {k: sum(getattr(m, f) for m in ms) / len(ms) for k, f in _METRIC_FIELD.items()}
    vals["cost"] = vals["iae"] + vals["itae"]
    vals["bis_min"] = min(m.overshoot_bis_min for m in ms)
    vals["bis_max"] = max(m.bis_max for m in ms)
    return vals


def cmd_compare(args) -> int:
    exp = _load_exp(args)
    cfa, cfb = _load_ctrls(args, 2)
    ra = _simulate_cohort(exp, cfa.controller)
    rb = _simulate_cohort(exp, cfb.controller)
    files, rows = {}, []
    for (pid, sa, ma), (_, sb, mb) in zip(ra, rb):
        files[f"compare_patient{pid}.csv"] = _csv_text(COMPARE_TRAJ_HEADER,
                                                        _traj_rows(sa, ["a"]) + _traj_rows(sb, ["b"]))
        rows.append(_compare_row(str(pid), _metric_values(ma), _metric_values(mb)))
    rows.append(_compare_row("mean", _mean_values([m for *_, m in ra]), _mean_values([m for *_, m in rb])))
    files["compare_summary.csv"] = _csv_text(COMPARE_HEADER, rows)
    files["manifest_compare.yaml"] = _manifest_text("compare", exp, args, {
        "labels": {"a": cfa.controller.variant, "b": cfb.controller.variant}})
    _write_all(Path(args.out), files)
    print(f"mean cost a={rows[-1][13]} b={rows[-1][14]} delta={rows[-1][15]}")
    return EXIT_OK


def _replay_sim(args, src: Path) -> SimConfig:
    manifests = sorted(src.glob("manifest_*.yaml"))
    if args.config:
        return load_experiment(args.config).sim
    if manifests:
        text = manifests[0].read_text(encoding="utf-8")
        # manifest = run header followed by the experiment dump
        body = text[text.index("patients:"):]
        return parse_experiment(body, str(manifests[0])).sim
    return default_experiment().sim


def _load_traj(path: Path, header, label: str | None = None) -> np.ndarray:
    rows = _read_csv(path, header)
    if label is not None:
        rows = [r[1:] for r in rows if r[0] == label]
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in trajectory: {exc}", path=str(path)) from None
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ConfigError("trajectory is empty", path=str(path))
    return arr


def _check(out_rows: list, source: str, pid: str, metric: str, reported: str, value: float) -> bool:
    rep = float(reported)
    if math.isnan(rep) and math.isnan(value):
        diff, ok = 0.0, True
    elif reported in ("0", "1") and metric == "in_band_after_settling":
        diff = abs(rep - value)
        ok = diff == 0
    else:
        diff = abs(rep - value)
        ok = diff <= REPLAY_TOL * max(1.0, abs(rep))
    out_rows.append([source, pid, metric, reported, fmt_exact(value), fmt_exact(diff), "1" if ok else "0"])
    return ok


def cmd_replay(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise ConfigError(f"replay input {src} is not a directory")
    sim = _replay_sim(args, src)
    rows: list[list[str]] = []
    ok = True
    found = False

    summary = src / "summary.csv"
    if summary.exists():
        found = True
        per = []
        for rec in _read_csv(summary, SUMMARY_HEADER):
            if rec[0] == "mean":
                mean_rec = rec
                continue
            m = compute_metrics(_load_traj(src / f"traj_patient{rec[0]}.csv", TRAJ_HEADER), sim)
            per.append(m)
            rec_vals = list(_summary_row(rec[0], m))
            for name, reported, recomputed in zip(SUMMARY_HEADER[1:], rec[1:], rec_vals[1:]):
                ok &= _check(rows, "summary.csv", rec[0], name, reported, float(recomputed))
        for name, reported, recomputed in zip(SUMMARY_HEADER[1:], mean_rec[1:], _mean_row(per)[1:]):
            ok &= _check(rows, "summary.csv", "mean", name, reported, float(recomputed))

    cmp_summary = src / "compare_summary.csv"
    if cmp_summary.exists():
        found = True
        ma_all, mb_all = [], []
        recs = _read_csv(cmp_summary, COMPARE_HEADER)
        for rec in recs:
            if rec[0] == "mean":
                continue
            path = src / f"compare_patient{rec[0]}.csv"
            ma = compute_metrics(_load_traj(path, COMPARE_TRAJ_HEADER, "a"), sim)
            mb = compute_metrics(_load_traj(path, COMPARE_TRAJ_HEADER, "b"), sim)
            ma_all.append(ma)
            mb_all.append(mb)
            for name, reported, recomputed in zip(COMPARE_HEADER[1:], rec[1:],
                                                  _compare_row(rec[0], _metric_values(ma), _metric_values(mb))[1:]):
                ok &= _check(rows, "compare_summary.csv", rec[0], name, reported, float(recomputed))
        mean_rec = [r for r in recs if r[0] == "mean"]
        if mean_rec:
            again = _compare_row("mean", _mean_values(ma_all), _mean_values(mb_all))
            for name, reported, recomputed in zip(COMPARE_HEADER[1:], mean_rec[0][1:], again[1:]):
                ok &= _check(rows, "compare_summary.csv", "mean", name, reported, float(recomputed))

    for trace in sorted(src.glob("trace_*.csv")):
        found = True
        variant = trace.stem[len("trace_"):]
        vals = [float(r[1]) for r in _read_csv(trace, TRACE_HEADER)]
        mono = all(b <= a for a, b in zip(vals, vals[1:]))
        rows.append([trace.name, "", "monotone", "1", "1" if mono else "0", "0" if mono else "1",
                     "1" if mono else "0"])
        ok &= mono
        opt = src / f"optimum_{variant}.cfg"
        if opt.exists():
            best = load_controller(opt).audit.get("best_cost")
            if best is not None:
                ok &= _check(rows, trace.name, "", "best_fitness", fmt_exact(float(best)), vals[-1])

    if not found:
        raise ConfigError(f"{src} holds no summary.csv, compare_summary.csv or trace_*.csv to replay")
    _write_all(Path(args.out), {"replay_summary.csv": _csv_text(REPLAY_HEADER, rows)})
    bad = sum(r[-1] == "0" for r in rows)
    print(f"replay: {len(rows) - bad}/{len(rows)} values match")
    return EXIT_OK if ok else EXIT_MISMATCH


COMMANDS = {"tune": cmd_tune, "evaluate": cmd_evaluate, "compare": cmd_compare, "replay": cmd_replay}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doasim", description="Propofol/BIS closed-loop simulation and WOA tuning")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="experiment YAML (default: packaged Table-1 cohort)")
        sp.add_argument("--out", metavar="DIR", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override woa.seed")
        sp.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")

    sp = sub.add_parser("tune", help="tune a controller with WOA on the cohort")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, required=True)

    sp = sub.add_parser("evaluate", help="simulate the cohort under one controller file")
    common(sp)
    sp.add_argument("--controller", nargs="+", metavar="FILE", required=True)

    sp = sub.add_parser("compare", help="paired cohort comparison of two controller files")
    common(sp)
    sp.add_argument("--controller", nargs="+", metavar="FILE", required=True)

    sp = sub.add_parser("replay", help="recompute metrics from emitted CSVs and check the summaries")
    common(sp)
    sp.add_argument("--input", metavar="DIR", required=True, help="directory written by evaluate/compare/tune")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"doasim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericBlowupError as exc:
        print(f"doasim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DoaSimError as exc:
        print(f"doasim: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"doasim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
