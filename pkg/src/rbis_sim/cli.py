"""Command-line front end.

    rbis-sim run --config scenario.toml --out DIR [--seed N]
    rbis-sim report --in DIR [--bin-width-us W]

Exit codes: 0 ok, 2 config validation failure, 3 I/O or trace failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import config as configfile
from .engine import ConfigError, SlaveTrace, TraceBundle, run, slave_name, validate_config
from .validation import SummaryStats, coverage_table, histogram, summarize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

FORMAT_VERSION = 1
OFFSETS_HEADER = ("k", "t_m_us", "t_s_us", "theta_hat_us", "theta_filtered_us")
SKEW_HEADER = ("k", "gamma_hat")
TRUTH_HEADER = ("n", "theta_true_us")
HIST_HEADER = ("lower_edge_us", "count", "density")
SKEW_HIST_HEADER = ("lower_edge_ppm", "count", "density")


class TraceError(Exception):
    pass


def fmt_time(v) -> str:
    """Integers stay plain integers; anything fractional is written as a float."""
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Fraction) and v.denominator == 1:
        return str(v.numerator)
    return repr(float(v))


def fmt_ratio(v: float) -> str:
    return format(float(v), ".9g")


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _suffix(name: str) -> str:
    return "" if name == slave_name(1) else f"_{name}"


def trace_files(trace: SlaveTrace) -> dict[str, str]:
    sfx = _suffix(trace.name)
    offsets = _csv_text(
        OFFSETS_HEADER,
        (
            (r.seq_k, fmt_time(r.t_master_us), fmt_time(r.t_slave_us), fmt_time(r.theta_hat_us),
             fmt_time(r.theta_filtered_us))
            for r in trace.estimates
        ),
    )
    skew = _csv_text(SKEW_HEADER, ((k, fmt_ratio(g)) for k, g in trace.skews))
    truth = _csv_text(
        TRUTH_HEADER, ((s.probe_index, fmt_ratio(s.theta_true_us)) for s in trace.ground_truth)
    )
    return {f"offsets{sfx}.csv": offsets, f"skew{sfx}.csv": skew, f"ground_truth{sfx}.csv": truth}


def _stats(stats: Optional[SummaryStats]):
    return stats.to_dict() if stats is not None else None


def summary_document(bundle: TraceBundle) -> str:
    def one(trace: SlaveTrace) -> dict:
        return {
            "estimate_residual": _stats(trace.estimate_stats),
            "ground_truth": _stats(trace.truth_stats),
            "counters": trace.counters,
        }

    doc = {"format_version": FORMAT_VERSION, **one(bundle.primary)}
    extra = {name: one(t) for name, t in bundle.slaves.items() if name != slave_name(1)}
    if extra:
        doc["slaves"] = extra
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def render_run(bundle: TraceBundle) -> dict[str, str]:
    """All output files of a run, manifest last, as name -> text."""
    files: dict[str, str] = {}
    for trace in bundle.slaves.values():
        files.update(trace_files(trace))
    files["summary.json"] = summary_document(bundle)
    manifest = {
        "format_version": FORMAT_VERSION,
        "tool": "rbis_sim",
        "tool_version": __version__,
        "seed": bundle.config.seed,
        "config": configfile.to_flat(bundle.config),
        "files": {name: {"path": name, "sha256": sha256(text)} for name, text in files.items()},
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return files


def cmd_run(config_path: str, out_dir: str, seed: Optional[int] = None) -> int:
    try:
        cfg = configfile.load(config_path)
        if seed is not None:
            cfg = configfile.with_seed(cfg, seed)
        errors = validate_config(cfg)
        if errors:
            raise ConfigError(errors)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    files = render_run(run(cfg))
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            with open(out / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _read_csv(path: Path, header: Sequence[str]) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != tuple(header):
        raise TraceError(f"{path}: missing or unexpected header (want {','.join(header)})")
    body = rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise TraceError(f"{path}:{i}: expected {len(header)} fields")
    return body


def _num(path: Path, text: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise TraceError(f"{path}: not a number: {text!r}") from exc
    if not math.isfinite(v):
        raise TraceError(f"{path}: non-finite value {text!r}")
    return v


def load_traces(in_dir: str) -> dict[str, list[tuple[float, ...]]]:
    d = Path(in_dir)
    offsets = [tuple(_num(d / "offsets.csv", x) for x in r) for r in _read_csv(d / "offsets.csv", OFFSETS_HEADER)]
    skew = [tuple(_num(d / "skew.csv", x) for x in r) for r in _read_csv(d / "skew.csv", SKEW_HEADER)]
    truth = [
        tuple(_num(d / "ground_truth.csv", x) for x in r)
        for r in _read_csv(d / "ground_truth.csv", TRUTH_HEADER)
    ]
    return {"offsets": offsets, "skew": skew, "truth": truth}


def innovations(offsets: Sequence[tuple[float, ...]]) -> list[float]:
    """Each raw offset estimate minus the correction in force when it arrived."""
    return [row[3] - prev[4] for prev, row in zip(offsets, offsets[1:])]


def _hist_text(values, bin_width: float, header=HIST_HEADER) -> str:
    h = histogram(values, bin_width)
    return _csv_text(header, ((fmt_ratio(e), c, fmt_ratio(p)) for e, c, p in h.rows()))


def cmd_report(in_dir: str, bin_width_us: float = 1.0) -> int:
    if not (math.isfinite(bin_width_us) and bin_width_us > 0):
        print("bin width must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        traces = load_traces(in_dir)
        truth = [r[1] for r in traces["truth"]]
        if len(truth) < 2:
            raise TraceError("ground_truth.csv: insufficient samples (need at least 2)")
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_IO

    innov = innovations(traces["offsets"])
    skew_ppm = [r[1] * 1e6 for r in traces["skew"]]
    truth_stats = summarize(truth)
    table = ["ground truth offset (slave fire - master fire)", coverage_table(truth_stats)]
    if len(innov) >= 2:
        table += ["offset estimate relative to the correction in force", coverage_table(summarize(innov))]
    files = {
        "offset_hist.csv": _hist_text(innov, bin_width_us),
        "skew_hist.csv": _hist_text(skew_ppm, bin_width_us, SKEW_HIST_HEADER),
        "truth_hist.csv": _hist_text(truth, bin_width_us),
        "coverage.txt": "\n".join(table),
    }
    try:
        for name, text in files.items():
            with open(os.path.join(in_dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbis-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write traces")
    p_run.add_argument("--config", required=True, help="scenario config file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_rep = sub.add_parser("report", help="histograms and coverage table from a trace directory")
    p_rep.add_argument("--in", dest="in_dir", required=True, help="directory written by 'run'")
    p_rep.add_argument("--bin-width-us", type=float, default=1.0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    return cmd_report(args.in_dir, args.bin_width_us)


if __name__ == "__main__":
    sys.exit(main())
