"""``persyst`` command line: simulate a cluster and analyze its monitoring data.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import analyze as an
from .presets import MACHINE_CORES, machine_preset
from .quantiles import EmptyInput
from .simulator import CapacityExceeded, ConfigError, load_config, run_simulation
from .store import JOBS_FILE, PROPERTIES_FILE, PropertyStore, StoreError, read_jobs

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A,B got {text!r}") from None
    return a, b


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, default=Path("."),
                        help="directory holding jobs.tsv and properties.tsv")
    common.add_argument("--human", action="store_true", help="add prose to the output")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="persyst", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation config")
    s.add_argument("config", type=Path)
    s.add_argument("--force", action="store_true", help="overwrite existing output")

    s = sub.add_parser("stats", parents=[common], help="runtime quartiles and mean")
    _job_filters(s)

    s = sub.add_parser("sufficiency", parents=[common], help="sampling interval for N points")
    s.add_argument("--target", type=int, required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--runtime", type=float)
    g.add_argument("--job")
    _job_filters(s)

    s = sub.add_parser("points", parents=[common], help="expected data points per job")
    s.add_argument("--interval", type=float, required=True)
    s.add_argument("--runtime", type=float)
    _job_filters(s)

    s = sub.add_parser("nodes", parents=[common], help="map core counts to nodes")
    s.add_argument("--machine", required=True, choices=sorted(MACHINE_CORES))
    s.add_argument("--cores", type=_int_list)
    _job_filters(s)

    s = sub.add_parser("clusters", parents=[common], help="density clusters of jobs")
    s.add_argument("--cell", type=_pair, default=(0.5, 0.25))
    s.add_argument("--min-density", type=int, default=5)
    _job_filters(s)

    s = sub.add_parser("vectorization", parents=[common], help="classify a job's AVX usage")
    s.add_argument("--job", required=True)
    s.add_argument("--hi", type=float, default=0.5)
    s.add_argument("--lo", type=float, default=0.05)

    s = sub.add_parser("failures", parents=[common], help="jobs that should have data but have none")
    s.add_argument("--interval", type=float, required=True)
    s.add_argument("--exact-grid", action="store_true",
                   help="only flag jobs that span an actual sampling instant")

    s = sub.add_parser("volume", parents=[common], help="monitoring data volume estimate")
    s.add_argument("--cores", type=int, required=True)
    s.add_argument("--metrics", type=int, required=True)
    s.add_argument("--bytes", type=int, default=4)
    s.add_argument("--interval", type=float, default=600)

    s = sub.add_parser("plot", parents=[common], help="cores x runtime scatter")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--format", choices=("csv", "svg"), default=None,
                   help="default: from the --out suffix, else csv")
    s.add_argument("--label", choices=("app", "owner", "none"), default="app")
    _job_filters(s)
    return p


def _job_filters(p):
    p.add_argument("--app", help="only jobs with this app tag")
    p.add_argument("--min-runtime", type=float, default=0.0,
                   help="only jobs running at least this many seconds")


def _jobs(args):
    path = args.data / JOBS_FILE
    if not path.exists():
        raise DataError(f"{path} not found")
    jobs = read_jobs(path)
    if getattr(args, "app", None):
        jobs = [j for j in jobs if j.app_tag == args.app]
    jobs = [j for j in jobs if j.runtime >= getattr(args, "min_runtime", 0.0)]
    if not jobs:
        raise DataError("no jobs match")
    return jobs


def _store(args):
    path = args.data / PROPERTIES_FILE
    if not path.exists():
        raise DataError(f"{path} not found")
    return PropertyStore(path)


def _emit(args, payload, prose=()):
    print(json.dumps(payload, sort_keys=True))
    if args.human:
        for line in prose:
            print(line)


def cmd_simulate(args):
    config = load_config(args.config)
    jobs_path, store_path = run_simulation(config, args.data, overwrite=args.force)
    n_jobs = len(read_jobs(jobs_path))
    store = PropertyStore(store_path)
    _emit(args, {"jobs": n_jobs, "records": len(store), "jobs_file": str(jobs_path),
                 "properties_file": str(store_path)},
          [f"simulated {n_jobs} jobs on {config.machine.node_count} {config.machine.name} "
           f"nodes; {len(store)} records stored"])


def cmd_stats(args):
    st = an.runtime_stats(_jobs(args))
    _emit(args, asdict(st),
          [f"1st quartile ({st.q1:.0f} s), median ({st.median:.0f} s), "
           f"mean ({st.mean:.0f} s), 3rd quartile ({st.q3:.0f} s) over {st.n} jobs"])


def cmd_sufficiency(args):
    if args.target < 1:
        raise UsageError("--target must be >= 1")
    if args.runtime is not None:
        runtime, source = args.runtime, "runtime"
    elif args.job is not None:
        match = [j for j in _jobs(args) if j.job_id == args.job]
        if not match:
            raise DataError(f"job {args.job} not found")
        runtime, source = float(match[0].runtime), args.job
    else:
        runtime, source = an.runtime_stats(_jobs(args)).mean, "mean"
    if not runtime > 0:
        raise UsageError("runtime must be positive")
    try:
        exact, nice = an.required_interval(runtime, args.target)
    except an.TooShort as e:
        raise DataError(str(e)) from e
    _emit(args, {"runtime_s": runtime, "source": source, "target": args.target,
                 "exact_s": exact, "nice_s": nice},
          [f"{args.target} points over {runtime:.0f} s need a sample every {exact:.2f} s; "
           f"measure every {nice} s"])


def cmd_points(args):
    if not args.interval > 0:
        raise UsageError("--interval must be positive")
    if args.runtime is not None:
        if args.runtime < 0:
            raise UsageError("--runtime must be >= 0")
        pts = an.expected_points(args.runtime, args.interval)
        _emit(args, {"runtime_s": args.runtime, "interval_s": args.interval,
                     "expected": pts, "display": an.display_points(pts)},
              [f"a {args.runtime:.0f} s run yields {an.display_points(pts)} data points "
               f"at one sample every {args.interval:.0f} s"])
        return
    rows = []
    for j in _jobs(args):
        pts = an.expected_points(j.runtime, args.interval)
        rows.append({"job_id": j.job_id, "runtime_s": j.runtime, "expected": pts,
                     "display": an.display_points(pts)})
    none = sum(1 for r in rows if r["display"] == 0)
    _emit(args, {"interval_s": args.interval, "jobs": rows},
          [f"{none} of {len(rows)} jobs are too short to produce any data"])


def cmd_nodes(args):
    machine = machine_preset(args.machine)
    if args.cores:
        if any(c < 1 for c in args.cores):
            raise UsageError("--cores values must be >= 1")
        rows = [{"cores": c, "nodes": an.cores_to_nodes(c, machine)} for c in args.cores]
    else:
        rows = [{"job_id": j.job_id, "cores": j.cores, "nodes": an.cores_to_nodes(j.cores, machine)}
                for j in _jobs(args)]
    _emit(args, {"machine": machine.name, "cores_per_node": machine.cores_per_node,
                 "mapping": rows},
          [f"{r['cores']} cores -> {r['nodes']} nodes" for r in rows])


def cmd_clusters(args):
    if args.min_density < 1 or min(args.cell) <= 0:
        raise UsageError("--min-density and --cell widths must be positive")
    clusters = an.detect_clusters(_jobs(args), args.cell, args.min_density)
    _emit(args, {"clusters": [asdict(c) for c in clusters]},
          [f"cluster at {c.centroid_cores:.0f} cores, {c.centroid_seconds:.0f} s: "
           f"{c.job_count} jobs" for c in clusters])


def cmd_vectorization(args):
    if not 0 <= args.lo < args.hi <= 1:
        raise UsageError("need 0 <= --lo < --hi <= 1")
    label, med = an.classify_vectorization(args.job, _store(args), args.hi, args.lo)
    _emit(args, {"job_id": args.job, "label": label.value, "median_avx_fraction": med},
          [f"{args.job}: {label.value.lower()}"
           + ("" if med is None else f" (median AVX fraction {med:.3f})")])


def cmd_failures(args):
    if not args.interval > 0:
        raise UsageError("--interval must be positive")
    flagged = an.detect_tool_failures(_jobs(args), _store(args), args.interval,
                                      exact_grid=args.exact_grid)
    _emit(args, {"interval_s": args.interval, "failures": flagged},
          [f"{len(flagged)} jobs ran long enough to be sampled but have no data"])


def cmd_volume(args):
    if min(args.cores, args.metrics, args.bytes) < 1 or not args.interval > 0:
        raise UsageError("volume parameters must be positive")
    per_point, per_day = an.estimate_volume(args.cores, args.metrics, args.bytes, args.interval)
    _emit(args, {"per_timepoint_bytes": per_point, "per_day_bytes": per_day,
                 "per_timepoint_mib": per_point / 2**20, "per_day_tb": per_day / 1e12},
          [f"{per_point / 2**20:.1f} MiB per sampling instant, "
           f"{per_day / 1e12:.3g} TB per day at one sample every {args.interval:g} s"])


def cmd_plot(args):
    jobs = _jobs(args)
    if args.label == "app":
        labels = {j.job_id: j.app_tag for j in jobs}
    elif args.label == "owner":
        labels = {j.job_id: j.owner_group for j in jobs}
    else:
        labels = None
    fmt = args.format or ("svg" if args.out.suffix.lower() == ".svg" else "csv")
    path = an.emit_scatter(jobs, labels, args.out, fmt)
    _emit(args, {"out": str(path), "format": fmt, "jobs": len(jobs)},
          [f"wrote {len(jobs)} jobs to {path}"])


COMMANDS = {
    "simulate": cmd_simulate, "stats": cmd_stats, "sufficiency": cmd_sufficiency,
    "points": cmd_points, "nodes": cmd_nodes, "clusters": cmd_clusters,
    "vectorization": cmd_vectorization, "failures": cmd_failures, "volume": cmd_volume,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"persyst: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, StoreError, ConfigError, CapacityExceeded, EmptyInput,
            FileExistsError, FileNotFoundError, an.IoFailure) as e:
        print(f"persyst: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
