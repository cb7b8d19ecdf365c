"""Command-line harness: batch experiments, one-shot projections, plot data.

Subcommands
-----------
run       execute a batch manifest (methods x noise instances), write CSV
project   pseudo-project a signal file onto a Hankel rank constraint
plotdata  turn result CSVs into plain columnar files for plotting

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 solver failure
(single-run mode).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .driver import HybridConfig, run_ap_baseline, run_hybrid
from .errors import HankelFitError
from .hankel import ChannelStack
from .penalty import VnpgOptions
from .projection import (
    ProjectionOptions,
    StructureSetting,
    kkt_check,
    pseudo_project,
)
from .signals import SystemSpec, constraint_violation, make_instance

METHODS = ("AP", "HB_1", "HB_2", "HB_3")
_VARIANT_OF = {"HB_1": "I", "HB_2": "II", "HB_3": "III"}

CSV_COLUMNS = (
    "experiment",
    "instance",
    "seed",
    "method",
    "objective",
    "vio_pre",
    "vio_post",
    "seconds",
    "outer_iters",
    "inner_iters",
    "flag",
)


@dataclass
class RunManifest:
    """Batch description; every solver default is the experiment protocol's."""

    experiment: str = "desk"
    orders: tuple = (2, 2, 2)  # (n1, n2, nc)
    n: int = 50
    instances: int = 20
    base_seed: int = 1234
    sigma: float = 0.1
    methods: tuple = METHODS
    # Solver schedule (overridable per key in the manifest file):
    lambda0: float = 0.1
    lambda_decay: float = 5.0
    lambda_bar: float = 1e-4
    eps0: float = 1e-5
    eps_decay: float = 1.5
    eps_floor: float = 1e-6
    l_min: float = 1e-8
    l_max: float = 1e8
    tau: float = 2.0
    c: float = 1e-4
    memory: int = 4
    vnpg_max_iters: int = 10**8
    rel_obj_tol: float = 1e-10
    post_tol: float = 1e-10
    post_max_iters: int = 10**5

    @classmethod
    def from_file(cls, path) -> "RunManifest":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        manifest = cls(**raw)
        manifest = replace(
            manifest,
            orders=tuple(manifest.orders),
            methods=tuple(manifest.methods),
        )
        bad = [m for m in manifest.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        return manifest

    def hybrid_config(self, tag: str) -> HybridConfig:
        return HybridConfig(
            variant_tag=tag,
            lambda0=self.lambda0,
            lambda_decay=self.lambda_decay,
            lambda_bar=self.lambda_bar,
            eps0=self.eps0,
            eps_decay=self.eps_decay,
            eps_floor=self.eps_floor,
            vnpg=VnpgOptions(
                l_min=self.l_min,
                l_max=self.l_max,
                tau=self.tau,
                c=self.c,
                memory=self.memory,
                max_iters=self.vnpg_max_iters,
                rel_obj_tol=self.rel_obj_tol,
            ),
            post_tol=self.post_tol,
            post_max_iters=self.post_max_iters,
        )

    def system_spec(self) -> SystemSpec:
        n1, n2, nc = self.orders
        return SystemSpec(
            n1=n1, n2=n2, nc=nc, n=self.n, sigma=self.sigma, seed=self.base_seed
        )


def run_single(manifest: RunManifest, instance_idx: int, method: str):
    """One (instance, method) cell; returns (row dict, solution, trace info)."""
    spec = manifest.system_spec()
    noise_seed = manifest.base_seed + 1 + instance_idx
    instance = make_instance(spec, noise_seed=noise_seed)
    row = {
        "experiment": manifest.experiment,
        "instance": instance_idx,
        "seed": noise_seed,
        "method": method,
        "objective": np.nan,
        "vio_pre": np.nan,
        "vio_post": np.nan,
        "seconds": np.nan,
        "outer_iters": 0,
        "inner_iters": 0,
        "flag": "converged",
    }
    trace: dict = {}
    solution = None
    t0 = time.perf_counter()
    try:
        if method == "AP":
            rep = run_ap_baseline(instance, manifest.hybrid_config("II"))
            row.update(
                objective=rep.objective,
                vio_pre=rep.vio_pre,
                vio_post=rep.vio_post,
                outer_iters=0,
                inner_iters=rep.post.iterations,
                flag="converged" if rep.post.converged else "post_cap",
            )
            solution = rep.point.data
            trace = {"gaps": rep.post.gaps.tolist()}
        else:
            rep = run_hybrid(instance, manifest.hybrid_config(_VARIANT_OF[method]))
            row.update(
                objective=rep.objective,
                vio_pre=rep.vio_pre,
                vio_post=rep.vio_post,
                outer_iters=len(rep.penalty.records),
                inner_iters=rep.penalty.inner_iters,
                flag="converged" if rep.post.converged else "post_cap",
            )
            solution = rep.point.data
            trace = {
                "gaps": rep.post.gaps.tolist(),
                "stages": [
                    {
                        "t": r.t,
                        "lam": r.lam,
                        "f": r.f_value,
                        "slack": r.slack,
                        "inner": r.inner_iters,
                        "stop": r.stop_reason,
                    }
                    for r in rep.penalty.records
                ],
            }
    except HankelFitError as exc:
        row["flag"] = f"error:{type(exc).__name__}"
        trace = {"error": str(exc)}
    row["seconds"] = time.perf_counter() - t0
    return row, solution, trace


def _run_cell(args):
    manifest_dict, idx, method = args
    manifest = RunManifest(**manifest_dict)
    return idx, method, run_single(manifest, idx, method)


def cmd_run(manifest: RunManifest, out_dir: Path, workers: int = 1,
            traces: bool = False) -> Path:
    """Execute the batch and persist results.csv / solutions.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [
        (i, m) for i in range(manifest.instances) for m in manifest.methods
    ]
    results = {}
    if workers > 1:
        man = asdict(manifest)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, method, payload in pool.map(
                _run_cell, [(man, i, m) for i, m in cells]
            ):
                results[(idx, method)] = payload
    else:
        for i, m in cells:
            results[(i, m)] = run_single(manifest, i, m)

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for i, m in cells:  # fixed order keeps reruns byte-comparable
            row = results[(i, m)][0]
            writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})

    solutions = {
        f"{i}:{m}": results[(i, m)][1].tolist()
        for i, m in cells
        if results[(i, m)][1] is not None
    }
    with open(out_dir / "solutions.json", "w") as fh:
        json.dump(
            {
                "manifest": asdict(manifest),
                "solutions": solutions,
            },
            fh,
        )
    if traces:
        with open(out_dir / "traces.json", "w") as fh:
            json.dump(
                {f"{i}:{m}": results[(i, m)][2] for i, m in cells}, fh
            )
    return csv_path


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return value


def revalidate_solutions(out_dir: Path, atol: float = 1e-12) -> bool:
    """Check CSV vio values against the stored final iterates."""
    with open(out_dir / "solutions.json") as fh:
        payload = json.load(fh)
    manifest = RunManifest(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in payload["manifest"].items()
    })
    spec = manifest.system_spec()
    rank_spec = spec.rank_spec()
    rows = {}
    with open(out_dir / "results.csv") as fh:
        for row in csv.DictReader(fh):
            rows[(int(row["instance"]), row["method"])] = row
    for key, sol in payload["solutions"].items():
        idx, method = key.split(":")
        stack = ChannelStack(np.asarray(sol), n=spec.n, N=2)
        vio, _ = constraint_violation(stack, rank_spec)
        recorded = float(rows[(int(idx), method)]["vio_post"])
        if abs(vio - recorded) > atol:
            return False
    return True


def cmd_project(args) -> int:
    try:
        signal = np.loadtxt(args.input, dtype=float).ravel()
        if signal.size == 0 or not np.all(np.isfinite(signal)):
            raise ValueError("signal file is empty or not finite")
    except (OSError, ValueError) as exc:
        print(f"error: cannot read signal: {exc}", file=sys.stderr)
        return 2
    channels = args.channels
    if signal.size % channels:
        print(
            f"error: {signal.size} samples do not split into {channels} channels",
            file=sys.stderr,
        )
        return 2
    n = signal.size // channels
    try:
        setting = (
            StructureSetting.coupled(n, channels, args.window)
            if channels > 1
            else StructureSetting.single_channel(n, args.window)
        )
        if args.reference is not None:
            reference = np.loadtxt(args.reference, dtype=float).ravel()
        else:
            reference = np.zeros_like(signal)
        result = pseudo_project(signal, reference, setting)
        report = kkt_check(result, signal, setting)
    except (HankelFitError, ValueError, OSError) as exc:
        print(f"error: projection failed: {exc}", file=sys.stderr)
        return 3
    payload = {
        "point": result.point.tolist(),
        "objective": result.objective,
        "kernel": result.kernel.R.tolist(),
        "rank_gap": result.rank_gap,
        "converged": result.converged,
        "improvement_ok": result.improvement_ok,
        "kkt": {
            "stationarity": report.stationarity,
            "complementarity": report.complementarity,
            "normalization": report.normalization,
            "kernel": report.kernel,
            "stationary": report.stationary,
        },
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_plotdata(args) -> int:
    try:
        rows = []
        for path in args.results:
            with open(path) as fh:
                reader = csv.DictReader(fh)
                missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
                if missing:
                    raise ValueError(f"{path}: missing columns {sorted(missing)}")
                rows.extend(reader)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    instances = sorted({int(r["instance"]) for r in rows})
    by_cell = {(int(r["instance"]), r["method"]): r for r in rows}
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    hb_methods = [m for m in methods if m.startswith("HB")]

    def cell(i, m, col):
        r = by_cell.get((i, m))
        return r[col] if r is not None else ""

    with open(out_dir / "objectives.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance"] + methods)
        for i in instances:
            writer.writerow([i] + [cell(i, m, "objective") for m in methods])
    with open(out_dir / "violations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["instance"]
        for m in hb_methods:
            header += [f"{m}_pre", f"{m}_post"]
        writer.writerow(header)
        for i in instances:
            line = [i]
            for m in hb_methods:
                line += [cell(i, m, "vio_pre"), cell(i, m, "vio_post")]
            writer.writerow(line)
    with open(out_dir / "times.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance"] + hb_methods)
        for i in instances:
            writer.writerow([i] + [cell(i, m, "seconds") for m in hb_methods])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hankelfit",
        description="Low-rank Hankel approximation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a batch manifest")
    p_run.add_argument("--config", required=True, help="manifest JSON file")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override base seed")
    p_run.add_argument(
        "--methods", default=None, help="comma-separated subset of methods"
    )
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument(
        "--traces", action="store_true", help="also write traces.json"
    )

    p_proj = sub.add_parser("project", help="pseudo-project one signal")
    p_proj.add_argument("input", help="text file, one sample per line")
    p_proj.add_argument("--window", "-w", type=int, required=True)
    p_proj.add_argument("--channels", "-N", type=int, default=1)
    p_proj.add_argument("--reference", default=None, help="feasible reference file")
    p_proj.add_argument("--out", default=None, help="write JSON here")

    p_plot = sub.add_parser("plotdata", help="emit columnar figure data")
    p_plot.add_argument("results", nargs="+", help="results.csv files")
    p_plot.add_argument("--out", default="plotdata")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0

    if args.command == "run":
        try:
            manifest = RunManifest.from_file(args.config)
            if args.seed is not None:
                manifest = replace(manifest, base_seed=args.seed)
            if args.methods:
                subset = tuple(m.strip() for m in args.methods.split(","))
                bad = [m for m in subset if m not in METHODS]
                if bad:
                    raise ValueError(f"unknown methods {bad}")
                manifest = replace(manifest, methods=subset)
        except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
            print(f"error: bad manifest: {exc}", file=sys.stderr)
            return 2
        csv_path = cmd_run(
            manifest, Path(args.out), workers=args.workers, traces=args.traces
        )
        print(f"wrote {csv_path}")
        return 0
    if args.command == "project":
        return cmd_project(args)
    if args.command == "plotdata":
        return cmd_plotdata(args)
    return 1


if __name__ == "__main__":
    sys.exit(main())
