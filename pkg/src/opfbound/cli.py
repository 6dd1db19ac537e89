"""Command-line front end.

Every mode writes a schema-checked report (JSON or CSV) to stdout or to
``--output``.  Pipeline failures print a JSON error object and exit with
status 1.

Examples
--------
::

    opfbound local case9
    opfbound fastbound case118 --sigma 20 --compare-sdp --compare-socp
    opfbound compare case30 --report csv
    opfbound sweep case14 case30 --sigmas 0,20,40,60,80,100
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, conic
from .chordal import decompose_case, linking_entry_count
from .errors import OpfBoundError
from .fastbound import gap_percent, run_algorithm1
from .localopf import LocalSolution, solve_local
from .netcase import NetworkCase, load_case
from .relaxations import DualSdpModel, exactness, solve_dual_sdp, solve_socp

CSV_COLUMNS = ("case", "mode", "sigma", "objective", "bound", "gap_pct", "solve_s", "psd_pct", "escalations", "status")

log = logging.getLogger("opfbound")


def _schema(name: str) -> dict:
    return json.loads((resources.files("opfbound") / "schemas" / f"{name}.schema.json").read_text())


def validate_report(report: dict) -> None:
    jsonschema.validate(report, _schema("report"))


def _row(case, mode, sigma=None, objective=None, bound=None, solve_s=None, psd_pct=None, escalations=None,
         status="optimal") -> dict:
    gap = gap_percent(objective, bound) if objective is not None and bound is not None else None
    return {"case": case, "mode": mode, "sigma": sigma, "objective": objective, "bound": bound, "gap_pct": gap,
            "solve_s": solve_s, "psd_pct": psd_pct, "escalations": escalations, "status": status}


class Runner:
    """Stages of one run with shared case, local solution and model."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.case: NetworkCase = load_case(args.case)
        self.timings: dict[str, float] = {}
        self._local: LocalSolution | None = None
        self._model: DualSdpModel | None = None

    def opts(self) -> dict:
        return {"feas_tol": self.args.feas_tol, "gap_tol": self.args.gap_tol, "max_iter": self.args.max_iter}

    @property
    def local(self) -> LocalSolution:
        if self._local is None:
            t0 = time.perf_counter()
            path = getattr(self.args, "local_solution", None)
            if path:
                self._local = LocalSolution.from_json(Path(path).read_text(), self.case)
            else:
                self._local = solve_local(self.case, tol=self.args.local_tol)
            self.timings["local"] = time.perf_counter() - t0
        return self._local

    @property
    def model(self) -> DualSdpModel:
        if self._model is None:
            t0 = time.perf_counter()
            dec = decompose_case(self.case, self.args.merge_cliques)
            if self.args.dump_cliques:
                labels = [b.index for b in self.case.buses]
                Path(self.args.dump_cliques).write_text(dec.to_json(labels))
            self._model = DualSdpModel(self.case, dec)
            self.timings["decompose"] = time.perf_counter() - t0
        return self._model

    def clique_stats(self) -> dict:
        dec = self.model.dec
        return {"count": dec.m, "max_size": max(len(c) for c in dec.cliques),
                "linking_entries": linking_entry_count(dec), "merge_threshold": self.args.merge_cliques}

    def local_row(self) -> dict:
        loc = self.local
        return _row(self.case.name, "local", objective=loc.objective, solve_s=self.timings["local"])

    def sdp_row(self, report: dict) -> dict:
        res = solve_dual_sdp(self.model, **self.opts())
        self.timings["sdp"] = res.solve_seconds + res.build_seconds
        if getattr(self.args, "dump_program", None):
            conic.write_program(self.model.to_conic()[0], self.args.dump_program)
        if getattr(self.args, "exactness", False) and res.optimal:
            ex = exactness(self.model, res, **self.opts())
            entry = {"rank1": bool(ex.rank1), "eig_ratio": float(ex.eig_ratio), "mismatch": ex.mismatch,
                     "raw_mismatch": ex.raw_mismatch, "method": ex.method, "polished": bool(ex.polished)}
            if ex.recovered_x is not None:
                n = self.case.n
                V = ex.recovered_x[:n] + 1j * ex.recovered_x[n:]
                entry["vm"] = np.abs(V).tolist()
                entry["va_deg"] = np.degrees(np.angle(V)).tolist()
            report["exactness"] = entry
        return _row(self.case.name, "sdp", objective=self.local.objective, bound=res.bound,
                    solve_s=self.timings["sdp"], status=res.status)

    def socp_row(self) -> dict:
        res = solve_socp(self.case, **self.opts())
        self.timings["socp"] = res.solve_seconds + res.build_seconds
        return _row(self.case.name, "socp", objective=self.local.objective, bound=res.bound,
                    solve_s=self.timings["socp"], status=res.status)

    def fast_row(self, report: dict) -> list[dict]:
        a = self.args
        rep = run_algorithm1(self.case, sigma=a.sigma / 100.0, escalation_step=a.escalation_step / 100.0,
                             local=self.local, model=self.model, compare_sdp=a.compare_sdp, **self.opts())
        self.timings["evaluate"] = rep.timings["evaluate"]
        self.timings["fastbound"] = rep.timings["solve"]
        report["fastbound"] = {
            "sigma_requested": a.sigma, "sigma_used": 100.0 * rep.sigma_used, "sigma_floor": 100.0 * rep.sigma_floor,
            "problematic": rep.problematic, "prescreen": rep.prescreen,
            "dual_correspondence_ratio": rep.dual_correspondence_ratio,
            "correspondence_skipped": rep.correspondence_skipped,
        }
        rows = [_row(self.case.name, "fastbound", sigma=100.0 * rep.sigma_used, objective=rep.local_objective,
                     bound=rep.bound, solve_s=rep.timings["solve"], psd_pct=rep.psd_percentage,
                     escalations=rep.escalations, status=rep.status)]
        if a.compare_sdp:
            self.timings["sdp"] = rep.timings.get("sdp", 0.0)
            rows.append(_row(self.case.name, "sdp", objective=rep.local_objective, bound=rep.sdp_bound,
                             solve_s=self.timings["sdp"], status="optimal" if rep.sdp_bound is not None else "failed"))
        return rows


def run(args: argparse.Namespace) -> dict:
    """Execute one mode and return its report."""
    r = Runner(args)
    mode = args.mode
    if mode == "relax":
        mode = args.relaxation
    report = {"format": "opfbound.report", "version": 1, "case": r.case.name, "mode": mode, "rows": []}
    rows = report["rows"]
    if mode == "local":
        rows.append(r.local_row())
        if args.save_local:
            Path(args.save_local).write_text(r.local.to_json())
    elif mode == "sdp":
        rows.append(r.sdp_row(report))
    elif mode == "socp":
        rows.append(r.socp_row())
    elif mode in ("fastbound", "compare"):
        if mode == "compare":
            args.compare_sdp = args.compare_socp = True
        rows.extend(r.fast_row(report))
        if args.compare_socp:
            rows.append(r.socp_row())
        if mode == "compare":
            rows.insert(0, r.local_row())
    if mode != "socp":
        report["cliques"] = r.clique_stats()
    report["timings"] = dict(r.timings)
    validate_report(report)
    return report


def _sweep_point(case_name: str, sigmas: list[float], ns: dict) -> list[dict]:
    args = argparse.Namespace(**ns)
    args.case = case_name
    r = Runner(args)
    out = []
    for s in sigmas:
        rep = run_algorithm1(r.case, sigma=s / 100.0, escalation_step=args.escalation_step / 100.0,
                             local=r.local, model=r.model, **r.opts())
        out.append(_row(r.case.name, "fastbound", sigma=100.0 * rep.sigma_used, objective=rep.local_objective,
                        bound=rep.bound, solve_s=rep.timings["solve"], psd_pct=rep.psd_percentage,
                        escalations=rep.escalations, status=rep.status))
    return out


def sweep(args: argparse.Namespace) -> dict:
    sigmas = parse_sigmas(args.sigmas)
    ns = vars(args).copy()
    cases = ns.pop("cases")
    ns.pop("func", None)
    if args.jobs > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(_sweep_point, cases, [sigmas] * len(cases), [ns] * len(cases)))
    else:
        parts = [_sweep_point(c, sigmas, ns) for c in cases]
    report = {"format": "opfbound.report", "version": 1, "case": ",".join(cases), "mode": "sweep",
              "rows": [row for p in parts for row in p]}
    validate_report(report)
    return report


def parse_sigmas(text: str) -> list[float]:
    """Parse ``0,10,...,100`` style lists; ``a,b,...,c`` expands with step ``b - a``."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    out: list[float] = []
    i = 0
    while i < len(parts):
        if parts[i] == "..." and len(out) >= 2 and i + 1 < len(parts):
            step = out[-1] - out[-2]
            end = float(parts[i + 1])
            if step <= 0:
                raise ValueError("an ellipsis needs an increasing pair before it")
            v = out[-1] + step
            while v < end - 1e-9:
                out.append(round(v, 10))
                v += step
            i += 1
            continue
        out.append(float(parts[i]))
        i += 1
    for v in out:
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"sigma {v} outside [0, 100]")
    return out


def format_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report["rows"]:
        w.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def _clean(obj):
    """Replace non-finite floats so the JSON output stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _sigma_percent(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 100.0:
        raise argparse.ArgumentTypeError("sigma must lie in [0, 100]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opfbound", description="Lower bounds on AC optimal power flow objectives.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--report", choices=("json", "csv"), default=None,
                        help="output format (default json, csv for sweep)")
    common.add_argument("--output", "-o", help="write the report here instead of stdout")
    common.add_argument("--feas-tol", type=float, default=1e-8, help="conic feasibility tolerance")
    common.add_argument("--gap-tol", type=float, default=1e-8, help="conic relative gap tolerance")
    common.add_argument("--max-iter", type=int, default=200, help="conic iteration cap")
    common.add_argument("--local-tol", type=float, default=1e-8, help="local solver tolerance")
    common.add_argument("--local-solution", metavar="FILE", help="JSON local solution to use instead of solving")
    common.add_argument("--merge-cliques", type=float, default=None, metavar="THRESHOLD",
                        help="merge adjacent cliques whose merge cost is at most THRESHOLD")
    common.add_argument("--dump-cliques", metavar="FILE", help="write the clique decomposition as JSON")
    common.add_argument("--verbose", "-v", action="store_true")
    fast = argparse.ArgumentParser(add_help=False)
    fast.add_argument("--sigma", type=_sigma_percent, default=20.0, help="percent of problematic cliques")
    fast.add_argument("--escalation-step", type=_sigma_percent, default=20.0,
                      help="sigma increase in percentage points after an infeasible restricted solve")

    sub = p.add_subparsers(dest="mode", required=True)
    s = sub.add_parser("local", parents=[common], help="local interior-point solution")
    s.add_argument("case", help="case file (.m or .json) or bundled fixture name")
    s.add_argument("--save-local", metavar="FILE", help="write the local solution as JSON")
    for name, text in (("sdp", "full sparse dual SDP bound"), ("socp", "SOCP bound")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("case")
        if name == "sdp":
            s.add_argument("--exactness", action="store_true", help="test rank one and recover voltages")
            s.add_argument("--dump-program", metavar="FILE", help="write the conic program as sparse triplets")
    s = sub.add_parser("relax", parents=[common], help="relaxation bound chosen by --relaxation")
    s.add_argument("case")
    s.add_argument("--relaxation", choices=("sdp", "socp"), default="sdp")
    s.add_argument("--exactness", action="store_true")
    s.add_argument("--dump-program", metavar="FILE")
    s = sub.add_parser("fastbound", parents=[common, fast], help="simplified SDP bound seeded by local duals")
    s.add_argument("case")
    s.add_argument("--compare-sdp", action="store_true", help="also solve the full SDP")
    s.add_argument("--compare-socp", action="store_true", help="also solve the SOCP")
    s = sub.add_parser("compare", parents=[common, fast], help="local, fast, SDP and SOCP side by side")
    s.add_argument("case")
    s = sub.add_parser("sweep", parents=[common, fast], help="fast bounds over a list of sigma values (CSV)")
    s.add_argument("cases", nargs="+")
    s.add_argument("--sigmas", default="0,10,...,100", help="comma list of percents; '...' repeats the step")
    s.add_argument("--jobs", type=int, default=1, help="cases solved in parallel")
    return p


def _error(code: str, message: str, case: str | None) -> str:
    err = {"format": "opfbound.error", "version": 1, "error": code, "message": message, "case": case}
    jsonschema.validate(err, _schema("error"))
    return json.dumps(err)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    case = getattr(args, "case", None) or ",".join(getattr(args, "cases", []))
    try:
        report = sweep(args) if args.mode == "sweep" else run(args)
    except OpfBoundError as exc:
        print(_error(exc.code, str(exc), case))
        return 1
    except FileNotFoundError as exc:
        print(_error("file_not_found", str(exc), case))
        return 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(_error("invalid_input", str(exc), case))
        return 1
    report = _clean(report)
    fmt = args.report or ("csv" if args.mode == "sweep" else "json")
    text = format_csv(report) if fmt == "csv" else json.dumps(report, indent=1) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
