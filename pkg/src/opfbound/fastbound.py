"""Fast lower bounds from a simplified dual SDP seeded by local OPF duals.

The dual matrix is evaluated at the lifted local duals with every linking
multiplier set to zero.  Cliques are ranked by the smallest eigenvalue of
their block, the first ``ceil(sigma * m)`` are declared problematic, and
the dual SDP is re-solved with only the duals touching problematic cliques
(plus all linking multipliers) left free.  Every other dual is held at its
local value, so any optimal point of the restricted problem is dual
feasible for the full one and its objective is a valid lower bound.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import conic
from .chordal import CliqueDecomposition, decompose_case
from .errors import EmptyVector, ExhaustedEscalation
from .localopf import DualSet, LocalSolution, solve_local
from .netcase import NetworkCase
from .relaxations import DualSdpModel, SdpSolveResult, solve_dual_sdp

PSD_TOL = 1e-9
FAVORABLE_PSD_PERCENT = 95.0


@dataclasses.dataclass
class DualEvaluation:
    """Clique blocks at the local duals with linking multipliers zeroed.

    Attributes
    ----------
    blocks : list of ndarray
        ``A_i`` per clique.
    eigens : ndarray
        Smallest eigenvalue per clique.
    norms : ndarray
        Spectral norm per clique, used to scale the PSD test.
    """

    blocks: list
    eigens: np.ndarray
    norms: np.ndarray
    y: np.ndarray

    def nonpsd(self, tol: float = PSD_TOL) -> np.ndarray:
        return self.eigens < -tol * (1.0 + self.norms)

    @property
    def psd_percentage(self) -> float:
        return 100.0 * float(np.mean(~self.nonpsd())) if len(self.eigens) else 100.0


@dataclasses.dataclass
class ProblematicSelection:
    """Cliques whose duals stay free in the simplified SDP.

    Attributes
    ----------
    sigma : float
        Requested fraction.
    sigma_used : float
        ``max(sigma, sigma_floor)``.
    sigma_floor : float
        Fraction of cliques with a non-PSD block.
    raised : bool
        True when ``sigma`` was below the floor.
    selected : tuple of int
        Problematic cliques, worst first.
    buses : tuple of int
        Buses in any problematic clique.
    branches : tuple of int
        Branches with an endpoint among ``buses``.
    kept_worst : bool
        True when the ceiling rule gave no clique and the worst one was kept.
    """

    sigma: float
    sigma_used: float
    sigma_floor: float
    raised: bool
    eigens: np.ndarray
    selected: tuple[int, ...]
    buses: tuple[int, ...]
    branches: tuple[int, ...]
    kept_worst: bool = False


@dataclasses.dataclass
class BoundReport:
    """Outcome of one fast-bound run.

    ``bound`` and ``optimality_gap_percent`` are ``None`` unless
    ``status`` is optimal.
    """

    case: str
    bound: float | None
    local_objective: float
    optimality_gap_percent: float | None
    sigma: float
    sigma_used: float
    sigma_floor: float
    escalations: int
    psd_percentage: float
    prescreen: str
    problematic: list[int]
    n_cliques: int
    status: str
    timings: dict
    iterations: int = 0
    detail: str = ""
    sdp_bound: float | None = None
    sdp_gap_percent: float | None = None
    dual_correspondence_ratio: float | None = None
    correspondence_skipped: int | None = None
    result: SdpSolveResult | None = dataclasses.field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "result"}
        out["problematic"] = [int(i) for i in self.problematic]
        return out


def gap_percent(local_objective: float, bound: float) -> float:
    """Relative distance of a bound below the local objective, in percent."""
    return (local_objective - bound) / local_objective * 100.0


def evaluate_dual_matrix(model: DualSdpModel, duals: DualSet) -> DualEvaluation:
    """Clique blocks and their smallest eigenvalues at the given duals."""
    y = model.y_from_duals(duals)
    y[model.link_vars()] = 0.0
    blocks = model.block_matrices(y)
    eig, nrm = [], []
    for B in blocks:
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        eig.append(ev[0])
        nrm.append(np.max(np.abs(ev)))
    return DualEvaluation(blocks, np.array(eig), np.array(nrm), y)


def select_problematic(eigens, sigma: float, dec: CliqueDecomposition | None = None, case: NetworkCase | None = None,
                       nonpsd=None) -> ProblematicSelection:
    """Pick the ``ceil(sigma * m)`` cliques with the smallest eigenvalues.

    Parameters
    ----------
    eigens : array_like
        Smallest eigenvalue per clique.
    sigma : float
        Fraction in ``[0, 1]``; raised to the non-PSD fraction when below it.
    dec, case : optional
        Needed to report the bus and branch sets.
    nonpsd : array_like of bool, optional
        Non-PSD flags; defaults to ``eigens < -PSD_TOL``.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    eigens = np.asarray(eigens, dtype=float)
    m = len(eigens)
    bad = np.asarray(nonpsd, dtype=bool) if nonpsd is not None else eigens < -PSD_TOL
    # ties go to the lower clique index
    order = np.lexsort((np.arange(m), eigens))
    floor = float(np.sum(bad)) / m if m else 0.0
    used = max(sigma, floor)
    k = max(math.ceil(used * m - 1e-9), int(np.sum(bad)))
    kept_worst = k == 0 and m > 0
    if kept_worst:
        k = 1
    selected = tuple(int(i) for i in order[:k])
    buses: tuple[int, ...] = ()
    branches: tuple[int, ...] = ()
    if dec is not None:
        buses = tuple(sorted({v for i in selected for v in dec.cliques[i]}))
    if case is not None and buses:
        f, t = case.branch_ends()
        inb = np.zeros(case.n, dtype=bool)
        inb[list(buses)] = True
        branches = tuple(int(e) for e in np.flatnonzero(inb[f] | inb[t]))
    return ProblematicSelection(sigma, used, floor, sigma < floor, eigens, selected, buses, branches, kept_worst)


def restriction(model: DualSdpModel, sel: ProblematicSelection, duals: DualSet):
    """``(fixed, values)`` holding every dual outside the problematic sets at its local value."""
    values = model.y_from_duals(duals)
    fixed = np.ones(model.nvar, dtype=bool)
    fixed[model.link_vars()] = False
    for k in sel.buses:
        fixed[model.bus_vars(k)] = False
    for e in sel.branches:
        fixed[model.branch_vars(e)] = False
    return fixed, values


def solve_simplified(model: DualSdpModel, sel: ProblematicSelection, duals: DualSet, **opts) -> SdpSolveResult:
    """Solve the dual SDP restricted by :func:`restriction`."""
    fixed, values = restriction(model, sel, duals)
    return solve_dual_sdp(model, fixed, values, **opts)


def dual_correspondence(local, sdp, skip_tol: float = 1e-9) -> tuple[float, int]:
    """Percentage distance between two dual vectors and the number of skipped entries.

    Entries are compared componentwise relative to ``sdp``; entries with
    ``|sdp| < skip_tol`` are skipped.

    Raises
    ------
    EmptyVector
        Every entry was skipped.
    """
    a = local.stacked() if isinstance(local, DualSet) else np.asarray(local, dtype=float)
    b = sdp.stacked() if isinstance(sdp, DualSet) else np.asarray(sdp, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dual vectors differ in length: {a.shape} vs {b.shape}")
    keep = np.abs(b) >= skip_tol
    if not np.any(keep):
        raise EmptyVector("no reference dual is large enough to compare against")
    ratio = 100.0 * float(np.linalg.norm((a[keep] - b[keep]) / b[keep]))
    return ratio, int(np.sum(~keep))


def dual_correspondence_ratio(local, sdp, skip_tol: float = 1e-9) -> float:
    return dual_correspondence(local, sdp, skip_tol)[0]


def prescreen(psd_percentage: float) -> str:
    return "expected favorable" if psd_percentage > FAVORABLE_PSD_PERCENT else "consider full relaxation"


def run_algorithm1(case: NetworkCase, sigma: float = 0.2, escalation_step: float = 0.2, sigma_max: float = 1.0,
                   local: LocalSolution | None = None, dec: CliqueDecomposition | None = None,
                   model: DualSdpModel | None = None, compare_sdp: bool = False, **opts) -> BoundReport:
    """Local solve, dual evaluation, clique selection and simplified solve.

    When the restricted problem is infeasible ``sigma`` grows by
    ``escalation_step`` (capped at ``sigma_max``) and the solve is retried.

    Parameters
    ----------
    case : NetworkCase
    sigma : float
        Fraction of problematic cliques in ``[0, 1]``.
    local : LocalSolution, optional
        Skips the internal local solve.
    compare_sdp : bool
        Also solve the full dual SDP and report its bound and the dual
        correspondence ratio.
    **opts
        Passed to the conic solver.

    Raises
    ------
    ExhaustedEscalation
        Still infeasible at ``sigma_max``.
    """
    timings = {}
    t0 = time.perf_counter()
    if local is None:
        local = solve_local(case)
    timings["local"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if model is None:
        model = DualSdpModel(case, dec if dec is not None else decompose_case(case))
    timings["decompose"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ev = evaluate_dual_matrix(model, local.duals)
    timings["evaluate"] = time.perf_counter() - t0

    escalations = 0
    s = sigma
    solve_time = 0.0
    while True:
        sel = select_problematic(ev.eigens, s, model.dec, case, nonpsd=ev.nonpsd())
        res = solve_simplified(model, sel, local.duals, **opts)
        solve_time += res.solve_seconds + res.build_seconds
        if res.status != conic.INFEASIBLE:
            break
        if sel.sigma_used >= sigma_max or len(sel.selected) == model.dec.m:
            raise ExhaustedEscalation(f"restricted dual SDP infeasible at sigma={sel.sigma_used:.2f}: {res.detail}")
        s = min(sel.sigma_used + escalation_step, sigma_max)
        escalations += 1
    timings["solve"] = solve_time

    ok = res.optimal
    bound = res.bound if ok else None
    rep = BoundReport(
        case=case.name, bound=bound, local_objective=local.objective,
        optimality_gap_percent=gap_percent(local.objective, bound) if ok else None,
        sigma=sigma, sigma_used=sel.sigma_used, sigma_floor=sel.sigma_floor, escalations=escalations,
        psd_percentage=ev.psd_percentage, prescreen=prescreen(ev.psd_percentage),
        problematic=list(sel.selected), n_cliques=model.dec.m, status=res.status, timings=timings,
        iterations=res.iterations, detail=res.detail, result=res)
    if compare_sdp:
        t0 = time.perf_counter()
        full = solve_dual_sdp(model, **opts)
        timings["sdp"] = time.perf_counter() - t0
        if full.optimal:
            rep.sdp_bound = full.bound
            rep.sdp_gap_percent = gap_percent(local.objective, full.bound)
            try:
                rep.dual_correspondence_ratio, rep.correspondence_skipped = dual_correspondence(local.duals, full.duals)
            except EmptyVector:
                pass
    return rep


def certificate_eigens(model: DualSdpModel, y: np.ndarray) -> list[tuple[str, float, float]]:
    """``(kind, min eigenvalue, norm)`` of every PSD block at ``y``."""
    out = []
    kinds = ("clique", "H", "R")
    for b, B in zip([b for b in model.blocks if b.kind in kinds], model.block_matrices(y, kinds)):
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        out.append((b.kind, float(ev[0]), float(np.max(np.abs(ev)))))
    return out
