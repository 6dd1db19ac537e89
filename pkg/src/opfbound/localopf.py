"""Local AC OPF solutions and their dual multipliers.

:func:`solve_local` runs a primal-dual interior-point method (the
MIPS-style scheme with slack variables and a centering parameter) on the
polar formulation: variables are bus angles (reference excluded), voltage
magnitudes and generator dispatch.  Power balance is an equality per bus,
squared apparent-power flows are limited at both branch ends, angle
differences have linear bounds, and everything else is a box.

:func:`lift_duals` converts the solver's raw multipliers into the dual
variables of the rectangular SDP formulation, so that a local KKT point
can be substituted directly into the dual matrix.
"""

from __future__ import annotations

import dataclasses
import json
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConventionMismatch, InfeasibleStart, NoConvergence, ParseError
from .netcase import NetworkCase, build_admittance
from .opfmats import OpfMatrixSet, build_matrix_set, eval_traces, polar_to_x

log = logging.getLogger(__name__)

# MIPS step and centering constants
_XI = 0.99995
_SIGMA = 0.1
_Z0 = 1.0
COST_SCALE = 1e-4


@dataclasses.dataclass
class DualSet:
    """Dual variables of the rectangular SDP formulation.

    Per bus: ``lam_*`` (active injection bounds), ``gam_*`` (reactive),
    ``mu_*`` (squared magnitude).  Per branch: ``beta_*`` (angle
    difference), ``Hf``/``Ht`` (3x3 line-flow blocks at the from and to
    ends; zero for unconstrained branches).  Per bus: ``R`` (2x2 cost
    block, ``[[1, 0], [0, 0]]`` where there is no quadratic cost).
    """

    lam_lo: np.ndarray
    lam_hi: np.ndarray
    gam_lo: np.ndarray
    gam_hi: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    Hf: np.ndarray
    Ht: np.ndarray
    R: np.ndarray

    SCALARS_BUS = ("lam_lo", "lam_hi", "gam_lo", "gam_hi", "mu_lo", "mu_hi")
    SCALARS_BRANCH = ("beta_lo", "beta_hi")

    @classmethod
    def zeros(cls, n: int, nb: int) -> DualSet:
        R = np.zeros((n, 2, 2))
        R[:, 0, 0] = 1.0
        z = np.zeros
        return cls(z(n), z(n), z(n), z(n), z(n), z(n), z(nb), z(nb), z((nb, 3, 3)), z((nb, 3, 3)), R)

    def stacked(self) -> np.ndarray:
        """Canonical vector: bus scalars, branch scalars, then H and R upper triangles."""
        iu3 = np.triu_indices(3)
        iu2 = np.triu_indices(2)
        parts = [getattr(self, k) for k in self.SCALARS_BUS]
        parts += [getattr(self, k) for k in self.SCALARS_BRANCH]
        parts += [self.Hf[:, iu3[0], iu3[1]].ravel(), self.Ht[:, iu3[0], iu3[1]].ravel()]
        parts += [self.R[:, iu2[0], iu2[1]].ravel()]
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {k.name: getattr(self, k.name).tolist() for k in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> DualSet:
        return cls(**{k.name: np.asarray(d[k.name], dtype=float) for k in dataclasses.fields(cls)})

    def copy(self) -> DualSet:
        return DualSet(**{k.name: getattr(self, k.name).copy() for k in dataclasses.fields(self)})


@dataclasses.dataclass
class LocalSolution:
    x: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    objective: float
    duals: DualSet
    kkt_residual: float
    iterations: int = 0
    raw: dict | None = None

    @property
    def vm(self) -> np.ndarray:
        n = len(self.x) // 2
        return np.hypot(self.x[:n], self.x[n:])

    @property
    def va(self) -> np.ndarray:
        n = len(self.x) // 2
        return np.arctan2(self.x[n:], self.x[:n])

    def to_dict(self) -> dict:
        return {
            "format": "opfbound.local_solution",
            "version": 1,
            "x": self.x.tolist(),
            "Pg": self.Pg.tolist(),
            "Qg": self.Qg.tolist(),
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "duals": self.duals.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, case: NetworkCase | None = None) -> LocalSolution:
        """Load a stored solution.

        Two layouts are accepted: the native one written by :meth:`to_dict`
        (lifted duals present) and a raw one with polar voltages and the
        solver's own multipliers, which is lifted on load and needs ``case``.
        """
        fmt = d.get("format")
        try:
            if fmt == "opfbound.local_solution":
                return cls(x=np.asarray(d["x"], float), Pg=np.asarray(d["Pg"], float),
                           Qg=np.asarray(d["Qg"], float), objective=float(d["objective"]),
                           duals=DualSet.from_dict(d["duals"]), kkt_residual=float(d.get("kkt_residual", np.nan)),
                           iterations=int(d.get("iterations", 0)))
            if fmt == "opfbound.raw_local_solution":
                if case is None:
                    raise ParseError("a raw local solution needs its network case to be lifted")
                vm = np.asarray(d["vm"], float)
                va = np.asarray(d["va"], float)
                raw = {k: np.asarray(v, float) for k, v in d["multipliers"].items()}
                x = polar_to_x(vm, va)
                Pg = np.asarray(d["Pg"], float)
                Qg = np.asarray(d["Qg"], float)
                duals = lift_duals(case, raw, x, Pg)
                return cls(x=x, Pg=Pg, Qg=Qg, objective=case.cost(Pg), duals=duals,
                           kkt_residual=float(d.get("kkt_residual", np.nan)), raw=raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed local solution: {exc}") from exc
        raise ParseError("unknown local solution format")

    @classmethod
    def from_json(cls, text: str, case: NetworkCase | None = None) -> LocalSolution:
        try:
            return cls.from_dict(json.loads(text), case)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# problem functions


class _PolarOpf:
    """Objective, constraints and derivatives of the polar OPF."""

    def __init__(self, case: NetworkCase, mats: OpfMatrixSet):
        self.case = case
        self.mats = mats
        n = case.n
        self.n = n
        self.ref = case.ref_pos
        self.nonref = np.array([k for k in range(n) if k != self.ref], dtype=int)
        self.gen_bus = case.gen_pos()
        ng = len(case.gens)
        self.ng = ng
        self.nth = n - 1
        self.nv = self.nth + n
        self.nu = self.nv + 2 * ng
        self.iv = np.arange(self.nth, self.nv)
        self.ip = np.arange(self.nv, self.nv + ng)
        self.iq = np.arange(self.nv + ng, self.nu)
        self.Pd, self.Qd = case.demand()
        self.Vmin, self.Vmax = case.vlimits()
        g = case.gens
        self.Pmin = np.array([x.Pmin for x in g])
        self.Pmax = np.array([x.Pmax for x in g])
        self.Qmin = np.array([x.Qmin for x in g])
        self.Qmax = np.array([x.Qmax for x in g])
        self.c2 = np.array([x.c2 for x in g]) * COST_SCALE
        self.c1 = np.array([x.c1 for x in g]) * COST_SCALE
        self.c0 = np.array([x.c0 for x in g]) * COST_SCALE
        br = case.branches
        self.fb, self.tb = mats.f, mats.t
        self.lim = np.flatnonzero([b.Smax > 0 for b in br])
        self.Smax2 = np.array([b.Smax for b in br])[self.lim] ** 2
        self.amin = np.array([b.theta_min for b in br])
        self.amax = np.array([b.theta_max for b in br])
        # generator incidence: bus x gen
        self.Cg = sp.csr_matrix((np.ones(ng), (self.gen_bus, np.arange(ng))), shape=(n, ng))

        # boxes split into equalities (lo == hi) and two-sided inequalities
        lo = np.concatenate([self.Vmin, self.Pmin, self.Qmin])
        hi = np.concatenate([self.Vmax, self.Pmax, self.Qmax])
        idx = np.concatenate([self.iv, self.ip, self.iq])
        fixed = hi - lo <= 1e-10 * np.maximum(1.0, np.abs(hi))
        self.box_idx = idx
        self.box_fixed = fixed
        self.fix_idx, self.fix_val = idx[fixed], lo[fixed]
        self.free_idx, self.free_lo, self.free_hi = idx[~fixed], lo[~fixed], hi[~fixed]
        self.neq = 2 * n + len(self.fix_idx)
        nl = len(self.lim)
        nbr = len(br)
        self.niq = 2 * nl + 2 * nbr + 2 * len(self.free_idx)
        # angle-difference rows as a sparse map on u
        col = np.full(n, -1)
        col[self.nonref] = np.arange(self.nth)
        data, ri, ci = [], [], []
        for r, (a, b) in enumerate(zip(self.fb, self.tb)):
            if col[a] >= 0:
                ri.append(r); ci.append(col[a]); data.append(1.0)
            if col[b] >= 0:
                ri.append(r); ci.append(col[b]); data.append(-1.0)
        self.Dang = sp.csr_matrix((data, (ri, ci)), shape=(nbr, self.nu))
        nfree = len(self.free_idx)
        self.Dbox = sp.csr_matrix((np.ones(nfree), (np.arange(nfree), self.free_idx)), shape=(nfree, self.nu))
        self.Dfix = sp.csr_matrix((np.ones(len(self.fix_idx)), (np.arange(len(self.fix_idx)), self.fix_idx)),
                                  shape=(len(self.fix_idx), self.nu))

    # ----- layout helpers
    def split(self, u):
        th = np.zeros(self.n)
        th[self.nonref] = u[: self.nth]
        return th, u[self.iv], u[self.ip], u[self.iq]

    def x_of(self, u):
        th, v, _, _ = self.split(u)
        return polar_to_x(v, th)

    def jac_x(self, u):
        """Sparse d x / d (theta_nonref, v), shape (2n, nv)."""
        th, v, _, _ = self.split(u)
        n = self.n
        c, s = np.cos(th), np.sin(th)
        xd, xq = v * c, v * s
        nr = self.nonref
        rows = np.concatenate([nr, n + nr, np.arange(n), n + np.arange(n)])
        cols = np.concatenate([np.arange(self.nth), np.arange(self.nth), self.nth + np.arange(n), self.nth + np.arange(n)])
        vals = np.concatenate([-xq[nr], xd[nr], c, s])
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, self.nv))

    def initial_point(self):
        u = np.zeros(self.nu)
        u[self.iv] = np.clip(1.0, self.Vmin, self.Vmax)
        u[self.ip] = 0.5 * (self.Pmin + self.Pmax)
        u[self.iq] = 0.5 * (self.Qmin + self.Qmax)
        return u

    # ----- functions
    def f(self, u):
        Pg = u[self.ip]
        return float(np.sum(self.c2 * Pg**2 + self.c1 * Pg + self.c0))

    def df(self, u):
        g = np.zeros(self.nu)
        g[self.ip] = 2 * self.c2 * u[self.ip] + self.c1
        return g

    def constraints(self, u):
        """Values and Jacobians (rows = constraints) of g and h."""
        m = self.mats
        x = self.x_of(u)
        J = self.jac_x(u)
        _, _, Pg, Qg = self.split(u)
        P = m.Y.quad(x)
        Q = m.Ybar.quad(x)
        g = np.concatenate([P - self.Cg @ Pg + self.Pd, Q - self.Cg @ Qg + self.Qd,
                            u[self.fix_idx] - self.fix_val])
        dPx = m.Y.grad(x) @ J
        dQx = m.Ybar.grad(x) @ J
        zg = sp.csr_matrix((self.n, self.ng))
        dP = sp.hstack([dPx, -self.Cg, zg])
        dQ = sp.hstack([dQx, zg, -self.Cg])
        dg = sp.vstack([dP, dQ, self.Dfix]).tocsr()

        lim = self.lim
        nl = len(lim)
        parts_h, parts_dh = [], []
        self._flow = None
        if nl:
            Pf = m.Yf.quad(x)[lim]
            Qf = m.Ybarf.quad(x)[lim]
            Pt = m.Yt.quad(x)[lim]
            Qt = m.Ybart.quad(x)[lim]
            sel = sp.csr_matrix((np.ones(nl), (np.arange(nl), lim)), shape=(nl, len(self.fb)))
            gPf = sel @ (m.Yf.grad(x) @ J)
            gQf = sel @ (m.Ybarf.grad(x) @ J)
            gPt = sel @ (m.Yt.grad(x) @ J)
            gQt = sel @ (m.Ybart.grad(x) @ J)
            hf = Pf**2 + Qf**2 - self.Smax2
            ht = Pt**2 + Qt**2 - self.Smax2
            dhf = 2 * sp.diags(Pf) @ gPf + 2 * sp.diags(Qf) @ gQf
            dht = 2 * sp.diags(Pt) @ gPt + 2 * sp.diags(Qt) @ gQt
            zz = sp.csr_matrix((nl, 2 * self.ng))
            parts_h += [hf, ht]
            parts_dh += [sp.hstack([dhf, zz]), sp.hstack([dht, zz])]
            self._flow = (Pf, Qf, Pt, Qt, gPf, gQf, gPt, gQt)
        th = self.split(u)[0]
        dth = th[self.fb] - th[self.tb]
        parts_h += [dth - self.amax, self.amin - dth]
        parts_dh += [self.Dang, -self.Dang]
        ub = u[self.free_idx]
        parts_h += [ub - self.free_hi, self.free_lo - ub]
        parts_dh += [self.Dbox, -self.Dbox]
        h = np.concatenate(parts_h)
        dh = sp.vstack(parts_dh).tocsr()
        return x, J, g, dg, h, dh

    def hessian(self, u, x, J, lam, mu):
        """Hessian of the Lagrangian ``f + lam'g + mu'h`` in u."""
        m = self.mats
        n, nth = self.n, self.nth
        lamP, lamQ = lam[:n], lam[n : 2 * n]
        nl = len(self.lim)
        # quadratic forms in x: combine all weights into one matrix
        Qtot = m.Y.combine(lamP) + m.Ybar.combine(lamQ)
        outer = sp.csr_matrix((self.nv, self.nv))
        if nl:
            Pf, Qf, Pt, Qt, gPf, gQf, gPt, gQt = self._flow
            muf, mut = mu[:nl], mu[nl : 2 * nl]
            wf = np.zeros(len(self.fb))
            wt = np.zeros(len(self.fb))
            wqf = np.zeros(len(self.fb))
            wqt = np.zeros(len(self.fb))
            wf[self.lim] = 2 * muf * Pf
            wqf[self.lim] = 2 * muf * Qf
            wt[self.lim] = 2 * mut * Pt
            wqt[self.lim] = 2 * mut * Qt
            Qtot = Qtot + m.Yf.combine(wf) + m.Ybarf.combine(wqf) + m.Yt.combine(wt) + m.Ybart.combine(wqt)
            D1 = sp.diags(2 * muf)
            D2 = sp.diags(2 * mut)
            outer = (gPf.T @ D1 @ gPf + gQf.T @ D1 @ gQf + gPt.T @ D2 @ gPt + gQt.T @ D2 @ gQt)
        Hv = J.T @ (2 * Qtot) @ J + outer
        # second derivatives of x(theta, v)
        gx = 2 * (Qtot @ x)
        gd, gq = gx[:n], gx[n:]
        th, v, _, _ = self.split(u)
        c, s = np.cos(th), np.sin(th)
        nr = self.nonref
        d_tt = -(gd * v * c + gq * v * s)[nr]
        d_tv = (-gd * s + gq * c)[nr]
        it = np.arange(nth)
        ivr = nth + nr
        corr = sp.csr_matrix(
            (np.concatenate([d_tt, d_tv, d_tv]), (np.concatenate([it, it, ivr]), np.concatenate([it, ivr, it]))),
            shape=(self.nv, self.nv),
        )
        Hv = Hv + corr
        Hc = sp.diags(np.concatenate([np.zeros(self.nv), 2 * self.c2, np.zeros(self.ng)]))
        return (sp.block_diag([Hv, sp.csr_matrix((2 * self.ng, 2 * self.ng))]) + Hc).tocsr()


def solve_local(case: NetworkCase, tol: float = 1e-8, max_iter: int = 150, start: np.ndarray | None = None,
                mats: OpfMatrixSet | None = None, verbose: bool = False) -> LocalSolution:
    """Find a local optimum of the AC OPF.

    Parameters
    ----------
    case : NetworkCase
    tol : float
        Threshold for the scaled feasibility, stationarity, complementarity
        and cost-change conditions.
    max_iter : int
    start : ndarray, optional
        Warm-start voltage vector ``x``; the default is a flat start with
        mid-range dispatch.

    Raises
    ------
    NoConvergence
        The iteration cap was reached.
    InfeasibleStart
        The iterates became non-finite.
    """
    if mats is None:
        mats = build_matrix_set(case, build_admittance(case))
    prob = _PolarOpf(case, mats)
    u = prob.initial_point()
    if start is not None:
        n = case.n
        V = start[:n] + 1j * start[n:]
        ang = np.angle(V) - np.angle(V[prob.ref])
        u[: prob.nth] = ang[prob.nonref]
        u[prob.iv] = np.abs(V)

    x, J, g, dg, h, dh = prob.constraints(u)
    f = prob.f(u)
    df = prob.df(u)
    niq = len(h)
    gamma = 1.0
    lam = np.zeros(len(g))
    z = np.full(niq, _Z0)
    k = h < -_Z0
    z[k] = -h[k]
    mu = np.full(niq, _Z0)
    k = gamma / z > _Z0
    mu[k] = gamma / z[k]
    f0 = f

    def conds():
        Lx = df + dg.T @ lam + dh.T @ mu
        maxh = float(np.max(h)) if niq else 0.0
        feas = max(float(np.max(np.abs(g))) if len(g) else 0.0, maxh) / (
            1 + max(np.max(np.abs(u)), np.max(np.abs(z)) if niq else 0.0))
        grad = float(np.max(np.abs(Lx))) / (1 + max(np.max(np.abs(lam)) if len(lam) else 0.0,
                                                     np.max(np.abs(mu)) if niq else 0.0))
        comp = float(z @ mu) / (1 + np.max(np.abs(u)))
        cost = abs(f - f0) / (1 + abs(f0))
        return Lx, feas, grad, comp, cost

    Lx, feas, grad, comp, cost = conds()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if feas < tol and grad < tol and comp < tol and cost < tol and it > 1:
            converged = True
            break
        Lxx = prob.hessian(u, x, J, lam, mu)
        zinv = 1.0 / z
        dh_zinv = dh.T @ sp.diags(zinv)
        Mmat = Lxx + dh_zinv @ sp.diags(mu) @ dh
        N = Lx + dh_zinv @ (mu * h + gamma)
        K = sp.bmat([[Mmat, dg.T], [dg, None]], format="csc")
        rhs = np.concatenate([-N, -g])
        try:
            sol = spla.spsolve(K, rhs)
        except RuntimeError as exc:
            raise NoConvergence(f"singular Newton system at iteration {it}") from exc
        if not np.all(np.isfinite(sol)):
            raise InfeasibleStart(f"non-finite Newton step at iteration {it}")
        du = sol[: prob.nu]
        dlam = sol[prob.nu :]
        dz = -h - z - dh @ du
        dmu = -mu + zinv * (gamma - mu * dz)
        k = dz < 0
        ap = min(_XI * float(np.min(z[k] / -dz[k])), 1.0) if np.any(k) else 1.0
        k = dmu < 0
        ad = min(_XI * float(np.min(mu[k] / -dmu[k])), 1.0) if np.any(k) else 1.0
        u = u + ap * du
        z = z + ap * dz
        lam = lam + ad * dlam
        mu = mu + ad * dmu
        if niq:
            gamma = _SIGMA * float(z @ mu) / niq
        f0 = f
        x, J, g, dg, h, dh = prob.constraints(u)
        f = prob.f(u)
        df = prob.df(u)
        Lx, feas, grad, comp, cost = conds()
        if verbose:
            log.info("%3d f %.10g feas %.2e grad %.2e comp %.2e cost %.2e", it, f / COST_SCALE, feas, grad, comp, cost)
        if not (np.isfinite(f) and np.all(np.isfinite(u))):
            raise InfeasibleStart("iterates became non-finite")
    else:
        if feas < tol and grad < tol and comp < tol and cost < tol:
            converged = True
    if not converged:
        raise NoConvergence(f"no convergence in {max_iter} iterations "
                            f"(feas {feas:.1e}, grad {grad:.1e}, comp {comp:.1e})")

    raw = _raw_multipliers(prob, lam / COST_SCALE, mu / COST_SCALE, z)
    th, v, Pg, Qg = prob.split(u)
    x = polar_to_x(v, th)
    duals = lift_duals(case, raw, x, Pg, mats=mats)
    kkt = max(float(np.max(np.abs(g))), float(np.max(h, initial=0.0)),
              float(np.max(np.abs(Lx))) / COST_SCALE, float(np.max(z * mu, initial=0.0)) / COST_SCALE)
    return LocalSolution(x=x, Pg=Pg, Qg=Qg, objective=case.cost(Pg), duals=duals, kkt_residual=kkt,
                         iterations=it, raw=raw)


def _raw_multipliers(prob: _PolarOpf, lam, mu, z) -> dict:
    """Name the multipliers; inequality duals smaller than their slack are zeroed."""
    n, ng, nb = prob.n, prob.ng, len(prob.fb)
    nl = len(prob.lim)
    mu = np.where(mu * COST_SCALE < z, 0.0, mu)
    out = {"lam_P": lam[:n].copy(), "lam_Q": lam[n : 2 * n].copy()}
    # box multipliers on (v, Pg, Qg), with equality rows folded in as signed parts
    nfix = len(prob.fix_idx)
    nfree = len(prob.free_idx)
    upper = np.zeros(prob.nu)
    lower = np.zeros(prob.nu)
    nu_fix = lam[2 * n : 2 * n + nfix]
    upper[prob.fix_idx] = np.maximum(nu_fix, 0.0)
    lower[prob.fix_idx] = np.maximum(-nu_fix, 0.0)
    off = 2 * nl + 2 * nb
    upper[prob.free_idx] = mu[off : off + nfree]
    lower[prob.free_idx] = mu[off + nfree : off + 2 * nfree]
    out["mu_Vmax"], out["mu_Vmin"] = upper[prob.iv], lower[prob.iv]
    out["mu_Pmax"], out["mu_Pmin"] = upper[prob.ip], lower[prob.ip]
    out["mu_Qmax"], out["mu_Qmin"] = upper[prob.iq], lower[prob.iq]
    sf = np.zeros(nb)
    st = np.zeros(nb)
    sf[prob.lim] = mu[:nl]
    st[prob.lim] = mu[nl : 2 * nl]
    out["mu_Sf"], out["mu_St"] = sf, st
    out["mu_angmax"] = mu[2 * nl : 2 * nl + nb].copy()
    out["mu_angmin"] = mu[2 * nl + nb : 2 * nl + 2 * nb].copy()
    assert ng == len(out["mu_Pmax"])
    return out


def lift_duals(case: NetworkCase, raw: dict, x: np.ndarray, Pg: np.ndarray, mats: OpfMatrixSet | None = None,
               sign_tol: float = 1e-6) -> DualSet:
    """Map polar-solver multipliers to the rectangular SDP dual variables.

    ``raw`` holds per-bus ``lam_P``/``lam_Q`` (power balance, written as
    injection minus generation plus demand), ``mu_Vmax``/``mu_Vmin`` per
    bus on the magnitude ``|V|``, per-generator ``mu_Pmax``, ``mu_Pmin``,
    ``mu_Qmax``, ``mu_Qmin``, and per-branch ``mu_Sf``/``mu_St`` (squared
    apparent-power limits) and ``mu_angmax``/``mu_angmin`` (angle
    difference in radians).
    """
    if mats is None:
        mats = build_matrix_set(case, build_admittance(case))
    n = case.n
    nb = len(case.branches)
    for key in ("mu_Vmax", "mu_Vmin", "mu_Pmax", "mu_Pmin", "mu_Qmax", "mu_Qmin", "mu_Sf", "mu_St",
                "mu_angmax", "mu_angmin"):
        val = np.asarray(raw[key], dtype=float)
        scale = 1.0 + float(np.max(np.abs(val), initial=0.0))
        if np.any(val < -sign_tol * scale):
            raise ConventionMismatch(f"negative inequality multiplier in {key}: min {val.min():.3e}")
    clip = lambda a: np.maximum(np.asarray(a, dtype=float), 0.0)

    d = DualSet.zeros(n, nb)
    gp = case.gen_pos()
    has_gen = np.zeros(n, dtype=bool)
    has_gen[gp] = True
    lamP = np.asarray(raw["lam_P"], dtype=float)
    lamQ = np.asarray(raw["lam_Q"], dtype=float)
    # buses without generation: free balance multiplier split into its signed parts
    d.lam_hi = np.where(has_gen, 0.0, np.maximum(lamP, 0.0))
    d.lam_lo = np.where(has_gen, 0.0, np.maximum(-lamP, 0.0))
    d.gam_hi = np.where(has_gen, 0.0, np.maximum(lamQ, 0.0))
    d.gam_lo = np.where(has_gen, 0.0, np.maximum(-lamQ, 0.0))
    d.lam_hi[gp] = clip(raw["mu_Pmax"])
    d.lam_lo[gp] = clip(raw["mu_Pmin"])
    d.gam_hi[gp] = clip(raw["mu_Qmax"])
    d.gam_lo[gp] = clip(raw["mu_Qmin"])

    vm = np.hypot(x[:n], x[n:])
    d.mu_hi = clip(raw["mu_Vmax"]) / (2 * vm)
    d.mu_lo = clip(raw["mu_Vmin"]) / (2 * vm)

    f, t = mats.f, mats.t
    amax = np.array([b.theta_max for b in case.branches])
    amin = np.array([b.theta_min for b in case.branches])
    vv = vm[f] * vm[t]
    d.beta_hi = clip(raw["mu_angmax"]) * np.cos(amax) / vv
    d.beta_lo = clip(raw["mu_angmin"]) * np.cos(amin) / vv

    tr = eval_traces(mats, x)
    for key_mu, P, Q, H in (("mu_Sf", tr["Pf"], tr["Qf"], d.Hf), ("mu_St", tr["Pt"], tr["Qt"], d.Ht)):
        psi = clip(raw[key_mu])
        vec = np.stack([np.ones(nb), P, Q], axis=1)
        H[:] = psi[:, None, None] * vec[:, :, None] * vec[:, None, :]

    c2 = np.array([g.c2 for g in case.gens])
    s = np.sqrt(c2) * np.asarray(Pg, dtype=float)
    d.R[gp, 0, 1] = s
    d.R[gp, 1, 0] = s
    d.R[gp, 1, 1] = s**2
    return d


def bound_at(case: NetworkCase, duals: DualSet) -> float:
    """Dual objective at a dual point (meaningful as a bound only if feasible)."""
    lim = case.bus_limits()
    Pd, Qd = case.demand()
    Vmin, Vmax = case.vlimits()
    c2, c1, c0 = lim["c2"], lim["c1"], lim["c0"]
    lam = duals.lam_hi - duals.lam_lo + c1 + 2 * np.sqrt(c2) * duals.R[:, 0, 1]
    gam = duals.gam_hi - duals.gam_lo
    rho = np.sum(lam * Pd + duals.lam_lo * lim["Pmin"] - duals.lam_hi * lim["Pmax"])
    rho += np.sum(gam * Qd + duals.gam_lo * lim["Qmin"] - duals.gam_hi * lim["Qmax"])
    rho += np.sum(duals.mu_lo * Vmin**2 - duals.mu_hi * Vmax**2)
    rho += np.sum(c0 - np.where(c2 > 0, duals.R[:, 1, 1], 0.0))
    Smax2 = np.array([b.Smax for b in case.branches]) ** 2
    for H in (duals.Hf, duals.Ht):
        rho -= np.sum(Smax2 * H[:, 0, 0] + H[:, 1, 1] + H[:, 2, 2])
    return float(rho)

