"""Clique-decomposed dual SDP relaxation and the SOCP relaxation.

The dual SDP maximizes a linear function ``rho(y)`` of the dual variables
subject to ``A_i(y) >= 0`` for every clique block, PSD line-flow and cost
blocks, and sign constraints on the bound multipliers.  Dual variables:

* per bus, active/reactive injection and squared-magnitude bound
  multipliers, stored as the free difference ``hi - lo`` plus the
  nonnegative ``lo`` (``hi >= 0`` becomes a linear row); a pair with
  ``lo == hi`` has only the free difference;
* per bus with quadratic cost, the off-diagonal and lower-right entries of
  the 2x2 block ``[[1, r12], [r12, r22]]``;
* per branch, the two angle-difference multipliers, and for each rated
  branch end the six entries of a 3x3 flow block;
* one free multiplier per linked real entry of overlapping cliques.

Bus terms are distributed entry by entry: an entry touching buses
``(a, b)`` is divided equally between the cliques that contain both.
Branch terms go to the lowest-index clique holding both endpoints.  Free
linking multipliers make the split irrelevant to the optimum.
"""

from __future__ import annotations

import dataclasses
import math
import time
from itertools import combinations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import conic
from .chordal import (
    CliqueDecomposition,
    decompose_case,
    linking_pairs,
    local_index,
    pair_entries,
)
from .errors import ModelError, StitchError
from .localopf import DualSet
from .netcase import NetworkCase, branch_flows, build_admittance
from .opfmats import MatrixFamily, OpfMatrixSet, build_matrix_set

NONNEG, FREE = 0, 1
_H_ENTRIES = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclasses.dataclass
class _Block:
    dim: int
    kind: str  # "clique", "H" or "R"
    owner: int
    pos: np.ndarray  # column-major position in the dim x dim block
    var: np.ndarray  # variable index, -1 for constants
    val: np.ndarray


@dataclasses.dataclass
class SdpSolveResult:
    status: str
    bound: float | None
    y: np.ndarray | None = None
    duals: DualSet | None = None
    W_blocks: list | None = None
    solve_seconds: float = 0.0
    iterations: int = 0
    build_seconds: float = 0.0
    detail: str = ""
    repair: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == conic.OPTIMAL


class DualSdpModel:
    """Dual SDP over the cliques of a chordal decomposition.

    Parameters
    ----------
    case : NetworkCase
    dec : CliqueDecomposition, optional
        Defaults to the minimum-degree decomposition of the network graph.
    mats : OpfMatrixSet, optional
    """

    def __init__(self, case: NetworkCase, dec: CliqueDecomposition | None = None,
                 mats: OpfMatrixSet | None = None):
        t0 = time.perf_counter()
        self.case = case
        self.dec = dec if dec is not None else decompose_case(case)
        self.mats = mats if mats is not None else build_matrix_set(case, build_admittance(case))
        self.n = case.n
        self.nb = len(case.branches)
        self._kind: list[int] = []
        self._c: list[float] = []
        self._sign_rows: list[tuple[int, int]] = []
        self.c0 = 0.0
        self._build_variables()
        self.kind = np.array(self._kind, dtype=int)
        self.c = np.array(self._c, dtype=float)
        self.nvar = len(self.c)
        # sign constraints N @ y >= 0: one row per nonnegative variable and per upper multiplier
        nn = np.flatnonzero(self.kind == NONNEG)
        pr = np.array(self._sign_rows, dtype=int).reshape(-1, 2)
        rows = np.concatenate([np.arange(len(nn)), len(nn) + np.arange(len(pr)), len(nn) + np.arange(len(pr))])
        self.N = sp.csr_matrix((np.ones(len(rows)), (rows, np.concatenate([nn, pr[:, 0], pr[:, 1]]))),
                               shape=(len(nn) + len(pr), self.nvar))
        self._build_blocks()
        self.build_seconds = time.perf_counter() - t0

    # ------------------------------------------------------------------
    # variables and objective

    def _new(self, kind: int, cost: float) -> int:
        self._kind.append(kind)
        self._c.append(float(cost))
        return len(self._kind) - 1

    def _pair(self, lo_val: float, hi_val: float, fixed: bool):
        """Variables for ``lo_val <= q(W) <= hi_val``.

        With ``comb = hi - lo`` the two multipliers contribute
        ``hi (q - hi_val) + lo (lo_val - q) = comb (q - hi_val) + lo (lo_val - hi_val)``.
        Returns ``(comb, lo)``, ``lo = -1`` for an equality.
        """
        comb = self._new(FREE, -hi_val)
        if fixed:
            return comb, -1
        lo = self._new(NONNEG, lo_val - hi_val)
        self._sign_rows.append((comb, lo))
        return comb, lo

    def _build_variables(self):
        case, n, nb = self.case, self.n, self.nb
        lim = case.bus_limits()
        Pd, Qd = case.demand()
        Vmin, Vmax = case.vlimits()
        idx = {k: np.full(n, -1) for k in ("lam", "lam_lo", "gam", "gam_lo", "mu", "mu_lo")}
        self.idx = idx
        tol = lambda a, b: abs(b - a) <= 1e-10 * max(1.0, abs(b))
        for k in range(n):
            # injection bounds shift by the demand: Pmin - Pd <= P_k <= Pmax - Pd
            for key, lo_v, hi_v, dem in (("lam", lim["Pmin"][k], lim["Pmax"][k], Pd[k]),
                                         ("gam", lim["Qmin"][k], lim["Qmax"][k], Qd[k])):
                idx[key][k], idx[key + "_lo"][k] = self._pair(lo_v - dem, hi_v - dem, tol(lo_v, hi_v))
            idx["mu"][k], idx["mu_lo"][k] = self._pair(Vmin[k] ** 2, Vmax[k] ** 2, tol(Vmin[k], Vmax[k]))
        self.c2 = lim["c2"]
        self.c1 = lim["c1"]
        self.c0 = float(np.sum(lim["c1"] * Pd + lim["c0"]))
        self.idx_R = np.full((n, 2), -1)
        for k in range(n):
            if self.c2[k] > 0:
                self.idx_R[k, 0] = self._new(FREE, 2 * math.sqrt(self.c2[k]) * Pd[k])
                self.idx_R[k, 1] = self._new(FREE, -1.0)
        self.idx_beta = np.full((nb, 2), -1)
        for e in range(nb):
            self.idx_beta[e, 0] = self._new(NONNEG, 0.0)
            self.idx_beta[e, 1] = self._new(NONNEG, 0.0)
        self.Smax = np.array([b.Smax for b in case.branches])
        self.idx_H = np.full((nb, 2, 6), -1)
        for e in range(nb):
            if self.Smax[e] > 0:
                for end in range(2):
                    for j, (a, b) in enumerate(_H_ENTRIES):
                        cost = -self.Smax[e] ** 2 if (a, b) == (0, 0) else (-1.0 if a == b else 0.0)
                        self.idx_H[e, end, j] = self._new(FREE, cost)
        self.links = []
        for child, par, a, b in linking_pairs(self.dec):
            for pa, pb in pair_entries(a, b):
                self.links.append((child, par, a, pa, b, pb, self._new(FREE, 0.0)))

    # ------------------------------------------------------------------
    # blocks

    def _build_blocks(self):
        dec, n, mats = self.dec, self.n, self.mats
        self.local = [{v: i for i, v in enumerate(c)} for c in dec.cliques]
        self.pair_cl = dec.pair_cliques()
        entries = []  # (clique, lr, lc, var, val) arrays

        def bus_terms(fam: MatrixFamily, var_of: np.ndarray, coef: np.ndarray):
            ok = var_of[fam.ids] != -2
            ids, rows, cols, vals = fam.ids[ok], fam.rows[ok], fam.cols[ok], fam.vals[ok]
            var = var_of[ids]
            val = coef[ids] * vals
            keep = (val != 0) & ((var >= 0) | (var == -1))
            entries.append(self._split(rows[keep], cols[keep], var[keep], val[keep]))

        idx = self.idx
        ones = np.ones(n)
        # constant linear-cost term in the active injection coefficient
        bus_terms(mats.Y, np.full(n, -1), self.c1)
        bus_terms(mats.Y, idx["lam"], ones)
        bus_terms(mats.Ybar, idx["gam"], ones)
        bus_terms(mats.M, idx["mu"], ones)
        has_r = self.idx_R[:, 0] >= 0
        bus_terms(mats.Y, np.where(has_r, self.idx_R[:, 0], -2), 2 * np.sqrt(self.c2))

        # branch terms
        f, t = mats.f, mats.t
        self.branch_clique = np.array([dec.first_clique_with(int(a), int(b)) for a, b in zip(f, t)], dtype=int)
        amax = np.array([b.theta_max for b in self.case.branches])
        amin = np.array([b.theta_min for b in self.case.branches])
        nb = self.nb
        self._branch_terms(entries, mats.Mbar, self.idx_beta[:, 1], np.ones(nb))
        self._branch_terms(entries, mats.Mlm, self.idx_beta[:, 1], -np.tan(amax))
        self._branch_terms(entries, mats.Mlm, self.idx_beta[:, 0], np.tan(amin))
        self._branch_terms(entries, mats.Mbar, self.idx_beta[:, 0], -np.ones(nb))
        for end, (fp, fq) in enumerate(((mats.Yf, mats.Ybarf), (mats.Yt, mats.Ybart))):
            self._branch_terms(entries, fp, self.idx_H[:, end, 1], 2.0 * np.ones(nb))
            self._branch_terms(entries, fq, self.idx_H[:, end, 2], 2.0 * np.ones(nb))

        # linking multipliers
        lc, lr, lcc, lv, lval = [], [], [], [], []
        for child, par, a, pa, b, pb, j in self.links:
            for blk, sgn in ((child, 1.0), (par, -1.0)):
                c = dec.cliques[blk]
                r = local_index(c, a, pa)
                s = local_index(c, b, pb)
                lc.append(blk); lr.append(r); lcc.append(s); lv.append(j); lval.append(sgn)
                if r != s:
                    lc.append(blk); lr.append(s); lcc.append(r); lv.append(j); lval.append(sgn)
        if lc:
            entries.append((np.array(lc), np.array(lr), np.array(lcc), np.array(lv), np.array(lval)))

        cl = np.concatenate([e[0] for e in entries])
        lr_ = np.concatenate([e[1] for e in entries])
        lc_ = np.concatenate([e[2] for e in entries])
        var = np.concatenate([e[3] for e in entries])
        val = np.concatenate([e[4] for e in entries])
        blocks = []
        order = np.argsort(cl, kind="stable")
        cl, lr_, lc_, var, val = cl[order], lr_[order], lc_[order], var[order], val[order]
        bounds = np.searchsorted(cl, np.arange(dec.m + 1))
        for i, c in enumerate(dec.cliques):
            s, e = bounds[i], bounds[i + 1]
            d = 2 * len(c)
            blocks.append(_Block(d, "clique", i, lc_[s:e] * d + lr_[s:e], var[s:e], val[s:e]))
        for e in range(nb):
            for end in range(2):
                if self.idx_H[e, end, 0] < 0:
                    continue
                pos, vv = [], []
                for j, (a, b) in enumerate(_H_ENTRIES):
                    pos.append(b * 3 + a); vv.append(self.idx_H[e, end, j])
                    if a != b:
                        pos.append(a * 3 + b); vv.append(self.idx_H[e, end, j])
                blocks.append(_Block(3, "H", 2 * e + end, np.array(pos), np.array(vv), np.ones(len(pos))))
        for k in range(self.n):
            if self.idx_R[k, 0] < 0:
                continue
            r12, r22 = self.idx_R[k]
            blocks.append(_Block(2, "R", k, np.array([0, 1, 2, 3]), np.array([-1, r12, r12, r22]),
                                 np.ones(4)))
        self.blocks = blocks
        self.n_clique_blocks = dec.m

    def _split(self, rows, cols, var, val):
        """Distribute 2n-space bus-term triplets over the cliques holding each bus pair."""
        n = self.n
        ba, bb = rows % n, cols % n
        pa = np.where(rows < n, 0, 1)
        pb = np.where(cols < n, 0, 1)
        out_c, out_r, out_s, out_v, out_x = [], [], [], [], []
        key = np.minimum(ba, bb) * n + np.maximum(ba, bb)
        for kk in np.unique(key):
            sel = np.flatnonzero(key == kk)
            a, b = divmod(int(kk), n)
            holders = self.pair_cl.get((a, b))
            if not holders:
                raise ModelError(f"buses {a} and {b} share no clique")
            w = 1.0 / len(holders)
            for cidx in holders:
                loc = self.local[cidx]
                bsz = len(self.dec.cliques[cidx])
                r = np.array([loc[x] for x in ba[sel]]) + bsz * pa[sel]
                s = np.array([loc[x] for x in bb[sel]]) + bsz * pb[sel]
                out_c.append(np.full(len(sel), cidx)); out_r.append(r); out_s.append(s)
                out_v.append(var[sel]); out_x.append(val[sel] * w)
        if not out_c:
            z = np.zeros(0, dtype=int)
            return z, z, z, z, np.zeros(0)
        return (np.concatenate(out_c), np.concatenate(out_r), np.concatenate(out_s),
                np.concatenate(out_v), np.concatenate(out_x))

    def _branch_terms(self, entries, fam: MatrixFamily, var_of: np.ndarray, coef: np.ndarray):
        ok = var_of[fam.ids] >= 0
        ids, rows, cols, vals = fam.ids[ok], fam.rows[ok], fam.cols[ok], fam.vals[ok]
        if len(ids) == 0:
            return
        n = self.n
        cl = self.branch_clique[ids]
        r = np.empty(len(ids), dtype=int)
        s = np.empty(len(ids), dtype=int)
        for t_, (ci, rr, cc) in enumerate(zip(cl, rows, cols)):
            loc = self.local[ci]
            bsz = len(self.dec.cliques[ci])
            r[t_] = loc[rr % n] + (bsz if rr >= n else 0)
            s[t_] = loc[cc % n] + (bsz if cc >= n else 0)
        entries.append((cl, r, s, var_of[ids], coef[ids] * vals))

    # ------------------------------------------------------------------
    # evaluation

    def rho(self, y: np.ndarray) -> float:
        return float(self.c @ y) + self.c0

    def block_matrices(self, y: np.ndarray, kinds=("clique",)) -> list[np.ndarray]:
        """Dense blocks ``A_i(y)`` (and flow/cost blocks when requested)."""
        y = np.asarray(y, dtype=float)
        out = []
        for b in self.blocks:
            if b.kind not in kinds:
                continue
            coef = np.where(b.var >= 0, y[np.maximum(b.var, 0)], 1.0) * b.val
            vec = np.bincount(b.pos, coef, minlength=b.dim * b.dim)
            out.append(vec.reshape(b.dim, b.dim, order="F"))
        return out

    def unsplit_matrix(self, y: np.ndarray) -> np.ndarray:
        """Clique blocks scattered back into one dense ``2n x 2n`` matrix."""
        n = self.n
        A = np.zeros((2 * n, 2 * n))
        for c, B in zip(self.dec.cliques, self.block_matrices(y)):
            g = np.concatenate([np.array(c), n + np.array(c)])
            A[np.ix_(g, g)] += B
        return A

    # ------------------------------------------------------------------
    # conversion between named duals and the variable vector

    def y_from_duals(self, d: DualSet) -> np.ndarray:
        y = np.zeros(self.nvar)
        idx = self.idx
        for base in ("lam", "gam", "mu"):
            lo, hi = getattr(d, base + "_lo"), getattr(d, base + "_hi")
            y[idx[base]] = hi - lo
            sel = idx[base + "_lo"] >= 0
            y[idx[base + "_lo"][sel]] = lo[sel]
        sel = self.idx_R[:, 0] >= 0
        y[self.idx_R[sel, 0]] = d.R[sel, 0, 1]
        y[self.idx_R[sel, 1]] = d.R[sel, 1, 1]
        y[self.idx_beta[:, 0]] = d.beta_lo
        y[self.idx_beta[:, 1]] = d.beta_hi
        for end, H in enumerate((d.Hf, d.Ht)):
            for e in np.flatnonzero(self.idx_H[:, end, 0] >= 0):
                for j, (a, b) in enumerate(_H_ENTRIES):
                    y[self.idx_H[e, end, j]] = H[e, a, b]
        return y

    def duals_from_y(self, y: np.ndarray) -> DualSet:
        d = DualSet.zeros(self.n, self.nb)
        idx = self.idx
        for base in ("lam", "gam", "mu"):
            comb = y[idx[base]]
            has_lo = idx[base + "_lo"] >= 0
            # an equality multiplier splits into its signed parts
            lo = np.where(has_lo, y[np.maximum(idx[base + "_lo"], 0)], np.maximum(-comb, 0.0))
            setattr(d, base + "_lo", lo)
            setattr(d, base + "_hi", comb + lo)
        sel = self.idx_R[:, 0] >= 0
        d.R[sel, 0, 1] = d.R[sel, 1, 0] = y[self.idx_R[sel, 0]]
        d.R[sel, 1, 1] = y[self.idx_R[sel, 1]]
        d.beta_lo = y[self.idx_beta[:, 0]].copy()
        d.beta_hi = y[self.idx_beta[:, 1]].copy()
        for end, H in enumerate((d.Hf, d.Ht)):
            for e in np.flatnonzero(self.idx_H[:, end, 0] >= 0):
                for j, (a, b) in enumerate(_H_ENTRIES):
                    H[e, a, b] = H[e, b, a] = y[self.idx_H[e, end, j]]
        return d

    def link_vars(self) -> np.ndarray:
        return np.array([lk[-1] for lk in self.links], dtype=int)

    def bus_vars(self, k: int) -> list[int]:
        out = [self.idx[key][k] for key in self.idx if self.idx[key][k] >= 0]
        out += [v for v in self.idx_R[k] if v >= 0]
        return out

    def branch_vars(self, e: int) -> list[int]:
        out = [v for v in self.idx_beta[e] if v >= 0]
        out += [v for v in self.idx_H[e].ravel() if v >= 0]
        return out

    # ------------------------------------------------------------------
    # conic program

    def cost_scale(self) -> float:
        lim = self.case.bus_limits()
        mc = lim["c1"] + 2 * lim["c2"] * np.maximum(np.abs(lim["Pmax"]), np.abs(lim["Pmin"]))
        return float(max(1.0, np.max(np.abs(mc), initial=0.0)))

    def to_conic(self, fixed: np.ndarray | None = None, values: np.ndarray | None = None,
                 const_tol: float = 1e-9):
        """Standard-form program in the free variables.

        Variables flagged in ``fixed`` are replaced by ``values``.  Returns
        ``(program, free_index, scale, violation)``: the program is scaled by
        ``1/scale``; ``violation`` names a cone that the fixed values alone
        already violate (the restricted problem is then infeasible), or is
        ``None``.
        """
        N = self.nvar
        if fixed is None:
            fixed = np.zeros(N, dtype=bool)
            values = np.zeros(N)
        values = np.where(fixed, values, 0.0)
        free = np.flatnonzero(~fixed)
        col = np.full(N, -1)
        col[free] = np.arange(len(free))
        scale = self.cost_scale()

        violation = None
        N = self.N.tocsc()
        Nf = N[:, free]
        live_rows = np.flatnonzero(np.diff(Nf.tocsr().indptr))
        const_rows = N[:, np.flatnonzero(fixed)] @ values[fixed] if np.any(fixed) else np.zeros(N.shape[0])
        dead = np.setdiff1d(np.arange(N.shape[0]), live_rows)
        if len(dead):
            worst = float(np.min(const_rows[dead]))
            if worst < -const_tol * (1.0 + float(np.max(np.abs(values[fixed]), initial=0.0))):
                violation = f"fixed sign-constrained multiplier is negative ({worst:.3e})"
        Nl = Nf[live_rows].tocoo()
        G_rows, G_cols, G_vals = [Nl.row], [Nl.col], [-Nl.data]
        h_parts = [const_rows[live_rows]]
        offset = len(live_rows)
        psd = []
        for b in self.blocks:
            isvar = b.var >= 0
            fv = np.zeros(len(b.var), dtype=bool)
            fv[isvar] = fixed[b.var[isvar]]
            const = ~isvar | fv
            cval = b.val[const] * np.where(isvar[const], values[np.maximum(b.var[const], 0)], 1.0)
            hb = np.bincount(b.pos[const], cval, minlength=b.dim * b.dim)
            live = isvar & ~fv
            if not np.any(live):
                M = hb.reshape(b.dim, b.dim, order="F")
                ev = np.linalg.eigvalsh(0.5 * (M + M.T))
                if ev[0] < -1e-7 * (1.0 + np.max(np.abs(ev))) and violation is None:
                    violation = f"fixed {b.kind} block {b.owner} is not PSD (min eigenvalue {ev[0]:.3e})"
                continue
            psd.append(b.dim)
            G_rows.append(offset + b.pos[live])
            G_cols.append(col[b.var[live]])
            G_vals.append(-b.val[live])
            h_parts.append(hb)
            offset += b.dim * b.dim
        G = sp.csc_matrix((np.concatenate(G_vals), (np.concatenate(G_rows), np.concatenate(G_cols))),
                          shape=(offset, len(free)))
        h = np.concatenate(h_parts) / scale
        c = self.c[free]
        off = (self.c0 + float(self.c @ values)) / scale
        prog = conic.ConicProgram(c, G, h, conic.ConeDims(len(live_rows), tuple(psd)), offset=off)
        return prog, free, scale, violation


def repair_dual(model: DualSdpModel, y: np.ndarray, margin: float = 1e-13) -> tuple[np.ndarray, float]:
    """Nearest cheap dual-feasible point to a solver output ``y``.

    Solver residuals can leave a block with an eigenvalue slightly below
    zero.  Negative angle multipliers are clipped, flow and cost blocks are
    shifted along their diagonal entries (which do not reach the clique
    blocks), clique blocks are shifted by raising the upper magnitude
    multiplier of their buses, and lower multipliers are raised until
    every sign row holds.  Returns the repaired vector and the resulting
    decrease of the dual objective.
    """
    y = np.array(y, dtype=float)
    rho0 = model.rho(y)
    beta = model.idx_beta.ravel()
    y[beta] = np.maximum(y[beta], 0.0)
    for e in np.flatnonzero(model.idx_H[:, 0, 0] >= 0):
        for end in range(2):
            iv = model.idx_H[e, end]
            H = np.zeros((3, 3))
            for j, (a, b) in enumerate(_H_ENTRIES):
                H[a, b] = H[b, a] = y[iv[j]]
            lo = np.linalg.eigvalsh(H)[0]
            if lo < 0:
                d = -lo + margin * (1.0 + np.max(np.abs(H)))
                y[iv[[0, 3, 5]]] += d
    for k in np.flatnonzero(model.idx_R[:, 0] >= 0):
        r12, r22 = model.idx_R[k]
        y[r22] = max(y[r22], y[r12] ** 2 * (1.0 + margin) + margin)
    need = np.zeros(model.n)
    for c, B in zip(model.dec.cliques, model.block_matrices(y)):
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        if ev[0] < 0:
            d = -ev[0] + margin * (1.0 + np.max(np.abs(ev)))
            for k in c:
                need[k] = max(need[k], d)
    # a bus's magnitude term is split evenly over the cliques holding it
    for k in np.flatnonzero(need):
        y[model.idx["mu"][k]] += need[k] * len(model.pair_cl[(k, k)])
    for base in ("lam", "gam", "mu"):
        lo_idx = model.idx[base + "_lo"]
        sel = lo_idx >= 0
        comb = y[model.idx[base][sel]]
        y[lo_idx[sel]] = np.maximum(y[lo_idx[sel]], np.maximum(-comb, 0.0))
    return y, rho0 - model.rho(y)


def solve_dual_sdp(model: DualSdpModel, fixed: np.ndarray | None = None, values: np.ndarray | None = None,
                   **opts) -> SdpSolveResult:
    """Solve the (optionally restricted) dual SDP; ``bound`` is set only when optimal."""
    t0 = time.perf_counter()
    prog, free, scale, violation = model.to_conic(fixed, values)
    build = time.perf_counter() - t0
    if violation is not None:
        return SdpSolveResult(conic.INFEASIBLE, None, build_seconds=build, detail=violation)
    sol = conic.solve(prog, **opts)
    if sol.status != conic.OPTIMAL:
        return SdpSolveResult(sol.status, None, solve_seconds=sol.seconds, iterations=sol.iterations,
                              build_seconds=build, detail="conic solver did not reach optimality")
    y = np.zeros(model.nvar) if values is None else np.where(fixed, values, 0.0)
    y[free] = sol.x * scale
    y, loss = repair_dual(model, y)
    # primal clique matrices are the dual cone variables of the clique blocks
    W = _clique_duals(model, prog, sol, fixed)
    return SdpSolveResult(conic.OPTIMAL, model.rho(y), y=y, duals=model.duals_from_y(y), W_blocks=W,
                          solve_seconds=sol.seconds, iterations=sol.iterations, build_seconds=build,
                          repair=loss)


def _clique_duals(model: DualSdpModel, prog, sol, fixed) -> list | None:
    if fixed is not None and np.any(fixed):
        return None
    off = prog.dims.nonneg
    out = []
    for b, d in zip(model.blocks, prog.dims.psd):
        if b.kind == "clique":
            Z = sol.z[off : off + d * d].reshape(d, d, order="F")
            out.append(0.5 * (Z + Z.T))
        off += d * d
    return out


def solve_full_sdp(case: NetworkCase, dec: CliqueDecomposition | None = None, **opts):
    model = DualSdpModel(case, dec)
    return model, solve_dual_sdp(model, **opts)


# ---------------------------------------------------------------------------
# exactness


@dataclasses.dataclass
class ExactnessReport:
    rank1: bool
    recovered_x: np.ndarray | None
    mismatch: float | None
    eig_ratio: float
    method: str = "direct"
    cost: float | None = None
    raw_mismatch: float | None = None
    polished: bool = False


def _compress(W: np.ndarray) -> np.ndarray:
    """Complex Hermitian b x b matrix carried by a real 2b x 2b block."""
    b = W.shape[0] // 2
    dd, dq, qd, qq = W[:b, :b], W[:b, b:], W[b:, :b], W[b:, b:]
    return (dd + qq) + 1j * (qd - dq)


def check_exactness(W_blocks, dec: CliqueDecomposition, case: NetworkCase | None = None,
                    ratio_tol: float = 1e-5, stitch_tol: float = 1e-4) -> ExactnessReport:
    """Rank test on every clique block and voltage recovery by stitching.

    A real block of a rotation-invariant relaxation has rank two when the
    underlying complex matrix has rank one, so the test runs on the complex
    compression ``(Wdd + Wqq) + j (Wqd - Wdq)``.

    Raises
    ------
    StitchError
        Overlapping cliques disagree on the recovered voltages.
    """
    n = dec.n
    worst = 0.0
    vecs = []
    for W in W_blocks:
        C = _compress(W)
        ev, U = np.linalg.eigh(C)
        top = max(ev[-1], 1e-300)
        ratio = (ev[-2] / top) if len(ev) > 1 else 0.0
        worst = max(worst, ratio)
        vecs.append(np.sqrt(max(ev[-1], 0.0)) * U[:, -1])
    rank1 = worst <= ratio_tol
    if not rank1:
        return ExactnessReport(False, None, None, worst)
    V = np.full(n, np.nan, dtype=complex)
    for i in _tree_order(dec):
        c = np.array(dec.cliques[i])
        v = vecs[i]
        known = ~np.isnan(V[c])
        if np.any(known):
            s = np.vdot(v[known], V[c][known])
            phase = s / abs(s) if abs(s) > 0 else 1.0
            v = v * phase
            err = np.max(np.abs(v[known] - V[c][known]))
            if err > stitch_tol * max(1.0, np.max(np.abs(V[c][known]))):
                raise StitchError(f"clique {i} disagrees with its neighbours by {err:.3e}")
        V[c[~known]] = v[~known]
    if case is not None:
        V = V * np.exp(-1j * np.angle(V[case.ref_pos]))
    x = np.concatenate([V.real, V.imag])
    mismatch = power_flow_violation(case, x) if case is not None else None
    cost = recovered_cost(case, x) if case is not None else None
    return ExactnessReport(True, x, mismatch, worst, cost=cost)


def penalized_blocks(model: DualSdpModel, weight: float = 1e-4, **opts):
    """Clique blocks of the optimal primal solution with a small trace penalty.

    When the optimal face holds several primal matrices (for instance a
    generator bus behind a lossless transformer, whose squared magnitude may
    rise above its rank-one value at no cost) the interior-point solution is
    a high-rank point of that face.  Adding ``weight * sum_i tr(W_i)`` to
    the scaled primal objective selects a low-rank point at a cost change
    of order ``weight``.  Returns ``None`` if the penalized solve fails.
    """
    prog, _, _, _ = model.to_conic()
    pen = np.zeros(prog.dims.size)
    off = prog.dims.nonneg
    for b, d in zip(model.blocks, prog.dims.psd):
        if b.kind == "clique":
            pen[off : off + d * d] = np.eye(d).ravel()
        off += d * d
    sec = conic.ConicProgram(prog.c, prog.G, prog.h + weight * pen, prog.dims, offset=prog.offset)
    sol = conic.solve(sec, **opts)
    if sol.status != conic.OPTIMAL:
        return None
    out, off = [], prog.dims.nonneg
    for b, d in zip(model.blocks, prog.dims.psd):
        if b.kind == "clique":
            Z = sol.z[off : off + d * d].reshape(d, d, order="F")
            out.append(0.5 * (Z + Z.T))
        off += d * d
    return out


def polish_voltage(case: NetworkCase, x: np.ndarray, tol: float = 1e-12, max_iter: int = 20,
                   max_move: float = 1e-4):
    """Newton correction of a nearly balanced voltage onto the power-flow equations.

    Generator buses keep their active injection and voltage magnitude, the
    reference bus keeps its magnitude and zero angle and absorbs the change
    in losses, and every other bus matches its demand.  Returns ``None``
    when Newton fails or moves any entry by more than ``max_move``.
    """
    n = case.n
    mats = build_matrix_set(case)
    x = np.array(x, dtype=float)
    ref = case.ref_pos
    has_gen = case.bus_limits()["has_gen"].astype(bool)
    Pd, Qd = case.demand()
    P0, V0 = mats.Y.quad(x), mats.M.quad(x)
    rest = np.array([k for k in range(n) if k != ref])
    pv = rest[has_gen[rest]]
    pq = rest[~has_gen[rest]]
    p_tgt = np.where(has_gen, P0, -Pd)[rest]
    free = np.concatenate([rest, n + rest])
    start = x.copy()
    for _ in range(max_iter):
        P, Q, V2 = mats.Y.quad(x), mats.Ybar.quad(x), mats.M.quad(x)
        r = np.concatenate([P[rest] - p_tgt, Q[pq] + Qd[pq], V2[pv] - V0[pv]])
        if np.max(np.abs(r), initial=0.0) <= tol:
            break
        J = sp.vstack([mats.Y.grad(x)[rest], mats.Ybar.grad(x)[pq], mats.M.grad(x)[pv]]).tocsc()[:, free]
        try:
            x[free] -= spla.spsolve(J, r)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(x)):
            return None
    else:
        return None
    if np.max(np.abs(x - start)) > max_move:
        return None
    return x


def exactness(model: DualSdpModel, result: SdpSolveResult, polish: bool = True,
              **opts) -> ExactnessReport:
    """Rank test on the solved blocks, retried on trace-penalized blocks.

    With ``polish`` a rank-one recovery is refined by :func:`polish_voltage`;
    ``raw_mismatch`` keeps the violation before refinement.
    """
    if not result.optimal or result.W_blocks is None:
        raise ValueError("an optimal full dual SDP result with primal blocks is required")
    rep = check_exactness(result.W_blocks, model.dec, model.case)
    if not rep.rank1:
        for weight in (1e-4, 1e-3):
            W = penalized_blocks(model, weight, **opts)
            if W is None:
                continue
            rep2 = check_exactness(W, model.dec, model.case)
            if rep2.rank1:
                rep = rep2
                rep.method = "penalized"
                break
    if rep.rank1:
        rep.raw_mismatch = rep.mismatch
        if polish:
            x = polish_voltage(model.case, rep.recovered_x)
            if x is not None:
                rep.recovered_x = x
                rep.mismatch = power_flow_violation(model.case, x)
                rep.cost = recovered_cost(model.case, x)
                rep.polished = True
    return rep


def _tree_order(dec: CliqueDecomposition) -> list[int]:
    children: list[list[int]] = [[] for _ in range(dec.m)]
    roots = []
    for i, p in enumerate(dec.parent):
        (children[p] if p >= 0 else roots).append(i)
    out, stack = [], list(reversed(roots))
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(reversed(children[v]))
    return out


def recovered_cost(case: NetworkCase, x: np.ndarray) -> float:
    """Generation cost at voltage ``x`` with each bus's generation set by its balance."""
    n = case.n
    adm = build_admittance(case)
    V = x[:n] + 1j * x[n:]
    Pd, _ = case.demand()
    Pbus = (V * np.conj(adm.Y @ V)).real + Pd
    return case.cost(Pbus[case.gen_pos()])


def power_flow_violation(case: NetworkCase, x: np.ndarray) -> float:
    """Largest violation of balance and operating limits at voltage ``x``.

    Generation at each bus is taken as injection plus demand; it must lie
    in the bus's generation limits (zero where there is no generator).
    """
    n = case.n
    adm = build_admittance(case)
    V = x[:n] + 1j * x[n:]
    S = V * np.conj(adm.Y @ V)
    lim = case.bus_limits()
    Pd, Qd = case.demand()
    Pg = S.real + Pd
    Qg = S.imag + Qd
    viol = [np.maximum(lim["Pmin"] - Pg, 0), np.maximum(Pg - lim["Pmax"], 0),
            np.maximum(lim["Qmin"] - Qg, 0), np.maximum(Qg - lim["Qmax"], 0)]
    vm = np.abs(V)
    Vmin, Vmax = case.vlimits()
    viol += [np.maximum(Vmin - vm, 0), np.maximum(vm - Vmax, 0)]
    Sf, St = branch_flows(adm, V)
    Smax = np.array([b.Smax for b in case.branches])
    rated = Smax > 0
    viol += [np.maximum(np.abs(Sf) - Smax, 0)[rated], np.maximum(np.abs(St) - Smax, 0)[rated]]
    dth = np.angle(V[adm.f] * np.conj(V[adm.t]))
    amin = np.array([b.theta_min for b in case.branches])
    amax = np.array([b.theta_max for b in case.branches])
    viol += [np.maximum(amin - dth, 0), np.maximum(dth - amax, 0)]
    return float(max(np.max(v, initial=0.0) for v in viol))


# ---------------------------------------------------------------------------
# SOCP relaxation


def solve_socp(case: NetworkCase, **opts) -> SdpSolveResult:
    """Second-order-cone relaxation over squared magnitudes and branch products.

    Variables are ``c_kk = |V_k|^2`` and, per connected bus pair ``(l, m)``,
    ``c_lm + j s_lm = V_l conj(V_m)``.  Every constraint of the SDP model is
    kept as a linear function of these, and the PSD condition is relaxed to
    ``[[c_ll, c_lm + j s_lm], [c_lm - j s_lm, c_mm]] >= 0`` per pair, which
    is the rotated cone ``c_lm^2 + s_lm^2 <= c_ll c_mm``.  The 2x2 Hermitian
    block enters the solver as its 4x4 real embedding.
    """
    t0 = time.perf_counter()
    n = case.n
    adm = build_admittance(case)
    mats = build_matrix_set(case, adm)
    f, t = adm.f, adm.t
    pairs = sorted({(min(a, b), max(a, b)) for a, b in zip(f.tolist(), t.tolist())})
    pid = {p: i for i, p in enumerate(pairs)}
    npair = len(pairs)
    # variables: c_kk (n), c_e (npair), s_e (npair), alpha_k per generator bus, t_k per quadratic bus
    lim = case.bus_limits()
    Pd, Qd = case.demand()
    Vmin, Vmax = case.vlimits()
    gen = np.flatnonzero(lim["has_gen"])
    quad = gen[lim["c2"][gen] > 0]
    nv = n + 2 * npair
    ia = {k: nv + i for i, k in enumerate(gen)}
    nv += len(gen)
    nvar = nv

    def lin_of(fam: MatrixFamily):
        """Family members as linear maps of the lifted variables.

        In a Hermitian embedding the dd and qq triplets of a bus pair carry
        equal weights, as do the qd and dq triplets with opposite signs, so
        each triplet maps to half of ``Re`` or ``Im`` of ``V_a conj(V_b)``.
        """
        rows, cols, vals = [], [], []
        for k, r, c, v in zip(fam.ids, fam.rows, fam.cols, fam.vals):
            a, pa = r % n, r // n
            b, pb = c % n, c // n
            if a == b:
                if pa == pb:
                    rows.append(k); cols.append(a); vals.append(0.5 * v)
                continue
            lo, hi = (a, b) if a < b else (b, a)
            e = pid.get((lo, hi))
            if e is None:
                raise ModelError(f"entry between unconnected buses {a} and {b}")
            if pa == pb:
                rows.append(k); cols.append(n + e); vals.append(0.5 * v)
            else:
                # Im(V_a conj V_b) = W[q_a, d_b] - W[d_a, q_b]; it is s_e when a is the lower bus
                part = 1.0 if pa == 1 else -1.0
                orient = 1.0 if a == lo else -1.0
                rows.append(k); cols.append(n + npair + e); vals.append(0.5 * v * part * orient)
        return sp.csr_matrix((vals, (rows, cols)), shape=(fam.count, nvar))

    LP = lin_of(mats.Y)
    LQ = lin_of(mats.Ybar)
    LM = lin_of(mats.M)
    LPf, LQf = lin_of(mats.Yf), lin_of(mats.Ybarf)
    LPt, LQt = lin_of(mats.Yt), lin_of(mats.Ybart)
    LC, LS = lin_of(mats.Mlm), lin_of(mats.Mbar)

    # objective: minimize sum alpha  ->  maximize -sum alpha
    cvec = np.zeros(nvar)
    for k in gen:
        cvec[ia[k]] = -1.0
    nn_rows = []

    def nonneg(row: sp.csr_matrix, const: float):
        """Constraint ``row @ v + const >= 0``."""
        nn_rows.append((row, const))

    tol = lambda a, b: abs(b - a) <= 1e-10 * max(1.0, abs(b))
    eq_rows, eq_b = [], []
    for k in range(n):
        for L, lo, hi, dem in ((LP, lim["Pmin"][k], lim["Pmax"][k], Pd[k]), (LQ, lim["Qmin"][k], lim["Qmax"][k], Qd[k])):
            row = L[k]
            if tol(lo, hi):
                eq_rows.append(row); eq_b.append(hi - dem)
            else:
                nonneg(row, dem - lo)
                nonneg(-row, hi - dem)
        row = LM[k]
        if tol(Vmin[k], Vmax[k]):
            eq_rows.append(row); eq_b.append(Vmax[k] ** 2)
        else:
            nonneg(row, -Vmin[k] ** 2)
            nonneg(-row, Vmax[k] ** 2)
    amin = np.array([b.theta_min for b in case.branches])
    amax = np.array([b.theta_max for b in case.branches])
    for e in range(len(f)):
        nonneg(np.tan(amax[e]) * LC[e] - LS[e], 0.0)
        nonneg(LS[e] - np.tan(amin[e]) * LC[e], 0.0)
    # linear cost buses: alpha_k >= c1 P_k + c1 Pd + c0
    for k in gen:
        if lim["c2"][k] == 0:
            ea = sp.csr_matrix(([1.0], ([0], [ia[k]])), shape=(1, nvar))
            nonneg(ea - lim["c1"][k] * LP[k], -(lim["c1"][k] * Pd[k] + lim["c0"][k]))

    # PSD blocks as s = h - G v
    blocks = []  # (dim, rows of G as list of sparse rows (d*d), h (d*d))

    def block(dim, entries):
        """``entries[(i, j)] = (sparse row, const)`` for the lower triangle."""
        Grow = [sp.csr_matrix((1, nvar))] * (dim * dim)
        h = np.zeros(dim * dim)
        for (i, j), (row, const) in entries.items():
            for a, b in {(i, j), (j, i)}:
                Grow[b * dim + a] = -row
                h[b * dim + a] = const
        blocks.append((dim, sp.vstack(Grow), h))

    def unit(j):
        return sp.csr_matrix(([1.0], ([0], [j])), shape=(1, nvar))

    zero = sp.csr_matrix((1, nvar))
    for e, (a, b) in enumerate(pairs):
        ca, cb, ce, se = unit(a), unit(b), unit(n + e), unit(n + npair + e)
        # real embedding of [[c_aa, c + js], [c - js, c_bb]]
        ent = {(0, 0): (ca, 0.0), (1, 1): (cb, 0.0), (2, 2): (ca, 0.0), (3, 3): (cb, 0.0),
               (1, 0): (ce, 0.0), (3, 2): (ce, 0.0), (3, 0): (-se, 0.0), (2, 1): (se, 0.0),
               (2, 0): (zero, 0.0), (3, 1): (zero, 0.0)}
        block(4, ent)
    Smax = np.array([b.Smax for b in case.branches])
    for e in np.flatnonzero(Smax > 0):
        for LPe, LQe in ((LPf, LQf), (LPt, LQt)):
            ent = {(0, 0): (zero, Smax[e] ** 2), (1, 0): (LPe[e], 0.0), (2, 0): (LQe[e], 0.0),
                   (1, 1): (zero, 1.0), (2, 1): (zero, 0.0), (2, 2): (zero, 1.0)}
            block(3, ent)
    for k in quad:
        s2 = math.sqrt(lim["c2"][k])
        ent = {(0, 0): (unit(ia[k]) - lim["c1"][k] * LP[k], -(lim["c1"][k] * Pd[k] + lim["c0"][k])),
               (1, 0): (s2 * LP[k], s2 * Pd[k]), (1, 1): (zero, 1.0)}
        block(2, ent)

    G_nn = sp.vstack([-r for r, _ in nn_rows]) if nn_rows else sp.csr_matrix((0, nvar))
    h_nn = np.array([c for _, c in nn_rows])
    G = sp.vstack([G_nn] + [g for _, g, _ in blocks]).tocsc()
    h = np.concatenate([h_nn] + [hb for _, _, hb in blocks])
    dims = conic.ConeDims(len(nn_rows), tuple(d for d, _, _ in blocks))
    A = sp.vstack(eq_rows).tocsr() if eq_rows else None
    b = np.array(eq_b) if eq_rows else None
    prog = conic.ConicProgram(cvec, G, h, dims, A, b)
    build = time.perf_counter() - t0
    sol = conic.solve(prog, **opts)
    if sol.status != conic.OPTIMAL:
        return SdpSolveResult(sol.status, None, solve_seconds=sol.seconds, iterations=sol.iterations,
                              build_seconds=build, detail="conic solver did not reach optimality")
    # the solver certifies the dual value, which lower-bounds the relaxation
    return SdpSolveResult(conic.OPTIMAL, -sol.objective, y=sol.x, solve_seconds=sol.seconds,
                          iterations=sol.iterations, build_seconds=build)


def single_clique(n: int) -> CliqueDecomposition:
    """Trivial decomposition with all buses in one clique (the unsplit dual)."""
    return CliqueDecomposition(n, (tuple(range(n)),), tuple(combinations(range(n), 2)), (-1,), tuple(range(n)))
