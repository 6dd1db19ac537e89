"""Conic programs over nonnegative and PSD cones, and an embedded solver.

A :class:`ConicProgram` is stated over free variables ``x``.  Every cone
variable is an affine slack of them::

    maximize    c @ x + offset
    subject to  s = h - G @ x  in  K = R_+^l  x  S_+^{d_1}  x ...  x  S_+^{d_p}
                A @ x = b

Cone vectors are laid out as the ``l`` nonnegative entries followed by each
PSD block stored as a full ``d*d`` column-major matrix, so the trace inner
product is the plain dot product.

:func:`solve` is a primal-dual path-following method on the homogeneous
self-dual embedding with Nesterov-Todd scaling and a Mehrotra
predictor-corrector.  The Newton systems are reduced to a dense Schur
complement over the free variables; PSD blocks are handled with dense
per-block algebra, batched over blocks of equal size.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections import defaultdict

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import OpfBoundError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"
NUMERICAL = "numerical"

# accept a stalled run whose best iterate misses the tolerances by at most this
STALL_FACTOR = 100.0
# a run whose best iterate has not halved its score for this many steps has stalled
STALL_ITERS = 6


class NumericalFailure(OpfBoundError):
    """Factorization breakdown inside the interior-point iteration."""


@dataclasses.dataclass(frozen=True)
class ConeDims:
    nonneg: int = 0
    psd: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.nonneg + sum(d * d for d in self.psd)

    @property
    def degree(self) -> int:
        return self.nonneg + sum(self.psd)


@dataclasses.dataclass
class ConicProgram:
    c: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    dims: ConeDims
    A: sp.csr_matrix | None = None
    b: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.G = sp.csc_matrix(self.G, dtype=float)
        n = self.c.shape[0]
        if self.G.shape != (self.dims.size, n):
            raise ValueError(f"G has shape {self.G.shape}, expected {(self.dims.size, n)}")
        if self.h.shape != (self.dims.size,):
            raise ValueError("h does not match the cone dimensions")
        if self.A is None:
            self.A = sp.csr_matrix((0, n))
            self.b = np.zeros(0)
        else:
            self.A = sp.csr_matrix(self.A, dtype=float)
            self.b = np.asarray(self.b, dtype=float)
            if self.A.shape[1] != n or self.A.shape[0] != self.b.shape[0]:
                raise ValueError("equality rows do not match the variable count")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.h - self.G @ x

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.offset


@dataclasses.dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    s: np.ndarray | None
    z: np.ndarray | None
    y: np.ndarray | None
    objective: float | None
    dual_objective: float | None
    iterations: int
    seconds: float
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan


# ---------------------------------------------------------------------------
# cone bookkeeping


class _Cone:
    """Index layout of a product cone, with PSD blocks grouped by side length."""

    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.l = dims.nonneg
        self.size = dims.size
        self.degree = dims.degree
        offsets = []
        off = self.l
        for d in dims.psd:
            offsets.append(off)
            off += d * d
        self.block_offsets = offsets
        by_size: dict[int, list[int]] = defaultdict(list)
        for k, d in enumerate(dims.psd):
            by_size[d].append(k)
        self.groups = []
        for d in sorted(by_size):
            blocks = np.array(by_size[d])
            starts = np.array([offsets[k] for k in blocks])
            idx = starts[:, None] + np.arange(d * d)[None, :]
            self.groups.append((d, blocks, idx))

    def split(self, v):
        return v[: self.l], [v[idx].reshape(-1, d, d) for d, _, idx in self.groups]

    def join(self, lp, mats):
        out = np.empty(self.size)
        out[: self.l] = lp
        for (d, _, idx), m in zip(self.groups, mats):
            out[idx] = m.reshape(len(idx), d * d)
        return out

    def identity(self):
        mats = [np.broadcast_to(np.eye(d), (len(idx), d, d)) for d, _, idx in self.groups]
        return self.join(np.ones(self.l), mats)

    def min_eig(self, v) -> float:
        """Smallest eigenvalue over all cones (``inf`` for an empty cone)."""
        lp, mats = self.split(v)
        vals = [np.min(lp)] if self.l else []
        for m in mats:
            vals.append(np.min(np.linalg.eigvalsh(_sym(m))))
        return min(vals) if vals else np.inf


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-T} s = lambda``."""

    def __init__(self, cone: _Cone, s, z):
        self.cone = cone
        s_lp, s_m = cone.split(s)
        z_lp, z_m = cone.split(z)
        self.w = np.sqrt(s_lp / z_lp)
        self.lam_lp = np.sqrt(s_lp * z_lp)
        self.R, self.Rinv, self.Pinv, self.lam = [], [], [], []
        for S, Z in zip(s_m, z_m):
            Ls = np.linalg.cholesky(_sym(S))
            Lz = np.linalg.cholesky(_sym(Z))
            _, lam, vt = np.linalg.svd(np.swapaxes(Lz, -1, -2) @ Ls)
            v = np.swapaxes(vt, -1, -2)
            R = (Ls @ v) / np.sqrt(lam)[:, None, :]
            eye = np.broadcast_to(np.eye(Ls.shape[-1]), Ls.shape)
            Ls_inv = np.linalg.solve(Ls, eye)
            Rinv = np.sqrt(lam)[:, :, None] * (vt @ Ls_inv)
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.Pinv.append(np.swapaxes(Rinv, -1, -2) @ Rinv)
            self.lam.append(lam)

    # unscaled -> scaled and back
    def W(self, u):
        lp, mats = self.cone.split(u)
        return self.cone.join(self.w * lp, [_t(R) @ M @ R for R, M in zip(self.R, mats)])

    def W_invT(self, u):
        lp, mats = self.cone.split(u)
        return self.cone.join(lp / self.w, [Ri @ M @ _t(Ri) for Ri, M in zip(self.Rinv, mats)])

    def W_T(self, u):
        lp, mats = self.cone.split(u)
        return self.cone.join(self.w * lp, [R @ M @ _t(R) for R, M in zip(self.R, mats)])

    def D_inv(self, u):
        """``(W^T W)^{-1} u``."""
        lp, mats = self.cone.split(u)
        return self.cone.join(lp / self.w**2, [P @ M @ P for P, M in zip(self.Pinv, mats)])

    # Jordan algebra in the scaled frame, where lambda is diagonal
    def lam_vec(self):
        mats = [_diag_batch(l) for l in self.lam]
        return self.cone.join(self.lam_lp, mats)

    def lam_sq(self):
        return self.cone.join(self.lam_lp**2, [_diag_batch(l**2) for l in self.lam])

    def lam_div(self, r):
        lp, mats = self.cone.split(r)
        out = [2.0 * M / (l[:, :, None] + l[:, None, :]) for l, M in zip(self.lam, mats)]
        return self.cone.join(lp / self.lam_lp, out)

    def max_step(self, u) -> float:
        """Largest ``a`` with ``lambda + a u`` in the cone (``inf`` if unbounded)."""
        lp, mats = self.cone.split(u)
        amax = np.inf
        if self.cone.l:
            neg = lp < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-self.lam_lp[neg] / lp[neg])))
        for l, M in zip(self.lam, mats):
            isq = 1.0 / np.sqrt(l)
            T = isq[:, :, None] * _sym(M) * isq[:, None, :]
            emin = float(np.min(np.linalg.eigvalsh(T)))
            if emin < 0:
                amax = min(amax, -1.0 / emin)
        return amax


def _t(m):
    return np.swapaxes(m, -1, -2)


def _diag_batch(l):
    out = np.zeros(l.shape + (l.shape[-1],))
    i = np.arange(l.shape[-1])
    out[:, i, i] = l
    return out


def _jordan(cone: _Cone, u, v):
    ulp, um = cone.split(u)
    vlp, vm = cone.split(v)
    return cone.join(ulp * vlp, [0.5 * (a @ b + b @ a) for a, b in zip(um, vm)])


class _SchurSystem:
    """Factorized reduced KKT system for ``[0 A' G'; A 0 0; G 0 -W'W]``.

    The free variables are eliminated through ``H = G' (W'W)^{-1} G`` (plus
    ``A'A`` when equality rows exist), factored densely for small programs
    and with a sparse LU otherwise.
    """

    def __init__(self, prog: ConicProgram, cone: _Cone, blocks, scaling: _Scaling | None):
        self.prog = prog
        self.cone = cone
        self.scaling = scaling
        n = prog.n
        G = prog.G
        if scaling is None:
            H = (G.T @ G).tocsc()
        else:
            rows, cols, vals = [], [], []
            if cone.l:
                Gl = G[: cone.l]
                Hl = (Gl.T @ sp.diags(1.0 / scaling.w**2) @ Gl).tocoo()
                rows.append(Hl.row)
                cols.append(Hl.col)
                vals.append(Hl.data)
            for gi, (d, bids, _) in enumerate(cone.groups):
                P = scaling.Pinv[gi]
                for j, k in enumerate(bids):
                    bc, Gb = blocks[k]
                    if len(bc) == 0:
                        continue
                    K = np.kron(P[j], P[j])
                    Hb = Gb.T @ (Gb.T @ K).T
                    rr, cc = np.meshgrid(bc, bc, indexing="ij")
                    rows.append(rr.ravel())
                    cols.append(cc.ravel())
                    vals.append(np.asarray(Hb).ravel())
            if rows:
                H = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
            else:
                H = sp.csc_matrix((n, n))
        A = prog.A
        if A.shape[0]:
            H = H + (A.T @ A).tocsc()
        self.H = _Factor(H)
        if A.shape[0]:
            HiAt = self.H.solve(A.T.toarray())
            self.S = _Factor(sp.csc_matrix(A @ HiAt), dense=True)
        else:
            self.S = None

    def _D_inv(self, u):
        return u if self.scaling is None else self.scaling.D_inv(u)

    def _WtW(self, u):
        return u if self.scaling is None else self.scaling.W_T(self.scaling.W(u))

    def _solve_once(self, bx, by, bz):
        prog = self.prog
        r = bx + prog.G.T @ self._D_inv(bz)
        if self.S is not None:
            A = prog.A
            t = self.H.solve(r + A.T @ by)
            y = self.S.solve(A @ t - by)
            x = t - self.H.solve(A.T @ y)
        else:
            x = self.H.solve(r)
            y = np.zeros(0)
        z = self._D_inv(prog.G @ x - bz)
        return x, y, z

    def solve(self, bx, by, bz, refine: int = 1):
        prog = self.prog
        x, y, z = self._solve_once(bx, by, bz)
        for _ in range(refine):
            ex = bx - (prog.A.T @ y + prog.G.T @ z)
            ey = by - prog.A @ x
            ez = bz - (prog.G @ x - self._WtW(z))
            dx, dy, dz = self._solve_once(ex, ey, ez)
            x, y, z = x + dx, y + dy, z + dz
        return x, y, z


DENSE_LIMIT = 400


class _Factor:
    """Symmetric positive definite solve, dense Cholesky or sparse LU.

    Near the optimum the Schur matrix is numerically semidefinite.  Dense
    Cholesky detects that and is retried with a small diagonal shift; the
    sparse LU would silently factor it, so every diagonal entry always gets
    a static relative shift of ``1e-14`` (floored at ``1e-14`` times the
    largest entry), undone by refinement.  A shift proportional to the
    largest entry instead swamps rows whose scaled constraints are far from
    active.
    """

    def __init__(self, M, dense: bool | None = None):
        n = M.shape[0]
        self.dense = n <= DENSE_LIMIT if dense is None else dense
        diag = np.abs(M.diagonal()) if n else np.zeros(0)
        scale = max(1.0, float(np.max(diag))) if n else 1.0
        reg = 0.0 if self.dense else 1e-14
        for _ in range(8):
            try:
                if self.dense:
                    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
                    self.fac = la.cho_factor(Md + reg * np.eye(n), lower=True, check_finite=False)
                else:
                    shift = reg * np.maximum(diag, 1e-14 * scale)
                    Ms = (M + sp.diags(shift)).tocsc()
                    self.fac = spla.splu(Ms, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                         options={"SymmetricMode": True})
                    probe = self.fac.solve(np.ones(n))
                    if not np.all(np.isfinite(probe)):
                        raise la.LinAlgError("non-finite solve")
                return
            except (la.LinAlgError, RuntimeError):
                if self.dense:
                    reg = scale * (1e-14 if reg == 0.0 else reg / scale * 100.0)
                else:
                    reg *= 100.0
        raise NumericalFailure("Schur complement factorization failed")

    def solve(self, b):
        if self.dense:
            return la.cho_solve(self.fac, b, check_finite=False)
        return self.fac.solve(np.asarray(b, dtype=float))


def _block_columns(prog: ConicProgram, cone: _Cone):
    """Per PSD block: the free-variable columns touching it and their rows."""
    G = prog.G.tocsr()
    out = []
    for off, d in zip(cone.block_offsets, cone.dims.psd):
        sub = G[off : off + d * d].tocsc()
        cols = np.flatnonzero(np.diff(sub.indptr))
        out.append((cols, sp.csc_matrix(sub[:, cols])))
    return out


def solve(
    prog: ConicProgram,
    feas_tol: float = 1e-8,
    gap_tol: float = 1e-8,
    max_iter: int = 200,
    verbose: bool = False,
) -> ConicSolution:
    """Solve a :class:`ConicProgram`.

    ``objective`` in the result is ``c @ x + offset`` at the returned point,
    which satisfies the cone constraints up to ``feas_tol``.  Statuses other
    than ``optimal`` carry no objective.
    """
    t0 = time.perf_counter()
    orig = prog
    prog, col_scale = _equilibrate(prog)
    cone = _Cone(prog.dims)
    blocks = _block_columns(prog, cone)
    G, A, h, b = prog.G, prog.A, prog.h, prog.b
    c = -prog.c  # internal form minimizes
    n = prog.n

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, np.linalg.norm(h))
    e = cone.identity()

    def fail(status, it):
        return ConicSolution(status, None, None, None, None, None, None, it, time.perf_counter() - t0)

    try:
        K0 = _SchurSystem(prog, cone, blocks, None)
        x, _, zz = K0.solve(np.zeros(n), b, h)
        s = -zz
        _, y, z = K0.solve(-c, np.zeros(A.shape[0]), np.zeros(cone.size))
    except NumericalFailure:
        return fail(NUMERICAL, 0)
    for v in (s, z):
        shift = -cone.min_eig(v) if cone.size else -1.0
        if shift >= -1e-8 * max(np.linalg.norm(v), 1.0):
            v += (1.0 + shift) * e
    tau, kappa = 1.0, 1.0

    status = MAX_ITER
    pres = dres = gap = np.nan
    it = 0
    best = None
    last_gain = 0
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = b * tau - A @ x
        rz = h * tau - G @ x - s
        cx, by_, hz = c @ x, b @ y, h @ z
        rt = -cx - by_ - hz - kappa
        gap = float(s @ z)
        mu = (gap + tau * kappa) / (cone.degree + 1)
        pcost = cx / tau
        dcost = -(hz + by_) / tau
        pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0) / tau
        dres = np.linalg.norm(rx) / resx0 / tau
        agap = gap / tau**2
        if pcost < 0:
            relgap = agap / -pcost
        elif dcost > 0:
            relgap = agap / dcost
        else:
            relgap = np.inf
        if verbose:
            log.info("%3d pcost % .8e dcost % .8e gap %.2e pres %.2e dres %.2e tau %.2e kappa %.2e",
                     it, pcost, dcost, agap, pres, dres, tau, kappa)
        score = max(pres / feas_tol, dres / feas_tol, min(agap, relgap) / gap_tol)
        if best is None or score < best[0]:
            if best is None or score < 0.5 * best[0]:
                last_gain = it
            best = (score, x, y, z, s, tau, pres, dres, agap)
        if score <= 1.0:
            status = OPTIMAL
            break
        if best[0] <= STALL_FACTOR and it - last_gain >= STALL_ITERS:
            status = NUMERICAL
            break
        if hz + by_ < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / resx0 / -(hz + by_)
            if pinf <= feas_tol:
                status = INFEASIBLE
                break
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x) / resy0, np.linalg.norm(G @ x + s) / resz0) / -cx
            if dinf <= feas_tol:
                status = UNBOUNDED
                break
        if it == max_iter:
            break

        try:
            W = _Scaling(cone, s, z)
            K = _SchurSystem(prog, cone, blocks, W)
        except (np.linalg.LinAlgError, NumericalFailure):
            status = NUMERICAL
            break
        lamsq = W.lam_sq()
        x1, y1, z1 = K.solve(-c, b, h)
        wz1 = W.W(z1)
        denom_base = float(wz1 @ wz1)

        sigma = 0.0
        ds_a = dz_a = None
        dtau_a = dkappa_a = 0.0
        for phase in ("affine", "combined"):
            eta = 0.0 if phase == "affine" else sigma
            if phase == "affine":
                rhs_s = -lamsq
                rhs_k = -tau * kappa
            else:
                rhs_s = -lamsq - _jordan(cone, ds_a, dz_a) + sigma * mu * e
                rhs_k = -tau * kappa - dtau_a * dkappa_a + sigma * mu
            rs = W.lam_div(rhs_s)
            f = 1.0 - eta
            x0, y0, z0 = K.solve(-f * rx, f * ry, f * rz - W.W_T(rs))
            dtau = (-f * rt + rhs_k / tau + c @ x0 + b @ y0 + h @ z0) / (kappa / tau + denom_base)
            dx = x0 + dtau * x1
            dy = y0 + dtau * y1
            dz = z0 + dtau * z1
            dz_s = W.W(dz)
            # take ds from the linearized slack equation rather than from dz:
            # dz carries the error amplified by the scaling, ds then stays
            # consistent with dx to machine precision
            ds_s = W.W_invT(f * rz + h * dtau - G @ dx)
            dkappa = (rhs_k - kappa * dtau) / tau
            amax = min(W.max_step(ds_s), W.max_step(dz_s))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            if phase == "affine":
                alpha = min(1.0, amax)
                sigma = (1.0 - alpha) ** 3
                ds_a, dz_a, dtau_a, dkappa_a = ds_s, dz_s, dtau, dkappa
            else:
                alpha = min(1.0, 0.99 * amax)
        if verbose:
            log.info("     step %.3e sigma %.3e", alpha, sigma)
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * W.W_T(ds_s)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        s = _symmetrize(cone, s)
        z = _symmetrize(cone, z)

    seconds = time.perf_counter() - t0
    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(status, None, None, None, None, None, None, it, seconds, pres, dres, gap)
    if status in (MAX_ITER, NUMERICAL) and best is not None and best[0] <= STALL_FACTOR:
        # progress stalled near the optimum; the most accurate iterate is
        # within a small multiple of the requested tolerances
        status = OPTIMAL
    if status != OPTIMAL or best is None:
        return ConicSolution(status, None, None, None, None, None, None, it, seconds, pres, dres, gap)
    _, x, y, z, s, tau, pres, dres, agap = best
    xs, ss, zs, ys = col_scale * x / tau, s / tau, z / tau, y / tau
    obj = orig.objective(xs)
    dobj = float(h @ zs + b @ ys) + prog.offset
    return ConicSolution(status, xs, ss, zs, ys, obj, dobj, it, seconds, pres, dres, agap)


def _equilibrate(prog: ConicProgram):
    """Rescale variables so every column of ``[G; A]`` has unit norm."""
    norms = np.sqrt(np.asarray(prog.G.multiply(prog.G).sum(axis=0)).ravel()
                    + np.asarray(prog.A.multiply(prog.A).sum(axis=0)).ravel())
    d = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    D = sp.diags(d)
    scaled = ConicProgram(prog.c * d, prog.G @ D, prog.h, prog.dims, prog.A @ D, prog.b, prog.offset)
    return scaled, d


def _symmetrize(cone: _Cone, v):
    lp, mats = cone.split(v)
    return cone.join(lp, [_sym(m) for m in mats])


def check_solution(prog: ConicProgram, x: np.ndarray, tol: float) -> dict:
    """Independent replay of a returned point: cone membership and equalities.

    Returns the worst violations, each already normalized; the point is
    accepted when all are ``<= tol``.
    """
    s = prog.h - prog.G @ x
    l = prog.dims.nonneg
    worst_cone = 0.0
    if l:
        worst_cone = max(worst_cone, float(np.max(np.maximum(-s[:l], 0.0))))
    off = l
    for d in prog.dims.psd:
        M = s[off : off + d * d].reshape(d, d)
        off += d * d
        asym = float(np.max(np.abs(M - M.T)))
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        worst_cone = max(worst_cone, -float(ev[0]) / (1.0 + float(np.max(np.abs(ev)))), asym)
    eq = float(np.max(np.abs(prog.A @ x - prog.b))) if prog.A.shape[0] else 0.0
    return {"cone": worst_cone, "equality": eq, "ok": worst_cone <= tol and eq <= tol}


def write_program(prog: ConicProgram, path) -> None:
    """Dump the standard form as sparse triplets for external cross-checks.

    Layout: a header line ``conic-triplet 1``, then ``dims <l> <d1> <d2> ...``,
    ``nvar <n>``, ``offset <v>``, then records ``c <j> <v>``, ``G <i> <j> <v>``,
    ``h <i> <v>``, ``A <i> <j> <v>``, ``b <i> <v>`` (0-based indices).
    """
    G = prog.G.tocoo()
    A = prog.A.tocoo()
    with open(path, "w") as f:
        f.write("conic-triplet 1\n")
        f.write("dims " + " ".join(str(v) for v in (prog.dims.nonneg, *prog.dims.psd)) + "\n")
        f.write(f"nvar {prog.n}\nneq {A.shape[0]}\noffset {float(prog.offset)!r}\n")
        for j, v in enumerate(prog.c.tolist()):
            if v:
                f.write(f"c {j} {v!r}\n")
        for i, j, v in zip(G.row.tolist(), G.col.tolist(), G.data.tolist()):
            f.write(f"G {i} {j} {v!r}\n")
        for i, v in enumerate(prog.h.tolist()):
            if v:
                f.write(f"h {i} {v!r}\n")
        for i, j, v in zip(A.row.tolist(), A.col.tolist(), A.data.tolist()):
            f.write(f"A {i} {j} {v!r}\n")
        for i, v in enumerate(prog.b.tolist()):
            if v:
                f.write(f"b {i} {v!r}\n")


def read_program(path) -> ConicProgram:
    with open(path) as f:
        lines = [ln.split() for ln in f if ln.strip()]
    if lines[0] != ["conic-triplet", "1"]:
        raise ValueError("not a conic-triplet file")
    dims_vals = [int(v) for v in lines[1][1:]]
    dims = ConeDims(dims_vals[0], tuple(dims_vals[1:]))
    n = int(lines[2][1])
    neq = int(lines[3][1])
    offset = float(lines[4][1])
    c = np.zeros(n)
    h = np.zeros(dims.size)
    b = np.zeros(neq)
    G_t, A_t = ([], [], []), ([], [], [])
    for rec in lines[5:]:
        tag = rec[0]
        if tag == "c":
            c[int(rec[1])] = float(rec[2])
        elif tag == "h":
            h[int(rec[1])] = float(rec[2])
        elif tag == "b":
            b[int(rec[1])] = float(rec[2])
        elif tag in ("G", "A"):
            tgt = G_t if tag == "G" else A_t
            tgt[0].append(int(rec[1]))
            tgt[1].append(int(rec[2]))
            tgt[2].append(float(rec[3]))
        else:
            raise ValueError(f"unknown record {tag!r}")
    G = sp.csc_matrix((G_t[2], (G_t[0], G_t[1])), shape=(dims.size, n))
    A = sp.csr_matrix((A_t[2], (A_t[0], A_t[1])), shape=(neq, n)) if neq else None
    return ConicProgram(c, G, h, dims, A, b if neq else None, offset)
