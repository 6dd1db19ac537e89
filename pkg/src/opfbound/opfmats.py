"""Real-embedded quadratic forms for injections, flows and angle differences.

The voltage vector is ``x = (Vd_1..Vd_n, Vq_1..Vq_n)``.  Every physical
quantity used by the OPF is a quadratic form ``x' M x = tr(M W)`` with
``W = x x'``.  Each form is built from a complex Hermitian matrix ``H``
with ``V^H H V`` equal to the quantity, then embedded as::

    [[Re H, -Im H],
     [Im H,  Re H]]

which is symmetric whenever ``H`` is Hermitian.  Matrices are held as
sparse triplet families, never as dense ``2n x 2n`` arrays.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .netcase import AdmittanceMatrix, NetworkCase, build_admittance


@dataclasses.dataclass(frozen=True)
class MatrixFamily:
    """``count`` symmetric ``dim x dim`` matrices stored as one triplet list.

    Both triangles are stored explicitly; duplicate triplets are summed.
    """

    count: int
    dim: int
    ids: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def quad(self, x: np.ndarray) -> np.ndarray:
        """``x' M_k x`` for every member ``k``."""
        x = np.asarray(x, dtype=float)
        return np.bincount(self.ids, self.vals * x[self.rows] * x[self.cols], minlength=self.count)

    def pair(self, W) -> np.ndarray:
        """``sum_ij (M_k)_ij W_ij`` for a dense symmetric ``W``."""
        W = np.asarray(W, dtype=float)
        return np.bincount(self.ids, self.vals * W[self.rows, self.cols], minlength=self.count)

    def combine(self, coeffs: np.ndarray) -> sp.csr_matrix:
        """``sum_k coeffs[k] M_k`` as a sparse matrix."""
        coeffs = np.asarray(coeffs, dtype=float)
        out = sp.coo_matrix((coeffs[self.ids] * self.vals, (self.rows, self.cols)), shape=(self.dim, self.dim))
        return out.tocsr()

    def matrix(self, k: int) -> sp.csr_matrix:
        sel = self.ids == k
        return sp.coo_matrix((self.vals[sel], (self.rows[sel], self.cols[sel])),
                             shape=(self.dim, self.dim)).tocsr()

    def grad(self, x: np.ndarray) -> sp.csr_matrix:
        """Jacobian of :meth:`quad`, shape ``(count, dim)``; row k is ``2 M_k x``."""
        x = np.asarray(x, dtype=float)
        return sp.coo_matrix((2.0 * self.vals * x[self.cols], (self.ids, self.rows)),
                             shape=(self.count, self.dim)).tocsr()


def _embed(count: int, n: int, ids, rows, cols, h) -> MatrixFamily:
    """Embed Hermitian triplets (complex ``h`` at ``(rows, cols)``) into 2n space."""
    ids = np.asarray(ids, dtype=int)
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    h = np.asarray(h, dtype=complex)
    re, im = h.real, h.imag
    keep_r = re != 0
    keep_i = im != 0
    I = np.concatenate([rows[keep_r], rows[keep_r] + n, rows[keep_i], rows[keep_i] + n])
    J = np.concatenate([cols[keep_r], cols[keep_r] + n, cols[keep_i] + n, cols[keep_i]])
    V = np.concatenate([re[keep_r], re[keep_r], -im[keep_i], im[keep_i]])
    K = np.concatenate([ids[keep_r], ids[keep_r], ids[keep_i], ids[keep_i]])
    # merge duplicates so that triplets are unique per (id, row, col)
    key = (K * (2 * n) + I) * (2 * n) + J
    uniq, inv = np.unique(key, return_inverse=True)
    vals = np.bincount(inv, V, minlength=len(uniq))
    nz = vals != 0
    uniq, vals = uniq[nz], vals[nz]
    J2 = uniq % (2 * n)
    I2 = (uniq // (2 * n)) % (2 * n)
    K2 = uniq // (4 * n * n)
    return MatrixFamily(count, 2 * n, K2, I2, J2, vals)


def _real_part(ids, i, j, a):
    """Hermitian triplets for ``Re(V^H A V)`` given triplets of ``A``."""
    a = np.asarray(a, dtype=complex)
    return (np.concatenate([ids, ids]), np.concatenate([i, j]), np.concatenate([j, i]),
            np.concatenate([a / 2, np.conj(a) / 2]))


def _imag_part(ids, i, j, a):
    """Hermitian triplets for ``Im(V^H A V)`` given triplets of ``A``."""
    a = np.asarray(a, dtype=complex)
    return (np.concatenate([ids, ids]), np.concatenate([i, j]), np.concatenate([j, i]),
            np.concatenate([a / 2j, -np.conj(a) / 2j]))


@dataclasses.dataclass(frozen=True)
class OpfMatrixSet:
    """All quadratic forms of an ``n``-bus network.

    Families indexed by bus: ``Y`` (active injection), ``Ybar`` (reactive
    injection), ``M`` (squared magnitude).  Families indexed by branch:
    ``Yf``/``Ybarf`` (power entering at the from end), ``Yt``/``Ybart``
    (power entering at the to end), ``Mlm`` (``|Vl||Vm| cos``) and
    ``Mbar`` (``|Vl||Vm| sin`` of the angle difference ``theta_l - theta_m``).
    ``N_ref`` picks out ``Vq_ref**2``.
    """

    n: int
    Y: MatrixFamily
    Ybar: MatrixFamily
    M: MatrixFamily
    Yf: MatrixFamily
    Ybarf: MatrixFamily
    Yt: MatrixFamily
    Ybart: MatrixFamily
    Mlm: MatrixFamily
    Mbar: MatrixFamily
    N_ref: sp.csr_matrix
    f: np.ndarray
    t: np.ndarray

    @property
    def nbranch(self) -> int:
        return len(self.f)


def build_matrix_set(case: NetworkCase, adm: AdmittanceMatrix | None = None) -> OpfMatrixSet:
    if adm is None:
        adm = build_admittance(case)
    n = case.n
    Y = adm.Y.tocoo()
    # bus k: S_k = V^H A V with A = (row k of Y)^H placed in column k
    bid, bi, bj, ba = Y.row, Y.col, Y.row, np.conj(Y.data)
    fam_P = _embed(n, n, *_real_part(bid, bi, bj, ba))
    fam_Q = _embed(n, n, *_imag_part(bid, bi, bj, ba))
    k = np.arange(n)
    fam_M = _embed(n, n, k, k, k, np.ones(n))

    f, t = adm.f, adm.t
    e = np.arange(len(f))
    # from end: A = conj(yff) e_f e_f' + conj(yft) e_t e_f'
    fid = np.concatenate([e, e])
    fi = np.concatenate([f, t])
    fj = np.concatenate([f, f])
    fa = np.concatenate([np.conj(adm.yff), np.conj(adm.yft)])
    # to end: A = conj(ytf) e_f e_t' + conj(ytt) e_t e_t'
    ti = np.concatenate([f, t])
    tj = np.concatenate([t, t])
    ta = np.concatenate([np.conj(adm.ytf), np.conj(adm.ytt)])
    nb = len(f)
    fam_Pf = _embed(nb, n, *_real_part(fid, fi, fj, fa))
    fam_Qf = _embed(nb, n, *_imag_part(fid, fi, fj, fa))
    fam_Pt = _embed(nb, n, *_real_part(fid, ti, tj, ta))
    fam_Qt = _embed(nb, n, *_imag_part(fid, ti, tj, ta))
    # V_l conj(V_m) = V^H (e_m e_l') V
    ones = np.ones(nb, dtype=complex)
    fam_C = _embed(nb, n, *_real_part(e, t, f, ones))
    fam_S = _embed(nb, n, *_imag_part(e, t, f, ones))

    r = case.ref_pos
    N_ref = sp.csr_matrix(([1.0], ([n + r], [n + r])), shape=(2 * n, 2 * n))
    return OpfMatrixSet(n, fam_P, fam_Q, fam_M, fam_Pf, fam_Qf, fam_Pt, fam_Qt, fam_C, fam_S, N_ref, f, t)


def polar_to_x(vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    return np.concatenate([vm * np.cos(va), vm * np.sin(va)])


def x_to_complex(x: np.ndarray) -> np.ndarray:
    n = len(x) // 2
    return x[:n] + 1j * x[n:]


def complex_to_x(V: np.ndarray) -> np.ndarray:
    return np.concatenate([V.real, V.imag])


def eval_traces(mats: OpfMatrixSet, x: np.ndarray) -> dict[str, np.ndarray]:
    """Every quadratic form at ``W = x x'`` without forming ``W``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * mats.n,):
        raise ValueError(f"voltage vector must have length {2 * mats.n}")
    return {
        "P": mats.Y.quad(x),
        "Q": mats.Ybar.quad(x),
        "V2": mats.M.quad(x),
        "Pf": mats.Yf.quad(x),
        "Qf": mats.Ybarf.quad(x),
        "Pt": mats.Yt.quad(x),
        "Qt": mats.Ybart.quad(x),
        "cos": mats.Mlm.quad(x),
        "sin": mats.Mbar.quad(x),
        "ref": np.array([x @ (mats.N_ref @ x)]),
    }
