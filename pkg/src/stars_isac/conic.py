"""Dense primal-dual interior-point solver for small semidefinite programs.

Problems are written with a light modelling layer: variables are Hermitian
or real-symmetric matrix blocks or scalars, expressions are affine in the
variables, and constraints are linear matrix inequalities (LMIs), scalar
inequalities and scalar equalities.  Complex LMIs enter the solver through
the real embedding ``[[Re H, -Im H], [Im H, Re H]]``.

Internally every problem is reduced to

    minimize    c^T x
    subject to  F_b(x) = F_b0 + sum_i x_i F_bi  >= 0   (one PSD block per LMI)
                a0 + A x >= 0                         (nonnegative orthant)

after the equalities have been eliminated through a null-space
parametrisation.  This is the dual standard form of SDP and is solved by a
Mehrotra predictor-corrector path-following method with Nesterov-Todd
scaling and a dense Cholesky factorisation of the Schur complement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
STAGNATION_WINDOW = 20


class ConicError(RuntimeError):
    """Raised when a problem is malformed."""


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def complex_to_real_embedding(H: np.ndarray, check: bool = True) -> np.ndarray:
    """Return the real symmetric 2n x 2n embedding of a Hermitian matrix.

    ``H >= 0`` holds iff the embedding is PSD; every eigenvalue of ``H``
    appears twice in the embedding.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if check and not np.allclose(H, H.conj().T, atol=1e-10 * max(1.0, np.abs(H).max())):
        raise ValueError("matrix is not Hermitian")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def _embed_stack(F: np.ndarray) -> np.ndarray:
    # (..., k, k) complex -> (..., 2k, 2k) real
    re, im = F.real, F.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


# ---------------------------------------------------------------------------
# Modelling layer
# ---------------------------------------------------------------------------


def hermitian_basis(n: int) -> np.ndarray:
    """Basis ``B`` (n^2, n, n) with ``H = sum_i x_i B_i`` for real ``x``.

    Ordering: diagonal entries, then real parts of the strict upper
    triangle, then imaginary parts of the strict upper triangle.
    """
    iu = np.triu_indices(n, 1)
    npair = iu[0].size
    B = np.zeros((n + 2 * npair, n, n), dtype=complex)
    B[np.arange(n), np.arange(n), np.arange(n)] = 1.0
    k = np.arange(npair)
    B[n + k, iu[0], iu[1]] = 1.0
    B[n + k, iu[1], iu[0]] = 1.0
    B[n + npair + k, iu[0], iu[1]] = 1j
    B[n + npair + k, iu[1], iu[0]] = -1j
    return B


def symmetric_basis(n: int) -> np.ndarray:
    iu = np.triu_indices(n, 1)
    npair = iu[0].size
    B = np.zeros((n + npair, n, n))
    B[np.arange(n), np.arange(n), np.arange(n)] = 1.0
    k = np.arange(npair)
    B[n + k, iu[0], iu[1]] = 1.0
    B[n + k, iu[1], iu[0]] = 1.0
    return B


@dataclass
class Variable:
    name: str
    kind: str  # "hermitian", "symmetric", "scalar"
    size: int
    psd: bool
    basis: np.ndarray  # (ndof, *shape)
    offset: int = 0

    @property
    def ndof(self) -> int:
        return self.basis.shape[0]


class Expr:
    """Affine expression: ``const + sum_var sum_i x_i coef[var][i]``."""

    __array_priority__ = 100

    def __init__(self, const, terms: dict[str, np.ndarray] | None = None):
        self.const = np.asarray(const, dtype=complex)
        self.terms = terms or {}

    @property
    def shape(self) -> tuple:
        return self.const.shape

    def _coerce(self, other) -> "Expr":
        if isinstance(other, Expr):
            return other
        return Expr(np.broadcast_to(np.asarray(other, dtype=complex), self.shape).copy())

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return Expr(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self):
        return Expr(-self.const, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, a):
        if isinstance(a, Expr):
            raise ConicError("product of two expressions is not affine")
        return Expr(self.const * a, {k: v * a for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / a)

    def __matmul__(self, M):
        M = np.asarray(M)
        return Expr(self.const @ M, {k: v @ M for k, v in self.terms.items()})

    def __rmatmul__(self, M):
        M = np.asarray(M)
        return Expr(M @ self.const, {k: M @ v for k, v in self.terms.items()})

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        full = (slice(None),) + idx
        return Expr(self.const[idx], {k: v[full] for k, v in self.terms.items()})

    @property
    def H(self) -> "Expr":
        axes = lambda a: np.swapaxes(a, -1, -2).conj()  # noqa: E731
        return Expr(axes(self.const), {k: axes(v) for k, v in self.terms.items()})

    @property
    def real(self) -> "Expr":
        return Expr(self.const.real, {k: v.real for k, v in self.terms.items()})

    def trace(self) -> "Expr":
        return Expr(np.trace(self.const), {k: np.trace(v, axis1=-2, axis2=-1) for k, v in self.terms.items()})

    def value(self, values: dict[str, np.ndarray], basis: dict[str, Variable]) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.terms.items():
            out = out + np.tensordot(values[k], v, axes=1)
        return out


def inner(K: np.ndarray, X: Expr) -> Expr:
    """Real-linear functional ``Re sum_mn K[m, n] X[m, n]`` of a matrix expression."""
    K = np.asarray(K)
    return Expr(
        np.real(np.sum(K * X.const)),
        {k: np.real(np.tensordot(v, K, axes=([-2, -1], [0, 1]))) for k, v in X.terms.items()},
    )


def bmat(rows: Sequence[Sequence]) -> Expr:
    """Assemble a matrix expression from nested lists of scalar expressions."""
    nr, nc = len(rows), len(rows[0])
    const = np.zeros((nr, nc), dtype=complex)
    terms: dict[str, np.ndarray] = {}
    for i, row in enumerate(rows):
        if len(row) != nc:
            raise ConicError("ragged block matrix")
        for j, e in enumerate(row):
            if not isinstance(e, Expr):
                const[i, j] += complex(e)
                continue
            if e.shape != ():
                raise ConicError("bmat expects scalar entries")
            const[i, j] += e.const
            for k, v in e.terms.items():
                if k not in terms:
                    terms[k] = np.zeros((v.shape[0], nr, nc), dtype=complex)
                terms[k][:, i, j] += v
    return Expr(const, terms)


def block_expr(blocks: Sequence[Sequence]) -> Expr:
    """Assemble a matrix expression from a grid of matrix expressions/constants."""
    sizes_r = []
    for row in blocks:
        for b in row:
            if b is not None:
                sizes_r.append(np.shape(b.const if isinstance(b, Expr) else b)[0])
                break
    sizes_c = []
    for j in range(len(blocks[0])):
        for row in blocks:
            b = row[j]
            if b is not None:
                sizes_c.append(np.shape(b.const if isinstance(b, Expr) else b)[1])
                break
    R, C = sum(sizes_r), sum(sizes_c)
    ro = np.concatenate([[0], np.cumsum(sizes_r)])
    co = np.concatenate([[0], np.cumsum(sizes_c)])
    const = np.zeros((R, C), dtype=complex)
    terms: dict[str, np.ndarray] = {}
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            sl = (slice(ro[i], ro[i + 1]), slice(co[j], co[j + 1]))
            if not isinstance(b, Expr):
                const[sl] += np.asarray(b)
                continue
            const[sl] += b.const
            for k, v in b.terms.items():
                if k not in terms:
                    terms[k] = np.zeros((v.shape[0], R, C), dtype=complex)
                terms[k][(slice(None),) + sl] += v
    return Expr(const, terms)


@dataclass
class SolveReport:
    status: str  # optimal | infeasible | unbounded | max_iter
    objective: float
    values: dict[str, np.ndarray]
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    mu_history: list[float] = field(default_factory=list)
    dual_objective: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


class ConicProblem:
    """Small SDP assembled from affine expressions.

    Example:
        >>> p = ConicProblem()
        >>> x = p.scalar("x")
        >>> p.add_ge(x - 3.0)
        >>> p.minimize(x)
        >>> round(float(p.solve().values["x"]), 6)
        3.0
    """

    def __init__(self):
        self.variables: dict[str, Variable] = {}
        self.lmis: list[Expr] = []
        self.ge: list[Expr] = []
        self.eq: list[Expr] = []
        self.objective: Expr = Expr(0.0)
        self._ndof = 0

    # variables ---------------------------------------------------------
    def _add(self, var: Variable) -> Expr:
        if var.name in self.variables:
            raise ConicError(f"duplicate variable {var.name!r}")
        var.offset = self._ndof
        self._ndof += var.ndof
        self.variables[var.name] = var
        expr = Expr(np.zeros(var.basis.shape[1:], dtype=complex), {var.name: var.basis.astype(complex)})
        if var.psd:
            if var.kind == "scalar":
                self.ge.append(expr)
            else:
                self.lmis.append(expr)
        return expr

    def hermitian(self, name: str, n: int, psd: bool = True) -> Expr:
        return self._add(Variable(name, "hermitian", n, psd, hermitian_basis(n)))

    def symmetric(self, name: str, n: int, psd: bool = True) -> Expr:
        return self._add(Variable(name, "symmetric", n, psd, symmetric_basis(n)))

    def scalar(self, name: str, nonneg: bool = False) -> Expr:
        return self._add(Variable(name, "scalar", 1, nonneg, np.ones((1,))))

    def var(self, name: str) -> Expr:
        v = self.variables[name]
        return Expr(np.zeros(v.basis.shape[1:], dtype=complex), {name: v.basis.astype(complex)})

    # constraints -------------------------------------------------------
    def add_lmi(self, expr: Expr) -> None:
        if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
            raise ConicError("LMI must be square")
        self.lmis.append(expr)

    def add_ge(self, expr: Expr) -> None:
        """Add ``expr >= 0`` (scalar or elementwise on a vector)."""
        self.ge.append(expr)

    def add_eq(self, expr: Expr) -> None:
        self.eq.append(expr)

    def minimize(self, expr: Expr) -> None:
        if expr.shape != ():
            raise ConicError("objective must be scalar")
        self.objective = expr

    # compilation -------------------------------------------------------
    def _dense(self, expr: Expr) -> tuple[np.ndarray, np.ndarray]:
        shape = expr.shape
        coef = np.zeros((self._ndof,) + shape, dtype=complex)
        for k, v in expr.terms.items():
            var = self.variables[k]
            coef[var.offset : var.offset + var.ndof] += v
        return expr.const, coef

    def compile(self) -> "CompiledProblem":
        m = self._ndof
        c0, c = self._dense(self.objective)
        blocks = []
        for lmi in self.lmis:
            F0, Fi = self._dense(lmi)
            F0 = 0.5 * (F0 + F0.conj().T)
            Fi = 0.5 * (Fi + np.swapaxes(Fi, -1, -2).conj())
            if np.abs(F0.imag).max(initial=0) > 0 or np.abs(Fi.imag).max(initial=0) > 0:
                F0, Fi = _embed_stack(F0), _embed_stack(Fi)
            blocks.append((F0.real.copy(), Fi.real.copy()))
        a0 = []
        A = []
        for g in self.ge:
            g0, gi = self._dense(g)
            a0.append(np.atleast_1d(g0.real))
            A.append(gi.real.reshape(m, -1).T)
        e0, E = [], []
        for e in self.eq:
            f0, fi = self._dense(e)
            e0.append(np.atleast_1d(f0.real))
            E.append(fi.real.reshape(m, -1).T)
            if np.abs(f0.imag).max(initial=0) > 0 or np.abs(fi.imag).max(initial=0) > 0:
                e0.append(np.atleast_1d(f0.imag))
                E.append(fi.imag.reshape(m, -1).T)
        return CompiledProblem(
            c=c.real.copy(),
            c0=float(np.real(c0)),
            blocks=blocks,
            a0=np.concatenate(a0) if a0 else np.zeros(0),
            A=np.vstack(A) if A else np.zeros((0, m)),
            e0=np.concatenate(e0) if e0 else np.zeros(0),
            E=np.vstack(E) if E else np.zeros((0, m)),
        )

    def solve(self, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SolveReport:
        cp = self.compile()
        res = cp.solve(tol=tol, max_iter=max_iter)
        values = {}
        for name, var in self.variables.items():
            xv = res.x[var.offset : var.offset + var.ndof]
            val = np.tensordot(xv, var.basis, axes=1)
            if var.kind == "hermitian":
                val = 0.5 * (val + val.conj().T)
            elif var.kind == "symmetric":
                val = 0.5 * (val + val.T)
            else:
                val = float(np.real(val))
            values[name] = val
        return SolveReport(
            status=res.status,
            objective=res.objective,
            values=values,
            primal_residual=res.primal_residual,
            dual_residual=res.dual_residual,
            gap=res.gap,
            iterations=res.iterations,
            mu_history=res.mu_history,
            dual_objective=res.dual_objective,
        )


def trace_inverse_epigraph(problem: ConicProblem, E: Expr, name: str = "W") -> Expr:
    """Add ``[[W, I], [I, E]] >= 0`` and return ``Tr(W)``.

    At optimality of ``minimize Tr(W)`` the auxiliary ``W`` equals ``E^{-1}``.
    """
    k = E.shape[0]
    W = problem.symmetric(name, k, psd=False)
    problem.add_lmi(block_expr([[W, np.eye(k)], [np.eye(k), E]]))
    return W.trace().real


# ---------------------------------------------------------------------------
# Compiled problem and interior-point method
# ---------------------------------------------------------------------------


@dataclass
class _RawResult:
    status: str
    x: np.ndarray
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    mu_history: list[float]
    X: list[np.ndarray]
    z: np.ndarray


@dataclass
class CompiledProblem:
    """``min c^T x + c0  s.t.  F_b(x) >= 0, a0 + A x >= 0, e0 + E x = 0``."""

    c: np.ndarray
    c0: float
    blocks: list[tuple[np.ndarray, np.ndarray]]
    a0: np.ndarray
    A: np.ndarray
    e0: np.ndarray
    E: np.ndarray

    @property
    def m(self) -> int:
        return self.c.size

    # -- text dump ----------------------------------------------------------
    def dumps(self) -> str:
        doc = {
            "format": "stars-isac-sdp/1",
            "m": self.m,
            "c": self.c.tolist(),
            "c0": self.c0,
            "blocks": [{"size": F0.shape[0], "F0": F0.tolist(), "F": Fi.tolist()} for F0, Fi in self.blocks],
            "lp": {"a0": self.a0.tolist(), "A": self.A.tolist()},
            "eq": {"e0": self.e0.tolist(), "E": self.E.tolist()},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def loads(cls, text: str) -> "CompiledProblem":
        doc = json.loads(text)
        m = int(doc["m"])
        blocks = [
            (np.asarray(b["F0"], float), np.asarray(b["F"], float).reshape(m, b["size"], b["size"]))
            for b in doc["blocks"]
        ]
        return cls(
            c=np.asarray(doc["c"], float),
            c0=float(doc["c0"]),
            blocks=blocks,
            a0=np.asarray(doc["lp"]["a0"], float),
            A=np.asarray(doc["lp"]["A"], float).reshape(-1, m),
            e0=np.asarray(doc["eq"]["e0"], float),
            E=np.asarray(doc["eq"]["E"], float).reshape(-1, m),
        )

    # -- solve ----------------------------------------------------------------
    def solve(self, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> _RawResult:
        m = self.m
        # eliminate equalities: x = xp + Z w
        if self.E.shape[0]:
            xp, *_ = np.linalg.lstsq(self.E, -self.e0, rcond=None)
            eq_res = np.linalg.norm(self.E @ xp + self.e0)
            if eq_res > 1e-9 * (1 + np.linalg.norm(self.e0)):
                return _RawResult("infeasible", xp, np.nan, np.nan, eq_res, np.nan, np.nan, 0, [], [], np.zeros(0))
            Z = sla.null_space(self.E)
        else:
            xp = np.zeros(m)
            Z = np.eye(m)
        n = Z.shape[1]
        c = Z.T @ self.c
        c0 = self.c0 + self.c @ xp
        blocks = []
        for F0, Fi in self.blocks:
            k = F0.shape[0]
            flat = Fi.reshape(m, -1)
            G0 = F0 + (xp @ flat).reshape(k, k)
            Gi = (Z.T @ flat).reshape(n, k, k)
            blocks.append((G0, Gi))
        a0 = self.a0 + self.A @ xp
        A = self.A @ Z
        res = _ipm(c, blocks, a0, A, tol=tol, max_iter=max_iter)
        res.x = xp + Z @ res.x
        res.objective = res.objective + c0
        res.dual_objective = res.dual_objective + c0
        return res


def _max_step_psd(L: np.ndarray, dX: np.ndarray) -> float:
    Y = sla.solve_triangular(L, dX, lower=True)
    Y = sla.solve_triangular(L, Y.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (Y + Y.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _chol(X: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (X + X.T))
        w = np.maximum(w, 1e-300 + 1e-15 * w.max())
        return np.linalg.cholesky((V * w) @ V.T)


def _ipm(c, blocks, a0, A, tol, max_iter) -> _RawResult:
    """Mehrotra predictor-corrector with NT scaling.

    Standard pair used below (``y`` is the user variable ``x``):
        (P) min <C, X>  s.t.  <A_i, X> = b_i,  X >= 0
        (D) max b^T y   s.t.  C - sum_i y_i A_i = S >= 0
    with ``C = F_0``, ``A_i = -F_i`` and ``b = -c``.
    """
    m = c.size
    b = -c
    Cs = [F0 for F0, _ in blocks]
    ks = [C.shape[0] for C in Cs]
    # flattened constraint maps, sparse when that pays off
    Af = []
    for (_, Fi), k in zip(blocks, ks):
        flat = -Fi.reshape(m, k * k)
        if k >= 8 and np.count_nonzero(flat) < 0.05 * flat.size:
            Af.append(sp.csr_matrix(flat))
        else:
            Af.append(flat)
    Cl = a0
    Al = -A  # rows: lp constraints, cols: variables
    nl = Cl.size
    nu = sum(ks) + nl

    normb = np.linalg.norm(b)
    normC = np.sqrt(sum(np.sum(C * C) for C in Cs) + Cl @ Cl)

    # initial point (SDPT3-style)
    X, S = [], []
    for C, Ai, k in zip(Cs, Af, ks):
        nA = (np.sqrt(np.asarray(Ai.multiply(Ai).sum(axis=1)).ravel()) if sp.issparse(Ai) else np.linalg.norm(Ai, axis=1)) if m else np.zeros(0)
        xi = max(10.0, np.sqrt(k), k * np.max((1 + np.abs(b)) / (1 + nA), initial=0.0))
        eta = max(10.0, np.sqrt(k), np.max(nA, initial=0.0), np.linalg.norm(C))
        X.append(xi * np.eye(k))
        S.append(eta * np.eye(k))
    if nl:
        nA = np.linalg.norm(Al, axis=1)
        xi = max(10.0, np.max((1 + np.abs(b).max(initial=0)) / (1 + nA), initial=0))
        eta = max(10.0, np.max(nA, initial=0.0), np.linalg.norm(Cl))
        z = np.full(nl, xi)
        s = np.full(nl, eta)
    else:
        z = np.zeros(0)
        s = np.zeros(0)
    y = np.zeros(m)

    mu_hist: list[float] = []
    best_res = np.inf
    best_it = 0
    status = "max_iter"
    rp_n = rd_n = gap_rel = np.inf
    pobj = dobj = np.nan

    def AX(Xs, zz):
        out = np.zeros(m)
        for Ai, Xb in zip(Af, Xs):
            out += np.asarray(Ai @ Xb.ravel()).ravel()
        if nl:
            out += Al.T @ zz
        return out

    def ATy(yy):
        mats = [np.asarray(Ai.T @ yy).reshape(k, k) for Ai, k in zip(Af, ks)]
        return mats, (Al @ yy if nl else np.zeros(0))

    it = 0
    for it in range(max_iter + 1):
        Aty_b, Aty_l = ATy(y)
        rp = b - AX(X, z)
        Rd = [C - Sb - M for C, Sb, M in zip(Cs, S, Aty_b)]
        rdl = Cl - s - Aty_l
        pobj = sum(np.sum(C * Xb) for C, Xb in zip(Cs, X)) + Cl @ z
        dobj = b @ y
        comp = sum(np.sum(Xb * Sb) for Xb, Sb in zip(X, S)) + z @ s
        mu = comp / max(nu, 1)
        mu_hist.append(mu)
        rp_n = np.linalg.norm(rp) / (1 + normb)
        rd_n = np.sqrt(sum(np.sum(R * R) for R in Rd) + rdl @ rdl) / (1 + normC)
        gap_rel = max(comp, abs(pobj - dobj)) / (1 + abs(pobj) + abs(dobj))
        if rp_n < tol and rd_n < tol and gap_rel < tol:
            status = "optimal"
            break
        # infeasibility certificates (approximate)
        if pobj < 0 and np.linalg.norm(AX(X, z)) < 1e-8 * -pobj and -pobj > 1e8 * (1 + abs(dobj)):
            status = "infeasible"
            break
        if dobj > 0:
            Ay = np.sqrt(sum(np.sum((M + Sb) ** 2) for M, Sb in zip(Aty_b, S)) + np.sum((Aty_l + s) ** 2))
            if Ay < 1e-8 * dobj and dobj > 1e8 * (1 + abs(pobj)):
                status = "unbounded"
                break
        total = max(rp_n, rd_n, gap_rel)
        if total < 0.5 * best_res:
            best_res, best_it = total, it
        elif it - best_it > STAGNATION_WINDOW and gap_rel > 1e3 * tol:
            status = "infeasible"
            break
        if it == max_iter:
            break

        # NT scaling
        Gs, Ws, lams, Lx = [], [], [], []
        for Xb, Sb in zip(X, S):
            LX = _chol(Xb)
            LS = _chol(Sb)
            U_, d, Vt = np.linalg.svd(LS.T @ LX)
            G = (LX @ Vt.T) / np.sqrt(d)
            Gs.append(G)
            Ws.append(G @ G.T)
            lams.append(d)
            Lx.append(LX)
        wl = z / s if nl else np.zeros(0)

        M = np.zeros((m, m))
        for Af_i, W, k in zip(Af, Ws, ks):
            if sp.issparse(Af_i):
                KW = np.kron(W, W)
                M += np.asarray(Af_i @ np.asarray(Af_i @ KW).T)
            else:
                T = np.matmul(W, np.matmul(Af_i.reshape(m, k, k), W))
                M += Af_i @ T.reshape(m, -1).T
        if nl:
            M += Al.T @ (wl[:, None] * Al)
        M = 0.5 * (M + M.T)
        try:
            cf = sla.cho_factor(M, lower=True, check_finite=False)
            solveM = lambda r: sla.cho_solve(cf, r, check_finite=False)  # noqa: E731
        except np.linalg.LinAlgError:
            reg = 1e-13 * max(1.0, np.trace(M) / max(m, 1))
            try:
                cf = sla.cho_factor(M + reg * np.eye(m), lower=True, check_finite=False)
                solveM = lambda r: sla.cho_solve(cf, r, check_finite=False)  # noqa: E731
            except np.linalg.LinAlgError:
                Mp = np.linalg.pinv(M, hermitian=True)
                solveM = lambda r: Mp @ r  # noqa: E731

        WRdW = [W @ R @ W for W, R in zip(Ws, Rd)]

        def direction(Rc, rcl):
            rhs = rp - AX(Rc, rcl) + AX(WRdW, wl * rdl if nl else rdl)
            dy = solveM(rhs)
            Aty_b2, Aty_l2 = ATy(dy)
            dS = [R - M2 for R, M2 in zip(Rd, Aty_b2)]
            dX = [Rcb - W @ dSb @ W for Rcb, W, dSb in zip(Rc, Ws, dS)]
            dX = [0.5 * (D + D.T) for D in dX]
            dsl = rdl - Aty_l2
            dzl = rcl - wl * dsl
            return dy, dX, dS, dzl, dsl

        def steps(dX, dS, dzl, dsl):
            ap = min([_max_step_psd(L, D) for L, D in zip(Lx, dX)] + [_max_step_lp(z, dzl), np.inf])
            ad = min([_max_step_psd(_chol(Sb), D) for Sb, D in zip(S, dS)] + [_max_step_lp(s, dsl), np.inf])
            return ap, ad

        # predictor
        Rc = [-Xb for Xb in X]
        rcl = -z
        dy, dX, dS, dzl, dsl = direction(Rc, rcl)
        ap, ad = steps(dX, dS, dzl, dsl)
        ap, ad = min(1.0, ap), min(1.0, ad)
        comp_aff = sum(np.sum((Xb + ap * Dx) * (Sb + ad * Ds)) for Xb, Dx, Sb, Ds in zip(X, dX, S, dS))
        comp_aff += (z + ap * dzl) @ (s + ad * dsl)
        sigma = min(1.0, max(0.0, comp_aff / comp)) ** 3 if comp > 0 else 0.0

        # corrector
        Rc = []
        for G, lam, Dx, Ds in zip(Gs, lams, dX, dS):
            Gi = np.linalg.inv(G)
            dXt = Gi @ Dx @ Gi.T
            dSt = G.T @ Ds @ G
            P = dXt @ dSt
            Y = -0.5 * (P + P.T)
            Y[np.diag_indices_from(Y)] += sigma * mu - lam**2
            Rct = 2.0 * Y / (lam[:, None] + lam[None, :])
            Rc.append(G @ Rct @ G.T)
        rcl = (sigma * mu - z * s - dzl * dsl) / s if nl else np.zeros(0)
        dy, dX, dS, dzl, dsl = direction(Rc, rcl)
        ap, ad = steps(dX, dS, dzl, dsl)
        gamma = 0.9 + 0.09 * min(1.0, ap, ad)
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)

        X = [Xb + ap * D for Xb, D in zip(X, dX)]
        X = [0.5 * (Xb + Xb.T) for Xb in X]
        z = z + ap * dzl
        y = y + ad * dy
        S = [Sb + ad * D for Sb, D in zip(S, dS)]
        S = [0.5 * (Sb + Sb.T) for Sb in S]
        s = s + ad * dsl

    # objective of the user problem is -dobj (min c^T x = -(max b^T y))
    return _RawResult(
        status=status,
        x=y,
        objective=float(-dobj),
        dual_objective=float(-pobj),
        primal_residual=float(rd_n),
        dual_residual=float(rp_n),
        gap=float(gap_rel),
        iterations=it,
        mu_history=mu_hist,
        X=X,
        z=z,
    )
