"""Dense conic solving, rank-1 extraction and the SCA outer loop.

A :class:`ConicProgram` is ``min c'x  s.t.  G_i x + s_i = h_i, s_i in K_i,
A x = b`` where each cone ``K_i`` is the nonnegative orthant (``"l"``), a
second-order cone (``"q"``, first entry is the bound) or a PSD cone of order
``k`` (``"s"``, ``k*k`` rows, column-major).  It is solved by the
Nesterov-Todd scaled primal-dual interior-point method in cvxopt.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class ConeBlock:
    kind: str
    G: np.ndarray
    h: np.ndarray

    @property
    def order(self) -> int:
        if self.kind == "s":
            k = int(round(np.sqrt(len(self.h))))
            return k
        return len(self.h)


@dataclass
class ConicProgram:
    c: np.ndarray
    blocks: list[ConeBlock] = field(default_factory=list)
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    warm_start: np.ndarray | None = None

    @property
    def num_vars(self) -> int:
        return len(self.c)

    def add(self, kind: str, G, h) -> None:
        G = np.atleast_2d(np.asarray(G, float))
        h = np.atleast_1d(np.asarray(h, float))
        self.blocks.append(ConeBlock(kind, G, h))

    def check(self) -> None:
        n = self.num_vars
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective must be finite")
        for i, blk in enumerate(self.blocks):
            if blk.kind not in ("l", "q", "s"):
                raise ValueError(f"block {i}: unknown cone {blk.kind!r}")
            if blk.G.shape != (len(blk.h), n):
                raise ValueError(f"block {i}: G is {blk.G.shape}, expected ({len(blk.h)}, {n})")
            if blk.kind == "s" and blk.order**2 != len(blk.h):
                raise ValueError(f"block {i}: PSD block size {len(blk.h)} is not a square")
        if (self.A is None) != (self.b is None):
            raise ValueError("A and b must be given together")
        if self.A is not None and self.A.shape != (len(self.b), n):
            raise ValueError(f"A is {self.A.shape}, expected ({len(self.b)}, {n})")


@dataclass
class Solution:
    x: np.ndarray | None
    objective: float
    status: str
    violation: float
    iterations: int
    gap: float = float("nan")


def cone_violation(prog: ConicProgram, x: np.ndarray) -> float:
    """Largest cone/equality violation of ``x`` (0 when feasible)."""
    worst = 0.0
    for blk in prog.blocks:
        s = blk.h - blk.G @ x
        if blk.kind == "l":
            worst = max(worst, float(np.max(-s, initial=0.0)))
        elif blk.kind == "q":
            worst = max(worst, float(np.linalg.norm(s[1:]) - s[0]))
        else:
            k = blk.order
            S = s.reshape(k, k, order="F")
            worst = max(worst, float(-np.linalg.eigvalsh(0.5 * (S + S.T))[0]))
    if prog.A is not None:
        worst = max(worst, float(np.max(np.abs(prog.A @ x - prog.b), initial=0.0)))
    return max(worst, 0.0)


def solve_conic(prog: ConicProgram, tol: float = 1e-8, max_iters: int = 100) -> Solution:
    from cvxopt import matrix, solvers

    prog.check()
    order = {"l": 0, "q": 1, "s": 2}
    blocks = sorted(prog.blocks, key=lambda blk: order[blk.kind])
    dims = {"l": sum(len(b.h) for b in blocks if b.kind == "l"),
            "q": [len(b.h) for b in blocks if b.kind == "q"],
            "s": [b.order for b in blocks if b.kind == "s"]}
    n = prog.num_vars
    G = np.vstack([b.G for b in blocks]) if blocks else np.zeros((0, n))
    h = np.concatenate([b.h for b in blocks]) if blocks else np.zeros(0)
    args = [matrix(prog.c.astype(float)), matrix(G), matrix(h), dims]
    kwargs = {}
    if prog.A is not None:
        kwargs = {"A": matrix(prog.A.astype(float)), "b": matrix(prog.b.astype(float))}
    options = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": max_iters}
    try:
        res = solvers.conelp(*args, options=options, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        raise SolverError(f"conic solver failed: {exc}") from exc

    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(res["status"], "iteration-limit")
    x = None if res["x"] is None else np.array(res["x"]).ravel()
    if status in ("infeasible", "unbounded"):
        return Solution(None, float("nan"), status, float("nan"), res["iterations"])
    viol = cone_violation(prog, x)
    return Solution(x, float(prog.c @ x), status, viol, res["iterations"],
                    gap=float(res.get("gap") or float("nan")))


def dump_program(prog: ConicProgram) -> str:
    """Plain-text listing of a program for offline inspection."""
    lines = [f"variables {prog.num_vars}", "objective " + " ".join(f"{v:.17g}" for v in prog.c)]
    for i, blk in enumerate(prog.blocks):
        lines.append(f"block {i} {blk.kind} rows {len(blk.h)}")
        for row, rhs in zip(blk.G, blk.h):
            lines.append("  " + " ".join(f"{v:.17g}" for v in row) + f" | {rhs:.17g}")
    if prog.A is not None:
        lines.append(f"equalities {len(prog.b)}")
        for row, rhs in zip(prog.A, prog.b):
            lines.append("  " + " ".join(f"{v:.17g}" for v in row) + f" = {rhs:.17g}")
    return "\n".join(lines) + "\n"


# -- Hermitian matrices as real vectors -------------------------------------

def hermitian_basis(m: int) -> np.ndarray:
    """Real basis of m x m Hermitian matrices, shape (m*m, m, m)."""
    basis = []
    for i in range(m):
        E = np.zeros((m, m), complex)
        E[i, i] = 1
        basis.append(E)
    for i in range(m):
        for j in range(i + 1, m):
            E = np.zeros((m, m), complex)
            E[i, j] = E[j, i] = 1
            basis.append(E)
            E = np.zeros((m, m), complex)
            E[i, j], E[j, i] = -1j, 1j
            basis.append(E)
    return np.array(basis)


def real_embedding(X: np.ndarray) -> np.ndarray:
    """[[Re X, -Im X], [Im X, Re X]]; PSD exactly when X is."""
    return np.block([[X.real, -X.imag], [X.imag, X.real]])


# -- rank-1 extraction ------------------------------------------------------

class Rank1(NamedTuple):
    vector: np.ndarray
    residual: float
    randomized: bool


def extract_rank1(X: np.ndarray, tol: float = 1e-6, threshold: float = 1e-3,
                  rescale: Callable[[np.ndarray], np.ndarray | None] | None = None,
                  score: Callable[[np.ndarray], float] | None = None,
                  samples: int = 100, rng: np.random.Generator | None = None) -> Rank1:
    """Principal-eigenvector recovery of ``X ≈ w w^H``.

    ``residual = 1 - lambda_1 / tr(X)``.  Above ``threshold``, Gaussian
    randomisation draws ``samples`` candidates from CN(0, X); each goes through
    ``rescale`` (returns a feasible vector or None) and the lowest ``score``
    (default: squared norm) is kept.
    """
    X = 0.5 * (X + X.conj().T)
    lam, U = np.linalg.eigh(X)
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam[0] < -tol * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam[0]:.3e})")
    trace = float(np.sum(np.clip(lam, 0, None)))
    if trace <= 0:
        return Rank1(np.zeros(X.shape[0], complex), 0.0, False)
    residual = max(0.0, 1.0 - lam[-1] / trace)
    principal = np.sqrt(max(lam[-1], 0.0)) * U[:, -1]
    if residual <= threshold:
        return Rank1(principal, residual, False)

    rng = rng or np.random.default_rng(0)
    score = score or (lambda v: float(np.vdot(v, v).real))
    root = U * np.sqrt(np.clip(lam, 0, None))
    candidates = [principal]
    m = X.shape[0]
    z = (rng.standard_normal((samples, m)) + 1j * rng.standard_normal((samples, m))) / np.sqrt(2)
    candidates.extend(z @ root.T)
    best, best_score = None, np.inf
    for cand in candidates:
        v = rescale(cand) if rescale is not None else cand
        if v is None:
            continue
        s = score(v)
        if s < best_score:
            best, best_score = v, s
    if best is None:
        best = principal
    log.info("rank-1 residual %.3e above threshold; randomisation kept score %.4g", residual, best_score)
    return Rank1(best, residual, True)


# -- successive convex approximation ---------------------------------------

@dataclass
class ScaState:
    iterate: object
    expansion_point: object
    history: list[float]
    iterations: int
    converged: bool
    notes: list[str] = field(default_factory=list)


class SurrogateInfeasible(SolverError):
    pass


def sca_loop(solve_surrogate: Callable[[object], object], init: object,
             objective: Callable[[object], float], eps: float = 1e-3, max_iter: int = 50,
             blend: Callable[[object, object, float], object] | None = None,
             relative: bool = True) -> ScaState:
    """Iterate ``x <- argmin surrogate(x_k)`` until the true objective settles.

    ``objective`` is the exact (non-surrogate) merit.  With ``blend`` a
    backtracking search along ``x_k -> x_new`` keeps the merit history
    non-increasing.  Stops when the change is within ``eps`` (relative to
    ``max(1, |obj|)`` when ``relative``) or after ``max_iter`` surrogates.
    """
    x = init
    f = objective(x)
    history = [f]
    notes: list[str] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            cand = solve_surrogate(x)
        except SurrogateInfeasible:
            if it == 1:
                raise
            notes.append(f"surrogate infeasible at iteration {it}")
            break
        f_new = objective(cand)
        if blend is not None and not f_new <= f:
            step = 0.5
            while step > 1e-3:
                trial = blend(x, cand, step)
                f_trial = objective(trial)
                if f_trial <= f:
                    cand, f_new = trial, f_trial
                    break
                step *= 0.5
            else:
                notes.append(f"no descent at iteration {it}")
                converged = True
                break
        scale = max(1.0, abs(f)) if relative else 1.0
        change = abs(f - f_new)
        if f_new <= f or blend is None:
            x, f = cand, f_new
            history.append(f)
        if change <= eps * scale:
            converged = True
            break
    return ScaState(iterate=x, expansion_point=x, history=history, iterations=it,
                    converged=converged, notes=notes)


def check_linearization(f: Callable[[np.ndarray], float], surrogate: Callable[[np.ndarray], float],
                        point, radius: float, n_dirs: int = 32,
                        rng: np.random.Generator | None = None) -> float:
    """Worst ``|f(x) - surrogate(x)| / r^2`` over random directions at distance ``radius``.

    A first-order-accurate surrogate keeps this ratio bounded as ``radius``
    shrinks.
    """
    rng = rng or np.random.default_rng(0)
    x0 = np.asarray(point, float)
    worst = abs(f(x0) - surrogate(x0)) / max(radius**2, 1e-300)
    for _ in range(n_dirs):
        d = rng.standard_normal(x0.shape)
        d *= radius / np.linalg.norm(d)
        worst = max(worst, abs(f(x0 + d) - surrogate(x0 + d)) / radius**2)
    return float(worst)


def solve_cvxpy(problem, solvers: Sequence[str] = ("CLARABEL", "SCS")):
    """Solve a cvxpy problem, falling back to the next solver on failure."""
    import cvxpy as cp

    last = None
    for name in solvers:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=name)
        except cp.error.SolverError as exc:
            last = exc
            continue
        if problem.status in ("optimal", "optimal_inaccurate"):
            return problem.status
        last = problem.status
    return last
