"""SPD and saddle-point linear solves plus a damped Newton driver."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverError, NoConvergenceError, NumericInputError, StagnationError

LINEAR_TOL = 1e-11
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
MIN_STEP = 1e-12
DIRECT_LIMIT = 20000


def _norm(v):
    return float(np.linalg.norm(v))


def factorize(A):
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise LinearSolverError(f"sparse factorization failed: {exc}") from exc


def check_residual(A, x, b, tol):
    r = _norm(A @ x - b)
    nb = _norm(b)
    if not np.isfinite(r) or r > tol * max(nb, np.finfo(float).tiny):
        if nb == 0.0 and r == 0.0:
            return r
        raise LinearSolverError(f"linear residual {r:.3e} exceeds {tol:.1e} * |b| = {tol * nb:.3e}")
    return r


def _direct(A, b, tol, refine=3):
    lu = factorize(A)
    x = lu.solve(b)
    for _ in range(refine):
        r = b - A @ x
        if _norm(r) <= tol * _norm(b):
            break
        x = x + lu.solve(r)
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("direct solve produced non-finite values (singular matrix?)")
    return x


def solve_spd(A, b, tol=LINEAR_TOL, maxiter=None):
    """Solve an SPD system to relative residual ``tol``.

    Direct factorisation below ``DIRECT_LIMIT`` unknowns, Jacobi-preconditioned
    CG above.
    """
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    A = sp.csr_matrix(A)
    if A.shape[0] < DIRECT_LIMIT:
        x = _direct(A, b, tol)
    else:
        d = A.diagonal()
        P = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=P, maxiter=maxiter or 10 * A.shape[0])
        if info != 0:
            r = _norm(A @ x - b)
            raise NoConvergenceError(f"CG did not converge in {info} iterations", residual=r)
    check_residual(A, x, b, tol)
    return x


@dataclass
class BlockSystem:
    """[[A, Bt], [C, D]] [x; z] = [f; g]."""

    A: object
    Bt: object
    C: object
    f: np.ndarray
    g: np.ndarray
    D: object = None

    def __post_init__(self):
        n, k = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (n, n) or self.Bt.shape != (n, k) or self.C.shape[1] != n:
            raise ValueError(
                f"inconsistent block shapes A{self.A.shape} Bt{self.Bt.shape} C{self.C.shape}"
            )
        if self.D is not None and self.D.shape != (k, k):
            raise ValueError(f"D has shape {self.D.shape}, expected {(k, k)}")
        if len(self.f) != n or len(self.g) != k:
            raise ValueError("right-hand side lengths do not match the blocks")

    @property
    def matrix(self):
        D = self.D if self.D is not None else sp.csr_matrix((self.C.shape[0],) * 2)
        return sp.bmat([[sp.csr_matrix(self.A), sp.csr_matrix(self.Bt)], [sp.csr_matrix(self.C), sp.csr_matrix(D)]], format="csr")

    @property
    def rhs(self):
        return np.concatenate([self.f, self.g])


def solve_saddle(system, tol=LINEAR_TOL):
    """Solve a block system; returns ``(x, z)``.

    Small systems are factorised monolithically. Large ones use GMRES on the
    Schur complement D - C A^{-1} Bt with an exact factorisation of A.
    """
    n = system.A.shape[0]
    b = system.rhs
    if not np.any(b):
        return np.zeros(n), np.zeros(len(system.g))
    K = system.matrix
    if K.shape[0] < DIRECT_LIMIT:
        x = _direct(K, b, tol)
    else:
        luA = factorize(system.A)
        Bt = sp.csr_matrix(system.Bt)
        C = sp.csr_matrix(system.C)
        D = system.D

        def schur(z):
            out = -(C @ luA.solve(Bt @ z))
            return out + D @ z if D is not None else out

        k = C.shape[0]
        S = spla.LinearOperator((k, k), matvec=schur)
        rhs = system.g - C @ luA.solve(system.f)
        z, info = spla.gmres(S, rhs, rtol=tol, atol=0.0, restart=200, maxiter=50)
        if info != 0:
            raise LinearSolverError(f"Schur complement iteration stagnated (info={info})")
        x = np.concatenate([luA.solve(system.f - Bt @ z), z])
    check_residual(K, x, b, tol)
    return x[:n], x[n:]


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norm: float = np.inf
    converged: bool = False
    steps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)


def fd_jacobian(residual, x, r0=None, rel_step=1e-7):
    """Dense central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        hj = rel_step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = hj
        cols.append((residual(x + e) - residual(x - e)) / (2 * hj))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _linear_step(J, r):
    if sp.issparse(J):
        return _direct(sp.csr_matrix(J), -r, LINEAR_TOL)
    try:
        return la.solve(np.atleast_2d(J), -r)
    except la.LinAlgError as exc:
        raise LinearSolverError(f"singular Jacobian: {exc}") from exc


def newton_solve(residual, jacobian, x0, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, damping=True):
    """Damped Newton iteration on ``residual(x) = 0``.

    ``jacobian`` is a callable returning a dense or sparse matrix, or None for
    finite differences. With damping the step is halved until the residual
    norm decreases. Returns ``(x, NewtonReport)``.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NumericInputError("residual is not finite at the initial guess")
    rn = _norm(r)
    report = NewtonReport(residual_norm=rn, residuals=[rn])
    if rn <= tol:
        report.converged = True
        return x, report
    jac = jacobian if jacobian is not None else (lambda z: fd_jacobian(residual, z))
    for it in range(1, max_iter + 1):
        dx = _linear_step(jac(x), r)
        step = 1.0
        while True:
            x_try = x + step * dx
            r_try = np.asarray(residual(x_try), dtype=float)
            rn_try = _norm(r_try)
            ok = np.isfinite(rn_try)
            if ok and (not damping or rn_try < rn):
                break
            if not ok and not damping:
                raise NumericInputError(f"residual became non-finite at Newton iteration {it}")
            step *= 0.5
            if step < MIN_STEP:
                report.iterations = it
                raise StagnationError(
                    f"Newton stagnated at iteration {it}: residual {rn:.3e}",
                    residual=rn,
                    report=report,
                )
        x, r, rn = x_try, r_try, rn_try
        report.iterations = it
        report.steps.append(step)
        report.residuals.append(rn)
        report.residual_norm = rn
        if rn <= tol:
            report.converged = True
            return x, report
    raise NoConvergenceError(
        f"Newton did not converge in {max_iter} iterations (residual {rn:.3e})",
        residual=rn,
        report=report,
    )
