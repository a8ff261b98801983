"""Convex quadratic programming with dual certificates.

Solves
    minimize    0.5 * sum_j h_j * v_j**2  +  c @ v
    subject to  A @ v <= u
                v_j >= 0 for every masked j
with an infeasible-start primal-dual interior-point method using a
predictor-corrector step. The Hessian is restricted to a nonnegative
diagonal; every objective assembled in this package is separable, so
nothing more general is needed. High-accuracy multipliers for both the
inequality rows and the variable bounds are part of the result, since
downstream pricing is built directly from them.

The method is deterministic: identical inputs produce bitwise-identical
outputs on the same platform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from threadpoolctl import threadpool_limits

from .model import ValidationError

__all__ = [
    "OPTIMAL",
    "MAX_ITER",
    "INFEASIBLE",
    "QpProblem",
    "QpSolution",
    "KktBlocks",
    "solve_qp",
    "kkt_residuals",
]

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

_STEP_SHRINK = 0.99995


@dataclass(frozen=True)
class QpProblem:
    """Data of one convex QP over inequality rows and sign constraints.

    scale_offset is a constant that was dropped from the objective during
    assembly; it only enters the relative scaling of the convergence test,
    so tolerances track the meaningful objective magnitude rather than an
    arbitrary shift.
    """

    quad_diag: np.ndarray  # (n,) nonnegative curvature, objective 0.5*h*v^2
    linear: np.ndarray  # (n,)
    A: sp.csr_matrix  # (m, n) rows encode A @ v <= u
    u: np.ndarray  # (m,)
    nonneg_mask: np.ndarray  # (n,) bool, True where v_j >= 0 is enforced
    scale_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "quad_diag", np.asarray(self.quad_diag, dtype=float))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "nonneg_mask", np.asarray(self.nonneg_mask, dtype=bool))
        object.__setattr__(self, "A", sp.csr_matrix(self.A))

    @property
    def n(self) -> int:
        return self.linear.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def objective(self, v):
        return 0.5 * float(self.quad_diag @ (v * v)) + float(self.linear @ v)


@dataclass
class QpSolution:
    primal: np.ndarray
    ineq_duals: np.ndarray  # (m,) >= 0
    bound_duals: np.ndarray  # (n,) >= 0, zero on unmasked entries
    status: str
    kkt_residual: float
    objective: float
    iterations: int = 0
    message: str = ""


@dataclass
class KktBlocks:
    """Max-norm violation of each optimality block for a primal/dual pair."""

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    def max_violation(self) -> float:
        return max(
            self.stationarity,
            self.primal_feasibility,
            self.dual_feasibility,
            self.complementarity,
        )


def _check_problem(p: QpProblem):
    if p.quad_diag.shape != (p.n,) or p.nonneg_mask.shape != (p.n,):
        raise ValidationError("quad_diag/nonneg_mask dimensions do not match linear term")
    if p.A.shape != (p.m, p.n):
        raise ValidationError(f"A has shape {p.A.shape}, expected ({p.m}, {p.n})")
    if np.any(p.quad_diag < 0):
        raise ValidationError("quad_diag must be nonnegative for convexity")
    for name, arr in (("quad_diag", p.quad_diag), ("linear", p.linear), ("u", p.u)):
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains NaN or Inf")
    if p.A.nnz and not np.all(np.isfinite(p.A.data)):
        raise ValidationError("constraint matrix contains NaN or Inf")


def _scaled_residuals(p, v, s, y, w):
    """(primal, dual, complementarity) residuals, each scaled to O(1) data."""
    if p.m:
        r_p = p.A @ v + s - p.u
        res_p = np.max(np.abs(r_p)) / (1.0 + np.max(np.abs(p.u)))
    else:
        res_p = 0.0
    r_d = p.quad_diag * v + p.linear + (p.A.T @ y if p.m else 0.0) - w
    res_d = np.max(np.abs(r_d), initial=0.0) / (1.0 + np.max(np.abs(p.linear), initial=0.0))
    comp = 0.0
    if p.m:
        comp = max(comp, np.max(s * y, initial=0.0))
    if p.nonneg_mask.any():
        comp = max(comp, np.max(v[p.nonneg_mask] * w[p.nonneg_mask], initial=0.0))
    res_c = comp / (1.0 + abs(p.objective(v) + p.scale_offset))
    return res_p, res_d, res_c


def _farkas_certificate(p: QpProblem, y) -> bool:
    """True when y (normalized) certifies that {A v <= u, v_N >= 0} is empty.

    A valid certificate has y >= 0 with A^T y >= 0 on sign-constrained
    variables, A^T y = 0 on free ones, and u @ y < 0.
    """
    total = float(np.sum(y))
    if not (total > 0 and np.isfinite(total)):
        return False
    yhat = y / total
    t = p.A.T @ yhat
    gap = float(p.u @ yhat)
    free = ~p.nonneg_mask
    if np.any(np.abs(t[free]) > 1e-9):
        return False
    if np.any(t[p.nonneg_mask] < -1e-9):
        return False
    return gap <= -1e-7 * (1.0 + np.max(np.abs(p.u)))


def _max_step(x, dx):
    """Largest alpha in (0, 1] with x + alpha*dx >= 0 for positive x."""
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-x[neg] / dx[neg])))


def _shift_positive(a, b):
    """Joint positivity shift for a complementary pair of vectors.

    Moves both vectors into the positive orthant and then pads them so the
    initial complementarity products are balanced against their sums; this
    keeps the first iterations stable across badly scaled data.
    """
    da = max(-1.5 * float(a.min(initial=0.0)), 0.0)
    db = max(-1.5 * float(b.min(initial=0.0)), 0.0)
    a1 = a + da
    b1 = b + db
    dot = float(a1 @ b1)
    if dot <= 0.0:
        return a1 + 1.0, b1 + 1.0
    a1 += 0.5 * dot / max(float(b1.sum()), 1e-12)
    b1 += 0.5 * dot / max(float(a1.sum()), 1e-12)
    return a1, b1


def _starting_point(p: QpProblem, newton_factory):
    """Proximal least-squares starting point with positivity shifts.

    Solves the unit-regularized saddle system for a primal/dual guess (a
    single extra factorization), then shifts the complementary pairs into
    the positive orthant. Falls back to an all-ones point if the guess
    cannot be computed.
    """
    n, m = p.n, p.m
    mask = p.nonneg_mask
    v0 = None
    if m:
        ones_n = np.ones(n)
        ones_m = np.ones(m)
        try:
            if newton_factory is not None:
                solve0 = newton_factory(ones_n, ones_m)
            else:
                K = sp.bmat(
                    [[sp.identity(n), p.A.T], [p.A, -sp.identity(m)]], format="csc"
                )
                lu = splu(K)

                def solve0(r1, r2, lu=lu):
                    sol = lu.solve(np.concatenate([r1, r2]))
                    return sol[:n], sol[n:]

            v0, y0 = solve0(-p.linear, p.u)
        except (np.linalg.LinAlgError, RuntimeError):
            v0 = None
    if v0 is None or not np.all(np.isfinite(v0)):
        v = np.where(mask, 1.0, 0.0)
        w = np.where(mask, 1.0, 0.0)
        if m:
            s = np.maximum(p.u - p.A @ v, 1.0)
            y = np.ones(m)
        else:
            s = np.zeros(0)
            y = np.zeros(0)
        return v, s, y, w

    s0 = p.u - p.A @ v0
    w0 = p.quad_diag * v0 + p.linear + p.A.T @ y0
    a = np.concatenate([s0, v0[mask]])
    b = np.concatenate([y0, w0[mask]])
    a1, b1 = _shift_positive(a, b)
    s = a1[:m]
    y = b1[:m]
    v = v0.copy()
    v[mask] = a1[m:]
    w = np.zeros(n)
    w[mask] = b1[m:]
    return v, s, y, w


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 200, newton_factory=None) -> QpSolution:
    """Solve the QP to the requested scaled KKT tolerance.

    Returns status ``optimal`` with all scaled residuals <= tol,
    ``infeasible`` when a Farkas certificate of primal infeasibility is
    found, and ``max_iter`` otherwise (best iterate is still returned).

    newton_factory, when given, supplies a structure-exploiting solver for
    the per-iteration saddle system: called as newton_factory(diag1, d_s)
    with the positive diagonals of [[diag1, A^T], [A, -diag(d_s)]], it must
    return a callable mapping (rhs1, rhs2) to (dv, dy). Any LinAlgError
    from it falls back to the generic sparse factorization.
    """
    with threadpool_limits(limits=1):
        return _solve_qp(p, tol, max_iter, newton_factory)


def _solve_qp(p: QpProblem, tol, max_iter, newton_factory) -> QpSolution:
    # The iteration works on many small dense blocks; multithreaded BLAS
    # oversubscribes badly there and breaks bitwise reproducibility, so the
    # public entry point pins the pools to one thread.
    _check_problem(p)
    if tol <= 0 or max_iter < 1:
        raise ValidationError("tol must be positive and max_iter >= 1")
    n, m = p.n, p.m
    mask = p.nonneg_mask
    n_bnd = int(mask.sum())

    if n == 0:
        return QpSolution(
            primal=np.zeros(0), ineq_duals=np.zeros(m), bound_duals=np.zeros(0),
            status=OPTIMAL, kkt_residual=0.0, objective=0.0,
        )

    # Unconstrained coordinates admit a closed form; a free variable with
    # zero curvature, nonzero cost and no row coverage is unbounded.
    if m == 0 and n_bnd == 0:
        h = p.quad_diag
        if np.any((h == 0) & (p.linear != 0)):
            return QpSolution(
                primal=np.zeros(n), ineq_duals=np.zeros(0), bound_duals=np.zeros(n),
                status=MAX_ITER, kkt_residual=np.inf, objective=0.0,
                message="objective unbounded below in a free direction",
            )
        v = np.where(h > 0, -p.linear / np.where(h > 0, h, 1.0), 0.0)
        return QpSolution(
            primal=v, ineq_duals=np.zeros(0), bound_duals=np.zeros(n),
            status=OPTIMAL, kkt_residual=0.0, objective=p.objective(v),
        )

    h = p.quad_diag
    c = p.linear
    A = p.A

    v, s, y, w = _starting_point(p, newton_factory)

    n_comp = max(1, m + n_bnd)
    best = None
    best_res = np.inf
    best_comp = np.inf
    prev_comp = np.inf
    mu_hist = []

    status = MAX_ITER
    message = ""
    it = 0
    polish_left = 0
    polish_target = max(1e-3 * tol, 2e-14)
    for it in range(1, max_iter + 1):
        res_p, res_d, res_c = _scaled_residuals(p, v, s, y, w)
        res = max(res_p, res_d, res_c)
        if status == OPTIMAL:
            # Polish phase: complementarity is what degrades downstream
            # absolute residuals, so drive it further while primal/dual
            # residuals hold tolerance, and keep the lowest-comp iterate.
            within = res_p <= tol and res_d <= tol
            if within and res_c < best_comp:
                best_comp = res_c
                best = (v.copy(), s.copy(), y.copy(), w.copy())
            if (not within) or res_c <= polish_target or polish_left == 0 \
                    or res_c > 0.9 * prev_comp:
                break
            polish_left -= 1
            prev_comp = res_c
        else:
            if res < best_res:
                best_res = res
                best = (v.copy(), s.copy(), y.copy(), w.copy())
            if res <= tol:
                status = OPTIMAL
                polish_left = 10
                best_comp = res_c
                prev_comp = res_c
                if res_c <= polish_target:
                    break
            else:
                if m and _farkas_certificate(p, y):
                    status = INFEASIBLE
                    message = "primal infeasibility certificate found"
                    break
                if not np.isfinite(res) or res > 1e14:
                    message = "iterates diverged"
                    break
        mu = (float(s @ y) + float(v[mask] @ w[mask])) / n_comp
        mu_hist.append(mu)
        if status != OPTIMAL and len(mu_hist) > 12 and mu > 0.5 * mu_hist[-12] \
                and res_p <= 10 * tol and res_d <= 10 * tol:
            # Complementarity stalled at numerical floor; accept best iterate.
            break

        r_d = h * v + c + (A.T @ y if m else 0.0) - w
        r_p = (A @ v + s - p.u) if m else np.zeros(0)

        d_w = np.zeros(n)
        d_w[mask] = w[mask] / v[mask]
        diag1 = h + d_w

        if m:
            d_s = s / y
            saddle = None
            if newton_factory is not None:
                try:
                    saddle = newton_factory(diag1, d_s)
                except np.linalg.LinAlgError:
                    saddle = None
            if saddle is None:
                K = sp.bmat(
                    [[sp.diags(diag1), A.T], [A, -sp.diags(d_s)]], format="csc"
                )
                lu = None
                reg = 0.0
                for attempt in range(6):
                    try:
                        lu = splu(K if reg == 0.0 else K + sp.diags(
                            np.concatenate([np.full(n, reg), np.full(m, -reg)]), format="csc"
                        ))
                        break
                    except RuntimeError:
                        reg = 1e-10 if reg == 0.0 else reg * 100.0
                if lu is None:
                    message = "KKT factorization failed"
                    break

                def saddle(rhs1, rhs2, lu=lu):
                    sol = lu.solve(np.concatenate([rhs1, rhs2]))
                    return sol[:n], sol[n:]

            def newton(rc_s, rc_v):
                rhs1 = -r_d.copy()
                rhs1[mask] -= rc_v / v[mask]
                rhs2 = -r_p + rc_s / y
                dv, dy = saddle(rhs1, rhs2)
                ds = -(rc_s + s * dy) / y
                dw = np.zeros(n)
                dw[mask] = -(rc_v + w[mask] * dv[mask]) / v[mask]
                return dv, ds, dy, dw
        else:
            if np.any(diag1 <= 0):
                message = "singular reduced system (free variable without curvature)"
                break

            def newton(rc_s, rc_v):
                rhs1 = -r_d.copy()
                rhs1[mask] -= rc_v / v[mask]
                dv = rhs1 / diag1
                dw = np.zeros(n)
                dw[mask] = -(rc_v + w[mask] * dv[mask]) / v[mask]
                return dv, np.zeros(0), np.zeros(0), dw

        # Predictor (pure Newton on complementarity).
        rc_s_aff = s * y
        rc_v_aff = v[mask] * w[mask]
        dv_a, ds_a, dy_a, dw_a = newton(rc_s_aff, rc_v_aff)
        alpha_p = min(_max_step(s, ds_a) if m else 1.0, _max_step(v[mask], dv_a[mask]))
        alpha_d = min(_max_step(y, dy_a) if m else 1.0, _max_step(w[mask], dw_a[mask]))
        mu_aff = (
            float((s + alpha_p * ds_a) @ (y + alpha_d * dy_a)) if m else 0.0
        )
        mu_aff += float((v[mask] + alpha_p * dv_a[mask]) @ (w[mask] + alpha_d * dw_a[mask]))
        mu_aff /= n_comp
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # Corrector with centering.
        rc_s = s * y + ds_a * dy_a - sigma * mu if m else np.zeros(0)
        rc_v = v[mask] * w[mask] + dv_a[mask] * dw_a[mask] - sigma * mu
        dv, ds, dy, dw = newton(rc_s, rc_v)

        alpha_p = min(_max_step(s, ds) if m else 1.0, _max_step(v[mask], dv[mask]))
        alpha_d = min(_max_step(y, dy) if m else 1.0, _max_step(w[mask], dw[mask]))
        alpha_p = min(1.0, _STEP_SHRINK * alpha_p)
        alpha_d = min(1.0, _STEP_SHRINK * alpha_d)
        if alpha_p < 1e-13 and alpha_d < 1e-13:
            message = "step length collapsed"
            break

        v = v + alpha_p * dv
        s = s + alpha_p * ds if m else s
        y = y + alpha_d * dy if m else y
        w = w + alpha_d * dw

    if status == MAX_ITER and m and _farkas_certificate(p, y):
        status = INFEASIBLE
        message = "primal infeasibility certificate found"

    vb, sb, yb, wb = best if best is not None else (v, s, y, w)
    res_final = max(_scaled_residuals(p, vb, sb, yb, wb))

    return QpSolution(
        primal=vb,
        ineq_duals=yb,
        bound_duals=wb,
        status=status,
        kkt_residual=float(res_final),
        objective=p.objective(vb),
        iterations=it,
        message=message,
    )


def kkt_residuals(p: QpProblem, s: QpSolution) -> KktBlocks:
    """Evaluate the optimality blocks for an arbitrary primal/dual pair.

    Pure report: nothing is mutated and no tolerance is applied.
    """
    v = np.asarray(s.primal, dtype=float)
    y = np.asarray(s.ineq_duals, dtype=float)
    w = np.asarray(s.bound_duals, dtype=float)
    if v.shape != (p.n,) or w.shape != (p.n,) or y.shape != (p.m,):
        raise ValidationError(
            f"dimension mismatch: primal {v.shape}, bound_duals {w.shape}, "
            f"ineq_duals {y.shape} for problem with n={p.n}, m={p.m}"
        )
    mask = p.nonneg_mask

    r_d = p.quad_diag * v + p.linear + (p.A.T @ y if p.m else 0.0) - w
    stationarity = float(np.max(np.abs(r_d), initial=0.0))

    primal = 0.0
    slack = np.zeros(0)
    if p.m:
        slack = p.A @ v - p.u
        primal = float(np.max(slack, initial=0.0))
    if mask.any():
        primal = max(primal, float(np.max(-v[mask], initial=0.0)))
    primal = max(primal, 0.0)

    dual = max(
        float(np.max(-y, initial=0.0)),
        float(np.max(-w[mask], initial=0.0)) if mask.any() else 0.0,
        0.0,
    )

    comp = 0.0
    if p.m:
        comp = float(np.max(np.abs(y * slack), initial=0.0))
    if mask.any():
        comp = max(comp, float(np.max(np.abs(w[mask] * v[mask]), initial=0.0)))

    return KktBlocks(
        stationarity=stationarity,
        primal_feasibility=primal,
        dual_feasibility=dual,
        complementarity=comp,
    )
