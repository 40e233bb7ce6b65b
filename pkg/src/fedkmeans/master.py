"""Dual-variable update algorithms and their shared trust-region solver.

Three updates are provided: a plain subgradient step, the bundle trust method
(BTM), and quasi-Newton dual ascent (QNDA).  Both BTM's direction-finding
problem and QNDA's model maximization reduce to the same convex program over
an epigraph variable w:

    maximize  w
    s.t.      ||x - center||^2 <= alpha                    (trust region)
              w <= g_l . (x - center) - beta_l   for all l (bundle cuts)
              w <= 1/2 (x-center)^T B (x-center) + g . (x-center)   (QNDA only)

which :func:`solve_trust_region_qp` handles with a log-barrier interior-point
method (tiny problems: dimension <= ~50, <= ~50 cuts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Bundle",
    "BundleEntry",
    "HessianApprox",
    "MasterSolution",
    "TrustRegionProblem",
    "TrustRegionSolverError",
    "bfgs_update",
    "btm_direction",
    "bundle_push",
    "linearization_errors",
    "qnda_update",
    "sg_update",
    "solve_trust_region_qp",
    "step_size",
]


# ------------------------------ subgradient ---------------------------------


def step_size(alpha0: float, t: int) -> float:
    """Diminishing step/trust parameter alpha0 / sqrt(t)."""
    if t < 1 or alpha0 <= 0:
        raise ValueError("require t >= 1 and alpha0 > 0")
    return alpha0 / math.sqrt(t)


def sg_update(lam: np.ndarray, g: np.ndarray, alpha: float) -> np.ndarray:
    """Subgradient ascent step lam + alpha * g."""
    lam = np.asarray(lam, dtype=float)
    g = np.asarray(g, dtype=float)
    if lam.shape != g.shape:
        raise ValueError("dual vector and subgradient must have the same shape")
    return lam + alpha * g


# -------------------------------- bundle ------------------------------------


@dataclass(frozen=True)
class BundleEntry:
    iteration: int
    lam: np.ndarray
    subgradient: np.ndarray
    dual_value: float


@dataclass(frozen=True)
class Bundle:
    """Sliding window of (dual point, subgradient, dual value) triples."""

    capacity: int
    entries: tuple[BundleEntry, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("bundle capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)


def bundle_push(bundle: Bundle, entry: BundleEntry) -> Bundle:
    """Append an entry, evicting everything older than tau iterations."""
    cutoff = entry.iteration - bundle.capacity + 1
    kept = tuple(e for e in bundle.entries if e.iteration >= cutoff)
    return Bundle(capacity=bundle.capacity, entries=kept + (entry,))


def linearization_errors(bundle: Bundle, lam_t: np.ndarray, d_t: float) -> np.ndarray:
    """beta_(l,t) = d(lam_t) - d(lam_l) - g_l . (lam_t - lam_l) per entry."""
    if not bundle.entries:
        raise ValueError("bundle is empty")
    lam_t = np.asarray(lam_t, dtype=float)
    return np.array([
        d_t - e.dual_value - float(e.subgradient @ (lam_t - e.lam))
        for e in bundle.entries
    ])


# ------------------------------ BFGS update ---------------------------------


@dataclass(frozen=True)
class HessianApprox:
    """Symmetric negative-definite curvature approximation of the dual."""

    B: np.ndarray

    @staticmethod
    def initial(dim: int) -> "HessianApprox":
        return HessianApprox(B=-np.eye(dim))


def bfgs_update(B: np.ndarray, s: np.ndarray, y: np.ndarray, skip_tol: float = 1e-12) -> np.ndarray:
    """BFGS update of a negative-definite approximation.

    Skipped (B returned unchanged) unless y.s < -skip_tol * ||y|| ||s||; for a
    concave function the curvature pair should satisfy y.s < 0, and skipping
    preserves negative definiteness when it does not.
    """
    B = np.asarray(B, dtype=float)
    s = np.asarray(s, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    ys = float(y @ s)
    if ys >= -skip_tol * np.linalg.norm(y) * np.linalg.norm(s):
        return B
    Bs = B @ s
    sBs = float(s @ Bs)
    out = B + np.outer(y, y) / ys - np.outer(Bs, Bs) / sBs
    return 0.5 * (out + out.T)  # symmetrize against round-off drift


# ------------------------- trust-region master solver ------------------------


@dataclass(frozen=True)
class TrustRegionProblem:
    """Epigraph form shared by the BTM and QNDA master problems.

    ``quad``/``lin`` describe the concave quadratic model cap (QNDA); both are
    ``None`` for BTM, leaving a purely piecewise-linear model.  ``alpha`` is
    the squared-radius bound of the trust region, exactly as the update rules
    state it.
    """

    center: np.ndarray
    alpha: float
    cut_normals: np.ndarray   # (m, n) subgradients g_l
    cut_offsets: np.ndarray   # (m,) linearization errors beta_l
    quad: np.ndarray | None = None   # negative-definite B
    lin: np.ndarray | None = None    # subgradient at the center
    const: float = 0.0               # model value at the center

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        G = np.atleast_2d(np.asarray(self.cut_normals, dtype=float))
        beta = np.asarray(self.cut_offsets, dtype=float).ravel()
        if self.alpha <= 0:
            raise ValueError("trust-region parameter must be positive")
        if G.shape[0] != beta.shape[0] or G.shape[1] != center.shape[0]:
            raise ValueError("cut dimensions are inconsistent")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "cut_normals", G)
        object.__setattr__(self, "cut_offsets", beta)
        if (self.quad is None) != (self.lin is None):
            raise ValueError("quad and lin must be given together")
        if self.quad is not None:
            object.__setattr__(self, "quad", np.asarray(self.quad, dtype=float))
            object.__setattr__(self, "lin", np.asarray(self.lin, dtype=float).ravel())


@dataclass(frozen=True)
class MasterSolution:
    argmax: np.ndarray        # the maximizing point (absolute coordinates)
    model_value: float        # model value at the argmax (including const)
    kkt_residual: float
    active_cuts: tuple[int, ...]


class TrustRegionSolverError(RuntimeError):
    """Master solver failed to reach the requested KKT accuracy."""


def solve_trust_region_qp(problem: TrustRegionProblem, kkt_tol: float = 1e-8,
                          max_newton: int = 200) -> MasterSolution:
    """Interior-point solve of the epigraph master problem.

    Works in shifted coordinates z = (delta, w) with delta = x - center.
    Constraint functions f_i(z) <= 0:

      ball:   |delta|^2 - alpha
      cut l:  w - g_l . delta + beta_l
      model:  w - 1/2 delta^T B delta - g . delta        (if quad is given)

    The objective is max w.  A primal-dual path-following iteration with a
    fixed centering weight runs first; if it stalls short of the tolerance
    (which happens on degenerate bundles with many near-parallel cuts), a
    Mehrotra predictor-corrector pass retries.  Both candidates go through an
    active-set polish and the best KKT residual wins; the solver fails loudly
    if it still exceeds ``kkt_tol``.
    """
    n = problem.center.shape[0]
    # Near-duplicate cuts (bundle entries from almost-identical dual points)
    # make the KKT system singular; collapse rows of (g_l, beta_l) that agree
    # to relative precision 1e-7 before solving.
    rows = np.hstack([problem.cut_normals, problem.cut_offsets[:, None]])
    keep: list[int] = []
    for i in range(rows.shape[0]):
        scale = max(1.0, float(np.linalg.norm(rows[i])))
        if all(float(np.linalg.norm(rows[i] - rows[j])) > 1e-7 * scale for j in keep):
            keep.append(i)
    G = problem.cut_normals[keep]
    beta = problem.cut_offsets[keep]
    m_cuts = G.shape[0]
    has_model = problem.quad is not None

    def constraints(z):
        """Values and gradients of all f_i at z."""
        delta, w = z[:n], z[n]
        vals = np.empty(1 + m_cuts + (1 if has_model else 0))
        vals[0] = float(delta @ delta) - problem.alpha
        vals[1:1 + m_cuts] = w - G @ delta + beta
        grads = np.zeros((vals.shape[0], n + 1))
        grads[0, :n] = 2.0 * delta
        grads[1:1 + m_cuts, :n] = -G
        grads[1:1 + m_cuts, n] = 1.0
        if has_model:
            Bd = problem.quad @ delta
            vals[-1] = w - 0.5 * float(delta @ Bd) - float(problem.lin @ delta)
            grads[-1, :n] = -Bd - problem.lin
            grads[-1, n] = 1.0
        return vals, grads

    def constraint_hessian_weighted(weights):
        """sum_i weights_i * Hess f_i (only ball and model are curved)."""
        H = np.zeros((n + 1, n + 1))
        H[:n, :n] += weights[0] * 2.0 * np.eye(n)
        if has_model:
            H[:n, :n] += weights[-1] * (-problem.quad)
        return H

    obj_grad = np.zeros(n + 1)
    obj_grad[n] = -1.0  # minimizing -w
    n_con = 1 + m_cuts + (1 if has_model else 0)

    def scored(z, lam):
        vals, grads = constraints(z)
        stationarity = obj_grad + grads.T @ lam
        kkt = max(float(np.linalg.norm(stationarity, ord=np.inf)),
                  float(np.max(lam * np.abs(vals))),
                  float(max(0.0, np.max(vals))))
        return z, lam, kkt

    result = None
    for scheme in ("fixed", "mehrotra"):
        z, lam_pd = _pdip_core(problem, constraints, constraint_hessian_weighted,
                               obj_grad, n_con, n, scheme, max_newton)
        candidate = scored(z, lam_pd)
        polished = _polish_kkt(z, lam_pd, constraints, obj_grad, n_con)
        if polished is not None and polished[2] < candidate[2]:
            candidate = polished
        if result is None or candidate[2] < result[2]:
            result = candidate
        if result[2] <= kkt_tol:
            break

    if result[2] > kkt_tol:
        # Fully degenerate vertices (more active constraints than variables)
        # can defeat both interior-point passes; an SQP restart from the best
        # iterate identifies the active set, and the polish then recovers
        # clean multipliers.
        refined = _sqp_fallback(result[0], constraints, obj_grad, n_con)
        if refined is not None:
            candidate = scored(*refined)
            polished = _polish_kkt(*refined, constraints, obj_grad, n_con)
            if polished is not None and polished[2] < candidate[2]:
                candidate = polished
            if candidate[2] < result[2]:
                result = candidate

    z, lam, kkt = result
    if kkt > kkt_tol:
        raise TrustRegionSolverError(f"KKT residual {kkt:.3e} exceeds {kkt_tol:.1e}")
    vals, _ = constraints(z)
    active = tuple(keep[i] for i in range(m_cuts)
                   if vals[1 + i] > -1e-8 * max(1.0, abs(z[n])))
    return MasterSolution(
        argmax=problem.center + z[:n],
        model_value=float(z[n]) + problem.const,
        kkt_residual=kkt,
        active_cuts=active,
    )


def _pdip_core(problem, constraints, hess_weighted, obj_grad, n_con, n,
               scheme, max_newton):
    """One primal-dual path-following pass; returns the best iterate seen.

    ``scheme`` selects the centering rule: "fixed" uses sigma = 0.1 until the
    complementarity is small, "mehrotra" uses an affine predictor and adaptive
    sigma with a second-order corrector.
    """
    beta = problem.cut_offsets
    # Strictly feasible start: delta = 0, w below every cut and the model cap.
    z = np.zeros(n + 1)
    z[n] = min(0.0, float(-beta.max())) - 1.0 - abs(float(beta.max()))
    vals, grads = constraints(z)
    slack = -vals
    lam_pd = np.ones(n_con)
    best = (np.inf, z, lam_pd)
    stall = 0
    for _ in range(max_newton):
        vals, grads = constraints(z)
        r_stat = obj_grad + grads.T @ lam_pd
        r_prim = vals + slack
        mu = float(lam_pd @ slack) / n_con
        merit = max(float(np.linalg.norm(r_stat, ord=np.inf)),
                    float(np.linalg.norm(r_prim, ord=np.inf)), mu)
        # Late iterations can degrade once slacks underflow; keep the best
        # iterate seen and stop when the merit stops improving.
        if merit < best[0]:
            best = (merit, z.copy(), lam_pd.copy())
            stall = 0
        else:
            stall += 1
        if merit < 1e-13 or stall >= 30:
            break
        if np.min(slack) <= 0 or np.min(lam_pd) < 0 or np.max(lam_pd) > 1e12:
            break  # slack underflow or multiplier blow-up; keep the best iterate
        # Condensed Newton system in (dz, dlam); ds eliminated.
        W = lam_pd / slack
        H = hess_weighted(lam_pd) + grads.T @ (grads * W[:, None])
        if not np.all(np.isfinite(H)):
            break

        def direction(r_comp_target):
            rhs = -r_stat - grads.T @ (W * r_prim - r_comp_target / slack)
            dz = np.linalg.solve(H, rhs)
            dlam = W * (grads @ dz + r_prim) - r_comp_target / slack
            ds = -r_prim - grads @ dz
            return dz, dlam, ds

        def step_lengths(ds, dlam, margin):
            a_p = a_d = 1.0
            neg = ds < 0
            if neg.any():
                a_p = min(a_p, margin * float(np.min(-slack[neg] / ds[neg])))
            neg = dlam < 0
            if neg.any():
                a_d = min(a_d, margin * float(np.min(-lam_pd[neg] / dlam[neg])))
            return a_p, a_d

        try:
            if scheme == "fixed":
                sigma = 0.1 if mu > 1e-10 else 0.0
                dz, dlam, ds = direction(lam_pd * slack - sigma * mu)
                a_p, a_d = step_lengths(ds, dlam, 0.995)
                a_p = a_d = min(a_p, a_d)
            else:
                # Affine predictor sets the centering weight sigma.
                dz_a, dlam_a, ds_a = direction(lam_pd * slack)
                a_p, a_d = step_lengths(ds_a, dlam_a, 1.0)
                mu_aff = float((lam_pd + a_d * dlam_a) @ (slack + a_p * ds_a)) / n_con
                sigma = min(max((max(mu_aff, 0.0) / mu) ** 3, 0.0), 1.0) if mu > 0 else 0.0
                # Corrector with centering and the second-order term.
                dz, dlam, ds = direction(lam_pd * slack + dlam_a * ds_a - sigma * mu)
                a_p, a_d = step_lengths(ds, dlam, 0.995)
        except np.linalg.LinAlgError:
            break
        z = z + a_p * dz
        slack = slack + a_p * ds
        lam_pd = lam_pd + a_d * dlam
    return best[1], best[2]


def _sqp_fallback(z0, constraints, obj_grad, n_con):
    """SQP restart from a near-optimal iterate; returns (z, lambda) or None."""
    from scipy.optimize import minimize

    def f_ineq(x):
        vals, _ = constraints(x)
        return -vals

    def jac_ineq(x):
        _, grads = constraints(x)
        return -grads

    result = minimize(
        lambda x: float(obj_grad @ x), z0, jac=lambda x: obj_grad,
        constraints=[{"type": "ineq", "fun": f_ineq, "jac": jac_ineq}],
        method="SLSQP", options={"maxiter": 500, "ftol": 1e-16},
    )
    if not np.all(np.isfinite(result.x)):
        return None
    return result.x, np.zeros(n_con)


def _polish_kkt(z, lam_est, constraints, obj_grad, n_con):
    """Active-set refinement of a near-optimal interior-point iterate.

    For a range of slack thresholds: take the constraints within the threshold
    of being tight as active, project the iterate onto the active manifold by
    Gauss-Newton, recover multipliers by non-negative least squares, and score
    the full KKT residual.  The active set is then refined toward the support
    of the multipliers; scanning thresholds handles degenerate solutions where
    many near-parallel cuts are almost tight and the true active set is
    ambiguous.  Returns the best (z, lambda, kkt_residual) found, or None.
    """
    from scipy.optimize import nnls

    def score_nnls(x, idx):
        """Full KKT residual with NNLS multipliers restricted to idx."""
        vals, grads = constraints(x)
        try:
            mu_active, _ = nnls(grads[idx].T, -obj_grad)
        except RuntimeError:
            return None
        lam_full = np.zeros(n_con)
        lam_full[idx] = mu_active
        stationarity = obj_grad + grads.T @ lam_full
        kkt = max(float(np.linalg.norm(stationarity, ord=np.inf)),
                  float(np.max(lam_full * np.abs(vals))),
                  float(max(0.0, np.max(vals))))
        return x.copy(), lam_full, kkt

    best = None
    for thresh in (1e-12, 1e-10, 1e-8, 1e-6, 1e-4):
        vals, _ = constraints(z)
        idx = sorted(i for i in range(n_con) if -vals[i] < thresh)
        if not idx:
            continue
        # Score the unprojected iterate first: at degenerate vertices the
        # Gauss-Newton projection below chases an inconsistent active set,
        # while the incoming point with least-squares multipliers is already
        # near-stationary.
        trial = score_nnls(z, idx)
        if trial is not None and (best is None or trial[2] < best[2]):
            best = trial
        x = z.copy()
        for _ in range(6):
            for _ in range(30):
                vals, grads = constraints(x)
                residual = vals[idx]
                if float(np.linalg.norm(residual, ord=np.inf)) < 1e-14:
                    break
                step, *_ = np.linalg.lstsq(grads[idx], -residual, rcond=None)
                if not np.all(np.isfinite(step)):
                    break
                x = x + step
            if not np.all(np.isfinite(x)):
                break
            trial = score_nnls(x, idx)
            if trial is None:
                break
            if best is None or trial[2] < best[2]:
                best = trial
            vals, _ = constraints(x)
            support = [i for i in idx if trial[1][i] > 1e-12]
            violated = [i for i in range(n_con)
                        if i not in support and vals[i] > 1e-12]
            refined = sorted(set(support) | set(violated))
            if refined == idx or not refined:
                break
            idx = refined
    return best


# ------------------------------ BTM and QNDA --------------------------------


def btm_direction(bundle: Bundle, lam_t: np.ndarray, d_t: float, alpha_t: float):
    """Bundle-trust direction: maximize the cutting-plane model over the ball.

    Returns (s, v): the step and the model improvement at lam_t + s.
    """
    lam_t = np.asarray(lam_t, dtype=float)
    beta = linearization_errors(bundle, lam_t, d_t)
    G = np.array([e.subgradient for e in bundle.entries])
    problem = TrustRegionProblem(center=lam_t, alpha=alpha_t,
                                 cut_normals=G, cut_offsets=beta, const=d_t)
    sol = solve_trust_region_qp(problem)
    return sol.argmax - lam_t, sol.model_value - d_t


def qnda_update(B: np.ndarray, bundle: Bundle, lam_t: np.ndarray, g_t: np.ndarray,
                d_t: float, alpha_t: float, diagnostics: dict | None = None) -> np.ndarray:
    """Quasi-Newton dual ascent step: maximize the quadratic model under bundle cuts.

    The bundle cuts bound the model value, giving the convex epigraph form
    handled by :func:`solve_trust_region_qp`.  On solver failure the step
    falls back to a BTM direction, recorded in ``diagnostics``.
    """
    lam_t = np.asarray(lam_t, dtype=float)
    g_t = np.asarray(g_t, dtype=float)
    beta = linearization_errors(bundle, lam_t, d_t)
    G = np.array([e.subgradient for e in bundle.entries])
    problem = TrustRegionProblem(center=lam_t, alpha=alpha_t,
                                 cut_normals=G, cut_offsets=beta,
                                 quad=np.asarray(B, dtype=float), lin=g_t, const=d_t)
    try:
        sol = solve_trust_region_qp(problem)
        if diagnostics is not None:
            diagnostics["fallback"] = False
            diagnostics["kkt_residual"] = sol.kkt_residual
        return sol.argmax
    except TrustRegionSolverError as exc:
        if diagnostics is not None:
            diagnostics["fallback"] = True
            diagnostics["error"] = str(exc)
        s, _ = btm_direction(bundle, lam_t, d_t, alpha_t)
        return lam_t + s
