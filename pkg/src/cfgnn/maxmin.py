"""Optimal max-min downlink power control via conic feasibility bisection.

The problem is to choose per-AP power fractions eta (eta >= 0, row sums at
most 1) maximising the worst-user SINR.  In the square-root variables
sigma = sqrt(eta), the constraint SINR_k >= t becomes a second-order cone:

    sum_m sqrt(alpha'[m,k]) * sigma[m,k]
        >= sqrt(t) * || (1, {sqrt(beta'[m,k]) * sigma[m,j]}_{m,j}) ||_2

with alpha' = rho_d * alpha and beta' = rho_d * beta, and each per-AP budget
is the ball ||sigma[m, :]|| <= 1.  Feasibility of a target t is therefore a
convex question, and the optimum is found by bisection on t.

Each feasibility test solves a margin maximisation

    max_s  s   s.t.  g_k(sigma) >= s  for all k,   ||sigma[m, :]||^2 <= 1

where g_k is the cone slack, with a log-barrier Newton method.  A positive
margin is a rigorous feasibility witness (the recovered eta = sigma**2 is
re-checked against the exact SINR expression before it is accepted); a
negative margin plus the barrier duality gap certifies infeasibility.
Maximising the margin rather than merely finding any interior point makes
the final allocation equalise the user SINRs, which is what the true
max-min optimum does.

`brute_force_maxmin` provides an independent grid-search oracle for small
instances, used by the test suite to validate the solver end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flops import FlopCounter
from .sinr import compute_alpha, compute_sinr

_LOG_BARRIER_MU = 30.0
_NEWTON_MAX_STEPS = 60
_NEWTON_DEC2_TOL = 2e-9


@dataclass(frozen=True)
class BisectionConfig:
    """Tolerances and limits for the outer bisection.

    feas_tol: relative SINR slack accepted when certifying a feasible point.
    rel_tol: relative width of the final bracket around the optimum.
    spread_rel: additionally keep tightening until the per-user SINR spread
        of the returned allocation is below spread_rel * t_star (the max-min
        optimum equalises SINRs, so the surrogate's training target should
        too).
    t_lo: initial lower bracket, assumed feasible.
    t_hi: initial upper bracket; computed from the data when None.
    """

    feas_tol: float = 1e-6
    rel_tol: float = 1e-4
    max_iter: int = 60
    spread_rel: float = 5e-4
    t_lo: float = 1e-6
    t_hi: float | None = None


@dataclass
class MaxMinSolution:
    t_star: float          # exact worst-user SINR of the returned allocation
    eta: np.ndarray        # (M, K) power fractions
    sinr: np.ndarray       # (K,) per-user SINRs at eta
    iterations: int        # bisection steps performed
    converged: bool        # bracket and spread targets met within max_iter


class SolverError(RuntimeError):
    """Raised when the bisection cannot even establish a feasible bracket."""


def _state(sa: np.ndarray, bs: np.ndarray, sqrt_t: float, sig: np.ndarray,
           s: float) -> tuple:
    """Row norms, cone slacks and barrier residuals at (sigma, s)."""
    r = np.einsum("mk,mk->m", sig, sig)
    ball = 1.0 - r
    q2 = 1.0 + bs.T @ r
    q = np.sqrt(q2)
    n_lin = np.einsum("mk,mk->k", sa, sig)
    g = n_lin - sqrt_t * q
    margins = g - s
    return r, ball, q, g, margins


def _phi(tau: float, s: float, margins: np.ndarray, ball: np.ndarray) -> float:
    if np.any(margins <= 0.0) or np.any(ball <= 0.0):
        return math.inf
    return -tau * s - float(np.log(margins).sum()) - float(np.log(ball).sum())


def _count_state(counter: FlopCounter, m: int, k: int) -> None:
    counter.dot(k, m)            # row norms
    counter.matmul(k, m, 1)      # bs.T @ r
    counter.add(k)
    counter.mul(k)               # sqrt
    counter.dot(m, k)            # n_lin
    counter.mul(k)               # sqrt_t * q
    counter.add(3 * k + m)       # g, margins, ball


def _newton_direction(tau: float, sa: np.ndarray, bs: np.ndarray, sqrt_t: float,
                      sig: np.ndarray, s: float, state: tuple,
                      counter: FlopCounter | None) -> tuple[np.ndarray, float, np.ndarray, float]:
    """One Newton system for the barrier subproblem.  Returns
    (delta_sigma, delta_s, grad_sigma, grad_s dotted into delta)."""
    m_ap, k_ue = sig.shape
    n = m_ap * k_ue
    r, ball, q, g, margins = state

    u = 1.0 / margins
    b_inv = 1.0 / ball
    w = bs @ (u * sqrt_t / q)
    row_scale = w + 2.0 * b_inv

    grad_sig = -sa * u[None, :] + row_scale[:, None] * sig
    grad_s = -tau + float(u.sum())
    grad = np.concatenate([grad_sig.ravel(), [grad_s]])

    # Rank-one pieces.  p_t[k] = bs[:, k, None] * sig is the gradient of the
    # norm part of cone k; e_t[k] embeds sa[:, k] into column k.
    p_t = bs.T[:, :, None] * sig[None, :, :]
    e_t = np.zeros((k_ue, m_ap, k_ue))
    e_t[np.arange(k_ue), :, np.arange(k_ue)] = sa.T
    v = u[:, None, None] * (e_t - (sqrt_t / q)[:, None, None] * p_t)
    v_full = np.concatenate([v.reshape(k_ue, n), -u[:, None]], axis=1)
    p_coef = np.sqrt(u * sqrt_t / (q * q * q))
    p_full = (p_coef[:, None, None] * p_t).reshape(k_ue, n)

    h = np.zeros((n + 1, n + 1))
    h[np.arange(n), np.arange(n)] = row_scale.repeat(k_ue)
    h += v_full.T @ v_full
    h[:n, :n] -= p_full.T @ p_full
    blocks = (4.0 * b_inv * b_inv)[:, None, None] * sig[:, :, None] * sig[:, None, :]
    for m in range(m_ap):
        rows = slice(m * k_ue, (m + 1) * k_ue)
        h[rows, rows] += blocks[m]

    if counter is not None:
        counter.mul(6 * n + 4 * k_ue + 2 * m_ap)       # gradient assembly
        counter.mul(3 * k_ue * n + 2 * k_ue)           # p_t, v, p_full scaling
        counter.matmul(n + 1, k_ue, n + 1)             # v_full.T @ v_full
        counter.matmul(n, k_ue, n)                     # p_full.T @ p_full
        counter.mul(m_ap * k_ue * k_ue)                # ball blocks
        counter.add(2 * (n + 1) * (n + 1))             # Hessian accumulation
        counter.solve_lu(n + 1)

    reg = 0.0
    base = float(np.mean(row_scale.repeat(k_ue))) + 1e-30
    for _ in range(8):
        try:
            if reg:
                delta = np.linalg.solve(h + reg * base * np.eye(n + 1), -grad)
            else:
                delta = np.linalg.solve(h, -grad)
        except np.linalg.LinAlgError:
            reg = max(reg * 10.0, 1e-12)
            continue
        slope = float(grad @ delta)
        if np.all(np.isfinite(delta)) and slope < 0.0:
            return delta[:n].reshape(m_ap, k_ue), float(delta[n]), grad, slope
        reg = max(reg * 10.0, 1e-12)
    # Fall back to steepest descent if the system is hopeless.
    gn = float(grad @ grad)
    delta = -grad / math.sqrt(gn + 1e-300)
    return delta[:n].reshape(m_ap, k_ue), float(delta[n]), grad, -math.sqrt(gn)


def _center(tau: float, sa: np.ndarray, bs: np.ndarray, sqrt_t: float,
            sig: np.ndarray, s: float,
            counter: FlopCounter | None) -> tuple[np.ndarray, float, tuple]:
    """Newton iterations minimising the barrier at fixed tau."""
    state = _state(sa, bs, sqrt_t, sig, s)
    phi = _phi(tau, s, state[4], state[1])
    for _ in range(_NEWTON_MAX_STEPS):
        dsig, ds, grad, slope = _newton_direction(tau, sa, bs, sqrt_t, sig, s,
                                                  state, counter)
        dec2 = -slope
        if dec2 / 2.0 <= _NEWTON_DEC2_TOL:
            break
        step = 1.0
        accepted = False
        for _ in range(60):
            sig_n = sig + step * dsig
            s_n = s + step * ds
            state_n = _state(sa, bs, sqrt_t, sig_n, s_n)
            if counter is not None:
                _count_state(counter, *sig.shape)
            phi_n = _phi(tau, s_n, state_n[4], state_n[1])
            if phi_n <= phi + 0.01 * step * slope:
                sig, s, state, phi = sig_n, s_n, state_n, phi_n
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return sig, s, state


def _margin_solve(sa: np.ndarray, bs: np.ndarray, t: float, feas_tol: float,
                  sig_init: np.ndarray | None = None, full_center: bool = False,
                  counter: FlopCounter | None = None
                  ) -> tuple[bool, np.ndarray | None, float]:
    """Decide feasibility of SINR target t.

    Returns (feasible, eta, achieved) where achieved is the exact worst-user
    SINR of eta when feasible.  eta is None when infeasible.
    """
    m_ap, k_ue = sa.shape
    n_constr = m_ap + k_ue
    # Work with gains divided by sqrt(t): the cone margins are then measured
    # in units of the target, so the barrier sees O(1) slacks whether the
    # target SINR is 1e-9 or 1e+2, and shares its scale with the unit power
    # balls.  The exact recheck below still uses the unscaled gains.
    sa_t = sa / math.sqrt(t)

    if sig_init is None:
        sig = np.full((m_ap, k_ue), 1.0 / math.sqrt(2.0 * k_ue))
    else:
        sig = np.abs(sig_init).astype(float, copy=True)
        r = np.einsum("mk,mk->m", sig, sig)
        hot = r > 0.98
        if np.any(hot):
            sig[hot] *= np.sqrt(0.98 / r[hot])[:, None]
    state = _state(sa_t, bs, 1.0, sig, 0.0)
    g0 = state[3]
    scale0 = max(1.0, float(np.max(np.abs(g0))))
    s = float(np.min(g0)) - 0.05 * scale0

    tau = n_constr / (0.25 * scale0)
    gap_floor = 1e-12 * scale0
    best: tuple[bool, np.ndarray | None, float] | None = None
    while True:
        sig, s, state = _center(tau, sa_t, bs, 1.0, sig, s, counter)
        gap = n_constr / tau
        if s > 0.0:
            achieved = _achieved_min_sinr(sa, bs, sig)
            if achieved >= t * (1.0 - feas_tol):
                best = (True, sig * sig, achieved)
                if not full_center or gap <= 1e-3 * max(abs(s), 1e-6 * scale0):
                    return best
        elif s + 2.0 * gap < 0.0:
            return False, None, s
        if gap <= gap_floor:
            if best is not None:
                return best
            achieved = _achieved_min_sinr(sa, bs, sig)
            if achieved >= t * (1.0 - feas_tol):
                return True, sig * sig, achieved
            return False, None, s
        tau *= _LOG_BARRIER_MU


def _achieved_min_sinr(sa: np.ndarray, bs: np.ndarray, sig: np.ndarray) -> float:
    """Exact worst-user SINR of eta = sigma**2 in the rho-scaled variables."""
    sinr = _sinr_scaled(sa, bs, sig)
    return float(np.min(sinr))


def _sinr_scaled(sa: np.ndarray, bs: np.ndarray, sig: np.ndarray) -> np.ndarray:
    num = np.einsum("mk,mk->k", sa, np.abs(sig))
    r = np.einsum("mk,mk->m", sig, sig)
    den = 1.0 + bs.T @ r
    return num * num / den


def upper_bound_sinr(beta: np.ndarray, alpha: np.ndarray, rho_d: float) -> float:
    """max_k rho_d * (sum_m sqrt(alpha[m, k]))**2, an unreachable target."""
    return float(np.max(rho_d * np.sqrt(alpha).sum(axis=0) ** 2))


def equal_power(num_aps: int, num_ues: int) -> np.ndarray:
    """Baseline allocation: every AP splits full power evenly over users."""
    return np.full((num_aps, num_ues), 1.0 / num_ues)


def feasibility_check(beta: np.ndarray, alpha: np.ndarray, rho_d: float,
                      t: float, feas_tol: float = 1e-6) -> np.ndarray | None:
    """Allocation meeting SINR target t for every user, or None if infeasible.

    The decision is rigorous in both directions: a returned eta is rechecked
    against the exact SINR expression, and None is only reported once the
    barrier duality gap certifies that no allocation can reach t.
    """
    if t <= 0:
        raise ValueError("target t must be positive")
    sa = np.sqrt(rho_d * np.asarray(alpha, dtype=float))
    bs = rho_d * np.asarray(beta, dtype=float)
    feasible, eta, _ = _margin_solve(sa, bs, t, feas_tol)
    return eta if feasible else None


def solve_maxmin(beta: np.ndarray, rho_d: float, rho_u: float, tau_pilots: int,
                 config: BisectionConfig | None = None,
                 counter: FlopCounter | None = None) -> MaxMinSolution:
    """Maximise the worst-user SINR subject to per-AP power budgets.

    Bisection maintains a feasible incumbent allocation; each feasible probe
    raises the lower bracket to the SINR its allocation actually achieves,
    which typically saves several iterations.  The final allocation comes
    from a fully centred margin solve, so its per-user SINRs are equalised
    to within config.spread_rel relative spread.
    """
    cfg = config if config is not None else BisectionConfig()
    beta = np.asarray(beta, dtype=float)
    alpha = compute_alpha(beta, rho_u, tau_pilots)
    sa = np.sqrt(rho_d * alpha)
    bs = rho_d * beta

    hi = cfg.t_hi if cfg.t_hi is not None else upper_bound_sinr(beta, alpha, rho_d)
    lo = cfg.t_lo
    if lo >= hi:
        raise SolverError(f"empty bracket: t_lo={lo} >= t_hi={hi}")

    feasible, eta, achieved = _margin_solve(sa, bs, lo, cfg.feas_tol,
                                            counter=counter)
    if not feasible:
        # Channels can be weak enough that even the configured floor is out
        # of reach.  The equal-power allocation is always admissible, so
        # half the worst SINR it achieves is a guaranteed-feasible restart.
        t_eq = float(np.min(compute_sinr(beta, alpha,
                                         equal_power(*beta.shape), rho_d)))
        if 0.0 < 0.5 * t_eq < lo:
            lo = 0.5 * t_eq
            feasible, eta, achieved = _margin_solve(sa, bs, lo, cfg.feas_tol,
                                                    counter=counter)
    if not feasible:
        raise SolverError(f"lower bracket t_lo={lo} is infeasible")
    lo = min(max(lo, achieved), hi * (1.0 - 1e-12))
    sig_warm = np.sqrt(eta)

    iterations = 0
    sinr = None
    while iterations < cfg.max_iter:
        bracket_ok = (hi - lo) <= cfg.rel_tol * lo
        if bracket_ok:
            if sinr is None:
                # Polish: fully centred solve at the incumbent target.
                ok, eta_f, achieved = _margin_solve(sa, bs, lo, cfg.feas_tol,
                                                    sig_init=sig_warm,
                                                    full_center=True,
                                                    counter=counter)
                if ok:
                    eta = eta_f
                    sig_warm = np.sqrt(eta)
                sinr = _sinr_scaled(sa, bs, sig_warm)
            spread = float(np.max(sinr) - np.min(sinr))
            if spread <= cfg.spread_rel * float(np.min(sinr)):
                break
            if (hi - lo) <= 4.0 * np.finfo(float).eps * lo:
                break
        mid = 0.5 * (lo + hi)
        near_end = (hi - lo) <= 16.0 * cfg.rel_tol * lo
        feasible, eta_mid, achieved = _margin_solve(sa, bs, mid, cfg.feas_tol,
                                                    sig_init=sig_warm,
                                                    full_center=near_end,
                                                    counter=counter)
        iterations += 1
        if feasible:
            eta = eta_mid
            sig_warm = np.sqrt(eta)
            lo = min(max(mid, achieved), hi * (1.0 - 1e-12))
            sinr = _sinr_scaled(sa, bs, sig_warm) if near_end else None
        else:
            hi = mid
            sinr = None

    if sinr is None:
        sinr = _sinr_scaled(sa, bs, sig_warm)
    spread = float(np.max(sinr) - np.min(sinr))
    converged = ((hi - lo) <= cfg.rel_tol * lo
                 and spread <= cfg.spread_rel * float(np.min(sinr)))
    t_star = float(np.min(sinr))
    sinr_exact = compute_sinr(beta, alpha, eta, rho_d)
    return MaxMinSolution(t_star=t_star, eta=eta, sinr=sinr_exact,
                          iterations=iterations, converged=converged)


# ---------------------------------------------------------------------------
# Grid-search oracle
# ---------------------------------------------------------------------------

def _simplex_grid(k: int, g: int, lo: np.ndarray | None = None,
                  hi: np.ndarray | None = None) -> np.ndarray:
    """Integer grid points x in [lo, hi]^k with sum(x) <= g, as an (n, k) array."""
    lo_arr = np.zeros(k, dtype=np.int64) if lo is None else lo
    hi_arr = np.full(k, g, dtype=np.int64) if hi is None else hi
    lo_arr = np.maximum(lo_arr, 0)
    hi_arr = np.minimum(hi_arr, g)

    def rec(idx: int, budget: int) -> np.ndarray:
        remaining_min = int(lo_arr[idx + 1:].sum())
        top = min(int(hi_arr[idx]), budget - remaining_min)
        bottom = int(lo_arr[idx])
        if top < bottom:
            return np.empty((0, k - idx), dtype=np.int64)
        if idx == k - 1:
            vals = np.arange(bottom, top + 1, dtype=np.int64)
            return vals[:, None]
        parts = []
        for val in range(bottom, top + 1):
            rest = rec(idx + 1, budget - val)
            if rest.shape[0]:
                col = np.full((rest.shape[0], 1), val, dtype=np.int64)
                parts.append(np.concatenate([col, rest], axis=1))
        if not parts:
            return np.empty((0, k - idx), dtype=np.int64)
        return np.concatenate(parts, axis=0)

    return rec(0, g)


def _grid_search(beta: np.ndarray, alpha: np.ndarray, rho_d: float,
                 row_cands: list[np.ndarray], step: float, top: int = 1,
                 chunk: int = 1 << 19) -> list[tuple[float, list[int]]]:
    """Maximise min-SINR over the cartesian product of per-row candidate grids.

    Rows are merged into two groups whose partial sums are materialised, then
    the cross product is scanned in chunks.  Returns the `top` best
    (value, per-row candidate indices) pairs in descending order.
    """
    m_ap, k_ue = beta.shape
    counts = [c.shape[0] for c in row_cands]

    def merge(rows: list[int]) -> tuple[np.ndarray, np.ndarray]:
        gain = np.zeros((1, k_ue))
        intf = np.zeros((1, k_ue))
        for m in rows:
            eta_rows = row_cands[m] * step
            g_m = np.sqrt(alpha[m][None, :] * eta_rows)
            i_m = beta[m][None, :] * eta_rows.sum(axis=1, keepdims=True)
            gain = (gain[:, None, :] + g_m[None, :, :]).reshape(-1, k_ue)
            intf = (intf[:, None, :] + i_m[None, :, :]).reshape(-1, k_ue)
        return gain, intf

    best_split, best_cost = m_ap, float("inf")
    for split in range(1, m_ap + 1):
        a = int(np.prod(counts[:split], dtype=np.int64)) if split else 1
        b = int(np.prod(counts[split:], dtype=np.int64)) if split < m_ap else 1
        if max(a, b) * k_ue * 8 >= 2e8:
            continue
        cost = a + b
        if cost < best_cost:
            best_split, best_cost = split, cost
    gain_a, intf_a = merge(list(range(best_split)))
    if best_split < m_ap:
        gain_b, intf_b = merge(list(range(best_split, m_ap)))
    else:
        gain_b = np.zeros((1, k_ue))
        intf_b = np.zeros((1, k_ue))
    sizes_a = counts[:best_split]
    sizes_b = counts[best_split:]

    leaders: list[tuple[float, int]] = []  # (value, flat index over a*b)
    n_a, n_b = gain_a.shape[0], gain_b.shape[0]
    rows_per_chunk = max(1, chunk // n_b)
    for start in range(0, n_a, rows_per_chunk):
        ga = gain_a[start:start + rows_per_chunk]
        ia = intf_a[start:start + rows_per_chunk]
        gain = ga[:, None, :] + gain_b[None, :, :]
        intf = ia[:, None, :] + intf_b[None, :, :]
        sinr = rho_d * gain * gain / (1.0 + rho_d * intf)
        worst = sinr.min(axis=2).ravel()
        take = min(top, worst.size)
        part = np.argpartition(worst, worst.size - take)[worst.size - take:]
        for flat in part:
            leaders.append((float(worst[flat]), start * n_b + int(flat)))
        leaders.sort(key=lambda pair: -pair[0])
        del leaders[top:]

    def unflatten(flat: int, sizes: list[int]) -> list[int]:
        out = []
        for size in reversed(sizes):
            out.append(flat % size)
            flat //= size
        return list(reversed(out))

    results = []
    for val, flat in leaders:
        fa, fb = divmod(flat, n_b)
        results.append((val, unflatten(fa, sizes_a) + unflatten(fb, sizes_b)))
    return results


def brute_force_maxmin(beta: np.ndarray, rho_d: float, rho_u: float,
                       tau_pilots: int, grid_step: float = 0.01,
                       budget: int = 40_000_000,
                       refine_top: int = 8) -> MaxMinSolution:
    """Exhaustive grid-search oracle for small instances (M * K <= 6).

    Every row of eta ranges over the grid {0, grid_step, ..., 1}^K filtered
    to row sums at most 1.  When the full cartesian product fits within
    `budget` evaluations it is enumerated exactly.  Otherwise a coarse pass
    (5x the step) is followed by exhaustive fine passes restricted to a one
    coarse-cell window around each of the `refine_top` best coarse points;
    the worst-user SINR is quasiconcave over the feasible set in the
    square-root variables, which makes the coarse-to-fine scheme reliable,
    and the solver tests cross-check it.
    """
    beta = np.asarray(beta, dtype=float)
    m_ap, k_ue = beta.shape
    if m_ap * k_ue > 6:
        raise ValueError("brute force oracle is limited to M * K <= 6")
    alpha = compute_alpha(beta, rho_u, tau_pilots)
    g = round(1.0 / grid_step)
    if abs(g * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step} must divide 1 exactly")

    fine = _simplex_grid(k_ue, g)
    total = fine.shape[0] ** m_ap
    if total <= budget:
        cands = [fine] * m_ap
        (val, idx), = _grid_search(beta, alpha, rho_d, cands, grid_step, top=1)
        eta = np.stack([cands[m][idx[m]] * grid_step for m in range(m_ap)])
        sinr = compute_sinr(beta, alpha, eta, rho_d)
        return MaxMinSolution(t_star=val, eta=eta, sinr=sinr,
                              iterations=total, converged=True)

    coarse_factor = 5
    while (_simplex_grid(k_ue, g // coarse_factor).shape[0] ** m_ap) > budget:
        coarse_factor *= 2
        if g // coarse_factor < 1:
            raise ValueError("instance too large for the grid oracle budget")
    gc = g // coarse_factor
    window = g // gc
    coarse = _simplex_grid(k_ue, gc)
    cands_c = [coarse] * m_ap
    leaders = _grid_search(beta, alpha, rho_d, cands_c, 1.0 / gc,
                           top=refine_top)

    best_val = leaders[0][0]
    best_eta = np.stack([coarse[leaders[0][1][m]] / gc for m in range(m_ap)])
    evals = coarse.shape[0] ** m_ap
    for _, idx_c in leaders:
        cands_f = []
        for m in range(m_ap):
            centre = coarse[idx_c[m]] * window
            cands_f.append(_simplex_grid(k_ue, g, lo=centre - window,
                                         hi=centre + window))
        evals += int(np.prod([c.shape[0] for c in cands_f], dtype=np.int64))
        (val, idx), = _grid_search(beta, alpha, rho_d, cands_f, grid_step,
                                   top=1)
        if val > best_val:
            best_val = val
            best_eta = np.stack([cands_f[m][idx[m]] * grid_step
                                 for m in range(m_ap)])
    sinr = compute_sinr(beta, alpha, best_eta, rho_d)
    return MaxMinSolution(t_star=best_val, eta=best_eta, sinr=sinr,
                          iterations=evals, converged=True)
