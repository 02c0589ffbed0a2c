"""Scalar fixed-point analysis of the PCD variance iteration.

With true recovery-error variance ``s2`` the PCD update behaves like
``sigma2_next = g(sigma2)`` where ``g(sigma2) = f(T(sigma2))``, ``T`` is the
Rayleigh threshold at ``pfa0`` and ``f`` is the second half-moment of a
Rayleigh law truncated at ``T``::

    f(T) = s2 - exp(-T^2 / (2 s2)) (2 s2 + T^2) / 2
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, TheoryViolationError


def f_of_T(T, sigma2_true):
    T = np.asarray(T, dtype=float)
    out = sigma2_true - 0.5 * np.exp(-T * T / (2.0 * sigma2_true)) * (2.0 * sigma2_true + T * T)
    return float(out) if out.ndim == 0 else out


def f_prime(T, sigma2_true):
    T = np.asarray(T, dtype=float)
    out = np.exp(-T * T / (2.0 * sigma2_true)) * T**3 / (2.0 * sigma2_true)
    return float(out) if out.ndim == 0 else out


def g_of_sigma2(sigma2, sigma2_true, pfa0):
    lp = math.log(pfa0)
    s = np.asarray(sigma2, dtype=float)
    out = sigma2_true - 0.5 * np.exp(s * lp / sigma2_true) * (2.0 * sigma2_true - 2.0 * s * lp)
    return float(out) if out.ndim == 0 else out


def g_prime(sigma2, sigma2_true, pfa0):
    lp = math.log(pfa0)
    s = np.asarray(sigma2, dtype=float)
    out = pfa0 ** (s / sigma2_true) * s * lp * lp / sigma2_true
    return float(out) if out.ndim == 0 else out


def approx_fixed_point(sigma2_true: float, pfa0: float) -> float:
    """Linearised fixed point ``s2 (1 - p) / (1 - p ln p)``."""
    if not (0 < pfa0 < 1):
        raise InvalidParameterError("pfa0 must lie in (0, 1)")
    return sigma2_true * (1.0 - pfa0) / (1.0 - pfa0 * math.log(pfa0))


def contraction_bound(sigma2_first: float, sigma2_true: float, pfa0: float) -> float:
    """Upper bound on ``g'`` over ``[sigma2_first, sigma2_true]``."""
    return pfa0 ** (sigma2_first / sigma2_true) * math.log(pfa0) ** 2


def bisect(fn, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 400) -> float | None:
    """Root of ``fn`` on ``[lo, hi]``; ``None`` if the bracket has no sign change."""
    flo, fhi = fn(lo), fn(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        return None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class FixedPointStudy:
    sigma2_true: float
    pfa0: float
    iterates: list[float]
    limit: float
    approx_limit: float
    contraction_bound: float
    step_ratios: list[float] = field(default_factory=list)
    converged: bool = True
    pfa_max2: float | None = None
    pfa_max1: float | None = None
    pfa_min: float | None = None


def iterate_fixed_point(sigma2_init: float, sigma2_true: float, pfa0: float,
                        tol: float = 1e-12, max_iter: int = 200) -> FixedPointStudy:
    """Iterate ``g`` from ``sigma2_init`` and check the monotone bounded chain."""
    if not (0 < sigma2_init < sigma2_true):
        raise InvalidParameterError("need 0 < sigma2_init < sigma2_true")
    if not (0 < pfa0 < 1):
        raise InvalidParameterError("pfa0 must lie in (0, 1)")
    iterates = [float(sigma2_init)]
    converged = False
    for _ in range(max_iter):
        prev = iterates[-1]
        nxt = g_of_sigma2(prev, sigma2_true, pfa0)
        if nxt < prev * (1.0 - 1e-14) or nxt >= sigma2_true:
            raise TheoryViolationError(
                f"iterate {len(iterates)} broke 0 < s{{m}} <= s{{m+1}} < s2_true: {prev!r} -> {nxt!r}")
        iterates.append(nxt)
        if abs(nxt - prev) < tol * prev:
            converged = True
            break
    limit = iterates[-1]
    # ratios only where the distance to the limit is well above rounding noise
    floor = 1e3 * np.finfo(float).eps * sigma2_true
    ratios = []
    for a, b in zip(iterates[:-1], iterates[1:]):
        da, db = abs(a - limit), abs(b - limit)
        if da > floor and db > floor:
            ratios.append(db / da)
    bound = contraction_bound(iterates[0], sigma2_true, pfa0)
    return FixedPointStudy(sigma2_true, pfa0, iterates, limit, approx_fixed_point(sigma2_true, pfa0),
                           bound, ratios, converged, pfa_max2(iterates[0], sigma2_true),
                           pfa_max1(iterates[0], sigma2_true))


def pfa_max2(sigma2_first: float, sigma2_true: float) -> float | None:
    """Root of ``p^k ln^2 p = 1`` on ``(0, exp(-2/k))`` with ``k = sigma2_first / sigma2_true``.

    ``p^k ln^2 p`` peaks at ``p = exp(-2/k)`` with value ``4 / (e k)^2``, so
    no root exists when ``k > 2/e``.
    """
    k = sigma2_first / sigma2_true
    if not k > 0:
        raise InvalidParameterError("sigma2_first must be positive")
    upper = -2.0 / k  # work in u = ln p, where h(u) = exp(k u) u^2 is increasing on (-inf, upper)
    h = lambda u: math.exp(k * u) * u * u - 1.0  # noqa: E731
    lo = upper
    while h(lo) > 0:
        lo *= 2.0
        if lo < -1e6:
            return None
    u = bisect(h, lo, upper)
    return None if u is None else math.exp(u)


def pfa_max1(sigma2_first: float, sigma2_true: float) -> float | None:
    """``p`` with ``f(T_p) = sigma2_first`` where ``T_p`` uses ``sigma2_first``."""
    if not (0 < sigma2_first < sigma2_true):
        return None
    fn = lambda u: g_of_sigma2(sigma2_first, sigma2_true, math.exp(u)) - sigma2_first  # noqa: E731
    u = bisect(fn, -745.0, -1e-15)
    return None if u is None else math.exp(u)


def pfa_min(r_H1_amplitudes, sigma2_pcd: float) -> float | None:
    """Rate whose PCD threshold equals the weakest target amplitude."""
    r = np.asarray(r_H1_amplitudes, dtype=float)
    if r.size == 0:
        return None
    a = float(np.min(r))
    return math.exp(-a * a / (2.0 * sigma2_pcd))


def pfa_window(sigma2_hat_1: float, sigma2_true: float, scene_amplitudes_r_H1, sigma2_pcd: float):
    """``(pfa_min, pfa_max2, pfa_max1)``; entries without a root are ``None``."""
    if not (0 < sigma2_hat_1 < sigma2_true):
        raise InvalidParameterError("need 0 < sigma2_hat_1 < sigma2_true")
    return (pfa_min(scene_amplitudes_r_H1, sigma2_pcd), pfa_max2(sigma2_hat_1, sigma2_true),
            pfa_max1(sigma2_hat_1, sigma2_true))


def write_theory_csv(path, study: FixedPointStudy) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "sigma2_iterate", "step_ratio"])
        limit = study.limit
        for m, s in enumerate(study.iterates, start=1):
            ratio = ""
            if m < len(study.iterates):
                da, db = abs(s - limit), abs(study.iterates[m] - limit)
                ratio = repr(db / da) if da > 0 else ""
            w.writerow([m, repr(s), ratio])
        w.writerow(["limit", repr(study.limit), ""])
        w.writerow(["approx_limit", repr(study.approx_limit), ""])
        w.writerow(["contraction_bound", repr(study.contraction_bound), ""])
        for name in ("pfa_max2", "pfa_max1", "pfa_min"):
            val = getattr(study, name)
            w.writerow([name, repr(val) if val is not None else "absent", ""])
