"""Riemannian conjugate gradient on the product of scaled complex circles.

Solves ``min phi^H Q phi - 2 Re{phi^H q}`` subject to ``|phi_n| = radius``.
Tangent vectors use the real inner product ``Re{a^H b}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

MANIFOLD_TOL = 1e-12


class RetractionError(ArithmeticError):
    """A retraction step cancelled a coordinate exactly."""


@dataclass
class CircleQuadraticProblem:
    q_mat: np.ndarray
    q_vec: np.ndarray
    radius: float

    def __post_init__(self):
        self.q_mat = np.asarray(self.q_mat, dtype=complex)
        self.q_vec = np.asarray(self.q_vec, dtype=complex).ravel()
        n = self.q_vec.size
        if self.q_mat.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {self.q_mat.shape}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        asym = np.linalg.norm(self.q_mat - self.q_mat.conj().T)
        if asym > 1e-10 * np.linalg.norm(self.q_mat):
            raise ValueError("Q must be Hermitian")

    @property
    def dim(self) -> int:
        return self.q_vec.size

    def objective(self, phi) -> float:
        return float(np.real(np.vdot(phi, self.q_mat @ phi)) - 2 * np.real(np.vdot(phi, self.q_vec)))


@dataclass
class RcgSettings:
    max_iters: int = 200
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 60
    restart_every: Optional[int] = None  # None -> problem dimension
    # also descend from the q-aligned point and the sphere-relaxation point
    multistart: bool = True

    def __post_init__(self):
        if not (self.grad_tol > 0 and self.armijo_c > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class RcgResult:
    phi: np.ndarray
    objective: float
    iters: int
    converged: bool
    history: list = field(default_factory=list)


def euclidean_gradient(problem: CircleQuadraticProblem, phi) -> np.ndarray:
    phi = np.asarray(phi)
    if phi.shape != problem.q_vec.shape:
        raise ValueError("phi has the wrong dimension")
    return 2 * (problem.q_mat @ phi) - 2 * problem.q_vec


def _check_on_manifold(phi, radius):
    if np.max(np.abs(np.abs(phi) - radius)) > 1e-9 * max(radius, 1.0):
        raise ValueError("point is not on the manifold")


def project(phi, v, radius):
    """Orthogonal projection of ``v`` onto the tangent space at ``phi``."""
    return v - (np.real(v * np.conj(phi)) / radius**2) * phi


def riemannian_gradient(problem: CircleQuadraticProblem, phi, egrad) -> np.ndarray:
    _check_on_manifold(phi, problem.radius)
    return project(phi, np.asarray(egrad), problem.radius)


def retract(phi, step, radius) -> np.ndarray:
    z = np.asarray(phi) + np.asarray(step)
    mag = np.abs(z)
    if np.any(mag == 0):
        raise RetractionError("retraction hit the origin; shrink the step")
    return z * (radius / mag)


def _inner(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def sphere_relaxation_start(problem: CircleQuadraticProblem) -> np.ndarray:
    """Project the minimiser over the sphere ``||phi|| = sqrt(N) radius`` onto the manifold.

    The sphere problem is a trust-region subproblem and is solved exactly via
    the eigendecomposition of ``Q`` and bisection on the secular equation.
    """
    n, rho = problem.dim, problem.radius
    r2 = n * rho**2
    w, v = np.linalg.eigh(problem.q_mat)
    b = v.conj().T @ problem.q_vec
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        x = v[:, 0]
    else:
        def norm2(lam):
            return float(np.sum(np.abs(b) ** 2 / (w - lam) ** 2))

        lo, hi = w[0] - bnorm / np.sqrt(r2), w[0]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if norm2(mid) > r2:
                hi = mid
            else:
                lo = mid
        x = v @ (b / (w - lo))
        short = r2 - np.linalg.norm(x) ** 2
        if short > 1e-12 * r2:
            # hard case: fill the remaining norm along the bottom eigenvector
            x = x + np.sqrt(short) * v[:, 0]
    return rho * np.exp(1j * np.angle(x))


def solve(problem: CircleQuadraticProblem, phi0, settings: RcgSettings | None = None,
          callback: Callable[[int, np.ndarray, float], None] | None = None) -> RcgResult:
    """Minimise the circle-constrained quadratic starting from ``phi0``.

    With ``settings.multistart`` two more deterministic starts are descended
    and the best end point is returned; the result is never worse than the
    descent from ``phi0`` alone.
    """
    settings = settings or RcgSettings()
    _check_on_manifold(np.asarray(phi0), problem.radius)
    best = _descend(problem, phi0, settings, callback)
    if not settings.multistart or problem.dim == 1:
        return best
    rho = problem.radius
    starts = [sphere_relaxation_start(problem)]
    if np.any(problem.q_vec != 0):
        starts.append(rho * np.exp(1j * np.angle(problem.q_vec)))
    for start in starts:
        res = _descend(problem, start, settings, None)
        if res.objective < best.objective:
            best = res
    return best


def _descend(problem, phi0, settings, callback) -> RcgResult:
    """Polak-Ribiere+ conjugate gradient with Armijo backtracking.

    The gradient tolerance is relative to the Euclidean gradient norm at
    ``phi0`` so that badly scaled problems terminate sensibly.
    """
    rho = problem.radius
    phi = retract(np.asarray(phi0, dtype=complex), 0, rho)
    restart = settings.restart_every or problem.dim

    f = problem.objective(phi)
    if not np.isfinite(f):
        raise FloatingPointError("non-finite objective at iteration 0")
    eg = euclidean_gradient(problem, phi)
    g = project(phi, eg, rho)
    tol = settings.grad_tol * max(np.linalg.norm(eg), np.finfo(float).tiny)
    d = -g
    gg = _inner(g, g)
    history = [f]
    if callback:
        callback(0, phi, f)

    it = 0
    converged = np.sqrt(gg) <= tol
    while not converged and it < settings.max_iters:
        slope = _inner(g, d)
        if slope >= 0:
            d = -g
            slope = -gg
        # Newton step along d from the Riemannian Hessian (Euclidean part plus the
        # circle's Weingarten term), capped at about a radian per coordinate
        radial = np.real(eg * np.conj(phi)) / rho**2
        curv = 2 * _inner(d, problem.q_mat @ d) - float(np.sum(radial * np.abs(d) ** 2))
        alpha_cap = 2.0 * settings.initial_step * rho / np.max(np.abs(d))
        alpha = min(-slope / curv, alpha_cap) if curv > 0 else alpha_cap

        for _ in range(settings.max_backtracks):
            try:
                cand = retract(phi, alpha * d, rho)
            except RetractionError:
                alpha *= settings.backtrack
                continue
            f_cand = problem.objective(cand)
            if not np.isfinite(f_cand):
                raise FloatingPointError(f"non-finite objective at iteration {it + 1}")
            if f_cand <= f + settings.armijo_c * alpha * slope:
                break
            alpha *= settings.backtrack
        else:
            # no admissible decrease left at machine precision
            break

        it += 1
        eg_new = euclidean_gradient(problem, cand)
        g_new = project(cand, eg_new, rho)
        g_old_t = project(cand, g, rho)
        d_t = project(cand, d, rho)
        gg_new = _inner(g_new, g_new)
        beta = max(0.0, _inner(g_new, g_new - g_old_t) / gg) if gg > 0 else 0.0
        if it % restart == 0:
            beta = 0.0
        d = -g_new + beta * d_t
        phi, f, g, gg, eg = cand, f_cand, g_new, gg_new, eg_new
        history.append(f)
        if callback:
            callback(it, phi, f)
        converged = np.sqrt(gg) <= tol

    return RcgResult(phi=phi, objective=f, iters=it, converged=bool(converged), history=history)
