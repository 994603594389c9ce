"""Closed-form solutions of linear compartmental systems ``x' = z(t) + A x``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad, quad_vec
from scipy.linalg import expm

from . import expr as ex
from .errors import ModelError, QuadratureNonconvergence, SingularA

QUAD_TOL = 1e-10
EIG_COND_MAX = 1e8


@dataclass(frozen=True)
class LinearModel:
    """Constant flow intensity matrix ``A``, input ``z`` and initial stocks ``x0``.

    ``z`` is a constant vector or a callable ``t -> vector``.
    """

    A: np.ndarray
    z: np.ndarray | Callable[[float], np.ndarray]
    x0: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError("A must be square")
        off = A - np.diag(np.diag(A))
        if np.any(off < 0):
            raise ModelError("off-diagonal entries of A must be nonnegative")
        scale = max(float(np.abs(A).max()), 1.0)
        if np.any(A.sum(axis=0) > 1e-12 * scale):
            raise ModelError("column sums of A must be nonpositive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(n))
        if not callable(self.z):
            object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def constant_input(self) -> bool:
        return not callable(self.z)

    def input_at(self, t: float) -> np.ndarray:
        return np.asarray(self.z(t), dtype=float) if callable(self.z) else self.z

    @classmethod
    def from_model(cls, model, t0: float = 0.0) -> "LinearModel":
        """Extract ``A`` and ``z`` from a model whose flows and outputs are ``c * x_j``."""
        info = model.linearity()
        if not info["linear"]:
            raise ModelError("model is not linear with constant coefficients")
        n = model.n
        A = np.zeros((n, n))
        for (i, j), tag in info["flows"].items():
            if i != j:
                A[i, j] = tag.c
        for j in range(n):
            A[j, j] = -(A[:, j].sum() + info["outputs"][j].c)
        if all(isinstance(tag, ex.ConstantInput) for tag in info["inputs"]):
            z = np.array([tag.c for tag in info["inputs"]])
        else:
            fns = [ex.compile_expr(e) for e in model.inputs]

            def z(t, fns=fns):
                return np.array([f(t, ()) for f in fns])

        return cls(A, z, np.array(model.x0), t0)


def fundamental_matrix(A, t, t0: float = 0.0) -> np.ndarray:
    """``V(t) = exp((t - t0) A)``; an array of times gives a ``(m, n, n)`` stack.

    Uses the eigendecomposition when the eigenvector matrix is well
    conditioned and the scaling-and-squaring Pade exponential otherwise.
    """
    A = np.asarray(A, dtype=float)
    ts = np.atleast_1d(np.asarray(t, dtype=float)) - t0
    lam, U = np.linalg.eig(A)
    if np.linalg.cond(U) < EIG_COND_MAX:
        Uinv = np.linalg.inv(U)
        V = np.einsum("ij,mj,jk->mik", U, np.exp(np.outer(ts, lam)), Uinv)
        V = V.real if np.isrealobj(A) else V
    else:
        V = np.array([expm(s * A) for s in ts])
    return V[0] if np.ndim(t) == 0 else V


@dataclass
class LinearSolution:
    times: np.ndarray
    X: np.ndarray  # (m, n, n)
    Xinit: np.ndarray
    x: np.ndarray  # (m, n)
    method: str


def _quad_vec(f, a, b):
    res, err, info = quad_vec(f, a, b, epsabs=QUAD_TOL, epsrel=0.0, limit=20000, full_output=True)
    if not info.success:
        raise QuadratureNonconvergence(f"quadrature on [{a!r}, {b!r}] did not converge (error {err:.3g})")
    return res


def solve_linear(lm: LinearModel, times: Sequence[float]) -> LinearSolution:
    """``X(t)``, ``Xinit(t)`` and ``x(t)`` at ``times``.

    ``Xinit = V(t) diag(x0)``. For constant input and invertible ``A``,
    ``X = (V(t) - I) A^-1 diag(z)``; otherwise ``X(t) = int V(t - s) diag(z(s)) ds``
    by adaptive Gauss-Kronrod quadrature, accumulated interval by interval.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(times < lm.t0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nondecreasing and not before t0")
    n = lm.n
    V = fundamental_matrix(lm.A, times, lm.t0).reshape(len(times), n, n)
    Xinit = V * lm.x0[None, None, :]
    method = "quadrature"
    X = None
    if lm.constant_input:
        try:
            X = _constant_input(lm, V)
            method = "closed form"
        except SingularA:
            X = None
    if X is None:
        X = np.zeros((len(times), n, n))
        prev_t, prev_X = lm.t0, np.zeros((n, n))
        for r, t in enumerate(times):
            if t > prev_t:
                step = fundamental_matrix(lm.A, t - prev_t)

                def f(s, t=t):
                    return fundamental_matrix(lm.A, t - s) * lm.input_at(s)[None, :]

                prev_X = step @ prev_X + _quad_vec(f, prev_t, t)
                prev_t = t
            X[r] = prev_X
    x = X.sum(axis=2) + Xinit.sum(axis=2)
    return LinearSolution(times, X, Xinit, x, method)


def _constant_input(lm: LinearModel, V: np.ndarray) -> np.ndarray:
    A = lm.A
    if np.linalg.cond(A) > 1e12:
        raise SingularA("A is singular; constant-input closed form unavailable")
    W = np.linalg.solve(A, np.diag(lm.z))
    n = lm.n
    return np.einsum("mij,jk->mik", V - np.eye(n)[None], W)


def link_rate(lm: LinearModel, node: int) -> float:
    """Residence intensity ``tau_out / x`` of compartment ``node`` (1-based) in a linear model."""
    return float(-lm.A[node - 1, node - 1])


def analytic_transient_storage(
    rinv: float | Callable[[float], float],
    f_in: Callable[[float], float],
    t1: float,
    t: float,
) -> float:
    """``x(t) = int_t1^t exp(-int_s^t rinv) f_in(s) ds`` by nested adaptive quadrature.

    ``rinv`` is the residence intensity ``tau_out / x`` of the link's
    donor, a constant or a function of time.
    """
    if t <= t1:
        return 0.0
    if callable(rinv):

        def decay(s):
            return _quad(rinv, s, t)

    else:
        k = float(rinv)

        def decay(s):
            return k * (t - s)

    return _quad(lambda s: np.exp(-decay(s)) * f_in(s), t1, t)


def _quad(f, a, b) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, _ = quad(f, a, b, epsabs=QUAD_TOL, epsrel=0.0, limit=500)
        except IntegrationWarning as exc:
            raise QuadratureNonconvergence(str(exc)) from None
    return float(val)
