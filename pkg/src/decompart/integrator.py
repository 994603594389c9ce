"""Adaptive integration of the original and decomposed systems.

Flat state layout: ``[x (n) | X column-major (n*n) | Xinit column-major
(n*n) | path states]``. The physical state ``x`` is integrated alongside
the substorages so that ``A(t, x)`` uses it directly and the
reconstruction ``x = X 1 + Xinit 1`` stays an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .decomposition import DecomposedState
from .errors import OutOfRange, StepSizeUnderflow
from .model import CompartmentalModel, check_signs, snapshot_from_flows


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float
    rtol: float = 1e-8
    atol: float = 1e-10
    h0: float | None = None
    hmax: float = np.inf
    sample_grid: Sequence[float] | None = None
    t0: float = 0.0

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")

    def grid(self) -> np.ndarray:
        if self.sample_grid is None:
            return np.linspace(self.t0, self.t_end, 101)
        g = np.asarray(self.sample_grid, dtype=float)
        if g.size and (g[0] < self.t0 or g[-1] > self.t_end or np.any(np.diff(g) <= 0)):
            raise ValueError("sample grid must be strictly increasing inside [t0, t_end]")
        return g


@dataclass
class DecomposedTrajectory:
    model: CompartmentalModel
    mode: str
    times: np.ndarray
    x: np.ndarray  # (m, n)
    X: np.ndarray | None  # (m, n, n)
    Xinit: np.ndarray | None
    augmented: np.ndarray | None  # (m, p) path states
    terminal: DecomposedState
    paths: object | None = None  # pathflow.PathSystem
    config: IntegratorConfig | None = None
    dense: object | None = field(default=None, repr=False)
    stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def t0(self) -> float:
        return self.config.t0 if self.config else float(self.times[0])

    @property
    def t_end(self) -> float:
        return self.terminal.t

    @property
    def states(self) -> list[DecomposedState]:
        if self.X is None:
            raise ValueError("trajectory was integrated in original mode")
        return [DecomposedState(t, X, Xi, x) for t, X, Xi, x in zip(self.times, self.X, self.Xinit, self.x)]

    def state_at(self, t: float) -> DecomposedState:
        """Decomposed state at any ``t`` in range, via dense output."""
        y = self.flat_at(t)
        x, X, Xi, _ = unpack(y, self.n, self.mode != "original")
        return DecomposedState(float(t), X, Xi, x)

    def flat_at(self, t: float) -> np.ndarray:
        if t < self.t0 - 1e-12 or t > self.t_end + 1e-12:
            raise OutOfRange(f"t={t!r} outside [{self.t0!r}, {self.t_end!r}]")
        return self.dense(min(max(t, self.t0), self.t_end))


def pack(x, X=None, Xinit=None, extra=None) -> np.ndarray:
    parts = [np.asarray(x, dtype=float)]
    if X is not None:
        parts += [np.asarray(X).ravel(order="F"), np.asarray(Xinit).ravel(order="F")]
    if extra is not None:
        parts.append(np.asarray(extra, dtype=float))
    return np.concatenate(parts)


def unpack(y: np.ndarray, n: int, decomposed: bool = True):
    x = y[:n]
    if not decomposed:
        return x, None, None, y[n:]
    nn = n * n
    X = y[n : n + nn].reshape((n, n), order="F")
    Xi = y[n + nn : n + 2 * nn].reshape((n, n), order="F")
    return x, X, Xi, y[n + 2 * nn :]


def _flat_rhs(model: CompartmentalModel, decomposed: bool, paths):
    n = model.n

    def rhs(t, y):
        x, X, Xi, p = unpack(y, n, decomposed)
        # trial states may undershoot 0 by the error tolerance; flows are
        # evaluated on the nonnegative part, which exact solutions never leave
        x = np.maximum(x, 0.0)
        F, z, yv = model.evaluate(t, x)
        check_signs(F, z, yv, t)
        snap = snapshot_from_flows(t, x, F, z, yv)
        dx = snap.tau_in - snap.tau_out
        if not decomposed:
            return dx
        dX = snap.A @ X
        dX[np.diag_indices(n)] += z
        parts = [dx, dX.ravel(order="F"), (snap.A @ Xi).ravel(order="F")]
        if paths is not None:
            parts.append(paths.rhs(t, snap, X, Xi, p))
        return np.concatenate(parts)

    return rhs


def integrate(
    model: CompartmentalModel,
    config: IntegratorConfig,
    mode: str = "decomposed",
    paths=None,
) -> DecomposedTrajectory:
    """Integrate the model over ``[config.t0, config.t_end]``.

    ``mode`` is ``"original"`` or ``"decomposed"``; passing ``paths`` (a
    list of :class:`~decompart.pathflow.SubflowPath` or a compiled
    ``PathSystem``) couples their transient states into the same run.
    Uses the Dormand-Prince 5(4) pair with its quartic dense output.
    """
    from .pathflow import PathSystem  # local import, pathflow builds on this module

    if mode not in ("original", "decomposed"):
        raise ValueError(f"unknown mode {mode!r}")
    decomposed = mode == "decomposed" or paths is not None
    if paths is not None and not isinstance(paths, PathSystem):
        paths = PathSystem(model, list(paths))
    n = model.n
    x0 = np.array(model.x0, dtype=float)
    if decomposed:
        y0 = pack(x0, np.zeros((n, n)), np.diag(x0), paths.initial_state(config.t0, model) if paths else None)
    else:
        y0 = x0

    rhs = _flat_rhs(model, decomposed, paths)
    grid = config.grid()
    kwargs = {"max_step": config.hmax}
    if config.h0 is not None:
        kwargs["first_step"] = config.h0
    if paths is not None:
        # path blocks switch on at their start times; step exactly onto them
        starts = sorted({p.t1 for p in paths.paths if config.t0 < p.t1 < config.t_end})
    else:
        starts = []
    segments = [config.t0, *starts, config.t_end]
    sols = []
    y = y0
    nfev = 0
    for a, b in zip(segments[:-1], segments[1:]):
        sol = solve_ivp(rhs, (a, b), y, method="RK45", rtol=config.rtol, atol=config.atol, dense_output=True, **kwargs)
        nfev += sol.nfev
        if sol.status != 0:
            raise StepSizeUnderflow(float(sol.t[-1]), sol.message)
        sols.append(sol)
        y = sol.y[:, -1]
        if paths is not None:
            y = paths.activate(b, y, n)

    dense = _Piecewise(sols, segments, paths, n)
    ys = np.array([dense(t) for t in grid]).reshape(len(grid), len(y0))
    y_end = sols[-1].y[:, -1]
    x, X, Xi, p = unpack(y_end, n, decomposed)
    terminal = DecomposedState(config.t_end, X, Xi, x) if decomposed else DecomposedState(config.t_end, None, None, x)
    traj = DecomposedTrajectory(
        model=model,
        mode="decomposed" if decomposed else "original",
        times=grid,
        x=ys[:, :n],
        X=ys[:, n : n + n * n].reshape(-1, n, n, order="F") if decomposed else None,
        Xinit=ys[:, n + n * n : n + 2 * n * n].reshape(-1, n, n, order="F") if decomposed else None,
        augmented=ys[:, n + 2 * n * n :] if (decomposed and paths is not None) else None,
        terminal=terminal,
        paths=paths,
        config=config,
        dense=dense,
        stats={"nfev": nfev, "nsteps": sum(len(s.t) - 1 for s in sols)},
    )
    return traj


class _Piecewise:
    """Dense output stitched across segments; knots return stored values exactly."""

    def __init__(self, sols, segments, paths, n):
        self.sols = sols
        self.segments = segments
        self.knots = {}
        for s in sols:
            for t, col in zip(s.t, s.y.T):
                self.knots[float(t)] = col
        # after activation the next segment starts from modified values
        for k in range(1, len(sols)):
            self.knots[float(segments[k])] = sols[k].y[:, 0]

    def __call__(self, t: float) -> np.ndarray:
        t = float(t)
        if t in self.knots:
            return np.array(self.knots[t])
        k = np.searchsorted(self.segments, t, side="right") - 1
        k = min(max(k, 0), len(self.sols) - 1)
        return self.sols[k].sol(t)


def resample(traj: DecomposedTrajectory, times: Sequence[float]) -> DecomposedTrajectory:
    """Re-sample ``traj`` on ``times`` using its dense output."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size and (times[0] < traj.t0 - 1e-12 or times[-1] > traj.t_end + 1e-12):
        raise OutOfRange("resample times outside the integrated interval")
    if np.any(np.diff(times) <= 0):
        raise ValueError("resample times must be strictly increasing")
    n = traj.n
    decomposed = traj.mode == "decomposed"
    width = len(traj.dense(traj.t0))
    ys = np.array([traj.dense(t) for t in times]).reshape(len(times), width)
    # stored samples are returned as stored
    stored = {float(t): i for i, t in enumerate(traj.times)}
    for r, t in enumerate(times):
        i = stored.get(float(t))
        if i is not None:
            ys[r, :n] = traj.x[i]
            if decomposed:
                ys[r, n : n + n * n] = traj.X[i].ravel(order="F")
                ys[r, n + n * n : n + 2 * n * n] = traj.Xinit[i].ravel(order="F")
                if traj.augmented is not None:
                    ys[r, n + 2 * n * n :] = traj.augmented[i]
    return DecomposedTrajectory(
        model=traj.model,
        mode=traj.mode,
        times=times,
        x=ys[:, :n],
        X=ys[:, n : n + n * n].reshape(-1, n, n, order="F") if decomposed else None,
        Xinit=ys[:, n + n * n : n + 2 * n * n].reshape(-1, n, n, order="F") if decomposed else None,
        augmented=ys[:, n + 2 * n * n :] if traj.augmented is not None else None,
        terminal=traj.terminal,
        paths=traj.paths,
        config=traj.config,
        dense=traj.dense,
        stats=traj.stats,
    )
