"""Source-attributed decomposition of a compartmental system.

Column ``k`` of ``X`` holds the storage in every compartment that entered
the system as external input into compartment ``k``; column ``k`` of
``Xinit`` holds what derives from the initial stock of compartment ``k``.
Both evolve under the same flow intensity matrix ``A(t, x)`` of the
original system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CompartmentalModel, FlowSnapshot, guarded_div, snapshot


@dataclass(frozen=True)
class DecomposedState:
    t: float
    X: np.ndarray
    Xinit: np.ndarray
    # authoritative state integrated alongside X and Xinit, when available
    x: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def x0vec(self) -> np.ndarray:
        return self.Xinit.sum(axis=1)

    @property
    def state(self) -> np.ndarray:
        """The compartment state: the integrated one if present, else the reconstruction."""
        if self.x is not None:
            return self.x
        return self.X.sum(axis=1) + self.Xinit.sum(axis=1)

    @classmethod
    def initial(cls, model: CompartmentalModel, t0: float = 0.0) -> "DecomposedState":
        n = model.n
        return cls(t0, np.zeros((n, n)), np.diag(model.x0), np.array(model.x0, dtype=float))


@dataclass(frozen=True)
class SubflowMatrices:
    snap: FlowSnapshot
    D: np.ndarray
    D0: np.ndarray
    Tin: np.ndarray
    Tout: np.ndarray
    Ttilde: np.ndarray
    Tin_init: np.ndarray
    Tout_init: np.ndarray
    # per-initial-stock factors, column k = share of each compartment from stock k
    Dinit: np.ndarray

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def Fk(self) -> list[np.ndarray]:
        """Subsystem flow matrices ``F diag(D[:, k])``."""
        return [self.snap.F * self.D[None, :, k] for k in range(self.n)]

    @property
    def F0(self) -> np.ndarray:
        return self.snap.F * self.D0[None, :]

    @property
    def Fk_init(self) -> list[np.ndarray]:
        """Flow matrices of the per-stock initial subsystems."""
        return [self.snap.F * self.Dinit[None, :, k] for k in range(self.n)]

    def Tout_diag_sub(self, l: int) -> np.ndarray:
        """``diag(T̂[:, l])``, the outward subthroughflows of subsystem ``l``."""
        return np.diag(self.Tout[:, l])

    @property
    def Tout_diag_init(self) -> np.ndarray:
        """``diag(T̲̂ 1)``, outward throughflow derived from all initial stocks."""
        return np.diag(self.Tout_init.sum(axis=1))


def aggregate(ds: DecomposedState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(x, xbar, xinit)`` with ``x = xinit + xbar``."""
    xbar = ds.X.sum(axis=1)
    xinit = ds.Xinit.sum(axis=1)
    return xbar + xinit, xbar, xinit


def select_combination(ds: DecomposedState, alpha, beta) -> np.ndarray:
    """Storage generated by the inputs flagged in ``alpha`` and stocks flagged in ``beta``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return ds.X @ alpha + ds.Xinit @ beta


def subflows_from_snapshot(snap: FlowSnapshot, X: np.ndarray, Xinit: np.ndarray) -> SubflowMatrices:
    x = snap.x
    D = guarded_div(X, x[:, None])
    Dinit = guarded_div(Xinit, x[:, None])
    D0 = Dinit.sum(axis=1)
    Tin = np.diag(snap.z) + snap.F @ D
    Tout = snap.tau_out[:, None] * D
    Ttilde = snap.F @ D
    Tin_init = snap.F @ Dinit
    Tout_init = snap.tau_out[:, None] * Dinit
    return SubflowMatrices(snap, D, D0, Tin, Tout, Ttilde, Tin_init, Tout_init, Dinit)


def decomposed_snapshot(model: CompartmentalModel, t: float, ds: DecomposedState) -> SubflowMatrices:
    """Decomposition factors and subthroughflow matrices at ``ds``.

    Uses the integrated state ``ds.x`` when present and the reconstruction
    ``X 1 + Xinit 1`` otherwise.
    """
    snap = snapshot(model, t, ds.state)
    return subflows_from_snapshot(snap, ds.X, ds.Xinit)


def rhs_decomposed(model: CompartmentalModel, t: float, ds: DecomposedState) -> tuple[np.ndarray, np.ndarray]:
    """``(dX/dt, dXinit/dt) = (diag(z) + A X, A Xinit)``."""
    snap = snapshot(model, t, ds.state)
    return np.diag(snap.z) + snap.A @ ds.X, snap.A @ ds.Xinit
