"""Direct, indirect, acyclic, cycling and transfer (diact) flows along a trajectory.

Every kind is a distribution matrix ``N^*`` applied to a diagonal
throughflow matrix: composite flows use the throughflow generated by all
external inputs, simple flows the diagonal subthroughflows ``T̂_kk``, and
the initial variants the throughflow derived from initial stocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .decomposition import SubflowMatrices, subflows_from_snapshot
from .errors import DegenerateDiagonal, PathSetTooLarge, StepSizeUnderflow
from .model import EPS_X, guarded_div, snapshot_from_flows

KINDS = ("d", "i", "a", "c", "t")
VARIANTS = ("composite", "simple", "init", "init_simple")


def diact_distribution(sub: SubflowMatrices, eps: float = EPS_X) -> tuple[dict[str, np.ndarray], list[int]]:
    """The five distribution matrices at one sample.

    Returns ``(N, degenerate)`` where ``degenerate`` lists the 1-based
    compartments whose diagonal subthroughflow is at or below ``eps``.
    Those columns are 0 in every kind, so both sum identities still hold
    and no entry turns negative.
    """
    Tout = sub.Tout
    dk = np.diag(Tout).copy()
    inv = guarded_div(1.0, dk, eps)
    degenerate = [int(k) + 1 for k in np.flatnonzero(dk <= eps)]
    N = {}
    N["d"] = sub.snap.Qtau.copy()
    N["t"] = sub.Ttilde * inv[None, :]
    N["i"] = N["t"] - N["d"]
    cyc = np.diag(sub.Ttilde) * inv
    N["c"] = cyc[:, None] * Tout * inv[None, :]
    N["a"] = N["t"] - N["c"]
    if degenerate:
        cols = np.array(degenerate) - 1
        for M in N.values():
            M[:, cols] = 0.0
    return N, degenerate


def diact_flows(N: dict[str, np.ndarray], sub: SubflowMatrices) -> dict[str, dict[str, np.ndarray]]:
    """Flow matrices of every variant for each kind in ``N``.

    ``composite`` is ``N^* (T - T̂0)``, ``simple`` is ``N^* diag(T̂_kk)``,
    ``init`` is ``N^* T̂0`` and ``init_simple`` is ``N^* diag(T̲̂_kk)``;
    ``total`` is ``composite + init = N^* T``.
    """
    tau = sub.snap.tau_out
    t_init = tau * sub.D0
    t_ext = sub.Tout.sum(axis=1)
    dk = np.diag(sub.Tout)
    dk0 = np.diag(sub.Tout_init)
    out = {v: {} for v in (*VARIANTS, "total")}
    for kind, M in N.items():
        out["composite"][kind] = M * t_ext[None, :]
        out["simple"][kind] = M * dk[None, :]
        out["init"][kind] = M * t_init[None, :]
        out["init_simple"][kind] = M * dk0[None, :]
        out["total"][kind] = M * tau[None, :]
    return out


def subsystem_flows(N: dict[str, np.ndarray], sub: SubflowMatrices, l: int) -> dict[str, np.ndarray]:
    """``N^* diag(T̂[:, l])``, the diact flows generated within subsystem ``l`` (1-based)."""
    col = sub.Tout[:, l - 1]
    return {kind: M * col[None, :] for kind, M in N.items()}


@dataclass
class DiactResultSet:
    """Diact matrices on a sample grid; arrays are ``(m, n, n)``.

    ``flows[variant][kind]`` for variants ``composite``, ``simple``,
    ``init``, ``init_simple`` and ``total``; ``storages`` has the same
    shape when requested.
    """

    times: np.ndarray
    N: dict[str, np.ndarray]
    flows: dict[str, dict[str, np.ndarray]]
    storages: dict[str, dict[str, np.ndarray]] | None = None
    flags: list[str] = field(default_factory=list)
    degenerate: list[tuple[float, int]] = field(default_factory=list)

    def T(self, kind: str) -> np.ndarray:
        return self.flows["composite"][kind]

    def Ttilde(self, kind: str) -> np.ndarray:
        return self.flows["simple"][kind]

    def T_init(self, kind: str) -> np.ndarray:
        return self.flows["init"][kind]

    def Ttilde_init(self, kind: str) -> np.ndarray:
        return self.flows["init_simple"][kind]

    def X(self, kind: str) -> np.ndarray:
        return self.storages["composite"][kind]

    def Xtilde(self, kind: str) -> np.ndarray:
        return self.storages["simple"][kind]

    def X_init(self, kind: str) -> np.ndarray:
        return self.storages["init"][kind]


def _sub_at(traj, t: float) -> SubflowMatrices:
    ds = traj.state_at(t)
    F, z, y = traj.model.evaluate(t, ds.state)
    snap = snapshot_from_flows(t, ds.state, F, z, y)
    return subflows_from_snapshot(snap, ds.X, ds.Xinit)


def _sub_at_sample(traj, r: int) -> SubflowMatrices:
    t, x = traj.times[r], traj.x[r]
    F, z, y = traj.model.evaluate(t, x)
    snap = snapshot_from_flows(t, x, F, z, y)
    return subflows_from_snapshot(snap, traj.X[r], traj.Xinit[r])


def diact_series(traj, kinds=KINDS, storages: bool = True, t1: float | None = None) -> DiactResultSet:
    """Diact distribution and flow matrices at every sample of ``traj``.

    With ``storages`` the storage matrices are integrated as a post-pass
    over the trajectory's dense output, starting from 0 at ``t1``
    (default: the trajectory start).
    """
    if traj.X is None:
        raise ValueError("diact analysis needs a decomposed trajectory")
    kinds = tuple(kinds)
    m, n = len(traj.times), traj.n
    N = {k: np.zeros((m, n, n)) for k in kinds}
    flows = {v: {k: np.zeros((m, n, n)) for k in kinds} for v in (*VARIANTS, "total")}
    degenerate = []
    structural = set(range(1, n + 1))
    for r in range(m):
        sub = _sub_at_sample(traj, r)
        Nr, deg = diact_distribution(sub)
        degenerate += [(float(traj.times[r]), k) for k in deg]
        if traj.times[r] > traj.t0:
            structural &= set(deg)
        Nr = {k: Nr[k] for k in kinds}
        fr = diact_flows(Nr, sub)
        for k in kinds:
            N[k][r] = Nr[k]
            for v in flows:
                flows[v][k][r] = fr[v][k]
    flags = []
    if structural and m > 1:
        flags.append(f"subsystems {sorted(structural)} carry no throughflow; their columns are 0")
    transient = [(t, k) for t, k in degenerate if k not in structural or m == 1]
    if transient:
        ts = sorted({t for t, _ in transient})
        flags.append(
            f"degenerate diagonal subthroughflow at {len(ts)} sample(s) (first t={ts[0]!r}); columns set to 0"
        )
        later = [t for t in ts if t > traj.t0]
        if later:
            warnings.warn(f"diagonal subthroughflow vanishes after t0 (t={later[0]!r})", DegenerateDiagonal)
    res = DiactResultSet(np.array(traj.times), N, flows, None, flags, degenerate)
    if storages:
        res.storages = diact_storages(traj, kinds, t1=t1)
    return res


def diact_storages(traj, kinds=KINDS, t1: float | None = None, variants=VARIANTS,
                   rtol: float | None = None, atol: float | None = None) -> dict[str, dict[str, np.ndarray]]:
    """Integrate ``dx*/dt = tau*(t) - (tau_out_i / x_i) x*`` from ``x*(t1) = 0``.

    All requested (variant, kind) matrices share one post-pass run over
    the dense output of ``traj``. Samples before ``t1`` are 0.
    """
    kinds, variants = tuple(kinds), tuple(variants)
    n = traj.n
    nn = n * n
    t0 = traj.t0 if t1 is None else float(t1)
    t_end = traj.t_end
    cfg = traj.config
    rtol = rtol if rtol is not None else (cfg.rtol if cfg else 1e-8)
    atol = atol if atol is not None else (cfg.atol if cfg else 1e-10)
    blocks = [(v, k) for v in variants for k in kinds]

    def rhs(t, y):
        sub = _sub_at(traj, t)
        Nt, _ = diact_distribution(sub)
        fl = diact_flows({k: Nt[k] for k in kinds}, sub)
        decay = guarded_div(sub.snap.tau_out, sub.snap.x)[:, None]
        out = np.empty_like(y)
        for b, (v, k) in enumerate(blocks):
            Xs = y[b * nn : (b + 1) * nn].reshape((n, n), order="F")
            out[b * nn : (b + 1) * nn] = (fl[v][k] - decay * Xs).ravel(order="F")
        return out

    times = np.asarray(traj.times)
    result = {v: {k: np.zeros((len(times), n, n)) for k in kinds} for v in variants}
    if t0 >= t_end:
        return result
    sel = times >= t0
    sol = solve_ivp(rhs, (t0, t_end), np.zeros(len(blocks) * nn), method="RK45", rtol=rtol, atol=atol,
                    t_eval=times[sel])
    if sol.status != 0:
        raise StepSizeUnderflow(float(sol.t[-1]), sol.message)
    for b, (v, k) in enumerate(blocks):
        result[v][k][sel] = sol.y[b * nn : (b + 1) * nn].T.reshape(-1, n, n, order="F")
    return result


# ---------------------------------------------------------------- path-based oracle


@dataclass
class DiactCheckReport:
    i: int
    k: int
    kind: str
    times: np.ndarray
    path_value: np.ndarray
    formula_value: np.ndarray
    tail: np.ndarray  # truncation estimate at compartment i

    @property
    def error(self) -> np.ndarray:
        return np.abs(self.path_value - self.formula_value)

    @property
    def max_error(self) -> float:
        return float(self.error.max()) if self.error.size else 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return bool(np.all(self.error <= np.maximum(tol, self.tail)))


def _visit_classes(system):
    """Per visit: parent compartment (-1 at the root) and whether it re-enters its compartment."""
    V = system.size
    reentry = np.zeros(V, dtype=bool)
    for v in range(V):
        c = system.comp[v]
        p = system.parent[v]
        while p >= 0:
            if system.comp[p] == c:
                reentry[v] = True
                break
            p = system.parent[p]
    parent_comp = np.where(system.parent >= 0, system.parent_comp, -1)
    return parent_comp, reentry


def path_based_diact(traj, k: int, cycles: int = 8, max_visits: int = 20000):
    """Simple diact flows of subsystem ``k`` summed over its enumerated visit tree.

    ``traj`` must have been integrated with the paths of
    :func:`~decompart.pathflow.visit_tree` for ``k``. Returns a dict
    ``kind -> (m, n)`` where column ``i-1`` is the flow from ``k`` to ``i``.
    """
    from .pathflow import _snapshots

    system = traj.paths
    sel = np.array([vis.root[0] == k for vis in system.visits])
    parent_comp, reentry = _visit_classes(system)
    kc = k - 1
    m, n = len(traj.times), traj.n
    out = {kind: np.zeros((m, n)) for kind in KINDS}
    for r, snap in enumerate(_snapshots(traj)):
        inflow = system.inflows(snap, traj.X[r], traj.Xinit[r], traj.augmented[r])
        for v in np.flatnonzero(sel):
            if system.is_root[v]:
                continue  # the external input is not a transfer from k
            c = system.comp[v]
            f = inflow[v]
            if c == kc and not reentry[v]:
                continue
            out["t"][r, c] += f
            if parent_comp[v] == kc:
                out["d"][r, c] += f
            if reentry[v]:
                out["c"][r, c] += f
    out["i"] = out["t"] - out["d"]
    out["a"] = out["t"] - out["c"]
    return out


def path_based_diact_check(model, config, i: int, k: int, kind: str, cycles: int = 8,
                           max_visits: int = 20000, traj=None) -> DiactCheckReport:
    """Compare the simple ``kind`` flow from ``k`` to ``i`` along enumerated paths with the closed formula.

    Paths are all chains of subsystem ``k`` in which no compartment is
    entered more than ``cycles + 1`` times; the flow is read from the
    transient inflows of the visits of ``i``. Only small models are
    supported (``n <= 4``).
    """
    from .integrator import integrate
    from .pathflow import exhaustiveness, visit_tree

    if model.n > 4:
        raise PathSetTooLarge("path-based diact checks are limited to n <= 4")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if traj is None or traj.paths is None:
        paths = visit_tree(model, k, cycles=cycles, max_visits=max_visits)
        traj = integrate(model, config, paths=paths)
    pv = path_based_diact(traj, k, cycles)[kind][:, i - 1]
    fv = np.zeros(len(traj.times))
    for r in range(len(traj.times)):
        sub = _sub_at_sample(traj, r)
        Nr, _ = diact_distribution(sub)
        fv[r] = Nr[kind][i - 1, k - 1] * sub.Tout[k - 1, k - 1]
    tail = np.abs(exhaustiveness(traj, k).inflow_err[:, i - 1])
    return DiactCheckReport(i, k, kind, np.array(traj.times), pv, fv, tail)
