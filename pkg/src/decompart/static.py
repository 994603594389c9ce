"""Steady-state decomposition and static diact analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularA
from .model import EPS_X, FlowSnapshot, guarded_div

KINDS = ("d", "i", "a", "c", "t")


@dataclass(frozen=True)
class StaticSystem:
    """Steady flows ``F`` (``F[i, j]`` from j to i), inputs ``z``, outputs ``y``.

    Storages ``x`` are optional; without them (or residence times ``R``)
    only flow quantities are available.
    """

    F: np.ndarray
    z: np.ndarray
    y: np.ndarray
    x: np.ndarray | None = None
    R: np.ndarray | None = None  # residence times, used to derive x when x is absent
    A: np.ndarray | None = None  # flow intensity matrix override
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        n = F.shape[0]
        if F.shape != (n, n):
            raise ValueError("F must be square")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(n))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(n))
        notes = list(self.notes)
        x = self.x
        if x is None and self.R is not None:
            x = np.asarray(self.R, dtype=float).reshape(n) * self.tau
            notes.append("storages derived as R * tau")
        if x is not None:
            x = np.asarray(x, dtype=float).reshape(n)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "notes", tuple(notes))

    @classmethod
    def from_snapshot(cls, snap: FlowSnapshot) -> "StaticSystem":
        return cls(snap.F.copy(), snap.z.copy(), snap.y.copy(), snap.x.copy())

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def tau_in(self) -> np.ndarray:
        return self.z + self.F.sum(axis=1)

    @property
    def tau(self) -> np.ndarray:
        """Outward throughflows ``y + F^T 1``."""
        return self.y + self.F.sum(axis=0)

    def balance_residual(self) -> float:
        """Largest relative mismatch between inward and outward throughflow."""
        scale = max(float(np.abs(self.tau).max()), 1e-300)
        return float(np.abs(self.tau_in - self.tau).max()) / scale

    @property
    def balanced(self) -> bool:
        return self.balance_residual() <= 1e-6

    @property
    def residence(self) -> np.ndarray | None:
        if self.x is None:
            return None
        return guarded_div(self.x, self.tau)

    def intensity(self) -> np.ndarray:
        if self.A is not None:
            return np.asarray(self.A, dtype=float)
        if self.x is None:
            raise ValueError("storages are needed to form the flow intensity matrix")
        return guarded_div(self.F - np.diag(self.tau), self.x[None, :])

    def throughflow_matrix(self) -> np.ndarray:
        """``N = (I - F T^-1)^-1``; column ``k`` is the throughflow generated per unit input at ``k``."""
        n = self.n
        Q = guarded_div(self.F, self.tau[None, :])
        try:
            return np.linalg.inv(np.eye(n) - Q)
        except np.linalg.LinAlgError as exc:
            raise SingularA("I - F T^-1 is singular") from exc

    def subthroughflows(self) -> np.ndarray:
        """Steady subthroughflows ``N diag(z)`` (inward equals outward)."""
        return self.throughflow_matrix() * self.z[None, :]


def static_decompose(s: StaticSystem) -> tuple[np.ndarray | None, np.ndarray]:
    """Steady substorages and subthroughflows ``(X, T)``.

    ``X = -A^-1 diag(z)`` when storages (or ``A``) are known, else ``None``;
    ``T = R^-1 X``, computed from flows alone so it exists either way.
    """
    T = s.subthroughflows()
    if s.x is None and s.A is None:
        return None, T
    A = s.intensity()
    # compartments without storage and throughflow carry nothing; keep them out of the solve
    live = np.ones(s.n, dtype=bool) if s.x is None else (s.x > EPS_X) | (s.tau > EPS_X)
    X = np.zeros((s.n, s.n))
    try:
        X[np.ix_(live, live)] = -np.linalg.solve(A[np.ix_(live, live)], np.diag(s.z[live]))
    except np.linalg.LinAlgError as exc:
        raise SingularA("flow intensity matrix is singular") from exc
    if s.x is not None:
        T = guarded_div(s.tau, s.x)[:, None] * X
    return X, T


@dataclass
class StaticDiact:
    N: dict[str, np.ndarray]
    T: dict[str, np.ndarray]  # composite, N^* diag(tau)
    Ttilde: dict[str, np.ndarray]  # simple, N^* diag(T_kk)
    S: dict[str, np.ndarray] | None
    X: dict[str, np.ndarray] | None
    Xtilde: dict[str, np.ndarray] | None
    Tsub: np.ndarray  # subthroughflows, column k from input k
    flags: list[str]
    z: np.ndarray | None = None

    @property
    def Ttilde_a_entry(self) -> np.ndarray:
        """Simple acyclic flows counting the external input as the first acyclic entry at ``k_k``.

        The distribution formula puts 0 on the diagonal; this variant adds
        ``z`` there, the convention used by published static tables.
        """
        return self.Ttilde["a"] + np.diag(self.z)

    def T_subsystem(self, kind: str, l: int) -> np.ndarray:
        """``N^* diag(T[:, l])``, flows generated within subsystem ``l`` (0-based)."""
        return self.N[kind] * self.Tsub[None, :, l]


def indirect_support(F) -> np.ndarray:
    """Mask of ``(i, k)`` pairs that can carry indirect flow.

    Indirect flow from ``k`` to ``i`` needs a donor ``j != k`` of ``i``
    reachable from ``k`` without passing through ``k`` again.
    """
    adj = np.asarray(F) > 0
    n = adj.shape[0]
    out = np.zeros((n, n), dtype=bool)
    for k in range(n):
        seen = np.zeros(n, dtype=bool)
        stack = list(np.flatnonzero(adj[:, k]))
        while stack:
            j = stack.pop()
            if j == k or seen[j]:
                continue
            seen[j] = True
            stack.extend(np.flatnonzero(adj[:, j]))
        out[:, k] = (adj[:, seen]).any(axis=1)
    return out


def static_distribution(s: StaticSystem) -> tuple[dict[str, np.ndarray], list[str]]:
    """The five static diact distribution matrices."""
    flags = []
    n = s.n
    I = np.eye(n)
    N = s.throughflow_matrix()
    Nd_diag = np.diag(N)
    inv = guarded_div(1.0, Nd_diag, EPS_X)
    if np.any(Nd_diag <= EPS_X):
        flags.append("zero diagonal in N; affected columns set to 0")
    Ninv = np.diag(inv)
    dist = {}
    dist["d"] = guarded_div(s.F, s.tau[None, :])
    dist["t"] = (N - I) @ Ninv
    dist["i"] = dist["t"] - dist["d"]
    # structural zeros are exact; round-off from the inverse would blur them
    none = ~indirect_support(s.F)
    dist["i"][none] = 0.0
    dist["t"][none] = dist["d"][none]
    dist["a"] = (Ninv @ N - I) @ Ninv
    dist["c"] = (N - Ninv @ N) @ Ninv
    zero_tau = np.flatnonzero(s.tau <= EPS_X)
    if zero_tau.size:
        flags.append(f"zero throughflow at compartments {list(zero_tau + 1)}; quotients set to 0")
    return dist, flags


def static_diact(s: StaticSystem) -> StaticDiact:
    """Static diact flows and, when storages are known, storages.

    Composite flows use the full throughflow matrix ``N``, so compartments
    without external input still carry transfer flows; simple flows use the
    diagonal subthroughflows and vanish in those columns.
    """
    dist, flags = static_distribution(s)
    tau = s.tau
    Tsub = s.subthroughflows()
    Tkk = np.diag(Tsub)
    zero_in = np.flatnonzero(s.z <= 0)
    if zero_in.size:
        flags.append(f"no external input at compartments {list(zero_in + 1)}; simple flows are 0 there")
    T = {k: v * tau[None, :] for k, v in dist.items()}
    Tt = {k: v * Tkk[None, :] for k, v in dist.items()}
    S = X = Xt = None
    if s.x is not None:
        r = s.residence
        S = {k: r[:, None] * v for k, v in dist.items()}
        X = {k: v * tau[None, :] for k, v in S.items()}
        Xt = {k: v * Tkk[None, :] for k, v in S.items()}
    else:
        flags.append("no storages given; storage outputs omitted")
    return StaticDiact(dist, T, Tt, S, X, Xt, Tsub, flags, s.z.copy())


@dataclass
class ResidenceReport:
    r: np.ndarray
    order: np.ndarray  # compartments sorted from shortest to longest residence
    infinite: np.ndarray  # mask where outward throughflow vanishes
    rdot: np.ndarray | None = None


def residence_times(obj) -> ResidenceReport:
    """Residence times ``x / tau_out`` (infinite where ``tau_out <= EPS_X``).

    Accepts a :class:`FlowSnapshot`, a :class:`StaticSystem` with storages,
    or a trajectory, in which case ``r`` is ``(m, n)`` and ``rdot`` holds
    finite-difference rates on the sample grid.
    """
    if isinstance(obj, FlowSnapshot):
        return _residence(obj.x, obj.tau_out)
    if isinstance(obj, StaticSystem):
        if obj.x is None:
            raise ValueError("static system has no storages")
        return _residence(obj.x, obj.tau)
    # trajectory
    model = obj.model
    rs = []
    for t, x in zip(obj.times, obj.x):
        F, z, y = model.evaluate(t, x)
        rs.append(_residence(x, y + F.sum(axis=0)).r)
    r = np.array(rs)
    rdot = np.gradient(r, obj.times, axis=0) if len(obj.times) > 1 else np.zeros_like(r)
    last = _residence(obj.x[-1], None, r[-1])
    return ResidenceReport(r, last.order, ~np.isfinite(r), rdot)


def _residence(x, tau, r=None) -> ResidenceReport:
    if r is None:
        x = np.asarray(x, dtype=float)
        tau = np.asarray(tau, dtype=float)
        r = np.full(x.shape, np.inf)
        ok = tau > EPS_X
        r[ok] = x[ok] / tau[ok]
    order = np.argsort(r, kind="stable") + 1
    return ResidenceReport(r, order, ~np.isfinite(r))
