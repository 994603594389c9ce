"""Subflow paths and the transient flows and storages carried along them.

A path lives in one subsystem ``k`` (``0`` is the initial-stock subsystem).
It receives a local input at its connection and follows a chain of
compartments. Each visit of the chain holds its own transient storage

    dx_v/dt = f_in,v - (tau_out_l / x_l) x_v

where the inflow of the first visit is the local input and every later
visit is fed by the previous one at rate ``f_{next,l} / x_l``. A closed
path (last node already on the chain) is unrolled ``cycles`` times.

Paths integrated together share the visits of any common prefix, so a
visit is one ODE block no matter how many paths run through it.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PathSetTooLarge, PathSyntaxError, UnreachableOutput, ZeroThroughflow
from .model import CompartmentalModel, FlowSnapshot, guarded_div

DEFAULT_CYCLES = 6


@dataclass(frozen=True)
class SubflowPath:
    """A directed chain of compartments inside one subsystem.

    ``nodes`` are 1-based compartment indices; ``nodes[0]`` is the
    connection. ``source`` is ``None`` when the local input comes from the
    exterior (external input, or the initial stock for ``subsystem == 0``)
    and a compartment index otherwise; ``source == nodes[0]`` means the
    inward subthroughflow of the connection.
    """

    subsystem: int
    nodes: tuple[int, ...]
    source: int | None = None
    exits: bool = False
    channel: str | None = None
    cycles: int = 1
    t1: float = 0.0

    def __post_init__(self):
        if not self.nodes:
            raise PathSyntaxError("a path needs at least one compartment")
        if self.cycles < 1:
            raise PathSyntaxError("cycles must be at least 1")
        if any(v < 1 for v in self.nodes):
            raise PathSyntaxError("the exterior 0 may only close a path")
        if self.channel is not None and not self.exits:
            raise PathSyntaxError("an output channel needs a terminal link to 0")

    @property
    def connection(self) -> int:
        return self.nodes[0]

    @property
    def local_source(self) -> int:
        return 0 if self.source is None else self.source

    @property
    def links(self) -> list[tuple[int, int]]:
        out = list(zip(self.nodes[:-1], self.nodes[1:]))
        if self.exits:
            out.append((self.nodes[-1], 0))
        return out

    @property
    def closed(self) -> bool:
        return not self.exits and len(self.nodes) > 1 and self.nodes[-1] in self.nodes[:-1]

    def chain(self) -> tuple[int, ...]:
        """Compartments visited in order, with a closed cycle unrolled."""
        if not self.closed:
            return self.nodes
        p = self.nodes.index(self.nodes[-1])
        body = self.nodes[p + 1 :]
        return self.nodes + body * (self.cycles - 1)

    def to_text(self, names: Sequence[str] | None = None) -> str:
        def lab(v):
            return names[v - 1] if names else str(v)

        parts = [f"{self.subsystem}:"]
        if self.source is not None:
            parts.append(f"src={lab(self.source)}")
        seq = " -> ".join(lab(v) for v in self.nodes)
        if self.exits:
            seq += " -> 0" + (f":{self.channel}" if self.channel else "")
        parts.append(seq)
        if self.closed or self.cycles != 1:
            parts.append(f"cycles={self.cycles}")
        if self.t1 != 0.0:
            parts.append(f"from={self.t1!r}")
        return " ".join(parts)


_PATH_RE = re.compile(r"^\s*(?P<k>\d+)\s*:\s*(?P<body>.*?)\s*$")


def parse_path(text: str, names: Sequence[str] | None = None, cycles: int | None = None) -> SubflowPath:
    """Parse ``k: [src=i|src=in] a -> b -> ... [-> 0[:channel]] [cycles=m] [from=t1]``.

    Nodes are 1-based indices or, when ``names`` is given, labels.
    ``cycles`` supplies the default depth for closed paths.
    """
    m = _PATH_RE.match(text)
    if not m:
        raise PathSyntaxError(f"path {text!r}: expected 'k: nodes'")
    k = int(m.group("k"))
    body = m.group("body")
    source: int | None = None
    n_cycles: int | None = None
    t1 = 0.0

    def resolve(tok: str) -> int:
        tok = tok.strip()
        if re.fullmatch(r"\d+", tok):
            return int(tok)
        if names is not None and tok in names:
            return list(names).index(tok) + 1
        raise PathSyntaxError(f"path {text!r}: unknown node {tok!r}")

    sm = re.match(r"src\s*=\s*(\S+)\s+", body)
    if sm:
        val = sm.group(1)
        source = None if val == "in" else resolve(val)
        body = body[sm.end() :]
    while True:
        tm = re.search(r"\s+(cycles|from)\s*=\s*(\S+)\s*$", body)
        if not tm:
            break
        key, val = tm.group(1), tm.group(2)
        try:
            if key == "cycles":
                n_cycles = int(val)
            else:
                t1 = float(val)
        except ValueError:
            raise PathSyntaxError(f"path {text!r}: bad value for {key}") from None
        body = body[: tm.start()]
    toks = [s.strip() for s in body.split("->")]
    if not toks or any(not s for s in toks):
        raise PathSyntaxError(f"path {text!r}: empty node")
    exits, channel = False, None
    last = toks[-1]
    if last == "0" or last.startswith("0:"):
        exits = True
        channel = last[2:] or None if last.startswith("0:") else None
        toks = toks[:-1]
    nodes = tuple(resolve(s) for s in toks)
    if names is not None and any(v > len(names) for v in nodes):
        raise PathSyntaxError(f"path {text!r}: node out of range")
    if n_cycles is None:
        n_cycles = cycles if cycles is not None else DEFAULT_CYCLES
    path = SubflowPath(k, nodes, source, exits, channel, n_cycles, t1)
    if not path.closed:
        path = SubflowPath(k, nodes, source, exits, channel, 1, t1)
    return path


# ---------------------------------------------------------------- compiled path sets


@dataclass
class _Visit:
    comp: int  # 0-based compartment
    parent: int  # index of feeding visit, -1 for the connection visit
    root: tuple  # (subsystem, source, t1)


class PathSystem:
    """A set of paths compiled into shared visit blocks."""

    def __init__(self, model: CompartmentalModel, paths: Sequence[SubflowPath]):
        self.model = model
        self.paths = list(paths)
        n = model.n
        self.visits: list[_Visit] = []
        index: dict[tuple, int] = {}
        self.path_visits: list[list[int]] = []
        for p in self.paths:
            if not 0 <= p.subsystem <= n:
                raise PathSyntaxError(f"subsystem {p.subsystem} out of range 0..{n}")
            if any(v > n for v in p.nodes) or (p.source is not None and p.source > n):
                raise PathSyntaxError(f"path {p.to_text()!r} refers to a compartment beyond n={n}")
            root = (p.subsystem, p.source, float(p.t1))
            ids = []
            parent = -1
            chain = p.chain()
            for depth in range(len(chain)):
                key = (root, chain[: depth + 1])
                if key not in index:
                    index[key] = len(self.visits)
                    self.visits.append(_Visit(chain[depth] - 1, parent, root))
                parent = index[key]
                ids.append(parent)
            self.path_visits.append(ids)
        self.comp = np.array([v.comp for v in self.visits], dtype=int)
        self.parent = np.array([v.parent for v in self.visits], dtype=int)
        self.parent_comp = np.where(self.parent >= 0, self.comp[np.maximum(self.parent, 0)], 0)
        self.is_root = self.parent < 0
        self.roots = np.flatnonzero(self.is_root)
        self.t1 = np.array([v.root[2] for v in self.visits])

    @property
    def size(self) -> int:
        return len(self.visits)

    # local inputs -------------------------------------------------------

    def local_inputs(self, snap: FlowSnapshot, X: np.ndarray, Xi: np.ndarray) -> np.ndarray:
        """Inflow into every connection visit (zero for non-root visits)."""
        out = np.zeros(self.size)
        for r in self.roots:
            k, source, _ = self.visits[r].root
            c = self.visits[r].comp
            out[r] = local_input(snap, X, Xi, k, source, c + 1)
        return out

    def initial_state(self, t0: float, model: CompartmentalModel) -> np.ndarray:
        s = np.zeros(self.size)
        for r in self.roots:
            k, source, t1 = self.visits[r].root
            if k == 0 and source is None and t1 == t0:
                s[r] = model.x0[self.visits[r].comp]
        return s

    def activate(self, t: float, y: np.ndarray, n: int) -> np.ndarray:
        """Seed initial-stock paths that start at ``t`` with the initial-subsystem storage."""
        y = np.array(y)
        off = n + 2 * n * n
        Xi = y[n + n * n : off].reshape((n, n), order="F")
        for r in self.roots:
            k, source, t1 = self.visits[r].root
            if k == 0 and source is None and t1 == t:
                y[off + r] = Xi[self.visits[r].comp].sum()
        return y

    # dynamics -----------------------------------------------------------

    def rhs(self, t: float, snap: FlowSnapshot, X: np.ndarray, Xi: np.ndarray, p: np.ndarray) -> np.ndarray:
        kout = guarded_div(snap.tau_out, snap.x)[self.comp]
        inflow = self.inflows(snap, X, Xi, p)
        d = inflow - kout * p
        d[self.t1 > t] = 0.0
        return d

    def inflows(self, snap: FlowSnapshot, X: np.ndarray, Xi: np.ndarray, p: np.ndarray) -> np.ndarray:
        fed = snap.Qx[self.comp, self.parent_comp] * p[np.maximum(self.parent, 0)]
        return np.where(self.is_root, self.local_inputs(snap, X, Xi), fed)


def local_input(snap: FlowSnapshot, X, Xi, k: int, source: int | None, c: int) -> float:
    """Local input into connection ``c`` (1-based) of a path in subsystem ``k``."""
    ci = c - 1
    if k == 0:
        D = guarded_div(Xi.sum(axis=1), snap.x)
        if source is None:
            return 0.0  # the initial stock is seeded as storage instead
        if source == c:
            return float(snap.F[ci] @ D)
        return float(snap.F[ci, source - 1] * D[source - 1])
    D = guarded_div(X[:, k - 1], snap.x)
    if source is None:
        return float(snap.z[ci]) if ci == k - 1 else 0.0
    if source == c:
        return float((snap.z[ci] if ci == k - 1 else 0.0) + snap.F[ci] @ D)
    return float(snap.F[ci, source - 1] * D[source - 1])


def transient_rhs(path: SubflowPath, model: CompartmentalModel, t: float, ds, pstate) -> np.ndarray:
    """Time derivative of the transient storages of a single path.

    ``pstate`` holds one value per visit of ``path.chain()``.
    """
    from .model import snapshot

    system = PathSystem(model, [path])
    snap = snapshot(model, t, ds.state)
    return system.rhs(t, snap, ds.X, ds.Xinit, np.asarray(pstate, dtype=float))


# ---------------------------------------------------------------- records


@dataclass
class TransientRecord:
    """Per-visit transient series of one path on a sample grid.

    ``inflow[:, v]``, ``storage[:, v]`` and ``outflow[:, v]`` refer to
    position ``v`` of ``path.chain()``; the outflow is along the path's
    next link (the output channel after the last node of an exiting path,
    the cycle continuation after the last node of a closed path, the total
    outflow otherwise).
    """

    path: SubflowPath
    times: np.ndarray
    chain: tuple[int, ...]
    inflow: np.ndarray
    storage: np.ndarray
    outflow: np.ndarray

    def positions(self, node: int) -> list[int]:
        return [v for v, c in enumerate(self.chain) if c == node]

    @property
    def output(self) -> np.ndarray:
        """Transient outflow of the last visit."""
        return self.outflow[:, -1]


def _snapshots(traj):
    from .model import snapshot_from_flows

    model = traj.model
    snaps = []
    for t, x in zip(traj.times, traj.x):
        F, z, y = model.evaluate(t, x)
        snaps.append(snapshot_from_flows(t, x, F, z, y))
    return snaps


def path_records(traj) -> list[TransientRecord]:
    """Transient records for every path integrated with ``traj``."""
    system: PathSystem = traj.paths
    if system is None:
        raise ValueError("trajectory carries no paths")
    model = traj.model
    snaps = _snapshots(traj)
    m = len(traj.times)
    inflow_all = np.zeros((m, system.size))
    for r, snap in enumerate(snaps):
        inflow_all[r] = system.inflows(snap, traj.X[r], traj.Xinit[r], traj.augmented[r])
        inflow_all[r, system.t1 > snap.t] = 0.0
    records = []
    for p, ids in zip(system.paths, system.path_visits):
        chain = p.chain()
        storage = traj.augmented[:, ids]
        inflow = inflow_all[:, ids]
        outflow = np.zeros_like(storage)
        for v, comp in enumerate(chain):
            l = comp - 1
            if v + 1 < len(chain):
                nxt = chain[v + 1] - 1
                rate = np.array([s.Qx[nxt, l] for s in snaps])
            elif p.exits:
                rate = np.array(
                    [guarded_div(model.channel_rate(l, p.channel, s.t, s.x), s.x[l]) for s in snaps]
                )
            elif p.closed:
                q = p.nodes.index(p.nodes[-1])
                nxt = p.nodes[q + 1] - 1
                rate = np.array([s.Qx[nxt, l] for s in snaps])
            else:
                rate = np.array([guarded_div(s.tau_out[l], s.x[l]) for s in snaps])
            outflow[:, v] = rate * storage[:, v]
        records.append(TransientRecord(p, traj.times, chain, inflow, storage, outflow))
    return records


def cumulative(record: TransientRecord, node: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative transient ``(storage, inflow, outflow)`` at ``node`` (1-based), summed over cycles."""
    pos = record.positions(node)
    if not pos:
        z = np.zeros(len(record.times))
        return z, z.copy(), z.copy()
    return (
        record.storage[:, pos].sum(axis=1),
        record.inflow[:, pos].sum(axis=1),
        record.outflow[:, pos].sum(axis=1),
    )


def cycling_inflow(record: TransientRecord, node: int) -> tuple[np.ndarray, np.ndarray]:
    """Inflow and storage at re-entries of ``node``; the first entrance is excluded."""
    pos = record.positions(node)[1:]
    if not pos:
        z = np.zeros(len(record.times))
        return z, z.copy()
    return record.inflow[:, pos].sum(axis=1), record.storage[:, pos].sum(axis=1)


@dataclass
class ExhaustivenessReport:
    subsystem: int
    storage: np.ndarray  # (m, n) sums over distinct visits
    inflow: np.ndarray
    outflow: np.ndarray
    storage_err: np.ndarray  # target minus sum, (m, n)
    inflow_err: np.ndarray
    outflow_err: np.ndarray

    @property
    def max_error(self) -> float:
        return float(max(np.abs(self.storage_err).max(), np.abs(self.inflow_err).max(), np.abs(self.outflow_err).max()))


def exhaustiveness(traj, subsystem: int) -> ExhaustivenessReport:
    """Compare distinct-visit sums of subsystem ``subsystem`` paths with its substorages and subthroughflows."""
    from .decomposition import subflows_from_snapshot

    system: PathSystem = traj.paths
    n = traj.n
    snaps = _snapshots(traj)
    m = len(traj.times)
    sel = np.array([v.root[0] == subsystem for v in system.visits])
    S = np.zeros((m, n))
    I = np.zeros((m, n))
    O = np.zeros((m, n))
    tS = np.zeros((m, n))
    tI = np.zeros((m, n))
    tO = np.zeros((m, n))
    for r, snap in enumerate(snaps):
        st = traj.augmented[r]
        inf = system.inflows(snap, traj.X[r], traj.Xinit[r], st)
        kout = guarded_div(snap.tau_out, snap.x)[system.comp]
        for v in np.flatnonzero(sel):
            c = system.comp[v]
            S[r, c] += st[v]
            I[r, c] += inf[v]
            O[r, c] += kout[v] * st[v]
        sub = subflows_from_snapshot(snap, traj.X[r], traj.Xinit[r])
        col = subsystem - 1
        if subsystem == 0:
            tS[r] = traj.Xinit[r].sum(axis=1)
            tI[r] = sub.Tin_init.sum(axis=1)
            tO[r] = sub.Tout_init.sum(axis=1)
        else:
            tS[r] = traj.X[r][:, col]
            tI[r] = sub.Tin[:, col]
            tO[r] = sub.Tout[:, col]
    return ExhaustivenessReport(subsystem, S, I, O, tS - S, tI - I, tO - O)


# ---------------------------------------------------------------- path sets


def natural_decomposition(
    model: CompartmentalModel,
    k: int,
    cycles: int = DEFAULT_CYCLES,
    notes: list[str] | None = None,
    max_paths: int = 10000,
) -> list[SubflowPath]:
    """One path per local output of subsystem ``k`` (1-based), all starting at ``k``.

    Linear subpaths end with the external output of the compartment they
    reach (one path per output channel); closed subpaths end at the first
    compartment visited twice and are unrolled ``cycles`` times.
    """
    n = model.n
    if not 1 <= k <= n:
        raise ValueError(f"subsystem {k} out of range 1..{n}")
    adj = model.adjacency()
    has_out = model.has_output()
    paths: list[SubflowPath] = []
    reached = set()

    def emit(p: SubflowPath):
        paths.append(p)
        if len(paths) > max_paths:
            raise PathSetTooLarge(f"natural decomposition of subsystem {k} exceeds {max_paths} paths")

    def walk(prefix: tuple[int, ...]):
        here = prefix[-1]
        reached.add(here)
        if has_out[here - 1]:
            chans = model.output_channels[here - 1]
            if chans:
                for lab, _ in chans:
                    emit(SubflowPath(k, prefix, None, True, lab, 1))
            else:
                emit(SubflowPath(k, prefix, None, True, None, 1))
        for nxt in np.flatnonzero(adj[:, here - 1]) + 1:
            nxt = int(nxt)
            if nxt in prefix:
                emit(SubflowPath(k, prefix + (nxt,), None, False, None, cycles))
            else:
                walk(prefix + (nxt,))

    walk((k,))
    for j in np.flatnonzero(has_out) + 1:
        if int(j) not in reached:
            warnings.warn(f"output of compartment {int(j)} is unreachable from subsystem {k}", UnreachableOutput)
    if notes is not None:
        for j in range(1, n + 1):
            chans = model.output_channels[j - 1]
            if len(chans) > 1 and j in reached:
                notes.append(f"compartment {j}: {len(chans)} output channels share every prefix; one path each")
        shared = sum(1 for p in paths if p.closed)
        if shared:
            notes.append(
                f"subsystem {k}: {shared} closed path(s); exits taken after a re-entry are carried "
                "only by the unrolled cycle storage"
            )
    return paths


def visit_tree(
    model: CompartmentalModel,
    k: int,
    cycles: int = 8,
    connection: int | None = None,
    source: int | None = None,
    t1: float = 0.0,
    max_visits: int = 20000,
) -> list[SubflowPath]:
    """Every chain from the connection in which no compartment is entered more than ``cycles + 1`` times.

    The connection defaults to ``k``; the initial subsystem (``k == 0``)
    needs it spelled out.

    Returns the leaf chains as paths; integrated together they cover the
    full branching of the subsystem up to the cycle cap.
    """
    n = model.n
    adj = model.adjacency()
    leaves: list[SubflowPath] = []
    count = [0]

    def walk(prefix: tuple[int, ...]):
        count[0] += 1
        if count[0] > max_visits:
            raise PathSetTooLarge(f"visit tree of subsystem {k} exceeds {max_visits} visits")
        extended = False
        for nxt in np.flatnonzero(adj[:, prefix[-1] - 1]) + 1:
            nxt = int(nxt)
            if prefix.count(nxt) >= cycles + 1:
                continue
            extended = True
            walk(prefix + (nxt,))
        if not extended:
            leaves.append(SubflowPath(k, prefix, source, False, None, 1, t1))

    if not 0 <= k <= n:
        raise ValueError(f"subsystem {k} out of range")
    c = connection if connection is not None else k
    if not 1 <= c <= n:
        raise ValueError("the initial subsystem needs an explicit connection")
    walk((c,))
    return leaves


# ---------------------------------------------------------------- static


@dataclass
class StaticTransient:
    path: SubflowPath
    chain: tuple[int, ...]
    inflow: np.ndarray
    outflow: np.ndarray
    storage: np.ndarray | None
    truncated: bool = False

    def cumulative(self, node: int) -> tuple[float | None, float, float]:
        pos = [v for v, c in enumerate(self.chain) if c == node]
        st = None if self.storage is None else float(self.storage[pos].sum())
        return st, float(self.inflow[pos].sum()), float(self.outflow[pos].sum())


def static_transient(static, path: SubflowPath, tol: float = 1e-10) -> StaticTransient:
    """Steady-state transient flows along ``path``.

    ``x_v = (x_l / tau_l) f_in`` and ``f_out = (f_{next,l} / tau_l) f_in``,
    chained along the path. A closed path keeps adding cycles until a new
    cycle contributes less than ``tol`` relative to the first pass or the
    path's cycle cap is reached.
    """
    F = np.asarray(static.F, dtype=float)
    z = np.asarray(static.z, dtype=float)
    tau = static.tau
    x = None if static.x is None else np.asarray(static.x, dtype=float)
    n = F.shape[0]
    for v in path.nodes:
        if tau[v - 1] <= 0:
            raise ZeroThroughflow(v)
    c = path.connection
    k = path.subsystem
    if k == 0:
        f0 = 0.0  # no initial subsystem at steady state
    else:
        Tin = static.subthroughflows()
        D = Tin[:, k - 1] / tau
        if path.source is None:
            f0 = z[c - 1] if c == k else 0.0
        elif path.source == c:
            f0 = Tin[c - 1, k - 1]
        else:
            f0 = F[c - 1, path.source - 1] * D[path.source - 1]

    def step_rate(l: int, nxt: int | None) -> float:
        if nxt is None:
            if path.exits:
                if path.channel is not None:
                    raise ValueError("output channels are not available for static data")
                return static.y[l - 1] / tau[l - 1]
            return 1.0
        return F[nxt - 1, l - 1] / tau[l - 1]

    chain = list(path.nodes)
    truncated = False
    if path.closed:
        p = path.nodes.index(path.nodes[-1])
        body = list(path.nodes[p + 1 :])
        ratio = 1.0
        prev = path.nodes[-1]
        for v in body:
            ratio *= F[v - 1, prev - 1] / tau[prev - 1]
            prev = v
        extra = 0
        term = ratio
        while extra < path.cycles - 1 and term > tol:
            chain += body
            extra += 1
            term *= ratio
        truncated = extra == path.cycles - 1 and term > tol
    inflow = np.zeros(len(chain))
    outflow = np.zeros(len(chain))
    f = f0
    for v, l in enumerate(chain):
        inflow[v] = f
        if v + 1 < len(chain):
            nxt = chain[v + 1]
        elif path.closed:
            q = path.nodes.index(path.nodes[-1])
            nxt = path.nodes[q + 1]
        else:
            nxt = None
        outflow[v] = step_rate(l, nxt) * f
        f = outflow[v]
    storage = None if x is None else np.array([x[l - 1] / tau[l - 1] for l in chain]) * inflow
    return StaticTransient(path, tuple(chain), inflow, outflow, storage, truncated)
