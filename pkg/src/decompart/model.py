"""Compartmental models and their instantaneous system-level matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import expr as ex
from .errors import ModelError, NegativeFlow

EPS_X = 1e-12  # state floor for guarded quotients
EPS_F = 1e-9  # tolerance before a negative flow is an error


def guarded_div(num, den, eps: float = EPS_X):
    """Elementwise ``num / den`` with the result set to 0 wherever ``den <= eps``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = den > eps
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=np.broadcast_to(ok, out.shape))
    return out


@dataclass(frozen=True, eq=False)
class CompartmentalModel:
    """A nonlinear compartmental system ``x' = z + F 1 - (y + F^T 1)``.

    ``flows[i][j]`` is the rate of the flow from compartment ``j`` to ``i``
    (0-based here, 1-based inside expressions). An output may be split into
    named channels; ``outputs[j]`` is then the sum of the channels.
    """

    names: tuple[str, ...]
    flows: tuple[tuple[ex.Expr, ...], ...]
    inputs: tuple[ex.Expr, ...]
    outputs: tuple[ex.Expr, ...]
    x0: np.ndarray
    name: str = ""
    output_channels: tuple[tuple[tuple[str, ex.Expr], ...], ...] = ()
    _compiled: "_CompiledModel" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.names)
        if n == 0:
            raise ModelError("a model needs at least one compartment")
        if len(set(self.names)) != n:
            raise ModelError("compartment labels must be unique")
        if len(self.flows) != n or any(len(row) != n for row in self.flows):
            raise ModelError(f"flow matrix must be {n}x{n}")
        if len(self.inputs) != n or len(self.outputs) != n:
            raise ModelError(f"inputs and outputs must have length {n}")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise ModelError(f"x0 must have length {n}")
        if np.any(x0 < 0) or not np.all(np.isfinite(x0)):
            raise ModelError("initial stocks must be finite and nonnegative")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        channels = self.output_channels or tuple(() for _ in range(n))
        if len(channels) != n:
            raise ModelError("output_channels must have one entry per compartment")
        object.__setattr__(self, "output_channels", tuple(tuple(c) for c in channels))
        for e in self.all_expressions():
            bad = [k for k in ex.state_indices(e) if k > n]
            if bad:
                raise ModelError(f"expression {ex.to_source(e)!r} refers to x{bad[0]} but n={n}")
        object.__setattr__(self, "_compiled", _CompiledModel(self))

    def __eq__(self, other):
        if not isinstance(other, CompartmentalModel):
            return NotImplemented
        return (
            self.names == other.names
            and self.flows == other.flows
            and self.inputs == other.inputs
            and self.outputs == other.outputs
            and self.output_channels == other.output_channels
            and self.name == other.name
            and np.array_equal(self.x0, other.x0)
        )

    __hash__ = object.__hash__

    @property
    def n(self) -> int:
        return len(self.names)

    def all_expressions(self) -> Iterable[ex.Expr]:
        for row in self.flows:
            yield from row
        yield from self.inputs
        yield from self.outputs
        for chans in self.output_channels:
            for _, e in chans:
                yield e

    def evaluate(self, t: float, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(F, z, y)`` at ``(t, x)`` without sign checks."""
        return self._compiled(t, x)

    def channel_rate(self, j: int, label: str | None, t: float, x: Sequence[float]) -> float:
        """Rate of output channel ``label`` of compartment ``j`` (0-based)."""
        if label is None:
            return self._compiled.outputs_fn[j](t, _as_list(x))
        for name, fn in self._compiled.channel_fns[j]:
            if name == label:
                return fn(t, _as_list(x))
        raise ModelError(f"compartment {self.names[j]!r} has no output channel {label!r}")

    def adjacency(self) -> np.ndarray:
        """Boolean matrix, ``adj[i, j]`` true when a flow j->i is declared nonzero."""
        n = self.n
        adj = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(n):
                adj[i, j] = i != j and not ex.is_zero(self.flows[i][j])
        return adj

    def has_output(self) -> np.ndarray:
        return np.array([not ex.is_zero(e) for e in self.outputs])

    def linearity(self) -> dict:
        """Per-expression linearity tags plus an overall ``linear`` verdict."""
        n = self.n
        flows = {}
        for i in range(n):
            for j in range(n):
                flows[(i, j)] = ex.classify_linearity(self.flows[i][j], "flow", j + 1)
        outputs = [ex.classify_linearity(self.outputs[j], "output", j + 1) for j in range(n)]
        inputs = [ex.classify_linearity(self.inputs[i], "input") for i in range(n)]
        linear = all(isinstance(v, ex.LinearInDonor) for v in flows.values()) and all(
            isinstance(v, ex.LinearInDonor) for v in outputs
        ) and all(not isinstance(v, ex.Nonlinear) for v in inputs)
        return {"flows": flows, "outputs": outputs, "inputs": inputs, "linear": linear}

    def with_inputs(self, inputs: Sequence[ex.Expr]) -> "CompartmentalModel":
        return CompartmentalModel(
            self.names, self.flows, tuple(inputs), self.outputs, self.x0, self.name, self.output_channels
        )

    def with_x0(self, x0) -> "CompartmentalModel":
        return CompartmentalModel(
            self.names, self.flows, self.inputs, self.outputs, np.asarray(x0, float), self.name, self.output_channels
        )

    def closed(self) -> "CompartmentalModel":
        """The same model with every input and output set to zero."""
        n = self.n
        return CompartmentalModel(
            self.names, self.flows, (ex.ZERO,) * n, (ex.ZERO,) * n, self.x0, self.name
        )


def _as_list(x) -> list:
    return x.tolist() if isinstance(x, np.ndarray) else list(x)


class _CompiledModel:
    def __init__(self, m: CompartmentalModel):
        n = m.n
        self.n = n
        self.flow_fns = [
            (i, j, ex.compile_expr(m.flows[i][j]))
            for i in range(n)
            for j in range(n)
            if not ex.is_zero(m.flows[i][j])
        ]
        self.inputs_fn = [ex.compile_expr(e) for e in m.inputs]
        self.outputs_fn = [ex.compile_expr(e) for e in m.outputs]
        self.channel_fns = [[(lab, ex.compile_expr(e)) for lab, e in ch] for ch in m.output_channels]

    def __call__(self, t, x):
        xl = _as_list(x)
        n = self.n
        F = np.zeros((n, n))
        for i, j, fn in self.flow_fns:
            F[i, j] = fn(t, xl)
        z = np.array([fn(t, xl) for fn in self.inputs_fn])
        y = np.array([fn(t, xl) for fn in self.outputs_fn])
        return F, z, y


def make_model(
    names: Sequence[str],
    flows: dict[tuple[int, int], str] | Sequence[Sequence[str]],
    inputs: Sequence[str],
    outputs: Sequence[str | dict[str, str]],
    x0: Sequence[float],
    name: str = "",
) -> CompartmentalModel:
    """Build a model from expression source strings.

    ``flows`` is either a full n x n table of strings or a mapping
    ``(i, j) -> source`` with 1-based indices, flow from ``j`` to ``i``.
    An output given as a dict ``{label: source}`` is split into channels.
    """
    n = len(names)
    table = [[ex.ZERO] * n for _ in range(n)]
    if isinstance(flows, dict):
        for (i, j), src in flows.items():
            table[i - 1][j - 1] = ex.parse(src)
    else:
        for i, row in enumerate(flows):
            for j, src in enumerate(row):
                table[i][j] = ex.parse(str(src))
    outs, channels = [], []
    for spec in outputs:
        if isinstance(spec, dict):
            chans = tuple((lab, ex.parse(str(src))) for lab, src in spec.items())
            channels.append(chans)
            outs.append(sum_exprs([e for _, e in chans]))
        else:
            channels.append(())
            outs.append(ex.parse(str(spec)))
    return CompartmentalModel(
        tuple(names),
        tuple(tuple(r) for r in table),
        tuple(ex.parse(str(s)) for s in inputs),
        tuple(outs),
        np.asarray(x0, dtype=float),
        name,
        tuple(channels),
    )


def sum_exprs(terms: Sequence[ex.Expr]) -> ex.Expr:
    """Left-folded sum of ``terms``; the empty sum is zero."""
    if not terms:
        return ex.ZERO
    acc = terms[0]
    for e in terms[1:]:
        acc = ex.Binary("add", acc, e)
    return acc


# ---------------------------------------------------------------- snapshots


@dataclass(frozen=True)
class FlowSnapshot:
    t: float
    x: np.ndarray
    F: np.ndarray
    z: np.ndarray
    y: np.ndarray
    tau_in: np.ndarray
    tau_out: np.ndarray
    T_diag: np.ndarray
    A: np.ndarray
    R: np.ndarray
    Qx: np.ndarray
    Qtau: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]


def check_signs(F, z, y, t: float | None = None, eps: float = EPS_F) -> None:
    for kind, arr in (("F", F), ("z", z), ("y", y)):
        bad = np.argwhere(arr < -eps)
        if bad.size:
            idx = tuple(int(v) + 1 for v in bad[0])
            raise NegativeFlow(kind, idx, float(arr[tuple(bad[0])]), t)


def snapshot_from_flows(t: float, x, F, z, y) -> FlowSnapshot:
    """Assemble every system-level matrix from evaluated flows."""
    x = np.asarray(x, dtype=float)
    tau_in = z + F.sum(axis=1)
    tau_out = y + F.sum(axis=0)
    T = np.diag(tau_out)
    A = guarded_div(F - T, x[None, :])
    Qx = guarded_div(F, x[None, :])
    Qtau = guarded_div(F, tau_out[None, :])
    R = np.diag(guarded_div(x, tau_out))
    return FlowSnapshot(t, x, F, z, y, tau_in, tau_out, T, A, R, Qx, Qtau)


def snapshot(model: CompartmentalModel, t: float, x) -> FlowSnapshot:
    """Evaluate flows at ``(t, x)`` and derive all instantaneous matrices.

    Quotients with a denominator at or below ``EPS_X`` are taken as 0.
    Raises :class:`NegativeFlow` when any flow, input or output is below
    ``-EPS_F``.
    """
    x = np.asarray(x, dtype=float)
    F, z, y = model.evaluate(t, x)
    check_signs(F, z, y, t)
    return snapshot_from_flows(t, x, F, z, y)


def rhs_original(model: CompartmentalModel, t: float, x) -> np.ndarray:
    """``dx/dt = z + F 1 - (y + F^T 1)``."""
    F, z, y = model.evaluate(t, x)
    check_signs(F, z, y, t)
    return (z + F.sum(axis=1)) - (y + F.sum(axis=0))


@dataclass(frozen=True)
class ConservationReport:
    residuals: np.ndarray
    scales: np.ndarray
    passed: bool


def check_conservative(
    model: CompartmentalModel,
    samples: Iterable[tuple[float, Sequence[float]]],
    rhs: Callable[[CompartmentalModel, float, np.ndarray], np.ndarray] | None = None,
) -> ConservationReport:
    """Check that the internal flows alone neither create nor destroy mass.

    Inputs and outputs are replaced by zero and ``|1^T dx/dt|`` is compared
    with ``1e-10 * ||F||`` at each sample. ``rhs`` defaults to
    :func:`rhs_original`; passing another right-hand side lets callers audit
    their own balance code.
    """
    closed = model.closed()
    rhs = rhs or rhs_original
    res, scales = [], []
    for t, x in samples:
        x = np.asarray(x, dtype=float)
        F, _, _ = closed.evaluate(t, x)
        res.append(abs(float(np.sum(rhs(closed, t, x)))))
        scales.append(float(np.linalg.norm(F)))
    residuals = np.array(res)
    sc = np.array(scales)
    return ConservationReport(residuals, sc, bool(np.all(residuals <= 1e-10 * sc)))
