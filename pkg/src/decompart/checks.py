"""Invariant suites run by ``decompart check`` and the test suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .decomposition import subflows_from_snapshot
from .diact import KINDS, diact_distribution, path_based_diact_check
from .model import check_conservative, snapshot_from_flows
from .pathflow import exhaustiveness, natural_decomposition
from .static import static_distribution


@dataclass
class SuiteResult:
    name: str
    passed: bool
    value: float  # worst observed quantity
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: {self.value:.3g} (tol {self.tolerance:.3g}){' ' + self.detail if self.detail else ''}"


@dataclass
class CheckReport:
    results: list[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def add(self, r: SuiteResult) -> None:
        self.results.append(r)


def _subs(traj):
    for r, (t, x) in enumerate(zip(traj.times, traj.x)):
        F, z, y = traj.model.evaluate(t, x)
        snap = snapshot_from_flows(t, x, F, z, y)
        yield r, subflows_from_snapshot(snap, traj.X[r], traj.Xinit[r])


def partition_of_unity(traj, tol: float = 1e-9) -> SuiteResult:
    worst = 0.0
    for _, sub in _subs(traj):
        live = sub.snap.x > 1e-12
        s = sub.D.sum(axis=1) + sub.D0
        worst = max(worst, float(np.abs(s[live] - 1.0).max(initial=0.0)))
    return SuiteResult("partition of unity", worst <= tol, worst, tol)


def reconstruction(traj, tol: float | None = None) -> SuiteResult:
    tol = tol if tol is not None else 10 * traj.config.rtol
    rec = traj.X.sum(axis=2) + traj.Xinit.sum(axis=2)
    err = np.abs(rec - traj.x) / np.maximum(1.0, np.abs(traj.x))
    worst = float(err.max())
    return SuiteResult("reconstruction x = Xinit 1 + X 1", worst <= tol, worst, tol)


def conservation(traj, tol: float = 1e-6) -> SuiteResult:
    rep = check_conservative(traj.model, zip(traj.times, traj.x))
    rel = rep.residuals / np.maximum(rep.scales, 1e-300)
    worst = float(rel.max(initial=0.0))
    return SuiteResult("conservation under closure", worst <= tol, worst, tol, "relative to ||F||")


def null_subsystems(traj) -> SuiteResult:
    """Subsystems without input or initial stock stay empty (up to atol)."""
    atol = traj.config.atol
    n = traj.n
    z_zero = np.ones(n, dtype=bool)
    for t, x in zip(traj.times, traj.x):
        _, z, _ = traj.model.evaluate(t, x)
        z_zero &= z == 0
    worst = 0.0
    cols = np.flatnonzero(z_zero)
    if cols.size:
        worst = max(worst, float(np.abs(traj.X[:, :, cols]).max()))
    stock0 = np.flatnonzero(traj.model.x0 == 0)
    if stock0.size:
        worst = max(worst, float(np.abs(traj.Xinit[:, :, stock0]).max()))
    detail = f"inputs off: {[int(c) + 1 for c in cols]}, stocks off: {[int(c) + 1 for c in stock0]}"
    return SuiteResult("null-subsystem nullity", worst <= atol, worst, atol, detail)


def liouville_determinant(traj, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """``det V(t)`` from ``Xinit diag(x0)^-1`` and ``exp(int tr A)`` along ``traj``."""
    x0 = traj.model.x0
    dets = np.array([np.linalg.det(Xi / x0[None, :]) for Xi in traj.Xinit])

    def trA(s):
        x = traj.state_at(s).state
        F, z, y = traj.model.evaluate(s, x)
        snap = snapshot_from_flows(s, x, F, z, y)
        return float(np.trace(snap.A))

    ref = np.ones(len(traj.times))
    acc, prev = 0.0, traj.t0
    for r, t in enumerate(traj.times):
        if t > prev:
            acc += quad(trA, prev, t, epsabs=1e-12, limit=200)[0]
            prev = t
        ref[r] = np.exp(acc)
    return dets, ref


def invertibility(traj, tol: float = 1e-8) -> SuiteResult:
    """Nonsingularity of ``V(t) = Xinit(t) diag(x0)^-1``.

    ``det V`` decays like ``exp(int tr A)``, so the determinant is judged
    relative to that exact value; the raw minimum is reported alongside.
    """
    x0 = traj.model.x0
    if np.any(x0 <= 0):
        return SuiteResult("fundamental-matrix invertibility", True, float("nan"), tol, "skipped: a zero initial stock")
    dets, ref = liouville_determinant(traj)
    ratio = dets / ref
    worst = float(np.abs(ratio).min())
    ok = worst > tol and bool(np.all(dets > 0))
    return SuiteResult("fundamental-matrix invertibility", ok, worst, tol,
                       f"min |det V / exp(int tr A)|; raw min |det V| = {np.abs(dets).min():.3g}")


def distribution_identities(traj, tol: float = 1e-10) -> SuiteResult:
    worst = 0.0
    for _, sub in _subs(traj):
        N, _ = diact_distribution(sub)
        worst = max(worst, float(np.abs(N["d"] + N["i"] - N["t"]).max()), float(np.abs(N["a"] + N["c"] - N["t"]).max()))
    return SuiteResult("N^d + N^i = N^t and N^a + N^c = N^t", worst <= tol, worst, tol)


def static_identities(static, tol: float = 1e-10) -> SuiteResult:
    N, _ = static_distribution(static)
    worst = max(float(np.abs(N["d"] + N["i"] - N["t"]).max()), float(np.abs(N["a"] + N["c"] - N["t"]).max()))
    return SuiteResult("static N^d + N^i = N^t and N^a + N^c = N^t", worst <= tol, worst, tol)


def static_balance(static, tol: float = 1e-6) -> SuiteResult:
    r = static.balance_residual()
    return SuiteResult("static balance z + F1 = y + F^T 1", r <= tol, r, tol, "relative")


def natural_exhaustiveness(model, config, subsystem: int, cycles: int = 8, tol: float = 1e-4) -> SuiteResult:
    from .integrator import integrate

    paths = natural_decomposition(model, subsystem, cycles=cycles)
    traj = integrate(model, config, paths=paths)
    rep = exhaustiveness(traj, subsystem)
    worst = rep.max_error
    return SuiteResult(f"natural-decomposition exhaustiveness, subsystem {subsystem}", worst <= tol, worst, tol,
                       f"{len(paths)} paths, m_w={cycles}")


def path_vs_formula(model, config, subsystem: int, cycles: int = 8, tol: float = 1e-4) -> list[SuiteResult]:
    """Simple diact flows from ``subsystem`` along enumerated paths against the closed formulas, one result per kind."""
    from .integrator import integrate
    from .pathflow import visit_tree

    traj = integrate(model, config, paths=visit_tree(model, subsystem, cycles=cycles))
    out = []
    for kind in KINDS:
        worst, excess, where = 0.0, 0.0, ""
        for i in range(1, model.n + 1):
            rep = path_based_diact_check(model, config, i, subsystem, kind, cycles, traj=traj)
            e = rep.error
            over = float((e - np.maximum(tol, rep.tail)).max())
            if e.max() > worst:
                worst = float(e.max())
                where = f"worst at ({i},{subsystem}) t={rep.times[int(e.argmax())]:.3g}"
            excess = max(excess, over)
        out.append(SuiteResult(f"path-based vs formula, kind {kind}, subsystem {subsystem}", excess <= 0, worst, tol, where))
    return out


def run_dynamic_suites(model, config, cycles: int = 8, paths: bool = True) -> CheckReport:
    from .integrator import integrate

    rep = CheckReport()
    traj = integrate(model, config)
    rep.add(partition_of_unity(traj))
    rep.add(reconstruction(traj))
    rep.add(conservation(traj))
    rep.add(null_subsystems(traj))
    rep.add(invertibility(traj))
    rep.add(distribution_identities(traj))
    if paths and model.n <= 4:
        _, z, _ = model.evaluate(config.t0, model.x0)
        for k in np.flatnonzero(z > 0) + 1:
            rep.add(natural_exhaustiveness(model, config, int(k), cycles))
            rep.results.extend(path_vs_formula(model, config, int(k), cycles))
    return rep


def run_static_suites(static) -> CheckReport:
    rep = CheckReport()
    rep.add(static_balance(static))
    rep.add(static_identities(static))
    return rep
