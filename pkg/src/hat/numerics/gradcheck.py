"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore
from .tensor import Tape, backward, precision


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    worst: dict[str, tuple] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tolerance for e in self.max_rel_error.values())

    @property
    def overall(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self):
        lines = [f"gradcheck tol={self.tolerance:g} passed={self.passed}"]
        for g, e in self.max_rel_error.items():
            lines.append(f"  {g:<12} max_rel={e:.3e} at {self.worst.get(g)}")
        lines += [f"  FAIL {f}" for f in self.failures]
        return "\n".join(lines)


def rel_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference_check(
    f, store: ParamStore, tolerance: float = 1e-4, step: float = 1e-5, names=None, oracle_dtype=np.longdouble
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(store)`` against central differences.

    ``f`` must build its graph from ``store`` parameters and be deterministic.
    Relative error per element is ``|a-b| / max(|a|, |b|, 1e-8)``; the report
    keeps the maximum per parameter group.

    The analytic gradient is computed in float64. The difference quotients are
    evaluated in ``oracle_dtype``: at step 1e-5 float64 round-off alone is
    ~1e-11 absolute, which swamps gradient entries below ~1e-7.
    """
    report = GradCheckReport(tolerance)
    names = list(names) if names is not None else store.names()

    store.zero_grad()
    with Tape() as tape:
        loss = f(store)
    if not np.isfinite(loss.data).all():
        report.failures.append("loss: non-finite value at base point")
        return report
    backward(tape, loss)
    analytic = {n: store[n].grad.copy() for n in names}

    originals = {n: t.data for n, t in store}
    try:
        with precision(oracle_dtype):
            for n, t in store:
                t.data = originals[n].astype(oracle_dtype)
            numerics = {n: _central(f, store, n, step, report) for n in names}
    finally:
        for n, t in store:
            t.data = originals[n]

    for name in names:
        numeric = numerics[name]
        a = analytic[name].reshape(-1)
        err = rel_error(a, numeric)
        err = np.where(np.isnan(err), np.inf, err)
        group = ParamStore.group_of(name)
        k = int(np.argmax(err)) if err.size else 0
        worst = float(err[k]) if err.size else 0.0
        if worst >= report.max_rel_error.get(group, -1.0):
            report.max_rel_error[group] = worst
            report.worst[group] = (name, k, float(a[k]), float(numeric[k]))
    return report


def _central(f, store, name, step, report):
    flat = store[name].data.reshape(-1)
    numeric = np.empty(flat.size, dtype=np.float64)
    h = flat.dtype.type(step)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(store).data[()]
        flat[i] = orig - h
        down = f(store).data[()]
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            report.failures.append(f"{name}[{i}]: non-finite loss under perturbation")
            numeric[i] = np.nan
            continue
        numeric[i] = (up - down) / (2 * h)
    return numeric
