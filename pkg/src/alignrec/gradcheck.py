"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, backward

# Test-only fault hook: parameter names listed here get their analytic
# gradient negated before comparison, simulating a broken backward rule.
FAULT_NEGATE_GRADS: set[str] = set()


@dataclass
class GradCheckReport:
    tol: float
    h: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked_coords: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e <= self.tol
                   for e in self.max_rel_error.values())


def grad_check(f, params: dict[str, Tensor], h: float = 1e-6, tol: float = 1e-5,
               max_coords_per_param: int = 16, seed: int = 0,
               exclude: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    `f()` must be deterministic and evaluate the loss from the current values
    of `params`. A seeded subset of up to `max_coords_per_param` coordinates
    per parameter is perturbed. Coordinates flagged in `exclude` (boolean
    masks, e.g. exact ties of an elementwise max) are skipped.

    Raises ValueError if any evaluation is non-finite.
    """
    rng = np.random.default_rng(seed)
    exclude = exclude or {}

    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data):
        raise ValueError("grad_check: non-finite loss evaluation")
    backward(loss, tape)
    analytic = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name in FAULT_NEGATE_GRADS:
            g = -g
        analytic[name] = g.copy()

    report = GradCheckReport(tol=tol, h=h)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if size <= max_coords_per_param:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
            coords.sort()
        mask = exclude.get(name)
        if mask is not None:
            skip = mask.reshape(-1)
            coords = np.array([c for c in coords if not skip[c]], dtype=np.int64)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = f().item()
            flat[c] = orig - h
            down = f().item()
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError(f"grad_check: non-finite evaluation at {name}[{c}]")
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[c]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        report.max_rel_error[name] = worst
        report.checked_coords[name] = len(coords)
    return report
