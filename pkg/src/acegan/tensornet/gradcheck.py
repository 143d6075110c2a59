"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


ROUNDOFF_FACTOR = 64.0


@dataclass
class GradcheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    per_array: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        worst = max(self.per_array, key=self.per_array.get) if self.per_array else "-"
        verdict = "pass" if self.passed else "FAIL"
        kinks = f", {self.kinks} kinks skipped" if self.kinks else ""
        return (f"gradcheck {verdict}: max rel err {self.max_rel_error:.3e} "
                f"(worst {worst}, {self.checked} entries{kinks}, tol {self.tolerance:g})")


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(loss_fn, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray], h: float = 1e-5,
              tolerance: float = 1e-5, max_entries: int | None = 64, floor: float = 1e-6,
              seed: int = 0, kink_tol: float | None = None) -> GradcheckReport:
    """Compare ``grads`` against central differences of ``loss_fn``.

    ``arrays`` are perturbed in place and restored. ``loss_fn`` must be a
    deterministic function of them (fixed dropout masks, no batch-statistics
    drift between calls). With ``kink_tol`` set, an entry whose one-sided
    slopes ``(l(x+h) - l(x)) / h`` and ``(l(x) - l(x-h)) / h`` differ by more
    than ``kink_tol`` relative is taken to straddle a ReLU or max-pool
    switch; it is counted in ``kinks`` and left out of the error. At most ``max_entries`` randomly chosen entries per
    array are probed. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``, where the floor is raised to the
    slope central differences can resolve at this loss magnitude, so entries
    whose true gradient is ~0 do not divide roundoff by roundoff.
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for name, arr in arrays.items():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, array {arr.shape}")
        flat_idx = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_idx = rng.choice(arr.size, size=max_entries, replace=False)
        worst = 0.0
        for fi in flat_idx:
            i = np.unravel_index(fi, arr.shape)
            orig = arr[i]
            arr[i] = orig + h
            lp = loss_fn()
            arr[i] = orig - h
            lm = loss_fn()
            arr[i] = orig
            if kink_tol is not None:
                l0 = loss_fn()
                right, left = (lp - l0) / h, (l0 - lm) / h
                if relative_error(right, left, floor) > kink_tol:
                    report.kinks += 1
                    continue
            # central differences cannot resolve slopes below the roundoff in lp - lm
            resolvable = max(floor, ROUNDOFF_FACTOR * np.finfo(np.float64).eps * max(abs(lp), abs(lm)) / h)
            worst = max(worst, relative_error(float(g[i]), (lp - lm) / (2 * h), resolvable))
            report.checked += 1
        report.per_array[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
