"""Pass/fail records for inequality and identity checks.

Every numerical check in the package produces a :class:`BoundReport` so the
CLI and the acceptance harness can serialize results uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BoundReport"]


@dataclass
class BoundReport:
    """Outcome of one inequality/identity check.

    ``min_margin`` is the worst (left-hand side vs right-hand side) slack
    seen; a check passes when the minimum margin stays above ``-tolerance``.
    Points excluded by a density floor or boundary trimming are counted in
    ``n_skipped``, never silently dropped.
    """

    tag: str
    description: str
    min_margin: float
    mean_margin: float
    tolerance: float
    n_checked: int
    n_skipped: int = 0
    passed: bool = False
    details: dict = field(default_factory=dict)

    @classmethod
    def from_margins(
        cls,
        tag: str,
        description: str,
        margins: np.ndarray,
        tolerance: float,
        n_skipped: int = 0,
        details: dict | None = None,
    ) -> "BoundReport":
        margins = np.asarray(margins, dtype=float).ravel()
        if margins.size == 0:
            raise ValueError(f"{tag}: no points left to check")
        return cls(
            tag=tag,
            description=description,
            min_margin=float(margins.min()),
            mean_margin=float(margins.mean()),
            tolerance=float(tolerance),
            n_checked=int(margins.size),
            n_skipped=int(n_skipped),
            passed=bool(margins.min() >= -tolerance),
            details=dict(details or {}),
        )

    def to_text(self) -> str:
        lines = [
            f"check = {self.tag}",
            f"description = {self.description}",
            f"min_margin = {self.min_margin:.17g}",
            f"mean_margin = {self.mean_margin:.17g}",
            f"tolerance = {self.tolerance:.17g}",
            f"n_checked = {self.n_checked}",
            f"n_skipped = {self.n_skipped}",
            f"pass = {'true' if self.passed else 'false'}",
        ]
        for key in sorted(self.details):
            lines.append(f"{key} = {self.details[key]:.17g}")
        return "\n".join(lines) + "\n"
