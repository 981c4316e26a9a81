"""Uniform output record for every inequality checker."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class InequalityReport:
    """Outcome of one inequality check.

    ``deficit`` is always ``rhs - lhs`` (slack of the inequality lhs <= rhs).
    Verdict: ``violated`` iff deficit < -tol, ``saturated`` iff |deficit| <= tol,
    ``holds`` otherwise.
    """

    name: str
    lhs: float
    rhs: float
    deficit: float
    tol: float
    verdict: str
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_sides(cls, name: str, lhs: float, rhs: float, tol: float, **meta) -> "InequalityReport":
        deficit = rhs - lhs
        if deficit < -tol:
            verdict = "violated"
        elif abs(deficit) <= tol:
            verdict = "saturated"
        else:
            verdict = "holds"
        return cls(name=name, lhs=float(lhs), rhs=float(rhs), deficit=float(deficit),
                   tol=float(tol), verdict=verdict, meta=dict(meta))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "deficit": self.deficit,
            "tol": self.tol,
            "verdict": self.verdict,
            "meta": self.meta,
        }
