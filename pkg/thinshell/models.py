from __future__ import annotations

import enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DistanceMode(enum.Enum):
    SIGNED = "signed"
    UNSIGNED = "unsigned"

    def as_byte(self) -> int:
        return 0 if self == DistanceMode.SIGNED else 1

    @classmethod
    def from_byte(cls, value: int) -> DistanceMode:
        if value == 0:
            return cls.SIGNED
        elif value == 1:
            return cls.UNSIGNED
        raise ValueError(f"Unknown distance mode byte '{value}'")


class CandidateKind(enum.Enum):
    INTERIOR = "interior"
    EDGE = "edge"
    VERTEX = "vertex"


class Label(enum.Enum):
    INSIDE = "Inside"
    OUTSIDE = "Outside"
    ON_SURFACE = "OnSurface"
    RESOLVED_INSIDE = "ResolvedInside"
    RESOLVED_OUTSIDE = "ResolvedOutside"

    def is_inside(self) -> Optional[bool]:
        """Returns `True` or `False` for a decided label and `None` for `OnSurface`."""
        if self in (Label.INSIDE, Label.RESOLVED_INSIDE):
            return True
        elif self in (Label.OUTSIDE, Label.RESOLVED_OUTSIDE):
            return False
        return None


class FallbackPolicy(enum.Enum):
    ON_SURFACE = "on_surface"
    EXACT = "exact"


class SimplifyMode(enum.Enum):
    CONSTRAINED = "constrained"
    GLOBAL_TERM = "global"


class CandidateCounts(BaseModel):
    interior: int = 0
    edge: int = 0
    vertex: int = 0
    fallback_triangles: int = Field(0, description="Sub-triangles whose interior points came from the Newton grid.")

    @property
    def total(self) -> int:
        return self.interior + self.edge + self.vertex


class ShellInterval(BaseModel):
    """
    Extreme values of the field over the mesh surface. Every surface point `s` satisfies `eps1 <= f(s) <= eps2`.

    The thickness is reported as `eps2 - eps1`, which is never negative.
    """

    eps1: float
    eps2: float
    candidates: CandidateCounts = Field(default_factory=CandidateCounts)

    @model_validator(mode="after")
    def check_order(self):
        if self.eps1 > self.eps2:
            raise ValueError(f"Shell interval is reversed: eps1={self.eps1} > eps2={self.eps2}")
        return self

    @property
    def thickness(self) -> float:
        return self.eps2 - self.eps1

    @property
    def same_sign(self) -> bool:
        """The shell does not straddle zero, which a coarse least-squares fit can produce."""
        return (self.eps1 > 0 and self.eps2 > 0) or (self.eps1 < 0 and self.eps2 < 0)

    @property
    def unsigned_bound(self) -> float:
        """Upper end of the `[0, max(|eps1|, |eps2|)]` interval used for unsigned fields and open meshes."""
        return max(abs(self.eps1), abs(self.eps2))


class SolveResult(BaseModel):
    iterations: int
    normal_residual: float = Field(..., description="|A^T(A x - b)| / |A^T b| at termination.")
    residual: float = Field(..., description="|A x - b| / |b| at termination.")
    converged: bool


class BuildReport(BaseModel):
    k: int
    mode: DistanceMode
    faces: int
    dropped_faces: int = 0
    cells_per_depth: List[int]
    grid_points_per_depth: List[int]
    solve: SolveResult
    shell: Optional[ShellInterval] = None
    stage_seconds: Dict[str, float] = Field(default_factory=dict)

    @property
    def cells(self) -> int:
        return sum(self.cells_per_depth)

    @property
    def grid_points(self) -> int:
        return sum(self.grid_points_per_depth)


class CandidatePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    face_id: int
    sub_tri_id: int
    barycentric: Tuple[float, float]
    position: Tuple[float, float, float]
    kind: CandidateKind
    value: float


class Classification(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: Label
    f_value: float
    used_fallback: bool = False


class BatchSummary(BaseModel):
    count: int = 0
    mean_micros: float = 0.0
    fallback_rate: float = 0.0
    agreement: Optional[float] = None


class ValidationReport(BaseModel):
    samples: int
    inside: int
    lower: float
    upper: float

    @property
    def ratio(self) -> float:
        return self.inside / self.samples if self.samples else 1.0


class SimplifyReport(BaseModel):
    mode: SimplifyMode
    gamma: float
    initial_faces: int
    final_faces: int
    target_faces: int
    accepted_collapses: int = 0
    rejected_collapses: int = 0
    max_abs_f: float = 0.0
    exhausted: bool = Field(False, description="The heap ran empty before the face target was reached.")


class BenchRow(BaseModel):
    box_size: float
    backend: str
    mean_micros: float
    fallback_rate: float
    agreement: float


class CollapseRecord(BaseModel):
    """One executed edge collapse: the surviving and removed vertices, the target in unit coordinates and `f` there."""

    model_config = ConfigDict(frozen=True)

    keep: int
    remove: int
    target: Tuple[float, float, float]
    f_value: float
    priority: float
