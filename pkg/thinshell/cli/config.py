from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Optional

import pydantic
import yaml

from thinshell.exceptions import InvalidParameterError
from thinshell.field import DEFAULT_TOLERANCE
from thinshell.mesh import DEFAULT_MARGIN
from thinshell.models import DistanceMode
from thinshell.svo import MAX_HEIGHT, MIN_HEIGHT


class OutputType(Enum):
    table = "table"
    json = "json"


class State(pydantic.BaseModel):
    output: OutputType = pydantic.Field("table", alias="defaultOutput", description="Default output for CLI.")


class BuildConfig(pydantic.BaseModel):
    """
    Configuration of the `build` command. It can be stored as YAML with camelCase keys, for example:

    ```yaml
    input: bunny.obj
    k: 6
    mode: signed
    tol: 1.0e-8
    maxIter: 50000
    output: bunny.its
    ```
    """

    input: Optional[Path] = pydantic.Field(None, description="Mesh file to build the shell for.")
    k: int = pydantic.Field(6, description="Octree height, the finest cells have width 2^-k.")
    mode: DistanceMode = pydantic.Field(DistanceMode.SIGNED, description="Signed or unsigned distance.")
    tol: float = pydantic.Field(DEFAULT_TOLERANCE, description="Relative tolerance of the least-squares solver.")
    max_iter: Optional[int] = pydantic.Field(None, alias="maxIter", description="Iteration cap of the solver.")
    margin: float = pydantic.Field(DEFAULT_MARGIN, description="Empty space kept around the mesh in the unit cube.")
    output: Optional[Path] = pydantic.Field(None, description="Destination ITS file.")
    threads: Optional[int] = pydantic.Field(None, description="Worker threads, defaults to ITS_THREADS or all cores.")
    seed: int = pydantic.Field(0, description="Seed of the post-build containment check.")
    validate_samples: int = pydantic.Field(0, alias="validateSamples", description="Samples of the containment check.")

    model_config = pydantic.ConfigDict(populate_by_name=True)

    @pydantic.field_validator("k")
    @classmethod
    def check_k(cls, value: int) -> int:
        if not MIN_HEIGHT <= value <= MAX_HEIGHT:
            raise ValueError(f"k must be in [{MIN_HEIGHT}, {MAX_HEIGHT}]")
        return value

    @pydantic.field_validator("tol")
    @classmethod
    def check_tol(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tol must be positive")
        return value

    @pydantic.field_validator("margin")
    @classmethod
    def check_margin(cls, value: float) -> float:
        if not 0 <= value < 0.25:
            raise ValueError("margin must be in [0, 0.25)")
        return value

    @pydantic.field_validator("threads", "max_iter")
    @classmethod
    def check_positive(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("must be at least 1")
        return value

    @classmethod
    def load(cls, path: Path) -> BuildConfig:
        """Loads a YAML configuration file; relative mesh and output paths are taken relative to the file."""
        with open(path, "r") as file:
            data = yaml.safe_load(file) or {}
        config = cls.validated(data)
        for key in ("input", "output"):
            value = getattr(config, key)
            if value is not None and not value.is_absolute():
                config = config.model_copy(update={key: Path(path).parent / value})
        return config

    @classmethod
    def validated(cls, data: dict) -> BuildConfig:
        try:
            return cls.model_validate(data)
        except pydantic.ValidationError as e:
            errors = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
            raise InvalidParameterError(f"Invalid build configuration: {errors}") from e

    def merged(self, **overrides) -> BuildConfig:
        """A copy with every override that is not `None` applied, validated again."""
        data = self.model_dump()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return self.validated(data)

    def save(self, path: Path):
        """Stores the configuration as YAML with camelCase keys, readable by `load`."""
        with open(path, "w") as file:
            yaml.dump(self.model_dump(mode="json", by_alias=True, exclude_none=True), file)
