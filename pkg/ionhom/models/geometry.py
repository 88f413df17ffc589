"""Unit-cell geometry catalogue"""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Shape(str, Enum):
    CENTERED_SQUARE = "centered_square"
    CROSS_CHANNEL = "cross_channel"
    STRIPE = "stripe"
    EMPTY = "empty"


class Connectivity(str, Enum):
    CON_DISCON = "con_discon"
    CON_CON = "con_con"


class UnitCellGeometry(BaseModel):
    """
    Intracellular/extracellular split of Y = (0,1)^2

    - centered_square(a): intracellular square of side a centred in Y
    - cross_channel(w): intracellular cross with arms of width w reaching every side of Y
    - stripe(theta): extracellular band of width theta, spanning y2, centred in y1
    - empty: Y is entirely extracellular
    """
    model_config = ConfigDict(frozen=True)

    shape: Shape = Field(..., description="Catalogue shape")
    size: Optional[float] = Field(None, description="Side a, arm width w or stripe width theta")

    @model_validator(mode="after")
    def _check_size(self) -> "UnitCellGeometry":
        if self.shape == Shape.EMPTY:
            return self
        if self.size is None or not 0.0 < self.size < 1.0:
            raise ValueError(f"{self.shape.value} needs a size in (0, 1), got {self.size}")
        return self

    @classmethod
    def centered_square(cls, a: float) -> "UnitCellGeometry":
        return cls(shape=Shape.CENTERED_SQUARE, size=a)

    @classmethod
    def cross_channel(cls, w: float) -> "UnitCellGeometry":
        return cls(shape=Shape.CROSS_CHANNEL, size=w)

    @classmethod
    def stripe(cls, theta: float) -> "UnitCellGeometry":
        return cls(shape=Shape.STRIPE, size=theta)

    @classmethod
    def empty(cls) -> "UnitCellGeometry":
        return cls(shape=Shape.EMPTY)

    @property
    def implied_connectivity(self) -> Connectivity:
        """Intracellular connectivity once the cell is tiled"""
        if self.shape in (Shape.CROSS_CHANNEL, Shape.STRIPE):
            return Connectivity.CON_CON
        return Connectivity.CON_DISCON

    def label(self) -> str:
        if self.shape == Shape.EMPTY:
            return self.shape.value
        return f"{self.shape.value}({self.size:g})"
