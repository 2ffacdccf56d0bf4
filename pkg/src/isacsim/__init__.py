"""Joint radar sensing, UE localization and subcarrier/power allocation simulator."""

from isacsim.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    CommChannelParams,
    Path,
    PathSet,
    SubcarrierGrid,
)

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "ArrayConfig",
    "CommChannelParams",
    "Path",
    "PathSet",
    "SubcarrierGrid",
]
