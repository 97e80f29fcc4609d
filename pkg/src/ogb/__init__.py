"""Tile-named multi-tenant spatial database over a routing-by-name substrate."""

__version__ = "0.1.0"

from .grid import BoundingBox, GeoPoint, TileId, locate, tile_bbox
from .names import DataName, IpResName, TileName, parse, tile_prefix

__all__ = [
    "BoundingBox",
    "GeoPoint",
    "TileId",
    "locate",
    "tile_bbox",
    "DataName",
    "IpResName",
    "TileName",
    "parse",
    "tile_prefix",
    "__version__",
]
