"""Query-box tessellation under a tile-count constraint.

A range query's box is covered by grid tiles.  The minimum-stretch cover uses
only deepest-level tiles; collapsing every complete sibling set gives the
reduced cover; the constrained cover then greedily inserts coarser aggregate
tiles (smallest tile-stretch first, coarsest level first) until at most k
tiles remain.  If even whole level-0 tiles cannot satisfy k, the cover falls
back to the level-0 tiles and is flagged as violating the constraint.

Everything here runs in integer index space over the deepest-level cells; the
grid adapters translate blocks to real tiles.  `DemoGrid` is a small
ratio-4 grid used to compare the greedy against `optimal_cover`, the exact
branch-and-bound search.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import grid as ogb_grid
from . import names
from .errors import OutOfExtent, TessellationError, UndefinedStretch
from .grid import BoundingBox, TileId

Block = tuple[int, int, int]          # (level, a, b) block indices at that level


class TessGrid:
    """Index-space view of a hierarchical square grid.

    levels counts grid levels (coarsest is 0); every tile splits into
    side x side children, so the level ratio is side**2.
    """

    levels: int
    side: int

    @property
    def deepest(self) -> int:
        return self.levels - 1

    def span(self, level: int) -> int:
        """Deepest cells per axis covered by a level-`level` block."""
        return self.side ** (self.deepest - level)

    # Adapters implement:
    def deepest_index_box(self, bbox: BoundingBox) -> tuple[int, int, int, int]:
        raise NotImplementedError

    def query_cells(self, bbox: BoundingBox) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def block_tile(self, block: Block):
        raise NotImplementedError

    def tile_block(self, tile) -> Block:
        raise NotImplementedError

    def tile_bbox(self, tile) -> BoundingBox:
        raise NotImplementedError

    def block_sort_key(self, block: Block):
        raise NotImplementedError


class OgbGrid(TessGrid):
    """The production decimal grid; blocks index whole-world 0.01-degree cells."""

    levels = ogb_grid.LEVELS
    side = ogb_grid.SIDE

    _SCALE = ogb_grid.SIDE ** (ogb_grid.LEVELS - 1)      # deepest cells per degree

    def deepest_index_box(self, bbox):
        i0 = self._cell_index(bbox.min.lng, ogb_grid.LNG_MIN)
        i1 = self._cell_index(bbox.max.lng, ogb_grid.LNG_MIN)
        j0 = self._cell_index(bbox.min.lat, ogb_grid.LAT_MIN)
        j1 = self._cell_index(bbox.max.lat, ogb_grid.LAT_MIN)
        return i0, j0, i1, j1

    def _cell_index(self, value, axis_min):
        base = math.floor(value)
        return (base - int(axis_min)) * self._SCALE + ogb_grid._axis_cell(value, base, self.deepest)

    def query_cells(self, bbox):
        s = self._SCALE
        return ((bbox.min.lng - ogb_grid.LNG_MIN) * s,
                (bbox.min.lat - ogb_grid.LAT_MIN) * s,
                (bbox.max.lng - ogb_grid.LNG_MIN) * s,
                (bbox.max.lat - ogb_grid.LAT_MIN) * s)

    def block_tile(self, block) -> TileId:
        level, a, b = block
        f = self.span(level)
        i, j = a * f, b * f
        lng0 = i // self._SCALE + int(ogb_grid.LNG_MIN)
        lat0 = j // self._SCALE + int(ogb_grid.LAT_MIN)
        digits = []
        for l in range(1, level + 1):
            g = self.side ** (self.deepest - l)
            digits.append(((i // g) % self.side, (j // g) % self.side))
        return TileId(lng0, lat0, tuple(digits))

    def tile_block(self, tile: TileId) -> Block:
        i = (tile.lng0 - int(ogb_grid.LNG_MIN)) * self._SCALE
        j = (tile.lat0 - int(ogb_grid.LAT_MIN)) * self._SCALE
        for idx, (dx, dy) in enumerate(tile.digits):
            g = self.side ** (self.deepest - 1 - idx)
            i += dx * g
            j += dy * g
        f = self.span(tile.level)
        return (tile.level, i // f, j // f)

    def tile_bbox(self, tile: TileId) -> BoundingBox:
        return ogb_grid.tile_bbox(tile)

    def block_sort_key(self, block):
        return names.tile_prefix(self.block_tile(block)).components


class DemoGrid(TessGrid):
    """A small ratio-4 grid (side 2) for oracle comparisons; tiles are the
    blocks themselves."""

    def __init__(self, roots_x=6, roots_y=6, levels=3, origin=(0.0, 0.0), root_size=1.0):
        self.levels = levels
        self.side = 2
        self.roots_x = roots_x
        self.roots_y = roots_y
        self.origin = origin
        self.root_size = root_size
        self._scale = self.side ** (levels - 1)          # deepest cells per root
        self._cells_x = roots_x * self._scale
        self._cells_y = roots_y * self._scale

    @property
    def extent(self) -> BoundingBox:
        return BoundingBox.of(self.origin[0], self.origin[1],
                              self.origin[0] + self.roots_x * self.root_size,
                              self.origin[1] + self.roots_y * self.root_size)

    def _axis_index(self, value, origin, count):
        scale = self._scale / self.root_size
        idx = int((value - origin) * scale)
        idx = min(max(idx, 0), count - 1)
        while idx > 0 and value < origin + idx / scale:
            idx -= 1
        while idx < count - 1 and value >= origin + (idx + 1) / scale:
            idx += 1
        return idx

    def deepest_index_box(self, bbox):
        ext = self.extent
        if not (ext.min.lng <= bbox.min.lng and ext.min.lat <= bbox.min.lat
                and bbox.max.lng <= ext.max.lng and bbox.max.lat <= ext.max.lat):
            raise OutOfExtent("box outside the grid extent")
        return (self._axis_index(bbox.min.lng, self.origin[0], self._cells_x),
                self._axis_index(bbox.min.lat, self.origin[1], self._cells_y),
                self._axis_index(bbox.max.lng, self.origin[0], self._cells_x),
                self._axis_index(bbox.max.lat, self.origin[1], self._cells_y))

    def query_cells(self, bbox):
        scale = self._scale / self.root_size
        return ((bbox.min.lng - self.origin[0]) * scale,
                (bbox.min.lat - self.origin[1]) * scale,
                (bbox.max.lng - self.origin[0]) * scale,
                (bbox.max.lat - self.origin[1]) * scale)

    def block_tile(self, block):
        return block

    def tile_block(self, tile) -> Block:
        return tile

    def tile_bbox(self, tile) -> BoundingBox:
        level, a, b = tile
        f = self.span(level)
        cell = self.root_size / self._scale
        return BoundingBox.of(self.origin[0] + a * f * cell,
                              self.origin[1] + b * f * cell,
                              self.origin[0] + (a + 1) * f * cell,
                              self.origin[1] + (b + 1) * f * cell)

    def block_sort_key(self, block):
        return block


OGB = OgbGrid()


@dataclass
class Tessellation:
    """A cover of a query box by mixed-level tiles."""

    tiles: list
    query_area: BoundingBox
    stretch: float
    constraint_violated: bool = False

    def __len__(self):
        return len(self.tiles)


def _stretch_value(total_cell_area: float, qcells) -> float:
    qx0, qy0, qx1, qy1 = qcells
    qarea = (qx1 - qx0) * (qy1 - qy0)
    if qarea <= 0.0:
        return math.inf
    return total_cell_area / qarea


def _blocks_to_tessellation(blocks: Iterable[Block], bbox, tgrid: TessGrid,
                            violated=False) -> Tessellation:
    blocks = list(blocks)
    total = 0.0
    for level, _, _ in blocks:
        f = tgrid.span(level)
        total += f * f
    tiles = [tgrid.block_tile(blk) for blk in
             sorted(blocks, key=tgrid.block_sort_key)]
    return Tessellation(tiles, bbox, _stretch_value(total, tgrid.query_cells(bbox)),
                        constraint_violated=violated)


def tile_stretch(tile, bbox: BoundingBox, tgrid: TessGrid = OGB) -> float:
    """area(tile) / area(tile intersect bbox); raises on zero-area overlap."""
    value = _block_stretch(tgrid.tile_block(tile), tgrid.query_cells(bbox), tgrid)
    if math.isinf(value):
        raise UndefinedStretch("tile has zero-area overlap with the box")
    return value


def _block_stretch(block: Block, qcells, tgrid: TessGrid) -> float:
    level, a, b = block
    f = tgrid.span(level)
    qx0, qy0, qx1, qy1 = qcells
    w = min((a + 1) * f, qx1) - max(a * f, qx0)
    h = min((b + 1) * f, qy1) - max(b * f, qy0)
    if w <= 0 or h <= 0:
        return math.inf
    return (f * f) / (w * h)


def min_stretch(bbox: BoundingBox, tgrid: TessGrid = OGB) -> Tessellation:
    """All deepest-level tiles touching the box (the smallest-area cover)."""
    i0, j0, i1, j1 = tgrid.deepest_index_box(bbox)
    deepest = tgrid.deepest
    blocks = [(deepest, i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]
    return _blocks_to_tessellation(blocks, bbox, tgrid)


def mst_reduce(tess: Tessellation, tgrid: TessGrid = OGB) -> Tessellation:
    """Collapse every complete sibling set into its parent, bottom-up."""
    blocks = {tgrid.tile_block(t) for t in tess.tiles}
    side2 = tgrid.side * tgrid.side
    for level in range(tgrid.deepest, 0, -1):
        by_parent: dict[Block, list[Block]] = {}
        for blk in blocks:
            if blk[0] == level:
                parent = (level - 1, blk[1] // tgrid.side, blk[2] // tgrid.side)
                by_parent.setdefault(parent, []).append(blk)
        for parent, kids in by_parent.items():
            if len(kids) == side2:
                blocks.difference_update(kids)
                blocks.add(parent)
    return _blocks_to_tessellation(blocks, tess.query_area, tgrid,
                                   violated=tess.constraint_violated)


def _level_inside_box(i0, j0, i1, j1, f):
    """Index range of level blocks lying fully inside the deepest-cell box."""
    lox = -(-i0 // f)
    hix = (i1 + 1) // f - 1
    loy = -(-j0 // f)
    hiy = (j1 + 1) // f - 1
    return lox, loy, hix, hiy


def _rect_minus(x0, y0, x1, y1, hx0, hy0, hx1, hy1):
    """Cells of [x0..x1]x[y0..y1] outside the hole rectangle."""
    if hx0 > hx1 or hy0 > hy1 or hx1 < x0 or hx0 > x1 or hy1 < y0 or hy0 > y1:
        for a in range(x0, x1 + 1):
            for b in range(y0, y1 + 1):
                yield a, b
        return
    for a in range(x0, min(hx0 - 1, x1) + 1):
        for b in range(y0, y1 + 1):
            yield a, b
    for a in range(max(hx1 + 1, x0), x1 + 1):
        for b in range(y0, y1 + 1):
            yield a, b
    for a in range(max(hx0, x0), min(hx1, x1) + 1):
        for b in range(y0, min(hy0 - 1, y1) + 1):
            yield a, b
        for b in range(max(hy1 + 1, y0), y1 + 1):
            yield a, b


def _collapsed_cover(i0, j0, i1, j1, tgrid: TessGrid) -> list[Block]:
    """The sibling-collapsed cover of a deepest-cell rectangle, built directly:
    a block belongs to the cover iff it lies fully inside the rectangle and
    its parent does not (deepest cells count as always 'inside')."""
    blocks: list[Block] = []
    prev_box = None                      # inside-box of the previous (coarser) level
    for level in range(tgrid.levels):
        f = tgrid.span(level)
        if level < tgrid.deepest:
            lox, loy, hix, hiy = _level_inside_box(i0, j0, i1, j1, f)
            if lox > hix or loy > hiy:
                prev_box = (lox, loy, hix, hiy)  # empty; nothing fully inside
                continue
        else:
            lox, loy, hix, hiy = i0, j0, i1, j1
        if prev_box is None:
            cells = _rect_minus(lox, loy, hix, hiy, 1, 1, 0, 0)     # no hole
        else:
            plox, ploy, phix, phiy = prev_box
            s = tgrid.side
            cells = _rect_minus(lox, loy, hix, hiy,
                                plox * s, ploy * s, (phix + 1) * s - 1, (phiy + 1) * s - 1)
        blocks.extend((level, a, b) for a, b in cells)
        if level < tgrid.deepest:
            prev_box = (lox, loy, hix, hiy)
    return blocks


def constrained(bbox: BoundingBox, k: int, tgrid: TessGrid = OGB) -> Tessellation:
    """At most k tiles covering the box, or the flagged level-0 cover when
    even whole level-0 tiles exceed k."""
    if k < 1:
        raise TessellationError("k must be >= 1, got %r" % (k,))
    i0, j0, i1, j1 = tgrid.deepest_index_box(bbox)
    root = tgrid.span(0)
    a0, a1 = i0 // root, i1 // root
    b0, b1 = j0 // root, j1 // root
    if (a1 - a0 + 1) * (b1 - b0 + 1) > k:
        blocks = [(0, a, b) for a in range(a0, a1 + 1) for b in range(b0, b1 + 1)]
        return _blocks_to_tessellation(blocks, bbox, tgrid, violated=True)
    blocks = _collapsed_cover(i0, j0, i1, j1, tgrid)
    if len(blocks) > k:
        blocks = _greedy_reduce(blocks, k, bbox, tgrid)
    return _blocks_to_tessellation(blocks, bbox, tgrid)


def _greedy_reduce(blocks: Sequence[Block], k: int, bbox, tgrid: TessGrid) -> set[Block]:
    """Shrink the cover to <= k tiles by inserting aggregate tiles top-down.

    A level-i aggregate is necessary iff the tiles at levels <= i plus the
    distinct level-(i+1) ancestors of everything deeper still exceed k; when
    it is, the candidate ancestor with the smallest tile-stretch is inserted
    and its descendants dropped.  Candidate stretches never change, so each
    level keeps a lazily pruned heap.
    """
    qcells = tgrid.query_cells(bbox)
    side = tgrid.side
    levels = tgrid.levels
    deepest = tgrid.deepest

    cover = set(blocks)
    n_by_level = [0] * levels
    groups: list[dict[tuple[int, int], set[Block]]] = [dict() for _ in range(levels)]
    for blk in cover:
        level, a, b = blk
        n_by_level[level] += 1
        for anc in range(level):
            f = side ** (level - anc)
            groups[anc].setdefault((a // f, b // f), set()).add(blk)

    heaps: list[list] = [[] for _ in range(levels)]
    for level in range(deepest):
        entries = []
        for key in groups[level]:
            blk = (level, key[0], key[1])
            entries.append((_block_stretch(blk, qcells, tgrid),
                            tgrid.block_sort_key(blk), key))
        heapq.heapify(entries)
        heaps[level] = entries

    total = len(cover)
    while total > k:
        for i in range(deepest):
            finalized = sum(n_by_level[:i + 1])
            remaining = n_by_level[i + 1] + len(groups[i + 1])
            if finalized + remaining <= k:
                continue
            heap = heaps[i]
            while heap and heap[0][2] not in groups[i]:
                heapq.heappop(heap)
            if not heap:
                continue
            _, _, key = heapq.heappop(heap)
            members = groups[i].pop(key)
            for blk in members:
                level, a, b = blk
                cover.remove(blk)
                n_by_level[level] -= 1
                for anc in range(level):
                    if anc == i:
                        continue
                    f = side ** (level - anc)
                    bucket = groups[anc].get((a // f, b // f))
                    if bucket is not None:
                        bucket.discard(blk)
                        if not bucket:
                            del groups[anc][(a // f, b // f)]
            new_blk = (i, key[0], key[1])
            cover.add(new_blk)
            n_by_level[i] += 1
            for anc in range(i):
                f = side ** (i - anc)
                groups[anc].setdefault((key[0] // f, key[1] // f), set()).add(new_blk)
            total = len(cover)
            break
        else:
            raise TessellationError("could not reduce cover to %d tiles" % k)
    return cover


def optimal_cover(bbox: BoundingBox, k: int, tgrid: TessGrid) -> Tessellation:
    """Exact minimum-stretch cover with at most k tiles, by branch-and-bound
    over the tiles containing each uncovered cell.  Independent of the greedy
    path; intended for small grids (the oracle in comparisons)."""
    i0, j0, i1, j1 = tgrid.deepest_index_box(bbox)
    root = tgrid.span(0)
    if (i1 // root - i0 // root + 1) * (j1 // root - j0 // root + 1) > k:
        blocks = [(0, a, b) for a in range(i0 // root, i1 // root + 1)
                  for b in range(j0 // root, j1 // root + 1)]
        return _blocks_to_tessellation(blocks, bbox, tgrid, violated=True)

    cells = [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]
    cell_pos = {c: idx for idx, c in enumerate(cells)}
    deepest = tgrid.deepest

    members: dict[Block, list[int]] = {}
    ancestors: list[list[Block]] = []
    for (i, j) in cells:
        anc = []
        for level in range(tgrid.levels):
            f = tgrid.span(level)
            blk = (level, i // f, j // f)
            anc.append(blk)
            if blk not in members:
                f2 = tgrid.span(level)
                mem = []
                for x in range(blk[1] * f2, (blk[1] + 1) * f2):
                    for y in range(blk[2] * f2, (blk[2] + 1) * f2):
                        idx = cell_pos.get((x, y))
                        if idx is not None:
                            mem.append(idx)
                members[blk] = mem
        ancestors.append(anc)

    area = {blk: tgrid.span(blk[0]) ** 2 for blk in members}
    n = len(cells)
    covered = [0] * n
    chosen: list[Block] = []
    best: list = [math.inf, None]

    def contains(outer: Block, inner: Block) -> bool:
        lo, ao, bo = outer
        li, ai, bi = inner
        if lo > li:
            return False
        shift = tgrid.side ** (li - lo)
        return ai // shift == ao and bi // shift == bo

    def search(ptr: int, total_area: float):
        while ptr < n and covered[ptr]:
            ptr += 1
        if ptr == n:
            if total_area < best[0]:
                best[0] = total_area
                best[1] = list(chosen)
            return
        if len(chosen) >= k or total_area >= best[0]:
            return
        for blk in ancestors[ptr]:
            if any(contains(blk, c) for c in chosen):
                continue
            for idx in members[blk]:
                covered[idx] += 1
            chosen.append(blk)
            search(ptr + 1, total_area + area[blk])
            chosen.pop()
            for idx in members[blk]:
                covered[idx] -= 1

    search(0, 0.0)
    if best[1] is None:
        raise TessellationError("no cover with %d tiles exists" % k)
    return _blocks_to_tessellation(best[1], bbox, tgrid)
