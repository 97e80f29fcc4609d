"""GTFS stop ingestion.

Only stops.txt is read: every stop becomes one position of a single
MultiPoint feature whose URL property points back at the feed, so a range
query over the stop area returns the feed's address.  Rows with missing or
unparseable coordinates are skipped and counted, never fatal; a feed with
zero usable stops is an error.
"""

from __future__ import annotations

import csv
import io
import math
import secrets
import zipfile
from dataclasses import dataclass
from pathlib import Path

from .errors import FeedError

STOPS_FILE = "stops.txt"


def _stops_text(source) -> str:
    path = Path(source)
    if path.is_dir():
        path = path / STOPS_FILE
    if not path.exists():
        raise FeedError("no %s under %s" % (STOPS_FILE, source))
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as archive:
            members = [m for m in archive.namelist()
                       if m == STOPS_FILE or m.endswith("/" + STOPS_FILE)]
            if not members:
                raise FeedError("archive %s contains no %s"
                                % (path, STOPS_FILE))
            return archive.read(sorted(members)[0]).decode("utf-8-sig")
    return path.read_text(encoding="utf-8-sig")


def _parse_stops(source) -> tuple[list[tuple[float, float]], int]:
    reader = csv.DictReader(io.StringIO(_stops_text(source)))
    if reader.fieldnames is None:
        raise FeedError("%s of %s is empty" % (STOPS_FILE, source))
    fields = {name.strip(): name for name in reader.fieldnames}
    if "stop_lat" not in fields or "stop_lon" not in fields:
        raise FeedError("%s of %s lacks stop_lat/stop_lon columns"
                        % (STOPS_FILE, source))
    positions: list[tuple[float, float]] = []
    skipped = 0
    for row in reader:
        try:
            lat = float((row.get(fields["stop_lat"]) or "").strip())
            lng = float((row.get(fields["stop_lon"]) or "").strip())
        except ValueError:
            skipped += 1
            continue
        if not (math.isfinite(lat) and math.isfinite(lng)):
            skipped += 1
            continue
        positions.append((lng, lat))
    return positions, skipped


@dataclass(frozen=True)
class GtfsFeed:
    """A parsed feed: stop positions in file order plus its public URL."""

    source: str
    url: str
    stops: tuple
    skipped: int

    @classmethod
    def load(cls, source, url: str) -> "GtfsFeed":
        positions, skipped = _parse_stops(source)
        return cls(str(source), url, tuple(positions), skipped)


def ingest_gtfs(feed: GtfsFeed, tid: str, cid: str, uid: str,
                oid=None) -> dict:
    """One MultiPoint feature per feed: a position per stop, URL property.

    Duplicate stop coordinates are kept as-is; `oid` defaults to a fresh
    nonce so repeated ingests of the same feed stay distinct objects.
    """
    if not feed.stops:
        raise FeedError("feed %s has no valid stops" % feed.source)
    if oid is None:
        oid = secrets.token_hex(8)
    return {
        "type": "Feature",
        "geometry": {
            "type": "MultiPoint",
            "coordinates": [[lng, lat] for lng, lat in feed.stops],
        },
        "properties": {
            "oid": oid,
            "tid": tid,
            "cid": cid,
            "uid": uid,
            "URL": feed.url,
        },
    }
