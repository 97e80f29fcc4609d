"""Client-side orchestration: the query-handler and the insert-handler.

A range query runs in phases: tessellate the box under the tile-count
constraint, optionally drop void tiles via the Bloom filter service, issue
one signed tile-query per remaining tile with a bounded window, validate
every returned item, dereference stored-once bodies (each canonical object
fetched at most once per query), then dedupe and post-filter.

The write path mirrors the read path's routing: each item's responsible
engine is found with an address-resolution GET, cached per served prefix, and
items travel in one bulk request per engine over its service channel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Union

from . import tessellation, trust
from .bloom import BF_QUERY_ROOT
from .engine import ACCEPTED, ItemStatus, bulk_channel
from .errors import (
    AuthorizationError,
    ConfigError,
    PartialResultError,
    ServiceError,
    ValidationError,
)
from .geodata import (
    INLINE,
    QUERY_MODES,
    GeoFeature,
    OgbData,
    OgbTile,
    canonical_json,
    dedupe_features,
    make_ogb_data_set,
    parse_feature,
    post_filter,
)
from .grid import BoundingBox
from .names import IpResName, Name, TileName, routing_prefix, tile_prefix

log = logging.getLogger(__name__)

DEFAULT_K = 50
DEFAULT_WINDOW = 8
DEFAULT_FRESHNESS_MS = 60000


@dataclass
class Credentials:
    """A user keypair plus its certificate; signs interests and items."""

    tid: str
    uid: str
    keypair: trust.KeyPair
    certificate: trust.Certificate

    @property
    def identity(self) -> str:
        return self.certificate.identity

    def sign(self, name_text: str, payload: bytes) -> trust.TrustEnvelope:
        return trust.sign_envelope(self.keypair, self.certificate,
                                   name_text, payload)

    @classmethod
    def of(cls, tid: str, uid: str, keypair: trust.KeyPair,
           certificate: trust.Certificate) -> "Credentials":
        return cls(tid, uid, keypair, certificate)


@dataclass
class RangeQuery:
    bbox: BoundingBox
    mode: str
    tid: str
    cid: str
    k: int = DEFAULT_K
    use_bf: bool = False
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.mode not in QUERY_MODES:
            raise ConfigError("unknown query mode %r" % (self.mode,))
        if self.k < 1:
            raise ConfigError("k must be >= 1, got %d" % self.k)
        if self.window < 1:
            raise ConfigError("window must be >= 1, got %d" % self.window)


@dataclass
class QueryReport:
    features: list[GeoFeature]
    timing: dict[str, float]
    counts: dict[str, int]
    constraint_violated: bool

    def to_dict(self) -> dict:
        return {
            "features": [f.to_geojson() for f in self.features],
            "timing": dict(self.timing),
            "counts": dict(self.counts),
            "constraintViolated": self.constraint_violated,
        }


@dataclass
class InsertReport:
    """Per-item outcomes of one bulk write, in input item order."""

    statuses: list[ItemStatus]
    engines: list[str]
    resolutions: int

    @property
    def all_accepted(self) -> bool:
        return all(s.status == ACCEPTED for s in self.statuses)

    def to_dict(self) -> dict:
        return {
            "statuses": [s.to_dict() for s in self.statuses],
            "engines": list(self.engines),
            "resolutions": self.resolutions,
        }


def _decode_reply(payload: bytes) -> dict:
    reply = json.loads(payload.decode("utf-8"))
    if "error" in reply:
        raise ServiceError(reply["error"])
    return reply


class _SubstrateClient:
    """Shared plumbing: per-segment response validation and service naming."""

    def __init__(self, substrate, trust_store: trust.TrustStore,
                 credentials: Credentials):
        self.substrate = substrate
        self.trust_store = trust_store
        self.credentials = credentials
        self._nonce = 0

    def _service_name(self, root: str, tag: str) -> str:
        self._nonce += 1
        return "%s/%s-%s-%s-%d" % (root, tag, self.credentials.tid,
                                   self.credentials.uid, self._nonce)

    def _validate_segment(self, content) -> None:
        ok, reason = self.trust_store.verify(content.name, content.payload,
                                             content.envelope)
        if not ok:
            raise ValidationError(reason or "integrity",
                                  "bad response segment %s" % content.name)

    def _validate_item(self, item: OgbData) -> bool:
        ok, reason = self.trust_store.verify_data_content(
            item.name.name.text, item.signed_payload(), item.signature,
            tid=item.name.tid, uid=item.name.uid)
        if not ok:
            log.debug("dropping %s: %s", item.name.name.text, reason)
        return ok


class QueryHandler(_SubstrateClient):
    """Resolves range queries in two phases: tile-querying and post-filtering."""

    def range_query(self, query: RangeQuery) -> QueryReport:
        rule = self.trust_store.rules.tile_interest_signer
        if not trust.identity_matches(rule, self.credentials.identity,
                                      {"tid": query.tid}):
            raise AuthorizationError(
                "identity %s may not query tenant %s"
                % (self.credentials.identity, query.tid))

        now = self.substrate.now_ms
        t0 = now()
        tess = tessellation.constrained(query.bbox, query.k)
        t1 = now()
        tiles = tess.tiles
        if query.use_bf:
            tiles = self._bf_reduce(tiles)
        t2 = now()

        items, rejected, failed = self._query_tiles(tiles, query)
        features, ref_fetches, ref_rejected, ref_failed = self._resolve_bodies(items, query)
        rejected += ref_rejected
        failed += ref_failed
        t3 = now()

        kept = post_filter(dedupe_features(features), query.bbox, query.mode)
        t4 = now()

        report = QueryReport(
            features=kept,
            timing={
                "tessellationMs": t1 - t0,
                "bfMs": t2 - t1,
                "tileQueryBatchMs": t3 - t2,
                "postFilterMs": t4 - t3,
            },
            counts={
                "tilesTessellated": len(tess.tiles),
                "tilesQueried": len(tiles),
                "itemsFetched": len(items) + ref_fetches,
                "itemsRejected": rejected,
                "itemsAfterFilter": len(kept),
            },
            constraint_violated=tess.constraint_violated,
        )
        if failed:
            raise PartialResultError(failed, report)
        return report

    def _bf_reduce(self, tiles: list) -> list:
        prefixes = [tile_prefix(t).text for t in tiles]
        name = self._service_name(BF_QUERY_ROOT, "q")
        payload = canonical_json({"op": "bf-query", "prefixes": prefixes})
        result = self.substrate.get(name, payload=payload)
        bits = _decode_reply(result.payload)["bits"]
        return [tile for tile, bit in zip(tiles, bits) if bit]

    def _query_tiles(self, tiles: list, query: RangeQuery):
        requests = [{
            "name": TileName(tile, query.tid, query.cid).name.text,
            "sign": self.credentials.sign,
            "validator": self._validate_segment,
        } for tile in tiles]
        results = self.substrate.get_many(requests, window=query.window)

        items: list[OgbData] = []
        rejected = 0
        failed: list[str] = []
        for request, result in zip(requests, results):
            if isinstance(result, Exception):
                failed.append(request["name"])
                continue
            for item in OgbTile.from_wire(result.payload).items:
                if self._validate_item(item):
                    items.append(item)
                else:
                    rejected += 1
        return items, rejected, failed

    def _resolve_bodies(self, items: list[OgbData], query: RangeQuery):
        """Inline bodies directly; References through a per-query memo so each
        canonical object travels at most once."""
        memo: dict[str, GeoFeature] = {}
        order: list[str] = []
        for item in items:
            name_text = item.name.name.text
            if item.body_type == INLINE:
                memo[name_text] = item.body
                order.append(name_text)
            else:
                order.append(item.body.name.text)

        missing = sorted({name for name in order if name not in memo})
        rejected = 0
        failed: list[str] = []
        if missing:
            requests = [{"name": name, "validator": self._validate_segment}
                        for name in missing]
            results = self.substrate.get_many(requests, window=query.window)
            for name, result in zip(missing, results):
                if isinstance(result, Exception):
                    failed.append(name)
                    continue
                item = OgbData.from_wire(result.payload)
                if item.body_type != INLINE or not self._validate_item(item):
                    rejected += 1
                    continue
                memo[name] = item.body
        features = [memo[name] for name in order if name in memo]
        return features, len(missing) - len(failed), rejected, failed


class InsertHandler(_SubstrateClient):
    """The write path: resolve responsible engines, then push per-engine
    bulk requests over their service channels."""

    def __init__(self, substrate, trust_store, credentials: Credentials):
        super().__init__(substrate, trust_store, credentials)
        self._addresses: list[tuple[tuple[str, ...], dict, float]] = []

    def insert(self, feature: Union[GeoFeature, dict, bytes],
               freshness_ms: int = DEFAULT_FRESHNESS_MS) -> InsertReport:
        f = self._own_feature(feature)
        items = make_ogb_data_set(f, freshness_ms)
        for item in items:
            item.signature = self.credentials.sign(item.name.name.text,
                                                   item.signed_payload())
        return self._push(items, op="insert")

    def remove(self, feature: Union[GeoFeature, dict, bytes]) -> InsertReport:
        f = self._own_feature(feature)
        items = make_ogb_data_set(f, DEFAULT_FRESHNESS_MS)
        return self._push(items, op="delete")

    def _own_feature(self, feature) -> GeoFeature:
        f = feature if isinstance(feature, GeoFeature) else parse_feature(feature)
        if f.tid != self.credentials.tid or f.uid != self.credentials.uid:
            raise AuthorizationError(
                "feature owner %s/%s does not match credentials %s/%s"
                % (f.tid, f.uid, self.credentials.tid, self.credentials.uid))
        return f

    def resolve(self, tile) -> dict:
        """The engine behind a tile, via one IP-RES GET per served prefix."""
        comps = routing_prefix(tile).components
        now = self.substrate.now_ms()
        for prefix_comps, info, expiry in self._addresses:
            if comps[:len(prefix_comps)] == prefix_comps and now < expiry:
                return info
        result = self.substrate.get(IpResName(tile).name.text,
                                    validator=self._validate_segment)
        info = json.loads(result.payload.decode("utf-8"))
        expiry = now + result.segments[0].freshness_ms
        self._addresses.append(
            (Name.from_text(info["prefix"]).components, info, expiry))
        return info

    def _push(self, items: list[OgbData], op: str) -> InsertReport:
        groups: dict[str, list[OgbData]] = {}
        resolutions_before = len(self._addresses)
        for item in items:
            info = self.resolve(item.name.tile)
            groups.setdefault(info["engineId"], []).append(item)

        by_name: dict[str, ItemStatus] = {}
        for engine_id in sorted(groups):
            group = groups[engine_id]
            name = self._service_name(bulk_channel(engine_id), op)
            if op == "insert":
                request = {"op": "insert",
                           "items": [item.to_dict() for item in group]}
            else:
                request = {"op": "delete",
                           "names": [item.name.name.text for item in group]}
            payload = canonical_json(request)
            result = self.substrate.get(name, payload=payload,
                                        sign=self.credentials.sign,
                                        validator=self._validate_segment)
            reply = _decode_reply(result.payload)
            for status in reply["statuses"]:
                parsed = ItemStatus.from_dict(status)
                by_name[parsed.name] = parsed
        statuses = [by_name[item.name.name.text] for item in items]
        return InsertReport(
            statuses=statuses,
            engines=sorted(groups),
            resolutions=len(self._addresses) - resolutions_before,
        )
