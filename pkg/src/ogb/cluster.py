"""Cluster assembly: configuration, key material, certificate distribution,
and the simulated deployment behind the CLI and the test suite.

A simulated cluster is a star.  Engines, the Bloom filter server, and the
certificate repository hang off one switch over unconstrained links; the
query-handler's access link carries the configured bandwidth, so batched
tile-query traffic serializes exactly where the cost model charges it.

Key material derives deterministically from (seed, identity), so separate
processes loading the same config materialize identical keys and names.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import bloom, trust
from .engine import Engine, EngineConfig, LruCache, bulk_channel
from .errors import ConfigError, OgbError
from .geodata import canonical_json
from .icn.core import build_segments
from .icn.sim import SimNetwork, SimSubstrate
from .icn.sockets import ContentServer, SocketSubstrate
from .names import SCHEME, SYSTEM_ROOT, Name, split_segment

log = logging.getLogger(__name__)

SWITCH_ID = "switch"
HANDLER_ID = "handler"
BF_SERVER_ID = "bf-server"
CERT_REPO_ID = "cert-repo"

BF_QUERY_ROOT = bloom.BF_QUERY_ROOT
CERT_ROOT = SCHEME + SYSTEM_ROOT + "/certs"

CERT_FRESHNESS_MS = 3600 * 1000.0


@dataclass
class ClusterConfig:
    """Everything needed to stand a cluster up, parsed from one JSON file."""

    mode: str = "sim"
    seed: Optional[int] = None
    keys_dir: Optional[str] = None
    storage_dir: Optional[str] = None
    engines: list[EngineConfig] = field(default_factory=list)
    bf_enabled: bool = True
    bf_m: int = bloom.DEFAULT_M
    bf_h: int = bloom.DEFAULT_H
    bf_host: str = ""
    bf_port: int = 0
    cert_host: str = ""
    cert_port: int = 0
    handler_bandwidth_mbps: Optional[float] = 200.0
    link_latency_ms: float = 0.0
    rules: trust.ValidatorRules = field(default_factory=trust.ValidatorRules)

    def validate(self) -> None:
        if self.mode not in ("sim", "socket"):
            raise ConfigError("mode must be sim or socket, got %r" % self.mode)
        if self.mode == "sim" and self.seed is None:
            raise ConfigError("sim mode requires a seed")
        if not self.engines:
            raise ConfigError("no engines configured")
        ids = [e.engine_id for e in self.engines]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate engine ids: %r" % ids)
        owned: list[tuple[str, tuple[str, ...]]] = []
        for ecfg in self.engines:
            if not ecfg.served_prefixes:
                raise ConfigError("engine %s serves no prefixes" % ecfg.engine_id)
            for prefix in ecfg.served_prefixes:
                owned.append((ecfg.engine_id, Name.from_text(prefix).components))
        for i, (eid_a, a) in enumerate(owned):
            for eid_b, b in owned[i + 1:]:
                shorter = min(len(a), len(b))
                if a[:shorter] == b[:shorter]:
                    raise ConfigError(
                        "served prefixes overlap: %s:%s vs %s:%s"
                        % (eid_a, "/".join(a), eid_b, "/".join(b)))
        if self.mode == "socket":
            for ecfg in self.engines:
                if not ecfg.port:
                    raise ConfigError("socket mode: engine %s needs a port"
                                      % ecfg.engine_id)
            if self.bf_enabled and not self.bf_port:
                raise ConfigError("socket mode: bfServer needs a port")
            if not self.cert_port:
                raise ConfigError("socket mode: certRepo needs a port")

    def to_dict(self) -> dict:
        d: dict = {
            "mode": self.mode,
            "engines": [e.to_dict() for e in self.engines],
            "topology": {
                "handlerLinkMbps": self.handler_bandwidth_mbps,
                "latencyMs": self.link_latency_ms,
            },
            "trustRules": self.rules.to_config(),
        }
        if self.seed is not None:
            d["seed"] = self.seed
        if self.keys_dir is not None:
            d["keysDir"] = self.keys_dir
        if self.storage_dir is not None:
            d["storageDir"] = self.storage_dir
        if self.bf_enabled:
            d["bfServer"] = {
                "m": self.bf_m,
                "h": self.bf_h,
                "address": {"host": self.bf_host, "port": self.bf_port},
            }
        d["certRepo"] = {"address": {"host": self.cert_host, "port": self.cert_port}}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterConfig":
        bf = data.get("bfServer")
        bf_m = int(bf.get("m", bloom.DEFAULT_M)) if bf else bloom.DEFAULT_M
        bf_h = int(bf.get("h", bloom.DEFAULT_H)) if bf else bloom.DEFAULT_H
        defaults = data.get("defaults", {})
        engines = [EngineConfig.from_dict({**defaults, **e}, bf_m=bf_m, bf_h=bf_h)
                   for e in data.get("engines", [])]
        topology = data.get("topology", {})
        bandwidth = topology.get("handlerLinkMbps", 200.0)
        config = cls(
            mode=data.get("mode", "sim"),
            seed=data.get("seed"),
            keys_dir=data.get("keysDir"),
            storage_dir=data.get("storageDir"),
            engines=engines,
            bf_enabled=bf is not None,
            bf_m=bf_m,
            bf_h=bf_h,
            handler_bandwidth_mbps=float(bandwidth) if bandwidth is not None else None,
            link_latency_ms=float(topology.get("latencyMs", 0.0)),
            rules=trust.ValidatorRules.from_config(data.get("trustRules", {})),
        )
        if bf:
            address = bf.get("address", {})
            config.bf_host = address.get("host", "")
            config.bf_port = int(address.get("port", 0))
        repo = data.get("certRepo", {}).get("address", {})
        config.cert_host = repo.get("host", "")
        config.cert_port = int(repo.get("port", 0))
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> "ClusterConfig":
        """Parse a config file; relative keys/storage paths anchor at it."""
        path = Path(path)
        config = cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        base = path.resolve().parent
        if config.keys_dir is not None:
            config.keys_dir = str((base / config.keys_dir).resolve())
        if config.storage_dir is not None:
            config.storage_dir = str((base / config.storage_dir).resolve())
        return config


def _seed_bytes(master_seed: int, identity: str) -> bytes:
    return hashlib.sha256(("%d|%s" % (master_seed, identity)).encode("utf-8")).digest()


class KeyStore:
    """Keypairs and certificates by identity, optionally persisted on disk.

    With a master seed every keypair is a pure function of (seed, identity);
    without one, fresh random keys are generated and must be persisted to
    survive the process.
    """

    def __init__(self, root=None, seed: Optional[int] = None):
        self.root = Path(root) if root else None
        self.seed = seed
        self._cache: dict[str, tuple[trust.KeyPair, trust.Certificate]] = {}

    def _path(self, identity: str) -> Path:
        parts = [p for p in identity.split("/") if p]
        return self.root.joinpath(*parts).with_suffix(".json")

    def _get(self, identity: str, make_cert) -> tuple[trust.KeyPair, trust.Certificate]:
        hit = self._cache.get(identity)
        if hit is not None:
            return hit
        if self.root is not None:
            path = self._path(identity)
            if path.exists():
                data = json.loads(path.read_text(encoding="utf-8"))
                pair = (trust.KeyPair.from_dict(data["keypair"]),
                        trust.Certificate.from_dict(data["certificate"]))
                self._cache[identity] = pair
                return pair
        if self.seed is not None:
            kp = trust.KeyPair.from_seed(_seed_bytes(self.seed, identity))
        else:
            kp = trust.KeyPair.generate()
        cert = make_cert(kp)
        self._cache[identity] = (kp, cert)
        if self.root is not None:
            path = self._path(identity)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({
                "identity": identity,
                "keypair": kp.to_dict(),
                "certificate": cert.to_dict(),
            }, indent=2, sort_keys=True), encoding="utf-8")
        return self._cache[identity]

    def admin(self) -> tuple[trust.KeyPair, trust.Certificate]:
        return self._get(trust.ADMIN_IDENTITY, trust.make_anchor)

    def _issued(self, identity: str, issuer) -> tuple[trust.KeyPair, trust.Certificate]:
        issuer_kp, issuer_cert = issuer
        return self._get(identity, lambda kp: trust.issue(
            issuer_kp, issuer_cert, identity, kp.public_bytes))

    def engine(self, engine_id: str) -> tuple[trust.KeyPair, trust.Certificate]:
        return self._issued(trust.engine_identity(engine_id), self.admin())

    def tenant(self, tid: str) -> tuple[trust.KeyPair, trust.Certificate]:
        return self._issued(trust.tenant_identity(tid), self.admin())

    def user(self, tid: str, uid: str) -> tuple[trust.KeyPair, trust.Certificate]:
        return self._issued(trust.user_identity(tid, uid), self.tenant(tid))

    def certificates(self) -> list[trust.Certificate]:
        """Every known certificate: the in-memory ones plus any on disk."""
        certs = {identity: cert for identity, (_, cert) in self._cache.items()}
        if self.root is not None and self.root.exists():
            for path in sorted(self.root.rglob("*.json")):
                data = json.loads(path.read_text(encoding="utf-8"))
                cert = trust.Certificate.from_dict(data["certificate"])
                certs.setdefault(cert.identity, cert)
        return [certs[identity] for identity in sorted(certs)]


class CertRepo:
    """In-process certificate directory; doubles as the producer behind the
    system certificate prefix in a simulated cluster."""

    def __init__(self):
        self._certs: dict[str, trust.Certificate] = {}

    def add(self, cert: trust.Certificate) -> None:
        self._certs[cert.name.text] = cert

    def get_wire(self, name: Name) -> Optional[bytes]:
        cert = self._certs.get(name.text)
        return cert.to_wire() if cert is not None else None

    def __len__(self):
        return len(self._certs)

    def producer(self, interest):
        base, seg = split_segment(Name.from_text(interest.name))
        wire = self.get_wire(base)
        if wire is None:
            return None
        contents = build_segments(base, wire, CERT_FRESHNESS_MS)
        if seg is None or seg >= len(contents):
            return None
        return contents[seg], 0.0


class BloomService:
    """Request/response face of a BloomServer: batch membership tests and
    stats ride service interests carrying JSON payloads."""

    def __init__(self, server: bloom.BloomServer):
        self.server = server
        self._replies = LruCache(32)

    def _reply(self, payload: bytes) -> bytes:
        try:
            request = json.loads(payload.decode("utf-8"))
            op = request.get("op")
            if op == "bf-query":
                bits = self.server.membership(request["prefixes"])
                return canonical_json({"bits": [bool(b) for b in bits]})
            if op == "bf-stats":
                return canonical_json(self.server.stats())
            return canonical_json({"error": "unknown bf op %r" % (op,)})
        except Exception as exc:
            return canonical_json({"error": str(exc)})

    def producer(self, interest):
        base, seg = split_segment(Name.from_text(interest.name))
        base_text = base.text
        cached = self._replies.get(base_text)
        if cached is None:
            cached = build_segments(base, self._reply(interest.payload))
            self._replies.put(base_text, cached)
        if seg is None or seg >= len(cached):
            return None
        return cached[seg], 0.0


class SimCluster:
    """A full deployment on one event loop, addressed through `substrate`."""

    def __init__(self, config: ClusterConfig, keystore: Optional[KeyStore] = None):
        config.validate()
        if config.mode != "sim":
            raise ConfigError("SimCluster requires mode=sim, got %r" % config.mode)
        self.config = config
        self.keys = keystore or KeyStore(config.keys_dir, config.seed)
        self.network = SimNetwork()
        self.cert_repo = CertRepo()
        self.engines: dict[str, Engine] = {}
        self.engine_nodes = {}
        self._nonce = 0
        self._announcements: list[tuple[str, str]] = []

        admin_kp, admin_cert = self.keys.admin()
        self.anchor = admin_cert
        for cert in self.keys.certificates():
            self.cert_repo.add(cert)

        self.network.add_node(SWITCH_ID)
        handler = self.network.add_node(HANDLER_ID)
        self.network.connect(HANDLER_ID, SWITCH_ID,
                             bandwidth_mbps=config.handler_bandwidth_mbps,
                             latency_ms=config.link_latency_ms)

        for ecfg in config.engines:
            self._add_engine(ecfg, admin_cert)

        self.bloom_server = None
        self.bf_substrate = None
        if config.bf_enabled:
            self.bloom_server = bloom.BloomServer(
                config.bf_m, config.bf_h,
                engines=[e.engine_id for e in config.engines])
            bf_node = self.network.add_node(BF_SERVER_ID)
            self.network.connect(BF_SERVER_ID, SWITCH_ID,
                                 latency_ms=config.link_latency_ms)
            bf_node.attach_producer(BF_QUERY_ROOT,
                                    BloomService(self.bloom_server).producer)
            self._announcements.append((BF_QUERY_ROOT, BF_SERVER_ID))
            self.bf_substrate = SimSubstrate(self.network, bf_node)

        cert_node = self.network.add_node(CERT_REPO_ID)
        self.network.connect(CERT_REPO_ID, SWITCH_ID,
                             latency_ms=config.link_latency_ms)
        cert_node.attach_producer(CERT_ROOT, self.cert_repo.producer)
        self._announcements.append((CERT_ROOT, CERT_REPO_ID))

        # Announce only once every node exists, so each gets a full FIB.
        for prefix, origin in self._announcements:
            self.network.announce(prefix, origin)

        self.substrate = SimSubstrate(self.network, handler)

        if self.bloom_server is not None:
            for ecfg in config.engines:
                self._recover_engine_filter(ecfg.engine_id)
                self._subscribe(ecfg.engine_id)

    def _add_engine(self, ecfg: EngineConfig, anchor: trust.Certificate) -> None:
        kp, cert = self.keys.engine(ecfg.engine_id)
        self.cert_repo.add(cert)
        store = trust.TrustStore(anchor, rules=self.config.rules,
                                 fetcher=self.cert_repo.get_wire)
        storage = None
        if self.config.storage_dir is not None:
            storage = str(Path(self.config.storage_dir) / ecfg.engine_id)
        engine = Engine(ecfg, kp, cert, store, storage_dir=storage)
        node = self.network.add_node(ecfg.engine_id,
                                     cache_capacity=ecfg.cache_capacity)
        self.network.connect(ecfg.engine_id, SWITCH_ID,
                             latency_ms=self.config.link_latency_ms)
        for prefix in ecfg.served_prefixes:
            node.attach_producer(prefix, engine.handle_named_interest)
            self._announcements.append((prefix, ecfg.engine_id))
        channel = bulk_channel(ecfg.engine_id)
        node.attach_producer(channel, engine.handle_service_interest)
        self._announcements.append((channel, ecfg.engine_id))
        topic = "%s/%s" % (bloom.BF_TOPIC, ecfg.engine_id)
        node.attach_producer(topic, engine.handle_bf_interest)
        self._announcements.append((topic, ecfg.engine_id))

        def publish(pub, _engine=engine, _node=node):
            _node.satisfy(_engine.bf_log[pub.seq])

        engine.publish_sink = publish
        self.engines[ecfg.engine_id] = engine
        self.engine_nodes[ecfg.engine_id] = node

    # -- bloom server wiring -------------------------------------------------

    def _service_name(self, engine_id: str, tag: str) -> str:
        self._nonce += 1
        return "%s/%s-%d" % (bulk_channel(engine_id), tag, self._nonce)

    def _recover_engine_filter(self, engine_id: str) -> None:
        """Seed the server's view from the engine's digest (restart safety)."""
        result = self.bf_substrate.get(
            self._service_name(engine_id, "digest"),
            payload=canonical_json({"op": "digest"}))
        seq, bitmap = bloom.decode_digest(result.payload)
        self.bloom_server.load_digest(engine_id, seq, bitmap)

    def _subscribe(self, engine_id: str) -> None:
        """Long-lived pending interest for the engine's next transition."""
        seq = self.bloom_server.last_seq[engine_id] + 1
        future = self.bf_substrate.get_async(
            bloom.publication_name(engine_id, seq), lifetime_ms=None)

        def deliver(fut):
            if fut.error is not None:
                log.warning("bf subscription for %s failed: %s",
                            engine_id, fut.error)
                return
            pub = bloom.BfPublication.from_dict(
                json.loads(fut.value.payload.decode("utf-8")))
            self.bloom_server.apply(pub)
            self._subscribe(engine_id)

        future.add_done_callback(deliver)

    # -- lifecycle -----------------------------------------------------------

    def issue_user(self, tid: str, uid: str) -> tuple[trust.KeyPair, trust.Certificate]:
        """Tenant and user credentials, registered with the repository."""
        _, tenant_cert = self.keys.tenant(tid)
        kp, cert = self.keys.user(tid, uid)
        self.cert_repo.add(tenant_cert)
        self.cert_repo.add(cert)
        return kp, cert

    def flush_caches(self) -> None:
        self.network.flush_caches()
        for engine in self.engines.values():
            engine.clear_response_caches()

    def reset_counters(self) -> None:
        for engine in self.engines.values():
            engine.reset_counters()
        for node in self.network.nodes.values():
            node.counters.clear()

    def snapshot(self) -> None:
        for engine in self.engines.values():
            engine.snapshot()

    def status(self) -> dict:
        report = {
            "mode": self.config.mode,
            "engines": {eid: engine.status() for eid, engine in self.engines.items()},
            "nodes": self.network.counters(),
        }
        if self.bloom_server is not None:
            report["bfServer"] = self.bloom_server.stats()
        return report


def network_cert_fetcher(substrate):
    """A TrustStore fetcher that pulls certificate wires off the network."""

    def fetch(name: Name):
        try:
            return substrate.get(name.text).payload
        except OgbError:
            return None

    return fetch


class SocketCluster:
    """The SimCluster deployment hosted on TCP listeners instead.

    `start` binds one server per engine plus the certificate and Bloom
    filter services and wires the filter subscriptions over real sockets;
    `substrate()` hands out a fresh client connected to everything.
    """

    def __init__(self, config: ClusterConfig, keystore: Optional[KeyStore] = None):
        config.validate()
        if config.mode != "socket":
            raise ConfigError("SocketCluster requires mode=socket, got %r"
                              % config.mode)
        self.config = config
        self.keys = keystore or KeyStore(config.keys_dir, config.seed)
        self.cert_repo = CertRepo()
        self.engines: dict[str, Engine] = {}
        self.servers: dict[str, ContentServer] = {}
        self._nonce = 0
        self._stopping = False
        self._threads: list = []

        _, admin_cert = self.keys.admin()
        self.anchor = admin_cert
        for cert in self.keys.certificates():
            self.cert_repo.add(cert)

        for ecfg in config.engines:
            self._add_engine(ecfg, admin_cert)

        self.cert_server = ContentServer(config.cert_host, config.cert_port)
        self.cert_server.attach_producer(CERT_ROOT, self.cert_repo.producer)

        self.bloom_server = None
        self.bf_server = None
        self.bf_client = None
        if config.bf_enabled:
            self.bloom_server = bloom.BloomServer(
                config.bf_m, config.bf_h,
                engines=[e.engine_id for e in config.engines])
            self.bf_server = ContentServer(config.bf_host, config.bf_port)
            self.bf_server.attach_producer(
                BF_QUERY_ROOT, BloomService(self.bloom_server).producer)

    def _cert_lookup(self, name: Name):
        """Repo lookup with a keystore rescan, so identities issued after
        startup still resolve."""
        wire = self.cert_repo.get_wire(name)
        if wire is None:
            for cert in self.keys.certificates():
                self.cert_repo.add(cert)
            wire = self.cert_repo.get_wire(name)
        return wire

    def _add_engine(self, ecfg: EngineConfig, anchor: trust.Certificate) -> None:
        kp, cert = self.keys.engine(ecfg.engine_id)
        self.cert_repo.add(cert)
        store = trust.TrustStore(anchor, rules=self.config.rules,
                                 fetcher=self._cert_lookup)
        storage = None
        if self.config.storage_dir is not None:
            storage = str(Path(self.config.storage_dir) / ecfg.engine_id)
        engine = Engine(ecfg, kp, cert, store, storage_dir=storage)
        server = ContentServer(ecfg.host, ecfg.port,
                               cache_capacity=ecfg.cache_capacity)
        for prefix in ecfg.served_prefixes:
            server.attach_producer(prefix, engine.handle_named_interest)
        server.attach_producer(bulk_channel(ecfg.engine_id),
                               engine.handle_service_interest)
        server.attach_producer("%s/%s" % (bloom.BF_TOPIC, ecfg.engine_id),
                               engine.handle_bf_interest)

        def publish(pub, _engine=engine, _server=server):
            _server.publish(_engine.bf_log[pub.seq])

        engine.publish_sink = publish
        self.engines[ecfg.engine_id] = engine
        self.servers[ecfg.engine_id] = server

    def start(self) -> None:
        for server in self.servers.values():
            server.start()
        self.cert_server.start()
        if self.bf_server is not None:
            self.bf_server.start()
        if self.bloom_server is not None:
            self.bf_client = SocketSubstrate(
                [server.address for server in self.servers.values()])
            for ecfg in self.config.engines:
                self._recover_engine_filter(ecfg.engine_id)
            for ecfg in self.config.engines:
                thread = threading.Thread(
                    target=self._subscription_loop, args=(ecfg.engine_id,),
                    daemon=True)
                thread.start()
                self._threads.append(thread)

    def stop(self) -> None:
        self._stopping = True
        if self.bf_client is not None:
            self.bf_client.close()
        for thread in self._threads:
            thread.join(timeout=2.0)
        for server in self.servers.values():
            server.stop()
        self.cert_server.stop()
        if self.bf_server is not None:
            self.bf_server.stop()

    def _service_name(self, engine_id: str, tag: str) -> str:
        self._nonce += 1
        return "%s/%s-%d" % (bulk_channel(engine_id), tag, self._nonce)

    def _recover_engine_filter(self, engine_id: str) -> None:
        result = self.bf_client.get(
            self._service_name(engine_id, "digest"),
            payload=canonical_json({"op": "digest"}))
        seq, bitmap = bloom.decode_digest(result.payload)
        self.bloom_server.load_digest(engine_id, seq, bitmap)

    def _subscription_loop(self, engine_id: str) -> None:
        while not self._stopping:
            seq = self.bloom_server.last_seq[engine_id] + 1
            try:
                result = self.bf_client.get(
                    bloom.publication_name(engine_id, seq), lifetime_ms=None)
            except OgbError as exc:
                if not self._stopping:
                    log.warning("bf subscription for %s ended: %s",
                                engine_id, exc)
                return
            pub = bloom.BfPublication.from_dict(
                json.loads(result.payload.decode("utf-8")))
            self.bloom_server.apply(pub)

    def addresses(self) -> list[tuple[str, int]]:
        peers = [server.address for server in self.servers.values()]
        peers.append(self.cert_server.address)
        if self.bf_server is not None:
            peers.append(self.bf_server.address)
        return peers

    def substrate(self) -> SocketSubstrate:
        return SocketSubstrate(self.addresses())

    def issue_user(self, tid: str, uid: str) -> tuple[trust.KeyPair, trust.Certificate]:
        _, tenant_cert = self.keys.tenant(tid)
        kp, cert = self.keys.user(tid, uid)
        self.cert_repo.add(tenant_cert)
        self.cert_repo.add(cert)
        return kp, cert

    def status(self) -> dict:
        report = {
            "mode": self.config.mode,
            "engines": {eid: engine.status()
                        for eid, engine in self.engines.items()},
        }
        if self.bloom_server is not None:
            report["bfServer"] = self.bloom_server.stats()
        return report
