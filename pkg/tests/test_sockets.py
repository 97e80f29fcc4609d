import io
import socket
import threading
import time

import pytest

from ogb import trust
from ogb.cluster import (ClusterConfig, SimCluster, SocketCluster,
                         network_cert_fetcher)
from ogb.errors import NoRouteError, ProtocolError
from ogb.frontend import Credentials, InsertHandler, QueryHandler, RangeQuery
from ogb.geodata import canonical_json
from ogb.grid import BoundingBox
from ogb.icn import wire
from ogb.icn.core import ContentObject, Interest, build_segments
from ogb.icn.sockets import ContentServer, SocketSubstrate
from ogb.trust import TrustEnvelope

from conftest import starbucks_dict


class _FakeSock:
    def __init__(self, data=b""):
        self._reader = io.BytesIO(data)
        self.sent = bytearray()

    def sendall(self, data):
        self.sent.extend(data)

    def recv(self, count):
        return self._reader.read(count)


def test_wire_round_trips():
    envelope = TrustEnvelope("ndn:/OGB-SYS/certs/x", b"\x01\x02")
    interest = Interest("ndn:/OGB/12/x", b"params", envelope, 2500.0)
    parsed = wire.parse_interest(wire.interest_message(interest, nonce=7))
    assert parsed == interest

    content = ContentObject("ndn:/OGB/12/x/seg=0", b"\x00\xffdata", 60000.0,
                            envelope, final_segment=4)
    assert wire.parse_content(wire.content_message(content)) == content

    sock = _FakeSock()
    wire.write_frame(sock, wire.announce_message("ndn:/OGB/12", last=True))
    echoed = wire.read_frame(_FakeSock(bytes(sock.sent)))
    assert echoed == {"type": "announce", "name": "ndn:/OGB/12", "last": True}


def test_wire_rejects_garbage():
    assert wire.read_frame(_FakeSock(b"")) is None
    with pytest.raises(ProtocolError):
        wire.read_frame(_FakeSock(b"\x00\x00\x00\x10abc"))
    with pytest.raises(ProtocolError):
        wire.read_frame(_FakeSock(b"\xff\xff\xff\xff"))
    with pytest.raises(ProtocolError):
        wire.read_frame(_FakeSock(b"\x00\x00\x00\x02[]"))


def echo_server():
    server = ContentServer(cache_capacity=8)
    calls = {"count": 0}

    def producer(interest):
        calls["count"] += 1
        from ogb.names import Name, split_segment
        base, seg = split_segment(Name.from_text(interest.name))
        segments = build_segments(base, b"pong" * 6000, freshness_ms=60000.0)
        if seg is None or seg >= len(segments):
            return None
        return segments[seg], 0.0

    server.attach_producer("ndn:/echo", producer)
    server.start()
    return server, calls


def test_segmented_fetch_and_server_cache():
    server, calls = echo_server()
    try:
        client = SocketSubstrate([server.address])
        result = client.get("ndn:/echo/a")
        assert result.payload == b"pong" * 6000
        assert len(result.segments) == 3
        first = calls["count"]
        again = client.get("ndn:/echo/a")
        assert again.payload == result.payload
        assert calls["count"] == first          # served from the content store

        with pytest.raises(NoRouteError):
            client.get("ndn:/elsewhere/a")
        client.close()
    finally:
        server.stop()


def test_publish_satisfies_held_interest():
    server = ContentServer()
    server.attach_producer("ndn:/topic", lambda interest: None)
    server.start()
    try:
        client = SocketSubstrate([server.address])
        results = {}

        def fetch():
            results["got"] = client.get("ndn:/topic/next", lifetime_ms=None)

        thread = threading.Thread(target=fetch, daemon=True)
        thread.start()
        time.sleep(0.05)
        content = build_segments("ndn:/topic/next", b"later", 1000.0)[0]
        server.publish(content)
        thread.join(timeout=5.0)
        assert results["got"].payload == b"later"
        client.close()
    finally:
        server.stop()


def free_ports(count):
    socks = [socket.create_server(("127.0.0.1", 0)) for _ in range(count)]
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def cluster_dict(mode, ports=None):
    engines = [
        {"id": "east", "servedPrefixes": ["ndn:/OGB/12"]},
        {"id": "west", "servedPrefixes": ["ndn:/OGB/-74"]},
    ]
    data = {
        "mode": mode,
        "seed": 5,
        "engines": engines,
        "bfServer": {"m": 4096, "h": 5},
        "topology": {"handlerLinkMbps": None},
    }
    if mode == "socket":
        for engine, port in zip(engines, ports):
            engine["address"] = {"host": "127.0.0.1", "port": port}
        data["bfServer"]["address"] = {"host": "127.0.0.1", "port": ports[2]}
        data["certRepo"] = {"address": {"host": "127.0.0.1", "port": ports[3]}}
    return data


def handlers_for(substrate, anchor, fetcher, creds):
    store = trust.TrustStore(anchor, fetcher=fetcher)
    return (QueryHandler(substrate, store, creds),
            InsertHandler(substrate, store, creds))


WORLD = [
    starbucks_dict(),
    {"type": "Feature",
     "geometry": {"type": "Point", "coordinates": [-73.98, 40.75]},
     "properties": {"oid": 2, "tid": "Foo", "uid": "Alice", "cid": "ShopApp"}},
    {"type": "Feature",
     "geometry": {"type": "MultiPoint",
                  "coordinates": [[12.511, 41.891], [12.531, 41.891]]},
     "properties": {"oid": 3, "tid": "Foo", "uid": "Alice", "cid": "ShopApp"}},
]

QUERIES = [
    (BoundingBox.of(12.50, 41.88, 12.54, 41.90), "intersect"),
    (BoundingBox.of(12.50, 41.88, 12.52, 41.90), "include"),
    (BoundingBox.of(-74.00, 40.70, -73.90, 40.80), "intersect"),
]


def run_queries(query_handler, use_bf=False):
    outcomes = []
    for box, mode in QUERIES:
        report = query_handler.range_query(
            RangeQuery(bbox=box, mode=mode, tid="Foo", cid="ShopApp",
                       use_bf=use_bf))
        outcomes.append(frozenset(canonical_json(f.raw) for f in report.features))
    return outcomes


def await_bf_sync(cluster, deadline_s=5.0):
    limit = time.monotonic() + deadline_s
    while time.monotonic() < limit:
        if all(cluster.bloom_server.last_seq[eid] == engine.cbf.seq - 1
               for eid, engine in cluster.engines.items()):
            return
        time.sleep(0.02)
    raise AssertionError("bloom server never caught up")


def test_socket_cluster_round_trip():
    ports = free_ports(4)
    cluster = SocketCluster(ClusterConfig.from_dict(cluster_dict("socket", ports)))
    cluster.start()
    try:
        kp, cert = cluster.issue_user("Foo", "Alice")
        creds = Credentials("Foo", "Alice", kp, cert)
        substrate = cluster.substrate()
        qh, ih = handlers_for(substrate, cluster.anchor,
                              network_cert_fetcher(substrate), creds)
        for feature in WORLD:
            assert ih.insert(feature).all_accepted
        await_bf_sync(cluster)

        plain = run_queries(qh)
        reduced = run_queries(qh, use_bf=True)
        assert plain == reduced
        assert len(plain[0]) == 2               # starbucks + the multipoint
        substrate.close()
    finally:
        cluster.stop()


def test_socket_and_sim_modes_agree_on_result_sets():
    ports = free_ports(4)
    socket_cluster = SocketCluster(
        ClusterConfig.from_dict(cluster_dict("socket", ports)))
    socket_cluster.start()
    try:
        kp, cert = socket_cluster.issue_user("Foo", "Alice")
        creds = Credentials("Foo", "Alice", kp, cert)
        substrate = socket_cluster.substrate()
        qh, ih = handlers_for(substrate, socket_cluster.anchor,
                              network_cert_fetcher(substrate), creds)
        for feature in WORLD:
            assert ih.insert(feature).all_accepted
        await_bf_sync(socket_cluster)
        socket_results = run_queries(qh)
        substrate.close()
    finally:
        socket_cluster.stop()

    sim_cluster = SimCluster(ClusterConfig.from_dict(cluster_dict("sim")))
    kp, cert = sim_cluster.issue_user("Foo", "Alice")
    creds = Credentials("Foo", "Alice", kp, cert)
    qh, ih = handlers_for(sim_cluster.substrate, sim_cluster.anchor,
                          sim_cluster.cert_repo.get_wire, creds)
    for feature in WORLD:
        assert ih.insert(feature).all_accepted
    sim_cluster.network.loop.run_until_idle()
    sim_results = run_queries(qh)

    assert socket_results == sim_results
