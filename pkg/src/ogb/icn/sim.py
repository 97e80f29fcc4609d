"""Discrete-event simulation of a named-data network.

Virtual time is in milliseconds.  Links serialize transmissions per
direction at a configured bandwidth; producer and handler processing cost is
modeled explicitly (producers return a delay, consumers call
`EventLoop.advance`).  The whole network runs single-threaded, so runs are
deterministic for a fixed input sequence.
"""

from __future__ import annotations

import heapq
from collections import Counter, deque
from typing import Callable, Optional

from ..errors import ConfigError, NoRouteError, TimeoutError_, ValidationError
from ..names import Name, segment_name
from .core import (
    DEFAULT_LIFETIME_MS,
    ContentObject,
    ContentStore,
    FetchResult,
    Fib,
    Interest,
    Pit,
)


class _Event:
    __slots__ = ("fn", "args", "cancelled")

    def __init__(self, fn, args):
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class EventLoop:
    """A heap-driven scheduler over virtual milliseconds.

    `advance` models synchronous processing time inside a handler: it pushes
    the clock forward without running events, so work scheduled meanwhile is
    delivered afterwards, exactly as if the handler had been busy.
    """

    def __init__(self):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0

    def schedule(self, delay_ms: float, fn, *args) -> _Event:
        event = _Event(fn, args)
        self._seq += 1
        heapq.heappush(self._heap, (self.now + max(delay_ms, 0.0), self._seq, event))
        return event

    def advance(self, delay_ms: float) -> None:
        self.now += max(delay_ms, 0.0)

    def _step(self) -> None:
        when, _, event = heapq.heappop(self._heap)
        if event.cancelled:
            return
        if when > self.now:
            self.now = when
        event.fn(*event.args)

    def run_until(self, predicate: Callable[[], bool]) -> bool:
        """Run events until the predicate holds; False if the heap drained."""
        while not predicate():
            if not self._heap:
                return False
            self._step()
        return True

    def run_until_idle(self, limit_ms: Optional[float] = None) -> None:
        while self._heap and (limit_ms is None or self._heap[0][0] <= limit_ms):
            self._step()


class Future:
    """Single-assignment result used by asynchronous fetches."""

    def __init__(self):
        self.done = False
        self.value = None
        self.error: Optional[Exception] = None
        self._callbacks: list = []

    def resolve(self, value) -> None:
        if self.done:
            return
        self.done = True
        self.value = value
        for fn in self._callbacks:
            fn(self)

    def fail(self, error: Exception) -> None:
        if self.done:
            return
        self.done = True
        self.error = error
        for fn in self._callbacks:
            fn(self)

    def add_done_callback(self, fn) -> None:
        if self.done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def result(self):
        if not self.done:
            raise RuntimeError("future is not resolved")
        if self.error is not None:
            raise self.error
        return self.value


class SimLink:
    """One direction of a link; bandwidth None means unconstrained."""

    def __init__(self, loop: EventLoop, bandwidth_mbps: Optional[float],
                 latency_ms: float = 0.0):
        self.loop = loop
        self.bandwidth_mbps = bandwidth_mbps
        self.latency_ms = latency_ms
        self.next_free = 0.0
        self.bytes_sent = 0

    def transmit(self, nbytes: int, deliver, *args) -> None:
        start = max(self.loop.now, self.next_free)
        if self.bandwidth_mbps is None:
            tx = 0.0
        else:
            tx = nbytes * 8.0 / (self.bandwidth_mbps * 1000.0)
        self.next_free = start + tx
        self.bytes_sent += nbytes
        self.loop.schedule(self.next_free + self.latency_ms - self.loop.now,
                           deliver, *args)


LOCAL = "local"


class SimNode:
    """A forwarder with FIB/PIT/CS plus locally attached producers.

    A producer takes an Interest and returns (ContentObject, delay_ms) or
    None to hold the PIT entry until `satisfy` is called with a matching
    content (long-lived subscriptions work this way).
    """

    def __init__(self, network: "SimNetwork", node_id: str, cache_capacity: int = 0):
        self.network = network
        self.id = node_id
        self.loop = network.loop
        self.fib = Fib()
        self.pit = Pit()
        self.cs = ContentStore(cache_capacity)
        self.links: dict[str, SimLink] = {}
        self.producers: list[tuple[tuple[str, ...], Callable]] = []
        self.counters: Counter = Counter()

    def attach_producer(self, prefix: str, handler) -> None:
        self.producers.append((Name.from_text(prefix).components, handler))

    def _find_producer(self, name: str):
        comps = Name.from_text(name).components
        best = None
        for pcomps, handler in self.producers:
            if comps[:len(pcomps)] == pcomps:
                if best is None or len(pcomps) > len(best[0]):
                    best = (pcomps, handler)
        return best[1] if best else None

    def express(self, interest: Interest, on_content) -> None:
        """Entry point for locally originated interests."""
        self.receive_interest(interest, (LOCAL, on_content))

    def receive_interest(self, interest: Interest, face) -> None:
        self.counters["interestsIn"] += 1
        cached = self.cs.get(interest.name, self.loop.now)
        if cached is not None:
            self.counters["cacheHits"] += 1
            self._deliver(cached, face)
            return
        expiry = None
        if interest.lifetime_ms is not None:
            expiry = self.loop.now + interest.lifetime_ms
        if not self.pit.add(interest.name, face, expiry, self.loop.now):
            self.counters["aggregated"] += 1
            return
        producer = self._find_producer(interest.name)
        if producer is not None:
            self.counters["producerCalls"] += 1
            result = producer(interest)
            if result is None:
                return
            content, delay = result
            if delay > 0:
                self.loop.schedule(delay, self.satisfy, content)
            else:
                self.satisfy(content)
            return
        hop = self.fib.lookup(interest.name)
        if hop is None:
            self.counters["noRoute"] += 1
            for f in self.pit.consume(interest.name):
                if f[0] == LOCAL:
                    self.loop.schedule(0, f[1], None)
            return
        self.counters["forwarded"] += 1
        link = self.links[hop]
        peer = self.network.nodes[hop]
        link.transmit(interest.wire_size, peer.receive_interest, interest,
                      ("node", self.id))

    def receive_content(self, content: ContentObject, face) -> None:
        self.counters["contentsIn"] += 1
        faces = self.pit.consume(content.name)
        if not faces:
            self.counters["unsolicited"] += 1
            return
        self.cs.put(content, self.loop.now)
        for f in faces:
            self._deliver(content, f)

    def satisfy(self, content: ContentObject) -> None:
        """Producer-side completion: cache and answer all waiting faces."""
        self.cs.put(content, self.loop.now)
        faces = self.pit.consume(content.name)
        if not faces:
            self.counters["publishedUnconsumed"] += 1
            return
        self.counters["satisfied"] += 1
        for f in faces:
            self._deliver(content, f)

    def _deliver(self, content: ContentObject, face) -> None:
        if face[0] == LOCAL:
            self.loop.schedule(0, face[1], content)
        else:
            hop = face[1]
            self.links[hop].transmit(content.wire_size,
                                     self.network.nodes[hop].receive_content,
                                     content, ("node", self.id))


class SimNetwork:
    """Nodes, links, and prefix announcements over one event loop."""

    def __init__(self):
        self.loop = EventLoop()
        self.nodes: dict[str, SimNode] = {}
        self._adjacency: dict[str, list[str]] = {}

    def add_node(self, node_id: str, cache_capacity: int = 0) -> SimNode:
        if node_id in self.nodes:
            raise ConfigError("duplicate node id %r" % node_id)
        node = SimNode(self, node_id, cache_capacity)
        self.nodes[node_id] = node
        self._adjacency[node_id] = []
        return node

    def connect(self, a: str, b: str, bandwidth_mbps: Optional[float] = None,
                latency_ms: float = 0.0,
                reverse_bandwidth_mbps: Optional[float] = None,
                ) -> None:
        """Create both directions of a link; `bandwidth_mbps` shapes a->b and
        the reverse direction uses `reverse_bandwidth_mbps` (default same)."""
        if a not in self.nodes or b not in self.nodes:
            raise ConfigError("connect() on unknown node: %r-%r" % (a, b))
        if b in self.nodes[a].links:
            raise ConfigError("duplicate link %r-%r" % (a, b))
        if reverse_bandwidth_mbps is None:
            reverse_bandwidth_mbps = bandwidth_mbps
        self.nodes[a].links[b] = SimLink(self.loop, bandwidth_mbps, latency_ms)
        self.nodes[b].links[a] = SimLink(self.loop, reverse_bandwidth_mbps, latency_ms)
        self._adjacency[a].append(b)
        self._adjacency[b].append(a)

    def announce(self, prefix: str, origin_id: str) -> None:
        """Install FIB entries on every node pointing one hop toward origin."""
        if origin_id not in self.nodes:
            raise ConfigError("announce from unknown node %r" % origin_id)
        toward: dict[str, str] = {}
        queue = deque([origin_id])
        seen = {origin_id}
        while queue:
            current = queue.popleft()
            for neighbor in self._adjacency[current]:
                if neighbor in seen:
                    continue
                seen.add(neighbor)
                toward[neighbor] = current
                queue.append(neighbor)
        for node_id, hop in toward.items():
            self.nodes[node_id].fib.add(prefix, hop)

    def flush_caches(self) -> None:
        for node in self.nodes.values():
            node.cs.clear()

    def counters(self) -> dict[str, dict]:
        return {node_id: dict(node.counters) for node_id, node in self.nodes.items()}


class GetOperation:
    """Fetch one named object: segment 0 first, then the rest pipelined.

    Each segment interest may be individually signed (`sign` maps a name to
    an envelope); `validator` runs on every arriving segment and a raised
    ValidationError fails the whole fetch.  One retry per segment, then
    timeout.
    """

    def __init__(self, node: SimNode, name: str, payload: bytes = b"",
                 sign: Optional[Callable] = None,
                 validator: Optional[Callable[[ContentObject], None]] = None,
                 lifetime_ms: Optional[float] = DEFAULT_LIFETIME_MS,
                 retries: int = 1):
        self.node = node
        self.base = Name.from_text(name)
        self.name = name
        self.payload = payload
        self.sign = sign
        self.validator = validator
        self.lifetime_ms = lifetime_ms
        self.future = Future()
        self._segments: dict[int, ContentObject] = {}
        self._final: Optional[int] = None
        self._requested: set[int] = set()
        self._retries_left: dict[int, int] = {}
        self._retries = retries
        self._timeouts: dict[int, _Event] = {}
        self._callbacks: dict[int, Callable] = {}

    def start(self) -> Future:
        self._request(0)
        return self.future

    def _segment_interest(self, index: int) -> Interest:
        seg = segment_name(self.base, index).text
        payload = self.payload if index == 0 else b""
        envelope = self.sign(seg, payload) if self.sign else None
        return Interest(seg, payload, envelope, self.lifetime_ms)

    def _request(self, index: int) -> None:
        self._requested.add(index)
        self._retries_left.setdefault(index, self._retries)
        if index not in self._callbacks:
            def on_content(content, _index=index):
                self._on_segment(_index, content)
            self._callbacks[index] = on_content
        interest = self._segment_interest(index)
        if self.lifetime_ms is not None:
            self._timeouts[index] = self.node.loop.schedule(
                self.lifetime_ms, self._on_timeout, index)
        self.node.express(interest, self._callbacks[index])

    def _on_timeout(self, index: int) -> None:
        if self.future.done or index in self._segments:
            return
        if self._retries_left.get(index, 0) > 0:
            self._retries_left[index] -= 1
            self._request(index)
            return
        self._abort(TimeoutError_("timed out fetching %s segment %d"
                                  % (self.name, index)))

    def _on_segment(self, index: int, content: Optional[ContentObject]) -> None:
        if self.future.done or index in self._segments:
            return
        timeout = self._timeouts.pop(index, None)
        if timeout is not None:
            timeout.cancel()
        if content is None:
            self._abort(NoRouteError("no route for %s" % self.name))
            return
        if self.validator is not None:
            try:
                self.validator(content)
            except ValidationError as exc:
                self._abort(exc)
                return
        self._segments[index] = content
        if content.final_segment is not None:
            self._final = content.final_segment
        if self._final is None:
            self._abort(ValidationError("integrity",
                                        "segment %d of %s lacks a final segment index"
                                        % (index, self.name)))
            return
        for i in range(self._final + 1):
            if i not in self._requested:
                self._request(i)
        if len(self._segments) == self._final + 1:
            ordered = [self._segments[i] for i in range(self._final + 1)]
            payload = b"".join(c.payload for c in ordered)
            self.future.resolve(FetchResult(self.name, payload, ordered))

    def _abort(self, error: Exception) -> None:
        for timeout in self._timeouts.values():
            timeout.cancel()
        self._timeouts.clear()
        self.future.fail(error)


class SimSubstrate:
    """Consumer-side facade over one node of the simulated network."""

    def __init__(self, network: SimNetwork, node: SimNode):
        self.network = network
        self.node = node
        self.loop = network.loop

    def now_ms(self) -> float:
        return self.loop.now

    def advance(self, delay_ms: float) -> None:
        self.loop.advance(delay_ms)

    def get_async(self, name: str, payload: bytes = b"",
                  sign: Optional[Callable] = None,
                  validator: Optional[Callable] = None,
                  lifetime_ms: Optional[float] = DEFAULT_LIFETIME_MS,
                  retries: int = 1) -> Future:
        op = GetOperation(self.node, name, payload, sign, validator,
                          lifetime_ms, retries)
        return op.start()

    def get(self, name: str, **kwargs) -> FetchResult:
        future = self.get_async(name, **kwargs)
        if not self.loop.run_until(lambda: future.done):
            raise TimeoutError_("network went idle while fetching %s" % name)
        return future.result()

    def get_many(self, requests: list[dict], window: int = 8) -> list:
        """Fetch several objects with at most `window` in flight; returns a
        FetchResult or an Exception per request, in order."""
        results: list = [None] * len(requests)
        state = {"next": 0, "pending": 0}

        def launch() -> None:
            while state["next"] < len(requests) and state["pending"] < window:
                idx = state["next"]
                state["next"] += 1
                state["pending"] += 1
                request = dict(requests[idx])
                name = request.pop("name")
                future = self.get_async(name, **request)

                def finish(fut, _idx=idx):
                    results[_idx] = fut.error if fut.error is not None else fut.value
                    state["pending"] -= 1
                    launch()

                future.add_done_callback(finish)

        launch()
        done = lambda: state["pending"] == 0 and state["next"] == len(requests)
        if not self.loop.run_until(done):
            raise TimeoutError_("network went idle during a batched fetch")
        return results
