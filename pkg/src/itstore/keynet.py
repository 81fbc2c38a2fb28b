"""Simulated key-supply network: links, relay, OTP channels, entropy taps.

The model follows a metropolitan quantum-key-distribution deployment: five
trusted nodes joined by six point-to-point links, each link growing raw
key material at a configured rate while simulated time advances. Raw link
key is only a budget; usable shared key between two nodes lives in a
per-pair stream and is minted by key relay, which debits every link on
the path by the requested amount (the one-time-pad cost of forwarding)
and credits the endpoint pair. A relay across one shared link is a plain
transfer with no overhead.

Pair-stream content is a keyed PRF over the simulation master seed, so
any byte range can be re-read by offset. Allocation is a monotone cursor:
a bit index is handed out at most once ever, which is the entire one-time
-pad discipline; envelopes carry the offsets their pads came from the way
deployed key-management interfaces carry key ids, and receivers re-read
those ranges instead of allocating.

Channels between registered endpoints encrypt with fresh pad bits, tag
with a Toeplitz hash whose per-channel seed grows lazily with the longest
message seen, and spend k fresh bits per message to one-time-pad the tag
(Wegman-Carter style: seed reuse is safe because tags never leave without
fresh pad). Sequence numbers are strictly increasing per directed pair;
a replayed or reordered envelope is rejected before any pad is touched.

Rates, lengths and losses in the default topology are simulation
parameters chosen to look like the published link classes, not
measurements.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field as dc_field

from .entropy import PrfBits, derive_key
from .errors import (
    ChannelIntegrityError,
    ConfigurationError,
    KeySupplyError,
    ProtocolError,
    ReplayError,
)
from .mac import toeplitz_tag_bits

__all__ = [
    "LinkSpec",
    "NodeSpec",
    "NetworkTopology",
    "SecureEnvelope",
    "KeyNetwork",
    "KsaSource",
    "DEFAULT_TOPOLOGY",
    "CHANNEL_TAG_BITS",
]

CHANNEL_TAG_BITS = 256
_SEQ_FIELD_BITS = 64


@dataclass(frozen=True)
class LinkSpec:
    name: str
    a: str
    b: str
    rate_bps: int
    length_km: float = 0.0
    loss_db: float = 0.0
    capacity_bits: int = 10_000_000

    def __post_init__(self):
        if self.a == self.b:
            raise ConfigurationError("link %s joins a node to itself" % self.name)
        if self.rate_bps < 0 or self.capacity_bits <= 0:
            raise ConfigurationError("link %s has a bad rate or capacity" % self.name)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    entropy_rate_bps: int = 1_000_000
    entropy_capacity_bits: int = 200_000_000
    initial_entropy_bits: int = 100_000_000


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple
    links: tuple

    def __post_init__(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate node names")
        link_names = [l.name for l in self.links]
        if len(set(link_names)) != len(link_names):
            raise ConfigurationError("duplicate link names")
        known = set(names)
        for link in self.links:
            if link.a not in known or link.b not in known:
                raise ConfigurationError(
                    "link %s references an unknown node" % link.name)
        if names and len(self._reachable(names[0])) != len(names):
            raise ConfigurationError("topology is not connected")

    def _neighbours(self, node):
        out = []
        for link in self.links:
            if link.a == node:
                out.append((link.b, link))
            elif link.b == node:
                out.append((link.a, link))
        return sorted(out, key=lambda t: (t[0], t[1].name))

    def _reachable(self, start):
        seen = {start}
        queue = deque([start])
        while queue:
            here = queue.popleft()
            for nxt, _ in self._neighbours(here):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def node_names(self):
        return [n.name for n in self.nodes]

    def shortest_path(self, a: str, b: str):
        """Minimum-hop link path from a to b, ties broken by node name so
        replays pick the same route."""
        if a == b:
            return []
        parents = {a: None}
        queue = deque([a])
        while queue:
            here = queue.popleft()
            for nxt, link in self._neighbours(here):
                if nxt not in parents:
                    parents[nxt] = (here, link)
                    if nxt == b:
                        path = []
                        cur = b
                        while parents[cur]:
                            prev, hop = parents[cur]
                            path.append(hop)
                            cur = prev
                        return list(reversed(path))
                    queue.append(nxt)
        raise KeySupplyError("no path between %s and %s" % (a, b))


# Default five-node, six-link layout. Connected: every node reaches the
# hub either directly or through its metro neighbour.
DEFAULT_TOPOLOGY = NetworkTopology(
    nodes=(
        NodeSpec("Koganei-1"),
        NodeSpec("Koganei-2"),
        NodeSpec("Koganei-3"),
        NodeSpec("Koganei-4"),
        NodeSpec("Ohtemachi-1"),
    ),
    links=(
        LinkSpec("NEC-0", "Koganei-1", "Koganei-2", rate_bps=250_000,
                 length_km=1.0, loss_db=0.3),
        LinkSpec("NEC-1", "Koganei-2", "Ohtemachi-1", rate_bps=80_000,
                 length_km=45.0, loss_db=14.5),
        LinkSpec("Toshiba", "Koganei-1", "Ohtemachi-1", rate_bps=300_000,
                 length_km=45.0, loss_db=14.5),
        LinkSpec("NTT-NICT", "Koganei-3", "Ohtemachi-1", rate_bps=2_000,
                 length_km=90.0, loss_db=27.0),
        LinkSpec("Gakushuin", "Koganei-3", "Koganei-4", rate_bps=10_000,
                 length_km=24.0, loss_db=7.0),
        LinkSpec("SeQureNet", "Koganei-4", "Ohtemachi-1", rate_bps=5_000,
                 length_km=24.0, loss_db=7.0),
    ),
)


@dataclass(frozen=True)
class SecureEnvelope:
    """One encrypted, tagged, sequenced message between two endpoints."""

    sender: str
    receiver: str
    seq: int
    ciphertext: bytes
    tag: int  # CHANNEL_TAG_BITS-wide integer
    pad_offset: int  # bit offset of the body pad in the pair stream
    tag_pad_offset: int  # bit offset of the tag pad


class _LinkState:
    __slots__ = ("spec", "buffered", "generated", "relayed_out", "overflow_lost",
                 "_carry")

    def __init__(self, spec: LinkSpec):
        self.spec = spec
        self.buffered = 0
        self.generated = 0  # bits that entered the buffer
        self.relayed_out = 0
        self.overflow_lost = 0  # produced but dropped at a full buffer
        self._carry = 0  # sub-bit remainder, rate_bps * ms mod 1000

    def advance(self, ms: int):
        raw = self.spec.rate_bps * ms + self._carry
        bits, self._carry = divmod(raw, 1000)
        room = self.spec.capacity_bits - self.buffered
        added = min(bits, room)
        self.buffered += added
        self.generated += added
        self.overflow_lost += bits - added


class _PairStream:
    """Application key between one node pair: PRF content, monotone cursor."""

    __slots__ = ("pair", "prf", "credited", "cursor")

    def __init__(self, pair, master: bytes):
        self.pair = pair
        self.prf = PrfBits(derive_key(master, "pair|%s|%s" % pair))
        self.credited = 0  # total bits ever relayed in
        self.cursor = 0  # total bits ever allocated out

    @property
    def available(self) -> int:
        return self.credited - self.cursor

    def allocate(self, nbits: int):
        """Hand out the next nbits as (offset, value); never re-issues."""
        if nbits > self.available:
            raise KeySupplyError(
                "pair %s|%s holds %d bits, need %d"
                % (self.pair + (self.available, nbits)))
        offset = self.cursor
        self.cursor += nbits
        return offset, self.prf.read_bits(offset, nbits)

    def read(self, offset: int, nbits: int) -> int:
        """Re-read an already-allocated range (receiver side)."""
        if offset < 0 or offset + nbits > self.cursor:
            raise ProtocolError("read outside the allocated key range")
        return self.prf.read_bits(offset, nbits)


class KsaSource:
    """Node-local randomness tap; RandomSource-compatible (take_bits)."""

    __slots__ = ("node", "prf", "available", "consumed", "capacity", "rate_bps",
                 "_cursor", "_carry")

    def __init__(self, spec: NodeSpec, master: bytes):
        self.node = spec.name
        self.prf = PrfBits(derive_key(master, "ksa|%s" % spec.name))
        self.available = min(spec.initial_entropy_bits, spec.entropy_capacity_bits)
        self.consumed = 0
        self.capacity = spec.entropy_capacity_bits
        self.rate_bps = spec.entropy_rate_bps
        self._cursor = 0
        self._carry = 0

    def advance(self, ms: int):
        raw = self.rate_bps * ms + self._carry
        bits, self._carry = divmod(raw, 1000)
        self.available = min(self.available + bits, self.capacity)

    def take_bits(self, nbits: int) -> int:
        if nbits < 0:
            raise ConfigurationError("cannot draw a negative bit count")
        if nbits == 0:
            return 0
        if nbits > self.available:
            raise KeySupplyError(
                "entropy pool at %s holds %d bits, need %d"
                % (self.node, self.available, nbits))
        value = self.prf.read_bits(self._cursor, nbits)
        self._cursor += nbits
        self.available -= nbits
        self.consumed += nbits
        return value

    def take_bytes(self, nbytes: int) -> bytes:
        return self.take_bits(nbytes * 8).to_bytes(nbytes, "big")


class _ChannelState:
    """Directed-channel bookkeeping shared by both simulated ends."""

    __slots__ = ("seed_bits", "seed_width", "next_seq", "last_recv_seq")

    def __init__(self):
        self.seed_bits = 0  # Toeplitz seed value grown so far
        self.seed_width = 0  # widest MAC input (bits) the seed covers
        self.next_seq = 0
        self.last_recv_seq = -1


class KeyNetwork:
    """The whole simulated key infrastructure plus its conservation ledger."""

    def __init__(self, topology: NetworkTopology = DEFAULT_TOPOLOGY,
                 master_seed: bytes = b"\x00" * 32,
                 tag_bits: int = CHANNEL_TAG_BITS):
        if tag_bits < 8 or tag_bits % 8:
            raise ConfigurationError("tag width must be a positive byte multiple")
        self.topology = topology
        self.master = derive_key(master_seed, "keynet")
        self.tag_bits = tag_bits
        self.now_ms = 0
        self.links = {l.name: _LinkState(l) for l in topology.links}
        self.pools = {n.name: KsaSource(n, self.master) for n in topology.nodes}
        self.streams = {}
        self.endpoints = {}  # endpoint name -> node name
        self.channels = {}  # (sender endpoint, receiver endpoint) -> state
        self.relay_overhead = 0
        self.messages_sent = 0

    # ------------------------------------------------------------- plumbing

    def advance(self, ms: int):
        """Advance simulated time: links and entropy pools accrue."""
        if ms < 0:
            raise ConfigurationError("time only moves forward")
        self.now_ms += ms
        for link in self.links.values():
            link.advance(ms)
        for pool in self.pools.values():
            pool.advance(ms)

    def _pair(self, a: str, b: str):
        return (a, b) if a <= b else (b, a)

    def pair_stream(self, a: str, b: str) -> _PairStream:
        if a == b:
            raise ConfigurationError("a node needs no key stream with itself")
        for n in (a, b):
            if n not in self.pools:
                raise ConfigurationError("unknown node %r" % n)
        pair = self._pair(a, b)
        if pair not in self.streams:
            self.streams[pair] = _PairStream(pair, self.master)
        return self.streams[pair]

    def relay_keys(self, a: str, b: str, amount: int, path=None):
        """Mint `amount` shared bits for (a, b), spending every hop.

        Checks the whole path first: a short hop fails the relay with no
        partial debit anywhere.
        """
        if amount <= 0:
            raise ConfigurationError("relay amount must be positive")
        stream = self.pair_stream(a, b)
        hops = path if path is not None else self.topology.shortest_path(a, b)
        if not hops:
            raise KeySupplyError("no relay path between %s and %s" % (a, b))
        states = [self.links[h.name if isinstance(h, LinkSpec) else h]
                  for h in hops]
        for st in states:
            if st.buffered < amount:
                raise KeySupplyError(
                    "link %s holds %d bits, relay needs %d"
                    % (st.spec.name, st.buffered, amount))
        for st in states:
            st.buffered -= amount
            st.relayed_out += amount
        stream.credited += amount
        self.relay_overhead += amount * (len(states) - 1)

    def ensure_pair_key(self, a: str, b: str, bits: int):
        """Top the (a, b) stream up to at least `bits` available."""
        stream = self.pair_stream(a, b)
        shortfall = bits - stream.available
        if shortfall > 0:
            self.relay_keys(a, b, shortfall)

    # ------------------------------------------------------------ endpoints

    def register_endpoint(self, endpoint: str, node: str):
        if node not in self.pools:
            raise ConfigurationError("unknown node %r" % node)
        existing = self.endpoints.get(endpoint)
        if existing is not None and existing != node:
            raise ConfigurationError(
                "endpoint %r already registered at %s" % (endpoint, existing))
        self.endpoints[endpoint] = node

    def _endpoint_node(self, endpoint: str) -> str:
        try:
            return self.endpoints[endpoint]
        except KeyError:
            raise ProtocolError("unregistered endpoint %r" % endpoint)

    def entropy_source(self, endpoint_or_node: str) -> KsaSource:
        """The randomness tap at an endpoint's node (or a node directly)."""
        node = self.endpoints.get(endpoint_or_node, endpoint_or_node)
        try:
            return self.pools[node]
        except KeyError:
            raise ProtocolError("no entropy pool for %r" % endpoint_or_node)

    def supply_randomness(self, endpoint_or_node: str, nbits: int) -> int:
        return self.entropy_source(endpoint_or_node).take_bits(nbits)

    # ------------------------------------------------------------- channels

    def _channel(self, sender: str, receiver: str) -> _ChannelState:
        key = (sender, receiver)
        if key not in self.channels:
            self.channels[key] = _ChannelState()
        return self.channels[key]

    def _mac_input(self, seq: int, ciphertext: bytes):
        width = _SEQ_FIELD_BITS + len(ciphertext) * 8
        value = (seq << (len(ciphertext) * 8)) | int.from_bytes(ciphertext, "big")
        return value, width

    def message_key_cost(self, sender: str, receiver: str, nbytes: int) -> int:
        """Bits a send of nbytes will consume: pad + tag pad + seed growth."""
        chan = self._channel(sender, receiver)
        width = _SEQ_FIELD_BITS + nbytes * 8
        need = self.tag_bits + width - 1
        have = self.tag_bits + chan.seed_width - 1 if chan.seed_width else 0
        return max(0, need - have) + nbytes * 8 + self.tag_bits

    def check_sendable(self, messages) -> None:
        """Raise KeySupplyError unless the whole message sequence could be
        paid for, assuming on-demand relays along shortest paths.

        Pure simulation -- no channel, stream or link state changes. Used
        by protocol phases that must refuse atomically before the first
        message leaves. messages: iterable of (sender, receiver, nbytes).
        """
        widths = {}
        avail = {}
        buffered = {name: st.buffered for name, st in self.links.items()}
        for sender, receiver, nbytes in messages:
            node_s = self._endpoint_node(sender)
            node_r = self._endpoint_node(receiver)
            if node_s == node_r:
                continue  # local handoff, no key spent
            ck = (sender, receiver)
            if ck not in widths:
                chan = self.channels.get(ck)
                widths[ck] = chan.seed_width if chan else 0
            pair = self._pair(node_s, node_r)
            if pair not in avail:
                stream = self.streams.get(pair)
                avail[pair] = stream.available if stream else 0
            w = widths[ck]
            need_w = _SEQ_FIELD_BITS + nbytes * 8
            have_seed = self.tag_bits + w - 1 if w else 0
            growth = max(0, (self.tag_bits + need_w - 1) - have_seed)
            cost = growth + nbytes * 8 + self.tag_bits
            if avail[pair] < cost:
                shortfall = cost - avail[pair]
                path = self.topology.shortest_path(*pair)
                for link in path:
                    if buffered[link.name] < shortfall:
                        raise KeySupplyError(
                            "cannot deliver %d bytes %s->%s: link %s holds "
                            "%d bits, the relay needs %d"
                            % (nbytes, sender, receiver, link.name,
                               buffered[link.name], shortfall))
                for link in path:
                    buffered[link.name] -= shortfall
                avail[pair] += shortfall
            avail[pair] -= cost
            if need_w > w:
                widths[ck] = need_w

    def secure_send(self, sender: str, receiver: str, plaintext: bytes) -> SecureEnvelope:
        """Encrypt, tag and sequence one message. Key cost: one pad bit per
        plaintext bit, tag_bits of tag pad, plus any seed growth. A short
        stream refuses the send atomically: no bit is allocated."""
        node_s = self._endpoint_node(sender)
        node_r = self._endpoint_node(receiver)
        if node_s == node_r:
            raise ProtocolError(
                "co-located endpoints exchange data locally, not by envelope")
        stream = self.pair_stream(node_s, node_r)
        chan = self._channel(sender, receiver)

        _, width = self._mac_input(0, plaintext)
        need_seed = self.tag_bits + width - 1
        have_seed = self.tag_bits + chan.seed_width - 1 if chan.seed_width else 0
        growth = max(0, need_seed - have_seed)
        total = growth + len(plaintext) * 8 + self.tag_bits
        if stream.available < total:
            raise KeySupplyError(
                "send needs %d key bits, pair %s|%s has %d"
                % (total, stream.pair[0], stream.pair[1], stream.available))
        if growth:
            _, fresh = stream.allocate(growth)
            chan.seed_bits |= fresh << have_seed
            chan.seed_width = width
        pad_offset, pad = stream.allocate(len(plaintext) * 8)
        tag_pad_offset, tag_pad = stream.allocate(self.tag_bits)

        seq = chan.next_seq
        chan.next_seq += 1
        ciphertext = (int.from_bytes(plaintext, "big") ^ pad).to_bytes(
            len(plaintext), "big")
        value, width = self._mac_input(seq, ciphertext)
        tag = toeplitz_tag_bits(chan.seed_bits, value, width, self.tag_bits) ^ tag_pad
        self.messages_sent += 1
        return SecureEnvelope(sender, receiver, seq, ciphertext, tag,
                              pad_offset, tag_pad_offset)

    def secure_recv(self, envelope: SecureEnvelope) -> bytes:
        """Verify sequence and tag, then decrypt. Replay and integrity
        failures raise before any state is updated."""
        node_s = self._endpoint_node(envelope.sender)
        node_r = self._endpoint_node(envelope.receiver)
        stream = self.pair_stream(node_s, node_r)
        chan = self._channel(envelope.sender, envelope.receiver)

        if envelope.seq <= chan.last_recv_seq:
            raise ReplayError(
                "sequence %d not above %d on %s->%s"
                % (envelope.seq, chan.last_recv_seq,
                   envelope.sender, envelope.receiver))
        value, width = self._mac_input(envelope.seq, envelope.ciphertext)
        if width > chan.seed_width:
            raise ChannelIntegrityError("message wider than the channel seed")
        tag_pad = stream.read(envelope.tag_pad_offset, self.tag_bits)
        expect = toeplitz_tag_bits(chan.seed_bits, value, width,
                                   self.tag_bits) ^ tag_pad
        if expect != envelope.tag:
            raise ChannelIntegrityError(
                "tag mismatch on %s->%s seq %d"
                % (envelope.sender, envelope.receiver, envelope.seq))
        pad = stream.read(envelope.pad_offset, len(envelope.ciphertext) * 8)
        chan.last_recv_seq = envelope.seq
        return (int.from_bytes(envelope.ciphertext, "big") ^ pad).to_bytes(
            len(envelope.ciphertext), "big")

    # --------------------------------------------------------------- ledger

    def ledger(self) -> dict:
        """Counters for reports and the conservation assertion."""
        link_rows = {
            name: {
                "generated": st.generated,
                "buffered": st.buffered,
                "relayed_out": st.relayed_out,
                "overflow_lost": st.overflow_lost,
            }
            for name, st in sorted(self.links.items())
        }
        pair_rows = {
            "%s|%s" % pair: {
                "credited": st.credited,
                "consumed": st.cursor,
                "buffered": st.available,
            }
            for pair, st in sorted(self.streams.items())
        }
        pool_rows = {
            name: {"available": p.available, "consumed": p.consumed}
            for name, p in sorted(self.pools.items())
        }
        return {
            "time_ms": self.now_ms,
            "links": link_rows,
            "pairs": pair_rows,
            "pools": pool_rows,
            "relay_overhead": self.relay_overhead,
            "messages_sent": self.messages_sent,
        }

    def conservation_holds(self) -> bool:
        """generated == buffered + consumed + relay overhead, exactly."""
        generated = sum(st.generated for st in self.links.values())
        link_buffered = sum(st.buffered for st in self.links.values())
        pair_buffered = sum(st.available for st in self.streams.values())
        consumed = sum(st.cursor for st in self.streams.values())
        return generated == (link_buffered + pair_buffered + consumed
                             + self.relay_overhead)

    # ------------------------------------------------------------ snapshots

    def to_state(self) -> dict:
        """JSON-safe snapshot of all counters and channel state. Pair-stream
        contents are PRF-derived, so cursors are enough to rebuild; the
        master seed is NOT included and must be re-supplied on restore."""
        return {
            "now_ms": self.now_ms,
            "tag_bits": self.tag_bits,
            "links": {
                name: [st.buffered, st.generated, st.relayed_out,
                       st.overflow_lost, st._carry]
                for name, st in self.links.items()
            },
            "pools": {
                name: [p.available, p.consumed, p._cursor, p._carry]
                for name, p in self.pools.items()
            },
            "streams": {
                "%s|%s" % pair: [st.credited, st.cursor]
                for pair, st in self.streams.items()
            },
            "endpoints": dict(self.endpoints),
            "channels": {
                "%s|%s" % key: ["%x" % chan.seed_bits, chan.seed_width,
                                chan.next_seq, chan.last_recv_seq]
                for key, chan in self.channels.items()
            },
            "relay_overhead": self.relay_overhead,
            "messages_sent": self.messages_sent,
        }

    @classmethod
    def from_state(cls, state: dict, topology: NetworkTopology,
                   master_seed: bytes) -> "KeyNetwork":
        net = cls(topology, master_seed, tag_bits=state["tag_bits"])
        net.now_ms = state["now_ms"]
        for name, row in state["links"].items():
            st = net.links[name]
            (st.buffered, st.generated, st.relayed_out,
             st.overflow_lost, st._carry) = row
        for name, row in state["pools"].items():
            p = net.pools[name]
            p.available, p.consumed, p._cursor, p._carry = row
        for key, row in state["streams"].items():
            a, b = key.split("|")
            stream = net.pair_stream(a, b)
            stream.credited, stream.cursor = row
        for endpoint, node in state["endpoints"].items():
            net.register_endpoint(endpoint, node)
        for key, row in state["channels"].items():
            sender, receiver = key.split("|")
            chan = net._channel(sender, receiver)
            chan.seed_bits = int(row[0], 16)
            chan.seed_width, chan.next_seq, chan.last_recv_seq = row[1:]
        net.relay_overhead = state["relay_overhead"]
        net.messages_sent = state["messages_sent"]
        return net
