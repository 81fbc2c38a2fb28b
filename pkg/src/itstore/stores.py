"""Durable role-local storage: tamper-evident logs and share persistence.

Each protocol role owns one directory and is the only writer to it:

  HolderStore      -- a holder's share sets plus a consumption journal so a
                      masking tuple is spent at most once across crashes.
  VerifierStore    -- the append-only registration record log; any byte of
                      an existing record is covered by a rolling hash chain
                      and a flipped bit is detected on load.
  CalculatorStore  -- deliberately tiny records: per secret exactly the
                      16-byte id (as the file name), the 8-byte receipt
                      time, and the raw MAC seed. Nothing derived from the
                      payload data ever touches this directory.

Erasure here means overwrite-then-truncate: the file's bytes are zeroed in
place and flushed before the space is released, so dropped share values and
seeds do not linger in the store files. The journal entry claiming a tuple
is written before the tuple values are released to the caller; a crash
between the two costs the tuple but can never hand it out twice.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ConfigurationError,
    PrecomputationExhaustedError,
    ProtocolError,
    TamperDetectedError,
)
from .field import PrimeField
from .mac import MacScheme, MacSeed, MacTag, seed_from_bytes, seed_to_bytes
from .spss import HolderShareSet, PrecomputedTuple, SpssParams, holder_respond

__all__ = [
    "ChainedLog",
    "VerifierRecord",
    "VerifierStore",
    "CalculatorStore",
    "HolderStore",
    "contains_window",
    "directory_contains_window",
    "secure_erase",
    "erase_and_rewrite",
]

_CHAIN_GENESIS = b"\x00" * 32
_CHAIN_BYTES = 32
_HOLDER_MAGIC = b"ITHS1\n"
_CALC_MAGIC = b"ITCS1\n"


# -------------------------------------------------------------- erasure

def secure_erase(path) -> None:
    """Destroy a file's content before unlinking it."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "r+b") as fh:
        if size:
            fh.write(b"\x00" * size)
            fh.flush()
            os.fsync(fh.fileno())
        fh.seek(0)
        fh.truncate()
        fh.flush()
        os.fsync(fh.fileno())
    path.unlink()


def erase_and_rewrite(path, content: bytes) -> None:
    """Replace a file so the previous bytes are overwritten, not orphaned."""
    path = Path(path)
    if path.exists():
        size = path.stat().st_size
        with open(path, "r+b") as fh:
            if size:
                fh.write(b"\x00" * size)
                fh.flush()
                os.fsync(fh.fileno())
            fh.seek(0)
            fh.truncate()
            fh.write(content)
            fh.flush()
            os.fsync(fh.fileno())
        return
    with open(path, "wb") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())


def contains_window(haystack: bytes, needle: bytes, window: int = 8) -> bool:
    """True when any window-byte substring of needle occurs in haystack.

    The erasure checks scan store files with this: finding even one window
    of a supposedly destroyed value counts as a leak. Needles shorter than
    the window are searched for whole.
    """
    if not needle or not haystack:
        return False
    w = min(window, len(needle))
    if len(haystack) < w:
        return False
    targets = {needle[i:i + w] for i in range(len(needle) - w + 1)}
    for i in range(len(haystack) - w + 1):
        if haystack[i:i + w] in targets:
            return True
    return False


def directory_contains_window(directory, needle: bytes, window: int = 8) -> bool:
    """Scan every regular file under a directory for windows of needle."""
    root = Path(directory)
    for path in sorted(root.rglob("*")):
        if path.is_file() and contains_window(path.read_bytes(), needle, window):
            return True
    return False


# ----------------------------------------------------------- chained log

class ChainedLog:
    """Append-only record file with a rolling hash chain.

    Layout per record: 4-byte big-endian payload length, payload, then
    SHA-256(previous chain value || payload). The first record chains from
    32 zero bytes. Loading verifies every link; any flipped byte or
    truncation raises TamperDetectedError. Appends never touch existing
    bytes, so every prior byte range is preserved verbatim.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._payloads = []
        self._tail = _CHAIN_GENESIS
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        raw = self.path.read_bytes()
        off = 0
        tail = _CHAIN_GENESIS
        payloads = []
        while off < len(raw):
            if off + 4 > len(raw):
                raise TamperDetectedError(
                    "%s: truncated length field at byte %d" % (self.path, off))
            (n,) = struct.unpack_from(">I", raw, off)
            off += 4
            if off + n + _CHAIN_BYTES > len(raw):
                raise TamperDetectedError(
                    "%s: truncated record %d" % (self.path, len(payloads)))
            payload = raw[off:off + n]
            off += n
            link = raw[off:off + _CHAIN_BYTES]
            off += _CHAIN_BYTES
            expect = hashlib.sha256(tail + payload).digest()
            if link != expect:
                raise TamperDetectedError(
                    "%s: hash chain break at record %d" % (self.path, len(payloads)))
            payloads.append(payload)
            tail = link
        self._payloads = payloads
        self._tail = tail

    def append(self, payload: bytes) -> int:
        """Append one record; returns its index."""
        link = hashlib.sha256(self._tail + payload).digest()
        with open(self.path, "ab") as fh:
            fh.write(struct.pack(">I", len(payload)))
            fh.write(payload)
            fh.write(link)
            fh.flush()
            os.fsync(fh.fileno())
        self._payloads.append(payload)
        self._tail = link
        return len(self._payloads) - 1

    def payloads(self) -> tuple:
        return tuple(self._payloads)

    def __len__(self) -> int:
        return len(self._payloads)


# -------------------------------------------------------- verifier store

@dataclass(frozen=True)
class VerifierRecord:
    """One registration as the verifier saw it: the claimed receipt time
    t1, the tag, and the verifier's own receipt time t2."""

    secret_id: bytes
    t1: int
    tag: MacTag
    t2: int

    def __post_init__(self):
        if not 1 <= len(self.secret_id) <= 255:
            raise ConfigurationError("secret id must be 1..255 bytes")
        for label, t in (("t1", self.t1), ("t2", self.t2)):
            if not 0 <= t < (1 << 64):
                raise ConfigurationError("%s out of 64-bit range" % label)


def _encode_verifier_record(rec: VerifierRecord) -> bytes:
    tag_bytes = rec.tag.to_bytes()
    return (struct.pack(">B", len(rec.secret_id)) + rec.secret_id
            + struct.pack(">QQH", rec.t1, rec.t2, rec.tag.k) + tag_bytes)


def _decode_verifier_record(payload: bytes) -> VerifierRecord:
    try:
        idlen = payload[0]
        sid = payload[1:1 + idlen]
        t1, t2, k = struct.unpack_from(">QQH", payload, 1 + idlen)
        tag_raw = payload[1 + idlen + 18:]
        if len(sid) != idlen or len(tag_raw) != k // 8 or k % 8:
            raise ValueError
    except (IndexError, ValueError, struct.error):
        raise TamperDetectedError("malformed verifier record")
    return VerifierRecord(sid, t1, MacTag.from_bytes(tag_raw), t2)


class VerifierStore:
    """Append-only verifier log. Records are never rewritten; the file is
    a ChainedLog so any in-place edit is detected when reopened."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._log = ChainedLog(self.directory / "verifier.log")
        self._records = [_decode_verifier_record(p) for p in self._log.payloads()]

    def append(self, record: VerifierRecord) -> None:
        if self._records and record.t2 < self._records[-1].t2:
            raise ProtocolError(
                "receipt times must be non-decreasing: %d after %d"
                % (record.t2, self._records[-1].t2))
        self._log.append(_encode_verifier_record(record))
        self._records.append(record)

    def records(self) -> tuple:
        return tuple(self._records)

    def find(self, secret_id: bytes, t1: int) -> "VerifierRecord | None":
        for rec in self._records:
            if rec.secret_id == secret_id and rec.t1 == t1:
                return rec
        return None

    def __len__(self) -> int:
        return len(self._records)


# ------------------------------------------------------ calculator store

class CalculatorStore:
    """Per-secret persistence capped at id + timestamp + seed.

    One file per secret, named by the hex id, holding exactly the 8-byte
    receipt time followed by the raw seed bytes -- so the marginal bytes on
    disk per secret are len(id) + 8 + len(seed), nothing more. The hash
    scheme and tag width are store-wide configuration written once to a
    meta file, because every registration in a run shares them.
    """

    _META = "meta.bin"

    def __init__(self, directory, scheme: "MacScheme | None" = None,
                 k: "int | None" = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        meta_path = self.directory / self._META
        if meta_path.exists():
            raw = meta_path.read_bytes()
            if len(raw) != len(_CALC_MAGIC) + 3 or not raw.startswith(_CALC_MAGIC):
                raise TamperDetectedError("calculator meta file is malformed")
            stored_scheme = MacScheme.TOEPLITZ if raw[len(_CALC_MAGIC)] == 0 \
                else MacScheme.POLYEVAL
            (stored_k,) = struct.unpack_from(">H", raw, len(_CALC_MAGIC) + 1)
            if scheme is not None and scheme is not stored_scheme:
                raise ConfigurationError(
                    "store created with scheme %s" % stored_scheme.value)
            if k is not None and k != stored_k:
                raise ConfigurationError("store created with k = %d" % stored_k)
            self.scheme, self.k = stored_scheme, stored_k
        else:
            if scheme is None or k is None:
                raise ConfigurationError(
                    "a new calculator store needs scheme and k")
            self.scheme, self.k = scheme, k
            code = 0 if scheme is MacScheme.TOEPLITZ else 1
            erase_and_rewrite(meta_path,
                              _CALC_MAGIC + bytes([code]) + struct.pack(">H", k))

    def _record_path(self, secret_id: bytes) -> Path:
        if not 1 <= len(secret_id) <= 64:
            raise ConfigurationError("secret id must be 1..64 bytes")
        return self.directory / (secret_id.hex() + ".rec")

    def put(self, secret_id: bytes, t1: int, seed: MacSeed) -> None:
        if seed.scheme is not self.scheme or seed.k != self.k:
            raise ConfigurationError("seed does not match the store's scheme/k")
        if not 0 <= t1 < (1 << 64):
            raise ConfigurationError("t1 out of 64-bit range")
        path = self._record_path(secret_id)
        if path.exists():
            raise ProtocolError("secret %s already registered" % secret_id.hex())
        erase_and_rewrite(path, struct.pack(">Q", t1) + seed_to_bytes(seed))

    def get(self, secret_id: bytes):
        """Returns (t1, seed). The restored seed is recompute-only."""
        path = self._record_path(secret_id)
        if not path.exists():
            raise ProtocolError("no record for secret %s" % secret_id.hex())
        raw = path.read_bytes()
        if len(raw) < 8:
            raise TamperDetectedError("record %s is truncated" % path.name)
        (t1,) = struct.unpack_from(">Q", raw)
        return t1, seed_from_bytes(raw[8:], self.scheme, self.k)

    def remove(self, secret_id: bytes) -> None:
        """Erase the seed bytes and drop the record."""
        path = self._record_path(secret_id)
        if not path.exists():
            raise ProtocolError("no record for secret %s" % secret_id.hex())
        secure_erase(path)

    def ids(self) -> tuple:
        return tuple(sorted(
            bytes.fromhex(p.stem) for p in self.directory.glob("*.rec")))

    def record_bytes(self, secret_id: bytes) -> int:
        """Persistent bytes attributable to one secret: id + file content."""
        return len(secret_id) + self._record_path(secret_id).stat().st_size

    def __len__(self) -> int:
        return len(self.ids())


# ---------------------------------------------------------- holder store

def _encode_holder_state(holder: int, secrets: dict) -> bytes:
    out = bytearray(_HOLDER_MAGIC)
    out += struct.pack(">II", holder, len(secrets))
    for sid in sorted(secrets):
        ss = secrets[sid]
        field = ss.params.field
        width = field.byte_width
        q_bytes = field.q.to_bytes(width, "big")
        out += struct.pack(">B", len(sid)) + sid
        out += struct.pack(">BBH", ss.params.t_sh, ss.params.n_sh, width)
        out += q_bytes
        out += struct.pack(">I", len(ss.data_shares))
        for v in ss.data_shares:
            out += v.to_bytes(width, "big")
        out += ss.password_share.to_bytes(width, "big")
        out += struct.pack(">I", len(ss.tuples))
        for rid in sorted(ss.tuples):
            tup = ss.tuples[rid]
            out += struct.pack(">IB", rid, 1 if tup.consumed else 0)
            if not tup.consumed:
                out += struct.pack(">B", len(tup.r_shares))
                for v in tup.r_shares:
                    out += v.to_bytes(width, "big")
                for v in tup.z_shares:
                    out += v.to_bytes(width, "big")
    digest = hashlib.sha256(bytes(out)).digest()
    return bytes(out) + digest


class _StateReader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise TamperDetectedError("%s: truncated state" % self.path)
        piece = self.raw[self.off:self.off + n]
        self.off += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_holder_state(raw: bytes, path):
    if len(raw) < len(_HOLDER_MAGIC) + 32:
        raise TamperDetectedError("%s: state file too short" % path)
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise TamperDetectedError("%s: state digest mismatch" % path)
    rd = _StateReader(body, path)
    if rd.take(len(_HOLDER_MAGIC)) != _HOLDER_MAGIC:
        raise TamperDetectedError("%s: bad state magic" % path)
    holder, n_secrets = rd.unpack(">II")
    secrets = {}
    for _ in range(n_secrets):
        (idlen,) = rd.unpack(">B")
        sid = rd.take(idlen)
        t_sh, n_sh, width = rd.unpack(">BBH")
        q = int.from_bytes(rd.take(width), "big")
        # the digest above already proves these bytes are ours, so the
        # modulus does not need a fresh primality run on every load
        params = SpssParams(t_sh, n_sh, PrimeField(q, check_prime=False))
        (n_shares,) = rd.unpack(">I")
        data_shares = tuple(int.from_bytes(rd.take(width), "big")
                            for _ in range(n_shares))
        password_share = int.from_bytes(rd.take(width), "big")
        (n_tuples,) = rd.unpack(">I")
        tuples = {}
        for _ in range(n_tuples):
            rid, consumed = rd.unpack(">IB")
            if consumed:
                tuples[rid] = PrecomputedTuple(rid, (), (), True)
            else:
                (members,) = rd.unpack(">B")
                r_shares = tuple(int.from_bytes(rd.take(width), "big")
                                 for _ in range(members))
                z_shares = tuple(int.from_bytes(rd.take(width), "big")
                                 for _ in range(members))
                tuples[rid] = PrecomputedTuple(rid, r_shares, z_shares)
        secrets[sid] = HolderShareSet(holder, params, data_shares,
                                      password_share, tuples)
    if rd.off != len(body):
        raise TamperDetectedError("%s: trailing bytes in state" % path)
    return holder, secrets


def _consume_record(secret_id: bytes, round_ids) -> bytes:
    ids = tuple(round_ids)
    return (b"C" + struct.pack(">B", len(secret_id)) + secret_id
            + struct.pack(">I", len(ids))
            + b"".join(struct.pack(">I", r) for r in ids))


def _renew_record(secret_id: bytes, round_no: int) -> bytes:
    return (b"R" + struct.pack(">B", len(secret_id)) + secret_id
            + struct.pack(">I", round_no))


def _parse_journal_record(payload: bytes):
    try:
        kind = payload[0:1]
        idlen = payload[1]
        sid = payload[2:2 + idlen]
        if len(sid) != idlen or kind not in (b"C", b"R"):
            raise ValueError
        rest = payload[2 + idlen:]
        if kind == b"C":
            (count,) = struct.unpack_from(">I", rest)
            ids = struct.unpack_from(">%dI" % count, rest, 4)
            if len(rest) != 4 + 4 * count:
                raise ValueError
            return ("consume", sid, tuple(ids))
        (round_no,) = struct.unpack(">I", rest)
        return ("renew", sid, round_no)
    except (IndexError, ValueError, struct.error):
        raise TamperDetectedError("malformed journal record")


class HolderStore:
    """One holder's durable state: share sets plus the consumption journal.

    The journal is the source of truth for which masking tuples are spent.
    Spending order is journal first, then the state rewrite, then release
    to the caller; replaying the journal over a stale state (a crash
    between the first two steps) re-marks the claimed tuples consumed, so
    no tuple is ever issued twice. Renewal goes the other way around --
    the old shares are destroyed by the state rewrite before the journal
    notes the round -- because stale *new* shares are harmless while stale
    old ones defeat the renewal.
    """

    def __init__(self, directory, holder: "int | None" = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._state_path = self.directory / "state.bin"
        self._log = ChainedLog(self.directory / "journal.log")
        self._journaled = {}  # secret id -> set of consumed round ids
        if self._state_path.exists():
            self.holder, self._secrets = _decode_holder_state(
                self._state_path.read_bytes(), self._state_path)
            if holder is not None and holder != self.holder:
                raise ConfigurationError(
                    "store belongs to holder %d" % self.holder)
        else:
            if holder is None:
                raise ConfigurationError("a new holder store needs its index")
            self.holder = holder
            self._secrets = {}
        self._replay_journal()

    def _replay_journal(self) -> None:
        stale = False
        for payload in self._log.payloads():
            kind, sid, extra = _parse_journal_record(payload)
            if kind != "consume":
                continue
            self._journaled.setdefault(sid, set()).update(extra)
            if sid not in self._secrets:
                raise TamperDetectedError(
                    "journal names unknown secret %s" % sid.hex())
            tuples = self._secrets[sid].tuples
            for rid in extra:
                tup = tuples.get(rid)
                if tup is None:
                    tuples[rid] = PrecomputedTuple(rid, (), (), True)
                    stale = True
                elif not tup.consumed:
                    tup.discard()
                    stale = True
        if stale:
            self.save()

    # ------------------------------------------------------------ content

    def put_secret(self, secret_id: bytes, share_set: HolderShareSet) -> None:
        if share_set.holder != self.holder:
            raise ProtocolError(
                "share set for holder %d in holder %d's store"
                % (share_set.holder, self.holder))
        if not 1 <= len(secret_id) <= 255:
            raise ConfigurationError("secret id must be 1..255 bytes")
        if secret_id in self._secrets:
            raise ProtocolError("secret %s already stored" % secret_id.hex())
        self._secrets[secret_id] = share_set
        self.save()

    def get_secret(self, secret_id: bytes) -> HolderShareSet:
        try:
            return self._secrets[secret_id]
        except KeyError:
            raise ProtocolError("no shares for secret %s" % secret_id.hex())

    def secret_ids(self) -> tuple:
        return tuple(sorted(self._secrets))

    def save(self) -> None:
        """Erase-and-rewrite the state snapshot from the live share sets."""
        for sid, spent in self._journaled.items():
            if sid not in self._secrets:
                continue
            tuples = self._secrets[sid].tuples
            for rid in spent:
                tup = tuples.get(rid)
                if tup is not None and not tup.consumed:
                    raise ProtocolError(
                        "round %d of %s is journaled consumed but live"
                        % (rid, sid.hex()))
        erase_and_rewrite(self._state_path,
                          _encode_holder_state(self.holder, self._secrets))

    # -------------------------------------------------------- consumption

    def _journal_consume(self, secret_id: bytes, round_ids) -> None:
        ids = tuple(round_ids)
        self._log.append(_consume_record(secret_id, ids))
        self._journaled.setdefault(secret_id, set()).update(ids)

    def _spendable(self, secret_id: bytes, round_id: "int | None"):
        ss = self.get_secret(secret_id)
        if round_id is None:
            avail = ss.unconsumed_rounds()
            if not avail:
                raise PrecomputationExhaustedError(
                    "holder %d has no tuples left for %s"
                    % (self.holder, secret_id.hex()))
            round_id = avail[0]
        tup = ss.tuples.get(round_id)
        if tup is None or tup.consumed:
            raise PrecomputationExhaustedError(
                "holder %d cannot spend round %r" % (self.holder, round_id))
        return ss, tup

    def consume_tuple(self, secret_id: bytes,
                      round_id: "int | None" = None) -> PrecomputedTuple:
        """Spend one tuple (oldest first unless pinned) and return its
        values. The journal entry lands before the values leave."""
        ss, tup = self._spendable(secret_id, round_id)
        out = PrecomputedTuple(tup.round_id, tup.r_shares, tup.z_shares)
        self._journal_consume(secret_id, (tup.round_id,))
        tup.discard()
        self.save()
        return out

    def respond(self, secret_id: bytes, request):
        """Journal the masking rounds a reconstruction request will spend,
        build the masked response, persist, return it."""
        ss = self.get_secret(secret_id)
        if self.holder not in request.subset:
            raise ProtocolError(
                "holder %d asked to respond outside the subset" % self.holder)
        needed = ss.block_count
        if request.tuple_ids is not None:
            ids = tuple(request.tuple_ids)
        else:
            ids = tuple(ss.unconsumed_rounds()[:needed])
        if len(ids) != needed:
            raise PrecomputationExhaustedError(
                "holder %d has %d spendable rounds, needs %d"
                % (self.holder, len(ids), needed))
        for rid in ids:
            tup = ss.tuples.get(rid)
            if tup is None or tup.consumed:
                raise PrecomputationExhaustedError(
                    "holder %d cannot spend round %r" % (self.holder, rid))
        self._journal_consume(secret_id, ids)
        response = holder_respond(ss, request)
        self.save()
        return response

    def consumed_rounds(self, secret_id: bytes) -> tuple:
        ss = self.get_secret(secret_id)
        return tuple(sorted(r for r, t in ss.tuples.items() if t.consumed))

    # ------------------------------------------------------------ renewal

    def apply_renewal(self, secret_id: bytes, new_data_shares,
                      round_no: int,
                      new_password_share: "int | None" = None) -> None:
        """Swap in renewed shares; the rewrite destroys the old values in
        the state file before the journal records the round."""
        ss = self.get_secret(secret_id)
        shares = tuple(new_data_shares)
        if len(shares) != len(ss.data_shares):
            raise ProtocolError(
                "renewal carries %d shares, secret has %d"
                % (len(shares), len(ss.data_shares)))
        ss.data_shares = shares
        if new_password_share is not None:
            ss.password_share = new_password_share
        self.save()
        self._log.append(_renew_record(secret_id, round_no))

    def renewal_rounds(self, secret_id: bytes) -> tuple:
        out = []
        for payload in self._log.payloads():
            kind, sid, extra = _parse_journal_record(payload)
            if kind == "renew" and sid == secret_id:
                out.append(extra)
        return tuple(out)
