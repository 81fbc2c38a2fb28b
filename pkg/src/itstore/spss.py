"""Password-authenticated secret sharing with masked reconstruction.

The data is cut into field-sized blocks D_1..D_l (the leftmost chunk of
the byte string is D_l, the rightmost is D_1) and an authenticator block

    D_{l+1} = D_l P^l + ... + D_1 P

is appended, where P is the password mapped into the field. Every block is
Shamir-shared at degree t-1; the password is shared at degree t-2, one
degree lower, so that the password-difference product below still
interpolates with t points.

Reconstruction never moves raw shares. A requester shares its password
attempt P' at degree t-2 and each contacted holder j answers, per block,

    F_ji = (f_P(j) - f_P'(j)) * R + Z + f_Di(j)

with R the sum of its shares of fresh random values contributed by the
holders in the subset, and Z the sum of shares of zero. With the right
password the difference vanishes and F_i(0) = D_i; with a wrong one every
block comes back uniformly offset by (P - P') * R_i for an unknown fresh
R_i, and the authenticator equation

    F_{l+1}(0) == sum_i F_i(0) P'^i

accepts with probability 1/q at most (one linear constraint on the fresh
offsets). The (R, Z) masking tuples come from precomputation rounds and
are consumed by exactly one response each.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .errors import (
    ConfigurationError,
    ImproperRequestError,
    PasswordFailureError,
    PrecomputationExhaustedError,
    ProtocolError,
    ReconstructionAbortError,
)
from .field import FieldElement, PrimeField, random_polynomial, zero_coefficients
from .mac import split_blocks

__all__ = [
    "SpssParams",
    "RegisteredSecret",
    "PrecomputedTuple",
    "HolderShareSet",
    "SpssRequest",
    "MaskedResponse",
    "password_to_element",
    "data_block_count",
    "mac_block_value",
    "spss_register",
    "precompute_round",
    "spss_request",
    "holder_respond",
    "spss_recover",
    "reassemble_blocks",
]

DEFAULT_FIELD_EXPONENT = 127


@dataclass(frozen=True)
class SpssParams:
    """Threshold layout: t_sh-of-n_sh sharing over the given prime field."""

    t_sh: int = 3
    n_sh: int = 4
    field: PrimeField = dc_field(
        default_factory=lambda: PrimeField.mersenne(DEFAULT_FIELD_EXPONENT))

    def __post_init__(self):
        if not 1 < self.t_sh <= self.n_sh:
            raise ConfigurationError("need 1 < t_sh <= n_sh")
        # The response F = (f_P - f_P')*R + Z + f_D has degree
        # 2*(t_sh - 2) in the password product term; t_sh points can only
        # interpolate it while that stays at or below t_sh - 1, so the
        # masking algebra caps the threshold at 3.
        if 2 * (self.t_sh - 2) > self.t_sh - 1:
            raise ConfigurationError("masked reconstruction requires t_sh <= 3")

    @property
    def block_bits(self) -> int:
        return self.field.block_bits

    @property
    def data_degree(self) -> int:
        return self.t_sh - 1

    @property
    def password_degree(self) -> int:
        return self.t_sh - 2

    @property
    def holder_indices(self) -> range:
        return range(1, self.n_sh + 1)


@dataclass(frozen=True)
class RegisteredSecret:
    """Owner-side registration record.

    blocks[i-1] holds D_i; blocks and mac_block are secret material and are
    returned to the registering caller only, never to a holder. byte_length
    is cleartext metadata needed to strip block padding on recovery.
    """

    blocks: tuple
    mac_block: int
    t1: int
    byte_length: int

    @property
    def block_count(self) -> int:
        return len(self.blocks)


@dataclass
class PrecomputedTuple:
    """One holder's slice of a precomputation round.

    r_shares[m-1] is this holder's share of the random value contributed by
    holder m; z_shares[m-1] its share of holder m's sharing of zero.
    """

    round_id: int
    r_shares: tuple
    z_shares: tuple
    consumed: bool = False

    def discard(self):
        self.consumed = True
        self.r_shares = ()
        self.z_shares = ()


@dataclass
class HolderShareSet:
    """Everything holder j keeps for one registered secret."""

    holder: int
    params: SpssParams
    data_shares: tuple  # f_{D_i}(j) for i = 1..l+1, index order
    password_share: int  # f_P(j)
    tuples: dict = dc_field(default_factory=dict)  # round_id -> PrecomputedTuple

    @property
    def block_count(self) -> int:
        return len(self.data_shares)

    def unconsumed_rounds(self):
        return sorted(r for r, tup in self.tuples.items() if not tup.consumed)


@dataclass(frozen=True)
class SpssRequest:
    """What one holder receives when a reconstruction starts."""

    subset: tuple
    password_share: int  # f_{P'}(j)
    tuple_ids: "tuple | None" = None


@dataclass(frozen=True)
class MaskedResponse:
    holder: int
    values: tuple  # F_{j,1}..F_{j,l+1}


def password_to_element(raw: bytes, field: PrimeField) -> int:
    """Map password bytes to a nonzero field element (big-endian, mod q).

    Zero is rejected: a zero password would null every authenticator term
    and make the check pass for arbitrary recovered garbage.
    """
    value = int.from_bytes(raw, "big") % field.q
    if value == 0:
        raise ConfigurationError("password reduces to zero in the field")
    return value


def data_block_count(byte_length: int, params: SpssParams) -> int:
    """Number of data blocks l for a payload of byte_length bytes."""
    return -(-byte_length * 8 // params.block_bits)


def mac_block_value(blocks_by_index, password: int, field: PrimeField) -> int:
    """D_{l+1} = sum_{i=1..l} D_i P^i, blocks given in index order."""
    acc = 0
    for b in reversed(blocks_by_index):  # D_l first: ((D_l P + D_{l-1}) P + ...) P
        acc = field.mul(field.add(acc, b), password)
    return acc


def spss_register(data: bytes, password: int, params: SpssParams,
                  randomness, t1: int = 0):
    """Split, authenticate and share a byte string.

    Returns ({holder j: HolderShareSet}, RegisteredSecret). The share sets
    start with no precomputed tuples; run precompute_round before
    reconstructing.
    """
    if not data:
        raise ConfigurationError("cannot register empty data")
    field = params.field
    if not 0 < password < field.q:
        raise ConfigurationError("password must be a nonzero field element")

    wire_blocks, _ = split_blocks(data, params.block_bits)
    blocks = list(reversed(wire_blocks))  # blocks[i-1] = D_i
    mac_block = mac_block_value(blocks, password, field)

    share_rows = {j: [] for j in params.holder_indices}
    for value in (*blocks, mac_block):
        poly = random_polynomial(params.data_degree, FieldElement(value, field),
                                 randomness)
        for j in params.holder_indices:
            share_rows[j].append(poly.evaluate(j))
    f_p = random_polynomial(params.password_degree, FieldElement(password, field),
                            randomness)

    holders = {
        j: HolderShareSet(j, params, tuple(share_rows[j]), f_p.evaluate(j))
        for j in params.holder_indices
    }
    secret = RegisteredSecret(tuple(blocks), mac_block, t1, len(data))
    return holders, secret


def precompute_round(holders: dict, randomness) -> int:
    """One masking round: every holder contributes a random sharing and a
    zero sharing; every holder's tuple stock grows by one.

    randomness is either a single RandomSource or {holder: RandomSource},
    matching how the simulation gives each holder its own entropy pool.
    Returns the new round id (uniform across holders by construction).
    """
    if not holders:
        raise ConfigurationError("no holders to run a round over")
    sets = sorted(holders.values(), key=lambda s: s.holder)
    params = sets[0].params
    field = params.field
    if [s.holder for s in sets] != list(params.holder_indices):
        raise ProtocolError("precomputation requires every holder present")
    if any(k != s.holder for k, s in holders.items()):
        raise ProtocolError("holder map keys must equal holder indices")
    existing = {max(s.tuples) + 1 if s.tuples else 0 for s in sets}
    if len(existing) != 1:
        raise ProtocolError("holders disagree on the next round id")
    round_id = existing.pop()

    def source_for(j):
        return randomness[j] if isinstance(randomness, dict) else randomness

    r_rows = {j: [] for j in holders}
    z_rows = {j: [] for j in holders}
    for contributor in sets:
        src = source_for(contributor.holder)
        r_poly = random_polynomial(params.password_degree,
                                   field.random_element(src), src)
        z_poly = random_polynomial(params.data_degree,
                                   FieldElement(0, field), src)
        for j in holders:
            r_rows[j].append(r_poly.evaluate(j))
            z_rows[j].append(z_poly.evaluate(j))

    for j, share_set in holders.items():
        share_set.tuples[round_id] = PrecomputedTuple(
            round_id, tuple(r_rows[j]), tuple(z_rows[j]))
    return round_id


def spss_request(password_attempt: int, subset, params: SpssParams,
                 randomness, tuple_ids=None) -> dict:
    """Start a reconstruction: share the password attempt toward the chosen
    holders. Returns {holder j: SpssRequest} for j in the subset.

    tuple_ids, when given, pins which precomputation rounds the holders
    must spend (one id per block, the same ids for every holder); without
    it each holder takes its oldest unconsumed rounds, which is only safe
    while every reconstruction contacts the same subset.
    """
    asked = tuple(subset)
    chosen = tuple(sorted(set(asked)))
    if len(chosen) != params.t_sh or len(chosen) != len(asked):
        raise ImproperRequestError(
            "reconstruction needs exactly %d distinct holders" % params.t_sh)
    if any(j not in params.holder_indices for j in chosen):
        raise ImproperRequestError("holder index out of range")
    field = params.field
    attempt = password_attempt % field.q
    f_pp = random_polynomial(params.password_degree, FieldElement(attempt, field),
                             randomness)
    ids = tuple(tuple_ids) if tuple_ids is not None else None
    return {j: SpssRequest(chosen, f_pp.evaluate(j), ids) for j in chosen}


def holder_respond(share_set: HolderShareSet, request: SpssRequest) -> MaskedResponse:
    """Build the masked response for one holder, spending one precomputed
    tuple per block. The password difference, R and Z exist only inside
    this call; spent tuples are blanked in place.
    """
    j = share_set.holder
    if j not in request.subset:
        raise ImproperRequestError("holder %d is not in the requested subset" % j)
    params = share_set.params
    field = params.field
    needed = share_set.block_count

    if request.tuple_ids is not None:
        ids = list(request.tuple_ids)
        if len(ids) != needed:
            raise ImproperRequestError(
                "request pins %d tuples, %d blocks to mask" % (len(ids), needed))
    else:
        ids = share_set.unconsumed_rounds()[:needed]
    if len(ids) < needed:
        raise PrecomputationExhaustedError(
            "holder %d has %d unconsumed tuples, needs %d" % (j, len(ids), needed))

    tuples = []
    for rid in ids:
        tup = share_set.tuples.get(rid)
        if tup is None or tup.consumed:
            raise PrecomputationExhaustedError(
                "holder %d cannot spend round %r" % (j, rid))
        tuples.append(tup)

    members = [m - 1 for m in request.subset]
    diff = field.sub(share_set.password_share, request.password_share)
    values = []
    for data_share, tup in zip(share_set.data_shares, tuples):
        r = 0
        z = 0
        for m in members:
            r = field.add(r, tup.r_shares[m])
            z = field.add(z, tup.z_shares[m])
        values.append(field.add(field.add(field.mul(diff, r), z), data_share))
        tup.discard()
    return MaskedResponse(j, tuple(values))


def spss_recover(responses, password_attempt: int, params: SpssParams,
                 byte_length: "int | None" = None):
    """Interpolate the masked responses and run the authenticator check.

    Returns the data blocks in index order, or the original bytes when
    byte_length is given. Raises PasswordFailureError when the check
    fails; no block values leave this function in that case.
    """
    resp = list(responses)
    indices = [r.holder for r in resp]
    if len(resp) != params.t_sh or len(set(indices)) != len(indices):
        raise ReconstructionAbortError(
            "need %d responses from distinct holders" % params.t_sh)
    lengths = {len(r.values) for r in resp}
    if len(lengths) != 1:
        raise ReconstructionAbortError("holders disagree on block count")
    total = lengths.pop()
    if total < 2:
        raise ReconstructionAbortError("responses lack an authenticator block")

    field = params.field
    weights = zero_coefficients(indices, field)
    recovered = []
    for i in range(total):
        acc = 0
        for w, r in zip(weights, resp):
            acc = field.add(acc, field.mul(w, r.values[i]))
        recovered.append(acc)

    blocks, mac = recovered[:-1], recovered[-1]
    attempt = password_attempt % field.q
    if mac_block_value(blocks, attempt, field) != mac:
        raise PasswordFailureError("authenticator mismatch: wrong password "
                                   "or corrupted responses")
    # Registered blocks are always narrower than the field, so an
    # out-of-range value proves the recovery is garbage even when it
    # slipped past the authenticator.
    if any(b >> params.block_bits for b in blocks):
        raise PasswordFailureError("recovered blocks exceed the payload "
                                   "alphabet: wrong password or corrupted "
                                   "responses")
    blocks = tuple(blocks)
    if byte_length is None:
        return blocks
    return reassemble_blocks(blocks, byte_length, params)


def reassemble_blocks(blocks_by_index, byte_length: int, params: SpssParams) -> bytes:
    """Inverse of the register-time split: D_l..D_1 back to bytes."""
    blocks = tuple(blocks_by_index)
    width = params.block_bits
    big = 0
    for b in reversed(blocks):  # wire order, D_l leftmost
        big = (big << width) | b
    pad = len(blocks) * width - byte_length * 8
    if pad < 0:
        raise ConfigurationError("byte_length exceeds reconstructed payload")
    return (big >> pad).to_bytes(byte_length, "big")
