"""Verifiable share renewal with Pedersen commitments.

Periodically every holder i contributes a pair of polynomials P_i1, P_i2
of the track's degree with zero constant term, commits to the coefficient
pairs as

    eps_ij = g^{a_ij} h^{b_ij} mod p        (j = 1 .. degree)

and sends each other holder c the evaluation pair (P_i1(c), P_i2(c)).
Recipient c checks every pair against the public commitments,

    g^{s1} h^{s2} == prod_j eps_ij^{c^j}  (mod p, exponents mod q),

and on unanimous acceptance every holder folds all contributions into its
share: new(i) = old(i) + sum_d (P_d1(i) + P_d2(i)) mod q. The zero
constant terms leave the shared secret untouched while re-randomizing all
shares, so leaked pre-renewal shares stop combining with post-renewal
ones. Any failed check aborts the round with the sender accused and no
share changed.

Shares live in F_q and q must divide p - 1 so the commitments sit in the
order-q subgroup mod p. Binding rests on nobody knowing log_g h, which is
why the shipped groups derive g and h from tiny public constants by
cofactor exponentiation. Transport concerns (one-time-pad wrapping of the
evaluation pairs, tags on broadcasts) belong to the protocol layer; this
module works on the cleartext values.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .errors import ConfigurationError, ProtocolError
from .field import PrimeField, is_probable_prime, mod_exp, random_polynomial

__all__ = [
    "RenewalGroupConfig",
    "RenewalPacket",
    "RenewalOutcome",
    "Accusation",
    "derive_subgroup_element",
    "gen_renewal",
    "verify_renewal_share",
    "apply_renewal",
    "renewal_round",
    "TOY_GROUP",
    "MERSENNE127_GROUP",
    "RFC5114_GROUP",
    "group_by_name",
]


@dataclass(frozen=True)
class RenewalGroupConfig:
    """Commitment group: order-q subgroup of the integers mod p.

    validate() is not called on import (the 2048-bit primality checks are
    not free); protocol setup and the test suite both run it.
    """

    p: int
    q: int
    g: int
    h: int
    name: str = ""

    def validate(self) -> "RenewalGroupConfig":
        if (self.p - 1) % self.q:
            raise ConfigurationError("q must divide p - 1")
        if not is_probable_prime(self.p):
            raise ConfigurationError("commitment modulus p is not prime")
        if not is_probable_prime(self.q):
            raise ConfigurationError("share modulus q is not prime")
        for label, x in (("g", self.g), ("h", self.h)):
            if not 1 < x < self.p:
                raise ConfigurationError("%s outside (1, p)" % label)
            if mod_exp(x, self.q, self.p) != 1:
                raise ConfigurationError("%s is not in the order-q subgroup" % label)
        if self.g == self.h:
            raise ConfigurationError("g and h must differ")
        return self

    def commit(self, a: int, b: int) -> int:
        """g^a h^b mod p with exponents reduced into the subgroup order."""
        return (mod_exp(self.g, a % self.q, self.p)
                * mod_exp(self.h, b % self.q, self.p)) % self.p

    def share_field(self) -> PrimeField:
        return PrimeField(self.q, check_prime=False)


def derive_subgroup_element(x: int, p: int, q: int) -> int:
    """x^((p-1)/q) mod p: lands in the order-q subgroup, log unknown."""
    return mod_exp(x, (p - 1) // q, p)


# Toy group for exhaustive correctness tests; logs here are trivially
# computable and that is fine, binding is only exercised at the bigger sizes.
TOY_GROUP = RenewalGroupConfig(p=23, q=11, g=2, h=8, name="toy")

# Companion group for the default 2^127 - 1 share field: p = c*q + 1 with
# c = 2^129 + 62 is prime, so those shares renew without leaving their
# field. g = 2^((p-1)/q), h = 3^((p-1)/q) (first generators clear of 1).
MERSENNE127_GROUP = RenewalGroupConfig(
    p=0x10000000000000000000000000000001cffffffffffffffffffffffffffffffc3,
    q=(1 << 127) - 1,
    g=0x2ec54e29df5fcc039deb3d68ee51e7550957746d2a842bc51d73ccb7ace3f10f,
    h=0xc19bf858b26d81edf57abc4949f97181ac55d2c08fc4beab90f681e5bb595230,
    name="mersenne127",
)

# 2048-bit MODP group with a 256-bit prime-order subgroup, from the
# published RFC 5114 data sets. The listed generator there equals
# 2^((p-1)/q) mod p, so h is derived the same way from the next public
# constant, 3 (tests re-derive both).
_RFC5114_P = int(
    "87A8E61DB4B6663CFFBBD19C651959998CEEF608660DD0F25D2CEED4435E3B00"
    "E00DF8F1D61957D4FAF7DF4561B2AA3016C3D91134096FAA3BF4296D830E9A7C"
    "209E0C6497517ABD5A8A9D306BCF67ED91F9E6725B4758C022E0B1EF4275BF7B"
    "6C5BFC11D45F9088B941F54EB1E59BB8BC39A0BF12307F5C4FDB70C581B23F76"
    "B63ACAE1CAA6B7902D52526735488A0EF13C6D9A51BFA4AB3AD8347796524D8E"
    "F6A167B5A41825D967E144E5140564251CCACB83E6B486F6B3CA3F7971506026"
    "C0B857F689962856DED4010ABD0BE621C3A3960A54E710C375F26375D7014103"
    "A4B54330C198AF126116D2276E11715F693877FAD7EF09CADB094AE91E1A1597", 16)
_RFC5114_Q = int(
    "8CF83642A709A097B447997640129DA299B1A47D1EB3750BA308B0FE64F5FBD3", 16)
_RFC5114_G = int(
    "3FB32C9B73134D0B2E77506660EDBD484CA7B18F21EF205407F4793A1A0BA125"
    "10DBC15077BE463FFF4FED4AAC0BB555BE3A6C1B0C6B47B1BC3773BF7E8C6F62"
    "901228F8C28CBB18A55AE31341000A650196F931C77A57F2DDF463E5E9EC144B"
    "777DE62AAAB8A8628AC376D282D6ED3864E67982428EBC831D14348F6F2F9193"
    "B5045AF2767164E1DFC967C1FB3F2E55A4BD1BFFE83B9C80D052B985D182EA0A"
    "DB2A3B7313D3FE14C8484B1E052588B9B7D2BBD2DF016199ECD06E1557CD0915"
    "B3353BBB64E0EC377FD028370DF92B52C7891428CDC67EB6184B523D1DB246C3"
    "2F63078490F00EF8D647D148D47954515E2327CFEF98C582664B4C0F6CC41659", 16)
_RFC5114_H = int(
    "410b4296fd6c7be3b00e0684e19bceb7286f980c034a0cf84b3855f7489fe25b"
    "f3f60e3bfac5b9cdf7c9fe6ddf70022af4c4b6966f12e9fbdd3c5d0f849016b2"
    "88920bc0fd23795418c8f8a3baa21acd45ad7bbb1a4146d0917eea2ae4a42866"
    "b38ce6380a93aa70211f34171d0f6a7cec6773b736fef7646d8c1d6b61e720ab"
    "a1e191481b42d0eb4909b18d8bdb6605b1d2522cd8f56f7f0cbbcfe129291f88"
    "8bf24e8feb651de759450c4b83a8c5b4b0c8eea0642355dc788b6a9458ef597f"
    "3a3476d5871aa5485c195609c13ac23d5275d2fc7eff8ade9b2b3344e9cd77cf"
    "15f8e11c667856f9a7ca7db9fa216b744dbc72ffcb6ba6d3102092df231d1b24", 16)
RFC5114_GROUP = RenewalGroupConfig(
    p=_RFC5114_P, q=_RFC5114_Q, g=_RFC5114_G, h=_RFC5114_H, name="rfc5114")

_GROUPS = {g.name: g for g in (TOY_GROUP, MERSENNE127_GROUP, RFC5114_GROUP)}


def group_by_name(name: str) -> RenewalGroupConfig:
    try:
        return _GROUPS[name]
    except KeyError:
        raise ConfigurationError("unknown renewal group %r (have: %s)"
                                 % (name, ", ".join(sorted(_GROUPS))))


@dataclass
class RenewalPacket:
    """One holder's contribution to a renewal round for one share track."""

    sender: int
    round_no: int
    commitments: tuple  # eps_{sender,1} .. eps_{sender,degree}
    share_pairs: dict  # recipient -> (P_1(recipient), P_2(recipient))
    tag: object = None  # transport authentication, attached by the envelope layer

    @property
    def degree(self) -> int:
        return len(self.commitments)


@dataclass(frozen=True)
class Accusation:
    accuser: int
    accused: int
    reason: str = "commitment check failed"


@dataclass(frozen=True)
class RenewalOutcome:
    accepted: bool
    accusations: tuple = ()
    new_shares: "dict | None" = None


def gen_renewal(sender: int, recipients, degree: int,
                config: RenewalGroupConfig, randomness,
                round_no: int = 0) -> RenewalPacket:
    """Build one holder's packet: two zero-rooted polynomials, coefficient
    commitments, and an evaluation pair per recipient."""
    if degree < 1:
        raise ConfigurationError("renewal needs polynomial degree >= 1")
    field = config.share_field()
    zero = field.element(0)
    p1 = random_polynomial(degree, zero, randomness)
    p2 = random_polynomial(degree, zero, randomness)
    commitments = tuple(config.commit(p1.coeffs[j], p2.coeffs[j])
                        for j in range(1, degree + 1))
    pairs = {c: (p1.evaluate(c), p2.evaluate(c)) for c in recipients}
    return RenewalPacket(sender, round_no, commitments, pairs)


def verify_renewal_share(recipient: int, packet: RenewalPacket,
                         pair, config: RenewalGroupConfig) -> bool:
    """Check one evaluation pair against the sender's commitments."""
    if recipient < 1:
        raise ConfigurationError("recipient index must be >= 1")
    s1, s2 = pair
    for eps in packet.commitments:
        if not 0 < eps < config.p or mod_exp(eps, config.q, config.p) != 1:
            return False
    lhs = config.commit(s1, s2)
    rhs = 1
    exponent = 1
    for eps in packet.commitments:
        exponent = exponent * recipient % config.q
        rhs = rhs * mod_exp(eps, exponent, config.p) % config.p
    return lhs == rhs


def apply_renewal(share: int, holder: int, packets,
                  config: RenewalGroupConfig) -> int:
    """new(i) = old(i) + sum over packets of (P_1(i) + P_2(i)) mod q."""
    total = share % config.q
    for packet in packets:
        try:
            s1, s2 = packet.share_pairs[holder]
        except KeyError:
            raise ProtocolError("packet from %d carries no pair for holder %d"
                                % (packet.sender, holder))
        total = (total + s1 + s2) % config.q
    return total


def renewal_round(shares: dict, degree: int, config: RenewalGroupConfig,
                  randomness=None, round_no: int = 0,
                  packets=None) -> RenewalOutcome:
    """One synchronous renewal round over a single share track.

    shares maps holder index to its current share in F_q. Packets are
    normally generated here (randomness may be one source or a per-holder
    dict); pre-built ones can be injected for fault testing. Every holder
    verifies every other holder's pair; one failure aborts the round with
    accusations and no share budges. An empty holder set is a no-op.
    """
    holders = sorted(shares)
    if not holders:
        return RenewalOutcome(accepted=True, new_shares={})
    if packets is None:
        if randomness is None:
            raise ConfigurationError("renewal_round needs randomness or packets")

        def source_for(j):
            return randomness[j] if isinstance(randomness, dict) else randomness

        packets = [gen_renewal(j, holders, degree, config, source_for(j),
                               round_no) for j in holders]
    accusations = []
    for packet in packets:
        for c in holders:
            if c == packet.sender:
                continue
            pair = packet.share_pairs.get(c)
            if pair is None or not verify_renewal_share(c, packet, pair, config):
                accusations.append(Accusation(c, packet.sender))
    if accusations:
        return RenewalOutcome(accepted=False, accusations=tuple(accusations))
    new_shares = {j: apply_renewal(shares[j], j, packets, config)
                  for j in holders}
    return RenewalOutcome(accepted=True, new_shares=new_shares)
