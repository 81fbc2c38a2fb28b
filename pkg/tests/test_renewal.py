"""Tests for verifiable share renewal.

Frozen values are hand-worked in the toy group p=23, q=11, g=2, h=8.
The commitment oracle multiplies out g^a h^b by repeated multiplication,
independent of mod_exp.
"""

import itertools
import random

import pytest

from itstore.entropy import SeededEntropy
from itstore.errors import ConfigurationError, ProtocolError
from itstore.field import PrimeField, interpolate_at_zero, random_polynomial
from itstore.renewal import (
    MERSENNE127_GROUP,
    RFC5114_GROUP,
    TOY_GROUP,
    RenewalGroupConfig,
    RenewalPacket,
    apply_renewal,
    derive_subgroup_element,
    gen_renewal,
    group_by_name,
    renewal_round,
    verify_renewal_share,
)


def commit_oracle(group, a, b):
    """g^a h^b by repeated multiplication (toy-sized exponents only)."""
    out = 1
    for _ in range(a % group.q):
        out = out * group.g % group.p
    for _ in range(b % group.q):
        out = out * group.h % group.p
    return out


def make_shares(secret, degree, field, rng, holders=(1, 2, 3, 4)):
    poly = random_polynomial(degree, field.element(secret), rng)
    return {j: poly.evaluate(j) for j in holders}


F11 = PrimeField(11)


# ------------------------------------------------------------------- groups

def test_all_shipped_groups_validate():
    for group in (TOY_GROUP, MERSENNE127_GROUP, RFC5114_GROUP):
        group.validate()
    assert group_by_name("toy") is TOY_GROUP
    with pytest.raises(ConfigurationError):
        group_by_name("nope")


def test_group_validation_rejects_bad_configs():
    with pytest.raises(ConfigurationError):
        RenewalGroupConfig(p=23, q=7, g=2, h=8).validate()  # 7 does not divide 22
    with pytest.raises(ConfigurationError):
        RenewalGroupConfig(p=25, q=11, g=2, h=8).validate()  # p composite
    with pytest.raises(ConfigurationError):
        RenewalGroupConfig(p=23, q=11, g=5, h=8).validate()  # 5 outside subgroup
    with pytest.raises(ConfigurationError):
        RenewalGroupConfig(p=23, q=11, g=2, h=2).validate()  # g == h
    with pytest.raises(ConfigurationError):
        RenewalGroupConfig(p=23, q=11, g=1, h=8).validate()  # identity


def test_shipped_groups_derive_from_public_constants():
    # both large groups take g and h as cofactor powers of 2 and 3
    for group in (MERSENNE127_GROUP, RFC5114_GROUP):
        assert group.g == derive_subgroup_element(2, group.p, group.q)
        assert group.h == derive_subgroup_element(3, group.p, group.q)
    assert MERSENNE127_GROUP.q == (1 << 127) - 1
    assert MERSENNE127_GROUP.p == ((1 << 129) + 62) * MERSENNE127_GROUP.q + 1


# -------------------------------------------------------------- commitments

def test_commit_frozen_toy():
    # a = 5, b = 7: 2^5 * 8^7 mod 23 = 16
    assert commit_oracle(TOY_GROUP, 5, 7) == 16
    assert TOY_GROUP.commit(5, 7) == 16
    assert TOY_GROUP.commit(0, 0) == 1


def test_commit_matches_oracle_randomized():
    rng = random.Random(0xc0)
    for _ in range(40):
        a, b = rng.randrange(22), rng.randrange(22)
        assert TOY_GROUP.commit(a, b) == commit_oracle(TOY_GROUP, a, b)


def test_verify_frozen_toy():
    # sender polynomials P1 = 5x, P2 = 7x; recipient 3 gets (4, 10);
    # check: 2^4 * 8^10 = 2 = 16^3 mod 23
    packet = RenewalPacket(sender=1, round_no=0, commitments=(16,),
                           share_pairs={3: (4, 10)})
    assert verify_renewal_share(3, packet, (4, 10), TOY_GROUP)
    assert not verify_renewal_share(3, packet, (5, 10), TOY_GROUP)
    assert not verify_renewal_share(3, packet, (4, 9), TOY_GROUP)


def test_verify_all_zero_polynomials():
    packet = RenewalPacket(sender=2, round_no=0, commitments=(1, 1),
                           share_pairs={1: (0, 0)})
    assert verify_renewal_share(1, packet, (0, 0), TOY_GROUP)


def test_verify_rejects_elements_outside_subgroup():
    # 5 has order 22 mod 23, not 11
    packet = RenewalPacket(sender=1, round_no=0, commitments=(5,),
                           share_pairs={2: (0, 0)})
    assert not verify_renewal_share(2, packet, (0, 0), TOY_GROUP)


def test_single_coordinate_perturbations_all_rejected():
    # every (s1 + d, s2) and (s1, s2 + d) with d != 0 fails, for every
    # recipient: exhaustive at toy scale
    rng = SeededEntropy(b"perturb")
    packet = gen_renewal(1, (1, 2, 3, 4), 2, TOY_GROUP, rng)
    for c in (1, 2, 3, 4):
        s1, s2 = packet.share_pairs[c]
        assert verify_renewal_share(c, packet, (s1, s2), TOY_GROUP)
        for d in range(1, 11):
            assert not verify_renewal_share(
                c, packet, ((s1 + d) % 11, s2), TOY_GROUP)
            assert not verify_renewal_share(
                c, packet, (s1, (s2 + d) % 11), TOY_GROUP)


def test_collinear_equivocation_is_the_known_binding_limit():
    # In the toy group log_g h = 3 is public knowledge, and any pair on
    # the line (s1 + 3t, s2 - t) opens the same commitment. Verification
    # accepting it is the Pedersen algebra working as designed; binding
    # comes from that log being unknown in the real groups.
    rng = SeededEntropy(b"collinear")
    packet = gen_renewal(1, (2,), 1, TOY_GROUP, rng)
    s1, s2 = packet.share_pairs[2]
    forged = ((s1 + 3) % 11, (s2 - 1) % 11)
    assert verify_renewal_share(2, packet, forged, TOY_GROUP)


# ------------------------------------------------------------ packet shapes

def test_gen_renewal_shape_and_completeness():
    rng = SeededEntropy(b"shape")
    for group in (TOY_GROUP, MERSENNE127_GROUP):
        for degree in (1, 2):
            packet = gen_renewal(7, (1, 2, 3, 4), degree, group, rng)
            assert packet.sender == 7
            assert len(packet.commitments) == degree
            assert set(packet.share_pairs) == {1, 2, 3, 4}
            for c in (1, 2, 3, 4):
                assert verify_renewal_share(
                    c, packet, packet.share_pairs[c], group)
    with pytest.raises(ConfigurationError):
        gen_renewal(1, (1, 2), 0, TOY_GROUP, rng)


def test_gen_renewal_is_zero_rooted():
    # the contribution polynomials interpolate to 0 at x = 0
    rng = SeededEntropy(b"zero-root")
    packet = gen_renewal(1, (1, 2, 3), 2, TOY_GROUP, rng)
    for part in (0, 1):
        pts = [(c, packet.share_pairs[c][part]) for c in (1, 2, 3)]
        assert interpolate_at_zero(pts, F11) == 0


def test_rfc_group_verify_completeness():
    rng = SeededEntropy(b"rfc-run")
    packet = gen_renewal(1, (1, 2, 3), 2, RFC5114_GROUP, rng)
    for c in (1, 2, 3):
        assert verify_renewal_share(
            c, packet, packet.share_pairs[c], RFC5114_GROUP)


# -------------------------------------------------------------------- rounds

def test_honest_round_preserves_secret_randomized():
    rng = SeededEntropy(b"invariance")
    picks = random.Random(41)
    for _ in range(100):
        secret = picks.randrange(11)
        shares = make_shares(secret, 2, F11, rng)
        outcome = renewal_round(shares, 2, TOY_GROUP, rng)
        assert outcome.accepted and not outcome.accusations
        for subset in itertools.combinations((1, 2, 3, 4), 3):
            pts = [(j, outcome.new_shares[j]) for j in subset]
            assert interpolate_at_zero(pts, F11) == secret


def test_honest_round_large_group():
    group = MERSENNE127_GROUP
    field = group.share_field()
    rng = SeededEntropy(b"large-round")
    secret = field.random_int(rng)
    shares = make_shares(secret, 2, field, rng)
    outcome = renewal_round(shares, 2, group, rng)
    assert outcome.accepted
    pts = [(j, outcome.new_shares[j]) for j in (1, 3, 4)]
    assert interpolate_at_zero(pts, field) == secret
    assert outcome.new_shares != shares


def test_mixed_old_new_shares_break_reconstruction():
    rng = SeededEntropy(b"mixing")
    mismatches = 0
    trials = 200
    for _ in range(trials):
        shares = make_shares(6, 2, F11, rng)
        outcome = renewal_round(shares, 2, TOY_GROUP, rng)
        pts = [(1, shares[1]), (2, outcome.new_shares[2]),
               (3, outcome.new_shares[3])]
        mismatches += interpolate_at_zero(pts, F11) != 6
    # each mix misses except when the renewal offsets cancel (prob 1/11);
    # 165 is four sigma below the binomial mean of 181.8
    assert mismatches >= 165


def test_tampered_pair_triggers_accusation_and_no_update():
    rng = SeededEntropy(b"tamper")
    shares = make_shares(9, 2, F11, rng)
    holders = sorted(shares)
    packets = [gen_renewal(j, holders, 2, TOY_GROUP, rng) for j in holders]
    s1, s2 = packets[1].share_pairs[4]
    packets[1].share_pairs[4] = ((s1 + 1) % 11, s2)
    outcome = renewal_round(shares, 2, TOY_GROUP, packets=packets)
    assert not outcome.accepted
    assert outcome.new_shares is None
    assert any(a.accuser == 4 and a.accused == packets[1].sender
               for a in outcome.accusations)


def test_missing_pair_triggers_accusation():
    rng = SeededEntropy(b"missing-pair")
    shares = make_shares(3, 2, F11, rng)
    holders = sorted(shares)
    packets = [gen_renewal(j, holders, 2, TOY_GROUP, rng) for j in holders]
    del packets[0].share_pairs[2]
    outcome = renewal_round(shares, 2, TOY_GROUP, packets=packets)
    assert not outcome.accepted
    assert any(a.accuser == 2 and a.accused == packets[0].sender
               for a in outcome.accusations)


def test_zero_participant_round_is_noop():
    outcome = renewal_round({}, 2, TOY_GROUP, SeededEntropy(b"empty"))
    assert outcome.accepted and outcome.new_shares == {}


def test_round_needs_randomness_or_packets():
    with pytest.raises(ConfigurationError):
        renewal_round({1: 4, 2: 5, 3: 6}, 2, TOY_GROUP)


def test_round_with_per_holder_randomness():
    shares = make_shares(2, 2, F11, SeededEntropy(b"per-holder-setup"))
    sources = {j: SeededEntropy(b"holder-rng-%d" % j) for j in shares}
    outcome = renewal_round(shares, 2, TOY_GROUP, sources)
    assert outcome.accepted
    pts = [(j, outcome.new_shares[j]) for j in (1, 2, 4)]
    assert interpolate_at_zero(pts, F11) == 2


def test_apply_renewal_missing_recipient():
    rng = SeededEntropy(b"apply-miss")
    packet = gen_renewal(1, (1, 2), 1, TOY_GROUP, rng)
    with pytest.raises(ProtocolError):
        apply_renewal(5, 3, [packet], TOY_GROUP)
