import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roleflow import (
    ColorSet,
    FormatError,
    IncompatiblePlace,
    Marking,
    Multiset,
    Net,
    Place,
    VersionMismatch,
    restore_marking,
    save_marking,
)
from roleflow.textscan import parse_descriptor_text, parse_value_text

from conftest import TOK, tok
from helpers import gen_net_and_marking, gen_value


def test_round_trip(net1):
    m = Marking({"p": Multiset([tok(1)])})
    assert restore_marking(save_marking(net1, m), net1) == m


def test_byte_determinism(net1):
    m = Marking({"p": Multiset([tok(1)]), "q": Multiset([tok(4), tok(2)])})
    assert save_marking(net1, m) == save_marking(net1, m)


def test_counts_are_injective(net1):
    one = save_marking(net1, Marking({"p": Multiset([tok(1)])}))
    two = save_marking(net1, Marking({"p": Multiset([tok(1), tok(1)])}))
    assert one != two


def test_empty_marking(net1):
    data = save_marking(net1, Marking())
    assert data == b"MRK1\n"
    assert restore_marking(data, net1) == Marking()


def test_explicit_empty_multiset_equals_absent(net1):
    assert save_marking(net1, Marking({"p": Multiset()})) == save_marking(net1, Marking())


def test_restore_into_extended_net(net1):
    data = save_marking(net1, Marking({"p": Multiset([tok(1)])}))
    parts = net1.parts()
    parts["places"] = parts["places"] + [Place("r", TOK)]
    bigger = Net(**parts)
    restored = restore_marking(data, bigger)
    assert restored == Marking({"p": Multiset([tok(1)])})
    assert restored.get("r").is_empty


def test_restore_into_net_missing_place(net1):
    data = save_marking(net1, Marking({"p": Multiset([tok(1)])}))
    parts = net1.parts()
    parts["places"] = [pl for pl in parts["places"] if pl.id != "p"]
    parts["arcs"] = []
    smaller = Net(**parts)
    with pytest.raises(IncompatiblePlace) as err:
        restore_marking(data, smaller)
    assert err.value.place_id == "p"


def test_restore_into_recolored_place(net1):
    data = save_marking(net1, Marking({"p": Multiset([tok(1)])}))
    txt = ColorSet("Txt", "text")
    recolored = Net(
        "other", colorsets=[txt], places=[Place("p", txt), Place("q", txt)]
    )
    with pytest.raises(IncompatiblePlace):
        restore_marking(data, recolored)


def test_truncated_bytes(net1):
    data = save_marking(net1, Marking({"p": Multiset([tok(1)])}))
    with pytest.raises(FormatError):
        restore_marking(data[:3], net1)


def test_version_mismatch(net1):
    with pytest.raises(VersionMismatch):
        restore_marking(b"MRK9\n", net1)


def test_garbage_line(net1):
    with pytest.raises(FormatError):
        restore_marking(b"MRK1\nwhat is this\n", net1)


def test_fuzz_round_trip_and_determinism():
    rng = random.Random(11)
    for _ in range(300):
        net, marking = gen_net_and_marking(rng)
        data = save_marking(net, marking)
        assert data == save_marking(net, marking)
        assert restore_marking(data, net) == marking


def test_descriptor_round_trip():
    rng = random.Random(12)
    for _ in range(200):
        net, _ = gen_net_and_marking(rng)
        for place in net.places.values():
            d = place.colorset.descriptor()
            assert parse_descriptor_text(d) == place.colorset


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_value_canonical_text_round_trip(data):
    rng = random.Random(data.draw(st.integers(0, 10**6)))
    from helpers import gen_colorset

    cs = gen_colorset(rng, "C")
    v = gen_value(rng, cs)
    assert parse_value_text(v.canonical(), cs) == v
