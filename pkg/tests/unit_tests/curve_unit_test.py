import random

import pytest
from ibe_trust.base.curve import INFINITY, Curve, G1Point, GtElement, byte_length


@pytest.fixture(scope="function")
def toy_curve():
    c = Curve(227)
    yield c


@pytest.fixture(scope="function")
def toy_generator():
    yield G1Point(143, 69)


def test_toy_curve_has_p_plus_one_points():
    p = 227
    affine = sum(
        1 for x in range(p) for y in range(p) if (y * y - x * x * x - 1) % p == 0
    )
    assert affine + 1 == p + 1


def test_generator_has_order_19(toy_curve, toy_generator):
    c = toy_curve
    assert c.contains(toy_generator)
    assert c.multiply(19, toy_generator).is_infinity
    assert all(not c.multiply(k, toy_generator).is_infinity for k in range(1, 19))


def test_closure_under_add_and_multiply(toy_curve, toy_generator):
    c = toy_curve
    rng = random.Random(3)
    for _ in range(200):
        a = c.multiply(rng.randrange(40), toy_generator)
        b = c.lift_y(rng.randrange(227))
        assert c.contains(b)
        assert c.contains(c.add(a, b))
        assert c.contains(c.double(b))


def test_add_inverse_gives_infinity(toy_curve, toy_generator):
    c = toy_curve
    assert c.add(toy_generator, c.neg(toy_generator)) == INFINITY
    assert c.add(INFINITY, toy_generator) == toy_generator


def test_multiply_matches_repeated_addition(toy_curve, toy_generator):
    c = toy_curve
    acc = INFINITY
    for k in range(25):
        assert c.multiply(k, toy_generator) == acc
        acc = c.add(acc, toy_generator)
    assert c.multiply(-3, toy_generator) == c.neg(c.multiply(3, toy_generator))


def test_point_encoding(toy_curve, toy_generator):
    c = toy_curve
    assert c.encode_point(toy_generator) == bytes([143, 69])
    assert c.encode_point(INFINITY) == b"\x00\x00"
    assert c.decode_point(b"\x00\x00") == INFINITY
    assert c.decode_point(bytes([143, 69])) == toy_generator


def test_decode_rejects_off_curve_and_bad_length(toy_curve):
    with pytest.raises(ValueError, match="not on the curve"):
        toy_curve.decode_point(bytes([143, 70]))
    with pytest.raises(ValueError, match="expected 2 point bytes"):
        toy_curve.decode_point(bytes([1, 2, 3]))


def test_byte_length():
    assert byte_length(227) == 1
    assert byte_length(2**255 + 1) == 32


def test_gt_inverse_and_power():
    p = 227
    g = GtElement(146, 122, p)
    assert (g * g.inverse()).is_one()
    assert g**0 == GtElement.one(p)
    assert g**-2 == (g * g).inverse()
    assert g.to_bytes() == bytes([146, 122])


def test_gt_zero_has_no_inverse():
    with pytest.raises(ZeroDivisionError):
        GtElement(0, 0, 227).inverse()
