import dataclasses
import random

import pytest
from ibe_trust.base.curve import G1Point, GtElement
from ibe_trust.base.errors import DecryptionError, ParameterError
from ibe_trust.ibe import ibe, keyfiles
from ibe_trust.ibe.ibe import (
    Ciphertext,
    MasterKey,
    PublicParams,
    SecurityConfig,
    basic_decrypt,
    basic_encrypt,
    ciphertext_length,
    decrypt,
    decrypt_blocks,
    encrypt,
    encrypt_blocks,
    extract,
    hash_to_point,
    pairing,
    setup,
)


# frozen toy vectors: P = 12 * lift(5), s = 7
@pytest.fixture(scope="function")
def toy():
    params = PublicParams(
        p=227, q=19, n=128, generator=G1Point(143, 69), public=G1Point(119, 65)
    )
    yield params, MasterKey(7)


@pytest.fixture(scope="module")
def toy_seeded():
    yield setup(SecurityConfig.from_profile("toy", seed=11))


@pytest.fixture(scope="module")
def demo():
    yield setup(SecurityConfig.from_profile("demo", seed=5))


def test_toy_vectors_hash_to_point(toy):
    params, _ = toy
    assert hash_to_point(params, "node-001") == G1Point(76, 169)
    assert hash_to_point(params, "node-002") == G1Point(120, 118)


def test_toy_vectors_extract(toy):
    params, master = toy
    assert extract(params, master, "node-001").d == G1Point(120, 109)


def test_toy_vectors_pairing(toy):
    params, _ = toy
    e = pairing(params, params.generator, params.generator)
    assert e == GtElement(146, 122, 227)
    assert not e.is_one()
    assert (e**19).is_one()


def test_toy_vectors_ciphertext(toy):
    params, master = toy
    c = encrypt(params, "node-001", b"hi", sigma=bytes(range(16)))
    assert c.U == G1Point(119, 65)
    assert c.to_bytes(params).hex() == "774166374751f113b5a4a24a74a13ce7cd4ad62c"
    sk = extract(params, master, "node-001")
    parsed = Ciphertext.from_bytes(params, c.to_bytes(params))
    assert decrypt(params, sk, parsed) == b"hi"


def test_setup_rejects_bad_configs():
    with pytest.raises(ParameterError, match="p not ≡ 2 mod 3"):
        SecurityConfig(profile="toy", p=43, q=11).validate()
    with pytest.raises(ParameterError, match=r"q does not divide p\+1"):
        SecurityConfig(profile="toy", p=227, q=7).validate()
    with pytest.raises(ParameterError, match="q is not prime"):
        SecurityConfig(profile="toy", p=227, q=12).validate()
    with pytest.raises(ParameterError, match="p is not prime"):
        SecurityConfig(profile="toy", p=221, q=37).validate()
    with pytest.raises(ParameterError, match="n must be"):
        SecurityConfig(profile="toy", p=227, q=19, n=0).validate()
    with pytest.raises(ParameterError, match="unknown profile"):
        SecurityConfig.from_profile("huge")


def test_demo_profile_takes_the_stored_block_size(monkeypatch):
    stored = ibe.load_bundled_toml("demo_params.toml")["params"]
    assert SecurityConfig.from_profile("demo").n == stored["n"]
    monkeypatch.setattr(ibe, "load_bundled_toml", lambda name: {"params": {**stored, "n": 64}})
    assert SecurityConfig.from_profile("demo").n == 64
    assert SecurityConfig.from_profile("demo", n=256).n == 256
    assert SecurityConfig.from_profile("toy").n == 128


def test_setup_is_deterministic():
    config = SecurityConfig.from_profile("toy", seed=99)
    a, _ = setup(config)
    b, _ = setup(config)
    assert keyfiles.params_to_bytes(a) == keyfiles.params_to_bytes(b)


@pytest.mark.parametrize("profile", ["toy", "demo"])
def test_setup_params_have_order_q(profile):
    params, master = setup(SecurityConfig.from_profile(profile, seed=2))
    params.validate()
    assert params.cofactor * params.q == params.p + 1
    assert 1 <= master.s < params.q


def test_demo_point_is_64_bytes(demo):
    params, _ = demo
    assert params.curve.point_size == 64


def test_hash_to_point_has_order_q(demo):
    params, _ = demo
    for identity in ("node-001", "node-002", "base-station", "x"):
        assert params.in_subgroup(hash_to_point(params, identity))


def test_hash_to_point_rejects_empty_identity(toy):
    params, _ = toy
    with pytest.raises(ParameterError, match="non-empty"):
        hash_to_point(params, "")


def test_extract_with_unit_master_key(toy):
    params, _ = toy
    assert extract(params, MasterKey(1), "node-005").d == hash_to_point(params, "node-005")


@pytest.mark.parametrize("name", ["toy_seeded", "demo"])
def test_key_consistency(name, request):
    params, master = request.getfixturevalue(name)
    for i in range(5):
        sk = extract(params, master, f"node-{i:03d}")
        assert sk.verify(params)


@pytest.mark.parametrize("name", ["toy_seeded", "demo"])
def test_bilinearity(name, request):
    params, _ = request.getfixturevalue(name)
    curve, P = params.curve, params.generator
    e = pairing(params, P, P)
    rng = random.Random(17)
    for _ in range(100):
        a, b = rng.randrange(1, params.q), rng.randrange(1, params.q)
        assert pairing(params, curve.multiply(a, P), curve.multiply(b, P)) == e ** (a * b)


def test_pairing_small_multiples(toy):
    params, _ = toy
    curve, P = params.curve, params.generator
    e = pairing(params, P, P)
    assert pairing(params, curve.multiply(2, P), curve.multiply(3, P)) == e**6


def test_pairing_rejects_off_curve_points(toy):
    params, _ = toy
    with pytest.raises(ParameterError, match="not on the curve"):
        pairing(params, G1Point(1, 1), params.generator)


def test_pairing_with_infinity_is_one(toy):
    params, _ = toy
    assert pairing(params, G1Point(), params.generator).is_one()


def test_pairing_structure_with_known_discrete_log(toy_seeded):
    params, _ = toy_seeded
    curve, P = params.curve, params.generator
    rng = random.Random(23)
    for _ in range(30):
        r, s, t = (rng.randrange(1, params.q) for _ in range(3))
        q_id = curve.multiply(t, P)
        s_p = curve.multiply(s, P)
        assert pairing(params, curve.multiply(r, q_id), s_p) == pairing(params, P, P) ** (
            r * s * t
        )


@pytest.mark.parametrize("name", ["toy_seeded", "demo"])
def test_encrypt_decrypt_roundtrip(name, request):
    params, master = request.getfixturevalue(name)
    rng = random.Random(31)
    for _ in range(100):
        identity = f"node-{rng.randrange(1000):03d}"
        m = rng.randbytes(rng.randrange(params.block_size + 1))
        sk = extract(params, master, identity)
        assert decrypt(params, sk, encrypt(params, identity, m, rng)) == m


def test_fixed_sigma_is_deterministic(demo):
    params, _ = demo
    a = encrypt(params, "node-001", b"abc", sigma=b"\x01" * 16)
    b = encrypt(params, "node-001", b"abc", sigma=b"\x01" * 16)
    assert a == b
    assert a.to_bytes(params) == b.to_bytes(params)


def test_encrypt_rejects_oversized_message(toy):
    params, _ = toy
    with pytest.raises(ParameterError, match="exceeds"):
        encrypt(params, "node-001", bytes(17), random.Random(1))


def test_every_single_bit_flip_is_rejected(demo):
    params, master = demo
    sk = extract(params, master, "node-001")
    data = encrypt(params, "node-001", b"hi", random.Random(3)).to_bytes(params)
    for bit in range(len(data) * 8):
        tampered = bytearray(data)
        tampered[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(DecryptionError):
            decrypt(params, sk, Ciphertext.from_bytes(params, bytes(tampered)))


def test_wrong_key_is_rejected(demo):
    params, master = demo
    wrong = extract(params, master, "node-002")
    rng = random.Random(8)
    for _ in range(100):
        c = encrypt(params, "node-001", rng.randbytes(16), rng)
        with pytest.raises(DecryptionError):
            decrypt(params, wrong, c)


def test_wrong_key_is_mostly_rejected_on_toy(toy_seeded):
    # q = 19 leaves a 1 in 18 chance of an accidental match
    params, master = toy_seeded
    wrong = extract(params, master, "node-002")
    rng = random.Random(8)
    rejected = 0
    for _ in range(100):
        try:
            decrypt(params, wrong, encrypt(params, "node-001", rng.randbytes(16), rng))
        except DecryptionError:
            rejected += 1
    assert rejected >= 75


def test_from_bytes_rejects_wrong_length(toy):
    params, _ = toy
    with pytest.raises(DecryptionError, match="wrong length"):
        Ciphertext.from_bytes(params, bytes(10))


def test_infinity_u_is_rejected(toy):
    params, master = toy
    sk = extract(params, master, "node-001")
    with pytest.raises(DecryptionError, match="malformed U"):
        decrypt(params, sk, Ciphertext.from_bytes(params, bytes(18)))


@pytest.mark.parametrize("length", [0, 1, 16, 17, 40])
def test_block_encryption(toy_seeded, length):
    params, master = toy_seeded
    rng = random.Random(length)
    data = rng.randbytes(length)
    blob = encrypt_blocks(params, "node-004", data, rng)
    assert len(blob) == ciphertext_length(params, length)
    assert decrypt_blocks(params, extract(params, master, "node-004"), blob) == data


def test_block_count_for_demo(demo):
    params, _ = demo
    assert ciphertext_length(params, 16) == 96
    assert ciphertext_length(params, 40) == 3 * 80 + 40


def test_basic_ident_roundtrip(toy_seeded):
    params, master = toy_seeded
    sk = extract(params, master, "node-003")
    for r in range(1, params.q):
        u, v = basic_encrypt(params, "node-003", b"sixteen byte msg", r)
        assert u == params.curve.multiply(r, params.generator)
        assert basic_decrypt(params, sk, u, v) == b"sixteen byte msg"


def test_params_file_roundtrip(tmp_path, toy_seeded):
    params, master = toy_seeded
    keyfiles.save_params(tmp_path / "params.bin", params)
    keyfiles.save_master_key(tmp_path / "master.bin", master)
    sk = extract(params, master, "node-001")
    keyfiles.save_private_key(tmp_path / "node-001.key", sk)

    loaded = keyfiles.load_params(tmp_path / "params.bin")
    assert loaded == params
    assert keyfiles.load_master_key(tmp_path / "master.bin", loaded) == master
    assert keyfiles.load_private_key(tmp_path / "node-001.key", loaded) == sk


def test_params_file_starts_with_magic(toy):
    params, _ = toy
    data = keyfiles.params_to_bytes(params)
    assert data[:5] == b"IBTP\x01"
    # p = 227 is one length-prefixed byte
    assert data[5:8] == b"\x00\x01\xe3"


def test_tampered_private_key_is_rejected(tmp_path, toy):
    params, master = toy
    sk = extract(params, master, "node-001")
    forged = sk.__class__(identity="node-002", d=sk.d)
    keyfiles.save_private_key(tmp_path / "forged.key", forged)
    with pytest.raises(ParameterError, match="does not match"):
        keyfiles.load_private_key(tmp_path / "forged.key", params)


def test_bad_magic_is_rejected(tmp_path, toy):
    params, _ = toy
    (tmp_path / "x.bin").write_bytes(b"NOPE\x01")
    with pytest.raises(ParameterError, match="bad magic"):
        keyfiles.load_params(tmp_path / "x.bin")


@pytest.mark.parametrize(
    "p, q, message",
    [(221, 37, "p is not prime"), (223, 7, "p not ≡ 2 mod 3"), (227, 57, "q is not prime")],
)
def test_params_file_with_a_bad_field_is_rejected(tmp_path, toy, p, q, message):
    params, _ = toy
    bad = dataclasses.replace(params, p=p, q=q)
    (tmp_path / "params.bin").write_bytes(keyfiles.params_to_bytes(bad))
    with pytest.raises(ParameterError, match=message):
        keyfiles.load_params(tmp_path / "params.bin")
