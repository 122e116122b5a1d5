import pytest

from tactile_placement.kvfile import KVError, parse_kv


def test_basic_parse_and_typed_getters():
    kv = parse_kv(
        """
# comment
[alpha]
x = 3.5
n = 42
flag = true
vec = 1 2 3

[beta two]
name = hello  # trailing comment
""",
        path="test.cfg",
    )
    a = kv.require("alpha")
    assert a.get_float("x") == 3.5
    assert a.get_int("n") == 42
    assert a.get_bool("flag") is True
    assert a.get_vec("vec", 3) == [1.0, 2.0, 3.0]
    assert kv.section("beta two").get_str("name") == "hello"
    assert kv.sections_with_prefix("beta") == [kv.section("beta two")]


def test_error_carries_line_numbers():
    with pytest.raises(KVError, match=r"test\.cfg:3"):
        parse_kv("[a]\nx = 1\nnot_a_pair\n", path="test.cfg")
    with pytest.raises(KVError, match=r":1"):
        parse_kv("x = 1\n", path="test.cfg")  # key outside section
    with pytest.raises(KVError, match="duplicate section"):
        parse_kv("[a]\n[a]\n", path="test.cfg")
    with pytest.raises(KVError, match="duplicate key"):
        parse_kv("[a]\nx = 1\nx = 2\n", path="test.cfg")


def test_typed_getter_errors_name_field():
    kv = parse_kv("[a]\nx = banana\n", path="cfg")
    with pytest.raises(KVError, match=r"cfg:2.*'x'"):
        kv.section("a").get_float("x")
    with pytest.raises(KVError, match="missing required key"):
        kv.section("a").get_float("y")
    assert kv.section("a").get_float("y", 1.25) == 1.25


def test_vector_length_checked():
    kv = parse_kv("[a]\nv = 1 2\n", path="cfg")
    with pytest.raises(KVError, match="expected 3 values"):
        kv.section("a").get_vec("v", 3)
