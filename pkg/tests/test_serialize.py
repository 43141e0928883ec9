import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gramphase.moments import second_moment
from gramphase.repspec import RepSpec, Signal
from gramphase.serialize import (
    Table,
    config_digest,
    dumps,
    fmt_number,
    gram_from_dict,
    load_schema,
    signal_from_dict,
    signal_to_dict,
    validate,
)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_number_round_trips_bit_exact(v):
    assert float(fmt_number(v)) == v


def test_fmt_number_special_values():
    assert fmt_number(True) == "true"
    assert fmt_number(np.bool_(False)) == "false"
    assert fmt_number(np.int64(7)) == "7"
    assert fmt_number(math.nan) == "nan"
    assert fmt_number(-math.inf) == "-inf"
    assert fmt_number("pass") == "pass"


def test_table_csv():
    t = Table(("a", "b"))
    t.append((1, 0.1))
    t.append((2, True))
    assert t.to_csv() == "a,b\n1,0.10000000000000001\n2,true\n"
    assert t.column("a") == [1, 2]
    with pytest.raises(ValueError):
        t.append((1,))


def test_signal_dict_round_trip(rng):
    spec = RepSpec(((3, 2), (1, 4)))
    x = Signal.random(spec, rng)
    data = json.loads(dumps(signal_to_dict(x)))
    validate(data, "Signal")
    y = signal_from_dict(data)
    assert all(np.array_equal(a, b) for a, b in zip(x.blocks, y.blocks))


def test_gram_dict_round_trip(rng):
    spec = RepSpec(((3, 2), (1, 4)))
    G = second_moment(Signal.random(spec, rng))
    data = {"spec": spec.to_dict(), "blocks": [b.ravel().tolist() for b in G.blocks]}
    validate(data, "GramTuple")
    H = gram_from_dict(data)
    assert all(np.array_equal(a, b) for a, b in zip(G.blocks, H.blocks))


def test_dumps_rejects_nan():
    with pytest.raises(ValueError):
        dumps({"x": math.nan})


def test_config_digest_is_order_free():
    assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})


def test_schema_definitions():
    schema = load_schema()
    assert {"RepSpec", "Signal", "GramTuple", "Prior", "RunConfig"} <= set(schema["definitions"])
    validate({"seed": 3, "prior": "sparse", "m": 2}, "RunConfig")
    with pytest.raises(jsonschema.ValidationError):
        validate({"seed": "three"}, "RunConfig")
    with pytest.raises(jsonschema.ValidationError):
        validate({"prior": "gaussian"}, "RunConfig")
