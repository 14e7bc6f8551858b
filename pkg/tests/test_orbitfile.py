import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pendrot.errors import ParseError, UnsupportedVersion
from pendrot.model import SystemParams
from pendrot.orbitfile import (
    MAGIC,
    _PREFIX,
    decode_orbit,
    encode_orbit,
    plan_hash,
    read_orbit,
    write_orbit,
    write_orbit_csv,
)
from pendrot.shadowing import uniform_plan
from pendrot.trajectory import BoundaryCondition, Trajectory

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 50), elements=finite),
    st.floats(-1e6, 1e6),
    st.floats(1e-6, 10.0),
    finite,
)
def test_round_trip_bit_exact(u, t_lo, dt, s):
    q = Trajectory(t_lo, dt, u, u[::-1].copy(), BoundaryCondition("clamped", 0, 1.5), BoundaryCondition("free"))
    r, header = decode_orbit(encode_orbit(q, s=s))
    assert r.u.tobytes() == q.u.tobytes() and r.v.tobytes() == q.v.tobytes()
    assert r.t_lo == q.t_lo and r.dt == q.dt and header["s"] == s
    assert r.left == q.left and r.right == q.right and header["plan_hash"] is None


def test_file_round_trip_with_plan(tmp_path):
    p = SystemParams(0.64, 0.01)
    plan = uniform_plan(p, [1.0, 1.1], 4 * np.pi)
    t = np.linspace(-1, 1, 11)
    q = Trajectory.from_grid(t, np.sin(t), np.cos(t))
    path = write_orbit(tmp_path / "o.bin", q, plan, 3.25)
    r, header = read_orbit(path)
    assert header["plan_hash"] == plan_hash(plan) and len(header["plan_hash"]) == 64
    assert np.array_equal(r.u, q.u)
    assert path.read_bytes()[:8] == MAGIC
    csv = write_orbit_csv(tmp_path / "o.csv", q)
    back = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1], q.u) and csv.read_text().startswith("t,u,v\n")


def _blob():
    t = np.linspace(0, 1, 5)
    return encode_orbit(Trajectory.from_grid(t, t, 2 * t))


def test_truncated_and_trailing():
    b = _blob()
    for cut in (0, 5, _PREFIX.size + 3, len(b) - 1):
        with pytest.raises(ParseError) as ei:
            decode_orbit(b[:cut])
        assert ei.value.offset is not None
    with pytest.raises(ParseError):
        decode_orbit(b + b"\0")


def test_bad_magic_and_version():
    b = bytearray(_blob())
    with pytest.raises(UnsupportedVersion):
        decode_orbit(bytes(b[:8]) + _PREFIX.pack(MAGIC, 2, 0)[8:10] + bytes(b[10:]))
    b[0:1] = b"X"
    with pytest.raises(ParseError):
        decode_orbit(bytes(b))
