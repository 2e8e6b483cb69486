import numpy as np
import pytest
from hypothesis import given, strategies as st

from isopyc.config import RunConfig, load_config, parse_config
from isopyc.diagnostics import energy
from isopyc.domain import Grid, SimParams, build_profile, exp_density, random_state
from isopyc.errors import ConfigError, FormatMismatch, IOFailure
from isopyc.snapshot import (MAGIC, EnergyCSV, decode_snapshot, encode_snapshot, read_energy_csv,
                             read_snapshot, write_snapshot)


def test_defaults_round_trip():
    cfg = RunConfig.from_dict()
    assert parse_config(cfg.to_text()) == cfg


@given(nr=st.integers(5, 200), eps=st.floats(0.0, 0.99), dt=st.floats(1e-6, 1e-1), seed=st.integers(0, 2 ** 31))
def test_round_trip(nr, eps, dt, seed):
    cfg = RunConfig.from_dict({"grid.Nr": nr, "params.epsilon": eps, "params.dt": dt, "initial.seed": seed,
                               "params.mu": 1.0})
    assert parse_config(cfg.to_text()) == cfg


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="grid.Nz"):
        parse_config("grid.Nz = 5\n")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("grid.Nr = 17\ngrid.Nr = 33\n")


def test_bad_values():
    with pytest.raises(ConfigError, match="grid.Nr"):
        parse_config("grid.Nr = many\n")
    with pytest.raises(ConfigError, match="initial.kind"):
        parse_config("initial.kind = vortex\n")
    with pytest.raises(ConfigError):
        parse_config("just words\n")


def test_comments_and_missing_file(tmp_path):
    cfg = parse_config("# header\ngrid.Nr = 17  # refine later\n")
    assert cfg["grid.Nr"] == 17 and cfg.grid().Nr == 17
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.cfg")


def test_bundled_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.cfg")):
        cfg = load_config(path)
        g, p = cfg.grid(), cfg.params()
        cfg.initial_state(cfg.profile(g, p), p)


@pytest.fixture
def state():
    g = Grid(Nx=16, Nr=9)
    return random_state(g, 3, 0.3, 0.1)


def test_snapshot_bit_exact(tmp_path, state):
    p = SimParams(epsilon=0.1, mu=0.25)
    write_snapshot(tmp_path / "s.bin", state, p)
    snap = read_snapshot(tmp_path / "s.bin")
    back = snap.to_state()
    assert (snap.epsilon, snap.mu, snap.coordinate) == (0.1, 0.25, "iso")
    for a, b in ((state.V, back.V), (state.w, back.w), (state.eta, back.eta)):
        assert np.array_equal(a, b)
    assert encode_snapshot(back, p) == encode_snapshot(state, p)


def test_snapshot_truncated(state):
    data = encode_snapshot(state, SimParams())
    with pytest.raises(FormatMismatch, match=f"found {len(data) - 5}"):
        decode_snapshot(data[:-5])
    with pytest.raises(FormatMismatch, match="header"):
        decode_snapshot(data[:10])


def test_snapshot_foreign_and_version(state):
    data = encode_snapshot(state, SimParams())
    with pytest.raises(FormatMismatch, match="magic"):
        decode_snapshot(b"NOTMINE" + data[len(MAGIC):])
    bumped = bytearray(data)
    bumped[len(MAGIC):len(MAGIC) + 4] = (2).to_bytes(4, "little")
    with pytest.raises(FormatMismatch, match="version 2"):
        decode_snapshot(bytes(bumped))


def test_snapshot_unreadable(tmp_path):
    with pytest.raises(IOFailure):
        read_snapshot(tmp_path / "missing.bin")


def test_energy_csv(tmp_path, state):
    p = SimParams(epsilon=0.1, mu=0.25)
    prof = build_profile(exp_density(), None, state.grid, p)
    rep = energy(state, prof, p)
    with EnergyCSV(tmp_path / "e.csv") as out:
        out.write(rep)
    (row,) = read_energy_csv(tmp_path / "e.csv")
    assert row["E"] == rep.E and row["E0"] == rep.E0 and row["status"] == rep.status
