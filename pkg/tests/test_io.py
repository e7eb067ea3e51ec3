import numpy as np
import pytest

from choimap import io
from choimap.choi import ChoiSeries
from choimap.vibronic_model import beta_from_temperature

MODEL = """\
d_s: 2
epsilon: [[100.0, 50.0], [50.0, -100.0]]
fock_dim: 6
temperature_K: 300.0
t_c_fs: 800.0
modes:
  - omega_cm: 200.0
    coupling: [80.0, -60.0]
  - omega_cm: 350.0
    coupling: [[40.0, 5.0], [5.0, 70.0]]
    fock_dim: 4
disorder:
  - n: 1
    sigma_cm: 20.0
    basis_dim: 8
"""

CONFIG = """\
schema: choimap-config/1
model: model.yaml
dt_fs: 0.5
t_max_fs: 10.0
snapshot_stride: 2
rank: 8
krylov:
  dim: 20
  tol: 1.0e-11
output: out
analysis:
  spectrum: false
  ttm:
    memory_fs: 5.0
  pauli:
    window_fs: [2.0, 8.0]
"""


def _write(tmp_path, model=MODEL, config=CONFIG):
    (tmp_path / "model.yaml").write_text(model)
    (tmp_path / "config.yaml").write_text(config)
    return tmp_path / "config.yaml"


def test_load_model_fields(tmp_path):
    _write(tmp_path)
    spec = io.load_model(tmp_path / "model.yaml")
    m = spec.model
    assert m.d_s == 2
    assert np.allclose(m.eps, [[100, 50], [50, -100]])
    assert [mode.omega for mode in m.modes] == [200.0, 350.0]
    assert np.allclose(m.modes[0].coupling, np.diag([80.0, -60.0]))
    assert np.allclose(m.modes[1].coupling, [[40, 5], [5, 70]])
    assert [mode.fock_dim for mode in m.modes] == [6, 4]
    assert len(m.disorder) == 1 and m.disorder[0].n == 0 and m.disorder[0].m == 0
    assert spec.beta == pytest.approx(beta_from_temperature(300.0))
    assert spec.t_c == 800.0


def test_load_config_fields(tmp_path):
    cfg = io.load_config(_write(tmp_path))
    assert cfg.dt == 0.5 and cfg.t_max == 10.0 and cfg.n_steps == 20
    assert cfg.snapshot_stride == 2 and cfg.rank == 8
    assert cfg.krylov_dim == 20 and cfg.krylov_tol == 1e-11
    assert cfg.output == tmp_path / "out"
    assert cfg.model_path == tmp_path / "model.yaml"
    assert cfg.spectrum is False and cfg.kernel is True
    assert cfg.ttm_memory == 5.0 and cfg.ttm_horizon is None
    assert cfg.pauli_window == (2.0, 8.0)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        (CONFIG.replace("dt_fs: 0.5", "dt_fs: -0.5"), 3, "dt_fs"),
        (CONFIG.replace("schema: choimap-config/1", "schema: other/2"), 1, "schema"),
        (CONFIG + "colour: red\n", 17, "unknown key 'colour'"),
        (CONFIG.replace("t_max_fs: 10.0", "t_max_fs: 10.2"), 4, "whole number"),
        (CONFIG.replace("  dim: 20", "  dim: twenty"), 8, "'dim' must be of type int"),
        (CONFIG.replace("[2.0, 8.0]", "[8.0, 2.0]"), 16, "window_fs"),
        (CONFIG.replace("dt_fs: 0.5\n", ""), 1, "missing required key 'dt_fs'"),
    ],
)
def test_config_errors_carry_line(tmp_path, text, line, fragment):
    path = _write(tmp_path, config=text)
    with pytest.raises(io.ConfigError) as err:
        io.load_config(path)
    assert fragment in str(err.value)
    assert err.value.line == line
    assert f"config.yaml:{line}:" in str(err.value)


def test_yaml_syntax_error_has_line(tmp_path):
    path = _write(tmp_path, config="schema: choimap-config/1\nmodel: [unclosed\n")
    with pytest.raises(io.ConfigError) as err:
        io.load_config(path)
    assert err.value.line is not None and "YAML" in str(err.value)


@pytest.mark.parametrize(
    "old, new, line, fragment",
    [
        ("[[100.0, 50.0], [50.0, -100.0]]", "[[100.0, 50.0], [40.0, -100.0]]", 2, "symmetric"),
        ("  - omega_cm: 200.0", "  - omega_cm: -200.0", 7, "omega_cm"),
        ("coupling: [80.0, -60.0]", "coupling: [80.0, -60.0, 1.0]", 8, "matrix"),
        ("  - n: 1", "  - n: 3", 13, "1..2"),
        ("temperature_K: 300.0", "temperature_K: 300.0\nbeta_cm: 0.01", 5, "not both"),
    ],
)
def test_model_errors_carry_line(tmp_path, old, new, line, fragment):
    _write(tmp_path, model=MODEL.replace(old, new))
    with pytest.raises(io.ConfigError) as err:
        io.load_model(tmp_path / "model.yaml")
    assert fragment in str(err.value)
    assert err.value.line == line


def test_modes_csv_site_and_matrix_forms(tmp_path):
    (tmp_path / "a.csv").write_text("omega_cm,site,g\n100.0,2,30.0\n")
    (tmp_path / "b.csv").write_text("omega_cm,g_11,g_12,g_21,g_22,fock_dim\n150.0,1.0,2.0,2.0,3.0,5\n")
    a = io.read_modes_csv(tmp_path / "a.csv", 2, fock_dim=7)
    b = io.read_modes_csv(tmp_path / "b.csv", 2)
    assert np.allclose(a[0].coupling, [[0, 0], [0, 30]]) and a[0].fock_dim == 7
    assert np.allclose(b[0].coupling, [[1, 2], [2, 3]]) and b[0].fock_dim == 5
    (tmp_path / "c.csv").write_text("omega_cm,site,g\n100.0,3,30.0\n")
    with pytest.raises(io.ConfigError) as err:
        io.read_modes_csv(tmp_path / "c.csv", 2)
    assert err.value.line == 2


def _series(rng, d=2, n=5, beta=0.01):
    mats = rng.standard_normal((n, d * d, d * d)) + 1j * rng.standard_normal((n, d * d, d * d))
    return ChoiSeries(d, 0.25, mats, beta, "abc123")


def test_series_container_round_trip(tmp_path, rng):
    s = _series(rng)
    io.write_series(s, tmp_path / "s.bin")
    r = io.read_series(tmp_path / "s.bin")
    assert r.d_s == s.d_s and r.dt == s.dt and r.beta == s.beta and r.model_hash == "abc123"
    assert np.array_equal(r.mats, s.mats)
    assert np.array_equal(r.times, s.times)
    # infinite temperature is stored as null
    io.write_series(ChoiSeries(2, 1.0, s.mats, np.inf), tmp_path / "t.bin")
    assert np.isinf(io.read_series(tmp_path / "t.bin").beta)


def test_series_container_deterministic_bytes(tmp_path, rng):
    s = _series(rng)
    io.write_series(s, tmp_path / "a.bin")
    io.write_series(s, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_corrupt_containers(tmp_path, rng):
    io.write_series(_series(rng), tmp_path / "s.bin")
    raw = (tmp_path / "s.bin").read_bytes()
    cases = {
        "magic": b"XXXXXXXX" + raw[8:],
        "truncated": raw[:-16],
        "header": raw[:12] + b"[" + raw[13:],
        "empty": b"",
    }
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(io.ContainerError):
            io.read_series(tmp_path / name)
    with pytest.raises(io.ContainerError):
        io.read_series(tmp_path / "missing.bin")


def test_csv_writer_round_trips_floats(tmp_path):
    vals = np.array([[0.1, 1.0 / 3.0, -2.5e-17]])
    io.write_csv(tmp_path / "x.csv", ["a", "b", "c"], vals)
    header, rows = io.read_csv(tmp_path / "x.csv")
    assert header == ["a", "b", "c"]
    assert [float(v) for v in rows[0]] == list(vals[0])
