"""
Shipped demonstration models.

``tls_1mode``: a two-level system coupled to one underdamped mode.
``fmo3``: a three-site FMO truncation. The exciton block uses representative
site-1..3 energies and couplings of published FMO subunit Hamiltonians (as in
Moix et al., J. Phys. Chem. Lett. 2011), entered without the source table at
hand, so treat them as illustrative. Each site couples to eight synthetic
modes sampled from a Drude-Lorentz spectral density, a stand-in for
MD-derived spectral densities rather than a fit to them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .vibronic_model import BathMode, VibronicModel

FMO3_EPS = np.array(
    [
        [310.0, -97.9, 5.5],
        [-97.9, 230.0, 30.1],
        [5.5, 30.1, 0.0],
    ]
)


def drude_modes(reorg: float, gamma: float, n: int, omega_min: float, omega_max: float):
    """``n`` frequencies and couplings carrying equal shares of the reorganization energy.

    The Drude-Lorentz density ``J(w) = 2 reorg gamma w / (w^2 + gamma^2)`` is
    restricted to ``[omega_min, omega_max]``; the bins are equal in
    ``int J(w)/w dw`` so each mode gets ``reorg_k = reorg / n`` (the band is
    rescaled to carry the full ``reorg``). With the coupling written as
    ``g / sqrt 2 (b + b^dag)`` the reorganization energy of a mode is
    ``g^2 / (2 w)``.
    """
    a0, a1 = np.arctan(omega_min / gamma), np.arctan(omega_max / gamma)
    mid = a0 + (a1 - a0) * (np.arange(n) + 0.5) / n
    omega = gamma * np.tan(mid)
    g = np.sqrt(2.0 * (reorg / n) * omega)
    return omega, g


def fmo3_model(
    reorg: float = 35.0,
    gamma: float = 106.0,
    n_modes: int = 8,
    omega_min: float = 60.0,
    omega_max: float = 1200.0,
    fock_dim: int = 6,
) -> VibronicModel:
    omega, g = drude_modes(reorg, gamma, n_modes, omega_min, omega_max)
    modes = []
    for site in range(3):
        for w, gk in zip(omega, g):
            c = np.zeros((3, 3))
            c[site, site] = gk
            modes.append(BathMode(float(w), c, fock_dim))
    return VibronicModel(FMO3_EPS.copy(), modes)


def tls_1mode_model(fock_dim: int = 8) -> VibronicModel:
    eps = np.array([[100.0, 50.0], [50.0, -100.0]])
    return VibronicModel(eps, [BathMode(200.0, np.diag([80.0, -60.0]), fock_dim)])


_TLS_MODEL = """\
# two-level system with one underdamped mode (cm^-1)
d_s: 2
epsilon: [[100.0, 50.0], [50.0, -100.0]]
fock_dim: 8
temperature_K: 300.0
modes:
  - omega_cm: 200.0
    coupling: [80.0, -60.0]
"""

_TLS_CONFIG = """\
schema: choimap-config/1
model: model.yaml
dt_fs: 0.5
t_max_fs: 200.0
snapshot_stride: 2
rank: 64
output: out
analysis:
  spectrum: true
  kernel: true
  ttm:
    memory_fs: 199.0
  pauli:
    window_fs: [50.0, 190.0]
"""

_FMO_MODEL = """\
# three-site FMO truncation; eight Drude-Lorentz modes per site in modes.csv
d_s: 3
epsilon:
  - [310.0, -97.9, 5.5]
  - [-97.9, 230.0, 30.1]
  - [5.5, 30.1, 0.0]
fock_dim: {fock}
temperature_K: 300.0
t_c_fs: 800.0
modes_csv: modes.csv
"""

_FMO_CONFIG = """\
schema: choimap-config/1
model: model.yaml
dt_fs: {dt}
t_max_fs: {t_max}
snapshot_stride: {stride}
rank: {rank}
output: out
analysis:
  spectrum: true
  kernel: true
  initial_site: 1
  ttm:
    memory_fs: 300.0
    horizon_fs: {horizon}
  pauli:
    window_fs: [{w0}, {w1}]
"""

FMO3_RUN = {"dt": 1.0, "t_max": 500.0, "stride": 1, "rank": 16, "fock": 5, "horizon": 3000.0}


def write_demo(name: str, directory) -> Path:
    """Write the model, mode table and run config of a shipped demo."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if name == "tls_1mode":
        (out / "model.yaml").write_text(_TLS_MODEL)
        (out / "config.yaml").write_text(_TLS_CONFIG)
    elif name == "fmo3":
        p = FMO3_RUN
        model = fmo3_model(fock_dim=p["fock"])
        rows = ["omega_cm,site,g"]
        for m in model.modes:
            site = int(np.argmax(np.abs(np.diag(m.coupling)))) + 1
            rows.append(f"{float(m.omega)!r},{site},{float(np.diag(m.coupling)[site - 1].real)!r}")
        (out / "modes.csv").write_text("\n".join(rows) + "\n")
        (out / "model.yaml").write_text(_FMO_MODEL.format(fock=p["fock"]))
        t_max = p["t_max"]
        (out / "config.yaml").write_text(
            _FMO_CONFIG.format(
                dt=p["dt"], t_max=t_max, stride=p["stride"], rank=p["rank"],
                horizon=p["horizon"], w0=float(round(t_max / 3)), w1=t_max - p["dt"] * p["stride"],
            )
        )
    else:
        raise ValueError(f"unknown demo '{name}'")
    return out
