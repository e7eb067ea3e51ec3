"""
Linear vibronic-coupling models, thermofield thermalization and TT assembly.

Energies are in cm^-1 throughout the model classes; operators assembled for
propagation are converted to rad/fs so that time is measured in fs (hbar = 1).

The Hamiltonian handled here is

    H = sum_nm eps_nm |n><m|
        + sum_k (g_k / sqrt 2)(b_k + b_k^dag) + sum_k omega_k b_k^dag b_k
        + sum_d (sigma_d / sqrt 2)(z_d + z_d^dag) V_d

where ``g_k`` and ``V_d`` are Hermitian operators on the electronic space.
Thermofield thermalization replaces every physical mode by a physical/tilde
pair with frequencies ``+omega, -omega`` and couplings ``g cosh(theta)``,
``g sinh(theta)``, ``tanh(theta) = exp(-beta omega / 2)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tt_core import TTOperator, TTVector, pad_ranks

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT_CM_PER_FS = 2.99792458e-5
CM_TO_RADFS = 2.0 * np.pi * SPEED_OF_LIGHT_CM_PER_FS
KB_CM_PER_K = 0.6950348004


class ModelError(ValueError):
    pass


def beta_from_temperature(temperature_K: float) -> float:
    """Inverse temperature in cm (i.e. 1 / cm^-1)."""
    if temperature_K <= 0:
        return np.inf
    return 1.0 / (KB_CM_PER_K * temperature_K)


@dataclass
class BathMode:
    omega: float
    coupling: np.ndarray
    fock_dim: int = 10

    def __post_init__(self):
        self.coupling = np.asarray(self.coupling, dtype=np.complex128)
        if self.omega <= 0:
            raise ModelError(f"mode frequency must be positive, got {self.omega}")
        if self.fock_dim < 2:
            raise ModelError("fock_dim must be >= 2")
        if np.abs(self.coupling - self.coupling.conj().T).max() > 1e-12:
            raise ModelError("mode coupling must be Hermitian")


@dataclass
class DisorderTerm:
    n: int
    m: int
    sigma: float
    basis_dim: int = 10

    def __post_init__(self):
        if self.sigma < 0:
            raise ModelError("disorder sigma must be non-negative")
        if self.basis_dim < 2:
            raise ModelError("disorder basis_dim must be >= 2")


@dataclass
class VibronicModel:
    eps: np.ndarray
    modes: list = field(default_factory=list)
    disorder: list = field(default_factory=list)

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.complex128)
        if self.eps.ndim != 2 or self.eps.shape[0] != self.eps.shape[1]:
            raise ModelError("eps must be a square matrix")
        if self.d_s < 2:
            raise ModelError("need at least two electronic states")
        if np.abs(self.eps - self.eps.conj().T).max() > 1e-12:
            raise ModelError("eps must be Hermitian")
        for k, mode in enumerate(self.modes):
            if mode.coupling.shape != self.eps.shape:
                raise ModelError(f"mode {k}: coupling shape {mode.coupling.shape} != {self.eps.shape}")

    @property
    def d_s(self) -> int:
        return self.eps.shape[0]


@dataclass
class ThermalMode:
    """One thermofield mode; ``omega`` may be negative for tilde modes."""

    omega: float
    coupling: np.ndarray
    fock_dim: int
    kind: str = "physical"
    parent: int = -1


@dataclass
class DisorderMode:
    """Zero-frequency auxiliary mode; ``operator`` is the Hermitian V_d."""

    n: int
    m: int
    sigma: float
    basis_dim: int
    operator: np.ndarray


@dataclass
class ThermalModel:
    eps: np.ndarray
    modes: list
    beta: float
    disorder: list = field(default_factory=list)

    @property
    def d_s(self) -> int:
        return self.eps.shape[0]

    @property
    def n_bath(self) -> int:
        return len(self.modes)

    def fingerprint(self) -> str:
        """Stable hash of every numerical parameter."""
        payload = {
            "eps": _cplx_list(self.eps),
            "beta": None if np.isinf(self.beta) else float(self.beta),
            "modes": [
                [float(m.omega), _cplx_list(m.coupling), int(m.fock_dim)] for m in self.modes
            ],
            "disorder": [
                [d.n, d.m, float(d.sigma), int(d.basis_dim)] for d in self.disorder
            ],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _cplx_list(a):
    a = np.asarray(a)
    return [[float(x.real), float(x.imag)] for x in a.ravel()]


def thermal_angle(omega: float, beta: float) -> float:
    """Bogoliubov angle with ``tanh(theta) = exp(-beta * omega / 2)``."""
    if omega <= 0:
        raise ModelError("thermal_angle needs a positive frequency")
    if beta < 0:
        raise ModelError("beta must be non-negative")
    if np.isinf(beta):
        return 0.0
    x = beta * omega
    if x == 0:
        raise ModelError(
            "beta * omega = 0 makes the thermal angle diverge; treat the mode as static disorder"
        )
    return float(np.arctanh(np.exp(-x / 2.0)))


def thermalize(model: VibronicModel, beta: float) -> ThermalModel:
    modes = []
    for k, mode in enumerate(model.modes):
        theta = thermal_angle(mode.omega, beta)
        modes.append(ThermalMode(mode.omega, mode.coupling * np.cosh(theta), mode.fock_dim, "physical", k))
        modes.append(ThermalMode(-mode.omega, mode.coupling * np.sinh(theta), mode.fock_dim, "tilde", k))
    thermal = ThermalModel(model.eps.copy(), modes, beta)
    if model.disorder:
        thermal = add_disorder(thermal, model.disorder)
    return thermal


def add_disorder(thermal: ThermalModel, terms: Sequence[DisorderTerm]) -> ThermalModel:
    """Append zero-frequency auxiliary modes encoding Gaussian static disorder.

    ``(n, m)`` and ``(m, n)`` address the same Hermitian parameter; duplicates
    are merged with their strengths added in quadrature.
    """
    d = thermal.d_s
    merged = {}
    order = []
    for d_old in thermal.disorder:
        key = (min(d_old.n, d_old.m), max(d_old.n, d_old.m))
        merged[key] = [d_old.sigma**2, d_old.basis_dim]
        order.append(key)
    for t in terms:
        if not (0 <= t.n < d and 0 <= t.m < d):
            raise ModelError(f"disorder indices ({t.n}, {t.m}) outside 0..{d - 1}")
        key = (min(t.n, t.m), max(t.n, t.m))
        if key in merged:
            merged[key][0] += t.sigma**2
            merged[key][1] = max(merged[key][1], t.basis_dim)
        else:
            merged[key] = [t.sigma**2, t.basis_dim]
            order.append(key)
    out = []
    for n, m in order:
        var, dim = merged[(n, m)]
        v = np.zeros((d, d), dtype=np.complex128)
        v[n, m] = 1.0
        if n != m:
            v[m, n] = 1.0
        out.append(DisorderMode(n, m, float(np.sqrt(var)), int(dim), v))
    return ThermalModel(thermal.eps, list(thermal.modes), thermal.beta, out)


def qnsd(J_omega, beta: float, omega):
    """Quantum noise spectral density ``J(w) [1 + coth(beta w / 2)]``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0):
        raise ModelError("the noise spectral density has a pole at omega = 0")
    if np.isinf(beta):
        coth = np.sign(omega)
    else:
        coth = 1.0 / np.tanh(beta * omega / 2.0)
    return np.asarray(J_omega) * (1.0 + coth)


def gaussian_encoding_state(dim: int, variance: float = 1.0) -> np.ndarray:
    """Fock-basis amplitudes of the Gaussian with ``<x^2> = variance``.

    ``x = (z + z^dag)/sqrt 2``; the vacuum has variance 1/2. The wavefunction
    ``exp(-x^2 / (4 variance))`` expands only on even Fock states with ratio
    ``t = (1 - a)/(1 + a)``, ``a = 1 / (2 variance)``. The truncated vector is
    renormalized.
    """
    a = 1.0 / (2.0 * variance)
    t = (1.0 - a) / (1.0 + a)
    c = np.zeros(dim)
    for n in range(0, (dim + 1) // 2):
        if 2 * n >= dim:
            break
        # sqrt((2n)!) / (2^n n!) computed in log space
        logc = 0.5 * _logfact(2 * n) - n * np.log(2.0) - _logfact(n)
        c[2 * n] = np.exp(logc) * (t**n if n else 1.0)
    return c / np.linalg.norm(c)


def _logfact(n):
    return float(np.sum(np.log(np.arange(1, n + 1)))) if n > 1 else 0.0


# --------------------------------------------------------------------------
# site layout


@dataclass(frozen=True)
class SiteLayout:
    """Site sequence ``z_1..z_D, A, S, b_1..b_NB``.

    ``bath_order[j]`` is the index into ``ThermalModel.modes`` placed on bath
    site ``j`` (sorted by increasing ``|omega|``).
    """

    d_s: int
    disorder_dims: tuple
    bath_dims: tuple
    bath_order: tuple

    @property
    def n_disorder(self) -> int:
        return len(self.disorder_dims)

    @property
    def ancilla(self) -> int:
        return self.n_disorder

    @property
    def system(self) -> int:
        return self.n_disorder + 1

    @property
    def dims(self) -> tuple:
        return tuple(self.disorder_dims) + (self.d_s, self.d_s) + tuple(self.bath_dims)

    @property
    def n_sites(self) -> int:
        return len(self.dims)

    @property
    def roles(self) -> tuple:
        return ("z",) * self.n_disorder + ("A", "S") + ("b",) * len(self.bath_dims)


def site_layout(thermal: ThermalModel) -> SiteLayout:
    order = sorted(range(thermal.n_bath), key=lambda k: (abs(thermal.modes[k].omega), k))
    return SiteLayout(
        d_s=thermal.d_s,
        disorder_dims=tuple(d.basis_dim for d in thermal.disorder),
        bath_dims=tuple(thermal.modes[k].fock_dim for k in order),
        bath_order=tuple(order),
    )


def _check_layout(thermal, layout):
    if layout is None:
        return site_layout(thermal)
    ref = site_layout(thermal)
    if layout.d_s != ref.d_s or len(layout.bath_dims) != len(ref.bath_dims) or (
        len(layout.disorder_dims) != len(ref.disorder_dims)
    ):
        raise ModelError("site layout inconsistent with the model")
    return layout


# --------------------------------------------------------------------------
# local operators


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(np.complex128)


def position_like(dim: int) -> np.ndarray:
    """``b + b^dag`` in a truncated Fock basis."""
    a = annihilation(dim)
    return a + a.conj().T


def number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(np.complex128)


def _operator_basis(mats):
    """Factor ``mats[k] = sum_j coef[k, j] * basis[j]`` with a minimal basis."""
    if not mats:
        return np.zeros((0, 0)), []
    d = mats[0].shape[0]
    stack = np.array([m.reshape(-1) for m in mats])  # (K, d^2)
    u, s, vh = np.linalg.svd(stack, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((len(mats), 0)), []
    r = int(np.sum(s > s[0] * 1e-13))
    coef = u[:, :r] * s[:r]
    basis = [vh[j].reshape(d, d) for j in range(r)]
    return coef, basis


def build_hamiltonian(thermal: ThermalModel, layout: Optional[SiteLayout] = None) -> TTOperator:
    """MPO of the thermofield Hamiltonian in rad/fs.

    The electronic couplings of the bath (and of the disorder modes) are
    expanded on a minimal operator basis so that the MPO bond dimension is
    ``2 + rank`` on the bath side and ``1 + rank`` on the disorder side.
    """
    layout = _check_layout(thermal, layout)
    c = CM_TO_RADFS
    d = thermal.d_s
    eye_s = np.eye(d, dtype=np.complex128)

    # disorder side
    dis_mats = [dm.sigma / np.sqrt(2.0) * dm.operator for dm in thermal.disorder]
    dcoef, dbasis = _operator_basis(dis_mats)
    rl = len(dbasis)
    # bath side
    bath_mats = [thermal.modes[k].coupling / np.sqrt(2.0) for k in layout.bath_order]
    bcoef, bbasis = _operator_basis(bath_mats)
    rr = len(bbasis)

    chi_left = 1 + rl
    chi_right = 2 + rr
    last = chi_right - 1
    cores = []

    for j, dim in enumerate(layout.disorder_dims):
        w = np.zeros((chi_left, dim, dim, chi_left), dtype=np.complex128)
        eye = np.eye(dim)
        x = position_like(dim)
        w[0, :, :, 0] = eye
        for q in range(rl):
            w[0, :, :, 1 + q] = c * dcoef[j, q] * x
            w[1 + q, :, :, 1 + q] = eye
        cores.append(w)

    # ancilla: identity on every channel
    wa = np.zeros((chi_left, d, d, chi_left), dtype=np.complex128)
    for q in range(chi_left):
        wa[q, :, :, q] = eye_s
    cores.append(wa)

    ws = np.zeros((chi_left, d, d, chi_right), dtype=np.complex128)
    ws[0, :, :, 0] = eye_s
    ws[0, :, :, last] = c * thermal.eps
    for q in range(rr):
        ws[0, :, :, 1 + q] = bbasis[q]
    for q in range(rl):
        ws[1 + q, :, :, last] = dbasis[q]
    cores.append(ws)

    for j, k in enumerate(layout.bath_order):
        mode = thermal.modes[k]
        dim = layout.bath_dims[j]
        eye = np.eye(dim)
        w = np.zeros((chi_right, dim, dim, chi_right), dtype=np.complex128)
        w[0, :, :, 0] = eye
        w[0, :, :, last] = c * mode.omega * number(dim)
        for q in range(rr):
            w[1 + q, :, :, 1 + q] = eye
            w[1 + q, :, :, last] = c * bcoef[j, q] * position_like(dim)
        w[last, :, :, last] = eye
        cores.append(w)

    cores[0] = cores[0][:1]
    cores[-1] = cores[-1][..., last:last + 1]
    return TTOperator(tuple(cores))


def initial_state(thermal: ThermalModel, layout: Optional[SiteLayout] = None, rank=None) -> TTVector:
    """``|z_0>^D |Omega>_AS |0>^NB`` as a TT, optionally zero-padded to ``rank``.

    ``|Omega> = sum_i |i>_A |i>_S`` is unnormalized (squared norm ``d_S``) and
    lives on the single A-S bond of rank ``d_S``. Disorder modes start in the
    unit-variance Gaussian so that ``sigma x`` is distributed as N(0, sigma^2).
    """
    layout = _check_layout(thermal, layout)
    d = thermal.d_s
    cores = []
    for dim in layout.disorder_dims:
        cores.append(gaussian_encoding_state(dim).astype(np.complex128).reshape(1, dim, 1))
    ga = np.zeros((1, d, d), dtype=np.complex128)
    gs = np.zeros((d, d, 1), dtype=np.complex128)
    for i in range(d):
        ga[0, i, i] = 1.0
        gs[i, i, 0] = 1.0
    cores += [ga, gs]
    for dim in layout.bath_dims:
        v = np.zeros((1, dim, 1), dtype=np.complex128)
        v[0, 0, 0] = 1.0
        cores.append(v)
    state = TTVector(tuple(cores))
    if rank is not None:
        return pad_ranks(state, rank, center=0)
    return state


def occupation_tail(state: TTVector, layout: SiteLayout) -> np.ndarray:
    """Population of the highest Fock level on each bath site (normalized)."""
    from .tt_core import inner, orthogonalize

    out = []
    nrm2 = inner(state, state).real
    first = layout.system + 1
    for j in range(len(layout.bath_dims)):
        site = first + j
        v = orthogonalize(state, site)
        core = v.cores[site]
        out.append(float(np.sum(np.abs(core[:, -1, :]) ** 2) / nrm2))
    return np.array(out)


def check_fock_convergence(state: TTVector, layout: SiteLayout, threshold: float = 1e-6) -> float:
    tail = occupation_tail(state, layout)
    worst = float(tail.max()) if tail.size else 0.0
    if worst > threshold:
        logger.warning("largest top-Fock-level population %.2e exceeds %.0e", worst, threshold)
    return worst
