"""Scenario geometry, path loss, steering vectors and channel synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

# Position of the surface relative to the BS (m); the BS sits at the origin.
BS_DISTANCE = 50.0
BS_BEARING = math.radians(45.0)
# Direction of the BS as seen from the surface (azimuth, elevation).
BS_AZIMUTH_AT_SURFACE = math.radians(225.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class Angles:
    """Azimuth and elevation in radians."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise ValueError("angles must be finite")
        if not -math.pi / 2 < self.elevation < math.pi / 2:
            raise ValueError("elevation must lie strictly inside (-pi/2, pi/2)")

    @classmethod
    def from_degrees(cls, azimuth: float, elevation: float) -> "Angles":
        return cls(math.radians(azimuth), math.radians(elevation))

    def degrees(self) -> tuple[float, float]:
        return math.degrees(self.azimuth), math.degrees(self.elevation)


@dataclass(frozen=True)
class SystemConfig:
    """Full scenario description; all quantities linear / radians."""

    M_t: int = 8
    M_r: int = 8
    K: int = 2
    K1: int = 1
    N: int = 20
    N_v: int = 5
    T: int = 10
    sigma2: float = float(dbm_to_watt(-115.0))
    L0: float = 1e-3
    alpha_comm: float = 2.2
    alpha_sense: float = 2.5
    kappa: float = 10.0
    P_U_max: float = float(dbm_to_watt(25.0))
    P_BS_max: float = float(dbm_to_watt(35.0))
    R_qos: float = 1.0
    user_distances: tuple = (20.0, 20.0)
    target_angles: tuple = (Angles.from_degrees(342.0, 30.0), Angles.from_degrees(18.0, 30.0))
    target_rcs: tuple | None = None
    target_distance: float = 10.0
    bs_distance: float = BS_DISTANCE

    def __post_init__(self):
        self.validate()

    @property
    def N_h(self) -> int:
        return self.N // self.N_v

    @property
    def K2(self) -> int:
        return self.K - self.K1

    def validate(self) -> None:
        if self.N_v < 1 or self.N % self.N_v:
            raise ValueError(f"N={self.N} is not a multiple of N_v={self.N_v}")
        if self.N < 1 or self.M_t < 1 or self.M_r < 1 or self.T < 1:
            raise ValueError("array sizes and T must be positive")
        if not 1 <= self.K1 <= self.K:
            raise ValueError("need 1 <= K1 <= K")
        if len(self.user_distances) != self.K:
            raise ValueError("one distance per user required")
        if min(self.user_distances) <= 0 or self.sigma2 <= 0 or self.L0 <= 0:
            raise ValueError("distances, noise and reference path loss must be positive")
        if self.P_U_max < 0 or self.P_BS_max < 0:
            raise ValueError("power budgets must be nonnegative")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if len(self.target_angles) != 2:
            raise ValueError("one target per phase required")
        if self.target_rcs is not None and len(self.target_rcs) != 2:
            raise ValueError("one reflection coefficient per target required")

    def replace(self, **kw) -> "SystemConfig":
        return replace(self, **kw)

    def phase_users(self, phase: int) -> np.ndarray:
        """Indices of the users served in ``phase`` (1 or 2)."""
        phase = normalize_phase(phase)
        return np.arange(self.K1) if phase == 1 else np.arange(self.K1, self.K)

    def comm_pathloss(self, d: float) -> float:
        return math.sqrt(self.L0 * d ** (-self.alpha_comm))

    def rcs(self, phase: int) -> complex:
        phase = normalize_phase(phase)
        if self.target_rcs is not None:
            return complex(self.target_rcs[phase - 1])
        return math.sqrt(self.L0**2 * self.target_distance ** (-2 * self.alpha_sense)) + 0j


def normalize_phase(phase) -> int:
    if phase in (1, "1", "I", "i", "R", "r"):
        return 1
    if phase in (2, "2", "II", "ii", "T", "t"):
        return 2
    raise ValueError(f"unknown phase {phase!r}")


# ---------------------------------------------------------------------------
# Steering vectors
# ---------------------------------------------------------------------------


def _index_terms(N_v: int, N_h: int) -> tuple[np.ndarray, np.ndarray]:
    if N_v < 1 or N_h < 1:
        raise ValueError("N_v and N_h must be positive")
    n = np.arange(N_v * N_h)
    nbar = n // N_h
    return nbar.astype(float), (n - N_h * nbar).astype(float)


def steering(angles: Angles, N_v: int, N_h: int) -> np.ndarray:
    """UPA response of the surface; element ``n`` (0-based) has phase
    pi * (nbar cos(el) sin(az) + (n - N_h nbar) sin(el))."""
    nbar, col = _index_terms(N_v, N_h)
    az, el = angles.azimuth, angles.elevation
    return np.exp(1j * np.pi * (nbar * np.cos(el) * np.sin(az) + col * np.sin(el)))


def steering_grid(az: np.ndarray, el: np.ndarray, N_v: int, N_h: int) -> np.ndarray:
    """Steering vectors for arrays of angles (radians); returns (..., N)."""
    nbar, col = _index_terms(N_v, N_h)
    az = np.asarray(az, dtype=float)[..., None]
    el = np.asarray(el, dtype=float)[..., None]
    return np.exp(1j * np.pi * (nbar * np.cos(el) * np.sin(az) + col * np.sin(el)))


def steering_derivative(angles: Angles, N_v: int, N_h: int, wrt: str) -> np.ndarray:
    """Derivative of :func:`steering` w.r.t. azimuth or elevation."""
    nbar, col = _index_terms(N_v, N_h)
    az, el = angles.azimuth, angles.elevation
    eps = steering(angles, N_v, N_h)
    if wrt == "azimuth":
        d = 1j * np.pi * nbar * np.cos(el) * np.cos(az)
    elif wrt == "elevation":
        d = 1j * np.pi * (-nbar * np.sin(el) * np.sin(az) + col * np.cos(el))
    else:
        raise ValueError("wrt must be 'azimuth' or 'elevation'")
    return eps * d


def ula_steering(M: int, theta: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(M) * np.sin(theta))


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


@dataclass
class ChannelSet:
    G_r: np.ndarray  # N x M_r
    G_t: np.ndarray  # N x M_t
    h: np.ndarray  # N x K, column k is h_{k,S}
    los_G_r: np.ndarray
    los_G_t: np.ndarray
    los_h: np.ndarray
    pathloss_r: float
    pathloss_t: float
    pathloss_h: np.ndarray  # (K,)
    alpha: np.ndarray  # (2,) complex, one per phase
    target_angles: tuple
    user_azimuths: np.ndarray
    N_v: int
    N_h: int
    kappa: float

    @property
    def N(self) -> int:
        return self.G_r.shape[0]

    def target(self, phase) -> tuple[Angles, complex]:
        i = normalize_phase(phase) - 1
        return self.target_angles[i], complex(self.alpha[i])

    def with_alpha(self, alpha) -> "ChannelSet":
        return replace(self, alpha=np.asarray(alpha, dtype=complex))


def rician(L: float, kappa: float, los: np.ndarray, nlos: np.ndarray) -> np.ndarray:
    if math.isinf(kappa):
        return L * los
    return L * (math.sqrt(kappa / (1 + kappa)) * los + math.sqrt(1 / (1 + kappa)) * nlos)


def cscg(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex Gaussian entries with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def los_components(config: SystemConfig, user_azimuths: np.ndarray):
    N_v, N_h = config.N_v, config.N_h
    eps_bs = steering(Angles(BS_AZIMUTH_AT_SURFACE, 0.0), N_v, N_h)
    los_G_r = np.outer(eps_bs, ula_steering(config.M_r, BS_BEARING))
    los_G_t = np.outer(eps_bs, ula_steering(config.M_t, BS_BEARING))
    los_h = np.stack([steering(Angles(float(a), 0.0), N_v, N_h) for a in user_azimuths], axis=1)
    return los_G_r, los_G_t, los_h


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))


def synthesize_channels(config: SystemConfig, rng_seed: int) -> ChannelSet:
    """One Rician realization of every communication channel plus targets.

    Users sit on circles around the surface at uniform random azimuth;
    the NLoS parts are i.i.d. CN(0, 1).
    """
    rng = make_rng(rng_seed)
    N = config.N
    user_az = rng.uniform(0.0, 2 * math.pi, size=config.K)
    los_G_r, los_G_t, los_h = los_components(config, user_az)
    L_bs = config.comm_pathloss(config.bs_distance)
    L_h = np.array([config.comm_pathloss(d) for d in config.user_distances])
    G_r = rician(L_bs, config.kappa, los_G_r, cscg(rng, (N, config.M_r)))
    G_t = rician(L_bs, config.kappa, los_G_t, cscg(rng, (N, config.M_t)))
    nl_h = cscg(rng, (N, config.K))
    h = np.stack([rician(L_h[k], config.kappa, los_h[:, k], nl_h[:, k]) for k in range(config.K)], axis=1)
    alpha = np.array([config.rcs(1), config.rcs(2)], dtype=complex)
    return ChannelSet(
        G_r=G_r,
        G_t=G_t,
        h=h,
        los_G_r=los_G_r,
        los_G_t=los_G_t,
        los_h=los_h,
        pathloss_r=L_bs,
        pathloss_t=L_bs,
        pathloss_h=L_h,
        alpha=alpha,
        target_angles=tuple(config.target_angles),
        user_azimuths=user_az,
        N_v=config.N_v,
        N_h=config.N_h,
        kappa=config.kappa,
    )


def redraw_nlos(channels: ChannelSet, rng: np.random.Generator, n_draws: int, k: int):
    """Fresh NLoS draws of (h_k, G_r) keeping LoS and path loss fixed.

    Returns arrays of shape (n_draws, N) and (n_draws, N, M_r).
    """
    N, M_r = channels.G_r.shape
    kap = channels.kappa
    hk = rician(channels.pathloss_h[k], kap, channels.los_h[:, k][None], cscg(rng, (n_draws, N)))
    Gr = rician(channels.pathloss_r, kap, channels.los_G_r[None], cscg(rng, (n_draws, N, M_r)))
    return hk, Gr
