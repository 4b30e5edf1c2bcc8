"""Echo simulation and maximum-likelihood DoA estimation at the sensors.

For a PE/sensor split the noiseless echo is ``alpha * b(psi) z(psi)^T`` with
``b`` the sensor part of the steering vector and ``z = X^T Theta a(psi)``.
Eliminating ``alpha`` by least squares gives the concentrated spectrum

    L(psi) = |b^H Y conj(z)|^2 / (||b||^2 ||z||^2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .fim import Partition, ProbingDesign
from .model import Angles, ChannelSet, SystemConfig, cscg, make_rng, normalize_phase, steering, steering_grid


@dataclass
class MleSpectrum:
    azimuth_deg: np.ndarray  # grid, ascending
    elevation_deg: np.ndarray
    values: np.ndarray  # (n_az, n_el), nonnegative
    coarse_argmax: tuple[float, float]
    estimate: tuple[float, float]  # refined (azimuth, elevation) in degrees
    alpha_hat: complex
    skipped: int = 0

    def to_rows(self):
        for i, az in enumerate(self.azimuth_deg):
            for j, el in enumerate(self.elevation_deg):
                yield float(az), float(el), float(self.values[i, j])


def write_spectrum_csv(spectrum: MleSpectrum, fh) -> None:
    """Write (azimuth, elevation, value) rows to an open text file."""
    w = csv.writer(fh)
    w.writerow(["azimuth_deg", "elevation_deg", "value"])
    for az, el, v in spectrum.to_rows():
        w.writerow([f"{az:.12g}", f"{el:.12g}", f"{v:.12g}"])


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


def _gaussian_with_cov(R: np.ndarray, T: int, rng) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    L = V * np.sqrt(np.maximum(w, 0.0))
    return L @ cscg(rng, (R.shape[0], T))


def simulate_frames(phase, channels: ChannelSet, config: SystemConfig, design: ProbingDesign, T: int | None = None, seed: int = 0) -> np.ndarray:
    """Signal impinging on the surface (N x T): user symbols through h in phase I plus the BS probing."""
    phase = normalize_phase(phase)
    T = T or config.T
    rng = make_rng(seed)
    S = _gaussian_with_cov(np.asarray(design.R_s), T, rng)  # M_t x T
    X = channels.G_t @ S
    if phase == 1:
        users = config.phase_users(1)
        C = cscg(rng, (len(users), T))
        X = X + (channels.h[:, users] * np.sqrt(np.asarray(design.P, float))) @ C
    return X


def simulate_echo(phase, channels: ChannelSet, partition: Partition, u: np.ndarray, X: np.ndarray, sigma2: float, seed: int = 0) -> np.ndarray:
    """Echo at the N2 sensors: alpha b a^T Theta X plus CN(0, sigma2) noise."""
    angles, alpha = channels.target(phase)
    eps = steering(angles, channels.N_v, channels.N_h)
    n1 = partition.N1
    z = X[:n1].T @ (u[:n1] * eps[:n1])  # length T
    Y = alpha * np.outer(eps[n1:], z)
    if sigma2 > 0:
        Y = Y + math.sqrt(sigma2) * cscg(make_rng(seed), Y.shape)
    return Y


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------


def _spectrum_points(az: np.ndarray, el: np.ndarray, Y: np.ndarray, Xpe: np.ndarray, upe: np.ndarray, n1: int, N_v: int, N_h: int):
    E = steering_grid(az, el, N_v, N_h)  # (..., N)
    Ea, Eb = E[..., :n1], E[..., n1:]
    Z = (Ea * upe) @ Xpe  # (..., T)
    W = Eb.conj() @ Y  # (..., T)
    num = np.sum(W * Z.conj(), axis=-1)
    zz = np.sum(np.abs(Z) ** 2, axis=-1)
    bb = Eb.shape[-1]
    return num, zz, bb


def spectrum_value(psi_deg: tuple[float, float], Y, X, u, partition: Partition, N_v: int, N_h: int) -> tuple[float, complex]:
    n1 = partition.N1
    num, zz, bb = _spectrum_points(np.radians([psi_deg[0]]), np.radians([psi_deg[1]]), Y, X[:n1], u[:n1], n1, N_v, N_h)
    if zz[0] <= 0:
        return 0.0, 0j
    return float(np.abs(num[0]) ** 2 / (bb * zz[0])), complex(num[0] / (bb * zz[0]))


def mle_spectrum(
    Y: np.ndarray,
    X: np.ndarray,
    u: np.ndarray,
    partition: Partition,
    N_v: int,
    N_h: int,
    step_deg: float = 0.5,
    az_range=(-90.0, 90.0),
    el_range=(-89.5, 89.5),
    refine_tol_deg: float = 1e-5,
    chunk: int = 8192,
) -> MleSpectrum:
    """Coarse grid search then alternating bounded scalar refinement."""
    n1 = partition.N1
    if Y.shape[0] != partition.N2:
        raise ValueError("echo must have one row per sensor")
    az_g = np.arange(az_range[0], az_range[1] + 0.5 * step_deg, step_deg)
    el_g = np.arange(el_range[0], el_range[1] + 0.5 * step_deg, step_deg)
    AZ, EL = np.meshgrid(np.radians(az_g), np.radians(el_g), indexing="ij")
    flat_az, flat_el = AZ.ravel(), EL.ravel()
    vals = np.zeros(flat_az.size)
    skipped = 0
    Xpe, upe = X[:n1], u[:n1]
    for s in range(0, flat_az.size, chunk):
        num, zz, bb = _spectrum_points(flat_az[s : s + chunk], flat_el[s : s + chunk], Y, Xpe, upe, n1, N_v, N_h)
        ok = zz > 1e-300
        skipped += int(np.count_nonzero(~ok))
        v = np.zeros(zz.size)
        v[ok] = np.abs(num[ok]) ** 2 / (bb * zz[ok])
        vals[s : s + chunk] = v
    vals = vals.reshape(AZ.shape)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)  # first max: smallest (az, el)
    coarse = (float(az_g[i]), float(el_g[j]))

    def neg(az, el):
        return -spectrum_value((az, el), Y, X, u, partition, N_v, N_h)[0]

    az, el = coarse
    lo_az, hi_az = max(az_range[0], az - step_deg), min(az_range[1], az + step_deg)
    lo_el, hi_el = max(el_range[0], el - step_deg), min(el_range[1], el + step_deg)
    for _ in range(100):
        a_new = minimize_scalar(lambda a: neg(a, el), bounds=(lo_az, hi_az), method="bounded", options={"xatol": refine_tol_deg}).x
        e_new = minimize_scalar(lambda e: neg(a_new, e), bounds=(lo_el, hi_el), method="bounded", options={"xatol": refine_tol_deg}).x
        moved = max(abs(a_new - az), abs(e_new - el))
        # never accept a refinement step that lowers the spectrum
        if neg(a_new, e_new) <= neg(az, el):
            az, el = float(a_new), float(e_new)
        if moved < refine_tol_deg:
            break
    _, alpha_hat = spectrum_value((az, el), Y, X, u, partition, N_v, N_h)
    return MleSpectrum(az_g, el_g, vals, coarse, (az, el), alpha_hat, skipped)


def wrap_azimuth_deg(az: float) -> float:
    """Map an azimuth to (-180, 180]."""
    a = (az + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def angle_error_deg(estimate: tuple[float, float], truth: Angles) -> tuple[float, float]:
    az_t, el_t = truth.degrees()
    return abs(wrap_azimuth_deg(estimate[0] - az_t)), abs(estimate[1] - el_t)
