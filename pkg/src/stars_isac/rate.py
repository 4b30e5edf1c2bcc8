"""Achievable rates, the closed-form ergodic approximation and QoS coefficients.

Convention: for a surface vector ``u`` and ``H_j = diag(h_j^H) G_r``,

    |h_j^H Theta G_r v|^2 = Re sum((H_j v v^H H_j^H) o U),   U = u u^H,

i.e. the coefficient multiplies ``U`` elementwise (equivalently
``Tr(conj(H_j V H_j^H) U)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fim import Partition
from .model import ChannelSet, SystemConfig, make_rng, normalize_phase, redraw_nlos


def gamma_target(R: float) -> float:
    """SINR target for a rate ``R`` under the 1/2 pre-log of the time-switching protocol."""
    return 2.0 ** (2.0 * R) - 1.0


def rate_from_sinr(sinr):
    return 0.5 * np.log2(1.0 + np.asarray(sinr, dtype=float))


@dataclass
class RateReport:
    instantaneous: np.ndarray
    ergodic_approx: np.ndarray | None = None
    ergodic_mc: np.ndarray | None = None
    ergodic_mc_ci: np.ndarray | None = None


def cascaded_row(channels: ChannelSet, k: int, u: np.ndarray) -> np.ndarray:
    """Row vector ``h_k^H Theta G_r`` (length M_r)."""
    return (channels.h[:, k].conj() * u) @ channels.G_r


def sinr(phase, channels: ChannelSet, config: SystemConfig, u: np.ndarray, powers, combiners) -> np.ndarray:
    users = config.phase_users(phase)
    P = np.asarray(powers, dtype=float)
    V = np.asarray(combiners, dtype=complex).reshape(len(users), -1)
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm combiner")
    V = V / norms[:, None]
    W = np.stack([cascaded_row(channels, k, u) for k in users])  # (K_i, M_r)
    G = np.abs(W @ V.T) ** 2  # G[j, k] = |w_j v_k|^2
    out = np.empty(len(users))
    for i in range(len(users)):
        interf = sum(P[j] * G[j, i] for j in range(len(users)) if j != i)
        out[i] = P[i] * G[i, i] / (interf + config.sigma2)
    return out


def instantaneous_rate(phase, channels: ChannelSet, config: SystemConfig, u: np.ndarray, powers, combiners) -> RateReport:
    """Per-user rate with interference from same-phase co-users."""
    return RateReport(rate_from_sinr(sinr(phase, channels, config, u, powers, combiners)))


def matched_filter(channels: ChannelSet, k: int, u: np.ndarray) -> np.ndarray:
    w = cascaded_row(channels, k, u)
    n = np.linalg.norm(w)
    if n < 1e-300:
        raise ValueError("effective channel is zero")
    return w.conj() / n


# ---------------------------------------------------------------------------
# Ergodic approximation
# ---------------------------------------------------------------------------


def ergodic_scale(config: SystemConfig, channels: ChannelSet, k: int) -> float:
    """Factor P-free of the bracket: L_k^2 L_r^2 / (sigma2 (1 + kappa)^2)."""
    return (channels.pathloss_h[k] * channels.pathloss_r) ** 2 / (config.sigma2 * (1.0 + config.kappa) ** 2)


def ergodic_bracket_matrix(config: SystemConfig, channels: ChannelSet, k: int, idx: np.ndarray | None = None) -> np.ndarray:
    """Q with bracket(U) = Re sum(Q o U) on the index set ``idx`` (default: all elements).

    Terms: kappa^2 |h^H Theta G|^2, kappa ||Theta G||_F^2, kappa M_r ||h^H Theta||^2, M_r ||Theta||_F^2,
    all for the LoS parts.
    """
    kap, M_r = config.kappa, config.M_r
    if idx is None:
        idx = np.arange(channels.N)
    hk = channels.los_h[idx, k]
    G = channels.los_G_r[idx]
    H = hk.conj()[:, None] * G
    Q = kap**2 * (H @ H.conj().T)
    diag = kap * np.sum(np.abs(G) ** 2, axis=1) + kap * M_r * np.abs(hk) ** 2 + M_r
    return Q + np.diag(diag)


def ergodic_snr(config: SystemConfig, channels: ChannelSet, k: int, U: np.ndarray, P_k: float, idx=None) -> float:
    Q = ergodic_bracket_matrix(config, channels, k, idx)
    bracket = float(np.real(np.sum(Q * U)))
    return P_k * ergodic_scale(config, channels, k) * bracket


def ergodic_rate_approx(config: SystemConfig, channels: ChannelSet, k: int, U: np.ndarray, P_k: float, idx=None) -> float:
    """Closed-form approximation of the ergodic rate of user ``k``."""
    return float(rate_from_sinr(ergodic_snr(config, channels, k, U, P_k, idx)))


def ergodic_rate_mc(config: SystemConfig, channels: ChannelSet, k: int, u: np.ndarray, P_k: float, n_draws: int = 10_000, seed: int = 0, chunk: int = 2000) -> tuple[float, float]:
    """Monte Carlo ergodic rate with the matched-filter combiner.

    Returns (mean, 95 % half-width); deterministic for a given seed.
    """
    if n_draws < 100:
        raise ValueError("n_draws must be at least 100")
    rng = make_rng(seed)
    rates = []
    left = n_draws
    while left > 0:
        m = min(chunk, left)
        hk, Gr = redraw_nlos(channels, rng, m, k)
        w = np.einsum("dn,dnm->dm", hk.conj() * u, Gr)
        snr = P_k * np.sum(np.abs(w) ** 2, axis=1) / config.sigma2
        rates.append(rate_from_sinr(snr))
        left -= m
    r = np.concatenate(rates)
    mean = float(math.fsum(r) / r.size)
    half = float(1.96 * r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else 0.0
    return mean, half


# ---------------------------------------------------------------------------
# QoS coefficients with combiners
# ---------------------------------------------------------------------------


@dataclass
class QosCoefficients:
    """Coefficient matrices for the instantaneous QoS rows of one phase.

    ``Q[i, j]`` (N x N) gives |h_j^H Theta A G_r v_i|^2 = Re sum(Q[i, j] o U),
    already weighted by ``p`` (or restricted by a fixed partition).
    """

    Q: np.ndarray  # (K_i, K_i, N, N)
    users: np.ndarray
    gamma: float
    sigma2: float

    def gains(self, U: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("ijab,ab->ij", self.Q, U))

    def slack(self, U: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Normalized slack (P_i g_ii - gamma(sum_j P_j g_ij + sigma2)) / (gamma sigma2 + sigma2)."""
        g = self.gains(U)
        P = np.asarray(P, dtype=float)
        out = np.empty(len(self.users))
        for i in range(len(self.users)):
            interf = sum(P[j] * g[i, j] for j in range(len(self.users)) if j != i)
            out[i] = (P[i] * g[i, i] - self.gamma * (interf + self.sigma2)) / ((1.0 + self.gamma) * self.sigma2)
        return out


def _selection_weights(N: int, partition: Partition | None, p: np.ndarray | None) -> np.ndarray:
    """Per-element weight w_ab = sum_n p_n [a < n][b < n] as an N x N matrix."""
    if p is None:
        a = partition.a if partition is not None else np.ones(N)
        return np.outer(a, a)
    p = np.asarray(p, dtype=float)
    # element a is a PE for every n > a, so the weight is sum_{n > max(a, b)} p_n
    tail = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])  # tail[m] = sum_{n >= m+1} p_n
    idx = np.arange(N)
    m = np.maximum(idx[:, None], idx[None, :])
    return tail[np.minimum(m, N - 1)]


def qos_coefficients(phase, channels: ChannelSet, config: SystemConfig, combiners, partition: Partition | None = None, p: np.ndarray | None = None) -> QosCoefficients:
    """Coefficient tables of the instantaneous QoS rows for fixed combiners."""
    users = config.phase_users(phase)
    V = np.asarray(combiners, dtype=complex).reshape(len(users), -1)
    W = _selection_weights(channels.N, partition, p)
    Q = np.zeros((len(users), len(users), channels.N, channels.N), dtype=complex)
    for i in range(len(users)):
        for j, kj in enumerate(users):
            Hv = channels.h[:, kj].conj() * (channels.G_r @ V[i])
            Q[i, j] = np.outer(Hv, Hv.conj()) * W
    return QosCoefficients(Q, users, gamma_target(config.R_qos), config.sigma2)


def combiner_gain_matrices(channels: ChannelSet, config: SystemConfig, phase, u: np.ndarray, partition: Partition | None = None, p: np.ndarray | None = None) -> np.ndarray:
    """Matrices Phi[j] (M_r x M_r) with |h_j^H Theta A G_r v|^2 = Re sum(Phi[j] o V), V = v v^H,
    averaged over the weights ``p`` when given."""
    users = config.phase_users(phase)
    N = channels.N
    if p is None:
        parts = [(1.0, partition.a if partition is not None else np.ones(N))]
    else:
        parts = [(pn, (np.arange(N) < n).astype(float)) for n, pn in enumerate(p, start=1) if pn != 0.0]
    Phi = np.zeros((len(users), config.M_r, config.M_r), dtype=complex)
    for w, a in parts:
        for j, kj in enumerate(users):
            row = (channels.h[:, kj].conj() * u * a) @ channels.G_r
            Phi[j] += w * np.outer(row, row.conj())
    return Phi
