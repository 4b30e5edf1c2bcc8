"""Benchmark schemes: communication-oriented coefficients and conventional RIS pairs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..fim import Partition, ProbingDesign
from ..model import ChannelSet, SystemConfig, normalize_phase
from ..opt_ao import AoResult, AoSchedule, ErgodicQos, coc_surface, run_ao, solve_waveform_power
from ..opt_pdl import PdlSchedule, run_pdl


def baseline_coc(phase, channels: ChannelSet, config: SystemConfig, partition: Partition, schedule: AoSchedule | None = None):
    """COC surface plus the CRB-optimal waveform/power for that fixed surface.

    Returns (u, design, crb).
    """
    phase = normalize_phase(phase)
    schedule = schedule or AoSchedule()
    u = coc_surface(phase, config, channels, partition, schedule)
    idx = np.arange(partition.N1)
    qos = ErgodicQos(config, channels, phase, idx)
    design = ProbingDesign.isotropic(config, phase)
    wr = solve_waveform_power(phase, config, channels, partition, u, ref_design=design, qos=qos, tol=schedule.solver_tol)
    return u, wr.design, wr.crb


def half_surface(channels: ChannelSet) -> ChannelSet:
    """Channels of a conventional RIS with half the elements at the same spot.

    Halves the columns or the rows of the planar array, preferring the
    split that keeps at least two of each (a single row or column cannot
    resolve both angles).
    """
    N_v, N_h = channels.N_v, channels.N_h
    rows, cols = np.divmod(np.arange(channels.N), N_h)
    options = []
    if N_h % 2 == 0:
        options.append((min(N_v, N_h // 2) >= 2, 0, cols < N_h // 2, N_v, N_h // 2))
    if N_v % 2 == 0:
        options.append((min(N_v // 2, N_h) >= 2, -1, rows < N_v // 2, N_v // 2, N_h))
    if not options:
        raise ValueError(f"cannot halve a {N_v}x{N_h} array")
    _, _, keep, nv, nh = max(options, key=lambda o: (o[0], o[1]))
    return replace(
        channels,
        G_r=channels.G_r[keep],
        G_t=channels.G_t[keep],
        h=channels.h[keep],
        los_G_r=channels.los_G_r[keep],
        los_G_t=channels.los_G_t[keep],
        los_h=channels.los_h[keep],
        N_v=nv,
        N_h=nh,
    )


def half_config(config: SystemConfig, sub: ChannelSet) -> SystemConfig:
    return config.replace(N=sub.N, N_v=sub.N_v)


def baseline_cris_ao(phase, config: SystemConfig, channels: ChannelSet, partition: Partition, schedule: AoSchedule | None = None) -> AoResult:
    """Half-size single-function RIS with N1/2 PEs and N2/2 sensors, optimised by AO."""
    if partition.N1 % 2 or partition.N2 % 2:
        raise ValueError("C-RIS-AO needs even N1 and N2")
    sub = half_surface(channels)
    return run_ao(phase, half_config(config, sub), sub, Partition(sub.N, partition.N1 // 2), schedule=schedule)


def baseline_cris_pdl(phase, config: SystemConfig, channels: ChannelSet, schedule: PdlSchedule | None = None):
    """Half-size single-function RIS whose PE count is chosen by PDL."""
    sub = half_surface(channels)
    return run_pdl(phase, half_config(config, sub), sub, schedule)


def baseline_cris(mode: str, phase, config: SystemConfig, channels: ChannelSet, partition: Partition | None = None, schedule=None):
    if mode == "ao":
        if partition is None:
            raise ValueError("C-RIS-AO needs a partition")
        return baseline_cris_ao(phase, config, channels, partition, schedule)
    if mode == "pdl":
        return baseline_cris_pdl(phase, config, channels, schedule)
    raise ValueError(f"unknown C-RIS mode {mode!r}")

