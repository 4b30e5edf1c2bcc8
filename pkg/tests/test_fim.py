import math

import numpy as np
import pytest

from stars_isac.fim import FimBlocks, Partition, SurfaceState, UnidentifiableError, crb_from_fim, crb_trace, fim_extended, fim_fixed_partition, root_crb_deg
from stars_isac.harness.verify import fim_finite_difference, random_instance, rel_dev
from stars_isac.model import make_rng


@pytest.mark.parametrize("seed", range(5))
def test_fim_matches_finite_difference(seed):
    rng = make_rng(seed)
    cfg, ch, part, u, X = random_instance(rng, 6, 3)
    R_x = X @ X.conj().T / 3
    F = fim_extended(1, ch, part, SurfaceState(u), R_x, 3, cfg.sigma2, check=False).full()
    assert rel_dev(F, fim_finite_difference(1, ch, part, u, X, cfg.sigma2)) < 1e-5


def test_fixed_partition_equals_extended():
    rng = make_rng(3)
    cfg, ch, part, u, X = random_instance(rng, 8, 4)
    R_x = X @ X.conj().T / 4
    a = fim_extended(2, ch, part, SurfaceState(u), R_x, 4, cfg.sigma2, check=False).full()
    b = fim_fixed_partition(2, ch, part, SurfaceState(u), R_x, 4, cfg.sigma2).full()
    assert rel_dev(a, b) < 1e-9


def test_fim_symmetric_psd():
    rng = make_rng(4)
    cfg, ch, part, u, X = random_instance(rng, 8, 4)
    F = fim_extended(1, ch, part, SurfaceState(u), X @ X.conj().T / 4, 4, cfg.sigma2, check=False).full()
    np.testing.assert_allclose(F, F.T, atol=1e-12 * np.abs(F).max())
    assert np.linalg.eigvalsh(F).min() > -1e-9 * np.abs(F).max()


def test_block_diagonal_crb():
    F = np.diag([4.0, 2.0, 7.0, 9.0])
    assert crb_trace(F) == pytest.approx(0.25 + 0.5)


def test_coupling_increases_crb():
    F = np.diag([4.0, 2.0, 7.0, 9.0])
    G = F.copy()
    G[0, 2] = G[2, 0] = 3.0
    assert crb_trace(G) > crb_trace(F)
    # Schur complement by hand
    assert crb_trace(G) == pytest.approx(1 / (4 - 9 / 7) + 0.5)


def test_zero_alpha_is_unidentifiable():
    rng = make_rng(5)
    cfg, ch, part, u, X = random_instance(rng, 6, 3)
    ch = ch.with_alpha([0, 0])
    blocks = fim_extended(1, ch, part, SurfaceState(u), X @ X.conj().T / 3, 3, cfg.sigma2, check=False)
    with pytest.raises(UnidentifiableError):
        crb_from_fim(blocks)


def test_partition_bounds():
    with pytest.raises(ValueError):
        Partition(5, 0)
    with pytest.raises(ValueError):
        Partition(5, 5)
    p = Partition(5, 2)
    assert p.N2 == 3 and p.a.sum() == 2 and p.b.sum() == 3


def test_root_crb_deg():
    assert root_crb_deg(math.radians(2.0) ** 2) == pytest.approx(2.0)
    assert FimBlocks.from_matrix(np.eye(4)).full().shape == (4, 4)
