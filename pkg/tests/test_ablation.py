import numpy as np
import pytest

from trafficpinn.ablation import split_spacetime, split_temporal
from trafficpinn.lwr import NondimCoeffs
from trafficpinn.network import Architecture, PinnNetwork

# negligible B keeps the residual proportional to the differentiated axis
COEFFS = NondimCoeffs(A=1.0, B=1e-9, C=1.0)

FAST = dict(warm_epochs=10, warm_points=50, n_int=16)


def sine_net(axis: str) -> PinnNetwork:
    # u = 0.5*sin(6*axis - 0.9) exactly, so the squared-residual profile is
    # proportional to cos^2(6*axis - 0.9) along that axis and flat along the
    # other; the only eligible valley sits at 6*axis - 0.9 = pi/2
    row = [6.0, 0.0] if axis == "x" else [0.0, 6.0]
    w = np.array([[0.5 * np.cos(0.9)], [-0.5 * np.sin(0.9)]])
    return PinnNetwork(fourier=np.array([row]), layers=[(w, np.zeros(1))], seed=0)


def constant_net(c: float) -> PinnNetwork:
    return PinnNetwork(fourier=np.zeros((1, 2)),
                       layers=[(np.zeros((2, 1)), np.array([c]))], seed=0)


def test_temporal_split_at_deepest_valley():
    part = split_temporal(sine_net("t"), COEFFS, seed=5, **FAST)
    assert part is not None
    assert part.direction == "temporal"
    assert part.splits_x == ()
    # valley index 41 on the 100-point profile
    assert part.splits_t == (pytest.approx(41 / 99),)
    assert len(part.nets) == 2
    assert [s.orientation for s in part.interfaces] == ["temporal"]


def test_temporal_flat_profile_falls_back():
    assert split_temporal(constant_net(0.3), COEFFS, seed=5, **FAST) is None


def test_temporal_respects_subdomain_cap():
    part = split_temporal(sine_net("t"), COEFFS, seed=5, max_subdomains=2, **FAST)
    assert len(part.nets) == 2


def test_spacetime_peaked_x_flat_t():
    part = split_spacetime(sine_net("x"), COEFFS, seed=5, **FAST)
    assert part.direction == "spacetime"
    # valley index 82 on the 200-point profile; flat R(t) takes the 0.5 fallback
    assert part.splits_x == (pytest.approx(82 / 199),)
    assert part.splits_t == (0.5,)
    assert len(part.nets) == 4
    assert len(part.interfaces) == 4


def test_spacetime_interface_roles():
    part = split_spacetime(sine_net("x"), COEFFS, seed=5, **FAST)
    spatial = [s for s in part.interfaces if s.orientation == "spatial"]
    temporal = [s for s in part.interfaces if s.orientation == "temporal"]
    assert len(spatial) == 2 and len(temporal) == 2
    # trainable shock speeds start at zero and exist on spatial segments only
    assert all(s.s == 0.0 for s in spatial)
    assert {s.position for s in temporal} == {0.5}


def test_spacetime_flat_everywhere_uses_equal_spacing():
    part = split_spacetime(constant_net(0.3), COEFFS, seed=5, **FAST)
    assert part.splits_x == (0.5,)
    assert part.splits_t == (0.5,)


def test_split_deterministic():
    a = split_spacetime(sine_net("x"), COEFFS, seed=9, **FAST)
    b = split_spacetime(sine_net("x"), COEFFS, seed=9, **FAST)
    for na, nb in zip(a.nets, b.nets):
        for (wa, ba), (wb, bb) in zip(na.layers, nb.layers):
            assert np.array_equal(wa, wb) and np.array_equal(ba, bb)


def test_child_arch_override():
    arch = Architecture((2, 16, 8, 1))
    part = split_temporal(sine_net("t"), COEFFS, seed=5, child_arch=arch, **FAST)
    for net in part.nets:
        assert net.fourier.shape == (8, 2)
        assert net.layers[0][0].shape == (16, 16)
        assert net.layers[-1][0].shape == (8, 1)
