import numpy as np
import pytest

import otident as ot

FIG_T_SCALE = np.array([[2.0, 0.8], [0.8, 0.5]])
FIG_GAUSS_COV = np.array([[1.0, 0.8], [0.8, 4.0]])


@pytest.fixture(scope="session")
def fig_bundle():
    """Normal-versus-t worked example at 128^2 (shared: expensive to build)."""
    return ot.reproduce_cdf_intersection_figure(128)


@pytest.fixture(scope="session")
def fig_maps(fig_bundle):
    t_map = ot.level_projection_map(fig_bundle.f_z, fig_bundle.f_zp)
    t_inv = ot.level_projection_map(fig_bundle.f_zp, fig_bundle.f_z)
    return t_map, t_inv


@pytest.fixture(scope="session")
def gauss_pair_1d():
    """N(0,1) versus N(0.5, 1.5^2) on a fine shared 1-D grid."""
    grid = ot.Grid((-7.0,), (8.0,), (3001,))
    f_z = ot.build_cdf_from_density(ot.AnalyticDensity.gaussian([0.0], [[1.0]]), grid)
    f_zp = ot.build_cdf_from_density(
        ot.AnalyticDensity.gaussian([0.5], [[2.25]]), grid)
    return f_z, f_zp


@pytest.fixture(scope="session")
def shifted_pair_1d():
    """N(0,1) versus N(1, 4) on a fine shared 1-D grid."""
    grid = ot.Grid((-8.0,), (10.0,), (3001,))
    f_src = ot.build_cdf_from_density(ot.AnalyticDensity.gaussian([0.0], [[1.0]]), grid)
    f_tgt = ot.build_cdf_from_density(ot.AnalyticDensity.gaussian([1.0], [[4.0]]), grid)
    return f_src, f_tgt


@pytest.fixture(scope="session")
def uniform_cdf_2d():
    grid = ot.Grid.square(0.0, 1.0, 65, dim=2)
    dens = ot.AnalyticDensity.uniform([0.0, 0.0], [1.0, 1.0])
    return ot.build_cdf_from_density(dens, grid, min_mass=1.0 - 1e-9)


@pytest.fixture(scope="session")
def sigma_gauss_cdf():
    """The worked example's Gaussian on its own near-full-mass grid."""
    grid = ot.Grid((-4.2, -8.4), (4.2, 8.4), (129, 129))
    dens = ot.AnalyticDensity.gaussian([0.0, 0.0], FIG_GAUSS_COV)
    return ot.build_cdf_from_density(dens, grid)
