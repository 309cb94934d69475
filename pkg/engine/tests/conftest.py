import pytest

from m2m.config import build_network_config
from m2m.model import build_stage_plan

# eta and p_o have no published value; tests pin them explicitly
ETA = 0.5
P_O = 50.0


@pytest.fixture
def table_cfg():
    """Reference deployment with unlimited transmit power"""
    return build_network_config({'eta': ETA, 'p_o': P_O})


@pytest.fixture
def capped_cfg(table_cfg):
    """Reference deployment with P_Tmax = 10 P_bar_T"""
    return table_cfg.updated(p_t_max=10.0)


@pytest.fixture
def small_cfg(table_cfg):
    """Light loads (ten devices per BS) for quadrature-heavy rate tests"""
    return table_cfg.updated(lam=100.0, lambda_bs=10.0)


@pytest.fixture
def mc_cfg(table_cfg):
    """Dense BS tier so a 5x5 km window holds hundreds of interior cells"""
    return table_cfg.updated(lam=400.0, lambda_bs=40.0)


@pytest.fixture
def three_stage_plan(table_cfg):
    return build_stage_plan(table_cfg, 0.1, 3)
