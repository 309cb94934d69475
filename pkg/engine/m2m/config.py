import os
import math
import logging
from typing import Any, Dict, Optional

from dotenv import load_dotenv, dotenv_values
from pydantic import ValidationError

from .errors import ConfigError
from .schemas import NetworkConfig

load_dotenv()

# Configure logging
logger = logging.getLogger(__name__)


class Config:
    """Run configuration class with environment-based settings"""

    # Network config file (flat KEY=value document)
    CONFIG_PATH = os.getenv('M2M_CONFIG')

    # Output settings
    RUN_DIR = os.getenv('M2M_RUN_DIR', 'runs')
    LOG_LEVEL = os.getenv('M2M_LOG_LEVEL', 'INFO').upper()

    # Simulation settings
    WORKERS = int(os.getenv('M2M_WORKERS', '1'))
    SEED = int(os.getenv('M2M_SEED', '20170101'))
    SIM_DEPLOYMENTS = int(os.getenv('M2M_SIM_DEPLOYMENTS', '100'))

    # Load PMF truncation (l = 0..L)
    L_MAX = int(os.getenv('M2M_L_MAX', '20'))

    @classmethod
    def get_config(cls):
        """Return configuration as dictionary for backward compatibility"""
        return {
            'CONFIG_PATH': cls.CONFIG_PATH,
            'RUN_DIR': cls.RUN_DIR,
            'LOG_LEVEL': cls.LOG_LEVEL,
            'WORKERS': cls.WORKERS,
            'SEED': cls.SEED,
            'SIM_DEPLOYMENTS': cls.SIM_DEPLOYMENTS,
            'L_MAX': cls.L_MAX,
        }


def get_config():
    """Legacy function for backward compatibility"""
    return Config.get_config()


# Simulation parameters of the reference deployment; eta and p_o have no
# published value and must come from the caller.
PHYSICAL_DEFAULTS = {
    'lambda': 1e3,        # devices per km^2
    'lambda_bs': 1.0,     # BSs per km^2
    'alpha': 4.0,
    'p_bar_t': 1.0,       # mW
    'p_t_max': math.inf,  # mW
    'p_lo': 5.0,          # mW
    'p_rx': 200.0,        # mW
    'p_tx': 100.0,        # mW
    'w': 1e5,             # Hz
    'm_payload': 100.0,   # bits
}

REGION_HALF_WIDTH = 2.5  # km

P_LO_VARIANTS = ('fixed', 'rx_quarter')


def physical_defaults() -> Dict[str, Any]:
    """Physical defaults of the reference deployment (without eta and p_o)"""
    return dict(PHYSICAL_DEFAULTS)


def apply_p_lo_variant(values: Dict[str, Any], variant: str) -> Dict[str, Any]:
    """Set p_lo to 5 mW ('fixed') or to a quarter of the receive power ('rx_quarter')"""
    if variant not in P_LO_VARIANTS:
        raise ConfigError(f"Unknown p_lo variant '{variant}'", allowed=",".join(P_LO_VARIANTS))
    updated = dict(values)
    if variant == 'rx_quarter':
        updated['p_lo'] = float(updated['p_rx']) / 4.0
    else:
        updated['p_lo'] = PHYSICAL_DEFAULTS['p_lo']
    return updated


def _parse_value(key: str, raw: Optional[str]) -> float:
    if raw is None or raw.strip() == '':
        raise ConfigError(f"Config key '{key}' has no value")
    text = raw.strip().lower()
    if text in ('inf', '+inf', 'infinity'):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"Config key '{key}' is not a number: {raw}")


def read_config_file(path: str) -> Dict[str, float]:
    """Read a flat KEY=value network config file"""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    for key, raw in dotenv_values(path).items():
        name = key.strip().lower()
        if name not in NetworkConfig.model_fields and name != 'lambda':
            raise ConfigError(f"Unknown config key '{key}' in {path}")
        values[name] = _parse_value(key, raw)
    logger.info(f"Loaded {len(values)} config values from {path}")
    return values


def build_network_config(overrides: Optional[Dict[str, Any]] = None,
                         path: Optional[str] = None,
                         p_lo_variant: Optional[str] = None) -> NetworkConfig:
    """Layer the physical defaults, the config file and explicit overrides into a NetworkConfig"""
    values = physical_defaults()
    path = path or Config.CONFIG_PATH
    if path:
        values.update(read_config_file(path))
    if p_lo_variant:
        values = apply_p_lo_variant(values, p_lo_variant)
    for key, value in (overrides or {}).items():
        if value is not None:
            values['lambda' if key == 'lam' else key] = value

    missing = [key for key in ('eta', 'p_o') if key not in values]
    if missing:
        raise ConfigError(
            f"Missing required config values with no published default: {', '.join(missing)}"
        )
    try:
        return NetworkConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"Invalid network config: {e.errors()[0]['msg']}")
