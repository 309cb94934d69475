import sys
import math
import logging
import argparse
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from . import __version__
from .commands import (EXPERIMENTS, cmd_coverage, cmd_energy_sweep, cmd_hops, cmd_rate_cdf, cmd_simulate,
                       cmd_tradeoff)
from .config import Config, P_LO_VARIANTS, REGION_HALF_WIDTH, build_network_config
from .coverage import PHASES
from .errors import ConfigError, ModelError
from .run_manager import RunManager
from .schemas import TransmissionMode

# Configure logging
logger = logging.getLogger(__name__)

# CLI flag -> NetworkConfig field
NETWORK_FLAGS = {
    'lam': ('--lambda', 'device density per km^2'),
    'lambda_bs': ('--lambda-bs', 'BS density per km^2'),
    'alpha': ('--alpha', 'path loss exponent (> 2)'),
    'p_bar_t': ('--p-bar-t', 'target received power in mW'),
    'p_t_max': ('--p-t-max', 'maximum transmit power in mW, "inf" for unlimited'),
    'eta': ('--eta', 'PA efficiency in (0, 1], required'),
    'p_o': ('--p-o', 'other circuit power in mW, required'),
    'p_lo': ('--p-lo', 'local oscillator power in mW'),
    'p_rx': ('--p-rx', 'receive chain power in mW'),
    'p_tx': ('--p-tx', 'transmit chain power in mW'),
    'w': ('--bandwidth', 'bandwidth in Hz'),
    'm_payload': ('--payload', 'payload per device in bits'),
}


def parse_grid(text: str) -> List[float]:
    """'a,b,c', 'lin:start:stop:n' or 'log:start:stop:n'"""
    try:
        if text.startswith(('lin:', 'log:')):
            kind, start, stop, count = text.split(':')
            space = np.linspace if kind == 'lin' else np.geomspace
            return [float(x) for x in space(float(start), float(stop), int(count))]
        return [math.inf if item.strip().lower() == 'inf' else float(item) for item in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid '{text}'")


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list '{text}'")


def parse_mode(text: str) -> TransmissionMode:
    try:
        return TransmissionMode(text.strip().lower().replace('-', '_'))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown mode '{text}', expected one of {', '.join(m.value for m in TransmissionMode)}")


def parse_modes(text: str) -> List[TransmissionMode]:
    return [parse_mode(item) for item in text.split(',')]


def _add_simulation_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--seed', type=int, default=Config.SEED, help='root seed of the deployments')
    parser.add_argument('--deployments', type=int, default=Config.SIM_DEPLOYMENTS,
                        help='number of independent deployments')
    parser.add_argument('--region', type=float, default=REGION_HALF_WIDTH,
                        help='half-width R of the square region [-R, R]^2 in km')
    parser.add_argument('--workers', type=int, default=Config.WORKERS, help='worker processes')


def build_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser"""
    parser = argparse.ArgumentParser(
        prog='m2m',
        description='Energy-optimal hierarchical M2M data aggregation: analytic model and Monte Carlo checks',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--config', default=Config.CONFIG_PATH,
                        help='flat KEY=value network config file (default: $M2M_CONFIG)')
    parser.add_argument('--run-dir', default=Config.RUN_DIR, help='directory receiving run outputs')
    parser.add_argument('--p-lo-variant', choices=P_LO_VARIANTS,
                        help="'fixed' (5 mW) or 'rx_quarter' (P_RX/4)")
    parser.add_argument('--plot', action='store_true', help='write a gnuplot script next to each CSV')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    for field, (flag, text) in NETWORK_FLAGS.items():
        parser.add_argument(flag, dest=field, type=float, help=text)

    sub = parser.add_subparsers(dest='command', required=True)

    energy = sub.add_parser('energy-sweep', help='total energy density over gamma for each K')
    energy.add_argument('--k', type=parse_int_list, default=[1, 2, 3, 4], help='stage counts, e.g. 1,2,3')
    energy.add_argument('--gamma-grid', type=parse_grid, default=parse_grid('log:0.001:0.499:60'))
    energy.add_argument('--mode', type=parse_mode, help='scale stage energy by SIR coverage of this mode')
    energy.add_argument('--t', type=float, help='SIR threshold used with --mode')

    coverage = sub.add_parser('coverage', help='SIR coverage over a threshold grid')
    coverage.add_argument('--mode', type=parse_mode, required=True)
    coverage.add_argument('--t-grid', type=parse_grid, default=parse_grid('log:0.01:100:41'))
    coverage.add_argument('--k', type=int, default=1)
    coverage.add_argument('--gamma', type=float, help='aggregator fraction (default: energy optimum)')
    coverage.add_argument('--phase', choices=PHASES, default='odd', help='half-duplex phase')

    rate = sub.add_parser('rate-cdf', help='rate coverage per mode, K and P_Tmax/P_bar_T')
    rate.add_argument('--modes', type=parse_modes, default=[TransmissionMode.SEQUENTIAL])
    rate.add_argument('--rho-grid', type=parse_grid, default=parse_grid('log:100:100000:31'),
                      help='rate thresholds in bit/s')
    rate.add_argument('--k', type=parse_int_list, default=[1, 2, 3])
    rate.add_argument('--pmax-ratios', type=parse_grid, default=[math.inf],
                      help='P_Tmax/P_bar_T values, e.g. 1,5,10,20')
    rate.add_argument('--gamma', type=float)
    rate.add_argument('--l-max', type=int, help='load PMF truncation (default: automatic)')
    rate.add_argument('--simulate', action='store_true', help='append Monte Carlo columns')
    _add_simulation_flags(rate)

    hops = sub.add_parser('hops', help='bounds on the number of stages')
    hops.add_argument('--epsilon-grid', type=parse_grid, default=parse_grid('lin:0.01:0.5:50'))
    hops.add_argument('--t-list', type=parse_grid, default=[0.01, 0.1, 1.0])
    hops.add_argument('--p-r-min', type=float, required=True, help='minimum received power in mW')
    hops.add_argument('--gamma', type=float, help='use the fixed-point lower bound at this gamma')

    tradeoff = sub.add_parser('tradeoff', help='outage against energy density per mode')
    tradeoff.add_argument('--k', type=int, default=2)
    tradeoff.add_argument('--modes', type=parse_modes, default=list(TransmissionMode))
    tradeoff.add_argument('--grid', type=parse_grid, default=parse_grid('log:0.01:100:41'),
                          help='SIR thresholds, or rate thresholds in bit/s with --kind rate')
    tradeoff.add_argument('--kind', choices=('sir', 'rate'), default='sir')
    tradeoff.add_argument('--gamma', type=float)
    tradeoff.add_argument('--phase', choices=PHASES, default='odd')
    tradeoff.add_argument('--l-max', type=int)

    simulate = sub.add_parser('simulate', help='Monte Carlo experiment next to its analytic prediction')
    simulate.add_argument('experiment', choices=EXPERIMENTS)
    simulate.add_argument('--k', type=int, default=1)
    simulate.add_argument('--gamma', type=float)
    simulate.add_argument('--modes', type=parse_modes, default=[TransmissionMode.SEQUENTIAL])
    simulate.add_argument('--grid', type=parse_grid, default=[1.0],
                          help='SIR thresholds (coverage), threshold (energy) or Laplace arguments (laplace)')
    simulate.add_argument('--gamma-grid', type=parse_grid, default=[0.05, 0.1, 0.2, 0.3],
                          help='aggregator fractions of the correlation experiment')
    simulate.add_argument('--phase', choices=PHASES, default='odd')
    _add_simulation_flags(simulate)

    return parser


def run(args: argparse.Namespace) -> None:
    """Dispatch a parsed command line"""
    overrides = {field: getattr(args, field) for field in NETWORK_FLAGS}
    cfg = build_network_config(overrides, args.config, args.p_lo_variant)
    runs = RunManager(args.run_dir)
    logger.info(f"Running {args.command} with config {cfg.fingerprint()}")

    if args.command == 'energy-sweep':
        _, path = cmd_energy_sweep(cfg, args.k, args.gamma_grid, runs, mode=args.mode, t=args.t, plot=args.plot)
    elif args.command == 'coverage':
        _, path = cmd_coverage(cfg, args.mode, args.t_grid, args.k, runs, args.gamma, args.phase, args.plot)
    elif args.command == 'rate-cdf':
        _, path = cmd_rate_cdf(cfg, args.modes, args.rho_grid, args.k, args.pmax_ratios, runs,
                               gamma=args.gamma, l_max=args.l_max, simulate=args.simulate,
                               n_deployments=args.deployments, seed=args.seed, region=args.region,
                               workers=args.workers, plot=args.plot)
    elif args.command == 'hops':
        _, path = cmd_hops(cfg, args.epsilon_grid, args.t_list, args.p_r_min, runs, args.gamma, args.plot)
    elif args.command == 'tradeoff':
        _, path = cmd_tradeoff(cfg, args.k, args.modes, args.grid, runs, kind=args.kind, gamma=args.gamma,
                               phase=args.phase, l_max=args.l_max, plot=args.plot)
    else:
        _, path = cmd_simulate(cfg, args.experiment, runs, seed=args.seed, n_deployments=args.deployments,
                               k_total=args.k, gamma=args.gamma, region=args.region, workers=args.workers,
                               modes=args.modes, grid=args.grid, gamma_grid=args.gamma_grid,
                               phase=args.phase, plot=args.plot)
    print(path)


def _validation_error(e: ValidationError) -> ConfigError:
    """Argument rejected by a pydantic model, reported like any other config error"""
    fields = "; ".join(f"{'.'.join(map(str, err['loc'])) or e.title}: {err['msg']}" for err in e.errors())
    return ConfigError(f"invalid {e.title}: {fields}", model=e.title)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == 'energy-sweep' and (args.mode is None) != (args.t is None):
        parser.error('energy-sweep needs --mode and --t together')
    logging.basicConfig(level=logging.DEBUG if args.verbose else Config.LOG_LEVEL)

    try:
        run(args)
    except ModelError as e:
        print(e.describe(), file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        error = _validation_error(e)
        print(error.describe(), file=sys.stderr)
        return error.exit_code
    return 0
