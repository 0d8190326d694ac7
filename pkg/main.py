import argparse
import logging
import sys
from pathlib import Path
from typing import NoReturn

from core.config.config import Config
from core.config.i18n import _
from core.config.logging import setup_logging
from core.config.settings import CONFIG_FILE_PATH, EXPERIMENT_IDS, PROFILES
from core.services.processing_service import ProcessingService
from core.utils.exceptions import ConfigurationError, DivergenceError, PoisonedRunError, UsageError

setup_logging()
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class _ArgumentParser(argparse.ArgumentParser):
    """Erros de argumentos passam a UsageError (código de saída 1)."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=CONFIG_FILE_PATH, help=_('Configuration file (.ini)'))
    common.add_argument('--seed', type=int, help=_('Top-level random seed'))
    common.add_argument('--scale', choices=sorted(PROFILES), help=_('Hyper-parameter profile'))
    common.add_argument('--out', type=Path, help=_('Output directory (default: run.output_dir)'))
    common.add_argument(
        '--set', action='append', default=[], metavar='SECTION.KEY=VALUE', help=_('Override a configuration key')
    )

    parser = _ArgumentParser(prog='quad-fdi', description=_('Quadrotor actuator fault detection laboratory'))
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_ArgumentParser)

    commands.add_parser('gen-data', parents=[common], help=_('Generate a training dataset'))

    train = commands.add_parser('train', parents=[common], help=_('Train a fault detection network'))
    train.add_argument('--dataset', type=Path, help=_('Pre-generated dataset (default: synthesize per epoch)'))

    evaluate = commands.add_parser('eval', parents=[common], help=_('Run an evaluation experiment'))
    evaluate.add_argument('--checkpoint', type=Path, action='append', default=[], required=True)
    evaluate.add_argument('--experiment', required=True, help=', '.join(EXPERIMENT_IDS))

    compare = commands.add_parser('compare', parents=[common], help=_('Merge experiment reports'))
    compare.add_argument('reports', type=Path, nargs='*', help=_('Report CSV files to merge'))
    compare.add_argument('--checkpoint', type=Path, action='append', default=[])
    compare.add_argument('--experiment', help=', '.join(EXPERIMENT_IDS))

    simulate = commands.add_parser('simulate', parents=[common], help=_('Export one simulated trajectory'))
    simulate.add_argument('--motor', type=int, choices=range(5), default=0, help=_('Faulty motor (0 = no fault)'))
    simulate.add_argument('--level', type=float, default=0.0, help=_('Remaining effectiveness of the faulty motor'))

    residuals = commands.add_parser('residuals', parents=[common], help=_('Tabulate the residuals of a trajectory'))
    residuals.add_argument('trajectory', type=Path, help=_('Trajectory file written by simulate'))

    commands.add_parser('check-symmetry', parents=[common], help=_('Report rotation equivariance gaps'))
    commands.add_parser('init-config', parents=[common], help=_('Write a default configuration file'))
    return parser


def parse_overrides(args: argparse.Namespace) -> dict[str, str]:
    """Converte --seed, --scale e --set em chaves 'secção.chave'."""
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition('=')
        if not sep or '.' not in key or not key.strip():
            raise UsageError(_("Invalid override '{item}'. Expected SECTION.KEY=VALUE").format(item=item))
        overrides[key.strip().lower()] = value.strip()
    if args.seed is not None:
        overrides['run.seed'] = str(args.seed)
    if args.scale is not None:
        overrides['run.scale'] = args.scale
    return overrides


def run_command(args: argparse.Namespace) -> None:
    config = Config(config_filepath=args.config, overrides=parse_overrides(args))
    processing_service = ProcessingService(config=config)

    if args.command == 'init-config':
        processing_service.run_init_config(args.config)
    elif args.command == 'gen-data':
        processing_service.run_gen_data(args.out)
    elif args.command == 'train':
        processing_service.run_train(args.out, dataset=args.dataset)
    elif args.command == 'eval':
        processing_service.run_eval(args.checkpoint, args.experiment, args.out)
    elif args.command == 'compare':
        processing_service.run_compare(args.reports, args.checkpoint, args.experiment, args.out)
    elif args.command == 'simulate':
        processing_service.run_simulate(args.motor, args.level, args.out)
    elif args.command == 'residuals':
        processing_service.run_residuals(args.trajectory, args.out)
    elif args.command == 'check-symmetry':
        processing_service.run_check_symmetry(args.out)


def main(argv: list[str] | None = None) -> NoReturn:
    """
    Ponto de entrada principal. Orquestra a execução e converte os erros
    em códigos de saída.
    """
    try:
        args = build_parser().parse_args(argv)
        logger.info(
            _('Command received: {command} ({arguments})').format(
                command=args.command, arguments=' '.join(argv if argv is not None else sys.argv[1:])
            )
        )
        run_command(args)
        logger.info(_('Main process completed successfully.'))
        sys.exit(EXIT_OK)

    except (UsageError, ConfigurationError) as e:
        logger.error(_('Usage or configuration error: {error}').format(error=e))
        sys.exit(EXIT_USAGE)
    except (DivergenceError, PoisonedRunError):
        logger.exception(_('Numeric failure'))
        sys.exit(EXIT_NUMERIC)
    except OSError:
        logger.exception(_('Input/output failure'))
        sys.exit(EXIT_IO)
    except Exception:
        logger.exception(_('!!! A CRITICAL ERROR OCCURRED IN THE MAIN FLOW !!!'))
        sys.exit(EXIT_USAGE)


if __name__ == '__main__':
    main()
