"""
Main pipeline runner
Usage: python run.py <command> --config PATH [options]
"""
import argparse
import logging
import os
import sys

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# Load environment variables only if dotenv is available
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


def build_parser():
    """Argument parser with one subcommand per pipeline stage"""
    from mrvf.commands import init_commands

    parser = argparse.ArgumentParser(
        prog='mrvf',
        description='MR vascular fingerprinting: voxel generation, dictionaries, DBM/DBL reconstruction '
                    'and evaluation. Exit codes: 0 success, 2 validation error, 3 runtime error.',
    )
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    init_commands(subparsers)
    return parser


def main(argv=None, config_name=None):
    """Parse arguments, set up logging and run one command; returns the exit code"""
    from config import get_config
    from mrvf.core.error_handlers import EXIT_OK, EXIT_VALIDATION, handle_command_error, register_error_handlers
    from mrvf.core.logging_config import get_sim_logger, setup_logging

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code else EXIT_OK

    config_class = get_config(config_name)
    logger = setup_logging(config_class, quiet=args.quiet)
    get_sim_logger(config_class.LOG_DIR)
    register_error_handlers()
    if args.threads is None:
        args.threads = config_class.THREADS

    logger.debug(f'Running {args.command} ({config_class.__name__})')
    try:
        return args.func(args)
    except Exception as e:
        return handle_command_error(e, logging.getLogger('mrvf.commands'))


if __name__ == '__main__':
    sys.exit(main())
