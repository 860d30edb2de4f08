"""
Command initialization - imports all command modules
"""
from . import voxels
from . import dictionary
from . import training
from . import reconstruct
from . import evaluate


def init_commands(subparsers):
    """Register every command on the argparse subparsers"""
    voxels.init_command(subparsers)
    dictionary.init_command(subparsers)
    training.init_command(subparsers)
    reconstruct.init_command(subparsers)
    evaluate.init_command(subparsers)
