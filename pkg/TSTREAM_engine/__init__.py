#
# __init__.py
# TStream-Engine-py
#
# Exports the engine tools and package metadata for the TStream engine.
#
# Thales Matheus Mendonça Santos - November 2025

"""
TStream Engine - transactional stream processing for online model updates.

This package ingests event streams, turns them into atomic state
transactions over a versioned parameter store, keeps an online model
learning from them, and serves consistent snapshot reads while it does.
"""

__version__ = '1.0.0'
__author__ = 'Thales MMS'
__license__ = 'MIT'

# Import main modules for programmatic use
from . import (
    core,
    generate_workload,
    run_workload,
    oracle_replay,
    recover_test,
)

__all__ = [
    'generate_workload',
    'run_workload',
    'oracle_replay',
    'recover_test',
    'core',
]
