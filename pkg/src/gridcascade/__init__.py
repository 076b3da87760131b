"""Cascading-failure simulation for power transmission grids."""

from .dynamics import DynConfig, init_dynamic, replay_trips, run_dynamic_cascade
from .errors import *  # noqa: F401,F403
from .grid import Network, attach_dynamic_defaults, find_islands, load_case
from .kernel import BACKEND as KERNEL_BACKEND
from .powerflow import dc_opf, dc_power_flow, solve_base_case
from .qss import run_static_cascade

__version__ = "0.1.0"
