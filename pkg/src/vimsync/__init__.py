"""Converter synchronization workbench: VIM, PLL and grid-forming control in an index-1 DAE."""

from .scenario import ScenarioConfig, build_system, load_config, load_fixture, run

__all__ = ["ScenarioConfig", "build_system", "load_config", "load_fixture", "run"]
__version__ = "0.1.0"
