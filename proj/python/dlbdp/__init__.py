"""Deep backward BSDE solvers (DLBDP and the DBDP baseline) with their benchmark problems."""

from ._dlbdp import (
    Config,
    ConfigError,
    DivergenceError,
    __version__,
    bs_closed_form,
    compare,
    effective_volatility,
    hjb_reference,
    oracle,
    run,
    simulate_paths,
    sweep_n,
)

__all__ = [
    "Config",
    "ConfigError",
    "DivergenceError",
    "__version__",
    "bs_closed_form",
    "compare",
    "effective_volatility",
    "hjb_reference",
    "oracle",
    "run",
    "simulate_paths",
    "sweep_n",
]
