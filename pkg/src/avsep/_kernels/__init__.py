"""Chain-runner backend selection.

Two interchangeable kernels exist: a numpy implementation that batches all
frames through BLAS matmuls, and a compiled Cython loop. Benchmarks
(benchmarks/bench_mh.py) show the batched numpy path is the faster one at
every realistic chain count on this problem's small decoder nets, so it is
the default. AVSEP_BACKEND overrides: "compiled" demands the extension
(import fails if it is missing); "pure" and "auto" (the default) both take
the numpy kernel.
"""

import os

from . import _mh_pure

_choice = os.environ.get("AVSEP_BACKEND", "auto")
if _choice not in ("auto", "pure", "compiled"):
    raise ImportError(
        "AVSEP_BACKEND must be auto, pure or compiled, got %r" % _choice
    )

_BACKEND = "pure"
run_chains = _mh_pure.run_chains

if _choice == "compiled":
    try:
        from . import _mh_core
    except ImportError:
        raise ImportError(
            "AVSEP_BACKEND=compiled but the extension is not built; "
            "reinstall without AVSEP_NO_EXT"
        )
    _BACKEND = "compiled"
    run_chains = _mh_core.run_chains


def active_backend() -> str:
    """Name of the kernel actually in use: 'pure' or 'compiled'."""
    return _BACKEND
