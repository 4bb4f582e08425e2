"""Python bindings for the subkit C++ core.

Everything lives in the compiled `_core` module: synthetic corpus generation,
grouped stratified CV splits, the training/CV/A-B harness, soft-voting
ensembles and binary16 emulation.
"""

from ._core import *  # noqa: F401,F403
