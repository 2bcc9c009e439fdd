"""Embeddable stream-processing engine with shared-buffer elastic parallelism.

Windowed keyed operators (an :class:`OperatorDef` bundles window geometry
with the fold/emit functions) run on one of two executors:

* :func:`setup` / :class:`Engine` — a pool of workers sharing one
  timestamp-merging ingress buffer and one window store.  Each tuple is
  buffered once no matter how many workers read it, each key is folded by
  exactly one owner at a time, and :meth:`Engine.resize` swaps key ownership
  at a barrier without moving any state.
* :class:`SNExecutor` — classic isolated instances, each with a private
  merge buffer and private state, fed by key-routed copies.  Both executors
  produce the same output multiset for the same operator and input.

Submodules: :mod:`vsnstream.scalegate` (the merge buffers),
:mod:`vsnstream.operators` (bundled workloads), and :mod:`vsnstream.bench`
(stream generators, digests, and the ``vsnstream-bench`` CLI).
"""

from .core import Schema, Tuple, WT, WindowSpec, ms
from .elastic_scalegate import ElasticScaleGate
from .operator import OperatorDef, WriterGuard
from .operators import (
    band_predicate,
    hashtag_maxlen_op,
    hedge_predicate,
    make_operator,
    paircount_op,
    passthrough_op,
    scalejoin_op,
    wordcount_op,
)
from .runtime import (
    Engine,
    EngineBusyError,
    KeyMapping,
    ReconfigSpec,
    SNExecutor,
    ThresholdController,
    setup,
    threshold_controller_step,
)
from .scalegate import ScaleGate

__version__ = "0.1.0"

__all__ = [
    "ElasticScaleGate",
    "Engine",
    "EngineBusyError",
    "KeyMapping",
    "OperatorDef",
    "ReconfigSpec",
    "SNExecutor",
    "ScaleGate",
    "Schema",
    "ThresholdController",
    "Tuple",
    "WT",
    "WindowSpec",
    "WriterGuard",
    "band_predicate",
    "hashtag_maxlen_op",
    "hedge_predicate",
    "make_operator",
    "ms",
    "paircount_op",
    "passthrough_op",
    "scalejoin_op",
    "setup",
    "threshold_controller_step",
    "wordcount_op",
]
