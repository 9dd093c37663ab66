"""Modal-decomposition toolchain for labelled snapshot sequences.

Pipeline: snapshot tensors (STF files + JSON manifests) -> SVD / HOSVD /
iterative HODMD decomposition products -> assembled training sets -> a small
shifted-patch / locality-attention vision transformer trained from scratch ->
per-sequence fused verdicts and metrics.
"""

from modalvit.tensor_core import SnapshotSequence, SequenceManifest, read_stf, write_stf

__version__ = "0.1.0"

__all__ = [
    "SnapshotSequence",
    "SequenceManifest",
    "read_stf",
    "write_stf",
    "__version__",
]
