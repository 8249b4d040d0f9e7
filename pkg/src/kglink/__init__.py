"""Open-world knowledge graph linking and ranking toolkit."""

from .core import (
    BundleError,
    ClosedWorld,
    ContextRecord,
    ContextStore,
    DatasetBundle,
    KnowledgeGraph,
    MentionMap,
    OpenSplit,
    RelationStats,
    TaskTriple,
    graph_stats,
)
from .storage import StorageError, load_bundle, save_bundle

__version__ = "0.1.0"

__all__ = [
    "BundleError",
    "ClosedWorld",
    "ContextRecord",
    "ContextStore",
    "DatasetBundle",
    "KnowledgeGraph",
    "MentionMap",
    "OpenSplit",
    "RelationStats",
    "StorageError",
    "TaskTriple",
    "graph_stats",
    "load_bundle",
    "save_bundle",
    "__version__",
]
