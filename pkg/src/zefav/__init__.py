"""Zero-shot fact verification with relation closure and evidence reorganization."""

from .closure import ClosureResult, ClosureStats, closure_stats, find_evidence_relations
from .relation_core import (
    Origin,
    ParseWarning,
    RelationCatalog,
    RelationTriple,
    builtin_catalog,
    format_triple,
    load_catalog,
    normalize_entity,
    parse_triples,
)

__version__ = "0.1.0"
