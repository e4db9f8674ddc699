"""Multimodal random architecture search with shared weights."""

from ._core import (
    ArchitectureSpec,
    BuildError,
    DataError,
    Dataset,
    RunRecord,
    SearchConfig,
    SearchSpaceConfig,
    SnapshotError,
    SpecParseError,
    SyntheticConfig,
    cell_cardinality,
    final_train,
    fusion_cardinality,
    generate_synthetic,
    method_card,
    run_multi_seed,
    run_search,
    sample_architecture,
    variance_rows,
    variance_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]
