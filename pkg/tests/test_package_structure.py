"""
Tests for package structure and imports.
"""


def test_core_imports():
    """Test that the public API is importable from the top level."""
    from moesearch import (
        ArchitectureDescriptor,
        SearchPipeline,
        create_pipeline,
        run_phase1,
        run_phase2,
    )

    assert ArchitectureDescriptor is not None
    assert SearchPipeline is not None
    assert callable(create_pipeline)
    assert callable(run_phase1) and callable(run_phase2)


def test_subpackage_exports():
    """Every name listed in a subpackage's __all__ resolves."""
    import moesearch
    from moesearch import blocks, config, core, io, reporting, search

    for package in (moesearch, blocks, config, core, io, reporting, search):
        missing = [name for name in package.__all__ if not hasattr(package, name)]
        assert not missing, f"{package.__name__} is missing {missing}"


def test_bundled_corpus_is_packaged():
    from moesearch.io import bundled_corpus_path

    assert bundled_corpus_path().stat().st_size > 10_000


def test_cli_entry_point():
    from moesearch.cli import main

    assert main.name == "main"
    assert {"init", "profile", "search", "retrain", "eval", "report", "sweep"} <= set(
        main.commands
    )
