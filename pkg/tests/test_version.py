"""Tests to ensure the package and file-format versions stay in step."""

import re
from pathlib import Path

from click.testing import CliRunner

from moesearch import __version__
from moesearch.cli import main
from moesearch.io.checkpoint import CHECKPOINT_FORMAT_VERSION
from moesearch.search.finalize import DESCRIPTOR_FORMAT_VERSION


def test_version_consistency():
    """__init__.py and pyproject.toml carry the same semantic version."""
    pyproject = (Path(__file__).parent.parent / "pyproject.toml").read_text()
    match = re.search(r'^version\s*=\s*"([^"]+)"', pyproject, re.MULTILINE)
    assert match, "No version found in pyproject.toml"
    assert match.group(1) == __version__, (
        f"Version mismatch: __init__.py={__version__}, pyproject.toml={match.group(1)}"
    )
    assert re.match(r"^\d+\.\d+\.\d+$", __version__)


def test_cli_reports_package_version():
    result = CliRunner().invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_file_formats_start_at_one():
    # bump these together with a loader for the previous format
    assert DESCRIPTOR_FORMAT_VERSION == 1
    assert CHECKPOINT_FORMAT_VERSION == 1
