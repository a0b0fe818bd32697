"""Shared fixtures built from the bundled sample data"""

from pathlib import Path

import pytest

import config
from catalog import ScopeSpec, load_catalog, scope_filter
from enumerator import StructureStore, enumerate_structures, store_structures
from taxonomy import build_taxonomy

SAMPLE_DIR = Path(__file__).resolve().parent.parent / config.SAMPLE_DATA_DIR
CATALOG_FILES = ["objects.json", "attributes.json", "relations.json", "scene_attributes.json"]


@pytest.fixture(scope="session")
def sample_dir() -> Path:
    return SAMPLE_DIR


@pytest.fixture(scope="session")
def catalog_paths():
    return [SAMPLE_DIR / name for name in CATALOG_FILES]


@pytest.fixture(scope="session")
def taxonomy():
    return build_taxonomy(SAMPLE_DIR / "object_edges.tsv", config.DEFAULT_ROOT, SAMPLE_DIR / "vocabulary.tsv")


@pytest.fixture(scope="session")
def catalog(taxonomy, catalog_paths):
    return load_catalog(taxonomy, catalog_paths)


@pytest.fixture(scope="session")
def view(catalog):
    return scope_filter(catalog, ScopeSpec())


@pytest.fixture(scope="session")
def store():
    result = StructureStore()
    for complexity in range(1, 7):
        result = store_structures(result, enumerate_structures(complexity))
    return result


def write_lines(path: Path, lines) -> Path:
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
    return path
