from __future__ import annotations

from pathlib import Path

import pytest

from unitsym import ir

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
CLASS_DIRS = ("heap", "stack", "uaf", "df")


def corpus_programs(*dirs: str) -> list[Path]:
    roots = dirs or tuple(p.name for p in CORPUS.iterdir() if p.is_dir())
    return sorted(path for d in roots for path in (CORPUS / d).glob("*.mir"))


def load(rel: str) -> ir.Program:
    return ir.load_program(CORPUS / rel)


@pytest.fixture(scope="session")
def unit_tree() -> ir.Program:
    return load("figures/unit_tree.mir")


@pytest.fixture(scope="session")
def frame_program() -> ir.Program:
    return load("figures/frame_buffer.mir")


@pytest.fixture(scope="session")
def free_chain() -> ir.Program:
    return load("figures/free_chain.mir")
