import functools
import warnings

import numpy as np
import pytest

from hpbem.assembly import QuadratureOrders, assemble_hypersingular
from hpbem.mesh import MeshHierarchy, generate_fichera, generate_screen
from hpbem.space import build_dof_map


@functools.lru_cache(maxsize=None)
def screen(n=3):
    return generate_screen(n)


@functools.lru_cache(maxsize=None)
def fichera():
    return generate_fichera()


@functools.lru_cache(maxsize=None)
def hypersingular(geom: str, p: int, alpha: float = 0.0, bump: int = 0):
    mesh = fichera() if geom == "fichera" else screen(int(geom.split(":")[1]))
    dm = build_dof_map(mesh, p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        D = assemble_hypersingular(mesh, dm, alpha, QuadratureOrders(bump=bump))
    return mesh, dm, D


def hierarchy_of(mesh):
    return MeshHierarchy.from_mesh(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
