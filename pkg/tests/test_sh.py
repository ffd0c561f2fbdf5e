import numpy as np
import pytest

from deepboard.kernels import sh_basis
from deepboard.volume import NonUnitDirection, eval_sh_basis

from conftest import random_unit_vectors


def test_constant_component():
    for d in ([0, 0, 1], [1, 0, 0], [0.6, 0.8, 0.0]):
        b = eval_sh_basis(d)
        assert b[0] == pytest.approx(0.28209479, abs=1e-7)


def test_degree1_at_z():
    b = eval_sh_basis([0, 0, 1])
    assert b[2] == pytest.approx(0.48860251, abs=1e-7)   # (1, 0)
    assert b[1] == pytest.approx(0.0, abs=1e-12)         # (1, -1)
    assert b[3] == pytest.approx(0.0, abs=1e-12)         # (1, 1)


def test_non_unit_rejected():
    with pytest.raises(NonUnitDirection):
        eval_sh_basis([0, 0, 1.01])


def test_monte_carlo_orthonormality():
    # independent oracle: MC quadrature of basis_i * basis_j over the sphere
    rng = np.random.default_rng(2024)
    dirs = random_unit_vectors(rng, 1_000_000)
    basis = sh_basis(dirs)  # (N, 9)
    gram = 4.0 * np.pi * basis.T @ basis / len(dirs)
    assert np.max(np.abs(gram - np.eye(9))) < 5e-3
