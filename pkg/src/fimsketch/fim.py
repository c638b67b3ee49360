from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Fim:
    """Symmetric K x K Fisher information matrix with its eigen summary.

    ``eigenvalues`` are sorted ascending.  ``c_inv`` is the inverse condition
    number ``lambda_min / lambda_max`` (0 when ``lambda_max <= 0``), clipped
    into [0, 1].
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray

    @classmethod
    def from_matrix(cls, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"FIM must be square, got shape {m.shape}")
        m = 0.5 * (m + m.T)
        return cls(matrix=m, eigenvalues=np.linalg.eigvalsh(m))

    @property
    def K(self):
        return self.matrix.shape[0]

    @property
    def lambda_min(self):
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1])

    @property
    def c_inv(self):
        lmax = self.lambda_max
        if lmax <= 0.0:
            return 0.0
        return float(min(max(self.lambda_min / lmax, 0.0), 1.0))

    def frobenius_distance(self, other):
        return float(np.linalg.norm(self.matrix - other.matrix))
