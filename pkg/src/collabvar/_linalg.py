import warnings

import numpy as np
from scipy import linalg


class RankDeficiencyWarning(RuntimeWarning):
    pass


def solve_ls(Z, Y, *, strict=False):
    """Least squares via the normal equations, minimum-norm on rank loss."""
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    gram = Z.T @ Z
    rhs = Z.T @ Y
    rank = np.linalg.matrix_rank(Z)
    if rank < Z.shape[1]:
        if strict:
            from collabvar.errors import RankDeficiencyError

            raise RankDeficiencyError(
                f"covariate matrix has rank {rank} < {Z.shape[1]} columns"
            )
        warnings.warn(
            f"rank-deficient covariates (rank {rank} of {Z.shape[1]}); "
            "using the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=3,
        )
        return np.linalg.pinv(Z) @ Y
    return linalg.solve(gram, rhs, assume_a="pos")


def random_invertible(rng, size, *, max_cond=1e8, orthogonal=False, max_tries=100):
    """Standard-normal square matrix whose condition number is below ``max_cond``."""
    for _ in range(max_tries):
        M = rng.standard_normal((size, size))
        if orthogonal:
            Q, R = np.linalg.qr(M)
            M = Q * np.sign(np.diag(R))
        if size == 0 or np.linalg.cond(M) < max_cond:
            return M
    raise np.linalg.LinAlgError(
        f"no {size}x{size} matrix with condition < {max_cond:g} in {max_tries} draws"
    )
