"""Real spherical harmonics up to degree 2 and their direction derivatives."""
import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)


def num_coeffs(degree: int) -> int:
    if degree not in (0, 1, 2):
        raise ValueError(f"sh_degree must be 0, 1 or 2, got {degree}")
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values, shape ``dirs.shape[:-1] + (K,)``."""
    num_coeffs(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        out += [C2[0] * x * y, C2[1] * y * z, C2[2] * (2 * z * z - x * x - y * y),
                C2[3] * x * z, C2[4] * (x * x - y * y)]
    return np.stack(out, axis=-1)


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d dir, shape ``dirs.shape[:-1] + (K, 3)``."""
    num_coeffs(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if degree >= 1:
        rows += [(zero, zero - C1, zero), (zero, zero, zero + C1), (zero - C1, zero, zero)]
    if degree >= 2:
        rows += [(C2[0] * y, C2[0] * x, zero),
                 (zero, C2[1] * z, C2[1] * y),
                 (-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z),
                 (C2[3] * z, zero, C2[3] * x),
                 (2 * C2[4] * x, -2 * C2[4] * y, zero)]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
