"""
底空间圆盘上的 9 点模板

点 s_{pq} = center + (p + iq)·h，p, q ∈ {−1, 0, 1}，数组下标为 [p+1, q+1]。
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from models.errors import GeometryError

OFFSETS = (-1, 0, 1)
CENTER = (1, 1)


@dataclass(frozen=True)
class BaseStencil:
    """底空间方向的 9 点差分模板"""
    h: float = 1e-2
    center: complex = 0j

    def __post_init__(self):
        if not self.h > 0:
            raise GeometryError(f"模板步长必须为正：h = {self.h!r}")

    @property
    def points(self) -> np.ndarray:
        p = np.array(OFFSETS, dtype=float)
        return self.center + (p[:, None] + 1j * p[None, :]) * self.h

    def halved(self) -> 'BaseStencil':
        return BaseStencil(h=self.h / 2.0, center=self.center)

    def sample(self, fn: Callable[[complex], np.ndarray]) -> np.ndarray:
        """逐点求值，结果形状 (3, 3) + fn 的输出形状"""
        pts = self.points
        rows = [[np.asarray(fn(complex(pts[i, j]))) for j in range(3)] for i in range(3)]
        return np.array(rows)

    @staticmethod
    def _check(values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[:2] != (3, 3):
            raise GeometryError(f"模板取值需要前两维为 (3, 3)，得到 {values.shape}")
        return values

    def d_s(self, values: np.ndarray) -> np.ndarray:
        """∂_s = (∂_u − i∂_v)/2，中心差分"""
        v = self._check(values)
        return ((v[2, 1] - v[0, 1]) - 1j * (v[1, 2] - v[1, 0])) / (4.0 * self.h)

    def d_sb(self, values: np.ndarray) -> np.ndarray:
        """∂_s̄ = (∂_u + i∂_v)/2"""
        v = self._check(values)
        return ((v[2, 1] - v[0, 1]) + 1j * (v[1, 2] - v[1, 0])) / (4.0 * self.h)

    def d_ssb(self, values: np.ndarray) -> np.ndarray:
        """∂_s∂_s̄ = Δ/4，九点 Laplacian"""
        v = self._check(values)
        edges = v[2, 1] + v[0, 1] + v[1, 2] + v[1, 0]
        corners = v[0, 0] + v[0, 2] + v[2, 0] + v[2, 2]
        return (4.0 * edges + corners - 20.0 * v[1, 1]) / (6.0 * self.h ** 2) / 4.0

    @staticmethod
    def at_center(values: np.ndarray) -> np.ndarray:
        return BaseStencil._check(values)[CENTER]


def richardson(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    """二阶格式的 Richardson 外推（fine 的步长为 coarse 的一半）"""
    return (4.0 * np.asarray(fine) - np.asarray(coarse)) / 3.0
