import logging
import os
from typing import Optional, Tuple

import numpy as np

from metrics.stencil import BaseStencil
from metrics.weights import HermitianFamily, WeightField, apply_perturbations, induce_weight
from models.config import ExperimentConfig
from models.manifest import RunManifest
from projgeom.grid import FiberGrid, build_fiber_grid

logger = logging.getLogger(__name__)


class Scenario:
    """场景基类

    子类给出 name 与登记的检查名 checks，并在 run 中把每项检查写进 manifest。
    """

    name = ''
    checks: Tuple[str, ...] = ()

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        """
        Args:
            config: 实验配置
            output_dir: 输出目录，缺省取 config.output_dir
        """
        self.config = config
        self.output_dir = output_dir or config.output_dir

    def grid(self) -> FiberGrid:
        return build_fiber_grid(self.config.rank - 1, (self.config.n_theta, self.config.n_phi))

    def flow_grid(self) -> FiberGrid:
        flow = self.config.flow
        return build_fiber_grid(self.config.rank - 1, (flow.n_theta, flow.n_phi))

    def stencil(self, h: Optional[float] = None) -> BaseStencil:
        return BaseStencil(h=self.config.h if h is None else h)

    def family(self) -> HermitianFamily:
        return HermitianFamily.from_config(self.config.family, self.config.rank)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.config.seed)

    def initial_weight(self, grid: FiberGrid, stencil: BaseStencil) -> WeightField:
        """配置中的度量族诱导的 O_E(1) 权重，加上配置的扰动项"""
        weight = induce_weight(self.family(), grid, stencil)
        return apply_perturbations(weight, self.config.family.perturbations, self.rng())

    def path(self, *parts: str) -> str:
        """输出目录下的文件路径（自动创建上级目录）"""
        target = os.path.join(self.output_dir, *parts)
        os.makedirs(os.path.dirname(target) or '.', exist_ok=True)
        return target

    def run(self, manifest: RunManifest) -> None:
        raise NotImplementedError
