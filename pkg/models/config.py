from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional

from models.errors import ConfigError

SCENARIOS = (
    'verify-identities',
    'l2metric',
    'check-theorem1',
    'flow',
    'evolve-monitor',
)

FAMILY_KINDS = ('constant', 'exp_quadratic', 'congruence')
PERTURBATION_KINDS = ('eigen', 're_z_sq', 're_z_frac_sq', 'random')
SCHEMES = ('euler', 'rk4')
TRUE_WORDS = ('true', 'yes', 'on', '1')
FALSE_WORDS = ('false', 'no', 'off', '0')


def _positive(value: Any, path: str, integer: bool = False):
    """校验正数字段，失败时报出字段路径"""
    try:
        number = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: 需要数值，得到 {value!r}")
    if integer and float(value) != number:
        raise ConfigError(f"{path}: 需要整数，得到 {value!r}")
    if not number > 0:
        raise ConfigError(f"{path}: must be positive (got {value!r})")
    return number


def _integer(value: Any, path: str, minimum: int = 1) -> int:
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: 需要整数，得到 {value!r}")
    if isinstance(value, bool) or float(value) != number:
        raise ConfigError(f"{path}: 需要整数，得到 {value!r}")
    if number < minimum:
        raise ConfigError(f"{path}: 不能小于 {minimum}（得到 {value!r}）")
    return number


def _flag(value: Any, path: str) -> bool:
    """布尔开关；YAML/JSON 的 true/false 之外也接受常见的字符串写法"""
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in TRUE_WORDS + FALSE_WORDS:
        return value.strip().lower() in TRUE_WORDS
    raise ConfigError(f"{path}: 需要 true/false，得到 {value!r}")


def _real(value: Any, path: str) -> float:
    # YAML 1.1 把 1e-05 这样的写法读成字符串
    if isinstance(value, bool):
        raise ConfigError(f"{path}: 无法解析 {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: 无法解析 {value!r}")


def _matrix(value: Any, path: str) -> Optional[List[List[complex]]]:
    """把 [[a, b], [c, d]] 或 [[re, im] 对] 形式的矩阵读成复数列表"""
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: 需要二维数组")
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list):
            raise ConfigError(f"{path}[{i}]: 需要数组")
        entries = []
        for j, entry in enumerate(row):
            where = f"{path}[{i}][{j}]"
            if isinstance(entry, list) and len(entry) == 2:
                entries.append(complex(_real(entry[0], where), _real(entry[1], where)))
            else:
                entries.append(complex(_real(entry, where)))
        rows.append(entries)
    if any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"{path}: 矩阵必须是方阵")
    return rows


@dataclass
class PerturbationConfig:
    """一个扰动项：amplitude · term(z) · (ss̄ 若 base=True)"""
    kind: str
    amplitude: float
    alpha: int = 1
    beta: int = 1
    base: bool = False
    count: int = 3

    @classmethod
    def from_dict(cls, data: Dict, path: str) -> 'PerturbationConfig':
        kind = data.get('kind')
        if kind not in PERTURBATION_KINDS:
            raise ConfigError(f"{path}.kind: 未知扰动类型 {kind!r}，可选 {PERTURBATION_KINDS}")
        return cls(
            kind=kind,
            amplitude=_real(data.get('amplitude', 0.0), f"{path}.amplitude"),
            alpha=_integer(data.get('alpha', 1), f"{path}.alpha"),
            beta=_integer(data.get('beta', 1), f"{path}.beta"),
            base=_flag(data.get('base', False), f"{path}.base"),
            count=_integer(data.get('count', 3), f"{path}.count"),
        )


@dataclass
class FamilyConfig:
    """圆盘上 E 的 hermitian 度量族的生成器描述"""
    kind: str = 'exp_quadratic'
    matrix: Optional[List[List[complex]]] = None
    exponent: Optional[List[List[complex]]] = None
    shear: Optional[List[List[complex]]] = None
    scale: float = 1.0
    perturbations: List[PerturbationConfig] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict, path: str = 'family') -> 'FamilyConfig':
        kind = data.get('kind', 'exp_quadratic')
        if kind not in FAMILY_KINDS:
            raise ConfigError(f"{path}.kind: 未知度量族 {kind!r}，可选 {FAMILY_KINDS}")
        perturbations = [
            PerturbationConfig.from_dict(p, f"{path}.perturbations[{i}]")
            for i, p in enumerate(data.get('perturbations') or [])
        ]
        return cls(
            kind=kind,
            matrix=_matrix(data.get('matrix'), f"{path}.matrix"),
            exponent=_matrix(data.get('exponent'), f"{path}.exponent"),
            shear=_matrix(data.get('shear'), f"{path}.shear"),
            scale=_positive(data.get('scale', 1.0), f"{path}.scale"),
            perturbations=perturbations,
        )


@dataclass
class FlowConfig:
    """相对 Kähler–Ricci 流的积分参数"""
    dt: float = 4e-3
    tol: float = 1e-8
    t_max: float = 30.0
    scheme: str = 'euler'
    record_every: int = 10
    n_theta: int = 24
    n_phi: int = 48
    amplitude: float = 0.3

    @classmethod
    def from_dict(cls, data: Dict, path: str = 'flow') -> 'FlowConfig':
        scheme = data.get('scheme', 'euler')
        if scheme not in SCHEMES:
            raise ConfigError(f"{path}.scheme: 未知时间格式 {scheme!r}，可选 {SCHEMES}")
        return cls(
            dt=_positive(data.get('dt', cls.dt), f"{path}.dt"),
            tol=_positive(data.get('tol', cls.tol), f"{path}.tol"),
            t_max=_positive(data.get('t_max', cls.t_max), f"{path}.t_max"),
            scheme=scheme,
            record_every=_positive(data.get('record_every', cls.record_every),
                                   f"{path}.record_every", integer=True),
            n_theta=_positive(data.get('n_theta', cls.n_theta), f"{path}.n_theta", integer=True),
            n_phi=_positive(data.get('n_phi', cls.n_phi), f"{path}.n_phi", integer=True),
            amplitude=_positive(data.get('amplitude', cls.amplitude), f"{path}.amplitude"),
        )


@dataclass
class ExperimentConfig:
    """一次实验运行的全部参数"""
    scenario: str
    rank: int = 2
    n_theta: int = 64
    n_phi: int = 128
    h: float = 1e-2
    richardson: bool = False
    family: FamilyConfig = field(default_factory=FamilyConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    isometry_threshold: float = 1e-6
    kodaira_spencer_threshold: float = 1e-4
    output_dir: str = './output'
    seed: int = 0
    log_level: str = 'INFO'

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentConfig':
        """从配置字典构造，错误信息中带字段路径"""
        if not isinstance(data, dict):
            raise ConfigError("配置文件顶层必须是映射")

        scenario = data.get('scenario')
        if scenario not in SCENARIOS:
            raise ConfigError(f"scenario: 未注册的场景 {scenario!r}，可选 {SCENARIOS}")

        rank = _positive(data.get('rank', 2), 'rank', integer=True)
        if rank != 2:
            raise ConfigError(f"rank: unsupported dimension (rank {rank}, 仅支持 r = 2 即 ℙ¹ 纤维)")

        grid = data.get('grid') or {}
        stencil = data.get('stencil') or {}
        thresholds = data.get('thresholds') or {}
        output = data.get('output') or {}
        logging_config = data.get('logging') or {}

        seed = data.get('seed', 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed: 需要非负整数，得到 {seed!r}")

        return cls(
            scenario=scenario,
            rank=rank,
            n_theta=_positive(grid.get('n_theta', 64), 'grid.n_theta', integer=True),
            n_phi=_positive(grid.get('n_phi', 128), 'grid.n_phi', integer=True),
            h=_positive(stencil.get('h', 1e-2), 'stencil.h'),
            richardson=_flag(stencil.get('richardson', False), 'stencil.richardson'),
            family=FamilyConfig.from_dict(data.get('family') or {}),
            flow=FlowConfig.from_dict(data.get('flow') or {}),
            isometry_threshold=_positive(thresholds.get('isometry', 1e-6),
                                         'thresholds.isometry'),
            kodaira_spencer_threshold=_positive(thresholds.get('kodaira_spencer', 1e-4),
                                                'thresholds.kodaira_spencer'),
            output_dir=str(output.get('dir', './output')),
            seed=seed,
            log_level=str(logging_config.get('level', 'INFO')).upper(),
        )

    def to_dict(self) -> Dict:
        """回显到 manifest 的配置字典（复数写成 [re, im]）"""
        def encode(value):
            if isinstance(value, complex):
                return [value.real, value.imag]
            if isinstance(value, list):
                return [encode(v) for v in value]
            if isinstance(value, dict):
                return {k: encode(v) for k, v in value.items()}
            return value

        return encode(asdict(self))
