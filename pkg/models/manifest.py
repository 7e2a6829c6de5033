import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional


@dataclass
class CheckResult:
    """单项验收检查的结果"""
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        """转换为字典格式（非有限数写成字符串，保证 JSON 合法）"""
        def number(value: float):
            value = float(value)
            return value if math.isfinite(value) else repr(value)

        return {
            "name": self.name,
            "passed": bool(self.passed),
            "measured": number(self.measured),
            "tolerance": number(self.tolerance),
            "detail": self.detail,
        }


def check_at_most(name: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    """measured ≤ tolerance 即通过（NaN 视为失败）"""
    measured = float(measured)
    return CheckResult(name, bool(measured <= tolerance), measured, tolerance, detail)


def check_at_least(name: str, measured: float, bound: float, detail: str = "") -> CheckResult:
    """measured ≥ bound 即通过"""
    measured = float(measured)
    return CheckResult(name, bool(measured >= bound), measured, bound, detail)


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ')


@dataclass
class RunManifest:
    """一次实验的完整记录：配置回显、版本、时间戳、逐项检查"""
    scenario: str
    config: Dict
    registered: List[str]
    checks: List[CheckResult] = field(default_factory=list)
    started_at: str = field(default_factory=utc_now)
    finished_at: Optional[str] = None
    versions: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.versions:
            import numpy
            import scipy
            self.versions = {
                "python": platform.python_version(),
                "numpy": numpy.__version__,
                "scipy": scipy.__version__,
                "glab": "1.0.0",
            }

    def record(self, check: CheckResult) -> None:
        """登记一项检查；重复登记时后者覆盖前者"""
        self.checks = [c for c in self.checks if c.name != check.name]
        self.checks.append(check)

    def finalize(self) -> None:
        """补齐未被评估的已注册检查，并打上结束时间"""
        seen = {c.name for c in self.checks}
        for name in self.registered:
            if name not in seen:
                self.checks.append(CheckResult(name, False, float('nan'), float('nan'),
                                               "not evaluated"))
        self.finished_at = utc_now()

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def ordered_checks(self) -> List[CheckResult]:
        """失败项在前，其余保持注册顺序"""
        order = {name: i for i, name in enumerate(self.registered)}
        return sorted(self.checks, key=lambda c: (c.passed, order.get(c.name, len(order)), c.name))

    def to_dict(self) -> dict:
        """转换为字典格式"""
        return {
            "schema": "glab.manifest/1",
            "scenario": self.scenario,
            "passed": self.passed,
            "config": self.config,
            "versions": self.versions,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "checks": [c.to_dict() for c in self.ordered_checks()],
        }
