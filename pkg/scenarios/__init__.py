# Scenarios package
from typing import Dict, Type

from models.errors import ConfigError
from scenarios.base import Scenario
from scenarios.check_theorem1 import CheckTheorem1Scenario
from scenarios.evolve_monitor import EvolveMonitorScenario
from scenarios.flow import FlowScenario
from scenarios.l2metric import L2MetricScenario
from scenarios.verify_identities import VerifyIdentitiesScenario

REGISTRY: Dict[str, Type[Scenario]] = {
    cls.name: cls for cls in (
        VerifyIdentitiesScenario,
        L2MetricScenario,
        CheckTheorem1Scenario,
        FlowScenario,
        EvolveMonitorScenario,
    )
}


def get_scenario(name: str) -> Type[Scenario]:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"scenario: 未注册的场景 {name!r}，可选 {tuple(REGISTRY)}")
