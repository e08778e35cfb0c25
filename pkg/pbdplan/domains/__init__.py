from pbdplan.domains.base import BeliefNode, DiscreteNode, DomainAdapter, StepOutcome
from pbdplan.domains.isrs import IsrsDomain, IsrsSpec
from pbdplan.domains.linear import LinearGaussianDomain, LinearSpec
from pbdplan.domains.target_monitor import TargetMonitorDomain, TmSpec

__all__ = [
    "BeliefNode",
    "DiscreteNode",
    "DomainAdapter",
    "IsrsDomain",
    "IsrsSpec",
    "LinearGaussianDomain",
    "LinearSpec",
    "StepOutcome",
    "TargetMonitorDomain",
    "TmSpec",
]
