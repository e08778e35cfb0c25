from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from pbdplan.errors import GeneratorContractViolation, InvalidInput

Action = Hashable


@dataclass(frozen=True)
class MacroAction:
    """
    Finite open-loop sequence of primitive actions

    label records which generator rule produced the macro
    (e.g. "rock:2", "beacon:0", "exit", "hover").
    """
    actions: tuple[Action, ...]
    label: str = ""

    def __post_init__(self):
        actions = tuple(self.actions)
        if not actions:
            raise InvalidInput("a macro-action needs at least one primitive action")
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def first(self) -> Action:
        return self.actions[0]

    def prefixed(self, action: Action, label: str | None = None) -> "MacroAction":
        return MacroAction((action,) + self.actions, label or f"{action}+{self.label}")


def uncovered_actions(macros: Sequence[MacroAction], primitives: Iterable[Action]) -> list[Action]:
    """Primitive actions that are not the first action of any macro"""
    firsts = {m.first for m in macros}
    return [a for a in primitives if a not in firsts]


def check_macros(macros: Sequence[MacroAction], primitives: Iterable[Action] | None = None) -> None:
    """
    Enforce the generator contract

    The set must be non-empty; when primitives are given every one of them
    must start at least one macro.
    """
    if not macros:
        raise GeneratorContractViolation("macro-action generator returned no macros")
    if primitives is not None:
        missing = uncovered_actions(macros, primitives)
        if missing:
            raise GeneratorContractViolation(f"primitive actions never start a macro: {missing}")
