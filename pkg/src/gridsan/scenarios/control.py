"""Rule-based voltage control for the medium-voltage control centre.

The policy is deterministic and works on integer settings: an OLTC tap
position, and for each controllable device a level counted in 10 % steps
(curtailed share of available power for a generator, shed share of demand for
a flexible load).

Tap direction convention: the OLTC ratio sits on the upstream side, so the
downstream voltage is roughly ``V_upstream / t``. Raising the voltage therefore
means moving to a lower tap position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

LEVEL_STEPS = 10
RAISE, LOWER = 1, -1


@dataclass(frozen=True)
class Action:
    """One control action.

    ``kind`` is ``tap`` (``steps`` is +1 to raise voltage, -1 to lower it),
    ``curtail`` or ``reduce`` (one more 10 % step) or ``release_curtail`` /
    ``release_reduce`` (one step back).
    """

    kind: str
    target: str
    steps: int


@dataclass(frozen=True)
class Settings:
    tap_position: int
    levels: Mapping[str, int] = field(default_factory=dict)

    def key(self, order) -> tuple:
        return (self.tap_position, *(self.levels.get(e, 0) for e in order))


Predictor = Callable[[Settings], tuple[np.ndarray, bool]]


@dataclass(frozen=True)
class ControlState:
    vm: np.ndarray
    feasible: bool
    settings: Settings
    tap_frozen: bool
    n_tap_positions: int
    generators: Mapping[str, int]
    flexible_loads: Mapping[str, int]
    controllable: Mapping[str, bool]
    monitored: tuple[int, ...]
    band: float = 0.10


def violations(vm: np.ndarray, feasible: bool, monitored, band: float) -> tuple[list[int], list[int]]:
    """Undervoltage and overvoltage buses; an infeasible solution is undervoltage everywhere."""
    if not feasible:
        return list(monitored), []
    uv = [b for b in monitored if vm[b] < 1.0 - band]
    ov = [b for b in monitored if vm[b] > 1.0 + band]
    return uv, ov


def _tap_move(state: ControlState, tap: int, uv, ov, vm, feasible) -> int:
    """Direction (+1 raise, -1 lower, 0 none) for the tap rule."""
    if not uv and not ov:
        return 0
    if not feasible:
        want = RAISE
    else:
        under = max((1.0 - state.band - vm[b] for b in uv), default=0.0)
        over = max((vm[b] - 1.0 - state.band for b in ov), default=0.0)
        want = RAISE if under >= over else LOWER
    new = tap - want
    if not 0 <= new < state.n_tap_positions:
        return 0
    return want


def apply_actions(settings: Settings, actions) -> Settings:
    tap = settings.tap_position
    levels = dict(settings.levels)
    for a in actions:
        if a.kind == "tap":
            tap -= a.steps
        elif a.kind in ("curtail", "reduce"):
            levels[a.target] = min(LEVEL_STEPS, levels.get(a.target, 0) + a.steps)
        elif a.kind in ("release_curtail", "release_reduce"):
            levels[a.target] = max(0, levels.get(a.target, 0) - a.steps)
        else:
            raise ValueError(f"unknown action kind {a.kind!r}")
    return Settings(tap, levels)


def _merge(actions: list[Action]) -> list[Action]:
    """Combine repeated steps on the same target into one action."""
    steps: dict[tuple[str, str], int] = {}
    for a in actions:
        steps[a.kind, a.target] = steps.get((a.kind, a.target), 0) + a.steps
    return [Action(kind, target, n) for (kind, target), n in steps.items()]


def control_step(state: ControlState, predict: Predictor | None = None) -> list[Action]:
    """Greedy cascade: tap first, then generator curtailment, then flexible-load shedding.

    The tap moves at most one step per call. ``predict`` maps candidate
    settings to ``(vm, feasible)``; it decides whether a violation persists
    after an earlier rule (curtailment and shedding then repeat in 10 % steps
    until it clears) and whether a release is safe. Without it a tap move is
    taken to correct the violation; when the tap cannot move, the present
    voltages are reused and each later rule acts once.
    """
    band = state.band
    mon = state.monitored
    settings = state.settings
    vm, feasible = np.asarray(state.vm), state.feasible
    uv, ov = violations(vm, feasible, mon, band)
    actions: list[Action] = []

    def after(acts):
        nonlocal settings, vm, feasible
        settings = apply_actions(settings, acts)
        actions.extend(acts)
        if predict is not None:
            vm, feasible = predict(settings)
            vm = np.asarray(vm)
        return violations(vm, feasible, mon, band)

    if uv or ov:
        if not state.tap_frozen:
            move = _tap_move(state, settings.tap_position, uv, ov, vm, feasible)
            if move:
                uv, ov = after([Action("tap", "oltc", move)])
                if predict is None:
                    return actions
        # With a predictor, steps repeat until the violation is predicted to clear.
        while ov:
            at_bus = [g for g, b in state.generators.items() if b in ov]
            if not at_bus and feasible:
                highest = max(state.generators, key=lambda g: vm[state.generators[g]], default=None)
                at_bus = [highest] if highest is not None else []
            acts = [Action("curtail", g, 1) for g in sorted(at_bus)
                    if state.controllable.get(g, True) and settings.levels.get(g, 0) < LEVEL_STEPS]
            if not acts:
                break
            uv, ov = after(acts)
            if predict is None:
                break
        while uv:
            acts = [Action("reduce", f, 1) for f in sorted(state.flexible_loads)
                    if state.controllable.get(f, True) and settings.levels.get(f, 0) < LEVEL_STEPS]
            if not acts:
                break
            uv, ov = after(acts)
            if predict is None:
                break
        return _merge(actions)

    if predict is None:
        return actions
    for kind, group in (("release_curtail", state.generators), ("release_reduce", state.flexible_loads)):
        for dev in sorted(group):
            if settings.levels.get(dev, 0) <= 0 or not state.controllable.get(dev, True):
                continue
            trial = apply_actions(settings, [Action(kind, dev, 1)])
            tvm, tok = predict(trial)
            tuv, tov = violations(np.asarray(tvm), tok, mon, band)
            if not tuv and not tov:
                settings = trial
                actions.append(Action(kind, dev, 1))
    return actions
