"""Interleaving of 2D denoising steps and 3D rectifying steps.

The first rectify follows the first 2D step, the last one follows the 2D
step whose start timestep is nearest ``t_split``, and the remaining k - 2
are spread evenly between those two; the 2D steps after the split are left
purely 2D.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import InvalidInputError
from .schedule import NoiseSchedule

DEFAULT_STEPS = 20
DEFAULT_K = 2
DEFAULT_T_SPLIT = 300
ABLATION_GRID = [(t_split, k) for t_split in (200, 300) for k in (2, 3, 4)]


@dataclass(frozen=True)
class Denoise2D:
    t_from: int
    t_to: int


@dataclass(frozen=True)
class Rectify3D:
    t: int


@dataclass
class StepPlan:
    actions: list
    S: int
    k: int
    t_split: int
    T: int
    eta: float = 0.0
    rectify_after: list = field(default_factory=list)  # 2D step indices followed by a rectify

    @property
    def denoise_steps(self) -> list:
        return [a for a in self.actions if isinstance(a, Denoise2D)]

    def to_json_obj(self) -> dict:
        ops = []
        for a in self.actions:
            if isinstance(a, Denoise2D):
                ops.append({"op": "d2", "t_from": a.t_from, "t_to": a.t_to})
            else:
                ops.append({"op": "r3", "t_from": a.t, "t_to": a.t})
        return {"params": {"S": self.S, "k": self.k, "t_split": self.t_split, "T": self.T,
                           "eta": self.eta}, "actions": ops}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=1)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "StepPlan":
        p = obj["params"]
        actions = []
        after = []
        j = -1
        for rec in obj["actions"]:
            if rec["op"] == "d2":
                actions.append(Denoise2D(int(rec["t_from"]), int(rec["t_to"])))
                j += 1
            elif rec["op"] == "r3":
                actions.append(Rectify3D(int(rec["t_to"])))
                after.append(j)
            else:
                raise InvalidInputError(f"unknown plan op {rec['op']!r}")
        plan = cls(actions, int(p["S"]), int(p["k"]), int(p["t_split"]), int(p["T"]),
                   float(p.get("eta", 0.0)), after)
        check_plan(plan)
        return plan

    def explain(self) -> str:
        lines = [f"S={self.S} k={self.k} t_split={self.t_split} T={self.T}"]
        j = 0
        for a in self.actions:
            if isinstance(a, Denoise2D):
                lines.append(f"  2D  #{j:<3d} {a.t_from:5d} -> {a.t_to:<5d}")
                j += 1
            else:
                lines.append(f"  3D       rectify at t={a.t}")
        return "\n".join(lines)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def timesteps(S: int, T: int) -> list:
    """tau_j = round(T (1 - j/S)) for j = 0..S, with tau_S = 0."""
    return [_round_half_up(T * (1 - j / S)) for j in range(S)] + [0]


def build_step_plan(S: int, k: int, t_split: int, sched: NoiseSchedule | int, eta: float = 0.0) -> StepPlan:
    T = sched if isinstance(sched, int) else sched.T
    if S < 2:
        raise InvalidInputError("S must be >= 2")
    if k < 2:
        raise InvalidInputError("k must be >= 2")
    if not 0 < t_split < T:
        raise InvalidInputError(f"t_split must lie in (0, {T})")
    tau = timesteps(S, T)
    if t_split >= tau[0]:
        raise InvalidInputError("t_split must be below the first timestep")
    if len(set(tau)) != len(tau):
        raise InvalidInputError(f"S={S} is too fine for T={T}: repeated timesteps")

    j_last = min(range(S), key=lambda j: (abs(tau[j] - t_split), j))
    if j_last == 0:
        raise InvalidInputError("t_split falls on the first 2D step; no room for a second rectify")
    free = list(range(1, j_last))
    if k - 2 > len(free):
        raise InvalidInputError(f"k={k} needs {k - 2} slots between steps 0 and {j_last}, only {len(free)} exist")

    chosen = {0, j_last}
    for i in range(1, k - 1):
        j = _round_half_up(j_last * i / (k - 1))
        while j in chosen and j < j_last:
            j += 1
        if j >= j_last or j in chosen:
            j = next(x for x in free if x not in chosen)
        chosen.add(j)

    actions = []
    for j in range(S):
        actions.append(Denoise2D(tau[j], tau[j + 1]))
        if j in chosen:
            actions.append(Rectify3D(tau[j + 1]))
    plan = StepPlan(actions, S, k, t_split, T, eta, sorted(chosen))
    check_plan(plan)
    return plan


def build_2d_plan(S: int, sched: NoiseSchedule | int, eta: float = 0.0) -> StepPlan:
    """Plan without any rectifying step (the k=0 variant)."""
    T = sched if isinstance(sched, int) else sched.T
    if S < 1:
        raise InvalidInputError("S must be >= 1")
    tau = timesteps(S, T)
    return StepPlan([Denoise2D(tau[j], tau[j + 1]) for j in range(S)], S, 0, 0, T, eta, [])


def check_plan(plan: StepPlan) -> None:
    """Raise InvalidInputError unless the plan's structural invariants hold.

    Rectify steps sit at the end timestep of the 2D step they follow, so the
    strict decrease applies to 2D steps; no rectify comes after the 2D step
    whose start timestep is nearest t_split.
    """
    d2 = plan.denoise_steps
    if len(d2) != plan.S:
        raise InvalidInputError(f"plan has {len(d2)} 2D steps, expected {plan.S}")
    if d2 and d2[-1].t_to != 0:
        raise InvalidInputError("final 2D step must end at t=0")
    j_split = None
    if plan.k:
        j_split = min(range(len(d2)), key=lambda j: (abs(d2[j].t_from - plan.t_split), j))
    prev = None
    n_r3 = 0
    last_d2 = None
    j = -1
    for idx, a in enumerate(plan.actions):
        if isinstance(a, Denoise2D):
            if a.t_from <= a.t_to or (prev is not None and a.t_from != prev):
                raise InvalidInputError("2D timesteps must decrease and chain")
            prev = a.t_to
            last_d2 = a
            j += 1
        else:
            n_r3 += 1
            if last_d2 is None or a.t != last_d2.t_to:
                raise InvalidInputError("rectify must follow a 2D step at its end timestep")
            if isinstance(plan.actions[idx - 1], Rectify3D):
                raise InvalidInputError("two rectify steps in a row")
            if j_split is not None and j > j_split:
                raise InvalidInputError("rectify placed in the late stage")
    if n_r3 != plan.k:
        raise InvalidInputError(f"plan has {n_r3} rectify steps, expected k={plan.k}")
    if plan.k and not (len(plan.actions) > 1 and isinstance(plan.actions[1], Rectify3D)):
        raise InvalidInputError("first rectify must follow the first 2D step")
