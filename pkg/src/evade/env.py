"""Deterministic object gridworld rendered as multi-channel binary frames.

Layout characters::

    .  empty      #  wall        x  hazard (-1, episode ends)
    g  gem (+1)   G  big gem (+5, episode ends)   A  agent start

Channels are agent, gem, big gem, and hazard-or-wall. The default layout
puts three gems near the start and the big gem behind a one-cell gap in a
wall line, with hazards on both sides of the gap.
"""
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_LAYOUT = (
    "...G....",
    "........",
    "###x.x##",
    "........",
    "........",
    "g.......",
    "........",
    ".g.Ag...",
)

ACTIONS = ("up", "down", "left", "right", "noop")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1), 4: (0, 0)}
AGENT, GEM, BIG_GEM, BLOCK = range(4)


class EpisodeOver(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    layout: tuple = DEFAULT_LAYOUT
    gem_reward: float = 1.0
    big_gem_reward: float = 5.0
    hazard_reward: float = -1.0
    step_cap: int = 50
    frames: int = 4
    reward_buckets: tuple = (-1.0, 0.0, 1.0, 5.0)

    def __post_init__(self):
        rows = tuple(self.layout)
        object.__setattr__(self, "layout", rows)
        object.__setattr__(self, "reward_buckets", tuple(float(b) for b in self.reward_buckets))
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("layout rows must be non-empty and equal length")
        chars = set("".join(rows))
        if not chars <= set(".#gGxA"):
            raise ValueError(f"unknown layout characters: {sorted(chars - set('.#gGxA'))}")
        if "".join(rows).count("A") != 1:
            raise ValueError("layout needs exactly one agent 'A'")
        if "".join(rows).count("G") > 1:
            raise ValueError("layout allows at most one big gem 'G'")
        b = self.reward_buckets
        if list(b) != sorted(b):
            raise ValueError("reward buckets must be sorted")
        for r in (0.0, self.gem_reward, self.big_gem_reward, self.hazard_reward):
            if r not in b:
                raise ValueError(f"reward {r} missing from buckets {b}")

    @property
    def height(self):
        return len(self.layout)

    @property
    def width(self):
        return len(self.layout[0])

    @property
    def channels(self):
        return 4

    @property
    def n_actions(self):
        return len(ACTIONS)

    def cells(self, ch):
        return frozenset((i, j) for i, row in enumerate(self.layout) for j, c in enumerate(row) if c == ch)

    def reward_class(self, reward):
        return self.reward_buckets.index(float(reward))


@dataclass(frozen=True)
class EnvState:
    agent: tuple
    gems: frozenset
    big_gem: tuple
    hazards: frozenset
    walls: frozenset
    steps: int = 0
    done: bool = False
    seed: int = 0
    frames: tuple = field(default=(), compare=False, repr=False)


def render(state, spec):
    """One-hot occupancy frame [4, H, W] as float32."""
    frame = np.zeros((4, spec.height, spec.width), dtype=np.float32)
    frame[AGENT][state.agent] = 1
    for cell in state.gems:
        frame[GEM][cell] = 1
    if state.big_gem is not None:
        frame[BIG_GEM][state.big_gem] = 1
    for cell in state.walls | state.hazards:
        frame[BLOCK][cell] = 1
    return frame


def _stack(frames):
    return np.concatenate(frames, axis=0)


def reset(spec, seed=0):
    """Initial state and observation stack (first frame repeated F times)."""
    big = spec.cells("G")
    state = EnvState(agent=next(iter(spec.cells("A"))), gems=spec.cells("g"),
                     big_gem=next(iter(big)) if big else None,
                     hazards=spec.cells("x"), walls=spec.cells("#"), seed=seed)
    frame = render(state, spec)
    frames = (frame,) * spec.frames
    state = replace(state, frames=frames)
    return state, _stack(frames)


def step(state, action, spec):
    """Advance one step: (new state, frame, reward, done)."""
    if state.done:
        raise EpisodeOver("step() called on a finished episode")
    if action not in _MOVES:
        raise ValueError(f"invalid action {action}")
    di, dj = _MOVES[action]
    i, j = state.agent[0] + di, state.agent[1] + dj
    agent = state.agent
    if 0 <= i < spec.height and 0 <= j < spec.width and (i, j) not in state.walls:
        agent = (i, j)
    reward, done = 0.0, False
    gems, big = state.gems, state.big_gem
    if agent in gems:
        gems = gems - {agent}
        reward = spec.gem_reward
    elif agent == big:
        big = None
        reward, done = spec.big_gem_reward, True
    elif agent in state.hazards:
        reward, done = spec.hazard_reward, True
    steps = state.steps + 1
    done = done or steps >= spec.step_cap
    new = replace(state, agent=agent, gems=gems, big_gem=big, steps=steps, done=done)
    frame = render(new, spec)
    new = replace(new, frames=state.frames[1:] + (frame,))
    return new, frame, reward, done


def obs_stack(state):
    return _stack(state.frames)


class ObjectWorld:
    """Stateful wrapper holding the current state for rollout loops."""

    def __init__(self, spec=None, seed=0):
        self.spec = spec or EnvSpec()
        self.seed = seed
        self.state = None

    def reset(self):
        self.state, obs = reset(self.spec, self.seed)
        return obs

    def step(self, action):
        self.state, frame, reward, done = step(self.state, action, self.spec)
        return obs_stack(self.state), frame, reward, done


def optimal_return(spec, horizon=None):
    """Best achievable return, by breadth-first search over reachable states.

    Return so far is a function of (agent, gems, big gem) alone, so the first
    visit to a state is the one with the most steps left.
    """
    horizon = spec.step_cap if horizon is None else horizon
    start, _ = reset(spec)
    start = replace(start, frames=())
    key = lambda s: (s.agent, s.gems, s.big_gem)
    seen = {key(start)}
    frontier = [(start, 0.0)]
    best = 0.0
    for _ in range(horizon):
        nxt = []
        for s, ret in frontier:
            for a in _MOVES:
                s2, _, r, done = step(s, a, spec)
                best = max(best, ret + r)
                if done or key(s2) in seen:
                    continue
                seen.add(key(s2))
                nxt.append((replace(s2, frames=()), ret + r))
        frontier = nxt
    return best
