"""Selective, batched agent decision-making.

Who deliberates is driven by context signatures: an agent is only submitted
to the decision provider when something it can perceive has changed (new
announcement, threat entering its awareness, coordinator influence, group
resume, or fresh group-chat traffic). Providers are pluggable; the heuristic
provider is fully deterministic and the remote provider falls back to it
per-context so a round always completes.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .config import DeliberationConfig
from .errors import NotFoundError, ProviderError, ValidationError
from .geometry import Point
from .model import Agent, AgentState, Group

NEAREST_EXIT_FALLBACK = "__nearest_exit__"


@dataclass
class RankedExit:
    dest_id: str
    name: str
    distance: float
    accessible: bool


@dataclass
class VisibleThreat:
    threat_id: str
    kind: str
    severity: str
    distance: float


@dataclass
class DecisionContext:
    agent_id: int
    persona_summary: str
    surroundings_text: str
    announcement: str
    coordinator_directive: Optional[str]
    group_chat_window: list[tuple[int, str]]
    arrival_status: dict[int, bool]
    mode: str  # "GROUP_DISCUSSION" | "SOLO"
    ranked_exits: list[RankedExit] = field(default_factory=list)
    visible_threats: list[VisibleThreat] = field(default_factory=list)
    local_density: float = 0.0
    position: Point = (0.0, 0.0)
    reduced_mobility: bool = False
    round_no: int = 0


@dataclass
class Decision:
    destination_raw: str
    message: Optional[str]
    rationale: str


class DecisionProvider(Protocol):
    def decide_batch(self, contexts: Sequence[DecisionContext]) -> list[Decision]: ...

    def interview(self, persona_summary: str, state_summary: str, question: str) -> str: ...

    def validate(self) -> None: ...


# ---------------------------------------------------------------------------
# Heuristic provider


class HeuristicProvider:
    """Deterministic scoring provider: a pure function of (context, seed)."""

    def __init__(self, seed: int = 0, cfg: DeliberationConfig | None = None):
        self.seed = seed
        self.cfg = cfg or DeliberationConfig()
        self.calls = 0  # contexts answered; instrumented by the selectivity test

    def validate(self) -> None:
        return None

    def decide_batch(self, contexts: Sequence[DecisionContext]) -> list[Decision]:
        out = [self._decide(c) for c in contexts]
        self.calls += len(contexts)
        return out

    def _decide(self, ctx: DecisionContext) -> Decision:
        scored = self.score_destinations(ctx)
        if not scored:
            return Decision(
                destination_raw=NEAREST_EXIT_FALLBACK,
                message=None,
                rationale="No reachable exit is visible from here; heading for the nearest one.",
            )
        best_id, best_name, parts = scored[0]
        reasons = [f"{best_name} is {parts['distance_m']:.0f} m away"]
        if parts["threat_penalty"] > 0:
            reasons.append("other routes pass closer to danger")
        if parts["directive_bonus"] > 0:
            reasons.append("staff directed us there")
        if parts["announcement_bonus"] > 0:
            reasons.append("the announcement mentions it")
        if ctx.visible_threats:
            t = ctx.visible_threats[0]
            reasons.append(f"keeping clear of the {t.kind.lower()} {t.distance:.0f} m off")
        rationale = "; ".join(reasons) + "."
        message = None
        if ctx.mode == "GROUP_DISCUSSION":
            message = f"I vote {best_name}: {reasons[0]}."
        return Decision(destination_raw=best_id, message=message, rationale=rationale)

    def score_destinations(self, ctx: DecisionContext) -> list[tuple[str, str, dict[str, float]]]:
        """Destinations sorted best-first; the score terms are kept for
        rationale templating and interviews."""
        results = []
        max_d = max((e.distance for e in ctx.ranked_exits), default=1.0) or 1.0
        announcement = ctx.announcement.casefold()
        directive = (ctx.coordinator_directive or "").casefold()
        for e in ctx.ranked_exits:
            if ctx.reduced_mobility and not e.accessible:
                continue
            if not math.isfinite(e.distance):
                continue
            threat_pen = 0.0
            for t in ctx.visible_threats:
                # Penalize exits that roughly share a bearing with a threat.
                threat_pen += max(0.0, 1.0 - t.distance / 80.0) * 0.5
            name_cf = e.name.casefold()
            directive_bonus = 1.0 if name_cf and name_cf in directive else 0.0
            announce_bonus = 0.5 if name_cf and name_cf in announcement else 0.0
            score = e.distance / max_d + threat_pen - directive_bonus - announce_bonus
            results.append(
                (
                    e.dest_id,
                    e.name,
                    {
                        "score": score,
                        "distance_m": e.distance,
                        "threat_penalty": threat_pen,
                        "directive_bonus": directive_bonus,
                        "announcement_bonus": announce_bonus,
                    },
                )
            )
        results.sort(key=lambda r: (r[2]["score"], r[0]))
        return results

    def interview(self, persona_summary: str, state_summary: str, question: str) -> str:
        return (
            f"{persona_summary} {state_summary} "
            f"You asked: \"{question}\" - I weighed distance to each exit, how close the routes "
            f"ran to any danger, and what staff and announcements told us, then picked the best option."
        )


# ---------------------------------------------------------------------------
# Remote provider


class RemoteProvider:
    """Batches contexts to an external JSON decision endpoint.

    Request: {"contexts": [...]}; response: {"decisions": [{"agent_id",
    "destination", "message", "rationale"}]}. Any per-context failure
    (timeout, transport error, malformed output) falls back to the heuristic
    provider so the round always completes.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 10.0,
        fallback: Optional[HeuristicProvider] = None,
        cfg: DeliberationConfig | None = None,
    ):
        self.endpoint = endpoint or os.environ.get("EGRESS_DECISION_ENDPOINT")
        self.model = model or os.environ.get("EGRESS_DECISION_MODEL", "")
        self.api_key = api_key or os.environ.get("EGRESS_DECISION_API_KEY")
        self.timeout = timeout
        self.fallback = fallback or HeuristicProvider()
        self.cfg = cfg or DeliberationConfig()

    def validate(self) -> None:
        if not self.endpoint:
            raise ProviderError("remote provider has no endpoint configured")

    def decide_batch(self, contexts: Sequence[DecisionContext]) -> list[Decision]:
        import httpx

        payload = {
            "model": self.model,
            "contexts": [
                {
                    "agent_id": c.agent_id,
                    "persona": c.persona_summary,
                    "surroundings": c.surroundings_text,
                    "announcement": c.announcement,
                    "directive": c.coordinator_directive,
                    "chat": c.group_chat_window,
                    "mode": c.mode,
                }
                for c in contexts
            ],
        }
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
            by_id = {d["agent_id"]: d for d in body.get("decisions", [])}
        except Exception:
            by_id = {}
        out: list[Decision] = []
        for c in contexts:
            d = by_id.get(c.agent_id)
            if d and d.get("destination") is not None and d.get("rationale"):
                out.append(
                    Decision(
                        destination_raw=str(d["destination"]),
                        message=d.get("message"),
                        rationale=str(d["rationale"]),
                    )
                )
            else:
                out.append(self.fallback.decide_batch([c])[0])
        return out

    def interview(self, persona_summary: str, state_summary: str, question: str) -> str:
        return self.fallback.interview(persona_summary, state_summary, question)


def make_provider(name: str, seed: int = 0, cfg: DeliberationConfig | None = None) -> DecisionProvider:
    if name == "heuristic":
        return HeuristicProvider(seed=seed, cfg=cfg)
    if name == "remote":
        return RemoteProvider(cfg=cfg, fallback=HeuristicProvider(seed=seed, cfg=cfg))
    raise ValidationError(f"unknown provider {name!r}")


# ---------------------------------------------------------------------------
# Batched dispatch


def run_deliberation(
    contexts: list[DecisionContext],
    provider: DecisionProvider,
    batch_size: int,
    concurrency: int,
) -> dict[int, Decision]:
    """Answer every context; batches may complete in any order but results
    are keyed by agent id, so application order is the caller's to fix."""
    if not contexts:
        return {}
    provider.validate()
    batches = [contexts[i : i + batch_size] for i in range(0, len(contexts), batch_size)]
    results: dict[int, Decision] = {}
    if len(batches) == 1 or concurrency <= 1:
        answered = [provider.decide_batch(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            answered = list(pool.map(provider.decide_batch, batches))
    for batch, decisions in zip(batches, answered):
        for ctx, dec in zip(batch, decisions):
            results[ctx.agent_id] = dec
    return results


# ---------------------------------------------------------------------------
# Destination matching


def _levenshtein(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _normalize(s: str) -> str:
    return " ".join(s.casefold().split())


def similarity(a: str, b: str) -> float:
    """Normalized edit similarity in [0, 1]."""
    na, nb = _normalize(a), _normalize(b)
    if not na and not nb:
        return 1.0
    longest = max(len(na), len(nb))
    return 1.0 - _levenshtein(na, nb) / longest


def match_destination(
    raw: str,
    known: Sequence[tuple[str, str]],
    threshold: float = 0.6,
) -> str:
    """Resolve a free-text destination against (id, name) pairs.

    Exact normalized match on id or name wins; otherwise the best similarity
    at or above the threshold, ties broken by lexicographically smallest id;
    otherwise the nearest-exit fallback sentinel.
    """
    if not known:
        raise ValidationError("no known destinations to match against")
    if raw == NEAREST_EXIT_FALLBACK:
        return NEAREST_EXIT_FALLBACK
    norm = _normalize(raw)
    for did, name in sorted(known, key=lambda kn: kn[0]):
        if norm == _normalize(did) or norm == _normalize(name):
            return did
    best_id: Optional[str] = None
    best_sim = -1.0
    for did, name in known:
        s = max(similarity(raw, did), similarity(raw, name))
        if s > best_sim + 1e-12 or (abs(s - best_sim) <= 1e-12 and (best_id is None or did < best_id)):
            best_sim = s
            best_id = did
    if best_sim >= threshold and best_id is not None:
        return best_id
    return NEAREST_EXIT_FALLBACK


# ---------------------------------------------------------------------------
# Consensus


def force_consensus(
    group: Group,
    alive_member_ids: Sequence[int],
    nearest_exit_for_group: Callable[[], str],
) -> str:
    """Resolve an overlong discussion: plurality, tie-break by lowest id,
    nearest feasible exit when nobody voted."""
    votes = [group.destination_votes[m] for m in alive_member_ids if m in group.destination_votes]
    if votes:
        tally: dict[str, int] = {}
        for v in votes:
            tally[v] = tally.get(v, 0) + 1
        best = max(tally.items(), key=lambda kv: (kv[1], ))
        top = [d for d, n in tally.items() if n == best[1]]
        return min(top)
    return nearest_exit_for_group()


# ---------------------------------------------------------------------------
# Deliberator collection (operates on a live SimulationInstance, duck-typed)


def collect_deliberators(sim) -> list[int]:
    """Round-start deliberation set, derived from context-signature changes.

    Wakes (a) waiting groups whose every alive member reached the shared
    intermediate destination, (b) moving groups newly entering a coordinator
    influence zone (p = 0.5 per group), then collects every alive, active
    agent whose context signature differs from the one stored at its last
    provider call. Collected agents are set DISCUSSING.
    """
    arr = sim.population.arrays
    cfg: DeliberationConfig = sim.config.deliberation

    # (a) resume waiting groups once every healthy member has arrived
    # (wounded members head for exits on their own and do not hold the group)
    for g in sim.population.groups:
        healthy = [
            m
            for m in g.member_ids
            if arr.state[m] in (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
        ]
        if not healthy:
            continue
        all_waiting = all(arr.state[m] == AgentState.WAITING for m in healthy)
        if all_waiting and all(m in g.arrived_ids for m in healthy):
            g.resume_token += 1
            g.arrived_ids.clear()

    # (b) coordinator influence on moving groups (newly entering the zone)
    coords = sim.coordinator_points()
    if len(coords):
        pos = arr.pos
        rng = sim.streams["deliberation"]
        for g in sorted(sim.population.groups, key=lambda g: g.id):
            alive = [m for m in g.member_ids if arr.state[m] not in (AgentState.EXITED, AgentState.DEAD)]
            if not alive:
                g.in_coordinator_zone = False
                continue
            member_pos = pos[alive]
            d2 = ((member_pos[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
            in_zone = bool((d2 <= cfg.coordinator_influence_radius**2).any())
            newly = in_zone and not g.in_coordinator_zone
            g.in_coordinator_zone = in_zone
            moving = any(arr.state[m] == AgentState.MOVING for m in alive)
            if newly and moving:
                if float(rng.random()) < cfg.coordinator_reset_p:
                    g.coordinator_token += 1
    else:
        for g in sim.population.groups:
            g.in_coordinator_zone = False

    sig = sim.current_signatures()
    changed = (
        (sig["announcement"] != arr.sig_announcement)
        | (sig["threats"] != arr.sig_threats)
        | (sig["directive"] != arr.sig_directive)
        | (sig["group"] != arr.sig_group)
    )
    eligible = np.isin(
        arr.state, (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
    )
    collected = np.nonzero(changed & eligible)[0]
    arr.state[collected] = AgentState.DISCUSSING
    return [int(i) for i in collected]


# ---------------------------------------------------------------------------
# Interviews


def interview_agent(sim, agent_id: int, question: str, provider: DecisionProvider) -> str:
    """In-character answer grounded in persona, last rationale, and state."""
    if not question or not question.strip():
        raise ValidationError("interview question must not be empty")
    try:
        agent: Agent = sim.population.agents[agent_id]
    except (IndexError, TypeError):
        raise NotFoundError(f"unknown agent id {agent_id!r}")
    persona = agent.persona
    role = persona.role.replace("_", " ")
    article = "an" if role[:1] in "aeiou" else "a"
    persona_summary = f"I'm {persona.display_name}, {article} {role} ({', '.join(persona.traits)})."
    state = agent.state
    target_txt = ""
    if agent.target is not None:
        dest = sim.destinations.by_index(agent.target)
        target_txt = f" My destination is {dest.name} ({dest.id})."
    last = agent.rationale or "I have not had to decide anything yet."
    state_summary = f"Right now I am {state.name}.{target_txt} My last thinking: {last}"
    return provider.interview(persona_summary, state_summary, question)
