"""Pairwise A/B perceptual study engine.

A batch pairs synthesized images from different conditions over a shared
set of layouts, mixes in sentinel trials (a reference photo against a
known-weak synthesis) to screen inattentive raters, randomizes left/right
placement and trial order under a seed, and optionally limits display
time to one of the doubling durations between 1/8 s and 8 s. Responses
append to a JSONL log keyed by (session, trial); aggregation excludes
sessions over the sentinel-failure threshold and reports per-pair
preference rates with exact two-sided binomial p-values against chance.
"""

import hashlib
import json
import math
import random
import threading
import time
from dataclasses import dataclass, asdict
from pathlib import Path

from .errors import DuplicateResponseError, EmptyResultError, ManifestError, \
    UnknownTrialError

DISPLAY_DURATIONS_MS = (125, 250, 500, 1000, 2000, 4000, 8000)
DISPLAY_SIZE = (200, 400)  # height x width at which pairs are shown
_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ComparisonTrial:
    trial_id: str
    layout_id: str
    condition_a: str
    condition_b: str
    image_a: str
    image_b: str
    left: str                 # "a" or "b"
    display_ms: int | None
    sentinel: bool

    @property
    def left_condition(self):
        return self.condition_a if self.left == "a" else self.condition_b

    @property
    def right_condition(self):
        return self.condition_b if self.left == "a" else self.condition_a

    @property
    def left_image(self):
        return self.image_a if self.left == "a" else self.image_b

    @property
    def right_image(self):
        return self.image_b if self.left == "a" else self.image_a


@dataclass(frozen=True)
class SentinelSpec:
    reference: str   # condition id holding real photos
    weak: str        # condition id of the known-weak synthesis
    count: int


@dataclass
class StudyBatch:
    batch_id: str
    seed: int
    timing_mode: str
    reference_condition: str | None
    trials: list

    def trial_map(self):
        return {t.trial_id: t for t in self.trials}

    def to_json(self):
        return {"batch_id": self.batch_id, "seed": self.seed,
                "timing_mode": self.timing_mode,
                "reference_condition": self.reference_condition,
                "trials": [asdict(t) for t in self.trials]}

    @classmethod
    def from_json(cls, obj):
        trials = [ComparisonTrial(**t) for t in obj["trials"]]
        return cls(batch_id=obj["batch_id"], seed=obj["seed"],
                   timing_mode=obj["timing_mode"],
                   reference_condition=obj.get("reference_condition"),
                   trials=trials)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))

    def content_hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _resolve_image(directory, layout_id):
    directory = Path(directory)
    for ext in _IMAGE_EXTENSIONS:
        p = directory / f"{layout_id}{ext}"
        if p.exists():
            return str(p)
    raise ManifestError(f"condition directory {directory} has no image for "
                        f"layout {layout_id!r}")


def make_batch(conditions, layout_ids, sentinel_spec=None, timing_mode="unlimited",
               seed=0, batch_id=None):
    """Builds a randomized trial batch.

    ``conditions`` maps condition id -> image directory (one image per
    layout id). Every layout appears exactly once per condition pair;
    sentinel trials pair the reference condition against the weak one.
    Timed mode draws each display duration uniformly from the doubling
    set between 125 and 8000 ms.
    """
    if timing_mode not in ("unlimited", "timed"):
        raise ManifestError(f"timing_mode must be 'unlimited' or 'timed', got {timing_mode!r}")
    if len(conditions) < 2 and sentinel_spec is None:
        raise ManifestError("need at least two conditions or a sentinel spec")
    rng = random.Random(seed)
    resolved = {cid: {lid: _resolve_image(cdir, lid) for lid in layout_ids}
                for cid, cdir in conditions.items()}
    trials = []
    pair_list = []
    cids = sorted(conditions)
    for i in range(len(cids)):
        for j in range(i + 1, len(cids)):
            pair_list.append((cids[i], cids[j]))
    for (ca, cb) in pair_list:
        for lid in layout_ids:
            trials.append([lid, ca, cb, resolved[ca][lid], resolved[cb][lid], False])
    if sentinel_spec is not None:
        for cid in (sentinel_spec.reference, sentinel_spec.weak):
            if cid not in conditions:
                raise ManifestError(f"sentinel condition {cid!r} is not in the manifest")
        for _ in range(sentinel_spec.count):
            lid = rng.choice(list(layout_ids))
            trials.append([lid, sentinel_spec.reference, sentinel_spec.weak,
                           resolved[sentinel_spec.reference][lid],
                           resolved[sentinel_spec.weak][lid], True])
    rng.shuffle(trials)
    built = []
    for n, (lid, ca, cb, ia, ib, sentinel) in enumerate(trials):
        left = "a" if rng.random() < 0.5 else "b"
        display_ms = rng.choice(DISPLAY_DURATIONS_MS) if timing_mode == "timed" else None
        built.append(ComparisonTrial(trial_id=f"t{n:05d}", layout_id=lid,
                                     condition_a=ca, condition_b=cb,
                                     image_a=ia, image_b=ib, left=left,
                                     display_ms=display_ms, sentinel=sentinel))
    return StudyBatch(batch_id=batch_id or f"batch-{seed}", seed=seed,
                      timing_mode=timing_mode,
                      reference_condition=sentinel_spec.reference if sentinel_spec else None,
                      trials=built)


@dataclass(frozen=True)
class Response:
    trial_id: str
    session_id: str
    choice: str              # "left" or "right"
    response_time_ms: float = 0.0
    timestamp: float = 0.0

    def to_json(self):
        return asdict(self)


class ResponseStore:
    """Append-only response log; exactly one response per (session, trial)."""

    def __init__(self, path=None, batch=None):
        self._path = Path(path) if path else None
        self._lock = threading.Lock()
        self._by_key = {}
        self._trials = batch.trial_map() if batch else None
        self._fh = None
        if self._path:
            if self._path.exists():
                for line in self._path.read_text().splitlines():
                    if not line.strip():
                        continue
                    resp = Response(**json.loads(line))
                    self._by_key[(resp.session_id, resp.trial_id)] = resp
            self._fh = open(self._path, "a")

    def record(self, response):
        if response.choice not in ("left", "right"):
            raise ValueError(f"choice must be 'left' or 'right', got {response.choice!r}")
        if self._trials is not None and response.trial_id not in self._trials:
            raise UnknownTrialError(response.trial_id)
        key = (response.session_id, response.trial_id)
        with self._lock:
            if key in self._by_key:
                raise DuplicateResponseError(
                    f"session {response.session_id!r} already answered trial "
                    f"{response.trial_id!r}")
            self._by_key[key] = response
            if self._fh:
                self._fh.write(json.dumps(response.to_json(), sort_keys=True) + "\n")
                self._fh.flush()
        return {"status": "ok", "trial_id": response.trial_id}

    def responses(self):
        with self._lock:
            return list(self._by_key.values())

    def answered(self, session_id):
        with self._lock:
            return {tid for (sid, tid) in self._by_key if sid == session_id}

    def close(self):
        if self._fh:
            self._fh.close()


def exact_binomial_p(successes, n):
    """Two-sided exact binomial test against p = 0.5."""
    if n == 0:
        raise EmptyResultError("no observations")
    dev = abs(2 * successes - n)  # integer arithmetic keeps the tail cut exact
    num = sum(math.comb(n, i) for i in range(n + 1) if abs(2 * i - n) >= dev)
    return num / 2 ** n


@dataclass
class PairStats:
    condition_first: str
    condition_second: str
    n: int
    count_first: int
    rate: float
    p_value: float

    def to_json(self):
        return asdict(self)


@dataclass
class StudyResult:
    pairs: list
    per_duration: dict      # duration label -> list of PairStats
    sentinel_rates: dict    # session -> {"passed": int, "failed": int}
    excluded_sessions: list
    n_sessions: int
    n_responses_used: int

    def to_json(self):
        return {"pairs": [p.to_json() for p in self.pairs],
                "per_duration": {k: [p.to_json() for p in v]
                                 for k, v in self.per_duration.items()},
                "sentinel_rates": self.sentinel_rates,
                "excluded_sessions": self.excluded_sessions,
                "n_sessions": self.n_sessions,
                "n_responses_used": self.n_responses_used}


def _chosen_condition(trial, response):
    return trial.left_condition if response.choice == "left" else trial.right_condition


def _pair_stats(counts):
    out = []
    for (ca, cb), (n_first, n) in sorted(counts.items()):
        rate = n_first / n
        out.append(PairStats(condition_first=ca, condition_second=cb, n=n,
                             count_first=n_first, rate=rate,
                             p_value=exact_binomial_p(n_first, n)))
    return out


def aggregate(store, batch, sentinel_fail_threshold=2):
    """Aggregates responses into preference rates and significance.

    Sessions failing at least ``sentinel_fail_threshold`` sentinel trials
    are dropped entirely. Sentinel trials never enter pair statistics.
    """
    trials = batch.trial_map()
    responses = store.responses()
    by_session = {}
    for resp in responses:
        if resp.trial_id not in trials:
            continue
        by_session.setdefault(resp.session_id, []).append(resp)
    if not by_session:
        raise EmptyResultError("no responses to aggregate")

    sentinel_rates = {}
    excluded = []
    for sid, resps in sorted(by_session.items()):
        passed = failed = 0
        for resp in resps:
            trial = trials[resp.trial_id]
            if not trial.sentinel:
                continue
            if _chosen_condition(trial, resp) == batch.reference_condition:
                passed += 1
            else:
                failed += 1
        sentinel_rates[sid] = {"passed": passed, "failed": failed}
        if failed >= sentinel_fail_threshold:
            excluded.append(sid)

    counts = {}
    duration_counts = {}
    used = 0
    for sid, resps in sorted(by_session.items()):
        if sid in excluded:
            continue
        for resp in sorted(resps, key=lambda r: r.trial_id):
            trial = trials[resp.trial_id]
            if trial.sentinel:
                continue
            used += 1
            pair = (trial.condition_a, trial.condition_b)
            n_first, n = counts.get(pair, (0, 0))
            first = _chosen_condition(trial, resp) == pair[0]
            counts[pair] = (n_first + (1 if first else 0), n + 1)
            dur = "unlimited" if trial.display_ms is None else str(trial.display_ms)
            dn_first, dn = duration_counts.setdefault(dur, {}).get(pair, (0, 0))
            duration_counts[dur][pair] = (dn_first + (1 if first else 0), dn + 1)
    if used == 0:
        raise EmptyResultError("no usable responses after sentinel filtering")
    return StudyResult(pairs=_pair_stats(counts),
                       per_duration={dur: _pair_stats(c)
                                     for dur, c in sorted(duration_counts.items())},
                       sentinel_rates=sentinel_rates,
                       excluded_sessions=excluded,
                       n_sessions=len(by_session),
                       n_responses_used=used)


def render_report(result):
    """Plain-text table of preference rates per condition pair."""
    lines = ["condition pair                      n      prefer-first   p-value"]
    for p in result.pairs:
        pair = f"{p.condition_first} vs {p.condition_second}"
        lines.append(f"{pair:<34} {p.n:>5}  {100 * p.rate:>10.1f}%   {p.p_value:.3g}")
    if result.excluded_sessions:
        lines.append(f"excluded sessions (sentinel failures): {', '.join(result.excluded_sessions)}")
    return "\n".join(lines)


def now_ms():
    return time.time() * 1000.0
