"""Seeded synthetic CRM opportunities with a planted, tunable win signal.

Every distinct value of every categorical feature gets a latent propensity
drawn uniformly from [0, 1]. A record's propensity is the mean over its 13
categorical values; its log-odds of winning is

    intercept + 1.5 * signal_strength * (standardised propensity + value_effect * value_position)

where ``value_position`` is the record's centred contract-value quartile
within its segment. The intercept is solved so that exactly
``round(won_prior * n_closed)`` closed records are won.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import (
    BOOLEAN_FEATURES,
    CATEGORICAL_FEATURES,
    SEGMENTS,
    OpportunityRecord,
    RecordSet,
    Status,
)

DEFAULT_CARDINALITIES = {
    "business_unit": 8,
    "opportunity_type": 6,
    "project_location": 40,
    "general_now": 12,
    "detailed_now": 60,
    "account": 250,
    "account_location": 50,
    "sales_lead": 100,
    "engagement_manager": 120,
    "sub_practice": 30,
    "practice": 15,
    "group_practice": 6,
}

# log-normal (mu, sigma) of total contract value per segment
DEFAULT_VALUE_DISTRIBUTION = {
    "Healthcare": (11.5, 1.0),
    "Energy": (12.2, 1.2),
    "Finance": (11.9, 1.1),
}

# log-odds standard deviations per unit of signal_strength
LOGIT_SCALE = 1.5

_PREFIX = {
    "business_unit": "BU",
    "opportunity_type": "TYPE",
    "project_location": "LOC",
    "general_now": "GNOW",
    "detailed_now": "DNOW",
    "account": "ACCT",
    "account_location": "ALOC",
    "sales_lead": "LEAD",
    "engagement_manager": "EM",
    "sub_practice": "SUBP",
    "practice": "PRAC",
    "group_practice": "GRP",
}


@dataclass(frozen=True)
class SynthConfig:
    n_records: int = 25000
    won_prior: float = 0.58
    segment_mix: tuple[float, float, float] = (0.40, 0.35, 0.25)
    cardinalities: dict = field(default_factory=lambda: dict(DEFAULT_CARDINALITIES))
    signal_strength: float = 3.0
    value_distribution: dict = field(default_factory=lambda: dict(DEFAULT_VALUE_DISTRIBUTION))
    value_effect: float = -0.15
    missing_rate: float = 0.009
    open_fraction: float = 0.0
    noise_user_prediction: float = 0.25
    zipf_exponent: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1:
            raise ValueError("n_records must be >= 1")
        if not 0.0 < self.won_prior < 1.0:
            raise ValueError("won_prior must lie in (0, 1)")
        if len(self.segment_mix) != 3 or min(self.segment_mix) < 0:
            raise ValueError("segment_mix needs three non-negative fractions")
        if abs(sum(self.segment_mix) - 1.0) > 1e-9:
            raise ValueError("segment_mix must sum to 1")
        if not 0.0 <= self.missing_rate < 0.05:
            raise ValueError("missing_rate must lie in [0, 0.05)")
        if not 0.0 <= self.open_fraction < 1.0:
            raise ValueError("open_fraction must lie in [0, 1)")
        if self.signal_strength < 0 or self.noise_user_prediction < 0:
            raise ValueError("signal_strength and noise_user_prediction must be >= 0")
        unknown = set(self.cardinalities) - set(CATEGORICAL_FEATURES)
        if unknown or "segment" in self.cardinalities:
            raise ValueError(f"bad cardinality keys: {sorted(unknown) or ['segment']}")
        if any(int(k) < 1 for k in self.cardinalities.values()):
            raise ValueError("cardinalities must be >= 1")
        if set(self.value_distribution) != set(SEGMENTS):
            raise ValueError("value_distribution needs one (mu, sigma) per segment")


def _zipf_weights(k: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** exponent
    return w / w.sum()


def _segment_quartile(values: np.ndarray, segments: np.ndarray) -> np.ndarray:
    q = np.zeros(len(values), dtype=np.int64)
    for s in range(len(SEGMENTS)):
        mask = segments == s
        if not mask.any():
            continue
        cuts = np.quantile(values[mask], [0.25, 0.5, 0.75])
        q[mask] = 1 + np.searchsorted(cuts, values[mask], side="left")
    return q


def generate(config: SynthConfig) -> RecordSet:
    rng = np.random.default_rng(config.seed)
    n = config.n_records
    cards = {**DEFAULT_CARDINALITIES, **config.cardinalities}

    segments = rng.choice(len(SEGMENTS), size=n, p=np.asarray(config.segment_mix))
    seg_prop = rng.uniform(size=len(SEGMENTS))
    codes = {}
    props = {}
    for name in CATEGORICAL_FEATURES:
        if name == "segment":
            continue
        k = int(cards[name])
        props[name] = rng.uniform(size=k)
        # shuffle so popularity and propensity are unrelated
        weights = rng.permutation(_zipf_weights(k, config.zipf_exponent))
        codes[name] = rng.choice(k, size=n, p=weights)

    mean_prop = seg_prop[segments].copy()
    for name in codes:
        mean_prop += props[name][codes[name]]
    n_cat = len(CATEGORICAL_FEATURES)
    mean_prop /= n_cat

    values = np.empty(n)
    for s, seg in enumerate(SEGMENTS):
        mu, sigma = config.value_distribution[seg]
        mask = segments == s
        values[mask] = rng.lognormal(mu, sigma, size=mask.sum())
    values = np.round(values, 2)
    durations = np.round(np.exp(3.5 + 0.25 * np.log(np.maximum(values, 1.0)) + rng.normal(0, 0.5, n)))
    durations = np.maximum(durations, 1.0)

    key_flags = np.empty((n, 3), dtype=bool)
    for j in range(3):
        own = segments == j
        key_flags[:, j] = np.where(own, rng.uniform(size=n) < 0.3, rng.uniform(size=n) < 0.05)

    # standardised mean of centred propensities: unit variance before scaling
    z = (mean_prop - 0.5) * math.sqrt(12.0 * n_cat)
    quart = _segment_quartile(values, segments)
    z = LOGIT_SCALE * config.signal_strength * (z + config.value_effect * (quart - 2.5) / math.sqrt(1.25))

    is_open = rng.uniform(size=n) < config.open_fraction
    u = rng.uniform(size=n)
    # won iff logit(u) < intercept + z; pick the intercept between order statistics
    margin = np.log(u) - np.log1p(-u) - z
    closed_idx = np.flatnonzero(~is_open)
    n_won = int(math.floor(config.won_prior * len(closed_idx) + 0.5))
    sorted_margin = np.sort(margin[closed_idx])
    if len(sorted_margin) == 0:
        intercept = 0.0
    elif n_won == 0:
        intercept = sorted_margin[0] - 1.0
    elif n_won == len(sorted_margin):
        intercept = sorted_margin[-1] + 1.0
    else:
        intercept = 0.5 * (sorted_margin[n_won - 1] + sorted_margin[n_won])
    won = margin < intercept

    user_p = np.clip(mean_prop + rng.normal(0.0, config.noise_user_prediction, n), 0.0, 1.0)
    user_p = np.round(user_p, 4)

    n_missing = int(math.floor(config.missing_rate * n + 0.5))
    missing_rows = rng.choice(n, size=n_missing, replace=False) if n_missing else np.zeros(0, dtype=int)
    droppable = [c for c in CATEGORICAL_FEATURES] + list(BOOLEAN_FEATURES) + [
        "user_probability", "project_duration", "total_contract_value"]
    missing_col = rng.integers(0, len(droppable), size=n_missing)
    blank = {int(r): droppable[int(c)] for r, c in zip(missing_rows, missing_col)}

    width = len(str(n))
    records = []
    for i in range(n):
        rec = {
            "opportunity_id": f"OPP-{i + 1:0{width}d}",
            "segment": SEGMENTS[segments[i]],
            "key_account_energy": bool(key_flags[i, 1]),
            "key_account_healthcare": bool(key_flags[i, 0]),
            "key_account_finance": bool(key_flags[i, 2]),
            "status": Status.OPEN if is_open[i] else (Status.WON if won[i] else Status.LOST),
            "user_probability": float(user_p[i]),
            "project_duration": float(durations[i]),
            "total_contract_value": float(values[i]),
        }
        for name, c in codes.items():
            rec[name] = f"{_PREFIX[name]}-{int(c[i]):04d}"
        if i in blank:
            rec[blank[i]] = None
        records.append(OpportunityRecord(**rec))
    return RecordSet(tuple(records), f"synthetic:{config.seed}")
