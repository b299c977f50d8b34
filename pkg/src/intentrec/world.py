"""Synthetic homepage-block world with known latent intents.

Every user carries a daily portal-visit rate (portal_affinity) and a
block-click rate given a visit day (block_affinity). Exposures happen every
day whether or not the user looks; on days without a portal visit the labels
are forced to zero — the invalid-exposure pathology the sampler is meant to
filter. Block engagements can additionally produce a "navigational" click on
a random exposed item (probability nav_click_rate * block_affinity),
independent of item preference: habitual block clickers generate the least
preference-informative positives.

All randomness flows from per-user streams seeded by (master_seed, tag,
user_id), so generation is order-independent and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import SEQ_LEN, Dataset, ExposureRecord, UserDayContext
from .errors import ConfigError

LOOKBACK = 7                       # "visited in the past week" window, label day excluded
LABEL_START = SEQ_LEN + LOOKBACK   # first day with a full history window

_STREAM_AFFINITY = 1
_STREAM_ITEMS = 2
_STREAM_BEHAVIOR = 3


@dataclass
class WorldConfig:
    users: int = 1000
    items: int = 100
    days: int = 45
    eval_days: int = 3
    exposures_per_user_day: int = 2
    portal_alpha: float = 2.0
    portal_beta: float = 5.0
    block_alpha: float = 2.0
    block_beta: float = 2.0
    preference_dim: int = 8
    preference_scale: float = 2.0
    click_bias: float = -1.0
    nav_click_rate: float = 0.7
    item_feature_vocab: int = 0    # 0 means one feature per item
    behavior_cap: int = 20
    seed: int = 1

    def __post_init__(self):
        if self.item_feature_vocab == 0:
            self.item_feature_vocab = self.items

    def validate(self) -> None:
        if self.users <= 0:
            raise ConfigError("world.users must be positive")
        if self.items <= 0:
            raise ConfigError("world.items must be positive")
        if self.days < LABEL_START + 1:
            raise ConfigError(f"world.days must be >= {LABEL_START + 1} (history window + one label day)")
        if not 1 <= self.exposures_per_user_day <= self.items:
            raise ConfigError("world.exposures_per_user_day must be in [1, items]")
        label_days = self.days - LABEL_START
        if not 0 < self.eval_days < label_days:
            raise ConfigError(
                f"world.eval_days must leave at least one training day (label days: {label_days})"
            )
        for name in ("portal_alpha", "portal_beta", "block_alpha", "block_beta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"world.{name} must be positive")
        if self.preference_dim <= 0:
            raise ConfigError("world.preference_dim must be positive")
        if not 0.0 <= self.nav_click_rate <= 1.0:
            raise ConfigError("world.nav_click_rate must be in [0, 1]")
        if self.behavior_cap < 0:
            raise ConfigError("world.behavior_cap must be >= 0")

    @property
    def first_eval_day(self) -> int:
        return self.days - self.eval_days


@dataclass
class LatentUser:
    user_id: int
    portal_affinity: float
    block_affinity: float
    preference_vector: np.ndarray


@dataclass
class ItemCatalog:
    feature_ids: np.ndarray   # (items,) int, values in [0, feature_vocab)
    vectors: np.ndarray       # (items, preference_dim) latent item factors

    def __len__(self) -> int:
        return len(self.feature_ids)


@dataclass
class World:
    users: list[LatentUser]
    items: ItemCatalog
    config: WorldConfig


def oracle_affinities(users) -> dict[int, tuple[float, float]]:
    """True (portal, block) affinities keyed by user id.

    Test and diagnostic oracle only: nothing on a training path may call this.
    """
    return {u.user_id: (u.portal_affinity, u.block_affinity) for u in users}


def _user_rng(master_seed: int, tag: int, user_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, tag, user_id)))


def generate_world(config: WorldConfig, master_seed: int) -> World:
    config.validate()
    users = []
    for uid in range(config.users):
        rng = _user_rng(master_seed, _STREAM_AFFINITY, uid)
        users.append(
            LatentUser(
                user_id=uid,
                portal_affinity=float(rng.beta(config.portal_alpha, config.portal_beta)),
                block_affinity=float(rng.beta(config.block_alpha, config.block_beta)),
                preference_vector=rng.normal(size=config.preference_dim),
            )
        )
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, _STREAM_ITEMS)))
    feature_ids = rng.integers(0, config.item_feature_vocab, size=config.items)
    vectors = rng.normal(size=(config.items, config.preference_dim))
    vectors *= config.preference_scale / np.sqrt(config.preference_dim)
    return World(users=users, items=ItemCatalog(feature_ids, vectors), config=config)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _simulate_user(
    user: LatentUser,
    items: ItemCatalog,
    num_days: int,
    per_day: int,
    master_seed: int,
    click_bias: float,
    nav_click_rate: float,
    behavior_cap: int,
):
    rng = _user_rng(master_seed, _STREAM_BEHAVIOR, user.user_id)
    visits = rng.random(num_days) < user.portal_affinity
    blocks = visits & (rng.random(num_days) < user.block_affinity)
    appeal = _sigmoid(items.vectors @ user.preference_vector + click_bias)

    tokens = np.where(blocks, 1, np.where(visits, 0, -1))
    records: list[ExposureRecord] = []
    contexts: list[UserDayContext] = []
    clicked_features: list[tuple[int, int]] = []   # (day, feature_id), chronological

    for day in range(num_days):
        shown = rng.choice(len(items), size=per_day, replace=False)
        if blocks[day]:
            labels = rng.random(per_day) < appeal[shown]
            if rng.random() < nav_click_rate * user.block_affinity:
                labels[rng.integers(per_day)] = True   # navigational click, preference-blind
        else:
            labels = np.zeros(per_day, dtype=bool)     # no block click (or invalid exposure)

        if day >= LABEL_START:
            contexts.append(
                UserDayContext(
                    user_id=user.user_id,
                    day=day,
                    y_p=int(visits[day]),
                    y_b=int(blocks[day]),
                    r_p=int(visits[day - LOOKBACK:day].any()),
                    sequence=tuple(int(t) for t in tokens[day - SEQ_LEN:day]),
                    behaviors=tuple(fid for _, fid in clicked_features[-behavior_cap:]),
                )
            )
            for j in range(per_day):
                records.append(
                    ExposureRecord(
                        user_id=user.user_id,
                        item_id=int(shown[j]),
                        day=day,
                        label=int(labels[j]),
                        item_feature_id=int(items.feature_ids[shown[j]]),
                    )
                )
        for j in range(per_day):
            if labels[j]:
                clicked_features.append((day, int(items.feature_ids[shown[j]])))
    return records, contexts


def simulate_days(
    users,
    items: ItemCatalog,
    num_days: int,
    exposures_per_user_day: int,
    master_seed: int,
    *,
    click_bias: float = -1.0,
    nav_click_rate: float = 0.0,
    behavior_cap: int = 20,
) -> tuple[list[ExposureRecord], list[UserDayContext]]:
    """Roll the world forward; emit exposures and contexts for label days.

    Label days are those with a full 30-day sequence plus 7-day lookback
    (day >= LABEL_START). History windows never include the label day itself.
    Per-user simulation is a pure function of (master_seed, user); results
    are merged in user_id order.
    """
    if num_days < LABEL_START + 1:
        raise ConfigError(f"simulate_days: num_days must be >= {LABEL_START + 1}")
    if not 1 <= exposures_per_user_day <= len(items):
        raise ConfigError("simulate_days: exposures_per_user_day must be in [1, len(items)]")
    all_records: list[ExposureRecord] = []
    all_contexts: list[UserDayContext] = []
    for user in sorted(users, key=lambda u: u.user_id):
        records, contexts = _simulate_user(
            user, items, num_days, exposures_per_user_day, master_seed,
            click_bias, nav_click_rate, behavior_cap,
        )
        all_records.extend(records)
        all_contexts.extend(contexts)
    return all_records, all_contexts


def build_datasets(config: WorldConfig, master_seed: int) -> tuple[World, Dataset, Dataset]:
    """Generate, simulate, and split by day into train and eval datasets."""
    world = generate_world(config, master_seed)
    records, contexts = simulate_days(
        world.users,
        world.items,
        config.days,
        config.exposures_per_user_day,
        master_seed,
        click_bias=config.click_bias,
        nav_click_rate=config.nav_click_rate,
        behavior_cap=config.behavior_cap,
    )
    cut = config.first_eval_day
    train = Dataset(
        exposures=[r for r in records if r.day < cut],
        contexts=[c for c in contexts if c.day < cut],
    )
    evalset = Dataset(
        exposures=[r for r in records if r.day >= cut],
        contexts=[c for c in contexts if c.day >= cut],
    )
    return world, train, evalset


@dataclass
class WorldMeta:
    """Sidecar describing how a dataset directory was produced."""

    config: WorldConfig
    master_seed: int

    def to_text(self) -> str:
        lines = ["format = world.meta v1"]
        for f in fields(WorldConfig):
            lines.append(f"{f.name} = {getattr(self.config, f.name)}")
        lines.append(f"master_seed = {self.master_seed}")
        lines.append(f"label_start = {LABEL_START}")
        lines.append(f"first_eval_day = {self.config.first_eval_day}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "WorldMeta":
        pairs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
        if pairs.get("format") != "world.meta v1":
            raise ConfigError(f"world.meta: unsupported format {pairs.get('format')!r}")
        kwargs = {}
        for f in fields(WorldConfig):
            if f.name in pairs:
                kwargs[f.name] = _coerce(f, pairs[f.name])
        return cls(config=WorldConfig(**kwargs), master_seed=int(pairs["master_seed"]))


def _coerce(f, raw: str):
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    return raw
