"""Dataset records, line-delimited JSON ingestion, stratified splits, and the
synthetic corpus generator used for desk-scale experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


@dataclass
class PostRecord:
    id: str
    tokens: list[int]
    visual_feat: np.ndarray
    user_id: str
    comment_ids: list[str]
    label: int

    def __post_init__(self):
        self.visual_feat = np.asarray(self.visual_feat, dtype=np.float64)
        if self.label not in (0, 1):
            raise ValueError(f"post {self.id}: label must be 0 or 1, got {self.label!r}")
        if not np.isfinite(self.visual_feat).all():
            raise ValueError(f"post {self.id}: visual features must be finite")
        if any(t < 0 for t in self.tokens):
            raise ValueError(f"post {self.id}: negative token id")


@dataclass
class CommentRecord:
    id: str
    tokens: list[int]
    user_id: str
    post_id: str


@dataclass
class UserRecord:
    id: str


@dataclass
class DatasetBundle:
    posts: list[PostRecord]
    comments: list[CommentRecord]
    users: list[UserRecord]
    split: dict[str, str] | None = None
    _post_by_id: dict[str, PostRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._post_by_id = {p.id: p for p in self.posts}
        if len(self._post_by_id) != len(self.posts):
            raise ValueError("duplicate post ids")

    def post(self, post_id: str) -> PostRecord:
        return self._post_by_id[post_id]

    def split_ids(self, name: str) -> list[str]:
        if self.split is None:
            raise ValueError("dataset has no split assignment yet")
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [p.id for p in self.posts if self.split[p.id] == name]

    @property
    def vocab_size(self) -> int:
        top = 0
        for rec in list(self.posts) + list(self.comments):
            if rec.tokens:
                top = max(top, max(rec.tokens))
        return max(top + 1, 2)

    @property
    def max_post_len(self) -> int:
        return max(len(p.tokens) for p in self.posts)

    def padded_tokens(self, post_ids, seq_len: int) -> np.ndarray:
        """Pad post token lists with token 0 to a rectangular [N, seq_len]."""
        out = np.zeros((len(post_ids), seq_len), dtype=np.int64)
        for i, pid in enumerate(post_ids):
            toks = self.post(pid).tokens
            if len(toks) > seq_len:
                raise ValueError(f"post {pid}: {len(toks)} tokens exceed seq_len {seq_len}")
            out[i, : len(toks)] = toks
        return out


# ---------------------------------------------------------------------------
# jsonl persistence


def save_dataset(bundle: DatasetBundle, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "posts.jsonl", "w", encoding="utf-8") as fh:
        for p in bundle.posts:
            fh.write(
                json.dumps(
                    {
                        "id": p.id,
                        "tokens": list(map(int, p.tokens)),
                        "visual_feat": [float(x) for x in p.visual_feat],
                        "user_id": p.user_id,
                        "comment_ids": list(p.comment_ids),
                        "label": int(p.label),
                    }
                )
                + "\n"
            )
    with open(out_dir / "comments.jsonl", "w", encoding="utf-8") as fh:
        for c in bundle.comments:
            fh.write(
                json.dumps(
                    {
                        "id": c.id,
                        "tokens": list(map(int, c.tokens)),
                        "user_id": c.user_id,
                        "post_id": c.post_id,
                    }
                )
                + "\n"
            )
    with open(out_dir / "users.jsonl", "w", encoding="utf-8") as fh:
        for u in bundle.users:
            fh.write(json.dumps({"id": u.id}) + "\n")


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({exc})") from exc


def load_dataset(data_dir) -> DatasetBundle:
    data_dir = Path(data_dir)
    posts = [
        PostRecord(
            id=obj["id"],
            tokens=obj["tokens"],
            visual_feat=obj["visual_feat"],
            user_id=obj["user_id"],
            comment_ids=obj.get("comment_ids", []),
            label=obj["label"],
        )
        for obj in _read_jsonl(data_dir / "posts.jsonl")
    ]
    comments = [
        CommentRecord(
            id=obj["id"],
            tokens=obj["tokens"],
            user_id=obj["user_id"],
            post_id=obj["post_id"],
        )
        for obj in _read_jsonl(data_dir / "comments.jsonl")
    ]
    users = [UserRecord(id=obj["id"]) for obj in _read_jsonl(data_dir / "users.jsonl")]
    return DatasetBundle(posts, comments, users)


# ---------------------------------------------------------------------------
# splits


def assign_splits(posts, fractions, seed: int) -> dict[str, str]:
    """Stratified train/val/test assignment.

    Global sizes are floor(f_train*N), floor(f_val*N), remainder; per-label
    quotas use floors plus largest-remainder top-up so each label lands
    within one sample of its proportional share.  Deterministic in the seed;
    posts are keyed by id so input order does not matter.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    if min(fractions) < 0:
        raise ValueError("fractions must be non-negative")
    n = len(posts)
    train_total = int(np.floor(fractions[0] * n))
    val_total = int(np.floor(fractions[1] * n))
    if train_total == 0 or val_total == 0 or n - train_total - val_total == 0:
        raise ValueError(f"a split would be empty for n={n} with fractions {fractions}")

    by_label: dict[int, list[str]] = {}
    for p in sorted(posts, key=lambda p: p.id):
        by_label.setdefault(p.label, []).append(p.id)
    labels = sorted(by_label)
    counts = [len(by_label[lab]) for lab in labels]
    train_q, val_q = _stratified_quotas(counts, fractions, train_total, val_total)

    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 11]))
    split: dict[str, str] = {}
    for lab, tq, vq in zip(labels, train_q, val_q):
        ids = list(by_label[lab])
        rng.shuffle(ids)
        for pid in ids[:tq]:
            split[pid] = "train"
        for pid in ids[tq : tq + vq]:
            split[pid] = "val"
        for pid in ids[tq + vq :]:
            split[pid] = "test"
    return split


def _stratified_quotas(counts, fractions, train_total, val_total):
    """Per-label train/val allocations hitting the global totals exactly while
    keeping every (label, split) cell within one sample of its proportional
    share.  Train extras go to the largest remainders; val extras go where
    the residual test cell would otherwise overflow; a final repair pass
    shifts val units between labels if any test cell still deviates past 1.
    """
    raw_train = [fractions[0] * c for c in counts]
    train_q = [int(np.floor(q)) for q in raw_train]
    order = sorted(range(len(counts)), key=lambda i: (train_q[i] - raw_train[i], i))
    for i in order[: train_total - sum(train_q)]:
        train_q[i] += 1
    train_dev = [q - r for q, r in zip(train_q, raw_train)]

    raw_val = [fractions[1] * c for c in counts]
    val_q = [int(np.floor(q)) for q in raw_val]
    keys = [(raw_val[i] - val_q[i]) - train_dev[i] for i in range(len(counts))]
    order = sorted(range(len(counts)), key=lambda i: (-keys[i], i))
    for i in order[: val_total - sum(val_q)]:
        val_q[i] += 1

    def test_dev(i):
        test_frac = 1.0 - fractions[0] - fractions[1]
        return (counts[i] - train_q[i] - val_q[i]) - test_frac * counts[i]

    for _ in range(4 * len(counts)):
        worst = max(range(len(counts)), key=test_dev)
        if test_dev(worst) <= 1.0 + 1e-9:
            break
        donors = [
            i for i in range(len(counts))
            if i != worst and val_q[i] >= 1 and (val_q[i] - 1) - raw_val[i] >= -1.0 - 1e-9
        ]
        if not donors:
            break
        donor = min(donors, key=test_dev)
        val_q[worst] += 1
        val_q[donor] -= 1
    return train_q, val_q


def split_dataset(bundle: DatasetBundle, fractions, seed: int) -> DatasetBundle:
    """Return a copy of the bundle with a fresh stratified split assignment."""
    split = assign_splits(bundle.posts, fractions, seed)
    return DatasetBundle(bundle.posts, bundle.comments, bundle.users, split=split)


# ---------------------------------------------------------------------------
# synthetic corpus

VOCAB_SIZE = 121  # token 0 is padding; real ids 1..120 split into two class blocks
POST_LEN_RANGE = (12, 20)
COMMENT_LEN_RANGE = (6, 12)
COMMENTS_PER_POST = (1, 3)


def generate_synthetic(
    n: int,
    d: int,
    separation: float,
    graph_noise: float = 0.25,
    seed: int = 0,
) -> DatasetBundle:
    """Synthetic two-class corpus with controllable signal per modality.

    ``separation`` drives both the distance between class-conditional visual
    Gaussians and the disjointness of post token distributions (zero means
    neither carries label signal).  ``graph_noise`` in [0, 1] corrupts the
    social side: commenting users are drawn across community lines and
    comment tokens lose their class conditioning as it approaches 1.
    Fully deterministic in ``seed``.
    """
    if n < 20:
        raise ValueError(f"need n >= 20, got {n}")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    if not 0.0 <= graph_noise <= 1.0:
        raise ValueError(f"graph_noise must lie in [0, 1], got {graph_noise}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 7]))

    half_vocab = (VOCAB_SIZE - 1) // 2
    blocks = {
        0: np.arange(1, 1 + half_vocab),
        1: np.arange(1 + half_vocab, VOCAB_SIZE),
    }
    direction = rng.standard_normal(d)
    direction /= np.sqrt((direction**2).sum())
    means = {0: -0.5 * separation * direction, 1: 0.5 * separation * direction}

    n_users = max(6, round(n / 15))
    users = [UserRecord(id=f"u{i:04d}") for i in range(n_users)]
    communities = {0: list(range(n_users // 2)), 1: list(range(n_users // 2, n_users))}

    def draw_tokens(label: int, length: int, p_pref: float) -> list[int]:
        own, other = blocks[label], blocks[1 - label]
        pick_own = rng.random(length) < p_pref
        toks = np.where(pick_own, rng.choice(own, size=length), rng.choice(other, size=length))
        return [int(t) for t in toks]

    def draw_user(label: int) -> str:
        own = label if rng.random() >= 0.5 * graph_noise else 1 - label
        return users[rng.choice(communities[own])].id

    p_pref_post = 0.5 + 0.5 * min(1.0, separation / 5.0)
    p_pref_comment = 0.5 + 0.5 * (1.0 - graph_noise)

    posts: list[PostRecord] = []
    comments: list[CommentRecord] = []
    for i in range(n):
        label = i % 2  # balanced within one sample
        length = int(rng.integers(POST_LEN_RANGE[0], POST_LEN_RANGE[1] + 1))
        tokens = draw_tokens(label, length, p_pref_post)
        visual = means[label] + rng.standard_normal(d)
        author = draw_user(label)
        pid = f"p{i:05d}"
        comment_ids = []
        for j in range(int(rng.integers(COMMENTS_PER_POST[0], COMMENTS_PER_POST[1] + 1))):
            cid = f"c{i:05d}_{j}"
            clen = int(rng.integers(COMMENT_LEN_RANGE[0], COMMENT_LEN_RANGE[1] + 1))
            comments.append(
                CommentRecord(
                    id=cid,
                    tokens=draw_tokens(label, clen, p_pref_comment),
                    user_id=draw_user(label),
                    post_id=pid,
                )
            )
            comment_ids.append(cid)
        posts.append(
            PostRecord(
                id=pid,
                tokens=tokens,
                visual_feat=visual,
                user_id=author,
                comment_ids=comment_ids,
                label=label,
            )
        )
    return DatasetBundle(posts, comments, users)
