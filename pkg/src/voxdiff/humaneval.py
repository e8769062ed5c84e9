"""Side-by-side human evaluation: pair preparation, vote storage, tallying.

Each pair shows two unlabeled shapes (ours vs. baseline, sides randomized)
for the same query image. Five independent annotators judge realism first,
then coherence with the revealed image; majority voting (3/5 or higher)
decides each pair. The ours/baseline assignment lives in a sealed key file
that the serving layer never loads, so it cannot leak into payloads.
"""
from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path


from .toydata import read_manifest
from .util import config_hash, seed_stream

PROTOCOL_VERSION = 1
VOTES_PER_PAIR = 5
CHOICES = ("a", "b")
QUESTIONS = ("realism", "coherence")


class HumanEvalError(ValueError):
    pass


class InsufficientItemsError(HumanEvalError):
    pass


class IncompleteSessionError(HumanEvalError):
    """Some pairs do not have exactly the required five votes."""

    def __init__(self, pair_ids: list[str]):
        self.pair_ids = pair_ids
        super().__init__(f"pairs without exactly {VOTES_PER_PAIR} votes: {pair_ids}")


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    category: str
    query_image: str
    shape_a: str
    shape_b: str

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "category": self.category,
            "query_image": self.query_image,
            "shape_a": self.shape_a,
            "shape_b": self.shape_b,
        }


@dataclass(frozen=True)
class VoteRecord:
    pair_id: str
    annotator_id: str
    realism_choice: str
    coherence_choice: str
    t_realism: float
    t_coherence: float
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.realism_choice not in CHOICES or self.coherence_choice not in CHOICES:
            raise HumanEvalError("choices must be 'a' or 'b'")
        if self.t_coherence < self.t_realism:
            raise HumanEvalError("coherence must be answered after realism")

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "annotator_id": self.annotator_id,
            "realism_choice": self.realism_choice,
            "coherence_choice": self.coherence_choice,
            "t_realism": self.t_realism,
            "t_coherence": self.t_coherence,
            "protocol_version": self.protocol_version,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "VoteRecord":
        return cls(
            pair_id=row["pair_id"],
            annotator_id=row["annotator_id"],
            realism_choice=row["realism_choice"],
            coherence_choice=row["coherence_choice"],
            t_realism=float(row["t_realism"]),
            t_coherence=float(row["t_coherence"]),
            protocol_version=int(row.get("protocol_version", PROTOCOL_VERSION)),
        )


def _write_jsonl(path, config: dict, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": config, "config_hash": config_hash(config)}) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row.get("type") == "config":
                continue
            rows.append(row)
    return rows


def prepare_pairs(
    manifest_ours,
    manifest_baseline,
    n_per_category: int,
    seed: int,
    out_pairs,
    out_key,
    categories: tuple[str, ...] | None = None,
) -> tuple[Path, Path]:
    """Build n pairs per category with seeded random side assignment.

    Items are matched by id (both models answered the same query). A pair
    whose two sides are the same stored shape is rejected with a warning.
    Emits the pair file and a sealed assignment key file.
    """
    import warnings

    _, ours = read_manifest(manifest_ours)
    _, base = read_manifest(manifest_baseline)
    base_by_id = {r.id: r for r in base}
    cats = categories or tuple(sorted({r.cls for r in ours}))
    rng = seed_stream(seed, "humaneval-pairs")
    pairs, keys = [], []
    for cat in cats:
        candidates = [r for r in ours if r.cls == cat and r.id in base_by_id]
        if len(candidates) < n_per_category:
            raise InsufficientItemsError(
                f"category {cat!r}: {len(candidates)} matched items < {n_per_category}"
            )
        order = rng.permutation(len(candidates))
        taken = 0
        for idx in order:
            if taken >= n_per_category:
                break
            ours_rec = candidates[idx]
            base_rec = base_by_id[ours_rec.id]
            if Path(ours_rec.grid_path) == Path(base_rec.grid_path):
                warnings.warn(f"rejected pair for {ours_rec.id}: same shape on both sides")
                continue
            ours_side = "a" if rng.random() < 0.5 else "b"
            shape_a, shape_b = (
                (ours_rec.grid_path, base_rec.grid_path)
                if ours_side == "a"
                else (base_rec.grid_path, ours_rec.grid_path)
            )
            pair_id = f"{cat}_{taken:04d}"
            pairs.append(
                PairRecord(
                    pair_id=pair_id,
                    category=cat,
                    query_image=ours_rec.render_paths[0],
                    shape_a=shape_a,
                    shape_b=shape_b,
                )
            )
            keys.append({"pair_id": pair_id, "ours": ours_side})
            taken += 1
        if taken < n_per_category:
            raise InsufficientItemsError(
                f"category {cat!r}: only {taken} usable pairs after rejections"
            )
    config = {
        "command": "humaneval-prepare",
        "n_per_category": n_per_category,
        "seed": seed,
        "categories": list(cats),
    }
    out_pairs, out_key = Path(out_pairs), Path(out_key)
    _write_jsonl(out_pairs, config, [p.to_dict() for p in pairs])
    _write_jsonl(out_key, config, keys)
    return out_pairs, out_key


def load_pairs(path) -> list[PairRecord]:
    return [
        PairRecord(
            pair_id=r["pair_id"],
            category=r["category"],
            query_image=r["query_image"],
            shape_a=r["shape_a"],
            shape_b=r["shape_b"],
        )
        for r in _read_jsonl(path)
    ]


def load_key(path) -> dict[str, str]:
    return {r["pair_id"]: r["ours"] for r in _read_jsonl(path)}


def load_votes(path) -> list[VoteRecord]:
    return [VoteRecord.from_dict(r) for r in _read_jsonl(path)]


def _question_stats(ours_votes: dict[str, list[int]], categories: dict[str, str]) -> dict:
    """ours_votes: pair_id -> list of 0/1 (vote granted to ours)."""

    def stats(pair_ids: list[str]) -> dict:
        buckets = [0] * (VOTES_PER_PAIR + 1)
        for pid in pair_ids:
            buckets[sum(ours_votes[pid])] += 1
        total = len(pair_ids)
        pct = [100.0 * b / total for b in buckets]
        majority_count = sum(buckets[(VOTES_PER_PAIR // 2 + 1) :])
        unanimous_pool = buckets[0] + buckets[-1]
        return {
            "pairs": total,
            "histogram_counts": buckets,
            "histogram_pct": pct,
            "majority_pct": 100.0 * majority_count / total,
            "unanimous_for_ours_pct": (
                100.0 * buckets[-1] / unanimous_pool if unanimous_pool else None
            ),
        }

    by_cat: dict[str, list[str]] = {}
    for pid, cat in categories.items():
        by_cat.setdefault(cat, []).append(pid)
    return {
        "per_category": {cat: stats(sorted(pids)) for cat, pids in sorted(by_cat.items())},
        "overall": stats(sorted(categories.keys())),
    }


def tally(votes_path, pairs_path, key_path) -> dict:
    """Vote-share histograms (0/5 .. 5/5 for ours), majority and unanimous
    shares, per category and overall; sides de-randomized via the key file."""
    pairs = load_pairs(pairs_path)
    key = load_key(key_path)
    votes = load_votes(votes_path)
    known = {p.pair_id for p in pairs}
    unknown = sorted({v.pair_id for v in votes} - known)
    if unknown:
        raise HumanEvalError(f"votes reference unknown pairs: {unknown}")
    by_pair: dict[str, list[VoteRecord]] = {p.pair_id: [] for p in pairs}
    for v in votes:
        by_pair[v.pair_id].append(v)
    bad = sorted(pid for pid, vs in by_pair.items() if len(vs) != VOTES_PER_PAIR)
    if bad:
        raise IncompleteSessionError(bad)
    categories = {p.pair_id: p.category for p in pairs}
    report: dict = {"protocol_version": PROTOCOL_VERSION, "votes_per_pair": VOTES_PER_PAIR}
    for question in QUESTIONS:
        ours_votes = {
            pid: [
                1 if getattr(v, f"{question}_choice") == key[pid] else 0
                for v in by_pair[pid]
            ]
            for pid in by_pair
        }
        report[question] = _question_stats(ours_votes, categories)
    return report


class VoteStore:
    """Append-only vote log with a single serialized writer.

    Tracks per-pair progress and hands each annotator an unseen pair with
    the fewest votes so every pair converges to exactly five.
    """

    def __init__(self, pairs: list[PairRecord], votes_path, seed: int = 0):
        self._lock = threading.Lock()
        self._pairs = {p.pair_id: p for p in pairs}
        self._order = [p.pair_id for p in pairs]
        self._votes_path = Path(votes_path)
        self._counts: dict[str, int] = {pid: 0 for pid in self._order}
        self._voted: set[tuple[str, str]] = set()
        self._records: dict[tuple[str, str], VoteRecord] = {}
        self._rng = seed_stream(seed, "humaneval-serve")
        if self._votes_path.exists():
            for v in load_votes(self._votes_path):
                self._ingest(v)

    def _ingest(self, vote: VoteRecord) -> None:
        key = (vote.pair_id, vote.annotator_id)
        self._voted.add(key)
        self._records[key] = vote
        self._counts[vote.pair_id] = self._counts.get(vote.pair_id, 0) + 1

    def new_annotator(self) -> str:
        return secrets.token_hex(16)  # 128-bit anonymous session token

    def next_pair(self, annotator_id: str) -> PairRecord | None:
        with self._lock:
            open_pairs = [
                pid
                for pid in self._order
                if self._counts[pid] < VOTES_PER_PAIR and (pid, annotator_id) not in self._voted
            ]
            if not open_pairs:
                return None
            fewest = min(self._counts[pid] for pid in open_pairs)
            candidates = [pid for pid in open_pairs if self._counts[pid] == fewest]
            return self._pairs[candidates[int(self._rng.integers(0, len(candidates)))]]

    def add_vote(self, vote: VoteRecord) -> str:
        """Returns 'accepted', 'duplicate' (idempotent retry), raises on conflict."""
        if vote.pair_id not in self._pairs:
            raise HumanEvalError(f"unknown pair {vote.pair_id!r}")
        key = (vote.pair_id, vote.annotator_id)
        with self._lock:
            if key in self._voted:
                if self._records[key].to_dict() == vote.to_dict():
                    return "duplicate"
                raise HumanEvalError("conflicting resubmission for an already-voted pair")
            with open(self._votes_path, "a") as fh:
                fh.write(json.dumps(vote.to_dict(), sort_keys=True) + "\n")
            self._ingest(vote)
            return "accepted"

    def progress(self) -> dict:
        with self._lock:
            complete = sum(1 for c in self._counts.values() if c >= VOTES_PER_PAIR)
            return {
                "total_pairs": len(self._order),
                "complete_pairs": complete,
                "total_votes": sum(self._counts.values()),
                "votes_per_pair": VOTES_PER_PAIR,
            }


def synth_votes(
    pairs: list[PairRecord],
    key: dict[str, str],
    bucket_counts: dict[str, dict[str, list[int]]],
    seed: int = 0,
) -> list[VoteRecord]:
    """Synthesize a complete vote file hitting exact per-category histograms.

    bucket_counts maps question -> category -> six counts (pairs whose
    "votes for ours" equal 0..5). Used to reproduce published aggregate
    distributions for tally verification.
    """
    rng = seed_stream(seed, "humaneval-synth")
    by_cat: dict[str, list[PairRecord]] = {}
    for p in pairs:
        by_cat.setdefault(p.category, []).append(p)
    votes_for: dict[str, dict[str, int]] = {q: {} for q in QUESTIONS}
    for question, cats in bucket_counts.items():
        for cat, counts in cats.items():
            pool = by_cat[cat]
            if sum(counts) != len(pool):
                raise HumanEvalError(
                    f"{question}/{cat}: bucket counts sum to {sum(counts)}, have {len(pool)} pairs"
                )
            k = 0
            for votes, count in enumerate(counts):
                for _ in range(count):
                    votes_for[question][pool[k].pair_id] = votes
                    k += 1
    annotators = [f"synth_{i}" for i in range(VOTES_PER_PAIR)]
    out = []
    for p in pairs:
        ours = key[p.pair_id]
        other = "b" if ours == "a" else "a"
        slots = list(range(VOTES_PER_PAIR))
        rng.shuffle(slots)
        r_yes = {slots[i] for i in range(votes_for["realism"][p.pair_id])}
        rng.shuffle(slots)
        c_yes = {slots[i] for i in range(votes_for["coherence"][p.pair_id])}
        for i, ann in enumerate(annotators):
            out.append(
                VoteRecord(
                    pair_id=p.pair_id,
                    annotator_id=ann,
                    realism_choice=ours if i in r_yes else other,
                    coherence_choice=ours if i in c_yes else other,
                    t_realism=float(i),
                    t_coherence=float(i) + 0.5,
                )
            )
    return out


def write_votes(path, votes: list[VoteRecord], config: dict | None = None) -> None:
    _write_jsonl(path, config or {"command": "synth-votes"}, [v.to_dict() for v in votes])
