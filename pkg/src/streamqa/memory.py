"""Centroid-clustered memory for scored QA pairs, split into two quality tiers.

Each tier keeps its members in a flat vector store, partitions them into
clusters with exact mean centroids, and maintains a second vector store over
the normalized centroids for two-stage retrieval. The update path decides,
per incoming pair: replace a near-duplicate of lower quality, discard, append
to the closest cluster, or open a new cluster.

Centroids are kept as raw running sums (add/subtract member vectors,
normalize on read) and fully recomputed from members on replacement, so the
stored centroid never drifts from the true member mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterator

import numpy as np

from .core import Embedding, QARecord, Thresholds, Tier, clamp_score, normalize
from .errors import (
    DegenerateEmbeddingError,
    SnapshotError,
    StateCorruptionError,
    UnknownIdError,
)
from .index import VectorStore

SNAPSHOT_FLOAT_KEYS = ("score",)


def classify_tier(score: float, gamma: float) -> Tier:
    """High tier iff score >= gamma."""
    return Tier.HIGH if score >= gamma else Tier.LOW


class Cluster:
    """A set of member record ids plus the raw running sum of their embeddings."""

    __slots__ = ("id", "member_ids", "centroid_sum")

    def __init__(self, id: int, dim: int):
        self.id = id
        self.member_ids: set[int] = set()
        self.centroid_sum = np.zeros(dim, dtype=np.float64)

    @property
    def size(self) -> int:
        return len(self.member_ids)

    def mean(self) -> np.ndarray:
        """Arithmetic mean of member embeddings (raw, not unit length)."""
        if not self.member_ids:
            raise StateCorruptionError(f"cluster {self.id} is empty")
        return self.centroid_sum / len(self.member_ids)

    def centroid(self) -> Embedding:
        """Unit-normalized centroid, the vector the centroid index holds."""
        return normalize(self.mean())


@dataclass(frozen=True)
class TierStats:
    member_count: int
    cluster_count: int
    mean_cluster_size: float


class UpdateKind(str, Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    DISCARDED = "discarded"
    NEW_CLUSTER = "new_cluster"


@dataclass(frozen=True)
class UpdateOutcome:
    """What one update-phase call did to the selected tier."""

    kind: UpdateKind
    tier: Tier
    record_id: int | None  # id of the record now stored; None when discarded
    cluster_id: int | None
    replaced_id: int | None = None

    @property
    def stored(self) -> bool:
        return self.kind is not UpdateKind.DISCARDED


class CqaTierStore:
    """One quality tier: member records, clusters, and the centroid index."""

    def __init__(self, tier: Tier, dim: int, gamma: float):
        self.tier = tier
        self.dim = dim
        self.gamma = gamma
        self.members = VectorStore(dim)
        self.clusters: dict[int, Cluster] = {}
        self.centroid_index = VectorStore(dim)
        self._member_cluster: dict[int, int] = {}
        self._next_cluster_id = 0

    # -- reads ---------------------------------------------------------------

    def records(self) -> Iterator[QARecord]:
        for _, _, payload in self.members.items():
            yield payload

    def get_record(self, record_id: int) -> QARecord:
        _, payload = self.members.get(record_id)
        return payload

    def cluster_of(self, record_id: int) -> Cluster:
        try:
            return self.clusters[self._member_cluster[record_id]]
        except KeyError:
            raise StateCorruptionError(f"record {record_id} has no cluster") from None

    def max_member_similarity(self, emb: Embedding) -> tuple[int, float] | None:
        """(record id, similarity) of the most similar member, or None if empty."""
        hits = self.members.top_k(emb, 1)
        return hits[0] if hits else None

    def assign_cluster(self, emb: Embedding, tau: float) -> tuple[int, float] | None:
        """Most similar cluster by centroid, if its similarity reaches tau.

        Returns (cluster id, similarity), or None when a new cluster is
        required (no clusters yet, or best centroid similarity below tau).
        Ties go to the lowest cluster id.
        """
        hits = self.centroid_index.top_k(emb, 1)
        if not hits or hits[0][1] < tau:
            return None
        return hits[0]

    def stats(self) -> TierStats:
        members = len(self.members)
        clusters = len(self.clusters)
        mean_size = members / clusters if clusters else 0.0
        return TierStats(members, clusters, mean_size)

    # -- writes (serialized by the owning engine) ----------------------------

    def append_member(self, cluster_id: int, record: QARecord) -> None:
        cluster = self.clusters[cluster_id]
        self.members.insert(record.id, record.embedding, record)
        cluster.member_ids.add(record.id)
        cluster.centroid_sum += record.embedding.values
        self._member_cluster[record.id] = cluster_id
        self._refresh_centroid(cluster)

    def create_cluster(self, record: QARecord) -> int:
        cluster = Cluster(self._next_cluster_id, self.dim)
        self._next_cluster_id += 1
        self.clusters[cluster.id] = cluster
        self.members.insert(record.id, record.embedding, record)
        cluster.member_ids.add(record.id)
        cluster.centroid_sum += record.embedding.values
        self._member_cluster[record.id] = cluster.id
        self.centroid_index.insert(cluster.id, cluster.centroid())
        return cluster.id

    def replace_member(self, old_id: int, record: QARecord) -> int:
        """Swap a member for a higher-scored near-duplicate inside its cluster.

        The newcomer joins the evicted member's cluster regardless of which
        centroid it is closest to; the cluster centroid is recomputed from
        scratch afterwards.
        """
        cluster = self.cluster_of(old_id)
        self.members.delete(old_id)
        self.members.insert(record.id, record.embedding, record)
        cluster.member_ids.discard(old_id)
        cluster.member_ids.add(record.id)
        del self._member_cluster[old_id]
        self._member_cluster[record.id] = cluster.id
        self._recompute_centroid(cluster)
        self._refresh_centroid(cluster)
        return cluster.id

    def remove_member(self, record_id: int) -> None:
        """Drop a member outright; deletes its cluster if that empties it."""
        cluster = self.cluster_of(record_id)
        embedding, _ = self.members.get(record_id)
        self.members.delete(record_id)
        cluster.member_ids.discard(record_id)
        del self._member_cluster[record_id]
        if not cluster.member_ids:
            del self.clusters[cluster.id]
            self.centroid_index.delete(cluster.id)
            return
        cluster.centroid_sum -= embedding.values
        self._refresh_centroid(cluster)

    def set_score(self, record_id: int, score: float) -> QARecord:
        """Overwrite a member's score in place (tier must not change)."""
        old = self.get_record(record_id)
        new_tier = classify_tier(score, self.gamma)
        if new_tier is not self.tier:
            raise StateCorruptionError(
                f"score {score} belongs to the {new_tier.value} tier; use remove + update"
            )
        updated = QARecord(old.id, old.question, old.embedding, old.answer, score, old.tier)
        self.members.set_payload(record_id, updated)
        return updated

    def check_consistency(self) -> None:
        """Raise StateCorruptionError if cross-structure invariants are broken."""
        member_ids = set(self.members.ids())
        clustered = [id for c in self.clusters.values() for id in c.member_ids]
        if len(clustered) != len(set(clustered)):
            raise StateCorruptionError("a record belongs to more than one cluster")
        if set(clustered) != member_ids:
            raise StateCorruptionError("cluster membership does not cover the member store")
        if set(self._member_cluster) != member_ids:
            raise StateCorruptionError("member->cluster map out of sync")
        if set(self.centroid_index.ids()) != set(self.clusters):
            raise StateCorruptionError("centroid index out of sync with clusters")
        for cluster in self.clusters.values():
            if cluster.size == 0:
                raise StateCorruptionError(f"cluster {cluster.id} is empty")

    def _recompute_centroid(self, cluster: Cluster) -> None:
        total = np.zeros(self.dim, dtype=np.float64)
        for member_id in sorted(cluster.member_ids):
            total += self.members.get(member_id)[0].values
        cluster.centroid_sum = total

    def _refresh_centroid(self, cluster: Cluster) -> None:
        if cluster.id in self.centroid_index:
            self.centroid_index.delete(cluster.id)
        self.centroid_index.insert(cluster.id, cluster.centroid())


class QAMemory:
    """The high/low tier pair plus the shared record-id sequence."""

    def __init__(self, dim: int, thresholds: Thresholds):
        self.dim = dim
        self.thresholds = thresholds
        self.high = CqaTierStore(Tier.HIGH, dim, thresholds.gamma)
        self.low = CqaTierStore(Tier.LOW, dim, thresholds.gamma)
        self.next_record_id = 0

    def tier_store(self, tier: Tier) -> CqaTierStore:
        return self.high if tier is Tier.HIGH else self.low

    def total_members(self) -> int:
        return len(self.high.members) + len(self.low.members)

    def update(self, question: str, embedding: Embedding, answer: str, score: float) -> UpdateOutcome:
        """Run the update phase for one scored QA pair.

        Tier is picked by score vs gamma. If the most similar member of that
        tier is within delta, the pair either replaces it (when strictly
        better scored) or is discarded. Otherwise it joins the closest
        cluster within tau, or opens a new one.
        """
        score = clamp_score(score)
        tier = classify_tier(score, self.thresholds.gamma)
        store = self.tier_store(tier)

        nearest = store.max_member_similarity(embedding)
        if nearest is not None and nearest[1] >= self.thresholds.delta:
            old_id, _ = nearest
            old = store.get_record(old_id)
            if score > old.score:
                record = self._new_record(question, embedding, answer, score, tier)
                cluster_id = store.replace_member(old_id, record)
                return UpdateOutcome(UpdateKind.REPLACED, tier, record.id, cluster_id, replaced_id=old_id)
            return UpdateOutcome(UpdateKind.DISCARDED, tier, None, None)

        assignment = store.assign_cluster(embedding, self.thresholds.tau)
        record = self._new_record(question, embedding, answer, score, tier)
        if assignment is not None:
            cluster_id, _ = assignment
            store.append_member(cluster_id, record)
            return UpdateOutcome(UpdateKind.INSERTED, tier, record.id, cluster_id)
        cluster_id = store.create_cluster(record)
        return UpdateOutcome(UpdateKind.NEW_CLUSTER, tier, record.id, cluster_id)

    def find_record(self, record_id: int) -> QARecord | None:
        for store in (self.high, self.low):
            if record_id in store.members:
                return store.get_record(record_id)
        return None

    def apply_feedback(self, record_id: int, score: float) -> UpdateOutcome | None:
        """Re-score a stored record.

        Same tier: the score is overwritten in place and None is returned.
        Crossing gamma: the record is removed and pushed back through the
        update phase on the other tier, whose outcome is returned (it may
        be discarded there if a better near-duplicate already exists).
        """
        record = self.find_record(record_id)
        if record is None:
            raise UnknownIdError(f"record {record_id} not stored")
        score = clamp_score(score)
        new_tier = classify_tier(score, self.thresholds.gamma)
        if new_tier is record.tier:
            self.tier_store(record.tier).set_score(record_id, score)
            return None
        self.tier_store(record.tier).remove_member(record_id)
        return self.update(record.question, record.embedding, record.answer, score)

    def _new_record(self, question, embedding, answer, score, tier) -> QARecord:
        record = QARecord(self.next_record_id, question, embedding, answer, score, tier)
        self.next_record_id += 1
        return record


# -- snapshot format ----------------------------------------------------------
#
# Per tier: a header line {tier, gamma, dim, next_id}, one line per record
# {id, question, answer, score, embedding}, then one line per cluster
# {id, member_ids}. Centroids are never serialized; they are rebuilt from
# members on load, so the exactness invariant survives round-trips. All lines
# are compact JSON with sorted keys, records and clusters sorted by id, so a
# save/load/save cycle is byte-identical.


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_tier(store: CqaTierStore, next_id: int, fh: IO[str]) -> None:
    fh.write(_dump({
        "tier": store.tier.value,
        "gamma": store.gamma,
        "dim": store.dim,
        "next_id": next_id,
    }) + "\n")
    for record_id in sorted(store.members.ids()):
        rec = store.get_record(record_id)
        fh.write(_dump({
            "id": rec.id,
            "question": rec.question,
            "answer": rec.answer,
            "score": rec.score,
            "embedding": rec.embedding.tolist(),
        }) + "\n")
    for cluster_id in sorted(store.clusters):
        cluster = store.clusters[cluster_id]
        fh.write(_dump({
            "id": cluster.id,
            "member_ids": sorted(cluster.member_ids),
        }) + "\n")


def load_tier(header: dict, record_rows: list[dict], cluster_rows: list[dict]) -> tuple[CqaTierStore, int]:
    """Rebuild one tier from parsed snapshot rows; returns (store, next_id)."""
    try:
        tier = Tier(header["tier"])
        gamma = float(header["gamma"])
        dim = int(header["dim"])
        next_id = int(header["next_id"])
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"bad tier header: {exc}") from exc

    store = CqaTierStore(tier, dim, gamma)
    for row in record_rows:
        try:
            # Values were unit length when saved and JSON round-trips floats
            # exactly, so rebuild bit-for-bit rather than renormalizing.
            emb = Embedding(row["embedding"])
            record = QARecord(int(row["id"]), row["question"], emb, row["answer"],
                              float(row["score"]), tier)
        except (KeyError, TypeError, ValueError, DegenerateEmbeddingError) as exc:
            raise SnapshotError(f"bad record row: {exc}") from exc
        if emb.dim != dim:
            raise SnapshotError(f"record {record.id} has dim {emb.dim}, tier has {dim}")
        if classify_tier(record.score, gamma) is not tier:
            raise SnapshotError(f"record {record.id} score {record.score} violates tier purity")
        store.members.insert(record.id, record.embedding, record)

    for row in cluster_rows:
        try:
            cluster = Cluster(int(row["id"]), dim)
            member_ids = [int(m) for m in row["member_ids"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotError(f"bad cluster row: {exc}") from exc
        if not member_ids:
            raise SnapshotError(f"cluster {cluster.id} has no members")
        for member_id in sorted(member_ids):
            if member_id not in store.members:
                raise SnapshotError(f"cluster {cluster.id} references unknown record {member_id}")
            cluster.member_ids.add(member_id)
            cluster.centroid_sum += store.members.get(member_id)[0].values
            store._member_cluster[member_id] = cluster.id
        store.clusters[cluster.id] = cluster
        store.centroid_index.insert(cluster.id, cluster.centroid())
    store._next_cluster_id = max(store.clusters, default=-1) + 1

    store.check_consistency()
    return store, next_id
