"""
Score Analysis
Concept-level rollups, model comparison, gap ranking, percentile buckets and
training-data selection over externally computed caption scores
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

import config
from pipeline import CaptionRecord
from sampler import SeededRng
from taxonomy import Taxonomy, subtree
from utils import DataError, ParseError, PathLike, atomic_write, floor_fraction

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["caption_id", "model_id", "metric_id", "value"]
BREAKDOWN_KEYS = ("complexity", "objects", "attributes", "relations")


class ScoreError(DataError):
    """Score data is missing or inconsistent"""


@dataclass(frozen=True)
class ConceptScore:
    mean: Optional[float]
    n: int


class ScoreTable:
    """
    Immutable table of (caption, model, metric) -> value

    Lookups return None for missing entries, never a default number.
    """

    def __init__(self, frame: pd.DataFrame):
        self._frame = frame.set_index(["model_id", "metric_id", "caption_id"]).sort_index()
        self._cache: Dict[Tuple[str, str], Dict[str, float]] = {}

    def __len__(self) -> int:
        return len(self._frame)

    def models(self) -> List[str]:
        return sorted(self._frame.index.get_level_values("model_id").unique())

    def metrics(self) -> List[str]:
        return sorted(self._frame.index.get_level_values("metric_id").unique())

    def scores(self, model: str, metric: str) -> Dict[str, float]:
        """caption_id -> value for one (model, metric); empty when unscored"""
        key = (model, metric)
        if key not in self._cache:
            try:
                part = self._frame.loc[(model, metric)]
            except KeyError:
                part = None
            self._cache[key] = {} if part is None else {cid: float(v) for cid, v in part["value"].items()}
        return self._cache[key]

    def get(self, caption_id: str, model: str, metric: str) -> Optional[float]:
        return self.scores(model, metric).get(caption_id)

    def require(self, model: str, metric: str) -> Dict[str, float]:
        scores = self.scores(model, metric)
        if not scores:
            raise ScoreError(f"no scores for model {model!r}, metric {metric!r}")
        return scores


def ingest_scores(path: PathLike) -> ScoreTable:
    """
    Read a caption_id,model_id,metric_id,value CSV

    Args:
        path: Score file

    Returns:
        ScoreTable; duplicate keys and non-finite values are rejected
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"malformed CSV: {e}", path) from e
    missing = set(SCORE_COLUMNS) - set(frame.columns)
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", path, 1)
    frame = frame[SCORE_COLUMNS]

    values = pd.to_numeric(frame["value"], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(bad.nonzero()[0][0])
        raise ParseError(f"value {frame['value'].iloc[row]!r} is not a finite number", path, row + 2)

    dupes = frame.duplicated(subset=["caption_id", "model_id", "metric_id"], keep="first")
    if dupes.any():
        row = int(dupes.to_numpy().nonzero()[0][0])
        key = tuple(frame.iloc[row][["caption_id", "model_id", "metric_id"]])
        raise ParseError(f"duplicate score key {key}", path, row + 2)

    table = ScoreTable(frame.assign(value=values))
    logger.info(f"Loaded {len(table)} scores from {path}: models {table.models()}, metrics {table.metrics()}")
    return table


def caption_concepts(records: Iterable[CaptionRecord]) -> Dict[str, Set[str]]:
    """concept_id -> distinct caption ids whose scene graph contains it"""
    index: Dict[str, Set[str]] = {}
    for record in records:
        for cid in set(record.scene_graph.concept_ids()):
            index.setdefault(cid, set()).add(record.caption_id)
    return index


def _mean_over(captions: Iterable[str], scores: Mapping[str, float]) -> ConceptScore:
    values = [scores[c] for c in sorted(captions) if c in scores]
    if not values:
        return ConceptScore(None, 0)
    return ConceptScore(float(np.mean(values)), len(values))


def concept_scores(table: ScoreTable, records: Sequence[CaptionRecord], model: str,
                   metric: str) -> Dict[str, ConceptScore]:
    """
    Mean score per concept over the distinct captions containing it

    Args:
        table: Score table
        records: Dataset records
        model: Model id
        metric: Metric id

    Returns:
        concept_id -> ConceptScore; unscored captions count in neither mean nor n
    """
    scores = table.require(model, metric)
    return {cid: _mean_over(captions, scores) for cid, captions in sorted(caption_concepts(records).items())}


def _subtree_captions(taxonomy: Taxonomy, node: str, index: Mapping[str, Set[str]]) -> Set[str]:
    captions: Set[str] = set()
    for cid in subtree(taxonomy, node):
        captions |= index.get(cid, set())
    return captions


def rollup(table: ScoreTable, records: Sequence[CaptionRecord], taxonomy: Taxonomy, node: str,
           model: str, metric: str) -> ConceptScore:
    """Mean over distinct captions containing any concept under node"""
    scores = table.require(model, metric)
    return _mean_over(_subtree_captions(taxonomy, node, caption_concepts(records)), scores)


@dataclass(frozen=True)
class ComparisonRow:
    node: str
    mean_a: Optional[float]
    mean_b: Optional[float]
    delta: Optional[float]
    n: int
    no_coverage: bool

    def to_dict(self) -> dict:
        return {"node": self.node, "mean_a": self.mean_a, "mean_b": self.mean_b,
                "delta": self.delta, "n": self.n, "no_coverage": self.no_coverage}


def compare_models(table: ScoreTable, records: Sequence[CaptionRecord], taxonomy: Taxonomy,
                   model_a: str, model_b: str, metric: str, nodes: Sequence[str]) -> List[ComparisonRow]:
    """
    Per-node means of two models over the captions both of them scored

    Args:
        table: Score table
        records: Dataset records
        taxonomy: Taxonomy the nodes belong to
        model_a: First model id
        model_b: Second model id
        metric: Metric id
        nodes: Nodes to report, in output order

    Returns:
        One row per node; nodes without shared scored captions are flagged
    """
    scores_a = table.require(model_a, metric)
    scores_b = table.require(model_b, metric)
    shared = set(scores_a) & set(scores_b)
    index = caption_concepts(records)
    rows = []
    for node in nodes:
        captions = _subtree_captions(taxonomy, node, index) & shared
        if not captions:
            logger.warning(f"No shared scored captions under {node}")
            rows.append(ComparisonRow(node, None, None, None, 0, True))
            continue
        a = _mean_over(captions, scores_a)
        b = _mean_over(captions, scores_b)
        rows.append(ComparisonRow(node, a.mean, b.mean, a.mean - b.mean, a.n, False))
    return rows


@dataclass(frozen=True)
class GapRow:
    concept_id: str
    mean_a: float
    mean_b: float
    gap: float
    n_a: int
    n_b: int

    def to_dict(self) -> dict:
        return {"concept_id": self.concept_id, "mean_a": self.mean_a, "mean_b": self.mean_b,
                "gap": self.gap, "n_a": self.n_a, "n_b": self.n_b}


@dataclass(frozen=True)
class GapReport:
    rows: List[GapRow]
    requested: int
    eligible: int

    @property
    def shortfall(self) -> int:
        return max(0, self.requested - len(self.rows))


def _node_caption_sets(taxonomy: Taxonomy, index: Mapping[str, Set[str]]) -> Dict[str, Set[str]]:
    """Union of caption sets over each node's subtree, computed bottom-up"""
    result: Dict[str, Set[str]] = {}
    for root in taxonomy.roots.values():
        for cid in reversed(subtree(taxonomy, root)):
            captions = set(index.get(cid, set()))
            for child in taxonomy.children.get(cid, ()):
                captions |= result[child]
            result[cid] = captions
    return result


def gap_ranking(table: ScoreTable, records: Sequence[CaptionRecord], taxonomy: Optional[Taxonomy],
                model_a: str, model_b: str, metric: str, k: int = config.DEFAULT_GAP_K,
                min_support: int = config.DEFAULT_MIN_SUPPORT, through_taxonomy: bool = False) -> GapReport:
    """
    Concepts where model_a trails the reference model_b the most

    Args:
        table: Score table
        records: Dataset records
        taxonomy: Needed when through_taxonomy is set
        model_a: Model under study
        model_b: Reference model
        metric: Metric id
        k: Number of concepts to return
        min_support: Minimum scored captions per model
        through_taxonomy: Rank taxonomy nodes by subtree rollup instead of single concepts

    Returns:
        Top-k rows sorted by mean_b - mean_a descending, ties by concept id
    """
    if k < 1:
        raise DataError(f"k must be at least 1, got {k}")
    scores_a = table.require(model_a, metric)
    scores_b = table.require(model_b, metric)
    index = caption_concepts(records)
    if through_taxonomy:
        if taxonomy is None:
            raise DataError("ranking through the taxonomy needs a taxonomy")
        units = _node_caption_sets(taxonomy, index)
    else:
        units = index

    eligible = []
    for cid, captions in units.items():
        a = _mean_over(captions, scores_a)
        b = _mean_over(captions, scores_b)
        if a.n < min_support or b.n < min_support:
            continue
        eligible.append(GapRow(cid, a.mean, b.mean, b.mean - a.mean, a.n, b.n))
    eligible.sort(key=lambda r: (-r.gap, r.concept_id))
    report = GapReport(eligible[:k], k, len(eligible))
    if report.shortfall:
        logger.warning(f"Gap ranking: only {len(eligible)} concepts reach min_support={min_support}, "
                       f"{k} requested")
    return report


@dataclass(frozen=True)
class BucketRow:
    bucket: int
    percentile_lo: float
    percentile_hi: float
    value_lo: Optional[float]
    value_hi: Optional[float]
    mean: Optional[float]
    n: int

    @property
    def empty(self) -> bool:
        return self.n == 0

    def to_dict(self) -> dict:
        return {"bucket": self.bucket, "percentile_lo": self.percentile_lo, "percentile_hi": self.percentile_hi,
                "value_lo": self.value_lo, "value_hi": self.value_hi, "mean": self.mean, "n": self.n,
                "empty": self.empty}


def percentile_buckets(records: Sequence[CaptionRecord], table: ScoreTable, model: str, metric: str,
                       prop: str, n_buckets: int) -> List[BucketRow]:
    """
    Mean score per nearest-rank percentile bin of a caption property

    Bucket b holds the records whose value is above the threshold of bucket
    b - 1 and at most the value at nearest rank ceil(b * N / n_buckets).
    Ties therefore never straddle a boundary; a bucket emptied by ties is
    reported with n = 0.
    """
    if n_buckets < 1:
        raise DataError(f"n_buckets must be at least 1, got {n_buckets}")
    scores = table.require(model, metric)
    scored = [r for r in records if r.caption_id in scores]
    lacking = [r.caption_id for r in scored if prop not in r.properties]
    if lacking:
        raise ScoreError(f"{len(lacking)} scored records lack property {prop!r} (first: {lacking[0]})")
    if not scored:
        raise ScoreError(f"no records scored by {model!r} on {metric!r}")

    ordered = sorted(scored, key=lambda r: (r.properties[prop], r.caption_id))
    values = [r.properties[prop] for r in ordered]
    total = len(ordered)
    thresholds = [values[min(total, max(1, -(-b * total // n_buckets))) - 1] for b in range(1, n_buckets + 1)]

    members: List[List[CaptionRecord]] = [[] for _ in range(n_buckets)]
    b = 0
    for record, value in zip(ordered, values):
        while value > thresholds[b]:
            b += 1
        members[b].append(record)

    rows = []
    for i, group in enumerate(members):
        mean = float(np.mean([scores[r.caption_id] for r in group])) if group else None
        rows.append(BucketRow(
            bucket=i + 1,
            percentile_lo=i * 100 / n_buckets,
            percentile_hi=(i + 1) * 100 / n_buckets,
            value_lo=group[0].properties[prop] if group else None,
            value_hi=group[-1].properties[prop] if group else None,
            mean=mean,
            n=len(group),
        ))
    return rows


def complexity_breakdown(table: ScoreTable, records: Sequence[CaptionRecord], model: str, metric: str,
                         by: str = "complexity") -> List[dict]:
    """Mean score grouped by complexity or by one element count"""
    if by not in BREAKDOWN_KEYS:
        raise DataError(f"unknown breakdown {by!r}, expected one of {BREAKDOWN_KEYS}")
    scores = table.require(model, metric)
    rows = [
        {by: r.complexity if by == "complexity" else r.element_counts[by], "score": scores[r.caption_id]}
        for r in records if r.caption_id in scores
    ]
    if not rows:
        return []
    grouped = pd.DataFrame(rows).groupby(by)["score"].agg(["mean", "count"]).reset_index()
    return [{by: int(g[by]), "mean": float(g["mean"]), "n": int(g["count"])} for _, g in grouped.iterrows()]


def ingest_candidates(path: PathLike) -> Dict[str, List[dict]]:
    """Read caption_id,candidate_id,score rows into per-caption candidate groups"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"malformed CSV: {e}", path) from e
    missing = {"caption_id", "candidate_id", "score"} - set(frame.columns)
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", path, 1)
    values = pd.to_numeric(frame["score"], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(bad.nonzero()[0][0])
        raise ParseError(f"score {frame['score'].iloc[row]!r} is not a finite number", path, row + 2)
    groups: Dict[str, List[dict]] = {}
    for cid, cand, score in zip(frame["caption_id"], frame["candidate_id"], values):
        groups.setdefault(cid, []).append({"candidate_id": cand, "score": float(score)})
    return groups


def select_best_per_group(groups: Mapping[str, Sequence[dict]]) -> Dict[str, str]:
    """
    Highest-scoring candidate per caption

    Args:
        groups: caption_id -> candidates with candidate_id and score

    Returns:
        caption_id -> winning candidate_id; ties go to the lowest candidate_id
    """
    winners = {}
    for cid in sorted(groups):
        candidates = groups[cid]
        if not candidates:
            raise DataError(f"caption {cid} has no candidates")
        best = min(candidates, key=lambda c: (-c["score"], c["candidate_id"]))
        winners[cid] = best["candidate_id"]
    return winners


def _selection_size(n: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must lie in (0, 1], got {fraction}")
    if n == 0:
        raise DataError("nothing to select from")
    return max(1, floor_fraction(n, fraction))


def select_top_fraction(scores: Mapping[str, float],
                        fraction: float = config.TOP_FRACTION) -> List[Tuple[str, float]]:
    """
    Highest-scoring share of captions

    Args:
        scores: caption_id -> score
        fraction: Share to keep, in (0, 1]

    Returns:
        floor(fraction * N) (at least 1) pairs, score descending then caption_id
    """
    size = _selection_size(len(scores), fraction)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:size]


def select_random_per_group(groups: Mapping[str, Sequence[dict]], master_seed: int) -> Dict[str, str]:
    """Uniformly chosen candidate per caption, the random baseline for best-of-group"""
    rng = SeededRng(master_seed, 0)
    winners = {}
    for cid in sorted(groups):
        candidates = sorted(groups[cid], key=lambda c: c["candidate_id"])
        if not candidates:
            raise DataError(f"caption {cid} has no candidates")
        winners[cid] = rng.choice(candidates)["candidate_id"]
    return winners


def select_random_fraction(scores: Mapping[str, float], master_seed: int,
                           fraction: float = config.TOP_FRACTION) -> List[Tuple[str, float]]:
    """Random subset the same size as select_top_fraction, in caption_id order"""
    size = _selection_size(len(scores), fraction)
    rng = SeededRng(master_seed, 0)
    chosen = rng.sample(sorted(scores), size)
    return [(cid, scores[cid]) for cid in sorted(chosen)]


def select_multi_object(records: Sequence[CaptionRecord], min_objects: int = 2) -> List[CaptionRecord]:
    """Records whose scene graph has at least min_objects objects"""
    if min_objects < 1:
        raise DataError(f"min_objects must be at least 1, got {min_objects}")
    return [r for r in records if r.element_counts["objects"] >= min_objects]


def _cell(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return value


def write_rows(rows: Sequence[dict], path: PathLike, columns: Optional[Sequence[str]] = None):
    """
    Write analysis rows as CSV with a fixed header

    Args:
        rows: One dict per row
        path: Output file, replaced atomically
        columns: Header; defaults to the first row's keys
    """
    if columns is None:
        if not rows:
            raise DataError(f"no rows to write to {path} and no header given")
        columns = list(rows[0])
    frame = pd.DataFrame([{c: _cell(row.get(c)) for c in columns} for row in rows], columns=list(columns))
    atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))
    logger.info(f"Wrote {len(rows)} rows to {path}")
