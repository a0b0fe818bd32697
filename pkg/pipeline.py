"""
Dataset Generation Pipeline
Coordinates structure lookup, population, scene attributes and realization,
and emits, annotates and filters caption records
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

import config
from catalog import Catalog, CatalogView, ScopeSpec, scope_filter
from enumerator import NotEnumeratedError, StructureStore, query_structures
from realizer import RealizationTemplates, load_templates, realize
from sampler import (SceneAttributeSet, SceneGraph, SeededRng, expand_seed_graph, inject_focus,
                     load_seed_graph, populate, sample_scene_attributes)
from utils import (DataError, ParseError, PathLike, ProgressLogger, SceneGraphError, atomic_write,
                   dumps_line, nearest_rank_value, stable_hash)

logger = logging.getLogger(__name__)

RECORD_KEYS = (
    "caption_id", "index", "text", "scene_graph", "scene_attributes",
    "complexity", "element_counts", "seed", "properties",
)


@dataclass(frozen=True)
class StructureConstraints:
    n_objects: Optional[int] = None
    min_edges: Optional[int] = None
    max_edges: Optional[int] = None

    def to_dict(self) -> dict:
        return {"n_objects": self.n_objects, "min_edges": self.min_edges, "max_edges": self.max_edges}


def _int_pair(value, name: str) -> Tuple[int, int]:
    try:
        lo, hi = value
        return int(lo), int(hi)
    except (TypeError, ValueError) as e:
        raise DataError(f"{name} must be a [lo, hi] pair, got {value!r}") from e


@dataclass(frozen=True)
class GenerationConfig:
    """Everything a dataset's bytes depend on, plus worker count"""

    master_seed: int
    count: int
    complexity_range: Tuple[int, int]
    scene_attr_range: Tuple[int, int] = (0, 0)
    target: str = "image"
    scope: ScopeSpec = field(default_factory=ScopeSpec)
    structure_constraints: Optional[StructureConstraints] = None
    output_path: Optional[str] = None
    stratified: bool = False
    focus_concepts: Tuple[str, ...] = ()
    seed_graph: Optional[str] = None
    templates: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if not 0 <= self.master_seed <= config.MAX_SEED:
            raise DataError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.count < 0:
            raise DataError(f"count must not be negative, got {self.count}")
        lo, hi = self.complexity_range
        if not 1 <= lo <= hi:
            raise DataError(f"complexity range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")
        a_lo, a_hi = self.scene_attr_range
        if not 0 <= a_lo <= a_hi:
            raise DataError(f"scene attribute range must satisfy 0 <= lo <= hi, got [{a_lo}, {a_hi}]")
        if self.target not in config.TARGETS:
            raise DataError(f"unknown target {self.target!r}, expected one of {config.TARGETS}")
        if self.workers < 1:
            raise DataError(f"workers must be at least 1, got {self.workers}")

    @classmethod
    def from_dict(cls, data: dict, master_seed: Optional[int] = None) -> "GenerationConfig":
        """Config from a mapping; a given `master_seed` overrides the mapping's own"""
        data = dict(data)
        base = {}
        if "preset" in data:
            base = _preset_values(data.pop("preset"))
        base.update(data)
        unknown = set(base) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise DataError(f"unknown generation config fields: {sorted(unknown)}")
        if master_seed is not None:
            base["master_seed"] = master_seed
        if base.get("master_seed") is None:
            raise DataError("generation config needs master_seed")
        constraints = base.get("structure_constraints")
        try:
            return cls(
                master_seed=int(base["master_seed"]),
                count=int(base.get("count", 0)),
                complexity_range=_int_pair(base.get("complexity_range"), "complexity_range"),
                scene_attr_range=_int_pair(base.get("scene_attr_range", (0, 0)), "scene_attr_range"),
                target=base.get("target", "image"),
                scope=ScopeSpec.from_dict(base.get("scope")),
                structure_constraints=StructureConstraints(**constraints) if constraints else None,
                output_path=base.get("output_path"),
                stratified=bool(base.get("stratified", False)),
                focus_concepts=tuple(base.get("focus_concepts", ())),
                seed_graph=base.get("seed_graph"),
                templates=base.get("templates"),
                workers=int(base.get("workers", 1)),
            )
        except (TypeError, ValueError) as e:
            raise DataError(f"invalid generation config: {e}") from e

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "count": self.count,
            "complexity_range": list(self.complexity_range),
            "scene_attr_range": list(self.scene_attr_range),
            "target": self.target,
            "scope": self.scope.to_dict(),
            "structure_constraints": self.structure_constraints.to_dict() if self.structure_constraints else None,
            "output_path": self.output_path,
            "stratified": self.stratified,
            "focus_concepts": list(self.focus_concepts),
            "seed_graph": self.seed_graph,
            "templates": self.templates,
            "workers": self.workers,
        }


def _preset_values(name: str) -> dict:
    if name not in config.PRESETS:
        raise DataError(f"unknown preset {name!r}, expected one of {sorted(config.PRESETS)}")
    return dict(config.PRESETS[name])


def preset(name: str, master_seed: int, **overrides) -> GenerationConfig:
    """GenerationConfig from a named preset with optional field overrides"""
    values = _preset_values(name)
    values["master_seed"] = master_seed
    values.update({k: v for k, v in overrides.items() if v is not None})
    return GenerationConfig.from_dict(values)


def load_config(path: PathLike, master_seed: Optional[int] = None) -> GenerationConfig:
    """
    Read a GenerationConfig JSON file; a "preset" key supplies defaults

    Args:
        path: JSON object file
        master_seed: Seed taken from the command line; the file may then omit its own

    Returns:
        Validated config
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from e
    if not isinstance(data, dict):
        raise ParseError("generation config must be a JSON object", path)
    return GenerationConfig.from_dict(data, master_seed)


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: str
    index: int
    text: str
    scene_graph: SceneGraph
    scene_attributes: SceneAttributeSet
    complexity: int
    element_counts: Dict[str, int]
    seed: Dict[str, int]
    properties: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "caption_id": self.caption_id,
            "index": self.index,
            "text": self.text,
            "scene_graph": self.scene_graph.to_dict(),
            "scene_attributes": self.scene_attributes.to_list(),
            "complexity": self.complexity,
            "element_counts": dict(self.element_counts),
            "seed": dict(self.seed),
            "properties": dict(self.properties),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaptionRecord":
        missing = [k for k in RECORD_KEYS if k not in data]
        if missing:
            raise DataError(f"caption record lacks {missing}")
        graph = SceneGraph.from_dict(data["scene_graph"])
        record = cls(
            caption_id=data["caption_id"],
            index=int(data["index"]),
            text=data["text"],
            scene_graph=graph,
            scene_attributes=SceneAttributeSet.from_list(data["scene_attributes"]),
            complexity=int(data["complexity"]),
            element_counts={k: int(v) for k, v in data["element_counts"].items()},
            seed={k: int(v) for k, v in data["seed"].items()},
            properties={k: float(v) for k, v in data["properties"].items()},
        )
        if record.complexity != graph.complexity:
            raise DataError(
                f"record {record.caption_id}: complexity {record.complexity} disagrees with graph ({graph.complexity})")
        return record


def caption_id(master_seed: int, index: int, graph: SceneGraph, scene_attrs: SceneAttributeSet) -> str:
    body = dumps_line({"scene_graph": graph.to_dict(), "scene_attributes": scene_attrs.to_list()})
    return stable_hash(str(master_seed), str(index), body)


def required_complexities(gen_config: GenerationConfig, seed: Optional[SceneGraph] = None) -> List[int]:
    """Store complexities a run may query"""
    lo, hi = gen_config.complexity_range
    if seed is None:
        return list(range(lo, hi + 1))
    return list(range(1, hi - seed.complexity + 1))


class _Job:
    """Per-run state shared by every caption of a dataset"""

    def __init__(self, gen_config: GenerationConfig, store: StructureStore, view: CatalogView,
                 templates: RealizationTemplates, seed: Optional[SceneGraph]):
        self.config = gen_config
        self.store = store
        self.view = view
        self.templates = templates
        self.seed = seed
        c = gen_config.structure_constraints or StructureConstraints()
        self.pools = {}
        if seed is None:
            lo, hi = gen_config.complexity_range
            for complexity in range(lo, hi + 1):
                pool = query_structures(store, complexity, c.n_objects, c.min_edges, c.max_edges)
                if not pool:
                    raise NotEnumeratedError(f"no stored structures of complexity {complexity} match {c.to_dict()}")
                self.pools[complexity] = pool

    def caption(self, index: int) -> CaptionRecord:
        cfg = self.config
        rng = SeededRng(cfg.master_seed, index)
        lo, hi = cfg.complexity_range
        if cfg.stratified:
            complexity = lo + index % (hi - lo + 1)
        else:
            complexity = rng.integer(lo, hi)

        if self.seed is not None:
            graph = expand_seed_graph(self.seed, complexity, self.view, self.store, rng)
        else:
            graph = populate(rng.choice(self.pools[complexity]), self.view, rng)
        if cfg.focus_concepts:
            graph = inject_focus(graph, cfg.focus_concepts, self.view, rng)
        scene_attrs = sample_scene_attributes(self.view, cfg.scene_attr_range, cfg.target, rng)
        text = realize(graph, scene_attrs, self.templates)
        return CaptionRecord(
            caption_id=caption_id(cfg.master_seed, index, graph, scene_attrs),
            index=index,
            text=text,
            scene_graph=graph,
            scene_attributes=scene_attrs,
            complexity=graph.complexity,
            element_counts=graph.element_counts,
            seed={"master_seed": cfg.master_seed, "stream_index": index},
        )


_worker_job: Optional[_Job] = None


def _init_worker(job: _Job):
    global _worker_job
    _worker_job = job


def _caption_in_worker(index: int) -> CaptionRecord:
    return _annotated(_worker_job, index)


def _annotated(job: _Job, index: int) -> CaptionRecord:
    try:
        return job.caption(index)
    except SceneGraphError as e:
        e.add_note(f"while generating caption {index}")
        raise


def generate_dataset(gen_config: GenerationConfig, store: StructureStore, catalog: Catalog) -> List[CaptionRecord]:
    """
    Generate caption records for indexes 0..count-1

    Args:
        gen_config: Generation settings
        store: Structure store covering the complexity range
        catalog: Concept catalog, scoped by gen_config.scope

    Returns:
        Records in index order, independent of worker count
    """
    view = scope_filter(catalog, gen_config.scope)
    view.require(config.OBJECT_KIND)
    templates = load_templates(gen_config.templates)
    seed = None
    if gen_config.seed_graph is not None:
        seed = load_seed_graph(gen_config.seed_graph)
        if seed.complexity > gen_config.complexity_range[0]:
            raise DataError(
                f"seed graph complexity {seed.complexity} exceeds the lower complexity bound "
                f"{gen_config.complexity_range[0]}")
    missing = [c for c in required_complexities(gen_config, seed) if c not in store.by_complexity]
    if missing:
        raise NotEnumeratedError(f"structure store lacks complexities {missing}")
    if gen_config.count == 0:
        return []

    job = _Job(gen_config, store, view, templates, seed)
    progress = ProgressLogger(gen_config.count, "generate", logger)
    logger.info(f"Generating {gen_config.count} captions, complexity {gen_config.complexity_range}, "
                f"target {gen_config.target}, {gen_config.workers} worker(s)")
    records = []
    if gen_config.workers == 1:
        for index in range(gen_config.count):
            records.append(_annotated(job, index))
            progress.update(len(records))
    else:
        chunk = max(1, gen_config.count // (gen_config.workers * 16))
        with ProcessPoolExecutor(max_workers=gen_config.workers, initializer=_init_worker,
                                 initargs=(job,)) as executor:
            for record in executor.map(_caption_in_worker, range(gen_config.count), chunksize=chunk):
                records.append(record)
                progress.update(len(records))
    return records


def emit_jsonl(records: Iterable[CaptionRecord], path: PathLike) -> Path:
    """Write records as JSONL, one object per line with fixed key order"""
    lines = [dumps_line(r.to_dict()) + "\n" for r in records]
    written = atomic_write(path, "".join(lines))
    logger.info(f"Wrote {len(lines)} records to {written}")
    return written


def read_jsonl(path: PathLike) -> List[CaptionRecord]:
    """Read a dataset written by emit_jsonl"""
    records = []
    try:
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"malformed JSON: {e.msg}", path, line_no) from e
                try:
                    records.append(CaptionRecord.from_dict(data))
                except DataError as e:
                    raise ParseError(str(e), path, line_no) from e
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return records


def read_property_csv(path: PathLike) -> pd.DataFrame:
    """Read a caption_id,property,value CSV; value must be numeric"""
    try:
        frame = pd.read_csv(path, dtype={"caption_id": str, "property": str, "value": str},
                            keep_default_na=False)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"malformed CSV: {e}", path) from e
    missing = {"caption_id", "property", "value"} - set(frame.columns)
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", path, 1)
    values = pd.to_numeric(frame["value"], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(bad.to_numpy().nonzero()[0][0])
        raise ParseError(f"non-numeric value {frame['value'].iloc[row]!r}", path, row + 2)
    frame = frame.assign(value=values.astype(float))
    return frame[["caption_id", "property", "value"]]


def attach_properties(records: Sequence[CaptionRecord],
                      scores_path: PathLike) -> Tuple[List[CaptionRecord], List[str]]:
    """
    Merge external per-caption values into record properties

    Args:
        records: Dataset records
        scores_path: CSV with columns caption_id, property, value

    Returns:
        (updated records, unknown caption ids in file order)
    """
    frame = read_property_csv(scores_path)
    updates: Dict[str, Dict[str, float]] = {}
    known = {r.caption_id for r in records}
    unknown: List[str] = []
    for cid, prop, value in frame.itertuples(index=False, name=None):
        if cid not in known:
            if cid not in unknown:
                unknown.append(cid)
            continue
        updates.setdefault(cid, {})[prop] = value
    for cid in unknown:
        logger.warning(f"Property file {scores_path} references unknown caption id {cid}")
    out = [
        replace(r, properties={**r.properties, **updates[r.caption_id]}) if r.caption_id in updates else r
        for r in records
    ]
    logger.info(f"Attached properties to {len(updates)} records from {scores_path}")
    return out, unknown


def filter_records(records: Sequence[CaptionRecord], prop: str, minimum: Optional[float] = None,
                   maximum: Optional[float] = None,
                   percentile_range: Optional[Tuple[float, float]] = None) -> List[CaptionRecord]:
    """
    Keep records whose property lies within inclusive bounds

    Args:
        records: Dataset records
        prop: Property name
        minimum: Inclusive lower bound on the value
        maximum: Inclusive upper bound on the value
        percentile_range: Inclusive nearest-rank percentile bounds over the record set

    Returns:
        Surviving records in input order
    """
    if minimum is None and maximum is None and percentile_range is None:
        return list(records)
    if percentile_range is not None:
        lacking = [r.caption_id for r in records if prop not in r.properties]
        if lacking:
            raise DataError(f"{len(lacking)} records lack property {prop!r} (first: {lacking[0]})")
        if records:
            p_lo, p_hi = percentile_range
            if not 0 <= p_lo <= p_hi <= 100:
                raise DataError(f"invalid percentile range [{p_lo}, {p_hi}]")
            ordered = sorted(r.properties[prop] for r in records)
            lo_value = nearest_rank_value(ordered, p_lo)
            hi_value = nearest_rank_value(ordered, p_hi)
            minimum = lo_value if minimum is None else max(minimum, lo_value)
            maximum = hi_value if maximum is None else min(maximum, hi_value)

    kept = []
    for r in records:
        value = r.properties.get(prop)
        if value is None:
            continue
        if minimum is not None and value < minimum:
            continue
        if maximum is not None and value > maximum:
            continue
        kept.append(r)
    logger.info(f"Filter on {prop}: kept {len(kept)} of {len(records)} records")
    return kept
