"""Campaign orchestration from a SMILES library to a ranked report.

Stages run in a fixed order and every per-ligand or per-task random stream
is derived from the master seed, so a config and seed fully determine the
report bytes. Docking batches and free-energy replicas are executed through
the scheduler; the reported stage times come from a discrete-event replay of
the same task graph, which keeps reports free of host timing noise.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from . import batcher, dock, sched
from ._seeding import derive_seed
from .chem import Ligand, SmilesError, embed_3d
from .codec import Dictionary
from .fep import (
    AlchemicalModel,
    CompoundPair,
    FreeEnergyResult,
    SemController,
    abfe_estimate,
    awh_run,
    pair_compounds,
    write_results,
)
from .library import LibraryError, read_library

FUNNEL = ("library", "parsed", "docked", "scored", "shortlisted", "fep")
SCORE_TO_KT = 0.5
FEP_SECONDS_PER_STEP = 5e-5
# toy solvation: the ligand loses part of its hydration shell on binding
SOLVATION_COMPLEX_PER_ATOM = -0.01
SOLVATION_LIGAND_PER_ATOM = -0.03

DEFAULT_KEEP = {"shortlist": 0.2, "fep": 0.5}
DEFAULT_KNOBS = {"restarts": 2, "diversity_delta": 1.0, "max_steps": 40, "keep_top": 3, "min_score": None}
DEFAULT_CLUSTER = {"workers": [{"id": "node", "cpu": 8, "accel": 1, "memory": 32000, "count": 4}]}
DEFAULT_FEP = {"target_sem": 0.05, "max_replicas": 16, "min_replicas": 2, "steps": 20000}


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, report: "CampaignReport"):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report


def _shipped(name: str) -> Path:
    return Path(str(resources.files("vscreen").joinpath(f"data/{name}")))


@dataclass
class CampaignConfig:
    library: str
    pocket: str | None = None
    dictionary: str | None = None
    keep: dict = field(default_factory=lambda: dict(DEFAULT_KEEP))
    knobs: dict = field(default_factory=lambda: dict(DEFAULT_KNOBS))
    cluster: dict | str = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_CLUSTER)))
    policy: dict | str | None = None
    fep: dict = field(default_factory=lambda: dict(DEFAULT_FEP))
    seed: int = 0
    threads: int = 1
    top_n: int = 20
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        self.keep = {**DEFAULT_KEEP, **self.keep}
        self.knobs = {**DEFAULT_KNOBS, **self.knobs}
        self.fep = {**DEFAULT_FEP, **self.fep}
        self.base_dir = Path(self.base_dir)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        for stage, frac in self.keep.items():
            if not isinstance(frac, (int, float)) or not 0 < frac <= 1:
                raise ConfigError(f"keep fraction for {stage!r} must be in (0, 1], got {frac!r}")
        unknown = set(self.keep) - set(DEFAULT_KEEP)
        if unknown:
            raise ConfigError(f"unknown funnel stages {sorted(unknown)}")
        for name in ("library", "pocket", "dictionary"):
            value = getattr(self, name)
            if value is not None and not self.resolve(value).is_file():
                raise ConfigError(f"{name} file not found: {self.resolve(value)}")
        for name in ("cluster", "policy"):
            value = getattr(self, name)
            if isinstance(value, str) and not self.resolve(value).is_file():
                raise ConfigError(f"{name} file not found: {self.resolve(value)}")
        k = self.knobs
        if int(k["restarts"]) < 1 or int(k["max_steps"]) < 0 or float(k["diversity_delta"]) < 0:
            raise ConfigError("docking knobs out of range")
        if k["keep_top"] is not None and int(k["keep_top"]) < 1:
            raise ConfigError("keep_top must be at least 1")
        if not float(self.fep["target_sem"]) > 0 or int(self.fep["max_replicas"]) < 2:
            raise ConfigError("fep needs target_sem > 0 and max_replicas >= 2")
        if int(self.fep["steps"]) < 1000:
            raise ConfigError("fep steps must be at least 1000")
        if self.threads < 1 or self.top_n < 0:
            raise ConfigError("threads must be >= 1 and top_n >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path = ".") -> "CampaignConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "library" not in data:
            raise ConfigError("config needs a library path")
        try:
            config = cls(**dict(data), base_dir=Path(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "CampaignConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class CampaignReport:
    funnel: list[dict] = field(default_factory=list)
    stages: dict = field(default_factory=dict)
    ranking: list[dict] = field(default_factory=list)
    pairs: list[dict] = field(default_factory=list)
    rejected: list[dict] = field(default_factory=list)
    trace: str = "trace.jsonl"
    seed: int = 0
    failed_stage: str | None = None
    error: str | None = None

    def counts(self) -> dict[str, int]:
        return {row["stage"]: row["count"] for row in self.funnel}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def rank_ligands(scores: Mapping[str, float]) -> list[str]:
    """Best score first; equal scores in ascending id order."""
    return sorted(scores, key=lambda ident: (-scores[ident], ident))


def keep_count(n: int, fraction: float) -> int:
    return 0 if n == 0 else max(1, math.floor(n * fraction + 1e-9))


def pair_model(pair: CompoundPair, score_a: float, score_b: float) -> AlchemicalModel:
    """Toy two-state transformation for a compound pair.

    The end-state offset follows the docking-score gap and the end-state
    stiffness grows with the number of atoms the transformation changes.
    """
    return AlchemicalModel(
        stiffness=(1.0, 1.0 + 0.1 * pair.perturbation_size),
        offsets=(0.0, SCORE_TO_KT * (score_a - score_b)),
    )


def ligand_abfe(ligand: Ligand, poses) -> float:
    complex_energies = [-SCORE_TO_KT * p.score for p in poses]
    solvation = (SOLVATION_COMPLEX_PER_ATOM * ligand.heavy_atoms, 0.0, SOLVATION_LIGAND_PER_ATOM * ligand.heavy_atoms)
    return abfe_estimate(complex_energies, [0.0], [0.0], solvation)


def _r(x: float | None) -> float | None:
    return None if x is None else round(float(x), 6)


class _Campaign:
    def __init__(self, config: CampaignConfig):
        self.config = config
        self.report = CampaignReport(seed=config.seed)
        self.stage = "config"
        self.tasks: list[sched.Task] = []

    def count(self, stage: str, n: int) -> None:
        self.report.funnel.append({"stage": stage, "count": n})

    def run(self) -> tuple[CampaignReport, sched.Trace]:
        cfg = self.config
        self.stage = "library"
        dictionary = Dictionary.load(cfg.resolve(cfg.dictionary)) if cfg.dictionary else None
        records = read_library(cfg.resolve(cfg.library), dictionary)
        self.count("library", len(records))
        pocket = dock.Pocket.load(cfg.resolve(cfg.pocket) if cfg.pocket else _shipped("pocket.json"))
        workers = (
            sched.load_workers(cfg.resolve(cfg.cluster)) if isinstance(cfg.cluster, str) else sched.workers_from_dict(cfg.cluster)
        )
        policy = (
            sched.load_policy(cfg.resolve(cfg.policy))
            if isinstance(cfg.policy, str)
            else (sched.AutoAllocPolicy.from_dict(cfg.policy) if cfg.policy else None)
        )

        self.stage = "parse"
        classes = batcher.default_classes()
        ligands: dict[str, Ligand] = {}
        for smiles, ident in records:
            try:
                lig = Ligand.from_smiles(ident, smiles)
                batcher.size_class(lig, classes)
            except (SmilesError, batcher.OutOfRange) as exc:
                self.report.rejected.append({"ligand": ident, "reason": str(exc)})
                continue
            ligands[ident] = lig
        self.count("parsed", len(ligands))

        self.stage = "embed"
        conformers = {
            i: embed_3d(lig.graph, seed=derive_seed(cfg.seed, "embed", i), ligand_id=i) for i, lig in ligands.items()
        }

        self.stage = "dock"
        device = batcher.DeviceModel()
        batches = batcher.batch_ligands(list(ligands.values()), classes, device)
        has_accel = any(w.capacity.accel > 0 for w in workers)
        dock_tasks = []
        batch_of: dict[str, str] = {}
        members: dict[str, list[str]] = {}
        for k, b in enumerate(batches):
            tid = f"dock-{k:04d}"
            members[tid] = list(b.ligand_ids)
            for lid in b.ligand_ids:
                batch_of[lid] = tid
            dock_tasks.append(
                sched.Task(
                    tid,
                    sched.Resources(cpu=1, accel=1 if has_accel else 0),
                    stage="dock",
                    sim_duration=device.batch_time(len(b.ligand_ids), classes[b.class_index]),
                )
            )
        knobs = cfg.knobs

        def run_dock(task: sched.Task):
            out = {}
            for lid in members[task.id]:
                out[lid] = dock.dock(
                    conformers[lid],
                    pocket,
                    restarts=int(knobs["restarts"]),
                    diversity_delta=float(knobs["diversity_delta"]),
                    max_steps=int(knobs["max_steps"]),
                    seed=derive_seed(cfg.seed, "dock", lid),
                )
            return out

        results = sched.run_live(dock_tasks, workers, run_dock, threads=cfg.threads)
        self.tasks.extend(dock_tasks)
        poses = {}
        for tid in sorted(results, key=sched.natural_key):
            poses.update(results[tid])
        docked = sorted(lid for lid in ligands if poses.get(lid))
        self.count("docked", len(docked))

        self.stage = "rescore"
        min_score = knobs["min_score"]
        keep_top = knobs["keep_top"]
        kept: dict[str, list[dock.Pose]] = {}
        for lid in docked:
            rescored = dock.rescore_poses(conformers[lid], poses[lid], pocket)
            survivors = dock.filter_poses(
                rescored, keep_top=keep_top, min_score=-math.inf if min_score is None else float(min_score)
            )
            if survivors:
                kept[lid] = survivors
        scores = {lid: dock.ligand_score(p) for lid, p in kept.items()}
        self.count("scored", len(scores))

        self.stage = "rank"
        ranked = rank_ligands(scores)
        shortlist = ranked[: keep_count(len(ranked), cfg.keep["shortlist"])]
        self.count("shortlisted", len(shortlist))
        chosen = shortlist[: keep_count(len(shortlist), cfg.keep["fep"])]
        self.count("fep", len(chosen))

        self.stage = "fep"
        dg: dict[str, float] = {}
        if len(chosen) >= 2:
            pairs = pair_compounds([ligands[i] for i in chosen], threads=cfg.threads)
            self.report.pairs = self._run_fep(pairs, scores, batch_of, workers)
        for lid in chosen:
            dg[lid] = ligand_abfe(ligands[lid], kept[lid])

        self.stage = "report"
        final = sorted(chosen, key=lambda i: (dg[i], i)) + [i for i in ranked if i not in dg]
        self.report.ranking = [
            {
                "rank": n + 1,
                "ligand": lid,
                "smiles": ligands[lid].smiles,
                "score": _r(scores[lid]),
                "dg_kT": _r(dg.get(lid)),
            }
            for n, lid in enumerate(final[: cfg.top_n])
        ]

        self.stage = "schedule"
        trace = sched.run_simulation(self.tasks, workers, policy, seed=derive_seed(cfg.seed, "sched"))
        self._stage_times(trace)
        return self.report, trace

    def _run_fep(self, pairs, scores, batch_of, workers) -> list[dict]:
        cfg = self.config
        fc = cfg.fep
        steps = int(fc["steps"])
        entries = []
        for n, pair in enumerate(pairs, start=1):
            pid = f"P{n:03d}"
            entries.append(
                (
                    pid,
                    pair,
                    pair_model(pair, scores[pair.a], scores[pair.b]),
                    SemController(float(fc["target_sem"]), int(fc["max_replicas"]), int(fc["min_replicas"])),
                    derive_seed(cfg.seed, "fep", pid),
                )
            )
        by_task = {}
        rnd = 0
        while True:
            active = [e for e in entries if not e[3].done]
            if not active:
                break
            tasks = []
            for pid, pair, model, ctl, seed in active:
                tid = f"fep-{pid}-r{rnd:02d}"
                by_task[tid] = (model, derive_seed(seed, rnd))
                tasks.append(
                    sched.Task(
                        tid,
                        sched.Resources(cpu=1),
                        dependencies=frozenset({batch_of[pair.a], batch_of[pair.b]}),
                        stage="fep",
                        sim_duration=steps * FEP_SECONDS_PER_STEP,
                    )
                )

            def replica(task: sched.Task):
                model, seed = by_task[task.id]
                res = awh_run(model, steps, seed)
                return res.delta_f, len(res.bias_history)

            # dock tasks already finished, so only the fep tasks are submitted here
            live = [dataclasses.replace(t, dependencies=frozenset()) for t in tasks]
            out = sched.run_live(live, workers, replica, threads=cfg.threads)
            for (pid, _, _, ctl, _), task in zip(active, tasks):
                ctl.add(out[task.id])
            self.tasks.extend(tasks)
            rnd += 1

        self.fep_results: list[tuple[str, CompoundPair, FreeEnergyResult]] = []
        rows = []
        for pid, pair, model, ctl, _ in entries:
            res = ctl.result()
            self.fep_results.append((pid, pair, res))
            rows.append(
                {
                    "pair_id": pid,
                    "ligand_a": pair.a,
                    "ligand_b": pair.b,
                    "mcs_atoms": pair.similarity,
                    "perturbation_size": pair.perturbation_size,
                    "ddg_kT": _r(res.estimate),
                    "sem_kT": _r(res.sem),
                    "replicas": res.replicas,
                    "flag": res.flag,
                    "exact_ddg_kT": _r(model.exact_delta_f),
                }
            )
        return rows

    def _stage_times(self, trace: sched.Trace) -> None:
        stage_of = {t.id: t.stage for t in self.tasks}
        starts = trace.task_events("start")
        finishes = trace.task_events("finish")
        for stage in ("dock", "fep"):
            ids = [t for t, s in stage_of.items() if s == stage]
            if ids:
                t0 = min(starts[i]["t"] for i in ids)
                t1 = max(finishes[i]["t"] for i in ids)
                wall = (t1 - t0) / sched.US
            else:
                wall = 0.0
            self.report.stages[stage] = {"tasks": len(ids), "wall_clock_s": _r(wall)}
        self.report.stages["total"] = {"tasks": len(self.tasks), "wall_clock_s": _r(trace.makespan)}
        end_of = {"dock": 0, "fep": 0}
        for i, s in stage_of.items():
            end_of[s] = max(end_of[s], finishes[i]["t"])
        end_of["fep"] = max(end_of["fep"], end_of["dock"])
        emit_at = {"library": 0, "parsed": 0, "docked": end_of["dock"], "scored": end_of["dock"],
                   "shortlisted": end_of["dock"], "fep": end_of["fep"]}
        for row in self.report.funnel:
            trace.emit(emit_at[row["stage"]], "stage", stage=row["stage"], count=row["count"])
        trace.events.sort(key=lambda e: e["t"])


def run_campaign(config: CampaignConfig, out_dir: str | Path | None = None, trace_path: str | Path | None = None) -> CampaignReport:
    """Run every stage and, with ``out_dir``, write report, trace and tables.

    On failure a partial report tagged with the failing stage is written and
    :class:`StageFailure` is raised.
    """
    config.validate()
    campaign = _Campaign(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    trace_file = Path(trace_path) if trace_path is not None else (out / "trace.jsonl" if out else None)
    if trace_file is not None:
        campaign.report.trace = trace_file.name if out is not None and trace_file.parent == out else str(trace_file)
    try:
        report, trace = campaign.run()
    except Exception as exc:
        campaign.report.failed_stage = campaign.stage
        campaign.report.error = f"{type(exc).__name__}: {exc}"
        if out is not None:
            (out / "report.json").write_text(campaign.report.to_json())
        if isinstance(exc, sched.Starvation) and exc.trace is not None and trace_file is not None:
            exc.trace.write(trace_file)
        raise StageFailure(campaign.stage, exc, campaign.report) from exc
    if out is not None:
        (out / "report.json").write_text(report.to_json())
        write_ranking(out / "ranking.tsv", report)
        write_results(out / "fep.tsv", getattr(campaign, "fep_results", []))
    if trace_file is not None:
        trace.write(trace_file)
    return report


def write_ranking(path: str | Path, report: CampaignReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["rank", "ligand", "score", "dg_kT", "smiles"])
        for row in report.ranking:
            dg = "" if row["dg_kT"] is None else f"{row['dg_kT']:.6f}"
            writer.writerow([row["rank"], row["ligand"], f"{row['score']:.6f}", dg, row["smiles"]])

