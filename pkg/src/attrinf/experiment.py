"""Experiment configuration and the staged pipeline behind the CLI.

A run directory is named by a hash of the resolved configuration and holds
every artifact the stages produce::

    <out>/<name>-<hash>/
        config.json            resolved config (replayable)
        data/dataset.csv       raw records (+ synth_meta.json for synthetic data)
        data/labeled.csv       records with k-means labels appended
        iter_000/...           split, model and per-iteration outputs
        results/*.json|csv     pooled stage outputs
        summary.json           collated by the report stage
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import re
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import analysis, attacks
from .clustering import KMeansConfig, kmeans_label
from .core import Dataset, SplitSpec, read_csv, split_and_sample, write_csv
from .errors import AttrInfError, ConfigError, DomainError
from .feature_select import mrmr_rank
from .model import MlpArchitecture, MlpModel, TrainConfig, load, save, train
from .synthetic import SynthSpec, generate

logger = logging.getLogger(__name__)


def _synth_defaults() -> dict:
    return {k: v for k, v in asdict(SynthSpec()).items() if k != "seed"}


@dataclass
class DataConfig:
    source: str = "synth"          # "synth" or a CSV path
    labeled: bool = False          # CSV carries a final label column
    # generator parameters; its seed is derived from the master seed
    synth: dict = field(default_factory=lambda: _synth_defaults())


@dataclass
class ClusteringConfig:
    k: int = 50
    max_iters: int = 100
    tol: float = 1e-6
    n_init: int = 10
    # cluster the full dataset before the train/test split
    before_sampling: bool = True


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256, 256, 256, 256, 256])
    activation: str = "relu"


@dataclass
class AttackConfig:
    iterations: int = 1
    r_grid: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    strong_trials: int = 500
    n_unknown: int = 10
    alpha: float = 2.0
    aia_targets: int = 200
    # "train" ranks features on the training partition, "all" on the full labeled data
    mrmr_on: str = "train"
    distance_grid: list = field(default_factory=lambda: list(analysis.DEFAULT_DISTANCE_GRID))
    variants_per_distance: int = 5
    synthetic_members: int = 1000
    min_bucket: int = 20
    profile_samples: int = analysis.PROFILE_EXHAUSTIVE_LIMIT


@dataclass
class ExperimentConfig:
    name: str = "synth-benchmark"
    seed: int = 0
    out: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    split: dict = field(default_factory=lambda: {k: v for k, v in asdict(SplitSpec()).items() if k != "seed"})
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=lambda: {
        **{k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
        "batch_size": 1000, "learning_rate": 3e-3, "max_epochs": 60, "min_epochs": 60,
        "target_train_accuracy": 0.99,
    })
    attack: AttackConfig = field(default_factory=AttackConfig)

    # --- typed views -------------------------------------------------------
    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**{**self.data.synth, "seed": derive_seed(self.seed, "synth")})

    def kmeans_config(self) -> KMeansConfig:
        c = self.clustering
        return KMeansConfig(c.k, c.max_iters, derive_seed(self.seed, "clustering"), c.tol, c.n_init)

    def split_spec(self, iteration: int) -> SplitSpec:
        return SplitSpec(**self.split, seed=derive_seed(self.seed, "split", iteration))

    def train_config(self, iteration: int) -> TrainConfig:
        return TrainConfig(**self.train, seed=derive_seed(self.seed, "train", iteration))

    def architecture(self, m: int) -> MlpArchitecture:
        return MlpArchitecture(m, tuple(self.model.hidden), self.clustering.k, self.model.activation)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        doc = self.to_dict()
        doc.pop("out")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def derive_seed(master: int, stage: str, iteration: int = 0) -> int:
    """Child seed from (master, stage, iteration) via SHA-256; independent of call order."""
    h = hashlib.sha256(f"{master}:{stage}:{iteration}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


_SECTIONS = {
    "data": DataConfig,
    "clustering": ClusteringConfig,
    "model": ModelConfig,
    "attack": AttackConfig,
}


def _build(cls, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"{where}.{key}", "unknown field")
    return cls(**doc)


def _field_from_message(where: str, exc: Exception, names) -> ConfigError:
    msg = str(exc)
    for n in sorted(names, key=len, reverse=True):
        if re.search(rf"\b{re.escape(n)}\b", msg):
            return ConfigError(f"{where}.{n}", msg)
    return ConfigError(where, msg)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build and validate a config; every failure names the offending field."""
    doc = dict(doc)
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in doc:
        if key not in top:
            raise ConfigError(key, "unknown field")
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTIONS.items():
        if key in doc:
            if not isinstance(doc[key], dict):
                raise ConfigError(key, "expected an object")
            kwargs[key] = _build(cls, doc[key], key)
    for key in ("name", "seed", "out", "split", "train"):
        if key in doc:
            kwargs[key] = doc[key]
    if "data" in kwargs:
        synth = {**_synth_defaults(), **kwargs["data"].synth}
        if "seed" in synth:
            raise ConfigError("data.synth.seed", "derived from the master seed; set 'seed' instead")
        kwargs["data"].synth = synth
    defaults = ExperimentConfig()
    if "split" in kwargs:
        kwargs["split"] = {**defaults.split, **kwargs["split"]}
    if "train" in kwargs:
        kwargs["train"] = {**defaults.train, **kwargs["train"]}
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    checks = [
        ("data.synth", lambda: cfg.synth_spec(), SynthSpec),
        ("clustering", lambda: cfg.kmeans_config(), KMeansConfig),
        ("split", lambda: cfg.split_spec(0), SplitSpec),
        ("train", lambda: cfg.train_config(0), TrainConfig),
        ("model", lambda: cfg.architecture(1), MlpArchitecture),
    ]
    for where, build, cls in checks:
        if where == "data.synth" and cfg.data.source != "synth":
            continue
        try:
            build()
        except TypeError as exc:
            raise ConfigError(where, str(exc)) from None
        except DomainError as exc:
            names = [f.name for f in dataclasses.fields(cls)]
            raise _field_from_message(where, exc, names) from None
    a = cfg.attack
    if a.iterations < 1:
        raise ConfigError("attack.iterations", "must be at least 1")
    if a.n_unknown < 1 or a.n_unknown > attacks.MAX_UNKNOWN:
        raise ConfigError("attack.n_unknown", f"must lie in [1, {attacks.MAX_UNKNOWN}]")
    if a.alpha < 0:
        raise ConfigError("attack.alpha", "must be nonnegative")
    if a.mrmr_on not in ("train", "all"):
        raise ConfigError("attack.mrmr_on", "must be 'train' or 'all'")
    for name in ("strong_trials", "aia_targets", "variants_per_distance", "synthetic_members",
                 "min_bucket", "profile_samples"):
        if getattr(a, name) < 1:
            raise ConfigError(f"attack.{name}", "must be positive")
    if not a.r_grid or min(a.r_grid) < 1:
        raise ConfigError("attack.r_grid", "must be a non-empty list of positive integers")
    if not a.distance_grid or min(a.distance_grid) < 1:
        raise ConfigError("attack.distance_grid", "must be a non-empty list of positive integers")
    if cfg.data.source != "synth" and not cfg.clustering.before_sampling:
        logger.info("clustering after sampling: labels fitted on the capped subset")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{p}: invalid JSON ({exc.msg})") from None
    return config_from_dict(doc)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.field=value`` overrides; values are parsed as JSON when possible."""
    doc = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(key, "unknown field")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown field")
        node[parts[-1]] = value
    return config_from_dict(doc)


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Pipeline:
    """Stage runner bound to one resolved config and its run directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.run_dir = Path(cfg.out) / f"{cfg.name}-{cfg.digest()}"
        self.results = self.run_dir / "results"

    # --- paths ---------------------------------------------------------
    def _iter_dir(self, i: int) -> Path:
        return self.run_dir / f"iter_{i:03d}"

    def _require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise FileNotFoundError(f"{path} (run the '{stage}' stage first)")
        return path

    def write_config(self) -> None:
        _dump(self.cfg.to_dict(), self.run_dir / "config.json")

    # --- stages --------------------------------------------------------
    def generate(self) -> Path:
        self.write_config()
        out = self.run_dir / "data" / "dataset.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        if self.cfg.data.source == "synth":
            D, meta = generate(self.cfg.synth_spec(), name=self.cfg.name)
            _dump(meta.to_json(), self.run_dir / "data" / "synth_meta.json")
            write_csv(D, out)
        else:
            src = Path(self.cfg.data.source)
            if not src.exists():
                raise FileNotFoundError(src)
            D = read_csv(src, labeled=self.cfg.data.labeled, name=self.cfg.name)
            write_csv(D, out)
        return out

    def _raw(self) -> Dataset:
        path = self._require(self.run_dir / "data" / "dataset.csv", "generate")
        return read_csv(path, labeled=self.cfg.data.labeled, name=self.cfg.name)

    def label(self) -> Path:
        self.write_config()
        D = self._raw()
        if self.cfg.data.labeled:
            labeled = D
            info = {"source": "file"}
        else:
            if not self.cfg.clustering.before_sampling and self.cfg.split.get("cap"):
                rng = np.random.default_rng(derive_seed(self.cfg.seed, "cap"))
                keep = np.sort(rng.permutation(len(D))[: self.cfg.split["cap"]])
                D = D.subset(keep)
            res = kmeans_label(D, self.cfg.kmeans_config())
            labeled = D.with_labels(res.assignments, self.cfg.clustering.k)
            info = {"source": "kmeans", "inertia": res.inertia, "n_iter": res.n_iter,
                    "cluster_sizes": np.bincount(res.assignments, minlength=self.cfg.clustering.k).tolist()}
        out = self.run_dir / "data" / "labeled.csv"
        write_csv(labeled, out, with_labels=True)
        _dump(info, self.run_dir / "data" / "labeling.json")
        return out

    def _labeled(self) -> Dataset:
        path = self._require(self.run_dir / "data" / "labeled.csv", "label")
        D = read_csv(path, labeled=True, name=self.cfg.name)
        return D.with_labels(D.labels, self.cfg.clustering.k)

    def train(self) -> list[Path]:
        self.write_config()
        D = self._labeled()
        paths = []
        for i in range(self.cfg.attack.iterations):
            d = self._iter_dir(i)
            d.mkdir(parents=True, exist_ok=True)
            split = split_and_sample(D, self.cfg.split_spec(i))
            for part in ("train", "test", "members", "nonmembers"):
                write_csv(getattr(split, part), d / f"{part}.csv", with_labels=True)
            model = train(split.train, self.cfg.architecture(D.m), self.cfg.train_config(i), test_set=split.test)
            save(model, d / "model.json")
            logger.info("iteration %d: %s", i, {k: v for k, v in model.train_meta.items() if k != "loss_history"})
            paths.append(d / "model.json")
        return paths

    def _iteration(self, i: int) -> tuple[MlpModel, dict[str, Dataset]]:
        d = self._iter_dir(i)
        model = load(self._require(d / "model.json", "train"))
        parts = {}
        for part in ("train", "test", "members", "nonmembers"):
            ds = read_csv(self._require(d / f"{part}.csv", "train"), labeled=True, name=f"{self.cfg.name}/{part}")
            parts[part] = ds.with_labels(ds.labels, self.cfg.clustering.k)
        return model, parts

    def _iterations(self):
        for i in range(self.cfg.attack.iterations):
            yield (i, *self._iteration(i))

    def _unknown(self, parts: dict[str, Dataset]) -> list[int]:
        a = self.cfg.attack
        src = parts["train"] if a.mrmr_on == "train" else self._labeled()
        return mrmr_rank(src, a.n_unknown).top(a.n_unknown)

    def attack_mia(self) -> dict:
        aucs, pooled_m, pooled_n, games = [], [], [], []
        per_iter = []
        for i, model, parts in self._iterations():
            cm = model.max_confidence(parts["members"].bits)
            cn = model.max_confidence(parts["nonmembers"].bits)
            h_m, h_n = len(cm) // 2, len(cn) // 2
            # threshold fitted on one half of each population, game played on the other
            thr = attacks.best_threshold(cm[:h_m], cn[:h_n])
            game = attacks.run_mia_game(model, parts["members"].subset(range(h_m, len(cm))),
                                        parts["nonmembers"].subset(range(h_n, len(cn))), thr)
            a = analysis.auc(cm, cn)
            aucs.append(a)
            pooled_m += cm.tolist()
            pooled_n += cn.tolist()
            games.append(game.advantage)
            per_iter.append({"iteration": i, "auc": a, "threshold": thr, "advantage": game.advantage,
                             "train_accuracy": model.train_meta.get("train_accuracy"),
                             "test_accuracy": model.train_meta.get("test_accuracy")})
        doc = {
            "iterations": len(aucs),
            "mean_auc": float(np.mean(aucs)),
            "pooled_auc": analysis.auc(pooled_m, pooled_n),
            "mean_advantage": float(np.mean(games)),
            "per_iteration": per_iter,
        }
        _dump(doc, self.results / "mia.json")
        return doc

    def attack_strong_mia(self) -> dict:
        a = self.cfg.attack
        rows = {r: [] for r in a.r_grid}
        for i, model, parts in self._iterations():
            rng = np.random.default_rng(derive_seed(self.cfg.seed, "strong-mia", i))
            for r in a.r_grid:
                rows[r].append(attacks.run_strong_mia_game(model, parts["train"], r, a.strong_trials, rng))
        doc = {"by_r": [
            {"r": r, "trials": sum(g.trials for g in gs), "accuracy": sum(g.successes for g in gs) / sum(g.trials for g in gs),
             "advantage": 2 * sum(g.successes for g in gs) / sum(g.trials for g in gs) - 1}
            for r, gs in rows.items()
        ]}
        _dump(doc, self.results / "strong_mia.json")
        return doc

    def _aia(self, approx: bool) -> dict:
        a = self.cfg.attack
        tag = "approx_aia" if approx else "aia"
        outcomes, details = [], []
        for i, model, parts in self._iterations():
            unknown = self._unknown(parts)
            targets = parts["members"].subset(range(min(a.aia_targets, len(parts["members"]))))
            if approx:
                game, res = attacks.run_approx_aia(model, parts["train"], targets, unknown, a.alpha)
                res.to_csv(self._iter_dir(i) / "approx_aia_targets.csv")
                details.append(res)
            else:
                game = attacks.run_exact_aia(model, parts["train"], targets, unknown)
            outcomes.append({"iteration": i, "unknown": unknown, **game.to_dict()})
        doc = {
            "success_rate": sum(o["successes"] for o in outcomes) / sum(o["trials"] for o in outcomes),
            "per_iteration": outcomes,
        }
        if approx:
            dists = np.concatenate([r.distances for r in details])
            lo, hi = analysis.bootstrap_mean_ci(dists, np.random.default_rng(derive_seed(self.cfg.seed, "bootstrap")))
            doc.update({"alpha": a.alpha, "mean_avg_hamming": float(dists.mean()), "ci95": [lo, hi],
                        "random_baseline": a.n_unknown / 2.0})
        _dump(doc, self.results / f"{tag}.json")
        return doc

    def attack_aia(self) -> dict:
        return self._aia(approx=False)

    def attack_approx_aia(self) -> dict:
        return self._aia(approx=True)

    def analyze_histogram(self) -> dict:
        total: dict[int, int] = {}
        for _, _, parts in self._iterations():
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                h = analysis.distance_histogram(parts["nonmembers"], parts["train"])
            for d, c in h.items():
                total[d] = total.get(d, 0) + c
        doc = {"histogram": [{"distance": d, "count": total[d]} for d in sorted(total)]}
        _dump(doc, self.results / "histogram.json")
        return doc

    def _stratified(self, synthetic: bool, full: bool) -> dict:
        a = self.cfg.attack
        reports = []
        for i, model, parts in self._iterations():
            if synthetic:
                rng = np.random.default_rng(derive_seed(self.cfg.seed, "synthetic", i))
                grid = [d for d in a.distance_grid if d <= parts["train"].m]
                n_mem = min(a.synthetic_members, len(parts["train"]))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    groups = analysis.generate_synthetic_neighbors(
                        parts["train"], n_mem, grid, a.variants_per_distance, rng)
                nonmembers = analysis.merge(groups.values(), name="synthetic")
            else:
                nonmembers = parts["nonmembers"]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                reports.append(analysis.distance_stratified_auc(
                    model, parts["members"], nonmembers, parts["train"], a.min_bucket))
        pooled = analysis.StratifiedAucReport.pooled(reports)
        tag = "synthetic_auc" if synthetic else "dist_auc"
        pooled.name = tag
        pooled.to_csv(self.results / f"{tag}.csv")
        doc = pooled.to_dict(full)
        doc["overall_auc"] = pooled.overall_auc()
        _dump(doc, self.results / f"{tag}.json")
        return doc

    def analyze_dist_auc(self, full: bool = False) -> dict:
        return self._stratified(False, full)

    def analyze_synthetic_auc(self, full: bool = False) -> dict:
        return self._stratified(True, full)

    def analyze_conf_profile(self) -> dict:
        a = self.cfg.attack
        higher: dict[int, float] = {}
        total: dict[int, int] = {}
        for i, model, parts in self._iterations():
            unknown = self._unknown(parts)
            targets = parts["members"].subset(range(min(a.aia_targets, len(parts["members"]))))
            rng = np.random.default_rng(derive_seed(self.cfg.seed, "profile", i))
            for row in analysis.confidence_vs_distance_profile(model, targets, unknown, rng, a.profile_samples):
                d = row["distance"]
                higher[d] = higher.get(d, 0) + row["fraction_higher"] * row["n"]
                total[d] = total.get(d, 0) + row["n"]
        doc = {"profile": [{"distance": d, "fraction_higher": higher[d] / total[d], "n": total[d]}
                           for d in sorted(total)]}
        _dump(doc, self.results / "conf_profile.json")
        return doc

    def report(self) -> dict:
        """Collate every stage output into ``summary.json``."""
        summary: dict[str, Any] = {"name": self.cfg.name, "config_digest": self.cfg.digest(), "seed": self.cfg.seed}
        for f in sorted(self.results.glob("*.json")) if self.results.exists() else []:
            summary[f.stem] = json.loads(f.read_text())
        lab = self.run_dir / "data" / "labeling.json"
        if lab.exists():
            summary["labeling"] = json.loads(lab.read_text())
        _dump(summary, self.run_dir / "summary.json")
        return summary

    ATTACKS = {"mia": "attack_mia", "strong-mia": "attack_strong_mia", "aia": "attack_aia",
               "approx-aia": "attack_approx_aia"}
    ANALYSES = {"dist-auc": "analyze_dist_auc", "histogram": "analyze_histogram",
                "synthetic-auc": "analyze_synthetic_auc", "conf-profile": "analyze_conf_profile"}

    def run_all(self, full: bool = False) -> dict:
        self.generate()
        self.label()
        self.train()
        for name in self.ATTACKS.values():
            getattr(self, name)()
        for key, name in self.ANALYSES.items():
            fn = getattr(self, name)
            fn(full) if key in ("dist-auc", "synthetic-auc") else fn()
        return self.report()


__all__ = ["ExperimentConfig", "Pipeline", "config_from_dict", "load_config", "apply_overrides",
           "derive_seed", "AttrInfError"]
