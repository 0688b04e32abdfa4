"""
Pipeline stages and experiment sweeps.

Each ``cmd_*`` function runs one CLI subcommand against a PipelineConfig,
writes its artifacts under ``config.output_dir`` and returns the report dict
it also saves as ``report-<command>.json``.

Seeding: a single chained run uses ``config.seed`` as its run seed; sweeps
use ``derive_seed(config.seed, "run", s)`` for every s in ``config.seeds``.
Stage seeds are ``derive_seed(run_seed, "<stage>")``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import PipelineConfig, Preset, delete_custom_preset, list_presets, save_custom_preset
from .corpus import (
    LabeledSample,
    SynthSpec,
    TokenizedSample,
    Vocab,
    build_vocab,
    dataset_stats,
    label_histogram,
    load_jsonl,
    load_vocab,
    save_vocab,
    synth_corpus,
    tokenize,
    write_jsonl,
)
from .encoder import EncoderConfig, EncoderModel, checkpoint_exists, encode_many, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, StageError
from .evaluation import Metrics, evaluate, summarize
from .export import CSVExporter, JSONExporter, JSONLinesExporter, MarkdownExporter, PseudoSampleExporter, Table
from .generator import (
    PROMPT_SHIFT,
    GeneratorModel,
    GeneratorTrainConfig,
    attention_weights,
    generate_many,
    load_generator,
    save_generator,
    train_generator,
)
from .policies import AugPolicy, augment, few_shot_split, partial_split
from .projection import CSV_COLUMNS, ProjectedPoint, group_distances, project
from .schedule import NoiseSchedule, StepGroups
from .seeding import derive_seed, substream
from .training import TrainConfig, train_proxy, train_with_noise_resistance

log = logging.getLogger(__name__)

ABLATIONS = {
    "full": {},
    "w/o D.A.": {"use_da": False},
    "w/o L.A.P.": {"use_lap": False},
    "w/o N.R.T.": {"use_nrt": False},
    "raw": {"use_da": False, "use_nrt": False},
}
SWEEP_COLUMNS = ["group", "first_step", "last_step", "macro_f1_mean", "macro_f1_std", "accuracy_mean", "accuracy_std"]
COMPARE_COLUMNS = ["full_macro_f1", "raw_macro_f1", "full_accuracy", "raw_accuracy", "delta_f1", "delta_acc"]


@dataclass
class RunPaths:
    root: Path
    train_path: Optional[str] = None
    test_path: Optional[str] = None

    @property
    def train(self) -> Path:
        return Path(self.train_path) if self.train_path else self.root / "data" / "train.jsonl"

    @property
    def test(self) -> Path:
        return Path(self.test_path) if self.test_path else self.root / "data" / "test.jsonl"

    @property
    def vocab(self) -> Path:
        return self.root / "vocab.json"

    def checkpoint(self, stage: str) -> Path:
        return self.root / "checkpoints" / f"{stage}.json"

    def log(self, stage: str) -> Path:
        return self.root / "logs" / f"{stage}.jsonl"

    @property
    def pseudo(self) -> Path:
        return self.root / "pseudo.jsonl"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.json"

    def report(self, command: str) -> Path:
        return self.root / f"report-{command}.json"

    def artifact(self, name: str) -> Path:
        return self.root / name


def paths_for(config: PipelineConfig) -> RunPaths:
    return RunPaths(Path(config.output_dir), config.data.train_path or None, config.data.test_path or None)


@dataclass
class RunReport:
    command: str
    config: dict
    input_hash: str
    runs: List[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def stable_dict(self) -> dict:
        """Everything except the timing, identical across reruns of one config."""
        data = self.to_dict()
        del data["wall_clock"]
        return data


def input_hash(config: PipelineConfig, paths: RunPaths) -> str:
    """Git-style content hash over the input files and the config snapshot."""
    h = hashlib.sha1()
    for path in (paths.train, paths.test):
        if path.exists():
            data = path.read_bytes()
            blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
            h.update(f"{path.name} {blob}\n".encode("utf-8"))
    snapshot = {k: v for k, v in config.flat().items() if k != "output_dir"}
    h.update(json.dumps(snapshot, sort_keys=True, default=str).encode("utf-8"))
    return h.hexdigest()


def _write_report(command: str, config: PipelineConfig, paths: RunPaths, started: float,
                  runs=None, summary=None, artifacts=None) -> dict:
    report = RunReport(
        command=command,
        config=config.to_dict(),
        input_hash=input_hash(config, paths),
        runs=list(runs or []),
        summary=dict(summary or {}),
        artifacts=[str(a) for a in (artifacts or [])],
        wall_clock=round(time.perf_counter() - started, 3),
    )
    JSONExporter(paths.report(command)).export(report.stable_dict())
    log.info("%s finished in %.3fs", command, report.wall_clock)
    return report.to_dict()


# --- builders ---------------------------------------------------------------

def schedule_of(config: PipelineConfig) -> NoiseSchedule:
    return NoiseSchedule(T=config.schedule.T, lam=config.schedule.lam)


def groups_of(config: PipelineConfig) -> StepGroups:
    return StepGroups(config.schedule.T, config.schedule.groups)


def encoder_config(config: PipelineConfig, vocab: Vocab, seed: int, prompted: bool = False) -> EncoderConfig:
    m = config.model
    return EncoderConfig(
        vocab_size=len(vocab),
        num_classes=vocab.num_classes,
        max_len=config.data.max_len + (PROMPT_SHIFT if prompted else 0),
        model_dim=m.model_dim,
        num_heads=m.num_heads,
        num_layers=m.num_layers,
        ffn_dim=m.ffn_dim,
        dropout=m.dropout,
        seed=seed,
        dtype=m.dtype,
    )


def train_config(config: PipelineConfig, seed: int, epochs: int, progress: bool = False, **changes) -> TrainConfig:
    t = config.training
    base = TrainConfig(
        epochs=epochs,
        batch_size=t.batch_size,
        tau=t.tau,
        B=t.B,
        lr=t.lr,
        weight_decay=t.weight_decay,
        seed=seed,
        refresh=t.refresh,
        use_da=t.use_da,
        use_lap=t.use_lap,
        use_nrt=t.use_nrt,
        num_groups=config.schedule.groups,
        group_index=config.schedule.group_index,
        temperature=config.generation.temperature,
        workers=config.generation.workers,
        progress=progress,
    )
    return replace(base, **changes)


def build_proxy(config: PipelineConfig, vocab: Vocab, train: Sequence[TokenizedSample], run_seed: int,
                progress: bool = False) -> EncoderModel:
    seed = derive_seed(run_seed, "proxy")
    tc = train_config(config, seed, config.training.proxy_epochs, progress, use_da=False, use_nrt=False)
    return train_proxy(train, encoder_config(config, vocab, seed), tc)


def build_generator(config: PipelineConfig, vocab: Vocab, train: Sequence[TokenizedSample], proxy: EncoderModel,
                    run_seed: int, use_lap: Optional[bool] = None, progress: bool = False) -> GeneratorModel:
    seed = derive_seed(run_seed, "generator")
    t = config.training
    gc = GeneratorTrainConfig(
        epochs=t.generator_epochs,
        batch_size=t.generator_batch_size,
        lr=t.lr,
        weight_decay=t.weight_decay,
        seed=seed,
        use_label_prompt=t.use_lap if use_lap is None else use_lap,
        progress=progress,
    )
    return train_generator(train, proxy, schedule_of(config), gc, vocab, encoder_config(config, vocab, seed, prompted=True))


def build_classifier(config: PipelineConfig, vocab: Vocab, train: Sequence[TokenizedSample],
                     gen: Optional[GeneratorModel], run_seed: int, progress: bool = False,
                     static_pseudo=None, **changes) -> EncoderModel:
    seed = derive_seed(run_seed, "classifier")
    tc = train_config(config, seed, config.training.classifier_epochs, progress, **changes)
    return train_with_noise_resistance(train, gen, tc, encoder_config(config, vocab, seed), static_pseudo)


# --- data -------------------------------------------------------------------

@dataclass
class Prepared:
    vocab: Vocab
    train_samples: List[LabeledSample]
    test_samples: List[LabeledSample]
    train: List[TokenizedSample]
    test: List[TokenizedSample]


def _read_split(path: Path) -> List[LabeledSample]:
    if not path.exists():
        raise StageError("synth-data", str(path), what="dataset")
    return load_jsonl(path)


def prepare(config: PipelineConfig, paths: Optional[RunPaths] = None, subset: bool = True) -> Prepared:
    """Load both splits, build (or reuse) the vocab and tokenize.

    The vocab always comes from the full training file so subsets share it;
    ``subset`` applies ``data.fraction`` and ``data.shots``.
    """
    paths = paths or paths_for(config)
    train_samples = _read_split(paths.train)
    test_samples = _read_split(paths.test)
    vocab = build_vocab(train_samples, min_count=config.data.min_count)
    if paths.vocab.exists():
        stored = load_vocab(paths.vocab)
        if stored != vocab:
            log.warning("%s is stale, rewriting it", paths.vocab)
            save_vocab(vocab, paths.vocab)
    else:
        save_vocab(vocab, paths.vocab)
    if subset and config.data.fraction < 1.0:
        train_samples = partial_split(train_samples, config.data.fraction, config.seed)
    if subset and config.data.shots > 0:
        train_samples = few_shot_split(train_samples, config.data.shots, config.seed)
    return Prepared(
        vocab=vocab,
        train_samples=train_samples,
        test_samples=test_samples,
        train=_tokenize_all(vocab, train_samples, config),
        test=_tokenize_all(vocab, test_samples, config),
    )


def _tokenize_all(vocab: Vocab, samples: Sequence[LabeledSample], config: PipelineConfig) -> List[TokenizedSample]:
    return [tokenize(vocab, s, config.data.max_len) for s in samples]


def _require(paths: RunPaths, stage: str) -> Path:
    path = paths.checkpoint(stage)
    if not checkpoint_exists(path):
        raise StageError(stage, str(path))
    return path


def _load_encoder(paths: RunPaths, stage: str) -> EncoderModel:
    model, _ = load_checkpoint(_require(paths, stage))
    return model


def _save_stage(paths: RunPaths, stage: str, model: EncoderModel, meta: dict) -> List[Path]:
    ckpt = save_checkpoint(model, paths.checkpoint(stage), {**meta, "history": model.history})
    log_path = JSONLinesExporter(paths.log(stage)).export(model.history)
    return [ckpt, log_path]


# --- experiments ------------------------------------------------------------

class Experiment:
    """Seeded full runs (proxy -> generator -> classifier -> test metrics) with stage caching."""

    def __init__(self, config: PipelineConfig, prepared: Prepared, progress: bool = False,
                 proxy: Optional[EncoderModel] = None, generator: Optional[GeneratorModel] = None):
        self.config = config
        self.prepared = prepared
        self.progress = progress
        self._fixed_proxy = proxy
        self._fixed_generator = generator
        self._proxies: Dict[tuple, EncoderModel] = {}
        self._generators: Dict[tuple, GeneratorModel] = {}

    def proxy(self, run_seed: int, train: Sequence[TokenizedSample], tag: str) -> EncoderModel:
        if self._fixed_proxy is not None:
            return self._fixed_proxy
        key = (tag, run_seed)
        if key not in self._proxies:
            self._proxies[key] = build_proxy(self.config, self.prepared.vocab, train, run_seed, self.progress)
        return self._proxies[key]

    def generator(self, run_seed: int, train: Sequence[TokenizedSample], tag: str, use_lap: bool) -> GeneratorModel:
        if self._fixed_generator is not None and use_lap == self._fixed_generator.use_label_prompt:
            return self._fixed_generator
        key = (tag, run_seed, use_lap)
        if key not in self._generators:
            proxy = self.proxy(run_seed, train, tag)
            self._generators[key] = build_generator(self.config, self.prepared.vocab, train, proxy,
                                                    run_seed, use_lap, self.progress)
        return self._generators[key]

    def run(self, run_seed: int, train: Optional[Sequence[TokenizedSample]] = None, tag: str = "full",
            **changes) -> Metrics:
        t = self.config.training
        train = self.prepared.train if train is None else train
        use_da = changes.get("use_da", t.use_da)
        use_lap = changes.get("use_lap", t.use_lap)
        gen = None
        if use_da and t.B > 0 and t.refresh != "static":
            gen = self.generator(run_seed, train, tag, use_lap)
        changes.setdefault("refresh", "epoch" if t.refresh == "static" else t.refresh)
        clf = build_classifier(self.config, self.prepared.vocab, train, gen, run_seed, self.progress, **changes)
        return evaluate(clf, self.prepared.test, self.prepared.vocab.classes)


def run_seeds(config: PipelineConfig) -> List[Tuple[int, int]]:
    """(seed, run seed) for every configured seed."""
    return [(s, derive_seed(config.seed, "run", s)) for s in config.seeds]


def _score_rows(results: Sequence[Metrics]) -> dict:
    f1 = summarize([m.macro_f1 for m in results])
    acc = summarize([m.accuracy for m in results])
    return {"macro_f1_mean": f1["mean"], "macro_f1_std": f1["std"], "accuracy_mean": acc["mean"], "accuracy_std": acc["std"]}


# --- commands ---------------------------------------------------------------

def cmd_synth_data(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    classes = config.synth_classes()
    train = synth_corpus(SynthSpec(tuple(classes), seed=derive_seed(config.seed, "synth", "train")))
    test_spec = SynthSpec(tuple((name, config.data.test_per_class) for name, _ in classes),
                          seed=derive_seed(config.seed, "synth", "test"))
    test = synth_corpus(test_spec, exclude={(s.text, s.label) for s in train})
    write_jsonl(paths.train, (s.as_dict() for s in train))
    write_jsonl(paths.test, (s.as_dict() for s in test))
    log.info("wrote %d train / %d test samples", len(train), len(test))
    summary = {"train": label_histogram(train), "test": label_histogram(test)}
    return _write_report("synth-data", config, paths, started, summary=summary, artifacts=[paths.train, paths.test])


def cmd_stats(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    summary = {
        "train": dataset_stats(_read_split(paths.train)),
        "test": dataset_stats(_read_split(paths.test)),
    }
    return _write_report("stats", config, paths, started, summary=summary)


def cmd_train_proxy(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    prep = prepare(config, paths)
    proxy = build_proxy(config, prep.vocab, prep.train, config.seed, progress)
    artifacts = _save_stage(paths, "proxy", proxy, {"kind": "proxy", "classes": list(prep.vocab.classes)})
    last = proxy.history[-1] if proxy.history else {}
    return _write_report("train-proxy", config, paths, started, summary={"final": last}, artifacts=artifacts)


def cmd_train_generator(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    proxy = _load_encoder(paths, "proxy")
    prep = prepare(config, paths)
    gen = build_generator(config, prep.vocab, prep.train, proxy, config.seed, progress=progress)
    ckpt = save_generator(gen, paths.checkpoint("generator"))
    log_path = JSONLinesExporter(paths.log("generator")).export(gen.history)
    last = gen.history[-1] if gen.history else {}
    return _write_report("train-generator", config, paths, started, summary={"final": last}, artifacts=[ckpt, log_path])


def _load_generator(paths: RunPaths, vocab: Vocab) -> GeneratorModel:
    return load_generator(_require(paths, "generator"), vocab)


def cmd_augment(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    proxy = _load_encoder(paths, "proxy")
    prep = prepare(config, paths)
    gen = _load_generator(paths, prep.vocab)
    policy = AugPolicy(variant=config.policy.variant, n=config.policy.n,
                       group_index=config.schedule.group_index, seed=derive_seed(config.seed, "augment"))
    augmented = augment(prep.train, gen, proxy, policy, config.schedule.groups,
                        config.generation.workers, progress)
    PseudoSampleExporter(paths.pseudo).export(augmented.pseudo)
    summary = {
        "policy": policy.short_name,
        "originals": len(prep.train),
        "pseudo": len(augmented.pseudo),
        "class_counts": augmented.class_counts(prep.vocab),
    }
    return _write_report("augment", config, paths, started, summary=summary, artifacts=[paths.pseudo])


def _static_pseudo(paths: RunPaths, prep: Prepared, config: PipelineConfig) -> List[List[Tuple[int, ...]]]:
    if not paths.pseudo.exists():
        raise StageError("augment", str(paths.pseudo), what="output")
    lists: List[List[Tuple[int, ...]]] = [[] for _ in prep.train]
    with open(paths.pseudo, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                source = int(record.get("source_id", -1))
                text, label = record["text"], record["label"]
            except (json.JSONDecodeError, AttributeError, KeyError, TypeError, ValueError):
                raise DataError(f"malformed pseudo sample in {paths.pseudo}", line=lineno) from None
            if not 0 <= source < len(lists):
                raise DataError(f"pseudo sample source {source} outside the training set", line=lineno)
            sample = tokenize(prep.vocab, LabeledSample(text, label), config.data.max_len)
            lists[source].append(sample.ids)
    return lists


def cmd_train_classifier(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    prep = prepare(config, paths)
    t = config.training
    gen = None
    static = None
    if t.use_da and t.refresh == "static":
        static = _static_pseudo(paths, prep, config)
    elif t.use_da and t.B > 0:
        gen = _load_generator(paths, prep.vocab)
    clf = build_classifier(config, prep.vocab, prep.train, gen, config.seed, progress, static_pseudo=static)
    artifacts = _save_stage(paths, "classifier", clf, {"kind": "classifier", "classes": list(prep.vocab.classes)})
    metrics = evaluate(clf, prep.test, prep.vocab.classes)
    JSONExporter(paths.metrics).export(metrics.to_dict())
    artifacts.append(paths.metrics)
    return _write_report("train-classifier", config, paths, started,
                         runs=[{"seed": config.seed, "metrics": metrics.to_dict()}],
                         summary={"macro_f1": metrics.macro_f1, "accuracy": metrics.accuracy},
                         artifacts=artifacts)


def cmd_evaluate(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    clf = _load_encoder(paths, "classifier")
    prep = prepare(config, paths, subset=False)
    metrics = evaluate(clf, prep.test, prep.vocab.classes)
    JSONExporter(paths.metrics).export(metrics.to_dict())
    return _write_report("evaluate", config, paths, started,
                         runs=[{"seed": config.seed, "metrics": metrics.to_dict()}],
                         summary={"macro_f1": metrics.macro_f1, "accuracy": metrics.accuracy},
                         artifacts=[paths.metrics])


def cmd_sweep_groups(config: PipelineConfig, progress: bool = False) -> dict:
    """Classifier quality per step group, using the trained proxy and generator."""
    started = time.perf_counter()
    paths = paths_for(config)
    proxy = _load_encoder(paths, "proxy")
    prep = prepare(config, paths)
    gen = _load_generator(paths, prep.vocab)
    exp = Experiment(config, prep, progress, proxy=proxy, generator=gen)
    groups = groups_of(config)
    rows, runs = [], []
    for g in range(1, groups.num_groups + 1):
        results = []
        for s, run_seed in run_seeds(config):
            m = exp.run(run_seed, group_index=g)
            results.append(m)
            runs.append({"group": g, "seed": s, "metrics": m.to_dict()})
        steps = groups.steps(g)
        rows.append({"group": g, "first_step": steps[0], "last_step": steps[-1], **_score_rows(results)})
        log.info("group %d: macro-F1 %.4f", g, rows[-1]["macro_f1_mean"])
    csv_path = CSVExporter(paths.artifact("sweep_groups.csv"), SWEEP_COLUMNS).export(rows)
    peak = max(rows, key=lambda r: r["macro_f1_mean"])["group"]
    return _write_report("sweep-groups", config, paths, started, runs=runs,
                         summary={"rows": rows, "peak_group": peak}, artifacts=[csv_path])


def cmd_ablation(config: PipelineConfig, progress: bool = False) -> dict:
    """Full method against each single ablation and the raw baseline."""
    started = time.perf_counter()
    paths = paths_for(config)
    prep = prepare(config, paths)
    exp = Experiment(config, prep, progress)
    rows, runs = [], []
    for name, changes in ABLATIONS.items():
        results = []
        for s, run_seed in run_seeds(config):
            m = exp.run(run_seed, **changes)
            results.append(m)
            runs.append({"variant": name, "seed": s, "metrics": m.to_dict()})
        rows.append({"variant": name, **_score_rows(results), "per_seed": [m.macro_f1 for m in results]})
        log.info("%s: macro-F1 %.4f", name, rows[-1]["macro_f1_mean"])

    full = rows[0]["macro_f1_mean"]
    slack = config.experiment.slack
    for row in rows:
        row["full_dominates"] = bool(full >= row["macro_f1_mean"] - slack)
    dominance_ok = all(r["full_dominates"] for r in rows)
    if not dominance_ok:
        log.warning("full method falls more than %.2f below an ablation", slack)

    result = {"rows": rows, "dominance_ok": dominance_ok, "slack": slack, "seeds": list(config.seeds)}
    json_path = JSONExporter(paths.artifact("ablation.json")).export(result)
    table = Table(
        title="Ablation",
        columns=["Config", "Macro-F1", "Std", "Accuracy", "Full within slack"],
        rows=[[r["variant"], r["macro_f1_mean"], r["macro_f1_std"], r["accuracy_mean"], r["full_dominates"]] for r in rows],
        notes=[f"{len(config.seeds)} seeds", f"slack {slack:.2f} macro-F1"],
    )
    md_path = MarkdownExporter(paths.artifact("ablation.md")).export(table)
    return _write_report("ablation", config, paths, started, runs=runs, summary=result, artifacts=[json_path, md_path])


def _compare(config: PipelineConfig, exp: Experiment, prep: Prepared, key: str, values, split) -> Tuple[list, list]:
    rows, runs = [], []
    for value in values:
        full, raw = [], []
        for s, run_seed in run_seeds(config):
            subset = _tokenize_all(prep.vocab, split(prep.train_samples, value, run_seed), config)
            tag = f"{key}={value}"
            full.append(exp.run(run_seed, subset, tag))
            raw.append(exp.run(run_seed, subset, tag, use_da=False, use_nrt=False))
            runs.append({key: value, "seed": s, "size": len(subset),
                         "full": full[-1].to_dict(), "raw": raw[-1].to_dict()})
        f, r = _score_rows(full), _score_rows(raw)
        rows.append({
            key: value,
            "full_macro_f1": f["macro_f1_mean"],
            "raw_macro_f1": r["macro_f1_mean"],
            "full_accuracy": f["accuracy_mean"],
            "raw_accuracy": r["accuracy_mean"],
            "delta_f1": f["macro_f1_mean"] - r["macro_f1_mean"],
            "delta_acc": f["accuracy_mean"] - r["accuracy_mean"],
        })
        log.info("%s=%s: dF %.4f  dAcc %.4f", key, value, rows[-1]["delta_f1"], rows[-1]["delta_acc"])
    return rows, runs


def cmd_sweep_fractions(config: PipelineConfig, progress: bool = False) -> dict:
    """Full method vs raw baseline on class-stratified fractions of the training set."""
    started = time.perf_counter()
    paths = paths_for(config)
    prep = prepare(config, paths, subset=False)
    rows, runs = _compare(config, Experiment(config, prep, progress), prep, "fraction",
                          config.experiment.fractions, partial_split)
    csv_path = CSVExporter(paths.artifact("fractions.csv"), ["fraction"] + COMPARE_COLUMNS).export(rows)
    return _write_report("sweep-fractions", config, paths, started, runs=runs, summary={"rows": rows}, artifacts=[csv_path])


def cmd_few_shot(config: PipelineConfig, progress: bool = False) -> dict:
    started = time.perf_counter()
    paths = paths_for(config)
    prep = prepare(config, paths, subset=False)
    rows, runs = _compare(config, Experiment(config, prep, progress), prep, "shots",
                          config.experiment.shots, few_shot_split)
    csv_path = CSVExporter(paths.artifact("few_shot.csv"), ["shots"] + COMPARE_COLUMNS).export(rows)
    return _write_report("few-shot", config, paths, started, runs=runs, summary={"rows": rows}, artifacts=[csv_path])


def cmd_project(config: PipelineConfig, progress: bool = False) -> dict:
    """Project originals and their per-group pseudo samples through the classifier."""
    started = time.perf_counter()
    paths = paths_for(config)
    clf = _load_encoder(paths, "classifier")
    proxy = _load_encoder(paths, "proxy")
    prep = prepare(config, paths)
    gen = _load_generator(paths, prep.vocab)
    groups = groups_of(config)
    p = config.project

    per_source = 1 + groups.num_groups * p.per_group
    count = min(len(prep.train), max(1, p.max_points // per_source))
    rng = substream(config.seed, "project")
    chosen = sorted(int(i) for i in rng.choice(len(prep.train), size=count, replace=False))
    sources = [prep.train[i] for i in chosen]
    weights = attention_weights(proxy, sources)

    seqs = [s.ids for s in sources]
    meta: List[Tuple[bool, Optional[int], int, int]] = [(False, None, s.label_id, i) for i, s in enumerate(sources)]
    for g in range(1, groups.num_groups + 1):
        produced = generate_many(gen, sources, weights, groups, g, p.per_group, derive_seed(config.seed, "project"),
                                 workers=config.generation.workers, progress=progress)
        for i, group in enumerate(produced):
            for pseudo in group:
                seqs.append(pseudo.ids)
                meta.append((True, g, sources[i].label_id, i))

    pooled, _, _ = encode_many(clf, seqs)
    xy = project(pooled, p.method, seed=derive_seed(config.seed, "tsne") % (2 ** 32), perplexity=p.perplexity)
    points = [
        ProjectedPoint(id=k, is_pseudo=is_pseudo, group=g, label=prep.vocab.classes[label],
                       x=float(xy[k, 0]), y=float(xy[k, 1]), source_id=source)
        for k, (is_pseudo, g, label, source) in enumerate(meta)
    ]
    csv_path = CSVExporter(paths.artifact("projection.csv"), CSV_COLUMNS).export(pt.row() for pt in points)
    distances = group_distances(points)
    return _write_report("project", config, paths, started,
                         summary={"points": len(points), "method": p.method, "group_distances": distances},
                         artifacts=[csv_path])


def cmd_presets(config: PipelineConfig, action: str = "list", name: Optional[str] = None,
                description: str = "", overrides: Optional[dict] = None) -> Dict[str, Preset]:
    """List, save or delete presets; returns the presets available afterwards."""
    if action == "save":
        if not name:
            raise ConfigError("a preset name is required")
        if not save_custom_preset(Preset(name=name, description=description, overrides=dict(overrides or {}))):
            raise ConfigError(f"could not save preset '{name}'")
    elif action == "delete":
        if not name or not delete_custom_preset(name):
            raise ConfigError(f"preset '{name}' not found")
    elif action != "list":
        raise ConfigError(f"unknown preset action '{action}'")
    return list_presets()


COMMANDS = {
    "synth-data": cmd_synth_data,
    "stats": cmd_stats,
    "train-proxy": cmd_train_proxy,
    "train-generator": cmd_train_generator,
    "augment": cmd_augment,
    "train-classifier": cmd_train_classifier,
    "evaluate": cmd_evaluate,
    "sweep-groups": cmd_sweep_groups,
    "ablation": cmd_ablation,
    "sweep-fractions": cmd_sweep_fractions,
    "few-shot": cmd_few_shot,
    "project": cmd_project,
}
