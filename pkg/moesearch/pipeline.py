"""
SearchPipeline: one object per output directory that runs every stage.

Directory layout under ``output_dir``::

    latency_table.csv           profiled block latencies (shared by all stages)
    vocab.json                  character vocabulary of the corpus
    search/                     default search run
        search_metrics.csv, alpha_history.csv, architecture.json,
        architecture.txt, search_checkpoint.json (+ .npz), run_config.json
    sweep/target_0.50/ ...      one search run per swept target
    retrain/                    retrained model
        retrain_metrics.csv, routing.csv, model.npz, model.json,
        descriptor.json, vocab.json, eval.json
    report/                     see ``moesearch.reporting.RunReport``
"""

import dataclasses
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import pandas as pd

from .blocks.model import FinalNetwork
from .blocks.specs import BlockKind
from .config.settings import RunConfig
from .core.errors import DataError
from .core.rng import RngStream, StreamId
from .io.atomic import atomic_write
from .io.checkpoint import load_weights, save_weights
from .io.corpus import BatchIterator, Corpus, load_corpus
from .io.metrics import write_frame
from .reporting.report import DESCRIPTOR_FILE, RETRAIN_METRICS_FILE, SEARCH_METRICS_FILE, RunReport
from .search.engine import CHECKPOINT_NAME, Phase1Result, run_phase1
from .search.finalize import (
    ArchitectureDescriptor,
    EvalResult,
    Phase2Result,
    baseline_descriptor,
    evaluate,
    instantiate,
    load_descriptor,
    render_architecture,
    run_phase2,
    sample_architecture,
    save_descriptor,
)
from .search.latency import REFERENCE_KEY, LatencyProfiler, LatencyTable
from .search.supernet import SearchNetwork, build_search_network

logger = logging.getLogger(__name__)

TABLE_FILE = "latency_table.csv"
VOCAB_FILE = "vocab.json"
SEARCH_DIR = "search"
SWEEP_DIR = "sweep"
RETRAIN_DIR = "retrain"
ALPHA_FILE = "alpha_history.csv"
RENDERING_FILE = "architecture.txt"
RUN_CONFIG_FILE = "run_config.json"
ROUTING_FILE = "routing.csv"
MODEL_FILE = "model.npz"
RETRAIN_DESCRIPTOR_FILE = "descriptor.json"
EVAL_FILE = "eval.json"


@dataclass
class SearchOutcome:
    result: Phase1Result
    descriptor: ArchitectureDescriptor
    run_dir: Path


def create_pipeline(
    settings_path: str | Path | None = None,
    overrides: Sequence[str] = (),
    output_dir: str | Path | None = None,
) -> "SearchPipeline":
    """Pipeline from defaults, an optional settings file and ``path=value`` overrides."""
    config = RunConfig()
    if settings_path is not None:
        config.load(settings_path)
    config.apply_overrides(overrides)
    if output_dir is not None:
        config.set_value("run.output_dir", str(output_dir))
    return SearchPipeline(config)


def alpha_history_frame(result: Phase1Result) -> pd.DataFrame:
    """Per epoch, slot and option: alpha and hard-sampling frequency."""
    keys = result.network.option_keys()
    rows = []
    history = zip(result.state.alpha_history, result.state.selection_history, strict=True)
    for epoch, (alphas, frequencies) in enumerate(history):
        for slot, (alpha, freq) in enumerate(zip(alphas, frequencies, strict=True)):
            for option, key in enumerate(keys[slot]):
                rows.append(
                    {
                        "epoch": epoch,
                        "slot": slot,
                        "option": option,
                        "key": key,
                        "alpha": float(alpha[option]),
                        "selection_frequency": float(freq[option]),
                    }
                )
    return pd.DataFrame(
        rows, columns=["epoch", "slot", "option", "key", "alpha", "selection_frequency"]
    )


class SearchPipeline:
    """Facade over profiling, search, retraining, evaluation and reporting.

    All randomness derives from ``config.seed``: the search network uses the
    init stream with sub-key 1, the retrained network sub-key 2.
    """

    def __init__(self, config: RunConfig | None = None):
        self.config = (config or RunConfig()).validate()
        self.output_dir = self.config.output_dir
        self._corpus: Corpus | None = None

    # Paths -------------------------------------------------------------

    @property
    def table_path(self) -> Path:
        return self.output_dir / TABLE_FILE

    @property
    def vocab_path(self) -> Path:
        return self.output_dir / VOCAB_FILE

    def search_dir(self, target_ratio: float | None = None) -> Path:
        if target_ratio is None:
            return self.output_dir / SEARCH_DIR
        return self.output_dir / SWEEP_DIR / f"target_{target_ratio:.2f}"

    @property
    def retrain_dir(self) -> Path:
        return self.output_dir / RETRAIN_DIR

    # Data --------------------------------------------------------------

    @property
    def corpus(self) -> Corpus:
        """The configured corpus, encoded with the run's saved vocabulary when present."""
        if self._corpus is None:
            vocab = Corpus.load_vocab(self.vocab_path) if self.vocab_path.exists() else None
            self._corpus = load_corpus(
                self.config.get_value("corpus.path"),
                self.config.get_value("corpus.split_ratios"),
                vocab,
            )
            if vocab is None:
                self._corpus.save_vocab(self.vocab_path)
        return self._corpus

    def batches(self, split: str) -> BatchIterator:
        return BatchIterator(
            self.corpus.split_ids(split),
            self.config.get_value("corpus.batch_size"),
            self.config.get_value("corpus.seq_len"),
            seed=self.config.seed,
            shuffle=split == "train",
        )

    # Profiling ---------------------------------------------------------

    def profile_keys(self) -> list[str]:
        """Distinct keys of the search space, the backbone and the normalization reference."""
        keys = self.config.search_space().keys() + self.config.backbone().keys
        if self.config.get_value("model.model_dim") % 8 == 0:
            keys.append(REFERENCE_KEY)
        return list(dict.fromkeys(keys))

    def profiler(self) -> LatencyProfiler:
        return LatencyProfiler(
            self.config.profiling_context(),
            repetitions=self.config.get_value("profiling.repetitions"),
            warmup=self.config.get_value("profiling.warmup"),
            seed=self.config.seed,
            progress_bar=self.config.progress_bar,
        )

    def profile(self, force: bool = False) -> LatencyTable:
        """Profile every key not yet in the saved table (all keys with ``force``)."""
        context = self.config.profiling_context()
        table = None
        if self.table_path.exists() and not force:
            table = LatencyTable.load(self.table_path)
            if table.context != context:
                logger.warning(
                    f"Saved table was profiled under {table.context.as_dict()}, "
                    f"config asks for {context.as_dict()}; profiling from scratch"
                )
                table = None
        keys = self.profile_keys()
        if table is not None and not table.missing(keys):
            logger.info(f"All {len(keys)} block keys already profiled in {self.table_path}")
            return table
        table = self.profiler().profile(keys, table)
        table.save(self.table_path)
        return table

    def load_table(self) -> LatencyTable:
        if not self.table_path.exists():
            raise FileNotFoundError(
                f"Latency table not found: {self.table_path} (run 'moesearch profile' first)"
            )
        return LatencyTable.load(self.table_path)

    def batch_sweep(self, batch_sizes: Sequence[int]) -> dict[str, pd.DataFrame]:
        """Batch-size sweep of the backbone blocks plus the first MoE option of the menu."""
        backbone = self.config.backbone()
        menu = self.config.search_space().menus[0]
        picks = [next((s for s in backbone.slots if s.kind == BlockKind.FFL), None)]
        if REFERENCE_KEY in self.profile_keys():
            picks.append(REFERENCE_KEY)
        else:
            picks.append(next((s for s in backbone.slots if s.kind == BlockKind.MHA), None))
        moe = next((s for s in menu if s.is_moe), None)
        picks.append(moe)
        keys = [p for p in picks if p is not None]

        profiler = self.profiler()
        frames = {"batch_sweep": profiler.profile_batch_sweep(keys, batch_sizes)}
        write_frame(frames["batch_sweep"], self.output_dir / "profile_batch_sweep.csv")
        if moe is not None:
            frames["routing_balance"] = profiler.profile_routing_balance(moe, batch_sizes)
            write_frame(frames["routing_balance"], self.output_dir / "profile_routing_balance.csv")
            comparison = profiler.compare_iso_parameter(moe)
            frames["iso_parameter"] = pd.DataFrame([comparison])
            write_frame(frames["iso_parameter"], self.output_dir / "profile_iso_parameter.csv")
        return frames

    # Search ------------------------------------------------------------

    def build_search_network(self) -> SearchNetwork:
        phase1 = self.config.get_value("phase1")
        return build_search_network(
            self.config.backbone(),
            self.config.search_space(),
            self.corpus.vocab_size,
            self.config.get_value("corpus.seq_len"),
            RngStream(self.config.seed, StreamId.INIT, (1,)),
            dropout=phase1["dropout"],
            moe_dropout=phase1["moe_dropout"],
        )

    def search(
        self,
        target_ratio: float | None = None,
        run_dir: str | Path | None = None,
        resume: bool = False,
    ) -> SearchOutcome:
        """Run Phase 1 and write metrics, alpha history and the sampled descriptor."""
        cfg = self.config.phase1_config()
        if target_ratio is not None:
            cfg = dataclasses.replace(cfg, target_ratio=target_ratio)
        run_dir = Path(run_dir) if run_dir is not None else self.search_dir()
        run_dir.mkdir(parents=True, exist_ok=True)
        table = self.load_table()
        network = self.build_search_network()

        checkpoint = run_dir / CHECKPOINT_NAME
        resume_from = checkpoint if resume and checkpoint.exists() else None
        result = run_phase1(
            network, table, cfg, self.batches("train"),
            checkpoint_dir=run_dir, resume_from=resume_from,
        )
        result.state.metrics.save(run_dir / SEARCH_METRICS_FILE)
        write_frame(alpha_history_frame(result), run_dir / ALPHA_FILE)

        descriptor = sample_architecture(
            network, table, target_ratio=cfg.target_ratio, seed=cfg.seed
        )
        save_descriptor(descriptor, run_dir / DESCRIPTOR_FILE)
        atomic_write(run_dir / RENDERING_FILE, render_architecture(descriptor))
        run_config = self.config.copy()
        run_config.set_value("target_ratio", cfg.target_ratio)
        run_config.save(run_dir / RUN_CONFIG_FILE)
        logger.info(
            f"Search finished: {'/'.join(descriptor.keys)} at "
            f"{descriptor.latency_ratio():.3f} x baseline (target {cfg.target_ratio})"
        )
        return SearchOutcome(result, descriptor, run_dir)

    def sweep(self, targets: Sequence[float]) -> list[SearchOutcome]:
        outcomes = []
        for target in targets:
            logger.info(f"Sweep: searching with target ratio {target}")
            outcomes.append(self.search(target, self.search_dir(target)))
        return outcomes

    # Retraining --------------------------------------------------------

    def load_descriptor(self, path: str | Path | None = None) -> ArchitectureDescriptor:
        path = Path(path) if path is not None else self.search_dir() / DESCRIPTOR_FILE
        table = LatencyTable.load(self.table_path) if self.table_path.exists() else None
        return load_descriptor(path, table)

    def instantiate(self, descriptor: ArchitectureDescriptor, vocab_size: int) -> FinalNetwork:
        phase2 = self.config.get_value("phase2")
        return instantiate(
            descriptor,
            RngStream(self.config.seed, StreamId.INIT, (2,)),
            vocab_size=vocab_size,
            max_seq_len=self.config.get_value("corpus.seq_len"),
            dropout=phase2["dropout"],
            moe_dropout=phase2["moe_dropout"],
        )

    def retrain(
        self, descriptor_path: str | Path | None = None, run_dir: str | Path | None = None
    ) -> Phase2Result:
        """Train the described architecture from scratch and save weights and metrics."""
        descriptor = self.load_descriptor(descriptor_path)
        run_dir = Path(run_dir) if run_dir is not None else self.retrain_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        network = self.instantiate(descriptor, self.corpus.vocab_size)
        result = run_phase2(
            network, self.batches("train"), self.config.phase2_config(), self.batches("valid")
        )
        result.metrics.save(run_dir / RETRAIN_METRICS_FILE)
        result.routing.save(run_dir / ROUTING_FILE)
        save_descriptor(descriptor, run_dir / RETRAIN_DESCRIPTOR_FILE)
        self.corpus.save_vocab(run_dir / VOCAB_FILE)
        save_weights(
            run_dir / MODEL_FILE,
            network.state_dict(),
            slots=network.keys,
            vocab_size=network.vocab_size,
            max_seq_len=network.max_seq_len,
            model_dim=descriptor.model_dim,
            seed=self.config.seed,
        )
        return result

    def evaluate(self, run_dir: str | Path | None = None, split: str = "test") -> EvalResult:
        """Score a retrained model on ``split`` and write ``eval.json``."""
        run_dir = Path(run_dir) if run_dir is not None else self.retrain_dir
        weights = run_dir / MODEL_FILE
        if not weights.exists():
            raise FileNotFoundError(f"Trained model not found: {weights} (run 'moesearch retrain')")
        descriptor = load_descriptor(run_dir / RETRAIN_DESCRIPTOR_FILE)
        vocab = Corpus.load_vocab(run_dir / VOCAB_FILE)
        if self._corpus is None or self._corpus.vocab != vocab:
            self._corpus = load_corpus(
                self.config.get_value("corpus.path"),
                self.config.get_value("corpus.split_ratios"),
                vocab,
            )
        network = self.instantiate(descriptor, len(vocab))
        try:
            network.load_state_dict(load_weights(weights))
        except (KeyError, ValueError) as e:
            raise DataError(f"{weights} does not match {'/'.join(descriptor.keys)}: {e}") from None
        scores = evaluate(network, self.batches(split))
        atomic_write(
            run_dir / EVAL_FILE, json.dumps({"split": split, **scores.as_dict()}, indent=2)
        )
        logger.info(
            f"{split} CE {scores.ce:.4f}, BPC {scores.bpc:.3f}, PPL {scores.ppl:.2f} "
            f"over {scores.tokens:,} tokens"
        )
        return scores

    # Report ------------------------------------------------------------

    def report(self, measure: bool = True) -> dict[str, Any]:
        table = self.load_table()
        seq_len = self.config.get_value("corpus.seq_len")
        baseline = baseline_descriptor(
            self.config.backbone(), table,
            vocab_size=self.corpus.vocab_size, max_seq_len=seq_len, target_ratio=1.0,
        )
        report = RunReport(self.output_dir, table, baseline)
        return report.generate(
            context=self.config.profiling_context(),
            vocab_size=self.corpus.vocab_size,
            repetitions=self.config.get_value("report.measure_repetitions", 30),
            seed=self.config.seed,
            measure=measure,
        )
