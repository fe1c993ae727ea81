"""Command-line entry point: train, eval, predict, gradcheck, ablate, synth."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Record, TokenizedPair, collate, encode, load_lcqmc, write_lcqmc
from .embedding import Vocabulary, load_pretrained
from .errors import CatsNetError, ConfigError
from .model import VARIANTS, CATsNet, ModelConfig
from .nn import count_parameters
from .synthetic import make_pairs
from .training import TrainConfig, evaluate, focal_loss, train, write_metrics_csv

log = logging.getLogger("catsnet")


class UsageError(CatsNetError):
    pass


def default_seed() -> int:
    raw = os.environ.get("CATSNET_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CATSNET_SEED must be an integer, got {raw!r}") from None


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    try:
        return type(default)(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {type(default).__name__}") from None


def parse_overrides(
    pairs: Sequence[str], model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None
) -> tuple[ModelConfig, TrainConfig]:
    """Apply ``KEY=VAL`` strings to whichever config owns ``KEY``."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    model_changes, train_changes = {}, {}
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for item in pairs:
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"config override must look like KEY=VAL, got {item!r}")
        if key == "variant":
            if value not in VARIANTS:
                raise ConfigError(f"unknown variant {value!r}; choose from {sorted(VARIANTS)}")
            model_changes.update(VARIANTS[value])
        elif key in model_fields:
            model_changes[key] = _coerce(value, getattr(model_cfg, key))
        elif key in train_fields:
            train_changes[key] = _coerce(value, getattr(train_cfg, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return model_cfg.replace(**model_changes), dataclasses.replace(train_cfg, **train_changes)


@dataclasses.dataclass
class FitOutcome:
    model: CATsNet
    vocab: Vocabulary
    result: object


def fit(
    train_records: Sequence[Record],
    valid_records: Sequence[Record] | None,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    embeddings: str | Path | None = None,
    vocab: Vocabulary | None = None,
) -> FitOutcome:
    """Build the vocabulary from the training split, initialize, train."""
    if vocab is None:
        vocab = Vocabulary.build(r.sentence_a + r.sentence_b for r in train_records)
    table = None
    if embeddings is not None:
        vocab, table = load_pretrained(
            embeddings, vocab, np.random.default_rng(seed), trainable=model_cfg.trainable_embeddings
        )
    model = CATsNet(model_cfg, vocab.size, seed=seed, embedding=table)
    train_pairs = encode(train_records, vocab, model_cfg.max_len)
    valid_pairs = encode(valid_records, vocab, model_cfg.max_len) if valid_records else None
    result = train(model, train_pairs, valid_pairs, train_cfg, seed=seed)
    return FitOutcome(model, vocab, result)


def _checkpoint(outcome: FitOutcome, train_cfg: TrainConfig, seed: int) -> Checkpoint:
    return Checkpoint(
        config=outcome.model.config,
        vocab=outcome.vocab,
        params=outcome.model.state_dict(),
        optimizer=outcome.result.optimizer.state_dict(),
        seed=seed,
        extra={"train_config": dataclasses.asdict(train_cfg), "best_epoch": outcome.result.best_epoch},
    )


def model_from_checkpoint(ckpt: Checkpoint) -> CATsNet:
    model = CATsNet(ckpt.config, ckpt.vocab.size, seed=ckpt.seed or 0)
    try:
        model.load_state_dict(ckpt.params)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint parameters do not fit its config: {exc}") from None
    return model


# -- subcommands --------------------------------------------------------

def cmd_train(args) -> int:
    model_cfg, train_cfg = parse_overrides(args.config)
    outcome = fit(
        load_lcqmc(args.train), load_lcqmc(args.valid), model_cfg, train_cfg, args.seed, args.embeddings
    )
    save_checkpoint(args.out, _checkpoint(outcome, train_cfg, args.seed))
    if args.metrics:
        write_metrics_csv(args.metrics, outcome.result.metrics, timing=not args.no_timing)
    best = outcome.result.best_accuracy
    print(f"saved {args.out} (best epoch {outcome.result.best_epoch}, "
          f"validation accuracy {'n/a' if best is None else f'{best:.4f}'})")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    pairs = encode(load_lcqmc(args.data), ckpt.vocab, ckpt.config.max_len)
    print(f"{evaluate(model, pairs, args.batch_size, args.threshold):.4f}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    (pair,) = encode([Record(args.a, args.b, 0)], ckpt.vocab, ckpt.config.max_len)
    with T.no_grad():
        prob = model(collate([pair])).probabilities.data[0, 1]
    print(f"label={int(prob >= args.threshold)} probability={prob:.6f}")
    return 0


def gradcheck_suite(model_cfg: ModelConfig, seed: int, h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of every parameter of a tiny model, per sublayer variant."""
    rng = np.random.default_rng(seed)
    vocab_size = 7
    pairs = [
        TokenizedPair(list(rng.integers(2, vocab_size, 3)), list(rng.integers(2, vocab_size, 3)), label)
        for label in (1, 0)
    ]
    batch = collate(pairs)
    results = {}
    for variant in ("mlp", "bilstm"):
        cfg = model_cfg.replace(sublayer_variant=variant)
        model = CATsNet(cfg, vocab_size, seed=seed)
        results[variant] = T.gradcheck(lambda *_: focal_loss(model(batch).probabilities, batch.labels),
                                       model.parameters(), h)
    return results


def cmd_gradcheck(args) -> int:
    tiny = ModelConfig(d_model=8, n_heads=2, n_blocks=1, head_hidden=8, max_len=3)
    model_cfg, _ = parse_overrides(args.config, tiny)
    results = gradcheck_suite(model_cfg, args.seed, args.h)
    for variant, err in results.items():
        print(f"{variant}: max relative error {err:.3e}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e}")
    return 0 if worst < 1e-5 else 1


def cmd_ablate(args) -> int:
    base_cfg, train_cfg = parse_overrides(args.config)
    train_records, valid_records = load_lcqmc(args.train), load_lcqmc(args.valid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, changes in VARIANTS.items():
        log.info("training variant %s", name)
        outcome = fit(train_records, valid_records, base_cfg.replace(**changes), train_cfg, args.seed,
                      args.embeddings)
        save_checkpoint(out / f"{name}.ckpt", _checkpoint(outcome, train_cfg, args.seed))
        write_metrics_csv(out / f"{name}_metrics.csv", outcome.result.metrics, timing=not args.no_timing)
        rows.append((name, outcome.result.best_accuracy, outcome.result.best_epoch,
                     count_parameters(outcome.model)))
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,best_validation_accuracy,best_epoch,parameters\n")
        for name, acc, epoch, n in rows:
            fh.write(f"{name},{acc!r},{epoch},{n}\n")
    print(f"{'variant':<16}{'val acc':>10}{'epoch':>7}{'params':>10}")
    for name, acc, epoch, n in rows:
        print(f"{name:<16}{acc:>10.4f}{epoch:>7}{n:>10}")
    return 0


def cmd_synth(args) -> int:
    write_lcqmc(args.out, make_pairs(args.n, seed=args.seed, positive_rate=args.positive_rate))
    print(f"wrote {args.n} pairs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catsnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, config=True):
        if config:
            p.add_argument("--config", action="append", default=[], metavar="KEY=VAL",
                           help="override a model or training setting (repeatable)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="default: $CATSNET_SEED or 0")

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--embeddings", help="word2vec text-format vectors")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="write per-epoch metrics CSV here")
    p.add_argument("--no-timing", action="store_true", help="write wall_seconds as 0 for reproducible CSVs")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print accuracy of a checkpoint on a TSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one sentence pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    p.add_argument("--h", type=float, default=1e-5)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every ablation variant on the same data")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-timing", action="store_true")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write synthetic pairs in LCQMC TSV layout")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--positive-rate", type=float, default=0.55)
    common(p, config=False)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = default_seed()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"catsnet: usage error: {exc}", file=sys.stderr)
        return 2
    except (CatsNetError, OSError) as exc:
        print(f"catsnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
