"""Pipeline driver: every stage is a subcommand sharing one config file.

Stages: synth -> mine -> train-crf -> build-automaton -> encode ->
train-lm -> eval-lm / diag-gates.  Each stage verifies its inputs
against their manifests, writes its artifacts, and records a manifest
per artifact.  Exit codes: 0 ok, 2 config error, 3 missing/invalid
input, 4 numeric failure; failures print one machine-parsable line.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import crf, evaluation, lm, mining, owlqn, synth, training
from .automaton import build_automaton, encode_words, load_automaton, save_automaton
from .config import ConfigError, RunConfig
from .corpus import CorpusError, load_corpus, word_length_percentile
from .encoding import encode_chars, load_encoded, save_encoded
from .manifest import ProvenanceError, sha256_text, verify_input, write_manifest


class NumericFailure(RuntimeError):
    pass


def _config_hash(cfg: RunConfig) -> str:
    return sha256_text(cfg.text)


def _seed(cfg: RunConfig) -> int:
    return cfg.get_int("run", "seed")


def _load_split(cfg: RunConfig, split: str, alphabet=None):
    path = cfg.get_path("corpus", split)
    verify_input(path)
    return load_corpus(path, cfg.get("corpus", "profile"), alphabet=alphabet)


def cmd_synth(cfg: RunConfig) -> None:
    spec = synth.SynthSpec(seed=_seed(cfg), n_tokens=cfg.get_int("synth", "n_tokens"))
    paths = {s: cfg.get_path("corpus", s) for s in ("train", "valid", "test")}
    written = synth.write_splits(paths, spec)
    for name, p in written.items():
        n_lines = sum(1 for _ in open(p, encoding="utf-8"))
        write_manifest(
            p, "synth", _config_hash(cfg), spec.seed, {},
            {"split": name, "n_sentences": n_lines, "n_tokens_target": spec.n_tokens},
        )


def cmd_mine(cfg: RunConfig) -> None:
    corpus = _load_split(cfg, "train")
    f = cfg.get_int("mine", "f")
    l_max = cfg.get_int("mine", "L_max")
    cands = mining.mine_patterns(corpus, f, l_max)
    out = cfg.get_path("mine", "patterns")
    out.parent.mkdir(parents=True, exist_ok=True)
    mining.save_candidates(out, cands)
    write_manifest(
        out, "mine", _config_hash(cfg), _seed(cfg),
        {"corpus": cfg.get_path("corpus", "train")},
        {"f": f, "L_max": l_max, "n_candidates": len(cands),
         "alphabet_size": len(corpus.alphabet)},
    )


def cmd_train_crf(cfg: RunConfig) -> None:
    corpus = _load_split(cfg, "train")
    pat_path = cfg.get_path("mine", "patterns")
    verify_input(pat_path)
    cands = mining.load_candidates(pat_path, corpus.alphabet)
    reg_c = cfg.get_float("crf", "C")
    opt_cfg = owlqn.OwlqnConfig(
        memory=cfg.get_int("crf", "m"),
        max_iter=cfg.get_int("crf", "max_iter"),
        grad_tol=cfg.get_float("crf", "grad_tol"),
    )
    try:
        result = crf.fit(
            corpus, cands.patterns, reg_c, opt_cfg,
            threads=cfg.get_int("run", "threads"),
        )
    except (FloatingPointError, ValueError) as e:
        raise NumericFailure(f"CRF training failed: {e}") from e
    out = cfg.get_path("crf", "table")
    out.parent.mkdir(parents=True, exist_ok=True)
    crf.save_table(out, result.table)
    owlqn.write_iteration_log(cfg.get_path("crf", "iter_log"), result.optimizer)
    write_manifest(
        out, "train-crf", _config_hash(cfg), _seed(cfg),
        {"corpus": cfg.get_path("corpus", "train"), "patterns": pat_path},
        {"C": reg_c, "n_candidates": len(cands), "n_selected": result.n_selected,
         "optimizer_status": result.optimizer.status,
         "iterations": result.optimizer.iterations},
    )


def cmd_build_automaton(cfg: RunConfig) -> None:
    corpus = _load_split(cfg, "train")
    table_path = cfg.get_path("crf", "table")
    verify_input(table_path)
    table = crf.load_table(table_path, corpus.alphabet)
    selected = crf.select_patterns(table)
    if not selected:
        raise NumericFailure("no patterns selected; the automaton would be trivial")
    aut = build_automaton(selected, corpus.alphabet)
    out = cfg.get_path("automaton", "file")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_automaton(out, aut)
    write_manifest(
        out, "build-automaton", _config_hash(cfg), _seed(cfg),
        {"table": table_path},
        {"n_patterns": len(selected), "n_states": aut.n_states},
    )


def cmd_encode(cfg: RunConfig) -> None:
    kind = cfg.get("encode", "x")
    if kind not in ("chars", "patterns"):
        raise ConfigError(f"[encode] x must be 'chars' or 'patterns', got {kind!r}")
    if kind == "patterns":
        aut_path = cfg.get_path("automaton", "file")
        verify_input(aut_path)
        aut = load_automaton(aut_path)
        alphabet = aut.alphabet
    else:
        aut = None
        alphabet = None

    corpora = {}
    for split in ("train", "valid", "test"):
        corpora[split] = _load_split(cfg, split, alphabet=alphabet)
        if alphabet is None:
            alphabet = corpora[split].alphabet
    if aut is not None:
        for split, corpus in corpora.items():
            for sent in corpus.sentences:
                if sent.size and sent.max() >= aut.n_symbols:
                    sym = corpus.alphabet.symbol_of(int(sent.max()))
                    raise CorpusError(
                        f"{split} split contains symbol {sym!r} unseen by the automaton"
                    )

    from .corpus import build_word_vocab

    vocab = build_word_vocab(corpora["train"])
    n_val = word_length_percentile(corpora["train"], 95)
    prefix = cfg.get_path("encode", "out")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    inputs = {"corpus_" + s: cfg.get_path("corpus", s) for s in corpora}
    if aut is not None:
        inputs["automaton"] = cfg.get_path("automaton", "file")
    for split, corpus in corpora.items():
        if aut is not None:
            enc = encode_words(aut, corpus, vocab)
        else:
            enc = encode_chars(corpus, vocab)
        out = prefix.parent / (prefix.name + f".{split}.npz")
        save_encoded(out, enc)
        write_manifest(
            out, "encode", _config_hash(cfg), _seed(cfg), inputs,
            {"split": split, "kind": enc.kind, "n_tokens": enc.n_tokens,
             "n_subword_types": enc.n_subword_types, "vocab_size": len(vocab),
             "n": n_val},
        )


def _encoded_path(cfg: RunConfig, split: str):
    prefix = cfg.get_path("encode", "out")
    return prefix.parent / (prefix.name + f".{split}.npz")


def _build_lm_config(cfg: RunConfig, enc) -> lm.LMConfig:
    comp = cfg.get("lm", "composition")
    size = cfg.get("lm", "size")
    kind = "char" if enc.kind == "char" else "pattern"
    n_concat = 0
    if comp == "concat":
        raw = cfg.get("lm", "n")
        if raw == "auto":
            lengths = np.sort(enc.subword_lengths())
            rank = int(np.ceil(0.95 * lengths.size))
            n_concat = int(lengths[rank - 1])
        else:
            n_concat = cfg.get_int("lm", "n")
    if size in ("small", "medium"):
        return lm.section4_config(
            comp, size, kind, enc.n_subword_types, len(enc.vocab), n_concat=n_concat
        )
    if size != "custom":
        raise ConfigError(f"[lm] size must be small, medium or custom, got {size!r}")
    drop_raw = cfg.get("lm", "dropout")
    if drop_raw == "auto":
        drop = lm.DropoutRates()
    else:
        try:
            vals = [float(x) for x in drop_raw.split(",")]
            drop = lm.DropoutRates(*vals)
        except (ValueError, TypeError):
            raise ConfigError(
                "[lm] dropout must be 'auto' or four comma-separated rates"
            ) from None
    d_lm = cfg.get_int("lm", "d_LM")
    if comp == "cnn":
        widths = cfg.get_int_list("lm", "cnn_widths")
        depths = cfg.get_int_list("lm", "cnn_depths")
        return lm.LMConfig(
            "cnn", enc.n_subword_types, len(enc.vocab), cfg.get_int("lm", "d_X"),
            sum(depths), d_lm, cnn_widths=widths, cnn_depths=depths, dropout=drop,
        )
    d_x = cfg.get_int("lm", "d_X")
    d_hw = cfg.get_int("lm", "d_HW")
    return lm.LMConfig(
        comp, enc.n_subword_types, len(enc.vocab), d_x, d_hw, d_lm,
        n_concat=n_concat, dropout=drop,
    )


def cmd_train_lm(cfg: RunConfig) -> None:
    enc_train_path = _encoded_path(cfg, "train")
    enc_valid_path = _encoded_path(cfg, "valid")
    verify_input(enc_train_path)
    verify_input(enc_valid_path)
    enc_train = load_encoded(enc_train_path)
    enc_valid = load_encoded(enc_valid_path)
    lm_cfg = _build_lm_config(cfg, enc_train)
    train_cfg = training.TrainConfig(
        bptt_steps=cfg.get_int("train", "bptt"),
        batch=cfg.get_int("train", "batch"),
        lr0=cfg.get_float("train", "lr0"),
        epochs=cfg.get_int("train", "epochs"),
        init_range=cfg.get_float("train", "init_range"),
        forget_bias=cfg.get_float("train", "forget_bias"),
        highway_transform_bias=cfg.get_float("train", "highway_bias"),
        grad_clip=cfg.get_float("train", "clip"),
        seed=_seed(cfg),
    )
    params = training.init_params(train_cfg, lm_cfg)
    result = training.train(params, enc_train, enc_valid, train_cfg)
    if result.diverged:
        raise NumericFailure("training loss became non-finite")
    out = cfg.get_path("train", "checkpoint")
    out.parent.mkdir(parents=True, exist_ok=True)
    lm.save_checkpoint(out, result.best_params)
    result.write_metrics(cfg.get_path("train", "metrics"))
    write_manifest(
        out, "train-lm", _config_hash(cfg), train_cfg.seed,
        {"train": enc_train_path, "valid": enc_valid_path},
        {"best_valid_ppl": result.best_valid_ppl, "best_epoch": result.best_epoch,
         "n_params": result.best_params.n_params(),
         "composition": lm_cfg.composition, "d_LM": lm_cfg.d_lm,
         "d_HW": lm_cfg.d_hw, "d_X": lm_cfg.d_x},
    )


def cmd_eval_lm(cfg: RunConfig) -> None:
    ckpt_path = cfg.get_path("train", "checkpoint")
    verify_input(ckpt_path)
    params = lm.load_checkpoint(ckpt_path)
    split = cfg.get("eval", "split")
    enc_path = _encoded_path(cfg, split)
    verify_input(enc_path)
    enc = load_encoded(enc_path)
    ppl = evaluation.perplexity(params, enc)
    if not np.isfinite(ppl):
        raise NumericFailure("perplexity is not finite")
    out = cfg.get_path("eval", "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "split": split,
        "ppl": ppl,
        "token_count": enc.n_tokens,
        "param_count": evaluation.param_count(params),
    }
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    write_manifest(
        out, "eval-lm", _config_hash(cfg), _seed(cfg),
        {"checkpoint": ckpt_path, "encoded": enc_path},
        {"split": split, "ppl": ppl},
    )


def cmd_diag_gates(cfg: RunConfig) -> None:
    ckpt_path = cfg.get_path("train", "checkpoint")
    verify_input(ckpt_path)
    params = lm.load_checkpoint(ckpt_path)
    split = cfg.get("gates", "split")
    enc_path = _encoded_path(cfg, split)
    verify_input(enc_path)
    enc = load_encoded(enc_path)
    stats = evaluation.gate_stats(
        params, enc, max_samples=cfg.get_int("gates", "max_samples")
    )
    out = cfg.get_path("gates", "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    stats.write_csv(out)
    summary = stats.summary()
    write_manifest(
        out, "diag-gates", _config_hash(cfg), _seed(cfg),
        {"checkpoint": ckpt_path, "encoded": enc_path},
        {"split": split, "mean_layer1": summary["layer1"]["mean"],
         "mean_layer2": summary["layer2"]["mean"], "n_samples": stats.n_samples},
    )


STAGES = {
    "synth": cmd_synth,
    "mine": cmd_mine,
    "train-crf": cmd_train_crf,
    "build-automaton": cmd_build_automaton,
    "encode": cmd_encode,
    "train-lm": cmd_train_lm,
    "eval-lm": cmd_eval_lm,
    "diag-gates": cmd_diag_gates,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="patlm",
        description="Pattern mining, pattern-CRF selection, and subword-aware LM pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument(
            "--set", action="append", dest="overrides", default=[],
            metavar="SECTION.KEY=VALUE", help="override a config value",
        )
    args = parser.parse_args(argv)

    def fail(code: int, kind: str, exc: Exception) -> int:
        print(
            f"patlm: code={code} stage={args.command} error={kind} reason={exc}",
            file=sys.stderr,
        )
        return code

    try:
        cfg = RunConfig(args.config, args.overrides)
        STAGES[args.command](cfg)
    except ConfigError as e:
        return fail(2, "config", e)
    except (FileNotFoundError, ProvenanceError, CorpusError) as e:
        return fail(3, "input", e)
    except NumericFailure as e:
        return fail(4, "numeric", e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
