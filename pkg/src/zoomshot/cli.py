"""Command-line surface: train, eval, synth, gradcheck, inspect, ablate.

Exit codes: 0 success, 1 gradient-check failure, 2 configuration error,
3 data error (malformed or mismatched files), 4 I/O error. Every
subcommand that writes files also writes a JSON run manifest beside its
outputs holding the resolved configuration, input file digests and output
paths; CSV outputs carry the manifest digest in a leading `#` line, so a
run is reproducible from its manifest alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .embeddings import Modality, read_embedding_file
from .errors import (
    ConfigError,
    DegenerateDatasetError,
    DegenerateInputError,
    EmptyDatasetError,
    PairingError,
    ParseError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .gradcheck import run_gradcheck
from .losses import LossConfig, PromptBank
from .synthworld import WorldSpec, generate, read_ground_truth, write_world
from .trainer import (
    TrainConfig,
    config_digest,
    load_model,
    save_model,
    train,
)
from .zeroshot import class_embeddings, eval_forward, eval_inverse, load_class_bundle

LOSS_NAMES = ("mse", "cc", "pgkd")

ABLATION_COMBOS = (
    ("MSE", ("mse",)),
    ("MSE+PG-KD", ("mse", "pgkd")),
    ("MSE+CC", ("mse", "cc")),
    ("PG-KD", ("pgkd",)),
    ("CC", ("cc",)),
    ("CC+PG-KD", ("cc", "pgkd")),
    ("All", ("mse", "cc", "pgkd")),
)

_CONFIG_ERRORS = (ConfigError, UsageError)
_DATA_ERRORS = (ParseError, PairingError, ShapeError, ValidationError,
                DegenerateInputError, DegenerateDatasetError, EmptyDatasetError)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, subcommand: str, config: dict, inputs: list,
                    outputs: list, seed: int) -> str:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
    }
    blob = json.dumps(manifest, sort_keys=True, indent=2)
    Path(path).write_text(blob + "\n", encoding="utf-8")
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# shared flag groups
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--losses", default="mse,cc,pgkd",
                   help="comma-separated subset of mse,cc,pgkd")
    p.add_argument("--pgkd-metric", choices=("lm", "htce"), default="lm",
                   help="distillation distance: logit matching or "
                        "high-temperature cross-entropy")
    p.add_argument("--pgkd-on-logits", action="store_true",
                   help="logit matching compares pre-softmax cosine logits "
                        "instead of the softmax outputs")
    p.add_argument("--htce-t2", action="store_true",
                   help="multiply the cross-entropy distillation term by "
                        "temperature squared")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--var-target", type=float, default=4.5,
                   help="target variance both latent spaces are rescaled to")
    p.add_argument("--data-fraction", type=float, default=1.0,
                   help="fraction of training rows kept (without replacement)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--affine", action="store_true",
                   help="learn bias vectors alongside the two matrices")
    p.add_argument("--variance-ratio", choices=("corrected", "literal"),
                   default="corrected",
                   help="direction of the rescaling ratio; 'corrected' moves "
                        "the variance onto the target")
    p.add_argument("--kd-temp", type=float, default=20.0,
                   help="softmax temperature for cross-entropy distillation")
    p.add_argument("--logit-scale", type=float, default=1.0,
                   help="multiplier on cosine logits before softmax")
    p.add_argument("--init", choices=("fanin", "identity"), default="fanin",
                   help="map initialisation (identity requires equal dims)")


def _train_config(args) -> TrainConfig:
    chosen = [s.strip() for s in args.losses.split(",") if s.strip()]
    for name in chosen:
        if name not in LOSS_NAMES:
            raise ConfigError(f"--losses entries must be among {LOSS_NAMES}, got {name!r}")
    if not chosen:
        raise ConfigError("--losses must enable at least one of mse,cc,pgkd")
    loss = LossConfig(
        use_mse="mse" in chosen,
        use_cc="cc" in chosen,
        use_pgkd="pgkd" in chosen,
        pgkd_metric=args.pgkd_metric,
        kd_temperature=args.kd_temp,
        logit_scale=args.logit_scale,
        pgkd_on_probabilities=not args.pgkd_on_logits,
        htce_t2_correction=args.htce_t2,
    )
    return TrainConfig(
        lr0=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        target_variance=args.var_target,
        seed=args.seed,
        data_fraction=args.data_fraction,
        loss=loss,
        affine=args.affine,
        variance_ratio=args.variance_ratio,
        init=args.init,
    )


def _load_images(path, flag: str):
    es = read_embedding_file(path)
    if es.modality != Modality.IMAGE:
        raise ValidationError(f"{flag} must point at image-modality embeddings: {path}")
    return es


def _load_prompt_bank(path) -> PromptBank:
    return PromptBank(read_embedding_file(path), source=str(path))


def _run_training(args):
    cfg = _train_config(args)
    student = _load_images(args.student_imgs, "--student-imgs")
    teacher = _load_images(args.teacher_imgs, "--teacher-imgs")
    bank = None
    if args.teacher_prompts is not None:
        bank = _load_prompt_bank(args.teacher_prompts)
    elif cfg.loss.use_cc or cfg.loss.use_pgkd:
        raise ConfigError("--teacher-prompts is required when cc or pgkd losses are enabled")
    return cfg, train(student, teacher, bank, cfg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg, result = _run_training(args)
    out = Path(args.out)
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".report.csv")
    manifest_path = out.with_name(out.name + ".manifest.json")

    inputs = [args.student_imgs, args.teacher_imgs]
    if args.teacher_prompts is not None:
        inputs.append(args.teacher_prompts)
    digest = _write_manifest(
        manifest_path, "train", _resolved_config(args), inputs,
        [out, report_path], args.seed,
    )
    save_model(result.maps, result.scales, config_digest(cfg), out)
    _write_report_csv(result.report, report_path, digest)
    final = result.report.steps[-1].total if result.report.steps else float("nan")
    print(f"model={out} steps={len(result.report.steps)} final_loss={final!r}")
    return 0


def _write_report_csv(report, path, manifest_digest: str) -> None:
    report.to_csv(path)
    body = Path(path).read_text(encoding="utf-8")
    Path(path).write_text(f"# manifest={manifest_digest}\n" + body, encoding="utf-8")


def _resolved_config(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_eval(args) -> int:
    maps, scales, _digest = load_model(args.model)
    imgs = read_embedding_file(args.imgs)
    if imgs.labels is None:
        raise ValidationError(f"--imgs file has no labels, cannot evaluate: {args.imgs}")
    bundle = load_class_bundle(args.class_templates)
    if imgs.class_names != bundle.class_names:
        raise ValidationError(
            "class names in the labeled embeddings and the class-template "
            "bundle must match exactly (same classes, same order)"
        )
    emb = class_embeddings(bundle, renormalize=not args.no_renormalize)
    if args.direction == "forward":
        result = eval_forward(maps, scales, imgs, emb)
    else:
        result = eval_inverse(maps, scales, imgs, emb)

    out = Path(args.out) if args.out else Path(args.model).with_suffix(
        f".{args.direction}.eval.csv")
    manifest_path = out.with_name(out.name + ".manifest.json")
    digest = _write_manifest(
        manifest_path, "eval", _resolved_config(args),
        [args.model, args.imgs], [out], seed=0,
    )
    out.write_text(f"# manifest={digest}\n" + result.to_csv(bundle.class_names),
                   encoding="utf-8")
    print(f"top1={result.top1_accuracy!r}")
    return 0


def cmd_synth(args) -> int:
    spec = WorldSpec(
        m=args.m, d=args.d, n_train=args.n_train, n_eval=args.n_eval,
        c=args.classes, noise_sigma=args.noise, gap_offset=args.gap,
        condition_bound=args.cond, seed=args.seed, n_prompts=args.n_prompts,
    )
    world = generate(spec)
    paths = write_world(world, args.out_dir)
    manifest_path = Path(args.out_dir) / "manifest.json"
    _write_manifest(manifest_path, "synth", _resolved_config(args), [],
                    [str(p) for p in paths.values()], args.seed)
    for name, p in paths.items():
        print(f"{name}={p}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seeds=args.seeds, fault=args.inject_fault)
    for r in report.results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} seeds={r.seeds} worst_seed={r.worst_seed} "
              f"max_rel_err={r.max_rel_err:.3e}")
    summary = "all gradients match" if report.passed else "GRADIENT MISMATCH"
    print(f"{summary} ({len(report.results)} checks, "
          f"{report.runtime_seconds:.1f}s)")
    return 0 if report.passed else 1


def cmd_inspect(args) -> int:
    path = Path(args.path)
    magic = path.read_bytes()[:4]
    if magic == b"ZSEB":
        es = read_embedding_file(path)
        print(f"format=ZSEB modality={es.modality.name.lower()} "
              f"encoder={es.encoder_name!r} n={es.n} dim={es.dim} "
              f"labeled={es.labels is not None} "
              f"classes={0 if es.class_names is None else len(es.class_names)}")
    elif magic == b"ZSLM":
        maps, scales, digest = load_model(path)
        print(f"format=ZSLM m={maps.m} d={maps.d} affine={maps.affine} "
              f"scale_student={scales.scale_student!r} "
              f"scale_teacher_img={scales.scale_teacher_img!r} "
              f"scale_teacher_txt={scales.scale_teacher_txt!r} "
              f"target_variance={scales.target_variance!r}")
        print(f"config_digest={digest}")
    elif magic == b"ZSGT":
        a = read_ground_truth(path)
        print(f"format=ZSGT d={a.shape[0]} m={a.shape[1]}")
    else:
        raise ParseError(f"unknown magic {magic!r}", 0)
    return 0


def cmd_ablate(args) -> int:
    student = _load_images(args.student_imgs, "--student-imgs")
    teacher = _load_images(args.teacher_imgs, "--teacher-imgs")
    bank = _load_prompt_bank(args.teacher_prompts)
    eval_imgs = read_embedding_file(args.eval_imgs)
    if eval_imgs.labels is None:
        raise ValidationError(f"--eval-imgs file has no labels: {args.eval_imgs}")
    bundle = load_class_bundle(args.class_templates)
    if eval_imgs.class_names != bundle.class_names:
        raise ValidationError("eval embeddings and class-template bundle disagree "
                              "on class names")
    emb = class_embeddings(bundle)

    rows = []
    for combo_name, members in ABLATION_COMBOS:
        combo_args = argparse.Namespace(**vars(args))
        combo_args.losses = ",".join(members)
        cfg = _train_config(combo_args)
        result = train(student, teacher, bank, cfg)
        if args.direction == "forward":
            ev = eval_forward(result.maps, result.scales, eval_imgs, emb)
        else:
            ev = eval_inverse(result.maps, result.scales, eval_imgs, emb)
        rows.append((combo_name, ev.top1_accuracy))
        print(f"{combo_name}: top1={ev.top1_accuracy!r}")

    out = Path(args.out)
    manifest_path = out.with_name(out.name + ".manifest.json")
    digest = _write_manifest(
        manifest_path, "ablate", _resolved_config(args),
        [args.student_imgs, args.teacher_imgs, args.teacher_prompts,
         args.eval_imgs], [out], args.seed,
    )
    lines = [f"# manifest={digest}", "combo,top1"]
    lines += [f"{name},{top1!r}" for name, top1 in rows]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoomshot",
        description="Train linear maps between a student vision encoder's "
                    "latent space and a joint vision-language latent space; "
                    "evaluate zero-shot classification in either space.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", formatter_class=fmt,
                       help="train the map pair on embedding files")
    p.add_argument("--student-imgs", required=True,
                   help="ZSEB image embeddings from the student encoder")
    p.add_argument("--teacher-imgs", required=True,
                   help="ZSEB image embeddings of the same images, same order, "
                        "from the teacher encoder")
    p.add_argument("--teacher-prompts", default=None,
                   help="ZSEB text embeddings of the training prompts "
                        "(required unless --losses=mse)")
    p.add_argument("--out", required=True, help="output model file (ZSLM)")
    p.add_argument("--report", default=None,
                   help="per-step report CSV (default: <out>.report.csv)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=fmt,
                       help="zero-shot evaluation of a trained model")
    p.add_argument("--model", required=True, help="ZSLM model file")
    p.add_argument("--imgs", required=True, help="labeled ZSEB image embeddings")
    p.add_argument("--class-templates", required=True,
                   help="class bundle directory (classes.txt + template_NN.zseb)")
    p.add_argument("--direction", choices=("forward", "inverse"), default="forward",
                   help="forward: map images into the teacher space; "
                        "inverse: map class text into the student space")
    p.add_argument("--out", default=None,
                   help="per-class CSV (default: <model>.<direction>.eval.csv)")
    p.add_argument("--no-renormalize", action="store_true",
                   help="skip renormalising averaged template embeddings")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", formatter_class=fmt,
                       help="generate a synthetic planted-map world")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--m", type=int, default=12, help="student dimension")
    p.add_argument("--d", type=int, default=16, help="teacher dimension")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=1000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.01,
                   help="feature noise standard deviation")
    p.add_argument("--gap", type=float, default=0.5,
                   help="norm of the planted image/text modality offset")
    p.add_argument("--cond", type=float, default=3.0,
                   help="condition-number bound of the planted map")
    p.add_argument("--n-prompts", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", formatter_class=fmt,
                       help="finite-difference check of every op and loss "
                            "configuration")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--inject-fault", choices=("matmul",), default=None,
                   help="test-only: inject a backward-rule bug to prove the "
                        "suite can fail")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", formatter_class=fmt,
                       help="print header fields of a ZSEB/ZSLM/ZSGT file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", formatter_class=fmt,
                       help="train and evaluate all seven loss combinations")
    p.add_argument("--student-imgs", required=True)
    p.add_argument("--teacher-imgs", required=True)
    p.add_argument("--teacher-prompts", required=True)
    p.add_argument("--eval-imgs", required=True, help="labeled ZSEB embeddings")
    p.add_argument("--class-templates", required=True)
    p.add_argument("--direction", choices=("forward", "inverse"), default="forward")
    p.add_argument("--out", required=True, help="combo,top1 CSV output")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
