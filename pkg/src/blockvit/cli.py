"""Command-line front end: key generation, image/model encryption,
equivalence verification, attack evaluation, and the federated run.

Every subcommand is deterministic given its flags; report paths emit
machine-readable output (JSON/CSV/JSONL) and, where it helps, a rendered
figure next to it.  Exit codes: 0 success, 1 verification or attack
failure, 2 usage/format error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import cipher, flsim, harness, keygen, plotting, synthdata, tensorio, vit
from .rng import SplitMix64

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _geometry(args) -> tuple[int, int, int, int]:
    """(p, c, image_size, n) from flags, validated."""
    p, c, size = args.block_size, args.channels, args.image_size
    if p < 1 or c < 1 or size < 1:
        raise ValueError("block size, channels, image size must be >= 1")
    if size % p:
        raise ValueError(f"image size {size} not divisible by block size {p}")
    return p, c, size, (size // p) ** 2


def _load_plain_image(path: str) -> tensorio.ImageTensor:
    if path.lower().endswith((".png", ".ppm")):
        return tensorio.load_image(path)
    return tensorio.blob_to_image(tensorio.load_tensor(path), tensorio.PLAIN)


def _random_images(seed: int, count: int, size: int, c: int) -> list:
    stream = SplitMix64(seed)
    return [tensorio.ImageTensor(
        data=stream.uniforms(size * size * c).reshape(size, size, c),
        range_tag=tensorio.PLAIN) for _ in range(count)]


def _write_json(obj, path: str) -> None:
    tensorio.atomic_write(path, (json.dumps(obj, sort_keys=True) + "\n").encode())


def cmd_keygen(args) -> int:
    p, c, _, n = _geometry(args)
    key = keygen.generate_key(args.seed, p, c, n, matrix_mode=args.matrix_mode)
    keygen.save_key(key, args.out)
    print(f"wrote {args.out}: L={key.L} N={key.n} mode={key.matrix_mode}")
    return EXIT_OK


def cmd_init_model(args) -> int:
    p, c, _, n = _geometry(args)
    model = vit.init_random_model(args.seed, p, c, n, args.dim, args.depth,
                                  args.heads, args.classes)
    vit.save_model(model, args.out)
    print(f"wrote {args.out}: L={model.L} N={model.n} D={model.d} "
          f"depth={model.depth}")
    return EXIT_OK


def cmd_encrypt_model(args) -> int:
    model = vit.load_model(args.model)
    key = keygen.load_key(args.key)
    vit.save_model(cipher.encrypt_model(model, key), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_encrypt_image(args) -> int:
    img = _load_plain_image(args.infile)
    key = keygen.load_key(args.key)
    enc = cipher.encrypt_image(img, key)
    tensorio.save_tensor(tensorio.image_to_blob(enc), args.out)
    if args.viz:
        tensorio.export_visualization(enc, args.viz)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_decrypt_image(args) -> int:
    enc = tensorio.blob_to_image(tensorio.load_tensor(args.infile),
                                 tensorio.ENCRYPTED)
    key = keygen.load_key(args.key)
    dec = cipher.decrypt_image(enc, key)
    tensorio.save_tensor(tensorio.image_to_blob(dec), args.out)
    if args.viz:
        tensorio.export_visualization(dec, args.viz)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train_head(args) -> int:
    model = vit.load_model(args.model)
    images, labels = synthdata.make_dataset(
        args.seed, args.samples, model.num_classes,
        model.p * int(np.sqrt(model.n)), model.p * int(np.sqrt(model.n)),
        model.c)
    trained, losses = vit.train_linear_head(model, images, labels,
                                            args.epochs, args.lr)
    vit.save_model(trained, args.out)
    preds = harness.predict(trained, images)
    acc = float(np.mean(preds == labels))
    print(f"wrote {args.out}: final loss {losses[-1]:.4f} "
          f"train accuracy {acc:.3f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = vit.load_model(args.model)
    key = keygen.load_key(args.key)
    if args.infile:
        images = [_load_plain_image(path) for path in args.infile]
    elif args.num_images > 0:
        size = model.p * int(np.sqrt(model.n))
        images = _random_images(args.seed, args.num_images, size, model.c)
    else:
        print("verify: no images given (--in or --num-images)", file=sys.stderr)
        return EXIT_USAGE
    enc_model = vit.load_model(args.enc_model) if args.enc_model else None
    report = vit.verify_equivalence(model, key, images,
                                    token_tol=args.tolerance,
                                    logit_tol=args.tolerance * 10,
                                    enc_model=enc_model)
    if args.out:
        _write_json(report, args.out)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_attack_eval(args) -> int:
    model = vit.load_model(args.model)
    key = keygen.load_key(args.key)
    size = model.p * int(np.sqrt(model.n))
    images, _ = synthdata.make_dataset(args.seed, args.samples,
                                       model.num_classes, size, size, model.c)
    enc_model = cipher.encrypt_model(model, key)
    plain_rate = harness.plain_image_attack(enc_model, images, model)
    report = harness.random_key_attack(enc_model, key, args.num_keys, images,
                                       model, attack_seed=args.seed ^ 0xD1CE)
    summary = {
        "plain_image_agreement": plain_rate,
        "random_key": json.loads(report.to_json()),
        "num_samples": args.samples,
        "num_classes": model.num_classes,
    }
    if args.out:
        _write_json(summary, args.out)
    if args.csv:
        lines = ["key_index,agreement_rate"]
        lines += [f"{i},{r}" for i, r in enumerate(report.rates)]
        tensorio.atomic_write(args.csv, ("\n".join(lines) + "\n").encode())
    if args.fig:
        plotting.save_attack_boxplot(report, args.fig,
                                     chance_rate=1.0 / model.num_classes)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if report.positive_control_rate == 1.0 else EXIT_FAIL


def cmd_fl_sim(args) -> int:
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    p, c, size, n = _geometry(args)
    base = vit.init_random_model(args.seed, p, c, n, args.dim, args.depth,
                                 args.heads, args.classes)
    clients = []
    for cid in range(args.clients):
        images, labels = synthdata.make_dataset(
            args.seed + 1000 * (cid + 1), args.samples, args.classes,
            size, size, c, pattern_seed=args.seed)
        clients.append(flsim.ClientState(id=cid, model=base,
                                         images=images, labels=labels))
    global_model, logs = flsim.run_federation(clients, args.rounds,
                                              args.epochs, args.lr)
    finalized = flsim.finalize_with_encryption(
        global_model, [args.seed + 7777 + i for i in range(args.clients)])

    log_path = os.path.join(args.out_dir, "rounds.jsonl")
    tensorio.atomic_write(
        log_path, ("".join(log.to_json() + "\n" for log in logs)).encode())
    vit.save_model(global_model, os.path.join(args.out_dir, "global_model.vtbm"))
    plotting.save_loss_curves(logs, os.path.join(args.out_dir, "loss_curves.png"))

    # every client's encrypted queries must match the plain global model
    all_ok = True
    client_rows = []
    for cl, (enc_model, key) in zip(clients, finalized):
        keygen.save_key(key, os.path.join(args.out_dir,
                                          f"client_{cl.id}_key.json"))
        base_preds = harness.predict(global_model, cl.images)
        enc_preds = harness.predict(
            enc_model, [cipher.encrypt_image(img, key) for img in cl.images])
        agree = harness.agreement_rate(enc_preds, base_preds)
        acc = float(np.mean(base_preds == cl.labels))
        client_rows.append({"client": cl.id, "agreement": agree,
                            "baseline_accuracy": acc})
        all_ok = all_ok and agree == 1.0
    summary = {"clients": client_rows, "rounds": args.rounds,
               "all_clients_match_baseline": all_ok}
    _write_json(summary, os.path.join(args.out_dir, "summary.json"))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if all_ok else EXIT_FAIL


def cmd_viz(args) -> int:
    if args.infile.lower().endswith((".png", ".ppm")):
        img = tensorio.load_image(args.infile)
    else:
        img = tensorio.blob_to_image(tensorio.load_tensor(args.infile),
                                     tensorio.ENCRYPTED)
    tensorio.export_visualization(img, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _add_geometry_flags(sp, with_model_dims: bool = False):
    sp.add_argument("--block-size", type=int, default=4)
    sp.add_argument("--channels", type=int, default=3)
    sp.add_argument("--image-size", type=int, default=32)
    if with_model_dims:
        sp.add_argument("--dim", type=int, default=32)
        sp.add_argument("--depth", type=int, default=2)
        sp.add_argument("--heads", type=int, default=4)
        sp.add_argument("--classes", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="blockvit",
        description="Block-wise encryption for vision-transformer models")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("keygen", help="generate and save a secret key")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--matrix-mode", choices=["orthogonal", "permutation"],
                    default="orthogonal")
    _add_geometry_flags(sp)
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("init-model", help="random forward-engine model")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    _add_geometry_flags(sp, with_model_dims=True)
    sp.set_defaults(func=cmd_init_model)

    sp = sub.add_parser("encrypt-model", help="encrypt model embeddings")
    sp.add_argument("--model", required=True)
    sp.add_argument("--key", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encrypt_model)

    sp = sub.add_parser("encrypt-image", help="block-wise encrypt an image")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--key", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--viz", default=None,
                    help="also write a lossy PNG visualization")
    sp.set_defaults(func=cmd_encrypt_image)

    sp = sub.add_parser("decrypt-image", help="invert image encryption")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--key", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--viz", default=None)
    sp.set_defaults(func=cmd_decrypt_image)

    sp = sub.add_parser("train-head", help="train the linear head on "
                        "synthetic data")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=400)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.set_defaults(func=cmd_train_head)

    sp = sub.add_parser("verify", help="check the encryption equivalence "
                        "identity end to end")
    sp.add_argument("--model", required=True, help="plain model")
    sp.add_argument("--enc-model", default=None,
                    help="already-encrypted model to audit (default: "
                    "encrypt --model with --key in process)")
    sp.add_argument("--key", required=True)
    sp.add_argument("--in", dest="infile", nargs="*", default=[])
    sp.add_argument("--num-images", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=vit.TOKEN_TOL)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("attack-eval", help="plain-image and random-key "
                        "attack evaluation")
    sp.add_argument("--model", required=True, help="trained plain model")
    sp.add_argument("--key", required=True)
    sp.add_argument("--num-keys", type=int, default=100)
    sp.add_argument("--samples", type=int, default=400)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.add_argument("--csv", default=None)
    sp.add_argument("--fig", default=None)
    sp.set_defaults(func=cmd_attack_eval)

    sp = sub.add_parser("fl-sim", help="federated averaging + encryption")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clients", type=int, default=4)
    sp.add_argument("--rounds", type=int, default=10)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--epochs", type=int, default=20,
                    help="local epochs per round")
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--out-dir", required=True)
    _add_geometry_flags(sp, with_model_dims=True)
    sp.set_defaults(func=cmd_fl_sim)

    sp = sub.add_parser("viz", help="render a tensor or image to PNG")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_viz)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (tensorio.FormatError, keygen.KeyMaterialError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
