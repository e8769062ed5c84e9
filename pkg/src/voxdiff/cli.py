"""Single command-line entry point for the whole pipeline.

Subcommands: data, train-cisp, train-ddpm, sample, interpolate, evaluate,
analyze, humaneval-prepare, humaneval-tally, humaneval-serve. Every output
artifact embeds the resolved configuration (and its hash) so any file can be
traced back to the run that produced it. All randomness flows from --seed
through named sub-streams.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, humaneval, metrics, sampler, server, toydata
from .cisp import CispModel, read_embeddings, slerp, train_cisp, write_embeddings
from .ckpt import load_tensors, save_tensors
from .denoiser import DenoiserNet, train_step
from .schedule import build_schedule
from .toydata import read_image, read_manifest
from .util import config_hash, seed_stream
from .voxel import read_grid, sample_surface, write_grid

OUT_ROOT_ENV = "VOXDIFF_OUT"


def _out_path(value: str | None, default_name: str) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get(OUT_ROOT_ENV, ".")) / default_name


def _config(args: argparse.Namespace, command: str) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    cfg["command"] = command
    return cfg


def _write_report(path: Path, payload: dict, cfg: dict) -> None:
    payload = dict(payload)
    payload["config"] = cfg
    payload["config_hash"] = config_hash(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {path}")


# -- data ---------------------------------------------------------------


def cmd_data(args) -> int:
    out = _out_path(args.out_dir, "dataset")
    manifest = toydata.build_dataset(
        out,
        n_per_class=args.n_per_class,
        split=tuple(args.split),
        seed=args.seed,
        dim=args.dim,
        pose_variety=not args.no_pose_variety,
    )
    print(f"wrote {manifest}")
    return 0


# -- training -----------------------------------------------------------


def _load_split(manifest_path, split: str, view: int = 0):
    _, records = read_manifest(manifest_path)
    recs = [r for r in records if r.split == split]
    if not recs:
        raise SystemExit(f"manifest has no records in split {split!r}")
    grids = np.stack([np.asarray(read_grid(r.grid_path).values, dtype=np.float64) for r in recs])
    images = np.stack([read_image(r.render_paths[view]) for r in recs])
    classes = [r.cls for r in recs]
    ids = [r.id for r in recs]
    return grids, images, classes, ids


def cmd_train_cisp(args) -> int:
    cfg = _config(args, "train-cisp")
    grids, images, classes, _ = _load_split(args.manifest, "train", view=args.view)
    model = CispModel(
        grid_dims=grids.shape[1:], render_hw=images.shape[1], f=args.f, width=args.width,
        seed=args.seed,
    )
    rng = seed_stream(args.seed, "train-cisp")
    curve = train_cisp(model, images, grids, epochs=args.epochs, batch_n=args.batch, rng=rng, lr=args.lr)
    out = _out_path(args.out, "cisp.ickp")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"wrote {out} (final loss {curve[-1]:.4f})")
    _write_report(out.with_suffix(".json"), {"loss_curve": curve}, cfg)
    if args.class_means:
        names = sorted(set(classes))
        embs = model.embed_images(images)
        means = []
        for name in names:
            rows = embs[[i for i, c in enumerate(classes) if c == name]]
            mean = rows.mean(axis=0)
            means.append(mean / np.linalg.norm(mean))
        means_path = Path(args.class_means)
        write_embeddings(means_path, np.stack(means))
        with open(means_path.with_suffix(".json"), "w") as fh:
            json.dump({"classes": names, "config_hash": config_hash(cfg)}, fh)
        print(f"wrote {means_path}")
    return 0


def cmd_train_ddpm(args) -> int:
    cfg = _config(args, "train-ddpm")
    grids, images, _, _ = _load_split(args.manifest, "train", view=args.view)
    cisp_model = CispModel.load(args.cisp) if args.cisp else None
    embs = cisp_model.embed_images(images) if cisp_model else None
    sched = build_schedule(args.T, args.beta_start, args.beta_end)
    net = DenoiserNet(
        grid_dims=grids.shape[1:],
        width=args.width,
        time_dim=args.time_dim,
        cond_dim=embs.shape[1] if embs is not None else args.f,
        seed=args.seed,
        spatial_inject=not args.no_spatial_inject,
    )
    gcfg = net.guidance(w=1.0, p_drop=args.p_drop)
    rng = seed_stream(args.seed, "train-ddpm")
    optimizer = None
    if args.optimizer == "adam":
        from .optim import Adam

        optimizer = Adam(net.params, lr=args.lr)
    n = grids.shape[0]
    losses = []
    for step in range(args.steps):
        idx = rng.integers(0, n, size=args.batch)
        batch = (grids[idx], None if embs is None else embs[idx])
        losses.append(train_step(net, batch, sched, gcfg, rng, lr=args.lr, optimizer=optimizer))
        if (step + 1) % max(1, args.steps // 10) == 0:
            recent = float(np.mean(losses[-50:]))
            print(f"step {step + 1}/{args.steps} loss {recent:.4f}")
    out = _out_path(args.out, "ddpm.ickp")
    out.parent.mkdir(parents=True, exist_ok=True)
    net.save(out)
    tensors = load_tensors(out)
    tensors["__sched__"] = np.asarray([args.T, args.beta_start, args.beta_end])
    save_tensors(out, tensors)
    _write_report(out.with_suffix(".json"), {"loss_first10": losses[:10], "loss_last10": losses[-10:]}, cfg)
    print(f"wrote {out}")
    return 0


def load_ddpm(path) -> tuple[DenoiserNet, "build_schedule"]:
    tensors = load_tensors(path)
    sched_meta = tensors.get("__sched__")
    net = DenoiserNet.load(path)
    if sched_meta is None:
        return net, build_schedule()
    T, b0, b1 = sched_meta
    return net, build_schedule(int(T), float(b0), float(b1))


# -- sampling -----------------------------------------------------------


def cmd_sample(args) -> int:
    if args.uncond and args.cisp_emb:
        raise SystemExit("--uncond contradicts --cisp-emb")
    if args.uncond and args.w is not None:
        raise SystemExit("--w has no effect with --uncond; remove one")
    if not args.uncond and not args.cisp_emb:
        raise SystemExit("need --cisp-emb FILE or --uncond")
    w = 1.5 if args.w is None else args.w
    cfg = _config(args, "sample")
    net, sched = load_ddpm(args.ckpt)
    out_dir = _out_path(args.out_dir, "samples")
    out_dir.mkdir(parents=True, exist_ok=True)
    embs = None
    if args.cisp_emb:
        embs = read_embeddings(args.cisp_emb)
    requests = []
    for i in range(args.count):
        cond = None if embs is None else embs[i % embs.shape[0]]
        requests.append(sampler.SampleRequest(seed=args.seed, w=w if embs is not None else 1.0, cisp=cond, chain=i))
    results = sampler.sample_batch(requests, net, sched)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": cfg, "config_hash": config_hash(cfg)}) + "\n")
        for i, res in enumerate(results):
            bin_path = f"sample_{i:04d}.icvx"
            cont_path = f"sample_{i:04d}_cont.icvx"
            write_grid(res.binary, out_dir / bin_path)
            write_grid(res.continuous, out_dir / cont_path)
            fh.write(
                json.dumps(
                    {
                        "seed": args.seed,
                        "chain": i,
                        "w": w if embs is not None else None,
                        "conditioning": None if embs is None else int(i % embs.shape[0]),
                        "path": bin_path,
                        "continuous_path": cont_path,
                        "net_evals": res.n_net_evals,
                        "config_hash": config_hash(cfg),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote {len(results)} samples to {out_dir}")
    return 0


def cmd_interpolate(args) -> int:
    cfg = _config(args, "interpolate")
    a = read_embeddings(args.a)[0]
    b = read_embeddings(args.b)[0]
    net, sched = load_ddpm(args.ckpt)
    out_dir = _out_path(args.out_dir, "interpolation")
    out_dir.mkdir(parents=True, exist_ok=True)
    lams = [i / (args.steps - 1) for i in range(args.steps)]
    # one shared noise seed across the sweep: shape changes come from the
    # embedding path alone
    requests = [
        sampler.SampleRequest(seed=args.seed, w=args.w, cisp=slerp(a, b, lam), chain=0)
        for lam in lams
    ]
    results = sampler.sample_batch(requests, net, sched)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": cfg, "config_hash": config_hash(cfg)}) + "\n")
        for lam, res in zip(lams, results):
            path = f"interp_{lam:.2f}.icvx"
            write_grid(res.binary, out_dir / path)
            fh.write(
                json.dumps(
                    {"lam": lam, "seed": args.seed, "w": args.w, "path": path,
                     "config_hash": config_hash(cfg)},
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote {len(results)} interpolation steps to {out_dir}")
    return 0


# -- evaluation ---------------------------------------------------------


def _load_clouds(dir_path, n_points: int, seed: int):
    import hashlib

    paths = sorted(Path(dir_path).glob("*.icvx"))
    paths = [p for p in paths if not p.stem.endswith("_cont")]
    if not paths:
        raise SystemExit(f"no .icvx grids in {dir_path}")
    grids = [read_grid(p) for p in paths]
    # per-grid sampling seed derived from content: identical grids always
    # produce identical clouds, wherever they live
    clouds = []
    for g in grids:
        digest = hashlib.sha256(np.ascontiguousarray(g.values).tobytes()).digest()
        grid_seed = (seed + int.from_bytes(digest[:4], "little")) % 2 ** 31
        clouds.append(sample_surface(g, n=n_points, seed=grid_seed))
    return grids, clouds


def cmd_evaluate(args) -> int:
    cfg = _config(args, "evaluate")
    gen_grids, gen_clouds = _load_clouds(args.gen_dir, args.n_points, args.seed)
    ref_grids, ref_clouds = _load_clouds(args.ref_dir, args.n_points, args.seed)
    wanted = ("1nna", "mmd", "cov", "iou", "fscore") if args.metric == "all" else (args.metric,)
    report: dict = {"distance": args.distance, "n_gen": len(gen_clouds), "n_ref": len(ref_clouds)}
    if {"1nna", "mmd", "cov"} & set(wanted):
        sets = metrics.EvalSets(tuple(gen_clouds), tuple(ref_clouds))
        if "1nna" in wanted:
            report["1nna_pct"] = metrics.one_nna(sets, args.distance)
        if "mmd" in wanted:
            report["mmd"] = metrics.mmd(sets, args.distance)
        if "cov" in wanted:
            report["cov_pct"] = metrics.cov(sets, args.distance)
    if {"iou", "fscore"} & set(wanted):
        if len(gen_grids) != len(ref_grids):
            raise SystemExit("iou/fscore pair grids by sorted order and need equal counts")
        ious, fscores = [], []
        for p, g in zip(gen_grids, ref_grids):
            i, f = metrics.iou_fscore(p, g, fscore_tau=args.fscore_tau, seed=args.seed)
            ious.append(i)
            fscores.append(f)
        if "iou" in wanted:
            report["iou_mean"] = float(np.mean(ious))
        if "fscore" in wanted:
            report["fscore_mean"] = float(np.mean(fscores))
    _write_report(_out_path(args.out, "evaluation.json"), report, cfg)
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args, "analyze")
    sched = build_schedule(args.T, args.beta_start, args.beta_end)
    if args.dump_schedule:
        with open(args.dump_schedule, "w") as fh:
            fh.write(sched.dump_table())
        print(f"wrote {args.dump_schedule}")
    grid = read_grid(args.grid)
    timesteps = [int(t) for t in args.timesteps.split(",")]
    report = analysis.normality_report(grid, sched, timesteps, seed=args.seed)
    _write_report(_out_path(args.out, "analysis.json"), report.to_dict(), cfg)
    return 0


# -- human evaluation ---------------------------------------------------


def cmd_humaneval_prepare(args) -> int:
    pairs_path = _out_path(args.out_pairs, "pairs.jsonl")
    key_path = _out_path(args.out_key, "pairs_key.jsonl")
    pairs_path.parent.mkdir(parents=True, exist_ok=True)
    key_path.parent.mkdir(parents=True, exist_ok=True)
    humaneval.prepare_pairs(
        args.ours,
        args.baseline,
        n_per_category=args.n_per_category,
        seed=args.seed,
        out_pairs=pairs_path,
        out_key=key_path,
        categories=tuple(args.categories.split(",")) if args.categories else None,
    )
    print(f"wrote {pairs_path} and sealed key {key_path}")
    return 0


def cmd_humaneval_tally(args) -> int:
    cfg = _config(args, "humaneval-tally")
    report = humaneval.tally(args.votes, args.pairs, args.key)
    _write_report(_out_path(args.out, "tally.json"), report, cfg)
    return 0


def cmd_humaneval_serve(args) -> int:
    pairs = humaneval.load_pairs(args.pairs)
    store = humaneval.VoteStore(pairs, args.votes, seed=args.seed)
    base = Path(args.base_dir) if args.base_dir else Path(args.pairs).parent
    server.serve(store, pairs, base, static_dir=args.static, host=args.host, port=args.port)
    return 0


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxdiff",
        description="Voxel diffusion toolkit: data, training, sampling, evaluation, human eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data", help="build the procedural paired dataset")
    p.add_argument("--out-dir")
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    p.add_argument("--no-pose-variety", action="store_true")
    p.set_defaults(func=cmd_data)

    p = sub.add_parser("train-cisp", help="train the joint image-shape embedding")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--f", type=int, default=32)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--class-means", help="also write per-class mean image embeddings (ICEM)")
    p.set_defaults(func=cmd_train_cisp)

    p = sub.add_parser("train-ddpm", help="train the conditional denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cisp", help="CISP checkpoint for conditioning embeddings")
    p.add_argument("--out")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--p-drop", type=float, default=0.1)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--no-spatial-inject", action="store_true")
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--time-dim", type=int, default=32)
    p.add_argument("--f", type=int, default=32)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_ddpm)

    p = sub.add_parser("sample", help="reverse-diffuse new shapes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cisp-emb", help="ICEM file of conditioning embeddings")
    p.add_argument("--uncond", action="store_true")
    p.add_argument("--w", type=float, default=None, help="guidance scale (default 1.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="sample along a spherical embedding path")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--w", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="compare generated and reference shape sets")
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--metric", choices=("1nna", "mmd", "cov", "iou", "fscore", "all"), default="all")
    p.add_argument("--distance", choices=("cd", "emd"), default="cd")
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--fscore-tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="forward-process normality diagnostics")
    p.add_argument("--grid", required=True)
    p.add_argument("--timesteps", default="1,250,500,1000")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-schedule", help="also write the (t, beta, alpha, abar) TSV table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("humaneval-prepare", help="build judging pairs + sealed key")
    p.add_argument("--ours", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--n-per-category", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories")
    p.add_argument("--out-pairs")
    p.add_argument("--out-key")
    p.set_defaults(func=cmd_humaneval_prepare)

    p = sub.add_parser("humaneval-tally", help="majority-vote tally of a vote file")
    p.add_argument("--votes", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_humaneval_tally)

    p = sub.add_parser("humaneval-serve", help="HTTP surface for the judging UI")
    p.add_argument("--pairs", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--base-dir")
    p.add_argument("--static")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_humaneval_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # surface every failure as a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
