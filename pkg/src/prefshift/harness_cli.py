"""Command-line experiment runner.

Every stage reads one JSON config (defaults below, overridable per flag) and
writes into ``--out``. Stage randomness comes from the master seed and the
stage name only, so each command is reproducible on its own.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import zlib
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from prefshift.data import TrajArrays, read_jsonl, stack, write_jsonl
from prefshift.env import LearnedEstimators, rollout_oracle, simulate_users
from prefshift.errors import ConfigurationError, PrefShiftError
from prefshift.metrics import EvalConfig, evaluate_policy, metrics_row, write_metrics_csv
from prefshift.oracle import NHMMOracle
from prefshift.policies import SlatePolicy, random_policy, rl_action_slates
from prefshift.policy_opt import PGConfig, RecurrentPolicy, load_policy, save_policy, train_policy
from prefshift.pref_model import (
    TASKS,
    TrainConfig,
    corrected_initial_beliefs,
    evaluate,
    load_checkpoint,
    report_from_beliefs,
    save_checkpoint,
    train,
)
from prefshift.rollout import generate_dataset, make_collector, split_indices
from prefshift.space import PrefSpace
from prefshift.user import UserParams, make_beta_field

log = logging.getLogger("prefshift")

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "out": "prefshift_run",
    "env": {
        "lam": 0.9,
        "beta_d": 40.0,
        "init_pref_mean": 130.0,
        "init_pref_std": 20.0,
        "anticipation": "next",
        "n_bins": 36,
        "beta_peaks": [[80.0, 1.0], [270.0, 4.0]],
        "beta_width": 40.0,
        "beta_floor": 0.25,
    },
    "dataset": {"n_traj": 10000, "horizon": 10},
    "model": asdict(TrainConfig()),
    "policy": {**asdict(PGConfig()), "myopic_iterations": 40},
    "eval": {"n_traj": 1000, "horizon": 10, "nu1": 1.0, "nu2": 1.0},
    "heatmap": {"n_users": 1000},
    "misspecified_choice_model": False,
}


# ---------------------------------------------------------------- config helpers


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigurationError(f"unknown config key {k!r}")
        out[k] = _merge(out[k], v) if isinstance(out[k], dict) and isinstance(v, dict) else v
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {path} not found")
        cfg = _merge(cfg, json.loads(p.read_text()))
    return _merge(cfg, overrides or {})


def user_params(cfg: dict, misspecified: bool = False) -> UserParams:
    """Ground-truth parameters; with ``misspecified`` the peak heights of the choice model are swapped."""
    env = cfg["env"]
    space = PrefSpace(int(env["n_bins"]))
    peaks = [tuple(p) for p in env["beta_peaks"]]
    if misspecified:
        heights = [h for _, h in peaks][::-1]
        peaks = [(a, h) for (a, _), h in zip(peaks, heights)]
    field = make_beta_field(space, tuple(peaks), env["beta_width"], env["beta_floor"])
    return UserParams(env["lam"], env["beta_d"], field, env["init_pref_mean"], env["init_pref_std"],
                      env["anticipation"], space)


def stage_rng(cfg: dict, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), zlib.crc32(stage.encode())]))


def _only(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in d.items() if k in names}


def out_dir(cfg: dict, *parts: str) -> Path:
    p = Path(cfg["out"], *parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _suffix(misspecified: bool) -> str:
    return "_misspec" if misspecified else ""


# ---------------------------------------------------------------- stages


def cmd_gen_data(cfg: dict) -> Path:
    params = user_params(cfg)
    trajs = generate_dataset(params, cfg["dataset"]["n_traj"], cfg["dataset"]["horizon"], stage_rng(cfg, "gen-data"))
    path = out_dir(cfg) / "dataset.jsonl"
    write_jsonl(trajs, path)
    log.info("wrote %d trajectories to %s", len(trajs), path)
    return path


def _load_split(cfg: dict):
    path = Path(cfg["out"]) / "dataset.jsonl"
    if not path.exists():
        raise ConfigurationError(f"{path} missing; run gen-data first")
    arr = stack(read_jsonl(path))
    tr, va = split_indices(len(arr))
    return arr.subset(tr), arr.subset(va)


def model_path(cfg: dict, task: str, misspecified: bool) -> Path:
    return out_dir(cfg, "models") / f"{task}{_suffix(misspecified)}.json"


def cmd_train_model(cfg: dict, task: str, misspecified: bool | None = None) -> list[Path]:
    misspecified = cfg["misspecified_choice_model"] if misspecified is None else misspecified
    tasks = list(TASKS) if task == "all" else [task]
    beta = user_params(cfg, misspecified).beta_c_field
    tr, va = _load_split(cfg)
    tcfg = TrainConfig(**_only(TrainConfig, cfg["model"]))
    written = []
    for t in tasks:
        init_tr = init_va = None
        if t == "counterfactual":
            ipath = model_path(cfg, "initial", misspecified)
            if not ipath.exists():
                raise ConfigurationError(f"{ipath} missing; train the initial model first")
            m_i = load_checkpoint(ipath)
            init_tr, init_va = corrected_initial_beliefs(m_i, tr, beta), corrected_initial_beliefs(m_i, va, beta)
        rows = []

        def on_epoch(rec):
            rows.append(asdict(rec))
            log.info("%s epoch %d train %.4f val %.4f", t, rec.epoch, rec.train_loss, rec.val_loss)

        model, _ = train(t, tr, tcfg, beta, stage_rng(cfg, f"train-model/{t}{_suffix(misspecified)}"), val=va,
                         init_beliefs=init_tr, val_init_beliefs=init_va, on_epoch=on_epoch)
        path = model_path(cfg, t, misspecified)
        save_checkpoint(model, path, {"misspecified_choice_model": misspecified, "seed": cfg["seed"]})
        with open(path.with_name(path.stem + "_epochs.csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
            w.writeheader()
            w.writerows(rows)
        written.append(path)
    return written


EVAL_MODEL_COLUMNS = ["task", "estimator", "choice_model", "choice_nll", "choice_acc", "pref_nll", "pref_acc"]


def cmd_eval_model(cfg: dict) -> Path:
    """Losses and accuracies of the learned models against the exact NHMM and a uniform guesser."""
    params = user_params(cfg)
    ora = NHMMOracle(params)
    _, va = _load_split(cfg)
    n, T = params.n_bins, va.horizon
    uniform = np.full((len(va), T, n), 1.0 / n)
    rows = []

    def add(task, estimator, cm, rep):
        rows.append({"task": task, "estimator": estimator, "choice_model": cm, **rep.summary()})

    # next-step preferences
    fut = np.stack([ora.predictive_beliefs(list(s), list(c))[:-1] for s, c in zip(va.slates, va.choices)])
    truth = params.beta_c_field
    add("future", "oracle", "correct", report_from_beliefs(fut, va.slates, va.choices, va.prefs[:, :T], truth))
    add("future", "random", "correct", report_from_beliefs(uniform, va.slates, va.choices, va.prefs[:, :T], truth))
    # initial preferences, scored on step 0
    s0, x0, p0 = (np.repeat(a[:, :1], T, axis=1) for a in (va.slates, va.choices, va.prefs))
    smooth = np.stack([[ora.smooth_initial(list(s[: k + 1]), list(c[: k + 1])) for k in range(T)]
                       for s, c in zip(va.slates, va.choices)])
    add("initial", "oracle", "correct", report_from_beliefs(smooth, s0, x0, p0, truth))
    add("initial", "random", "correct", report_from_beliefs(uniform, s0, x0, p0, truth))
    # counterfactual: the same users replayed from their true start under the random recommender
    _, cs, cx, cp = simulate_users(params, random_policy(params.space), len(va), T, stage_rng(cfg, "eval-model/cf"),
                                   init_prefs=va.prefs[:, 0])
    b0_oracle = smooth[:, -1]
    cf_oracle = np.stack([NHMMOracle(params, b0).predictive_beliefs(list(s), list(c))[:-1]
                          for b0, s, c in zip(b0_oracle, cs, cx)])
    add("counterfactual", "oracle", "correct", report_from_beliefs(cf_oracle, cs, cx, cp[:, :T], truth))
    add("counterfactual", "random", "correct", report_from_beliefs(uniform, cs, cx, cp[:, :T], truth))
    cf_arr = TrajArrays(cs, cx, cp)
    for mis in (False, True):
        beta = user_params(cfg, mis).beta_c_field
        cm = "misspecified" if mis else "correct"
        paths = {t: model_path(cfg, t, mis) for t in TASKS}
        if paths["future"].exists():
            add("future", "model", cm, evaluate(load_checkpoint(paths["future"]), va, beta))
        if paths["initial"].exists():
            m_i = load_checkpoint(paths["initial"])
            add("initial", "model", cm, evaluate(m_i, va, beta))
            if paths["counterfactual"].exists():
                b0 = corrected_initial_beliefs(m_i, va, beta)
                add("counterfactual", "model", cm, evaluate(load_checkpoint(paths["counterfactual"]), cf_arr, beta, b0))
    path = out_dir(cfg) / "model_eval.csv"
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=EVAL_MODEL_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return path


def load_estimators(cfg: dict, misspecified: bool | None = None) -> LearnedEstimators:
    misspecified = cfg["misspecified_choice_model"] if misspecified is None else misspecified
    paths = {t: model_path(cfg, t, misspecified) for t in TASKS}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise ConfigurationError(f"untrained estimators: {', '.join(missing)}")
    models = {t: load_checkpoint(p) for t, p in paths.items()}
    return LearnedEstimators(models["future"], models["initial"], models["counterfactual"],
                             user_params(cfg, misspecified).beta_c_field)


def policy_name(kind: str, penalized: bool, mode: str) -> str:
    return f"{kind}{'_pen' if penalized else ''}_{mode}"


def cmd_train_policy(cfg: dict, kind: str, penalized: bool, mode: str, gamma: float | None = None) -> Path:
    if kind not in ("myopic", "rl"):
        raise ConfigurationError(f"unknown policy kind {kind!r}")
    params = user_params(cfg)
    pcfg = dict(cfg["policy"])
    if gamma is None:
        gamma = 0.0 if kind == "myopic" else pcfg["gamma"]
    pcfg.update(gamma=gamma, penalized=penalized)
    if kind == "myopic":
        pcfg["iterations"] = pcfg.get("myopic_iterations", pcfg["iterations"])
    pg = PGConfig(**_only(PGConfig, pcfg))
    est = load_estimators(cfg) if mode == "sim" else None
    collector = make_collector(mode, params, rl_action_slates(params.space), pg.horizon, est)
    name = policy_name(kind, penalized, mode)
    rng = stage_rng(cfg, f"train-policy/{name}")
    policy = RecurrentPolicy(rl_action_slates(params.space), pg.hidden, params.space,
                             seed=int(rng.integers(2**31)), policy_id=name)
    policy, curve = train_policy(pg, collector, rng, policy, seed=int(cfg["seed"]))
    pdir = out_dir(cfg, "policies")
    path = pdir / f"{name}.json"
    save_policy(policy, path, {"training_mode": mode, "gamma": gamma, "penalized": penalized, "seed": cfg["seed"]})
    with open(pdir / f"{name}_curve.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["iteration", "mean_return", "eng", "eng_u0", "eng_nps"])
        w.writeheader()
        w.writerows(asdict(r) for r in curve)
    return path


def resolve_policy(cfg: dict, ref: str, space: PrefSpace) -> tuple[SlatePolicy, str, str]:
    """``random``, a trained policy name under ``out/policies`` or a checkpoint path."""
    if ref == "random":
        return random_policy(space), "random", "none"
    path = Path(ref)
    if not path.exists():
        path = Path(cfg["out"], "policies", f"{ref}.json")
    if not path.exists():
        raise ConfigurationError(f"no policy {ref!r}")
    pol = load_policy(path)
    doc = json.loads(path.read_text())
    return pol, pol.policy_id, doc.get("extra", {}).get("training_mode", "unknown")


def cmd_eval_policy(cfg: dict, ref: str, mode: str) -> dict:
    params = user_params(cfg)
    policy, name, training_mode = resolve_policy(cfg, ref, params.space)
    ecfg = EvalConfig(mode="oracle" if mode == "oracle" else "estimated", **cfg["eval"])
    est = load_estimators(cfg) if ecfg.mode == "estimated" else None
    metrics, _ = evaluate_policy(policy, ecfg, stage_rng(cfg, f"eval-policy/{name}/{ecfg.mode}"), params, est)
    row = metrics_row(name, training_mode, ecfg.mode, metrics)
    write_metrics_csv([row], out_dir(cfg) / "metrics.csv", append=True)
    return row


def cohort_heatmap(params: UserParams, policy: SlatePolicy, n_users: int, horizon: int,
                   rng: np.random.Generator) -> np.ndarray:
    """``(n, horizon+1)`` matrix of per-step preference histograms of a simulated cohort."""
    prefs = rollout_oracle(params, policy, n_users, horizon, rng).prefs
    return np.stack([np.bincount(prefs[:, t], minlength=params.n_bins) / n_users for t in range(horizon + 1)], 1)


def write_pgm(matrix: np.ndarray, path: str | Path, cell: int = 8) -> None:
    """8-bit binary graymap; preference angle increases upwards, time to the right."""
    m = np.asarray(matrix, dtype=float)[::-1]
    scale = m.max() if m.max() > 0 else 1.0
    img = np.round(255 * m / scale).astype(np.uint8)
    img = np.kron(img, np.ones((cell, cell), dtype=np.uint8))
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def cmd_export_heatmap(cfg: dict, ref: str) -> tuple[Path, Path]:
    params = user_params(cfg)
    policy, name, _ = resolve_policy(cfg, ref, params.space)
    H = cfg["eval"]["horizon"]
    mat = cohort_heatmap(params, policy, cfg["heatmap"]["n_users"], H, stage_rng(cfg, f"heatmap/{name}"))
    hdir = out_dir(cfg, "heatmaps")
    csv_path, pgm_path = hdir / f"{name}.csv", hdir / f"{name}.pgm"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pref_deg"] + [f"t{t}" for t in range(H + 1)])
        for i, row in enumerate(mat):
            w.writerow([f"{params.space.centers_deg[i]:g}"] + [repr(float(v)) for v in row])
    write_pgm(mat, pgm_path)
    return csv_path, pgm_path


def cmd_run_all(cfg: dict) -> None:
    cmd_gen_data(cfg)
    cmd_train_model(cfg, "all", misspecified=False)
    cmd_train_model(cfg, "future", misspecified=True)
    cmd_eval_model(cfg)
    names = []
    for kind in ("myopic", "rl"):
        for pen in (False, True):
            cmd_train_policy(cfg, kind, pen, "oracle")
            names.append(policy_name(kind, pen, "oracle"))
    for pen in (False, True):
        cmd_train_policy(cfg, "rl", pen, "sim")
        names.append(policy_name("rl", pen, "sim"))
    for name in ["random"] + names:
        for mode in ("oracle", "sim"):
            cmd_eval_policy(cfg, name, mode)
    for name in ("random", "rl_oracle", "rl_pen_oracle"):
        cmd_export_heatmap(cfg, name)


# ---------------------------------------------------------------- argument parsing


def str2bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "y", "on"):
        return True
    if v.lower() in ("0", "false", "no", "n", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


class JsonErrorParser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["oracle", "sim"], default="oracle")
    common.add_argument("--penalized", type=str2bool, default=False)
    common.add_argument("--gamma", type=float)
    common.add_argument("--misspecified-choice-model", type=str2bool)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = JsonErrorParser(prog="prefshift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=JsonErrorParser)
    sub.add_parser("gen-data", parents=[common])
    p = sub.add_parser("train-model", parents=[common])
    p.add_argument("--task", choices=list(TASKS) + ["all"], default="all")
    sub.add_parser("eval-model", parents=[common])
    p = sub.add_parser("train-policy", parents=[common])
    p.add_argument("--policy", choices=["myopic", "rl"], default="rl")
    p = sub.add_parser("eval-policy", parents=[common])
    p.add_argument("--policy", required=True, help="random, a trained policy name or a checkpoint path")
    p = sub.add_parser("export-heatmap", parents=[common])
    p.add_argument("--policy", default="random")
    sub.add_parser("run-all", parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["out"] = args.out
        if args.misspecified_choice_model is not None:
            over["misspecified_choice_model"] = args.misspecified_choice_model
        cfg = load_config(args.config, over)
        c = args.command
        if c == "gen-data":
            result = cmd_gen_data(cfg)
        elif c == "train-model":
            result = cmd_train_model(cfg, args.task)
        elif c == "eval-model":
            result = cmd_eval_model(cfg)
        elif c == "train-policy":
            result = cmd_train_policy(cfg, args.policy, args.penalized, args.mode, args.gamma)
        elif c == "eval-policy":
            result = cmd_eval_policy(cfg, args.policy, args.mode)
        elif c == "export-heatmap":
            result = cmd_export_heatmap(cfg, args.policy)
        else:
            result = cmd_run_all(cfg)
    except (PrefShiftError, OSError, ValueError, KeyError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1
    if result is not None:
        print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
