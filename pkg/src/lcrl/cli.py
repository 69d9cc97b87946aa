"""Command-line runner: ``train``, ``certify``, ``simulate`` and ``inspect``.

Configs are YAML files with flat dotted keys (nested mappings are flattened),
for example::

    env.file: fixture:comparison_5.grid
    automaton.file: fixture:recurrence_ab_avoid_c.ldba
    alg.name: lcql
    alg.episodes: 1000
    seed: 0
    out.dir: runs/comparison
"""
from __future__ import annotations

import argparse
import ast
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import fixture_path
from .automaton import AutomatonError, GuardParseError, LimitDeterminismError, describe, load_automaton_file
from .environments import EnvironmentError_, load_continuous, load_grid, load_kripke
from .product import ProductRuntime, ProductState, RewardParams, rollout

log = logging.getLogger("lcrl")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
ALGORITHMS = ("lcql", "lcnfq", "vq", "fvi")


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _alg_fields(name: str) -> dict:
    """Hyperparameter dataclass and extra keys accepted under ``alg.``."""
    if name == "lcql":
        from .tabular import Hyperparams
        return {"cls": Hyperparams, "extra": {}}
    if name == "lcnfq":
        from .continuous.lcnfq import LcnfqParams
        return {"cls": LcnfqParams, "extra": {"th": 100, "explore_episodes": 4000, "starts": "consistent"}}
    if name == "vq":
        from .continuous.voronoi import VqParams
        return {"cls": VqParams, "extra": {"delta": 0.05, "starts": "consistent"}}
    from .continuous.fvi import FviParams
    return {"cls": FviParams, "extra": {}}


TOP_KEYS = {"env.kind", "env.file", "env.slip", "automaton.file", "kripke.file", "alg.name",
            "seed", "out.dir", "reward.M", "reward.m", "reward.y", "sim.horizon", "sim.rollouts"}


@dataclasses.dataclass
class ExperimentConfig:
    raw: dict
    base: Path

    @property
    def alg(self) -> str:
        return self.raw["alg.name"]

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def path(self, key) -> Path:
        value = str(self.raw[key])
        if value.startswith("fixture:"):
            p = Path(str(fixture_path(value[len("fixture:"):])))
        else:
            p = Path(value)
            if not p.is_absolute():
                p = self.base / p
        if not p.exists():
            raise ConfigError(f"{key}: file not found: {value}")
        return p

    def alg_params(self, seed: int):
        entry = _alg_fields(self.alg)
        cls = entry["cls"]
        names = {f.name for f in dataclasses.fields(cls)}
        kw, extra = {}, dict(entry["extra"])
        for key, value in self.raw.items():
            if not key.startswith("alg.") or key == "alg.name":
                continue
            name = key[4:]
            if name in names:
                kw[name] = value
            elif name in extra:
                extra[name] = value
        kw["seed"] = seed
        try:
            return cls(**kw), extra
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"alg: {exc}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of dotted keys")
    raw = _flatten(data)
    for key in ("env.file", "automaton.file", "alg.name"):
        if key not in raw:
            raise ConfigError(f"missing required key {key}")
    if raw["alg.name"] not in ALGORITHMS:
        raise ConfigError(f"alg.name must be one of {', '.join(ALGORITHMS)}")
    cfg = ExperimentConfig(raw, path.parent)
    allowed = set(TOP_KEYS)
    entry = _alg_fields(cfg.alg)
    allowed |= {f"alg.{f.name}" for f in dataclasses.fields(entry["cls"])}
    allowed |= {f"alg.{k}" for k in entry["extra"]}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def build_runtime(cfg: ExperimentConfig, seed: int) -> ProductRuntime:
    text = cfg.path("env.file").read_text()
    kind = cfg.get("env.kind")
    if kind is None:
        first = next((ln.strip() for ln in text.splitlines() if ln.split("#", 1)[0].strip()), "")
        kind = "grid" if first.startswith("grid:") else "continuous"
    if kind == "grid":
        env = load_grid(text, slip=cfg.get("env.slip"))
    elif kind == "continuous":
        env = load_continuous(text)
    else:
        raise ConfigError(f"env.kind must be grid or continuous, not {kind!r}")
    A = load_automaton_file(cfg.path("automaton.file"))
    K = load_kripke(cfg.path("kripke.file").read_text()) if cfg.get("kripke.file") else None
    finite = getattr(env, "finite", False)
    if cfg.alg == "lcql" and not finite:
        raise ConfigError("lcql needs a finite environment")
    if cfg.alg != "lcql" and finite:
        raise ConfigError(f"{cfg.alg} needs a continuous environment")
    if K is not None and cfg.alg in ("lcnfq", "vq", "fvi"):
        raise ConfigError("a Kripke clock is only supported with lcql")
    try:
        reward = RewardParams(M=float(cfg.get("reward.M", 1.0)), m=float(cfg.get("reward.m", 0.05)),
                              y=int(cfg.get("reward.y", 0)))
    except ValueError as exc:
        raise ConfigError(f"reward: {exc}") from exc
    return ProductRuntime(env, A, K, reward, seed=seed)


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------

def _num(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _state_str(s) -> str:
    if isinstance(s, tuple):
        return "(" + ", ".join(_num(v) for v in s) + ")"
    return str(s)


def _parse_state(text: str):
    v = ast.literal_eval(text)
    return tuple(v) if isinstance(v, (tuple, list)) else v


def _parse_k(text: str):
    return None if text in ("", "None") else int(text)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _state_key(ps: ProductState):
    return (repr(ps.env), ps.q, -1 if ps.k is None else ps.k)


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def _starts(kind: str, rt: ProductRuntime):
    from .continuous.lcnfq import consistent_starts
    if kind == "initial":
        return None
    if kind == "consistent":
        return consistent_starts(rt.env, rt.A)
    raise ConfigError(f"alg.starts must be initial or consistent, not {kind!r}")


def train_one(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    """Train one replica and write its artifacts plus a manifest into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    rt = build_runtime(cfg, seed)
    hp, extra = cfg.alg_params(seed)
    t0 = time.perf_counter()
    files = []
    if cfg.alg == "lcql":
        from .tabular import action_lister, lcql_train, psp_from_counts
        res = lcql_train(rt, hp)
        acts = action_lister(rt)
        write_csv(out / "curve.csv", ["episode", "steps", "total_reward", "frontier_resets", "sink_hit"],
                  [(r.episode, r.steps, float(r.total_reward), r.frontier_resets, int(r.sink_hit))
                   for r in res.curve])
        pol = res.policy(rt)
        states = sorted(res.Q.values, key=_state_key)
        write_csv(out / "policy.csv", ["env_state", "q", "k", "action"],
                  [(_state_str(ps.env), ps.q, "" if ps.k is None else ps.k, pol(ps)) for ps in states])
        psp = psp_from_counts(res.counts, rt.sinks, acts)
        write_csv(out / "psp.csv", ["env_state", "q", "k", "psp"],
                  [(_state_str(ps.env), ps.q, "" if ps.k is None else ps.k, float(psp.get(ps)))
                   for ps in sorted(psp.values, key=_state_key)])
        files = ["curve.csv", "policy.csv", "psp.csv"]
        samples = rt.env_steps
    elif cfg.alg == "lcnfq":
        from .continuous.lcnfq import dump_hybridq, explore_collect, lcnfq_train
        rng = np.random.default_rng([seed, 4])
        rt.reseed(seed)
        buf = explore_collect(rt, int(extra["th"]), int(extra["explore_episodes"]), rng,
                              start=_starts(extra["starts"], rt))
        bank = lcnfq_train(buf, rt, hp, s0=rt.env.initial_state(np.random.default_rng(seed)))
        (out / "model.txt").write_text(dump_hybridq(bank))
        files = ["model.txt"]
        samples = len(buf)
    elif cfg.alg == "vq":
        from .continuous.voronoi import codebook_rows, vq_train
        book = vq_train(rt, float(extra["delta"]), hp, start=_starts(extra["starts"], rt))
        write_csv(out / "codebook.csv", ["q", "index", "x", "y"] + [f"Q{a}" for a in range(rt.n_actions)],
                  codebook_rows(book))
        files = ["codebook.csv"]
        samples = rt.env_steps
    else:
        from .continuous.fvi import expected_samples, fvi_run, value_rows
        vf, sampler = fvi_run(rt, hp)
        n_acc = sum(rt.A.is_accepting(q) for q in range(rt.A.n_states))
        expected = expected_samples(hp, rt.n_env, rt.A.n_states, n_acc)
        if sampler.calls != expected:
            raise InvariantError(f"sampler calls {sampler.calls} != k*Z*|A|*(|Q|-accepting) = {expected}")
        write_csv(out / "values.csv", ["q", "index", "x", "y", "value"], value_rows(vf))
        files = ["values.csv"]
        samples = sampler.calls
    wall = time.perf_counter() - t0
    manifest = {
        "config_hash": cfg.digest(),
        "algorithm": cfg.alg,
        "seed": seed,
        "wall_clock_s": round(wall, 3),
        "sample_count": int(samples),
        "artifacts": [{"file": f, "sha256": _sha256(out / f)} for f in files],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _train_job(args):
    cfg_path, seed, out = args
    return train_one(load_config(cfg_path), seed, Path(out))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.out or cfg.get("out.dir", "runs"))
    if not base.is_absolute() and not args.out:
        base = cfg.base / base
    seed0 = cfg.seed if args.seed is None else args.seed
    seeds = list(range(seed0, seed0 + args.seeds))
    if len(seeds) == 1:
        manifests = [train_one(cfg, seeds[0], base / f"seed_{seeds[0]}")]
    else:
        build_runtime(cfg, seed0)  # fail fast on config problems
        jobs = [(str(args.config), s, str(base / f"seed_{s}")) for s in seeds]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            manifests = list(pool.map(_train_job, jobs))
    for m in manifests:
        print(f"seed {m['seed']}: {m['algorithm']} samples={m['sample_count']} "
              f"time={m['wall_clock_s']:.2f}s -> {base / ('seed_%d' % m['seed'])}")
    return EXIT_OK


# --------------------------------------------------------------------------
# certify
# --------------------------------------------------------------------------

def cmd_certify(args) -> int:
    from .certify import build_explicit_product, oracle_psp, policy_satisfaction
    cfg = load_config(args.config)
    rt = build_runtime(cfg, cfg.seed)
    try:
        p = build_explicit_product(rt.env, rt.A, rt.K)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    oracle = oracle_psp(p)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "oracle.csv", ["state", "q", "k", "psp_oracle"],
                  [(_state_str(ps.env), ps.q, "" if ps.k is None else ps.k, float(oracle[i]))
                   for i, ps in enumerate(p.states) if ps.env is not None])
    print(f"product states: {p.n}; oracle max satisfaction at start: {oracle[p.initial]:.6f}")
    status = EXIT_OK
    if args.psp:
        rows = []
        for r in read_csv(args.psp):
            ps = ProductState(_parse_state(r["env_state"]), int(r["q"]), _parse_k(r["k"]))
            i = p.index.get(ps)
            if i is None:
                continue
            learned, ref = float(r["psp"]), float(oracle[i])
            rows.append((repr(tuple(ps)), learned, ref, abs(learned - ref)))
        if out:
            write_csv(out / "diff.csv", ["state", "psp_learned", "psp_oracle", "abs_err"], rows)
        worst = max((r[3] for r in rows), default=0.0)
        print(f"psp states compared: {len(rows)}; max abs error: {worst:.6f}")
    if args.policy:
        table = _load_policy_table(args.policy)
        sat = policy_satisfaction(p, lambda ps: table.get(ps, 0))
        print(f"policy satisfaction: {sat:.6f} (oracle max {oracle[p.initial]:.6f})")
    return status


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def _load_policy_table(path) -> dict:
    return {ProductState(_parse_state(r["env_state"]), int(r["q"]), _parse_k(r["k"])): int(r["action"])
            for r in read_csv(path)}


def load_policy(cfg: ExperimentConfig, rt: ProductRuntime, artifact, seed: int):
    """Greedy policy from a training artifact of the configured algorithm."""
    if cfg.alg == "lcql":
        table = _load_policy_table(artifact)
        return lambda ps: table.get(ps, 0)
    if cfg.alg == "lcnfq":
        from .continuous.lcnfq import hybridq_greedy, load_hybridq
        bank = load_hybridq(Path(artifact).read_text())
        return lambda ps: hybridq_greedy(bank, ps)
    hp, extra = cfg.alg_params(seed)
    rows = read_csv(artifact)
    scale = (rt.env.width, rt.env.height)
    if cfg.alg == "vq":
        from .continuous.voronoi import VoronoiCodebook, vq_greedy
        book = VoronoiCodebook(rt.A.n_states, rt.n_actions, scale, float(extra["delta"]))
        for r in rows:
            q = int(r["q"])
            book.append(q, (float(r["x"]) * scale[0], float(r["y"]) * scale[1]))
            book.Q[q][-1] = [float(r[f"Q{a}"]) for a in range(rt.n_actions)]
        return vq_greedy(book, rt)
    from .continuous.fvi import KernelValueFn, fvi_greedy, grid_centres
    C = grid_centres(hp.k)
    values = np.zeros((rt.A.n_states, hp.k))
    for r in rows:
        values[int(r["q"]), int(r["index"])] = float(r["value"])
    vf = KernelValueFn(C, values, hp.h, scale)
    return fvi_greedy(vf, rt, hp.greedy_Z, np.random.default_rng([seed, 5]))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    rt = build_runtime(cfg, seed)
    policy = load_policy(cfg, rt, args.artifact, seed)
    horizon = int(args.horizon if args.horizon is not None else cfg.get("sim.horizon", 1000))
    n = int(args.rollouts if args.rollouts is not None else cfg.get("sim.rollouts", 100))
    out = Path(args.out) if args.out else None
    traj_rows, summary = [], []
    wins = 0
    for i in range(n):
        res = rollout(rt, policy, horizon, record=out is not None)
        wins += res.success
        summary.append((i, int(res.success), res.steps, res.resets, int(res.sink)))
        for t, ps, a, r in res.trajectory:
            traj_rows.append((i, t, _state_str(ps.env), ps.q, "" if ps.k is None else ps.k,
                              "" if a is None else a, float(r)))
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "trajectories.csv", ["rollout", "step", "env_state", "q", "k", "action", "reward"],
                  traj_rows)
        write_csv(out / "rollouts.csv", ["rollout", "success", "steps", "frontier_resets", "sink"], summary)
    rate = wins / n if n else 0.0
    print(f"success {wins}/{n} ({rate:.3f}) over horizon {horizon}")
    return EXIT_OK


# --------------------------------------------------------------------------
# inspect
# --------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    A = load_automaton_file(args.automaton)
    print(describe(A))
    print("limit-deterministic: yes")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lcrl", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the configured learner")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="compare against the exact oracle")
    p.add_argument("config")
    p.add_argument("--psp", help="psp.csv from an lcql run")
    p.add_argument("--policy", help="policy.csv from an lcql run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="roll out a trained policy")
    p.add_argument("config")
    p.add_argument("artifact", help="policy.csv, model.txt, codebook.csv or values.csv")
    p.add_argument("--horizon", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inspect", help="describe an automaton file")
    p.add_argument("automaton")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LimitDeterminismError, InvariantError, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, GuardParseError, AutomatonError, EnvironmentError_,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
